"""Inverse-transform sampling through bisection.

The scalar networks expose a strictly increasing cdf on a bounded
interval, so the quantile of any z in [0, 1) is found by bisecting the
bracket: the returned point is the midpoint of the final bracket, whose
width halves every iteration.  Multi-dimensional draws run one coordinate
at a time, feeding each sampled value back into the weight model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from . import pnn
from .errors import ConvergenceError
from .pnn import PnnParams, PnnSpec


@dataclass(frozen=True)
class InversionConfig:
    """Bisection controls.

    eps is the bracket tolerance in x units; None means 1e-10 times the
    bracket width, resolved per call.  The iteration count needed is
    ceil(log2(width / eps)), so max_iters must cover that.
    """

    eps: float | None = None
    max_iters: int = 64

    def __post_init__(self):
        if self.eps is not None and not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")

    def resolve_eps(self, lo: float, hi: float) -> float:
        return 1e-10 * (hi - lo) if self.eps is None else self.eps


def iteration_bound(lo: float, hi: float, eps: float) -> int:
    """Bisection needs at most ceil(log2(width / eps)) halvings."""
    return max(0, math.ceil(math.log2((hi - lo) / eps)))


def monotonic_inverse(cdf, z: float, lo: float, hi: float,
                      cfg: InversionConfig = InversionConfig()) -> float:
    """Smallest x in [lo, hi] with cdf(x) >= z, to bracket tolerance eps.

    cdf must be nondecreasing on [lo, hi] with cdf(lo) <= z <= cdf(hi).
    """
    if not 0.0 <= z <= 1.0:
        raise ValueError(f"z must lie in [0, 1], got {z}")
    if not hi > lo:
        raise ValueError(f"need hi > lo, got [{lo}, {hi}]")
    eps = cfg.resolve_eps(lo, hi)
    a, b = float(lo), float(hi)
    iters = 0
    while (b - a) > eps:
        if iters >= cfg.max_iters:
            raise ConvergenceError(
                f"bisection bracket [{a}, {b}] still wider than {eps} after "
                f"{iters} iterations", bracket=(a, b), iterations=iters)
        mid = 0.5 * (a + b)
        if cdf(mid) >= z:
            b = mid
        else:
            a = mid
        iters += 1
    return 0.5 * (a + b)


def _bisect_vec(cdf_vec, z, lo: float, hi: float, eps: float, max_iters: int):
    """Lockstep bisection for a vector of quantile levels z.

    Every bracket starts at [lo, hi] and halves together, so all rows
    share one iteration count.  Returns (midpoints, iterations).
    """
    z = np.asarray(z, dtype=np.float64)
    a = np.full(z.shape, float(lo))
    b = np.full(z.shape, float(hi))
    iters = 0
    while (b - a).max() > eps:
        if iters >= max_iters:
            raise ConvergenceError(
                f"bisection brackets still wider than {eps} after "
                f"{iters} iterations",
                bracket=(float(a.min()), float(b.max())), iterations=iters)
        mid = 0.5 * (a + b)
        ge = cdf_vec(mid) >= z
        b = np.where(ge, mid, b)
        a = np.where(ge, a, mid)
        iters += 1
    return 0.5 * (a + b), iters


def sample_1d(spec: PnnSpec, params: PnnParams, rng,
              cfg: InversionConfig = InversionConfig()) -> float:
    """One draw from the normalized density: invert the cdf at z ~ U[0, 1)."""
    z = float(rng.random())
    return monotonic_inverse(lambda t: pnn.cdf(spec, params, t), z,
                             spec.bounds.lo, spec.bounds.hi, cfg)


def sample_ancestral(model, n: int, rng,
                     cfg: InversionConfig = InversionConfig(),
                     _init=None, stats: dict | None = None) -> np.ndarray:
    """n joint draws, one coordinate at a time.

    Each row consumes d uniforms in row order, so with d = 1 the draw
    sequence matches repeated sample_1d calls on the same generator.  The
    starting matrix (zeros by default; _init exists so tests can prove
    it) never influences coordinate i: the weight model only reads the
    already-sampled coordinates x[:i].
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    d = model.data_dim
    z = rng.random((n, d))
    x = np.zeros((n, d)) if _init is None else np.array(_init, dtype=np.float64)
    if x.shape != (n, d):
        raise ValueError(f"_init shape {x.shape}, expected ({n}, {d})")
    p = model.params_per_dim
    if stats is not None:
        stats["bisection_iters"] = []
    for i in range(d):
        theta, _ = model_mod.emit_stack(model, x)
        theta_i = theta[:, i * p:(i + 1) * p]
        prep = pnn.prepare_stack(model.pnn_widths, theta_i)
        b = model.bounds[i]
        lo_v = np.full(n, b.lo)
        hi_v = np.full(n, b.hi)
        f_lo = pnn.f_stack(prep, lo_v)
        norm = np.maximum(pnn.f_stack(prep, hi_v) - f_lo, pnn.PARTITION_FLOOR)

        def cdf_vec(t):
            return (pnn.f_stack(prep, t) - f_lo) / norm

        eps = cfg.resolve_eps(b.lo, b.hi)
        x[:, i], iters = _bisect_vec(cdf_vec, z[:, i], b.lo, b.hi, eps,
                                     cfg.max_iters)
        if stats is not None:
            stats["bisection_iters"].append(iters)
    return x
