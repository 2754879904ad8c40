"""Monotone scalar networks that normalize exactly on a bounded interval.

The network F is a stack of sigmoid layers whose weights pass through
exp(-raw), so every effective weight is strictly positive and F is strictly
increasing in its scalar input.  Because F' integrates back to F, the mass
of F' over [lo, hi] is F(hi) - F(lo) exactly; dividing by that difference
turns F into a cdf and F' into a normalized density with no quadrature.

Raw parameters are unconstrained reals.  Per layer they are a weight
matrix raw_A of shape (n_in, n_out) and, on every layer except the last, a
bias vector raw_b of shape (n_out,).  The effective bias of unit j is
-mean_i(exp(-raw_A[i, j])) * raw_b[j]: one scalar bias per unit, scaled
like the incoming weights so all raw parameters are commensurate.  The
final layer applies softmax to its raw weights and takes a convex
combination of the last hidden activations, so F always lies in (0, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .errors import DomainError, NumericalError

# exp(-raw) saturates at these values instead of overflowing; the log of
# the normalizer is floored before taking the log.  Saturation events are
# counted, not raised.
WEIGHT_CLAMP_LO = 1e-30
WEIGHT_CLAMP_HI = 1e30
PARTITION_FLOOR = 1e-300


@dataclass
class Diagnostics:
    """Counters for numerical saturation events."""

    weight_clamps: int = 0
    partition_floors: int = 0

    def reset(self) -> None:
        self.weight_clamps = 0
        self.partition_floors = 0

    def snapshot(self) -> dict:
        return {"weight_clamps": self.weight_clamps,
                "partition_floors": self.partition_floors}


diagnostics = Diagnostics()


@dataclass(frozen=True)
class Bounds:
    """A finite interval [lo, hi) of support, lo < hi."""

    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError(f"bounds must be finite, got [{lo}, {hi}]")
        if not lo < hi:
            raise ValueError(f"bounds need lo < hi, got [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi


@dataclass(frozen=True)
class PnnSpec:
    """Architecture of one scalar network: layer widths plus its support.

    layer_widths includes the input and output widths, both of which must
    be 1, with at least one hidden layer in between.
    """

    layer_widths: tuple
    bounds: Bounds

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 3:
            raise ValueError("need at least one hidden layer and one output layer")
        if widths[0] != 1 or widths[-1] != 1:
            raise ValueError(f"input and output widths must be 1, got {widths}")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        object.__setattr__(self, "layer_widths", widths)

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def n_params(self) -> int:
        """Total raw parameter count (weights plus hidden-layer biases)."""
        total = 0
        for l in range(1, len(self.layer_widths)):
            n_in, n_out = self.layer_widths[l - 1], self.layer_widths[l]
            total += n_in * n_out
            if l < self.n_layers:
                total += n_out
        return total


@dataclass(frozen=True)
class PnnParams:
    """Raw parameters: per-layer weight matrices and hidden-layer biases.

    The final layer has no bias (biases[-1] is None).  Arrays are copied
    on construction and frozen, so instances are immutable values.
    """

    weights: tuple
    biases: tuple

    def __post_init__(self):
        ws = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        bs = tuple(None if b is None else np.array(b, dtype=np.float64)
                   for b in self.biases)
        if len(ws) != len(bs) or len(ws) < 2:
            raise ValueError("need one bias slot per layer and at least two layers")
        if bs[-1] is not None:
            raise ValueError("the final layer takes no bias")
        for l, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2:
                raise ValueError(f"layer {l + 1} weights must be a matrix")
            if not np.all(np.isfinite(w)):
                raise ValueError(f"layer {l + 1} weights contain non-finite entries")
            if b is not None:
                if b.shape != (w.shape[1],):
                    raise ValueError(
                        f"layer {l + 1} bias shape {b.shape} does not match "
                        f"weight columns {w.shape[1]}")
                if not np.all(np.isfinite(b)):
                    raise ValueError(f"layer {l + 1} bias contains non-finite entries")
        for arr in ws + tuple(b for b in bs if b is not None):
            arr.flags.writeable = False
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            if b is not None:
                parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, spec: PnnSpec, flat) -> "PnnParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (spec.n_params,):
            raise ValueError(
                f"expected {spec.n_params} raw parameters, got {flat.shape}")
        widths = spec.layer_widths
        ws, bs, ofs = [], [], 0
        for l in range(1, len(widths)):
            n_in, n_out = widths[l - 1], widths[l]
            ws.append(flat[ofs:ofs + n_in * n_out].reshape(n_in, n_out))
            ofs += n_in * n_out
            if l < spec.n_layers:
                bs.append(flat[ofs:ofs + n_out])
                ofs += n_out
            else:
                bs.append(None)
        return cls(weights=tuple(ws), biases=tuple(bs))


@dataclass(frozen=True)
class PnnEval:
    """One full evaluation at a point x.

    cdf/pdf/log_pdf follow the normalized formulas and are meaningful for
    x inside the support.  activations and tangents hold a_l and da_l/dx
    for every layer (input included), retained for the gradient engine.
    """

    f_value: float
    dfdx: float
    partition: float
    cdf_value: float
    pdf_value: float
    log_pdf: float
    activations: tuple
    tangents: tuple


def _check_params(spec: PnnSpec, params: PnnParams) -> None:
    widths = spec.layer_widths
    if len(params.weights) != spec.n_layers:
        raise ValueError(
            f"params have {len(params.weights)} layers, spec has {spec.n_layers}")
    for l, w in enumerate(params.weights):
        want = (widths[l], widths[l + 1])
        if w.shape != want:
            raise ValueError(f"layer {l + 1} weights shape {w.shape}, expected {want}")


# ---------------------------------------------------------------------------
# raw-parameter transforms


def transform_weights(raw) -> np.ndarray:
    """exp(-raw), elementwise, saturated to [1e-30, 1e30]."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise ValueError("raw weights must be finite")
    with np.errstate(over="ignore"):
        w = np.exp(-raw)
    clamped = int(np.count_nonzero((w < WEIGHT_CLAMP_LO) | (w > WEIGHT_CLAMP_HI)))
    if clamped:
        diagnostics.weight_clamps += clamped
        w = np.clip(w, WEIGHT_CLAMP_LO, WEIGHT_CLAMP_HI)
    return w


def transform_bias(raw_b, raw_A) -> np.ndarray:
    """Effective per-unit bias -mean_i(exp(-raw_A[i, j])) * raw_b[j]."""
    raw_b = np.asarray(raw_b, dtype=np.float64)
    raw_A = np.asarray(raw_A, dtype=np.float64)
    if raw_A.ndim != 2 or raw_b.shape != (raw_A.shape[1],):
        raise ValueError(
            f"bias shape {raw_b.shape} does not match weight columns of {raw_A.shape}")
    if not np.all(np.isfinite(raw_b)):
        raise ValueError("raw bias must be finite")
    w = transform_weights(raw_A)
    return -w.mean(axis=0) * raw_b


def transform_final(raw) -> np.ndarray:
    """Stabilized softmax: shift by the max, exponentiate, normalize."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1 or raw.size < 1:
        raise ValueError("final raw weights must be a non-empty vector")
    if not np.all(np.isfinite(raw)):
        raise ValueError("final raw weights must be finite")
    e = np.exp(raw - raw.max())
    return e / e.sum()


# ---------------------------------------------------------------------------
# batched evaluation kernel
#
# Everything below works on stacks: a leading axis m indexes independent
# (parameter, input) items so whole batches evaluate as a few einsums.
# Raw parameter stacks are flat (m, n_params) arrays in flatten() order.

_RAW_SAT = -math.log(WEIGHT_CLAMP_LO)  # |raw| beyond this saturates exp(-raw)


def split_stack(widths, theta) -> list:
    """View a flat (m, P) raw-parameter stack as per-layer arrays."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 2:
        raise ValueError("parameter stack must be 2-d")
    layers, ofs = [], 0
    n_layers = len(widths) - 1
    for l in range(1, n_layers + 1):
        n_in, n_out = widths[l - 1], widths[l]
        a = theta[:, ofs:ofs + n_in * n_out].reshape(-1, n_in, n_out)
        ofs += n_in * n_out
        if l < n_layers:
            b = theta[:, ofs:ofs + n_out]
            ofs += n_out
        else:
            b = None
        layers.append((a, b))
    if ofs != theta.shape[1]:
        raise ValueError(
            f"parameter stack has {theta.shape[1]} columns, widths need {ofs}")
    return layers


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    neg = ~pos
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[neg])
    out[neg] = ex / (1.0 + ex)
    return out


def prepare_stack(widths, theta) -> SimpleNamespace:
    """Transform a raw stack once so repeated traces only run the layers.

    Retains what the reverse pass needs: effective weights, their column
    means, raw biases, saturation masks, and the softmax head.
    """
    raw_layers = split_stack(widths, theta)
    ws, unclamped, means, effb, rawb = [], [], [], [], []
    for a, b in raw_layers[:-1]:
        with np.errstate(over="ignore"):
            w = np.exp(-a)
        bad = (w < WEIGHT_CLAMP_LO) | (w > WEIGHT_CLAMP_HI)
        n_bad = int(np.count_nonzero(bad))
        if n_bad:
            diagnostics.weight_clamps += n_bad
            w = np.clip(w, WEIGHT_CLAMP_LO, WEIGHT_CLAMP_HI)
        m = w.mean(axis=1)
        ws.append(w)
        unclamped.append(~bad)
        means.append(m)
        effb.append(-m * b)
        rawb.append(b)
    final_raw = raw_layers[-1][0][:, :, 0]
    shifted = np.exp(final_raw - final_raw.max(axis=1, keepdims=True))
    s = shifted / shifted.sum(axis=1, keepdims=True)
    return SimpleNamespace(widths=tuple(widths), ws=ws, unclamped=unclamped,
                           means=means, effb=effb, rawb=rawb, s=s,
                           final_raw=final_raw)


def _trace(prep, x, want_tangent: bool, retain: bool):
    """Run the layer stack at per-item scalar inputs x (shape (m,)).

    With want_tangent, da/dx propagates alongside the activations.  With
    retain, per-layer activations (and tangents and inner products) are
    kept for the reverse pass.
    """
    x = np.asarray(x, dtype=np.float64)
    a = x[:, None].copy()
    t = np.ones_like(a) if want_tangent else None
    acts = [a] if retain else None
    tans = [t] if (retain and want_tangent) else None
    us = [] if (retain and want_tangent) else None
    for l, (w, e) in enumerate(zip(prep.ws, prep.effb)):
        pre = np.einsum("mio,mi->mo", w, a) + e
        if not np.all(np.isfinite(pre)):
            raise NumericalError(
                f"non-finite pre-activation in layer {l + 1}", layer=l + 1)
        a = _sigmoid(pre)
        if want_tangent:
            u = np.einsum("mio,mi->mo", w, t)
            t = a * (1.0 - a) * u
        if retain:
            acts.append(a)
            if want_tangent:
                tans.append(t)
                us.append(u)
    f = np.einsum("mk,mk->m", prep.s, a)
    g = np.einsum("mk,mk->m", prep.s, t) if want_tangent else None
    return SimpleNamespace(f=f, g=g, acts=acts, tans=tans, us=us, last=a,
                           last_t=t)


def f_stack(prep, x) -> np.ndarray:
    """F at per-item inputs x, one value per stack item."""
    return _trace(prep, x, want_tangent=False, retain=False).f


def fg_stack(prep, x):
    """(F, dF/dx) at per-item inputs x."""
    tr = _trace(prep, x, want_tangent=True, retain=False)
    return tr.f, tr.g


def partition_stack(prep, lo, hi) -> np.ndarray:
    return f_stack(prep, hi) - f_stack(prep, lo)


def floored_log(z) -> np.ndarray:
    """log of the normalizer with the documented 1e-300 floor."""
    z = np.asarray(z, dtype=np.float64)
    n_floored = int(np.count_nonzero(z < PARTITION_FLOOR))
    if n_floored:
        diagnostics.partition_floors += n_floored
    return np.log(np.maximum(z, PARTITION_FLOOR))


def cdf_stack(widths, theta, x, lo, hi) -> np.ndarray:
    """Normalized cdf for per-item parameters/inputs, vectorized."""
    prep = prepare_stack(widths, theta)
    f_lo = f_stack(prep, lo)
    f_hi = f_stack(prep, hi)
    z = np.maximum(f_hi - f_lo, PARTITION_FLOOR)
    return (f_stack(prep, x) - f_lo) / z


def logpdf_stack(widths, theta, x, lo, hi) -> np.ndarray:
    prep = prepare_stack(widths, theta)
    _, g = fg_stack(prep, x)
    z = partition_stack(prep, lo, hi)
    with np.errstate(divide="ignore"):
        return np.log(g) - floored_log(z)


# ---------------------------------------------------------------------------
# scalar operations


def _as_stack(spec: PnnSpec, params: PnnParams):
    _check_params(spec, params)
    return params.flatten()[None, :]


def forward(spec: PnnSpec, params: PnnParams, x: float) -> PnnEval:
    """Evaluate F, dF/dx, and the normalized quantities at scalar x.

    x may lie outside the support; the cdf/pdf fields are then the same
    formulas extended outside [lo, hi] and only the support restriction
    makes them a distribution.
    """
    if not math.isfinite(x):
        raise ValueError(f"x must be finite, got {x}")
    prep = prepare_stack(spec.layer_widths, _as_stack(spec, params))
    lo, hi = spec.bounds.lo, spec.bounds.hi
    tr = _trace(prep, np.array([x]), want_tangent=True, retain=True)
    f_lo = f_stack(prep, np.array([lo]))
    f_hi = f_stack(prep, np.array([hi]))
    z = float(f_hi[0] - f_lo[0])
    zf = max(z, PARTITION_FLOOR)
    dfdx = float(tr.g[0])
    with np.errstate(divide="ignore"):
        log_pdf = float(np.log(dfdx) - math.log(zf)) if dfdx >= 0 else float("nan")
    return PnnEval(
        f_value=float(tr.f[0]),
        dfdx=dfdx,
        partition=z,
        cdf_value=float((tr.f[0] - f_lo[0]) / zf),
        pdf_value=dfdx / zf,
        log_pdf=log_pdf,
        activations=tuple(a[0] for a in tr.acts),
        tangents=tuple(t[0] for t in tr.tans),
    )


def _check_domain(spec: PnnSpec, x: float) -> None:
    if not math.isfinite(x) or not spec.bounds.contains(x):
        raise DomainError(
            f"x={x} outside support [{spec.bounds.lo}, {spec.bounds.hi}]")


def cdf(spec: PnnSpec, params: PnnParams, x: float) -> float:
    """(F(x) - F(lo)) / (F(hi) - F(lo)) for x in the support."""
    _check_domain(spec, x)
    return float(cdf_stack(spec.layer_widths, _as_stack(spec, params),
                           np.array([x]), np.array([spec.bounds.lo]),
                           np.array([spec.bounds.hi]))[0])


def log_pdf(spec: PnnSpec, params: PnnParams, x: float) -> float:
    """log dF/dx - log(F(hi) - F(lo)) for x in the support."""
    _check_domain(spec, x)
    return float(logpdf_stack(spec.layer_widths, _as_stack(spec, params),
                              np.array([x]), np.array([spec.bounds.lo]),
                              np.array([spec.bounds.hi]))[0])


def partition(spec: PnnSpec, params: PnnParams) -> float:
    """Exact mass of dF/dx over the support: F(hi) - F(lo)."""
    prep = prepare_stack(spec.layer_widths, _as_stack(spec, params))
    return float(partition_stack(prep, np.array([spec.bounds.lo]),
                                 np.array([spec.bounds.hi]))[0])


def _tiled(spec, params, xs):
    xs = np.asarray(xs, dtype=np.float64)
    theta = np.broadcast_to(params.flatten(), (xs.size, spec.n_params))
    lo = np.full(xs.size, spec.bounds.lo)
    hi = np.full(xs.size, spec.bounds.hi)
    return theta, xs.ravel(), lo, hi


def cdf_many(spec: PnnSpec, params: PnnParams, xs) -> np.ndarray:
    """Vectorized cdf over many x for one parameter set."""
    _check_params(spec, params)
    theta, x, lo, hi = _tiled(spec, params, xs)
    return cdf_stack(spec.layer_widths, theta, x, lo, hi)


def logpdf_many(spec: PnnSpec, params: PnnParams, xs) -> np.ndarray:
    _check_params(spec, params)
    theta, x, lo, hi = _tiled(spec, params, xs)
    return logpdf_stack(spec.layer_widths, theta, x, lo, hi)


def dfdx_many(spec: PnnSpec, params: PnnParams, xs) -> np.ndarray:
    """Vectorized unnormalized density dF/dx over many x."""
    _check_params(spec, params)
    theta, x, _, _ = _tiled(spec, params, xs)
    prep = prepare_stack(spec.layer_widths, theta)
    return fg_stack(prep, x)[1]


# ---------------------------------------------------------------------------
# parameter constructors


def random_params(spec: PnnSpec, rng) -> PnnParams:
    """Random raw parameters scaled to keep every layer responsive.

    Weight rows center on log(n_in) so pre-activations stay O(1) and the
    sigmoids stay away from float saturation; see the derivative checks.
    """
    widths = spec.layer_widths
    ws, bs = [], []
    for l in range(1, len(widths)):
        n_in, n_out = widths[l - 1], widths[l]
        if l < spec.n_layers:
            ws.append(math.log(n_in) + 0.5 * rng.standard_normal((n_in, n_out)))
            bs.append(rng.standard_normal(n_out))
        else:
            ws.append(rng.standard_normal((n_in, n_out)))
            bs.append(None)
    return PnnParams(weights=tuple(ws), biases=tuple(bs))


def reference_params(spec: PnnSpec) -> PnnParams:
    """Deterministic raw parameters giving a mild spread-out density.

    First-layer units are sigmoids with centers marching across the
    support and widths a couple of grid steps wide; deeper layers mix with
    weights 4/n_in and staggered shifts so no unit saturates.  Used as the
    starting density before any training.
    """
    widths = spec.layer_widths
    lo, width = spec.bounds.lo, spec.bounds.width
    ws, bs = [], []
    for l in range(1, len(widths)):
        n_in, n_out = widths[l - 1], widths[l]
        if l == 1:
            scale = 2.0 * width / n_out
            ws.append(np.full((n_in, n_out), math.log(scale)))
            bs.append(lo + (np.arange(n_out) + 0.5) * width / n_out)
        elif l < spec.n_layers:
            ws.append(np.full((n_in, n_out), math.log(n_in / 4.0)))
            bs.append(n_in * (np.arange(n_out) + 0.5) / n_out)
        else:
            ws.append(np.zeros((n_in, n_out)))
            bs.append(None)
    return PnnParams(weights=tuple(ws), biases=tuple(bs))
