"""Independent verification primitives.

Everything in this module is written directly from textbook formulas and
shares no evaluation code with the modules it is used to check: quadrature
rules, central finite differences, a one-sample Kolmogorov-Smirnov test,
and a closed-form mixture-of-logistics reference density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError
from .pnn import Bounds, PnnParams, PnnSpec


# ---------------------------------------------------------------------------
# quadrature


def simpson(f, a: float, b: float, panels: int = 10_000) -> float:
    """Composite Simpson rule with ``panels`` even subintervals.

    ``f`` must accept a vector of nodes and return a vector of values.
    """
    if panels < 2 or panels % 2 != 0:
        raise ValueError(f"panels must be a positive even integer, got {panels}")
    if not b > a:
        raise ValueError(f"need b > a, got [{a}, {b}]")
    x = np.linspace(a, b, panels + 1)
    y = np.asarray(f(x), dtype=np.float64)
    h = (b - a) / panels
    return float(h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum()))


def adaptive_simpson(f, a: float, b: float, rel_tol: float = 1e-10,
                     max_panels: int = 2 ** 20) -> float:
    """Double the Simpson panel count until successive estimates agree.

    Agreement is relative: |new - old| <= rel_tol * max(|new|, 1e-300).
    """
    panels = 64
    prev = simpson(f, a, b, panels)
    while panels < max_panels:
        panels *= 2
        cur = simpson(f, a, b, panels)
        if abs(cur - prev) <= rel_tol * max(abs(cur), 1e-300):
            return cur
        prev = cur
    raise ConvergenceError(
        f"Simpson refinement did not reach rel_tol={rel_tol} within "
        f"{max_panels} panels", iterations=max_panels)


def simpson_2d(f, a1: float, b1: float, a2: float, b2: float,
               panels: int = 500) -> float:
    """Nested composite Simpson on a rectangle.

    ``f(X, Y)`` must be vectorized over same-shaped coordinate arrays.
    """
    if panels < 2 or panels % 2 != 0:
        raise ValueError(f"panels must be a positive even integer, got {panels}")
    x = np.linspace(a1, b1, panels + 1)
    y = np.linspace(a2, b2, panels + 1)
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    X, Y = np.meshgrid(x, y, indexing="ij")
    vals = np.asarray(f(X, Y), dtype=np.float64)
    hx = (b1 - a1) / panels
    hy = (b2 - a2) / panels
    return float(hx * hy / 9.0 * (w @ vals @ w))


# ---------------------------------------------------------------------------
# finite differences


def central_diff(f, x: float, h: float = 1e-5) -> float:
    """Two-point central difference (f(x+h) - f(x-h)) / 2h."""
    return (f(x + h) - f(x - h)) / (2.0 * h)


def grad_step(p: float, h_scale: float = 1e-5) -> float:
    """Step size for differencing a parameter: h_scale * max(1, |p|)."""
    return h_scale * max(1.0, abs(p))


# ---------------------------------------------------------------------------
# one-sample Kolmogorov-Smirnov against Uniform[0, 1]


def ks_statistic(samples) -> tuple[float, float]:
    """KS distance of ``samples`` from Uniform[0,1] and its p-value.

    The p-value uses the asymptotic Kolmogorov series
    ``Q(y) = 2 * sum_{j>=1} (-1)^(j-1) exp(-2 j^2 y^2)`` truncated at 100
    terms, evaluated at the finite-sample effective argument
    ``(sqrt(n) + 0.12 + 0.11/sqrt(n)) * D``.
    """
    u = np.sort(np.asarray(samples, dtype=np.float64))
    n = u.size
    if n == 0:
        raise ValueError("ks_statistic needs at least one sample")
    if u[0] < 0.0 or u[-1] > 1.0:
        raise ValueError("samples must lie in [0, 1]")
    i = np.arange(1, n + 1, dtype=np.float64)
    d_plus = np.max(i / n - u)
    d_minus = np.max(u - (i - 1.0) / n)
    d = float(max(d_plus, d_minus))
    sqrt_n = math.sqrt(n)
    y = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d
    p = 0.0
    for j in range(1, 101):
        p += 2.0 * (-1.0) ** (j - 1) * math.exp(-2.0 * j * j * y * y)
    return d, float(min(max(p, 0.0), 1.0))


# ---------------------------------------------------------------------------
# mixture-of-logistics reference


@dataclass(frozen=True)
class MoLRef:
    """A k-component mixture of logistic distributions.

    weights live on the simplex; scales are strictly positive.
    """

    weights: np.ndarray
    means: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).copy()
        m = np.asarray(self.means, dtype=np.float64).copy()
        s = np.asarray(self.scales, dtype=np.float64).copy()
        if not (w.ndim == m.ndim == s.ndim == 1 and w.size == m.size == s.size >= 1):
            raise ValueError("weights, means, scales must be equal-length 1-d arrays")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(s <= 0):
            raise ValueError("scales must be strictly positive")
        for arr in (w, m, s):
            arr.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "scales", s)

    @property
    def k(self) -> int:
        return self.weights.size


def _expit(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mol_cdf(ref: MoLRef, x) -> np.ndarray:
    """sum_i w_i * sigmoid((x - mu_i) / s_i), vectorized over x."""
    x = np.asarray(x, dtype=np.float64)
    z = (x[..., None] - ref.means) / ref.scales
    return _expit(z) @ ref.weights


def mol_pdf(ref: MoLRef, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = (x[..., None] - ref.means) / ref.scales
    sig = _expit(z)
    return (sig * (1.0 - sig) / ref.scales) @ ref.weights


def mol_sample(ref: MoLRef, n: int, rng) -> np.ndarray:
    comp = rng.choice(ref.k, size=n, p=ref.weights)
    u = rng.random(n)
    return ref.means[comp] + ref.scales[comp] * (np.log(u) - np.log1p(-u))


def embed_mol_as_pnn(ref: MoLRef, bounds: Bounds) -> tuple[PnnSpec, PnnParams]:
    """Write a logistic mixture as raw parameters of a two-layer network.

    The first layer's positive-weight transform is exp(-raw), so raw
    weights log(s_i) give slopes 1/s_i, raw biases mu_i shift each unit to
    sigmoid((x - mu_i)/s_i), and final raw weights log(w_i) recover the
    mixture weights through the simplex transform.
    """
    spec = PnnSpec((1, ref.k, 1), bounds)
    a1 = np.log(ref.scales)[None, :]
    b1 = ref.means.copy()
    a2 = np.log(ref.weights)[:, None]
    params = PnnParams(weights=(a1, a2), biases=(b1, None))
    return spec, params
