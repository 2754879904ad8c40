"""Datasets: CSV loading, standardization, splits, synthetic corpora.

Every synthetic generator also ships the exact log density it sampled
from, so trained models can be scored against ground truth.  The two
2-d shapes are defined directly as Gaussian mixtures (components along
the arcs / around the circle) precisely so that ground truth exists in
closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import bounds_from_data


@dataclass
class Dataset:
    """Rows of float64 data plus per-column support bounds and splits.

    The three index arrays are disjoint and cover every row.  provenance
    records where the rows came from; gt_log_density, when present, maps
    an (n, d) array to exact log densities.
    """

    x: np.ndarray
    bounds: tuple
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    provenance: str
    gt_log_density: object = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 2 or self.x.shape[0] < 1:
            raise ValueError("data must be a non-empty (n, d) array")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("data contains non-finite entries")
        n = self.x.shape[0]
        idx = np.concatenate([self.train_idx, self.val_idx, self.test_idx])
        if len(idx) != n or len(np.unique(idx)) != n:
            raise ValueError("splits must be disjoint and cover every row")
        if len(self.bounds) != self.x.shape[1]:
            raise ValueError("need one bounds pair per column")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def train(self) -> np.ndarray:
        return self.x[self.train_idx]

    @property
    def val(self) -> np.ndarray:
        return self.x[self.val_idx]

    @property
    def test(self) -> np.ndarray:
        return self.x[self.test_idx]


def make_splits(n: int, seed: int, ratios=(0.8, 0.1, 0.1)):
    """Seeded shuffle split into train/val/test index arrays."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ValueError(f"bad split ratios {ratios}")
    total = sum(ratios)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(n * ratios[0] / total))
    n_val = int(round(n * ratios[1] / total))
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def _dataset_from_rows(x, provenance, seed, ratios=(0.8, 0.1, 0.1),
                       gt_log_density=None) -> Dataset:
    tr, va, te = make_splits(x.shape[0], seed, ratios)
    train_rows = x[tr] if len(tr) else x
    return Dataset(x=x, bounds=bounds_from_data(train_rows),
                   train_idx=tr, val_idx=va, test_idx=te,
                   provenance=provenance, gt_log_density=gt_log_density)


# ---------------------------------------------------------------------------
# CSV


def load_csv(path, has_header: bool = False, delimiter: str = ",",
             seed: int = 0, ratios=(0.8, 0.1, 0.1)) -> Dataset:
    """Parse a numeric CSV into a Dataset; errors name the offending cell."""
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if lineno == 1 and has_header:
                continue
            line = line.strip()
            if not line:
                continue
            cells = line.split(delimiter)
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise ValueError(
                    f"{path}: row {lineno} has {len(cells)} cells, expected {width}")
            parsed = []
            for col, cell in enumerate(cells):
                try:
                    value = float(cell)
                except ValueError:
                    raise ValueError(
                        f"{path}: row {lineno}, column {col}: "
                        f"{cell!r} is not a number") from None
                if not math.isfinite(value):
                    raise ValueError(
                        f"{path}: row {lineno}, column {col}: "
                        f"non-finite value {cell!r}")
                parsed.append(value)
            rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    x = np.array(rows, dtype=np.float64)
    return _dataset_from_rows(x, provenance=f"csv:{path}", seed=seed,
                              ratios=ratios)


def write_csv(path, x, header=None) -> None:
    """Write rows with full round-trip precision (17 significant digits)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("x must be 2-d")
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in x:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


# ---------------------------------------------------------------------------
# standardization and dequantization


@dataclass(frozen=True)
class AffineRecord:
    """Per-column transform z = (x - shift) / scale and its inverse.

    Negative log densities move between units by the log scale sum:
    nll_original = nll_standardized + sum(log(scale)).
    """

    shift: np.ndarray
    scale: np.ndarray

    def apply(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.shift) / self.scale

    def invert(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.scale + self.shift

    @property
    def log_scale_sum(self) -> float:
        return float(np.sum(np.log(self.scale)))


def standardize(ds: Dataset):
    """Shift/scale every column to train-split mean 0 and sd 1.

    Returns (new dataset, AffineRecord).  A zero-variance training column
    cannot be standardized and is an error.
    """
    train = ds.train
    shift = train.mean(axis=0)
    scale = train.std(axis=0)
    bad = np.flatnonzero(scale == 0.0)
    if bad.size:
        raise ValueError(f"column {int(bad[0])} has zero variance in the training split")
    record = AffineRecord(shift=shift, scale=scale)
    z = record.apply(ds.x)
    out = Dataset(x=z, bounds=bounds_from_data(z[ds.train_idx]),
                  train_idx=ds.train_idx, val_idx=ds.val_idx,
                  test_idx=ds.test_idx,
                  provenance=ds.provenance + "+standardized",
                  gt_log_density=None)
    return out, record


def dequantize(ds: Dataset, columns, step: float = 1.0, seed: int = 0) -> Dataset:
    """Add uniform noise of one quantization step to integer-grid columns."""
    x = ds.x.copy()
    rng = np.random.default_rng(seed)
    for col in columns:
        vals = x[:, col] / step
        if not np.allclose(vals, np.round(vals), atol=1e-8):
            raise ValueError(f"column {col} is not on a grid of step {step}")
        x[:, col] += step * rng.random(ds.n)
    return Dataset(x=x, bounds=bounds_from_data(x[ds.train_idx]),
                   train_idx=ds.train_idx, val_idx=ds.val_idx,
                   test_idx=ds.test_idx,
                   provenance=ds.provenance + "+dequantized",
                   gt_log_density=None)


# ---------------------------------------------------------------------------
# synthetic corpora with exact log densities


def _logistic_logpdf(x):
    z = np.abs(x)
    return -z - 2.0 * np.log1p(np.exp(-z))


def _make_logistic(n, rng):
    u = rng.random(n)
    x = (np.log(u) - np.log1p(-u))[:, None]

    def gt(rows):
        return _logistic_logpdf(np.asarray(rows)[:, 0])

    return x, gt


_GMM2_MEANS = np.array([-2.0, 2.0])
_GMM2_SD = 0.5


def _make_gmm2(n, rng):
    comp = (rng.random(n) < 0.5).astype(int)
    x = (_GMM2_MEANS[comp] + _GMM2_SD * rng.standard_normal(n))[:, None]

    def gt(rows):
        v = np.asarray(rows)[:, 0]
        z = (v[:, None] - _GMM2_MEANS) / _GMM2_SD
        comp_log = (-0.5 * z * z - math.log(_GMM2_SD)
                    - 0.5 * math.log(2.0 * math.pi) + math.log(0.5))
        return np.logaddexp(comp_log[:, 0], comp_log[:, 1])

    return x, gt


def _gaussian_mixture_2d(centers, sd):
    centers = np.asarray(centers, dtype=np.float64)
    k = centers.shape[0]
    log_norm = math.log(1.0 / k) - math.log(2.0 * math.pi * sd * sd)

    def sample(n, rng):
        comp = rng.integers(0, k, size=n)
        return centers[comp] + sd * rng.standard_normal((n, 2))

    def gt(rows):
        rows = np.asarray(rows, dtype=np.float64)
        d2 = np.sum((rows[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        comp_log = log_norm - 0.5 * d2 / (sd * sd)
        out = comp_log[:, 0]
        for j in range(1, k):
            out = np.logaddexp(out, comp_log[:, j])
        return out

    return sample, gt


def _moons_centers(per_moon: int = 12):
    t = math.pi * (np.arange(per_moon) + 0.5) / per_moon
    outer = np.stack([np.cos(t), np.sin(t)], axis=1)
    inner = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    return np.concatenate([outer, inner], axis=0)


def _ring_centers(k: int = 16, radius: float = 1.5):
    t = 2.0 * math.pi * np.arange(k) / k
    return radius * np.stack([np.cos(t), np.sin(t)], axis=1)


_MOONS_SAMPLE, _MOONS_GT = _gaussian_mixture_2d(_moons_centers(), sd=0.15)
_RING_SAMPLE, _RING_GT = _gaussian_mixture_2d(_ring_centers(), sd=0.2)

SYNTHETIC_NAMES = ("logistic", "gmm2", "two-moons-2d", "ring-2d")


def make_synthetic(name: str, n: int, seed: int = 0,
                   ratios=(0.8, 0.1, 0.1)) -> Dataset:
    """Seeded draw from a named reference density, with exact ground truth."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    rng = np.random.default_rng(seed)
    if name == "logistic":
        x, gt = _make_logistic(n, rng)
    elif name == "gmm2":
        x, gt = _make_gmm2(n, rng)
    elif name == "two-moons-2d":
        x, gt = _MOONS_SAMPLE(n, rng), _MOONS_GT
    elif name == "ring-2d":
        x, gt = _RING_SAMPLE(n, rng), _RING_GT
    else:
        raise ValueError(f"unknown synthetic dataset {name!r}; "
                         f"choose from {SYNTHETIC_NAMES}")
    return _dataset_from_rows(x, provenance=f"synthetic:{name}:seed={seed}",
                              seed=seed, ratios=ratios, gt_log_density=gt)
