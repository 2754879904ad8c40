"""The full density model: masked weight model over per-coordinate networks.

A model owns the scalar-network architecture (shared widths, per-coordinate
support bounds) and the weight model that emits each coordinate's raw
parameters from the preceding coordinates.  The joint density factorizes
as the product of the emitted one-dimensional conditionals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import pnn, weight_model
from .errors import CheckpointError, DomainError
from .pnn import Bounds, PnnParams, PnnSpec
from .weight_model import Masks, WeightModelParams, WeightModelSpec

FORMAT_MAGIC = b"NITS1\n"


@dataclass
class NitsModel:
    pnn_widths: tuple
    bounds: tuple
    wm_spec: WeightModelSpec
    wm_params: WeightModelParams
    seed: int = 0
    affine_shift: np.ndarray | None = None
    affine_scale: np.ndarray | None = None
    masks: Masks = field(init=False, repr=False)

    def __post_init__(self):
        widths = tuple(int(w) for w in self.pnn_widths)
        bounds = tuple(self.bounds)
        if len(bounds) != self.wm_spec.data_dim:
            raise ValueError(
                f"{len(bounds)} bounds for data_dim {self.wm_spec.data_dim}")
        probe = PnnSpec(widths, bounds[0])
        if probe.n_params != self.wm_spec.params_per_dim:
            raise ValueError(
                f"widths {widths} need {probe.n_params} params per coordinate, "
                f"weight model emits {self.wm_spec.params_per_dim}")
        self.pnn_widths = widths
        self.bounds = bounds
        self.masks = weight_model.build_masks(self.wm_spec)

    @property
    def data_dim(self) -> int:
        return self.wm_spec.data_dim

    @property
    def params_per_dim(self) -> int:
        return self.wm_spec.params_per_dim

    def pnn_spec(self, i: int) -> PnnSpec:
        return PnnSpec(self.pnn_widths, self.bounds[i])

    def copy(self) -> "NitsModel":
        return NitsModel(
            pnn_widths=self.pnn_widths, bounds=self.bounds,
            wm_spec=self.wm_spec, wm_params=self.wm_params.copy(),
            seed=self.seed,
            affine_shift=None if self.affine_shift is None else self.affine_shift.copy(),
            affine_scale=None if self.affine_scale is None else self.affine_scale.copy())


def bounds_from_data(x, margin: float = 0.1) -> tuple:
    """Per-column support [min - margin*range, max + margin*range].

    Degenerate columns (zero range) get a unit pad so the interval stays
    non-empty.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("need a non-empty (n, d) array")
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    pad = np.where(hi > lo, margin * (hi - lo), 1.0)
    return tuple(Bounds(l - p, h + p) for l, h, p in zip(lo, hi, pad))


def build_model(bounds, pnn_hidden=(16, 16), hidden_dim: int = 128,
                residual_blocks: int = 4, dropout: float = 0.1,
                masking: str = "autoregressive", seed: int = 0) -> NitsModel:
    """Construct an untrained model over the given per-coordinate bounds."""
    bounds = tuple(bounds)
    widths = (1, *(int(h) for h in pnn_hidden), 1)
    p = PnnSpec(widths, bounds[0]).n_params
    wm_spec = WeightModelSpec(
        data_dim=len(bounds), hidden_dim=hidden_dim,
        residual_blocks=residual_blocks, dropout_rate=dropout,
        params_per_dim=p, masking=masking)
    out_bias = np.concatenate(
        [pnn.reference_params(PnnSpec(widths, b)).flatten() for b in bounds])
    rng = np.random.default_rng(seed)
    params = weight_model.init_params(wm_spec, rng, out_bias)
    return NitsModel(pnn_widths=widths, bounds=bounds, wm_spec=wm_spec,
                     wm_params=params, seed=seed)


# ---------------------------------------------------------------------------
# evaluation


def emit_stack(model: NitsModel, x_rows, *, training: bool = False,
               dropout_rng=None):
    """Raw parameters for a batch of rows: (n, d) -> ((n, d*P), tape)."""
    return weight_model.forward(model.wm_spec, model.wm_params, model.masks,
                                x_rows, training=training,
                                dropout_rng=dropout_rng)


def emit_theta(model: NitsModel, x) -> tuple:
    """Per-coordinate raw parameters at one point, as PnnParams.

    Deterministic: dropout never fires here.  Block i depends only on
    x[:i] under autoregressive masking and on nothing when independent.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.data_dim,):
        raise ValueError(f"x shape {x.shape}, expected ({model.data_dim},)")
    theta, _ = emit_stack(model, x[None, :])
    p = model.params_per_dim
    return tuple(
        PnnParams.from_flat(model.pnn_spec(i), theta[0, i * p:(i + 1) * p])
        for i in range(model.data_dim))


def in_bounds_mask(model: NitsModel, x_rows) -> np.ndarray:
    x_rows = np.asarray(x_rows, dtype=np.float64)
    lo = np.array([b.lo for b in model.bounds])
    hi = np.array([b.hi for b in model.bounds])
    return np.all((x_rows >= lo) & (x_rows <= hi), axis=1)


def log_likelihood_batch(model: NitsModel, x_rows, chunk: int = 4096) -> np.ndarray:
    """Joint log density per row; rows must lie inside the bounds."""
    x_rows = np.asarray(x_rows, dtype=np.float64)
    if x_rows.ndim != 2 or x_rows.shape[1] != model.data_dim:
        raise ValueError(f"x shape {x_rows.shape}, expected (n, {model.data_dim})")
    ok = in_bounds_mask(model, x_rows)
    if not np.all(ok):
        row = int(np.flatnonzero(~ok)[0])
        raise DomainError(f"row {row} lies outside the model bounds")
    d, p = model.data_dim, model.params_per_dim
    lo = np.array([b.lo for b in model.bounds])
    hi = np.array([b.hi for b in model.bounds])
    out = np.empty(x_rows.shape[0])
    for start in range(0, x_rows.shape[0], chunk):
        xb = x_rows[start:start + chunk]
        theta, _ = emit_stack(model, xb)
        ll = pnn.logpdf_stack(
            model.pnn_widths, theta.reshape(-1, p), xb.reshape(-1),
            np.tile(lo, xb.shape[0]), np.tile(hi, xb.shape[0]))
        out[start:start + chunk] = ll.reshape(-1, d).sum(axis=1)
    return out


def log_likelihood(model: NitsModel, x) -> float:
    """Joint log density at one point, in nats."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.data_dim,):
        raise ValueError(f"x shape {x.shape}, expected ({model.data_dim},)")
    for i, b in enumerate(model.bounds):
        if not (math.isfinite(x[i]) and b.contains(x[i])):
            raise DomainError(
                f"coordinate {i}: {x[i]} outside support [{b.lo}, {b.hi}]")
    return float(log_likelihood_batch(model, x[None, :])[0])


def discretized_log_pmf(model: NitsModel, x, q: float) -> float:
    """Log probability of a quantized point under the induced pmf.

    Coordinate i's support is tiled by K = (hi-lo)/q bins; the level at
    bin k sits at lo + (k + 1/2)q and owns [lo + kq, lo + (k+1)q), with
    the first and last bins pinned exactly to the support endpoints.  The
    pmf of a level is the cdf difference across its bin, so for fixed
    ancestors the pmf over a full grid telescopes to 1.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.data_dim,):
        raise ValueError(f"x shape {x.shape}, expected ({model.data_dim},)")
    if not q > 0:
        raise ValueError(f"quantization step must be positive, got {q}")
    thetas = emit_theta(model, x)
    total = 0.0
    for i, b in enumerate(model.bounds):
        n_bins_f = b.width / q
        n_bins = round(n_bins_f)
        if n_bins < 1 or abs(n_bins_f - n_bins) > 1e-8 * max(1, n_bins):
            raise DomainError(
                f"coordinate {i}: step {q} does not tile [{b.lo}, {b.hi}]")
        k_f = (x[i] - b.lo) / q - 0.5
        k = round(k_f)
        if abs(k_f - k) > 1e-6 or not 0 <= k < n_bins:
            raise DomainError(
                f"coordinate {i}: {x[i]} is not on the level grid")
        lower = b.lo + k * q
        upper = b.hi if k == n_bins - 1 else b.lo + (k + 1) * q
        spec = model.pnn_spec(i)
        pmf = pnn.cdf(spec, thetas[i], upper) - pnn.cdf(spec, thetas[i], lower)
        total += math.log(max(pmf, 1e-300))
    return total


# ---------------------------------------------------------------------------
# checkpoint format
#
# magic "NITS1\n", UTF-8 key=value header lines, one blank line, raw
# little-endian float64 tensors in declaration order, then an 8-byte CRC
# of the tensor payload (CRC-64/XZ, little-endian).

_CRC64_POLY = 0xC96C5795D7870F42


def _crc64_table():
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = (crc >> 1) ^ (_CRC64_POLY if crc & 1 else 0)
        table.append(crc)
    return table


_CRC64_TABLE = _crc64_table()


def crc64(data: bytes) -> int:
    crc = 0xFFFFFFFFFFFFFFFF
    table = _CRC64_TABLE
    for byte in data:
        crc = (crc >> 8) ^ table[(crc ^ byte) & 0xFF]
    return crc ^ 0xFFFFFFFFFFFFFFFF


def _fmt_floats(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def save_checkpoint(model: NitsModel, path) -> None:
    header = [
        "format_version=1",
        f"data_dim={model.data_dim}",
        "pnn_widths=" + ",".join(str(w) for w in model.pnn_widths),
        f"hidden_dim={model.wm_spec.hidden_dim}",
        f"residual_blocks={model.wm_spec.residual_blocks}",
        f"dropout={model.wm_spec.dropout_rate!r}",
        f"masking={model.wm_spec.masking}",
        f"seed={model.seed}",
    ]
    for i, b in enumerate(model.bounds):
        header.append(f"bounds{i}={_fmt_floats([b.lo, b.hi])}")
    if model.affine_shift is not None:
        header.append("affine_shift=" + _fmt_floats(model.affine_shift))
        header.append("affine_scale=" + _fmt_floats(model.affine_scale))
    tensors = model.wm_params.arrays()
    header.append(f"tensor_count={len(tensors)}")
    payload = b"".join(np.ascontiguousarray(t, dtype="<f8").tobytes()
                       for t in tensors)
    with open(path, "wb") as fh:
        fh.write(FORMAT_MAGIC)
        fh.write(("\n".join(header) + "\n\n").encode("utf-8"))
        fh.write(payload)
        fh.write(crc64(payload).to_bytes(8, "little"))


def load_checkpoint(path) -> NitsModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(FORMAT_MAGIC):
        raise CheckpointError(
            f"{path}: bad magic, not a model checkpoint")
    body = blob[len(FORMAT_MAGIC):]
    sep = body.find(b"\n\n")
    if sep < 0:
        raise CheckpointError(f"{path}: missing header terminator")
    fields = {}
    for line in body[:sep].decode("utf-8").splitlines():
        key, eq, value = line.partition("=")
        if not eq:
            raise CheckpointError(f"{path}: malformed header line {line!r}")
        fields[key] = value
    try:
        data_dim = int(fields["data_dim"])
        widths = tuple(int(w) for w in fields["pnn_widths"].split(","))
        hidden_dim = int(fields["hidden_dim"])
        residual_blocks = int(fields["residual_blocks"])
        dropout = float(fields["dropout"])
        masking = fields["masking"]
        seed = int(fields["seed"])
        bounds = []
        for i in range(data_dim):
            lo, hi = (float(v) for v in fields[f"bounds{i}"].split(","))
            bounds.append(Bounds(lo, hi))
        tensor_count = int(fields["tensor_count"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad header ({exc})") from exc

    rest = body[sep + 2:]
    if len(rest) < 8:
        raise CheckpointError(f"{path}: truncated payload")
    payload, crc_bytes = rest[:-8], rest[-8:]
    if crc64(payload) != int.from_bytes(crc_bytes, "little"):
        raise CheckpointError(f"{path}: payload CRC mismatch")

    p = PnnSpec(widths, bounds[0]).n_params
    wm_spec = WeightModelSpec(
        data_dim=data_dim, hidden_dim=hidden_dim,
        residual_blocks=residual_blocks, dropout_rate=dropout,
        params_per_dim=p, masking=masking)
    shapes = [(data_dim, hidden_dim), (hidden_dim,)]
    for _ in range(residual_blocks):
        shapes.extend([(hidden_dim, hidden_dim), (hidden_dim,)] * 2)
    shapes.extend([(hidden_dim, wm_spec.out_dim), (wm_spec.out_dim,)])
    if tensor_count != len(shapes):
        raise CheckpointError(
            f"{path}: header declares {tensor_count} tensors, "
            f"architecture needs {len(shapes)}")
    need = sum(int(np.prod(s)) for s in shapes) * 8
    if len(payload) != need:
        raise CheckpointError(
            f"{path}: payload holds {len(payload)} bytes, expected {need}")
    tensors, ofs = [], 0
    for shape in shapes:
        size = int(np.prod(shape)) * 8
        tensors.append(np.frombuffer(payload[ofs:ofs + size],
                                     dtype="<f8").reshape(shape).copy())
        ofs += size
    blocks = [tuple(tensors[2 + 4 * b:2 + 4 * (b + 1)])
              for b in range(residual_blocks)]
    params = WeightModelParams(
        w_in=tensors[0], b_in=tensors[1], blocks=blocks,
        w_out=tensors[-2], b_out=tensors[-1])

    shift = scale = None
    if "affine_shift" in fields:
        shift = np.array([float(v) for v in fields["affine_shift"].split(",")])
        scale = np.array([float(v) for v in fields["affine_scale"].split(",")])
    return NitsModel(pnn_widths=widths, bounds=tuple(bounds), wm_spec=wm_spec,
                     wm_params=params, seed=seed,
                     affine_shift=shift, affine_scale=scale)
