"""Masked residual network that emits raw density-network parameters.

One forward pass maps a data row x to a flat vector of raw parameters,
one block of size params_per_dim per coordinate.  Degree labels under the
natural ordering make block i a function of x[:i] only (autoregressive
masking) or of nothing at all (independent masking, a learned constant
table).  Coordinate 1's block always comes from the output bias row: no
hidden unit has degree 0, so nothing else can reach it.

Residual blocks are pre-activation: relu, masked linear, relu, dropout,
masked linear, then the identity skip.  All hidden layers share one
degree assignment, which keeps the identity skip mask-consistent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASKINGS = ("autoregressive", "independent")


@dataclass(frozen=True)
class WeightModelSpec:
    data_dim: int
    hidden_dim: int
    residual_blocks: int
    dropout_rate: float
    params_per_dim: int
    masking: str

    def __post_init__(self):
        if self.data_dim < 1:
            raise ValueError(f"data_dim must be >= 1, got {self.data_dim}")
        if self.hidden_dim < 1:
            raise ValueError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.residual_blocks < 0:
            raise ValueError(f"residual_blocks must be >= 0, got {self.residual_blocks}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.params_per_dim < 1:
            raise ValueError(f"params_per_dim must be >= 1, got {self.params_per_dim}")
        if self.masking not in _MASKINGS:
            raise ValueError(f"masking must be one of {_MASKINGS}, got {self.masking!r}")

    @property
    def out_dim(self) -> int:
        return self.data_dim * self.params_per_dim


@dataclass(frozen=True)
class Masks:
    m_in: np.ndarray   # (data_dim, hidden_dim)
    m_hid: np.ndarray  # (hidden_dim, hidden_dim)
    m_out: np.ndarray  # (hidden_dim, out_dim)


def degrees(spec: WeightModelSpec):
    """Input, hidden, and output degree labels under the natural ordering."""
    d = spec.data_dim
    deg_in = np.arange(1, d + 1)
    deg_hid = (np.arange(spec.hidden_dim) % max(1, d - 1)) + 1
    deg_out = np.repeat(np.arange(1, d + 1), spec.params_per_dim)
    return deg_in, deg_hid, deg_out


def build_masks(spec: WeightModelSpec) -> Masks:
    """Hidden unit j sees inputs with degree <= deg(j); output block i
    sees hidden units with degree < i, so block i depends on x[:i] only."""
    deg_in, deg_hid, deg_out = degrees(spec)
    m_in = (deg_hid[None, :] >= deg_in[:, None]).astype(np.float64)
    m_hid = (deg_hid[None, :] >= deg_hid[:, None]).astype(np.float64)
    if spec.masking == "independent":
        m_out = np.zeros((spec.hidden_dim, spec.out_dim))
    else:
        m_out = (deg_out[None, :] > deg_hid[:, None]).astype(np.float64)
    return Masks(m_in=m_in, m_hid=m_hid, m_out=m_out)


@dataclass
class WeightModelParams:
    """Mutable parameter arrays, in the fixed serialization order:
    input layer, then (w1, b1, w2, b2) per residual block, then output."""

    w_in: np.ndarray
    b_in: np.ndarray
    blocks: list
    w_out: np.ndarray
    b_out: np.ndarray

    def arrays(self) -> list:
        out = [self.w_in, self.b_in]
        for w1, b1, w2, b2 in self.blocks:
            out.extend([w1, b1, w2, b2])
        out.extend([self.w_out, self.b_out])
        return out

    def copy(self) -> "WeightModelParams":
        return WeightModelParams(
            w_in=self.w_in.copy(), b_in=self.b_in.copy(),
            blocks=[tuple(a.copy() for a in blk) for blk in self.blocks],
            w_out=self.w_out.copy(), b_out=self.b_out.copy())

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


def init_params(spec: WeightModelSpec, rng, out_bias) -> WeightModelParams:
    """Fan-in-scaled uniform hidden weights, zero output weights, and the
    supplied reference raw parameters as the output bias, so the initial
    conditionals are a fixed mild density regardless of the input."""
    masks = build_masks(spec)
    d, h = spec.data_dim, spec.hidden_dim
    out_bias = np.asarray(out_bias, dtype=np.float64)
    if out_bias.shape != (spec.out_dim,):
        raise ValueError(
            f"out_bias shape {out_bias.shape}, expected ({spec.out_dim},)")

    def uniform(shape, fan_in):
        lim = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-lim, lim, size=shape)

    w_in = uniform((d, h), d) * masks.m_in
    blocks = []
    for _ in range(spec.residual_blocks):
        w1 = uniform((h, h), h) * masks.m_hid
        w2 = uniform((h, h), h) * masks.m_hid
        blocks.append((w1, np.zeros(h), w2, np.zeros(h)))
    return WeightModelParams(
        w_in=w_in, b_in=np.zeros(h), blocks=blocks,
        w_out=np.zeros((h, spec.out_dim)), b_out=out_bias.copy())


@dataclass
class WmTape:
    """Retained forward state: layer inputs, relu gates, dropout masks."""

    spec: WeightModelSpec
    params: WeightModelParams
    masks: Masks
    x: np.ndarray
    block_state: list
    h_final: np.ndarray
    h_relu: np.ndarray
    out_shape: tuple


def forward(spec: WeightModelSpec, params: WeightModelParams, masks: Masks,
            x, *, training: bool = False, dropout_rng=None):
    """Emit raw parameters for a batch of rows: (n, d) -> (n, out_dim).

    Dropout fires only when training=True and the spec has a positive
    rate; eval-mode output is a deterministic function of x.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.data_dim:
        raise ValueError(f"x shape {x.shape}, expected (n, {spec.data_dim})")
    use_dropout = training and spec.dropout_rate > 0.0
    if use_dropout and dropout_rng is None:
        raise ValueError("training with dropout needs a dropout_rng")

    h = x @ (params.w_in * masks.m_in) + params.b_in
    block_state = []
    for w1, b1, w2, b2 in params.blocks:
        h_in = h
        t1 = np.maximum(h_in, 0.0)
        u1 = t1 @ (w1 * masks.m_hid) + b1
        t2 = np.maximum(u1, 0.0)
        if use_dropout:
            keep = 1.0 - spec.dropout_rate
            dmask = (dropout_rng.random(t2.shape) < keep) / keep
        else:
            dmask = None
        t2d = t2 if dmask is None else t2 * dmask
        h = h_in + t2d @ (w2 * masks.m_hid) + b2
        block_state.append((h_in, t1, u1, t2, dmask, t2d))
    h_relu = np.maximum(h, 0.0)
    out = h_relu @ (params.w_out * masks.m_out) + params.b_out
    tape = WmTape(spec=spec, params=params, masks=masks, x=x,
                  block_state=block_state, h_final=h, h_relu=h_relu,
                  out_shape=out.shape)
    return out, tape


def backward(tape: WmTape, dout) -> list:
    """Gradients for every parameter array, aligned with params.arrays()."""
    spec, params, masks = tape.spec, tape.params, tape.masks
    dout = np.asarray(dout, dtype=np.float64)

    g_w_out = (tape.h_relu.T @ dout) * masks.m_out
    g_b_out = dout.sum(axis=0)
    dh = (dout @ (params.w_out * masks.m_out).T) * (tape.h_final > 0.0)

    g_blocks = []
    for (w1, b1, w2, b2), (h_in, t1, u1, t2, dmask, t2d) in zip(
            reversed(params.blocks), reversed(tape.block_state)):
        du2 = dh
        g_w2 = (t2d.T @ du2) * masks.m_hid
        g_b2 = du2.sum(axis=0)
        dt2 = du2 @ (w2 * masks.m_hid).T
        if dmask is not None:
            dt2 = dt2 * dmask
        du1 = dt2 * (u1 > 0.0)
        g_w1 = (t1.T @ du1) * masks.m_hid
        g_b1 = du1.sum(axis=0)
        dh = dh + (du1 @ (w1 * masks.m_hid).T) * (h_in > 0.0)
        g_blocks.append((g_w1, g_b1, g_w2, g_b2))
    g_blocks.reverse()

    g_w_in = (tape.x.T @ dh) * masks.m_in
    g_b_in = dh.sum(axis=0)

    grads = [g_w_in, g_b_in]
    for blk in g_blocks:
        grads.extend(blk)
    grads.extend([g_w_out, g_b_out])
    return grads
