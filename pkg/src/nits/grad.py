"""Reverse-mode gradients for the negative log density.

This is a purpose-built tape for the fixed architecture in pnn, not a
general autodiff framework.  One loss evaluation touches the network at
three points: the datum x (value and input-derivative) and the two
support endpoints (values only).  The reverse pass seeds

    loss = -log dF/dx(x) + log(F(hi) - F(lo))

at all three heads jointly and accumulates adjoints back onto the raw
weight and bias parameters, folding through the exp(-raw) weight
transform, the mean-scaled bias transform, and the softmax head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import pnn, weight_model
from .errors import NumericalError
from .pnn import PARTITION_FLOOR, PnnParams, PnnSpec


def _backprop_stack(prep, tr_x, tr_lo, tr_hi, gbar, fbar_lo, fbar_hi):
    """Accumulate raw-parameter adjoints from the three seeded heads.

    prep comes from pnn.prepare_stack; tr_x is a retained trace with
    tangents, tr_lo/tr_hi are retained value-only traces.  gbar seeds
    dF/dx at x, fbar_* seed F at the endpoints.  Returns a flat (m, P)
    gradient stack.  Fresh arrays every call: nothing here mutates the
    traces, so re-running on the same tape gives identical output.
    """
    n_hidden = len(prep.ws)
    w_bar = [np.zeros_like(w) for w in prep.ws]
    e_bar = [np.zeros_like(e) for e in prep.effb]
    s_bar = np.zeros_like(prep.s)

    # head seeds
    s_bar += gbar[:, None] * tr_x.tans[n_hidden]
    s_bar += fbar_lo[:, None] * tr_lo.acts[n_hidden]
    s_bar += fbar_hi[:, None] * tr_hi.acts[n_hidden]

    # dual trace at x
    a_bar = np.zeros_like(tr_x.acts[n_hidden])
    t_bar = gbar[:, None] * prep.s
    for l in range(n_hidden - 1, -1, -1):
        a = tr_x.acts[l + 1]
        sig1 = a * (1.0 - a)
        u = tr_x.us[l]
        u_bar = t_bar * sig1
        a_bar = a_bar + t_bar * u * (1.0 - 2.0 * a)
        pre_bar = a_bar * sig1
        w_bar[l] += (tr_x.acts[l][:, :, None] * pre_bar[:, None, :]
                     + tr_x.tans[l][:, :, None] * u_bar[:, None, :])
        e_bar[l] += pre_bar
        a_bar = np.einsum("mio,mo->mi", prep.ws[l], pre_bar)
        t_bar = np.einsum("mio,mo->mi", prep.ws[l], u_bar)

    # value-only traces at the endpoints
    for tr, fbar in ((tr_lo, fbar_lo), (tr_hi, fbar_hi)):
        a_bar = fbar[:, None] * prep.s
        for l in range(n_hidden - 1, -1, -1):
            a = tr.acts[l + 1]
            pre_bar = a_bar * a * (1.0 - a)
            w_bar[l] += tr.acts[l][:, :, None] * pre_bar[:, None, :]
            e_bar[l] += pre_bar
            a_bar = np.einsum("mio,mo->mi", prep.ws[l], pre_bar)

    # fold the parameter transforms
    parts = []
    for l in range(n_hidden):
        n_in = prep.ws[l].shape[1]
        b_bar = -prep.means[l] * e_bar[l]
        w_total = w_bar[l] + (-(e_bar[l] * prep.rawb[l]) / n_in)[:, None, :]
        a_raw_bar = -prep.ws[l] * w_total * prep.unclamped[l]
        parts.append(a_raw_bar.reshape(a_raw_bar.shape[0], -1))
        parts.append(b_bar)
    inner = np.einsum("mk,mk->m", prep.s, s_bar)
    parts.append(prep.s * (s_bar - inner[:, None]))
    return np.concatenate(parts, axis=1)


def nll_and_grad_stack(widths, theta, x, lo, hi, retain_prep=None):
    """Per-item negative log density and its raw-parameter gradient.

    theta is a flat (m, P) raw stack; x, lo, hi are (m,).  Returns
    (nll (m,), grad (m, P)).  Items whose density underflows produce
    non-finite nll entries; their normalizer seed is zeroed where the
    floor was active, matching the flat spots of the floored log.
    """
    x = np.asarray(x, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    prep = retain_prep if retain_prep is not None else pnn.prepare_stack(widths, theta)
    tr_x = pnn._trace(prep, x, want_tangent=True, retain=True)
    tr_lo = pnn._trace(prep, lo, want_tangent=False, retain=True)
    tr_hi = pnn._trace(prep, hi, want_tangent=False, retain=True)
    z = tr_hi.f - tr_lo.f
    zf = np.maximum(z, PARTITION_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        nll = -np.log(tr_x.g) + pnn.floored_log(z)
        gbar = -1.0 / tr_x.g
    live = (z >= PARTITION_FLOOR).astype(np.float64)
    fbar_hi = live / zf
    grads = _backprop_stack(prep, tr_x, tr_lo, tr_hi, gbar, -fbar_hi, fbar_hi)
    return nll, grads


@dataclass
class GradTape:
    """Retained forward state for one (spec, params, x) evaluation.

    backward() replays the reverse pass from scratch each call, so it is
    idempotent and never mutates the recorded primal values.
    """

    spec: PnnSpec
    x: float
    loss: float
    _prep: object
    _tr_x: object
    _tr_lo: object
    _tr_hi: object
    _z: float

    def backward(self) -> PnnParams:
        g = float(self._tr_x.g[0])
        zf = max(self._z, PARTITION_FLOOR)
        gbar = np.array([-1.0 / g])
        live = 1.0 if self._z >= PARTITION_FLOOR else 0.0
        fbar_hi = np.array([live / zf])
        flat = _backprop_stack(self._prep, self._tr_x, self._tr_lo, self._tr_hi,
                               gbar, -fbar_hi, fbar_hi)[0]
        return PnnParams.from_flat(self.spec, flat)


def record(spec: PnnSpec, params: PnnParams, x: float) -> GradTape:
    pnn._check_params(spec, params)
    theta = params.flatten()[None, :]
    prep = pnn.prepare_stack(spec.layer_widths, theta)
    tr_x = pnn._trace(prep, np.array([float(x)]), want_tangent=True, retain=True)
    tr_lo = pnn._trace(prep, np.array([spec.bounds.lo]), want_tangent=False,
                       retain=True)
    tr_hi = pnn._trace(prep, np.array([spec.bounds.hi]), want_tangent=False,
                       retain=True)
    z = float(tr_hi.f[0] - tr_lo.f[0])
    g = float(tr_x.g[0])
    if g <= 0.0 or not np.isfinite(g):
        raise NumericalError(f"density derivative {g} is not positive at x={x}")
    loss = float(-np.log(g) + np.log(max(z, PARTITION_FLOOR)))
    return GradTape(spec=spec, x=float(x), loss=loss, _prep=prep, _tr_x=tr_x,
                    _tr_lo=tr_lo, _tr_hi=tr_hi, _z=z)


def loss_and_grad(spec: PnnSpec, params: PnnParams, x: float):
    """Negative log density at x and its gradient in raw-parameter shape."""
    tape = record(spec, params, x)
    return tape.loss, tape.backward()


def nll_and_grad_rows(widths, bounds, theta_rows, x_rows):
    """Batch loss over data rows for a multi-dimensional model.

    theta_rows has shape (n, d*P): one raw parameter block per coordinate
    per row.  Returns per-row nll summed over coordinates (n,) and the
    matching gradient (n, d*P).
    """
    theta_rows = np.asarray(theta_rows, dtype=np.float64)
    x_rows = np.asarray(x_rows, dtype=np.float64)
    n, d = x_rows.shape
    p = theta_rows.shape[1] // d
    if theta_rows.shape != (n, d * p):
        raise ValueError("theta_rows shape does not match data rows")
    theta_flat = theta_rows.reshape(n * d, p)
    x_flat = x_rows.reshape(n * d)
    lo = np.tile(np.array([b.lo for b in bounds]), n)
    hi = np.tile(np.array([b.hi for b in bounds]), n)
    nll, grads = nll_and_grad_stack(widths, theta_flat, x_flat, lo, hi)
    return nll.reshape(n, d).sum(axis=1), grads.reshape(n, d * p)


def chain_to_phi(grad_theta, wm_tape) -> list:
    """Push raw-parameter gradients back through the weight model.

    grad_theta must match the (n, out_dim) output the tape recorded;
    anything else is a usage error.
    """
    grad_theta = np.asarray(grad_theta, dtype=np.float64)
    if grad_theta.shape != wm_tape.out_shape:
        raise ValueError(
            f"gradient shape {grad_theta.shape} does not match the tape's "
            f"recorded output {wm_tape.out_shape}")
    return weight_model.backward(wm_tape, grad_theta)
