"""Runnable acceptance checks.

Each criterion function measures one guarantee end to end and returns a
CriterionResult with the observed numbers.  The command line's verify
subcommand and the acceptance test suite both run these, so the printed
pass/fail lines and the test gate can never disagree.
"""

from __future__ import annotations

import math
import os
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from . import data, grad, model as model_mod, oracle, pnn, sampler, train
from .pnn import Bounds, PnnParams, PnnSpec

_WIDTHS = (1, 16, 16, 1)
_BOUNDS = Bounds(-3.0, 3.0)


@dataclass
class CriterionResult:
    index: int
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} criterion {self.index:2d} {self.name}: "
                f"{self.detail} ({self.seconds:.1f}s)")


def _timed(index, name, fn):
    t0 = time.perf_counter()
    passed, detail = fn()
    return CriterionResult(index=index, name=name, passed=passed,
                           detail=detail, seconds=time.perf_counter() - t0)


def criterion_partition_exactness(n_seeds: int = 100) -> CriterionResult:
    """Exact normalizer F(hi)-F(lo) vs adaptive quadrature of dF/dx."""

    def run():
        spec = PnnSpec(_WIDTHS, _BOUNDS)
        worst = 0.0
        t0 = time.perf_counter()
        for seed in range(n_seeds):
            params = pnn.random_params(spec, np.random.default_rng(seed))
            z = pnn.partition(spec, params)
            zq = oracle.adaptive_simpson(
                lambda xs: pnn.dfdx_many(spec, params, xs),
                _BOUNDS.lo, _BOUNDS.hi)
            worst = max(worst, abs(z - zq) / zq)
        elapsed = time.perf_counter() - t0
        ok = worst < 1e-6 and elapsed < 10.0
        return ok, (f"max rel gap {worst:.2e} over {n_seeds} seeds "
                    f"(limit 1e-06), batch took {elapsed:.1f}s (limit 10s)")

    return _timed(1, "exact normalizer vs quadrature", run)


def criterion_monotonicity(n_seeds: int = 100, n_x: int = 1000) -> CriterionResult:
    """dF/dx strictly positive at random points for random parameters."""

    def run():
        spec = PnnSpec(_WIDTHS, _BOUNDS)
        violations = 0
        min_seen = math.inf
        for seed in range(n_seeds):
            rng = np.random.default_rng(seed)
            params = pnn.random_params(spec, rng)
            xs = rng.uniform(_BOUNDS.lo, _BOUNDS.hi, size=n_x)
            d = pnn.dfdx_many(spec, params, xs)
            violations += int(np.count_nonzero(~(d > 0.0)))
            min_seen = min(min_seen, float(d.min()))
        ok = violations == 0
        return ok, (f"{violations} violations over {n_seeds}x{n_x} points, "
                    f"min dF/dx {min_seen:.2e}")

    return _timed(2, "strict monotonicity of F", run)


def criterion_normalization(n_seeds: int = 100) -> CriterionResult:
    """Normalized pdf integrates to 1; cdf hits exactly 0 and 1."""

    def run():
        spec = PnnSpec(_WIDTHS, _BOUNDS)
        worst_int = 0.0
        worst_end = 0.0
        for seed in range(n_seeds):
            params = pnn.random_params(spec, np.random.default_rng(seed))
            integral = oracle.simpson(
                lambda xs: np.exp(pnn.logpdf_many(spec, params, xs)),
                _BOUNDS.lo, _BOUNDS.hi, 10_000)
            worst_int = max(worst_int, abs(integral - 1.0))
            worst_end = max(worst_end,
                            abs(pnn.cdf(spec, params, _BOUNDS.lo)),
                            abs(pnn.cdf(spec, params, _BOUNDS.hi) - 1.0))
        ok = worst_int < 1e-4 and worst_end <= 1e-12
        return ok, (f"max |integral-1| {worst_int:.2e} (limit 1e-04), "
                    f"max endpoint error {worst_end:.2e} (limit 1e-12)")

    return _timed(3, "pdf normalization and cdf endpoints", run)


def _max_rel(analytic, fd, floor=1e-6):
    analytic = np.asarray(analytic, dtype=np.float64)
    fd = np.asarray(fd, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), floor)
    return float(np.max(np.abs(analytic - fd) / denom))


def criterion_gradients(n_seeds: int = 20, n_phi: int = 200) -> CriterionResult:
    """Loss gradients vs central differences, raw and through the
    weight model."""

    def run():
        t0 = time.perf_counter()
        spec = PnnSpec((1, 8, 8, 1), _BOUNDS)
        widths = spec.layer_widths
        n_p = spec.n_params
        worst_raw = 0.0
        for seed in range(n_seeds):
            rng = np.random.default_rng(seed)
            params = pnn.random_params(spec, rng)
            x = rng.uniform(-2.5, 2.5)
            _, g = grad.loss_and_grad(spec, params, x)
            flat = params.flatten()
            steps = np.array([oracle.grad_step(p) for p in flat])
            stack = np.repeat(flat[None, :], 2 * n_p, axis=0)
            rows = np.arange(n_p)
            stack[2 * rows, rows] += steps
            stack[2 * rows + 1, rows] -= steps
            xs = np.full(2 * n_p, x)
            lo = np.full(2 * n_p, _BOUNDS.lo)
            hi = np.full(2 * n_p, _BOUNDS.hi)
            nll = -pnn.logpdf_stack(widths, stack, xs, lo, hi)
            fd = (nll[0::2] - nll[1::2]) / (2.0 * steps)
            worst_raw = max(worst_raw, _max_rel(g.flatten(), fd))

        # end to end through the weight model on a 2-d model
        bounds = (Bounds(-3, 3), Bounds(-2, 4))
        m = model_mod.build_model(bounds, pnn_hidden=(8, 8), hidden_dim=16,
                                  residual_blocks=1, dropout=0.0, seed=0)
        rng = np.random.default_rng(99)
        m.wm_params.w_out += (0.05 * rng.standard_normal(m.wm_params.w_out.shape)
                              * m.masks.m_out)
        X = rng.uniform(-1.5, 1.5, size=(4, 2))

        def batch_loss():
            theta, tape = model_mod.emit_stack(m, X)
            nll, dtheta = grad.nll_and_grad_rows(m.pnn_widths, m.bounds, theta, X)
            return float(np.mean(nll)), dtheta, tape

        _, dtheta, tape = batch_loss()
        gphi = grad.chain_to_phi(dtheta / X.shape[0], tape)
        arrays = m.wm_params.arrays()
        idx_rng = np.random.default_rng(7)
        worst_phi = 0.0
        for _ in range(n_phi):
            ai = int(idx_rng.integers(len(arrays)))
            arr = arrays[ai]
            j = int(idx_rng.integers(arr.size))
            p0 = arr.flat[j]
            h = oracle.grad_step(p0)
            arr.flat[j] = p0 + h
            lu, _, _ = batch_loss()
            arr.flat[j] = p0 - h
            ld, _, _ = batch_loss()
            arr.flat[j] = p0
            worst_phi = max(worst_phi, _max_rel(gphi[ai].flat[j],
                                                (lu - ld) / (2.0 * h)))
        elapsed = time.perf_counter() - t0
        ok = worst_raw < 1e-4 and worst_phi < 1e-3 and elapsed < 60.0
        return ok, (f"max rel err raw {worst_raw:.2e} (limit 1e-04), "
                    f"through weight model {worst_phi:.2e} (limit 1e-03), "
                    f"{elapsed:.1f}s (limit 60s)")

    return _timed(4, "gradient checks vs finite differences", run)


def criterion_sampling(n: int = 10_000) -> CriterionResult:
    """cdf-pushed samples are uniform; bisection respects its bound."""

    def run():
        spec = PnnSpec(_WIDTHS, _BOUNDS)
        params = pnn.random_params(spec, np.random.default_rng(2024))
        m = model_mod.build_model((_BOUNDS,), pnn_hidden=_WIDTHS[1:-1],
                                  hidden_dim=8, residual_blocks=1,
                                  dropout=0.0, seed=0)
        m.wm_params.b_out[:] = params.flatten()
        stats = {}
        xs = sampler.sample_ancestral(m, n, np.random.default_rng(7),
                                      stats=stats)[:, 0]
        u = pnn.cdf_many(spec, params, xs)
        d, p = oracle.ks_statistic(u)
        cfg = sampler.InversionConfig()
        bound = sampler.iteration_bound(
            _BOUNDS.lo, _BOUNDS.hi, cfg.resolve_eps(_BOUNDS.lo, _BOUNDS.hi)) + 2
        iters = max(stats["bisection_iters"])
        ok = p > 0.01 and iters <= bound
        return ok, (f"KS D={d:.4f} p={p:.4f} (need p > 0.01) on {n} draws, "
                    f"bisection {iters} iters (bound {bound})")

    return _timed(5, "inverse-transform sampling uniformity", run)


def criterion_mixture_limit(n_refs: int = 10) -> CriterionResult:
    """Embedded logistic mixtures approach their reference cdf as the
    support widens."""

    def run():
        rng = np.random.default_rng(17)
        widths_b = (5.0, 10.0, 20.0, 40.0)
        worst_final = 0.0
        all_decreasing = True
        for _ in range(n_refs):
            k = int(rng.integers(2, 5))
            w = rng.random(k) + 0.2
            ref = oracle.MoLRef(weights=w / w.sum(),
                                means=rng.uniform(-1.0, 1.0, k),
                                scales=rng.uniform(0.5, 2.0, k))
            gaps = []
            for b in widths_b:
                spec, params = oracle.embed_mol_as_pnn(ref, Bounds(-b, b))
                xs = np.linspace(-b, b, 10_000)
                gaps.append(float(np.max(np.abs(
                    pnn.cdf_many(spec, params, xs) - oracle.mol_cdf(ref, xs)))))
            all_decreasing &= all(g1 > g2 for g1, g2 in zip(gaps, gaps[1:]))
            worst_final = max(worst_final, gaps[-1])
        ok = all_decreasing and worst_final < 1e-3
        return ok, (f"gaps strictly decreasing for all {n_refs} refs: "
                    f"{all_decreasing}, max gap at widest support "
                    f"{worst_final:.2e} (limit 1e-03)")

    return _timed(6, "mixture embedding approaches its reference", run)


_RECOVERY_RUNS = (
    # name, n, hidden_dim, blocks, lr, max_epochs, batch, patience, gate
    ("logistic", 5000, 64, 2, 5e-3, 120, 256, 10, 0.05),
    ("gmm2", 5000, 64, 2, 5e-3, 120, 256, 10, 0.05),
    ("two-moons-2d", 10_000, 128, 2, 5e-3, 150, 512, 12, 0.10),
    ("ring-2d", 10_000, 128, 2, 5e-3, 150, 512, 12, 0.10),
)


def run_recovery(name: str):
    """Train one named synthetic benchmark; return (gap, seconds, model,
    gate, detail)."""
    row = next(r for r in _RECOVERY_RUNS if r[0] == name)
    _, n, hidden_dim, blocks, lr, epochs, batch, patience, gate = row
    t0 = time.perf_counter()
    ds = data.make_synthetic(name, n, seed=42)
    m = model_mod.build_model(ds.bounds, pnn_hidden=(16, 16),
                              hidden_dim=hidden_dim, residual_blocks=blocks,
                              dropout=0.0, masking="autoregressive", seed=0)
    cfg = train.TrainConfig(batch_size=batch, learning_rate=lr,
                            patience=patience, max_epochs=epochs, seed=0)
    best, _ = train.fit(m, ds, cfg)
    res = train.evaluate_nll(best, ds.test)
    mask = model_mod.in_bounds_mask(best, ds.test)
    gt = float(-np.mean(ds.gt_log_density(ds.test[mask])))
    seconds = time.perf_counter() - t0
    gap = res.nats - gt
    detail = (f"{name}: NLL {res.nats:.4f} vs truth {gt:.4f}, "
              f"gap {gap:+.4f} (limit {gate}), {seconds:.0f}s")
    return gap, seconds, best, gate, detail


def criterion_density_recovery():
    """Trained models score within their gates of ground truth.

    Returns (CriterionResult, trained models by name).
    """
    models = {}

    def run():
        parts = []
        ok = True
        for row in _RECOVERY_RUNS:
            gap, seconds, best, gate, detail = run_recovery(row[0])
            models[row[0]] = best
            parts.append(detail)
            ok &= abs(gap) <= gate and seconds < 600.0
        return ok, "; ".join(parts)

    return _timed(7, "desk-scale density recovery", run), models


def criterion_joint_normalization(model2d) -> CriterionResult:
    """A trained 2-d joint density integrates to 1 over its box."""

    def run():
        (b1, b2) = model2d.bounds

        def f(X, Y):
            rows = np.stack([X.ravel(), Y.ravel()], axis=1)
            return np.exp(model_mod.log_likelihood_batch(model2d, rows)
                          ).reshape(X.shape)

        integral = oracle.simpson_2d(f, b1.lo, b1.hi, b2.lo, b2.hi, panels=500)
        ok = abs(integral - 1.0) < 1e-3
        return ok, (f"nested quadrature of the joint pdf: {integral:.6f} "
                    f"(limit 1 +/- 1e-03)")

    return _timed(8, "joint density normalization", run)


def criterion_discretized(n_levels: int = 256) -> CriterionResult:
    """Per-coordinate pmf telescopes to 1; bins match quadrature."""

    def run():
        bounds = (Bounds(-3.0, 3.0), Bounds(-2.0, 4.0))
        m = model_mod.build_model(bounds, pnn_hidden=(16, 16), hidden_dim=16,
                                  residual_blocks=1, dropout=0.0, seed=0)
        rng = np.random.default_rng(5)
        m.wm_params.b_out += 0.3 * rng.standard_normal(m.wm_params.b_out.shape)
        x_fixed = np.array([bounds[0].lo + 31.5 * bounds[0].width / n_levels,
                            bounds[1].lo + 100.5 * bounds[1].width / n_levels])
        thetas = model_mod.emit_theta(m, x_fixed)
        worst_sum = 0.0
        worst_bin = 0.0
        for i, b in enumerate(bounds):
            q = b.width / n_levels
            spec = m.pnn_spec(i)
            edges = b.lo + q * np.arange(n_levels + 1)
            edges[-1] = b.hi
            c = pnn.cdf_many(spec, thetas[i], edges)
            pmf = np.diff(c)
            worst_sum = max(worst_sum, abs(float(pmf.sum()) - 1.0))
            for k in (0, 1, n_levels // 2, n_levels - 1):
                quad = oracle.simpson(
                    lambda xs: np.exp(pnn.logpdf_many(spec, thetas[i], xs)),
                    float(edges[k]), float(edges[k + 1]), 2000)
                worst_bin = max(worst_bin, abs(float(pmf[k]) - quad))
        ok = worst_sum < 1e-10 and worst_bin < 1e-8
        return ok, (f"max |sum-1| {worst_sum:.2e} (limit 1e-10), "
                    f"max bin vs quadrature {worst_bin:.2e} (limit 1e-08) "
                    f"over {n_levels} levels per coordinate")

    return _timed(9, "discretized pmf consistency", run)


def criterion_determinism() -> CriterionResult:
    """Identical seed and config reproduce checkpoint and sample bytes."""

    def run():
        def one_round(path):
            ds = data.make_synthetic("two-moons-2d", 400, seed=9)
            m = model_mod.build_model(ds.bounds, pnn_hidden=(8, 8),
                                      hidden_dim=16, residual_blocks=1,
                                      dropout=0.1, seed=3)
            cfg = train.TrainConfig(batch_size=128, learning_rate=2e-3,
                                    patience=3, max_epochs=4, seed=3)
            best, _ = train.fit(m, ds, cfg)
            model_mod.save_checkpoint(best, path)
            xs = sampler.sample_ancestral(best, 64, np.random.default_rng(11))
            sample_path = path + ".samples.csv"
            data.write_csv(sample_path, xs)
            with open(path, "rb") as fh:
                ck = fh.read()
            with open(sample_path, "rb") as fh:
                sm = fh.read()
            return ck, sm

        with tempfile.TemporaryDirectory() as tmp:
            ck1, sm1 = one_round(os.path.join(tmp, "a.nits"))
            ck2, sm2 = one_round(os.path.join(tmp, "b.nits"))
        ok = ck1 == ck2 and sm1 == sm2
        return ok, (f"checkpoint bytes equal: {ck1 == ck2} "
                    f"({len(ck1)} bytes), sample bytes equal: {sm1 == sm2}")

    return _timed(10, "bit-for-bit reproducibility", run)


def run_all(quick: bool = True, on_result=None) -> list:
    """Quick mode: every criterion that needs no full training run.
    Full mode adds the four recovery trainings and the trained-model
    joint quadrature.  on_result, if given, is called with each
    CriterionResult as it completes."""
    results = []

    def push(r):
        results.append(r)
        if on_result is not None:
            on_result(r)

    push(criterion_partition_exactness())
    push(criterion_monotonicity())
    push(criterion_normalization())
    push(criterion_gradients())
    push(criterion_sampling())
    push(criterion_mixture_limit())
    if not quick:
        r7, models = criterion_density_recovery()
        push(r7)
        push(criterion_joint_normalization(models["two-moons-2d"]))
    push(criterion_discretized())
    push(criterion_determinism())
    return results
