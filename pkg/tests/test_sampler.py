"""Bisection inversion and ancestral sampling."""

import math

import numpy as np
import pytest

from nits import model as model_mod, oracle, pnn, sampler
from nits.errors import ConvergenceError
from nits.pnn import Bounds, PnnSpec
from nits.sampler import InversionConfig


def test_inverse_of_known_cdf():
    # logistic cdf has a closed-form quantile to compare against
    cdf = lambda x: 1.0 / (1.0 + math.exp(-x))
    for z in (0.05, 0.3, 0.5, 0.9):
        want = math.log(z / (1.0 - z))
        got = sampler.monotonic_inverse(cdf, z, -30.0, 30.0)
        assert got == pytest.approx(want, abs=1e-8)


def test_inverse_validates_inputs():
    cdf = lambda x: x
    with pytest.raises(ValueError):
        sampler.monotonic_inverse(cdf, -0.1, 0.0, 1.0)
    with pytest.raises(ValueError):
        sampler.monotonic_inverse(cdf, 1.1, 0.0, 1.0)
    with pytest.raises(ValueError):
        sampler.monotonic_inverse(cdf, 0.5, 1.0, 1.0)


def test_inverse_raises_on_iteration_cap():
    cfg = InversionConfig(eps=1e-12, max_iters=5)
    with pytest.raises(ConvergenceError) as err:
        sampler.monotonic_inverse(lambda x: x, 0.5, 0.0, 1.0, cfg)
    a, b = err.value.bracket
    assert 0.0 <= a < b <= 1.0
    assert err.value.iterations == 5


def test_default_eps_tracks_width():
    cfg = InversionConfig()
    assert cfg.resolve_eps(0.0, 1.0) == pytest.approx(1e-10)
    assert cfg.resolve_eps(-3.0, 3.0) == pytest.approx(6e-10)
    assert InversionConfig(eps=1e-4).resolve_eps(0.0, 1.0) == 1e-4


def test_iteration_bound_formula():
    # halving the bracket each step needs ceil(log2(width/eps)) steps
    assert sampler.iteration_bound(0.0, 1.0, 2 ** -20) == 20
    assert sampler.iteration_bound(-3.0, 3.0, 6e-10) == math.ceil(
        math.log2(6.0 / 6e-10))


def test_inverse_round_trips_model_cdf():
    spec = PnnSpec((1, 8, 8, 1), Bounds(-3.0, 3.0))
    params = pnn.random_params(spec, np.random.default_rng(0))
    for z in (0.01, 0.25, 0.5, 0.75, 0.99):
        x = sampler.monotonic_inverse(
            lambda t: pnn.cdf(spec, params, t), z, -3.0, 3.0)
        assert pnn.cdf(spec, params, x) == pytest.approx(z, abs=1e-7)


def test_sample_1d_pushes_to_uniform():
    spec = PnnSpec((1, 8, 8, 1), Bounds(-3.0, 3.0))
    params = pnn.random_params(spec, np.random.default_rng(1))
    rng = np.random.default_rng(10)
    xs = np.array([sampler.sample_1d(spec, params, rng) for _ in range(400)])
    _, p = oracle.ks_statistic(pnn.cdf_many(spec, params, xs))
    assert p > 0.01


def _model_1d(seed=0):
    m = model_mod.build_model((Bounds(-3.0, 3.0),), pnn_hidden=(8, 8),
                              hidden_dim=8, residual_blocks=1, dropout=0.0,
                              seed=seed)
    rng = np.random.default_rng(seed + 100)
    m.wm_params.b_out += 0.5 * rng.standard_normal(m.wm_params.b_out.shape)
    return m


def test_ancestral_1d_equals_scalar_path():
    # same generator state must yield bit-identical draws either way
    m = _model_1d()
    spec = m.pnn_spec(0)
    params = model_mod.emit_theta(m, np.zeros(1))[0]
    xs_vec = sampler.sample_ancestral(m, 50, np.random.default_rng(3))[:, 0]
    rng = np.random.default_rng(3)
    zs = rng.random((50, 1))
    xs_scalar = np.array([
        sampler.monotonic_inverse(lambda t: pnn.cdf(spec, params, t),
                                  float(z), -3.0, 3.0) for z in zs[:, 0]])
    assert np.array_equal(xs_vec, xs_scalar)


def test_ancestral_respects_iteration_bound():
    m = _model_1d(1)
    stats = {}
    xs = sampler.sample_ancestral(m, 200, np.random.default_rng(4),
                                  stats=stats)
    cfg = InversionConfig()
    bound = sampler.iteration_bound(-3.0, 3.0, cfg.resolve_eps(-3.0, 3.0))
    assert max(stats["bisection_iters"]) <= bound + 2
    assert np.all(xs >= -3.0) and np.all(xs <= 3.0)


def test_ancestral_is_deterministic():
    m = _model_1d(2)
    a = sampler.sample_ancestral(m, 64, np.random.default_rng(9))
    b = sampler.sample_ancestral(m, 64, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_ancestral_reads_only_sampled_coordinates():
    # the conditional for coordinate 1 really does move with coordinate 0,
    # yet the draws must not depend on the scratch values sitting in the
    # not-yet-sampled slots: masking enforces causality
    bounds = (Bounds(-3.0, 3.0), Bounds(-3.0, 3.0))
    m = model_mod.build_model(bounds, pnn_hidden=(8, 8), hidden_dim=16,
                              residual_blocks=1, dropout=0.0, seed=5)
    rng = np.random.default_rng(6)
    m.wm_params.w_out += (0.8 * rng.standard_normal(m.wm_params.w_out.shape)
                          * m.masks.m_out)
    th_a = model_mod.emit_theta(m, np.array([-2.0, 0.0]))[1]
    th_b = model_mod.emit_theta(m, np.array([2.0, 0.0]))[1]
    assert not np.allclose(th_a.flatten(), th_b.flatten())
    s1 = sampler.sample_ancestral(m, 32, np.random.default_rng(1),
                                  _init=np.full((32, 2), -2.0))
    s2 = sampler.sample_ancestral(m, 32, np.random.default_rng(1),
                                  _init=np.full((32, 2), 2.0))
    assert np.array_equal(s1, s2)


def test_sampled_histogram_tracks_density():
    # coarse histogram of many draws vs exact bin masses from the cdf
    m = _model_1d(3)
    spec = m.pnn_spec(0)
    params = model_mod.emit_theta(m, np.zeros(1))[0]
    xs = sampler.sample_ancestral(m, 4000, np.random.default_rng(12))[:, 0]
    edges = np.linspace(-3.0, 3.0, 13)
    counts, _ = np.histogram(xs, bins=edges)
    masses = np.diff(pnn.cdf_many(spec, params, edges))
    # multinomial noise: compare within 5 sigma per bin
    for c, mass in zip(counts, masses):
        sigma = math.sqrt(4000 * mass * (1 - mass))
        assert abs(c - 4000 * mass) < 5 * sigma + 1
