"""Monotone scalar network: shapes, transforms, exact normalization.

Frozen constants below were cross-checked against adaptive quadrature
and finite differences when first recorded; they guard against silent
numerical drift.
"""

import numpy as np
import pytest

from nits import oracle, pnn
from nits.errors import DomainError
from nits.pnn import Bounds, PnnParams, PnnSpec

SPEC = PnnSpec((1, 8, 8, 1), Bounds(-3.0, 3.0))


def _params(seed):
    return pnn.random_params(SPEC, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# specs, bounds, params


def test_bounds_validation():
    with pytest.raises(ValueError):
        Bounds(1.0, 1.0)
    with pytest.raises(ValueError):
        Bounds(2.0, -2.0)
    with pytest.raises(ValueError):
        Bounds(0.0, np.inf)
    b = Bounds(-1.5, 2.5)
    assert b.width == pytest.approx(4.0)
    assert b.contains(0.0) and not b.contains(2.500001)


def test_spec_validation():
    with pytest.raises(ValueError):
        PnnSpec((1, 8), Bounds(0, 1))  # too few layers
    with pytest.raises(ValueError):
        PnnSpec((2, 8, 1), Bounds(0, 1))  # scalar in
    with pytest.raises(ValueError):
        PnnSpec((1, 8, 3), Bounds(0, 1))  # scalar out
    spec = PnnSpec((1, 4, 4, 1), Bounds(0, 1))
    # per layer: 1*4 + 4, 4*4 + 4, 4*1 (no final bias)
    assert spec.n_params == 8 + 20 + 4
    assert spec.n_layers == 3


def test_params_shape_checks():
    with pytest.raises(ValueError):
        PnnParams(weights=(np.zeros((1, 4)), np.zeros((4, 1))),
                  biases=(np.zeros(3), None))
    with pytest.raises(ValueError):
        PnnParams(weights=(np.zeros((1, 4)), np.zeros((4, 1))),
                  biases=(np.zeros(4), np.zeros(1)))
    with pytest.raises(ValueError):
        PnnParams(weights=(np.full((1, 4), np.nan), np.zeros((4, 1))),
                  biases=(np.zeros(4), None))


def test_params_are_immutable_and_copied():
    w0 = np.zeros((1, 4))
    p = PnnParams(weights=(w0, np.zeros((4, 1))), biases=(np.zeros(4), None))
    w0[0, 0] = 99.0
    assert p.weights[0][0, 0] == 0.0
    with pytest.raises(ValueError):
        p.weights[0][0, 0] = 1.0


def test_flatten_from_flat_round_trip():
    for seed in range(5):
        p = _params(seed)
        q = PnnParams.from_flat(SPEC, p.flatten())
        for a, b in zip(p.weights, q.weights):
            assert np.array_equal(a, b)


def test_from_flat_rejects_wrong_length():
    with pytest.raises(ValueError):
        PnnParams.from_flat(SPEC, np.zeros(SPEC.n_params + 1))


# ---------------------------------------------------------------------------
# transforms


def test_transform_weights_positive_and_clamped():
    w = pnn.transform_weights(np.array([[0.0, 1.0, -1.0]]))
    assert np.allclose(w, [[1.0, np.exp(-1.0), np.e]])
    before = pnn.diagnostics.weight_clamps
    w = pnn.transform_weights(np.array([[800.0, -800.0]]))
    assert w[0, 0] == pnn.WEIGHT_CLAMP_LO
    assert w[0, 1] == pnn.WEIGHT_CLAMP_HI
    assert pnn.diagnostics.weight_clamps == before + 2


def test_transform_bias_convention():
    raw_a = np.array([[0.0], [1.0]])
    raw_b = np.array([2.0])
    # -mean(exp(-raw_A)) * raw_b
    want = -0.5 * (1.0 + np.exp(-1.0)) * 2.0
    assert pnn.transform_bias(raw_b, raw_a)[0] == pytest.approx(want)


def test_transform_final_is_softmax():
    s = pnn.transform_final(np.array([0.0, 1.0, -2.0]))
    assert s.sum() == pytest.approx(1.0)
    assert np.all(s > 0)
    # invariant under a constant shift
    s2 = pnn.transform_final(np.array([10.0, 11.0, 8.0]))
    assert np.allclose(s, s2)


def test_final_head_shift_invariance_end_to_end():
    p = _params(3)
    shifted = PnnParams(
        weights=(p.weights[0], p.weights[1], p.weights[2] + 7.5),
        biases=p.biases)
    xs = np.linspace(-3, 3, 50)
    assert np.allclose(pnn.logpdf_many(SPEC, p, xs),
                       pnn.logpdf_many(SPEC, shifted, xs), atol=1e-12)


# ---------------------------------------------------------------------------
# forward evaluation: frozen regression values


def test_forward_golden_values():
    p = _params(0)
    ev = pnn.forward(SPEC, p, 0.7)
    assert ev.f_value == pytest.approx(0.6909637574521942, rel=1e-14)
    assert ev.dfdx == pytest.approx(0.025799946787535596, rel=1e-14)
    assert pnn.partition(SPEC, p) == pytest.approx(0.17126989895427636, rel=1e-14)
    assert pnn.cdf(SPEC, p, 0.7) == pytest.approx(0.8055451466582766, rel=1e-14)
    assert pnn.log_pdf(SPEC, p, 0.7) == pytest.approx(-1.8928682392381602, rel=1e-13)


def test_partition_matches_quadrature():
    for seed in range(10):
        p = _params(seed)
        z = pnn.partition(SPEC, p)
        zq = oracle.adaptive_simpson(
            lambda xs: pnn.dfdx_many(SPEC, p, xs), -3.0, 3.0)
        assert z == pytest.approx(zq, rel=1e-9)


def test_dfdx_matches_finite_difference():
    for seed in range(10):
        p = _params(seed)
        for x in (-2.0, 0.3, 2.7):
            fd = oracle.central_diff(
                lambda t: pnn.forward(SPEC, p, t).f_value, x, h=1e-6)
            assert pnn.forward(SPEC, p, x).dfdx == pytest.approx(fd, rel=1e-6)


def test_monotone_everywhere():
    rng = np.random.default_rng(11)
    for seed in range(30):
        p = _params(seed)
        xs = rng.uniform(-3.0, 3.0, 200)
        assert np.all(pnn.dfdx_many(SPEC, p, xs) > 0.0)


def test_cdf_endpoints_exact():
    for seed in range(20):
        p = _params(seed)
        assert pnn.cdf(SPEC, p, -3.0) == 0.0
        assert pnn.cdf(SPEC, p, 3.0) == 1.0


def test_cdf_monotone_in_x():
    p = _params(7)
    xs = np.linspace(-3, 3, 500)
    assert np.all(np.diff(pnn.cdf_many(SPEC, p, xs)) > 0)


def test_pdf_integrates_to_one():
    for seed in range(5):
        p = _params(seed)
        val = oracle.simpson(
            lambda xs: np.exp(pnn.logpdf_many(SPEC, p, xs)), -3.0, 3.0, 4000)
        assert val == pytest.approx(1.0, abs=1e-8)


def test_pdf_is_cdf_derivative():
    p = _params(4)
    for x in (-1.2, 0.0, 1.8):
        fd = oracle.central_diff(lambda t: pnn.cdf(SPEC, p, t), x, h=1e-6)
        assert np.exp(pnn.log_pdf(SPEC, p, x)) == pytest.approx(fd, rel=1e-6)


def test_scalar_and_batched_agree():
    p = _params(9)
    xs = np.linspace(-2.9, 2.9, 17)
    c = pnn.cdf_many(SPEC, p, xs)
    lp = pnn.logpdf_many(SPEC, p, xs)
    for i, x in enumerate(xs):
        assert c[i] == pytest.approx(pnn.cdf(SPEC, p, float(x)), rel=1e-14)
        assert lp[i] == pytest.approx(pnn.log_pdf(SPEC, p, float(x)), rel=1e-13)


def test_domain_errors():
    p = _params(0)
    with pytest.raises(DomainError):
        pnn.cdf(SPEC, p, 3.0001)
    with pytest.raises(DomainError):
        pnn.log_pdf(SPEC, p, -3.0001)
    with pytest.raises(DomainError):
        pnn.cdf(SPEC, p, np.nan)


def test_floored_log_counts():
    before = pnn.diagnostics.partition_floors
    out = pnn.floored_log(np.array([1.0, 0.0, 1e-310]))
    assert out[0] == 0.0
    assert out[1] == out[2] == np.log(pnn.PARTITION_FLOOR)
    assert pnn.diagnostics.partition_floors == before + 2


# ---------------------------------------------------------------------------
# stacked kernel consistency


def test_split_stack_layout():
    theta = np.arange(SPEC.n_params, dtype=np.float64)[None, :]
    layers = pnn.split_stack(SPEC.layer_widths, theta)
    p = PnnParams.from_flat(SPEC, theta[0])
    for (w, b), pw, pb in zip(layers, p.weights, p.biases):
        assert np.array_equal(w[0], pw)
        if pb is None:
            assert b is None
        else:
            assert np.array_equal(b[0], pb)


def test_stack_batches_independent_items():
    # evaluating two parameter vectors in one stack matches one-at-a-time
    p1, p2 = _params(1), _params(2)
    theta = np.stack([p1.flatten(), p2.flatten()])
    xs = np.array([0.5, -1.0])
    lo = np.full(2, -3.0)
    hi = np.full(2, 3.0)
    out = pnn.logpdf_stack(SPEC.layer_widths, theta, xs, lo, hi)
    assert out[0] == pytest.approx(pnn.log_pdf(SPEC, p1, 0.5), rel=1e-14)
    assert out[1] == pytest.approx(pnn.log_pdf(SPEC, p2, -1.0), rel=1e-14)


# ---------------------------------------------------------------------------
# initializers


def test_random_params_well_behaved():
    for seed in range(10):
        p = _params(seed)
        z = pnn.partition(SPEC, p)
        assert np.isfinite(z) and z > 0
        assert np.all(np.isfinite(pnn.logpdf_many(SPEC, p, np.linspace(-3, 3, 50))))


def test_reference_params_mild_density():
    # the deterministic init spreads mass across the support instead of
    # spiking, so early training sees every region
    for b in (Bounds(-3, 3), Bounds(0, 10), Bounds(-0.5, 0.5)):
        spec = PnnSpec((1, 16, 16, 1), b)
        p = pnn.reference_params(spec)
        xs = np.linspace(b.lo, b.hi, 200)
        dens = np.exp(pnn.logpdf_many(spec, p, xs))
        assert np.all(dens > 0)
        assert dens.max() / dens.min() < 50.0
