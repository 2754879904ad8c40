"""scikit-learn front end."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from nits import oracle
from nits.estimator import NitsDensityEstimator


def _est(**kw):
    kw.setdefault("pnn_hidden", (8, 8))
    kw.setdefault("hidden_dim", 16)
    kw.setdefault("residual_blocks", 1)
    kw.setdefault("learning_rate", 5e-3)
    kw.setdefault("max_epochs", 8)
    kw.setdefault("patience", 8)
    kw.setdefault("random_state", 0)
    return NitsDensityEstimator(**kw)


def _toy(n=400, seed=0):
    return np.random.default_rng(seed).normal(0.0, 1.0, size=(n, 1))


def test_requires_fit_first():
    est = _est()
    with pytest.raises(NotFittedError):
        est.score_samples(_toy(5))
    with pytest.raises(NotFittedError):
        est.sample(3)


def test_fit_score_sample_round_trip():
    X = _toy()
    est = _est().fit(X)
    assert est.n_features_in_ == 1
    lp = est.score_samples(X)
    assert lp.shape == (400,)
    assert np.all(np.isfinite(lp))
    assert est.score(X) == pytest.approx(float(lp.sum()))
    S = est.sample(64, random_state=1)
    assert S.shape == (64, 1)
    assert np.all(np.isfinite(est.score_samples(S)))


def test_out_of_support_scores_minus_inf():
    est = _est().fit(_toy())
    lp = est.score_samples(np.array([[0.0], [1e6]]))
    assert np.isfinite(lp[0])
    assert lp[1] == -np.inf


def test_density_normalizes():
    X = _toy()
    est = _est(max_epochs=3).fit(X)
    b = est.model_.bounds[0]
    val = oracle.simpson(
        lambda xs: np.exp(est.score_samples(xs[:, None])), b.lo, b.hi, 4000)
    assert val == pytest.approx(1.0, abs=1e-8)


def test_feature_count_checked():
    est = _est().fit(_toy())
    with pytest.raises(ValueError):
        est.score_samples(np.zeros((3, 2)))


def test_fit_improves_over_epochs():
    est = _est(max_epochs=10).fit(_toy(800))
    r = est.fit_report_
    assert r.train_nll[-1] < r.train_nll[0]
    assert len(r.val_nll) == r.epochs_run


def test_reproducible_given_random_state():
    X = _toy()
    a = _est(max_epochs=3).fit(X)
    b = _est(max_epochs=3).fit(X)
    assert np.array_equal(a.score_samples(X), b.score_samples(X))
    assert np.array_equal(a.sample(10, random_state=5),
                          b.sample(10, random_state=5))


def test_sklearn_param_protocol():
    est = _est(dropout=0.2)
    params = est.get_params()
    assert params["dropout"] == 0.2
    est.set_params(hidden_dim=32)
    assert est.hidden_dim == 32
    dup = clone(est)
    assert dup.get_params() == est.get_params()


def test_two_dimensional_fit():
    rng = np.random.default_rng(3)
    X = np.column_stack([rng.normal(size=300), rng.normal(2.0, 0.5, 300)])
    est = _est(max_epochs=3).fit(X)
    assert est.n_features_in_ == 2
    assert est.sample(20).shape == (20, 2)
    assert np.all(np.isfinite(est.score_samples(X)))
