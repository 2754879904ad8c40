"""Optimizer, evaluation, and the training loop contract."""

import math

import numpy as np
import pytest

from nits import data, model as model_mod, train
from nits.errors import DomainError
from nits.pnn import Bounds
from nits.train import Adam, TrainConfig, clip_global_norm


def test_adam_single_step_by_hand():
    p = np.array([1.0])
    opt = Adam([p], lr=0.1)
    g = np.array([0.5])
    opt.step([g])
    m_hat = 0.05 / (1 - 0.9)
    v_hat = (0.001 * 0.25) / (1 - 0.999)
    want = 1.0 - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
    assert p[0] == pytest.approx(want, rel=1e-15)


def test_adam_two_steps_tracks_moments():
    p = np.array([0.0])
    opt = Adam([p], lr=0.01, beta1=0.5, beta2=0.9, eps=1e-8)
    m = v = 0.0
    x = 0.0
    for t, g in enumerate((1.0, -2.0), start=1):
        opt.step([np.array([g])])
        m = 0.5 * m + 0.5 * g
        v = 0.9 * v + 0.1 * g * g
        x -= 0.01 * (m / (1 - 0.5 ** t)) / (math.sqrt(v / (1 - 0.9 ** t)) + 1e-8)
        assert p[0] == pytest.approx(x, rel=1e-14)


def test_adam_updates_in_place():
    p = np.ones(3)
    ref = p
    Adam([p], lr=0.5).step([np.ones(3)])
    assert ref is p and not np.allclose(p, 1.0)


def test_clip_global_norm():
    a = np.array([3.0, 0.0])
    b = np.array([0.0, 4.0])
    total = clip_global_norm([a, b], max_norm=2.5)
    assert total == pytest.approx(5.0)
    assert math.sqrt(np.sum(a * a) + np.sum(b * b)) == pytest.approx(2.5)
    # under the cap nothing changes
    c = np.array([0.3])
    clip_global_norm([c], max_norm=10.0)
    assert c[0] == 0.3


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(val_fraction=1.0)


def _model_1d(seed=0):
    return model_mod.build_model((Bounds(-3.0, 3.0),), pnn_hidden=(8,),
                                 hidden_dim=16, residual_blocks=1,
                                 dropout=0.0, seed=seed)


def test_evaluate_nll_excludes_out_of_bounds():
    m = _model_1d()
    res = train.evaluate_nll(m, np.array([[0.0], [10.0], [-5.0], [1.0]]))
    assert res.n_evaluated == 2
    assert res.n_excluded == 2
    assert res.bits_per_dim == pytest.approx(res.nats / math.log(2.0))
    with pytest.raises(DomainError):
        train.evaluate_nll(m, np.array([[10.0]]))


def _toy_dataset(n=512, seed=0, ratios=(0.8, 0.2, 0.0)):
    rng = np.random.default_rng(seed)
    x = np.clip(rng.normal(0.5, 0.8, size=(n, 1)), -2.8, 2.8)
    tr, va, te = data.make_splits(n, seed, ratios)
    return data.Dataset(x=x, bounds=(Bounds(-3.0, 3.0),), train_idx=tr,
                        val_idx=va, test_idx=te, provenance="test")


def test_fit_reduces_nll_and_reports():
    ds = _toy_dataset()
    cfg = TrainConfig(batch_size=128, learning_rate=5e-3, patience=30,
                      max_epochs=30, seed=1)
    best, report = train.fit(_model_1d(), ds, cfg)
    assert report.epochs_run == 30
    assert report.train_nll[-1] < report.train_nll[0] - 0.05
    assert report.best_val_nll <= report.val_nll[0]
    assert report.nonfinite_batches == 0
    assert not report.aborted_nonfinite
    assert report.wall_clock > 0
    # the returned model carries the best-epoch parameters
    val = ds.x[ds.val_idx]
    assert train.evaluate_nll(best, val).nats == pytest.approx(
        report.best_val_nll, rel=1e-12)


def test_fit_is_deterministic():
    ds = _toy_dataset()
    cfg = TrainConfig(batch_size=64, learning_rate=2e-3, patience=5,
                      max_epochs=6, seed=7)
    m1, r1 = train.fit(_model_1d(), ds, cfg)
    m2, r2 = train.fit(_model_1d(), ds, cfg)
    assert r1.train_nll == r2.train_nll
    assert r1.val_nll == r2.val_nll
    for a, b in zip(m1.wm_params.arrays(), m2.wm_params.arrays()):
        assert np.array_equal(a, b)


def test_fit_leaves_input_model_untouched():
    ds = _toy_dataset()
    m = _model_1d()
    before = [a.copy() for a in m.wm_params.arrays()]
    train.fit(m, ds, TrainConfig(batch_size=128, learning_rate=1e-2,
                                 patience=2, max_epochs=3, seed=0))
    for a, b in zip(m.wm_params.arrays(), before):
        assert np.array_equal(a, b)


def test_fit_halts_exactly_patience_after_best():
    ds = _toy_dataset()
    cfg = TrainConfig(batch_size=64, learning_rate=1e-2, patience=3,
                      max_epochs=200, seed=3)
    _, report = train.fit(_model_1d(), ds, cfg)
    assert report.epochs_run < 200  # actually stopped early
    assert report.epochs_run == report.best_epoch + cfg.patience + 1
    # and the best epoch really is the argmin of the recorded curve
    assert report.best_epoch == int(np.argmin(report.val_nll))


def test_fit_carves_validation_when_missing():
    ds = _toy_dataset(ratios=(1.0, 0.0, 0.0))
    assert len(ds.val_idx) == 0
    cfg = TrainConfig(batch_size=128, learning_rate=1e-3, patience=2,
                      max_epochs=2, val_fraction=0.25, seed=0)
    _, report = train.fit(_model_1d(), ds, cfg)
    assert len(report.val_nll) == 2
    assert all(math.isfinite(v) for v in report.val_nll)


def test_fit_progress_callback():
    ds = _toy_dataset()
    seen = []
    cfg = TrainConfig(batch_size=128, learning_rate=1e-3, patience=4,
                      max_epochs=4, seed=0)
    _, report = train.fit(_model_1d(), ds, cfg,
                          progress=lambda e, tr, va: seen.append((e, tr, va)))
    assert [s[0] for s in seen] == list(range(report.epochs_run))
    assert [s[1] for s in seen] == report.train_nll
    assert [s[2] for s in seen] == report.val_nll


def test_fit_rejects_out_of_bounds_training_rows():
    ds = _toy_dataset()
    ds.x[0] = 9.9
    with pytest.raises(DomainError):
        train.fit(_model_1d(), ds, TrainConfig(max_epochs=1))


def test_report_lines_round_trip_floats():
    ds = _toy_dataset()
    _, report = train.fit(_model_1d(), ds,
                          TrainConfig(batch_size=256, learning_rate=1e-3,
                                      patience=2, max_epochs=2, seed=0))
    lines = report.to_lines()
    fields = dict(l.split("=", 1) for l in lines if "=" in l)
    assert float(fields["best_val_nll"]) == report.best_val_nll
    assert int(fields["epochs_run"]) == 2
