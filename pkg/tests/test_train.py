import math

import numpy as np
import pytest

from ctscan_tl.errors import ConfigError, TrainingError
from ctscan_tl.model import HeadConfig, Model, StubBackbone, build_head
from ctscan_tl.train import (ArraySource, EpochRecord, OptimizerConfig, ReduceLROnPlateau,
                             TrainingConfig, TrainingHistory, adam_step,
                             categorical_crossentropy, crossentropy_grad,
                             early_stopping_decision, evaluate_loss, fit, one_hot,
                             reduce_lr_on_plateau)
from ctscan_tl.transform import AugmentationPolicy


def test_perfect_prediction_has_near_zero_loss():
    y = one_hot([0, 2], 3)
    assert categorical_crossentropy(y, y) == pytest.approx(0.0, abs=1e-12)


def test_uniform_four_class_loss_is_ln4():
    probs = np.full((5, 4), 0.25)
    assert abs(categorical_crossentropy(probs, one_hot([0, 1, 2, 3, 0], 4)) - math.log(4)) < 1e-9


def test_weighted_loss_is_weighted_mean():
    probs = np.array([[0.5, 0.5], [0.25, 0.75]])
    y = one_hot([0, 0], 2)
    expected = (1 * math.log(2) + 3 * math.log(4)) / 4
    assert categorical_crossentropy(probs, y, [1.0, 3.0]) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(1.21301, abs=1e-5)


def test_loss_clips_zero_probabilities():
    loss = categorical_crossentropy(np.array([[0.0, 1.0]]), one_hot([0], 2))
    assert loss == pytest.approx(-math.log(1e-7))


def test_crossentropy_grad_matches_finite_difference():
    rng = np.random.default_rng(0)
    probs = rng.dirichlet(np.ones(3), size=4)
    y = one_hot([0, 1, 2, 1], 3)
    w = np.array([1.0, 2.0, 0.5, 1.5])
    g = crossentropy_grad(probs, y, w)
    eps = 1e-7
    for i in range(4):
        for j in range(3):
            up, down = probs.copy(), probs.copy()
            up[i, j] += eps
            down[i, j] -= eps
            fd = (categorical_crossentropy(up, y, w) - categorical_crossentropy(down, y, w)) / (2 * eps)
            assert g[i, j] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_adam_scalar_step():
    params, state = adam_step({"p": np.array(1.0)}, {"p": np.array(1.0)}, {},
                              OptimizerConfig(), 1)
    assert abs(params["p"] - 1.0 - (-0.000999999)) < 1e-9
    assert abs(params["p"] - 0.999000000) < 1e-9
    m, v = state["p"]
    assert m == pytest.approx(0.1) and v == pytest.approx(0.001)


def test_adam_rejects_non_finite_gradient():
    with pytest.raises(TrainingError, match="w"):
        adam_step({"w": np.zeros(2)}, {"w": np.array([1.0, np.nan])}, {}, OptimizerConfig(), 1)


def test_adam_is_pure():
    p = {"w": np.ones(3)}
    g = {"w": np.full(3, 0.5)}
    adam_step(p, g, {}, OptimizerConfig(), 1)
    assert np.array_equal(p["w"], np.ones(3))


def test_early_stopping_oracle():
    assert early_stopping_decision([1.0, 0.9, 0.95, 0.96], patience=2) == (True, 2)
    assert early_stopping_decision([1.0, 0.9, 0.95], patience=2) == (False, 2)


def test_early_stopping_min_delta():
    # 0.99995 is not an improvement by more than 1e-4
    assert early_stopping_decision([1.0, 0.99995, 0.99994], patience=2) == (True, 1)


def test_early_stopping_accuracy_mode():
    assert early_stopping_decision([0.5, 0.7, 0.6, 0.65], 2, mode="max") == (True, 2)


def test_plateau_reduction_and_clamp():
    assert reduce_lr_on_plateau([1.0, 1.0, 1.0, 1.0], 0.001) == pytest.approx(0.0005)
    assert reduce_lr_on_plateau([1.0, 1.0, 1.0], 0.001) == 0.001
    assert reduce_lr_on_plateau([1.0, 1.0, 1.0, 1.0], 1.5e-6) == 1e-6


def test_plateau_tracker_over_many_epochs():
    tracker = ReduceLROnPlateau()
    lr = 0.001
    seen = []
    for _ in range(40):
        lr = tracker.update(1.0, lr)
        seen.append(lr)
    assert all(b <= a for a, b in zip(seen, seen[1:]))
    assert seen[3] == pytest.approx(0.0005)
    assert seen[-1] == 1e-6


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainingConfig(max_epochs=0)
    with pytest.raises(ConfigError):
        TrainingConfig.from_dict({"callbacks": {"early_stopping": {"monitor": "val_f1"}}})
    with pytest.raises(ConfigError):
        TrainingConfig.from_dict({"learning_rate": 0.1})


def test_history_roundtrip(tmp_path):
    h = TrainingHistory([EpochRecord(1, 0.7, 0.5, 0.6, 0.55, 1e-3),
                         EpochRecord(2, 0.5, 0.8, 0.65, 0.6, 1e-3)])
    path = tmp_path / "history.json"
    path.write_text(h.to_json())
    loaded = TrainingHistory.load(path)
    assert loaded.records == h.records
    assert (loaded.stop_epoch, loaded.best_epoch) == (2, 1)


# -- training loop on in-memory data -------------------------------------------------

def toy_data(n=24, seed=0, size=16):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    base = np.where(labels[:, None, None, None] == 1, 0.75, 0.25)
    images = np.clip(base + rng.normal(0, 0.05, (n, size, size, 3)), 0, 1)
    return images, labels


def toy_model(seed=0, size=16, dropout=0.5):
    backbone = StubBackbone((size, size, 3), seed=seed)
    head = build_head(backbone.output_shape, HeadConfig((16, 8), dropout, 1e-4, 2), seed=seed)
    return Model(backbone, head, freeze=True)


def run_fit(max_epochs=3, seed=0, **kw):
    x, y = toy_data()
    vx, vy = toy_data(12, seed=1)
    config = TrainingConfig(max_epochs=max_epochs, batch_size=8, seed=seed, **kw)
    return fit(toy_model(), ArraySource(x, y), ArraySource(vx, vy),
               AugmentationPolicy(horizontal_flip=True), config, ["a", "b"])


def test_single_epoch_history():
    result = run_fit(max_epochs=1)
    assert len(result.history.records) == 1
    assert result.history.records[0].epoch == 1


def test_learning_rate_never_increases():
    lrs = run_fit(max_epochs=12).history.series("lr")
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


def test_restore_best_weights_reproduce_best_val_loss():
    result = run_fit(max_epochs=8)
    h = result.history
    vx, vy = toy_data(12, seed=1)
    val_loss, _ = evaluate_loss(result.model, ArraySource(vx, vy), batch_size=8)
    assert val_loss == pytest.approx(h.records[h.best_epoch - 1].val_loss, rel=1e-12)


def test_training_is_deterministic():
    a = run_fit(max_epochs=3, seed=5)
    b = run_fit(max_epochs=3, seed=5)
    assert a.history.to_json() == b.history.to_json()
    for k, v in a.final_weights.items():
        assert np.array_equal(v, b.final_weights[k])


def test_training_reduces_loss():
    h = run_fit(max_epochs=10).history
    assert min(h.series("train_loss")) < h.records[0].train_loss


def test_class_weights_must_cover_classes():
    with pytest.raises(ConfigError):
        run_fit(class_weights={"a": 1.0})


def test_non_finite_loss_raises():
    x, y = toy_data()
    x[0, 0, 0, 0] = np.nan
    config = TrainingConfig(max_epochs=1, batch_size=24)
    with pytest.raises(TrainingError):
        fit(toy_model(), ArraySource(x, y), ArraySource(*toy_data(4)), AugmentationPolicy(),
            config, ["a", "b"])


def test_kfold_duplication_matches_weight_scaling():
    x, y = toy_data(20)
    model = toy_model()
    weights = np.where(y == 1, 1.3, 0.8)
    base, _ = evaluate_loss(model, ArraySource(x, y), weights)
    k = 3
    dup = np.concatenate([np.flatnonzero(y == 0)] + [np.flatnonzero(y == 1)] * k)
    dup_w = np.where(y[dup] == 1, 1.3 / k, 0.8)
    loss, _ = evaluate_loss(model, ArraySource(x[dup], y[dup]), dup_w)
    assert abs(loss - base) / base < 1e-5


def test_save_run_layout(tmp_path):
    x, y = toy_data()
    config = TrainingConfig(max_epochs=2, batch_size=8)
    fit(toy_model(), ArraySource(x, y), ArraySource(*toy_data(6, 2)), AugmentationPolicy(),
        config, ["a", "b"], run_dir=tmp_path / "run")
    assert (tmp_path / "run" / "history.json").is_file()
    for name in ("model-best", "model-final"):
        assert (tmp_path / "run" / name / "weights.npz").is_file()
        assert (tmp_path / "run" / name / "architecture.json").is_file()
