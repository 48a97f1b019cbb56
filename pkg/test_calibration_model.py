"""
Tests for the dual-head calibration network
"""

import numpy as np
import pytest

import autodiff_engine as ad
import calibration_model as cm
import training_losses as tl
from autodiff_engine import Mode, Tape
from lab_errors import ContractViolation


@pytest.fixture
def batch():
    return np.random.default_rng(7).normal(size=(6, 2))


def test_init_is_deterministic_per_seed():
    a, b = cm.init_model(2, 2, seed=5), cm.init_model(2, 2, seed=5)
    assert a.equals(b)
    assert not a.equals(cm.init_model(2, 2, seed=6))


def test_init_shapes_and_conventions():
    params = cm.init_model(2, 2, seed=0)
    params.validate()
    assert params.weights["pred.weight"].shape == (64, 2)
    for name in ("enc1.bias", "enc2.bias", "pred.bias", "conf.bias", "bn1.beta", "bn2.beta"):
        assert not params.weights[name].any()
    assert np.all(params.weights["bn1.gamma"] == 1.0)
    assert np.all(params.running["bn2.running_var"] == 1.0)


def test_init_uses_he_scale():
    params = cm.init_model(400, 2, seed=0, hidden_dim=200)
    assert params.weights["enc1.weight"].std() == pytest.approx(np.sqrt(2 / 400), rel=0.05)


def test_init_rejects_bad_dims():
    with pytest.raises(ContractViolation):
        cm.init_model(0, 2, seed=0)
    with pytest.raises(ContractViolation):
        cm.init_model(2, 1, seed=0)


def test_eval_forward_outputs(batch):
    out = cm.forward(cm.init_model(2, 3, seed=1), batch)
    np.testing.assert_allclose(out.class_probs.data.sum(axis=1), 1.0, atol=1e-9)
    conf = out.confidence_values()
    assert conf.shape == (6,)
    assert np.all((conf > 0) & (conf < 1))


def test_eval_forward_is_repeatable(batch):
    params = cm.init_model(2, 2, seed=1)
    first, second = cm.forward(params, batch), cm.forward(params, batch)
    np.testing.assert_array_equal(first.class_probs.data, second.class_probs.data)
    np.testing.assert_array_equal(first.confidence.data, second.confidence.data)


def test_zero_confidence_head_gives_half(batch):
    params = cm.init_model(2, 2, seed=1)
    params.weights["conf.weight"][:] = 0.0
    np.testing.assert_array_equal(cm.forward(params, batch).confidence_values(), np.full(6, 0.5))


def test_train_mode_requirements(batch):
    params = cm.init_model(2, 2, seed=1)
    with pytest.raises(ContractViolation):
        cm.forward(params, batch[:1], Mode.TRAIN, np.random.default_rng(0))
    with pytest.raises(ContractViolation):
        cm.forward(params, np.ones((4, 3)))
    with pytest.raises(ContractViolation):
        cm.forward(params, np.array([[np.nan, 1.0], [0.0, 1.0]]))


def test_train_mode_records_batch_stats(batch):
    params = cm.init_model(2, 2, seed=1, hidden_dim=8)
    out = cm.forward(params, batch, Mode.TRAIN, np.random.default_rng(0))
    assert set(out.batch_stats) == {"bn1", "bn2"}
    mean, var = out.batch_stats["bn1"]
    updated = cm.update_running_stats(params, out)
    np.testing.assert_allclose(updated.running["bn1.running_mean"], 0.1 * mean)
    np.testing.assert_allclose(updated.running["bn1.running_var"], 0.9 + 0.1 * var)
    assert params.running["bn1.running_mean"].sum() == 0.0


def test_parameters_registered_on_tape(batch):
    params = cm.init_model(2, 2, seed=1, hidden_dim=4)
    with Tape() as tape:
        out = cm.forward(params, batch)
        grads = ad.backward(tl.cross_entropy(out.class_probs, np.array([0, 1, 0, 1, 1, 0])))
    assert set(out.param_ids) == set(cm.PARAM_ORDER)
    assert set(grads.by_name()) == set(cm.PARAM_ORDER)
    assert not grads.by_name()["conf.weight"].any()
    assert len(tape.trainable_leaves()) == len(cm.PARAM_ORDER)


@pytest.mark.parametrize("seed", range(20))
def test_model_gradients_match_finite_differences(seed):
    params = cm.init_model(2, 2, seed=seed, hidden_dim=3)
    batch = np.random.default_rng(100 + seed).normal(size=(6, 2))
    labels = np.array([0, 1, 1, 0, 1, 0])
    correct = np.array([True, False, True, True, False, True])

    def loss_value(p):
        out = cm.forward(p, batch)
        return tl.composite_loss(tl.cross_entropy(out.class_probs, labels),
                                 tl.brier_confidence_loss(out.confidence, correct), 1.0)

    with Tape():
        analytic = ad.backward(loss_value(params)).by_name()

    eps = 1e-6
    worst = 0.0
    for name in cm.PARAM_ORDER:
        for index in np.ndindex(params.weights[name].shape):
            plus, minus = params.copy(), params.copy()
            plus.weights[name][index] += eps
            minus.weights[name][index] -= eps
            numeric = (loss_value(plus).item() - loss_value(minus).item()) / (2 * eps)
            a = analytic[name][index]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-6))
    assert worst < 1e-4


def test_uncertainty_is_complement(batch):
    out = cm.forward(cm.init_model(2, 2, seed=1), batch)
    np.testing.assert_allclose(cm.uncertainty(out).data, 1.0 - out.confidence.data)


def test_checkpoint_round_trip(tmp_path, batch):
    params = cm.init_model(2, 2, seed=9, hidden_dim=5)
    path = cm.save_checkpoint(params, tmp_path / "model.json")
    restored = cm.load_checkpoint(path)
    assert restored.equals(params)
    np.testing.assert_array_equal(cm.forward(restored, batch).confidence.data,
                                  cm.forward(params, batch).confidence.data)


def test_checkpoint_rejects_foreign_payload():
    payload = cm.checkpoint_dict(cm.init_model(2, 2, seed=0, hidden_dim=2))
    payload["magic"] = "something-else"
    with pytest.raises(ContractViolation):
        cm.params_from_dict(payload)


def test_trained_model_predicts_in_eval_mode(batch):
    model = cm.TrainedModel(cm.init_model(2, 2, seed=2), "baseline", 2)
    assert model.predict(batch).predictions().shape == (6,)
