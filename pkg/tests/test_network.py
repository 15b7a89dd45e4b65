import numpy as np
import pytest

from riskloop.network import (
    InvalidTraceError,
    Model,
    ModelConfig,
    ShapeError,
    TrainingError,
    backward,
    forward,
    gradient_check,
    init_model,
    load_model,
    loss,
    save_model,
    train,
)

SMALL = ModelConfig(input_dim=12, hidden1=5, hidden2=4, seed=0)


def separable_toy_set(seed: int = 0):
    """Two well-separated Gaussian blobs in 12 dims; verified linearly
    separable by the logistic-regression oracle below before any training
    assertion relies on it."""
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(-2.0, 0.4, (4, 12)), rng.normal(2.0, 0.4, (4, 12))])
    y = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    return x, y


def test_toy_set_is_separable_oracle():
    from sklearn.linear_model import LogisticRegression

    x, y = separable_toy_set()
    assert LogisticRegression(max_iter=1000).fit(x, y).score(x, y) == 1.0


class TestInit:
    def test_deterministic(self):
        a, b = init_model(SMALL), init_model(SMALL)
        for (_, pa), (_, pb) in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa, pb)
        assert a.rng_state == b.rng_state

    def test_shapes(self):
        m = init_model(ModelConfig(input_dim=4950, hidden1=64, hidden2=32))
        assert m.w1.shape == (64, 4950)
        assert m.w2.shape == (32, 64)
        assert m.w_out.shape == (2, 32)
        assert m.w_attn.shape == (4950, 4950)

    def test_diagonal_gate_shape(self):
        m = init_model(ModelConfig(input_dim=20, hidden1=4, hidden2=3, attention="diagonal"))
        assert m.w_attn.shape == (20,)

    def test_initial_probs_normalized(self):
        m = init_model(SMALL)
        x = np.random.default_rng(1).standard_normal((7, 12))
        probs = forward(m, x, "eval").probs
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig(hidden1=0)
        with pytest.raises(ValueError):
            ModelConfig(dropout_rate=1.0)
        with pytest.raises(ValueError):
            ModelConfig(attention="banded")


class TestForward:
    def test_probs_sum_to_one_both_modes(self):
        m = init_model(SMALL)
        x = np.random.default_rng(2).standard_normal((5, 12))
        rng = np.random.default_rng(0)
        for mode in ("eval", "train"):
            probs = forward(m, x, mode, rng=rng).probs
            np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_gate_strictly_inside_unit_interval(self):
        m = init_model(SMALL)
        x = np.random.default_rng(3).standard_normal((5, 12)) * 100.0
        a = forward(m, x, "eval").a
        assert np.all(a > 0.0) and np.all(a < 1.0)

    def test_zero_dropout_is_identity(self):
        cfg = ModelConfig(input_dim=12, hidden1=5, hidden2=4, dropout_rate=0.0)
        m = init_model(cfg)
        x = np.random.default_rng(4).standard_normal((3, 12))
        trace = forward(m, x, "train")
        assert trace.mask1 is None and trace.mask2 is None
        np.testing.assert_array_equal(trace.h1, trace.relu1)

    def test_zero_logits_give_uniform_probs(self):
        m = init_model(SMALL)
        m.w_out[:] = 0.0
        m.b_out[:] = 0.0
        x = np.random.default_rng(5).standard_normal((4, 12))
        probs = forward(m, x, "eval").probs
        np.testing.assert_allclose(probs, 0.5, atol=1e-12)

    def test_shape_mismatch(self):
        m = init_model(SMALL)
        with pytest.raises(ShapeError):
            forward(m, np.zeros((3, 11)), "eval")

    def test_eval_purity(self):
        m = init_model(SMALL)
        x = np.random.default_rng(6).standard_normal((3, 12))
        before = save_bytes(m)
        p1 = forward(m, x, "eval").probs
        p2 = forward(m, x, "eval").probs
        np.testing.assert_array_equal(p1, p2)
        assert save_bytes(m) == before

    def test_batch_of_one_in_train_mode(self):
        cfg = ModelConfig(input_dim=12, hidden1=5, hidden2=4, dropout_rate=0.0)
        m = init_model(cfg)
        x = np.random.default_rng(7).standard_normal((1, 12))
        trace = forward(m, x, "train")
        assert np.all(np.isfinite(trace.probs))

    def test_train_mode_does_not_mutate_model(self):
        m = init_model(ModelConfig(input_dim=12, hidden1=5, hidden2=4, dropout_rate=0.0))
        x = np.random.default_rng(8).standard_normal((3, 12))
        before = save_bytes(m)
        forward(m, x, "train")
        assert save_bytes(m) == before


def save_bytes(model: Model) -> bytes:
    import io
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "m.ckpt"
        save_model(model, path)
        return path.read_bytes()


class TestLoss:
    def test_uniform_prediction(self):
        assert loss(np.array([[0.5, 0.5]]), [1]) == pytest.approx(np.log(2.0))

    def test_perfect_prediction(self):
        assert loss(np.array([[0.0, 1.0]]), [1]) == pytest.approx(0.0, abs=1e-9)

    def test_mean_over_samples(self):
        probs = np.array([[0.5, 0.5], [0.0, 1.0]])
        assert loss(probs, [1, 1]) == pytest.approx(np.log(2.0) / 2.0)

    def test_floor_prevents_inf(self):
        assert np.isfinite(loss(np.array([[1.0, 0.0]]), [1]))

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            loss(np.array([[0.5, 0.5]]), [1, 0])


class TestBackward:
    def test_shapes_match_parameters(self):
        m = init_model(SMALL)
        x = np.random.default_rng(9).standard_normal((3, 12))
        rng = np.random.default_rng(1)
        grads = backward(forward(m, x, "train", rng=rng), [0, 1, 0])
        for name, p in m.parameters():
            assert grads[name].shape == p.shape

    def test_eval_trace_rejected(self):
        m = init_model(SMALL)
        x = np.random.default_rng(10).standard_normal((3, 12))
        with pytest.raises(InvalidTraceError):
            backward(forward(m, x, "eval"), [0, 1, 0])

    def test_duplicated_sample_gradient_invariance(self):
        """Mean loss makes gradients of [s] and [s, s] identical."""
        cfg = ModelConfig(input_dim=12, hidden1=5, hidden2=4, dropout_rate=0.0)
        m = init_model(cfg)
        x = np.random.default_rng(11).standard_normal((1, 12))
        g1 = backward(forward(m, x, "train"), [1])
        g2 = backward(forward(m, np.vstack([x, x]), "train"), [1, 1])
        for name in g1:
            np.testing.assert_allclose(g1[name], g2[name], atol=1e-12)

    def test_output_bias_gradient_hand_computed(self):
        """With zero output layer, probs are exactly [.5, .5] per sample, so
        grad b_out = mean(probs - onehot): balanced labels cancel to zero,
        a single label-1 sample gives (.5, -.5)."""
        cfg = ModelConfig(input_dim=12, hidden1=5, hidden2=4, dropout_rate=0.0)
        m = init_model(cfg)
        m.w_out[:] = 0.0
        m.b_out[:] = 0.0
        x = np.random.default_rng(12).standard_normal((2, 12))
        g = backward(forward(m, x, "train"), [0, 1])
        np.testing.assert_allclose(g["b_out"], [0.0, 0.0], atol=1e-12)
        g_single = backward(forward(m, x[:1], "train"), [1])
        np.testing.assert_allclose(g_single["b_out"], [0.5, -0.5], atol=1e-12)


class TestGradientCheck:
    def test_reference_config_under_tolerance(self):
        assert gradient_check(SMALL, seed=1, batch=3) < 1e-4

    def test_deterministic(self):
        assert gradient_check(SMALL, seed=5) == gradient_check(SMALL, seed=5)

    def test_diagonal_variant(self):
        cfg = ModelConfig(input_dim=12, hidden1=5, hidden2=4, attention="diagonal")
        assert gradient_check(cfg, seed=2) < 1e-4

    def test_pinned_instance_at_1e4_step(self):
        assert gradient_check(SMALL, seed=3, batch=3, step=1e-4) < 1e-4


class TestTrain:
    def test_separable_toy_reaches_full_accuracy(self):
        x, y = separable_toy_set()
        cfg = ModelConfig(
            input_dim=12, hidden1=5, hidden2=4, dropout_rate=0.1, epochs=200,
            learning_rate=5e-3, seed=3,
        )
        m, history = train(init_model(cfg), x, y, cfg)
        probs = forward(m, x, "eval").probs
        assert float(np.mean(np.argmax(probs, axis=1) == y)) == 1.0
        assert len(history) == 200

    def test_zero_epochs_is_identity(self):
        cfg = ModelConfig(input_dim=12, hidden1=5, hidden2=4, epochs=0)
        m = init_model(cfg)
        m2, history = train(m, np.zeros((2, 12)), [0, 1], cfg)
        assert history == []
        assert save_bytes(m) == save_bytes(m2)

    def test_deterministic_history(self):
        x, y = separable_toy_set(1)
        cfg = ModelConfig(input_dim=12, hidden1=5, hidden2=4, dropout_rate=0.3, epochs=30, seed=4)
        _, h1 = train(init_model(cfg), x, y, cfg)
        _, h2 = train(init_model(cfg), x, y, cfg)
        assert h1 == h2

    def test_loss_decreases_across_seeds(self):
        x, y = separable_toy_set()
        wins = 0
        for seed in range(10):
            cfg = ModelConfig(
                input_dim=12, hidden1=5, hidden2=4, dropout_rate=0.1, epochs=200,
                learning_rate=5e-3, seed=seed,
            )
            _, history = train(init_model(cfg), x, y, cfg)
            wins += history[-1] < history[0]
        assert wins >= 9

    def test_invalid_labels(self):
        cfg = ModelConfig(input_dim=12, hidden1=5, hidden2=4)
        m = init_model(cfg)
        with pytest.raises(TrainingError):
            train(m, np.zeros((2, 12)), [0, 2], cfg)
        with pytest.raises(TrainingError):
            train(m, np.zeros((0, 12)), [], cfg)

    def test_sgd_optimizer_runs(self):
        x, y = separable_toy_set()
        cfg = ModelConfig(
            input_dim=12, hidden1=5, hidden2=4, dropout_rate=0.0, epochs=50,
            optimizer="sgd", learning_rate=0.1, seed=1,
        )
        _, history = train(init_model(cfg), x, y, cfg)
        assert history[-1] < history[0]

    def test_parameters_stay_finite(self):
        x, y = separable_toy_set(2)
        cfg = ModelConfig(input_dim=12, hidden1=5, hidden2=4, epochs=100, seed=5)
        m, _ = train(init_model(cfg), x, y, cfg)
        for _, p in m.parameters():
            assert np.all(np.isfinite(p))
        assert np.all(m.bn1.running_var >= 0) and np.all(m.bn2.running_var >= 0)


class TestCheckpoint:
    def test_save_load_save_byte_identical(self, tmp_path):
        x, y = separable_toy_set()
        cfg = ModelConfig(input_dim=12, hidden1=5, hidden2=4, epochs=10, seed=6)
        m, _ = train(init_model(cfg), x, y, cfg)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_model(m, p1)
        loaded = load_model(p1)
        save_model(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_model_predicts_identically(self, tmp_path):
        x, y = separable_toy_set()
        cfg = ModelConfig(input_dim=12, hidden1=5, hidden2=4, epochs=10, seed=7)
        m, _ = train(init_model(cfg), x, y, cfg)
        save_model(m, tmp_path / "m.ckpt")
        loaded = load_model(tmp_path / "m.ckpt")
        np.testing.assert_array_equal(
            forward(m, x, "eval").probs, forward(loaded, x, "eval").probs
        )

    def test_rng_state_round_trips_through_training(self, tmp_path):
        """Resumed training from a checkpoint must reproduce the dropout
        stream: train A->B, checkpoint at A, retrain, compare."""
        x, y = separable_toy_set()
        cfg = ModelConfig(input_dim=12, hidden1=5, hidden2=4, dropout_rate=0.3, epochs=15, seed=8)
        a, _ = train(init_model(cfg), x, y, cfg)
        save_model(a, tmp_path / "a.ckpt")
        b1, h1 = train(a, x, y, cfg)
        b2, h2 = train(load_model(tmp_path / "a.ckpt"), x, y, cfg)
        assert h1 == h2
        assert save_bytes(b1) == save_bytes(b2)
