import numpy as np
import pytest
from sklearn.base import clone

from tinysense import (
    TinyDenseClassifier,
    Topology,
    TrainConfig,
    augment,
    evaluate,
    forward,
    forward_batch,
    gradients,
    init_params,
    loss,
    train,
    train_step,
)
from tinysense.model import ModelParams, evaluate_probs


def batch_loss_by_forward(params, X, y):
    """Independent loss path for the finite-difference oracle: forward
    probabilities only, no backprop code involved."""
    probs = forward_batch(params, X)
    p_true = np.maximum(probs[np.arange(len(y)), y], 1e-12)
    return float(np.mean(-np.log(p_true)))


def finite_diff_grads(params, X, y, eps=1e-4):
    grads_w, grads_b = [], []
    for l in range(params.topology.n_layers):
        gw = np.zeros_like(params.weights[l])
        for idx in np.ndindex(*params.weights[l].shape):
            w_plus = [w.copy() for w in params.weights]
            w_minus = [w.copy() for w in params.weights]
            w_plus[l][idx] += eps
            w_minus[l][idx] -= eps
            p_plus = ModelParams(topology=params.topology, weights=w_plus,
                                 biases=params.biases, norm_mean=params.norm_mean,
                                 norm_std=params.norm_std, labels=params.labels)
            p_minus = ModelParams(topology=params.topology, weights=w_minus,
                                  biases=params.biases, norm_mean=params.norm_mean,
                                  norm_std=params.norm_std, labels=params.labels)
            gw[idx] = (batch_loss_by_forward(p_plus, X, y)
                       - batch_loss_by_forward(p_minus, X, y)) / (2.0 * eps)
        grads_w.append(gw)
        gb = np.zeros_like(params.biases[l])
        for i in range(gb.shape[0]):
            b_plus = [b.copy() for b in params.biases]
            b_minus = [b.copy() for b in params.biases]
            b_plus[l][i] += eps
            b_minus[l][i] -= eps
            p_plus = ModelParams(topology=params.topology, weights=params.weights,
                                 biases=b_plus, norm_mean=params.norm_mean,
                                 norm_std=params.norm_std, labels=params.labels)
            p_minus = ModelParams(topology=params.topology, weights=params.weights,
                                  biases=b_minus, norm_mean=params.norm_mean,
                                  norm_std=params.norm_std, labels=params.labels)
            gb[i] = (batch_loss_by_forward(p_plus, X, y)
                     - batch_loss_by_forward(p_minus, X, y)) / (2.0 * eps)
        grads_b.append(gb)
    return grads_w, grads_b


def max_relative_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def small_net(seed, input_dim=5, hidden=(3,), classes=2):
    topo = Topology(input_dim=input_dim, hidden=hidden, output_dim=classes)
    labels = [f"c{i}" for i in range(classes)]
    return init_params(topo, seed, labels=labels)


class TestInit:
    def test_same_seed_bit_identical(self):
        a = small_net(5)
        b = small_net(5)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_biases_zero(self):
        p = small_net(1)
        for b in p.biases:
            assert np.all(b == 0.0)

    def test_uniform_bound(self):
        topo = Topology(input_dim=51, hidden=(20,), output_dim=4)
        p = init_params(topo, 0, labels=list("abcd"))
        bound = np.sqrt(6.0 / 51.0)
        assert np.all(np.abs(p.weights[0]) <= bound)
        # the draw should actually use the range, not collapse near zero
        assert np.max(np.abs(p.weights[0])) > 0.8 * bound

    def test_different_seeds_differ(self):
        assert not np.array_equal(small_net(1).weights[0], small_net(2).weights[0])


class TestForward:
    def test_zero_weights_uniform(self):
        topo = Topology(input_dim=6, hidden=(4,), output_dim=4)
        p = init_params(topo, 0, labels=list("abcd"))
        zeroed = ModelParams(topology=topo,
                             weights=[np.zeros_like(w) for w in p.weights],
                             biases=[np.zeros_like(b) for b in p.biases],
                             norm_mean=p.norm_mean, norm_std=p.norm_std,
                             labels=p.labels)
        out = forward(zeroed, np.random.default_rng(0).normal(size=6))
        np.testing.assert_allclose(out, [0.25, 0.25, 0.25, 0.25])

    def test_softmax_shift_invariance(self):
        p = small_net(3, input_dim=4, hidden=(), classes=3)
        x = np.array([0.3, -1.2, 0.8, 2.0])
        base = forward(p, x)
        shifted = ModelParams(topology=p.topology, weights=p.weights,
                              biases=[p.biases[0] + 7.5],
                              norm_mean=p.norm_mean, norm_std=p.norm_std,
                              labels=p.labels)
        np.testing.assert_allclose(forward(shifted, x), base, atol=1e-9)

    def test_hand_built_logits(self):
        topo = Topology(input_dim=2, hidden=(), output_dim=2)
        p = ModelParams(topology=topo,
                        weights=[np.array([[1.0, 0.0], [0.0, 0.0]])],
                        biases=[np.zeros(2)],
                        norm_mean=np.zeros(2), norm_std=np.ones(2),
                        labels=["hi", "lo"])
        out = forward(p, np.array([1.0, 0.0]))  # logits [1, 0]
        e = np.e
        np.testing.assert_allclose(out, [e / (e + 1.0), 1.0 / (e + 1.0)], atol=1e-12)

    def test_simplex_property(self):
        rng = np.random.default_rng(11)
        p = small_net(7, input_dim=9, hidden=(6, 5), classes=4)
        X = rng.normal(size=(40, 9)) * 3.0
        probs = forward_batch(p, X)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(probs >= 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="features"):
            forward(small_net(0), np.zeros(9))


class TestLoss:
    def test_uniform_prediction(self):
        topo = Topology(input_dim=3, hidden=(), output_dim=4)
        p = ModelParams(topology=topo, weights=[np.zeros((4, 3))],
                        biases=[np.zeros(4)], norm_mean=np.zeros(3),
                        norm_std=np.ones(3), labels=list("abcd"))
        assert abs(loss(p, np.ones(3), 2) - np.log(4.0)) < 1e-12

    def test_confident_correct(self):
        topo = Topology(input_dim=2, hidden=(), output_dim=2)
        p = ModelParams(topology=topo,
                        weights=[np.array([[100.0, 0.0], [0.0, 0.0]])],
                        biases=[np.zeros(2)], norm_mean=np.zeros(2),
                        norm_std=np.ones(2), labels=["a", "b"])
        assert loss(p, np.array([1.0, 0.0]), 0) < 1e-12

    def test_clamp_active(self):
        topo = Topology(input_dim=2, hidden=(), output_dim=2)
        p = ModelParams(topology=topo,
                        weights=[np.array([[0.0, 0.0], [60.0, 0.0]])],
                        biases=[np.zeros(2)], norm_mean=np.zeros(2),
                        norm_std=np.ones(2), labels=["a", "b"])
        # true-class probability ~ e^-60 << 1e-12, so the clamp kicks in
        assert loss(p, np.array([1.0, 0.0]), 0) == pytest.approx(-np.log(1e-12))


class TestGradients:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        p = small_net(0)
        X = rng.normal(size=(6, 5))
        y = rng.integers(0, 2, size=6)
        gw, gb, _ = gradients(p, X, y)
        nw, nb = finite_diff_grads(p, X, y)
        assert max_relative_error(gw, nw) < 1e-4
        assert max_relative_error(gb, nb) < 1e-4

    def test_two_hidden_layers(self):
        rng = np.random.default_rng(1)
        p = small_net(4, input_dim=7, hidden=(5, 3), classes=3)
        X = rng.normal(size=(8, 7))
        y = rng.integers(0, 3, size=8)
        gw, gb, _ = gradients(p, X, y)
        nw, nb = finite_diff_grads(p, X, y)
        assert max_relative_error(gw, nw) < 1e-4
        assert max_relative_error(gb, nb) < 1e-4


class TestTrainStep:
    def test_zero_learning_rate_is_identity(self):
        rng = np.random.default_rng(2)
        p = small_net(2)
        X = rng.normal(size=(4, 5))
        y = np.array([0, 1, 0, 1])
        p2, _ = train_step(p, X, y, 0.0)
        for a, b in zip(p.weights, p2.weights):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(p.biases, p2.biases):
            np.testing.assert_array_equal(a, b)

    def test_loss_trend_on_separable_batch(self):
        rng = np.random.default_rng(3)
        X = np.concatenate([rng.normal(-2.0, 0.3, size=(8, 5)),
                            rng.normal(2.0, 0.3, size=(8, 5))])
        y = np.array([0] * 8 + [1] * 8)
        p = small_net(3)
        losses = []
        for _ in range(50):
            p, batch_loss = train_step(p, X, y, 0.005)
            losses.append(batch_loss)
        increases = sum(1 for a, b in zip(losses, losses[1:]) if b > a)
        assert increases <= len(losses) * 0.05
        assert losses[-1] < losses[0]

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError, match="empty batch"):
            train_step(small_net(0), np.zeros((0, 5)), np.zeros(0, dtype=int), 0.1)


class TestAugment:
    def test_disabled_passthrough(self):
        X = np.arange(12.0).reshape(3, 4)
        out = augment(X, 0, enabled=False)
        assert out is X

    def test_mean_displacement(self):
        X = np.zeros((10000, 4))
        out = augment(X, 123)
        assert np.all(np.abs(out.mean(axis=0)) < 0.01)

    def test_sigma(self):
        out = augment(np.zeros((20000, 2)), 7)
        np.testing.assert_allclose(out.std(axis=0), 0.1, atol=0.005)

    def test_deterministic(self):
        X = np.ones((5, 3))
        np.testing.assert_array_equal(augment(X, 42), augment(X, 42))


class TestTrain:
    def test_history_length(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(20, 4))
        y = rng.integers(0, 2, size=20)
        _, hist = train(X, y, ["a", "b"], TrainConfig(epochs=7, seed=0))
        assert len(hist) == 7
        assert [h.epoch for h in hist] == list(range(7))

    def test_one_epoch_zero_lr_equals_init(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(10, 4))
        y = np.array([0, 1] * 5)
        cfg = TrainConfig(epochs=1, learning_rate=0.0, seed=9)
        params, _ = train(X, y, ["a", "b"], cfg, hidden=(3,))
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        ref = init_params(Topology(4, (3,), 2), 9, labels=["a", "b"],
                          norm_mean=mean, norm_std=std)
        for a, b in zip(params.weights, ref.weights):
            np.testing.assert_array_equal(a, b)

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(30, 6))
        y = rng.integers(0, 3, size=30)
        a, _ = train(X, y, ["a", "b", "c"], TrainConfig(epochs=5, seed=4))
        b, _ = train(X, y, ["a", "b", "c"], TrainConfig(epochs=5, seed=4))
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_single_class_rejected(self):
        X = np.zeros((8, 3))
        with pytest.raises(ValueError, match="2 classes"):
            train(X, np.zeros(8, dtype=int), ["only"], TrainConfig(seed=0))

    def test_gesture_training_accuracy(self, gesture_model):
        _, history = gesture_model
        assert history[-1].accuracy >= 0.95


class TestEvaluate:
    def _probs(self):
        # 3 classes, hand-built probability rows with known confidences
        P = np.array([
            [0.9, 0.05, 0.05],   # true 0, accepted, correct
            [0.5, 0.3, 0.2],     # true 0, rejected at 0.6
            [0.1, 0.8, 0.1],     # true 1, accepted, correct
            [0.2, 0.7, 0.1],     # true 2, accepted, wrong
            [0.34, 0.33, 0.33],  # true 2, rejected
        ])
        y = np.array([0, 0, 1, 2, 2])
        return P, y, ["a", "b", "c"]

    def test_accounting_identity(self):
        P, y, labels = self._probs()
        rep = evaluate_probs(P, y, labels, 0.6)
        per_class_total = rep.confusion.sum(axis=1) + rep.rejected_per_class
        np.testing.assert_array_equal(per_class_total, rep.support)

    def test_rejection_counts_as_error(self):
        P, y, labels = self._probs()
        rep = evaluate_probs(P, y, labels, 0.6)
        assert rep.rejected_count == 2
        assert rep.accuracy == pytest.approx(2 / 5)

    def test_zero_threshold_rejects_nothing(self):
        P, y, labels = self._probs()
        rep = evaluate_probs(P, y, labels, 0.0)
        assert rep.rejected_count == 0
        assert rep.accuracy == pytest.approx(3 / 5)

    def test_rejections_monotone_in_threshold(self):
        P, y, labels = self._probs()
        rejected = [evaluate_probs(P, y, labels, a).rejected_count
                    for a in (0.0, 0.3, 0.6, 0.75, 0.95)]
        assert rejected == sorted(rejected)

    def test_model_path(self, gesture_model, gesture_features):
        params, _ = gesture_model
        _, fs_test = gesture_features
        rep = evaluate(params, fs_test.X, fs_test.y, 0.6)
        assert rep.total == fs_test.X.shape[0]
        assert rep.confusion.shape == (4, 4)
        assert 0.0 <= rep.accuracy <= 1.0

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            evaluate_probs(np.zeros((0, 3)), np.zeros(0, dtype=int), list("abc"), 0.5)


class TestTinyDenseClassifier:
    def test_fit_predict(self, gesture_features):
        fs_train, fs_test = gesture_features
        clf = TinyDenseClassifier(epochs=30, seed=0)
        clf.fit(fs_train.X, fs_train.y)
        acc = clf.score(fs_test.X, fs_test.y)
        assert acc >= 0.9
        probs = clf.predict_proba(fs_test.X[:5])
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_predict_returns_original_labels(self):
        rng = np.random.default_rng(0)
        X = np.concatenate([rng.normal(-2, 0.2, (20, 3)), rng.normal(2, 0.2, (20, 3))])
        y = np.array(["neg"] * 20 + ["pos"] * 20)
        clf = TinyDenseClassifier(epochs=100, seed=1, hidden=(8,))
        preds = clf.fit(X, y).predict(X)
        assert set(preds) <= {"neg", "pos"}
        assert (preds == y).mean() == 1.0

    def test_get_params_and_clone(self):
        clf = TinyDenseClassifier(hidden=(8, 4), epochs=13, seed=5)
        params = clf.get_params()
        assert params["hidden"] == (8, 4)
        assert clone(clf).get_params() == params

    def test_unfitted_raises(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            TinyDenseClassifier().predict_proba(np.zeros((1, 3)))
