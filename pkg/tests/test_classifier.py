import numpy as np
import pytest

from divmix.classifier import (
    SoftmaxModel,
    TrainConfig,
    evaluate,
    gradient_check,
    knn_evaluate,
    load_model,
    save_model,
    standardize,
    train_softmax,
    _loss_and_grad,
    _augment,
)
from divmix.errors import RunError, ValidationError
from divmix.gist import DescriptorSet

PHASH = "c" * 16


def dset(matrix, phash=PHASH):
    matrix = np.asarray(matrix, dtype=np.float64)
    ids = tuple(f"r{i}" for i in range(matrix.shape[0]))
    return DescriptorSet(ids, matrix, phash)


def two_blob_task(n_per_class=30, dim=4, gap=4.0, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n_per_class, dim))
    b = rng.standard_normal((n_per_class, dim))
    b[:, 0] += gap
    features = dset(np.vstack([a, b]))
    labels = ["neg"] * n_per_class + ["pos"] * n_per_class
    return features, labels


class TestStandardize:
    def test_identical_rows_map_to_zero(self):
        train = dset(np.ones((5, 3)))
        out, _, mean, std = standardize(train, [])
        assert np.array_equal(out.matrix, np.zeros((5, 3)))
        assert np.array_equal(std, np.full(3, 1e-8))

    def test_train_statistics(self):
        rng = np.random.default_rng(2)
        train = dset(rng.random((50, 4)) * 7 + 3)
        out, _, _, _ = standardize(train, [])
        assert np.all(np.abs(out.matrix.mean(axis=0)) < 1e-9)
        assert np.allclose(out.matrix.std(axis=0), 1.0, atol=1e-6)

    def test_others_use_train_statistics(self):
        rng = np.random.default_rng(3)
        train = dset(rng.random((40, 2)))
        shifted = dset(rng.random((40, 2)) + 10.0)
        _, [shifted_std], mean, std = standardize(train, [shifted])
        # standardized test mean reflects the +10 shift, not its own centering
        assert shifted_std.matrix.mean() > 5.0
        expected = (shifted.matrix - mean) / std
        assert np.allclose(shifted_std.matrix, expected)

    def test_params_mismatch(self):
        with pytest.raises(ValidationError):
            standardize(dset(np.zeros((2, 2))), [dset(np.zeros((2, 2)), phash="x" * 16)])


class TestTrainSoftmax:
    def test_linearly_separable_reaches_full_accuracy(self):
        features = dset([[-1.0], [-0.9], [-1.1], [1.0], [0.9], [1.1]])
        labels = ["A", "A", "A", "B", "B", "B"]
        model = train_softmax(features, labels, TrainConfig(seed=0))
        result = evaluate(model, features, labels)
        assert result.top1_accuracy == 1.0

    def test_huge_l2_shrinks_weights(self):
        features, labels = two_blob_task()
        cfg = TrainConfig(learning_rate=1e-7, epochs=50, l2=1e6, seed=0)
        model = train_softmax(features, labels, cfg)
        assert np.linalg.norm(model.weights[:, :-1]) < 1e-2

    def test_initial_loss_is_log_classes(self):
        features, labels = two_blob_task()
        model = train_softmax(features, labels, TrainConfig(epochs=1, seed=0))
        assert model.loss_history[0] == pytest.approx(np.log(2.0), rel=1e-9)
        three = dset(np.eye(3))
        model3 = train_softmax(three, ["a", "b", "c"], TrainConfig(epochs=1, seed=0))
        assert model3.loss_history[0] == pytest.approx(np.log(3.0), rel=1e-9)

    def test_final_loss_not_above_initial(self):
        features, labels = two_blob_task()
        model = train_softmax(features, labels, TrainConfig(seed=1))
        assert model.loss_history[-1] <= model.loss_history[0]

    def test_loss_monotone_for_small_rate(self):
        features, labels = two_blob_task()
        std_features, _, _, _ = standardize(dset(features.matrix), [])
        cfg = TrainConfig(learning_rate=0.01, epochs=60, seed=0)
        model = train_softmax(std_features, labels, cfg)
        diffs = np.diff(model.loss_history)
        assert np.all(diffs <= 1e-12)

    def test_divergence_raises_with_epoch(self):
        features, labels = two_blob_task(gap=50.0)
        cfg = TrainConfig(learning_rate=1e12, epochs=10, l2=1e8, seed=0)
        with pytest.raises(RunError, match=r"diverged at epoch \d+"):
            train_softmax(features, labels, cfg)

    def test_deterministic_weights(self):
        features, labels = two_blob_task()
        cfg = TrainConfig(epochs=20, seed=7)
        a = train_softmax(features, labels, cfg)
        b = train_softmax(features, labels, cfg)
        assert np.array_equal(a.weights, b.weights)

    def test_class_must_be_present(self):
        features, labels = two_blob_task()
        with pytest.raises(ValidationError, match="absent"):
            train_softmax(features, labels, TrainConfig(), classes=("neg", "pos", "ghost"))

    def test_needs_two_classes(self):
        features = dset(np.zeros((3, 2)))
        with pytest.raises(ValidationError):
            train_softmax(features, ["a", "a", "a"], TrainConfig())


class TestGradientCheck:
    def test_small_instances_under_tolerance(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            n, dim, n_classes = 12, 6, 3
            features = dset(rng.standard_normal((n, dim)))
            labels = [f"c{rng.integers(n_classes)}" for _ in range(n)]
            while len(set(labels)) < 2:
                labels = [f"c{rng.integers(n_classes)}" for _ in range(n)]
            cfg = TrainConfig(l2=10.0 ** rng.uniform(-5, -2), seed=seed)
            assert gradient_check(features, labels, cfg) < 1e-4

    def test_bias_gradient_zero_at_origin_balanced(self):
        features = dset([[1.0, 2.0], [-0.5, 0.3], [2.0, -1.0], [0.1, 0.4]])
        y = np.array([0, 1, 0, 1])
        weights = np.zeros((2, 3))
        _, grad = _loss_and_grad(weights, _augment(features.matrix), y, 0.0)
        assert np.all(np.abs(grad[:, -1]) < 1e-9)

    def test_l2_term_is_exact(self):
        rng = np.random.default_rng(5)
        x1 = _augment(rng.standard_normal((6, 3)))
        y = np.array([0, 1, 0, 1, 0, 1])
        weights = rng.standard_normal((2, 4))
        l2 = 0.37
        _, with_reg = _loss_and_grad(weights.copy(), x1, y, l2)
        _, without = _loss_and_grad(weights.copy(), x1, y, 0.0)
        # recovered to rounding of the summed CE term
        assert np.allclose(with_reg[:, :-1] - without[:, :-1],
                           l2 * weights[:, :-1], rtol=0.0, atol=1e-12)
        assert np.array_equal(with_reg[:, -1], without[:, -1])


class TestEvaluate:
    def biased_model(self, toward="A"):
        weights = np.zeros((2, 3))
        weights[0 if toward == "A" else 1, -1] = 10.0
        return SoftmaxModel(weights=weights, classes=("A", "B"), params_hash=PHASH)

    def test_always_right(self):
        model = self.biased_model("A")
        features = dset(np.random.default_rng(0).random((10, 2)))
        result = evaluate(model, features, ["A"] * 10)
        assert result.top1_accuracy == 1.0
        assert result.confusion[0, 0] == 10

    def test_always_wrong(self):
        model = self.biased_model("A")
        features = dset(np.random.default_rng(0).random((10, 2)))
        result = evaluate(model, features, ["B"] * 10)
        assert result.top1_accuracy == 0.0
        assert result.confusion[1, 0] == 10
        assert result.confusion.sum() == 10

    def test_random_model_near_chance(self):
        rng = np.random.default_rng(123)
        weights = rng.standard_normal((3, 6))
        model = SoftmaxModel(weights=weights, classes=("a", "b", "c"), params_hash=PHASH)
        features = dset(rng.standard_normal((3000, 5)))
        labels = [("a", "b", "c")[i % 3] for i in range(3000)]
        result = evaluate(model, features, labels)
        assert 0.28 <= result.top1_accuracy <= 0.39  # binomial 99.9% band around 1/3

    def test_accuracy_equals_confusion_trace(self):
        features, labels = two_blob_task()
        model = train_softmax(features, labels, TrainConfig(epochs=5, seed=0))
        result = evaluate(model, features, labels)
        assert result.top1_accuracy == np.trace(result.confusion) / result.confusion.sum()

    def test_unknown_label_rejected(self):
        model = self.biased_model()
        with pytest.raises(ValidationError, match="ghost"):
            evaluate(model, dset(np.zeros((1, 2))), ["ghost"])

    def test_argmax_tie_lowest_index(self):
        weights = np.zeros((3, 3))  # all logits equal -> class 0
        model = SoftmaxModel(weights=weights, classes=("a", "b", "c"), params_hash=PHASH)
        result = evaluate(model, dset(np.ones((4, 2))), ["a"] * 4)
        assert result.top1_accuracy == 1.0


class TestKnn:
    def test_exact_match_k1(self):
        train = dset([[0.0, 0.0], [5.0, 5.0]])
        result = knn_evaluate(train, ["a", "b"], dset([[5.0, 5.0]]), ["b"], k=1)
        assert result.top1_accuracy == 1.0

    def test_k_equals_train_size_tie_path(self):
        train = dset([[0.0], [1.0], [10.0], [11.0]])
        labels = ["a", "a", "b", "b"]
        # query at 0.5: both classes get 2 votes; class a has smaller mean distance
        result = knn_evaluate(train, labels, dset([[0.5]]), ["a"], k=4)
        assert result.top1_accuracy == 1.0
        # and the same call twice is identical
        again = knn_evaluate(train, labels, dset([[0.5]]), ["a"], k=4)
        assert np.array_equal(result.confusion, again.confusion)

    def test_two_gaussians_high_accuracy(self):
        rng = np.random.default_rng(0)
        n = 200
        train = np.vstack([rng.standard_normal((n, 2)),
                           rng.standard_normal((n, 2)) + [6.0, 0.0]])
        test = np.vstack([rng.standard_normal((n, 2)),
                          rng.standard_normal((n, 2)) + [6.0, 0.0]])
        labels = ["a"] * n + ["b"] * n
        result = knn_evaluate(dset(train), labels, dset(test), labels, k=5)
        assert result.top1_accuracy > 0.99

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(7)
        train = rng.random((12, 3))
        test = rng.random((6, 3))
        train_labels = [("x", "y", "z")[i % 3] for i in range(12)]
        k = 3
        classes = ("x", "y", "z")
        expected = []
        for q in test:
            d = np.array([np.sqrt(((t - q) ** 2).sum()) for t in train])
            nearest = np.argsort(d, kind="stable")[:k]
            votes = {}
            for idx in nearest:
                votes.setdefault(train_labels[idx], []).append(d[idx])
            best = max(len(v) for v in votes.values())
            tied = [c for c, v in votes.items() if len(v) == best]
            tied.sort(key=lambda c: (float(np.mean(votes[c])), classes.index(c)))
            expected.append(tied[0])
        result = knn_evaluate(dset(train), train_labels, dset(test), expected, k=k)
        assert result.top1_accuracy == 1.0

    def test_k_bounds(self):
        train = dset(np.zeros((3, 1)))
        with pytest.raises(ValidationError):
            knn_evaluate(train, ["a", "a", "b"], dset(np.zeros((1, 1))), ["a"], k=4)


class TestModelFile:
    def test_roundtrip(self, tmp_path):
        features, labels = two_blob_task()
        model = train_softmax(features, labels, TrainConfig(epochs=3, seed=0))
        _, _, mean, std = standardize(features, [])
        path = save_model(model, mean, std, tmp_path / "model.json")
        loaded, mean2, std2 = load_model(path)
        assert loaded.classes == model.classes
        assert np.allclose(loaded.weights, model.weights)
        assert np.allclose(mean2, mean)
        assert np.allclose(std2, std)
