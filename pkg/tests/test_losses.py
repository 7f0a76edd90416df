import math
import unittest

import numpy as np
from scipy.special import logsumexp

from oefd.errors import DomainError, LabelError, ShapeError
from oefd.losses import AngularClassifier, DecomposedFeature, LabeledBatch, age_loss, classify, combine, \
    combined_loss, decompose, identity_loss, identity_loss_from_arrays, predict_age, psi, psi_from_cosine, \
    psi_on_segment, recompose, segment_index, softmax_loss
from oefd.numerics import RandomSource, finite_difference_gradient, normalize_rows, relative_error, row_norms
from oefd.schemas import AgeHead, AngularMarginConfig, MultiTaskConfig


def random_batch(rng, samples=8, dim=4, classes=5):
    features = rng.normal((samples, dim))
    labels = rng.generator.integers(0, classes, samples)
    ages = row_norms(features) + 0.1 * rng.normal(samples)
    return LabeledBatch(features, labels, ages), AngularClassifier(rng.unit_vectors(classes, dim))


class TestDecomposition(unittest.TestCase):

    def test_examples(self):
        d = decompose(np.array([3.0, 4.0]))
        self.assertEqual(d.norm, 5.0)
        np.testing.assert_allclose(d.direction, [0.6, 0.8], atol=1e-15)
        self.assertFalse(d.degenerate)
        np.testing.assert_allclose(recompose(DecomposedFeature(5.0, np.array([0.6, 0.8]))), [3.0, 4.0], atol=1e-15)

    def test_unit_vector_is_its_own_direction(self):
        u = np.array([0.0, 1.0, 0.0])
        d = decompose(u)
        self.assertEqual(d.norm, 1.0)
        np.testing.assert_array_equal(d.direction, u)

    def test_zero_vector_is_degenerate(self):
        with self.assertLogs('oefd.losses', level='WARNING'):
            d = decompose(np.zeros(2), eps=1e-12)
        self.assertTrue(d.degenerate)
        np.testing.assert_array_equal(recompose(DecomposedFeature(0.0, np.array([0.6, 0.8]))), [0.0, 0.0])

    def test_round_trip_over_random_vectors(self):
        rng = RandomSource(11)
        for _ in range(1000):
            x = rng.normal(6) * 10 ** rng.uniform(-3, 3)
            d = decompose(x)
            self.assertLess(np.linalg.norm(recompose(d) - x) / np.linalg.norm(x), 1e-9)
            self.assertAlmostEqual(float(np.linalg.norm(d.direction)), 1.0, delta=1e-12)


class TestPsi(unittest.TestCase):

    def test_segment_index_examples(self):
        self.assertEqual(segment_index(0.0, 4), 0)
        self.assertEqual(segment_index(math.pi, 4), 3)
        self.assertEqual(segment_index(math.pi / 2, 4), 2)
        with self.assertRaises(DomainError):
            segment_index(-0.1, 4)
        with self.assertRaises(DomainError):
            segment_index(4.0, 2)

    def test_psi_examples(self):
        self.assertEqual(psi(0.0, 4), 1.0)
        self.assertAlmostEqual(psi(math.pi / 8, 4), 0.0, delta=1e-15)
        self.assertAlmostEqual(psi(math.pi / 2, 4), -3.0, delta=1e-15)

    def test_single_segment_is_cosine(self):
        for theta in np.linspace(0.0, math.pi, 101):
            self.assertEqual(psi(float(theta), 1), math.cos(theta))

    def test_continuity_at_segment_boundaries(self):
        for m in (2, 3, 4):
            for k in range(1, m):
                theta = k * math.pi / m
                self.assertAlmostEqual(psi_on_segment(theta, m, k - 1), 1 - 2 * k, delta=1e-12)
                self.assertAlmostEqual(psi_on_segment(theta, m, k), 1 - 2 * k, delta=1e-12)

    def test_strictly_decreasing(self):
        grid = np.linspace(0.0, math.pi, 10_000)
        for m in (2, 4):
            values = np.array([psi(float(t), m) for t in grid])
            self.assertTrue(np.all(np.diff(values) < 0), f"psi not strictly decreasing for m={m}")

    def test_below_cosine_except_at_zero(self):
        grid = np.linspace(0.0, math.pi, 10_000)
        for m in (2, 3, 4):
            values = np.array([psi(float(t), m) for t in grid])
            self.assertEqual(values[0], 1.0)
            self.assertTrue(np.all(values[1:] < np.cos(grid[1:])))

    def test_vectorized_form_matches_scalar_form(self):
        thetas = np.linspace(0.01, math.pi - 0.01, 257)
        values, slopes = psi_from_cosine(np.cos(thetas), 4)
        for theta, value in zip(thetas, values):
            self.assertAlmostEqual(value, psi(float(theta), 4), delta=1e-12)
        # d psi / d cos by central differences in cos.
        c = np.cos(thetas)
        h = 1e-6
        numeric = (psi_from_cosine(c + h, 4)[0] - psi_from_cosine(c - h, 4)[0]) / (2 * h)
        np.testing.assert_allclose(slopes, numeric, rtol=1e-5, atol=1e-5)


class TestIdentityLoss(unittest.TestCase):

    def test_two_class_example(self):
        batch = LabeledBatch(np.array([[1.0, 0.0]]), np.array([0]), np.array([1.0]))
        classifier = AngularClassifier(np.eye(2))
        result = identity_loss(batch, classifier, AngularMarginConfig(m=4, s=1, anneal_weight=0))
        self.assertAlmostEqual(result.value, math.log(1 + math.exp(-1)), places=7)
        self.assertAlmostEqual(result.value, 0.3132617, places=7)

    def test_equal_cosines_give_log_classes(self):
        # Three unit weights 120 degrees apart all have cosine 0 with the z axis.
        angles = np.array([0.0, 2 * math.pi / 3, 4 * math.pi / 3])
        weights = np.stack([np.cos(angles), np.sin(angles), np.zeros(3)], axis=1)
        batch = LabeledBatch(np.array([[0.0, 0.0, 2.0]]), np.array([1]), np.array([0.0]))
        for s in (1.0, 32.0):
            result = identity_loss(batch, AngularClassifier(weights), AngularMarginConfig(m=1, s=s))
            self.assertAlmostEqual(result.value, math.log(3), delta=1e-12)

    def test_reduces_to_normalized_softmax_for_unit_margin(self):
        rng = RandomSource(5)
        cfg = AngularMarginConfig(m=1, s=16.0, anneal_weight=5.0)
        for _ in range(100):
            batch, classifier = random_batch(rng)
            logits = cfg.s * normalize_rows(batch.features) @ classifier.weights.T
            rows = np.arange(batch.size)
            expected = float(np.mean(logsumexp(logits, axis=1) - logits[rows, batch.identity_labels]))
            self.assertAlmostEqual(identity_loss(batch, classifier, cfg).value, expected, delta=1e-10)

    def test_invariant_to_positive_rescaling(self):
        rng = RandomSource(6)
        cfg = AngularMarginConfig()
        for _ in range(20):
            batch, classifier = random_batch(rng)
            scales = rng.uniform(0.1, 10.0, batch.size)
            scaled = LabeledBatch(batch.features * scales[:, None], batch.identity_labels, batch.age_labels)
            tripled = LabeledBatch(3 * batch.features, batch.identity_labels, batch.age_labels)
            base = identity_loss(batch, classifier, cfg).value
            self.assertAlmostEqual(identity_loss(scaled, classifier, cfg).value, base, delta=1e-12)
            self.assertAlmostEqual(identity_loss(tripled, classifier, cfg).value, base, delta=1e-12)

    def test_feature_gradient_is_tangential(self):
        batch, classifier = random_batch(RandomSource(8))
        result = identity_loss(batch, classifier, AngularMarginConfig())
        radial = np.einsum("ij,ij->i", result.grad_features, batch.features)
        np.testing.assert_allclose(radial, np.zeros(batch.size), atol=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = RandomSource(9)
        batch, classifier = random_batch(rng)
        labels = batch.identity_labels
        for cfg in (AngularMarginConfig(m=2, s=4.0, anneal_weight=0.0), AngularMarginConfig(m=4, s=32.0)):
            result = identity_loss_from_arrays(batch.features, labels, classifier.weights, cfg)
            fd_features = finite_difference_gradient(
                lambda f: identity_loss_from_arrays(f, labels, classifier.weights, cfg).value, batch.features)
            fd_weights = finite_difference_gradient(
                lambda w: identity_loss_from_arrays(batch.features, labels, w, cfg).value, classifier.weights)
            self.assertLess(relative_error(result.grad_features, fd_features), 1e-4)
            self.assertLess(relative_error(result.grad_weights, fd_weights), 1e-4)

    def test_label_and_shape_errors(self):
        batch, classifier = random_batch(RandomSource(1), classes=3)
        bad = LabeledBatch(batch.features, np.full(batch.size, 3), batch.age_labels)
        with self.assertRaises(LabelError):
            identity_loss(bad, classifier, AngularMarginConfig())
        with self.assertRaises(ShapeError):
            LabeledBatch(batch.features, batch.identity_labels[:-1], batch.age_labels)
        with self.assertRaises(DomainError):
            AngularClassifier(np.array([[2.0, 0.0]]))


class TestSoftmaxLoss(unittest.TestCase):

    def test_matches_raw_logit_cross_entropy_and_gradients(self):
        rng = RandomSource(12)
        features = rng.normal((6, 3))
        weights = rng.normal((4, 3))
        labels = np.array([0, 1, 2, 3, 0, 1])
        result = softmax_loss(features, labels, weights)
        logits = features @ weights.T
        expected = float(np.mean(logsumexp(logits, axis=1) - logits[np.arange(6), labels]))
        self.assertAlmostEqual(result.value, expected, delta=1e-12)
        fd = finite_difference_gradient(lambda f: softmax_loss(f, labels, weights).value, features)
        self.assertLess(relative_error(result.grad_features, fd), 1e-6)
        fd_w = finite_difference_gradient(lambda w: softmax_loss(features, labels, w).value, weights)
        self.assertLess(relative_error(result.grad_weights, fd_w), 1e-6)


class TestAgeLoss(unittest.TestCase):
    head = AgeHead(slope=1.0, intercept=0.0)

    def test_examples(self):
        exact = LabeledBatch(np.array([[3.0, 4.0]]), np.array([0]), np.array([5.0]))
        self.assertEqual(age_loss(exact, self.head, 1).value, 0.0)
        short = LabeledBatch(np.array([[3.0, 0.0]]), np.array([0]), np.array([5.0]))
        self.assertEqual(age_loss(short, self.head, 1).value, 2.0)
        pair = LabeledBatch(np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([0, 0]), np.array([1.0, 1.0]))
        self.assertEqual(age_loss(pair, self.head, 1).value, 0.25)

    def test_predict_age(self):
        np.testing.assert_array_equal(predict_age(np.array([1.0, 2.0]), AgeHead(slope=2.0, intercept=1.0)), [3.0, 5.0])

    def test_invariant_to_norm_preserving_rotation(self):
        rng = RandomSource(13)
        for _ in range(20):
            batch, _ = random_batch(rng)
            q, _ = np.linalg.qr(rng.normal((4, 4)))
            rotated = LabeledBatch(batch.features @ q, batch.identity_labels, batch.age_labels)
            self.assertAlmostEqual(age_loss(rotated, self.head, 3).value, age_loss(batch, self.head, 3).value, delta=1e-12)

    def test_feature_gradient_is_radial(self):
        batch, _ = random_batch(RandomSource(14))
        g = age_loss(batch, AgeHead(slope=1.3, intercept=-0.2), 3).grad_features
        u = normalize_rows(batch.features)
        tangential = g - np.einsum("ij,ij->i", g, u)[:, None] * u
        np.testing.assert_allclose(tangential, np.zeros_like(g), atol=1e-14)

    def test_gradients_match_finite_differences(self):
        batch, _ = random_batch(RandomSource(15))
        head = AgeHead(slope=0.8, intercept=0.3)
        result = age_loss(batch, head, num_classes=5)
        self.assertEqual(result.grad_weights.shape, (5, 4))
        fd = finite_difference_gradient(
            lambda f: age_loss(LabeledBatch(f, batch.identity_labels, batch.age_labels), head, 5).value, batch.features)
        self.assertLess(relative_error(result.grad_features, fd), 1e-6)
        fd_head = finite_difference_gradient(
            lambda p: age_loss(batch, AgeHead(slope=p[0], intercept=p[1]), 5).value, np.array([0.8, 0.3]))
        self.assertLess(relative_error(np.array(result.grad_age_head), fd_head), 1e-6)


class TestCombinedLoss(unittest.TestCase):

    def test_zero_lambda_equals_identity_loss(self):
        batch, classifier = random_batch(RandomSource(16))
        margin = AngularMarginConfig()
        combined = combined_loss(batch, classifier, AgeHead(), margin, MultiTaskConfig(lambda_=0.0))
        identity = identity_loss(batch, classifier, margin)
        self.assertEqual(combined.value, identity.value)
        np.testing.assert_array_equal(combined.grad_features, identity.grad_features)

    def test_unit_lambda_sums_values(self):
        batch, classifier = random_batch(RandomSource(17))
        margin = AngularMarginConfig()
        identity = identity_loss(batch, classifier, margin)
        age = age_loss(batch, AgeHead(), classifier.num_classes)
        combined = combined_loss(batch, classifier, AgeHead(), margin, MultiTaskConfig(lambda_=1.0))
        self.assertAlmostEqual(combined.value, identity.value + age.value, delta=1e-15)

    def test_gradient_additivity(self):
        rng = RandomSource(18)
        margin = AngularMarginConfig()
        for lam in (0.01, 0.5, 1.0):
            batch, classifier = random_batch(rng)
            head = AgeHead(slope=1.1, intercept=0.1)
            identity = identity_loss(batch, classifier, margin)
            age = age_loss(batch, head, classifier.num_classes)
            combined = combined_loss(batch, classifier, head, margin, MultiTaskConfig(lambda_=lam))
            np.testing.assert_allclose(combined.grad_features, identity.grad_features + lam * age.grad_features,
                                       rtol=0, atol=1e-12)

    def test_age_gradient_can_stop_at_the_head(self):
        batch, classifier = random_batch(RandomSource(19))
        identity = identity_loss(batch, classifier, AngularMarginConfig())
        age = age_loss(batch, AgeHead(), classifier.num_classes)
        detached = combine(identity, age, 1.0, age_grad_to_encoder=False)
        np.testing.assert_array_equal(detached.grad_features, identity.grad_features)
        self.assertEqual(detached.grad_age_head, age.grad_age_head)

    def test_age_term_leaves_classifier_gradient_unchanged(self):
        batch, classifier = random_batch(RandomSource(20))
        identity = identity_loss(batch, classifier, AngularMarginConfig())
        age = age_loss(batch, AgeHead(), classifier.num_classes)
        self.assertEqual(age.grad_weights.shape, classifier.weights.shape)
        np.testing.assert_array_equal(age.grad_weights, np.zeros_like(classifier.weights))
        combined = combine(identity, age, 0.5)
        np.testing.assert_array_equal(combined.grad_weights, identity.grad_weights)
        with self.assertRaises(TypeError):
            age_loss(batch, AgeHead())


class TestClassify(unittest.TestCase):

    def test_angular_and_raw_logit_predictions(self):
        weights = np.array([[1.0, 0.0], [0.0, 10.0]])
        embeddings = np.array([[2.0, 1.0]])
        self.assertEqual(classify(embeddings, weights, angular=True)[0], 0)
        self.assertEqual(classify(embeddings, weights, angular=False)[0], 1)


if __name__ == '__main__':
    unittest.main()
