import numpy as np
import pytest

from crossgad.detection import (CenterSet, LossWeights, anomaly_scores,
                                dahsc_loss, dahsc_loss_grads, rbf_similarity,
                                total_loss)

LN2 = float(np.log(2.0))


class TestRbfSimilarity:
    def test_at_center(self):
        z = np.random.default_rng(0).normal(size=8)
        assert rbf_similarity(z, z) == 1.0

    def test_unit_squared_distance(self):
        c = np.zeros(5)
        z = c.copy()
        z[0] = 1.0
        assert abs(rbf_similarity(z, c) - np.exp(-1.0)) < 1e-12

    def test_matches_explicit_oracle(self):
        rng = np.random.default_rng(1)
        z, c = rng.normal(size=64), rng.normal(size=64)
        sq = sum((z[i] - c[i]) ** 2 for i in range(64))
        assert abs(rbf_similarity(z, c) - np.exp(-sq)) < 1e-12

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            rbf_similarity(np.zeros(3), np.zeros(4))


class TestDahscLoss:
    def test_normal_node_at_center(self):
        z = np.ones((1, 4))
        # the eps clamp turns exactly-at-center into -log(1 - eps) ~ 1e-7
        assert dahsc_loss(z, [0], np.ones(4)) < 1e-6

    def test_anomaly_closed_form(self):
        c = np.zeros(3)
        z = np.array([[np.sqrt(LN2), 0.0, 0.0]])  # squared distance ln 2
        assert abs(dahsc_loss(z, [1], c) - LN2) < 1e-9

    def test_matches_per_node_oracle(self):
        rng = np.random.default_rng(2)
        Z = rng.normal(size=(8, 4))
        y = np.array([0, 1, 0, 0, 1, 0, 1, 0])
        c = rng.normal(size=4)
        eps = 1e-7
        total = 0.0
        for i in range(8):
            l = np.exp(-np.sum((Z[i] - c) ** 2))
            l = min(max(l, eps), 1 - eps)
            total += -np.log(l) if y[i] == 0 else -np.log(1 - l)
        assert abs(dahsc_loss(Z, y, c) - total / 8) < 1e-10

    def test_non_binary_labels_rejected(self):
        with pytest.raises(ValueError):
            dahsc_loss(np.zeros((2, 3)), [0, 2], np.zeros(3))

    def test_label_length_mismatch(self):
        with pytest.raises(ValueError):
            dahsc_loss(np.zeros((2, 3)), [0], np.zeros(3))

    def test_literal_form_swaps_classes(self):
        rng = np.random.default_rng(3)
        Z = rng.normal(size=(5, 3))
        y = np.array([0, 1, 1, 0, 0])
        c = rng.normal(size=3)
        literal = dahsc_loss(Z, y, c, literal_labels=True)
        swapped = dahsc_loss(Z, 1 - y, c)
        assert abs(literal - swapped) < 1e-15

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(4)
        Z = rng.normal(size=(6, 3))
        y = np.array([0, 1, 0, 1, 0, 0])
        c = rng.normal(size=3)
        _, g_Z, g_c = dahsc_loss_grads(Z, y, c)
        step = 1e-6
        for arr, grad in ((Z, g_Z), (c, g_c)):
            for idx in np.ndindex(arr.shape):
                save = arr[idx]
                arr[idx] = save + step
                up = dahsc_loss(Z, y, c)
                arr[idx] = save - step
                down = dahsc_loss(Z, y, c)
                arr[idx] = save
                fd = (up - down) / (2 * step)
                rel = abs(fd - grad[idx]) / max(abs(fd), abs(grad[idx]), 1e-3)
                assert rel < 1e-4


class TestTotalLoss:
    def test_zero_weight_drops_contrastive(self):
        assert total_loss(1.5, 2.5, 99.0, LossWeights(0.0)) == 4.0

    def test_closed_form(self):
        assert total_loss(0.0, 0.0, 4.0, LossWeights(0.5)) == 2.0

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(5)
        l_t, l_s, l_c = rng.normal(size=3)
        got = total_loss(l_t, l_s, l_c, LossWeights(0.5))
        assert abs(got - (l_t + l_s + 0.5 * l_c)) < 1e-15

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(-0.1)


class TestAnomalyScores:
    def test_node_at_center_scores_zero(self):
        c = np.random.default_rng(6).normal(size=4)
        scores = anomaly_scores(c[None, :], c)
        assert scores[0] == 0.0

    def test_unit_distance_closed_form(self):
        c = np.zeros(3)
        z = np.array([[1.0, 0.0, 0.0]])
        assert abs(anomaly_scores(z, c)[0] - (1 - np.exp(-1.0))) < 1e-12

    def test_composition_of_rbf_oracle(self):
        rng = np.random.default_rng(7)
        Z = rng.normal(size=(10, 5))
        c = rng.normal(size=5)
        scores = anomaly_scores(Z, c)
        for i in range(10):
            assert abs(scores[i] - (1 - rbf_similarity(Z[i], c))) < 1e-12

    def test_range_and_monotonicity(self):
        c = np.zeros(2)
        radii = np.array([0.0, 0.5, 1.0, 2.0, 5.0])
        Z = np.stack([radii, np.zeros(5)], axis=1)
        s = anomaly_scores(Z, c)
        assert ((s >= 0) & (s < 1)).all()
        assert (np.diff(s) > 0).all()

    def test_translation_equivariance(self):
        rng = np.random.default_rng(8)
        Z = rng.normal(size=(7, 4))
        c = rng.normal(size=4)
        shift = rng.normal(size=4)
        np.testing.assert_allclose(anomaly_scores(Z + shift, c + shift),
                                   anomaly_scores(Z, c), atol=1e-12)


class TestCenterSet:
    def test_effective_centers(self):
        cs = CenterSet(center=np.array([1.0, 0.0]),
                       offset_source=np.array([0.0, 2.0]),
                       offset_target=np.array([-1.0, 0.0]))
        np.testing.assert_array_equal(cs.effective("source"), [1.0, 2.0])
        np.testing.assert_array_equal(cs.effective("target"), [0.0, 0.0])
        with pytest.raises(ValueError):
            cs.effective("elsewhere")
