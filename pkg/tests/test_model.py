import math

import numpy as np
import pytest

from obdsub import InvalidInput, ModelKind, ModelSpec, expand_features, glm_weight, information_basis, point_information
from obdsub.model import feature_dim, feature_matrix


class TestFeatures:
    def test_first_order(self):
        spec = ModelSpec(ModelKind.LINEAR_FIRST_ORDER, 2)
        assert expand_features([0.5, -1], spec).tolist() == [1.0, 0.5, -1.0]

    def test_second_order_ordering(self):
        spec = ModelSpec(ModelKind.LINEAR_FULL_SECOND_ORDER, 2)
        assert expand_features([2, 3], spec).tolist() == [1, 2, 3, 4, 6, 9]

    def test_zero_vector(self):
        spec = ModelSpec(ModelKind.LINEAR_FIRST_ORDER, 10)
        f = expand_features(np.zeros(10), spec)
        assert f[0] == 1 and not f[1:].any()

    def test_dims(self):
        assert feature_dim(ModelKind.LINEAR_FIRST_ORDER, 10) == 11
        assert feature_dim(ModelKind.LOGISTIC_FULL_SECOND_ORDER, 3) == 10

    def test_wrong_length(self):
        with pytest.raises(InvalidInput):
            expand_features([1, 2, 3], ModelSpec(ModelKind.LINEAR_FIRST_ORDER, 2))

    def test_matrix_matches_rows(self, rng):
        spec = ModelSpec(ModelKind.LINEAR_FULL_SECOND_ORDER, 3)
        X = rng.normal(size=(5, 3))
        F = feature_matrix(X, spec)
        for i in range(5):
            np.testing.assert_array_equal(F[i], expand_features(X[i], spec))


class TestGlmWeight:
    def test_zero(self):
        assert glm_weight(0.0) == 0.25

    def test_tail(self):
        v = glm_weight(50.0)
        assert 0 < v < 1e-20

    def test_symmetry(self):
        assert glm_weight(-3.0) == glm_weight(3.0)

    def test_non_finite(self):
        with pytest.raises(InvalidInput):
            glm_weight(math.inf)


class TestPointInformation:
    def test_rank_one_linear(self):
        info = point_information([1, 1], ModelSpec(ModelKind.LINEAR_FIRST_ORDER, 2))
        assert info.rank_one and info.psi == 1.0
        np.testing.assert_array_equal(info.materialize(), np.ones((3, 3)))

    def test_logistic_origin(self):
        spec = ModelSpec(ModelKind.LOGISTIC_FULL_SECOND_ORDER, 3, theta=[1.0] * 10)
        info = point_information(np.zeros(3), spec)
        expected = math.e / (1 + math.e) ** 2
        assert info.psi == pytest.approx(expected, rel=1e-14)
        assert info.psi == pytest.approx(0.19661, abs=1e-5)
        M = info.materialize()
        assert M[0, 0] == pytest.approx(expected) and np.count_nonzero(M) == 1

    def test_clr_dimension(self):
        pi = np.full(10, 0.1)
        spec = ModelSpec(ModelKind.CLUSTERWISE_LINEAR, 10, cluster_probs=pi, cluster_vars=np.ones(10))
        info = point_information(np.ones(10), spec)
        assert info.dim == 110 and info.materialize().shape == (110, 110)

    def test_basis_matches_points(self, rng):
        spec = ModelSpec(ModelKind.LOGISTIC_FULL_SECOND_ORDER, 2, theta=rng.normal(size=6))
        X = rng.normal(size=(7, 2))
        b = information_basis(X, spec)
        for i in range(7):
            np.testing.assert_allclose(np.outer(b.U[i], b.U[i]), point_information(X[i], spec).materialize(),
                                       rtol=1e-12, atol=1e-15)


class TestModelSpec:
    def test_logistic_needs_theta(self):
        with pytest.raises(InvalidInput):
            ModelSpec(ModelKind.LOGISTIC_FULL_SECOND_ORDER, 3)

    def test_theta_length(self):
        with pytest.raises(InvalidInput):
            ModelSpec(ModelKind.LOGISTIC_FULL_SECOND_ORDER, 3, theta=[1.0] * 4)

    def test_clr_probabilities_sum(self):
        with pytest.raises(InvalidInput):
            ModelSpec(ModelKind.CLUSTERWISE_LINEAR, 2, cluster_probs=[0.5, 0.6], cluster_vars=[1, 1])

    def test_round_trip(self):
        spec = ModelSpec(ModelKind.CLUSTERWISE_LINEAR, 2, cluster_probs=[0.25, 0.75], cluster_vars=[1, 2])
        assert ModelSpec.from_dict(spec.to_dict()) == spec
