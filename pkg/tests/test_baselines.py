import numpy as np
import pytest

from obdsub import (
    Criterion,
    DegenerateData,
    InvalidInput,
    ModelKind,
    ModelSpec,
    NoFeasibleSubset,
    TooLarge,
    exhaustive_oracle,
    leverage_sample,
    srs,
)
from obdsub.baselines import leverage_scores

LIN1 = ModelSpec(ModelKind.LINEAR_FIRST_ORDER, 1)


class TestSrs:
    def test_all(self):
        assert srs(5, 5, 3).indices == (0, 1, 2, 3, 4)

    def test_seeded(self):
        assert srs(100, 10, 7) == srs(100, 10, 7)
        assert srs(100, 10, 7) != srs(100, 10, 8)

    def test_uniform(self):
        counts = np.bincount([srs(4, 1, s).indices[0] for s in range(100_000)], minlength=4)
        sigma = np.sqrt(100_000 * 0.25 * 0.75)
        assert np.all(np.abs(counts - 25_000) < 3 * sigma)

    def test_too_large(self):
        with pytest.raises(InvalidInput):
            srs(3, 4)


class TestLeverage:
    def test_trace(self, rng):
        X = rng.normal(size=(200, 4))
        h = leverage_scores(X, ModelSpec(ModelKind.LINEAR_FIRST_ORDER, 4))
        assert h.sum() == pytest.approx(5.0, abs=1e-8)

    def test_four_point(self, four_point):
        X, spec, _ = four_point
        h = leverage_scores(X, spec)
        # (1, x) with x in {-1, 0, 1, 2}: h = 1/4 + (x - 1/2)^2 / 5
        np.testing.assert_allclose(h, [0.7, 0.3, 0.3, 0.7], rtol=1e-12)
        assert h[3] == h.max()

    def test_first_order_features_for_any_model(self, rng):
        X = rng.normal(size=(50, 2))
        spec = ModelSpec(ModelKind.LOGISTIC_FULL_SECOND_ORDER, 2, theta=np.ones(6))
        np.testing.assert_allclose(leverage_scores(X, spec), leverage_scores(X, ModelSpec(ModelKind.LINEAR_FIRST_ORDER, 2)))

    def test_proportional_first_draw(self):
        X = np.array([[-1.0], [0.0], [1.0], [2.0]])
        counts = np.bincount([leverage_sample(X, LIN1, 1, s).indices[0] for s in range(40_000)], minlength=4)
        p = np.array([0.7, 0.3, 0.3, 0.7]) / 2.0
        sigma = np.sqrt(40_000 * p * (1 - p))
        assert np.all(np.abs(counts - 40_000 * p) < 4 * sigma)

    def test_equal_leverage_is_uniform(self):
        X = np.array([[-1.0], [1.0], [-1.0], [1.0]])
        counts = np.bincount([leverage_sample(X, LIN1, 1, s).indices[0] for s in range(40_000)], minlength=4)
        assert np.all(np.abs(counts - 10_000) < 4 * np.sqrt(40_000 * 0.25 * 0.75))

    def test_without_replacement(self, rng):
        X = rng.normal(size=(30, 2))
        S = leverage_sample(X, ModelSpec(ModelKind.LINEAR_FIRST_ORDER, 2), 30, seed=1)
        assert S.n == 30

    def test_rank_deficient(self):
        with pytest.raises(DegenerateData):
            leverage_sample(np.ones((5, 1)), LIN1, 2)


class TestExhaustive:
    def test_four_point(self, four_point):
        X, spec, _ = four_point
        S, val = exhaustive_oracle(X, spec, Criterion.D_opt(), 2)
        assert S.indices == (0, 3)
        assert np.exp(-val) == pytest.approx(9 / 4, rel=1e-14)

    def test_full(self, four_point):
        X, spec, _ = four_point
        assert exhaustive_oracle(X, spec, Criterion.A_opt(), 4)[0].indices == (0, 1, 2, 3)

    def test_degenerate(self):
        with pytest.raises(NoFeasibleSubset):
            exhaustive_oracle(np.ones((5, 1)), LIN1, Criterion.D_opt(), 2)

    def test_guard(self):
        with pytest.raises(TooLarge):
            exhaustive_oracle(np.arange(60.0)[:, None], LIN1, Criterion.D_opt(), 30)
