import numpy as np
import pytest

from obdsub import (
    BoundedDesign,
    Criterion,
    InvalidDesign,
    InvalidInput,
    ModelKind,
    ModelSpec,
    SingularInformation,
    Subdata,
    information_basis,
    moment_matrix,
    phi,
    point_information,
    round_to_subdata,
    subdata_as_design,
)
from obdsub.design import apply_weight_delta, read_design_csv, read_subdata_csv, write_design_csv, write_subdata_csv


def design_with(N, n, weights: dict):
    w = np.zeros(N)
    for i, v in weights.items():
        w[i] = v
    return BoundedDesign(w, n)


class TestBoundedDesign:
    def test_partition(self):
        n = 4
        d = design_with(6, n, {0: 0.25, 1: 0.25, 2: 0.25, 3: 0.15, 5: 0.1})
        x1, x2, x3 = d.partition()
        assert x1.tolist() == [4] and x2.tolist() == [3, 5] and x3.tolist() == [0, 1, 2]
        assert (d.labels() == BoundedDesign(d.weights.copy(), n).labels()).all()

    def test_boundary_tolerance(self):
        d = design_with(3, 2, {0: 0.5 - 5e-13, 1: 0.5 + 5e-13})
        assert d.labels().tolist() == [3, 3, 1]

    @pytest.mark.parametrize("w,n", [([0.5, 0.6], 2), ([0.7, 0.3], 2), ([1.2, -0.2], 1), ([0.5, 0.5], 3)])
    def test_invalid(self, w, n):
        with pytest.raises(InvalidDesign):
            BoundedDesign(np.array(w), n)

    def test_immutable(self):
        d = BoundedDesign(np.full(2, 0.5), 2)
        with pytest.raises(ValueError):
            d.weights[0] = 0.0


class TestSubdata:
    def test_sorted(self):
        assert Subdata.of([3, 1], 5).indices == (1, 3)

    @pytest.mark.parametrize("idx", [[1, 1], [5], [-1]])
    def test_invalid(self, idx):
        with pytest.raises(InvalidInput):
            Subdata.of(idx, 5)


class TestMomentMatrix:
    def test_identical_points_singular(self):
        X = np.ones((5, 2))
        d = BoundedDesign(np.full(5, 0.2), 5)
        assert not moment_matrix(d, X, ModelSpec(ModelKind.LINEAR_FIRST_ORDER, 2)).nonsingular

    def test_full_data(self, rng):
        X = rng.normal(size=(8, 2))
        spec = ModelSpec(ModelKind.LINEAR_FIRST_ORDER, 2)
        b = information_basis(X, spec)
        M = moment_matrix(BoundedDesign(np.full(8, 1 / 8), 8), X, spec)
        np.testing.assert_allclose(M.M, b.U.T @ b.U / 8, rtol=1e-14)

    def test_four_point(self, four_point):
        X, spec, b = four_point
        M = moment_matrix(design_with(4, 2, {0: 0.5, 3: 0.5}), X, spec)
        np.testing.assert_allclose(M.M, [[1.0, 0.5], [0.5, 2.5]], rtol=1e-15)
        assert np.exp(M.logdet) == pytest.approx(9 / 4, rel=1e-14)

    def test_delta_chain_matches_rebuild(self, rng):
        X = rng.normal(size=(20, 2))
        spec = ModelSpec(ModelKind.LINEAR_FULL_SECOND_ORDER, 2)
        w = np.full(20, 1 / 20)
        M = moment_matrix(BoundedDesign(w, 20), X, spec)
        for _ in range(200):
            i, j = rng.choice(20, size=2, replace=False)
            d = min(w[j], 0.01) * rng.random()
            M = apply_weight_delta(apply_weight_delta(M, point_information(X[i], spec), d), point_information(X[j], spec), -d)
            w[i] += d
            w[j] -= d
        ref = moment_matrix(BoundedDesign(w / w.sum(), 1), X, spec)
        np.testing.assert_allclose(M.base, ref.base, rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(M.inv, ref.inv, rtol=1e-8, atol=1e-8 * np.abs(ref.inv).max())

    def test_delta_to_singular(self, four_point):
        X, spec, _ = four_point
        M = moment_matrix(design_with(4, 2, {0: 0.5, 3: 0.5}), X, spec)
        with pytest.raises(SingularInformation):
            apply_weight_delta(M, point_information(X[0], spec), -0.5)


class TestRounding:
    def test_exact(self):
        assert round_to_subdata(design_with(5, 2, {1: 0.5, 4: 0.5})).indices == (1, 4)

    def test_largest_remaining(self):
        n = 4
        d = design_with(8, n, {0: 0.25, 1: 0.25, 2: 0.25, 6: 0.6 / n, 5: 0.4 / n})
        assert round_to_subdata(d).indices == (0, 1, 2, 6)

    def test_tie_smallest_index(self):
        n = 4
        d = design_with(9, n, {0: 0.25, 1: 0.25, 2: 0.25, 7: 0.5 / n, 3: 0.5 / n})
        assert round_to_subdata(d).indices == (0, 1, 2, 3)

    def test_round_trip(self, rng):
        for _ in range(20):
            S = Subdata.of(rng.choice(30, size=7, replace=False), 30)
            assert round_to_subdata(subdata_as_design(S)) == S

    def test_all_points(self):
        S = Subdata.of(range(6), 6)
        np.testing.assert_array_equal(subdata_as_design(S).weights, np.full(6, 1 / 6))

    def test_subdata_phi(self, rng):
        X = rng.normal(size=(10, 2))
        spec = ModelSpec(ModelKind.LINEAR_FIRST_ORDER, 2)
        b = information_basis(X, spec)
        S = Subdata.of([0, 3, 4, 8], 10)
        U = b.U[list(S.indices)]
        expected = -np.linalg.slogdet(U.T @ U / 4)[1]
        assert phi(moment_matrix(subdata_as_design(S), X, spec), Criterion.D_opt()) == pytest.approx(expected, rel=1e-12)

    def test_wrong_size(self):
        with pytest.raises(InvalidInput):
            subdata_as_design(Subdata.of([0, 1], 4), 3)


class TestSerialization:
    def test_subdata_csv(self, tmp_path):
        S = Subdata.of([0, 5, 9], 10)
        write_subdata_csv(S, tmp_path / "s.csv")
        assert (tmp_path / "s.csv").read_text() == "index\n0\n5\n9\n"
        assert read_subdata_csv(tmp_path / "s.csv", 10) == S

    def test_design_csv_exact(self, tmp_path):
        w = np.array([0.25, 0.25, 1 / 3 - 0.1, 0.1, 1 / 6, 0])
        d = BoundedDesign(w, 4)
        write_design_csv(d, tmp_path / "d.csv", {"criterion": "D"})
        back, meta = read_design_csv(tmp_path / "d.csv")
        np.testing.assert_array_equal(back.weights, d.weights)
        assert meta == {"n": 4, "N": 6, "criterion": "D"}

    def test_missing_header(self, tmp_path):
        (tmp_path / "d.csv").write_text("index,weight\n0,1.0\n")
        with pytest.raises(InvalidInput):
            read_design_csv(tmp_path / "d.csv")
