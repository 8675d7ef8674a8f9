import numpy as np
import pytest
from numpy.testing import assert_allclose

from dissnode import matkit
from dissnode.errors import ContractError

from helpers import rand_psd, rand_sym, refine_eigenvalue


def eig2x2(a):
    # closed-form eigenvalues of a symmetric 2x2, ascending
    tr = a[0, 0] + a[1, 1]
    disc = np.sqrt((a[0, 0] - a[1, 1]) ** 2 + 4.0 * a[0, 1] ** 2)
    return np.array([(tr - disc) / 2.0, (tr + disc) / 2.0])


class TestSymEig:
    def test_identity(self):
        res = matkit.sym_eig(np.eye(4))
        assert_allclose(res.values, np.ones(4), atol=1e-14)
        assert_allclose(res.vectors.T @ res.vectors, np.eye(4), atol=1e-12)

    def test_diagonal_is_sorted(self):
        res = matkit.sym_eig(np.diag([3.0, 1.0, 2.0]))
        assert_allclose(res.values, [1.0, 2.0, 3.0], atol=1e-14)

    def test_hand_2x2(self):
        a = np.array([[2.0, 1.0], [1.0, 2.0]])
        res = matkit.sym_eig(a)
        assert_allclose(res.values, [1.0, 3.0], atol=1e-12)
        recon = res.vectors @ np.diag(res.values) @ res.vectors.T
        assert_allclose(recon, a, atol=1e-12)

    def test_certificate_corner_case(self):
        # 2x2 that later reappears as a one-layer certificate matrix
        a = np.array([[1.25, -0.5], [-0.5, 0.99]])
        expect = eig2x2(a)
        assert abs(matkit.min_eig(a) - expect[0]) < 1e-12
        assert abs(matkit.min_eig(a) - 0.60337) < 2e-5

    def test_reconstruction_random(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            n = int(rng.integers(1, 33))
            a = rand_sym(rng, n, scale=float(rng.uniform(0.1, 10.0)))
            res = matkit.sym_eig(a)
            recon = res.vectors @ np.diag(res.values) @ res.vectors.T
            denom = max(np.linalg.norm(a), 1e-30)
            assert np.linalg.norm(recon - a) / denom < 1e-10
            assert np.all(np.diff(res.values) >= 0.0)
            assert_allclose(
                res.vectors.T @ res.vectors, np.eye(n), atol=1e-10
            )

    def test_inverse_iteration_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            n = int(rng.integers(2, 25))
            a = rand_sym(rng, n)
            vals = matkit.sym_eig(a).values
            for v in vals:
                refined = refine_eigenvalue(a, v)
                assert abs(refined - v) < 1e-9

    def test_shift_property(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(2, 17))
            a = rand_sym(rng, n)
            base = matkit.min_eig(a)
            for c in (-5.0, -0.3, 0.7, 3.0):
                shifted = matkit.min_eig(a + c * np.eye(n))
                assert abs(shifted - (base + c)) < 1e-10

    def test_single_element(self):
        res = matkit.sym_eig([[4.0]])
        assert res.values[0] == 4.0
        assert res.vectors[0, 0] == 1.0


class TestValidation:
    def test_asymmetry_rejected(self):
        a = np.eye(3)
        a[0, 1] += 1e-6
        with pytest.raises(ContractError):
            matkit.sym_eig(a)

    def test_small_asymmetry_symmetrized(self):
        a = np.eye(3)
        a[0, 1] += 1e-13
        res = matkit.sym_eig(a)
        assert_allclose(res.values, np.ones(3), atol=1e-12)

    def test_nonsquare(self):
        with pytest.raises(ContractError):
            matkit.sym_eig(np.zeros((2, 3)))

    def test_nonfinite(self):
        a = np.eye(2)
        a[1, 1] = np.nan
        with pytest.raises(ContractError):
            matkit.sym_eig(a)

    def test_dimension_cap(self):
        with pytest.raises(ContractError):
            matkit.sym_eig(np.eye(matkit.MAX_DIM + 1))

    def test_empty(self):
        with pytest.raises(ContractError):
            matkit.sym_eig(np.zeros((0, 0)))


class TestPsd:
    def test_psd_detection(self):
        rng = np.random.default_rng(11)
        assert matkit.is_psd(rand_psd(rng, 6))
        assert not matkit.is_psd(np.diag([1.0, -1e-6]), tol=1e-9)
        assert matkit.is_psd(np.diag([1.0, -1e-6]), tol=1e-5)

    def test_psd_closed_under_addition(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            n = int(rng.integers(2, 12))
            a = rand_psd(rng, n)
            b = rand_psd(rng, n)
            assert matkit.is_psd(a + b, tol=1e-9)

    def test_negative_tol_rejected(self):
        with pytest.raises(ContractError):
            matkit.is_psd(np.eye(2), tol=-1.0)


class TestBlockAssemble:
    def test_hand_example(self):
        a = np.array([[1.0, 2.0]])
        b = np.array([[3.0], [4.0]])
        out = matkit.frob_block_assemble([[None, a], [b, None]])
        expect = np.array(
            [[0.0, 1.0, 2.0], [3.0, 0.0, 0.0], [4.0, 0.0, 0.0]]
        )
        assert_allclose(out, expect)

    def test_matches_np_block(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            sizes = rng.integers(1, 5, size=3)
            grid = []
            for i in range(3):
                row = []
                for j in range(3):
                    if rng.random() < 0.3 and not (i == j):
                        row.append(None)
                    else:
                        row.append(rng.normal(size=(sizes[i], sizes[j])))
                grid.append(row)
            dense_grid = [
                [
                    np.zeros((sizes[i], sizes[j])) if b is None else b
                    for j, b in enumerate(row)
                ]
                for i, row in enumerate(grid)
            ]
            assert_allclose(
                matkit.frob_block_assemble(grid), np.block(dense_grid)
            )

    def test_symmetric_grid_gives_symmetric_matrix(self):
        rng = np.random.default_rng(22)
        d = rand_sym(rng, 3)
        e = rand_sym(rng, 2)
        c = rng.normal(size=(2, 3))
        out = matkit.frob_block_assemble([[d, c.T], [c, e]])
        assert_allclose(out, out.T, atol=0)

    def test_ragged_rejected(self):
        with pytest.raises(ContractError):
            matkit.frob_block_assemble([[np.eye(2)], [np.eye(2), np.eye(2)]])

    def test_inconsistent_heights_rejected(self):
        with pytest.raises(ContractError):
            matkit.frob_block_assemble(
                [[np.eye(2), np.zeros((3, 2))]]
            )

    def test_unsized_row_rejected(self):
        with pytest.raises(ContractError):
            matkit.frob_block_assemble([[None, None], [np.eye(2), None]])
