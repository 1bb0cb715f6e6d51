import numpy as np
import pytest

from flowstyle.errors import NotPSDError, NumericError, ShapeError, SingularMatrixError
from flowstyle.linalg import SymMatrix, mat_inverse, matmul, sym_eig, sym_pow


def naive_matmul(a, b):
    """Independent triple-loop oracle."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for kk in range(k):
                acc += a[i, kk] * b[kk, j]
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        m = np.arange(9.0).reshape(3, 3)
        np.testing.assert_array_equal(matmul(np.eye(3), m), m)

    def test_permutation(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        swap = np.array([[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_array_equal(matmul(a, swap), [[2.0, 1.0], [4.0, 3.0]])

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((5, 5))
        b = rng.standard_normal((5, 5))
        assert np.max(np.abs(matmul(a, b) - naive_matmul(a, b))) < 1e-12

    def test_rectangular(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((3, 7))
        b = rng.standard_normal((7, 2))
        assert np.max(np.abs(matmul(a, b) - naive_matmul(a, b))) < 1e-12

    def test_inner_mismatch_raises(self):
        with pytest.raises(ShapeError):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_product_with_own_transpose_exactly_symmetric(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((6, 40))
        g = matmul(x, x.T)
        np.testing.assert_array_equal(g, g.T)


class TestSymMatrix:
    def test_mirrors_upper_triangle(self):
        m = SymMatrix([[1.0, 2.0], [99.0, 3.0]])
        np.testing.assert_array_equal(m.mat, [[1.0, 2.0], [2.0, 3.0]])
        assert m.order == 2

    def test_rejects_non_square(self):
        with pytest.raises(ShapeError):
            SymMatrix(np.zeros((2, 3)))

    def test_rejects_non_finite(self):
        with pytest.raises(NumericError):
            SymMatrix([[np.nan, 0.0], [0.0, 1.0]])

    def test_readonly(self):
        m = SymMatrix(np.eye(2))
        with pytest.raises(ValueError):
            m.mat[0, 0] = 5.0


class TestSymEig:
    def test_diagonal(self):
        lam, e = sym_eig(np.diag([3.0, 1.0]))
        np.testing.assert_array_equal(lam, [3.0, 1.0])
        np.testing.assert_array_equal(e, np.eye(2))

    def test_two_by_two_hand_case(self):
        # Characteristic polynomial of [[2,1],[1,2]]: (2-l)^2 - 1 = 0.
        lam, e = sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
        np.testing.assert_allclose(lam, [3.0, 1.0], atol=1e-12)
        r = 1.0 / np.sqrt(2.0)
        np.testing.assert_allclose(e[:, 0], [r, r], atol=1e-12)
        np.testing.assert_allclose(e[:, 1], [r, -r], atol=1e-12)

    def test_reconstruction_8x8(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((8, 8))
        m = a + a.T
        lam, e = sym_eig(m)
        recon = e @ np.diag(lam) @ e.T
        assert np.max(np.abs(recon - m)) < 1e-10

    @pytest.mark.parametrize("n", [1, 2, 5, 16, 33, 64])
    def test_reconstruction_and_orthogonality_up_to_64(self, n):
        rng = np.random.default_rng(100 + n)
        a = rng.standard_normal((n, n))
        m = 0.5 * (a + a.T)
        lam, e = sym_eig(m)
        assert np.max(np.abs(e @ np.diag(lam) @ e.T - m)) < 1e-10
        assert np.max(np.abs(e.T @ e - np.eye(n))) < 1e-10
        assert np.all(np.diff(lam) <= 1e-12)  # descending

    def test_matches_library_eigenvalues(self):
        # numpy's LAPACK eigensolver as an independent oracle.
        rng = np.random.default_rng(12)
        a = rng.standard_normal((12, 12))
        m = a + a.T
        lam, _ = sym_eig(m)
        ref = np.sort(np.linalg.eigvalsh(m))[::-1]
        np.testing.assert_allclose(lam, ref, atol=1e-10)

    def test_sign_convention(self):
        rng = np.random.default_rng(13)
        a = rng.standard_normal((6, 6))
        _, e = sym_eig(a + a.T)
        for j in range(6):
            nz = np.nonzero(e[:, j])[0]
            assert e[nz[0], j] > 0

    def test_deterministic(self):
        rng = np.random.default_rng(14)
        a = rng.standard_normal((10, 10))
        m = a + a.T
        lam1, e1 = sym_eig(m)
        lam2, e2 = sym_eig(m.copy())
        np.testing.assert_array_equal(lam1, lam2)
        np.testing.assert_array_equal(e1, e2)

    def test_accepts_symmatrix(self):
        lam, _ = sym_eig(SymMatrix(np.diag([2.0, 5.0])))
        np.testing.assert_array_equal(lam, [5.0, 2.0])


def random_psd(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, 2 * n))
    return a @ a.T / (2 * n)


class TestSymPow:
    def test_identity_inverse_root(self):
        np.testing.assert_allclose(sym_pow(np.eye(4), -0.5), np.eye(4), atol=1e-12)

    def test_diagonal_root(self):
        out = sym_pow(np.diag([4.0, 1.0]), 0.5)
        np.testing.assert_allclose(out, np.diag([2.0, 1.0]), atol=1e-12)

    def test_square_of_half_power_recovers_matrix(self):
        m = random_psd(6, 21)
        root = sym_pow(m, 0.5)
        assert np.max(np.abs(root @ root - m)) < 1e-9

    def test_half_powers_multiply_to_identity(self):
        m = random_psd(5, 22)
        prod = sym_pow(m, 0.5) @ sym_pow(m, -0.5)
        assert np.max(np.abs(prod - np.eye(5))) < 1e-9

    @pytest.mark.parametrize("a,b", [(0.5, 0.5), (-0.5, 1.0), (0.25, 0.75)])
    def test_group_law_on_pd_inputs(self, a, b):
        m = random_psd(4, 23) + 0.5 * np.eye(4)
        lhs = sym_pow(m, a) @ sym_pow(m, b)
        rhs = sym_pow(m, a + b)
        assert np.max(np.abs(lhs - rhs)) < 1e-9

    def test_result_exactly_symmetric(self):
        m = random_psd(7, 24)
        out = sym_pow(m, -0.5)
        np.testing.assert_array_equal(out, out.T)

    def test_not_psd_rejected(self):
        m = np.diag([1.0, -0.5])
        with pytest.raises(NotPSDError):
            sym_pow(m, 0.5, eps=1e-6)

    def test_clamp_keeps_negative_power_finite(self):
        # Rank-deficient: eigenvalue 0 is clamped up to eps before the power.
        m = np.array([[1.0, 1.0], [1.0, 1.0]])
        out = sym_pow(m, -0.5)
        assert np.isfinite(out).all()


class TestMatInverse:
    def test_identity(self):
        np.testing.assert_array_equal(mat_inverse(np.eye(3)), np.eye(3))

    def test_diagonal(self):
        out = mat_inverse(np.diag([2.0, 4.0]))
        np.testing.assert_allclose(out, np.diag([0.5, 0.25]), atol=1e-15)

    def test_two_sided_inverse(self):
        rng = np.random.default_rng(31)
        m = rng.standard_normal((8, 8)) + 4.0 * np.eye(8)
        inv = mat_inverse(m)
        assert np.max(np.abs(m @ inv - np.eye(8))) < 1e-9
        assert np.max(np.abs(inv @ m - np.eye(8))) < 1e-9

    def test_matches_library_inverse(self):
        rng = np.random.default_rng(32)
        m = rng.standard_normal((6, 6)) + 3.0 * np.eye(6)
        np.testing.assert_allclose(mat_inverse(m), np.linalg.inv(m), atol=1e-10)

    def test_singular_raises(self):
        with pytest.raises(SingularMatrixError):
            mat_inverse(np.array([[1.0, 2.0], [2.0, 4.0]]))

    def test_input_not_mutated(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        keep = m.copy()
        mat_inverse(m)
        np.testing.assert_array_equal(m, keep)
