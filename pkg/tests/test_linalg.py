import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnflow.linalg import (DampedPreconditioner, SingularPreconditioner, gram, kernel, output_operator_apply,
                           precond_solve, precond_solve_smw, precond_solve_sq, projection_apply, spectrum,
                           sym_eig_extremes)


def _triple_loop_gram(D):
    n, p = D.shape
    G = np.zeros((p, p))
    for a in range(p):
        for b in range(p):
            for j in range(n):
                G[a, b] += D[j, a] * D[j, b]
    return G


def _power_extremes(A, iters=3000):
    """Largest eigenvalue by power iteration, smallest by inverse iteration."""
    v = np.ones(A.shape[0])
    for _ in range(iters):
        v = A @ v
        v /= np.linalg.norm(v)
    top = v @ A @ v
    u = np.ones(A.shape[0])
    for _ in range(iters):
        u = np.linalg.solve(A, u)
        u /= np.linalg.norm(u)
    return u @ A @ u, top


class TestGramKernel:
    def test_orthonormal(self, rng):
        Q, _ = np.linalg.qr(rng.standard_normal((6, 3)))
        np.testing.assert_allclose(gram(Q), np.eye(3), atol=1e-14)
        np.testing.assert_allclose(kernel(Q.T), np.eye(3), atol=1e-14)

    def test_scalar(self):
        assert gram(np.array([[2.0]]))[0, 0] == 4.0

    def test_triple_loop(self, rng):
        D = rng.standard_normal((5, 4))
        np.testing.assert_allclose(gram(D), _triple_loop_gram(D), atol=1e-12)
        np.testing.assert_allclose(kernel(D), _triple_loop_gram(D.T), atol=1e-12)

    def test_shared_nonzero_spectrum(self, rng):
        D = rng.standard_normal((4, 7))
        g = np.linalg.eigvalsh(gram(D))[-4:]
        k = np.linalg.eigvalsh(kernel(D))
        np.testing.assert_allclose(g, k, rtol=1e-10)
        assert np.linalg.matrix_rank(kernel(D)) <= 4

    def test_spectrum_padding(self, rng):
        D = rng.standard_normal((3, 5))
        g, k = spectrum(D)
        assert g.shape == (5,) and k.shape == (3,)
        np.testing.assert_array_equal(g[:2], 0.0)
        np.testing.assert_allclose(k, np.linalg.eigvalsh(kernel(D)), rtol=1e-10)


class TestEigExtremes:
    def test_identity(self):
        assert sym_eig_extremes(np.eye(3)) == (1.0, 1.0)

    def test_diag(self):
        assert sym_eig_extremes(np.diag([1.0, 4.0])) == (1.0, 4.0)

    def test_iterative_oracle(self, rng):
        for _ in range(5):
            B = rng.standard_normal((10, 5))
            A = B.T @ B
            lo, hi = sym_eig_extremes(A)
            olo, ohi = _power_extremes(A)
            assert lo == pytest.approx(olo, rel=1e-8)
            assert hi == pytest.approx(ohi, rel=1e-8)

    def test_asymmetric(self):
        with pytest.raises(ValueError):
            sym_eig_extremes(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_not_square(self):
        with pytest.raises(ValueError):
            sym_eig_extremes(np.zeros((2, 3)))


class TestPrecondSolve:
    def test_rho_one_identity(self, rng):
        D, rhs = rng.standard_normal((3, 5)), rng.standard_normal(5)
        np.testing.assert_array_equal(precond_solve(D, 1.0, rhs), rhs)
        np.testing.assert_array_equal(precond_solve_sq(D, 1.0, rhs), rhs)

    def test_orthonormal_columns_undamped(self, rng):
        Q, _ = np.linalg.qr(rng.standard_normal((6, 3)))
        rhs = rng.standard_normal(3)
        np.testing.assert_allclose(precond_solve(Q, 0.0, rhs), rhs, atol=1e-13)

    def test_scalar_hand(self):
        D = np.array([[2.0]])
        assert precond_solve(D, 0.5, np.array([1.0]))[0] == pytest.approx(0.4, abs=1e-15)
        assert precond_solve_smw(D, 0.5, np.array([1.0]))[0] == pytest.approx(0.4, abs=1e-15)
        assert precond_solve_sq(D, 0.5, np.array([3.0]))[0] == pytest.approx(3.0 / 6.25, abs=1e-15)

    def test_recovers_x(self, rng):
        D = rng.standard_normal((12, 5))
        x = rng.standard_normal(5)
        for rho in (0.0, 0.3, 1.0):
            H = (1 - rho) * D.T @ D + rho * np.eye(5)
            np.testing.assert_allclose(precond_solve(D, rho, H @ x), x, rtol=1e-10)

    def test_singular_undamped(self, rng):
        D = rng.standard_normal((3, 5))
        with pytest.raises(SingularPreconditioner):
            precond_solve(D, 0.0, np.ones(5))

    def test_fallback_reports(self, rng):
        D = rng.standard_normal((3, 5))
        pre = DampedPreconditioner(D, 0.0, allow_fallback=True)
        assert pre.used_fallback and pre.fallback_reason
        assert np.all(np.isfinite(pre.solve(np.ones(5))))

    def test_rho_out_of_range(self, rng):
        with pytest.raises(ValueError):
            precond_solve(np.eye(2), 1.5, np.ones(2))

    def test_loewner_floor(self, rng):
        D = rng.standard_normal((20, 4))
        s2 = np.linalg.eigvalsh(gram(D))[0]
        for _ in range(10):
            rhs = rng.standard_normal(4)
            assert np.linalg.norm(precond_solve(D, 0.0, rhs)) <= np.linalg.norm(rhs) / s2 * (1 + 1e-12)

    def test_matrix_rhs(self, rng):
        D = rng.standard_normal((4, 9))
        R = rng.standard_normal((9, 3))
        pre = DampedPreconditioner(D, 0.4)
        for j in range(3):
            np.testing.assert_allclose(pre.solve(R)[:, j], pre.solve(R[:, j]), rtol=1e-12)

    def test_auto_routing(self, rng):
        assert DampedPreconditioner(rng.standard_normal((3, 6)), 0.5).mode == "smw"
        assert DampedPreconditioner(rng.standard_normal((6, 3)), 0.5).mode == "direct"
        assert DampedPreconditioner(rng.standard_normal((6, 3)), 0.0).mode == "direct"
        assert DampedPreconditioner(rng.standard_normal((3, 6)), 1.0).mode == "identity"


class TestSMW:
    @pytest.mark.parametrize("shape", [(8, 24), (24, 8)])
    @pytest.mark.parametrize("rho", [0.1, 0.5, 0.9])
    def test_matches_direct(self, rng, shape, rho):
        D = rng.standard_normal(shape)
        rhs = rng.standard_normal(shape[1])
        a, b = precond_solve(D, rho, rhs), precond_solve_smw(D, rho, rhs)
        assert np.linalg.norm(a - b) / np.linalg.norm(a) < 1e-8

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 10), st.integers(1, 10), st.floats(1e-3, 1 - 1e-3), st.integers(0, 2**31 - 1))
    def test_property(self, n, p, rho, seed):
        r = np.random.default_rng(seed)
        D, rhs = r.standard_normal((n, p)), r.standard_normal(p)
        a, b = precond_solve(D, rho, rhs), precond_solve_smw(D, rho, rhs)
        assert np.linalg.norm(a - b) <= 1e-8 * np.linalg.norm(a)

    def test_near_one(self, rng):
        D, rhs = rng.standard_normal((4, 9)), rng.standard_normal(9)
        np.testing.assert_allclose(precond_solve_smw(D, 1 - 1e-12, rhs), rhs, atol=1e-6)

    @pytest.mark.parametrize("rho", [0.0, 1.0, -0.1])
    def test_domain(self, rho):
        with pytest.raises(ValueError):
            precond_solve_smw(np.eye(2), rho, np.ones(2))


class TestOutputOperator:
    @pytest.mark.parametrize("shape", [(6, 15), (10, 4)])
    def test_eigen_map(self, rng, shape):
        D = rng.standard_normal(shape)
        gam, U = np.linalg.eigh(kernel(D))
        for rho in (0.2, 0.7):
            for g, u in zip(gam, U.T):
                if g > 1e-12:
                    np.testing.assert_allclose(output_operator_apply(D, rho, u), g / ((1 - rho) * g + rho) * u,
                                               atol=1e-8)

    def test_squared_eigen_map(self, rng):
        D = rng.standard_normal((5, 12))
        gam, U = np.linalg.eigh(kernel(D))
        rho = 0.3
        for g, u in zip(gam, U.T):
            val = u @ D @ precond_solve_sq(D, rho, D.T @ u)
            assert val == pytest.approx(g / ((1 - rho) * g + rho) ** 2, rel=1e-9)

    def test_rho_one_is_kernel(self, rng):
        D, v = rng.standard_normal((5, 3)), rng.standard_normal(5)
        np.testing.assert_allclose(output_operator_apply(D, 1.0, v), kernel(D) @ v, rtol=1e-13)

    def test_undamped_is_projection(self, rng):
        D = rng.standard_normal((9, 4))
        M = np.column_stack([output_operator_apply(D, 0.0, e) for e in np.eye(9)])
        ev = np.sort(np.linalg.eigvalsh(0.5 * (M + M.T)))
        np.testing.assert_allclose(ev[:5], 0.0, atol=1e-10)
        np.testing.assert_allclose(ev[5:], 1.0, atol=1e-10)


class TestProjection:
    def test_fixed_point(self, rng):
        D = rng.standard_normal((7, 3))
        v = D @ rng.standard_normal(3)
        np.testing.assert_allclose(projection_apply(D, v), v, atol=1e-12)

    def test_orthogonal_complement(self, rng):
        D = rng.standard_normal((7, 3))
        Q, _ = np.linalg.qr(np.column_stack([D, rng.standard_normal(7)]))
        v = Q[:, 3]
        assert np.linalg.norm(projection_apply(D, v)) < 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 12), st.integers(0, 2**31 - 1))
    def test_laws(self, n, seed):
        r = np.random.default_rng(seed)
        p = int(r.integers(1, n))
        D = r.standard_normal((n, p))
        u, v = r.standard_normal(n), r.standard_normal(n)
        Pv = projection_apply(D, v)
        assert np.linalg.norm(projection_apply(D, Pv) - Pv) < 1e-10
        assert np.linalg.norm(Pv) <= np.linalg.norm(v) + 1e-10
        assert abs(projection_apply(D, u) @ v - u @ Pv) < 1e-10
        Q, _ = np.linalg.qr(D)
        assert np.linalg.norm(Pv - Q @ (Q.T @ v)) < 1e-10

    def test_rank_deficient(self, rng):
        D = rng.standard_normal((6, 2))
        D = np.column_stack([D, D[:, 0]])
        with pytest.raises(SingularPreconditioner):
            projection_apply(D, np.ones(6))
