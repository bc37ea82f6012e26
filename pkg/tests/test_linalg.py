import math

import numpy as np
import pytest

from ssmguard.linalg import (LinalgError, Matrix, condition_number,
                             eig_radius_exact, eigvals, mat_exp, power_method,
                             solve_discrete_lyapunov)


def taylor_expm(a: np.ndarray, order: int = 30) -> np.ndarray:
    """Independent oracle: direct truncated-series summation."""
    acc = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for k in range(1, order + 1):
        term = term @ a / k
        acc = acc + term
    return acc


def jacobi_svd_singular_values(a: np.ndarray, sweeps: int = 60) -> np.ndarray:
    """Independent oracle: one-sided Jacobi rotations."""
    u = a.astype(float).copy()
    n = u.shape[1]
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = u[:, p] @ u[:, q]
                app = u[:, p] @ u[:, p]
                aqq = u[:, q] @ u[:, q]
                off = max(off, abs(apq))
                if abs(apq) < 1e-15 * math.sqrt(app * aqq + 1e-300):
                    continue
                tau = (aqq - app) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1 + tau * tau))
                c = 1.0 / math.sqrt(1 + t * t)
                s = c * t
                up = c * u[:, p] - s * u[:, q]
                uq = s * u[:, p] + c * u[:, q]
                u[:, p], u[:, q] = up, uq
        if off < 1e-14:
            break
    return np.sort(np.linalg.norm(u, axis=0))[::-1]


class TestMatrixType:
    def test_diagonal_stores_vector(self):
        m = Matrix.diagonal([1.0, 2.0])
        assert m.rows == m.cols == 2 and m.kind == "diagonal"

    def test_rejects_nonfinite(self):
        with pytest.raises(LinalgError):
            Matrix.dense([[1.0, np.nan], [0.0, 1.0]])
        with pytest.raises(LinalgError):
            Matrix.diagonal([np.inf])

    def test_matvec_matches_dense(self):
        rng = np.random.default_rng(0)
        d = rng.standard_normal(5)
        v = rng.standard_normal(5)
        assert np.allclose(Matrix.diagonal(d).matvec(v),
                           Matrix.dense(np.diag(d)).matvec(v))


class TestMatExp:
    def test_zero_matrix_gives_identity(self):
        out = mat_exp(Matrix.dense(np.zeros((4, 4))), 1.0)
        assert np.array_equal(out.data, np.eye(4))

    def test_diagonal_closed_form(self):
        out = mat_exp(Matrix.diagonal([-1.0]), math.log(2.0))
        assert out.kind == "diagonal"
        assert out.data[0] == pytest.approx(0.5, abs=1e-15)

    def test_dense_matches_series_oracle(self):
        rng = np.random.default_rng(7)
        a = rng.uniform(-1.0, 1.0, (4, 4))
        ours = mat_exp(Matrix.dense(a), 0.3).data
        oracle = taylor_expm(0.3 * a)
        assert np.max(np.abs(ours - oracle)) < 1e-10 * np.max(np.abs(oracle))

    def test_semigroup_property_at_large_norm(self):
        # exp(2tM) == exp(tM)^2 exercises the scaling-and-squaring path
        rng = np.random.default_rng(3)
        a = rng.standard_normal((6, 6))
        a *= 10.0 / np.linalg.norm(a, 2)
        half = mat_exp(Matrix.dense(a), 0.5).data
        full = mat_exp(Matrix.dense(a), 1.0).data
        assert np.max(np.abs(half @ half - full)) < 1e-11 * np.max(np.abs(full))

    def test_inverse_identity(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((5, 5))
        fwd = mat_exp(Matrix.dense(a), 1.0).data
        bwd = mat_exp(Matrix.dense(-a), 1.0).data
        assert np.max(np.abs(fwd @ bwd - np.eye(5))) < 1e-10

    def test_errors(self):
        with pytest.raises(LinalgError):
            mat_exp(Matrix.dense(np.zeros((2, 3))), 1.0)
        with pytest.raises(LinalgError):
            mat_exp(Matrix.dense(np.eye(2)), 0.0)
        with pytest.raises(LinalgError):
            mat_exp(Matrix.dense(np.eye(2)), -1.0)


class TestPowerMethod:
    def test_identity_is_exact(self):
        est = power_method(Matrix.diagonal(np.ones(16)), 3, seed=42)
        assert est.rho_hat == 1.0
        assert est.method == "power" and est.iterations_used == 3

    def test_two_channel_convergence(self):
        est = power_method(Matrix.diagonal([0.9, 0.3]), 20, seed=0)
        assert abs(est.rho_hat - 0.9) < 1e-9

    def test_zero_matrix_flagged(self):
        est = power_method(Matrix.dense(np.zeros((4, 4))), 3, seed=0)
        assert est.rho_hat == 0.0 and est.flagged

    def test_nilpotent_underflow_errors_after_restart(self):
        m = Matrix.dense([[0.0, 1.0], [0.0, 0.0]])
        with pytest.raises(LinalgError):
            power_method(m, 3, seed=0)

    def test_deterministic(self):
        m = Matrix.diagonal(np.random.default_rng(1).uniform(0.1, 0.9, 8))
        a = power_method(m, 5, seed=9).rho_hat
        b = power_method(m, 5, seed=9).rho_hat
        assert a == b

    def test_k_validation(self):
        with pytest.raises(LinalgError):
            power_method(Matrix.diagonal([0.5]), 0, seed=0)


class TestEigRadius:
    def test_diagonal_max_magnitude(self):
        est = eig_radius_exact(Matrix.diagonal([0.2, -0.7, 0.5]))
        assert est.rho_hat == 0.7 and est.method == "diagonal_closed_form"

    def test_rotation_on_unit_circle(self):
        th = 0.7
        rot = [[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]]
        assert eig_radius_exact(Matrix.dense(rot)).rho_hat == pytest.approx(1.0, abs=1e-10)

    def test_companion_matrix_golden_ratio(self):
        # roots of z^2 - z - 1 by the quadratic formula as the oracle
        golden = (1.0 + math.sqrt(5.0)) / 2.0
        est = eig_radius_exact(Matrix.dense([[0.0, 1.0], [1.0, 1.0]]))
        assert est.rho_hat == pytest.approx(golden, abs=1e-10)
        assert est.method == "exact_eig"

    def test_dimension_cap(self):
        with pytest.raises(LinalgError):
            eig_radius_exact(Matrix.dense(np.eye(65)))

    def test_against_numpy_on_random_dense(self):
        for seed in range(40):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(2, 17))
            a = rng.standard_normal((n, n))
            if seed % 4 == 0:
                a = a @ a.T  # symmetric PSD
            elif seed % 4 == 1:
                b = rng.standard_normal(n)
                a = np.outer(b, b)  # rank one, clustered zeros
            mine = eig_radius_exact(Matrix.dense(a)).rho_hat
            ref = float(np.max(np.abs(np.linalg.eigvals(a))))
            assert mine == pytest.approx(ref, abs=1e-8 * max(1.0, ref))

    def test_scaling_invariant(self):
        rng = np.random.default_rng(11)
        for c in [0.0, 0.3, 2.0, 17.5]:
            a = rng.standard_normal((6, 6))
            base = eig_radius_exact(Matrix.dense(a)).rho_hat
            scaled = eig_radius_exact(Matrix.dense(c * a)).rho_hat
            assert scaled == pytest.approx(c * base, rel=1e-10, abs=1e-12)


class TestPowerMethodProperties:
    def test_diagonal_agreement_with_eigengap(self):
        # entries with dominant/second ratio <= 0.7 (comfortably past the
        # 10%-gap condition); 50 iterations must agree with the closed form
        rng = np.random.default_rng(21)
        for _ in range(50):
            top = rng.uniform(0.5, 1.0)
            rest = rng.uniform(-0.7 * top, 0.7 * top, 15)
            entries = np.concatenate([[top * rng.choice([-1.0, 1.0])], rest])
            m = Matrix.diagonal(entries)
            est = power_method(m, 50, seed=int(rng.integers(1 << 30)))
            exact = eig_radius_exact(m).rho_hat
            assert abs(est.rho_hat - exact) < 1e-8

    def test_error_bound_on_symmetric_samples(self):
        # |rho_hat - rho| <= (|l2|/|l1|)^k ||M||_2 for gapped symmetric M
        rng = np.random.default_rng(33)
        k = 25
        for _ in range(100):
            n = 8
            lams = np.concatenate([[1.0], rng.uniform(-0.4, 0.4, n - 1)])
            lams *= rng.uniform(0.5, 2.0)
            q, _ = np.linalg.qr(rng.standard_normal((n, n)))
            m = q @ np.diag(lams) @ q.T
            mags = np.sort(np.abs(lams))[::-1]
            est = power_method(Matrix.dense(m), k, seed=int(rng.integers(1 << 30)))
            bound = (mags[1] / mags[0]) ** k * mags[0]
            assert abs(est.rho_hat - mags[0]) <= bound + 1e-14

    def test_geometric_decay_for_diagonal(self):
        rng = np.random.default_rng(4)
        entries = rng.uniform(-0.95, 0.95, 16)
        rho = float(np.max(np.abs(entries)))
        h = rng.standard_normal(16)
        h0_norm = np.linalg.norm(h)
        for t in range(1, 201):
            h = entries * h
            assert np.linalg.norm(h) <= rho ** t * h0_norm * (1.0 + 1e-12)


class TestLyapunov:
    def test_scalar_geometric_series(self):
        w = solve_discrete_lyapunov(Matrix.diagonal([0.5]), Matrix.dense([[1.0]]))
        assert w.data[0, 0] == pytest.approx(4.0 / 3.0, abs=1e-12)

    def test_diagonal_against_series_oracle(self):
        rng = np.random.default_rng(17)
        a = rng.uniform(-0.95, 0.95, 16)
        b = rng.standard_normal(16)
        w = solve_discrete_lyapunov(Matrix.diagonal(a), Matrix.dense(b[:, None])).data
        # literal truncated-series accumulation, 1e4 terms
        oracle = np.zeros((16, 16))
        pow_a = np.ones(16)
        for _ in range(10_000):
            vec = pow_a * b
            oracle += np.outer(vec, vec)
            pow_a *= a
        assert np.max(np.abs(w - oracle)) < 1e-8

    def test_divergent_operator_rejected(self):
        with pytest.raises(LinalgError, match="Gramian diverges"):
            solve_discrete_lyapunov(Matrix.diagonal([1.01]), Matrix.dense([[1.0]]))

    def test_residual_and_symmetry_on_random_stable(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            n = int(rng.integers(2, 9))
            a = rng.standard_normal((n, n))
            a *= 0.8 / eig_radius_exact(Matrix.dense(a)).rho_hat
            b = rng.standard_normal((n, 2))
            w = solve_discrete_lyapunov(Matrix.dense(a), Matrix.dense(b)).data
            resid = w - a @ w @ a.T - b @ b.T
            assert np.linalg.norm(resid, "fro") < 1e-10
            assert np.max(np.abs(w - w.T)) < 1e-12
            assert np.min(np.linalg.eigvalsh(w)) > -1e-10


class TestConditionNumber:
    def test_diagonal_is_one(self):
        assert condition_number(Matrix.diagonal([0.9, 0.5])) == 1.0

    def test_symmetric_is_one(self):
        rng = np.random.default_rng(2)
        s = rng.standard_normal((3, 3))
        assert condition_number(Matrix.dense(s + s.T)) == 1.0

    def test_triangular_against_jacobi_svd_oracle(self):
        m = np.array([[1.0, 10.0], [0.0, 0.5]])
        kappa = condition_number(Matrix.dense(m))
        # eigenvectors of the triangular matrix, normalized columns
        v1 = np.array([1.0, 0.0])
        v2 = np.array([10.0, 0.5 - 1.0])
        v2 = v2 / np.linalg.norm(v2)
        svals = jacobi_svd_singular_values(np.column_stack([v1, v2]))
        assert kappa == pytest.approx(svals[0] / svals[-1], rel=1e-6)

    def test_defective_matrix_rejected(self):
        with pytest.raises(LinalgError, match="defective"):
            condition_number(Matrix.dense([[1.0, 1.0], [0.0, 1.0]]))

    def test_complex_spectrum_supported(self):
        th = 0.4
        rot = np.array([[math.cos(th), -math.sin(th)],
                        [math.sin(th), math.cos(th)]])
        # rotations are normal, so the eigenvector matrix is unitary
        assert condition_number(Matrix.dense(rot)) == pytest.approx(1.0, rel=1e-6)


class TestEigvals:
    def test_full_spectrum_matches_numpy(self):
        rng = np.random.default_rng(13)
        a = rng.standard_normal((7, 7))
        mine = sorted(eigvals(Matrix.dense(a)), key=lambda z: (z.real, z.imag))
        ref = sorted(np.linalg.eigvals(a), key=lambda z: (z.real, z.imag))
        for m, r in zip(mine, ref):
            assert abs(m - r) < 1e-8
