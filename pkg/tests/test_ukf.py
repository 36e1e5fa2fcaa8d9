import math

import numpy as np
import pytest

from pdyffusion.ukf import (
    GaussianBelief,
    UkfParams,
    predict,
    sigma_points,
    sigma_weights,
    ukf_nll,
    update,
)


def random_psd(n, seed, lo=0.5, hi=2.0):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = rng.uniform(lo, hi, size=n)
    return (Q * w) @ Q.T


def classical_kf_step(m, P, A, b, H, Q, R, z):
    """Hand-rolled linear Kalman filter, the oracle for UKF exactness."""
    m_pred = A @ m + b
    P_pred = A @ P @ A.T + Q
    S = H @ P_pred @ H.T + R
    K = P_pred @ H.T @ np.linalg.inv(S)
    m_post = m_pred + K @ (z - H @ m_pred)
    P_post = P_pred - K @ S @ K.T
    return m_post, P_post


class TestSigmaPoints:
    def test_hand_computed_weights_n1(self):
        p = UkfParams(alpha_u=1.0, beta_u=2.0, kappa_u=0.0)
        b = GaussianBelief(np.array([2.0]), np.array([[1.0]]))
        sig = sigma_points(b, p)
        assert np.allclose(sig.points.ravel(), [2.0, 3.0, 1.0])
        assert np.array_equal(sig.w_m, [0.0, 0.5, 0.5])
        assert np.array_equal(sig.w_c, [2.0, 0.5, 0.5])

    def test_weight_identities(self):
        for n in [1, 3, 8]:
            p = UkfParams(alpha_u=0.5, beta_u=2.0, kappa_u=0.0)
            w_m, w_c = sigma_weights(n, p)
            assert w_m.sum() == pytest.approx(1.0, abs=1e-12)
            assert w_c.sum() == pytest.approx(
                1.0 + (1.0 - p.alpha_u**2 + p.beta_u), abs=1e-12
            )

    def test_degenerate_covariance_clamped(self):
        p = UkfParams(alpha_u=1.0, beta_u=2.0, kappa_u=0.0)
        n = 3
        b = GaussianBelief(np.ones(n), np.zeros((n, n)))
        sig = sigma_points(b, p)
        lam = p.lambda_u(n)
        spread = np.abs(sig.points - b.mean).max()
        assert spread <= math.sqrt((n + lam) * 1e-12) + 1e-15

    def test_weighted_mean_and_cov_reconstruct(self):
        p = UkfParams(alpha_u=1.0, beta_u=0.0, kappa_u=0.0)
        P = random_psd(3, seed=0)
        b = GaussianBelief(np.array([1.0, -2.0, 0.5]), P)
        sig = sigma_points(b, p)
        assert np.allclose(sig.w_m @ sig.points, b.mean, atol=1e-10)
        D = sig.points - sig.w_m @ sig.points
        cov = (D * sig.w_c[:, None]).T @ D
        assert np.allclose(cov, P, atol=1e-8)

    def test_scaling_must_be_positive(self):
        # n + lambda = alpha^2 (n + kappa) turns nonpositive only for kappa <= -n
        p = UkfParams(alpha_u=1.0, beta_u=2.0, kappa_u=-6.0)
        with pytest.raises(ValueError):
            p.lambda_u(5)


class TestPredict:
    def test_identity_dynamics_keeps_belief(self):
        p = UkfParams(q_scale=1e-15)
        P = random_psd(4, seed=1)
        b = GaussianBelief(np.arange(4.0), P)
        out = predict(b, lambda X: X, p)
        assert np.allclose(out.mean, b.mean, atol=1e-10)
        assert np.allclose(out.cov, P, atol=1e-10)

    def test_linear_dynamics_closed_form(self):
        rng = np.random.default_rng(2)
        n = 4
        A = rng.standard_normal((n, n)) * 0.5
        c = rng.standard_normal(n)
        P = random_psd(n, seed=3)
        b = GaussianBelief(rng.standard_normal(n), P)
        p = UkfParams(q_scale=1e-3)
        out = predict(b, lambda X: X @ A.T + c, p)
        assert np.allclose(out.mean, A @ b.mean + c, atol=1e-8)
        assert np.allclose(out.cov, A @ P @ A.T + 1e-3 * np.eye(n), atol=1e-8)

    def test_square_matches_gaussian_moment(self):
        # E[x^2] = 1 for x ~ N(0, 1); the unscented estimate is exact here
        p = UkfParams(alpha_u=1.0, beta_u=2.0, kappa_u=0.0, q_scale=1e-15)
        b = GaussianBelief(np.array([0.0]), np.array([[1.0]]))
        out = predict(b, lambda X: X**2, p)
        assert out.mean[0] == pytest.approx(1.0, abs=1e-12)

    def test_nonfinite_dynamics_rejected(self):
        p = UkfParams()
        b = GaussianBelief(np.zeros(2), np.eye(2))
        with pytest.raises(ValueError):
            predict(b, lambda X: np.full_like(X, np.nan), p)


class TestUpdate:
    def test_zero_innovation_keeps_mean_and_shrinks_cov(self):
        p = UkfParams(r_scale=0.5)
        P = random_psd(3, seed=4)
        b = GaussianBelief(np.array([1.0, 2.0, 3.0]), P)
        sig = sigma_points(b, p)
        zhat = sig.w_m @ sig.points  # h = identity
        out = update(b, zhat, lambda X: X, p)
        assert np.allclose(out.mean, b.mean, atol=1e-10)
        diff_eigs = np.linalg.eigvalsh(b.cov - out.cov)
        assert diff_eigs.min() > -1e-10

    def test_linear_system_matches_classical_kf_20_steps(self):
        rng = np.random.default_rng(5)
        n, m = 4, 3
        A = 0.9 * np.linalg.qr(rng.standard_normal((n, n)))[0]
        c = 0.1 * rng.standard_normal(n)
        H = rng.standard_normal((m, n))
        Q = 1e-3 * np.eye(n)
        R = 1e-2 * np.eye(m)
        p = UkfParams(alpha_u=0.9, beta_u=2.0, kappa_u=0.0, q_scale=1e-3, r_scale=1e-2)

        mean = np.zeros(n)
        cov = random_psd(n, seed=6)
        kf_mean, kf_cov = mean.copy(), cov.copy()
        belief = GaussianBelief(mean, cov)
        x_true = rng.standard_normal(n)
        for step in range(20):
            x_true = A @ x_true + c + 0.03 * rng.standard_normal(n)
            z = H @ x_true + 0.1 * rng.standard_normal(m)
            belief = predict(belief, lambda X: X @ A.T + c, p, q_cov=Q)
            belief = update(belief, z, lambda X: X @ H.T, p, r_cov=R)
            kf_mean, kf_cov = classical_kf_step(kf_mean, kf_cov, A, c, H, Q, R, z)
            assert np.allclose(belief.mean, kf_mean, atol=1e-8)
            assert np.allclose(belief.cov, kf_cov, atol=1e-8)

    def test_huge_measurement_noise_keeps_prior(self):
        p = UkfParams(r_scale=1e12)
        P = random_psd(3, seed=7)
        b = GaussianBelief(np.array([1.0, -1.0, 2.0]), P)
        z = np.array([5.0, 5.0, 5.0])
        out = update(b, z, lambda X: X, p)
        assert np.allclose(out.mean, b.mean, rtol=1e-4, atol=1e-4)
        assert np.allclose(out.cov, b.cov, rtol=1e-4, atol=1e-4)

    def test_trace_never_increases(self):
        rng = np.random.default_rng(8)
        p = UkfParams(r_scale=0.3)
        for seed in range(5):
            b = GaussianBelief(rng.standard_normal(3), random_psd(3, seed=seed))
            z = rng.standard_normal(3)
            out = update(b, z, lambda X: X, p)
            assert np.trace(out.cov) <= np.trace(b.cov) * (1.0 + 1e-10)


class TestNll:
    def test_zero_error_special_determinant_gives_zero(self):
        # |P| = (2pi)^-d cancels the constant exactly
        d = 3
        x = np.array([0.5, -1.0, 2.0])
        b = GaussianBelief(x.copy(), np.eye(d) / (2.0 * math.pi))
        assert abs(ukf_nll(x, b)) < 1e-12

    def test_scalar_standard_normal(self):
        b = GaussianBelief(np.array([0.0]), np.array([[1.0]]))
        assert ukf_nll(np.array([0.0]), b) == pytest.approx(
            0.5 * math.log(2.0 * math.pi), abs=1e-12
        )

    def test_matches_dense_inverse_oracle(self):
        rng = np.random.default_rng(9)
        for seed in range(5):
            d = 5
            P = random_psd(d, seed=seed + 20)
            mu = rng.standard_normal(d)
            x = rng.standard_normal(d)
            b = GaussianBelief(mu, P)
            e = x - mu
            direct = (
                0.5 * d * math.log(2.0 * math.pi)
                + 0.5 * math.log(np.linalg.det(P))
                + 0.5 * e @ np.linalg.inv(P) @ e
            )
            assert ukf_nll(x, b) == pytest.approx(direct, abs=1e-8)

    def test_lower_bound_and_equality_condition(self):
        d = 4
        P = random_psd(d, seed=30)
        mu = np.zeros(d)
        b = GaussianBelief(mu, P)
        floor = 0.5 * d * math.log(2.0 * math.pi) + 0.5 * math.log(np.linalg.det(P))
        assert ukf_nll(mu, b) == pytest.approx(floor, abs=1e-10)
        assert ukf_nll(mu + 0.1, b) > floor


class TestBeliefValidation:
    def test_asymmetric_cov_rejected(self):
        P = np.eye(2)
        P[0, 1] = 0.5
        with pytest.raises(ValueError):
            GaussianBelief(np.zeros(2), P)

    def test_dimension_cap(self):
        n = 257
        with pytest.raises(ValueError):
            GaussianBelief(np.zeros(n), np.eye(n))
