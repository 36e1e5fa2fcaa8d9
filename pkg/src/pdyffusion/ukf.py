"""Unscented Kalman Filter: sigma points, predict, update, Gaussian NLL.

Transition and measurement functions receive the full stack of sigma
points as an (2n+1, n) array and must return one row per point, so a
batched network forward can serve as the dynamics directly.  Covariances
are kept symmetric positive semidefinite by eigenvalue clamping, which
lets the filter keep running as sigma points collapse toward a
deterministic trajectory.
"""

import math
from dataclasses import dataclass

import numpy as np

# relative eigenvalue floor applied when re-symmetrizing covariances
CLAMP_REL = 1e-12

# hard cap on the state dimension of the full-covariance filter (O(d^3) updates)
MAX_STATE_DIM = 256


@dataclass(frozen=True)
class UkfParams:
    """Sigma-point scaling and isotropic noise scales."""

    alpha_u: float = 0.5
    beta_u: float = 2.0
    kappa_u: float = 0.0
    q_scale: float = 1e-4
    r_scale: float = 1e-2
    p0_scale: float = 1e-2

    def __post_init__(self):
        if self.q_scale <= 0 or self.r_scale <= 0 or self.p0_scale <= 0:
            raise ValueError("q_scale, r_scale and p0_scale must be positive")

    def lambda_u(self, n):
        lam = self.alpha_u**2 * (n + self.kappa_u) - n
        if n + lam <= 0:
            raise ValueError(
                f"n + lambda = {n + lam} must be positive (alpha={self.alpha_u}, "
                f"kappa={self.kappa_u}, n={n})"
            )
        return lam


@dataclass
class GaussianBelief:
    """Mean vector plus full covariance over the flattened state."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        n = self.mean.size
        if self.mean.ndim != 1 or self.cov.shape != (n, n):
            raise ValueError("mean must be a vector and cov a matching square matrix")
        if n > MAX_STATE_DIM:
            raise ValueError(
                f"state dimension {n} exceeds the full-covariance UKF cap {MAX_STATE_DIM}"
            )
        scale = max(np.abs(self.cov).max(), 1.0)
        if np.abs(self.cov - self.cov.T).max() > 1e-10 * scale:
            raise ValueError("covariance must be symmetric")

    @property
    def n(self):
        return self.mean.size


@dataclass
class SigmaSet:
    """2n+1 sigma points with their mean and covariance weights."""

    points: np.ndarray
    w_m: np.ndarray
    w_c: np.ndarray


def symmetrize(P):
    return 0.5 * (P + P.T)


def clamp_psd(P, rel=CLAMP_REL):
    """Raise eigenvalues below rel*trace (or rel, for a zero matrix) to the floor."""
    P = symmetrize(P)
    tr = np.trace(P)
    floor = rel * tr if tr > 0 else rel
    w, V = np.linalg.eigh(P)
    if w[0] >= floor:
        return P
    w = np.maximum(w, floor)
    return symmetrize((V * w) @ V.T)


def sqrt_psd(P, rel=CLAMP_REL):
    """Symmetric matrix square root with the same eigenvalue clamping."""
    P = symmetrize(P)
    tr = np.trace(P)
    floor = rel * tr if tr > 0 else rel
    w, V = np.linalg.eigh(P)
    if w[0] < -1e-6 * max(tr, 1.0):
        raise ValueError("covariance is indefinite beyond tolerance")
    w = np.sqrt(np.maximum(w, floor))
    return symmetrize((V * w) @ V.T)


def sigma_weights(n, p):
    lam = p.lambda_u(n)
    w_m = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    w_c = w_m.copy()
    w_m[0] = lam / (n + lam)
    w_c[0] = lam / (n + lam) + (1.0 - p.alpha_u**2 + p.beta_u)
    return w_m, w_c


def sigma_points(b, p):
    """Deterministic sigma points of a Gaussian belief."""
    n = b.n
    lam = p.lambda_u(n)
    S = sqrt_psd((n + lam) * b.cov)
    points = np.empty((2 * n + 1, n))
    points[0] = b.mean
    points[1 : n + 1] = b.mean + S.T
    points[n + 1 :] = b.mean - S.T
    w_m, w_c = sigma_weights(n, p)
    return SigmaSet(points=points, w_m=w_m, w_c=w_c)


def _weighted_moments(Y, w_m, w_c):
    mean = w_m @ Y
    D = Y - mean
    cov = (D * w_c[:, None]).T @ D
    return mean, cov


def predict(b, f, p, q_cov=None):
    """Propagate a belief through the dynamics ``f`` (batched over sigma points)."""
    sig = sigma_points(b, p)
    Y = np.asarray(f(sig.points), dtype=np.float64)
    if Y.shape != sig.points.shape:
        raise ValueError("transition function must map (2n+1, n) to (2n+1, n)")
    if not np.all(np.isfinite(Y)):
        raise ValueError("transition function produced nonfinite sigma points")
    mean, cov = _weighted_moments(Y, sig.w_m, sig.w_c)
    if q_cov is None:
        q_cov = p.q_scale * np.eye(b.n)
    return GaussianBelief(mean=mean, cov=symmetrize(cov + q_cov))


def update(b_pred, z, h, p, r_cov=None):
    """Measurement update; ``h`` is batched over sigma points like ``f``."""
    z = np.asarray(z, dtype=np.float64)
    sig = sigma_points(b_pred, p)
    Z = np.asarray(h(sig.points), dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] != sig.points.shape[0]:
        raise ValueError("measurement function must return one row per sigma point")
    m = Z.shape[1]
    if z.shape != (m,):
        raise ValueError(f"measurement length {z.shape} != model output dim {m}")
    zhat = sig.w_m @ Z
    Dz = Z - zhat
    Dx = sig.points - b_pred.mean
    if r_cov is None:
        r_cov = p.r_scale * np.eye(m)
    S = (Dz * sig.w_c[:, None]).T @ Dz + r_cov
    P_xz = (Dx * sig.w_c[:, None]).T @ Dz
    try:
        G = np.linalg.solve(S.T, P_xz.T).T
    except np.linalg.LinAlgError as exc:
        raise ValueError("innovation covariance is singular beyond regularization") from exc
    mean = b_pred.mean + G @ (z - zhat)
    cov = clamp_psd(b_pred.cov - G @ S @ G.T)
    return GaussianBelief(mean=mean, cov=cov)


def ukf_nll(x_true, b):
    """Gaussian negative log-likelihood of ``x_true`` under the belief.

    Computed through a Cholesky factor so the log-determinant and the
    Mahalanobis term stay stable for small covariances.
    """
    x_true = np.asarray(x_true, dtype=np.float64)
    d = b.n
    if x_true.shape != (d,):
        raise ValueError("state vector length does not match the belief")
    P = symmetrize(b.cov)
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        P = clamp_psd(P)
        try:
            L = np.linalg.cholesky(P)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite after clamping") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    e = x_true - b.mean
    half = np.linalg.solve(L, e)
    return 0.5 * d * math.log(2.0 * math.pi) + 0.5 * logdet + 0.5 * float(half @ half)
