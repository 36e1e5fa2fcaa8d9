"""Executable numerical verification of the framework's analysis results.

Each check is a small self-contained experiment with an explicit
tolerance; ``run_all`` gathers them into a pass/fail report:

* log-determinant difference as a trace quadrature (random PD pairs)
* uniform spectral inclusion of near-limit covariances (Weyl bound)
* exact per-mode variance attenuation of the resolvent filter
* MMD ordering of filtered vs unfiltered interpolation errors
* the zero-loss identity and sigma-point collapse of the forecaster loss
* positive semidefiniteness of the Matérn Gram matrix and spectrum
"""

import math
from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, laplacian_eigenvalues
from .metrics import resolvent_filter, verify_theorem_ordering
from .spde import MaternParams, kernel_gram_psd_check, matern_spectral_density
from .ukf import GaussianBelief, UkfParams, predict, ukf_nll


@dataclass
class CheckResult:
    name: str
    passed: bool
    tolerance: str
    observed: str

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: observed {self.observed} (tolerance {self.tolerance})"


def _random_pd(rng, d, lo, hi):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    w = rng.uniform(lo, hi, size=d)
    return (Q * w) @ Q.T, w


def _gauss_legendre_composite(n_panels=32, n_nodes=4):
    """Composite Gauss-Legendre rule on [0, 1]: n_panels * n_nodes points."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    edges = np.linspace(0.0, 1.0, n_panels + 1)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        half = 0.5 * (b - a)
        nodes.append(half * x + 0.5 * (a + b))
        weights.append(half * w)
    return np.concatenate(nodes), np.concatenate(weights)


def check_logdet_quadrature(n_pairs=50, max_dim=6, seed=0):
    """log|A| - log|B| equals the 128-node quadrature of the trace integrand."""
    rng = np.random.default_rng(seed)
    nodes, weights = _gauss_legendre_composite()
    worst = 0.0
    for _ in range(n_pairs):
        d = int(rng.integers(2, max_dim + 1))
        A, _ = _random_pd(rng, d, 0.5, 3.0)
        B, _ = _random_pd(rng, d, 0.5, 3.0)
        direct = math.log(np.linalg.det(A)) - math.log(np.linalg.det(B))
        diff = A - B
        quad = sum(
            w * np.trace(np.linalg.solve(B + s * diff, diff))
            for s, w in zip(nodes, weights)
        )
        worst = max(worst, abs(direct - quad))
    return CheckResult(
        name="logdet difference vs trace quadrature",
        passed=worst < 1e-6,
        tolerance="< 1e-6",
        observed=f"max |direct - quadrature| = {worst:.3e}",
    )


def check_spectral_inclusion(n_pairs=50, seed=0):
    """||P - Q||_2 < m/2 with spec(Q) in [m, M] forces spec(P) in [m/2, 2M]."""
    rng = np.random.default_rng(seed)
    ok = 0
    margin = np.inf
    for _ in range(n_pairs):
        d = int(rng.integers(2, 7))
        m = float(rng.uniform(0.5, 1.0))
        M = float(rng.uniform(2.0, 4.0))
        Q, _ = _random_pd(rng, d, m, M)
        E = rng.standard_normal((d, d))
        E = 0.5 * (E + E.T)
        E *= rng.uniform(0.1, 0.9) * (m / 2.0) / np.linalg.norm(E, 2)
        P = Q + E
        wp = np.linalg.eigvalsh(P)
        wq = np.linalg.eigvalsh(Q)
        lo, hi = m / 2.0, 2.0 * M
        inside = (
            wp.min() >= lo - 1e-12
            and wp.max() <= hi + 1e-12
            and wq.min() >= lo - 1e-12
            and wq.max() <= hi + 1e-12
        )
        ok += inside
        margin = min(margin, wp.min() - lo, hi - wp.max())
    return CheckResult(
        name="uniform spectral inclusion under small perturbation",
        passed=ok == n_pairs,
        tolerance=f"{n_pairs}/{n_pairs} constructed pairs inside [m/2, 2M]",
        observed=f"{ok}/{n_pairs} inside, smallest margin {margin:.3e}",
    )


def check_mode_filter_variance(lambda_reg=0.7, seed=0, n_draws=4000):
    """Per-mode variance ratio of the resolvent filter is (1+lambda*mu)^-2."""
    spec = GridSpec((64,), (1.0,), "periodic")
    mu = laplacian_eigenvalues(spec)
    filt = resolvent_filter(lambda_reg, mu)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((n_draws, mu.size))
    ratio = (xi * filt).var(axis=0) / xi.var(axis=0)
    dev = np.abs(ratio - filt**2) / filt**2
    shrinks = np.all(filt**2 <= 1.0)
    return CheckResult(
        name="resolvent filter per-mode variance ratio",
        passed=bool(dev.max() < 1e-13 and shrinks),
        tolerance="relative deviation from (1+lambda*mu)^-2 < 1e-13, ratio <= 1",
        observed=f"max relative deviation {dev.max():.3e}",
    )


def check_mmd_ordering(lambdas=(0.2, 1.0), n_seeds=5, n_samples=2000):
    """Filtered errors are no farther from the truth in MMD, every seed."""
    spec = GridSpec((64,), (1.0,), "periodic")
    results = []
    for lam in lambdas:
        for seed in range(n_seeds):
            rep = verify_theorem_ordering(spec, lam, n_samples, seed)
            results.append(rep["per_mode_ok"] and rep["ordering_ok"])
    total = len(results)
    good = sum(results)
    return CheckResult(
        name="MMD ordering of filtered interpolation errors",
        passed=good == total,
        tolerance=f"ordering holds in {total}/{total} (lambda, seed) runs",
        observed=f"{good}/{total} runs ordered",
    )


def check_zero_loss_construction(d=4, seed=0):
    """Zero error and |P| = (2pi)^-d make the combined loss vanish."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(d)
    belief = GaussianBelief(x.copy(), np.eye(d) / (2.0 * math.pi))
    mse = 0.0  # the predictor is exact by construction
    loss = mse + ukf_nll(x, belief)
    return CheckResult(
        name="forecaster zero-loss construction",
        passed=abs(loss) < 1e-10,
        tolerance="|loss| < 1e-10",
        observed=f"|loss| = {abs(loss):.3e}",
    )


def check_sigma_collapse(d=6, seed=0):
    """Clamped noise scales and an exact predictor collapse the sigma spread."""
    rng = np.random.default_rng(seed)
    p = UkfParams(p0_scale=1e-15, q_scale=1e-15)
    belief0 = GaussianBelief(rng.standard_normal(d), 1e-15 * np.eye(d))
    out = predict(belief0, lambda X: X, p, q_cov=np.zeros((d, d)))
    trace = float(np.trace(out.cov))
    return CheckResult(
        name="sigma-point covariance collapse",
        passed=trace < 1e-8,
        tolerance="weighted sigma covariance trace < 1e-8",
        observed=f"trace = {trace:.3e}",
    )


def check_gram_psd(n_sets=20, n_points=100, seed=0):
    """Minimum Matérn Gram eigenvalue stays above -1e-8 * trace."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    ok = 0
    total = 0
    for nu in (0.5, 1.5, 2.5):
        p = MaternParams(sigma_c2=1.0, nu=nu, rho=0.3, d=2)
        for _ in range(n_sets):
            pts = rng.uniform(0.0, 1.0, size=(n_points, 2))
            mn = kernel_gram_psd_check(pts, p)
            trace = n_points * p.sigma_c2
            ok += mn >= -1e-8 * trace
            total += 1
            worst = min(worst, mn / trace)
    return CheckResult(
        name="Matérn Gram positive semidefiniteness",
        passed=ok == total,
        tolerance="min eigenvalue >= -1e-8 * trace on every set",
        observed=f"{ok}/{total} sets, worst eig/trace = {worst:.3e}",
    )


def check_spectrum_sign():
    """The Matérn spectral density is nonnegative at every tested frequency."""
    k = np.linspace(0.0, 500.0, 20001)
    worst = np.inf
    for nu in (0.5, 1.5, 2.5):
        p = MaternParams(sigma_c2=1.3, nu=nu, rho=0.4, d=2)
        worst = min(worst, matern_spectral_density(k, p).min())
    return CheckResult(
        name="Matérn spectral density nonnegative",
        passed=worst >= 0.0,
        tolerance="S(k) >= 0 at every evaluated frequency",
        observed=f"min S(k) = {worst:.3e}",
    )


def run_all(seed=0):
    """Every numerical verification, in a stable order."""
    return [
        check_gram_psd(seed=seed),
        check_spectrum_sign(),
        check_logdet_quadrature(seed=seed),
        check_spectral_inclusion(seed=seed),
        check_mode_filter_variance(seed=seed),
        check_mmd_ordering(),
        check_zero_loss_construction(seed=seed),
        check_sigma_collapse(seed=seed),
    ]
