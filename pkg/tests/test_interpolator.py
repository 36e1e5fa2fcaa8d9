import numpy as np
import pytest

from pdyffusion.datasets import Trajectory, gen_wave1d
from pdyffusion.grid import Field, GridSpec, from_spectral, laplacian_eigenvalues
from pdyffusion.interpolator import (
    InterpConfig,
    InterpModel,
    interp_loss,
    interpolate,
    train_interpolator,
)
from pdyffusion.spde import EllipticOpParams, pde_residual_sq


def small_model(bc="dirichlet", n=8, channels=1, lambda_reg=0.5, horizon=6,
                hidden=(6,), embed=4):
    spec = GridSpec((n,), (1.0,), bc)
    cfg = InterpConfig(
        op=EllipticOpParams(l=0.1, alpha=2.0, bc=bc),
        lambda_reg=lambda_reg,
        horizon=horizon,
        hidden_dims=hidden,
        time_embed_dim=embed,
    )
    return InterpModel(cfg=cfg, grid=spec, channels=channels)


def random_batch(model, size, seed):
    rng = np.random.default_rng(seed)
    batch = []
    shape = (model.channels, *model.grid.dims)
    for _ in range(size):
        batch.append(
            (
                Field(model.grid, rng.standard_normal(shape)),
                Field(model.grid, rng.standard_normal(shape)),
                Field(model.grid, rng.standard_normal(shape)),
                int(rng.integers(1, model.cfg.horizon)),
            )
        )
    return batch


def linear_trajectories(spec, n_traj, n_frames, seed):
    """Frames exactly linear in time between two random smooth endpoints."""
    rng = np.random.default_rng(seed)
    x = np.arange(spec.dims[0]) / spec.dims[0]
    out = []
    for _ in range(n_traj):
        a = sum(rng.normal() * np.sin(2 * np.pi * k * x + rng.uniform(0, np.pi))
                for k in range(1, 3))
        b = sum(rng.normal() * np.sin(2 * np.pi * k * x + rng.uniform(0, np.pi))
                for k in range(1, 3))
        ts = np.linspace(0.0, 1.0, n_frames)[:, None]
        frames = (1 - ts) * a[None, :] + ts * b[None, :]
        out.append(Trajectory(spec=spec, dt=1.0, frames=frames[:, None, :]))
    return out


class TestInterpLoss:
    def test_zero_net_zero_targets_both_terms_vanish(self):
        model = small_model(bc="dirichlet", lambda_reg=1.0)
        params = np.zeros_like(model.init())
        zero = Field(model.grid, np.zeros((1, 8)))
        batch = [(zero, zero, zero, 2)]
        loss, grad, (recon, pde) = interp_loss(model, params, batch)
        assert loss == 0.0 and recon == 0.0 and pde == 0.0

    def test_lambda_zero_reduces_to_plain_mse(self):
        model0 = small_model(lambda_reg=0.0)
        params = model0.init(seed=1)
        batch = random_batch(model0, 4, seed=2)
        loss, _, (recon, pde) = interp_loss(model0, params, batch)
        assert pde == 0.0
        assert loss == recon

    def test_loss_nondecreasing_in_lambda(self):
        params = None
        losses = []
        for lam in [0.0, 0.1, 0.5, 2.0]:
            model = small_model(lambda_reg=lam)
            if params is None:
                params = model.init(seed=3)
            batch = random_batch(model, 4, seed=4)
            loss, _, _ = interp_loss(model, params, batch)
            losses.append(loss)
        assert np.all(np.diff(losses) >= 0)

    def test_index_out_of_range_rejected(self):
        model = small_model(horizon=6)
        params = model.init()
        f = Field(model.grid, np.zeros((1, 8)))
        with pytest.raises(ValueError):
            interp_loss(model, params, [(f, f, f, 6)])
        with pytest.raises(ValueError):
            interp_loss(model, params, [(f, f, f, 0)])

    @pytest.mark.parametrize("bc", ["periodic", "dirichlet", "neumann"])
    def test_composite_gradient_matches_finite_differences(self, bc):
        model = small_model(bc=bc, lambda_reg=0.7)
        params = model.init(seed=5)
        batch = random_batch(model, 3, seed=6)
        _, grad, _ = interp_loss(model, params, batch)

        h = 1e-5
        fd = np.zeros_like(params)
        for j in range(params.size):
            up, dn = params.copy(), params.copy()
            up[j] += h
            dn[j] -= h
            fd[j] = (interp_loss(model, up, batch)[0]
                     - interp_loss(model, dn, batch)[0]) / (2 * h)
        denom = np.maximum(np.maximum(np.abs(grad), np.abs(fd)), 1e-10)
        assert np.max(np.abs(grad - fd) / denom) < 1e-4


class TestInterpolate:
    def test_zero_params_zero_field(self):
        model = small_model()
        params = np.zeros_like(model.init())
        f = Field(model.grid, np.ones((1, 8)))
        out = interpolate(model, params, f, f, 2)
        assert np.all(out.values == 0.0)

    def test_deterministic(self):
        model = small_model()
        params = model.init(seed=7)
        rng = np.random.default_rng(8)
        a = Field(model.grid, rng.standard_normal((1, 8)))
        b = Field(model.grid, rng.standard_normal((1, 8)))
        o1 = interpolate(model, params, a, b, 3)
        o2 = interpolate(model, params, a, b, 3)
        assert np.array_equal(o1.values, o2.values)

    def test_learns_linear_in_time_data(self):
        spec = GridSpec((16,), (1.0,), "periodic")
        trajs = linear_trajectories(spec, 200, 12, seed=0)
        cfg = InterpConfig(
            op=EllipticOpParams(l=0.02, alpha=2.0, bc="periodic"),
            lambda_reg=0.0,
            horizon=8,
            batch_size=32,
            steps=4000,
            lr=3e-2,
            momentum=0.9,
            hidden_dims=(128,),
            time_embed_dim=8,
        )
        model, params, log = train_interpolator(trajs, cfg, seed=1)
        held = linear_trajectories(spec, 4, 12, seed=99)
        errs = []
        for traj in held:
            for i in [2, 4, 6]:
                pred = interpolate(model, params, traj.frame(0), traj.frame(8), i)
                target = traj.frames[i, 0]
                errs.append(np.sqrt(np.mean((pred.values[0] - target) ** 2)))
        assert np.mean(errs) < 0.1


class TestTraining:
    def test_zero_steps_returns_initialization(self):
        t = gen_wave1d(16, 24, c=1.0, seed=0)
        cfg = InterpConfig(
            op=EllipticOpParams(l=0.05, alpha=2.0, bc="periodic"),
            steps=0, horizon=8, hidden_dims=(16,),
        )
        model, params, log = train_interpolator([t], cfg, seed=0)
        assert log == []
        assert np.array_equal(params, model.init())

    def test_descends_on_toy_wave(self):
        trajs = [gen_wave1d(16, 40, c=1.0, seed=s) for s in range(8)]
        cfg = InterpConfig(
            op=EllipticOpParams(l=0.05, alpha=2.0, bc="periodic"),
            lambda_reg=0.0, horizon=8, batch_size=16, steps=300,
            lr=5e-3, hidden_dims=(64,),
        )
        _, _, log = train_interpolator(trajs, cfg, seed=3)
        first = np.mean([row[1] for row in log[:20]])
        last = np.mean([row[1] for row in log[-20:]])
        assert last < 0.5 * first

    def test_regularizer_lowers_output_residual(self):
        # paired seeds: lambda = 0.2 run should not raise the operator
        # residual of its outputs relative to the lambda = 0 run
        trajs = [gen_wave1d(16, 40, c=1.0, seed=s) for s in range(8)]
        op = EllipticOpParams(l=0.05, alpha=2.0, bc="periodic")
        results = {}
        for lam in [0.0, 0.2]:
            cfg = InterpConfig(op=op, lambda_reg=lam, horizon=8, batch_size=16,
                               steps=300, lr=5e-3, hidden_dims=(64,))
            model, params, _ = train_interpolator(trajs, cfg, seed=11)
            res = []
            for traj in trajs[:3]:
                out = interpolate(model, params, traj.frame(0), traj.frame(8), 4)
                res.append(pde_residual_sq(out, op))
            results[lam] = np.mean(res)
        assert results[0.2] <= results[0.0]


class TestCovarianceFilter:
    def test_mode_filter_shrinks_variance_exactly(self):
        # diagonal spectral noise filtered by 1/(1 + lambda*mu): the per-mode
        # variance ratio is (1 + lambda*mu)^-2, never above one
        spec = GridSpec((32,), (1.0,), "periodic")
        mu = laplacian_eigenvalues(spec)
        lam = 0.7
        v_base = 1.0 / (1.0 + mu)
        filt = 1.0 / (1.0 + lam * mu)
        rng = np.random.default_rng(0)
        xi = rng.standard_normal((4000, mu.size)) * np.sqrt(v_base)
        filtered = xi * filt
        var_base = xi.var(axis=0)
        var_phi = filtered.var(axis=0)
        ratio = var_phi / var_base
        assert np.allclose(ratio, filt**2, rtol=1e-12, atol=1e-15)
        assert np.all(var_phi <= var_base + 1e-15)

    def test_single_mode_quarter_ratio(self):
        # lambda = 1, mu = 1 -> ratio 1/4
        assert (1.0 / (1.0 + 1.0 * 1.0)) ** 2 == 0.25
