"""Stage-2 training of the forecaster with the UKF-augmented objective.

The loss combines the squared terminal-state error of the direct forecast
with the Gaussian negative log-likelihood of the unscented belief over the
terminal state.  The belief lives on the forecaster's input state (the
interpolated intermediate), is propagated through the network by sigma
points, and its covariance is treated as a constant of the current step:
gradients flow through the prediction error only, through every sigma
point and through the input-state construction, but not through the
covariance factorization or the log-determinant.

The input state for diffusion step n is the same one cold sampling would
visit: the conditioning frame itself at i_0 = 0, otherwise the frozen
interpolator applied to (x_t, F_theta(x_t, 0), i_n).
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from .grid import Field, GridSpec, from_flat
from .interpolator import InterpModel
from .nets import NetSpec, backward, forward, init_params, sgd_step
from .ukf import GaussianBelief, UkfParams, predict, sigma_weights, ukf_nll


@dataclass(frozen=True)
class ForecastConfig:
    """Diffusion schedule, UKF settings and optimizer knobs for stage 2."""

    schedule: tuple
    horizon: int
    ukf: UkfParams = UkfParams()
    use_ukf: bool = True
    batch_size: int = 8
    steps: int = 500
    lr: float = 1e-3
    momentum: float = 0.9
    hidden_dims: tuple = (128, 128)
    time_embed_dim: int = 8
    init_seed: int = 1

    def __post_init__(self):
        object.__setattr__(self, "schedule", tuple(int(i) for i in self.schedule))
        s = self.schedule
        if len(s) < 1 or s[0] != 0:
            raise ValueError("schedule must start at i_0 = 0")
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError("schedule must be strictly increasing")
        if s[-1] >= self.horizon:
            raise ValueError("schedule entries must stay below the horizon")


def uniform_schedule(n_steps, horizon):
    """The neutral mapping i_n = round(n*h/N)."""
    return tuple(int(round(n * horizon / n_steps)) for n in range(n_steps))


@dataclass
class ForecastModel:
    """Forecaster head bound to one grid."""

    cfg: ForecastConfig
    grid: GridSpec
    channels: int
    net: NetSpec = dc_field(init=False)

    def __post_init__(self):
        state = self.channels * self.grid.n_cells
        self.net = NetSpec(
            input_dim=state,
            hidden_dims=self.cfg.hidden_dims,
            output_dim=state,
            activation="tanh",
            time_embed_dim=self.cfg.time_embed_dim,
        )

    @property
    def state_size(self):
        return self.channels * self.grid.n_cells

    def init(self, seed=None):
        return init_params(self.net, self.cfg.init_seed if seed is None else seed)


def _check_step(model, i_n):
    if i_n not in model.cfg.schedule:
        raise ValueError(f"i_n={i_n} is not on the schedule {model.cfg.schedule}")


def forecast(model, theta, x_in, i_n):
    """Deterministic terminal-state prediction from one input field."""
    _check_step(model, i_n)
    y, _ = forward(model.net, theta, x_in.as_flat().ravel(), float(i_n))
    return from_flat(model.grid, y.reshape(model.channels, -1))


def _path_state(fmodel, theta, imodel, phi, xt_flat, i_n, want_tapes):
    """Input state for diffusion step n, with tapes when gradients are needed."""
    if i_n == 0:
        return xt_flat, None
    y0, tape_f0 = forward(fmodel.net, theta, xt_flat, 0.0)
    s, tape_interp = forward(
        imodel.net, phi, np.concatenate([xt_flat, y0]), float(i_n)
    )
    if not want_tapes:
        return s, None
    return s, (tape_f0, tape_interp)


def forecast_belief(fmodel, theta, imodel, phi, x_t, i_n):
    """Gaussian belief over the terminal state for diffusion step ``i_n``.

    The initial belief has the path state as mean and an isotropic
    covariance of scale p0; its sigma points are pushed through the
    forecaster by :func:`pdyffusion.ukf.predict`.
    """
    _check_step(fmodel, i_n)
    ukf = fmodel.cfg.ukf
    s, _ = _path_state(fmodel, theta, imodel, phi, x_t.as_flat().ravel(), i_n, False)
    belief0 = GaussianBelief(s, ukf.p0_scale * np.eye(fmodel.state_size))

    def step_fn(points):
        out, _ = forward(fmodel.net, theta, points, float(i_n))
        return out

    return predict(belief0, step_fn, ukf)


def _element_loss(fmodel, theta, imodel, phi, xt_flat, xth_flat, i_n):
    """Loss value, theta-gradient and (mse, nll) parts for one sample."""
    cfg = fmodel.cfg
    S = fmodel.state_size
    s, tapes = _path_state(fmodel, theta, imodel, phi, xt_flat, i_n, True)

    if cfg.use_ukf:
        ukf = cfg.ukf
        lam = ukf.lambda_u(S)
        spread = np.sqrt((S + lam) * ukf.p0_scale)
        points = np.tile(s, (2 * S + 1, 1))
        rows = np.arange(S)
        points[1 + rows, rows] += spread
        points[1 + S + rows, rows] -= spread
        Y, tape_sig = forward(fmodel.net, theta, points, float(i_n))
        w_m, w_c = sigma_weights(S, ukf)
        xhat = w_m @ Y
        D = Y - xhat
        P = (D * w_c[:, None]).T @ D + ukf.q_scale * np.eye(S)
        P = 0.5 * (P + P.T)
        belief = GaussianBelief(xhat, P)
        nll = ukf_nll(xth_flat, belief)
        diff0 = Y[0] - xth_flat
        mse = float(diff0 @ diff0)
        # adjoint on the UKF mean: Mahalanobis term with P held constant
        a_mean = -np.linalg.solve(P, xth_flat - xhat)
        A = w_m[:, None] * a_mean[None, :]
        A[0] += 2.0 * diff0
        gtheta, gin = backward(theta, tape_sig, A)
        a_s = gin.sum(axis=0)
    else:
        y, tape_y = forward(fmodel.net, theta, s, float(i_n))
        diff = y - xth_flat
        mse = float(diff @ diff)
        nll = 0.0
        gtheta, a_s = backward(theta, tape_y, 2.0 * diff)

    if tapes is not None:
        tape_f0, tape_interp = tapes
        # phi stays frozen; only the input-gradient of the interpolator is used
        _, gin_interp = backward(phi, tape_interp, a_s)
        a_y0 = gin_interp[S:]
        gtheta_chain, _ = backward(theta, tape_f0, a_y0)
        gtheta = gtheta + gtheta_chain
    return mse + nll, gtheta, mse, nll


def forecaster_loss(fmodel, theta, imodel, phi, batch, ns):
    """Batch loss = mean over elements of [mse + L_UKF] and its theta-gradient.

    ``batch`` is a list of (x_t, x_th) Field pairs; ``ns`` gives the
    diffusion step index n drawn per element.
    """
    if len(batch) != len(ns):
        raise ValueError("one diffusion step index is required per batch element")
    B = len(batch)
    total = 0.0
    total_mse = 0.0
    total_nll = 0.0
    grad = np.zeros_like(theta)
    for (x_t, x_th), n in zip(batch, ns):
        i_n = fmodel.cfg.schedule[n]
        el, g, mse, nll = _element_loss(
            fmodel,
            theta,
            imodel,
            phi,
            x_t.as_flat().ravel(),
            x_th.as_flat().ravel(),
            i_n,
        )
        total += el
        total_mse += mse
        total_nll += nll
        grad += g
    return total / B, grad / B, (total_mse / B, total_nll / B)


def sample_pairs(trajectories, horizon, batch_size, rng):
    """Draw (x_t, x_{t+h}) windows uniformly over the dataset."""
    batch = []
    for _ in range(batch_size):
        traj = trajectories[rng.integers(len(trajectories))]
        max_start = traj.n_frames - 1 - horizon
        if max_start < 0:
            raise ValueError(
                f"trajectory with {traj.n_frames} frames too short for horizon {horizon}"
            )
        t = int(rng.integers(max_start + 1))
        batch.append((traj.frame(t), traj.frame(t + horizon)))
    return batch


def train_forecaster(trajectories, imodel, phi, cfg, seed, theta0=None):
    """Stage-2 loop with the interpolator frozen; returns (model, theta, log).

    Log rows are (step, mse, nll, total); the step index n is resampled
    per batch element.  Deterministic in ``seed``.
    """
    if cfg.horizon != imodel.cfg.horizon:
        raise ValueError("forecaster and interpolator horizons must agree")
    first = trajectories[0]
    fmodel = ForecastModel(cfg=cfg, grid=first.spec, channels=first.channels)
    theta = fmodel.init() if theta0 is None else theta0.copy()
    rng = np.random.default_rng(seed)
    velocity = None
    log = []
    for step in range(cfg.steps):
        batch = sample_pairs(trajectories, cfg.horizon, cfg.batch_size, rng)
        ns = rng.integers(len(cfg.schedule), size=len(batch))
        loss, grad, (mse, nll) = forecaster_loss(fmodel, theta, imodel, phi, batch, ns)
        theta, velocity = sgd_step(theta, grad, cfg.lr, cfg.momentum, velocity)
        log.append((step, mse, nll, loss))
    return fmodel, theta, log
