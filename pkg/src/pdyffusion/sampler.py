"""Cold-sampling inference: alternate forecasting and interpolation.

One window refines the terminal-state forecast over the diffusion
schedule: at each step the forecaster re-predicts the terminal state from
the current intermediate, and the intermediate advances by the increment
of the interpolator between consecutive schedule indices.  Long-horizon
rollouts chain windows autoregressively, optionally applying a UKF
measurement update at each window boundary with the interpolator's
consistency estimate as a pseudo-measurement (no real future data exists
at inference time, so the measurement noise is inflated substantially).

The core loop is written against plain callables over flattened states so
analytic oracles can stand in for the trained networks in tests.
"""

from dataclasses import dataclass

import numpy as np

from .datasets import Trajectory
from .grid import Field
from .nets import forward
from .ukf import GaussianBelief, UkfParams, predict, update


@dataclass(frozen=True)
class RolloutConfig:
    """Inference-time settings: schedule, ensembling, UKF correction."""

    schedule: tuple
    horizon: int
    windows: int = 1
    ensemble_size: int = 1
    input_noise_sigma: float = 0.0
    ukf_correct: bool = False
    ukf: UkfParams = UkfParams()
    r_inflation: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "schedule", tuple(int(i) for i in self.schedule))
        s = self.schedule
        if len(s) < 1 or s[0] != 0 or any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError("schedule must be strictly increasing from i_0 = 0")
        if s[-1] >= self.horizon:
            raise ValueError("schedule entries must stay below the horizon")
        if self.windows < 1 or self.ensemble_size < 1:
            raise ValueError("windows and ensemble_size must be >= 1")
        if self.input_noise_sigma < 0:
            raise ValueError("input_noise_sigma must be nonnegative")


def cold_sample_core(forecast_fn, interp_fn, x_t, schedule, horizon):
    """One cold-sampling window over flattened states.

    Returns (frames, last_state, final_forecast) where ``frames`` has
    horizon+1 rows, row 0 being ``x_t`` itself (never overwritten).
    """
    x_t = np.asarray(x_t, dtype=np.float64)

    def interp_at(i, xth):
        if i == 0:
            return x_t
        if i == horizon:
            return xth
        return interp_fn(x_t, xth, i)

    state = x_t
    visited = {0: x_t}
    xhat = None
    for n, i_n in enumerate(schedule):
        xhat = forecast_fn(state, i_n)
        if n < len(schedule) - 1:
            i_next = schedule[n + 1]
            state = state + interp_at(i_next, xhat) - interp_at(i_n, xhat)
            visited[i_next] = state
    frames = np.empty((horizon + 1, x_t.size))
    frames[0] = x_t
    frames[horizon] = xhat
    for i in range(1, horizon):
        frames[i] = visited[i] if i in visited else interp_at(i, xhat)
    return frames, state, xhat


def _net_callables(fmodel, theta, imodel, phi):
    def forecast_fn(state, i_n):
        y, _ = forward(fmodel.net, theta, state, float(i_n))
        return y

    def interp_fn(xt, xth, i):
        y, _ = forward(imodel.net, phi, np.concatenate([xt, xth]), float(i))
        return y

    return forecast_fn, interp_fn


def cold_sample_window(fmodel, theta, imodel, phi, x_t, cfg, dt=1.0):
    """Cold sampling over one horizon window; returns a Trajectory."""
    forecast_fn, interp_fn = _net_callables(fmodel, theta, imodel, phi)
    frames, _, _ = cold_sample_core(
        forecast_fn, interp_fn, x_t.as_flat().ravel(), cfg.schedule, cfg.horizon
    )
    shaped = frames.reshape(-1, x_t.channels, *x_t.spec.dims)
    return Trajectory(spec=x_t.spec, dt=dt, frames=shaped)


def _corrected_boundary(forecast_fn, interp_fn, x_t, last_state, xhat, cfg):
    """UKF update of the window-boundary state with a pseudo-measurement.

    The measurement is the interpolator's consistency estimate at the last
    interior index, advanced one interpolation step by linear
    extrapolation; the measurement model is the identity with the noise
    scale inflated by r_inflation.
    """
    ukf = cfg.ukf
    i_last = cfg.schedule[-1]
    n = last_state.size
    belief0 = GaussianBelief(last_state, ukf.p0_scale * np.eye(n))
    b_pred = predict(belief0, lambda X: forecast_fn(X, i_last), ukf)

    h = cfg.horizon

    def interp_at(i):
        if i == 0:
            return x_t
        if i == h:
            return xhat
        return interp_fn(x_t, xhat, i)

    z_near = interp_at(h - 1)
    z_prev = interp_at(h - 2)
    z = 2.0 * z_near - z_prev
    r_cov = cfg.r_inflation * ukf.r_scale * np.eye(n)
    b_post = update(b_pred, z, lambda X: X, ukf, r_cov=r_cov)
    return b_post.mean


def rollout_core(forecast_fn, interp_fn, x0, cfg):
    """Autoregressive chaining of cold-sampling windows over flat states."""
    x0 = np.asarray(x0, dtype=np.float64)
    total = cfg.windows * cfg.horizon + 1
    out = np.empty((total, x0.size))
    out[0] = x0
    x = x0
    for w in range(cfg.windows):
        frames, last_state, xhat = cold_sample_core(
            forecast_fn, interp_fn, x, cfg.schedule, cfg.horizon
        )
        if cfg.ukf_correct:
            frames[cfg.horizon] = _corrected_boundary(
                forecast_fn, interp_fn, x, last_state, xhat, cfg
            )
        out[w * cfg.horizon + 1 : (w + 1) * cfg.horizon + 1] = frames[1:]
        x = frames[cfg.horizon]
    return out


def rollout(fmodel, theta, imodel, phi, x0, cfg, dt=1.0):
    """Long-horizon rollout; returns a Trajectory of windows*horizon+1 frames."""
    forecast_fn, interp_fn = _net_callables(fmodel, theta, imodel, phi)
    frames = rollout_core(forecast_fn, interp_fn, x0.as_flat().ravel(), cfg)
    shaped = frames.reshape(-1, x0.channels, *x0.spec.dims)
    return Trajectory(spec=x0.spec, dt=dt, frames=shaped)


def ensemble(fmodel, theta, imodel, phi, x0, cfg, seed, dt=1.0):
    """E rollouts from Gaussian-perturbed copies of the initial state.

    Member e perturbs ``x0`` by sigma * xi_e with xi_e drawn from the
    stream (seed, e); sigma = 0 leaves the state bit-exact, so all
    members coincide.
    """
    members = []
    for e in range(cfg.ensemble_size):
        if cfg.input_noise_sigma > 0:
            rng = np.random.default_rng([seed, e])
            noise = rng.standard_normal(x0.values.shape)
            start = Field(x0.spec, x0.values + cfg.input_noise_sigma * noise)
        else:
            start = x0
        members.append(rollout(fmodel, theta, imodel, phi, start, cfg, dt=dt))
    return members
