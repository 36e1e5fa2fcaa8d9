"""Stage-1 training of the interpolator with the PDE-regularized objective.

The loss per sample is the mean-square reconstruction error of the
intermediate state plus lambda times the mean-square fractional-operator
residual of the network output.  The residual's parameter gradient uses
the operator's self-adjointness: the extra output adjoint is
2*lambda/(cells*channels) times the operator applied at double power.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from .grid import GridSpec, from_flat, get_basis
from .nets import NetSpec, backward, forward, init_params, sgd_step
from .spde import EllipticOpParams, op_multipliers


@dataclass(frozen=True)
class InterpConfig:
    """Training configuration for the interpolator stage."""

    op: EllipticOpParams
    lambda_reg: float = 0.2
    horizon: int = 16
    batch_size: int = 16
    steps: int = 500
    lr: float = 5e-3
    momentum: float = 0.9
    hidden_dims: tuple = (128, 128)
    time_embed_dim: int = 8
    init_seed: int = 0

    def __post_init__(self):
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be nonnegative")
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")


@dataclass
class InterpModel:
    """Interpolator head bound to one grid: net architecture plus loss config."""

    cfg: InterpConfig
    grid: GridSpec
    channels: int
    net: NetSpec = dc_field(init=False)

    def __post_init__(self):
        if self.grid.bc != self.cfg.op.bc:
            raise ValueError(
                f"grid bc {self.grid.bc!r} != operator bc {self.cfg.op.bc!r}"
            )
        state = self.channels * self.grid.n_cells
        self.net = NetSpec(
            input_dim=2 * state,
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


def _check_index(i, horizon):
    if not 1 <= i <= horizon - 1:
        raise ValueError(f"interpolation index {i} outside 1..{horizon - 1}")


def _spectral_matvec(model, flat, multipliers):
    """Apply a per-mode multiplier to a batch of flattened states."""
    spec = model.grid
    basis = get_basis(spec)
    B = flat.shape[0]
    values = flat.reshape(B * model.channels, *spec.dims)
    if spec.ndim == 1:
        U = basis.axis_matrices[0]
        coeff = values @ U.T
        out = (coeff * multipliers) @ U
    else:
        U1, U2 = basis.axis_matrices
        coeff = np.einsum("ka,nab,lb->nkl", U1, values, U2)
        coeff *= multipliers.reshape(spec.dims)
        out = np.einsum("ka,nkl,lb->nab", U1, coeff, U2)
    return out.reshape(B, model.state_size)


def residual_terms(model, out_flat):
    """Mean-square operator residual and its d/d(output) for a batch.

    Residual per row is sum of squared multiplied coefficients divided by
    (volume * channels), i.e. the quadrature-weighted mean of squares of
    the operator output over cells and channels.
    """
    m = op_multipliers(model.grid, model.cfg.op)
    spec = model.grid
    w = spec.cell_volume
    B = out_flat.shape[0]
    coeff = _spectral_matvec(model, out_flat, m)  # holds M f in value space
    # Parseval in value space: mean over cells/channels of (M f)^2
    res = w * np.sum(
        coeff.reshape(B, -1) ** 2, axis=1
    ) / (spec.volume * model.channels)
    n_entries = model.state_size
    grad = (2.0 / n_entries) * _spectral_matvec(model, out_flat, m**2)
    return res, grad


def interp_loss(model, params, batch):
    """Composite loss and its exact parameter gradient over one batch.

    ``batch`` is a list of (x_t, x_ti, x_th, i) tuples of Fields plus the
    sampled index.  Returns (loss, grad, (recon, pde)).
    """
    cfg = model.cfg
    B = len(batch)
    S = model.state_size
    X = np.empty((B, 2 * S))
    targets = np.empty((B, S))
    idx = np.empty(B)
    for r, (x_t, x_ti, x_th, i) in enumerate(batch):
        _check_index(i, cfg.horizon)
        for f in (x_t, x_ti, x_th):
            if f.spec != model.grid:
                raise ValueError("batch fields must live on the model grid")
        X[r, :S] = x_t.as_flat().ravel()
        X[r, S:] = x_th.as_flat().ravel()
        targets[r] = x_ti.as_flat().ravel()
        idx[r] = i

    out, tape = forward(model.net, params, X, idx)
    diff = out - targets
    recon = float(np.mean(np.sum(diff**2, axis=1) / S))
    adjoint = (2.0 / (S * B)) * diff
    if cfg.lambda_reg > 0:
        res, res_grad = residual_terms(model, out)
        pde = float(np.mean(res))
        adjoint = adjoint + (cfg.lambda_reg / B) * res_grad
    else:
        pde = 0.0
    grad, _ = backward(params, tape, adjoint)
    return recon + cfg.lambda_reg * pde, grad, (recon, pde)


def interpolate(model, params, x_t, x_th, i):
    """Deterministic intermediate-state prediction at index ``i``."""
    _check_index(i, model.cfg.horizon)
    x = np.concatenate([x_t.as_flat().ravel(), x_th.as_flat().ravel()])
    y, _ = forward(model.net, params, x, float(i))
    return from_flat(model.grid, y.reshape(model.channels, -1))


def sample_windows(trajectories, horizon, batch_size, rng):
    """Draw (x_t, x_{t+i}, x_{t+h}, i) windows uniformly over the dataset."""
    batch = []
    for _ in range(batch_size):
        traj = trajectories[rng.integers(len(trajectories))]
        max_start = traj.n_frames - 1 - horizon
        if max_start < 0:
            raise ValueError(
                f"trajectory with {traj.n_frames} frames too short for horizon {horizon}"
            )
        t = int(rng.integers(max_start + 1))
        i = int(rng.integers(1, horizon))
        batch.append(
            (traj.frame(t), traj.frame(t + i), traj.frame(t + horizon), i)
        )
    return batch


def train_interpolator(trajectories, cfg, seed, params0=None):
    """Run the stage-1 loop; returns (model, params, log rows).

    Log rows are (step, recon_loss, pde_loss, total).  Deterministic in
    ``seed``; ``steps = 0`` returns the initialization untouched.
    """
    first = trajectories[0]
    model = InterpModel(cfg=cfg, grid=first.spec, channels=first.channels)
    params = model.init() if params0 is None else params0.copy()
    rng = np.random.default_rng(seed)
    velocity = None
    log = []
    for step in range(cfg.steps):
        batch = sample_windows(trajectories, cfg.horizon, cfg.batch_size, rng)
        loss, grad, (recon, pde) = interp_loss(model, params, batch)
        params, velocity = sgd_step(params, grad, cfg.lr, cfg.momentum, velocity)
        log.append((step, recon, pde, loss))
    return model, params, log
