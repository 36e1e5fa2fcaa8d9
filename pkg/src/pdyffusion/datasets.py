"""Synthetic dynamical datasets and bit-exact trajectory file I/O.

Three generator families at desk scale: a periodic 1D wave equation
(leapfrog), a damped spring mesh with a fixed boundary ring (symplectic
Euler), and 2D incompressible vorticity on the torus (pseudo-spectral with
2/3-rule dealiasing).  Generators are pure functions of their parameters
and seed, never emit NaN/Inf, and raise on numerical blow-up.
"""

import math
from dataclasses import dataclass

import numpy as np

from .grid import Field, GridSpec
from .spde import MaternParams, sample_grf

TRAJ_MAGIC = "PDYTRAJ1"
_HEADER_KEYS = ("dims", "extent", "bc", "channels", "dt", "frames")


@dataclass
class Trajectory:
    """Time-ordered frames (T, channels, *dims) with a uniform step dt."""

    spec: GridSpec
    dt: float
    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        expected = (self.frames.shape[0], self.frames.shape[1], *self.spec.dims)
        if self.frames.shape != expected or self.frames.ndim != 2 + self.spec.ndim:
            raise ValueError(f"frame array shape {self.frames.shape} does not match spec")
        if self.frames.shape[0] < 2:
            raise ValueError("a trajectory needs at least two frames")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("trajectory frames must be finite")

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def channels(self):
        return self.frames.shape[1]

    def frame(self, t):
        return Field(self.spec, self.frames[t])


def periodic_gaussian_pulse(x, length, center, width, amplitude):
    """Gaussian bump measured in the periodic distance on [0, length)."""
    d = np.abs(x - center)
    d = np.minimum(d, length - d)
    return amplitude * np.exp(-(d**2) / (2.0 * width**2))


def gen_wave1d(
    n_grid,
    n_frames,
    c,
    seed,
    extent=1.0,
    cfl=0.5,
    pulse_width_range=(0.08, 0.15),
    pulse_amp_range=(0.5, 1.5),
    init_displacement=None,
):
    """Leapfrog solution of u_tt = c^2 u_xx on the periodic interval.

    The initial condition is a Gaussian pulse whose center, width (as a
    fraction of the extent) and amplitude are drawn from the seed; zero
    initial velocity.  Channels are (displacement, previous-step
    displacement): the lagged frame completes the second-order state at
    the same numeric scale as the displacement itself, and u_t follows
    from the pair as (u - u_prev)/dt.
    """
    if cfl <= 0 or cfl > 1.0:  # dt = cfl*dx/c, so c*dt/dx = cfl
        raise ValueError(f"CFL number {cfl} violates c*dt/dx <= 1")
    spec = GridSpec((n_grid,), (extent,), "periodic")
    dx = extent / n_grid
    dt = cfl * dx / c
    x = np.arange(n_grid) * dx

    if init_displacement is None:
        rng = np.random.default_rng(seed)
        center = rng.uniform(0.0, extent)
        width = rng.uniform(*pulse_width_range) * extent
        amp = rng.uniform(*pulse_amp_range)
        u0 = periodic_gaussian_pulse(x, extent, center, width, amp)
    else:
        u0 = np.asarray(init_displacement, dtype=np.float64).copy()
        if u0.shape != (n_grid,):
            raise ValueError("init_displacement must match the grid size")

    r2 = (c * dt / dx) ** 2

    def lap(u):
        return np.roll(u, -1) - 2.0 * u + np.roll(u, 1)

    # zero initial velocity: first step by the symmetric Taylor formula
    u_prev = u0
    u_curr = u0 + 0.5 * r2 * lap(u0)
    disp = np.empty((n_frames, n_grid))
    disp[0] = u0
    if n_frames > 1:
        disp[1] = u_curr
    for m in range(2, n_frames):
        u_next = 2.0 * u_curr - u_prev + r2 * lap(u_curr)
        disp[m] = u_next
        u_prev, u_curr = u_curr, u_next

    lagged = np.empty_like(disp)
    lagged[0] = disp[1]  # u(-dt) = u(dt): time symmetry of the zero-velocity start
    lagged[1:] = disp[:-1]
    frames = np.stack([disp, lagged], axis=1)
    if not np.all(np.isfinite(frames)):
        raise ValueError("wave solver blew up (nonfinite values)")
    return Trajectory(spec=spec, dt=dt, frames=frames)


def wave_energy(traj, c):
    """Discrete energy sum((u_t)^2 + c^2 (u_x)^2) * dx, per interior frame."""
    disp = traj.frames[:, 0]
    dx = traj.spec.extent[0] / traj.spec.dims[0]
    dt = traj.dt
    u_t = (disp[2:] - disp[:-2]) / (2.0 * dt)
    u_x = (np.roll(disp[1:-1], -1, axis=1) - np.roll(disp[1:-1], 1, axis=1)) / (2.0 * dx)
    return np.sum(u_t**2 + c**2 * u_x**2, axis=1) * dx


def _spring_laplacian(u):
    """Discrete Dirichlet Laplacian: a ring of fixed zero nodes surrounds u."""
    padded = np.pad(u, 1)
    return (
        padded[:-2, 1:-1]
        + padded[2:, 1:-1]
        + padded[1:-1, :-2]
        + padded[1:-1, 2:]
        - 4.0 * u
    )


def gen_springmesh(
    mesh_k,
    n_frames,
    stiffness,
    damping,
    seed,
    dt=None,
    init_displacement=None,
):
    """Symplectic-Euler integration of a k x k mesh of unit masses.

    Masses couple to their four neighbors by linear springs; the boundary
    ring is clamped at zero (Dirichlet).  Channels are (displacement,
    velocity).  Raises on instability instead of emitting NaN.
    """
    if stiffness <= 0:
        raise ValueError("stiffness must be positive")
    if damping < 0:
        raise ValueError("damping must be nonnegative")
    omega_max = math.sqrt(8.0 * stiffness)
    if dt is None:
        dt = 0.005 / math.sqrt(stiffness)
    if dt * omega_max >= 2.0:
        raise ValueError(
            f"dt={dt} exceeds the stability bound 2/omega_max={2.0 / omega_max:.4g}"
        )
    spec = GridSpec((mesh_k, mesh_k), (float(mesh_k + 1), float(mesh_k + 1)), "dirichlet")

    if init_displacement is None:
        rng = np.random.default_rng(seed)
        u = np.zeros((mesh_k, mesh_k))
        n_bumps = int(rng.integers(1, 4))
        for _ in range(n_bumps):
            i, j = rng.integers(0, mesh_k, size=2)
            u[i, j] += rng.uniform(-1.0, 1.0)
    else:
        u = np.asarray(init_displacement, dtype=np.float64).copy()
        if u.shape != (mesh_k, mesh_k):
            raise ValueError("init_displacement must be a k x k array")
    v = np.zeros_like(u)

    frames = np.empty((n_frames, 2, mesh_k, mesh_k))
    frames[0, 0], frames[0, 1] = u, v
    for m in range(1, n_frames):
        v = v + dt * (stiffness * _spring_laplacian(u) - damping * v)
        u = u + dt * v
        if not (np.all(np.isfinite(u)) and np.abs(u).max() < 1e8):
            raise ValueError(f"spring-mesh integration unstable at frame {m}")
        frames[m, 0], frames[m, 1] = u, v
    return Trajectory(spec=spec, dt=dt, frames=frames)


def spring_energy(traj, stiffness):
    """Kinetic plus spring potential energy per frame (boundary ring at zero)."""
    u = traj.frames[:, 0]
    v = traj.frames[:, 1]
    padded = np.pad(u, ((0, 0), (1, 1), (1, 1)))
    dx_edges = np.sum((padded[:, 1:, :] - padded[:, :-1, :]) ** 2, axis=(1, 2))
    dy_edges = np.sum((padded[:, :, 1:] - padded[:, :, :-1]) ** 2, axis=(1, 2))
    return 0.5 * np.sum(v**2, axis=(1, 2)) + 0.5 * stiffness * (dx_edges + dy_edges)


def gen_vorticity2d(
    n_grid,
    n_frames,
    viscosity,
    seed,
    dt=0.01,
    steps_per_frame=1,
    advection=True,
    init_params=None,
    init_vorticity=None,
):
    """Pseudo-spectral 2D vorticity equation on the periodic torus [0, 2pi)^2.

    w_t + (u . grad) w = nu * Lap w, with the velocity recovered from the
    streamfunction and the nonlinear term dealiased by the 2/3 rule.  RK4
    time stepping in spectral space; the advection term uses the
    conservative (divergence) form so the mean mode is conserved exactly.
    """
    if n_grid not in (32, 64):
        raise ValueError("n_grid must be 32 or 64")
    if viscosity <= 0:
        raise ValueError("viscosity must be positive")
    extent = 2.0 * math.pi
    spec = GridSpec((n_grid, n_grid), (extent, extent), "periodic")

    if init_vorticity is None:
        p = init_params or MaternParams(sigma_c2=4.0, nu=2.5, rho=1.0, d=2)
        w = sample_grf(p, spec, seed).values[0]
    else:
        w = np.asarray(init_vorticity, dtype=np.float64).copy()
        if w.shape != (n_grid, n_grid):
            raise ValueError("init_vorticity must match the grid")

    k1 = np.fft.fftfreq(n_grid, d=1.0 / n_grid)
    kx = k1[:, None]
    ky = k1[None, :]
    k2 = kx**2 + ky**2
    k2_safe = np.where(k2 == 0.0, 1.0, k2)
    kcut = (2.0 / 3.0) * np.abs(k1).max()
    dealias = (np.abs(kx) <= kcut) & (np.abs(ky) <= kcut)

    def rhs(w_hat):
        out = -viscosity * k2 * w_hat
        if advection:
            psi_hat = w_hat / k2_safe
            psi_hat = np.where(k2 == 0.0, 0.0, psi_hat)
            u = np.real(np.fft.ifft2(1j * ky * psi_hat))
            v = np.real(np.fft.ifft2(-1j * kx * psi_hat))
            w_real = np.real(np.fft.ifft2(w_hat))
            flux = 1j * kx * np.fft.fft2(u * w_real) + 1j * ky * np.fft.fft2(v * w_real)
            out = out - dealias * flux
        return out

    w_hat = np.fft.fft2(w)
    frames = np.empty((n_frames, 1, n_grid, n_grid))
    frames[0, 0] = w
    for m in range(1, n_frames):
        for _ in range(steps_per_frame):
            k_1 = rhs(w_hat)
            k_2 = rhs(w_hat + 0.5 * dt * k_1)
            k_3 = rhs(w_hat + 0.5 * dt * k_2)
            k_4 = rhs(w_hat + dt * k_3)
            w_hat = w_hat + (dt / 6.0) * (k_1 + 2.0 * k_2 + 2.0 * k_3 + k_4)
        w = np.real(np.fft.ifft2(w_hat))
        if not (np.all(np.isfinite(w)) and np.abs(w).max() < 1e8):
            raise ValueError(f"vorticity integration blew up at frame {m}")
        frames[m, 0] = w
    return Trajectory(spec=spec, dt=dt * steps_per_frame, frames=frames)


def save_trajectory(traj, path):
    """Write the line-oriented header and the little-endian float64 payload."""
    header = [TRAJ_MAGIC]
    header.append("dims=" + ",".join(str(d) for d in traj.spec.dims))
    header.append("extent=" + ",".join(repr(e) for e in traj.spec.extent))
    header.append("bc=" + traj.spec.bc)
    header.append("channels=" + str(traj.channels))
    header.append("dt=" + repr(traj.dt))
    header.append("frames=" + str(traj.n_frames))
    blob = "\n".join(header).encode("ascii") + b"\n\n"
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(np.ascontiguousarray(traj.frames, dtype="<f8").tobytes())


def load_trajectory(path):
    """Inverse of :func:`save_trajectory`; validates header and payload."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw:
        raise ValueError(f"{path}: empty file (0 bytes)")
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise ValueError(f"{path}: no blank line terminating the header")
    try:
        lines = raw[:sep].decode("ascii").split("\n")
    except UnicodeDecodeError as exc:
        raise ValueError(f"{path}: header is not ascii text") from exc
    if lines[0] != TRAJ_MAGIC:
        raise ValueError(f"{path}: bad magic {lines[0]!r}, expected {TRAJ_MAGIC!r}")
    fields = {}
    for ln in lines[1:]:
        key, eq, value = ln.partition("=")
        if not eq or key not in _HEADER_KEYS or key in fields:
            raise ValueError(f"{path}: malformed header line {ln!r}")
        fields[key] = value
    missing = [k for k in _HEADER_KEYS if k not in fields]
    if missing:
        raise ValueError(f"{path}: header missing keys {missing}")

    dims = tuple(int(v) for v in fields["dims"].split(","))
    extent = tuple(float(v) for v in fields["extent"].split(","))
    spec = GridSpec(dims, extent, fields["bc"])
    channels = int(fields["channels"])
    dt = float(fields["dt"])
    n_frames = int(fields["frames"])

    payload = raw[sep + 2 :]
    expected = n_frames * channels * spec.n_cells * 8
    if len(payload) != expected:
        raise ValueError(
            f"{path}: payload is {len(payload)} bytes at offset {sep + 2}, "
            f"expected {expected} for {n_frames} frames"
        )
    frames = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    frames = frames.reshape(n_frames, channels, *dims)
    if not np.all(np.isfinite(frames)):
        raise ValueError(f"{path}: payload contains nonfinite values")
    return Trajectory(spec=spec, dt=dt, frames=frames)


def split_trajectories(n, seed):
    """Deterministic 80/10/10 split of trajectory indices by whole trajectory."""
    if n < 3:
        raise ValueError("need at least 3 trajectories to split")
    order = np.random.default_rng(seed).permutation(n)
    n_train = max(1, int(0.8 * n))
    n_val = max(1, int(0.1 * n))
    if n_train + n_val >= n:
        n_train = n - 2
        n_val = 1
    return {
        "train": sorted(int(i) for i in order[:n_train]),
        "val": sorted(int(i) for i in order[n_train : n_train + n_val]),
        "test": sorted(int(i) for i in order[n_train + n_val :]),
    }
