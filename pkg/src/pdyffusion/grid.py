"""Regular-grid fields and the orthogonal eigenbases of the Laplacian.

Fields live on uniform 1D or 2D grids with one of three boundary
conditions.  Each boundary condition comes with the analytic eigenbasis of
-Laplacian on the continuum domain, sampled at the grid nodes where the
discrete vectors are exactly orthogonal:

* periodic  - real Fourier modes on nodes x_j = j*L/n
* dirichlet - sine modes on interior nodes x_j = (j+1)*L/(n+1)
* neumann   - cosine modes on midpoint nodes x_j = (j+1/2)*L/n

Transforms are unitary up to the uniform quadrature weight, so Parseval
and self-adjointness hold to machine precision, and fractional powers of
the elliptic operator reduce to exact per-mode multipliers.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

BOUNDARY_CONDITIONS = ("dirichlet", "neumann", "periodic")


@dataclass(frozen=True)
class GridSpec:
    """Uniform rectangular grid: sizes per axis, physical extent, boundary condition."""

    dims: tuple
    extent: tuple
    bc: str

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        extent = tuple(float(e) for e in self.extent)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "extent", extent)
        if len(dims) not in (1, 2):
            raise ValueError(f"grids must have 1 or 2 axes, got {len(dims)}")
        if len(extent) != len(dims):
            raise ValueError("extent must list one length per axis")
        if any(d < 2 for d in dims):
            raise ValueError(f"every grid dim must be >= 2, got {dims}")
        if any(e <= 0 for e in extent):
            raise ValueError(f"every extent must be positive, got {extent}")
        if self.bc not in BOUNDARY_CONDITIONS:
            raise ValueError(f"bc must be one of {BOUNDARY_CONDITIONS}, got {self.bc!r}")

    @property
    def ndim(self):
        return len(self.dims)

    @property
    def n_cells(self):
        return int(np.prod(self.dims))

    @property
    def volume(self):
        return float(np.prod(self.extent))

    @property
    def cell_volume(self):
        """Uniform quadrature weight extent/prod(dims)."""
        return self.volume / self.n_cells


def axis_nodes(n, length, bc):
    """Physical node coordinates along one axis for the given boundary condition."""
    if bc == "periodic":
        return np.arange(n) * (length / n)
    if bc == "dirichlet":
        return (np.arange(n) + 1.0) * (length / (n + 1))
    if bc == "neumann":
        return (np.arange(n) + 0.5) * (length / n)
    raise ValueError(f"unknown bc {bc!r}")


def grid_points(spec):
    """Per-axis node coordinate arrays for ``spec``."""
    return [axis_nodes(n, L, spec.bc) for n, L in zip(spec.dims, spec.extent)]


@dataclass
class Field:
    """Scalar- or vector-valued state sampled on a grid.

    ``values`` has shape ``(channels, *spec.dims)`` and must be finite.
    """

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        expected = tuple(self.spec.dims)
        if values.ndim == len(expected):  # allow a bare single-channel array
            values = values[np.newaxis]
        if values.shape[1:] != expected or values.ndim != len(expected) + 1:
            raise ValueError(
                f"field values shape {values.shape} does not match grid dims {expected}"
            )
        if values.shape[0] < 1:
            raise ValueError("field needs at least one channel")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        self.values = values

    @property
    def channels(self):
        return self.values.shape[0]

    def as_flat(self):
        """Values reshaped to (channels, n_cells)."""
        return self.values.reshape(self.channels, -1)

    def copy(self):
        return Field(self.spec, self.values.copy())


def from_flat(spec, flat):
    """Rebuild a Field from a (channels, n_cells) or (n_cells,) array."""
    flat = np.asarray(flat, dtype=np.float64)
    if flat.ndim == 1:
        flat = flat[np.newaxis]
    if flat.shape[1] != spec.n_cells:
        raise ValueError(f"flat length {flat.shape[1]} != grid cells {spec.n_cells}")
    return Field(spec, flat.reshape(flat.shape[0], *spec.dims))


def _axis_eigenvalues(n, length, bc):
    """Continuum -Laplacian eigenvalues for the n discrete modes of one axis."""
    if bc == "periodic":
        mu = np.empty(n)
        mu[0] = 0.0
        half = (n - 1) // 2
        for k in range(1, half + 1):
            val = (2.0 * np.pi * k / length) ** 2
            mu[2 * k - 1] = val
            mu[2 * k] = val
        if n % 2 == 0:
            mu[n - 1] = (np.pi * n / length) ** 2
        return mu
    if bc == "dirichlet":
        k = np.arange(1, n + 1)
        return (np.pi * k / length) ** 2
    if bc == "neumann":
        k = np.arange(n)
        return (np.pi * k / length) ** 2
    raise ValueError(f"unknown bc {bc!r}")


def _axis_basis_matrix(n, length, bc):
    """Rows are the discretely-orthonormal eigenvectors along one axis."""
    j = np.arange(n)
    if bc == "periodic":
        U = np.empty((n, n))
        U[0] = 1.0 / np.sqrt(n)
        half = (n - 1) // 2
        for k in range(1, half + 1):
            theta = 2.0 * np.pi * k * j / n
            U[2 * k - 1] = np.sqrt(2.0 / n) * np.cos(theta)
            U[2 * k] = np.sqrt(2.0 / n) * np.sin(theta)
        if n % 2 == 0:
            U[n - 1] = np.where(j % 2 == 0, 1.0, -1.0) / np.sqrt(n)
        return U
    if bc == "dirichlet":
        k = np.arange(1, n + 1)[:, None]
        return np.sqrt(2.0 / (n + 1)) * np.sin(np.pi * k * (j + 1) / (n + 1))
    if bc == "neumann":
        k = np.arange(n)[:, None]
        U = np.sqrt(2.0 / n) * np.cos(np.pi * k * (j + 0.5) / n)
        U[0] = 1.0 / np.sqrt(n)
        return U
    raise ValueError(f"unknown bc {bc!r}")


class SpectralBasis:
    """Tensor-product eigenbasis of -Laplacian for one GridSpec.

    ``eigenvalues`` is flat in mode order (C order over per-axis modes) and
    matches the coefficient layout of :func:`to_spectral`.
    """

    def __init__(self, spec):
        self.spec = spec
        self.axis_matrices = [
            _axis_basis_matrix(n, L, spec.bc) for n, L in zip(spec.dims, spec.extent)
        ]
        per_axis = [
            _axis_eigenvalues(n, L, spec.bc) for n, L in zip(spec.dims, spec.extent)
        ]
        if spec.ndim == 1:
            self.eigenvalues = per_axis[0].copy()
        else:
            self.eigenvalues = (per_axis[0][:, None] + per_axis[1][None, :]).ravel()

    @property
    def n_modes(self):
        return self.eigenvalues.size


@lru_cache(maxsize=32)
def get_basis(spec):
    return SpectralBasis(spec)


def to_spectral(f):
    """Expand a Field in the bc-appropriate orthogonal eigenbasis.

    Returns coefficients of shape (channels, n_modes).  The quadrature
    weight is folded in so that sum(c**2) equals the weighted L2 norm of
    the field (Parseval).
    """
    basis = get_basis(f.spec)
    sw = np.sqrt(f.spec.cell_volume)
    if f.spec.ndim == 1:
        coeff = f.as_flat() @ basis.axis_matrices[0].T
    else:
        U1, U2 = basis.axis_matrices
        coeff = np.einsum("ka,cab,lb->ckl", U1, f.values, U2).reshape(f.channels, -1)
    return sw * coeff


def from_spectral(coeff, spec):
    """Inverse of :func:`to_spectral`."""
    coeff = np.asarray(coeff, dtype=np.float64)
    if coeff.ndim == 1:
        coeff = coeff[np.newaxis]
    basis = get_basis(spec)
    if coeff.shape[1] != basis.n_modes:
        raise ValueError(
            f"coefficient count {coeff.shape[1]} != basis mode count {basis.n_modes}"
        )
    sw = np.sqrt(spec.cell_volume)
    if spec.ndim == 1:
        flat = (coeff / sw) @ basis.axis_matrices[0]
        return from_flat(spec, flat)
    U1, U2 = basis.axis_matrices
    n1, n2 = spec.dims
    c = coeff.reshape(coeff.shape[0], n1, n2) / sw
    values = np.einsum("ka,ckl,lb->cab", U1, c, U2)
    return Field(spec, values)


def laplacian_eigenvalues(spec):
    """Eigenvalues of -Laplacian in the mode order used by the transforms."""
    return get_basis(spec).eigenvalues.copy()
