"""Truncated Fourier calculus for real scalar fields on the torus T^n, n <= 3.

Fields are stored by their retained Fourier coefficients u_hat(k), |k_i| <= K,
with the normalized convention u(x) = sum_k u_hat(k) exp(i k.x), so that
u_hat(0) is the mean value. Nonlinear operations go through a padded
collocation grid with points_per_dim >= 4K, which makes products of two
retained fields alias-free on the retained band.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import GridMismatchError, SerializationError

_SUPPORTED_DIMS = (1, 2, 3)

# |coefficients| below this are dropped when serializing fields to JSON
SERIALIZATION_THRESHOLD = 1e-16
# stored conjugate pairs disagreeing by more than this are rejected on load
HERMITIAN_REJECT_TOL = 1e-10


@dataclass(frozen=True)
class TorusGrid:
    """Mode/collocation bookkeeping shared by all fields of one resolution.

    dim: torus dimension n (1, 2 or 3 supported)
    max_mode: K; retained modes are |k_i| <= K
    points_per_dim: N >= 4K collocation points per dimension
    """

    dim: int
    max_mode: int
    points_per_dim: int

    def __post_init__(self):
        if self.dim not in _SUPPORTED_DIMS:
            raise ValueError(f"dim must be one of {_SUPPORTED_DIMS}, got {self.dim}")
        if self.max_mode < 1:
            raise ValueError("max_mode must be >= 1")
        if self.points_per_dim < 2 * self.modes_per_dim:
            raise ValueError(
                f"points_per_dim={self.points_per_dim} < 2*modes_per_dim="
                f"{2 * self.modes_per_dim}; dealiasing needs N >= 4K"
            )

    @classmethod
    def create(cls, dim: int, max_mode: int, points_per_dim: int | None = None) -> "TorusGrid":
        if points_per_dim is None:
            points_per_dim = 4 * max_mode
        return cls(dim, max_mode, points_per_dim)

    @property
    def modes_per_dim(self) -> int:
        return 2 * self.max_mode

    @property
    def mode_shape(self) -> tuple:
        return (2 * self.max_mode + 1,) * self.dim

    @property
    def point_shape(self) -> tuple:
        return (self.points_per_dim,) * self.dim

    @cached_property
    def mode_axis(self) -> np.ndarray:
        return np.arange(-self.max_mode, self.max_mode + 1)

    @cached_property
    def mode_mesh(self) -> tuple:
        """Tuple of dim arrays of shape mode_shape carrying k_i per mode."""
        return tuple(np.meshgrid(*([self.mode_axis] * self.dim), indexing="ij"))

    @cached_property
    def mode_norm(self) -> np.ndarray:
        return np.sqrt(sum(k.astype(float) ** 2 for k in self.mode_mesh))

    @cached_property
    def mode_list(self) -> np.ndarray:
        """All retained modes as an (n_modes, dim) integer array."""
        return np.stack([k.ravel() for k in self.mode_mesh], axis=-1)

    @cached_property
    def point_axis(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.points_per_dim) / self.points_per_dim

    @cached_property
    def point_mesh(self) -> tuple:
        return tuple(np.meshgrid(*([self.point_axis] * self.dim), indexing="ij"))

    @cached_property
    def _embed_index(self) -> tuple:
        bins = self.mode_axis % self.points_per_dim
        return np.ix_(*([bins] * self.dim))

    def compatible(self, other: "TorusGrid") -> bool:
        return self == other

    def require_same(self, other: "TorusGrid") -> None:
        if self != other:
            raise GridMismatchError(f"grid mismatch: {self} vs {other}")


def _hermitianize(coeffs: np.ndarray) -> np.ndarray:
    rev = coeffs[tuple(slice(None, None, -1) for _ in range(coeffs.ndim))]
    return 0.5 * (coeffs + np.conj(rev))


@dataclass
class SpectralField:
    """A real scalar field on T^n held as truncated Fourier coefficients."""

    grid: TorusGrid
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != self.grid.mode_shape:
            raise ValueError(
                f"coefficient shape {self.coeffs.shape} != {self.grid.mode_shape}"
            )
        if self.coeffs.dtype != np.complex128:
            self.coeffs = self.coeffs.astype(np.complex128)

    # --- constructors -------------------------------------------------

    @classmethod
    def zero(cls, grid: TorusGrid) -> "SpectralField":
        return cls(grid, np.zeros(grid.mode_shape, dtype=np.complex128))

    @classmethod
    def constant(cls, grid: TorusGrid, value: float) -> "SpectralField":
        f = cls.zero(grid)
        f.coeffs[(grid.max_mode,) * grid.dim] = value
        return f

    @classmethod
    def from_modes(cls, grid: TorusGrid, modes: dict) -> "SpectralField":
        """Build a field from {k: coefficient}; the conjugate modes are mirrored."""
        f = cls.zero(grid)
        K = grid.max_mode
        for k, val in modes.items():
            kv = (k,) if np.isscalar(k) else tuple(k)
            if len(kv) != grid.dim:
                raise ValueError(f"mode {kv} has wrong dimension")
            if any(abs(c) > K for c in kv):
                raise ValueError(f"mode {kv} beyond cutoff K={K}")
            idx = tuple(c + K for c in kv)
            ridx = tuple(-c + K for c in kv)
            f.coeffs[idx] += val
            if ridx != idx:
                f.coeffs[ridx] += np.conj(val)
        return f

    # --- basics -------------------------------------------------------

    def copy(self) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs.copy())

    @property
    def _center(self) -> tuple:
        return (self.grid.max_mode,) * self.grid.dim

    def mean(self) -> float:
        return float(np.real(self.coeffs[self._center]))

    def is_constant(self, tol: float = 0.0) -> bool:
        c = self.coeffs.copy()
        c[self._center] = 0.0
        return bool(np.max(np.abs(c), initial=0.0) <= tol)

    def samples(self) -> np.ndarray:
        """Real samples on the padded N^n collocation grid."""
        g = self.grid
        buf = np.zeros(g.point_shape, dtype=np.complex128)
        buf[g._embed_index] = self.coeffs
        vals = np.fft.ifftn(buf) * (g.points_per_dim**g.dim)
        return np.real(vals)

    def hermitian_defect(self) -> float:
        rev = self.coeffs[tuple(slice(None, None, -1) for _ in range(self.grid.dim))]
        return float(np.max(np.abs(self.coeffs - np.conj(rev)), initial=0.0))

    # --- linear calculus ----------------------------------------------

    def derivative(self, axis: int = 0) -> "SpectralField":
        if axis >= self.grid.dim:
            raise ValueError(f"axis {axis} >= dim {self.grid.dim}")
        k = self.grid.mode_mesh[axis]
        return SpectralField(self.grid, self.coeffs * (1j * k))

    def translate(self, shift) -> "SpectralField":
        shift = np.atleast_1d(np.asarray(shift, dtype=float))
        if shift.shape != (self.grid.dim,):
            raise ValueError(f"shift must have {self.grid.dim} components")
        phase = sum(k * s for k, s in zip(self.grid.mode_mesh, shift))
        return SpectralField(self.grid, self.coeffs * np.exp(1j * phase))

    def omega_derivative(self, omega) -> "SpectralField":
        """Directional derivative (omega . d/dx)."""
        omega = np.asarray(omega, dtype=float)
        kw = sum(k * w for k, w in zip(self.grid.mode_mesh, omega))
        return SpectralField(self.grid, self.coeffs * (1j * kw))

    def laplace_inverse(self) -> "SpectralField":
        """Mean-free solution of Laplace(u) = f; the mean of f is discarded."""
        k2 = self.grid.mode_norm**2
        out = np.zeros_like(self.coeffs)
        nz = k2 > 0
        out[nz] = -self.coeffs[nz] / k2[nz]
        return SpectralField(self.grid, out)

    # --- norms ----------------------------------------------------------

    def sobolev_norm(self, s: float) -> float:
        w = (1.0 + self.grid.mode_norm**2) ** s
        return float(np.sqrt(np.sum(w * np.abs(self.coeffs) ** 2)))

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.samples())))

    # --- algebra ----------------------------------------------------------

    def product(self, other: "SpectralField") -> "SpectralField":
        """Dealiased pointwise product (padded collocation, re-truncated)."""
        self.grid.require_same(other.grid)
        # constant factors act exactly on coefficients
        if self.is_constant():
            return SpectralField(other.grid, other.coeffs * self.mean())
        if other.is_constant():
            return SpectralField(self.grid, self.coeffs * other.mean())
        return analyze(self.grid, self.samples() * other.samples())

    def __add__(self, other):
        if np.isscalar(other):
            out = self.copy()
            out.coeffs[self._center] += other
            return out
        self.grid.require_same(other.grid)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    __radd__ = __add__

    def __sub__(self, other):
        if np.isscalar(other):
            return self + (-other)
        self.grid.require_same(other.grid)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs)

    def __mul__(self, other):
        if np.isscalar(other):
            return SpectralField(self.grid, self.coeffs * other)
        return self.product(other)

    __rmul__ = __mul__


def analyze(grid: TorusGrid, samples: np.ndarray, return_tail: bool = False):
    """Forward transform of real collocation samples, truncated to |k_i| <= K.

    With return_tail=True also reports the discarded high-mode energy fraction,
    the truncation monitor used by the solvers' diagnostics.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.shape != grid.point_shape:
        raise ValueError(
            f"expected {grid.point_shape} samples, got {samples.shape}"
        )
    c = np.fft.fftn(samples) / (grid.points_per_dim**grid.dim)
    coeffs = _hermitianize(c[grid._embed_index])
    out = SpectralField(grid, coeffs)
    if not return_tail:
        return out
    total = float(np.sum(np.abs(c) ** 2))
    kept = float(np.sum(np.abs(coeffs) ** 2))
    tail = 0.0 if total == 0.0 else max(0.0, (total - kept) / total)
    return out, tail


def _eval_at(f: SpectralField, pts: np.ndarray, drop_tol: float = 0.0) -> np.ndarray:
    """Evaluate sum_k u_hat(k) e^{i k.x} at arbitrary points by direct summation.

    pts has shape (dim, ...); coefficients with |c| <= drop_tol are skipped
    (dropping exact zeros is free of error).
    """
    g = f.grid
    flat = pts.reshape(g.dim, -1)
    npts = flat.shape[1]
    cvec = f.coeffs.ravel()
    mask = np.abs(cvec) > drop_tol
    modes = g.mode_list[mask].astype(float)
    cvec = cvec[mask]
    out = np.zeros(npts, dtype=np.complex128)
    if cvec.size:
        chunk = max(1, int(4_000_000 // max(npts, 1)))
        for start in range(0, cvec.size, chunk):
            sl = slice(start, start + chunk)
            phase = modes[sl] @ flat
            out += cvec[sl] @ np.exp(1j * phase)
    return np.real(out).reshape(pts.shape[1:])


def synthesize(f: SpectralField, points) -> np.ndarray:
    """Evaluate f at a list of points in [0, 2pi)^n (shape (m, dim) or (dim,))."""
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    if f.grid.dim == 1 and pts.ndim == 1:
        pts = pts[:, None]
        single = False
    pts = np.atleast_2d(pts)
    if pts.shape[1] != f.grid.dim:
        raise ValueError(f"points must have {f.grid.dim} columns")
    vals = _eval_at(f, pts.T)
    return float(vals[0]) if single else vals


def warp_samples(f: SpectralField, warped_points: np.ndarray, drop_tol: float = 0.0) -> np.ndarray:
    """Samples of f at warped collocation points (shape (dim, *point_shape))."""
    return _eval_at(f, warped_points, drop_tol=drop_tol)


def compose_warped(f: SpectralField, w: "VectorField", return_tail: bool = False):
    """f(x + w(x)) sampled at warped collocation points, then re-analyzed.

    With return_tail=True also reports the discarded tail-energy fraction of
    the composition (the truncation monitor).
    """
    g = f.grid
    if len(w.fields) != g.dim:
        raise ValueError(f"warp needs {g.dim} components, got {len(w.fields)}")
    g.require_same(w.grid)
    wpts = np.stack(g.point_mesh) + w.samples()
    return analyze(g, warp_samples(f, wpts), return_tail=return_tail)


class VectorField:
    """Ordered tuple of scalar fields on one shared grid."""

    def __init__(self, fields: Sequence[SpectralField]):
        fields = list(fields)
        if not fields:
            raise ValueError("empty VectorField")
        grid = fields[0].grid
        for f in fields[1:]:
            grid.require_same(f.grid)
        self.fields = fields
        self.grid = grid

    @classmethod
    def zero(cls, grid: TorusGrid, m: int) -> "VectorField":
        return cls([SpectralField.zero(grid) for _ in range(m)])

    @classmethod
    def from_samples(cls, grid: TorusGrid, arr: np.ndarray) -> "VectorField":
        return cls([analyze(grid, arr[i]) for i in range(arr.shape[0])])

    def __len__(self):
        return len(self.fields)

    def __getitem__(self, i) -> SpectralField:
        return self.fields[i]

    def __iter__(self):
        return iter(self.fields)

    def samples(self) -> np.ndarray:
        return np.stack([f.samples() for f in self.fields])

    def __add__(self, other):
        return VectorField([a + b for a, b in zip(self.fields, other.fields)])

    def __sub__(self, other):
        return VectorField([a - b for a, b in zip(self.fields, other.fields)])

    def __neg__(self):
        return VectorField([-a for a in self.fields])

    def __mul__(self, scalar):
        return VectorField([f * scalar for f in self.fields])

    __rmul__ = __mul__

    def omega_derivative(self, omega) -> "VectorField":
        return VectorField([f.omega_derivative(omega) for f in self.fields])

    def jacobian(self) -> "MatrixField":
        """Matrix of partials: entry (i, a) = d(component i)/d(theta_a)."""
        return MatrixField(
            [[f.derivative(a) for a in range(self.grid.dim)] for f in self.fields]
        )

    def mean_vector(self) -> np.ndarray:
        return np.array([f.mean() for f in self.fields])

    def sobolev_norm(self, s: float) -> float:
        return float(np.sqrt(sum(f.sobolev_norm(s) ** 2 for f in self.fields)))

    def l2_norm(self) -> float:
        return self.sobolev_norm(0.0)

    def sup_norm(self) -> float:
        return max(f.sup_norm() for f in self.fields)


class MatrixField:
    """p x q array of scalar fields on one shared grid; pointwise matrix algebra."""

    def __init__(self, rows: Sequence[Sequence[SpectralField]]):
        self.rows = [list(r) for r in rows]
        if not self.rows or not self.rows[0]:
            raise ValueError("empty MatrixField")
        q = len(self.rows[0])
        grid = self.rows[0][0].grid
        for r in self.rows:
            if len(r) != q:
                raise ValueError("ragged MatrixField")
            for f in r:
                grid.require_same(f.grid)
        self.grid = grid

    @classmethod
    def from_samples(cls, grid: TorusGrid, arr: np.ndarray) -> "MatrixField":
        p, q = arr.shape[:2]
        return cls([[analyze(grid, arr[i, j]) for j in range(q)] for i in range(p)])

    @classmethod
    def constant(cls, grid: TorusGrid, mat: np.ndarray) -> "MatrixField":
        mat = np.asarray(mat, dtype=float)
        return cls(
            [
                [SpectralField.constant(grid, mat[i, j]) for j in range(mat.shape[1])]
                for i in range(mat.shape[0])
            ]
        )

    @property
    def shape(self) -> tuple:
        return (len(self.rows), len(self.rows[0]))

    def __getitem__(self, ij) -> SpectralField:
        i, j = ij
        return self.rows[i][j]

    @property
    def T(self) -> "MatrixField":
        p, q = self.shape
        return MatrixField([[self.rows[i][j] for i in range(p)] for j in range(q)])

    def samples(self) -> np.ndarray:
        p, q = self.shape
        return np.stack(
            [np.stack([self.rows[i][j].samples() for j in range(q)]) for i in range(p)]
        )

    def mean_matrix(self) -> np.ndarray:
        p, q = self.shape
        return np.array([[self.rows[i][j].mean() for j in range(q)] for i in range(p)])

    def __add__(self, other):
        p, q = self.shape
        return MatrixField(
            [[self.rows[i][j] + other.rows[i][j] for j in range(q)] for i in range(p)]
        )

    def __sub__(self, other):
        p, q = self.shape
        return MatrixField(
            [[self.rows[i][j] - other.rows[i][j] for j in range(q)] for i in range(p)]
        )

    def __mul__(self, scalar):
        p, q = self.shape
        return MatrixField([[f * scalar for f in r] for r in self.rows])

    __rmul__ = __mul__

    def matvec(self, v: VectorField) -> VectorField:
        """Pointwise matrix-vector product (dealiased through the padded grid)."""
        p, q = self.shape
        if len(v) != q:
            raise ValueError(f"shape mismatch: {self.shape} @ {len(v)}")
        out = np.einsum("pq...,q...->p...", self.samples(), v.samples())
        return VectorField.from_samples(self.grid, out)

    def matmul(self, other: "MatrixField") -> "MatrixField":
        p, q = self.shape
        q2, r = other.shape
        if q != q2:
            raise ValueError(f"shape mismatch: {self.shape} @ {other.shape}")
        out = np.einsum("pq...,qr...->pr...", self.samples(), other.samples())
        return MatrixField.from_samples(self.grid, out)

    def sup_norm(self) -> float:
        return max(f.sup_norm() for r in self.rows for f in r)


# --- serialization -------------------------------------------------------


def field_to_json(f: SpectralField) -> dict:
    """JSON document for a field; only modes with |u_hat(k)| > 1e-16 are stored."""
    g = f.grid
    entries = []
    cvec = f.coeffs.ravel()
    for k, c in zip(g.mode_list, cvec):
        if abs(c) > SERIALIZATION_THRESHOLD:
            entries.append({"k": [int(x) for x in k], "re": float(c.real), "im": float(c.imag)})
    return {"dim": g.dim, "K": g.max_mode, "coeffs": entries}


def field_from_json(doc: dict, points_per_dim: int | None = None) -> SpectralField:
    """Rebuild a field, restoring Hermitian symmetry; reject violations > 1e-10."""
    try:
        dim = int(doc["dim"])
        K = int(doc["K"])
        entries = doc["coeffs"]
    except (KeyError, TypeError) as exc:
        raise SerializationError(f"malformed field document: {exc}") from exc
    grid = TorusGrid.create(dim, K, points_per_dim)
    stored: dict = {}
    for e in entries:
        k = tuple(int(x) for x in e["k"])
        if len(k) != dim or any(abs(c) > K for c in k):
            raise SerializationError(f"mode {k} outside the cutoff")
        stored[k] = complex(float(e["re"]), float(e["im"]))
    f = SpectralField.zero(grid)
    seen = set()
    for k, val in stored.items():
        if k in seen:
            continue
        mk = tuple(-c for c in k)
        partner = stored.get(mk)
        if partner is not None and mk != k:
            defect = abs(val - np.conj(partner))
            if defect > HERMITIAN_REJECT_TOL * max(1.0, abs(val)):
                raise SerializationError(
                    f"Hermitian violation at k={k}: |u(k) - conj(u(-k))| = {defect:.3e}"
                )
            val = 0.5 * (val + np.conj(partner))
        if mk == k:
            val = complex(val.real, 0.0)
        idx = tuple(c + K for c in k)
        midx = tuple(-c + K for c in k)
        f.coeffs[idx] = val
        f.coeffs[midx] = np.conj(val)
        seen.add(k)
        seen.add(mk)
    return f
