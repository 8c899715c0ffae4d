"""Invariant-torus solver for near-integrable Hamiltonians on T^n x R^n.

The Hamiltonian is Taylor data in the action y,
    h(x, y) = a0(x) + <a1(x), y> + 1/2 <Q(x) y, y> + 1/6 C(x)[y, y, y],
and the unknown is an embedding u: theta -> (theta + ux(theta), uy(theta))
whose image is invariant with flow conjugate to the rotation omega. The solver
iterates the para-inverse form of the para-homological equation: each step
solves the linear para-homological system in the moving frame built from
(N, M, S) and feeds back the two smoothing remainders, both evaluated as
literal differences of fully computed expressions.

Sign conventions are fixed by the exact linearization identity
    A M - (omega.d) M = M [[0, S], [0, 0]] + B[F]   (+ terms linear in F),
which forces the commutator orientation [A, J] = AJ - JA in the torsion and
in particular S = -Q0 at the flat torus of an integrable Hamiltonian.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .dyadic import DyadicCutoff, make_cutoff
from .errors import (
    DegenerateEmbeddingError,
    EnergyDriftError,
    MaxIterExceededError,
    NonContractiveError,
    SingularAverageError,
)
from .paraprod import ParaOpHandle, para_invert_with_handle
from .reporting import SolveReport
from .smalldiv import FrequencyVector, omega_directional_inverse, remove_mean
from .spectral import (
    MatrixField,
    SpectralField,
    TorusGrid,
    VectorField,
    analyze,
    synthesize,
    warp_samples,
)

TORUS_COLUMNS = ["iter", "increment_hs", "residual_sup", "residual_hs", "xi_norm", "mu_norm"]

_MODES = ("thm1", "thm2")


def _symplectic_J(n: int) -> np.ndarray:
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = np.eye(n)
    J[n:, :n] = -np.eye(n)
    return J


@dataclass
class HamiltonianData:
    """Taylor data of h in the action variable, truncated at cubic order."""

    a0: SpectralField
    a1: VectorField
    Q: MatrixField
    cubic: list | None = None  # symmetric n x n x n nest of SpectralFields

    def __post_init__(self):
        n = len(self.a1)
        grid = self.a0.grid
        grid.require_same(self.a1.grid)
        grid.require_same(self.Q.grid)
        if self.Q.shape != (n, n):
            raise ValueError("Q must be n x n")
        sym = max(
            (self.Q[i, j] - self.Q[j, i]).sup_norm() for i in range(n) for j in range(n)
        )
        if sym > 1e-12 * max(1.0, self.Q.sup_norm()):
            raise ValueError(f"Q is not symmetric: defect {sym:.3e}")
        if self.cubic is not None:
            for i in range(n):
                for j in range(n):
                    for k in range(n):
                        grid.require_same(self.cubic[i][j][k].grid)
        self._cache = {}

    @property
    def n(self) -> int:
        return len(self.a1)

    @property
    def grid(self) -> TorusGrid:
        return self.a0.grid

    def _d(self, key, builder):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]

    def d1_a0(self):
        return self._d("d1_a0", lambda: [self.a0.derivative(l) for l in range(self.n)])

    def d2_a0(self):
        return self._d(
            "d2_a0",
            lambda: [[f.derivative(m) for m in range(self.n)] for f in self.d1_a0()],
        )

    def d1_a1(self):
        return self._d(
            "d1_a1",
            lambda: [[self.a1[i].derivative(l) for l in range(self.n)] for i in range(self.n)],
        )

    def d2_a1(self):
        return self._d(
            "d2_a1",
            lambda: [
                [[g.derivative(m) for m in range(self.n)] for g in row]
                for row in self.d1_a1()
            ],
        )

    def d1_Q(self):
        return self._d(
            "d1_Q",
            lambda: [
                [[self.Q[i, j].derivative(l) for l in range(self.n)] for j in range(self.n)]
                for i in range(self.n)
            ],
        )

    def d2_Q(self):
        return self._d(
            "d2_Q",
            lambda: [
                [[[g.derivative(m) for m in range(self.n)] for g in inner] for inner in row]
                for row in self.d1_Q()
            ],
        )

    def d1_C(self):
        if self.cubic is None:
            return None
        return self._d(
            "d1_C",
            lambda: [
                [
                    [[self.cubic[i][j][k].derivative(l) for l in range(self.n)] for k in range(self.n)]
                    for j in range(self.n)
                ]
                for i in range(self.n)
            ],
        )

    def d2_C(self):
        if self.cubic is None:
            return None
        return self._d(
            "d2_C",
            lambda: [
                [
                    [
                        [[g.derivative(m) for m in range(self.n)] for g in lvl]
                        for lvl in inner
                    ]
                    for inner in row
                ]
                for row in self.d1_C()
            ],
        )

    def value_at(self, x: np.ndarray, y: np.ndarray, xi=None) -> float:
        """Pointwise h_xi(x, y) for the flow oracle's energy monitor."""
        n = self.n
        val = synthesize(self.a0, x)
        a1v = np.array([synthesize(self.a1[i], x) for i in range(n)])
        val += float(a1v @ y)
        Qv = np.array([[synthesize(self.Q[i, j], x) for j in range(n)] for i in range(n)])
        val += 0.5 * float(y @ Qv @ y)
        if self.cubic is not None:
            Cv = np.array(
                [
                    [[synthesize(self.cubic[i][j][k], x) for k in range(n)] for j in range(n)]
                    for i in range(n)
                ]
            )
            val += float(np.einsum("ijk,i,j,k->", Cv, y, y, y)) / 6.0
        if xi is not None:
            val += float(np.dot(xi, y))
        return val


@dataclass
class TorusEmbedding:
    """theta -> (theta + ux(theta), uy(theta)); ux is the periodic x-displacement."""

    ux: VectorField
    uy: VectorField

    def __post_init__(self):
        self.ux.grid.require_same(self.uy.grid)
        if len(self.ux) != len(self.uy):
            raise ValueError("ux and uy need equally many components")

    @classmethod
    def flat(cls, grid: TorusGrid) -> "TorusEmbedding":
        n = grid.dim
        return cls(VectorField.zero(grid, n), VectorField.zero(grid, n))

    @property
    def grid(self) -> TorusGrid:
        return self.ux.grid

    @property
    def n(self) -> int:
        return len(self.ux)

    def displacement(self) -> VectorField:
        """(ux, uy) stacked as one 2n-component field (u - zeta_0)."""
        return VectorField(list(self.ux.fields) + list(self.uy.fields))

    @classmethod
    def from_displacement(cls, w: VectorField) -> "TorusEmbedding":
        n = len(w) // 2
        return cls(VectorField(w.fields[:n]), VectorField(w.fields[n:]))

    def diff_norm(self, other: "TorusEmbedding", s: float) -> float:
        return (self.displacement() - other.displacement()).sobolev_norm(s)


@dataclass
class KamSolution:
    u: TorusEmbedding
    xi: np.ndarray
    mu: np.ndarray
    report: SolveReport


# --- pointwise evaluation tables -------------------------------------------


def _warp_points(u: TorusEmbedding) -> np.ndarray:
    grid = u.grid
    base = np.stack(grid.point_mesh)
    if all(f.l2_norm() == 0.0 for f in u.ux):
        return base
    return base + u.ux.samples()


class _Warp:
    """Memoized composition of coefficient fields with one fixed x-warp."""

    def __init__(self, u: TorusEmbedding):
        self.grid = u.grid
        self.trivial = all(f.l2_norm() == 0.0 for f in u.ux)
        self.pts = _warp_points(u)
        self._memo = {}

    def __call__(self, f: SpectralField) -> np.ndarray:
        key = id(f)
        if key not in self._memo:
            self._memo[key] = f.samples() if self.trivial else warp_samples(f, self.pts)
        return self._memo[key]


def _xh_samples(h: HamiltonianData, u: TorusEmbedding, warp: _Warp) -> np.ndarray:
    """Samples of X_h along u: (grad_y h; -grad_x h) at (theta + ux, uy)."""
    n = h.n
    uy = u.uy.samples()
    gy = np.stack([warp(h.a1[i]) for i in range(n)])
    Qw = np.stack([np.stack([warp(h.Q[i, j]) for j in range(n)]) for i in range(n)])
    gy += np.einsum("ij...,j...->i...", Qw, uy)
    if h.cubic is not None:
        Cw = np.stack(
            [
                np.stack([np.stack([warp(h.cubic[i][j][k]) for k in range(n)]) for j in range(n)])
                for i in range(n)
            ]
        )
        gy += 0.5 * np.einsum("ijk...,j...,k...->i...", Cw, uy, uy)
    d1a0 = h.d1_a0()
    d1a1 = h.d1_a1()
    d1Q = h.d1_Q()
    gx = np.stack([warp(d1a0[l]) for l in range(n)])
    da1w = np.stack([np.stack([warp(d1a1[i][l]) for l in range(n)]) for i in range(n)])
    gx += np.einsum("il...,i...->l...", da1w, uy)
    dQw = np.stack(
        [np.stack([np.stack([warp(d1Q[i][j][l]) for l in range(n)]) for j in range(n)]) for i in range(n)]
    )
    gx += 0.5 * np.einsum("ijl...,i...,j...->l...", dQw, uy, uy)
    if h.cubic is not None:
        d1C = h.d1_C()
        dCw = np.stack(
            [
                np.stack(
                    [
                        np.stack([np.stack([warp(d1C[i][j][k][l]) for l in range(n)]) for k in range(n)])
                        for j in range(n)
                    ]
                )
                for i in range(n)
            ]
        )
        gx += np.einsum("ijkl...,i...,j...,k...->l...", dCw, uy, uy, uy) / 6.0
    return np.concatenate([gy, -gx], axis=0)


def hamiltonian_vector_field(h: HamiltonianData, u: TorusEmbedding) -> VectorField:
    """X_h evaluated along the embedding u (2n components)."""
    warp = _Warp(u)
    return VectorField.from_samples(u.grid, _xh_samples(h, u, warp))


def _jacobian_samples(h: HamiltonianData, u: TorusEmbedding, warp: _Warp) -> np.ndarray:
    """Samples of A[u] = (DX_h)(u), shape (2n, 2n, *grid)."""
    n = h.n
    uy = u.uy.samples()
    shape = u.grid.point_shape
    A = np.zeros((2 * n, 2 * n) + shape)
    d1a1 = h.d1_a1()
    d1Q = h.d1_Q()
    d2a0 = h.d2_a0()
    d2a1 = h.d2_a1()
    d2Q = h.d2_Q()
    # A11 = D_x grad_y h
    for i in range(n):
        for l in range(n):
            acc = warp(d1a1[i][l]).copy()
            for j in range(n):
                acc += warp(d1Q[i][j][l]) * uy[j]
            if h.cubic is not None:
                d1C = h.d1_C()
                for j in range(n):
                    for k in range(n):
                        acc += 0.5 * warp(d1C[i][j][k][l]) * uy[j] * uy[k]
            A[i, l] = acc
    # A12 = D_y grad_y h = Q + C[., ., uy]
    for i in range(n):
        for j in range(n):
            acc = warp(h.Q[i, j]).copy()
            if h.cubic is not None:
                for k in range(n):
                    acc += warp(h.cubic[i][j][k]) * uy[k]
            A[i, n + j] = acc
    # A21 = -D_x grad_x h
    for l in range(n):
        for m in range(n):
            acc = warp(d2a0[l][m]).copy()
            for i in range(n):
                acc += warp(d2a1[i][l][m]) * uy[i]
            for i in range(n):
                for j in range(n):
                    acc += 0.5 * warp(d2Q[i][j][l][m]) * uy[i] * uy[j]
            if h.cubic is not None:
                d2C = h.d2_C()
                for i in range(n):
                    for j in range(n):
                        for k in range(n):
                            acc += warp(d2C[i][j][k][l][m]) * uy[i] * uy[j] * uy[k] / 6.0
            A[n + l, m] = -acc
    # A22 = -D_y grad_x h = -(A11)^T pointwise
    for l in range(n):
        for j in range(n):
            A[n + l, n + j] = -A[j, l]
    return A


def jacobian_A(h: HamiltonianData, u: TorusEmbedding) -> MatrixField:
    warp = _Warp(u)
    return MatrixField.from_samples(u.grid, _jacobian_samples(h, u, warp))


def error_fields(h: HamiltonianData, omega) -> tuple:
    """(e0, e1): invariance defect X_h(zeta0) - (omega; 0), integrability defect Q - Avg Q."""
    grid = h.grid
    n = h.n
    omega = np.asarray(omega, dtype=float) if not isinstance(omega, FrequencyVector) else omega.array
    zeta = TorusEmbedding.flat(grid)
    e0 = hamiltonian_vector_field(h, zeta)
    shift = [SpectralField.constant(grid, omega[i]) for i in range(n)]
    e0 = VectorField(
        [e0[i] - shift[i] for i in range(n)] + [e0[n + i] for i in range(n)]
    )
    avgQ = h.Q.mean_matrix()
    e1 = MatrixField(
        [[h.Q[i, j] - avgQ[i, j] for j in range(n)] for i in range(n)]
    )
    return e0, e1


# --- frame and torsion ------------------------------------------------------


def _embedding_jacobian_samples(u: TorusEmbedding) -> np.ndarray:
    """d(embedding)/d(theta) with the identity included: shape (2n, n, *grid)."""
    n = u.n
    shape = u.grid.point_shape
    P = np.zeros((2 * n, n) + shape)
    for i in range(n):
        for a in range(n):
            P[i, a] = u.ux[i].derivative(a).samples()
            P[n + i, a] = u.uy[i].derivative(a).samples()
        P[i, i] += 1.0
    return P


def _frame_samples(u: TorusEmbedding):
    n = u.n
    P = _embedding_jacobian_samples(u)
    G = np.einsum("am...,an...->mn...", P, P)
    moved = np.moveaxis(G, (0, 1), (-2, -1))
    dets = np.linalg.det(moved)
    if np.min(np.abs(dets)) < 1e-12:
        raise DegenerateEmbeddingError(
            f"embedding Gram matrix nearly singular: min |det| = {np.min(np.abs(dets)):.3e}"
        )
    Ninv = np.moveaxis(np.linalg.inv(moved), (-2, -1), (0, 1))
    J = _symplectic_J(n)
    JP = np.einsum("ab,bm...->am...", J, P)
    JPN = np.einsum("am...,mn...->an...", JP, Ninv)
    M = np.concatenate([P, JPN], axis=1)
    movedM = np.moveaxis(M, (0, 1), (-2, -1))
    detsM = np.linalg.det(movedM)
    if np.min(np.abs(detsM)) < 1e-12:
        raise DegenerateEmbeddingError("frame matrix M nearly singular")
    Minv = np.moveaxis(np.linalg.inv(movedM), (-2, -1), (0, 1))
    return P, Ninv, M, Minv


def frame(u: TorusEmbedding) -> tuple:
    """(N, M, M_inv) as matrix fields; N = (du^T du)^{-1}, M = (du, J du N)."""
    _, Ninv, M, Minv = _frame_samples(u)
    g = u.grid
    return (
        MatrixField.from_samples(g, Ninv),
        MatrixField.from_samples(g, M),
        MatrixField.from_samples(g, Minv),
    )


def _torsion_samples(h: HamiltonianData, u: TorusEmbedding, warp: _Warp, P=None, Ninv=None):
    if P is None or Ninv is None:
        P, Ninv, _, _ = _frame_samples(u)
    A = _jacobian_samples(h, u, warp)
    J = _symplectic_J(h.n)
    AJ = np.einsum("ab...,bc->ac...", A, J)
    JA = np.einsum("ab,bc...->ac...", J, A)
    comm = AJ - JA
    inner = np.einsum("am...,ab...,bn...->mn...", P, comm, P)
    return np.einsum("km...,mn...,nl...->kl...", Ninv, inner, Ninv)


def torsion_S(h: HamiltonianData, u: TorusEmbedding) -> MatrixField:
    """Torsion S[u] = N (du)^T [A, J] (du) N with [A, J] = AJ - JA.

    The orientation is pinned by the exact linearization identity; it gives
    S = -Q0 at the flat torus of an integrable Hamiltonian.
    """
    warp = _Warp(u)
    return MatrixField.from_samples(u.grid, _torsion_samples(h, u, warp))


def b_matrices(E: VectorField, u: TorusEmbedding) -> MatrixField:
    """Assembled error-frame matrix B[E] = (B1 | B2 + B3), linear in dE."""
    n = u.n
    if len(E) != 2 * n:
        raise ValueError("E must have 2n components")
    P, Ninv, _, _ = _frame_samples(u)
    dE = np.stack(
        [np.stack([E[a].derivative(l).samples() for l in range(n)]) for a in range(2 * n)]
    )
    J = _symplectic_J(n)
    B1 = dE
    B2 = np.einsum("ab,bm...,mn...->an...", J, dE, Ninv)
    JP = np.einsum("ab,bm...->am...", J, P)
    N2 = np.einsum("mk...,kn...->mn...", Ninv, Ninv)
    skew = np.einsum("am...,an...->mn...", dE, P) - np.einsum("am...,an...->mn...", P, dE)
    t1 = np.einsum("am...,mk...,kn...->an...", JP, N2, skew)
    PtdE = np.einsum("am...,an...->mn...", P, dE)
    t2 = np.einsum("am...,mk...,kn...->an...", JP, np.einsum("mk...,kn...->mn...", Ninv, PtdE), Ninv)
    B = np.concatenate([B1, B2 + t1 + t2], axis=1)
    return MatrixField.from_samples(u.grid, B)


# --- linear para-homological solve -----------------------------------------


def _split(v: VectorField) -> tuple:
    n = len(v) // 2
    return VectorField(v.fields[:n]), VectorField(v.fields[n:])


def _stack(x: VectorField, y: VectorField) -> VectorField:
    return VectorField(list(x.fields) + list(y.fields))


def _mean_free(v: VectorField) -> VectorField:
    return VectorField([remove_mean(f) for f in v])


def _apply_torsion_block(HS: ParaOpHandle, v: VectorField) -> VectorField:
    """(0 T_S; 0 0) v = (T_S v^y; 0)."""
    vx, vy = _split(v)
    top = HS.apply_vector(vy)
    return _stack(top, VectorField.zero(v.grid, len(vy)))


def linear_para_homological_solve(
    u: TorusEmbedding,
    S: MatrixField,
    f: VectorField,
    mode: str,
    omega: FrequencyVector,
    cut: DyadicCutoff,
    inner_tol: float = 1e-12,
    handles: tuple | None = None,
    check_tol: float = 1e-9,
):
    """Solve the linear para-homological system for (v, xi, mu).

    Conjugating by T_M and T_{M^{-1}} reduces the operator to block-triangular
    form; the y-row is solved first, the x-row is mean-balanced (through
    (Avg S)^{-1} in thm1 mode, through the free counterterm xi in thm2 mode),
    and the constants transfer back through the exact relation
    T_M(const) = Avg(M) const. The solution is self-certifying: the assembled
    equation is re-applied and must match f to check_tol relative.
    """
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}")
    n = u.n
    if handles is None:
        _, M, Minv = frame(u)
        HM = ParaOpHandle(M, cut)
        HMinv = ParaOpHandle(Minv, cut)
    else:
        HM, HMinv = handles
    HS = ParaOpHandle(S, cut)
    avgM = HM.avg
    avgS = HS.avg

    f1 = para_invert_with_handle(HM, f, tol=inner_tol)
    f1x, f1y = _split(f1)
    mu1 = f1y.mean_vector()

    if mode == "thm1":
        if np.linalg.cond(avgS) > 1e12:
            raise SingularAverageError("Avg S is singular: thm1 requires invertible Avg Q")
        m11, m12 = avgM[:n, :n], avgM[:n, n:]
        m21, m22 = avgM[n:, :n], avgM[n:, n:]
        xi1 = np.linalg.solve(m11, -m12 @ mu1)
        mu = m21 @ xi1 + m22 @ mu1
        xi = np.zeros(n)
        vy_fluct = -1.0 * omega_directional_inverse(_mean_free(f1y), omega)
        t_fluct = HS.apply_vector(vy_fluct)
        avg_vy = np.linalg.solve(
            avgS, f1x.mean_vector() - xi1 - t_fluct.mean_vector()
        )
        v1y = VectorField([vy_fluct[i] + avg_vy[i] for i in range(n)])
        rhs_x = f1x - HS.apply_vector(v1y)
        v1x = -1.0 * omega_directional_inverse(_mean_free(rhs_x), omega)
        xi1_used = xi1
    else:
        v1y = -1.0 * omega_directional_inverse(_mean_free(f1y), omega)
        rhs_x = f1x - HS.apply_vector(v1y)
        xi1_used = rhs_x.mean_vector()
        v1x = -1.0 * omega_directional_inverse(_mean_free(rhs_x), omega)
        const = avgM @ np.concatenate([xi1_used, mu1])
        xi, mu = const[:n], const[n:]

    v1 = _stack(v1x, v1y)
    v = para_invert_with_handle(HMinv, v1, tol=inner_tol)

    # self-check: substitute into the para-homological equation
    w1 = HMinv.apply_vector(v)
    lhs = HM.apply_vector(
        _apply_torsion_block(HS, w1) - w1.omega_derivative(omega.array)
    )
    const_vec = np.concatenate([xi, mu])
    lhs = VectorField([lhs[a] + const_vec[a] for a in range(2 * n)])
    fnorm = f.l2_norm()
    defect = (lhs - f).l2_norm()
    if fnorm > 0 and defect > check_tol * fnorm:
        raise NonContractiveError(
            f"linear para-homological self-check failed: {defect:.3e} > "
            f"{check_tol:.1e} * {fnorm:.3e}"
        )
    return VectorField(v.fields), np.asarray(xi), np.asarray(mu)


# --- nonlinear assembly ------------------------------------------------------


class _IterationOps:
    """Everything the solver needs at one embedding u, computed once."""

    def __init__(self, h: HamiltonianData, u: TorusEmbedding, omega: FrequencyVector, cut: DyadicCutoff):
        self.h, self.u, self.omega, self.cut = h, u, omega, cut
        self.n = h.n
        grid = u.grid
        self.warp = _Warp(u)
        self.P, self.Ninv, self.M_s, self.Minv_s = _frame_samples(u)
        self.M = MatrixField.from_samples(grid, self.M_s)
        self.Minv = MatrixField.from_samples(grid, self.Minv_s)
        self.S = MatrixField.from_samples(grid, _torsion_samples(h, u, self.warp, self.P, self.Ninv))
        self.HM = ParaOpHandle(self.M, cut)
        self.HMinv = ParaOpHandle(self.Minv, cut)
        self.HS = ParaOpHandle(self.S, cut)
        self.A_s = _jacobian_samples(h, u, self.warp)
        self.A = MatrixField.from_samples(grid, self.A_s)
        self.HA = ParaOpHandle(self.A, cut)
        self.Xh_u = VectorField.from_samples(grid, _xh_samples(h, u, self.warp))

    def pl_remainder_term(self, Xh_zeta: VectorField) -> VectorField:
        """R_PL(X_h(zeta0 + .), w) w = X_h(u) - X_h(zeta0) - T_{A[u]} w, literal."""
        w = self.u.displacement()
        return self.Xh_u - Xh_zeta - self.HA.apply_vector(w)

    def cm_remainder_term(self) -> VectorField:
        """Composition remainder of the frame-conjugated operator, literal.

        [T_{M(0 S;0 0)M^-1} - T_M (0 T_S;0 0) T_{M^-1}] w
        - [T_{M (w.d)M^-1} + (w.d) - T_M (w.d) T_{M^-1}] w
        """
        n, grid, cut = self.n, self.u.grid, self.cut
        w = self.u.displacement()
        omega_arr = self.omega.array
        zero = np.zeros((n, n) + grid.point_shape)
        S_block = np.concatenate(
            [
                np.concatenate([zero, self.S.samples()], axis=1),
                np.concatenate([zero, zero], axis=1),
            ],
            axis=0,
        )
        C1 = np.einsum("ab...,bc...,cd...->ad...", self.M_s, S_block, self.Minv_s)
        t_a = ParaOpHandle(MatrixField.from_samples(grid, C1), cut).apply_vector(w)
        w1 = self.HMinv.apply_vector(w)
        t_b = self.HM.apply_vector(_apply_torsion_block(self.HS, w1))
        dMinv = np.stack(
            [
                np.stack(
                    [self.Minv[a, b].omega_derivative(omega_arr).samples() for b in range(2 * n)]
                )
                for a in range(2 * n)
            ]
        )
        C2 = np.einsum("ab...,bc...->ac...", self.M_s, dMinv)
        t_c = ParaOpHandle(MatrixField.from_samples(grid, C2), cut).apply_vector(w)
        t_c = t_c + w.omega_derivative(omega_arr)
        t_d = self.HM.apply_vector(w1.omega_derivative(omega_arr))
        return (t_a - t_b) - t_c + t_d


def assemble_rhs(
    u: TorusEmbedding,
    h: HamiltonianData,
    omega: FrequencyVector,
    e0: VectorField,
    cut: DyadicCutoff,
    ops: _IterationOps | None = None,
    Xh_zeta: VectorField | None = None,
) -> VectorField:
    """-e0 - R_CM[u](u - zeta0) - R_PL(X_h(zeta0 + .), u - zeta0)(u - zeta0)."""
    if ops is None:
        ops = _IterationOps(h, u, omega, cut)
    if Xh_zeta is None:
        Xh_zeta = hamiltonian_vector_field(h, TorusEmbedding.flat(u.grid))
    rcm = ops.cm_remainder_term()
    rpl = ops.pl_remainder_term(Xh_zeta)
    return -1.0 * e0 - rcm - rpl


def residual_torus(h: HamiltonianData, u: TorusEmbedding, xi, omega) -> tuple:
    """F(h_xi, u) = X_h(u) + (xi; 0) - (omega.d) u with sup and H^s=0 norms."""
    omega_arr = omega.array if isinstance(omega, FrequencyVector) else np.asarray(omega, float)
    xi = np.zeros(u.n) if xi is None else np.asarray(xi, dtype=float)
    X = hamiltonian_vector_field(h, u)
    n = u.n
    lift_deriv = [SpectralField.constant(u.grid, omega_arr[i]) for i in range(n)]
    dux = u.ux.omega_derivative(omega_arr)
    duy = u.uy.omega_derivative(omega_arr)
    comps = []
    for i in range(n):
        comps.append(X[i] + xi[i] - lift_deriv[i] - dux[i])
    for i in range(n):
        comps.append(X[n + i] - duy[i])
    field = VectorField(comps)
    return field, field.sup_norm(), field.l2_norm()


def counterterm_check(h: HamiltonianData, u: TorusEmbedding, xi, mu, omega) -> float:
    """Defect of mu = Avg((du^y)^T F^x - (du^x)^T (F^y - mu)) with F = F(h_xi, u)."""
    mu = np.asarray(mu, dtype=float)
    field, _, _ = residual_torus(h, u, xi, omega)
    n = u.n
    F = field.samples()
    P = _embedding_jacobian_samples(u)
    dux, duy = P[:n], P[n:]
    Fx, Fy = F[:n], F[n:]
    Fy_shift = Fy - mu.reshape((n,) + (1,) * u.grid.dim)
    integrand = np.einsum("im...,i...->m...", duy, Fx) - np.einsum(
        "im...,i...->m...", dux, Fy_shift
    )
    axes = tuple(range(1, 1 + u.grid.dim))
    avg = integrand.mean(axis=axes)
    return float(np.max(np.abs(mu - avg)))


def neumann_certificate(
    h: HamiltonianData,
    u: TorusEmbedding,
    xi,
    mu,
    omega,
    cut: DyadicCutoff,
    s: float,
) -> float:
    """kappa = |T_{B[E] M^{-1}} (u - zeta0)|_{H^s} / |E|_{H^s} for the measured E."""
    mu = np.asarray(mu, dtype=float)
    field, _, _ = residual_torus(h, u, xi, omega)
    n = u.n
    E = VectorField(
        [field[i] for i in range(n)] + [field[n + i] + mu[i] for i in range(n)]
    )
    denom = E.sobolev_norm(s)
    if denom == 0.0:
        return 0.0
    B = b_matrices(E, u)
    _, _, Minv = frame(u)
    symbol = B.matmul(Minv)
    w = u.displacement()
    out = ParaOpHandle(symbol, cut).apply_vector(w)
    return out.sobolev_norm(s) / denom


def solve_torus(
    h: HamiltonianData,
    omega: FrequencyVector,
    mode: str,
    s: float,
    tol: float = 1e-10,
    max_iter: int = 50,
    cut: DyadicCutoff | None = None,
    inner_tol: float = 1e-12,
) -> KamSolution:
    """Picard iteration of the para-inverse equation from the flat embedding.

    Each step feeds assemble_rhs through the linear para-homological solve and
    replaces u by zeta0 + v; (xi, mu) come from the latest linear solve. The
    iteration stops when the H^s increment of the embedding drops below tol.
    """
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}")
    t0 = time.perf_counter()
    grid = h.grid
    if cut is None:
        cut = make_cutoff(grid)
    n = h.n
    e0, e1 = error_fields(h, omega)
    report = SolveReport(columns=list(TORUS_COLUMNS))
    if mode == "thm1":
        avgQ = h.Q.mean_matrix()
        if np.linalg.cond(avgQ) > 1e12:
            raise SingularAverageError("thm1 requires invertible Avg Q")
    zeta = TorusEmbedding.flat(grid)
    e1_size = max((f.l2_norm() for r in e1.rows for f in r), default=0.0)
    if e0.l2_norm() == 0.0 and e1_size == 0.0:
        # integrable data: the flat torus is exact, skip the iteration
        report.status = "converged"
        report.add_row(iter=1, increment_hs=0.0, residual_sup=0.0, residual_hs=0.0,
                       xi_norm=0.0, mu_norm=0.0)
        report.extras.update({"residual_sup": 0.0, "kappa": 0.0, "gamma": omega.gamma})
        report.wall_time = time.perf_counter() - t0
        return KamSolution(u=zeta, xi=np.zeros(n), mu=np.zeros(n), report=report)
    Xh_zeta = hamiltonian_vector_field(h, zeta)
    u = zeta
    xi = np.zeros(n)
    mu = np.zeros(n)
    converged = False
    for it in range(1, max_iter + 1):
        ops = _IterationOps(h, u, omega, cut)
        rhs = assemble_rhs(u, h, omega, e0, cut, ops=ops, Xh_zeta=Xh_zeta)
        v, xi, mu = linear_para_homological_solve(
            u, ops.S, rhs, mode, omega, cut,
            inner_tol=inner_tol, handles=(ops.HM, ops.HMinv),
        )
        u_next = TorusEmbedding.from_displacement(v)
        inc = u_next.diff_norm(u, s)
        _, res_sup, res_hs = residual_torus(h, u_next, xi, omega)
        report.add_row(
            iter=it, increment_hs=inc, residual_sup=res_sup, residual_hs=res_hs,
            xi_norm=float(np.linalg.norm(xi)), mu_norm=float(np.linalg.norm(mu)),
        )
        u = u_next
        if inc < tol:
            converged = True
            break
    report.wall_time = time.perf_counter() - t0
    if not converged:
        report.status = "max_iter_exceeded"
        raise MaxIterExceededError(
            f"torus solve: no convergence in {max_iter} iterations", report=report
        )
    report.status = "converged"
    disp = u.displacement()
    report.extras["residual_sup"] = report.last("residual_sup")
    report.extras["u_minus_flat_hs"] = disp.sobolev_norm(s)
    report.extras["gamma"] = omega.gamma
    eps = 0.1
    e0_strong = np.sqrt(sum(f.sobolev_norm(s + 2 * omega.sigma + eps) ** 2 for f in e0))
    report.extras["e0_strong_norm"] = float(e0_strong)
    if e0_strong > 0:
        report.extras["c2_empirical"] = disp.sobolev_norm(s) / (omega.gamma**2 * e0_strong)
    report.extras["kappa"] = neumann_certificate(h, u, xi, mu, omega, cut, s)
    report.extras["counterterm_defect"] = counterterm_check(h, u, xi, mu, omega)
    # truncation monitor: discarded tail energy of the composed vector field
    warp = _Warp(u)
    xh_samp = _xh_samples(h, u, warp)
    tails = [analyze(grid, xh_samp[a], return_tail=True)[1] for a in range(2 * n)]
    report.extras["xh_tail_energy"] = float(max(tails))
    return KamSolution(u=u, xi=xi, mu=mu, report=report)


# --- independent flow verification ------------------------------------------


class _SparseEval:
    """Point evaluation of one field through its precompressed nonzero modes."""

    def __init__(self, field: SpectralField, rel: float = 1e-15):
        cvec = field.coeffs.ravel()
        cmax = float(np.max(np.abs(cvec), initial=0.0))
        mask = np.abs(cvec) > rel * cmax if cmax > 0 else np.zeros(cvec.shape, bool)
        self.modes = field.grid.mode_list[mask].astype(float)
        self.coeffs = cvec[mask]

    def __call__(self, x: np.ndarray) -> float:
        if self.coeffs.size == 0:
            return 0.0
        return float(np.real(self.coeffs @ np.exp(1j * (self.modes @ x))))


def _point_rhs(h: HamiltonianData, xi: np.ndarray):
    """Closure z -> X_{h_xi}(z) with every coefficient field precompressed."""
    n = h.n
    a1 = [_SparseEval(h.a1[i]) for i in range(n)]
    Q = [[_SparseEval(h.Q[i, j]) for j in range(n)] for i in range(n)]
    da0 = [_SparseEval(f) for f in h.d1_a0()]
    da1 = [[_SparseEval(g) for g in row] for row in h.d1_a1()]
    dQ = [[[_SparseEval(g) for g in col] for col in row] for row in h.d1_Q()]
    C = dC = None
    if h.cubic is not None:
        C = [[[_SparseEval(h.cubic[i][j][k]) for k in range(n)] for j in range(n)] for i in range(n)]
        dC = [
            [[[_SparseEval(g) for g in lvl] for lvl in col] for col in row]
            for row in h.d1_C()
        ]

    def rhs(z: np.ndarray) -> np.ndarray:
        x, y = z[:n], z[n:]
        gy = np.array([a1[i](x) for i in range(n)]) + xi
        Qv = np.array([[Q[i][j](x) for j in range(n)] for i in range(n)])
        gy = gy + Qv @ y
        gx = np.array([da0[l](x) for l in range(n)])
        da1v = np.array([[da1[i][l](x) for l in range(n)] for i in range(n)])
        gx = gx + da1v.T @ y
        dQv = np.array([[[dQ[i][j][l](x) for l in range(n)] for j in range(n)] for i in range(n)])
        gx = gx + 0.5 * np.einsum("ijl,i,j->l", dQv, y, y)
        if C is not None:
            Cv = np.array([[[C[i][j][k](x) for k in range(n)] for j in range(n)] for i in range(n)])
            gy = gy + 0.5 * np.einsum("ijk,j,k->i", Cv, y, y)
            dCv = np.array(
                [[[[dC[i][j][k][l](x) for l in range(n)] for k in range(n)] for j in range(n)] for i in range(n)]
            )
            gx = gx + np.einsum("ijkl,i,j,k->l", dCv, y, y, y) / 6.0
        return np.concatenate([gy, -gx])

    return rhs


def _compress(f: SpectralField, rel: float = 1e-15) -> SpectralField:
    out = f.copy()
    cmax = float(np.max(np.abs(out.coeffs), initial=0.0))
    if cmax > 0:
        out.coeffs[np.abs(out.coeffs) < rel * cmax] = 0.0
    return out


def flow_oracle(
    h: HamiltonianData,
    u: TorusEmbedding,
    xi,
    omega,
    theta0,
    T: float,
    dt: float,
    energy_tol: float = 1e-6,
) -> float:
    """Max deviation of the RK4 orbit from z(0) = u(theta0) against u(theta0 + omega t).

    Independent invariance check: integrates the Hamiltonian ODE with fixed
    step dt and compares with the rotated embedding at every step. Raises
    EnergyDriftError if the relative energy drift exceeds energy_tol.
    """
    omega_arr = omega.array if isinstance(omega, FrequencyVector) else np.asarray(omega, float)
    xi = np.zeros(u.n) if xi is None else np.asarray(xi, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    n = u.n
    steps = int(round(T / dt))
    ux_c = [_compress(f) for f in u.ux]
    uy_c = [_compress(f) for f in u.uy]

    def embed(thetas: np.ndarray) -> np.ndarray:
        vals_x = np.stack([synthesize(f, thetas) for f in ux_c])
        vals_y = np.stack([synthesize(f, thetas) for f in uy_c])
        return np.concatenate([thetas.T + vals_x, vals_y])

    z = embed(theta0[None, :])[:, 0]
    H0 = h.value_at(z[:n], z[n:], xi)
    rhs = _point_rhs(h, xi)
    orbit = np.empty((steps + 1, 2 * n))
    orbit[0] = z
    for i in range(1, steps + 1):
        k1 = rhs(z)
        k2 = rhs(z + 0.5 * dt * k1)
        k3 = rhs(z + 0.5 * dt * k2)
        k4 = rhs(z + dt * k3)
        z = z + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        orbit[i] = z
        if i % 200 == 0:
            drift = abs(h.value_at(z[:n], z[n:], xi) - H0) / max(1.0, abs(H0))
            if drift > energy_tol:
                raise EnergyDriftError(
                    f"energy drift {drift:.3e} exceeds {energy_tol:.1e}; reduce dt"
                )
    times = dt * np.arange(steps + 1)
    thetas = theta0[None, :] + times[:, None] * omega_arr[None, :]
    ref = embed(thetas).T
    dev = np.sqrt(np.sum((orbit - ref) ** 2, axis=1))
    return float(np.max(dev))


# --- isotropy reduction -------------------------------------------------------


def lack_of_isotropy(zeta: TorusEmbedding) -> MatrixField:
    """L[zeta] = (d zeta)^T J (d zeta): the symplectic form pulled back to T^n."""
    P = _embedding_jacobian_samples(zeta)
    J = _symplectic_J(zeta.n)
    L = np.einsum("am...,ab,bn...->mn...", P, J, P)
    return MatrixField.from_samples(zeta.grid, L)


def isotropy_from_residual(
    zeta: TorusEmbedding, h: HamiltonianData, omega: FrequencyVector
) -> MatrixField:
    """L[zeta] via the transport formula d(omega.d)^{-1}[(d zeta)^T J F] - (transpose)."""
    field, _, _ = residual_torus(h, zeta, None, omega)
    P = _embedding_jacobian_samples(zeta)
    J = _symplectic_J(zeta.n)
    integrand = np.einsum("am...,ab,b...->m...", P, J, field.samples())
    g_vec = VectorField.from_samples(zeta.grid, integrand)
    g_vec = omega_directional_inverse(_mean_free(g_vec), omega)
    dg = g_vec.jacobian().samples()  # (m, a): d_a g_m
    # transport identity (omega.d) L = (P^T J dF)^T - P^T J dF fixes the
    # orientation: the gradient matrix enters transposed relative to dg
    L = np.swapaxes(dg, 0, 1) - dg
    return MatrixField.from_samples(zeta.grid, L)


def isotropic_correction(
    zeta: TorusEmbedding, h: HamiltonianData, omega: FrequencyVector
) -> TorusEmbedding:
    """First-order isotropic repair: eta^y = zeta^y - (d zeta^x)^T p, p = Lap^{-1} div L."""
    n = zeta.n
    L = isotropy_from_residual(zeta, h, omega)
    p = []
    for k in range(n):
        div = L[k, 0].derivative(0)
        for j in range(1, n):
            div = div + L[k, j].derivative(j)
        p.append(remove_mean(div).laplace_inverse())
    p_s = np.stack([f.samples() for f in p])
    P = _embedding_jacobian_samples(zeta)
    dzx = P[:n]  # (i, m, ...): d_m zeta^x_i
    corr = np.einsum("im...,i...->m...", dzx, p_s)
    uy_new = VectorField.from_samples(zeta.grid, zeta.uy.samples() - corr)
    return TorusEmbedding(ux=VectorField(list(zeta.ux.fields)), uy=uy_new)
