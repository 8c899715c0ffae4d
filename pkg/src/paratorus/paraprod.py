"""Para-product operators, their remainders, and Neumann-style para-inversion.

The para-product of a symbol a with an operand u staggers frequencies,
    T_a u = sum_j S_{j-3} a . Delta_j u,
so each summand pairs a low-pass of the symbol with one dyadic block of the
operand. Everything here reduces to dealiased products of retained fields;
sums run in ascending j so results are bitwise reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dyadic import DyadicCutoff
from .errors import (
    DiffeomorphismLostError,
    NonContractiveError,
    SingularAverageError,
)
from .spectral import (
    MatrixField,
    SpectralField,
    VectorField,
    analyze,
    warp_samples,
)

log = logging.getLogger(__name__)

_GAUSS_ORDER = 8  # nodes for the unit-interval integrals in the telescope


class ParaOpHandle:
    """Cached application of T_a for a scalar or matrix symbol.

    Precomputes the sampled low-passes S_{j-3}(a) once; applying the operator
    then costs one block synthesis per active level plus a single analysis.
    For j <= 3 the low-pass is the symbol mean, so those levels collapse to
    mean(a) * S_3 u.
    """

    def __init__(self, symbol, cut: DyadicCutoff):
        self.cut = cut
        self.grid = cut.grid
        if isinstance(symbol, SpectralField):
            self.matrix_shape = None
            cut.grid.require_same(symbol.grid)
            self.avg = symbol.mean()
            self.low = {
                j: cut.partial_sum(symbol, j - 3).samples()
                for j in range(4, cut.j_max + 1)
            }
        elif isinstance(symbol, MatrixField):
            cut.grid.require_same(symbol.grid)
            self.matrix_shape = symbol.shape
            self.avg = symbol.mean_matrix()
            p, q = symbol.shape
            self.low = {}
            for j in range(4, cut.j_max + 1):
                arr = np.empty((p, q) + cut.grid.point_shape)
                for i in range(p):
                    for l in range(q):
                        arr[i, l] = cut.partial_sum(symbol[i, l], j - 3).samples()
                self.low[j] = arr
        else:
            raise TypeError("symbol must be a SpectralField or MatrixField")

    def apply(self, u: SpectralField) -> SpectralField:
        if self.matrix_shape is not None:
            raise TypeError("matrix handle: use apply_vector")
        self.grid.require_same(u.grid)
        cut = self.cut
        acc = self.avg * cut.partial_sum(u, min(3, cut.j_max)).samples()
        for j in range(4, cut.j_max + 1):
            acc = acc + self.low[j] * cut.block_samples(u, j)
        return analyze(self.grid, acc)

    def apply_vector(self, v: VectorField) -> VectorField:
        if self.matrix_shape is None:
            raise TypeError("scalar handle: use apply")
        p, q = self.matrix_shape
        if len(v) != q:
            raise ValueError(f"operand has {len(v)} components, symbol needs {q}")
        self.grid.require_same(v.grid)
        cut = self.cut
        s3 = np.stack([cut.partial_sum(f, min(3, cut.j_max)).samples() for f in v])
        acc = np.einsum("pq,q...->p...", self.avg, s3)
        for j in range(4, cut.j_max + 1):
            blk = np.stack([cut.block_samples(f, j) for f in v])
            acc = acc + np.einsum("pq...,q...->p...", self.low[j], blk)
        return VectorField.from_samples(self.grid, acc)


def para_product(a: SpectralField, u: SpectralField, cut: DyadicCutoff) -> SpectralField:
    """T_a u = sum_j S_{j-3} a . Delta_j u with every summand dealiased."""
    return ParaOpHandle(a, cut).apply(u)


def para_product_matrix(A: MatrixField, v: VectorField, cut: DyadicCutoff) -> VectorField:
    """Blockwise para-product: (T_A v)_i = sum_j T_{A_ij} v_j."""
    return ParaOpHandle(A, cut).apply_vector(v)


def cm_remainder(
    a: SpectralField, b: SpectralField, u: SpectralField, cut: DyadicCutoff
) -> SpectralField:
    """Composition remainder (T_a T_b - T_{ab}) u, as the literal difference."""
    a.grid.require_same(b.grid)
    composed = para_product(a, para_product(b, u, cut), cut)
    direct = para_product(a.product(b), u, cut)
    return composed - direct


@dataclass
class MeyerMultiplierFamily:
    """A multiplier per block, u -> sum_j m_j . Delta_j u, claiming gain r."""

    multipliers: list
    target_gain: float

    def __post_init__(self):
        if not self.multipliers:
            raise ValueError("empty multiplier family")


def meyer_apply(fam: MeyerMultiplierFamily, u: SpectralField, cut: DyadicCutoff) -> SpectralField:
    if len(fam.multipliers) != cut.j_max + 1:
        raise ValueError(
            f"family has {len(fam.multipliers)} multipliers, cutoff needs {cut.j_max + 1}"
        )
    acc = np.zeros(cut.grid.point_shape)
    for j, m in enumerate(fam.multipliers):
        acc = acc + m.samples() * cut.block_samples(u, j)
    return analyze(cut.grid, acc)


def _gauss_nodes():
    x, w = np.polynomial.legendre.leggauss(_GAUSS_ORDER)
    return 0.5 * (x + 1.0), 0.5 * w


def telescope_remainders(F, Fz, u: SpectralField, cut: DyadicCutoff):
    """Both Meyer families of the telescoped para-linearization of F(x, u).

    F and Fz evaluate F(x, z) and dF/dz(x, z) pointwise on the collocation
    grid: they take (mesh, z_samples) and return samples. Returns (m1, m2)
    with, writing S_l for the partial sums and A for the mean,
        m_j^1 = (1 - S_{j-3})(Fz(x,0) - A Fz(x,0)),
        m_j^2 = int_0^1 [Fz(x, S_{j-1}u + t Delta_j u) - Fz(x,0)] dt
                - S_{j-3}(Fz(x,u) - Fz(x,0)),
    the j = 0 integral running over t Delta_0 u. The integrals use fixed
    Gauss-Legendre quadrature, exact for the polynomial nonlinearities in scope.
    """
    grid = u.grid
    cut.grid.require_same(grid)
    mesh = grid.point_mesh
    zero = np.zeros(grid.point_shape)
    fz0 = np.asarray(Fz(mesh, zero), dtype=float)
    fz0_field = analyze(grid, fz0)
    fz0_centered = fz0_field - fz0_field.mean()

    u_samp = u.samples()
    fzu = np.asarray(Fz(mesh, u_samp), dtype=float)
    diff_field = analyze(grid, fzu - fz0)

    nodes, weights = _gauss_nodes()
    m1, m2 = [], []
    for j in range(cut.j_max + 1):
        m1.append(fz0_centered - cut.partial_sum(fz0_centered, j - 3))
        blk = cut.block_samples(u, j)
        base = cut.partial_sum(u, j - 1).samples() if j >= 1 else zero
        integral = np.zeros(grid.point_shape)
        for t, w in zip(nodes, weights):
            integral += w * np.asarray(Fz(mesh, base + t * blk), dtype=float)
        integral -= fz0
        m2.append(analyze(grid, integral) - cut.partial_sum(diff_field, j - 3))
    gain = 0.0  # decay order is a measured quantity; families carry the claim
    return (
        MeyerMultiplierFamily(m1, target_gain=gain),
        MeyerMultiplierFamily(m2, target_gain=gain),
    )


def pl_remainder(
    F_of_u: SpectralField,
    F_of_0: SpectralField,
    Fz_at_u: SpectralField,
    u: SpectralField,
    cut: DyadicCutoff,
) -> SpectralField:
    """Para-linearization remainder F(x,u) - F(x,0) - T_{Fz(x,u)} u (literal)."""
    return F_of_u - F_of_0 - para_product(Fz_at_u, u, cut)


def para_compose(
    F: SpectralField,
    chi_displacement: VectorField,
    cut: DyadicCutoff,
    window: int = 2,
) -> SpectralField:
    """Para-composition sum_j (S_{j+N} - S_{j-N}) ((Delta_j F) o chi).

    chi = Id + displacement must be a diffeomorphism (sup |d displacement| < 1).
    For j - N < 0 the lower partial sum is the zero operator, which keeps
    constants intact (chi* c = c).
    """
    grid = F.grid
    cut.grid.require_same(grid)
    if window < 1:
        raise ValueError("window must be >= 1")
    jac = chi_displacement.jacobian()
    if jac.sup_norm() >= 1.0:
        raise DiffeomorphismLostError(
            "displacement gradient reaches 1: Id + displacement is not a diffeomorphism"
        )
    wpts = np.stack(grid.point_mesh) + chi_displacement.samples()
    out = SpectralField.zero(grid)
    for j in range(cut.j_max + 1):
        bj = cut.block(F, j)
        if not np.any(bj.coeffs):
            continue
        composed = analyze(grid, warp_samples(bj, wpts))
        high = cut.partial_sum(composed, j + window)
        if j - window >= 0:
            high = high - cut.partial_sum(composed, j - window)
        out = out + high
    return out


def _stalled(history, patience=4):
    if len(history) < patience + 1:
        return False
    recent = history[-(patience + 1) :]
    return all(recent[i + 1] >= recent[i] * 0.999 for i in range(patience))


def para_invert(
    a: SpectralField,
    v: SpectralField,
    cut: DyadicCutoff,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> SpectralField:
    """Solve T_a w = v by the preconditioned Neumann iteration.

    Iterates w <- w + mean(a)^{-1} (v - T_a w) until the relative L2 residual
    drops below tol; the forward application is always re-checked, so a
    returned w certifies itself. Raises NonContractiveError when the symbol
    is mean-dominated away from contraction.
    """
    m = a.mean()
    scale = max(a.sup_norm(), 1.0)
    if abs(m) <= 1e-13 * scale:
        raise SingularAverageError(
            f"symbol mean {m:.3e} is negligible against |a|_sup = {scale:.3e}"
        )
    vnorm = v.l2_norm()
    if vnorm == 0.0:
        return SpectralField.zero(v.grid)
    handle = ParaOpHandle(a, cut)
    w = v * (1.0 / m)
    history = []
    for _ in range(max_iter):
        r = v - handle.apply(w)
        rel = r.l2_norm() / vnorm
        if rel <= tol:
            return w
        history.append(rel)
        if _stalled(history):
            break
        w = w + r * (1.0 / m)
    raise NonContractiveError(
        f"para-inversion stalled at relative residual {history[-1]:.3e} "
        f"(tol {tol:.1e}); |a - mean(a)| is too large"
    )


def para_invert_matrix(
    A: MatrixField,
    v: VectorField,
    cut: DyadicCutoff,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> VectorField:
    """Blockwise para-inversion with preconditioner mean(A)^{-1}."""
    return para_invert_with_handle(ParaOpHandle(A, cut), v, tol=tol, max_iter=max_iter)


def para_invert_with_handle(
    handle: ParaOpHandle,
    v: VectorField,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> VectorField:
    """para_invert_matrix against a prebuilt handle (symbol reuse across calls)."""
    if handle.matrix_shape is None:
        raise TypeError("scalar handle passed to matrix inversion")
    avg = handle.avg
    cond = np.linalg.cond(avg)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularAverageError(f"mean symbol matrix is singular (cond {cond:.3e})")
    pre = np.linalg.inv(avg)
    vnorm = v.l2_norm()
    if vnorm == 0.0:
        return VectorField.zero(v.grid, len(v))
    def precond(res: VectorField) -> VectorField:
        # constant preconditioner acts exactly on coefficients, no transforms
        out = []
        for p in range(pre.shape[0]):
            acc = res[0] * pre[p, 0]
            for q in range(1, len(res)):
                acc = acc + res[q] * pre[p, q]
            out.append(acc)
        return VectorField(out)
    w = precond(v)
    history = []
    for _ in range(max_iter):
        r = v - handle.apply_vector(w)
        rel = r.l2_norm() / vnorm
        if rel <= tol:
            return w
        history.append(rel)
        if _stalled(history):
            break
        w = w + precond(r)
    raise NonContractiveError(
        f"matrix para-inversion stalled at relative residual {history[-1]:.3e} (tol {tol:.1e})"
    )
