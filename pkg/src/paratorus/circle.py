"""Circle-map conjugacy by direct fixed-point iteration on the para-inverse form.

Solves eta(x + alpha) = eta(x) + alpha + f(eta(x)) - lambda with eta = Id + u,
rearranged as Delta_alpha u = f o (Id + u) - lambda. One Picard step inverts
    T_{1/(1+u')} Delta_alpha T_{(1+u') o tau_alpha}
against the fully evaluated right-hand side, with both smoothing remainders
computed as literal differences. A naive baseline iterates the unconditioned
equation and is expected to degrade first as the perturbation grows.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .dyadic import DyadicCutoff, make_cutoff
from .errors import DiffeomorphismLostError, MaxIterExceededError
from .paraprod import para_compose, para_invert, para_product
from .reporting import SolveReport
from .smalldiv import RotationAngle, delta_alpha, delta_alpha_inverse, remove_mean
from .spectral import SpectralField, VectorField, analyze, compose_warped

_MODES = ("standard", "refined", "naive")

CIRCLE_COLUMNS = ["iter", "increment_hs", "residual_sup", "residual_hs", "lambda"]


@dataclass
class CircleProblem:
    alpha: RotationAngle
    f: SpectralField
    s: float
    tol: float = 1e-10
    max_iter: int = 40
    mode: str = "standard"
    invert_tol: float = 1e-13
    invert_max_iter: int = 300
    compose_window: int = 2

    def __post_init__(self):
        if self.f.grid.dim != 1:
            raise ValueError("circle problems live on T^1")
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}")


@dataclass
class CircleSolution:
    u: SpectralField
    lam: float
    report: SolveReport


def _one_plus_du(u: SpectralField) -> SpectralField:
    return u.derivative(0) + 1.0


def _reciprocal(field: SpectralField) -> SpectralField:
    vals = field.samples()
    low = float(np.min(vals))
    if low <= 1e-10:
        raise DiffeomorphismLostError(f"1 + u' reaches {low:.3e}: not a diffeomorphism")
    return analyze(field.grid, 1.0 / vals)


def g_map(u: SpectralField, problem: CircleProblem, cut: DyadicCutoff | None = None):
    """One application of the para-inverse right-hand side; returns (u_next, lambda).

    Assembly: (i) composed value and para-linearization remainder as a literal
    difference, (ii) the composition remainder of the factored operator, also
    literal, (iii) lambda balancing the mean through two para-inversions,
    (iv) the small-divisor inverse followed by the outer para-inversion.
    """
    if cut is None:
        cut = make_cutoff(u.grid)
    f = problem.f
    alpha = problem.alpha
    one_du = _one_plus_du(u)
    recip = _reciprocal(one_du)
    fwd_symbol = one_du.translate([alpha.alpha])

    comp = compose_warped(f, VectorField([u]))
    fprime_comp = compose_warped(f.derivative(0), VectorField([u]))
    slope_symbol = delta_alpha(u.derivative(0), alpha).product(recip)

    # remainder from trading T_{ab} for T_a T_b in the factored operator:
    # R_1(u) = [Delta_alpha u - T_{Delta_alpha u'/(1+u')} u]
    #          - T_{(1+u') o tau_alpha} Delta_alpha T_{1/(1+u')} u
    r1 = (
        delta_alpha(u, alpha)
        - para_product(slope_symbol, u, cut)
        - para_product(fwd_symbol, delta_alpha(para_product(recip, u, cut), alpha), cut)
    )

    if problem.mode == "refined":
        chi_star = para_compose(f, VectorField([u]), cut, window=problem.compose_window)
        compose_rem = comp - chi_star - para_product(fprime_comp, u, cut)
        bracket = chi_star + compose_rem - r1
    else:
        pl = comp - f - para_product(fprime_comp, u, cut)
        bracket = f + pl - r1

    inv = lambda v: para_invert(
        fwd_symbol, v, cut, tol=problem.invert_tol, max_iter=problem.invert_max_iter
    )
    gi = inv(bracket)
    onei = inv(SpectralField.constant(u.grid, 1.0))
    lam = gi.mean() / onei.mean()
    w = gi - lam * onei
    v = delta_alpha_inverse(w, alpha)
    u_next = para_invert(
        recip, v, cut, tol=problem.invert_tol, max_iter=problem.invert_max_iter
    )
    return u_next, lam


def _naive_step(u: SpectralField, problem: CircleProblem):
    comp = compose_warped(problem.f, VectorField([u]))
    lam = comp.mean()
    u_next = delta_alpha_inverse(remove_mean(comp), problem.alpha)
    return u_next, lam


def residual(u: SpectralField, lam: float, problem: CircleProblem):
    """Conjugacy defect Delta_alpha u - f o (Id + u) + lambda and its norms."""
    field = delta_alpha(u, problem.alpha) - compose_warped(problem.f, VectorField([u])) + lam
    return field, field.sup_norm(), field.sobolev_norm(problem.s)


def certify(
    u: SpectralField,
    lam: float,
    problem: CircleProblem,
    cut: DyadicCutoff | None = None,
) -> float:
    """Neumann certificate kappa = |T_{E'/(1+u')} u|_{H^s} / |E|_{H^s}.

    kappa < 1 certifies that the para-homological solution annihilates the
    residual up to discretization; the operator is applied to the measured
    residual E itself.
    """
    if cut is None:
        cut = make_cutoff(u.grid)
    E, _, _ = residual(u, lam, problem)
    denom = E.sobolev_norm(problem.s)
    if denom == 0.0:
        return 0.0
    symbol = E.derivative(0).product(_reciprocal(_one_plus_du(u)))
    return para_product(symbol, u, cut).sobolev_norm(problem.s) / denom


def solve(problem: CircleProblem) -> CircleSolution:
    """Picard iteration of the para-inverse equation from u = 0.

    Stops when the H^s increment drops below tol, with a secondary stop on
    residual sup-norm below tol/10. Raises MaxIterExceededError (with the
    report attached) if neither trigger fires.
    """
    t0 = time.perf_counter()
    grid = problem.f.grid
    cut = make_cutoff(grid)
    report = SolveReport(columns=list(CIRCLE_COLUMNS))
    u = SpectralField.zero(grid)
    lam = 0.0
    step = _naive_step if problem.mode == "naive" else (
        lambda v, p: g_map(v, p, cut)
    )
    converged = False
    for it in range(1, problem.max_iter + 1):
        u_next, lam = step(u, problem)
        inc = (u_next - u).sobolev_norm(problem.s)
        _, res_sup, res_hs = residual(u_next, lam, problem)
        report.add_row(
            iter=it, increment_hs=inc, residual_sup=res_sup, residual_hs=res_hs,
            **{"lambda": lam},
        )
        u = u_next
        if inc < problem.tol or res_sup < problem.tol / 10.0:
            converged = True
            break
    report.wall_time = time.perf_counter() - t0
    if not converged:
        report.status = "max_iter_exceeded"
        raise MaxIterExceededError(
            f"no convergence in {problem.max_iter} iterations "
            f"(last increment {report.last('increment_hs'):.3e})",
            report=report,
        )
    # terminal diagnostics
    slope = _one_plus_du(u).samples()
    report.status = "converged"
    report.extras["min_one_plus_du"] = float(np.min(slope))
    _, tail = compose_warped(problem.f, VectorField([u]), return_tail=True)
    report.extras["compose_tail_energy"] = tail
    report.extras["lambda"] = lam
    report.extras["residual_sup"] = report.last("residual_sup")
    report.extras["u_hs"] = u.sobolev_norm(problem.s)
    if problem.mode != "naive":
        report.extras["kappa"] = certify(u, lam, problem, cut)
    if len(report.rows) >= 2:
        incs = [r["increment_hs"] for r in report.rows[-5:]]
        ratios = [b / a for a, b in zip(incs, incs[1:]) if a > 0]
        if ratios:
            report.extras["contraction"] = max(ratios)
    if float(np.min(slope)) <= 0.0:
        raise DiffeomorphismLostError("converged u is not a diffeomorphism")
    return CircleSolution(u=u, lam=lam, report=report)


def rotation_number(
    alpha: float, f: SpectralField, lam: float, iterations: int, x0: float = 0.1
) -> float:
    """Birkhoff-averaged rotation number of the lifted map x -> x + alpha + f(x) - lambda.

    Independent orbit oracle: averages the per-step displacement over the
    orbit, which equals (T^m(x0) - x0)/m for the lift.
    """
    if isinstance(alpha, RotationAngle):
        alpha = alpha.alpha
    cmax = float(np.max(np.abs(f.coeffs)))
    mask = np.abs(f.coeffs.ravel()) > 1e-15 * max(cmax, 1.0)
    modes = f.grid.mode_list[mask][:, 0].astype(float)
    coeffs = f.coeffs.ravel()[mask]
    y = x0 % (2.0 * np.pi)
    total = 0.0
    for _ in range(iterations):
        fval = float(np.real(coeffs @ np.exp(1j * modes * y)))
        step = alpha + fval - lam
        total += step
        y = (y + step) % (2.0 * np.pi)
    return total / iterations
