"""Scalar parametrized problems: minimal branches, continuation, stability.

Covers the second-order problem and both fourth-order variants (Navier and
clamped boundary conditions) on the radial grid.  Minimal solutions come
from monotone iteration where the discrete comparison structure supports it
(second order and the Navier splitting); the clamped operator falls back to
a damped-Newton homotopy in the parameter.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from . import continuation as cont
from .errors import (
    InternalConsistencyError,
    NoContractionError,
    NonConvergenceError,
    RejectedInputError,
    UnavailableError,
)
from .nonlinearities import Nonlinearity
from .operators import (
    DIRICHLET4,
    NAVIER,
    OperatorMatrix,
    RadialField,
    RadialGrid,
    bilaplacian,
    integrate_values,
    laplacian,
)
from .radialpoly import check_boundary_compliance, xd_bank, xn_bank, xp_bank

SECOND = "second"

TOL_NEWTON = 1e-10          # on the h^2-scaled residual sup norm
TOL_EIG = 1e-8
BLOWUP_CAP = 1e6            # class R sup cap for the monotone iteration
CEILING_MARGIN = 1e-9       # class S iterates must stay below 1 - this


@dataclass(frozen=True)
class ProblemSpec:
    """One scalar problem: operator order/BCs, dimension, nonlinearity, grid."""

    order: str                  # "second" | "navier" | "dirichlet"
    N: int
    nl: Nonlinearity
    grid: RadialGrid

    def __post_init__(self):
        if self.order not in (SECOND, NAVIER, "dirichlet"):
            raise RejectedInputError(f"unknown problem order {self.order!r}")
        if self.grid.N != self.N:
            raise RejectedInputError("grid dimension disagrees with problem dimension")

    @property
    def fourth_order(self) -> bool:
        return self.order != SECOND

    def operator(self) -> OperatorMatrix:
        op = getattr(self, "_op", None)
        if op is None:
            if self.order == SECOND:
                op = laplacian(self.grid)
            elif self.order == NAVIER:
                op = bilaplacian(self.grid, NAVIER)
            else:
                op = bilaplacian(self.grid, DIRICHLET4)
            object.__setattr__(self, "_op", op)
        return op


@dataclass
class BranchPoint:
    lam: float
    u: RadialField
    eta1: Optional[float]
    sup_norm: float
    arclength: float
    converged: bool
    newton_iters: int
    residual: float


@dataclass
class DivergenceReport:
    lam: float
    iterations: int
    sup_final: float
    reason: str                 # "blow_up" | "ceiling" | "nonfinite" | ...
    trend: Optional[float] = None


@dataclass
class FoldEstimate:
    lambda_star: float
    index: int                  # first branch point past the fold
    point: Optional[BranchPoint] = None


@dataclass
class Branch:
    spec: ProblemSpec
    points: List[BranchPoint] = field(default_factory=list)
    fold: Optional[FoldEstimate] = None
    diagnostics: List[str] = field(default_factory=list)

    def prefold_points(self) -> List[BranchPoint]:
        if self.fold is None:
            return list(self.points)
        return self.points[: self.fold.index]


class _ScalarSystem:
    """Adapter presenting a ProblemSpec to the continuation engine."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.op = spec.operator()
        self.nl = spec.nl
        w = spec.grid.quad_weights()[:-1]
        self.weights = w / spec.grid.ball_volume()
        self.res_scale = spec.grid.h ** 2
        self.ceiling = spec.nl.domain_sup - CEILING_MARGIN

    def residual(self, x, lam):
        with np.errstate(over="ignore"):
            return self.op.matrix @ x - lam * self.nl.f(x)

    def jacobian(self, x, lam):
        with np.errstate(over="ignore"):
            return (self.op.matrix - sp.diags(lam * self.nl.fprime(x))).tocsc()

    def dres_dlam(self, x, lam):
        return -self.nl.f(x)

    def jacvec_dx(self, x, lam, phi):
        return sp.diags(-lam * self.nl.fsecond(x) * phi).tocsc()

    def jacvec_dlam(self, x, lam, phi):
        return -self.nl.fprime(x) * phi

    def admissible(self, x):
        return bool(np.all(np.isfinite(x))) and float(np.max(x, initial=0.0)) < self.ceiling

    def sup(self, x):
        return float(np.max(np.abs(x)))


def _point_from_interior(spec, lam, interior, eta1, iters, residual, arclength=0.0):
    fld = RadialField.from_interior(spec.grid, interior)
    return BranchPoint(
        lam=float(lam), u=fld, eta1=eta1,
        sup_norm=float(np.max(np.abs(fld.values))),
        arclength=arclength, converged=True,
        newton_iters=iters, residual=residual,
    )


def stability_eigenvalue(spec: ProblemSpec, point: BranchPoint) -> float:
    """Bottom eigenvalue of the linearization at the point (semi-stable iff >= 0)."""
    if not point.converged:
        raise RejectedInputError("stability requested at a non-converged point")
    return _eta_at(spec, point.lam, point.u.interior)


def _eta_at(spec, lam, interior):
    if spec.order == "dirichlet":
        return _eta_clamped_form(spec, lam, np.asarray(interior, dtype=float))
    sys = _ScalarSystem(spec)
    eta, _ = cont.smallest_eigenvalue(sys.jacobian(np.asarray(interior, float), lam))
    return eta


def _eta_clamped_form(spec, lam, interior):
    """Stability indicator for the clamped problem from the quadratic form.

    Clamped one-sided closures leave the composed matrix non-normal with
    spurious boundary modes, so the indicator is computed directly from the
    defining form: smallest eta with  int (D psi)^2 - lam f'(u) psi^2 =
    eta int psi^2  over clamped fields.  Symmetric-definite, hence real.
    """
    from scipy.linalg import eigh

    grid = spec.grid
    h = grid.h
    n = grid.n_unknowns
    lap = laplacian(grid).matrix
    # Delta psi at all nodes 0..M+1 for a clamped field (psi(1)=0, psi'(1)=0)
    E = sp.lil_matrix((grid.M + 2, n))
    E[:n, :] = -lap
    E[grid.M + 1, grid.M] = 2.0 / h ** 2       # ghost-closure boundary value
    E = E.tocsc()
    w_full = grid.quad_weights()
    w_int = w_full[:-1]
    A = (E.T @ sp.diags(w_full) @ E).toarray()
    with np.errstate(over="ignore"):
        A -= np.diag(lam * w_int * spec.nl.fprime(interior))
    vals = eigh(A, np.diag(w_int), eigvals_only=True, subset_by_index=[0, 0])
    return float(vals[0])


def minimal_solution(spec: ProblemSpec, lam: float, max_iters: int = 20000,
                     tol: float = TOL_NEWTON, compute_eta: bool = True):
    """Minimal solution at the parameter, or a divergence report.

    Second-order and Navier problems use the monotone iteration
    u_{k+1} = Op^{-1}(lam f(u_k)) from zero, which is pointwise nondecreasing
    when the discrete operator is inverse-positive; a decrease beyond rounding
    is flagged as an internal-consistency failure.  The clamped problem uses a
    damped-Newton homotopy in the parameter instead.
    """
    if lam < 0:
        raise RejectedInputError("lambda must be nonnegative")
    sys = _ScalarSystem(spec)
    n = spec.grid.n_unknowns
    if lam == 0.0:
        eta = _eta_at(spec, 0.0, np.zeros(n)) if compute_eta else None
        return _point_from_interior(spec, 0.0, np.zeros(n), eta, 0, 0.0)
    if spec.order == "dirichlet":
        return _homotopy_minimal(spec, sys, lam, tol, compute_eta)

    u = np.zeros(n)
    cap = BLOWUP_CAP if spec.nl.class_tag == "R" else math.inf
    increments = []
    for k in range(max_iters):
        with np.errstate(over="ignore"):
            fu = spec.nl.f(u)
        if not np.all(np.isfinite(fu)):
            return DivergenceReport(lam, k, sys.sup(u), "nonfinite")
        unew = sys.op.solve(lam * fu)
        if not np.all(np.isfinite(unew)):
            return DivergenceReport(lam, k, sys.sup(u), "nonfinite")
        d = unew - u
        dmax = float(np.abs(d).max())
        if float(d.min()) < -(1e-12 + 1e-6 * dmax):
            raise InternalConsistencyError(
                f"monotone iteration decreased at step {k} "
                f"(min increment {d.min():.3e})")
        if float(unew.max()) > cap:
            return DivergenceReport(lam, k, float(unew.max()), "blow_up")
        if spec.nl.class_tag == "S" and float(unew.max()) >= sys.ceiling:
            return DivergenceReport(lam, k, float(unew.max()), "ceiling")
        increments.append(dmax)
        u = unew
        if dmax < tol:
            eta = _eta_at(spec, lam, u) if compute_eta else None
            res = sys.res_scale * float(np.abs(sys.residual(u, lam)).max())
            return _point_from_interior(spec, lam, u, eta, k + 1, res)
    tail = increments[-10:]
    trend = tail[-1] / tail[0] if len(tail) >= 2 and tail[0] > 0 else None
    return DivergenceReport(lam, max_iters, sys.sup(u), "max_iterations", trend)


def _homotopy_minimal(spec, sys, lam, tol, compute_eta):
    """Damped Newton continuation in lambda from zero (clamped operator)."""
    u = np.zeros(spec.grid.n_unknowns)
    t = 0.0
    step = lam
    total_iters = 0
    while t < lam:
        target = min(lam, t + step)
        try:
            u_new, iters, res = cont.newton(sys, u, target, tol=tol)
        except NonConvergenceError:
            step *= 0.5
            if step < lam * 1e-6:
                return DivergenceReport(lam, total_iters, sys.sup(u), "homotopy_stall")
            continue
        u, t = u_new, target
        total_iters += iters
        step *= 1.6
    eta = _eta_at(spec, lam, u) if compute_eta else None
    res = sys.res_scale * float(np.abs(sys.residual(u, lam)).max())
    return _point_from_interior(spec, lam, u, eta, total_iters, res)


def small_solution(spec: ProblemSpec, lam: float, tol: float = 1e-12) -> BranchPoint:
    """Small clamped solution by sup-norm fixed-point iteration.

    Verifies the contraction estimate lam * f'(sqrt(lam)) * |Op^{-1}|_inf < 1
    and the invariance of the ball of radius sqrt(lam) before iterating; on
    success the bound sup|u| <= sqrt(lam) is asserted, not just reported.
    """
    if spec.order != "dirichlet":
        raise RejectedInputError("the small-solution construction is for the clamped problem")
    if lam < 0:
        raise RejectedInputError("lambda must be nonnegative")
    sys = _ScalarSystem(spec)
    n = spec.grid.n_unknowns
    if lam == 0.0:
        return _point_from_interior(spec, 0.0, np.zeros(n), _eta_at(spec, 0.0, np.zeros(n)), 0, 0.0)
    ginf = getattr(spec, "_ginf", None)
    if ginf is None:
        ginf = spec.operator().inf_norm_inverse()
        object.__setattr__(spec, "_ginf", ginf)
    root = math.sqrt(lam)
    spec.nl.check_domain(np.array([root]))
    rate = lam * float(spec.nl.fprime(root)) * ginf
    if rate >= 1.0:
        raise NoContractionError(
            f"contraction rate estimate {rate:.3f} >= 1 at lambda = {lam:g}")
    if lam * ginf * float(spec.nl.f(root)) > root:
        raise NoContractionError(
            f"ball of radius sqrt(lambda) is not invariant at lambda = {lam:g}")
    u = np.zeros(n)
    for k in range(1000):
        unew = sys.op.solve(lam * spec.nl.f(u))
        d = float(np.max(np.abs(unew - u)))
        u = unew
        if d < tol:
            break
    else:
        raise NonConvergenceError("fixed-point iteration exhausted its budget")
    sup = float(np.max(np.abs(u)))
    if sup > root:
        raise InternalConsistencyError(
            f"contraction succeeded but sup {sup:.6e} exceeds sqrt(lambda) {root:.6e}")
    eta = _eta_at(spec, lam, u)
    if eta <= 0:
        raise InternalConsistencyError("small solution is not strictly stable")
    res = sys.res_scale * float(np.abs(sys.residual(u, lam)).max())
    return _point_from_interior(spec, lam, u, eta, k + 1, res)


def newton_solve(spec: ProblemSpec, lam: float, guess, tol: float = TOL_NEWTON,
                 max_iter: int = 60, compute_eta: bool = True) -> BranchPoint:
    """Damped Newton from an arbitrary admissible guess."""
    if isinstance(guess, RadialField):
        guess = guess.interior
    guess = np.asarray(guess, dtype=float)
    spec.nl.check_domain(guess)
    sys = _ScalarSystem(spec)
    u, iters, res = cont.newton(sys, guess, lam, tol=tol, max_iter=max_iter)
    eta = _eta_at(spec, lam, u) if compute_eta else None
    return _point_from_interior(spec, lam, u, eta, iters, res)


def continue_branch(spec: ProblemSpec, lambda_init: float, ds: float = None,
                    n_steps: int = 250, sup_stop: float = None,
                    tol: float = TOL_NEWTON, compute_eta: bool = True) -> Branch:
    """Pseudo-arclength continuation of the branch through the fold.

    Starts from the minimal solution at lambda_init, steps in arclength,
    flags the fold from the sign change of d(lambda)/ds, and polishes the
    fold point with the extended-system Newton solver (the polished value is
    what FoldEstimate.lambda_star reports).
    """
    start = minimal_solution(spec, lambda_init, tol=tol, compute_eta=False)
    if isinstance(start, DivergenceReport):
        raise RejectedInputError(
            f"lambda_init = {lambda_init:g} diverges ({start.reason}); pick a smaller value")
    sys = _ScalarSystem(spec)
    if sup_stop is None:
        sup_stop = 15.0 if spec.nl.class_tag == "R" else math.inf
    run = cont.continue_arclength(
        sys, start.u.interior, lambda_init, ds or lambda_init / 4.0,
        n_steps, tol=tol, sup_stop=sup_stop)
    branch = Branch(spec, diagnostics=list(run.diagnostics))
    for p in run.points:
        eta = _eta_at(spec, p.lam, p.x) if compute_eta else None
        branch.points.append(_point_from_interior(
            spec, p.lam, p.x, eta, p.newton_iters, p.residual, p.arclength))
    if run.fold_index is not None:
        bracket = run.points[run.fold_index]
        try:
            xs, phi, lam_star = cont.refine_fold(sys, bracket.x, bracket.lam)
            res = sys.res_scale * float(np.abs(sys.residual(xs, lam_star)).max())
            eta = _eta_at(spec, lam_star, xs) if compute_eta else None
            fold_pt = _point_from_interior(spec, lam_star, xs, eta, 0, res,
                                           bracket.arclength)
            branch.fold = FoldEstimate(lam_star, run.fold_index, fold_pt)
        except (NonConvergenceError, cont.EigenSolverError) as exc:
            lams = [p.lam for p in run.points]
            branch.fold = FoldEstimate(float(np.max(lams)), run.fold_index, None)
            branch.diagnostics.append(f"fold refinement failed: {exc}")
    return branch


def extremal_solution(spec: ProblemSpec, branch: Branch = None, **cont_kwargs) -> BranchPoint:
    """The branch point at the fold, with the monotone-limit consistency check."""
    if branch is None:
        branch = continue_branch(spec, **cont_kwargs)
    if branch.fold is None or branch.fold.point is None:
        raise UnavailableError("no fold located; extremal solution unavailable")
    fold_pt = branch.fold.point
    worst = 0.0
    for p in branch.prefold_points():
        worst = max(worst, float(np.max(p.u.values - fold_pt.u.values)))
    if worst > 1e-8 * (1.0 + fold_pt.sup_norm):
        raise InternalConsistencyError(
            f"pre-fold branch exceeds the fold field by {worst:.3e}")
    return fold_pt


def weak_residual(spec: ProblemSpec, point: BranchPoint, test_bank=None) -> np.ndarray:
    """Distributional residuals against the boundary-compliant polynomial bank."""
    if spec.order == SECOND:
        bank, kind = (test_bank or xp_bank()), "xp"
    elif spec.order == NAVIER:
        bank, kind = (test_bank or xn_bank(spec.N)), "xn"
    else:
        bank, kind = (test_bank or xd_bank()), "xd"
    grid = spec.grid
    u_vals = point.u.values
    with np.errstate(over="ignore"):
        fu = spec.nl.f(u_vals)
    out = []
    for phi in bank:
        check_boundary_compliance(phi, spec.N, kind)
        phi_vals = phi(grid.nodes)
        if spec.order == SECOND:
            lhs = integrate_values(grid, u_vals * (-phi.laplacian(spec.N)(grid.nodes)))
        else:
            lhs = integrate_values(grid, u_vals * phi.laplacian(spec.N).laplacian(spec.N)(grid.nodes))
        rhs = point.lam * integrate_values(grid, fu * phi_vals)
        out.append(abs(lhs - rhs))
    return np.asarray(out)


def lambda_star_bisection(spec: ProblemSpec, lo: float, hi: float = None,
                          rtol: float = 1e-3, max_iters: int = 4000,
                          tol: float = 1e-9) -> float:
    """Extremal-parameter estimate from solvability of the monotone iteration.

    A parameter counts as solvable when the iteration meets its tolerance;
    iteration-budget exhaustion is classified by the trend of the increments
    (growing increments mean blow-up in progress).
    """

    def solvable(lam):
        out = minimal_solution(spec, lam, max_iters=max_iters, tol=tol,
                               compute_eta=False)
        if isinstance(out, BranchPoint):
            return True
        if out.reason == "max_iterations" and out.trend is not None and out.trend < 1.0:
            return True
        return False

    if not solvable(lo):
        raise RejectedInputError(f"lower bound {lo:g} is not solvable")
    if hi is None:
        hi = 2.0 * lo
        for _ in range(60):
            if not solvable(hi):
                break
            lo, hi = hi, 2.0 * hi
        else:
            raise NonConvergenceError("no divergent upper bound found")
    while (hi - lo) > rtol * hi:
        mid = 0.5 * (lo + hi)
        if solvable(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def estimate_lambda_star(spec: ProblemSpec, lambda_init: float, n_steps: int = 300,
                         **kwargs) -> dict:
    """Two independent extremal-parameter estimates plus their relative gap."""
    branch = continue_branch(spec, lambda_init, n_steps=n_steps,
                             compute_eta=False, **kwargs)
    if branch.fold is None:
        raise UnavailableError("continuation found no fold")
    lam_c = branch.fold.lambda_star
    lam_b = lambda_star_bisection(spec, lambda_init)
    gap = abs(lam_c - lam_b) / lam_c
    diagnostic = None
    if gap > 0.02:
        diagnostic = (f"estimators disagree by {gap:.1%} "
                      f"(continuation {lam_c:.6g}, bisection {lam_b:.6g})")
        warnings.warn(diagnostic)
    return {"continuation": lam_c, "bisection": lam_b,
            "relative_gap": gap, "diagnostic": diagnostic}


def contraction_threshold(spec: ProblemSpec, hi: float = 1.0) -> float:
    """Empirical largest lambda at which the small-solution map contracts.

    This is the observable stand-in for the existence threshold of the
    fixed-point construction; no claim is made that it matches any
    analytically promised constant.
    """
    if spec.order != "dirichlet":
        raise RejectedInputError("contraction threshold applies to the clamped problem")
    ginf = spec.operator().inf_norm_inverse()

    def rate(lam):
        r = math.sqrt(lam)
        return lam * float(spec.nl.fprime(r)) * ginf

    lo = 0.0
    while rate(hi) < 1.0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e12:
            return math.inf
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if rate(mid) < 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
