"""The coupled two-component problem: -Du = lam f(v), -Dv = gam g(u).

Rays gam = sigma*lam are the natural parametrization of the solvability
boundary; each ray is continued like a scalar branch and the assembled
(sigma, lambda*(sigma)) pairs form the critical curve.  Pointwise-ordering
and difference-system utilities operate on pairs of solutions at shared
parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from . import continuation as cont
from .branch import CEILING_MARGIN, TOL_NEWTON, DivergenceReport
from .errors import (
    InternalConsistencyError,
    NonConvergenceError,
    RejectedInputError,
    UnavailableError,
)
from .nonlinearities import Nonlinearity
from .operators import (
    OperatorMatrix,
    RadialField,
    RadialGrid,
    integrate_values,
    laplacian,
)
from .radialpoly import check_boundary_compliance, xp_bank


@dataclass(frozen=True)
class SystemSpec:
    N: int
    nl_f: Nonlinearity
    nl_g: Nonlinearity
    grid: RadialGrid

    def __post_init__(self):
        if self.grid.N != self.N:
            raise RejectedInputError("grid dimension disagrees with problem dimension")

    def operator(self) -> OperatorMatrix:
        op = getattr(self, "_op", None)
        if op is None:
            op = laplacian(self.grid)
            object.__setattr__(self, "_op", op)
        return op


@dataclass
class SystemPoint:
    lam: float
    gamma: float
    u: RadialField
    v: RadialField
    converged: bool
    newton_iters: int = 0
    residual: float = 0.0
    arclength: float = 0.0

    @property
    def sigma(self) -> float:
        return self.gamma / self.lam if self.lam > 0 else math.nan

    @property
    def sup_u(self) -> float:
        return float(np.max(np.abs(self.u.values)))

    @property
    def sup_v(self) -> float:
        return float(np.max(np.abs(self.v.values)))


@dataclass
class RayFold:
    lambda_star: float
    index: int
    point: Optional[SystemPoint] = None


@dataclass
class RayBranch:
    """Branch record along gam = sigma*lam."""

    spec: SystemSpec
    sigma: float
    points: List[SystemPoint] = field(default_factory=list)
    fold: Optional[RayFold] = None
    diagnostics: List[str] = field(default_factory=list)

    @property
    def lambda_star(self) -> Optional[float]:
        return None if self.fold is None else self.fold.lambda_star

    def prefold_points(self) -> List[SystemPoint]:
        if self.fold is None:
            return list(self.points)
        return self.points[: self.fold.index]


@dataclass
class UpsilonCurve:
    spec: SystemSpec
    sigmas: np.ndarray
    lambda_stars: np.ndarray
    rays: List[RayBranch]
    diagnostics: List[str] = field(default_factory=list)

    def gamma_stars(self) -> np.ndarray:
        return self.sigmas * self.lambda_stars


class _RaySystem:
    """Continuation adapter for the ray gam = sigma*lam; unknown x = (u, v)."""

    def __init__(self, spec: SystemSpec, sigma: float):
        self.spec = spec
        self.sigma = sigma
        self.op = spec.operator()
        n = spec.grid.n_unknowns
        self.n = n
        w = spec.grid.quad_weights()[:-1] / spec.grid.ball_volume()
        self.weights = np.concatenate([w, w])
        self.res_scale = spec.grid.h ** 2
        self.ceil_u = spec.nl_g.domain_sup - CEILING_MARGIN   # g eats u
        self.ceil_v = spec.nl_f.domain_sup - CEILING_MARGIN   # f eats v

    def split(self, x):
        return x[: self.n], x[self.n:]

    def residual(self, x, lam):
        u, v = self.split(x)
        with np.errstate(over="ignore"):
            return np.concatenate([
                self.op.matrix @ u - lam * self.spec.nl_f.f(v),
                self.op.matrix @ v - self.sigma * lam * self.spec.nl_g.f(u),
            ])

    def jacobian(self, x, lam):
        u, v = self.split(x)
        with np.errstate(over="ignore"):
            A12 = sp.diags(-lam * self.spec.nl_f.fprime(v))
            A21 = sp.diags(-self.sigma * lam * self.spec.nl_g.fprime(u))
        return sp.bmat([[self.op.matrix, A12], [A21, self.op.matrix]], format="csc")

    def dres_dlam(self, x, lam):
        u, v = self.split(x)
        with np.errstate(over="ignore"):
            return np.concatenate([-self.spec.nl_f.f(v),
                                   -self.sigma * self.spec.nl_g.f(u)])

    def jacvec_dx(self, x, lam, phi):
        u, v = self.split(x)
        p, q = self.split(phi)
        B12 = sp.diags(-lam * self.spec.nl_f.fsecond(v) * q)
        B21 = sp.diags(-self.sigma * lam * self.spec.nl_g.fsecond(u) * p)
        z = sp.csr_matrix((self.n, self.n))
        return sp.bmat([[z, B12], [B21, z]], format="csc")

    def jacvec_dlam(self, x, lam, phi):
        u, v = self.split(x)
        p, q = self.split(phi)
        return np.concatenate([-self.spec.nl_f.fprime(v) * q,
                               -self.sigma * self.spec.nl_g.fprime(u) * p])

    def admissible(self, x):
        u, v = self.split(x)
        return (bool(np.all(np.isfinite(x)))
                and float(np.max(u, initial=0.0)) < self.ceil_u
                and float(np.max(v, initial=0.0)) < self.ceil_v)

    def sup(self, x):
        return float(np.max(np.abs(x)))


def _mk_point(spec, lam, gamma, u, v, iters=0, residual=0.0, arclength=0.0):
    return SystemPoint(
        lam=float(lam), gamma=float(gamma),
        u=RadialField.from_interior(spec.grid, u),
        v=RadialField.from_interior(spec.grid, v),
        converged=True, newton_iters=iters, residual=residual,
        arclength=arclength,
    )


def system_minimal(spec: SystemSpec, lam: float, gamma: float,
                   tol: float = TOL_NEWTON, max_iters: int = 20000):
    """Minimal solution pair by the coupled monotone iteration from (0, 0)."""
    if lam < 0 or gamma < 0:
        raise RejectedInputError("parameters must be nonnegative")
    op = spec.operator()
    n = spec.grid.n_unknowns
    u = np.zeros(n)
    v = np.zeros(n)
    if lam == 0.0 and gamma == 0.0:
        return _mk_point(spec, 0.0, 0.0, u, v)
    ceil_u = spec.nl_g.domain_sup - CEILING_MARGIN
    ceil_v = spec.nl_f.domain_sup - CEILING_MARGIN
    increments = []
    for k in range(max_iters):
        with np.errstate(over="ignore"):
            fv = spec.nl_f.f(v)
            gu = spec.nl_g.f(u)
        if not (np.all(np.isfinite(fv)) and np.all(np.isfinite(gu))):
            return DivergenceReport(lam, k, max(u.max(), v.max()), "nonfinite")
        un = op.solve(lam * fv)
        vn = op.solve(gamma * gu)
        d = max(float(np.abs(un - u).max()), float(np.abs(vn - v).max()))
        dec = min(float((un - u).min()), float((vn - v).min()))
        if dec < -(1e-12 + 1e-6 * d):
            raise InternalConsistencyError(
                f"coupled monotone iteration decreased at step {k} ({dec:.3e})")
        if max(float(un.max()), float(vn.max())) > 1e6:
            return DivergenceReport(lam, k, max(float(un.max()), float(vn.max())), "blow_up")
        if float(un.max()) >= ceil_u or float(vn.max()) >= ceil_v:
            return DivergenceReport(lam, k, max(float(un.max()), float(vn.max())), "ceiling")
        u, v = un, vn
        increments.append(d)
        if d < tol:
            sys = _RaySystem(spec, gamma / lam if lam > 0 else 0.0)
            res = sys.res_scale * float(
                np.abs(sys.residual(np.concatenate([u, v]), lam)).max()) if lam > 0 else 0.0
            return _mk_point(spec, lam, gamma, u, v, k + 1, res)
    tail = increments[-10:]
    trend = tail[-1] / tail[0] if len(tail) >= 2 and tail[0] > 0 else None
    return DivergenceReport(lam, max_iters, max(u.max(), v.max()), "max_iterations", trend)


def newton_system(spec: SystemSpec, lam: float, gamma: float, u0, v0,
                  tol: float = TOL_NEWTON) -> SystemPoint:
    """Damped Newton for the coupled system at fixed parameters."""
    if lam <= 0:
        raise RejectedInputError("newton_system needs lam > 0 to pin the ray")
    sys = _RaySystem(spec, gamma / lam)
    x0 = np.concatenate([np.asarray(u0, float), np.asarray(v0, float)])
    x, iters, res = cont.newton(sys, x0, lam, tol=tol)
    u, v = sys.split(x)
    return _mk_point(spec, lam, gamma, u, v, iters, res)


def trace_ray(spec: SystemSpec, sigma: float, lambda_init: float = None,
              ds: float = None, n_steps: int = 250, sup_stop: float = None,
              tol: float = TOL_NEWTON) -> RayBranch:
    """Arclength continuation along gam = sigma*lam, fold polished as in the
    scalar case."""
    if sigma <= 0:
        raise RejectedInputError("sigma must be positive")
    if lambda_init is None:
        lambda_init = 0.1
        while True:
            trial = system_minimal(spec, lambda_init, sigma * lambda_init)
            if isinstance(trial, SystemPoint):
                break
            lambda_init *= 0.5
            if lambda_init < 1e-8:
                raise RejectedInputError("no convergent starting parameter found")
    else:
        trial = system_minimal(spec, lambda_init, sigma * lambda_init)
        if not isinstance(trial, SystemPoint):
            raise RejectedInputError(
                f"lambda_init = {lambda_init:g} diverges on the sigma = {sigma:g} ray")
    sys = _RaySystem(spec, sigma)
    class_s = spec.nl_f.class_tag == "S" or spec.nl_g.class_tag == "S"
    if sup_stop is None:
        sup_stop = math.inf if class_s else 15.0
    x0 = np.concatenate([trial.u.interior, trial.v.interior])
    run = cont.continue_arclength(sys, x0, lambda_init, ds or lambda_init / 4.0,
                                  n_steps, tol=tol, sup_stop=sup_stop)
    ray = RayBranch(spec, sigma, diagnostics=list(run.diagnostics))
    for p in run.points:
        u, v = sys.split(p.x)
        ray.points.append(_mk_point(spec, p.lam, sigma * p.lam, u, v,
                                    p.newton_iters, p.residual, p.arclength))
    if run.fold_index is not None:
        bracket = run.points[run.fold_index]
        try:
            xs, phi, lam_star = cont.refine_fold(sys, bracket.x, bracket.lam)
            u, v = sys.split(xs)
            res = sys.res_scale * float(np.abs(sys.residual(xs, lam_star)).max())
            fold_pt = _mk_point(spec, lam_star, sigma * lam_star, u, v,
                                0, res, bracket.arclength)
            ray.fold = RayFold(lam_star, run.fold_index, fold_pt)
        except (NonConvergenceError, cont.EigenSolverError) as exc:
            lams = [p.lam for p in run.points]
            ray.fold = RayFold(float(np.max(lams)), run.fold_index, None)
            ray.diagnostics.append(f"fold refinement failed: {exc}")
    return ray


def upsilon_curve(spec: SystemSpec, sigma_grid, probe_offset: float = 0.05,
                  check_separation: bool = True, **ray_kwargs) -> UpsilonCurve:
    """Trace the critical curve over the sigma grid.

    With `check_separation`, each ray's fold is probed from both sides:
    parameters shrunk by the offset must converge, parameters inflated by it
    must diverge.  Ray failures leave NaN entries and a diagnostic rather
    than aborting the sweep.
    """
    sigmas = np.asarray(sigma_grid, dtype=float)
    stars = np.full(sigmas.shape, math.nan)
    rays: List[RayBranch] = []
    diags: List[str] = []
    for j, sig in enumerate(sigmas):
        try:
            ray = trace_ray(spec, float(sig), **ray_kwargs)
        except (RejectedInputError, NonConvergenceError, cont.StepFailureError) as exc:
            diags.append(f"sigma = {sig:g}: ray failed ({exc})")
            rays.append(RayBranch(spec, float(sig)))
            continue
        rays.append(ray)
        if ray.fold is None:
            diags.append(f"sigma = {sig:g}: no fold within the step budget")
            continue
        stars[j] = ray.fold.lambda_star
        if check_separation:
            lam_in = (1.0 - probe_offset) * stars[j]
            lam_out = (1.0 + probe_offset) * stars[j]
            inside = system_minimal(spec, lam_in, sig * lam_in)
            outside = system_minimal(spec, lam_out, sig * lam_out)
            if not isinstance(inside, SystemPoint):
                diags.append(f"sigma = {sig:g}: inside probe failed to converge")
            if isinstance(outside, SystemPoint):
                diags.append(f"sigma = {sig:g}: outside probe unexpectedly converged")
    return UpsilonCurve(spec, sigmas, stars, rays, diags)


@dataclass
class OrderingReport:
    holds: List[bool]               # i) v<=u, ii) sigma*u<=v, iii) sigma*uo<=vo, iv) vo<=uo
    violations: List[float]         # max nodal violation of each inequality
    sigma: float
    lam: float


def pointwise_orderings(spec: SystemSpec, second: SystemPoint,
                        minimal: SystemPoint, tol: float = 1e-8) -> OrderingReport:
    """Nodal check of the four pointwise inequalities between a solution pair.

    The first three have no parameter restriction; the fourth is only
    expected below a small parameter threshold (see `iv_threshold`).
    """
    if spec.nl_f.name != "exp" or spec.nl_g.name != "exp":
        raise RejectedInputError("orderings are formulated for the exp/exp system")
    if abs(second.lam - minimal.lam) > 1e-10 * (1 + abs(minimal.lam)) or \
       abs(second.gamma - minimal.gamma) > 1e-10 * (1 + abs(minimal.gamma)):
        raise RejectedInputError("solution pair sits at mismatched parameters")
    sigma = minimal.sigma
    if not 0 < sigma <= 1 + 1e-12:
        raise RejectedInputError("orderings need 0 < sigma <= 1")
    u, v = second.u.values, second.v.values
    uo = u - minimal.u.values
    vo = v - minimal.v.values
    if float(np.min(uo)) < -tol or float(np.min(vo)) < -tol:
        raise RejectedInputError("second solution does not dominate the minimal one")
    viol = [
        float(np.max(v - u)),
        float(np.max(sigma * u - v)),
        float(np.max(sigma * uo - vo)),
        float(np.max(vo - uo)),
    ]
    return OrderingReport([w <= tol for w in viol], viol, sigma, minimal.lam)


def difference_residual(spec: SystemSpec, second: SystemPoint, minimal: SystemPoint):
    """Residual fields of the difference system satisfied by (u-u_min, v-v_min).

    Evaluates -D(u_o) - lam e^{v_min}(e^{v_o}-1) and its partner on the grid
    with the discrete operator; both vanish to solver tolerance on genuine
    solution pairs.
    """
    op = spec.operator()
    lam, gamma = minimal.lam, minimal.gamma
    uo = second.u.interior - minimal.u.interior
    vo = second.v.interior - minimal.v.interior
    vmin = minimal.v.interior
    umin = minimal.u.interior
    r1 = op.matrix @ uo - lam * np.exp(vmin) * np.expm1(vo)
    r2 = op.matrix @ vo - gamma * np.exp(umin) * np.expm1(uo)
    return r1, r2


def iv_threshold(spec: SystemSpec, sigma: float, ray: RayBranch = None,
                 tol: float = 1e-8, rtol: float = 0.02, **ray_kwargs) -> float:
    """Empirical largest lambda below which ordering iv) holds for the
    computed second solution, located by bisection along the ray."""
    if ray is None:
        ray = trace_ray(spec, sigma, **ray_kwargs)
    if ray.fold is None:
        raise UnavailableError("ray has no fold; cannot bracket the threshold")

    def iv_holds(lam):
        pair = solution_pair(spec, sigma, lam, ray)
        if pair is None:
            return None
        rep = pointwise_orderings(spec, pair[1], pair[0], tol=tol)
        return rep.holds[3]

    lam_star = ray.fold.lambda_star
    # the upper branch is only computed down to some lambda; probe within it
    segment = []
    for p in ray.points[ray.fold.index:]:
        if segment and p.lam > segment[-1].lam:
            break
        segment.append(p)
    lo = max(1e-3 * lam_star, min(p.lam for p in segment))
    hi = lam_star * (1 - 1e-3)
    state_lo = iv_holds(lo)
    for _ in range(20):
        if state_lo is not None:
            break
        lo = min(2.0 * lo, hi)
        state_lo = iv_holds(lo)
    if state_lo is not True:
        raise UnavailableError("iv) fails (or no pair is computable) at the smallest probe")
    if iv_holds(hi) is True:
        return hi
    while (hi - lo) > rtol * lam_star:
        mid = 0.5 * (lo + hi)
        if iv_holds(mid) is True:
            lo = mid
        else:
            hi = mid
    return lo


def solution_pair(spec: SystemSpec, sigma: float, lam: float, ray: RayBranch,
                  tol: float = TOL_NEWTON):
    """(minimal, second) pair at (lam, sigma*lam), the second polished from the
    nearest post-fold ray point; None when either solve fails."""
    if ray.fold is None:
        raise UnavailableError("ray has no fold")
    mins = system_minimal(spec, lam, sigma * lam, tol=tol)
    if not isinstance(mins, SystemPoint):
        return None
    post = ray.points[ray.fold.index:]
    if not post:
        return None
    # stay on the first descending segment of the upper branch (the branch
    # may spiral afterwards); seed from the first crossing of lam
    segment = []
    for p in post:
        if segment and p.lam > segment[-1].lam:
            break
        segment.append(p)
    crossing = [p for p in segment if p.lam <= lam]
    best = crossing[0] if crossing else segment[-1]
    try:
        second = newton_system(spec, lam, sigma * lam, best.u.interior,
                               best.v.interior, tol=tol)
    except NonConvergenceError:
        return None
    gap = float(np.max(np.abs(second.u.values - mins.u.values)))
    if gap < 1e-6 * (1 + mins.sup_u):
        return None            # slid back onto the minimal branch
    return mins, second


def system_weak_residual(spec: SystemSpec, point: SystemPoint, test_bank=None):
    """Weak-form residuals of both components against the second-order bank."""
    bank = test_bank or xp_bank()
    grid = spec.grid
    out = []
    for phi in bank:
        check_boundary_compliance(phi, spec.N, "xp")
        neg_lap = -phi.laplacian(spec.N)(grid.nodes)
        phi_vals = phi(grid.nodes)
        r1 = integrate_values(grid, point.u.values * neg_lap) - \
            point.lam * integrate_values(grid, spec.nl_f.f(point.v.values) * phi_vals)
        r2 = integrate_values(grid, point.v.values * neg_lap) - \
            point.gamma * integrate_values(grid, spec.nl_g.f(point.u.values) * phi_vals)
        out.append((abs(r1), abs(r2)))
    return np.asarray(out)
