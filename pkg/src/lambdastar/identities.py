"""Integral identities, functionals, and inequality scans on computed solutions.

Every report carries both sides, the residual, and a verdict at a tolerance
proportional to h^2 (the discretization order); the constants were calibrated
on manufactured fields and are deliberately generous, since the refinement
tests pin the convergence order separately.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import continuation as cont
from .branch import BranchPoint, ProblemSpec, minimal_solution
from .errors import RejectedInputError, UnavailableError
from .operators import (
    RadialField,
    boundary_derivative,
    integrate_values,
    laplacian,
    radial_derivative,
    surface_area,
)
from .system import RayBranch, SystemPoint, SystemSpec

PASS, FAIL, INFO = "Pass", "Fail", "Informational"

# per-identity tolerance constants (resid <= C * h^2 * scale)
IDENTITY_C = {
    "pohozaev_equality": 60.0,
    "pohozaev_inequality": 60.0,
    "three": 40.0,
    "four": 40.0,
    "five": 40.0,
    "six": 40.0,
    "seven_left": 40.0,
    "seven_right": 40.0,
    "energy_bound": 40.0,
}


@dataclass
class IdentityReport:
    name: str
    lhs: float
    rhs: float
    residual: float
    relative: float
    grid_h: float
    verdict: str

    @property
    def passed(self) -> bool:
        return self.verdict == PASS


@dataclass
class ScanReport:
    name: str
    min_value: float
    argmin: tuple
    samples: tuple
    grid_spec: dict = field(default_factory=dict)


@dataclass
class TScanResult:
    t_report: ScanReport
    s_report: ScanReport
    domination_min: float       # min over the scan of T - S (convexity: >= 0)
    eps_lambda: float
    c_sigma: float


def _report(name, lhs, rhs, h, kind="equality"):
    resid = lhs - rhs
    scale = max(1.0, abs(lhs), abs(rhs))
    tol = IDENTITY_C.get(name, 50.0) * h * h * scale
    if kind == "equality":
        verdict = PASS if abs(resid) <= tol else FAIL
    elif kind == "inequality":
        verdict = PASS if resid <= tol else FAIL
    else:
        verdict = INFO
    return IdentityReport(name, float(lhs), float(rhs), float(resid),
                          float(abs(resid) / scale), h, verdict)


# ----------------------------------------------------------------------
# fourth-order Pohozaev-type identity

def pohozaev_from_fields(spec: ProblemSpec, v: RadialField,
                         d2v_interior: np.ndarray) -> List[IdentityReport]:
    """Both forms of the multiplier identity from explicit fields.

    `d2v_interior` supplies Delta^2 v at the interior nodes (exact values for
    manufactured fields, the equation right-hand side for computed pairs);
    the boundary value is taken as zero, which holds whenever v is the
    difference of two solutions (f(0) - f(0)).
    """
    if not spec.fourth_order:
        raise RejectedInputError("fourth-order identity on a second-order spec")
    grid = spec.grid
    N = spec.N
    h = grid.h
    omega = surface_area(N)
    d2v = np.concatenate([np.asarray(d2v_interior, float), [0.0]])
    lap2 = laplacian(grid)
    lap_v = np.empty(grid.M + 2)
    lap_v[:-1] = -(lap2.matrix @ v.interior)
    vprime = radial_derivative(v)
    r = grid.nodes
    if spec.order == "navier":
        lap_v[-1] = 0.0
        lap_field = RadialField(grid, lap_v)
        bdry = omega * abs(boundary_derivative(lap_field)) * abs(boundary_derivative(v))
    else:
        # clamped: v'(1) = 0, so Delta v(1) = v''(1); one-sided O(h^2) stencil
        u = v.values
        lap_v[-1] = (2 * u[-1] - 5 * u[-2] + 4 * u[-3] - u[-4]) / h ** 2
        bdry = 0.5 * omega * lap_v[-1] ** 2
    lhs = integrate_values(grid, (-r * vprime.values) * d2v)
    dirichlet_energy = integrate_values(grid, lap_v * lap_v)
    eq = _report("pohozaev_equality", lhs,
                 0.5 * (N - 4) * dirichlet_energy + bdry, h, "equality")
    ineq = _report("pohozaev_inequality", 0.5 * (N - 4) * dirichlet_energy,
                   lhs, h, "inequality")
    return [eq, ineq]


def pohozaev_fourth(spec: ProblemSpec, point: BranchPoint,
                    minimal: BranchPoint) -> List[IdentityReport]:
    """Identity reports for v = u - u_min at a shared parameter."""
    if abs(point.lam - minimal.lam) > 1e-10 * (1 + abs(minimal.lam)):
        raise RejectedInputError("points sit at different parameters")
    if not (point.converged and minimal.converged):
        raise RejectedInputError("identity evaluation needs converged points")
    v = RadialField(spec.grid, point.u.values - minimal.u.values)
    with np.errstate(over="ignore"):
        d2v = point.lam * (spec.nl.f(point.u.interior) - spec.nl.f(minimal.u.interior))
    return pohozaev_from_fields(spec, v, d2v)


# ----------------------------------------------------------------------
# the positivity functional scan

def default_c_sigma(spec: ProblemSpec, sigma_conv: float) -> float:
    """A valid absorption constant: (1-sigma) (N-4)/2 times the bottom
    eigenvalue of the fourth-order operator (discrete Poincare constant)."""
    if not spec.fourth_order:
        raise RejectedInputError("C_sigma belongs to the fourth-order functional")
    from .branch import _eta_at

    mu1 = _eta_at(spec, 0.0, np.zeros(spec.grid.n_unknowns))
    return (1.0 - sigma_conv) * 0.5 * (spec.N - 4) * mu1


def T_scan(spec: ProblemSpec, lam: float, minimal: BranchPoint,
           sigma_conv: float, C_sigma: float = None,
           t_range=(0.0, 4.0), t_samples: int = 241) -> TScanResult:
    """Scan the positivity functional and its gradient-free lower bound.

    T uses the actual radial transport term -(r u') at each node; S replaces
    it by -eps_lambda (the sup of |r u'|), which convexity makes a pointwise
    lower bound.  Positivity of the scan minimum for small parameters is the
    numerical shadow of the uniqueness argument.
    """
    if not 0 < sigma_conv < 1:
        raise RejectedInputError("sigma_conv must lie in (0, 1)")
    if not minimal.converged:
        raise RejectedInputError("minimal point must be converged")
    if C_sigma is None:
        C_sigma = default_c_sigma(spec, sigma_conv)
    if C_sigma <= 0:
        raise RejectedInputError("C_sigma must be positive")
    grid = spec.grid
    N = grid.N
    u = minimal.u.values
    ru = grid.nodes * radial_derivative(minimal.u).values
    eps_lam = float(np.max(np.abs(ru)))
    t_lo, t_hi = t_range
    if spec.nl.class_tag == "S":
        ceiling = spec.nl.domain_sup - float(np.max(u)) - 1e-6
        if t_hi > ceiling:
            warnings.warn(f"t range clipped at the class-S ceiling ({ceiling:.4g})")
            t_hi = ceiling
    t = np.linspace(t_lo, t_hi, t_samples)
    U = u[:, None]
    Tt = t[None, :]
    nl = spec.nl
    with np.errstate(over="ignore"):
        df = nl.f(U + Tt) - nl.f(U)
        dF = nl.F(U + Tt) - nl.F(U) - nl.f(U) * Tt
        bracket = df - nl.fprime(U) * Tt
        base = 0.5 * (N - 4) * sigma_conv * df * Tt + (C_sigma / lam) * Tt ** 2 - N * dF
        T_vals = base - ru[:, None] * bracket
        S_vals = base - eps_lam * bracket
    dom = float(np.min(T_vals - S_vals))
    nonzero = t != 0.0          # T(., 0) = 0 identically; the scan minimum is over t != 0

    def mk(name, vals):
        sub = vals[:, nonzero]
        i, j = np.unravel_index(int(np.argmin(sub)), sub.shape)
        return ScanReport(name, float(sub[i, j]),
                          (float(grid.nodes[i]), float(t[nonzero][j])),
                          (u.size, t.size),
                          {"t_range": (float(t_lo), float(t_hi)),
                           "t_samples": int(t_samples),
                           "lam": float(lam), "sigma_conv": float(sigma_conv),
                           "C_sigma": float(C_sigma)})

    return TScanResult(mk("T", T_vals), mk("S", S_vals), dom, eps_lam, float(C_sigma))


def t_scan_threshold(spec: ProblemSpec, sigma_conv: float, lam_hi: float,
                     t_range=(0.0, 4.0), rtol: float = 0.05, **scan_kwargs) -> float:
    """Largest parameter (bisection) at which the scanned minimum stays positive."""

    def positive(lam):
        pt = minimal_solution(spec, lam, compute_eta=False)
        if isinstance(pt, BranchPoint):
            res = T_scan(spec, lam, pt, sigma_conv, t_range=t_range, **scan_kwargs)
            return res.t_report.min_value > 0
        return None

    lo = lam_hi / 1024.0
    if positive(lo) is not True:
        raise UnavailableError("scan minimum not positive even at the smallest probe")
    hi = lam_hi
    if positive(hi) is True:
        return hi
    while (hi - lo) > rtol * hi:
        mid = 0.5 * (lo + hi)
        if positive(mid) is True:
            lo = mid
        else:
            hi = mid
    return lo


# ----------------------------------------------------------------------
# system energy identities

def system_energy(spec: SystemSpec, second: SystemPoint,
                  minimal: SystemPoint) -> List[IdentityReport]:
    """Equality and inequality reports for the difference-pair energy chain."""
    if spec.nl_f.name != "exp" or spec.nl_g.name != "exp":
        raise RejectedInputError("energy identities are formulated for exp/exp")
    if abs(second.lam - minimal.lam) > 1e-10 * (1 + abs(minimal.lam)):
        raise RejectedInputError("pair sits at mismatched parameters")
    grid = spec.grid
    N, h = spec.N, grid.h
    lam, sigma = minimal.lam, minimal.sigma
    omega = surface_area(N)
    r = grid.nodes
    lap = spec.operator().matrix

    def full_lap(fld):
        out = np.empty(grid.M + 2)
        out[:-1] = -(lap @ fld.interior)
        out[-1] = 0.0       # difference fields carry zero boundary data
        return out

    uo = RadialField(grid, second.u.values - minimal.u.values)
    vo = RadialField(grid, second.v.values - minimal.v.values)
    up, vp = radial_derivative(uo).values, radial_derivative(vo).values
    lap_uo, lap_vo = full_lap(uo), full_lap(vo)
    grad_pair = integrate_values(grid, up * vp)
    umin, vmin = minimal.u.values, minimal.v.values
    rum = r * radial_derivative(minimal.u).values
    rvm = r * radial_derivative(minimal.v).values

    reports = []
    lhs3 = integrate_values(grid, lap_uo * (r * vp) + lap_vo * (r * up))
    bdry3 = omega * abs(boundary_derivative(uo)) * abs(boundary_derivative(vo))
    reports.append(_report("three", lhs3, (N - 2) * grad_pair + bdry3, h))

    e_vo = np.expm1(vo.values) - vo.values       # e^t - t - 1
    e_uo = np.expm1(uo.values) - uo.values
    rhs4 = (lam * N * integrate_values(grid, np.exp(vmin) * e_vo)
            + lam * integrate_values(grid, np.exp(vmin) * rvm * e_vo)
            + lam * N * sigma * integrate_values(grid, np.exp(umin) * e_uo)
            + lam * sigma * integrate_values(grid, np.exp(umin) * rum * e_uo))
    reports.append(_report("four", (N - 2) * grad_pair, rhs4, h, "inequality"))

    lam1, _ = cont.smallest_eigenvalue(lap)
    reports.append(_report(
        "five", sigma * lam1 * integrate_values(grid, uo.values ** 2),
        grad_pair, h, "inequality"))
    reports.append(_report(
        "six", lam1 * integrate_values(grid, vo.values ** 2),
        grad_pair, h, "inequality"))

    lhs7l = lam * integrate_values(grid, np.exp(vmin) * np.expm1(vo.values) * vo.values)
    lhs7r = lam * sigma * integrate_values(grid, np.exp(umin) * np.expm1(uo.values) * uo.values)
    reports.append(_report("seven_left", lhs7l, grad_pair, h))
    reports.append(_report("seven_right", lhs7r, grad_pair, h))
    return reports


# ----------------------------------------------------------------------
# scalar scans

def nine_scan(C: float, lam: float, sigma: float = 1.0,
              u_max: float = 5.0, samples: int = 201) -> ScanReport:
    """Minimum of the quadrant integrand (origin excluded).

    P(a) = a^2/lam + (e^a - 1) a - C (e^a - a - 1), combined with weight
    sigma on the first component.
    """
    if C <= 0:
        raise RejectedInputError("C must be positive")
    a = np.linspace(0.0, u_max, samples)

    def part(t):
        return t * t / lam + np.expm1(t) * t - C * (np.expm1(t) - t)

    P = sigma * part(a)[:, None] + part(a)[None, :]
    P[0, 0] = np.inf        # exclude the origin
    i, j = np.unravel_index(int(np.argmin(P)), P.shape)
    return ScanReport("nine_integrand", float(P[i, j]), (float(a[i]), float(a[j])),
                      (samples, samples),
                      {"C": float(C), "lam": float(lam), "sigma": float(sigma),
                       "u_max": float(u_max)})


def nine_threshold(C: float, sigma: float = 1.0, u_max: float = 5.0,
                   samples: int = 201, lam_hi: float = 1e6,
                   rtol: float = 0.02) -> float:
    """Largest lam with positive scan minimum; inf when the dip never occurs.

    The minimum is monotone decreasing in lam (only the 1/lam term depends
    on it), so bisection applies.
    """
    if nine_scan(C, lam_hi, sigma, u_max, samples).min_value > 0:
        return math.inf
    lo = 1e-8
    if nine_scan(C, lo, sigma, u_max, samples).min_value <= 0:
        raise UnavailableError("integrand not positive even for tiny lam")
    hi = lam_hi
    while (hi - lo) > rtol * hi:
        mid = math.sqrt(lo * hi)
        if nine_scan(C, mid, sigma, u_max, samples).min_value > 0:
            lo = mid
        else:
            hi = mid
    return lo


def cal_threshold(t_max: float = 2.0, t_samples: int = 4001,
                  sigma_samples: int = 2000) -> float:
    """Largest t0 with e^{sigma t} >= sigma e^t for all sampled sigma in (0,1)
    and all t <= t0.  (The analytic value is 1.)"""
    t = np.linspace(0.0, t_max, t_samples)
    sig = np.linspace(1e-3, 1.0 - 1e-3, sigma_samples)
    t0 = 0.0
    chunk = 256
    for start in range(0, t_samples, chunk):
        tt = t[start:start + chunk]
        gap = np.exp(sig[:, None] * tt[None, :]) - sig[:, None] * np.exp(tt[None, :])
        m = gap.min(axis=0)
        bad = np.nonzero(m < -1e-12)[0]
        if bad.size:
            j = int(bad[0])
            return float(tt[j - 1]) if j > 0 else t0
        t0 = float(tt[-1])
    return t0


# ----------------------------------------------------------------------
# energy bound along a ray

@dataclass
class EnergyBoundReport:
    lams: np.ndarray
    int_fv_v: np.ndarray
    int_gu_u: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    holds_all: bool
    increasing: bool
    bounded: bool
    sup_value: float
    trend_ratio: Optional[float]


def extremal_energy_bound(spec: SystemSpec, ray: RayBranch) -> EnergyBoundReport:
    """Evaluate the proof's energy inequality along the pre-fold ray and test
    the boundedness of int f(v) v up to the fold."""
    if spec.N < 3:
        raise RejectedInputError("the energy bound needs N >= 3")
    # strictly increasing-lambda prefix: the minimal segment of the ray
    # (arclength stepping may overshoot the fold by one point)
    pts = []
    for p in ray.prefold_points():
        if pts and p.lam <= pts[-1].lam:
            break
        pts.append(p)
    if ray.fold is not None and ray.fold.point is not None:
        fold_pt = ray.fold.point
        while pts and pts[-1].sup_u > fold_pt.sup_u:
            pts.pop()           # overshoot landed past the fold field
        pts = pts + [fold_pt]
    if len(pts) < 3:
        raise UnavailableError("ray too short for the energy-bound test")
    grid = spec.grid
    N = spec.N
    lams, Iv, Iu, lhs_list, rhs_list = [], [], [], [], []
    for p in pts:
        v, u = p.v.values, p.u.values
        fv_v = integrate_values(grid, spec.nl_f.f(v) * v)
        gu_u = integrate_values(grid, spec.nl_g.f(u) * u)
        Fv = integrate_values(grid, spec.nl_f.F(v))
        Gu = integrate_values(grid, spec.nl_g.F(u))
        lams.append(p.lam)
        Iv.append(fv_v)
        Iu.append(gu_u)
        lhs_list.append(0.5 * (N - 2) * (p.lam * fv_v + p.gamma * gu_u))
        rhs_list.append(N * (p.lam * Fv + p.gamma * Gu))
    lams = np.asarray(lams)
    Iv = np.asarray(Iv)
    Iu = np.asarray(Iu)
    lhs = np.asarray(lhs_list)
    rhs = np.asarray(rhs_list)
    h = grid.h
    tol = IDENTITY_C["energy_bound"] * h * h * np.maximum(1.0, np.abs(rhs))
    holds_all = bool(np.all(lhs <= rhs + tol))
    increasing = bool(np.all(np.diff(Iv) > -1e-10 * np.maximum(1.0, Iv[:-1])))
    d = np.diff(Iv)
    trend = float(d[-1] / d[-2]) if d.size >= 2 and d[-2] > 0 else None
    bounded = bool(np.all(np.isfinite(Iv))) and (trend is None or trend <= 1.25)
    return EnergyBoundReport(lams, Iv, Iu, lhs, rhs, holds_all,
                             increasing, bounded, float(np.max(Iv)), trend)
