"""Deflated-Newton enumeration of solutions and uniqueness probing.

Deflation multiplies the residual by prod_j (1 + 1/d_j^2), d_j the weighted
distance to each known solution, which repels Newton from found roots; the
Sherman-Morrison structure of the deflated Jacobian reduces each step to a
rescaled undeflated Newton step.  All counting is fail-to-falsify: a report
of one solution means "no second solution found from K starts", never a
uniqueness proof.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import continuation as cont
from .branch import (
    Branch,
    BranchPoint,
    ProblemSpec,
    _eta_at,
    _point_from_interior,
    _ScalarSystem,
    continue_branch,
    minimal_solution,
    newton_solve,
    weak_residual,
)
from .errors import (
    DomainExitError,
    NonConvergenceError,
    RejectedInputError,
    UnavailableError,
)
from .operators import RadialGrid
from .system import (
    RayBranch,
    SystemPoint,
    SystemSpec,
    _mk_point,
    _RaySystem,
    system_weak_residual,
    trace_ray,
)

DISTINCT_THRESHOLD = 1e-5
ALPHA_CAP = 100.0           # cap on the deflated step rescaling


@dataclass
class SolutionRecord:
    point: object               # BranchPoint or SystemPoint
    sup_norm: float
    center: float               # u(0)
    eta1: Optional[float]
    residual: float
    weak_max: float


@dataclass
class SolutionSet:
    parameters: dict
    solutions: List[SolutionRecord]
    starts: int
    distinct_threshold: float
    seed: int
    diagnostics: List[str] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.solutions)

    def phrase(self) -> str:
        if self.count == 1:
            return f"no second solution found ({self.starts} starts)"
        return f"{self.count} distinct solutions found ({self.starts} starts)"


def _weighted_dist(w, a, b):
    d = a - b
    return math.sqrt(max(0.0, float(d @ (w * d))))


def _deflation_gradlog(x, known, w):
    """log-gradient of the deflation factor and the factor's log."""
    grad = np.zeros_like(x)
    logm = 0.0
    for xj in known:
        d = x - xj
        d2 = max(float(d @ (w * d)), 1e-300)
        fac = 1.0 + 1.0 / d2
        logm += math.log(fac)
        grad += (-2.0 / (d2 * d2) / fac) * (w * d)
    return grad, logm


def _deflated_newton(sys, x0, lam, known, tol, max_iter=80):
    """Newton on the deflated residual; returns a candidate or None."""
    x = np.asarray(x0, dtype=float).copy()
    if not sys.admissible(x):
        return None
    w = sys.weights
    for _ in range(max_iter):
        F = sys.residual(x, lam)
        if not np.all(np.isfinite(F)):
            return None
        res = sys.res_scale * float(np.abs(F).max())
        if res <= tol:
            return x
        try:
            lu = cont.spla.splu(sys.jacobian(x, lam).tocsc())
        except RuntimeError:
            return None
        delta = lu.solve(-F)
        gradlog, _ = _deflation_gradlog(x, known, w)
        denom = 1.0 - float(gradlog @ delta)
        alpha = 1.0 / denom if abs(denom) > 1.0 / ALPHA_CAP else \
            math.copysign(ALPHA_CAP, denom if denom != 0 else 1.0)
        step = alpha * delta
        t = 1.0
        while t >= 2.0 ** -16 and not sys.admissible(x + t * step):
            t *= 0.5
        if t < 2.0 ** -16:
            return None
        if cont.rms(sys, t * step) > 1e3 * (1.0 + cont.rms(sys, x)):
            return None
        x = x + t * step
    return None


def _start_profiles(grid: RadialGrid, K, rng, amp_max, amp_min=0.02):
    r = grid.nodes[:-1]
    base = (1.0 - r * r)
    amps = np.geomspace(amp_min, amp_max, K)
    profiles = []
    for i, A in enumerate(amps):
        q = 1 if i % 2 == 0 else 2
        jitter = 1.0 + 0.05 * rng.uniform(-1.0, 1.0)
        profiles.append(A * jitter * base ** q)
    return profiles


def _scalar_record(spec, lam, x, sys, tol):
    res = sys.res_scale * float(np.abs(sys.residual(x, lam)).max())
    eta = _eta_at(spec, lam, x)
    pt = _point_from_interior(spec, lam, x, eta, 0, res)
    weak = float(np.max(weak_residual(spec, pt)))
    return SolutionRecord(pt, pt.sup_norm, float(pt.u.values[0]), eta, res, weak)


def _system_record(spec, lam, gamma, x, sys, tol):
    u, v = sys.split(x)
    res = sys.res_scale * float(np.abs(sys.residual(x, lam)).max())
    pt = _mk_point(spec, lam, gamma, u, v, 0, res)
    weak = float(np.max(system_weak_residual(spec, pt)))
    # no stability form is defined for the system; eta stays None
    return SolutionRecord(pt, max(pt.sup_u, pt.sup_v),
                          float(pt.u.values[0]), None, res, weak)


def _weak_tolerance(sys, lam, sup):
    h2 = sys.res_scale
    return 200.0 * h2 * max(1.0, abs(lam) * (1.0 + sup))


def deflated_search(spec, lam: float, gamma: float = None, K: int = 20,
                    seed: int = 0, distinct_threshold: float = DISTINCT_THRESHOLD,
                    amp_max: float = None, tol: float = 1e-10) -> SolutionSet:
    """Enumerate distinct solutions at fixed parameters from K deflated starts.

    Start profiles are bumps A (1-r^2)^q with log-spaced amplitudes (jittered
    deterministically from the seed); each converged root is polished by
    undeflated Newton, checked against the weak form, and added to the
    deflation set before the same start is retried.
    """
    is_system = isinstance(spec, SystemSpec)
    if is_system:
        if gamma is None:
            raise RejectedInputError("system search needs both parameters")
        sys = _RaySystem(spec, gamma / lam if lam > 0 else 0.0)
    else:
        if gamma is not None:
            raise RejectedInputError("scalar search takes a single parameter")
        sys = _ScalarSystem(spec)
    rng = np.random.default_rng(seed)
    diag: List[str] = []
    if amp_max is None:
        sup_dom = spec.nl_f.domain_sup if is_system else spec.nl.domain_sup
        amp_max = 0.999 if math.isfinite(sup_dom) else 50.0
    profiles = _start_profiles(spec.grid, K, rng, amp_max)
    if is_system:
        sig = max(0.5, gamma / lam) if lam > 0 else 1.0
        starts = [np.concatenate([p, sig * p]) for p in profiles]
    else:
        starts = profiles
    known_x: List[np.ndarray] = []
    records: List[SolutionRecord] = []
    w = sys.weights
    for idx, x0 in enumerate(starts):
        for _round in range(6):
            cand = _deflated_newton(sys, x0, lam, known_x, tol)
            if cand is None:
                break
            try:
                polished, _, res = cont.newton(sys, cand, lam, tol=tol)
            except (NonConvergenceError, DomainExitError):
                diag.append(f"start {idx}: polish failed")
                break
            dists = [_weighted_dist(w, polished, xj) for xj in known_x]
            if dists and min(dists) <= distinct_threshold:
                break               # rediscovered a known root
            if dists and min(dists) <= 10 * distinct_threshold:
                if not _distinct_on_refined(spec, lam, gamma, polished,
                                            known_x[int(np.argmin(dists))],
                                            distinct_threshold, tol):
                    diag.append(f"start {idx}: duplicate under refinement")
                    break
            rec = (_system_record(spec, lam, gamma, polished, sys, tol)
                   if is_system else _scalar_record(spec, lam, polished, sys, tol))
            if rec.weak_max > _weak_tolerance(sys, lam, rec.sup_norm):
                diag.append(f"start {idx}: weak-form check failed "
                            f"({rec.weak_max:.2e}); dropped")
                break
            known_x.append(polished)
            records.append(rec)
    order = np.argsort([r.sup_norm for r in records])
    records = [records[i] for i in order]
    params = {"lambda": lam}
    if is_system:
        params["gamma"] = gamma
    return SolutionSet(params, records, K, distinct_threshold, seed, diag)


def _interp_to(grid_fine: RadialGrid, grid_coarse: RadialGrid, interior):
    full = np.concatenate([interior, [0.0]])
    return np.interp(grid_fine.nodes[:-1], grid_coarse.nodes, full)


def _distinct_on_refined(spec, lam, gamma, xa, xb, threshold, tol):
    """Settle a borderline duplicate by re-solving on a doubled grid."""
    try:
        fine_grid = RadialGrid(spec.grid.N, 2 * spec.grid.M + 1)
        if isinstance(spec, SystemSpec):
            fine = SystemSpec(spec.N, spec.nl_f, spec.nl_g, fine_grid)
            sys = _RaySystem(fine, gamma / lam)
            n = spec.grid.n_unknowns

            def lift(x):
                return np.concatenate([_interp_to(fine_grid, spec.grid, x[:n]),
                                       _interp_to(fine_grid, spec.grid, x[n:])])
        else:
            fine = ProblemSpec(spec.order, spec.N, spec.nl, fine_grid)
            sys = _ScalarSystem(fine)

            def lift(x):
                return _interp_to(fine_grid, spec.grid, x)

        pa, _, _ = cont.newton(sys, lift(xa), lam, tol=tol)
        pb, _, _ = cont.newton(sys, lift(xb), lam, tol=tol)
        return _weighted_dist(sys.weights, pa, pb) > threshold
    except (NonConvergenceError, DomainExitError):
        return False


@dataclass
class UniquenessRegion:
    lambdas: np.ndarray
    counts: np.ndarray
    unique_prefix_end: Optional[float]     # largest prefix lambda with count 1
    first_multiple: Optional[float]


def uniqueness_region(spec, lambda_grid, K: int = 20, seed: int = 0,
                      gamma_of_lambda=None, **kwargs) -> UniquenessRegion:
    """Solution counts over a parameter grid (fail-to-falsify uniqueness map)."""
    lams = np.asarray(lambda_grid, dtype=float)
    counts = np.zeros(lams.shape, dtype=int)
    for i, lam in enumerate(lams):
        gamma = None if gamma_of_lambda is None else gamma_of_lambda(float(lam))
        counts[i] = deflated_search(spec, float(lam), gamma=gamma, K=K,
                                    seed=seed, **kwargs).count
    prefix_end = None
    for lam, c in zip(lams, counts):
        if c == 1:
            prefix_end = float(lam)
        else:
            break
    mult = np.nonzero(counts >= 2)[0]
    first_multiple = float(lams[mult[0]]) if mult.size else None
    return UniquenessRegion(lams, counts, prefix_end, first_multiple)


@dataclass
class FoldCollapseReport:
    lambda_star: float
    deltas: np.ndarray
    gaps: np.ndarray                # weighted-norm distance between the two branches
    center_gaps: np.ndarray         # |u_upper(0) - u_lower(0)|
    exponent: float                 # fitted from log gap vs log delta
    n_clusters_at_fold: int
    cluster_threshold: float


def _cluster_count(points, w, threshold):
    """Single-linkage cluster count at the given weighted distance."""
    labels = list(range(len(points)))

    def find(i):
        while labels[i] != i:
            labels[i] = labels[labels[i]]
            i = labels[i]
        return i

    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            if _weighted_dist(w, points[i], points[j]) <= threshold:
                labels[find(i)] = find(j)
    return len({find(i) for i in range(len(points))})


def extremal_uniqueness_probe(spec, delta_list=(1e-2, 1e-3, 1e-4),
                              branch: Branch = None, ray: RayBranch = None,
                              sigma: float = None, K: int = 12, seed: int = 0,
                              tol: float = 1e-11, **cont_kwargs) -> FoldCollapseReport:
    """Collapse of the two branches approaching the fold, plus the fold cluster.

    For each delta the lower/upper solutions at lambda = lambda*(1-delta) are
    polished from the bracketing branch points and their gap recorded; the
    fitted exponent of gap ~ delta^e is ~0.5 at a quadratic fold.  At the fold
    parameter itself a deflated multistart must collapse to a single cluster;
    the cluster radius scales like sqrt of the Newton tolerance because the
    residual is quadratic in the distance to a fold point.
    """
    is_system = isinstance(spec, SystemSpec)
    if is_system:
        if ray is None:
            if sigma is None:
                raise RejectedInputError("system probe needs a ray or sigma")
            ray = trace_ray(spec, sigma, **cont_kwargs)
        if ray.fold is None or ray.fold.point is None:
            raise UnavailableError("ray carries no refined fold")
        lam_star = ray.fold.lambda_star
        sig = ray.sigma
        sys = _RaySystem(spec, sig)
        pre = ray.points[: ray.fold.index]
        post = ray.points[ray.fold.index:]

        def as_x(p):
            return np.concatenate([p.u.interior, p.v.interior])
    else:
        if branch is None:
            branch = continue_branch(spec, **cont_kwargs)
        if branch.fold is None or branch.fold.point is None:
            raise UnavailableError("branch carries no refined fold")
        lam_star = branch.fold.lambda_star
        sys = _ScalarSystem(spec)
        pre = branch.points[: branch.fold.index]
        post = branch.points[branch.fold.index:]

        def as_x(p):
            return p.u.interior

    if not pre or not post:
        raise UnavailableError("fold is not bracketed by branch points")
    w = sys.weights
    deltas = np.asarray(sorted(delta_list, reverse=True), dtype=float)
    gaps, cgaps = [], []
    for d in deltas:
        lam = lam_star * (1.0 - d)
        lower = min(pre, key=lambda p: abs(p.lam - lam))
        upper = min(post, key=lambda p: abs(p.lam - lam))
        xl, _, _ = cont.newton(sys, as_x(lower), lam, tol=tol)
        xu, _, _ = cont.newton(sys, as_x(upper), lam, tol=tol)
        gaps.append(_weighted_dist(w, xl, xu))
        cgaps.append(abs(float(xu[0] - xl[0])))
    gaps = np.asarray(gaps)
    cgaps = np.asarray(cgaps)
    if np.any(gaps <= 0):
        raise UnavailableError("branches coincide away from the fold; cannot fit")
    exponent = float(np.polyfit(np.log(deltas), np.log(gaps), 1)[0])

    gamma_star = sig * lam_star if is_system else None
    found = deflated_search(spec, lam_star, gamma=gamma_star, K=K, seed=seed,
                            tol=1e-9)
    scale = 1.0 + max((r.sup_norm for r in found.solutions), default=1.0)
    cluster_threshold = 1e-2 * scale
    xs = [as_x(r.point) for r in found.solutions]
    n_clusters = _cluster_count(xs, w, cluster_threshold) if xs else 0
    return FoldCollapseReport(lam_star, deltas, gaps, cgaps, exponent,
                              n_clusters, cluster_threshold)
