"""Nonlinearity catalog: the two admissible classes and their structural lemmas.

Class R: f > 0 smooth increasing convex on all of R, f(0) = 1, superlinear
at infinity.  Class S: same on (-inf, 1) with f blowing up at t = 1.  The
module also provides the constructive searches (mu, k) that the comparison
arguments for these problems rely on, each returning a value verified on a
dense grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import integrate, optimize

from .errors import (
    RejectedInputError,
    SearchFailureError,
    SingularEvaluationError,
    WrongClassError,
)

# An inequality "holds" when lhs - rhs >= SLACK; absorbs floating-point noise.
SLACK = -1e-12

MU_FLOOR = 1e-6


@dataclass(frozen=True)
class Nonlinearity:
    """Evaluator bundle for one nonlinearity.

    ``F`` is the antiderivative with F(0) = 0.  ``log_f``, when available,
    lets inequality checks fall back to log space once ``f`` overflows.
    ``domain_sup`` is +inf for class R and 1.0 for class S.
    """

    name: str
    class_tag: str                      # "R" or "S"
    f: Callable[[np.ndarray], np.ndarray]
    fprime: Callable[[np.ndarray], np.ndarray]
    fsecond: Callable[[np.ndarray], np.ndarray]
    F: Callable[[np.ndarray], np.ndarray]
    log_convex: bool = False
    log_f: Optional[Callable[[np.ndarray], np.ndarray]] = None
    # overflow-stable form of t f/F (class R) or f/F (class S), when available
    stable_ratio: Optional[Callable[[np.ndarray], np.ndarray]] = None
    domain_sup: float = math.inf
    params: dict = field(default_factory=dict)

    def in_domain(self, t) -> bool:
        t = np.asarray(t, dtype=float)
        return bool(np.all(t < self.domain_sup))

    def check_domain(self, t) -> None:
        if not self.in_domain(t):
            raise RejectedInputError(
                f"{self.name}: sample outside domain (sup = {self.domain_sup})")


def exp_nonlinearity() -> Nonlinearity:
    """f(t) = e^t, the canonical log-convex class-R member."""
    return Nonlinearity(
        name="exp",
        class_tag="R",
        f=np.exp,
        fprime=np.exp,
        fsecond=np.exp,
        F=lambda t: np.expm1(t),
        log_convex=True,
        log_f=lambda t: np.asarray(t, dtype=float),
        # t e^t / (e^t - 1) = t / (1 - e^{-t})
        stable_ratio=lambda t: np.asarray(t, dtype=float) / -np.expm1(-np.asarray(t, dtype=float)),
    )


def power_nonlinearity(p: float) -> Nonlinearity:
    """f(t) = (1+t)^p for t >= 0, p > 1; class R but not log-convex.

    Below 0 the function is extended by its second-order Taylor polynomial
    at 0, which keeps C^2 smoothness and convexity.  The built-ins are
    primarily exercised on t >= -1; the extension only has to carry Newton
    iterates that briefly dip below the minimal solution.
    """
    if p <= 1:
        raise RejectedInputError("power nonlinearity requires p > 1")

    def f(t):
        t = np.asarray(t, dtype=float)
        pos = 1.0 + np.maximum(t, 0.0)
        neg = np.minimum(t, 0.0)
        return np.where(t >= 0, pos ** p, 1.0 + p * neg + 0.5 * p * (p - 1) * neg ** 2)

    def fprime(t):
        t = np.asarray(t, dtype=float)
        pos = 1.0 + np.maximum(t, 0.0)
        neg = np.minimum(t, 0.0)
        return np.where(t >= 0, p * pos ** (p - 1), p + p * (p - 1) * neg)

    def fsecond(t):
        t = np.asarray(t, dtype=float)
        pos = 1.0 + np.maximum(t, 0.0)
        return np.where(t >= 0, p * (p - 1) * pos ** (p - 2), p * (p - 1))

    def F(t):
        t = np.asarray(t, dtype=float)
        pos = 1.0 + np.maximum(t, 0.0)
        neg = np.minimum(t, 0.0)
        return np.where(
            t >= 0,
            (pos ** (p + 1) - 1.0) / (p + 1),
            neg + 0.5 * p * neg ** 2 + p * (p - 1) * neg ** 3 / 6.0,
        )

    def log_f(t):
        t = np.asarray(t, dtype=float)
        with np.errstate(invalid="ignore"):
            return np.where(t >= 0, p * np.log1p(np.maximum(t, 0.0)), np.log(f(t)))

    def stable_ratio(t):
        # t f/F = (p+1) (t/(1+t)) / (1 - (1+t)^{-(p+1)}),  t > 0
        t = np.asarray(t, dtype=float)
        return (p + 1) * (t / (1.0 + t)) / -np.expm1(-(p + 1) * np.log1p(t))

    return Nonlinearity(
        name=f"power:p={p:g}", class_tag="R",
        f=f, fprime=fprime, fsecond=fsecond, F=F,
        log_convex=False, log_f=log_f, stable_ratio=stable_ratio,
        params={"p": p},
    )


def mems_nonlinearity(p: float = 2.0) -> Nonlinearity:
    """f(t) = (1-t)^(-p) on (-inf, 1); class S, log-convex."""
    if p <= 0:
        raise RejectedInputError("mems nonlinearity requires p > 0")

    def f(t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return (1.0 - t) ** (-p)

    def fprime(t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return p * (1.0 - t) ** (-p - 1)

    def fsecond(t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return p * (p + 1) * (1.0 - t) ** (-p - 2)

    if abs(p - 1.0) < 1e-14:
        def F(t):
            t = np.asarray(t, dtype=float)
            with np.errstate(divide="ignore"):
                return -np.log1p(-t)
    else:
        def F(t):
            t = np.asarray(t, dtype=float)
            with np.errstate(divide="ignore"):
                return ((1.0 - t) ** (1.0 - p) - 1.0) / (p - 1.0)

    def log_f(t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return -p * np.log1p(-t)

    if abs(p - 1.0) < 1e-14:
        def stable_ratio(t):
            t = np.asarray(t, dtype=float)
            with np.errstate(divide="ignore"):
                return -1.0 / ((1.0 - t) * np.log1p(-t))
    else:
        def stable_ratio(t):
            # f/F = (p-1) / ((1-t) - (1-t)^p)
            t = np.asarray(t, dtype=float)
            s = 1.0 - t
            with np.errstate(divide="ignore"):
                return (p - 1.0) / (s - s ** p)

    return Nonlinearity(
        name=f"mems:p={p:g}", class_tag="S",
        f=f, fprime=fprime, fsecond=fsecond, F=F,
        log_convex=True, log_f=log_f, stable_ratio=stable_ratio,
        domain_sup=1.0, params={"p": p},
    )


def from_spec(spec: str) -> Nonlinearity:
    """Parse a string spec: "exp", "power:p=<real>", "mems:p=<real>"."""
    s = spec.strip().lower()
    if s == "exp":
        return exp_nonlinearity()
    if ":" in s:
        head, _, tail = s.partition(":")
        kv = dict(item.split("=", 1) for item in tail.split(",") if "=" in item)
        if head == "power":
            return power_nonlinearity(float(kv.get("p", "2")))
        if head == "mems":
            return mems_nonlinearity(float(kv.get("p", "2")))
    elif s == "mems":
        return mems_nonlinearity(2.0)
    raise RejectedInputError(f"unknown nonlinearity spec {spec!r}")


# ----------------------------------------------------------------------
# grids

def default_grid_R(t_max: float = 500.0, n_linear: int = 1025, n_tail: int = 512):
    """Hybrid grid on [0, t_max]: dense linear part near 0, geometric tail.

    The tight spot of the mu-inequality for exp-type nonlinearities sits at
    moderate t, so the linear part covers [0, 2] densely.
    """
    lin = np.linspace(0.0, 2.0, n_linear)
    geo = np.geomspace(2.0, t_max, n_tail + 1)[1:]
    return np.concatenate([lin, geo])


def default_grid_S(n: int = 2048, edge: float = 1e-9):
    """Grid on [0, 1) clustered at the blow-up edge t = 1."""
    lin = np.linspace(0.0, 0.9, n // 2)
    edge_part = 1.0 - np.geomspace(0.1, edge, n // 2)
    return np.unique(np.concatenate([lin, edge_part]))


# ----------------------------------------------------------------------
# classification and ratios

def classify(nl: Nonlinearity, sample_grid) -> str:
    """Return "R", "S" or "Neither" from checks at the sample points."""
    t = np.asarray(sample_grid, dtype=float)
    if t.size == 0:
        raise RejectedInputError("classify: empty sample grid")
    nl.check_domain(t)

    f0 = float(nl.f(0.0))
    base = (
        abs(f0 - 1.0) <= 1e-9
        and np.all(nl.f(t) > 0)
        and np.all(nl.fprime(t) >= SLACK)
        and np.all(nl.fsecond(t) >= SLACK)
    )
    if not base:
        return "Neither"

    if math.isinf(nl.domain_sup):
        # superlinearity along the tail: f(t)/t must keep growing
        pos = t[t > 0]
        if pos.size < 4:
            return "Neither"
        tail = pos[pos >= max(1.0, 0.25 * pos.max())]
        if tail.size < 3:
            return "Neither"
        with np.errstate(over="ignore"):
            ratios = nl.f(tail) / tail
        finite = np.isfinite(ratios)
        if not np.all(finite):
            # f outgrew the float range on the tail: superlinear beyond doubt,
            # provided the finite prefix was already increasing
            ratios = ratios[finite]
            if ratios.size < 2 or np.all(np.diff(ratios) > 0):
                return "R"
            return "Neither"
        if np.all(np.diff(ratios) > 0) and ratios[-1] >= 1.1 * ratios[0]:
            return "R"
        return "Neither"

    if nl.domain_sup == 1.0:
        t_top = t.max()
        if t_top < 0.99:
            return "Neither"       # samples do not probe the blow-up edge
        if float(nl.f(t_top)) >= 1e2 and np.all(np.diff(nl.f(np.sort(t[t > 0]))) >= SLACK):
            return "S"
    return "Neither"


def superlinearity_ratio(nl: Nonlinearity, t):
    """t*f(t)/F(t) for class R, f(t)/F(t) for class S (F(0)=0 makes t=0 singular).

    Where the direct quotient overflows (inf/inf), the nonlinearity's stable
    closed form takes over; without one, the evaluation is rejected.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr == 0.0):
        raise SingularEvaluationError("superlinearity ratio undefined at t = 0")
    nl.check_domain(t_arr)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if nl.class_tag == "R":
            out = t_arr * nl.f(t_arr) / nl.F(t_arr)
        else:
            out = nl.f(t_arr) / nl.F(t_arr)
        out = np.asarray(out, dtype=float)
        bad = ~np.isfinite(out)
        if np.any(bad):
            if nl.stable_ratio is None:
                raise SingularEvaluationError(
                    f"{nl.name}: ratio overflowed at t up to {t_arr.max():g} and no "
                    "stable form is available; use smaller samples")
            out = np.where(bad, nl.stable_ratio(t_arr), out)
    return out if out.ndim else float(out)


class SupercriticalResult(NamedTuple):
    ok: bool
    margin: float
    threshold: float


def supercritical_check(nl: Nonlinearity, N: int, tail) -> SupercriticalResult:
    """Check min of t f(t)/F(t) over the tail against the threshold 2N/(N-4)."""
    if nl.class_tag != "R":
        raise WrongClassError("supercriticality applies to class R only")
    if N < 5:
        raise RejectedInputError("supercriticality threshold needs N >= 5")
    tail = np.asarray(tail, dtype=float)
    if tail.size < 2 or np.any(np.diff(tail) <= 0) or tail.max() < 1e3:
        raise RejectedInputError("tail must be strictly increasing with max >= 1e3")
    threshold = 2.0 * N / (N - 4.0)
    lo = float(np.min(superlinearity_ratio(nl, tail)))
    margin = lo - threshold
    return SupercriticalResult(margin > 0, margin, threshold)


# ----------------------------------------------------------------------
# lemma-parameter searches

def _margin_with_log_fallback(lhs, rhs, loglhs, logrhs):
    """lhs - rhs, replaced by a log-space verdict where overflow struck."""
    m = lhs - rhs
    bad = ~np.isfinite(m)
    if np.any(bad):
        if loglhs is None:
            m = np.where(bad, -np.inf, m)
        else:
            gap = loglhs - logrhs
            m = np.where(bad, np.where(gap > 1e-9, np.inf, -np.inf), m)
    return m


def lemma1_margin(nl: Nonlinearity, mu: float, eps: float, t):
    """Pointwise margin of  mu^2 (f(t/mu) + eps) - f(t) - eps/2  for t >= 0."""
    t = np.asarray(t, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        lhs = mu * mu * (nl.f(t / mu) + eps)
        rhs = nl.f(t) + 0.5 * eps
        if nl.log_f is not None:
            loglhs = 2.0 * math.log(mu) + nl.log_f(t / mu)
            logrhs = nl.log_f(t)
        else:
            loglhs = logrhs = None
        return _margin_with_log_fallback(lhs, rhs, loglhs, logrhs)


def lemma5_margin(nl: Nonlinearity, mu: float, eps: float, t):
    """Pointwise margin of  mu (f(t/mu) + eps) - f(t) - eps/2  for 0 <= t <= mu.

    Raises on t/mu at or past the class-S domain edge; the inequality at the
    edge itself is trivial (f blows up) and is excluded from grids instead.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t / mu >= nl.domain_sup):
        raise SingularEvaluationError("argument t/mu reaches the domain edge")
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        lhs = mu * (nl.f(t / mu) + eps)
        rhs = nl.f(t) + 0.5 * eps
    return lhs - rhs


def _bisect_mu(valid, floor=MU_FLOOR, resolution=1e-2):
    """Bisect the validity boundary in mu from 1 downward; return a verified mu.

    The lemmas are existential, so any verified mu in (0, 1) is acceptable;
    the search returns one sitting ~resolution above the empirical boundary
    so fresh off-grid points keep a positive margin.
    """
    hi = 1.0 - 1e-3
    while not valid(hi):
        hi = 1.0 - 0.1 * (1.0 - hi)
        if 1.0 - hi < 1e-9:
            raise SearchFailureError("no admissible mu found near 1")
    lo = floor
    if valid(lo):
        return lo
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if valid(mid):
            hi = mid
        else:
            lo = mid
    bumped = min(1.0 - 1e-9, hi + 0.5 * resolution)
    return bumped if valid(bumped) else hi


def find_mu_R(nl: Nonlinearity, eps: float, t_grid=None) -> float:
    """Smallest-practical mu in (0,1) with mu^2(f(t/mu)+eps) >= f(t)+eps/2 on t >= 0."""
    if nl.class_tag != "R":
        raise WrongClassError("find_mu_R needs a class-R nonlinearity")
    if not nl.log_convex:
        raise RejectedInputError("find_mu_R requires log-convexity")
    if eps <= 0:
        raise RejectedInputError("eps must be positive")
    grid = default_grid_R() if t_grid is None else np.asarray(t_grid, dtype=float)

    def valid(mu):
        return bool(np.min(lemma1_margin(nl, mu, eps, grid)) >= SLACK)

    try:
        return _bisect_mu(valid)
    except SearchFailureError:
        raise SearchFailureError(
            "find_mu_R: no mu above floor; input may not be log-convex "
            "or the grid is too sparse")


def find_mu_S(nl: Nonlinearity, eps: float, n_grid: int = 512) -> float:
    """mu in (0,1) with mu(f(t/mu)+eps) >= f(t)+eps/2 on 0 <= t <= mu (class S)."""
    if nl.class_tag != "S":
        raise WrongClassError("find_mu_S needs a class-S nonlinearity")
    if eps <= 0:
        raise RejectedInputError("eps must be positive")
    s = np.linspace(0.0, 1.0 - 1e-9, n_grid)   # t = mu*s keeps t/mu = s < 1

    def valid(mu):
        return bool(np.min(lemma5_margin(nl, mu, eps, mu * s)) >= SLACK)

    try:
        return _bisect_mu(valid)
    except SearchFailureError:
        raise SearchFailureError("find_mu_S: no mu above floor")


def find_k(nl: Nonlinearity, mu: float, N: int, t_max: float = 500.0,
           n_grid: int = 4096) -> float:
    """k = max(0, sup_{t>=0} N f(t) - f(t/mu)), by grid pre-scan + golden section."""
    if not nl.log_convex or nl.class_tag != "R":
        raise RejectedInputError("find_k requires a log-convex class-R nonlinearity")
    if not 0 < mu < 1:
        raise RejectedInputError("mu must lie in (0, 1)")
    if N < 1:
        raise RejectedInputError("N >= 1 required")
    grid = np.concatenate([np.linspace(0.0, 2.0, n_grid // 2),
                           np.geomspace(2.0, t_max, n_grid // 2)])

    def gap(t):
        t = np.asarray(t, dtype=float)
        with np.errstate(over="ignore"):
            val = N * nl.f(t) - nl.f(t / mu)
        return np.where(np.isfinite(val), val, -np.inf)

    vals = gap(grid)
    i = int(np.argmax(vals))
    tail = vals[-max(8, n_grid // 64):]
    if np.all(np.diff(tail) > 0) and tail[-1] > vals[0]:
        raise SearchFailureError("find_k: supremum still growing at grid end")
    lo = grid[max(0, i - 1)]
    hi = grid[min(len(grid) - 1, i + 1)]
    best = float(vals[i])
    if hi > lo:
        res = optimize.minimize_scalar(lambda t: -float(gap(t)),
                                       bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12})
        best = max(best, -float(res.fun))
    k = max(0.0, best + 1e-9)      # inflate to absorb rounding
    with np.errstate(over="ignore", invalid="ignore"):
        check = N * nl.f(grid) - nl.f(grid / mu) - k
    check = check[np.isfinite(check)]
    if check.size and float(np.max(check)) > -SLACK:
        raise SearchFailureError("find_k: verification failed after maximization")
    return k


def strict_convexity_check(nl: Nonlinearity, t_grid) -> bool:
    """True iff f'' > 0 at every grid point (log-convex class R must pass)."""
    t = np.asarray(t_grid, dtype=float)
    nl.check_domain(t)
    return bool(np.all(nl.fsecond(t) > 0))


def common_mu(nl_f: Nonlinearity, nl_g: Nonlinearity, eps: float, t_grid=None) -> float:
    """A single mu valid for both nonlinearities (coupled-system version).

    Takes the max of the individual values and re-verifies on both; walks
    toward 1 if the combination fails (validity need not be monotone in mu).
    """
    finder = find_mu_R if nl_f.class_tag == "R" else find_mu_S
    mu = max(finder(nl_f, eps), finder(nl_g, eps))

    def valid(m):
        try:
            if nl_f.class_tag == "R":
                g1 = lemma1_margin(nl_f, m, eps, default_grid_R() if t_grid is None else t_grid)
                g2 = lemma1_margin(nl_g, m, eps, default_grid_R() if t_grid is None else t_grid)
            else:
                s = np.linspace(0.0, 1.0 - 1e-9, 512)
                g1 = lemma5_margin(nl_f, m, eps, m * s)
                g2 = lemma5_margin(nl_g, m, eps, m * s)
        except SingularEvaluationError:
            return False
        return bool(min(np.min(g1), np.min(g2)) >= SLACK)

    while not valid(mu):
        mu = mu + 0.5 * (1.0 - mu)
        if 1.0 - mu < 1e-9:
            raise SearchFailureError("no common mu found")
    return mu


def verify_antiderivative(nl: Nonlinearity, intervals=None, rtol: float = 1e-10) -> float:
    """Max relative gap between F(b)-F(a) and adaptive quadrature of f."""
    if intervals is None:
        top = 0.999 if nl.domain_sup == 1.0 else 5.0
        intervals = [(0.0, 0.5), (0.25, 0.75), (0.0, top)]
    worst = 0.0
    for a, b in intervals:
        nl.check_domain(np.array([a, b]))
        q, _ = integrate.quad(lambda t: float(nl.f(t)), a, b, limit=200)
        exact = float(nl.F(b) - nl.F(a))
        rel = abs(q - exact) / max(1.0, abs(exact))
        worst = max(worst, rel)
        if rel > rtol:
            raise RejectedInputError(
                f"{nl.name}: antiderivative disagrees with quadrature on "
                f"[{a}, {b}] (rel {rel:.2e})")
    return worst
