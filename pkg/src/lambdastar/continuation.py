"""Parameter continuation machinery shared by the scalar and system solvers.

A problem object supplies residual/Jacobian callbacks; this module supplies
damped Newton, pseudo-arclength predictor-corrector stepping, a quadratically
convergent fold refinement, and the bottom-eigenvalue solve used for
stability indicators and fold null vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DomainExitError,
    EigenSolverError,
    NonConvergenceError,
    StepFailureError,
)

NEWTON_FLOOR = 2.0 ** -20       # damping floor for backtracking line searches


def rms(prob, x: np.ndarray) -> float:
    """Volume-weighted root-mean-square norm of the field part."""
    return math.sqrt(max(0.0, float(x @ (prob.weights * x))))


def newton(prob, x0, lam, tol=1e-10, max_iter=60):
    """Damped Newton on G(x, lam) = 0 at fixed lam.

    Backtracks on the residual sup norm (Armijo) and additionally halves any
    step that would leave the admissible set (class-S ceiling).  Returns
    (x, iterations, scaled_residual).
    """
    x = np.asarray(x0, dtype=float).copy()
    if not prob.admissible(x):
        raise DomainExitError("initial guess outside the admissible set")
    res = math.inf
    for it in range(max_iter):
        G = prob.residual(x, lam)
        if not np.all(np.isfinite(G)):
            raise NonConvergenceError("residual overflow during Newton")
        res = prob.res_scale * float(np.abs(G).max())
        if res <= tol:
            return x, it, res
        J = prob.jacobian(x, lam)
        dx = spla.splu(J.tocsc()).solve(-G)
        g0 = float(np.abs(G).max())
        t = 1.0
        while t >= NEWTON_FLOOR:
            xn = x + t * dx
            if prob.admissible(xn):
                Gn = prob.residual(xn, lam)
                if np.all(np.isfinite(Gn)) and float(np.abs(Gn).max()) <= (1 - 1e-4 * t) * g0:
                    break
            t *= 0.5
        else:
            if not prob.admissible(x + NEWTON_FLOOR * dx):
                raise DomainExitError(
                    "Newton step exits the nonlinearity domain even at the damping floor")
            raise NonConvergenceError("Newton line search stalled")
        x = x + t * dx
    G = prob.residual(x, lam)
    res = prob.res_scale * float(np.abs(G).max())
    if res <= tol:
        return x, max_iter, res
    raise NonConvergenceError(f"Newton did not reach tolerance (residual {res:.3e})")


def smallest_eigenvalue(A, polish_iters: int = 8):
    """Bottom (smallest real part) eigenvalue of a small sparse matrix.

    The dense spectrum supplies the shift; a few steps of shifted inverse
    iteration then polish the eigenpair.  Raises if the bottom eigenvalue
    carries a non-negligible imaginary part or the polish stagnates.
    """
    A = sp.csc_matrix(A)
    n = A.shape[0]
    if n > 4000:
        raise EigenSolverError("eigenvalue solve limited to modest grids")
    vals = np.linalg.eigvals(A.toarray())
    i = int(np.argmin(vals.real))
    eta0 = float(vals.real[i])
    scale = max(1.0, float(np.abs(vals.real).max()))
    if abs(float(vals.imag[i])) > 1e-8 * scale:
        raise EigenSolverError(
            f"bottom eigenvalue is not real (imag {vals.imag[i]:.3e})")
    shift = eta0 - max(1e-8 * scale, 1e-10)
    try:
        lu = spla.splu((A - shift * sp.eye(n, format="csc")).tocsc())
    except RuntimeError as exc:
        raise EigenSolverError(f"shifted factorization failed: {exc}") from None
    v = np.ones(n)
    eta = eta0
    for _ in range(polish_iters):
        v = lu.solve(v)
        nv = float(np.abs(v).max())
        if not math.isfinite(nv) or nv == 0.0:
            raise EigenSolverError("inverse iteration stagnated")
        v /= nv
        eta_new = float(v @ (A @ v)) / float(v @ v)
        if abs(eta_new - eta) < 1e-13 * scale:
            eta = eta_new
            break
        eta = eta_new
    if abs(eta - eta0) > 1e-6 * scale:
        raise EigenSolverError("inverse-iteration polish disagrees with spectrum")
    return eta, v / np.linalg.norm(v)


@dataclass
class ContinuationPoint:
    lam: float
    x: np.ndarray
    tangent_lam: float
    newton_iters: int
    residual: float
    arclength: float


@dataclass
class ContinuationRun:
    points: List[ContinuationPoint] = field(default_factory=list)
    fold_index: Optional[int] = None      # first point past the fold
    diagnostics: List[str] = field(default_factory=list)


def _tangent_from_jacobian(prob, x, lam):
    J = prob.jacobian(x, lam)
    dxdlam = spla.splu(J.tocsc()).solve(-prob.dres_dlam(x, lam))
    tl = 1.0 / math.sqrt(1.0 + rms(prob, dxdlam) ** 2)
    return dxdlam * tl, tl


def continue_arclength(prob, x0, lam0, ds0, n_steps,
                       tol=1e-10, sup_stop=math.inf, lam_stop=0.0,
                       lam_floor=0.0, max_corrector=12, ds_growth=1.3):
    """Pseudo-arclength continuation from a converged point (x0, lam0).

    Arclength weights the parameter and the volume-rms of the field equally.
    The fold is flagged by the first sign change of the tangent's lambda
    component; refinement is left to `refine_fold`.  Corrector results that
    leave lam >= lam_floor or drift far from the predictor (a basin jump)
    are rejected and retried with a smaller step.
    """
    run = ContinuationRun()
    x, lam = np.asarray(x0, dtype=float).copy(), float(lam0)
    tu, tl = _tangent_from_jacobian(prob, x, lam)
    s = 0.0
    run.points.append(ContinuationPoint(lam, x.copy(), tl, 0, 0.0, s))
    ds = float(ds0)
    ds_max = 8.0 * ds0
    for _ in range(n_steps):
        accepted = False
        ds_try = ds
        for _attempt in range(18):
            xp = x + ds_try * tu
            lp = lam + ds_try * tl
            xn, ln = xp.copy(), lp
            tu_w = prob.weights * tu
            conv = False
            iters = 0
            res = math.inf
            for it in range(max_corrector):
                iters = it + 1
                G = prob.residual(xn, ln)
                if not np.all(np.isfinite(G)):
                    break
                arc = float(tu_w @ (xn - xp)) + tl * (ln - lp)
                J = prob.jacobian(xn, ln)
                try:
                    lu = spla.splu(J.tocsc())
                except RuntimeError:
                    break
                a = lu.solve(-G)
                b = lu.solve(-prob.dres_dlam(xn, ln))
                denom = float(tu_w @ b) + tl
                if denom == 0.0:
                    break
                dl = -(arc + float(tu_w @ a)) / denom
                dx = a + dl * b
                t = 1.0
                while t >= NEWTON_FLOOR and not prob.admissible(xn + t * dx):
                    t *= 0.5
                if t < NEWTON_FLOOR:
                    break
                xn = xn + t * dx
                ln = ln + t * dl
                res = prob.res_scale * float(np.abs(prob.residual(xn, ln)).max())
                if res <= tol and rms(prob, t * dx) + abs(t * dl) <= 1e-8 * (1 + rms(prob, xn)):
                    conv = True
                    break
            if conv and ln >= lam_floor and \
                    math.sqrt(rms(prob, xn - xp) ** 2 + (ln - lp) ** 2) <= 4.0 * ds_try:
                accepted = True
                break
            ds_try *= 0.5
        if not accepted:
            if len(run.points) == 1:
                raise StepFailureError("continuation step size underflowed at start")
            run.diagnostics.append(
                f"corrector failed at lam={lam:.6g} after step underflow; run truncated")
            break
        dl = ln - lam
        dxs = xn - x
        nrm = math.sqrt(rms(prob, dxs) ** 2 + dl ** 2)
        tl_new = dl / nrm
        tu_new = dxs / nrm
        s += nrm
        if run.fold_index is None and tl_new * run.points[-1].tangent_lam < 0:
            run.fold_index = len(run.points)
        x, lam, tu, tl = xn, ln, tu_new, tl_new
        run.points.append(ContinuationPoint(lam, x.copy(), tl, iters, res, s))
        ds = min(ds_try * ds_growth, ds_max)
        if prob.sup(x) >= sup_stop:
            run.diagnostics.append("stopped at field sup cap")
            break
        if lam <= lam_stop:
            run.diagnostics.append("stopped at lambda floor")
            break
    return run


def refine_fold(prob, x, lam, phi=None, max_iter=30, tol=1e-11):
    """Newton on the extended fold system (G = 0, J phi = 0, c.phi = 1).

    Quadratically convergent from a continuation point near the fold;
    returns (x*, phi*, lambda*).
    """
    x = np.asarray(x, dtype=float).copy()
    n = x.size
    if phi is None:
        _, phi = smallest_eigenvalue(prob.jacobian(x, lam))
    phi = np.asarray(phi, dtype=float).copy()
    c = phi / float(phi @ phi)
    for _ in range(max_iter):
        J = prob.jacobian(x, lam)
        G1 = prob.residual(x, lam)
        G2 = J @ phi
        G3 = float(c @ phi) - 1.0
        r1 = prob.res_scale * float(np.abs(G1).max())
        r2 = prob.res_scale * float(np.abs(G2).max())
        if r1 <= tol and r2 <= 10 * tol and abs(G3) <= 1e-12:
            return x, phi, lam
        big = sp.bmat([
            [J, None, prob.dres_dlam(x, lam)[:, None]],
            [prob.jacvec_dx(x, lam, phi), J, prob.jacvec_dlam(x, lam, phi)[:, None]],
            [None, sp.csr_matrix(c[None, :]), None],
        ], format="csc")
        F = np.concatenate([G1, G2, [G3]])
        try:
            d = spla.splu(big).solve(-F)
        except RuntimeError as exc:
            raise NonConvergenceError(f"fold system factorization failed: {exc}") from None
        x += d[:n]
        phi += d[n:2 * n]
        lam += float(d[-1])
    raise NonConvergenceError("fold refinement did not converge")
