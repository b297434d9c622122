"""Even radial polynomials: exact test functions for weak forms and identities.

A polynomial sum a_k r^{2k} is stored by its coefficient vector; Laplacians,
derivatives and ball integrals are all exact, which makes these suitable as
boundary-compliant test banks (compliance holds to rounding, not to O(h^2)).
"""

from __future__ import annotations

import numpy as np

from .errors import RejectedInputError
from .operators import RadialGrid, surface_area


class EvenPoly:
    """Polynomial in r^2 with float coefficients: p(r) = sum c[k] r^(2k)."""

    def __init__(self, coeffs):
        self.c = np.trim_zeros(np.asarray(coeffs, dtype=float), "b")
        if self.c.size == 0:
            self.c = np.zeros(1)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        x = r * r
        out = np.zeros_like(x)
        for ck in self.c[::-1]:
            out = out * x + ck
        return out

    def laplacian(self, N: int) -> "EvenPoly":
        """Delta p for the N-dimensional radial Laplacian (exact)."""
        out = np.zeros(max(1, self.c.size - 1))
        for k in range(1, self.c.size):
            out[k - 1] += self.c[k] * 2 * k * (2 * k + N - 2)
        return EvenPoly(out)

    def derivative_over_r(self) -> "EvenPoly":
        """p'(r)/r, again an even polynomial."""
        out = np.zeros(max(1, self.c.size - 1))
        for k in range(1, self.c.size):
            out[k - 1] += self.c[k] * 2 * k
        return EvenPoly(out)

    def derivative(self, r):
        return self.derivative_over_r()(r) * np.asarray(r, dtype=float)

    def multiply(self, other: "EvenPoly") -> "EvenPoly":
        return EvenPoly(np.convolve(self.c, other.c))

    def ball_integral(self, N: int) -> float:
        """Exact integral of p over the unit ball in R^N."""
        ks = np.arange(self.c.size)
        return float(surface_area(N) * np.sum(self.c / (2 * ks + N)))

    def __add__(self, other):
        a, b = self.c, other.c
        n = max(a.size, b.size)
        out = np.zeros(n)
        out[:a.size] += a
        out[:b.size] += b
        return EvenPoly(out)

    def scale(self, s: float) -> "EvenPoly":
        return EvenPoly(self.c * s)


def xp_bank():
    """Second-order test functions: even polynomials vanishing at r = 1."""
    one_minus = EvenPoly([1.0, -1.0])                        # 1 - r^2
    return [
        one_minus,
        one_minus.multiply(EvenPoly([0.0, 1.0])),            # (1-r^2) r^2
        one_minus.multiply(EvenPoly([0.0, 0.0, 1.0])),       # (1-r^2) r^4
        one_minus.multiply(one_minus),                       # (1-r^2)^2
        one_minus.multiply(one_minus).multiply(EvenPoly([0.0, 1.0])),
    ]


def solve_minus_laplacian(source: EvenPoly, N: int) -> EvenPoly:
    """The even polynomial phi with -Delta phi = source and phi(1) = 0."""
    src = source.c
    out = np.zeros(src.size + 1)
    for k, ak in enumerate(src):
        out[k + 1] = -ak / ((2 * k + 2) * (2 * k + N))
    phi = EvenPoly(out)
    return phi + EvenPoly([-phi(np.array(1.0))])


def xn_bank(N: int):
    """Fourth-order Navier test functions: phi = Delta phi = 0 at r = 1.

    Built by solving -Delta phi = psi for psi in the second-order bank, so
    Delta phi = -psi vanishes at the boundary exactly.
    """
    return [solve_minus_laplacian(psi, N) for psi in xp_bank()]


def xd_bank():
    """Clamped test functions: phi = phi' = 0 at r = 1."""
    sq = EvenPoly([1.0, -1.0]).multiply(EvenPoly([1.0, -1.0]))   # (1-r^2)^2
    cube = sq.multiply(EvenPoly([1.0, -1.0]))
    return [
        sq,
        sq.multiply(EvenPoly([0.0, 1.0])),
        sq.multiply(EvenPoly([0.0, 0.0, 1.0])),
        cube,
        cube.multiply(EvenPoly([0.0, 1.0])),
    ]


def check_boundary_compliance(poly: EvenPoly, N: int, kind: str, tol: float = 1e-12):
    """Reject test functions whose boundary data exceed tolerance."""
    one = np.array(1.0)
    v = abs(float(poly(one)))
    if kind == "xp":
        extra = 0.0
    elif kind == "xn":
        extra = abs(float(poly.laplacian(N)(one)))
    elif kind == "xd":
        extra = abs(float(poly.derivative(one)))
    else:
        raise RejectedInputError(f"unknown test-function family {kind!r}")
    if v > tol or extra > tol:
        raise RejectedInputError(
            f"test function violates {kind} boundary conditions "
            f"(|phi(1)| = {v:.2e}, extra = {extra:.2e})")


def sample(poly: EvenPoly, grid: RadialGrid) -> np.ndarray:
    return poly(grid.nodes)
