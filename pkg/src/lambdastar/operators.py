"""Radial finite differences on the unit ball in R^N.

Uniform grid r_i = i*h, i = 0..M+1 with h = 1/(M+1); the center r_0 = 0 is
an unknown (closed by radial symmetry), r_{M+1} = 1 carries the Dirichlet
value 0.  Matrices act on the M+1 interior unknowns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import RejectedInputError

NAVIER = "navier"
DIRICHLET4 = "dirichlet4"


def surface_area(N: int) -> float:
    """Measure of the unit sphere S^{N-1}."""
    return 2.0 * math.pi ** (N / 2.0) / math.gamma(N / 2.0)


@dataclass(frozen=True)
class RadialGrid:
    """Uniform radial mesh on the unit ball in R^N."""

    N: int
    M: int

    def __post_init__(self):
        if self.N < 1:
            raise RejectedInputError("space dimension N must be >= 1")
        if self.M < 16:
            raise RejectedInputError("interior node count M must be >= 16")

    @property
    def h(self) -> float:
        return 1.0 / (self.M + 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.M + 2) * self.h

    @property
    def n_unknowns(self) -> int:
        return self.M + 1

    def quad_weights(self) -> np.ndarray:
        """Nodal weights integrating the piecewise-linear interpolant exactly
        against the measure omega_{N-1} r^{N-1} dr (so constants integrate to
        the exact ball volume)."""
        N, h = self.N, self.h
        r = self.nodes
        a, b = r[:-1], r[1:]
        m0 = (b ** N - a ** N) / N
        m1 = (b ** (N + 1) - a ** (N + 1)) / (N + 1)
        w = np.zeros(self.M + 2)
        w[:-1] += (b * m0 - m1) / h     # left node of each cell
        w[1:] += (m1 - a * m0) / h      # right node
        return surface_area(N) * w

    def ball_volume(self) -> float:
        return surface_area(self.N) / self.N


@dataclass
class RadialField:
    """Nodal values on a RadialGrid, boundary node included (length M+2)."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.M + 2,):
            raise RejectedInputError(
                f"field needs {self.grid.M + 2} nodal values, got {self.values.shape}")

    @classmethod
    def from_interior(cls, grid: RadialGrid, interior, boundary: float = 0.0):
        vals = np.empty(grid.M + 2)
        vals[:-1] = interior
        vals[-1] = boundary
        return cls(grid, vals)

    @classmethod
    def from_callable(cls, grid: RadialGrid, fn):
        return cls(grid, np.asarray(fn(grid.nodes), dtype=float))

    @property
    def interior(self) -> np.ndarray:
        return self.values[:-1]

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def copy(self) -> "RadialField":
        return RadialField(self.grid, self.values.copy())


@dataclass
class OperatorMatrix:
    """Banded operator over the interior unknowns, with a cached factorization."""

    grid: RadialGrid
    matrix: sp.csc_matrix
    order: int              # 2 or 4
    bc: str                 # "dirichlet", "navier", "dirichlet4"
    _lu: Optional[spla.SuperLU] = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def bandwidth(self) -> int:
        coo = self.matrix.tocoo()
        return int(np.max(np.abs(coo.row - coo.col))) if coo.nnz else 0

    def lu(self) -> spla.SuperLU:
        if self._lu is None:
            self._lu = spla.splu(self.matrix)
        return self._lu

    def apply(self, interior_values: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(interior_values, dtype=float)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.lu().solve(np.asarray(rhs, dtype=float))

    def inf_norm_inverse(self) -> float:
        """Exact inf-norm of the inverse (max absolute row sum), via n solves."""
        inv = self.lu().solve(np.eye(self.n))
        return float(np.max(np.abs(inv).sum(axis=1)))


def laplacian(grid: RadialGrid) -> OperatorMatrix:
    """-Laplacian with central differences and a Dirichlet row at r = 1.

    The center row realizes -Delta u(0) = -N u''(0) to second order with its
    h^2 truncation matched to the interior rows' limit at r -> 0; the match
    is what keeps the composed fourth-order operator uniformly second-order
    accurate near the center.
    """
    N, M, h = grid.N, grid.M, grid.h
    n = M + 1
    rows, cols, vals = [], [], []

    def put(i, j, v):
        rows.append(i)
        cols.append(j)
        vals.append(v)

    put(0, 0, (9 * N + 3) / (6 * h * h))
    put(0, 1, -(8 * N + 4) / (6 * h * h))
    put(0, 2, (1 - N) / (6 * h * h))
    for i in range(1, n):
        r = i * h
        put(i, i, 2.0 / h ** 2)
        put(i, i - 1, -1.0 / h ** 2 + (N - 1) / (2 * h * r))
        if i + 1 < n:
            put(i, i + 1, -1.0 / h ** 2 - (N - 1) / (2 * h * r))
        # else: u_{M+1} = 0 eliminated
    A = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    return OperatorMatrix(grid, A, order=2, bc="dirichlet")


def _delta2_stencil(grid: RadialGrid, node_idx, i0):
    """Collocation weights for Delta^2 at r_{i0} from even-polynomial fits.

    Works in x = r^2 where radial-symmetric smooth fields are smooth; the
    returned weights are exact on even polynomials spanned by the stencil.
    """
    N, h = grid.N, grid.h
    xs = (np.asarray(node_idx, dtype=float) * h) ** 2
    x0 = (i0 * h) ** 2
    k = len(node_idx)
    s = max(float(np.max(np.abs(xs - x0))), h * h)
    t = (xs - x0) / s

    def lap_shift(c):
        # Laplacian on coefficients of sum c_k ((x-x0)/s)^k
        out = np.zeros_like(c)
        for kk in range(1, len(c)):
            out[kk - 1] += c[kk] * (4 * kk * (kk - 1) + 2 * N * kk) / s
        for kk in range(2, len(c)):
            out[kk - 2] += c[kk] * 4 * x0 * kk * (kk - 1) / s ** 2
        return out

    d = np.zeros(k)
    for kk in range(k):
        c = np.zeros(k)
        c[kk] = 1.0
        d[kk] = lap_shift(lap_shift(c))[0]
    V = np.vander(t, k, increasing=True).T
    return np.linalg.solve(V, d)


def bilaplacian(grid: RadialGrid, bc: str) -> OperatorMatrix:
    """Discrete Delta^2 under Navier or clamped-Dirichlet conditions.

    Navier is the square of the second-order factor: applying it feeds the
    intermediate field back through the same Dirichlet solve, which enforces
    Delta u = 0 at r = 1 exactly and preserves the comparison structure of
    the splitting.  The clamped variant is a direct 5-point radial stencil
    with ghost closure u_{M+2} = u_M (centered normal derivative zero).
    """
    if grid.M < 32:
        raise RejectedInputError("fourth-order stencils need M >= 32")
    if bc == NAVIER:
        L = laplacian(grid).matrix
        return OperatorMatrix(grid, (L @ L).tocsc(), order=4, bc=NAVIER)
    if bc != DIRICHLET4:
        raise RejectedInputError(f"unknown fourth-order boundary condition {bc!r}")

    M = grid.M
    n = M + 1
    A = sp.lil_matrix((n, n))
    w = _delta2_stencil(grid, [0, 1, 2], 0)
    A[0, [0, 1, 2]] = w
    w = _delta2_stencil(grid, [0, 1, 2, 3], 1)
    A[1, [0, 1, 2, 3]] = w
    for i in range(2, n):
        idx = [i - 2, i - 1, i, i + 1, i + 2]
        w = _delta2_stencil(grid, idx, i)
        for j, wj in zip(idx, w):
            if j <= M:
                A[i, j] += wj
            elif j == M + 2:
                A[i, M] += wj       # ghost: u(1+h) = u(1-h)
            # j == M+1 carries the boundary value 0
    return OperatorMatrix(grid, A.tocsc(), order=4, bc=DIRICHLET4)


def integrate(fld: RadialField) -> float:
    """Integral over the ball: omega_{N-1} * int w(r) r^{N-1} dr.

    Uses the trapezoid-type rule with exact geometric moments (the field is
    interpolated linearly, the measure integrated exactly), so constants are
    integrated to machine precision in any dimension.
    """
    return float(fld.grid.quad_weights() @ fld.values)


def integrate_values(grid: RadialGrid, values: np.ndarray) -> float:
    return float(grid.quad_weights() @ np.asarray(values, dtype=float))


def radial_derivative(fld: RadialField) -> RadialField:
    """Nodal u'(r): central differences interior, one-sided 3-point at ends."""
    u = fld.values
    h = fld.grid.h
    d = np.empty_like(u)
    d[1:-1] = (u[2:] - u[:-2]) / (2 * h)
    d[0] = (-3 * u[0] + 4 * u[1] - u[2]) / (2 * h)
    d[-1] = (3 * u[-1] - 4 * u[-2] + u[-3]) / (2 * h)
    return RadialField(fld.grid, d)


def boundary_derivative(fld: RadialField) -> float:
    """One-sided O(h^2) value of u'(1)."""
    u = fld.values
    h = fld.grid.h
    return float((3 * u[-1] - 4 * u[-2] + u[-3]) / (2 * h))
