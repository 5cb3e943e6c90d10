"""Scalar Sturm-Liouville eigenpairs, quadrature grids, and modal projection.

The one-dimensional eigenproblem

    phi'' + lambda * phi = 0  on (0, L),
    g11 phi(0) + g12 phi'(0) = 0,   g21 phi(L) + g22 phi'(L) = 0,

has a simple, increasing eigenvalue sequence ``lambda_n ~ (n pi / L)^2`` whose
eigenfunctions form an orthonormal basis of L2(0, L).  Dirichlet and Neumann
cases use the closed-form pairs; Robin and mixed cases are solved by bracketed
root finding on the characteristic equation, with eigenfunctions normalized by
quadrature.  The grid used throughout is composite Gauss-Legendre (8 nodes per
panel), with panel edges forced onto any shape-function breakpoints so that
piecewise-smooth integrands are integrated panel-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.optimize import brentq

from .errors import ActuatorSingularError, EigenSolverError, PlantSpecError

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)

#: condition-number threshold defining "non-singular in practice"
COND_LIMIT = 1e12


@dataclass(frozen=True)
class BoundaryConditions:
    """Separated boundary conditions g_i1 * z + g_i2 * z_x = 0 at x = 0 and x = L."""

    gamma11: float
    gamma12: float
    gamma21: float
    gamma22: float

    def __post_init__(self):
        if self.gamma11 ** 2 + self.gamma12 ** 2 == 0:
            raise PlantSpecError("left boundary condition is identically zero")
        if self.gamma21 ** 2 + self.gamma22 ** 2 == 0:
            raise PlantSpecError("right boundary condition is identically zero")

    @property
    def is_dirichlet(self) -> bool:
        return self.gamma12 == 0 and self.gamma22 == 0

    @property
    def is_neumann(self) -> bool:
        return self.gamma11 == 0 and self.gamma21 == 0


DIRICHLET = BoundaryConditions(1.0, 0.0, 1.0, 0.0)
NEUMANN = BoundaryConditions(0.0, 1.0, 0.0, 1.0)


@dataclass(frozen=True)
class SpatialGrid:
    """Composite Gauss-Legendre quadrature grid on [0, L]."""

    points: np.ndarray
    weights: np.ndarray
    length: float

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integrate sampled values (first axis indexes grid points)."""
        return np.tensordot(self.weights, values, axes=(0, 0))


def make_grid(L: float, n_max: int, breakpoints: tuple[float, ...] = ()) -> SpatialGrid:
    """Build a quadrature grid resolving modes up to ``n_max``.

    Panel count scales with ``n_max`` (at least 8 quadrature points per
    half-wave of the highest retained mode); panel edges include every
    requested breakpoint so indicator-type integrands stay panel-smooth.
    """
    if L <= 0:
        raise PlantSpecError("domain length must be positive")
    n_panels = max(12, int(np.ceil(1.25 * n_max)))
    edges = set(np.linspace(0.0, L, n_panels + 1))
    edges.update(float(b) for b in breakpoints if 0.0 <= b <= L)
    edges = np.array(sorted(edges))
    # drop near-duplicate edges
    keep = np.concatenate([[True], np.diff(edges) > 1e-12 * L])
    edges = edges[keep]
    pts, wts = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        h = 0.5 * (b - a)
        pts.append(h * _GL_NODES + 0.5 * (a + b))
        wts.append(h * _GL_WEIGHTS)
    return SpatialGrid(np.concatenate(pts), np.concatenate(wts), float(L))


# ---------------------------------------------------------------------------
# eigenpairs
# ---------------------------------------------------------------------------

# mode kinds: how phi_n is evaluated
_SIN = "sin"            # c * sin(s x)
_COS = "cos"            # c * cos(s x)
_CONST = "const"        # c
_TRIG = "trig"          # c * (g12 s cos(s x) - g11 sin(s x))
_LINEAR = "linear"      # c * (A + B x)
_HYPER = "hyper"        # c * (g12 mu cosh(mu x) - g11 sinh(mu x))


@dataclass(frozen=True)
class EigenBasis:
    """Eigenpairs of the unit-diffusion Sturm-Liouville problem.

    ``lambdas[n-1]`` is the n-th eigenvalue; ``phi(n, x)`` evaluates the n-th
    orthonormal eigenfunction.  Modes are indexed from 1.
    """

    bc: BoundaryConditions
    L: float
    lambdas: np.ndarray
    n_max: int
    _kinds: tuple = field(repr=False, default=())
    _params: tuple = field(repr=False, default=())   # per-mode (s_or_mu, scale)

    def phi(self, n: int, x) -> np.ndarray:
        """Evaluate phi_n at points ``x`` (vectorized)."""
        if not 1 <= n <= self.n_max:
            raise IndexError(f"mode {n} outside 1..{self.n_max}")
        x = np.asarray(x, dtype=float)
        kind = self._kinds[n - 1]
        p, c = self._params[n - 1]
        g = self.bc
        if kind == _SIN:
            return c * np.sin(p * x)
        if kind == _COS:
            return c * np.cos(p * x)
        if kind == _CONST:
            return np.full_like(x, c)
        if kind == _TRIG:
            return c * (g.gamma12 * p * np.cos(p * x) - g.gamma11 * np.sin(p * x))
        if kind == _LINEAR:
            # p stores the slope ratio: phi ∝ (A + B x) with (A, B) = (g12, -g11)
            return c * (g.gamma12 - g.gamma11 * x)
        if kind == _HYPER:
            return c * (g.gamma12 * p * np.cosh(p * x) - g.gamma11 * np.sinh(p * x))
        raise AssertionError(kind)

    def sample(self, x, m: int | None = None) -> np.ndarray:
        """Matrix of eigenfunction samples, shape ``(len(x), m)``."""
        m = self.n_max if m is None else m
        x = np.asarray(x, dtype=float)
        return np.column_stack([self.phi(n, x) for n in range(1, m + 1)])


def _characteristic(bc: BoundaryConditions, L: float):
    """Characteristic function chi(s) for positive eigenvalues lambda = s^2."""
    g11, g12, g21, g22 = bc.gamma11, bc.gamma12, bc.gamma21, bc.gamma22

    def chi(s):
        sl = s * L
        return (g21 * (g12 * s * np.cos(sl) - g11 * np.sin(sl))
                + g22 * (-g12 * s * s * np.sin(sl) - g11 * s * np.cos(sl)))

    return chi


def _characteristic_negative(bc: BoundaryConditions, L: float):
    """Characteristic function for negative eigenvalues lambda = -mu^2."""
    g11, g12, g21, g22 = bc.gamma11, bc.gamma12, bc.gamma21, bc.gamma22

    def chi(mu):
        ml = mu * L
        return (g21 * (g12 * mu * np.cosh(ml) - g11 * np.sinh(ml))
                + g22 * (g12 * mu * mu * np.sinh(ml) - g11 * mu * np.cosh(ml)))

    return chi


def _scan_roots(f, lo: float, hi: float, steps: int) -> list[float]:
    xs = np.linspace(lo, hi, steps)
    vals = np.array([f(x) for x in xs])
    roots = []
    for a, b, fa, fb in zip(xs[:-1], xs[1:], vals[:-1], vals[1:]):
        if fa == 0.0:
            roots.append(float(a))
        elif fa * fb < 0:
            roots.append(float(brentq(f, a, b, xtol=1e-14, rtol=1e-15)))
    return roots


def eigenpairs(bc: BoundaryConditions, L: float, n_max: int) -> EigenBasis:
    """Compute the first ``n_max`` unit-diffusion eigenpairs.

    Dirichlet and Neumann boundary conditions use the analytic pairs; other
    separated conditions are handled by bracketed bisection between the
    asymptotic Dirichlet/Neumann interlacing points, followed by quadrature
    normalization.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if L <= 0:
        raise PlantSpecError("domain length must be positive")

    if bc.is_dirichlet:
        lam = np.array([(n * np.pi / L) ** 2 for n in range(1, n_max + 1)])
        kinds = tuple(_SIN for _ in range(n_max))
        params = tuple((n * np.pi / L, np.sqrt(2.0 / L)) for n in range(1, n_max + 1))
        return EigenBasis(bc, L, lam, n_max, kinds, params)

    if bc.is_neumann:
        lam = np.array([((n - 1) * np.pi / L) ** 2 for n in range(1, n_max + 1)])
        kinds = tuple(_CONST if n == 1 else _COS for n in range(1, n_max + 1))
        params = tuple((0.0, 1.0 / np.sqrt(L)) if n == 1
                       else ((n - 1) * np.pi / L, np.sqrt(2.0 / L))
                       for n in range(1, n_max + 1))
        return EigenBasis(bc, L, lam, n_max, kinds, params)

    # general separated conditions: collect negative, zero, positive eigenvalues
    found: list[tuple[float, str, float]] = []   # (lambda, kind, parameter)

    chi_neg = _characteristic_negative(bc, L)
    mu_max = 50.0 / L
    for mu in _scan_roots(chi_neg, 1e-9 / L, mu_max, 4000):
        if mu > 1e-8 / L:
            found.append((-mu * mu, _HYPER, mu))

    det0 = bc.gamma11 * (bc.gamma21 * L + bc.gamma22) - bc.gamma12 * bc.gamma21
    scale0 = max(abs(bc.gamma11), abs(bc.gamma12)) * max(
        abs(bc.gamma21) * (1 + L), abs(bc.gamma22))
    if abs(det0) <= 1e-12 * max(scale0, 1e-300):
        found.append((0.0, _LINEAR, 0.0))

    chi_pos = _characteristic(bc, L)
    # roots interlace the quarter-wave lattice; scan well past the target count
    s_hi = (n_max + 3) * np.pi / L
    steps = max(4000, 80 * (n_max + 3))
    for s in _scan_roots(chi_pos, 1e-9 / L, s_hi, steps):
        if s > 1e-8 / L:
            found.append((s * s, _TRIG, s))

    found.sort(key=lambda t: t[0])
    if len(found) < n_max:
        raise EigenSolverError(
            f"bracketing found only {len(found)} eigenvalues; "
            f"index {len(found) + 1} missing (increase scan range)")
    found = found[:n_max]

    # normalize by quadrature, fix sign at the first grid point
    grid = make_grid(L, n_max)
    lam = np.array([t[0] for t in found])
    kinds = tuple(t[1] for t in found)
    raw_params = [(t[2], 1.0) for t in found]
    basis = EigenBasis(bc, L, lam, n_max, kinds, tuple(raw_params))
    params = []
    for n in range(1, n_max + 1):
        v = basis.phi(n, grid.points)
        nrm = float(np.sqrt(grid.integrate(v * v)))
        if nrm <= 0 or not np.isfinite(nrm):
            raise EigenSolverError(f"eigenfunction {n} has zero or invalid norm")
        lead = v[np.argmax(np.abs(v) > 1e-12 * nrm)]
        sign = 1.0 if lead >= 0 else -1.0
        params.append((raw_params[n - 1][0], sign / nrm))
    return EigenBasis(bc, L, lam, n_max, kinds, tuple(params))


# ---------------------------------------------------------------------------
# modal projection / reconstruction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModalState:
    """Stack of 3-vector mode coefficients, shape ``(M_modes, 3)``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 2 or c.shape[1] != 3:
            raise ValueError("coeffs must have shape (M_modes, 3)")
        object.__setattr__(self, "coeffs", c)

    @property
    def M_modes(self) -> int:
        return self.coeffs.shape[0]

    def norm(self) -> float:
        """l2 norm of the coefficient stack = L2 norm of the represented field."""
        return float(np.sqrt((self.coeffs ** 2).sum()))


def _field_samples(field, grid: SpatialGrid) -> np.ndarray:
    if callable(field):
        vals = np.asarray(field(grid.points), dtype=float)
    else:
        vals = np.asarray(field, dtype=float)
    if vals.shape == (3, len(grid.points)):
        vals = vals.T
    if vals.shape != (len(grid.points), 3):
        raise ValueError("field must evaluate to shape (n_points, 3)")
    if not np.isfinite(vals).all():
        raise ValueError("field evaluation produced non-finite values")
    return vals


def project(field, basis: EigenBasis, grid: SpatialGrid, M_modes: int) -> ModalState:
    """Project a 3-component field onto the first ``M_modes`` eigenfunctions."""
    if M_modes > basis.n_max:
        raise ValueError(f"M_modes={M_modes} exceeds basis n_max={basis.n_max}")
    vals = _field_samples(field, grid)
    table = basis.sample(grid.points, M_modes)            # (nq, M)
    coeffs = table.T @ (grid.weights[:, None] * vals)     # (M, 3)
    return ModalState(coeffs)


def reconstruct(state: ModalState, basis: EigenBasis, grid: SpatialGrid) -> np.ndarray:
    """Evaluate the truncated eigenfunction series on the grid, shape (nq, 3)."""
    table = basis.sample(grid.points, state.M_modes)
    return table @ state.coeffs


# ---------------------------------------------------------------------------
# actuator matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActuatorMatrix:
    """First-N-modes projection data of the actuator shape functions.

    ``B_NN[n-1, j-1] = <b_j, phi_n>`` (rows index modes, columns shapes);
    ``tail_mass`` is the total shape energy falling outside the first N modes.
    """

    B_NN: np.ndarray
    inverse: np.ndarray
    cond: float
    tail_mass: float

    @property
    def N(self) -> int:
        return self.B_NN.shape[0]


def shape_projections(shapes, basis: EigenBasis, grid: SpatialGrid, m: int) -> np.ndarray:
    """Projections ``b_{j,n}`` for n = 1..m, shape ``(m, N)``.

    Closed forms are used for indicator shapes under Dirichlet conditions;
    everything else goes through quadrature (grid panels are assumed to be
    aligned with any shape discontinuities).
    """
    if m > basis.n_max:
        raise ValueError("requested more modes than the basis carries")
    N = shapes.N
    if shapes.kind == "indicator-partition" and basis.bc.is_dirichlet:
        L = basis.L
        n = np.arange(1, m + 1)[:, None]
        edges = np.asarray(shapes.breakpoints)
        a, b = edges[:-1][None, :], edges[1:][None, :]
        return np.sqrt(2.0 / L) * (L / (n * np.pi)) * (
            np.cos(n * np.pi * a / L) - np.cos(n * np.pi * b / L))
    table = basis.sample(grid.points, m)                  # (nq, m)
    out = np.empty((m, N))
    for j in range(N):
        bj = np.asarray(shapes.evaluators[j](grid.points), dtype=float)
        if not np.isfinite(bj).all():
            raise PlantSpecError(f"shape function {j + 1} evaluation is not finite")
        out[:, j] = table.T @ (grid.weights * bj)
    return out


def actuator_matrix(shapes, basis: EigenBasis, grid: SpatialGrid) -> ActuatorMatrix:
    """Assemble B_NxN, its inverse, and the spillover tail mass."""
    N = shapes.N
    if N > basis.n_max:
        raise ValueError("need basis.n_max >= number of actuators")
    B = shape_projections(shapes, basis, grid, N)
    cond = float(np.linalg.cond(B))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise ActuatorSingularError(
            f"actuator matrix condition number {cond:.3e} exceeds {COND_LIMIT:.0e}")
    lu = lu_factor(B)
    inv = lu_solve(lu, np.eye(N))
    norms_sq = np.empty(N)
    for j in range(N):
        bj = np.asarray(shapes.evaluators[j](grid.points), dtype=float)
        norms_sq[j] = float(grid.integrate(bj * bj))
    tail = float(norms_sq.sum() - (B ** 2).sum())
    return ActuatorMatrix(B, inv, cond, tail)
