"""Plant description: three coupled semilinear reaction-diffusion equations.

The state ``z = (z1, z2, z3)`` obeys

    z_t = D z_xx + (Q0 + Q1) z + f(z) + e1 * sum_j b_j(x) u_j(t)

on (0, L) with separated homogeneous boundary conditions.  ``Q0`` carries only
the subdiagonal chain couplings ``q21, q32`` (these propagate the scalar input
down the chain), ``Q1`` is upper triangular, and ``f`` is triangular with
``f1`` feeding the last components back into the first equation.  This module
validates the structural assumptions behind the feedback design and ships the
reference example plant.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import PlantSpecError
from .spectral import (BoundaryConditions, DIRICHLET, EigenBasis, SpatialGrid,
                       actuator_matrix, make_grid)

__all__ = [
    "BoundaryConditions", "Nonlinearity", "ShapeFunctionSet", "PlantSpec",
    "AssumptionReport", "validate", "paper_example", "make_nonlinearity",
    "NONLINEARITY_REGISTRY",
]


# ---------------------------------------------------------------------------
# nonlinearity
# ---------------------------------------------------------------------------

def _zero_fn(*args):
    return np.zeros_like(np.asarray(args[0], dtype=float))


@dataclass(frozen=True)
class Nonlinearity:
    """Triangular reaction nonlinearity with declared Lipschitz constants.

    ``f1(z1, z2, z3)``, ``f2(z2, z3)``, ``f3(z3)`` are pointwise evaluators
    (vectorized over their arguments); ``ell_i`` are the declared L2 Lipschitz
    constants.  The core design assumes ``f2 = f3 = 0``; nonzero tails are
    accepted for robustness experiments only.
    """

    f1: callable = _zero_fn
    f2: callable = _zero_fn
    f3: callable = _zero_fn
    ell1: float = 0.0
    ell2: float = 0.0
    ell3: float = 0.0

    def __post_init__(self):
        if min(self.ell1, self.ell2, self.ell3) < 0:
            raise PlantSpecError("Lipschitz constants must be nonnegative")
        if self.ell2 > 0 or self.ell3 > 0:
            warnings.warn(
                "nonzero ell2/ell3: the certificate design assumes f2 = f3 = 0; "
                "simulation supports them but no stability guarantee is implied",
                stacklevel=3)

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        """Apply f componentwise to field samples ``z`` of shape (n, 3)."""
        out = np.zeros_like(z)
        out[:, 0] = self.f1(z[:, 0], z[:, 1], z[:, 2])
        out[:, 1] = self.f2(z[:, 1], z[:, 2])
        out[:, 2] = self.f3(z[:, 2])
        return out


def _scalar_shape(kind: str, gain: float):
    if kind == "sin":
        return lambda w: gain * np.sin(w)
    if kind == "tanh":
        return lambda w: gain * np.tanh(w)
    if kind == "saturation":
        return lambda w: gain * np.clip(w, -1.0, 1.0)
    raise KeyError(kind)


#: registry of named f1 nonlinearities; each has unit slope so the Lipschitz
#: constant equals |gain|
NONLINEARITY_REGISTRY = ("zero", "sin", "tanh", "saturation")


def make_nonlinearity(kind: str, gain: float = 0.0, arg: int = 3) -> Nonlinearity:
    """Build an f1-only nonlinearity from the named registry.

    ``arg`` selects which state component feeds f1 (1, 2 or 3); the returned
    declared constant is ``|gain|`` since every registered profile has unit
    slope.
    """
    if kind == "zero" or gain == 0.0:
        return Nonlinearity()
    if kind not in NONLINEARITY_REGISTRY:
        raise PlantSpecError(
            f"unknown nonlinearity {kind!r}; choose from {NONLINEARITY_REGISTRY}")
    if arg not in (1, 2, 3):
        raise PlantSpecError("nonlinearity arg must be 1, 2 or 3")
    g = _scalar_shape(kind, gain)
    f1 = lambda z1, z2, z3: g((z1, z2, z3)[arg - 1])
    return Nonlinearity(f1=f1, ell1=abs(gain))


# ---------------------------------------------------------------------------
# shape functions
# ---------------------------------------------------------------------------

def _indicator(a: float, b: float):
    return lambda x: ((np.asarray(x) >= a) & (np.asarray(x) < b)).astype(float)


@dataclass(frozen=True)
class ShapeFunctionSet:
    """N actuator profiles b_j in L2(0, L).

    ``kind`` is one of ``indicator-partition`` (equal partition of [0, L]),
    ``eigenfunction`` (b_j = phi_j), or ``custom``.  ``breakpoints`` lists the
    discontinuity locations that the quadrature grid must respect.
    """

    N: int
    evaluators: tuple
    kind: str = "custom"
    breakpoints: tuple = ()
    length: float = 1.0

    def __post_init__(self):
        if self.N < 1 or len(self.evaluators) != self.N:
            raise PlantSpecError("need one evaluator per actuator")

    @staticmethod
    def indicator_partition(N: int, L: float = 1.0) -> "ShapeFunctionSet":
        edges = tuple(j * L / N for j in range(N + 1))
        evals = tuple(_indicator(edges[j], edges[j + 1]) for j in range(N))
        return ShapeFunctionSet(N, evals, "indicator-partition", edges, L)

    @staticmethod
    def eigenfunctions(N: int, basis: EigenBasis) -> "ShapeFunctionSet":
        evals = tuple((lambda n: lambda x: basis.phi(n, x))(j) for j in range(1, N + 1))
        return ShapeFunctionSet(N, evals, "eigenfunction", (), basis.L)

    def family(self, N: int, basis: EigenBasis | None = None) -> "ShapeFunctionSet":
        """The N-actuator member of this set's natural family.

        Indicator partitions refine to the equal N-partition, eigenfunction
        sets extend to the first N modes, and custom sets truncate to their
        first N members (N may not exceed the stored count).
        """
        if self.kind == "indicator-partition":
            return ShapeFunctionSet.indicator_partition(N, self.length)
        if self.kind == "eigenfunction":
            if basis is None:
                raise ValueError("eigenfunction family needs the basis")
            return ShapeFunctionSet.eigenfunctions(N, basis)
        if N > self.N:
            raise PlantSpecError(
                f"custom shape set has {self.N} members; cannot provide {N}")
        return ShapeFunctionSet(N, self.evaluators[:N], "custom",
                                self.breakpoints, self.length)


# ---------------------------------------------------------------------------
# plant
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlantSpec:
    """Full plant description; immutable and safe to share."""

    length: float
    D: np.ndarray            # diag entries d1, d2, d3
    Q0: np.ndarray
    Q1: np.ndarray
    bc: BoundaryConditions
    nonlinearity: Nonlinearity
    shapes: ShapeFunctionSet

    def __post_init__(self):
        D = np.atleast_1d(np.asarray(self.D, dtype=float))
        if D.ndim == 2:
            D = np.diag(D)
        if D.shape != (3,) or (D <= 0).any():
            raise PlantSpecError("need three positive diffusion coefficients")
        object.__setattr__(self, "D", D)
        Q0 = np.asarray(self.Q0, dtype=float)
        Q1 = np.asarray(self.Q1, dtype=float)
        if Q0.shape != (3, 3) or Q1.shape != (3, 3):
            raise PlantSpecError("Q0 and Q1 must be 3x3")
        mask0 = np.zeros((3, 3), bool)
        mask0[1, 0] = mask0[2, 1] = True
        if np.any(Q0[~mask0] != 0):
            raise PlantSpecError("Q0 may only have entries at (2,1) and (3,2)")
        if np.any(Q1[np.tril_indices(3, -1)] != 0):
            raise PlantSpecError("Q1 must be upper triangular")
        object.__setattr__(self, "Q0", Q0)
        object.__setattr__(self, "Q1", Q1)
        if self.length <= 0:
            raise PlantSpecError("domain length must be positive")

    @property
    def q21(self) -> float:
        return float(self.Q0[1, 0])

    @property
    def q32(self) -> float:
        return float(self.Q0[2, 1])

    @property
    def Q(self) -> np.ndarray:
        return self.Q0 + self.Q1

    def D_matrix(self) -> np.ndarray:
        return np.diag(self.D)

    def with_l1(self, ell1: float, kind: str = "sin", arg: int = 3) -> "PlantSpec":
        """Copy of the plant with a registry f1 of Lipschitz constant ``ell1``."""
        return replace(self, nonlinearity=make_nonlinearity(kind, ell1, arg))


def paper_example(ell1: float = 15.0) -> PlantSpec:
    """Reference plant: unit domain, Dirichlet walls, D = diag(2, 2.5, 3),
    unit chain couplings, five indicator actuators, f1 = ell1 * sin(z3)."""
    Q0 = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    return PlantSpec(
        length=1.0,
        D=np.array([2.0, 2.5, 3.0]),
        Q0=Q0,
        Q1=np.zeros((3, 3)),
        bc=DIRICHLET,
        nonlinearity=make_nonlinearity("sin", ell1, arg=3),
        shapes=ShapeFunctionSet.indicator_partition(5, 1.0),
    )


# ---------------------------------------------------------------------------
# assumption diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AssumptionReport:
    """Outcome of the structural checks backing the feedback design.

    ``a3_bound_samples`` holds pairs ``(N, tail_mass * |B_NxN^{-1}|^2)``; the
    fitted ``(eta, beta)`` describe the growth of that quantity against
    ``lambda_{N+1}`` over the sampled range.  The fit is a diagnostic only:
    synthesis uses the measured value at its own N.
    """

    a1_ok: bool
    a2_ok: bool
    a3_invertible: bool
    a3_bound_samples: tuple
    eta: float
    beta: float

    @property
    def all_ok(self) -> bool:
        return self.a1_ok and self.a2_ok and self.a3_invertible


def _lipschitz_spot_check(plant: PlantSpec, n_pairs: int = 200) -> bool:
    """Sample random argument pairs and test the declared f1 constant."""
    nl = plant.nonlinearity
    rng = np.random.default_rng(20240)   # fixed seed: validate() stays pure
    za = rng.uniform(-3, 3, size=(n_pairs, 3))
    zb = rng.uniform(-3, 3, size=(n_pairs, 3))
    fa = nl.f1(za[:, 0], za[:, 1], za[:, 2])
    fb = nl.f1(zb[:, 0], zb[:, 1], zb[:, 2])
    z0 = np.zeros(n_pairs)
    if np.max(np.abs(nl.f1(z0, z0, z0))) > 1e-12:
        return False
    gaps = np.abs(fa - fb) - nl.ell1 * np.linalg.norm(za - zb, axis=1)
    return bool(np.all(gaps <= 1e-9 * max(1.0, nl.ell1)))


def validate(plant: PlantSpec, basis: EigenBasis, n_range) -> AssumptionReport:
    """Run the assumption diagnostics over a range of actuator counts.

    For every N in ``n_range`` the N-member shape family is projected onto the
    first N modes; invertibility uses the conditioned test from the spectral
    layer, and the reported bound samples are ``tail_mass * |B^{-1}|^2``.
    ``(eta, beta)`` come from a log-log least-squares fit of those samples
    against ``lambda_{N+1}``, with beta clipped to [0, 1).
    """
    n_list = sorted(set(int(n) for n in n_range))
    if not n_list:
        raise ValueError("n_range must be nonempty")
    if max(n_list) + 1 > basis.n_max:
        raise ValueError("basis must cover max(n_range) + 1 modes")

    a1_ok = plant.q21 != 0.0 and plant.q32 != 0.0
    a2_ok = _lipschitz_spot_check(plant)

    samples = []
    invertible = True
    for N in n_list:
        shapes_N = plant.shapes.family(N, basis)
        grid = make_grid(plant.length, max(basis.n_max, N),
                         breakpoints=shapes_N.breakpoints)
        try:
            act = actuator_matrix(shapes_N, basis, grid)
        except Exception:
            invertible = False
            continue
        lhs = max(act.tail_mass, 0.0) * np.linalg.norm(act.inverse, 2) ** 2
        samples.append((N, float(lhs)))

    usable = [(N, v) for N, v in samples if v > 1e-300]
    if len(usable) >= 2:
        logs = np.log(np.array([basis.lambdas[N] for N, _ in usable]))
        vals = np.log(np.array([v for _, v in usable]))
        A = np.vstack([logs, np.ones_like(logs)]).T
        beta, log_eta = np.linalg.lstsq(A, vals, rcond=None)[0]
        eta = float(np.exp(log_eta))
        beta = float(np.clip(beta, 0.0, 1.0 - 1e-12))
    else:
        eta = max((v for _, v in samples), default=0.0) or 1e-300
        beta = 0.0

    return AssumptionReport(a1_ok, a2_ok, invertible, tuple(samples), eta, beta)
