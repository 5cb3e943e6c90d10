"""Abstract semidefinite feasibility oracle and its cvxpy implementation.

A feasibility problem is a list of scalar unknowns plus symmetric matrix
blocks, each affine in the unknowns, each tagged with a cone: ``nsd`` blocks
must satisfy ``A(x) <= -eps * I`` and ``psd`` blocks ``A(x) >= eps * I``.
The oracle returns feasible / infeasible / undecided together with a point.

Feasibility claims are never taken from solver statuses: a point counts as
feasible only after an eigenvalue re-check on the assembled blocks.  Because
the certificate matrices mix scales (entries spanning many orders of
magnitude), the re-check also accepts a congruence-scaled test with
row factors capped at one; ``S <= I`` and ``S A S <= -eps I`` together imply
``A <= -eps I``, so the scaled test is a sound sufficient condition that a
float eigensolver can actually resolve.
"""

from __future__ import annotations

import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AffineMatrixBlock", "FeasibilityProblem", "FeasibilityResult",
    "SemidefiniteFeasibilityOracle", "CvxpySdpOracle", "verify_point",
    "block_margin",
]

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
UNDECIDED = "undecided"


@dataclass(frozen=True)
class AffineMatrixBlock:
    """Symmetric matrix map A(x) = constant + sum_i x_i coeffs[i].

    ``cone`` is ``"nsd"`` (A(x) must be <= -eps I) or ``"psd"`` (>= eps I).
    """

    name: str
    constant: np.ndarray
    coeffs: np.ndarray          # (n_vars, dim, dim)
    cone: str = "nsd"

    def __post_init__(self):
        C = np.asarray(self.constant, dtype=float)
        A = np.asarray(self.coeffs, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ValueError("constant must be square")
        if A.ndim != 3 or A.shape[1:] != C.shape:
            raise ValueError("coeffs must be (n_vars, dim, dim)")
        if self.cone not in ("nsd", "psd"):
            raise ValueError("cone must be 'nsd' or 'psd'")
        object.__setattr__(self, "constant", 0.5 * (C + C.T))
        object.__setattr__(self, "coeffs", 0.5 * (A + np.transpose(A, (0, 2, 1))))

    @property
    def dim(self) -> int:
        return self.constant.shape[0]

    @property
    def n_vars(self) -> int:
        return self.coeffs.shape[0]

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return self.constant + np.tensordot(np.asarray(x, float), self.coeffs, axes=(0, 0))

    def to_payload(self) -> dict:
        """Dense lower-triangle serialization (row-major, diagonal included)."""
        idx = np.tril_indices(self.dim)
        return {
            "name": self.name,
            "dim": self.dim,
            "cone": self.cone,
            "constant_tril": self.constant[idx].tolist(),
            "coeffs_tril": [c[idx].tolist() for c in self.coeffs],
        }

    @staticmethod
    def from_payload(payload: dict) -> "AffineMatrixBlock":
        dim = int(payload["dim"])
        idx = np.tril_indices(dim)

        def unpack(flat):
            M = np.zeros((dim, dim))
            M[idx] = flat
            M = M + M.T - np.diag(np.diag(M))
            return M

        coeffs = np.array([unpack(c) for c in payload["coeffs_tril"]])
        return AffineMatrixBlock(payload["name"], unpack(payload["constant_tril"]),
                                 coeffs, payload["cone"])


@dataclass(frozen=True)
class FeasibilityProblem:
    variables: tuple
    blocks: tuple
    epsilon: float = 1e-7

    def __post_init__(self):
        nv = len(self.variables)
        for b in self.blocks:
            if b.n_vars != nv:
                raise ValueError(f"block {b.name} has {b.n_vars} coeffs, expected {nv}")


@dataclass(frozen=True)
class FeasibilityResult:
    status: str
    x: np.ndarray | None
    margins: dict = field(default_factory=dict)          # raw eigenvalue margins
    scaled_margins: dict = field(default_factory=dict)   # congruence-checked margins
    solver: str = ""
    dual_bound: float | None = None

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


def block_margin(block: AffineMatrixBlock, x: np.ndarray) -> tuple[float, float]:
    """(raw, scaled) feasibility margins of one block at a point.

    Margins are distances past the cone boundary: positive means strictly
    inside.  The scaled margin uses the capped congruence S = min(1,
    1/sqrt(|diag|)) and is a sound lower-bound certificate in its own right.
    """
    A = block.evaluate(x)
    if block.cone == "psd":
        A = -A
    A = 0.5 * (A + A.T)
    try:
        raw = -float(np.linalg.eigvalsh(A).max())
    except np.linalg.LinAlgError:
        raw = -np.inf
    dg = np.abs(np.diag(A))
    s = np.minimum(1.0, 1.0 / np.sqrt(np.maximum(dg, 1e-300)))
    As = s[:, None] * A * s[None, :]
    try:
        scaled = -float(np.linalg.eigvalsh(As).max())
    except np.linalg.LinAlgError:
        scaled = -np.inf
    return raw, scaled


def verify_point(problem: FeasibilityProblem, x: np.ndarray):
    """Eigenvalue re-verification of a candidate point.

    Returns ``(ok, margins_raw, margins_scaled)``; a block passes if either
    its raw or its capped-congruence margin clears ``problem.epsilon`` (both
    checks are sufficient conditions, so accepting either is sound).
    """
    ok = True
    raw, scaled = {}, {}
    for b in problem.blocks:
        r, s = block_margin(b, x)
        raw[b.name] = r
        scaled[b.name] = s
        if max(r, s) < problem.epsilon:
            ok = False
    return ok, raw, scaled


class SemidefiniteFeasibilityOracle(ABC):
    """Contract: return a strictly feasible point, or a certified-infeasible
    status, or undecided.  Implementations must not report feasible without a
    point that passes :func:`verify_point`."""

    @abstractmethod
    def solve(self, problem: FeasibilityProblem) -> FeasibilityResult:
        ...


def _equilibrate(mag: np.ndarray, iters: int = 4) -> np.ndarray:
    """Diagonal congruence factors flattening the row scales of ``mag``."""
    s = np.ones(mag.shape[0])
    for _ in range(iters):
        r = np.sqrt((s[:, None] * mag * s[None, :]).max(axis=1))
        r[r <= 0] = 1.0
        s /= np.sqrt(r)
    return s


class CvxpySdpOracle(SemidefiniteFeasibilityOracle):
    """cvxpy-backed oracle with internal scaling and a solver ladder.

    Scaling: each unknown is rescaled so its largest coefficient entry is one,
    and each block is pre/post multiplied by an equilibration diagonal (an
    exact congruence, so the feasible set is unchanged).  The solve maximizes
    the scaled uniform margin; the returned point is always re-verified on the
    original blocks before a feasible status is issued.
    """

    def __init__(self, solvers=("CLARABEL", "SCS"), var_bound: float = 1e12,
                 margin_cap: float = 1e3, solver_options: dict | None = None):
        self.solvers = tuple(solvers)
        self.var_bound = float(var_bound)
        self.margin_cap = float(margin_cap)
        self.solver_options = dict(solver_options or {})

    # -- internal -----------------------------------------------------------
    def _scaled_problem(self, problem: FeasibilityProblem):
        nv = len(problem.variables)
        sig = np.ones(nv)
        for i in range(nv):
            m = max(np.abs(b.coeffs[i]).max() for b in problem.blocks)
            if m > 0:
                sig[i] = m
        scaled = []
        for b in problem.blocks:
            mag = np.abs(b.constant) + sum(
                np.abs(b.coeffs[i]) / sig[i] for i in range(nv))
            s = _equilibrate(mag)
            S = np.outer(s, s)
            scaled.append((b, s, b.constant * S,
                           np.array([b.coeffs[i] / sig[i] * S for i in range(nv)])))
        return sig, scaled

    def _attempt(self, problem, sig, scaled, solver, fixed_margin):
        import cvxpy as cp

        nv = len(problem.variables)
        x = cp.Variable(nv)
        cons = [cp.abs(x) <= self.var_bound]
        if fixed_margin is None:
            s = cp.Variable()
            cons += [s >= 0, s <= self.margin_cap]
            objective = cp.Maximize(s)
        else:
            s = fixed_margin
            objective = cp.Minimize(0)
        for blk, sd, C, A in scaled:
            expr = C + sum(x[i] * A[i] for i in range(nv))
            eye = np.eye(blk.dim)
            # cone targets in scaled coordinates: eps * S^2 keeps the exact
            # correspondence with the unscaled eps * I requirement
            tgt = problem.epsilon * np.diag(sd * sd)
            if blk.cone == "nsd":
                cons.append(expr << -tgt - s * eye)
            else:
                cons.append(expr >> tgt + s * eye)
        prob = cp.Problem(objective, cons)
        opts = dict(self.solver_options)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                prob.solve(solver=solver, **opts)
        except Exception:
            return None, "solver_error"
        if x.value is None or not np.isfinite(np.asarray(x.value)).all():
            return None, prob.status or "no_point"
        return np.asarray(x.value) / sig, prob.status

    # -- API ------------------------------------------------------------------
    def solve(self, problem: FeasibilityProblem) -> FeasibilityResult:
        sig, scaled = self._scaled_problem(problem)
        saw_infeasible = False
        best = None   # (min margin, x, raw, scaled, solver)
        for solver in self.solvers:
            for fixed in (None, 0.0):
                x, status = self._attempt(problem, sig, scaled, solver, fixed)
                if status == "infeasible":
                    saw_infeasible = True
                if x is None:
                    continue
                ok, raw, scl = verify_point(problem, x)
                worst = min(max(r, s) for r, s in zip(raw.values(), scl.values()))
                if best is None or worst > best[0]:
                    best = (worst, x, raw, scl, solver)
                if ok:
                    return FeasibilityResult(FEASIBLE, x, raw, scl, solver,
                                             dual_bound=worst)
        if saw_infeasible:
            return FeasibilityResult(INFEASIBLE, best[1] if best else None,
                                     best[2] if best else {},
                                     best[3] if best else {},
                                     solver="", dual_bound=None)
        if best is not None:
            return FeasibilityResult(UNDECIDED, best[1], best[2], best[3],
                                     solver=best[4], dual_bound=best[0])
        return FeasibilityResult(UNDECIDED, None)
