"""Certificate synthesis: reduced gain design, LMI assembly, feasibility search.

The closed loop is certified by two matrix inequalities in the unknowns
``(P, alpha0, alpha1)`` with ``P`` a 3x3 positive matrix:

* a ``6N x 6N`` block inequality coupling the transformed finite modes with
  the nonlinear forcing (negative definite), and
* a ``9 x 9`` tail inequality handling every mode above N via monotonicity in
  the eigenvalues (negative definite).

Both are affine in the unknowns and are handed to an abstract semidefinite
feasibility oracle; every feasibility claim is re-verified by eigenvalue
computation on the assembled matrices.  The tail inequality includes the
``+delta I`` shift of the decay-rate definition.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .errors import UncontrollableError
from .model import PlantSpec, validate
from .sdp import (AffineMatrixBlock, CvxpySdpOracle, FeasibilityProblem,
                  FeasibilityResult, block_margin, FEASIBLE, INFEASIBLE,
                  UNDECIDED)
from .spectral import ActuatorMatrix, EigenBasis, actuator_matrix, make_grid
from .transform import TransformPack, build as build_pack

__all__ = [
    "SynthesisConfig", "Certificate", "Remark6Estimate", "LmiSystem",
    "design_K0", "assemble_lmis", "solve_feasibility", "grid_search",
    "remark6_estimate", "comparison_constants", "certificate_report",
    "target_closed_loop_matrix", "GridSearchLog",
]

B_COL = np.array([[1.0], [0.0], [0.0]])

# index order of the scalar unknowns
VARIABLES = ("p11", "p12", "p13", "p22", "p23", "p33", "alpha0", "alpha1")
_P_BASIS_INDEX = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


def _p_basis():
    out = []
    for i, j in _P_BASIS_INDEX:
        E = np.zeros((3, 3))
        E[i, j] = 1.0
        E[j, i] = 1.0
        out.append(E)
    return out


def p_from_vars(x: np.ndarray) -> np.ndarray:
    """Recover the symmetric P matrix from the scalar unknown vector."""
    p = np.asarray(x, dtype=float)
    return np.array([[p[0], p[1], p[2]],
                     [p[1], p[3], p[4]],
                     [p[2], p[4], p[5]]])


@dataclass(frozen=True)
class SynthesisConfig:
    """Tuning knobs of the certificate search."""

    delta: float = 1.0
    N: int = 5
    gamma_grid: tuple = (5.0, 10.0, 25.0, 50.0, 100.0)
    rho_grid: tuple = (1e-3, 1e-4, 1e-5, 1e-6, 1e-7)
    K0_poles: tuple = (-1.0, -2.0, -3.0)
    K0: tuple | None = None          # explicit gain overrides pole placement
    eps_margin: float = 1e-7
    solver_tol: float = 1e-8
    policy: str = "min_gamma"        # or "max_l1"

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("decay rate delta must be positive")
        if not self.gamma_grid or not self.rho_grid:
            raise ValueError("search grids must be nonempty")
        if any(g < 1.0 for g in self.gamma_grid):
            raise ValueError("gamma grid entries must be >= 1")
        if any(r <= 0 for r in self.rho_grid):
            raise ValueError("rho grid entries must be positive")
        if self.policy not in ("min_gamma", "max_l1"):
            raise ValueError("policy must be 'min_gamma' or 'max_l1'")

    def gain(self, plant: PlantSpec) -> np.ndarray:
        if self.K0 is not None:
            return np.asarray(self.K0, dtype=float).reshape(1, 3)
        return design_K0(plant.Q0, self.K0_poles)


@dataclass(frozen=True)
class Certificate:
    """Feasibility certificate for one (N, gamma, rho) point."""

    P: np.ndarray
    alpha0: float
    alpha1: float
    gamma: float
    rho: float
    N: int
    delta: float
    K0: np.ndarray
    margins: dict
    feasible: bool
    status: str = UNDECIDED
    ell1: float = 0.0

    def min_margin(self) -> float:
        keys = ("phi", "tail")
        return min(max(self.margins.get(k + "_raw", -np.inf),
                       self.margins.get(k + "_scaled", -np.inf)) for k in keys)


# ---------------------------------------------------------------------------
# reduced gain design
# ---------------------------------------------------------------------------

def design_K0(Q0: np.ndarray, poles) -> np.ndarray:
    """Place the eigenvalues of ``Q0 + B K0`` via Ackermann's formula.

    The chain structure makes the controllability matrix of ``(Q0, e1)``
    triangular, so placement is exact; the returned gain is re-checked to be
    Hurwitz by eigenvalue computation.
    """
    Q0 = np.asarray(Q0, dtype=float)
    q21, q32 = Q0[1, 0], Q0[2, 1]
    if q21 == 0.0 or q32 == 0.0:
        raise UncontrollableError("(Q0, B) uncontrollable: q21 * q32 = 0")
    poles = np.asarray(poles, dtype=complex)
    if poles.shape != (3,):
        raise ValueError("need exactly three poles")
    if np.any(poles.real >= 0):
        raise ValueError("poles must have negative real parts")
    if not np.allclose(np.sort_complex(poles), np.sort_complex(poles.conj())):
        raise ValueError("pole set must be closed under conjugation")

    coeffs = np.real(np.poly(poles))            # s^3 + c1 s^2 + c2 s + c3
    phiA = coeffs[0] * np.linalg.matrix_power(Q0, 3) \
        + coeffs[1] * np.linalg.matrix_power(Q0, 2) \
        + coeffs[2] * Q0 + coeffs[3] * np.eye(3)
    ctrb = np.column_stack([B_COL[:, 0], Q0 @ B_COL[:, 0],
                            Q0 @ Q0 @ B_COL[:, 0]])
    K0 = -np.linalg.solve(ctrb.T, np.array([0.0, 0.0, 1.0])) @ phiA
    K0 = K0.reshape(1, 3)
    eigs = np.linalg.eigvals(Q0 + B_COL @ K0)
    if np.any(eigs.real >= 0):
        raise UncontrollableError("placement produced a non-Hurwitz matrix")
    return K0


def target_closed_loop_matrix(plant: PlantSpec, pack: TransformPack,
                              K0: np.ndarray) -> np.ndarray:
    """Finite closed-loop matrix in scaled target coordinates (3N x 3N)."""
    N, g = pack.N, pack.gamma
    d3 = plant.D[2]
    A0 = plant.Q0 + B_COL @ np.asarray(K0, float).reshape(1, 3)
    A = -d3 * np.kron(np.diag(pack.lambdas), np.eye(3)) \
        + g * np.kron(np.eye(N), A0)
    for j in range(N):
        A[3 * j:3 * j + 3, 3 * j:3 * j + 3] += pack.Jbar[j]
    return A


# ---------------------------------------------------------------------------
# LMI assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LmiSystem:
    """Affine certificate inequalities for one (N, gamma, rho) point.

    ``phi`` and ``tail`` are the mathematical blocks; ``phi_balanced`` is the
    exact congruence of ``phi`` by diag(I, gamma^3 I) handed to solvers (same
    feasible set, far better numerical range).
    """

    variables: tuple
    phi: AffineMatrixBlock
    phi_balanced: AffineMatrixBlock
    tail: AffineMatrixBlock
    positivity: tuple
    N: int
    gamma: float
    rho: float
    ell1: float
    delta: float
    K0: np.ndarray

    def problem(self, epsilon: float) -> FeasibilityProblem:
        blocks = (self.phi_balanced, self.tail) + self.positivity
        return FeasibilityProblem(self.variables, blocks, epsilon)

    def verification_margins(self, x: np.ndarray) -> dict:
        out = {}
        for blk, name in ((self.phi, "phi"), (self.tail, "tail")):
            raw, scaled = block_margin(blk, x)
            out[name + "_raw"] = raw
            out[name + "_scaled"] = scaled
        return out


def assemble_lmis(plant: PlantSpec, basis: EigenBasis, actuators: ActuatorMatrix,
                  pack: TransformPack, cfg: SynthesisConfig, gamma: float,
                  rho: float) -> LmiSystem:
    """Build both certificate inequalities as affine matrix maps.

    The finite-part block couples the scaled modes with the nonlinear forcing
    through the off-diagonal ``gamma^-3 Pbar``; the tail block is the Schur
    linearization of the per-mode tail inequality at mode N + 1 and includes
    the decay shift ``delta I``.
    """
    if pack.gamma != gamma:
        raise ValueError(f"pack built for gamma={pack.gamma}, asked for {gamma}")
    if pack.N != cfg.N or actuators.N != cfg.N:
        raise ValueError("N mismatch between pack, actuators, and config")
    N = cfg.N
    delta = cfg.delta
    ell1 = plant.nonlinearity.ell1
    K0 = cfg.gain(plant)
    d3 = plant.D[2]
    lam = pack.lambdas
    lam_next = basis.lambdas[N]
    tm = max(actuators.tail_mass, 0.0)
    A0 = plant.Q0 + B_COL @ K0 + (delta / gamma) * np.eye(3)
    IN = np.eye(N)
    QtQ = pack.Q_NNg.T @ pack.Q_NNg
    dim = 6 * N
    nv = len(VARIABLES)

    phi_coeffs = np.zeros((nv, dim, dim))
    for k, E in enumerate(_p_basis()):
        top = -d3 * np.kron(np.diag(lam), E) \
            + gamma * np.kron(IN, 0.5 * (E @ A0 + A0.T @ E))
        for j in range(N):
            SJ = 0.5 * (E @ pack.Jbar[j] + pack.Jbar[j].T @ E)
            top[3 * j:3 * j + 3, 3 * j:3 * j + 3] += SJ
        blk = np.zeros((dim, dim))
        blk[:3 * N, :3 * N] = top
        blk[:3 * N, 3 * N:] = gamma ** -3 * np.kron(IN, E)
        blk[3 * N:, :3 * N] = blk[:3 * N, 3 * N:].T
        phi_coeffs[k] = blk

    a0_blk = np.zeros((dim, dim))
    a0_blk[:3 * N, :3 * N] = (rho * ell1 / 2.0) * pack.M_Ng
    a0_blk[3 * N:, 3 * N:] = -(rho / 2.0) * np.eye(3 * N)
    phi_coeffs[6] = a0_blk
    a1_blk = np.zeros((dim, dim))
    a1_blk[:3 * N, :3 * N] = (rho * gamma ** 8 / 2.0) * tm * QtQ
    phi_coeffs[7] = a1_blk
    phi = AffineMatrixBlock("phi", np.zeros((dim, dim)), phi_coeffs, "nsd")

    # exact congruence by diag(I, gamma^3 I)
    scale = np.concatenate([np.ones(3 * N), np.full(3 * N, gamma ** 3)])
    S = np.outer(scale, scale)
    phi_bal = AffineMatrixBlock("phi", phi.constant * S, phi.coeffs * S, "nsd")

    I3, Z3 = np.eye(3), np.zeros((3, 3))
    SymQ = 0.5 * (plant.Q + plant.Q.T)
    tail_const = np.block([
        [-lam_next * plant.D_matrix() + SymQ + delta * I3, I3, I3],
        [I3, Z3, Z3],
        [I3, Z3, Z3]])
    tail_coeffs = np.zeros((nv, 9, 9))
    tail_coeffs[6] = np.block([[(ell1 / 2.0) * I3, Z3, Z3],
                               [Z3, -2.0 * I3, Z3],
                               [Z3, Z3, Z3]])
    tail_coeffs[7] = np.block([[Z3, Z3, Z3], [Z3, Z3, Z3], [Z3, Z3, -2.0 * I3]])
    tail = AffineMatrixBlock("tail", tail_const, tail_coeffs, "nsd")

    # positivity: P >= eps I, alpha_i >= eps, and the corner scale alpha0*rho/2
    P_coeffs = np.zeros((nv, 3, 3))
    for k, E in enumerate(_p_basis()):
        P_coeffs[k] = E
    p_block = AffineMatrixBlock("P", np.zeros((3, 3)), P_coeffs, "psd")

    def scalar_block(name, index, factor):
        c = np.zeros((nv, 1, 1))
        c[index, 0, 0] = factor
        return AffineMatrixBlock(name, np.zeros((1, 1)), c, "psd")

    positivity = (p_block,
                  scalar_block("alpha0", 6, 1.0),
                  scalar_block("alpha1", 7, 1.0),
                  scalar_block("corner", 6, rho / 2.0))

    return LmiSystem(VARIABLES, phi, phi_bal, tail, positivity,
                     N, float(gamma), float(rho), float(ell1), float(delta),
                     K0)


# ---------------------------------------------------------------------------
# feasibility
# ---------------------------------------------------------------------------

def _certificate_from_point(lmis: LmiSystem, x: np.ndarray, status: str,
                            eps: float) -> Certificate:
    margins = lmis.verification_margins(x)
    P = p_from_vars(x)
    a0, a1 = float(x[6]), float(x[7])
    p_min = float(np.linalg.eigvalsh(P).min())
    margins["p_min"] = p_min
    feasible = (status == FEASIBLE
                and max(margins["phi_raw"], margins["phi_scaled"]) >= eps
                and max(margins["tail_raw"], margins["tail_scaled"]) >= eps
                and p_min >= eps and a0 >= eps and a1 >= eps)
    return Certificate(P, a0, a1, lmis.gamma, lmis.rho, lmis.N, lmis.delta,
                       lmis.K0.copy(), margins, feasible,
                       status=FEASIBLE if feasible else status,
                       ell1=lmis.ell1)


def solve_feasibility(lmis: LmiSystem, cfg: SynthesisConfig,
                      oracle=None) -> Certificate:
    """Run the oracle on one assembled system and re-verify its answer.

    The oracle's status is never trusted on its own: the certificate is
    marked feasible only when an eigenvalue check of the assembled blocks at
    the returned point clears ``cfg.eps_margin``.
    """
    oracle = oracle or CvxpySdpOracle()
    result = oracle.solve(lmis.problem(cfg.eps_margin))
    if result.x is None:
        empty = Certificate(np.full((3, 3), np.nan), np.nan, np.nan, lmis.gamma,
                            lmis.rho, lmis.N, lmis.delta, lmis.K0.copy(),
                            {"phi_raw": -np.inf, "phi_scaled": -np.inf,
                             "tail_raw": -np.inf, "tail_scaled": -np.inf},
                            False, status=result.status, ell1=lmis.ell1)
        return empty
    return _certificate_from_point(lmis, result.x, result.status, cfg.eps_margin)


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

@dataclass
class GridSearchLog:
    """One record per attempted cell, in lexicographic (gamma, rho) order."""

    records: list = field(default_factory=list)

    def add(self, gamma, rho, cert: Certificate):
        self.records.append({
            "gamma": gamma, "rho": rho, "status": cert.status,
            "feasible": cert.feasible, "min_margin": cert.min_margin(),
        })

    def best_margin(self) -> float:
        if not self.records:
            return -np.inf
        return max(r["min_margin"] for r in self.records)

    def any_undecided(self) -> bool:
        return any(r["status"] == UNDECIDED for r in self.records)


def _thread_count() -> int:
    raw = os.environ.get("PARASTAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _search_cells(plant, basis, actuators, cfg, oracle):
    """Evaluate grid cells; returns (first_feasible, best_cert, log)."""
    K0 = cfg.gain(plant)
    cells = [(g, r) for g in sorted(cfg.gamma_grid) for r in sorted(cfg.rho_grid)]

    def run_cell(cell):
        g, r = cell
        pack = build_pack(plant, basis, actuators, K0, cfg.N, g)
        lmis = assemble_lmis(plant, basis, actuators, pack, cfg, g, r)
        return solve_feasibility(lmis, cfg, oracle)

    log = GridSearchLog()
    threads = _thread_count()
    first, best = None, None
    if threads == 1:
        for cell in cells:
            cert = run_cell(cell)
            log.add(cell[0], cell[1], cert)
            if best is None or cert.min_margin() > best.min_margin():
                best = cert
            if cert.feasible:
                first = cert
                break
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            certs = list(ex.map(run_cell, cells))
        for cell, cert in zip(cells, certs):
            log.add(cell[0], cell[1], cert)
            if best is None or cert.min_margin() > best.min_margin():
                best = cert
            if cert.feasible and first is None:
                first = cert
    return first, best, log


def grid_search(plant: PlantSpec, basis: EigenBasis, actuators: ActuatorMatrix,
                cfg: SynthesisConfig, oracle=None):
    """Search the (gamma, rho) grids for a verified certificate.

    Policy ``min_gamma`` returns the first feasible cell in ascending
    lexicographic order; ``max_l1`` bisects the Lipschitz constant, running
    the full grid at each trial value, and returns the certificate sustaining
    the largest one.  Returns ``(certificate_or_None, log)``; the log records
    every attempt.
    """
    oracle = oracle or CvxpySdpOracle()
    if cfg.policy == "min_gamma":
        first, best, log = _search_cells(plant, basis, actuators, cfg, oracle)
        return (first if first is not None else best), log

    # max_l1: bisection on the Lipschitz constant
    log = GridSearchLog()
    lo, hi = 0.0, max(plant.nonlinearity.ell1, 1.0)
    best_cert = None
    first, _, sub = _search_cells(plant.with_l1(hi), basis, actuators, cfg, oracle)
    log.records.extend(sub.records)
    if first is not None and first.feasible:
        return first, log
    for _ in range(12):
        mid = 0.5 * (lo + hi)
        first, _, sub = _search_cells(plant.with_l1(mid), basis, actuators, cfg,
                                      oracle)
        log.records.extend(sub.records)
        if first is not None and first.feasible:
            best_cert, lo = first, mid
        else:
            hi = mid
        if hi - lo <= 1e-2 * max(hi, 1.0):
            break
    return best_cert, log


# ---------------------------------------------------------------------------
# constructive estimates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Remark6Estimate:
    """Conservative actuator-count and gain estimates from the closed-form
    feasibility argument (no SDP involved)."""

    beta1: float
    n_star: int | None
    gamma0: float | None
    s_margin: float
    deficit: float
    eta: float
    beta: float


def _tail_inequality_matrix(plant, lam_next, ell1, beta1):
    half = 0.5 * (lam_next ** -beta1 + (ell1 + 1.0) * lam_next ** beta1)
    SymQ = 0.5 * (plant.Q + plant.Q.T)
    return -lam_next * plant.D_matrix() + SymQ + half * np.eye(3)


def remark6_estimate(plant: PlantSpec, basis: EigenBasis, cfg: SynthesisConfig,
                     beta1: float, report=None) -> Remark6Estimate:
    """Estimate how many actuators and how much gain the closed-form
    sufficient conditions demand.

    ``N*`` is the smallest N for which the tail inequality holds with
    ``alpha0 = 1/alpha1 = lambda_{N+1}^{beta1}``; the S-matrix margin uses the
    normalized Lyapunov solution ``Sym(P (Q0 + B K0)) = -I``; ``gamma0`` is
    the smallest grid gamma closing the remaining gain condition at N*.
    """
    if report is None:
        n_hi = min(basis.n_max - 1, 12)
        report = validate(plant, basis, range(2, n_hi + 1))
    eta, beta = report.eta, report.beta
    if not 0.0 < beta1 < 1.0:
        raise ValueError("beta1 must lie in (0, 1)")
    if beta1 <= beta:
        # the argument behind the estimate needs beta1 above the measured
        # growth exponent; outside that regime the numbers are still
        # computable but only indicative
        warnings.warn(f"beta1 = {beta1:.3g} does not exceed the fitted "
                      f"beta = {beta:.3g}; estimate is indicative only",
                      stacklevel=2)

    ell1 = plant.nonlinearity.ell1
    n_star, deficit = None, np.inf
    for N in range(1, basis.n_max):
        W = _tail_inequality_matrix(plant, basis.lambdas[N], ell1, beta1)
        top = float(np.linalg.eigvalsh(W).max())
        deficit = min(deficit, top)
        if top < 0:
            n_star = N
            break
    K0 = cfg.gain(plant)
    A = plant.Q0 + B_COL @ K0
    # Sym(P A) = -I  <=>  A^T P + P A = -2 I
    P = solve_continuous_lyapunov(A.T, -2.0 * np.eye(3))
    P = 0.5 * (P + P.T)

    if n_star is None:
        return Remark6Estimate(beta1, None, None, -np.inf, deficit, eta, beta)

    lam_next = basis.lambdas[n_star]
    K0_norm = float(np.linalg.norm(K0, 2))
    S = (-1.0 + eta * K0_norm ** 2 / lam_next ** (beta1 - beta)) * np.eye(3) \
        + (2.0 / lam_next ** beta1) * (P @ P.T)
    s_margin = -float(np.linalg.eigvalsh(S).max())

    gamma0 = None
    shapes_N = plant.shapes.family(n_star, basis)
    grid = make_grid(plant.length, basis.n_max, shapes_N.breakpoints)
    act = actuator_matrix(shapes_N, basis, grid)
    for g in sorted(cfg.gamma_grid):
        pack = build_pack(plant, basis, act, K0, n_star, g)
        extra = (eta * pack.xi ** 2 / lam_next ** (beta1 - beta)
                 + lam_next ** beta1 * ell1 * pack.sigma_N ** 2 / (2 * g * g))
        worst = -np.inf
        for j in range(n_star):
            Mj = S + extra * np.eye(3) + (cfg.delta / g) * P \
                + (1.0 / g) * 0.5 * (P @ pack.Jbar[j] + pack.Jbar[j].T @ P)
            worst = max(worst, float(np.linalg.eigvalsh(Mj).max()))
        if worst < 0:
            gamma0 = float(g)
            break
    return Remark6Estimate(beta1, n_star, gamma0, s_margin, deficit, eta, beta)


def comparison_constants(cert: Certificate, pack: TransformPack):
    """Lyapunov sandwich constants and the induced overshoot bound.

    Returns ``(c_lower, c_upper, M)`` with ``M = sqrt(c_upper / c_lower)``
    bounding the transient amplification of the closed loop.
    """
    if not cert.feasible:
        raise ValueError("comparison constants need a feasible certificate")
    eigs = np.linalg.eigvalsh(cert.P)
    g, rho, sN = cert.gamma, cert.rho, pack.sigma_N
    c_up = max(eigs[-1] / (2 * g ** 2), rho / 2.0) * sN ** 2
    c_lo = min(eigs[0] / (2 * g ** 6), rho / 2.0) / sN ** 2
    return float(c_lo), float(c_up), float(np.sqrt(c_up / c_lo))


def certificate_report(cert: Certificate) -> str:
    """Human-readable text serialization of a certificate."""
    lines = [
        "certificate",
        f"  status    : {cert.status}",
        f"  feasible  : {cert.feasible}",
        f"  N         : {cert.N}",
        f"  gamma     : {cert.gamma:.17g}",
        f"  rho       : {cert.rho:.17g}",
        f"  delta     : {cert.delta:.17g}",
        f"  ell1      : {cert.ell1:.17g}",
        f"  K0        : [{', '.join(f'{v:.17g}' for v in cert.K0.ravel())}]",
        f"  alpha0    : {cert.alpha0:.17g}",
        f"  alpha1    : {cert.alpha1:.17g}",
        "  P         :",
    ]
    for row in cert.P:
        lines.append("    [" + ", ".join(f"{v:.17g}" for v in row) + "]")
    lines.append("  margins   :")
    for k in sorted(cert.margins):
        lines.append(f"    {k:12s} {cert.margins[k]:.6e}")
    return "\n".join(lines) + "\n"
