"""Per-mode change of coordinates that equalizes the diffusion diagonal.

For each retained mode the rank-one update ``T_n = I + lambda_n * kappa * E12``
with ``kappa = (d3 - d2) / q21`` conjugates the mode matrix so that rows two
and three see the single diffusion coefficient ``d3``; the leftover first-row
mismatch is pushed into a row vector ``G_n`` that the feedback cancels through
the input channel.  All blocks here have closed forms (the update is nilpotent,
so inverses are exact), together with the high-gain scaling ``Gamma`` and the
norm data the certificate assembly needs.

Conjugating ``-lambda_n D + Q0`` by the displayed ``T_n`` forces

    G_n = (lambda_n (2 d3 - d2 - d1),  lambda_n^2 kappa (d1 - d3),  0),

which is what this module uses; the identity is asserted in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UncontrollableError
from .model import PlantSpec
from .spectral import ActuatorMatrix, EigenBasis, ModalState

__all__ = ["TransformPack", "build", "transform_state", "inverse_transform_state",
           "jbar_norm_bound"]


@dataclass(frozen=True)
class TransformPack:
    """All mode-transformation matrices for a given (N, gamma).

    Lists are indexed by mode (entry ``j`` is mode ``j + 1``); modes above N
    are untouched by the transformation.  ``M_Ng`` and ``Q_NNg`` are the
    assembled blocks entering the stability certificate; ``xi`` bounds
    ``gamma^-4 |Gbar_N|`` and ``sigma_N`` bounds every ``|T_n|``, ``|T_n^-1|``.
    """

    N: int
    gamma: float
    kappa: float
    sigma_N: float
    T: tuple
    T_inv: tuple
    Gamma: np.ndarray
    G: tuple
    J: tuple
    Jbar: tuple
    Gbar_N: np.ndarray      # N x 3N, block rows G_j @ Gamma
    GN: np.ndarray          # N x 3N, block rows G_j
    M_Ng: np.ndarray        # 3N x 3N block diagonal
    Q_NNg: np.ndarray       # N x 3N
    xi: float
    lambdas: np.ndarray     # first N eigenvalues
    B_inv: np.ndarray       # inverse actuator matrix (audit)

    @property
    def Gamma_inv(self) -> np.ndarray:
        g = self.gamma
        return np.diag([g ** -3, g ** -2, g ** -1])


def _e12(value: float) -> np.ndarray:
    E = np.eye(3)
    E[0, 1] = value
    return E


def build(plant: PlantSpec, basis: EigenBasis, actuators: ActuatorMatrix,
          K0: np.ndarray, N: int, gamma: float) -> TransformPack:
    """Assemble the transformation pack for ``N`` modes at high gain ``gamma``.

    Requires ``q21 != 0`` (the coordinate change divides by it) and
    ``gamma >= 1``.  ``K0`` is the 1x3 reduced design gain; it enters only the
    assembled spillover block ``Q_NNg``.
    """
    if plant.q21 == 0.0:
        raise UncontrollableError("q21 = 0: chain coupling assumption violated")
    if gamma < 1.0:
        raise ValueError("gamma must be >= 1")
    if N > basis.n_max:
        raise ValueError("N exceeds basis.n_max")
    if actuators.N != N:
        raise ValueError("actuator matrix size differs from N")
    K0 = np.asarray(K0, dtype=float).reshape(1, 3)

    d1, d2, d3 = plant.D
    lam = basis.lambdas[:N]
    kappa = (d3 - d2) / plant.q21
    sigma_N = 1.0 + abs(kappa) * lam[-1]
    Gamma = np.diag([gamma ** 3, gamma ** 2, gamma])
    Gamma_inv = np.diag([gamma ** -3, gamma ** -2, gamma ** -1])

    g1 = 2.0 * d3 - d2 - d1
    kg = kappa * (d1 - d3)
    T, T_inv, G, J, Jbar = [], [], [], [], []
    for ln in lam:
        T.append(_e12(ln * kappa))
        T_inv.append(_e12(-ln * kappa))
        G.append(np.array([[ln * g1, ln ** 2 * kg, 0.0]]))
        Jn = T[-1] @ plant.Q1 @ T_inv[-1]
        J.append(Jn)
        Jbar.append(Gamma_inv @ Jn @ Gamma)

    GN = np.zeros((N, 3 * N))
    Gbar = np.zeros((N, 3 * N))
    M = np.zeros((3 * N, 3 * N))
    for j in range(N):
        GN[j, 3 * j:3 * j + 3] = G[j][0]
        Gbar[j, 3 * j:3 * j + 3] = (G[j] @ Gamma)[0]
        M[3 * j:3 * j + 3, 3 * j:3 * j + 3] = Gamma @ T_inv[j].T @ T_inv[j] @ Gamma

    Q_NNg = actuators.inverse @ (-(gamma ** -4) * Gbar + np.kron(np.eye(N), K0))
    # exact max_j gamma^-4 |G_j Gamma|; both components grow with lambda_j
    xi = float(np.hypot(lam[-1] * abs(g1) / gamma, (lam[-1] / gamma) ** 2 * abs(kg)))

    return TransformPack(
        N=N, gamma=float(gamma), kappa=float(kappa), sigma_N=float(sigma_N),
        T=tuple(T), T_inv=tuple(T_inv), Gamma=Gamma, G=tuple(G), J=tuple(J),
        Jbar=tuple(Jbar), Gbar_N=Gbar, GN=GN, M_Ng=M, Q_NNg=Q_NNg, xi=xi,
        lambdas=lam.copy(), B_inv=actuators.inverse.copy())


def transform_state(pack: TransformPack, z_modal: ModalState) -> ModalState:
    """Map physical modes to target coordinates: y_n = T_n z_n for n <= N."""
    if z_modal.M_modes < pack.N:
        raise ValueError("state carries fewer modes than the pack")
    y = z_modal.coeffs.copy()
    for j in range(pack.N):
        y[j] = pack.T[j] @ y[j]
    return ModalState(y)


def inverse_transform_state(pack: TransformPack, y_modal: ModalState) -> ModalState:
    """Exact inverse of :func:`transform_state` (closed-form T_n^{-1})."""
    if y_modal.M_modes < pack.N:
        raise ValueError("state carries fewer modes than the pack")
    z = y_modal.coeffs.copy()
    for j in range(pack.N):
        z[j] = pack.T_inv[j] @ z[j]
    return ModalState(z)


def jbar_norm_bound(pack: TransformPack) -> float:
    """max_n |Jbar_n| in spectral norm; 0 when Q1 = 0."""
    if not pack.Jbar:
        return 0.0
    return float(max(np.linalg.norm(Jn, 2) for Jn in pack.Jbar))
