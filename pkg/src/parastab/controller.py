"""Runtime state feedback acting on the physical modal state.

The design law lives in transformed coordinates; precomposing it with the
per-mode transformation once at build time leaves a single matrix so that
``u = U_map @ stack(z_1 .. z_N)`` is the entire runtime cost.  Physical
actuation applies ``u_j(t) b_j(x)`` to the first state component only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import ActuatorMatrix, ModalState
from .transform import TransformPack

__all__ = ["FeedbackGain", "build_gain", "control"]


@dataclass(frozen=True)
class FeedbackGain:
    """Precomposed feedback map with its audit components.

    ``U_map = B_NN^{-1} [-G_N + K] blockdiag(T_n)`` where
    ``K = gamma^4 (I_N x K0 Gamma^{-1})``; all factors are retained so the
    composition can be replayed externally.
    """

    N: int
    gamma: float
    K0: np.ndarray
    U_map: np.ndarray
    B_inv: np.ndarray
    GN: np.ndarray
    K_blocks: np.ndarray
    T_blockdiag: np.ndarray

    def y_space_map(self) -> np.ndarray:
        """The law as applied to transformed modes: B_NN^{-1}[-G_N + K]."""
        return self.B_inv @ (-self.GN + self.K_blocks)


def build_gain(actuators: ActuatorMatrix, pack: TransformPack,
               K0: np.ndarray) -> FeedbackGain:
    """Compose the modal feedback law into a single N x 3N matrix."""
    if actuators.N != pack.N:
        raise ValueError("actuator matrix and transform pack disagree on N")
    K0 = np.asarray(K0, dtype=float).reshape(1, 3)
    N, gamma = pack.N, pack.gamma
    K_blocks = gamma ** 4 * np.kron(np.eye(N), K0 @ pack.Gamma_inv)
    T_blockdiag = np.zeros((3 * N, 3 * N))
    for j in range(N):
        T_blockdiag[3 * j:3 * j + 3, 3 * j:3 * j + 3] = pack.T[j]
    U_map = actuators.inverse @ (-pack.GN + K_blocks) @ T_blockdiag
    if not np.isfinite(U_map).all():
        raise ValueError("gain composition produced non-finite entries")
    return FeedbackGain(N, gamma, K0, U_map, actuators.inverse.copy(),
                        pack.GN.copy(), K_blocks, T_blockdiag)


def control(gain: FeedbackGain, z_modal: ModalState) -> np.ndarray:
    """Evaluate the feedback law on a physical modal state."""
    if z_modal.M_modes < gain.N:
        raise ValueError("state carries fewer modes than the gain reads")
    zN = z_modal.coeffs[:gain.N].reshape(-1)
    return gain.U_map @ zN
