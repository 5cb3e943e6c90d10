"""Closed-loop spectral Galerkin simulation with energy and Lyapunov traces.

Each retained mode obeys a 3-vector ODE whose linear part ``-lambda_n D + Q``
is stiff for large n, so time stepping uses exponential (Lawson) splitting:
the linear flow is applied through precomputed 3x3 matrix exponentials and
the remaining forcing (nonlinearity plus feedback) is integrated with a
second-order Heun rule on the Lawson-transformed variable,

    z+ = E z + dt/2 * (E F(z) + F(E (z + dt F(z)))),   E = exp(dt L_n).

The nonlinearity is evaluated pseudo-spectrally: reconstruct on the quadrature
grid, apply f pointwise, project back.  Norms are computed from the modal
coefficients (Parseval, exact in this representation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .controller import FeedbackGain
from .errors import SimulationBlowup
from .model import PlantSpec
from .spectral import EigenBasis, ModalState, SpatialGrid, make_grid, project, \
    shape_projections
from .synthesis import Certificate
from .transform import TransformPack

__all__ = ["SimConfig", "Trajectory", "simulate", "lyapunov_trace", "fit_decay",
           "smooth_random_state", "trajectory_to_csv", "snapshot_to_csv"]

BLOWUP_GUARD = 1e8


@dataclass(frozen=True)
class SimConfig:
    """Discretization parameters for one run."""

    M_modes: int = 60
    dt: float = 1e-4
    t_end: float = 5.0
    record_stride: int = 25
    grid: SpatialGrid | None = None

    def __post_init__(self):
        if self.dt <= 0 or self.t_end <= 0:
            raise ValueError("dt and t_end must be positive")
        if self.M_modes < 1:
            raise ValueError("M_modes must be >= 1")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")


@dataclass
class Trajectory:
    """Recorded samples of one closed- or open-loop run."""

    times: np.ndarray
    coeffs: np.ndarray        # (n_samples, M_modes, 3)
    controls: np.ndarray      # (n_samples, N) or (n_samples, 0)
    norms: np.ndarray         # L2 norms of the state
    lyapunov: np.ndarray | None = None
    blowup: bool = False

    @property
    def M_modes(self) -> int:
        return self.coeffs.shape[1]

    def state_at(self, k: int) -> ModalState:
        return ModalState(self.coeffs[k])


def smooth_random_state(M_modes: int, seed: int, n_active: int = 8,
                        norm: float = 1.0) -> ModalState:
    """Seeded random initial state with 1/n^2 modal decay (smooth in x)."""
    rng = np.random.default_rng(seed)
    c = np.zeros((M_modes, 3))
    k = min(n_active, M_modes)
    c[:k] = rng.standard_normal((k, 3)) / (np.arange(1, k + 1)[:, None] ** 2)
    state = ModalState(c)
    n = state.norm()
    if n > 0:
        state = ModalState(c * (norm / n))
    return state


def _initial_state(z0, plant, basis, grid, M_modes) -> ModalState:
    if isinstance(z0, ModalState):
        if z0.M_modes == M_modes:
            return z0
        c = np.zeros((M_modes, 3))
        c[:min(M_modes, z0.M_modes)] = z0.coeffs[:M_modes]
        return ModalState(c)
    return project(z0, basis, grid, M_modes)


def simulate(plant: PlantSpec, basis: EigenBasis, gain: FeedbackGain | None,
             z0, cfg: SimConfig) -> Trajectory:
    """Integrate the coupled mode ODEs under the (optional) feedback law.

    ``z0`` may be a callable field, a sample array on the grid, or a
    ``ModalState``.  Raises :class:`SimulationBlowup` when the state norm
    exceeds the guard; the partial trajectory is attached to the exception.
    """
    M = cfg.M_modes
    if M > basis.n_max:
        raise ValueError("M_modes exceeds the basis size")
    grid = cfg.grid or make_grid(plant.length, max(M, basis.n_max),
                                 plant.shapes.breakpoints)
    z = _initial_state(z0, plant, basis, grid, M).coeffs.copy()

    lam = basis.lambdas[:M]
    Q = plant.Q
    D = plant.D_matrix()
    E = np.stack([expm((-lam[n] * D + Q) * cfg.dt) for n in range(M)])
    phi_table = basis.sample(grid.points, M)              # (nq, M)
    wphi = grid.weights[:, None] * phi_table              # projection weights
    nl = plant.nonlinearity
    has_f = (nl.ell1 > 0 or nl.ell2 > 0 or nl.ell3 > 0)

    if gain is not None:
        B_shapes = shape_projections(plant.shapes, basis, grid, M)  # (M, N)
        n_u = gain.N
    else:
        B_shapes = None
        n_u = 0

    def forcing(zc):
        F = np.zeros_like(zc)
        if has_f:
            field = phi_table @ zc                        # (nq, 3)
            F += wphi.T @ nl.evaluate(field)
        if gain is not None:
            u = gain.U_map @ zc[:gain.N].reshape(-1)
            F[:, 0] += B_shapes @ u
        else:
            u = np.zeros(0)
        return F, u

    n_steps = int(round(cfg.t_end / cfg.dt))
    n_rec = n_steps // cfg.record_stride + 1
    times = np.empty(n_rec)
    coeffs = np.empty((n_rec, M, 3))
    controls = np.empty((n_rec, n_u))
    norms = np.empty(n_rec)

    def record(idx, t, zc):
        times[idx] = t
        coeffs[idx] = zc
        _, u = forcing(zc)
        controls[idx] = u
        norms[idx] = np.sqrt((zc ** 2).sum())

    record(0, 0.0, z)
    rec = 1
    for k in range(n_steps):
        Fk, _ = forcing(z)
        Ez = np.einsum("nij,nj->ni", E, z)
        z_pred = np.einsum("nij,nj->ni", E, z + cfg.dt * Fk)
        F_pred, _ = forcing(z_pred)
        z = Ez + 0.5 * cfg.dt * (np.einsum("nij,nj->ni", E, Fk) + F_pred)
        nrm_sq = (z ** 2).sum()
        if not np.isfinite(nrm_sq) or nrm_sq > BLOWUP_GUARD ** 2:
            traj = Trajectory(times[:rec], coeffs[:rec], controls[:rec],
                              norms[:rec], blowup=True)
            err = SimulationBlowup((k + 1) * cfg.dt, float(np.sqrt(nrm_sq)))
            err.trajectory = traj
            raise err
        if (k + 1) % cfg.record_stride == 0:
            record(rec, (k + 1) * cfg.dt, z)
            rec += 1
    return Trajectory(times[:rec], coeffs[:rec], controls[:rec], norms[:rec])


def lyapunov_trace(traj: Trajectory, cert: Certificate,
                   pack: TransformPack) -> np.ndarray:
    """Evaluate the certificate functional along a recorded trajectory.

    Per sample: transform the first N modes, scale by Gamma^{-1}, take the
    P-weighted quadratic form, and add the rho-weighted tail energy.
    """
    N = pack.N
    if traj.M_modes < N:
        raise ValueError("trajectory carries fewer modes than the certificate")
    Ginv = pack.Gamma_inv
    TG = np.stack([Ginv @ pack.T[j] for j in range(N)])    # (N, 3, 3)
    zN = traj.coeffs[:, :N, :]                             # (K, N, 3)
    ybar = np.einsum("jab,kjb->kja", TG, zN)
    Pq = np.einsum("kja,ab,kjb->k", ybar, cert.P, ybar)
    tail = (traj.coeffs[:, N:, :] ** 2).sum(axis=(1, 2))
    V = 0.5 * Pq + 0.5 * cert.rho * tail
    traj.lyapunov = V
    return V


def fit_decay(traj: Trajectory, window: tuple[float, float]):
    """Least-squares decay rate of ``log ||z(t)||`` over a time window.

    Returns ``(rate, M_fit)`` where positive ``rate`` means decay and
    ``M_fit = sup_t ||z(t)|| e^{rate t} / ||z(0)||``.  Samples at or below
    the floating-point floor are dropped (fit on the truncated window).
    """
    t, n = traj.times, traj.norms
    mask = (t >= window[0]) & (t <= window[1]) & (n > 1e-280)
    if mask.sum() < 2:
        raise ValueError("window contains fewer than two usable samples")
    A = np.vstack([t[mask], np.ones(mask.sum())]).T
    slope = np.linalg.lstsq(A, np.log(n[mask]), rcond=None)[0][0]
    rate = -float(slope)
    n0 = n[0] if n[0] > 0 else 1.0
    grow = n * np.exp(np.clip(rate * t, -700, 700))
    return rate, float(grow.max() / n0)


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.17g}"


def trajectory_to_csv(traj: Trajectory, path) -> None:
    """Write t, u_1..u_N, norm_L2 (and V when attached) as lossless CSV."""
    n_u = traj.controls.shape[1]
    cols = ["t"] + [f"u_{j + 1}" for j in range(n_u)] + ["norm_L2"]
    has_v = traj.lyapunov is not None
    if has_v:
        cols.append("V")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(len(traj.times)):
            row = [_fmt(traj.times[k])]
            row += [_fmt(v) for v in traj.controls[k]]
            row.append(_fmt(traj.norms[k]))
            if has_v:
                row.append(_fmt(traj.lyapunov[k]))
            fh.write(",".join(row) + "\n")


def snapshot_to_csv(traj: Trajectory, basis: EigenBasis, grid: SpatialGrid,
                    times, path) -> None:
    """Write reconstructed field snapshots (x, z1, z2, z3 per requested time)."""
    table = basis.sample(grid.points, traj.M_modes)
    with open(path, "w") as fh:
        fh.write("t,x,z1,z2,z3\n")
        for t_req in times:
            k = int(np.argmin(np.abs(traj.times - t_req)))
            vals = table @ traj.coeffs[k]
            for x, row in zip(grid.points, vals):
                fh.write(",".join([_fmt(traj.times[k]), _fmt(x)]
                                  + [_fmt(v) for v in row]) + "\n")
