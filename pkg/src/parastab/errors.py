"""Exception types shared across the package."""


class ParastabError(Exception):
    """Base class for all library errors."""


class PlantSpecError(ParastabError):
    """A plant description violates a structural invariant."""


class EigenSolverError(ParastabError):
    """The transcendental eigenvalue search failed to bracket a root."""


class ActuatorSingularError(ParastabError):
    """The actuator projection matrix is singular or numerically unusable."""


class UncontrollableError(ParastabError):
    """The reduced pair (Q0, B) is not controllable."""


class SimulationBlowup(ParastabError):
    """The simulated trajectory exceeded the blow-up guard."""

    def __init__(self, t: float, norm: float):
        super().__init__(f"trajectory norm {norm:.3e} exceeded guard at t = {t:.6g}")
        self.t = t
        self.norm = norm
