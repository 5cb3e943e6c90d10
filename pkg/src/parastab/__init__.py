"""Synthesis and verification toolkit for underactuated systems of three
coupled semilinear reaction-diffusion equations with one actuated component.

Workflow: describe the plant (:mod:`parastab.model`), expand it in the scalar
eigenbasis (:mod:`parastab.spectral`), build the mode transformation
(:mod:`parastab.transform`), search for a stability certificate
(:mod:`parastab.synthesis`), and validate the certified decay in closed-loop
simulation (:mod:`parastab.controller`, :mod:`parastab.sim`).
"""

from .errors import (ActuatorSingularError, EigenSolverError, ParastabError,
                     PlantSpecError, SimulationBlowup, UncontrollableError)
from .model import (AssumptionReport, Nonlinearity, PlantSpec,
                    ShapeFunctionSet, make_nonlinearity, paper_example,
                    validate)
from .spectral import (ActuatorMatrix, BoundaryConditions, DIRICHLET,
                       EigenBasis, ModalState, NEUMANN, SpatialGrid,
                       actuator_matrix, eigenpairs, make_grid, project,
                       reconstruct, shape_projections)
from .transform import (TransformPack, build, inverse_transform_state,
                        jbar_norm_bound, transform_state)
from .synthesis import (Certificate, Remark6Estimate, SynthesisConfig,
                        assemble_lmis, certificate_report,
                        comparison_constants, design_K0, grid_search,
                        remark6_estimate, solve_feasibility,
                        target_closed_loop_matrix)
from .controller import FeedbackGain, build_gain, control
from .sim import (SimConfig, Trajectory, fit_decay, lyapunov_trace, simulate,
                  smooth_random_state, trajectory_to_csv, snapshot_to_csv)
from .sdp import (AffineMatrixBlock, CvxpySdpOracle, FeasibilityProblem,
                  FeasibilityResult, SemidefiniteFeasibilityOracle,
                  verify_point)

__version__ = "0.1.0"
