"""Boundary stabilization and observers for a 2-D elastic plate with
in-domain aeroelastic anti-damping.

Modal decomposition turns the plate into a stack of 1-D characteristic
systems; backstepping kernels solved on a triangular domain give rapidly
stabilizing boundary feedback, a boundary-measurement observer, and the
output-feedback closed loop, all verified in a finite-difference simulator.
"""

from .params import (PhysicalParams, DimensionlessParams, ModalCoefficients,
                     nondimensionalize, assemble_coefficients)
from .exceptions import (ConfigError, UnsupportedRegimeError, DivergenceError,
                         VerificationError)
from .triangle import TriangleGrid
from .kernels import (ControllerKernels, ObserverKernels, solve_controller_kernels,
                      solve_observer_kernels, kernel_residual, inverse_kernels,
                      export_kernels_csv, phi0_matrix)
from .riemann import (PhysicalModalState, HyperbolicModalState, to_hyperbolic,
                      to_physical)
from .control import (GainTables, build_gain_tables, state_feedback, output_feedback,
                      control_hyperbolic, unwind_inputs, sum_modal_inputs)
from .observer import (Measurements, extract_measurements, ObserverGains,
                       reconstruct_estimates, error_diagnostics, invert_error_transform)
from .sim import (SimConfig, PlantOperator, ModeStack, plant_step, run_scenario,
                  target_transform_check, lyapunov_monitor, lyapunov_params,
                  energy_band_constants, default_initial_state)
from . import modal

__version__ = "0.1.0"
