"""Maximize the mass a transported density places inside a target set.

The solver transports the target boundary backward along characteristics
of a control-affine field, measures the captured initial mass by a
boundary line integral, and improves the control with needle variations
selected on super-level sets of the pointwise switching gain.
"""

from .problem import (BallControlSet, BoxControlSet, CircleTarget, ConfigError,
                      ControlAffineField, CustomDensity, EllipseTarget,
                      GaussianDensity, ProblemInstance, SimplexControlSet,
                      load_problem, make_benchmark)
from .flow import (Characteristic, ControlSignal, IntegrationError,
                   StepSizeError, advect, trace_characteristic)
from .boundary import (BoundaryCurve, DegenerateCurveError, OrientationError,
                       hamiltonian_integral, outward_normals, resample,
                       stokes_mass)
from .solver import (GainProfile, NeedleSet, SolverConfig, SolverState,
                     Trajectory, evaluate_cost, line_search_epsilon,
                     mix_controls, needle_select, optimality_residual,
                     pointwise_argmin, solve)
from .oracle import OracleEstimate, grid_cost, mc_cost
from .bench import initial_signal, load_baseline, record_baseline, regression_check

__version__ = "0.1.0"
