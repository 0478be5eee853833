"""Steady Bingham viscoplastic flow on staggered grids, with optimal body-force control."""
from .control import (AdmissibleSet, ControlBasis, CostFunctional, OptimalPair, OptimizerConfig, evaluate_J,
                      nelder_mead_fallback, optimize, project_admissible, reduced_gradient)
from .exceptions import (BinghamError, ConfigError, InnerSolverFailure, LinearSolveBreakdown,
                         MaxIterationsExceeded, NoDescentFound, PoolFieldError)
from .fields import (Grid, PressureField, TensorField, VelocityField, divergence, estimate_embedding_constant,
                     forcing_field, inner_L2, inner_V, norm_L2, norm_V, project_divergence_free, random_field,
                     second_invariant, strain_rate)
from .rheology import (FluidModel, ViscosityModel, YieldField, effective_viscosity, monotonicity_check,
                       poiseuille_oracle, rigid_mask, simple_shear_to_tensor, stress_deviator)
from .viflow import (FlowProblem, SolveReport, SolverConfig, apriori_bound_check, blocking_test,
                     convection_form, energy_identity_residual, make_test_pool, operator_M, phi_g, solve_flow,
                     vi_residual)

__version__ = "0.1.0"
