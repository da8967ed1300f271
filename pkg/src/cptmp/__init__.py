"""Monte Carlo toolkit for the stochastic maximum principle under cumulative
prospect theory preferences with probability distortion."""

from .adjoint import AdjointPair, solve_adjoint_analytic, solve_adjoint_lsmc, terminal_condition
from .empirical import EmpiricalCDF, SampleSet, build_ecdf, ks_uniformity, pit_transform
from .errors import ConfigError, CPTError, DataError, DomainError, NumericalError
from .functional import (ChoquetEstimate, ObjectiveValue, RunningCost, choquet_order_stat, choquet_plugin,
                         evaluate_objective)
from .maximum_principle import (DualityResult, GateauxReport, MPReport, duality_check, gateaux_fd,
                                mp_residual)
from .preference import (DistortionFn, PreferenceSpec, UtilityFn, distortion_eval, utility_deriv,
                         utility_deriv_inverse, utility_eval, validate_preference)
from .scenarios import (ScenarioConfig, build_scenario, closed_form_optimal, closed_form_state_and_control,
                        evaluate_intro_objectives, jz_terminal_wealth, preset, solve_budget_lambda)
from .sde import (ControlSpec, ModelSpec, PathEnsemble, TimeGrid, simulate_pricing_kernel, simulate_state,
                  simulate_variational)

__version__ = "0.1.0"
