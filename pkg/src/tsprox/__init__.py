"""Time-smoothed online prox-grad methods for non-convex composite losses."""

from .errors import (CappedRunError, ConfigError, DomainError, InvariantError, ParameterError,
                     ProtocolError, RangeError, SchemaError, ShapeError, TsproxError)
from .games import (GameSpec, PlayerStream, bilinear_game, calibrated_equilibrium_run,
                    equilibrium_check, equilibrium_window, player_stream, quadratic_game,
                    run_simultaneous)
from .metrics import (BoundReport, RunReport, classical_regret, evaluate_run, local_regret,
                      offline_params)
from .ontap import (BPRCoefficients, DemandProcess, Network, ODPair, edge_loads, make_ontap_stream,
                    ontap_smooth_grad, ontap_smooth_loss, path_cost)
from .oracles import NoiseModel, StochasticOracle, sample_grad
from .prox_core import (L1, BoxIndicator, Regularizer, SimplexIndicator, SimplexPlusL1, Zero,
                        prox_grad_map, prox_residual, residual_norm_sq)
from .solvers import StepConfig, SolverTrace, run_alg1, run_alg2, validate_config_alg2
from .streams import (LossStream, make_quadratic_drift_stream, make_sign_flip_stream,
                      sliding_average_grad, trajectory_variation)

__version__ = "0.1.0"
