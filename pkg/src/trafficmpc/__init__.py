"""Simulation, identification, and control of signalized traffic networks.

Queue dynamics are piecewise affine per movement; unknown saturation rates
and turn ratios are identified exactly in finite time by steering the
network through parameter-revealing terminal sets, after which a demand-free
one-step MPC controls the signals.
"""

from .analysis import (DriftCertificate, TrajectoryLog, boundedness_probe,
                       compare_policies, compute_metrics,
                       fit_drift_certificate, lyapunov_bounds_check,
                       make_controller, run_closed_loop, sample_states)
from .bounds import (ParameterBounds, bounds_from_config, bounds_from_truth,
                     bounds_to_config, collapsed_bounds, load_bounds,
                     save_bounds)
from .controllers import (OneStepSolution, fixed_time, grid_oracle,
                          lyapunov_objective, max_pressure, mpc_objective,
                          one_step_mpc, phase_cycle_schedule,
                          proportional_fair)
from .dynamics import (QueueState, augmented_step_lower, augmented_step_upper,
                       demand_vector, next_queues, step)
from .flow import (FeasibilityCertificate, FlowVector, check_demand_feasible,
                   solve_flow)
from .identification import (IdentificationResult, TerminalSpec,
                             augmented_mpc_step, estimate_parameter,
                             find_terminal_u, make_target_specs,
                             run_identification, terminal_membership)
from .network import (Link, Movement, Network, Phase, load_network,
                      make_paper_grid, network_from_config,
                      network_to_config, save_network, validate_network)

__version__ = "0.1.0"
