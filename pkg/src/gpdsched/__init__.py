"""Greedy primal-dual scheduling for wireless networks with unknown statistics."""
from ._accel import HAVE_NUMBA, numba_enabled, resolve_backend
from .network import (AllocationMode, EnumerationSizeError, InterferenceGraph, NetworkSpec,
                      SpecError, StateConfig, apply_slot, check_spec, enumerate_modes,
                      independent_set_masks, load_spec, pack, save_spec, validate_spec)
from .objective import (PenaltyConfig, ProblemError, ProblemSpec, UncertainParams, eval_constraints,
                        eval_cost, eval_objective, eval_penalty, grad_x, grad_z)
from .scheduler import (EmpiricalState, ScheduleDecision, Simulation, load_snapshot, restore,
                        save_snapshot, snapshot)
from .solver import (InfeasibleError, SolverResult, check_feasibility_bound, check_pen_dominance,
                     max_throughput_scale, solve_opt_exact_small, solve_pen_fw)
from .stochastic import (ArrivalModel, ConfigError, CumulativeTracker, StateModel, arrival_trace,
                         empirical_average, load_arrival_csv, make_streams, save_arrival_csv,
                         state_trace, step_arrivals, step_state)

__version__ = "0.1.0"
