"""Primal-dual regularized accelerated natural policy gradient for finite CMDPs.

The package pairs the algorithm (sampler, inner ASGD loop, primal-dual outer
loop) with an exact dynamic-programming oracle used to check it.
"""

from .asgd import AsgdRates, AsgdState, asgd_step, run_inner_loop
from .cmdp import CmdpSpec, Trajectory, UtilityFn, accumulate_utility, load_cmdp, rollout, sample_geometric_horizon
from .estimator import PDRANPG
from .exceptions import (CmdpValidationError, ConvergenceError, DivergedError, DomainError, InfeasibleError,
                         InvalidParameterError, PdrAnpgError, ScheduleInfeasibleError)
from .oracle import (OracleReport, SaddlePoint, entropy, exact_fisher, exact_lagrangian_gradient, exact_npg,
                     lagrangian, policy_evaluation, solve_constrained_optimum, solve_regularized_saddle)
from .outer import (DualState, RunRecord, ScheduleConfig, conservative_transform, derive_schedule, dual_step,
                    primal_step, run_pdr_anpg)
from .policy import PolicyParams, ScoreBounds, action_log_probs, fisher_at_state, measure_score_bounds, score
from .sampler import GradSample, estimate, estimate_jc_only

__version__ = "0.1.0"
