"""Repeated selling to mean-based no-regret buyers: schedules, learners, LP benchmarks, simulator."""

from .core import (ArmSchedule, Arm, Segment, SimulationResult, Trace, ValueDistribution,
                   equal_revenue_truncated, myerson, sec3_example, stochastically_dominates, welfare)
from .engine import run, run_trials, revenue_cap_check, verify_mean_based
from .learners import LearnerSpec, default_params, make_learner
from .lp import brute_force_mbrev, simplex_solve, solve_lp_prime, solve_mbrev
from .mechanisms import (example_arbitrary, example_critical, is_critical, is_monotone, mbrev_mechanism,
                         myerson_posted, nonmonotone_full_welfare, posted_price, welfare_extraction)

__version__ = "0.1.0"

__all__ = [
    "Arm", "ArmSchedule", "LearnerSpec", "Segment", "SimulationResult", "Trace", "ValueDistribution",
    "brute_force_mbrev", "default_params", "equal_revenue_truncated", "example_arbitrary", "example_critical",
    "is_critical", "is_monotone", "make_learner", "mbrev_mechanism", "myerson", "myerson_posted",
    "nonmonotone_full_welfare", "posted_price", "revenue_cap_check", "run", "run_trials", "sec3_example",
    "simplex_solve", "solve_lp_prime", "solve_mbrev", "stochastically_dominates", "verify_mean_based",
    "welfare", "welfare_extraction",
]
