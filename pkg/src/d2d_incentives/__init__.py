"""Security-aware incentive design for D2D offloading under epidemic attack risk."""

from .abm import SimConfig, estimate_eta, simulate
from .bestresp import BestResponse, attack_free_optimum, best_response, participation_threshold
from .epidemic import (
    AdaptivePolicy,
    FixedPolicy,
    integrate_dynamics,
    steady_state_fixed_homogeneous,
    steady_state_fixed_ktype,
    steady_state_strategic,
)
from .equilibrium import NashEquilibrium, critical_rate, solve_ne
from .model import (
    AssumptionViolation,
    EvaluationFunction,
    ModelError,
    OperatorParams,
    RewardScheme,
    RiskEnv,
    UEType,
)
from .reward import (
    TechCostFunction,
    joint_optimize,
    operator_utility_brute,
    optimal_reward_attack_free,
    optimal_reward_secure,
)

__version__ = "0.1.0"
