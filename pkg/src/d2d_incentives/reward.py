"""Operator-side choice of the unit reward ``r0``.

Under infection risk the operator's objective is ``(b0 - r0)`` times the
equilibrium effective participation. Once the attack-free participation mix
``A(r0) = sum_k w_k a_AF_k(r0)`` exceeds ``1 / tau``, infection persists and
the effective participation is pinned at ``1 / tau``, so the optimum is found
by maximising the attack-free objective subject to ``A(r0) <= 1 / tau``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from ._numerics import bisect_decreasing, maximize_scalar
from .bestresp import attack_free_optimum
from .equilibrium import NashEquilibrium, solve_ne
from .model import ModelError, OperatorParams, RewardScheme, RiskEnv, UEType, check_population

TIE_TOL = 1e-10
GRID = 1000


@dataclass(frozen=True)
class RewardSolution:
    r0_star: float
    operator_utility: float
    binding: bool
    a_af_mix: float
    r0_bar: float = math.inf


@dataclass(frozen=True)
class TechCostFunction:
    """Security technology cost ``J(tau) = j0 * tau**(-p)``; cheaper for weaker protection."""

    j0: float = 1.0
    p: float = 1.0

    def __post_init__(self):
        if self.j0 < 0 or self.p <= 0:
            raise ModelError(f"tech cost needs j0 >= 0 and p > 0, got j0={self.j0}, p={self.p}")

    def __call__(self, tau: float) -> float:
        if self.j0 == 0:
            return 0.0
        return self.j0 * tau ** (-self.p)


@dataclass(frozen=True)
class JointSolution:
    r0_star: float
    tau_star: float
    operator_utility: float


@dataclass(frozen=True)
class OperatorOutcome:
    """Equilibrium outcome of one reward level, evaluated on the original objective."""

    r0: float
    theta_inf: float
    participation: float
    effective_participation: float
    operator_utility: float
    ne: Optional[NashEquilibrium] = None


def participation_mix(types: Sequence[UEType], r0: float, r_max: float = math.inf) -> float:
    """``A(r0)``: weighted attack-free participation; types priced out contribute 0."""
    if r0 <= 0:
        return 0.0
    scheme = RewardScheme(r0, r_max)
    total = 0.0
    for t in types:
        if r0 * t.eval.marginal_at_zero <= t.c:
            continue
        total += t.w * attack_free_optimum(t, scheme)
    return total


def attack_free_objective(types, operator: OperatorParams, r0: float, r_max=math.inf) -> float:
    return (operator.b0 - r0) * participation_mix(types, r0, r_max)


def optimal_reward_attack_free(
    types: Sequence[UEType], operator: OperatorParams, r_max: float = math.inf
) -> RewardSolution:
    """Maximise ``(b0 - r0) A(r0)`` over ``0 < r0 < b0``."""
    check_population(types)
    b0 = operator.b0
    r0, val = maximize_scalar(lambda r: attack_free_objective(types, operator, r, r_max), 0.0, b0, GRID)
    if not val > 0:
        raise ModelError("no reward in (0, b0) attracts any participation")
    return RewardSolution(r0, val, False, participation_mix(types, r0, r_max))


def binding_reward(
    types: Sequence[UEType], tau: float, r_hi: float, r_max: float = math.inf
) -> float:
    """Smallest ``r0`` in ``(0, r_hi]`` with ``A(r0) = 1 / tau``; ``inf`` if none."""
    if tau <= 0:
        return math.inf
    target = 1.0 / tau
    if participation_mix(types, r_hi, r_max) <= target:
        return math.inf
    r, _ = bisect_decreasing(
        lambda r: target - participation_mix(types, r, r_max), 0.0, r_hi, tol=1e-12
    )
    return r


def optimal_reward_secure(
    types: Sequence[UEType], operator: OperatorParams, env: RiskEnv, r_max: float = math.inf
) -> RewardSolution:
    """Optimal reward under infection risk via the constrained attack-free problem."""
    check_population(types)
    b0 = operator.b0
    r_bar = binding_reward(types, env.tau, b0, r_max)
    if math.isinf(r_bar):
        sol = optimal_reward_attack_free(types, operator, r_max)
        return RewardSolution(sol.r0_star, sol.operator_utility, False, sol.a_af_mix, r_bar)

    def obj(r):
        return attack_free_objective(types, operator, r, r_max)

    x, fx = maximize_scalar(obj, 0.0, r_bar, GRID)
    f_bar = obj(r_bar)
    if fx > f_bar + TIE_TOL or (abs(fx - f_bar) <= TIE_TOL and x < r_bar):
        r0, val = x, fx
    else:
        r0, val = r_bar, f_bar
    binding = r0 == r_bar
    return RewardSolution(r0, val, binding, participation_mix(types, r0, r_max), r_bar)


def operator_outcome(
    types: Sequence[UEType],
    operator: OperatorParams,
    env: RiskEnv,
    r0: float,
    r_max: float = math.inf,
) -> OperatorOutcome:
    """Solve the participation game at ``r0`` and evaluate the operator's utility."""
    if not 0 < r0 < operator.b0:
        raise ModelError(f"r0 must lie in (0, b0={operator.b0}), got {r0}")
    ne = solve_ne(types, RewardScheme(r0, r_max), env)
    eff = ne.effective_participation
    return OperatorOutcome(
        r0, ne.theta_inf, ne.participation, eff, (operator.b0 - r0) * eff, ne
    )


def operator_utility_brute(
    types: Sequence[UEType],
    operator: OperatorParams,
    env: RiskEnv,
    r0: float,
    r_max: float = math.inf,
) -> float:
    return operator_outcome(types, operator, env, r0, r_max).operator_utility


def joint_optimize(
    types: Sequence[UEType],
    operator: OperatorParams,
    tech: TechCostFunction,
    r_max: float = math.inf,
) -> JointSolution:
    """Jointly choose ``r0`` and the protection level ``tau``.

    At the optimum the participation constraint binds, ``tau = 1 / A(r0)``,
    leaving a 1-D problem in ``r0``.
    """
    check_population(types)

    def obj(r):
        A = participation_mix(types, r, r_max)
        if A <= 0:
            return -math.inf
        return (operator.b0 - r) * A - tech(1.0 / A)

    r0, val = maximize_scalar(obj, 0.0, operator.b0, GRID)
    if not math.isfinite(val):
        raise ModelError("no reward in (0, b0) attracts any participation")
    return JointSolution(r0, 1.0 / participation_mix(types, r0, r_max), val)


def reward_sweep(
    types: Sequence[UEType],
    operator: OperatorParams,
    env: RiskEnv,
    r0_grid: Sequence[float],
    r_max: float = math.inf,
) -> List[OperatorOutcome]:
    return [operator_outcome(types, operator, env, float(r), r_max) for r in r0_grid]


SWEEP_COLUMNS = ("r0", "theta_inf", "effective_participation", "operator_utility")


def write_sweep_csv(path, outcomes: Sequence[OperatorOutcome], extra: Optional[dict] = None):
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\r\n")
        wr.writerow(list(extra) + list(SWEEP_COLUMNS))
        for o in outcomes:
            wr.writerow(list(extra.values()) + [repr(float(getattr(o, c))) for c in SWEEP_COLUMNS])
