"""Nash equilibrium of the K-type participation game with unobserved compromise state.

Each UE commits to a constant rate that best-responds to the long-run
compromise level, and that level is in turn the fixed-action steady state of
the committed rates. The equilibrium compromise level solves

    sum_k w_k tau a_k(theta) / (tau theta a_k(theta) + 1) = 1,

whose left-hand side is strictly decreasing in ``theta``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from ._numerics import ConvergenceError, bisect_decreasing
from .bestresp import attack_free_optimum, best_response
from .epidemic import per_type_fractions, steady_state_fixed_ktype
from .model import ModelError, RewardScheme, RiskEnv, UEType, check_population

ROOT_TOL = 1e-10
VERIFY_TOL = 1e-8


class EquilibriumError(ModelError):
    def __init__(self, type_index: int, cause: Exception):
        super().__init__(f"best response failed for type {type_index}: {cause}")
        self.type_index = type_index
        self.cause = cause


@dataclass(frozen=True)
class NashEquilibrium:
    a_ne: Tuple[float, ...]
    theta_inf: float
    theta_k_inf: Tuple[float, ...]
    weights: Tuple[float, ...]
    tau_c: float
    residual: float = 0.0

    @property
    def persistent(self) -> bool:
        return self.theta_inf > 0

    @property
    def participation(self) -> float:
        return float(np.dot(self.weights, self.a_ne))

    @property
    def effective_participation(self) -> float:
        """Participation weighted by the uncompromised share of each type."""
        w, a, th = map(np.asarray, (self.weights, self.a_ne, self.theta_k_inf))
        return float(np.sum(w * (1.0 - th) * a))


def attack_free_profile(types: Sequence[UEType], scheme: RewardScheme) -> np.ndarray:
    out = []
    for k, t in enumerate(types):
        try:
            out.append(attack_free_optimum(t, scheme))
        except ModelError as e:
            raise EquilibriumError(k, e) from e
    return np.array(out)


def critical_rate(types: Sequence[UEType], scheme: RewardScheme) -> float:
    """Largest ``tau`` for which the equilibrium is infection-free: ``1 / sum_k w_k a_AF_k``."""
    w = check_population(types)
    return 1.0 / float(w @ attack_free_profile(types, scheme))


def best_response_profile(
    types: Sequence[UEType], scheme: RewardScheme, env: RiskEnv, theta: float
) -> np.ndarray:
    out = np.empty(len(types))
    for k, t in enumerate(types):
        try:
            out[k] = best_response(t, scheme, env, theta).a_star
        except ModelError as e:
            raise EquilibriumError(k, e) from e
    return out


def fixed_point_excess(
    types: Sequence[UEType], scheme: RewardScheme, env: RiskEnv, theta: float, a_af=None
) -> float:
    """``sum_k w_k tau a_k / (tau theta a_k + 1) - 1`` with ``a_k`` best responses to ``theta``."""
    w = np.array([t.w for t in types])
    if theta == 0.0:
        a = attack_free_profile(types, scheme) if a_af is None else a_af
    else:
        a = best_response_profile(types, scheme, env, theta)
    tau = env.tau
    return float(np.sum(w * tau * a / (tau * theta * a + 1.0))) - 1.0


def solve_ne(
    types: Sequence[UEType],
    scheme: RewardScheme,
    env: RiskEnv,
    tol: float = ROOT_TOL,
    bracket: Optional[Tuple[float, float]] = None,
) -> NashEquilibrium:
    """Unique Nash equilibrium by bisection on the compromise level.

    ``bracket`` restricts the search interval; it must contain the root.
    """
    w = check_population(types)
    a_af = attack_free_profile(types, scheme)
    tau = env.tau
    mean_af = float(w @ a_af)
    tau_c = 1.0 / mean_af
    if tau * mean_af <= 1.0:
        zeros = tuple(0.0 for _ in types)
        return NashEquilibrium(tuple(float(x) for x in a_af), 0.0, zeros, tuple(w.tolist()), tau_c)
    lo, hi = bracket if bracket is not None else (0.0, 1.0)
    if not 0.0 <= lo < hi <= 1.0:
        raise ModelError(f"invalid bracket {bracket}")

    def excess(theta):
        return fixed_point_excess(types, scheme, env, theta, a_af)

    if bracket is not None and not (excess(lo) > 0 > excess(hi)):
        raise ModelError(f"bracket {bracket} does not contain the equilibrium")
    theta, res = bisect_decreasing(excess, lo, hi, tol=tol)
    a = best_response_profile(types, scheme, env, theta)
    th_k = per_type_fractions(theta, a, tau)

    # every type must be best-responding to the reported level
    for k, t in enumerate(types):
        br = best_response(t, scheme, env, theta)
        if abs(br.a_star - a[k]) > VERIFY_TOL or abs(br.residual) > VERIFY_TOL:
            raise ConvergenceError(f"type {k} is not best-responding at theta={theta:.12g}")
    return NashEquilibrium(
        tuple(float(x) for x in a),
        float(theta),
        tuple(float(x) for x in th_k),
        tuple(float(x) for x in w),
        tau_c,
        abs(res),
    )


def solve_ne_iterative(
    types: Sequence[UEType],
    scheme: RewardScheme,
    env: RiskEnv,
    theta0: float = 0.5,
    damping: float = 0.5,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> NashEquilibrium:
    """Damped best-response iteration on the compromise level.

    Alternates between best responses to the current level and the
    steady state those fixed rates induce. Slower than :func:`solve_ne`
    and kept as a cross-check.
    """
    w = check_population(types)
    a_af = attack_free_profile(types, scheme)
    tau_c = 1.0 / float(w @ a_af)
    theta = theta0
    step = prev_step = np.inf
    for _ in range(max_iter):
        a = best_response_profile(types, scheme, env, theta)
        target = steady_state_fixed_ktype(a, w, env).theta_inf
        step = target - theta
        if abs(step) < tol:
            th_k = per_type_fractions(target, a, env.tau)
            return NashEquilibrium(
                tuple(float(x) for x in a),
                float(target),
                tuple(float(x) for x in th_k),
                tuple(float(x) for x in w),
                tau_c,
                abs(step),
            )
        if abs(step) >= abs(prev_step):
            # oscillating around the fixed point: shrink the step
            damping *= 0.5
        prev_step = step
        theta = min(max(theta + damping * step, 0.0), 1.0)
    raise ConvergenceError(f"best-response iteration did not settle, last step {step:.3g}")
