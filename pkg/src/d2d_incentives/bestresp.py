"""Individual best-response participation under infection risk."""

from __future__ import annotations

import math
from dataclasses import dataclass

from ._numerics import bisect_decreasing
from .model import (
    AssumptionViolation,
    RewardScheme,
    RiskEnv,
    UEType,
    instant_utility,
    instant_utility_d1,
    ModelError,
    POWER,
)

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class BestResponse:
    a_star: float
    theta_bar: float
    residual: float = 0.0

    @property
    def participates(self) -> bool:
        return self.a_star > 0


def attack_free_optimum(ue: UEType, scheme: RewardScheme) -> float:
    """Maximiser of the instantaneous utility, the root of ``r0 v'(r0 a) = c``."""
    r0 = scheme.r0
    if r0 * ue.eval.marginal_at_zero <= ue.c:
        raise AssumptionViolation(
            "1(3)", f"r0 v'(0) = {r0 * ue.eval.marginal_at_zero:.6g} <= c = {ue.c:.6g}"
        )
    a = ue.eval.d1_inverse(ue.c / r0) / r0
    if a >= scheme.M:
        raise AssumptionViolation("1(3)", f"attack-free optimum {a:.6g} >= cap M = {scheme.M:.6g}")
    return a


def participation_threshold(ue: UEType, scheme: RewardScheme, env: RiskEnv) -> float:
    """Compromise level at and above which the best response is zero participation.

    ``(r0 v'(0) - c)(rho + delta) / (q beta)``, floored at 0; ``inf`` when the
    marginal valuation at zero is unbounded or there is no risk cost.
    """
    gain = scheme.r0 * ue.eval.marginal_at_zero - ue.c
    if gain <= 0:
        return 0.0
    if math.isinf(gain) or env.beta == 0 or ue.q == 0:
        return math.inf
    return gain * (env.rho + env.delta) / (ue.q * env.beta)


def foc(ue: UEType, scheme: RewardScheme, env: RiskEnv, theta: float, a: float) -> float:
    """First-order condition of the foresighted utility divided by ``rho + delta + beta theta a``.

    Same sign as ``dU/da`` and strictly decreasing in ``a``.
    """
    bt = env.beta * theta
    denom = env.rho + env.delta + bt * a
    return instant_utility_d1(ue, scheme, a) - bt * (instant_utility(ue, scheme, a) + ue.q) / denom


def _foc_closure(ue: UEType, scheme: RewardScheme, env: RiskEnv, theta: float):
    # Inlined :func:`foc` for the bisection inner loop; valid on (0, M].
    r0, c, q = scheme.r0, ue.c, ue.q
    bt = env.beta * theta
    base = env.rho + env.delta
    k = ue.eval.k
    if ue.eval.family == POWER:
        g = ue.eval.gamma
        kg = k * g

        def f(a):
            x = r0 * a
            p = x ** (g - 1.0)
            return r0 * kg * p - c - bt * (k * x * p - c * a + q) / (base + bt * a)

    else:

        def f(a):
            x = r0 * a
            return r0 * k / (1.0 + x) - c - bt * (k * math.log1p(x) - c * a + q) / (base + bt * a)

    return f


def best_response(
    ue: UEType,
    scheme: RewardScheme,
    env: RiskEnv,
    theta: float,
    tol: float = RESIDUAL_TOL,
) -> BestResponse:
    """Participation rate maximising the foresighted utility at compromise level ``theta``."""
    if not 0.0 <= theta <= 1.0:
        raise ModelError(f"theta must lie in [0, 1], got {theta}")
    theta_bar = participation_threshold(ue, scheme, env)
    if theta >= theta_bar:
        return BestResponse(0.0, theta_bar, 0.0)
    a_af = attack_free_optimum(ue, scheme)
    if theta == 0 or env.beta == 0:
        return BestResponse(a_af, theta_bar, foc(ue, scheme, env, theta, a_af))

    f = _foc_closure(ue, scheme, env, theta)

    # the optimum never exceeds a_af, where the FOC is already negative
    f_hi = f(a_af)
    if not f_hi < 0:
        raise AssumptionViolation("1(2)", f"first-order condition non-negative at a={a_af:.6g}")
    a, res = bisect_decreasing(f, 0.0, a_af, tol=tol)
    return BestResponse(a, theta_bar, res)


def best_response_rate(ue: UEType, scheme: RewardScheme, env: RiskEnv, theta: float) -> float:
    return best_response(ue, scheme, env, theta).a_star
