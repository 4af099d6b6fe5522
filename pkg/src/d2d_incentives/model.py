"""Domain types and utility evaluation for UEs serving D2D offloading tasks.

A UE that commits to a participation rate ``a`` (tasks per unit time) under a
throttled linear reward earns the instantaneous utility ``v(r0 * a) - c * a``.
When serving exposes it to infected requesters, the discounted long-run
(foresighted) utility folds in infection at rate ``beta * theta * a`` and a
recovery period costing ``q`` per unit time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

ABS_TOL = 1e-12

POWER = "power"
LOG_LINEAR = "log-linear"
FAMILIES = (POWER, LOG_LINEAR)


class ModelError(ValueError):
    """Raised on invalid model parameters or out-of-range arguments."""


class AssumptionViolation(ModelError):
    """A standing modelling assumption does not hold.

    ``clause`` names the violated clause, e.g. ``"1(3)"``.
    """

    def __init__(self, clause: str, message: str):
        super().__init__(f"assumption {clause} violated: {message}")
        self.clause = clause


@dataclass(frozen=True)
class EvaluationFunction:
    """Concave valuation ``v`` of the reward a UE receives.

    ``power``: ``v(x) = k * x**gamma`` with ``0 < gamma < 1``.
    ``log-linear``: ``v(x) = k * log(1 + x)``; ``gamma`` is ignored.
    """

    family: str = POWER
    k: float = 1.0
    gamma: float = 0.5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unknown evaluation family {self.family!r}")
        if not (self.k > 0 and math.isfinite(self.k)):
            raise ModelError(f"scale k must be positive and finite, got {self.k}")
        if self.family == POWER and not (0.0 < self.gamma < 1.0):
            raise ModelError(f"power exponent must lie in (0, 1), got {self.gamma}")

    def __call__(self, x: float) -> float:
        if self.family == POWER:
            return self.k * x**self.gamma if x > 0 else 0.0
        return self.k * math.log1p(x)

    def d1(self, x: float) -> float:
        """First derivative; ``inf`` at 0 for the power family."""
        if self.family == POWER:
            if x <= 0:
                return math.inf
            return self.k * self.gamma * x ** (self.gamma - 1.0)
        return self.k / (1.0 + x)

    def d2(self, x: float) -> float:
        if self.family == POWER:
            if x <= 0:
                return -math.inf
            return self.k * self.gamma * (self.gamma - 1.0) * x ** (self.gamma - 2.0)
        return -self.k / (1.0 + x) ** 2

    @property
    def marginal_at_zero(self) -> float:
        return self.d1(0.0)

    def d1_inverse(self, y: float) -> float:
        """Solve ``v'(x) = y`` for ``x > 0``; requires ``0 < y < v'(0)``."""
        if self.family == POWER:
            return (y / (self.k * self.gamma)) ** (1.0 / (self.gamma - 1.0))
        return self.k / y - 1.0


@dataclass(frozen=True)
class UEType:
    """One population segment: valuation, service cost, recovery cost, weight."""

    eval: EvaluationFunction
    c: float
    q: float
    w: float = 1.0

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ModelError(f"service cost c must be positive, got {self.c}")
        # q = 0 is admitted: recovery is then free and the threshold is +inf.
        if not (self.q >= 0 and math.isfinite(self.q)):
            raise ModelError(f"recovery cost q must be non-negative, got {self.q}")
        if not (0.0 <= self.w <= 1.0):
            raise ModelError(f"population weight w must lie in [0, 1], got {self.w}")


@dataclass(frozen=True)
class RiskEnv:
    """Attack success probability ``beta``, recovery rate ``delta``, discount ``rho``."""

    beta: float
    delta: float
    rho: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.beta <= 1.0):
            raise ModelError(f"beta must lie in [0, 1], got {self.beta}")
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ModelError(f"delta must be positive, got {self.delta}")
        if not (self.rho >= 0):
            raise ModelError(f"rho must be non-negative, got {self.rho}")

    @property
    def tau(self) -> float:
        """Effective infection rate ``beta / delta``."""
        return self.beta / self.delta

    @classmethod
    def from_tau(cls, tau: float, delta: float = 1.0, rho: float = 1.0) -> "RiskEnv":
        return cls(beta=tau * delta, delta=delta, rho=rho)


@dataclass(frozen=True)
class RewardScheme:
    """Throttled linear reward ``r(a) = min(r0 * a, r_max)``.

    ``r_max = inf`` gives the unthrottled scheme.
    """

    r0: float
    r_max: float = math.inf

    def __post_init__(self):
        if not (self.r0 > 0 and math.isfinite(self.r0)):
            raise ModelError(f"unit reward r0 must be positive, got {self.r0}")
        if not (self.r_max > 0):
            raise ModelError(f"reward cap must be positive, got {self.r_max}")

    @property
    def M(self) -> float:
        return self.r_max / self.r0

    def reward(self, a: float) -> float:
        return min(self.r0 * a, self.r_max)


@dataclass(frozen=True)
class OperatorParams:
    b0: float

    def __post_init__(self):
        if not (self.b0 > 0 and math.isfinite(self.b0)):
            raise ModelError(f"operator benefit b0 must be positive, got {self.b0}")


def check_population(types: Sequence[UEType]) -> np.ndarray:
    """Return the weight vector, rejecting populations whose weights do not sum to 1."""
    if len(types) == 0:
        raise ModelError("population needs at least one type")
    w = np.array([t.w for t in types], dtype=float)
    if abs(w.sum() - 1.0) > 1e-9:
        raise ModelError(f"type weights must sum to 1, got {w.sum():.12g}")
    return w


def _check_rate(a: float, scheme: RewardScheme):
    if a < 0 or a > scheme.M:
        raise ModelError(f"participation {a} outside [0, M={scheme.M}]")


def instant_utility(ue: UEType, scheme: RewardScheme, a: float) -> float:
    """Attack-free utility rate ``v(r0 a) - c a``."""
    _check_rate(a, scheme)
    return ue.eval(scheme.r0 * a) - ue.c * a


def instant_utility_d1(ue: UEType, scheme: RewardScheme, a: float) -> float:
    return scheme.r0 * ue.eval.d1(scheme.r0 * a) - ue.c


def instant_utility_d2(ue: UEType, scheme: RewardScheme, a: float) -> float:
    return scheme.r0**2 * ue.eval.d2(scheme.r0 * a)


def foresighted_utility(
    ue: UEType, scheme: RewardScheme, env: RiskEnv, a: float, theta: float
) -> float:
    """Discounted long-run utility of committing to rate ``a`` at compromise level ``theta``.

    Closed form ``((rho + delta) u(a) - beta theta a q) / (rho + delta + beta theta a)``.
    """
    if not 0.0 <= theta <= 1.0:
        raise ModelError(f"theta must lie in [0, 1], got {theta}")
    base = env.rho + env.delta
    hazard = env.beta * theta * a
    return (base * instant_utility(ue, scheme, a) - hazard * ue.q) / (base + hazard)


def foresighted_marginal(
    ue: UEType, scheme: RewardScheme, env: RiskEnv, a: float, theta: float
) -> float:
    """Analytic ``dU/da`` of :func:`foresighted_utility`."""
    base = env.rho + env.delta
    bt = env.beta * theta
    denom = base + bt * a
    f = instant_utility_d1(ue, scheme, a) * denom - bt * (instant_utility(ue, scheme, a) + ue.q)
    return base * f / denom**2


@dataclass
class AssumptionReport:
    """Pass/fail for each standing assumption clause, with a short reason."""

    clauses: Dict[str, bool] = field(default_factory=dict)
    notes: Dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.clauses.values())

    def failed(self):
        return [k for k, v in self.clauses.items() if not v]


def check_assumptions(ue: UEType, scheme: RewardScheme, n_samples: int = 64) -> AssumptionReport:
    """Evaluate clauses 1(1)-1(3) and 2 for ``ue`` under ``scheme``.

    Violations are reported, never raised.
    """
    rep = AssumptionReport()
    v = ue.eval
    r0, M, c = scheme.r0, scheme.M, ue.c
    x_hi = r0 * M if math.isfinite(M) else 1e3 * max(1.0, r0)

    # 1(1): increasing and concave, checked by finite differences.
    xs = np.geomspace(1e-6 * x_hi, x_hi, n_samples)
    ok1 = True
    for x in xs:
        h = 1e-4 * x
        fd1 = (v(x + h) - v(x - h)) / (2 * h)
        fd2 = (v(x + h) - 2 * v(x) + v(x - h)) / h**2
        if not (fd1 > 0 and fd2 < 0):
            ok1 = False
            rep.notes["1(1)"] = f"monotone/concave check fails at x={x:.6g}"
            break
    rep.clauses["1(1)"] = ok1

    # 1(2): v(0) = 0 and u(M) > 0.
    zero_ok = abs(v(0.0)) <= ABS_TOL
    if math.isfinite(M):
        top_ok = v(r0 * M) - c * M > ABS_TOL
        if not top_ok:
            rep.notes["1(2)"] = f"v(r0 M)={v(r0 * M):.6g} <= c M={c * M:.6g}"
    else:
        top_ok = True
    rep.clauses["1(2)"] = zero_ok and top_ok

    # 1(3): r0 v'(r0 M) < c < r0 v'(0).
    lo = r0 * v.d1(r0 * M) if math.isfinite(M) else 0.0
    hi = r0 * v.marginal_at_zero
    rep.clauses["1(3)"] = (lo < c - ABS_TOL) and (c < hi - ABS_TOL)
    if not rep.clauses["1(3)"]:
        rep.notes["1(3)"] = f"need {lo:.6g} < c={c:.6g} < {hi:.6g}"

    # 2: attack-free optimum nondecreasing in r0, sampled where it exists.
    grid = np.linspace(0.25 * r0, 4.0 * r0, n_samples)
    prev = -math.inf
    ok2 = True
    for g in grid:
        if g * v.marginal_at_zero <= c:
            val = 0.0
        else:
            val = v.d1_inverse(c / g) / g
        if val < prev - ABS_TOL:
            ok2 = False
            rep.notes["2"] = f"attack-free optimum decreases near r0={g:.6g}"
            break
        prev = val
    rep.clauses["2"] = ok2
    return rep
