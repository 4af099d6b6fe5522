"""Mean-field SIS dynamics of the system compromise state.

Two policies drive the dynamics: fixed per-type participation rates
(non-strategic UEs) and adaptive best responses to the current compromise
level (strategic UEs observing the state). Per-type compromise fractions
evolve as

    d theta_k / dt = -delta theta_k + (1 - theta_k) beta theta a_k,

with ``theta = sum_k w_k theta_k``; for a single type this is the scalar
equation ``d theta = theta ((1 - theta) beta a - delta) dt``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ._numerics import bisect_decreasing
from .bestresp import attack_free_optimum, best_response, participation_threshold
from .model import ModelError, RewardScheme, RiskEnv, UEType, check_population

ROOT_TOL = 1e-10
DEFAULT_DT = 1e-3
HORIZON_CAP = 1e4
CONVERGED_RATE = 1e-8
CONVERGED_STEPS = 100
DRIFT_TOL = 1e-6


class StepSizeError(ModelError):
    """Explicit Euler left [0, 1] by more than round-off; reduce ``dt``."""


@dataclass(frozen=True)
class SteadyState:
    theta_inf: float
    tau_c: float
    persistent: bool
    theta_k: Tuple[float, ...] = ()


@dataclass(frozen=True)
class EpidemicState:
    theta: float
    theta_k: Tuple[float, ...]
    t: float = 0.0


def _tau_c(mean_rate: float) -> float:
    return 1.0 / mean_rate if mean_rate > 0 else math.inf


def per_type_fractions(theta: float, actions, tau: float) -> np.ndarray:
    """Steady per-type compromise ``tau theta a_k / (tau theta a_k + 1)``."""
    x = tau * theta * np.asarray(actions, dtype=float)
    return x / (x + 1.0)


def steady_state_fixed_homogeneous(a: float, env: RiskEnv) -> SteadyState:
    """Steady state when every UE serves at the same fixed rate ``a``."""
    if a < 0:
        raise ModelError(f"participation must be non-negative, got {a}")
    tau_c = _tau_c(a)
    # compare beta a with delta rather than tau with 1/a to keep the boundary exact
    if env.beta * a <= env.delta:
        return SteadyState(0.0, tau_c, False, (0.0,))
    theta = 1.0 - env.delta / (env.beta * a)
    return SteadyState(theta, tau_c, True, (theta,))


def steady_state_fixed_ktype(
    actions: Sequence[float], weights: Sequence[float], env: RiskEnv, tol: float = ROOT_TOL
) -> SteadyState:
    """Steady state for K types with fixed rates ``actions`` and population ``weights``."""
    a = np.asarray(actions, dtype=float)
    w = np.asarray(weights, dtype=float)
    if a.shape != w.shape:
        raise ModelError("actions and weights must have the same length")
    if np.any(a < 0):
        raise ModelError("participation rates must be non-negative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ModelError(f"weights must sum to 1, got {w.sum():.12g}")
    mean_rate = float(w @ a)
    tau = env.tau
    tau_c = _tau_c(mean_rate)
    if tau * mean_rate <= 1.0:
        return SteadyState(0.0, tau_c, False, tuple(0.0 for _ in a))
    ta = tau * a
    tw = ta * w

    def excess(theta):
        return float(np.sum(tw / (ta * theta + 1.0))) - 1.0

    theta, _ = bisect_decreasing(excess, 0.0, 1.0, tol=tol)
    return SteadyState(theta, tau_c, True, tuple(float(x) for x in per_type_fractions(theta, a, tau)))


class FixedPolicy:
    """Prescribed per-type participation rates."""

    adaptive = False

    def __init__(self, actions: Sequence[float], weights: Sequence[float] = (1.0,)):
        self.a = np.asarray(actions, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        if self.a.shape != self.weights.shape:
            raise ModelError("actions and weights must have the same length")

    def actions(self, theta: float) -> np.ndarray:
        return self.a


class AdaptivePolicy:
    """Each type plays its best response to the observed compromise level."""

    adaptive = True

    def __init__(self, types: Sequence[UEType], scheme: RewardScheme, env: RiskEnv):
        self.types = list(types)
        self.weights = check_population(self.types)
        self.scheme = scheme
        self.env = env

    def actions(self, theta: float) -> np.ndarray:
        return np.array(
            [best_response(t, self.scheme, self.env, theta).a_star for t in self.types]
        )


@dataclass
class Trajectory:
    t: np.ndarray
    theta: np.ndarray
    theta_k: np.ndarray
    a_star: Optional[np.ndarray] = None
    converged: bool = False
    crossed: bool = False

    @property
    def final(self) -> EpidemicState:
        return EpidemicState(
            float(self.theta[-1]), tuple(float(x) for x in self.theta_k[-1]), float(self.t[-1])
        )

    def header(self) -> List[str]:
        K = self.theta_k.shape[1]
        cols = ["t", "theta"] + [f"theta_{k + 1}" for k in range(K)]
        if self.a_star is not None:
            cols += [f"a_star_{k + 1}" for k in range(K)]
        return cols

    def rows(self):
        for i in range(len(self.t)):
            row = [self.t[i], self.theta[i], *self.theta_k[i]]
            if self.a_star is not None:
                row += list(self.a_star[i])
            yield [repr(float(x)) for x in row]

    def to_csv(self, path, extra: Optional[dict] = None):
        """Write RFC-4180 CSV; ``extra`` adds constant leading columns."""
        extra = extra or {}
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\r\n")
            wr.writerow(list(extra) + self.header())
            for row in self.rows():
                wr.writerow(list(extra.values()) + row)


def integrate_dynamics(
    theta0: float,
    env: RiskEnv,
    policy,
    horizon: float = HORIZON_CAP,
    dt: float = DEFAULT_DT,
    record_every: int = 1,
    stop_at: Optional[float] = None,
    stop_on_converge: bool = True,
) -> Trajectory:
    """Explicit Euler integration of the per-type SIS dynamics.

    Every type starts at ``theta0``. With ``stop_at`` the run ends at the
    first step whose ``theta`` reaches that level from the starting side.
    """
    if dt <= 0:
        raise ModelError(f"dt must be positive, got {dt}")
    if not 0.0 <= theta0 <= 1.0:
        raise ModelError(f"theta0 must lie in [0, 1], got {theta0}")
    w = policy.weights
    K = len(w)
    n_steps = int(math.ceil(min(horizon, HORIZON_CAP) / dt))
    beta, delta = env.beta, env.delta
    direction = 0.0 if stop_at is None else math.copysign(1.0, stop_at - theta0)

    th_k = np.full(K, float(theta0))
    theta = float(w @ th_k)
    ts, thetas, thks, acts = [], [], [], []
    a = policy.actions(theta)

    def record(step):
        ts.append(step * dt)
        thetas.append(theta)
        thks.append(th_k.copy())
        acts.append(np.array(a, dtype=float))

    record(0)
    quiet = 0
    converged = crossed = False
    step = 0
    for step in range(1, n_steps + 1):
        rate_k = -delta * th_k + (1.0 - th_k) * beta * theta * a
        new = th_k + dt * rate_k
        if new.min() < -DRIFT_TOL or new.max() > 1.0 + DRIFT_TOL:
            raise StepSizeError(f"Euler step left [0, 1] at t={step * dt:.6g}; reduce dt={dt}")
        th_k = np.clip(new, 0.0, 1.0)
        prev = theta
        theta = float(w @ th_k)
        a = policy.actions(theta)
        if stop_at is not None and (theta - stop_at) * direction >= 0:
            crossed = True
            record(step)
            break
        if step % record_every == 0:
            record(step)
        if abs(theta - prev) / dt < CONVERGED_RATE:
            quiet += 1
            if stop_on_converge and quiet >= CONVERGED_STEPS:
                converged = True
                break
        else:
            quiet = 0
    if ts[-1] != step * dt:
        record(step)
    return Trajectory(
        t=np.array(ts),
        theta=np.array(thetas),
        theta_k=np.array(thks),
        a_star=np.array(acts) if policy.adaptive else None,
        converged=converged,
        crossed=crossed,
    )


def strategic_drift(ue: UEType, scheme: RewardScheme, env: RiskEnv, theta: float) -> float:
    """Per-capita growth rate ``(1 - theta) beta a*(theta) - delta`` of the compromise level."""
    return (1.0 - theta) * env.beta * best_response(ue, scheme, env, theta).a_star - env.delta


def steady_state_strategic(
    ue: UEType, scheme: RewardScheme, env: RiskEnv, tol: float = ROOT_TOL
) -> SteadyState:
    """Long-run compromise level when homogeneous strategic UEs observe the state."""
    a_af = attack_free_optimum(ue, scheme)
    tau_c = 1.0 / a_af
    if env.beta * a_af <= env.delta:
        return SteadyState(0.0, tau_c, False, (0.0,))
    hi = min(participation_threshold(ue, scheme, env), 1.0)
    if not strategic_drift(ue, scheme, env, hi) < 0:
        raise ModelError("no sign change of the strategic drift on the search bracket")
    theta, _ = bisect_decreasing(lambda th: strategic_drift(ue, scheme, env, th), 0.0, hi, tol=tol)
    return SteadyState(theta, tau_c, True, (theta,))


def convergence_time_bounds(
    theta0: float, epsilon: float, env: RiskEnv, ue: UEType, scheme: RewardScheme
) -> Tuple[float, float]:
    """Bounds on the time the strategic dynamics need to get within ``epsilon`` of equilibrium.

    With ``theta_eps`` the level ``epsilon`` away from the equilibrium on the
    side of ``theta0``, the log-gap ``|ln theta0 - ln theta_eps|`` is covered at
    a per-capita rate between ``|g(theta_eps)|`` and ``|g(theta0)|`` where ``g``
    is :func:`strategic_drift`.
    """
    ss = steady_state_strategic(ue, scheme, env)
    if not ss.persistent:
        raise ModelError("convergence bounds need tau > tau_c (positive equilibrium)")
    eq = ss.theta_inf
    if theta0 == eq:
        raise ModelError("theta0 coincides with the equilibrium")
    if epsilon <= 0:
        raise ModelError("epsilon must be positive")
    gap = abs(theta0 - eq)
    if epsilon > gap:
        raise ModelError(f"epsilon={epsilon} exceeds the initial gap {gap:.6g}")
    theta_eps = eq + math.copysign(epsilon, theta0 - eq)
    if not 0.0 < theta_eps < 1.0:
        raise ModelError(f"target level {theta_eps:.6g} outside (0, 1)")
    log_gap = abs(math.log(theta0) - math.log(theta_eps))
    if log_gap == 0.0:
        return 0.0, 0.0
    fast = abs(strategic_drift(ue, scheme, env, theta0))
    slow = abs(strategic_drift(ue, scheme, env, theta_eps))
    return log_gap / fast, log_gap / slow
