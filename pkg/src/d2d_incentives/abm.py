"""Discrete-time agent-based simulator of D2D offloading under SIS infection.

One unit of continuous time is split into ``slots_per_unit_time`` slots.
Each slot runs, in order:

1. move: random waypoint mobility inside a square area;
2. roles: every agent requests offloading with probability ``p``;
3. match: the operator assigns each requester's tasks to distinct in-range
   non-requesters (at most one task per server per slot), exactly as it
   would for obedient UEs; an assigned server accepts with its contract
   probability ``a / (S (1 - p) eta)`` if susceptible, and declined or
   unassignable tasks go to the edge server;
4. infect: a susceptible server serving an infected requester is
   compromised with probability ``beta``;
5. recover: agents infected at the start of the slot recover with
   probability ``delta / S`` and pay ``q / S``;
6. revise: adaptive agents re-solve their best response against the
   current infected fraction, fixed agents keep their rates.

``eta`` is the probability that a potential server receives an assignment
under the obedient process; it is estimated by simulation.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numba
import numpy as np

from .bestresp import best_response
from .model import ModelError, OperatorParams, RewardScheme, RiskEnv, UEType

log = logging.getLogger(__name__)

FIXED = "fixed"
ADAPTIVE = "adaptive"
MODES = (FIXED, ADAPTIVE)


@dataclass(frozen=True)
class SimConfig:
    n_agents: int = 100
    area: float = 100.0
    slots_per_unit_time: int = 100
    v_max: float = 20.0
    m_max: int = 5
    p: float = 0.2
    w_max: int = 5
    d: float = 30.0
    seed: int = 0
    theta0: float = 0.5
    # "quota" fixes type counts at round(w_k N); "random" draws each agent's type
    type_assignment: str = "quota"
    # compromised UEs stop requesting until recovered
    requesters_down: bool = False
    eta: Optional[float] = None
    eta_warmup_slots: int = 500
    eta_slots: int = 5000
    trace_every: int = 100

    def __post_init__(self):
        if self.n_agents < 1:
            raise ModelError("n_agents must be positive")
        if not 0.0 <= self.p <= 1.0:
            raise ModelError(f"requester probability p must lie in [0, 1], got {self.p}")
        for name in ("area", "v_max", "d"):
            if getattr(self, name) < 0:
                raise ModelError(f"{name} must be non-negative")
        if self.area <= 0 or self.slots_per_unit_time < 1 or self.w_max < 1 or self.m_max < 0:
            raise ModelError("area, slots_per_unit_time and w_max must be positive, m_max >= 0")
        if not 0.0 <= self.theta0 <= 1.0:
            raise ModelError("theta0 must lie in [0, 1]")
        if self.type_assignment not in ("quota", "random"):
            raise ModelError(f"unknown type assignment {self.type_assignment!r}")
        if self.trace_every < 1:
            raise ModelError("trace_every must be positive")


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream])


def rate_to_slot_probability(a: float, config: SimConfig, eta: float) -> float:
    """Per-slot acceptance probability of a contract with rate ``a`` tasks per unit time."""
    if not eta > 0:
        raise ModelError("eta must be positive to convert rates to slot probabilities")
    if config.p >= 1.0:
        raise ModelError("p = 1 leaves no potential servers")
    prob = a / (config.slots_per_unit_time * (1.0 - config.p) * eta)
    if prob > 1.0:
        warnings.warn(f"rate {a:.4g} needs slot probability {prob:.4g} > 1; clamped", RuntimeWarning)
        prob = 1.0
    return max(prob, 0.0)


@dataclass
class SimWorld:
    config: SimConfig
    env: RiskEnv
    rng: np.random.Generator
    pos: np.ndarray
    dest: np.ndarray
    speed: np.ndarray
    pause: np.ndarray
    type_idx: np.ndarray
    infected: np.ndarray
    contract: np.ndarray
    utility: np.ndarray
    eta: float
    mode: str = FIXED
    fixed_rates: Optional[np.ndarray] = None
    types: Optional[List[UEType]] = None
    scheme: Optional[RewardScheme] = None
    operator: Optional[OperatorParams] = None
    obedient: bool = False
    slot: int = 0
    # per-slot counters from the last step
    last_assigned: int = 0
    last_potential: int = 0
    last_served: int = 0
    last_overflow: int = 0
    last_operator_gain: float = 0.0
    served_by: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    rates: np.ndarray = field(default_factory=lambda: np.zeros(0))
    prob: np.ndarray = field(default_factory=lambda: np.zeros(0))
    type_c: np.ndarray = field(default_factory=lambda: np.zeros(0))
    type_q: np.ndarray = field(default_factory=lambda: np.zeros(0))
    _br_cache: Dict[Tuple[int, int], float] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.config.n_agents

    @property
    def theta_hat(self) -> float:
        return float(self.infected.mean())

    def slot_probability(self) -> np.ndarray:
        """Per-agent acceptance probability for the current contracts."""
        cfg = self.config
        if self.obedient:
            return np.ones(self.n)
        scale = cfg.slots_per_unit_time * (1.0 - cfg.p) * self.eta
        return np.clip(self.contract / scale, 0.0, 1.0)

    def best_rate(self, k: int) -> float:
        key = (k, int(self.infected.sum()))
        if key not in self._br_cache:
            self._br_cache[key] = best_response(
                self.types[k], self.scheme, self.env, key[1] / self.n
            ).a_star
        return self._br_cache[key]


def _assign_types(cfg: SimConfig, weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    K = len(weights)
    if cfg.type_assignment == "random":
        return rng.choice(K, size=cfg.n_agents, p=weights)
    counts = np.floor(weights * cfg.n_agents).astype(int)
    # largest remainders take the leftover agents
    rem = cfg.n_agents - counts.sum()
    order = np.argsort(-(weights * cfg.n_agents - counts), kind="stable")
    counts[order[:rem]] += 1
    idx = np.repeat(np.arange(K), counts)
    rng.shuffle(idx)
    return idx


def make_world(
    config: SimConfig,
    env: RiskEnv,
    mode: str = FIXED,
    fixed_rates: Optional[Sequence[float]] = None,
    weights: Optional[Sequence[float]] = None,
    types: Optional[Sequence[UEType]] = None,
    scheme: Optional[RewardScheme] = None,
    operator: Optional[OperatorParams] = None,
    eta: Optional[float] = None,
    obedient: bool = False,
) -> SimWorld:
    """Initial world: uniform positions, ``round(theta0 N)`` random agents infected.

    Fixed mode needs ``fixed_rates`` (one per type) and weights (or types);
    adaptive mode needs ``types`` and ``scheme``.
    """
    if mode not in MODES:
        raise ModelError(f"unknown mode {mode!r}")
    if mode == ADAPTIVE and (types is None or scheme is None):
        raise ModelError("adaptive mode needs types and a reward scheme")
    if weights is None:
        weights = [t.w for t in types] if types is not None else [1.0]
    w = np.asarray(weights, dtype=float)
    if mode == FIXED and not obedient:
        if fixed_rates is None:
            raise ModelError("fixed mode needs per-type rates")
        fixed_rates = np.asarray(fixed_rates, dtype=float)
        if fixed_rates.shape != w.shape:
            raise ModelError("fixed_rates and weights must have the same length")
    cfg = config
    rng = _rng(cfg.seed, 0)
    N = cfg.n_agents
    if eta is None:
        eta = cfg.eta if cfg.eta is not None else (1.0 if obedient else estimate_eta(cfg))
    world = SimWorld(
        config=cfg,
        env=env,
        rng=rng,
        pos=rng.random((N, 2)) * cfg.area,
        dest=rng.random((N, 2)) * cfg.area,
        speed=cfg.v_max * (1.0 - rng.random(N)),
        pause=np.zeros(N, dtype=np.int64),
        type_idx=_assign_types(cfg, w, rng),
        infected=np.zeros(N, dtype=bool),
        contract=np.zeros(N),
        utility=np.zeros(N),
        eta=float(eta),
        mode=mode,
        fixed_rates=fixed_rates,
        types=list(types) if types is not None else None,
        scheme=scheme,
        operator=operator,
        obedient=obedient,
        served_by=np.zeros(N, dtype=np.int64),
    )
    if types is not None:
        world.type_c = np.array([t.c for t in types])
        world.type_q = np.array([t.q for t in types])
    n_inf = int(round(cfg.theta0 * N))
    world.infected[rng.choice(N, size=n_inf, replace=False)] = True
    _revise(world)
    return world


def uniforms_per_slot(config: SimConfig) -> int:
    """Size of the block of U(0, 1) draws one slot consumes."""
    return config.n_agents * (10 + config.w_max)


@numba.njit(cache=True)
def _slot_kernel(  # pragma: no cover - compiled
    pos, dest, speed, pause, infected, prob, served_by, u,
    area, v_max, m_max, p, w_max, d2, beta, recover_p, requesters_down,
):
    """One slot of move, roles, matching, acceptance, infection and recovery.

    All randomness comes from ``u``, laid out in blocks of ``N``:
    move (4N), roles, tasks, requester order, picks (w_max N), accept,
    infect, recover. Returns (potential, assigned, served, tasks) counts.
    """
    N = pos.shape[0]
    o_role, o_task, o_order = 4 * N, 5 * N, 6 * N
    o_pick = 7 * N
    o_acc = o_pick + w_max * N
    o_inf, o_rec = o_acc + N, o_acc + 2 * N

    # random waypoint
    for i in range(N):
        if pause[i] > 0:
            pause[i] -= 1
            continue
        dx = dest[i, 0] - pos[i, 0]
        dy = dest[i, 1] - pos[i, 1]
        dist = math.sqrt(dx * dx + dy * dy)
        if dist <= speed[i]:
            pos[i, 0] = dest[i, 0]
            pos[i, 1] = dest[i, 1]
            pause[i] = min(int(u[4 * i] * (m_max + 1)), m_max)
            dest[i, 0] = u[4 * i + 1] * area
            dest[i, 1] = u[4 * i + 2] * area
            speed[i] = v_max * (1.0 - u[4 * i + 3])
        else:
            f = speed[i] / dist
            pos[i, 0] += dx * f
            pos[i, 1] += dy * f

    # roles
    req = np.empty(N, dtype=np.int64)
    free = np.zeros(N, dtype=np.bool_)
    R = 0
    for i in range(N):
        if u[o_role + i] < p and not (requesters_down and infected[i]):
            req[R] = i
            R += 1
        else:
            free[i] = True
    potential = N - R

    # requesters in uniformly random order (Fisher-Yates)
    for i in range(R - 1, 0, -1):
        j = min(int(u[o_order + i] * (i + 1)), i)
        req[i], req[j] = req[j], req[i]

    # each requester takes uniformly random free in-range servers
    assigned_to = np.full(N, -1, dtype=np.int64)
    cand = np.empty(N, dtype=np.int64)
    n_assigned = 0
    n_tasks = 0
    for r in range(R):
        j = req[r]
        take = min(int(u[o_task + j] * w_max), w_max - 1) + 1
        n_tasks += take
        m = 0
        for s in range(N):
            if free[s]:
                dx = pos[j, 0] - pos[s, 0]
                dy = pos[j, 1] - pos[s, 1]
                if dx * dx + dy * dy <= d2:
                    cand[m] = s
                    m += 1
        for k in range(min(take, m)):
            pick = k + min(int(u[o_pick + j * w_max + k] * (m - k)), m - k - 1)
            cand[k], cand[pick] = cand[pick], cand[k]
            free[cand[k]] = False
            assigned_to[cand[k]] = j
            n_assigned += 1

    # acceptance, infection (start-of-slot states), recovery
    n_served = 0
    for s in range(N):
        served_by[s] = 0
        j = assigned_to[s]
        if j >= 0 and not infected[s] and u[o_acc + s] < prob[s]:
            served_by[s] = 1
            n_served += 1
    hit = np.zeros(N, dtype=np.bool_)
    for i in range(N):
        if served_by[i] == 1 and infected[assigned_to[i]]:
            hit[i] = u[o_inf + i] < beta
    for i in range(N):
        if infected[i] and u[o_rec + i] < recover_p:
            infected[i] = False
        elif hit[i]:
            infected[i] = True
    return potential, n_assigned, n_served, n_tasks


def _revise(world: SimWorld):
    if world.obedient:
        if world.prob.size != world.n:
            world.prob = np.ones(world.n)
        return
    if world.mode == FIXED:
        if world.prob.size == world.n:
            return  # contracts never change
        rates = world.fixed_rates
    else:
        rates = np.array([world.best_rate(k) for k in range(len(world.types))])
        if world.prob.size == world.n and np.array_equal(rates, world.rates):
            return
    world.rates = rates
    world.contract = rates[world.type_idx]
    world.prob = world.slot_probability()


def step(world: SimWorld) -> SimWorld:
    """Advance the world by one slot (in place) and return it."""
    cfg, env = world.config, world.env
    S = cfg.slots_per_unit_time
    u = world.rng.random(uniforms_per_slot(cfg))
    potential, assigned, served, n_tasks = _slot_kernel(
        world.pos, world.dest, world.speed, world.pause, world.infected,
        world.prob, world.served_by, u,
        float(cfg.area), float(cfg.v_max), cfg.m_max, cfg.p, cfg.w_max,
        float(cfg.d) ** 2, env.beta, env.delta / S, cfg.requesters_down,
    )
    world.last_potential = potential
    world.last_assigned = assigned
    world.last_served = served
    world.last_overflow = n_tasks - served

    # utilities; compromised UEs receive no reward while recovering
    if world.types is not None and world.scheme is not None:
        r0 = world.scheme.r0
        val = np.array([t.eval(r0 * a) for t, a in zip(world.types, world.rates)])
        c = world.type_c[world.type_idx]
        world.utility += np.where(
            world.infected,
            -world.type_q[world.type_idx] / S,
            val[world.type_idx] / S - c * world.served_by,
        )
    if world.operator is not None and world.scheme is not None:
        paid = world.scheme.r0 * world.contract[~world.infected].sum() / S
        world.last_operator_gain = world.operator.b0 * served - paid
    else:
        world.last_operator_gain = math.nan

    _revise(world)
    world.slot += 1
    return world


def estimate_eta(config: SimConfig, warmup: Optional[int] = None, n_slots: Optional[int] = None) -> float:
    """Probability that a potential server receives an assignment in the obedient process."""
    warmup = config.eta_warmup_slots if warmup is None else warmup
    n_slots = config.eta_slots if n_slots is None else n_slots
    if config.p == 0.0:
        return 0.0
    cfg = SimConfig(**{**asdict(config), "theta0": 0.0, "seed": config.seed, "eta": 1.0})
    world = make_world(cfg, RiskEnv(0.0, 1.0), FIXED, obedient=True, eta=1.0)
    world.rng = _rng(config.seed, 1)
    for _ in range(warmup):
        step(world)
    assigned = potential = 0
    for _ in range(n_slots):
        step(world)
        assigned += world.last_assigned
        potential += world.last_potential
    if potential == 0 or assigned == 0:
        warnings.warn("no potential server was ever assigned a task; eta = 0", RuntimeWarning)
        return 0.0
    return assigned / potential


TRACE_COLUMNS = (
    "slot",
    "theta_hat",
    "mean_participation",
    "effective_participation",
    "operator_utility_rate",
)


@dataclass
class SimTrace:
    slot: np.ndarray
    theta_hat: np.ndarray
    mean_participation: np.ndarray
    effective_participation: np.ndarray
    operator_utility_rate: np.ndarray
    eta: float
    config: SimConfig

    def tail_mean(self, column: str, fraction: float = 0.1) -> float:
        """Average of ``column`` over the last ``fraction`` of trace samples."""
        x = getattr(self, column)
        n = max(1, int(round(len(x) * fraction)))
        return float(np.mean(x[-n:]))

    def to_csv(self, path, extra: Optional[dict] = None):
        extra = extra or {}
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\r\n")
            wr.writerow(list(extra) + list(TRACE_COLUMNS))
            for i in range(len(self.slot)):
                row = [str(int(self.slot[i]))] + [
                    repr(float(getattr(self, c)[i])) for c in TRACE_COLUMNS[1:]
                ]
                wr.writerow(list(extra.values()) + row)


def run(world: SimWorld, horizon_slots: int) -> SimTrace:
    """Step ``world`` for ``horizon_slots`` slots, sampling the trace every ``trace_every``.

    Participation and utility columns are averaged over each sampling window
    and expressed per agent per unit time.
    """
    cfg = world.config
    S, N, every = cfg.slots_per_unit_time, world.n, cfg.trace_every
    rows = []
    served = gain = 0.0
    for i in range(1, horizon_slots + 1):
        step(world)
        served += world.last_served
        gain += world.last_operator_gain
        if i % every == 0 or i == horizon_slots:
            window = i % every or every
            rows.append(
                (
                    world.slot,
                    world.theta_hat,
                    float(world.contract.mean()),
                    served * S / (window * N),
                    gain * S / (window * N),
                )
            )
            served = gain = 0.0
    arr = np.array(rows, dtype=float).reshape(-1, 5)
    return SimTrace(
        slot=arr[:, 0].astype(np.int64),
        theta_hat=arr[:, 1],
        mean_participation=arr[:, 2],
        effective_participation=arr[:, 3],
        operator_utility_rate=arr[:, 4],
        eta=world.eta,
        config=cfg,
    )


def simulate(
    config: SimConfig,
    env: RiskEnv,
    horizon_slots: int,
    mode: str = FIXED,
    fixed_rates: Optional[Sequence[float]] = None,
    weights: Optional[Sequence[float]] = None,
    types: Optional[Sequence[UEType]] = None,
    scheme: Optional[RewardScheme] = None,
    operator: Optional[OperatorParams] = None,
) -> SimTrace:
    """Build a world from ``config`` and run it; deterministic in ``config.seed``."""
    world = make_world(config, env, mode, fixed_rates, weights, types, scheme, operator)
    return run(world, horizon_slots)
