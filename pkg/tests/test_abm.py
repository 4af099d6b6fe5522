import dataclasses
import warnings

import numpy as np
import pytest

from d2d_incentives.abm import (
    ADAPTIVE,
    FIXED,
    SimConfig,
    estimate_eta,
    make_world,
    rate_to_slot_probability,
    run,
    simulate,
    step,
    uniforms_per_slot,
)
from d2d_incentives.bestresp import attack_free_optimum
from d2d_incentives.epidemic import steady_state_fixed_ktype
from d2d_incentives.model import ModelError, OperatorParams, RewardScheme, RiskEnv

from conftest import env_tau, two_types

CFG = SimConfig(eta=0.05)


class TestRateConversion:
    def test_examples(self):
        cfg = SimConfig()
        assert rate_to_slot_probability(0.0, cfg, 0.1) == 0.0
        full = cfg.slots_per_unit_time * (1 - cfg.p) * 0.1
        assert rate_to_slot_probability(full, cfg, 0.1) == 1.0
        assert rate_to_slot_probability(full / 4, cfg, 0.1) == pytest.approx(0.25)

    def test_saturation_warns_and_clamps(self):
        with pytest.warns(RuntimeWarning):
            assert rate_to_slot_probability(1e6, SimConfig(), 0.1) == 1.0

    def test_zero_eta_fails(self):
        with pytest.raises(ModelError):
            rate_to_slot_probability(1.0, SimConfig(), 0.0)

    def test_round_trip_served_rate(self):
        cfg = SimConfig(theta0=0.0, seed=3, trace_every=1000)
        eta = estimate_eta(cfg)
        cfg = dataclasses.replace(cfg, eta=eta)
        tr = simulate(cfg, RiskEnv(0.0, 1.0), 10_000, FIXED, fixed_rates=[2.0])
        served = float(np.mean(tr.effective_participation))
        assert served == pytest.approx(2.0, rel=0.05)


class TestEta:
    def test_no_requesters(self):
        assert estimate_eta(SimConfig(p=0.0)) == 0.0

    def test_no_range_warns(self):
        with pytest.warns(RuntimeWarning):
            assert estimate_eta(SimConfig(d=0.0, v_max=0.0), n_slots=200) == 0.0

    def test_two_agent_closed_form(self):
        # a non-requesting agent is assigned exactly when the other one requests
        cfg = SimConfig(n_agents=2, p=0.5, w_max=1, d=200.0)
        n_slots = 20_000
        eta = estimate_eta(cfg, warmup=0, n_slots=n_slots)
        expected = cfg.p
        sigma = np.sqrt(expected * (1 - expected) / (2 * n_slots * (1 - cfg.p)))
        assert abs(eta - expected) < 3 * sigma

    def test_stable_across_seeds(self):
        etas = [estimate_eta(SimConfig(seed=s)) for s in range(10)]
        assert np.std(etas) / np.mean(etas) < 0.05


class TestStep:
    def test_no_infection_without_transmission(self):
        world = make_world(CFG, RiskEnv(0.0, 1.0), FIXED, fixed_rates=[5.0])
        count = world.infected.sum()
        for _ in range(500):
            step(world)
            assert world.infected.sum() <= count
            count = world.infected.sum()
            assert world.infected.size == world.n

    def test_instant_recovery(self):
        cfg = dataclasses.replace(CFG, slots_per_unit_time=10)
        tr = simulate(cfg, RiskEnv(0.01, 10.0), 2000, FIXED, fixed_rates=[5.0])
        assert tr.theta_hat[-10:].max() < 0.02

    def test_waypoints_stay_inside(self):
        world = make_world(CFG, env_tau(0.3), FIXED, fixed_rates=[2.0])
        for _ in range(2000):
            step(world)
            assert np.all((world.pos >= 0) & (world.pos <= CFG.area))

    def test_servers_take_one_task_and_are_susceptible(self):
        world = make_world(dataclasses.replace(CFG, theta0=0.3), env_tau(0.5), FIXED, fixed_rates=[20.0])
        total = 0
        for _ in range(2000):
            before = world.infected.copy()
            step(world)
            assert world.served_by.max() <= 1
            assert not np.any(world.served_by[before])
            assert world.last_served <= world.last_assigned <= world.last_potential
            total += world.last_served
        assert total > 0

    def test_downed_requesters(self):
        cfg = dataclasses.replace(CFG, theta0=1.0, requesters_down=True)
        world = make_world(cfg, RiskEnv(0.5, 1e-9), FIXED, fixed_rates=[1.0])
        step(world)
        assert world.last_potential == world.n and world.last_assigned == 0

    def test_compromised_agents_pay_risk_cost(self):
        types = two_types()
        cfg = dataclasses.replace(CFG, theta0=1.0)
        world = make_world(cfg, RiskEnv(0.5, 1e-9), FIXED, fixed_rates=[1.0, 1.0], types=types,
                           scheme=RewardScheme(2.2), operator=OperatorParams(6.0))
        step(world)
        np.testing.assert_allclose(world.utility, -5.0 / cfg.slots_per_unit_time)
        assert world.last_operator_gain == 0.0

    def test_uniform_budget(self):
        assert uniforms_per_slot(SimConfig(n_agents=10, w_max=3)) == 130


class TestRun:
    def test_deterministic(self):
        a = simulate(dataclasses.replace(CFG, seed=5), env_tau(0.4), 3000, FIXED, fixed_rates=[3, 5], weights=[0.3, 0.7])
        b = simulate(dataclasses.replace(CFG, seed=5), env_tau(0.4), 3000, FIXED, fixed_rates=[3, 5], weights=[0.3, 0.7])
        c = simulate(dataclasses.replace(CFG, seed=6), env_tau(0.4), 3000, FIXED, fixed_rates=[3, 5], weights=[0.3, 0.7])
        for col in ("theta_hat", "effective_participation"):
            assert np.array_equal(getattr(a, col), getattr(b, col))
        assert not np.array_equal(a.theta_hat, c.theta_hat)

    def test_csv(self, tmp_path):
        tr = simulate(CFG, env_tau(0.4), 500, FIXED, fixed_rates=[3.0])
        path = tmp_path / "trace.csv"
        tr.to_csv(path, {"seed": 0})
        lines = path.read_bytes().split(b"\r\n")
        assert lines[0] == b"seed,slot,theta_hat,mean_participation,effective_participation,operator_utility_rate"
        assert len(lines) == len(tr.slot) + 2

    def test_fixed_two_type_level(self):
        env = env_tau(0.4)
        target = steady_state_fixed_ktype([3, 5], [0.3, 0.7], env).theta_inf
        levels = []
        for seed in range(2):
            cfg = SimConfig(seed=seed)
            tr = simulate(cfg, env, 20_000, FIXED, fixed_rates=[3, 5], weights=[0.3, 0.7])
            levels.append(tr.tail_mean("theta_hat", 0.5))
        assert np.mean(levels) == pytest.approx(target, abs=0.05)

    def test_adaptive_dies_out_below_threshold(self):
        types, scheme = two_types(), RewardScheme(2.2)
        tr = simulate(SimConfig(seed=0), env_tau(0.1), 20_000, ADAPTIVE, types=types, scheme=scheme)
        assert tr.tail_mean("theta_hat", 0.5) < 0.02

    def test_adaptive_participation_below_attack_free(self):
        types, scheme = two_types(), RewardScheme(2.2)
        a_af = sum(t.w * attack_free_optimum(t, scheme) for t in types)
        tr = simulate(SimConfig(seed=1), env_tau(0.4), 5_000, ADAPTIVE, types=types, scheme=scheme)
        x = tr.mean_participation
        assert x.mean() <= a_af + 3 * x.std() / np.sqrt(len(x))
        assert x.max() <= a_af + 1e-12

    def test_bad_mode_arguments(self):
        with pytest.raises(ModelError):
            make_world(CFG, env_tau(0.4), "other")
        with pytest.raises(ModelError):
            make_world(CFG, env_tau(0.4), ADAPTIVE)
        with pytest.raises(ModelError):
            make_world(CFG, env_tau(0.4), FIXED, fixed_rates=[1.0, 2.0], weights=[1.0])


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(n_agents=0), dict(p=1.5), dict(area=0), dict(theta0=2.0),
                                    dict(type_assignment="x"), dict(v_max=-1)])
    def test_rejects(self, kw):
        with pytest.raises(ModelError):
            SimConfig(**kw)

    def test_quota_assignment(self):
        world = make_world(SimConfig(eta=0.05), env_tau(0.4), FIXED, fixed_rates=[3, 5], weights=[0.3, 0.7])
        assert np.bincount(world.type_idx).tolist() == [30, 70]
