import math

import numpy as np
import pytest
from scipy import optimize

from d2d_incentives.bestresp import (
    attack_free_optimum,
    best_response,
    foc,
    participation_threshold,
)
from d2d_incentives.model import (
    LOG_LINEAR,
    POWER,
    AssumptionViolation,
    EvaluationFunction,
    ModelError,
    RewardScheme,
    RiskEnv,
    UEType,
    foresighted_utility,
    instant_utility,
    instant_utility_d1,
)

from conftest import SQRT


def golden_max(fn, lo, hi, tol=1e-12):
    """Plain golden-section search; kept independent of the library solvers."""
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def random_case(rng, family=POWER):
    if family == POWER:
        ev = EvaluationFunction(POWER, rng.uniform(0.5, 2.0), rng.uniform(0.2, 0.8))
    else:
        ev = EvaluationFunction(LOG_LINEAR, rng.uniform(1.0, 5.0))
    ue = UEType(ev, rng.uniform(0.1, 0.9), rng.uniform(0.5, 8.0))
    scheme = RewardScheme(rng.uniform(1.0, 4.0))
    env = RiskEnv(rng.uniform(0.05, 1.0), rng.uniform(0.5, 2.0), rng.uniform(0.1, 2.0))
    return ue, scheme, env


class TestAttackFreeOptimum:
    def test_sqrt_closed_form(self):
        for r0, c in [(2.2, 0.35), (1.0, 0.5), (3.7, 0.2)]:
            assert attack_free_optimum(UEType(SQRT, c, 1.0), RewardScheme(r0)) == pytest.approx(r0 / (4 * c * c))

    def test_two_type_population(self, pair, scheme):
        assert attack_free_optimum(pair[0], scheme) == pytest.approx(4.4898, abs=1e-4)
        assert attack_free_optimum(pair[1], scheme) == pytest.approx(10.102, abs=1e-3)
        assert attack_free_optimum(pair[1], scheme) == pytest.approx(2.25 * attack_free_optimum(pair[0], scheme))

    def test_is_stationary_point(self):
        rng = np.random.default_rng(1)
        for fam in (POWER, LOG_LINEAR):
            for _ in range(20):
                ue, scheme, _ = random_case(rng, fam)
                if fam == LOG_LINEAR and scheme.r0 * ue.eval.k <= ue.c:
                    continue
                a = attack_free_optimum(ue, scheme)
                assert instant_utility_d1(ue, scheme, a) == pytest.approx(0.0, abs=1e-9)
                # brentq on u'(a) as an independent root finder
                root = optimize.brentq(lambda x: instant_utility_d1(ue, scheme, x), 1e-9, 10 * a + 10, xtol=1e-14)
                assert a == pytest.approx(root, rel=1e-9)

    def test_priced_out_names_clause(self):
        ue = UEType(EvaluationFunction(LOG_LINEAR, 1.0), 3.0, 1.0)
        with pytest.raises(AssumptionViolation) as exc:
            attack_free_optimum(ue, RewardScheme(2.0))
        assert exc.value.clause == "1(3)"

    def test_optimum_beyond_cap_names_clause(self):
        with pytest.raises(AssumptionViolation) as exc:
            attack_free_optimum(UEType(SQRT, 0.35, 1.0), RewardScheme(2.2, 2.2))
        assert exc.value.clause == "1(3)"


class TestParticipationThreshold:
    def test_formula(self, loglin_type):
        env = RiskEnv(0.5, 1.0, 1.0)
        assert participation_threshold(loglin_type, RewardScheme(2.0), env) == pytest.approx(1.0)

    def test_power_family_never_binds(self, sqrt_type, scheme):
        assert participation_threshold(sqrt_type, scheme, RiskEnv(0.4, 1.0)) == math.inf

    def test_break_even_gives_zero(self, loglin_type):
        assert participation_threshold(loglin_type, RewardScheme(1.0), RiskEnv(0.5, 1.0)) == 0.0

    def test_riskless_cases_are_infinite(self, loglin_type):
        assert participation_threshold(loglin_type, RewardScheme(2.0), RiskEnv(0.0, 1.0)) == math.inf
        free = UEType(loglin_type.eval, loglin_type.c, 0.0)
        assert participation_threshold(free, RewardScheme(2.0), RiskEnv(0.5, 1.0)) == math.inf


class TestBestResponse:
    def test_zero_risk_is_attack_free(self, sqrt_type, scheme):
        br = best_response(sqrt_type, scheme, RiskEnv(0.4, 1.0), 0.0)
        assert br.a_star == attack_free_optimum(sqrt_type, scheme)

    def test_reference_case_against_golden_section(self, sqrt_type, scheme):
        env = RiskEnv(0.4, 1.0, 1.0)
        br = best_response(sqrt_type, scheme, env, 0.5)
        a_af = attack_free_optimum(sqrt_type, scheme)
        assert 0 < br.a_star < a_af
        oracle = golden_max(lambda a: foresighted_utility(sqrt_type, scheme, env, a, 0.5), 0.0, 50.0)
        assert br.a_star == pytest.approx(oracle, abs=1e-6)
        assert abs(br.residual) < 1e-10

    def test_at_or_above_threshold_is_zero(self, loglin_type):
        env = RiskEnv(0.5, 1.0, 1.0)
        s = RewardScheme(2.0)
        assert best_response(loglin_type, s, env, 1.0).a_star == 0.0
        assert best_response(loglin_type, s, env, 0.999).a_star > 0.0
        assert not best_response(loglin_type, s, env, 1.0).participates

    def test_theta_out_of_range(self, sqrt_type, scheme):
        with pytest.raises(ModelError):
            best_response(sqrt_type, scheme, RiskEnv(0.4, 1.0), 1.2)

    def test_residual_tolerance(self):
        rng = np.random.default_rng(11)
        for fam in (POWER, LOG_LINEAR):
            for _ in range(30):
                ue, scheme, env = random_case(rng, fam)
                if fam == LOG_LINEAR and scheme.r0 * ue.eval.k <= ue.c:
                    continue
                theta = rng.uniform(0, 1)
                br = best_response(ue, scheme, env, theta)
                if br.a_star > 0:
                    assert abs(br.residual) < 1e-10
                    assert abs(foc(ue, scheme, env, theta, br.a_star)) < 1e-10

    def test_matches_dense_grid_argmax(self):
        rng = np.random.default_rng(5)
        for i in range(50):
            ue, scheme, env = random_case(rng, POWER if i % 2 else LOG_LINEAR)
            if scheme.r0 * ue.eval.marginal_at_zero <= ue.c:
                continue
            theta = rng.uniform(0, 1)
            a_af = attack_free_optimum(ue, scheme)
            grid = np.linspace(0, a_af, 1000)
            vals = [foresighted_utility(ue, scheme, env, a, theta) for a in grid]
            step = grid[1] - grid[0]
            assert best_response(ue, scheme, env, theta).a_star == pytest.approx(grid[int(np.argmax(vals))], abs=step)

    def test_bounded_scalar_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            ue, scheme, env = random_case(rng)
            theta = rng.uniform(0.05, 1)
            a_af = attack_free_optimum(ue, scheme)
            res = optimize.minimize_scalar(
                lambda a: -foresighted_utility(ue, scheme, env, a, theta),
                bounds=(0, a_af), method="bounded", options={"xatol": 1e-10},
            )
            # value-based search resolves the argmax only to about sqrt(eps) * a
            assert best_response(ue, scheme, env, theta).a_star == pytest.approx(res.x, rel=1e-7, abs=1e-6)

    def test_never_exceeds_attack_free(self):
        rng = np.random.default_rng(2)
        for _ in range(40):
            ue, scheme, env = random_case(rng)
            a_af = attack_free_optimum(ue, scheme)
            for theta in np.linspace(0, 1, 11):
                assert best_response(ue, scheme, env, theta).a_star <= a_af


class TestMonotonicity:
    """Comparative statics on random parameter ladders; zero violations allowed."""

    N_LADDERS = 100
    SLACK = 1e-9

    def _ladders(self, seed):
        rng = np.random.default_rng(seed)
        for i in range(self.N_LADDERS):
            yield rng, random_case(rng, POWER if i % 3 else LOG_LINEAR)

    @staticmethod
    def _rate(ue, scheme, env, theta):
        return best_response(ue, scheme, env, theta).a_star

    def test_nonincreasing_in_theta(self):
        for rng, (ue, scheme, env) in self._ladders(100):
            if scheme.r0 * ue.eval.marginal_at_zero <= ue.c:
                continue
            rates = [self._rate(ue, scheme, env, th) for th in np.linspace(0, 1, 15)]
            assert all(b <= a + self.SLACK for a, b in zip(rates, rates[1:]))

    def _ladder(self, seed, field, values):
        for rng, (ue, scheme, env) in self._ladders(seed):
            if scheme.r0 * ue.eval.marginal_at_zero <= ue.c:
                continue
            theta = rng.uniform(0.05, 1.0)
            params = dict(beta=env.beta, delta=env.delta, rho=env.rho)
            out = []
            for v in values:
                e = RiskEnv(**{**params, field: v})
                if theta >= participation_threshold(ue, scheme, e):
                    out.append(None)
                    continue
                out.append(self._rate(ue, scheme, e, theta))
            yield [x for x in out if x is not None]

    def test_nondecreasing_in_rho(self):
        for rates in self._ladder(101, "rho", np.linspace(0.0, 5.0, 12)):
            assert all(b >= a - self.SLACK for a, b in zip(rates, rates[1:]))

    def test_nondecreasing_in_delta(self):
        for rates in self._ladder(102, "delta", np.linspace(0.2, 5.0, 12)):
            assert all(b >= a - self.SLACK for a, b in zip(rates, rates[1:]))

    def test_nonincreasing_in_beta(self):
        for rates in self._ladder(103, "beta", np.linspace(0.01, 1.0, 12)):
            assert all(b <= a + self.SLACK for a, b in zip(rates, rates[1:]))

    def test_optimality_condition_lhs_increasing(self):
        # (u(a) + q) / u'(a) - a increases on (0, a_af)
        rng = np.random.default_rng(104)
        for _ in range(30):
            ue, scheme, _ = random_case(rng)
            a_af = attack_free_optimum(ue, scheme)
            grid = np.linspace(1e-3 * a_af, 0.999 * a_af, 200)
            lhs = [(instant_utility(ue, scheme, a) + ue.q) / instant_utility_d1(ue, scheme, a) - a for a in grid]
            assert np.all(np.diff(lhs) > 0)
