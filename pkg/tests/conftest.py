import numpy as np
import pytest

from d2d_incentives.model import (
    LOG_LINEAR,
    POWER,
    EvaluationFunction,
    OperatorParams,
    RewardScheme,
    RiskEnv,
    UEType,
)

SQRT = EvaluationFunction(POWER, 1.0, 0.5)


def two_types(q=5.0):
    """Two power-law segments (k = 1 and 1.5) with the common service cost 0.35."""
    return [
        UEType(EvaluationFunction(POWER, 1.0, 0.5), 0.35, q, 0.3),
        UEType(EvaluationFunction(POWER, 1.5, 0.5), 0.35, q, 0.7),
    ]


@pytest.fixture
def sqrt_type():
    return UEType(SQRT, 0.35, 5.0)


@pytest.fixture
def loglin_type():
    return UEType(EvaluationFunction(LOG_LINEAR, 1.0), 1.0, 4.0)


@pytest.fixture
def pair():
    return two_types()


@pytest.fixture
def scheme():
    return RewardScheme(2.2)


@pytest.fixture
def operator():
    return OperatorParams(6.0)


def env_tau(tau, delta=1.0, rho=1.0):
    return RiskEnv.from_tau(tau, delta, rho)


def random_scenario(rng):
    """Two power-law types with random shape, costs and risk; returns (types, operator, env)."""
    w1 = rng.uniform(0.2, 0.8)
    types = [
        UEType(EvaluationFunction(POWER, rng.uniform(0.5, 2.0), rng.uniform(0.3, 0.7)),
               rng.uniform(0.2, 0.6), rng.uniform(0.5, 8.0), w)
        for w in (w1, 1.0 - w1)
    ]
    return types, OperatorParams(rng.uniform(3.0, 10.0)), RiskEnv.from_tau(float(np.exp(rng.uniform(np.log(0.02), 0.0))))


# criterion number -> list of (part, passed, detail), filled by test_acceptance
ACCEPTANCE = {}


def record(criterion, part, passed, detail):
    ACCEPTANCE.setdefault(criterion, []).append((part, bool(passed), detail))
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        ok = all(p for _, p, _ in parts)
        detail = "; ".join(f"{name}: {'ok' if p else 'FAILED'} ({d})" for name, p, d in parts)
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")
