import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rollout_etc.ncs import PlantModel, TokenBucketSpec
from rollout_etc.presets import preset
from rollout_etc.terminal import is_controllable, build_lifted

settings.register_profile(
    "repo", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tms():
    return preset("two_mass_spring")


@pytest.fixture(scope="session")
def tms_constrained():
    return preset("two_mass_spring_constrained")


@pytest.fixture(scope="session")
def reactor():
    return preset("batch_reactor")


def random_plant(rng, n=None, m=None, spec=None, constrained=False):
    """Random plant whose lifted pair is controllable for ``spec``."""
    while True:
        nn = n or int(rng.integers(1, 5))
        mm = m or int(rng.integers(1, 3))
        A = rng.normal(size=(nn, nn))
        A *= rng.uniform(0.3, 1.3) / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-9)
        B = rng.normal(size=(nn, mm))
        L = rng.normal(size=(nn, nn))
        Q = L @ L.T + 0.1 * np.eye(nn)
        Rm = rng.normal(size=(mm, mm))
        R = Rm @ Rm.T + 0.1 * np.eye(mm)
        kw = {}
        if constrained:
            from rollout_etc.ncs import Box

            kw = dict(state_box=Box.symmetric(np.full(nn, 5.0)), input_box=Box.symmetric(np.full(mm, 5.0)))
        plant = PlantModel(A, B, 0.5 * (Q + Q.T), 0.5 * (R + R.T), **kw)
        M = 1 if spec is None else -(-spec.c // spec.g)
        lifted = build_lifted(plant, M)
        if is_controllable(lifted.A_M, lifted.B_M) and is_controllable(plant.A, plant.B):
            return plant


def random_spec(rng, max_M=3):
    while True:
        g = int(rng.integers(1, 4))
        c = int(rng.integers(g, 4 * g + 1))
        if -(-c // g) <= max_M:
            b = int(rng.integers(c, 3 * c + 1))
            return TokenBucketSpec(g, c, b)
