import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rollout_etc.errors import InfeasibleTransmission, ValidationError
from rollout_etc.ncs import (
    Box,
    OverallInput,
    OverallState,
    PlantModel,
    TokenBucketSpec,
    base_period,
    bucket_step,
    in_constraint_set,
    overall_step,
    stage_cost,
    sustainable_transmissions,
)
from rollout_etc.presets import batch_reactor_printed, two_mass_spring_printed


@st.composite
def specs(draw):
    g = draw(st.integers(1, 5))
    c = draw(st.integers(g, 20))
    b = draw(st.integers(c, 40))
    return TokenBucketSpec(g, c, b)


def test_base_period_examples():
    assert base_period(TokenBucketSpec(1, 6, 22)) == 6
    assert base_period(TokenBucketSpec(3, 8, 22)) == 3
    assert base_period(TokenBucketSpec(4, 4, 9)) == 1


@given(specs())
def test_base_period_is_ceiling(spec):
    M = base_period(spec)
    assert (M - 1) * spec.g < spec.c <= M * spec.g


def test_bucket_step_examples():
    assert bucket_step(5, 1, TokenBucketSpec(1, 6, 22)) == 0
    assert bucket_step(22, 0, TokenBucketSpec(3, 8, 22)) == 22
    assert bucket_step(6, 1, TokenBucketSpec(3, 8, 22)) == 1


def test_bucket_step_rejects_missing_tokens():
    with pytest.raises(InfeasibleTransmission):
        bucket_step(4, 1, TokenBucketSpec(1, 6, 22))


@given(specs(), st.data())
def test_bucket_step_stays_in_range(spec, data):
    beta = data.draw(st.integers(0, spec.b))
    gamma = data.draw(st.sampled_from([0, 1]))
    if gamma == 1 and beta + spec.g - spec.c < 0:
        with pytest.raises(InfeasibleTransmission):
            bucket_step(beta, gamma, spec)
    else:
        nxt = bucket_step(beta, gamma, spec)
        assert isinstance(nxt, int)
        assert 0 <= nxt <= spec.b


@given(specs(), st.data())
def test_periodic_transmission_never_drains(spec, data):
    M = base_period(spec)
    beta = data.draw(st.integers(spec.c - spec.g, spec.b))
    for k in range(10 * M):
        beta = bucket_step(beta, 1 if k % M == 0 else 0, spec)
        assert beta >= 0


def test_spec_validation_collects_problems():
    with pytest.raises(ValidationError):
        TokenBucketSpec(0, 6, 22)
    with pytest.raises(ValidationError):
        TokenBucketSpec(3, 2, 22)
    with pytest.raises(ValidationError) as exc:
        TokenBucketSpec(1, 6, 5)
    assert "b must be >= c" in str(exc.value)
    with pytest.raises(ValidationError):
        TokenBucketSpec(1.5, 6, 22)


def test_plant_validation():
    with pytest.raises(ValidationError) as exc:
        PlantModel(np.eye(2), np.ones((3, 1)), -np.eye(2), np.eye(2))
    msgs = exc.value.violations
    assert any("B must have 2 rows" in m for m in msgs)
    assert any("Q must be symmetric positive definite" in m for m in msgs)
    assert any("R must be 1x1" in m for m in msgs)
    with pytest.raises(ValidationError):
        PlantModel(np.eye(1), np.eye(1), np.eye(1), np.eye(1), state_box=Box([0.0], [1.0]))


def _tms_state():
    return OverallState([1, 0, 1, 0], [0], 5)


def test_overall_step_hold_branch():
    plant = two_mass_spring_printed()
    spec = TokenBucketSpec(1, 6, 22)
    xi = OverallState([1, 0, 1, 0], [0.7], 5)
    nxt = overall_step(xi, OverallInput.hold(1), plant, spec)
    assert np.allclose(nxt.x, plant.A @ xi.x + plant.B @ xi.u, atol=0, rtol=0)
    assert nxt.u[0] == 0.7
    assert nxt.beta == 6


def test_overall_step_matrix_product_oracle():
    plant = two_mass_spring_printed()
    spec = TokenBucketSpec(1, 6, 22)
    nxt = overall_step(_tms_state(), OverallInput.hold(1), plant, spec)
    # x = e1 + e3, so A x is the sum of the first and third columns
    expected = [plant.A[i][0] + plant.A[i][2] for i in range(4)]
    assert np.allclose(nxt.x, expected, rtol=0, atol=1e-15)


def test_overall_step_origin_transmit():
    plant = batch_reactor_printed()
    spec = TokenBucketSpec(3, 8, 22)
    xi = OverallState(np.zeros(4), np.zeros(2), 10)
    nxt = overall_step(xi, OverallInput(np.zeros(2), 1), plant, spec)
    assert np.all(nxt.x == 0) and np.all(nxt.u == 0)
    assert nxt.beta == 5


def test_overall_step_propagates_infeasible():
    plant = batch_reactor_printed()
    with pytest.raises(InfeasibleTransmission):
        overall_step(OverallState(np.zeros(4), np.zeros(2), 2), OverallInput(np.ones(2), 1), plant,
                     TokenBucketSpec(3, 8, 22))


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.sampled_from([0, 1]))
def test_overall_step_input_update(v, gamma):
    plant = batch_reactor_printed()
    spec = TokenBucketSpec(3, 8, 22)
    xi = OverallState([0.1, 0.2, -0.3, 0.4], [1.0, -1.0], 20)
    nxt = overall_step(xi, OverallInput(v, gamma), plant, spec)
    assert np.array_equal(nxt.u, np.asarray(v) if gamma else xi.u)


def test_input_zeroed_when_holding():
    pi = OverallInput([3.0, 4.0], 0)
    assert np.all(pi.v == 0)
    with pytest.raises(ValidationError):
        OverallInput([1.0], 2)


def test_stage_cost_examples():
    plant = two_mass_spring_printed()
    assert stage_cost(OverallState(np.zeros(4), [0], 0), OverallInput([0], 1), plant) == 0
    assert stage_cost(_tms_state(), OverallInput.hold(1), plant) == pytest.approx(20.0, abs=1e-12)
    xi = OverallState([0.3, 0.1, 0, 0], [2.0], 9)
    assert stage_cost(xi, OverallInput([2.0], 1), plant) == stage_cost(xi, OverallInput.hold(1), plant)


# exact zeros or magnitudes whose squares do not underflow
coords = st.one_of(st.just(0.0), st.floats(1e-3, 3), st.floats(-3, -1e-3))


@given(st.lists(coords, min_size=4, max_size=4), coords, coords, st.sampled_from([0, 1]))
def test_stage_cost_nonnegative(x, u, v, gamma):
    plant = two_mass_spring_printed()
    xi = OverallState(x, [u], 0)
    pi = OverallInput([v], gamma)
    val = stage_cost(xi, pi, plant)
    assert val >= 0
    applied = v if gamma else u
    if val == 0:
        assert np.all(np.asarray(x) == 0) and applied == 0


def test_in_constraint_set():
    spec = TokenBucketSpec(1, 6, 22)
    free = two_mass_spring_printed()
    boxed = two_mass_spring_printed(constrained=True)
    assert in_constraint_set(OverallState([100, 0, 0, 0], [50], 0), free, spec)
    assert not in_constraint_set(OverallState([3, 0, 0, 0], [0], 0), boxed, spec)
    assert in_constraint_set(OverallState([2, -2, 5, -5], [12], 22), boxed, spec)
    assert not in_constraint_set(OverallState([0, 0, 0, 0], [0], -1), free, spec)
    assert not in_constraint_set(OverallState([0, 0, 0, 0], [13], 3), boxed, spec)


def test_sustainable_transmissions():
    assert sustainable_transmissions(5, 12, TokenBucketSpec(1, 6, 22)) == pytest.approx(17 / 6)


def test_values_are_read_only():
    xi = _tms_state()
    with pytest.raises(ValueError):
        xi.x[0] = 2.0
