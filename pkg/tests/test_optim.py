import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from weightrelay.errors import ConfigError
from weightrelay.optim import AdamState, LrSchedule, Optimizer, adam_step, lr_at, sgd_step

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_sgd_step_example():
    np.testing.assert_allclose(sgd_step([1.0, 2.0], [0.5, -1.0], 0.1), [0.95, 2.1])


def test_sgd_zero_rate_is_identity():
    w = np.array([1.5, -2.0])
    assert np.array_equal(sgd_step(w, [9.0, 9.0], 0.0), w)


def test_sgd_length_mismatch():
    with pytest.raises(ValueError):
        sgd_step([1.0, 2.0], [1.0], 0.1)


@given(st.integers(0, 10_000), st.integers(1, 200))
def test_sequential_steps_telescope(seed, n):
    rng = np.random.default_rng(seed)
    w0 = rng.normal(size=7)
    w = w0.copy()
    total = np.zeros(7)
    for _ in range(n):
        g, a = rng.normal(size=7), rng.uniform(0, 0.1)
        w = sgd_step(w, g, a)
        total = total + a * g
    assert np.max(np.abs((w0 - w) - total)) < 1e-12


@given(hnp.arrays(np.float64, 5, elements=finite), hnp.arrays(np.float64, 5, elements=finite),
       hnp.arrays(np.float64, 5, elements=finite), finite, finite)
def test_sgd_linear_in_gradient(w, g1, g2, a, b):
    lhs = sgd_step(w, a * g1 + b * g2, 0.01)
    np.testing.assert_allclose(lhs, w - 0.01 * (a * g1 + b * g2), rtol=0, atol=1e-9)


def test_adam_zero_gradient_first_step():
    st0 = AdamState.zeros(3)
    w = np.array([1.0, -2.0, 3.0])
    w1, st1 = adam_step(st0, w, np.zeros(3), 0.1)
    assert np.array_equal(w1, w)
    assert np.all(st1.m == 0) and np.all(st1.v == 0) and st1.step == 1


def test_adam_constant_gradient_step_approaches_rate():
    state = AdamState.zeros(1)
    w = np.array([0.0])
    alpha = 1e-3
    for _ in range(10_000):
        prev = w
        w, state = adam_step(state, w, np.array([0.7]), alpha)
    assert abs(abs(w[0] - prev[0]) - alpha) / alpha < 0.01


def test_adam_deterministic():
    state = AdamState.zeros(2)
    a = adam_step(state, np.ones(2), np.array([0.3, -0.2]), 0.01)
    b = adam_step(state, np.ones(2), np.array([0.3, -0.2]), 0.01)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1].m, b[1].m)


@given(hnp.arrays(np.float64, 6, elements=st.floats(-10, 10).filter(lambda x: abs(x) > 1e-6)))
def test_adam_without_moments_moves_against_gradient(g):
    state = AdamState.zeros(6, beta1=0.0, beta2=0.0, eps=1e6)
    w = np.zeros(6)
    w1, _ = adam_step(state, w, g, 1.0)
    assert np.all(np.sign(w - w1) == np.sign(g))
    # with eps dominating the step is a scaled SGD step
    np.testing.assert_allclose(w - w1, g / (np.abs(g) + 1e6), rtol=1e-12)


def test_optimizer_state_persists_unless_reset():
    g = np.array([1.0])
    keep = Optimizer("adam")
    keep.step(np.zeros(1), g, 0.1)
    keep.begin_round()
    assert keep.state.step == 1
    reset = Optimizer("adam", reset_each_round=True)
    reset.step(np.zeros(1), g, 0.1)
    reset.begin_round()
    assert reset.state is None


def test_unknown_optimizer():
    with pytest.raises(ConfigError):
        Optimizer("rmsprop")


def test_piecewise_schedule_lookup():
    sched = LrSchedule.piecewise([(0, 40, 1e-3), (41, 60, 1e-4)])
    assert lr_at(sched, 45) == 1e-4
    assert lr_at(sched, 40) == 1e-3
    with pytest.raises(ConfigError):
        lr_at(sched, 999)


def test_constant_schedule():
    sched = LrSchedule.constant(0.0002)
    assert all(lr_at(sched, e) == 0.0002 for e in (0, 7, 10_000))


@pytest.mark.parametrize("ranges", [[(1, 5, 0.1)], [(0, 5, 0.1), (7, 9, 0.1)], [(0, 5, 0.1), (3, 9, 0.1)], [(0, 5, -1.0)]])
def test_schedule_must_tile_from_zero(ranges):
    with pytest.raises(ConfigError):
        LrSchedule.piecewise(ranges)


def test_schedule_parse():
    assert LrSchedule.parse("0.05") == LrSchedule.constant(0.05)
    assert LrSchedule.parse("0-40:1e-3,41-60:1e-4") == LrSchedule.piecewise([(0, 40, 1e-3), (41, 60, 1e-4)])
