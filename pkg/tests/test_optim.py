import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from highlightnet.errors import InvalidStateError
from highlightnet.optim import AdamState, adam_step


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 5))
def test_zero_gradient_is_noop_for_any_t(warmup):
    p = {"w": np.array([0.5, -1.0], np.float32)}
    state = AdamState()
    for _ in range(warmup):
        adam_step(p, {"w": np.ones(2, np.float32)}, state, 0.01)
    # Moments from warm-up steps still move w; only a fresh state is a strict no-op.
    fresh = AdamState(t=state.t)
    before = p["w"].copy()
    adam_step(p, {"w": np.zeros(2, np.float32)}, fresh, 0.01)
    np.testing.assert_array_equal(p["w"], before)
    assert fresh.t == warmup + 1


def test_first_step_magnitude():
    p = {"w": np.array([0.0], np.float64)}
    state = AdamState()
    adam_step(p, {"w": np.array([1.0])}, state, 0.001)
    # m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
    assert abs(p["w"][0]) == pytest.approx(0.001 / (1 + 1e-8), rel=1e-12)
    assert state.t == 1


def test_scalar_descent_converges():
    p = {"w": np.array([0.0], np.float32)}
    state = AdamState()
    for _ in range(100):
        adam_step(p, {"w": 2 * (p["w"] - 3)}, state, 0.1)
    assert abs(p["w"][0] - 3) < 0.5


def test_missing_gradient_rejected():
    with pytest.raises(InvalidStateError):
        adam_step({"w": np.zeros(2)}, {}, AdamState(), 0.1)


def test_moment_shapes_follow_params():
    p = {"a": np.zeros((2, 3), np.float32), "b": np.zeros(4, np.float32)}
    state = AdamState()
    adam_step(p, {"a": np.ones((2, 3)), "b": np.ones(4)}, state, 0.1)
    assert state.m["a"].shape == (2, 3) and state.v["b"].shape == (4,)
