import math

import numpy as np
import pytest

from fusioncolor.adam import AdamState, adam_step
from fusioncolor.tensor import GradientError, Tensor


def _param(value, grad):
    p = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
    p.grad = np.array(grad, dtype=np.float64)
    return p


def test_zero_gradient_leaves_parameters():
    p = _param([1.0, -2.0], [0.0, 0.0])
    adam_step({"w": p}, AdamState())
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_first_step_magnitude():
    p = _param(0.5, 1.0)
    adam_step({"w": p}, AdamState(learning_rate=0.001))
    # m_hat = v_hat = 1 after bias correction
    assert 0.5 - p.data == pytest.approx(0.001 / (1 + 1e-8), rel=1e-12)


def test_matches_scalar_recurrence():
    rng = np.random.default_rng(3)
    grads = rng.normal(size=6)
    p = _param(0.2, 0.0)
    state = AdamState(learning_rate=0.01)
    theta, m, v = 0.2, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        p.grad = np.array(g)
        adam_step({"w": p}, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta -= 0.01 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert float(p.data) == pytest.approx(theta, rel=1e-12)
    assert state.t == len(grads)
    assert np.all(state.v["w"] >= 0)


def test_constant_gradient_decreases_monotonically():
    p = _param(1.0, 1.0)
    state = AdamState()
    history = [float(p.data)]
    for _ in range(2):
        adam_step({"w": p}, state)
        history.append(float(p.data))
    assert history[0] > history[1] > history[2]


def test_missing_gradient_rejected():
    p = Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(GradientError):
        adam_step({"w": p}, AdamState())


def test_state_buffers_match_parameter_shape():
    p = _param(np.ones((2, 3)), np.ones((2, 3)))
    state = AdamState()
    adam_step({"w": p}, state)
    assert state.m["w"].shape == state.v["w"].shape == (2, 3)


def test_float32_parameters_stay_float32():
    p = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    p.grad = np.ones(3, dtype=np.float32)
    adam_step({"w": p}, AdamState())
    assert p.dtype == np.float32
