import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_diff, grad_close
from mabretrain.errors import DimensionError, InvalidInputError
from mabretrain.nn import LayerSpec, NetworkParams, backward, forward, loss_value, mlp_specs
from mabretrain.regularizers import (Regularizer, RegularizerConfig, RegularizerState, estimate_importance,
                                     objective_and_gradient, penalty)


def linear_neuron(w=3.0):
    p = NetworkParams([LayerSpec(1, 1, "identity")])
    p.weights[0][0, 0] = w
    return p


def test_hand_importance_24():
    # y = w x, x = 2, w = 3: d(y^2)/dw = 2 y x = 24, d(y^2)/db = 2 y = 12
    state = estimate_importance(linear_neuron(), np.array([[2.0]]), kind="mas")
    assert state.param_importance.tolist() == [24.0, 12.0]
    nc = estimate_importance(linear_neuron(), np.array([[2.0]]), kind="nc")
    assert nc.param_importance.tolist() == [24.0, 12.0]
    assert nc.neuron_importance[0].tolist() == [12.0]  # d(y^2)/dy = 2y


def test_importance_is_mean_of_abs():
    p = linear_neuron()
    x = np.array([[2.0], [-1.0]])
    s = estimate_importance(p, x, kind="mas")
    # per sample |2 w x^2| = 24, 6; |2 w x| = 12, 6
    assert np.allclose(s.param_importance, [15.0, 9.0])


def test_zero_output_layer_zero_importance():
    rng = np.random.default_rng(0)
    p = NetworkParams.init(mlp_specs(3, [4], 2, output_activation="identity"), rng)
    p.theta[p.layer_slice(1)] = 0.0
    s = estimate_importance(p, rng.normal(size=(10, 3)), kind="nc")
    assert not s.param_importance.any()
    assert all(not w.any() for w in s.neuron_importance)


def test_ewc_at_optimum_is_zero():
    p = linear_neuron(w=3.0)
    x, y = np.array([[2.0]]), np.array([[6.0]])
    s = estimate_importance(p, x, y, kind="ewc", loss="mse")
    assert np.all(np.abs(s.param_importance) <= 1e-8)
    assert s.neuron_importance == []


def test_ewc_is_mean_squared_grad():
    rng = np.random.default_rng(2)
    p = NetworkParams.init(mlp_specs(3, [4], 2, "tanh"), rng)
    x, y = rng.normal(size=(7, 3)), rng.integers(2, size=7)
    s = estimate_importance(p, x, y, kind="ewc", chunk=3)
    ref = np.mean([backward(p, forward(p, x[i:i + 1]), y[i:i + 1])[1] ** 2 for i in range(7)], axis=0)
    assert np.allclose(s.param_importance, ref, rtol=1e-12, atol=1e-15)


def test_empty_data_rejected():
    with pytest.raises(InvalidInputError):
        estimate_importance(linear_neuron(), np.zeros((0, 1)))


def test_permutation_invariant():
    rng = np.random.default_rng(4)
    p = NetworkParams.init(mlp_specs(3, [4], 2), rng)
    x = rng.normal(size=(50, 3))
    a = estimate_importance(p, x, kind="nc", chunk=8)
    b = estimate_importance(p, x[rng.permutation(50)], kind="nc", chunk=8)
    assert np.allclose(a.param_importance, b.param_importance, rtol=1e-12)


def _state_for(p, rng):
    return RegularizerState(p.copy(), rng.random(p.size) + 0.1,
                            [rng.random(s.output_dim) + 0.1 for s in p.specs], 1)


def test_beta_term_hand_value():
    p = linear_neuron(w=1.5)
    anchor = linear_neuron(w=1.0)
    state = RegularizerState(anchor, np.array([2.0, 0.0]), [np.zeros(1)], 1)
    pen = penalty(p, None, None, state, RegularizerConfig("mas", alpha=0.0, beta=0.1))
    assert pen.value == pytest.approx(0.05, abs=1e-15)
    assert pen.param_grad[0] == pytest.approx(0.2, abs=1e-15)


def test_at_anchor_zero():
    rng = np.random.default_rng(0)
    p = NetworkParams.init(mlp_specs(3, [4], 2), rng)
    reg = Regularizer(RegularizerConfig("nc", 0.5, 0.5), _state_for(p, rng))
    pen = reg.terms(p, forward(p, rng.normal(size=(6, 3))))
    assert pen.value == 0.0
    assert not pen.param_grad.any() and all(not g.any() for g in pen.act_grads)


@pytest.mark.parametrize("kind", ["nc", "ewc", "mas"])
def test_full_objective_finite_difference(kind):
    rng = np.random.default_rng(11)
    p = NetworkParams.init(mlp_specs(3, [5], 2, "tanh"), rng)
    state = _state_for(p, rng)
    p.theta += rng.normal(scale=0.3, size=p.size)
    reg = Regularizer(RegularizerConfig(kind, 0.7, 0.4), state)
    x, y = rng.normal(size=(6, 3)), rng.integers(2, size=6)
    obj = objective_and_gradient(p, x, y, regularizer=reg)
    num = central_diff(lambda: objective_and_gradient(p, x, y, regularizer=reg).value, p.theta)
    assert grad_close(obj.grad, num)
    pen_only = obj.value - loss_value(p, x, y)
    assert pen_only > 0


def test_state_shape_mismatch():
    p = linear_neuron()
    bad = RegularizerState(p.copy(), np.zeros(5), [], 1)
    with pytest.raises(DimensionError):
        penalty(p, None, None, bad, RegularizerConfig("mas"))


def test_none_equals_zero_weights():
    rng = np.random.default_rng(1)
    p = NetworkParams.init(mlp_specs(3, [4], 2), rng)
    x, y = rng.normal(size=(6, 3)), rng.integers(2, size=6)
    state = _state_for(p, rng)
    p.theta += 0.1
    a = objective_and_gradient(p, x, y, regularizer=Regularizer(RegularizerConfig("nc", 0, 0), state))
    b = objective_and_gradient(p, x, y, regularizer=Regularizer(RegularizerConfig("none"), None))
    c = objective_and_gradient(p, x, y)
    assert np.array_equal(a.grad, b.grad) and np.array_equal(b.grad, c.grad)
    assert a.value == b.value == c.value


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1.01, 10.0))
def test_beta_term_scales_quadratically(seed, c):
    rng = np.random.default_rng(seed)
    p = NetworkParams.init(mlp_specs(2, [3], 2), rng)
    state = _state_for(p, rng)
    cfg = RegularizerConfig("mas", 0.0, 0.3)
    d = rng.normal(size=p.size)
    near = p.like(state.anchor_params.theta + d)
    far = p.like(state.anchor_params.theta + c * d)
    v1 = penalty(near, None, None, state, cfg).value
    v2 = penalty(far, None, None, state, cfg).value
    assert v1 >= 0
    assert v2 == pytest.approx(c * c * v1, rel=1e-9)
