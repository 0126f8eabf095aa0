import numpy as np
import pytest

from pcgen import tensor as T
from pcgen.errors import ContractViolation
from pcgen.optim import Adam, adam_step


def test_zero_gradient_leaves_params_unchanged():
    p = np.array([1.5, -2.0])
    state = {}
    adam_step([p], [np.zeros(2)], state, lr=0.1, beta1=0.9, beta2=0.999)
    assert np.array_equal(p, [1.5, -2.0])
    # moments decay toward zero once seeded with a gradient
    adam_step([p], [np.ones(2)], state, lr=0.0, beta1=0.5, beta2=0.5)
    m1 = state["m"][0].copy()
    adam_step([p], [np.zeros(2)], state, lr=0.0, beta1=0.5, beta2=0.5)
    assert np.all(np.abs(state["m"][0]) < np.abs(m1))


def test_first_step_is_minus_lr():
    p = np.array([0.0])
    adam_step([p], [np.ones(1)], {}, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    assert p[0] == pytest.approx(-0.1, abs=1e-8)


def test_hundred_steps_minimize_quadratic():
    # oracle run: minimize (x - 3)^2 from 0 with lr 0.1
    p = np.array([0.0])
    state = {}
    for _ in range(100):
        g = 2.0 * (p - 3.0)
        adam_step([p], [g], state, lr=0.1, beta1=0.9, beta2=0.999)
    assert abs(p[0] - 3.0) < 0.05


def test_shape_mismatch_rejected():
    with pytest.raises(ContractViolation):
        adam_step([np.zeros(2)], [np.zeros(3)], {}, 0.1, 0.9, 0.999)


def test_adam_class_steps_tensors():
    x = T.Tensor(np.array([0.0], dtype=np.float32), requires_grad=True)
    opt = Adam({"x": x}, lr=0.1, beta1=0.0, beta2=0.9)
    for _ in range(60):
        opt.zero_grad()
        T.square(T.sub(T.reduce_sum(x), 3.0)).backward()
        opt.step()
    assert abs(float(x.data[0]) - 3.0) < 0.05
    assert opt.state["t"] == 60


def test_state_tensor_roundtrip():
    x = T.Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam({"x": x}, lr=0.01)
    opt.zero_grad()
    T.reduce_sum(T.square(x)).backward()
    opt.step()
    table = opt.state_tensors("adam/test")
    opt2 = Adam({"x": T.Tensor(np.array([1.0]), requires_grad=True)}, lr=0.01)
    opt2.load_state_tensors("adam/test", table, t=opt.state["t"])
    assert np.allclose(opt2.state["m"][0], opt.state["m"][0])
    assert opt2.state["t"] == 1
