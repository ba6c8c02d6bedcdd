import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from logitmixoe.tensor import (
    OpKind, ShapeError, Tensor, add_bias, backward, grad_check, l2_norm, log_softmax, matmul,
    no_grad, op_forward, relu,
)

from _cases import op_cases

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_matmul_identity():
    a = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal(matmul(np.eye(3), a).data, a)


def test_relu_and_l2_examples():
    np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    assert l2_norm(Tensor([3.0, 4.0])).item() == 5.0


def test_shape_errors():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        Tensor(np.ones(3)) + Tensor(np.ones(4))
    with pytest.raises(ShapeError):
        add_bias(np.ones((2, 3)), np.ones(2))


def test_op_forward_accepts_names():
    out = op_forward("relu", [Tensor([-2.0, 3.0])])
    np.testing.assert_array_equal(out.data, [0.0, 3.0])
    assert OpKind("l2_norm") is OpKind.L2_NORM


def test_square_derivative():
    x = Tensor(3.0, requires_grad=True)
    backward(x * x)
    assert x.grad == pytest.approx(6.0, abs=0)


def test_relu_subgradient():
    x = Tensor([-1.0, 2.0], requires_grad=True)
    backward(relu(x).sum())
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])


def test_relu_gradient_at_zero_is_zero():
    x = Tensor([0.0], requires_grad=True)
    backward(relu(x).sum())
    assert x.grad[0] == 0.0


def test_l2_norm_gradient_at_zero_is_finite():
    x = Tensor(np.zeros(3), requires_grad=True)
    backward(l2_norm(x))
    np.testing.assert_array_equal(x.grad, np.zeros(3))


def test_mean_matmul_against_fd():
    rng = np.random.default_rng(3)
    w, x = rng.standard_normal((4, 3)), rng.standard_normal((3, 1))
    assert grad_check(lambda a, b: matmul(a, b).mean(), [w, x]) <= 1e-6


def test_grad_check_examples():
    rng = np.random.default_rng(4)
    assert grad_check(lambda x: x * x, [np.array(3.0)]) <= 1e-8
    onehot = np.eye(5)[2]
    from logitmixoe.losses import cross_entropy
    assert grad_check(lambda z: cross_entropy(z, onehot), [rng.standard_normal(5)]) <= 1e-6
    assert grad_check(lambda a, b: l2_norm(a - b),
                      [rng.standard_normal(4), rng.standard_normal(4)]) <= 1e-6


@pytest.mark.parametrize("name", sorted(op_cases(np.random.default_rng(0))))
def test_every_op_against_fd(name):
    rng = np.random.default_rng(11)
    for _ in range(5):
        f, inputs = op_cases(rng)[name]
        assert grad_check(f, inputs) <= 1e-6, name


def test_backward_accumulates_and_releases_tape():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = (x * x).sum()
    backward(y)
    backward((x * x).sum())
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])
    assert y._node is None


def test_shared_subexpression_gradient():
    x = Tensor(np.array([1.5, -0.5]), requires_grad=True)
    h = x * 2.0
    backward((h + h).sum())
    np.testing.assert_array_equal(x.grad, [4.0, 4.0])


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        backward(x * 2.0)
    with pytest.raises(ValueError):
        backward(Tensor(1.0))


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 3.0
    assert not y.requires_grad and y._node is None


def test_deep_chain_does_not_recurse():
    x = Tensor(1.0, requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    backward(y)
    assert x.grad == 1.0


@given(arrays(np.float64, st.integers(1, 8), elements=finite))
def test_log_softmax_normalizes(z):
    p = np.exp(log_softmax(Tensor(z)).data)
    assert abs(p.sum() - 1.0) < 1e-12


def test_log_softmax_large_logits():
    out = log_softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(out)) and out[0] == 0.0


@settings(max_examples=50)
@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (3, 4), elements=finite))
def test_add_sub_inverse(a, b):
    np.testing.assert_allclose(((Tensor(a) + Tensor(b)) - Tensor(b)).data, a, atol=1e-12)
