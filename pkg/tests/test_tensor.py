import numpy as np
import pytest

from motility3d.errors import GeometryError, GraphError
from motility3d.tensor import (
    Tensor,
    as_tensor,
    backward,
    from_op,
    is_grad_enabled,
    no_grad,
    zero_grads,
)


def test_construction_defaults_to_float32_contiguous():
    t = Tensor([[1, 2], [3, 4]])
    assert t.dtype == np.float32
    assert t.data.flags["C_CONTIGUOUS"]
    assert t.shape == (2, 2)
    assert not t.requires_grad


def test_construction_preserves_float64():
    t = Tensor(np.zeros((3,), dtype=np.float64))
    assert t.dtype == np.float64


def test_construction_casts_other_dtypes():
    t = Tensor(np.arange(4, dtype=np.int64))
    assert t.dtype == np.float32


def test_construction_rejects_more_than_five_axes():
    with pytest.raises(GeometryError):
        Tensor(np.zeros((1, 1, 1, 1, 1, 1)))


def test_item_requires_scalar():
    assert Tensor(np.float32(2.5)).item() == pytest.approx(2.5)
    with pytest.raises(GeometryError):
        Tensor(np.zeros(3)).item()


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3), requires_grad=True)
    loss = from_op(np.asarray(x.data.sum()), (x,), lambda g: x.accumulate_grad(np.full(x.shape, g, dtype=x.dtype)), "sum")
    backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones((2, 3), dtype=np.float32))


def test_backward_sum_of_squares():
    from motility3d.ops import mul, tensor_sum

    x = Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)
    loss = tensor_sum(mul(x, x))
    backward(loss)
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_backward_rejects_non_scalar():
    from motility3d.ops import mul

    x = Tensor(np.ones(3), requires_grad=True)
    y = mul(x, x)
    with pytest.raises(GraphError):
        backward(y)


def test_backward_consumes_graph():
    from motility3d.ops import mul, tensor_sum

    x = Tensor(np.ones(3), requires_grad=True)
    loss = tensor_sum(mul(x, x))
    backward(loss)
    with pytest.raises(GraphError):
        backward(loss)


def test_grad_accumulates_across_graphs_until_reset():
    from motility3d.ops import tensor_sum

    x = Tensor(np.ones(4), requires_grad=True)
    backward(tensor_sum(x))
    backward(tensor_sum(x))
    np.testing.assert_array_equal(x.grad, np.full(4, 2.0, dtype=np.float32))
    zero_grads([x])
    np.testing.assert_array_equal(x.grad, np.zeros(4, dtype=np.float32))


def test_intermediate_grads_are_released():
    from motility3d.ops import mul, tensor_sum

    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = mul(x, x)
    loss = tensor_sum(y)
    backward(loss)
    assert x.grad is not None
    assert y.grad is None
    assert not y.is_leaf()


def test_shared_subexpression_accumulates_once_per_path():
    from motility3d.ops import add, mul, tensor_sum

    x = Tensor(np.array([3.0]), requires_grad=True)
    y = mul(x, x)
    loss = tensor_sum(add(y, y))
    backward(loss)
    np.testing.assert_allclose(x.grad, [12.0])


def test_no_grad_suppresses_recording():
    from motility3d.ops import mul

    x = Tensor(np.ones(3), requires_grad=True)
    assert is_grad_enabled()
    with no_grad():
        assert not is_grad_enabled()
        y = mul(x, x)
    assert y.is_leaf()
    assert not y.requires_grad


def test_detach_breaks_the_graph():
    from motility3d.ops import mul, tensor_sum

    x = Tensor(np.array([2.0]), requires_grad=True)
    y = mul(x, x).detach()
    assert y.is_leaf()
    loss = tensor_sum(mul(y, y))
    backward(loss)
    assert x.grad is None


def test_as_tensor_passthrough_and_wrap():
    t = Tensor(np.ones(2))
    assert as_tensor(t) is t
    w = as_tensor([1.0, 2.0])
    assert isinstance(w, Tensor)
