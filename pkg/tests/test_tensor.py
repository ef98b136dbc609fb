"""Reverse-mode tape: values, gradients, and graph bookkeeping."""

import numpy as np

from lmae import tensor as T
from lmae.tensor import Parameter, Tensor, backward, constant, tensor


def test_scalar_chain():
    x = tensor(3.0, requires_grad=True)
    y = T.mul(x, x)
    z = T.mul(y, y)
    backward(z)
    assert z.item() == 81.0
    assert x.grad.item() == 4 * 3.0 ** 3


def test_add_sub_neg_grads():
    a = tensor([1.0, 2.0], requires_grad=True)
    b = tensor([4.0, -3.0], requires_grad=True)
    out = T.reduce_sum(T.add(a, T.neg(T.sub(a, b))))
    backward(out)
    # out = sum(a - a + b) = sum(b)
    assert np.allclose(out.data, 1.0)
    assert np.allclose(a.grad, [0.0, 0.0])
    assert np.allclose(b.grad, [1.0, 1.0])


def test_mul_grad_is_other_operand():
    rng = np.random.default_rng(0)
    for _ in range(5):
        av = rng.normal(size=(3, 4))
        bv = rng.normal(size=(3, 4))
        a = tensor(av, requires_grad=True)
        b = tensor(bv, requires_grad=True)
        backward(T.reduce_sum(T.mul(a, b)))
        assert np.allclose(a.grad, bv)
        assert np.allclose(b.grad, av)


def test_scale_shift():
    x = tensor([1.0, -2.0, 0.5], requires_grad=True)
    out = T.reduce_sum(T.shift(T.scale(x, 2.5), -1.0))
    assert np.isclose(out.item(), 2.5 * (1.0 - 2.0 + 0.5) - 3.0)
    backward(out)
    assert np.allclose(x.grad, [2.5, 2.5, 2.5])


def test_matmul_value_and_grads():
    rng = np.random.default_rng(1)
    av = rng.normal(size=(3, 4))
    bv = rng.normal(size=(4, 2))
    gv = rng.normal(size=(3, 2))
    a = tensor(av, requires_grad=True)
    b = tensor(bv, requires_grad=True)
    out = T.matmul(a, b)
    assert np.allclose(out.data, av @ bv)
    backward(T.reduce_sum(T.mul(out, constant(gv))))
    assert np.allclose(a.grad, gv @ bv.T)
    assert np.allclose(b.grad, av.T @ gv)


def test_matmul_batched():
    rng = np.random.default_rng(2)
    av = rng.normal(size=(2, 3, 4))
    bv = rng.normal(size=(2, 4, 5))
    a = tensor(av, requires_grad=True)
    b = tensor(bv, requires_grad=True)
    out = T.matmul(a, b)
    assert out.shape == (2, 3, 5)
    assert np.allclose(out.data, av @ bv)
    backward(T.reduce_sum(out))
    g = np.ones((2, 3, 5))
    assert np.allclose(a.grad, g @ bv.transpose(0, 2, 1))
    assert np.allclose(b.grad, av.transpose(0, 2, 1) @ g)


def test_reshape_transpose_roundtrip_grads():
    rng = np.random.default_rng(3)
    xv = rng.normal(size=(2, 3, 4))
    x = tensor(xv, requires_grad=True)
    y = T.transpose(T.reshape(x, (6, 4)), (1, 0))
    assert y.shape == (4, 6)
    w = rng.normal(size=(4, 6))
    backward(T.reduce_sum(T.mul(y, constant(w))))
    assert np.allclose(x.grad, w.T.reshape(2, 3, 4))


def test_broadcast_to_sums_grad():
    x = tensor([[1.0], [2.0]], requires_grad=True)
    y = T.broadcast_to(x, (2, 5))
    backward(T.reduce_sum(y))
    assert np.allclose(x.grad, [[5.0], [5.0]])


def test_gather_rows_accumulates_duplicates():
    x = tensor(np.arange(12, dtype=np.float64).reshape(4, 3), requires_grad=True)
    idx = np.array([0, 2, 0, 3])
    y = T.gather_rows(x, idx)
    assert np.allclose(y.data, x.data[idx])
    backward(T.reduce_sum(y))
    # row 0 appears twice, row 1 never
    assert np.allclose(x.grad, [[2, 2, 2], [0, 0, 0], [1, 1, 1], [1, 1, 1]])


def test_take_per_row():
    x = tensor(np.arange(12, dtype=np.float64).reshape(3, 4), requires_grad=True)
    idx = np.array([1, 0, 3])
    y = T.take_per_row(x, idx)
    assert np.allclose(y.data, [1.0, 4.0, 11.0])
    backward(T.reduce_sum(y))
    expect = np.zeros((3, 4))
    expect[np.arange(3), idx] = 1.0
    assert np.allclose(x.grad, expect)


def test_concat_splits_grad():
    a = tensor(np.ones((2, 3)), requires_grad=True)
    b = tensor(np.ones((4, 3)), requires_grad=True)
    out = T.concat([a, b], axis=0)
    assert out.shape == (6, 3)
    w = np.arange(18, dtype=np.float64).reshape(6, 3)
    backward(T.reduce_sum(T.mul(out, constant(w))))
    assert np.allclose(a.grad, w[:2])
    assert np.allclose(b.grad, w[2:])


def test_stack_and_grad():
    rows = [tensor(np.full(3, float(k)), requires_grad=True) for k in range(4)]
    out = T.stack(rows, axis=0)
    assert out.shape == (4, 3)
    assert np.allclose(out.data[2], 2.0)
    backward(T.reduce_sum(T.scale(out, 2.0)))
    for row in rows:
        assert np.allclose(row.grad, [2.0, 2.0, 2.0])


def test_softmax_rows_sum_to_one_and_shift_invariance():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(5, 7)) * 3
    s = T.softmax(constant(x), axis=-1).data
    assert np.allclose(s.sum(axis=-1), 1.0)
    s2 = T.softmax(constant(x + 100.0), axis=-1).data
    assert np.allclose(s, s2)


def test_softmax_grad_matches_jacobian():
    rng = np.random.default_rng(5)
    xv = rng.normal(size=(2, 4))
    gv = rng.normal(size=(2, 4))
    x = tensor(xv, requires_grad=True)
    s = T.softmax(x, axis=-1)
    backward(T.reduce_sum(T.mul(s, constant(gv))))
    sv = np.exp(xv - xv.max(axis=-1, keepdims=True))
    sv /= sv.sum(axis=-1, keepdims=True)
    expect = sv * (gv - (gv * sv).sum(axis=-1, keepdims=True))
    assert np.allclose(x.grad, expect)


def test_log_softmax_matches_log_of_softmax():
    rng = np.random.default_rng(6)
    xv = rng.normal(size=(3, 6)) * 2
    ls = T.log_softmax(constant(xv), axis=-1).data
    assert np.allclose(ls, np.log(T.softmax(constant(xv), axis=-1).data))
    x = tensor(xv, requires_grad=True)
    idx = np.array([0, 3, 5])
    backward(T.neg(T.reduce_mean(T.take_per_row(T.log_softmax(x, axis=-1), idx))))
    sv = np.exp(xv - xv.max(axis=-1, keepdims=True))
    sv /= sv.sum(axis=-1, keepdims=True)
    onehot = np.eye(6)[idx]
    assert np.allclose(x.grad, (sv - onehot) / 3.0)


def test_layernorm_statistics():
    rng = np.random.default_rng(7)
    xv = rng.normal(size=(4, 8)) * 5 + 3
    gain = constant(np.ones(8))
    bias = constant(np.zeros(8))
    y = T.layernorm(constant(xv), gain, bias).data
    assert np.allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    assert np.allclose(y.var(axis=-1), 1.0, atol=1e-4)


def test_gelu_known_values():
    # exact gelu: x * Phi(x); Phi(1) = 0.841344746...
    x = constant(np.array([0.0, 1.0, -1.0]))
    y = T.gelu(x).data
    assert y[0] == 0.0
    assert np.isclose(y[1], 0.8413447460685429, atol=1e-6)
    assert np.isclose(y[2], -1.0 + 0.8413447460685429, atol=1e-6)


def test_cos_grad():
    xv = np.array([0.0, np.pi / 2, np.pi])
    x = tensor(xv, requires_grad=True)
    y = T.cos(x)
    assert np.allclose(y.data, np.cos(xv))
    backward(T.reduce_sum(y))
    assert np.allclose(x.grad, -np.sin(xv))


def test_reduce_mean_axis_keepdims():
    xv = np.arange(24, dtype=np.float64).reshape(2, 3, 4)
    x = tensor(xv, requires_grad=True)
    m = T.reduce_mean(x, axis=1, keepdims=True)
    assert m.shape == (2, 1, 4)
    assert np.allclose(m.data, xv.mean(axis=1, keepdims=True))
    backward(T.reduce_sum(m))
    assert np.allclose(x.grad, np.full((2, 3, 4), 1.0 / 3.0))


def test_zero_dim_tensor_stays_zero_dim():
    t = tensor(2.5)
    assert t.shape == ()
    assert T.reduce_sum(tensor(np.ones((3,)))).shape == ()


def test_diamond_graph_accumulates_once_per_path():
    x = tensor(2.0, requires_grad=True)
    y = T.mul(x, x)  # dy/dx = 2x
    z = T.add(y, y)  # two paths into y
    backward(z)
    assert x.grad.item() == 2 * (2 * 2.0)


def test_no_grad_blocks_graph():
    x = tensor(1.0, requires_grad=True)
    with T.no_grad():
        y = T.mul(x, x)
    assert y.requires_grad is False
    try:
        backward(y)
        assert False, "expected ValueError for disconnected loss"
    except ValueError:
        pass


def test_detach_cuts_graph():
    x = tensor([1.0, 2.0], requires_grad=True)
    w = tensor([5.0, 7.0], requires_grad=True)
    y = T.mul(x, x).detach()
    backward(T.reduce_sum(T.mul(y, w)))
    assert x.grad is None
    assert np.allclose(w.grad, y.data)


def test_backward_requires_scalar():
    x = tensor(np.ones(3), requires_grad=True)
    try:
        backward(T.mul(x, x))
        assert False, "expected ValueError for non-scalar backward"
    except ValueError:
        pass


def test_shape_mismatch_rejected():
    a = tensor(np.ones((2, 3)))
    b = tensor(np.ones((3, 2)))
    try:
        T.add(a, b)
        assert False, "expected ValueError for shape mismatch"
    except ValueError:
        pass


def test_parameter_value_setter_preserves_dtype_and_shape():
    p = Parameter("w", np.zeros((2, 2)), dtype=np.float64)
    p.value = np.ones((2, 2), dtype=np.float32)
    assert p.value.dtype == np.float64
    assert p.tensor.requires_grad
    scalar = Parameter("s", 1.5, dtype=np.float64)
    scalar.value = np.float64(2.5)
    assert scalar.value.shape == ()


def test_operator_sugar_matches_functions():
    a = tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = tensor(np.array([3.0, 4.0]), requires_grad=True)
    out = ((a + b) * a - b).sum()
    backward(out)
    # d/da [a^2 + ab - b] = 2a + b, d/db [ab - b] = a - 1
    assert np.allclose(a.grad, 2 * a.data + b.data)
    assert np.allclose(b.grad, a.data - 1.0)


def test_grad_accumulates_across_backward_calls():
    x = tensor(3.0, requires_grad=True)
    backward(T.mul(x, x))
    first = x.grad.item()
    backward(T.mul(x, x))
    assert x.grad.item() == 2 * first
    x.zero_grad()
    assert x.grad is None
