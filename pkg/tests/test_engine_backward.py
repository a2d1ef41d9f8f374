"""Tape semantics: backward contracts, linearity, detachment."""

import numpy as np
import pytest

from mambaseg.engine import Graph, Tensor, ops
from mambaseg.errors import DetachedNode, NotScalar


def test_sum_of_squares_gradient():
    th = Tensor([1.0, 2.0], requires_grad=True)
    with Graph() as g:
        loss = ops.sum(th * th)
        g.backward(loss, [th])
    np.testing.assert_allclose(th.grad, [2.0, 4.0])


def test_constant_loss_gives_zero_grad():
    th = Tensor([1.0, 2.0], requires_grad=True)
    other = Tensor([5.0], requires_grad=True)
    with Graph() as g:
        loss = ops.sum(other * other)  # constant w.r.t. th
        g.backward(loss, [th])
    np.testing.assert_array_equal(th.grad, [0.0, 0.0])


def test_not_scalar_loss_rejected():
    th = Tensor([1.0, 2.0], requires_grad=True)
    with Graph() as g:
        vec = th * th
        with pytest.raises(NotScalar):
            g.backward(vec, [th])


def test_detached_loss_rejected():
    th = Tensor([1.0], requires_grad=True)
    loss = Tensor([2.0])  # built outside any graph
    with Graph() as g:
        with pytest.raises(DetachedNode):
            g.backward(loss, [th])


def test_detached_tensor_never_receives_gradient():
    th = Tensor([1.0, 2.0], requires_grad=True)
    const = Tensor([3.0, 4.0])  # requires_grad False: stays off the tape
    with Graph() as g:
        loss = ops.sum(th * const)
        g.backward(loss, [th])
    assert const.grad is None
    assert const.node_id is None
    np.testing.assert_allclose(th.grad, [3.0, 4.0])


def test_backward_linearity():
    rng = np.random.default_rng(11)
    data = rng.standard_normal(6)

    def grads_of(fn):
        th = Tensor(data.copy(), requires_grad=True)
        with Graph() as g:
            g.backward(fn(th), [th])
        return th.grad

    g1 = grads_of(lambda t: ops.sum(t * t))
    g2 = grads_of(lambda t: ops.sum(ops.exp(t)))
    g12 = grads_of(lambda t: ops.sum(t * t) + ops.sum(ops.exp(t)))
    np.testing.assert_allclose(g12, g1 + g2, rtol=1e-12, atol=1e-12)


def test_gradient_accumulates_across_backwards():
    th = Tensor([2.0], requires_grad=True)
    for _ in range(2):
        with Graph() as g:
            g.backward(ops.sum(th * th), [th])
    np.testing.assert_allclose(th.grad, [8.0])  # 4.0 accumulated twice


def test_gradient_map_keys_cover_reached_nodes():
    th = Tensor([1.0, 2.0], requires_grad=True)
    with Graph() as g:
        mid = th * th
        loss = ops.sum(mid)
        gm = g.backward(loss, [th])
    assert set(gm) == {th.node_id, mid.node_id, loss.node_id}
    np.testing.assert_allclose(gm[th.node_id], [2.0, 4.0])


def test_no_graph_means_no_tape():
    th = Tensor([1.0], requires_grad=True)
    out = ops.sum(th * th)  # evaluated outside any Graph context
    assert out.node_id is None
    assert float(out.data) == 1.0


def test_reused_parameter_across_graphs():
    th = Tensor([3.0], requires_grad=True)
    with Graph() as g1:
        g1.backward(ops.sum(th * th), [th])
    first = th.grad.copy()
    th.grad = None
    with Graph() as g2:
        g2.backward(ops.sum(th * th * th), [th])
    np.testing.assert_allclose(first, [6.0])
    np.testing.assert_allclose(th.grad, [27.0])
