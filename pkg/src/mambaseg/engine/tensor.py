"""Dense float64 tensors on a define-by-run reverse-mode tape.

A ``Graph`` is an append-only list of nodes, rebuilt on every forward pass
(cheapest correct design for the double forward-backward the SAM optimizer
needs). Ops only record themselves while a graph is active, so evaluation
outside a ``with Graph():`` block is plain numpy with zero tape overhead.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np

from ..errors import DetachedNode, NotScalar

_ACTIVE: list["Graph"] = []


def current_graph() -> Optional["Graph"]:
    """The innermost active graph, or None when recording is off."""
    return _ACTIVE[-1] if _ACTIVE else None


class Tensor:
    """N-dimensional float64 array, optionally tracked by the active graph.

    ``requires_grad`` marks a leaf (parameter): backward() will populate
    ``.grad``. Tensors with ``node_id`` None are detached and never receive
    gradient.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "graph", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        # views are fine as op outputs; ops never mutate their inputs in place
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.graph: Graph | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise NotScalar(f"tensor with {self.data.size} elements is not a scalar")

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # arithmetic dunders are attached by engine.ops to avoid a circular import


class _Node:
    __slots__ = ("op_kind", "parent_ids", "backward_fn", "tensor", "nid")

    def __init__(self, op_kind, parent_ids, backward_fn, tensor, nid):
        self.op_kind = op_kind
        self.parent_ids = parent_ids
        self.backward_fn = backward_fn
        self.tensor = tensor
        self.nid = nid


class Graph:
    """Append-only tape; node order is topological by construction."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Graph":
        _ACTIVE.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        assert _ACTIVE and _ACTIVE[-1] is self
        _ACTIVE.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf_id(self, t: Tensor) -> int | None:
        """Node id of ``t`` in this graph, registering leaves lazily.

        Tensors that neither require grad nor already live in this graph are
        constants: they get no id and receive no gradient.
        """
        if t.graph is self and t.node_id is not None:
            return t.node_id
        if not t.requires_grad:
            return None
        return self.add_node("leaf", (), None, t)

    def add_node(self, op_kind: str, parent_ids, backward_fn, tensor: Tensor) -> int:
        nid = len(self.nodes)
        self.nodes.append(_Node(op_kind, tuple(parent_ids), backward_fn, tensor, nid))
        tensor.node_id = nid
        tensor.graph = self
        return nid

    def backward(
        self, loss: Tensor, params: Iterable[Tensor] = ()
    ) -> dict[int, np.ndarray]:
        """Reverse-accumulate d(loss)/d(node) for every node in the tape.

        Leaf tensors (requires_grad) get their ``.grad`` accumulated; listed
        ``params`` that the loss never touched end up with a zero gradient.
        Returns the full node_id -> gradient map.
        """
        if loss.graph is not self or loss.node_id is None:
            raise DetachedNode("loss tensor is not part of this graph")
        if loss.data.size != 1:
            raise NotScalar(f"loss has {loss.data.size} elements")
        for p in params:  # ensure every parameter is present as a leaf
            self.leaf_id(p)

        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.node_id] = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = grads[node.nid]
            if g is None or node.backward_fn is None:
                continue
            for pid, contrib in zip(node.parent_ids, node.backward_fn(g)):
                if pid is None or contrib is None:
                    continue
                if grads[pid] is None:
                    grads[pid] = np.asarray(contrib, dtype=np.float64)
                else:
                    grads[pid] = grads[pid] + contrib

        out: dict[int, np.ndarray] = {}
        for node in self.nodes:
            g = grads[node.nid]
            t = node.tensor
            if t.requires_grad:
                if g is None:
                    g = np.zeros_like(t.data)
                t.grad = g.copy() if t.grad is None else t.grad + g
            if g is not None:
                out[node.nid] = g
        return out


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def register_op(
    op_kind: str,
    out_data: np.ndarray,
    parents: tuple[Tensor, ...],
    backward_builder: Callable[[], Callable],
) -> Tensor:
    """Wrap ``out_data`` in a Tensor and record the op if a graph is active.

    ``backward_builder`` is only invoked when recording, so forward-only
    evaluation never pays for closure construction.
    """
    out = Tensor(out_data)
    g = current_graph()
    if g is None:
        return out
    tracked = any(
        p.requires_grad or (p.graph is g and p.node_id is not None) for p in parents
    )
    if not tracked:
        return out
    pids = [g.leaf_id(p) for p in parents]
    g.add_node(op_kind, pids, backward_builder(), out)
    return out
