"""Central-difference gradient auditing.

grad_check is the acceptance oracle for every differentiable operation: it
compares tape gradients against (f(x+h) - f(x-h)) / 2h entry by entry. The
registry below builds randomized probe instances for each registered op kind
so the whole primitive surface can be swept with one call.
"""

from __future__ import annotations

import zlib
from typing import Callable, Iterable

import numpy as np

from ..errors import InvalidAttr, NonFinite
from . import ops
from .tensor import Graph, Tensor, zero_grads


def grad_check(
    f: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-6
) -> float:
    """Max relative error between tape and central-difference gradients.

    f must be a deterministic scalar-valued closure over ``params``. Error is
    |analytic - numeric| / max(1, |numeric|), maximized over all entries of
    all parameters.
    """
    if not (0.0 < h <= 1e-3):
        raise InvalidAttr(f"step h={h} outside (0, 1e-3]")
    params = list(params)
    zero_grads(params)
    with Graph() as g:
        loss = f()
        g.backward(loss, params)
    if not np.isfinite(loss.data).all():
        raise NonFinite("objective is non-finite at the evaluation point")

    worst = 0.0
    for p in params:
        analytic = p.grad
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFinite(f"objective non-finite at probe for entry {i}")
            numeric = (fp - fm) / (2.0 * h)
            err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    zero_grads(params)
    return worst


def _scalarize(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Contract an op output against random-but-fixed weights; conditions the
    check better than a bare sum. The draw is independent of ``rng`` state so
    repeated closure calls stay deterministic."""
    del rng
    w = Tensor(np.random.default_rng(0xC0FFEE).standard_normal(out.shape))
    return ops.sum(ops.mul(out, w))


def _t(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def _case_binary(kind):
    def build(rng):
        # exercise broadcasting on a random subset of draws
        if rng.random() < 0.5:
            a, b = _t(rng, 3, 4), _t(rng, 3, 4)
        else:
            a, b = _t(rng, 2, 3, 4), _t(rng, 1, 4)
        if kind == "div":
            b.data += np.where(b.data >= 0, 1.5, -1.5)
        w = dict(a=a, b=b)
        return lambda: _scalarize(ops.forward_primitive(kind, [a, b]), rng), [w["a"], w["b"]]

    return build


def _case_unary(kind, lo=-1.0, hi=1.0, attrs=None):
    def build(rng):
        a = _t(rng, 3, 5, lo=lo, hi=hi)
        return lambda: _scalarize(ops.forward_primitive(kind, [a], attrs or {}), rng), [a]

    return build


def _case_matmul(rng):
    if rng.random() < 0.5:
        a, b = _t(rng, 3, 4), _t(rng, 4, 2)
    else:
        a, b = _t(rng, 2, 3, 4), _t(rng, 4, 2)
    return lambda: _scalarize(ops.matmul(a, b), rng), [a, b]


def _case_conv(rank, transposed):
    def build(rng):
        sp = tuple(int(rng.integers(5, 8)) for _ in range(rank))
        k = tuple(int(rng.integers(2, 4)) for _ in range(rank))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        cin, cout = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        x = _t(rng, 2, cin, *sp)
        wshape = (cin, cout, *k) if transposed else (cout, cin, *k)
        w = _t(rng, *wshape)
        fn = ops.transposed_conv if transposed else ops.conv
        return lambda: _scalarize(fn(x, w, stride, pad), rng), [x, w]

    return build


def _case_reduce(kind):
    def build(rng):
        a = _t(rng, 2, 3, 4)
        axis = [None, 0, (1, 2), -1][int(rng.integers(0, 4))]
        keep = bool(rng.integers(0, 2))
        return (
            lambda: _scalarize(
                ops.forward_primitive(kind, [a], {"axis": axis, "keepdims": keep}), rng
            ),
            [a],
        )

    return build


def _case_reshape(rng):
    a = _t(rng, 2, 3, 4)
    return lambda: _scalarize(ops.reshape(a, (4, 6)), rng), [a]


def _case_transpose(rng):
    a = _t(rng, 2, 3, 4)
    perm = tuple(rng.permutation(3))
    return lambda: _scalarize(ops.transpose(a, perm), rng), [a]


def _case_slice(rng):
    a = _t(rng, 4, 5)
    return lambda: _scalarize(ops.slice_(a, ((1, 3), (0, 4))), rng), [a]


def _case_concat(rng):
    a, b = _t(rng, 2, 3), _t(rng, 4, 3)
    return lambda: _scalarize(ops.concat([a, b], axis=0), rng), [a, b]


def _case_ssm_scan(rng):
    n, i, T = 3, 2, 4
    diag = bool(rng.integers(0, 2))
    A = _t(rng, n, lo=-0.8, hi=0.8) if diag else _t(rng, n, n, lo=-0.5, hi=0.5)
    B = _t(rng, n, i)
    x0 = _t(rng, n)
    u = _t(rng, T, i)
    return lambda: _scalarize(ops.ssm_scan_states(A, B, x0, u), rng), [A, B, x0, u]


def _case_channel_scan(selective):
    def build(rng):
        Bb, T, C, N = 2, 4, 3, 2
        u = _t(rng, Bb, T, C)
        a = _t(rng, C, N, lo=0.1, hi=0.9)
        x0 = _t(rng, C, N)
        bsrc = _t(rng, Bb, T, N) if selective else _t(rng, C, N)
        return (
            lambda: _scalarize(
                ops.channel_scan_states(u, a, bsrc, x0, selective=selective), rng
            ),
            [u, a, bsrc, x0],
        )

    return build


def _case_in(rng):
    a = _t(rng, 2, 3, 4, 4)
    return lambda: _scalarize(ops.instance_norm(a), rng), [a]


def _case_ln(rng):
    a = _t(rng, 2, 3, 5)
    return lambda: _scalarize(ops.layer_norm(a), rng), [a]


# op_kind -> builder(rng) -> (closure, params). Keys with a suffix after ":"
# are variants of the same primitive audited under separate settings.
AUDIT_CASES: dict[str, Callable] = {
    "add": _case_binary("add"),
    "sub": _case_binary("sub"),
    "mul": _case_binary("mul"),
    "div": _case_binary("div"),
    "neg": _case_unary("neg"),
    "exp": _case_unary("exp"),
    "log": _case_unary("log", lo=0.2, hi=3.0),
    "pow": _case_unary("pow", lo=0.2, hi=2.0, attrs={"exponent": 2.5}),
    "sigmoid": _case_unary("sigmoid", lo=-3.0, hi=3.0),
    "softplus": _case_unary("softplus", lo=-3.0, hi=3.0),
    "leaky_relu": _case_unary("leaky_relu", lo=-2.0, hi=2.0, attrs={"slope": 0.01}),
    "clip": _case_unary("clip", lo=-2.0, hi=2.0, attrs={"lo": -1.1, "hi": 1.1}),
    "matmul": _case_matmul,
    "softmax": _case_unary("softmax", lo=-2.0, hi=2.0),
    "instance_norm": _case_in,
    "layer_norm": _case_ln,
    "conv1d": _case_conv(1, transposed=False),
    "conv2d": _case_conv(2, transposed=False),
    "conv3d": _case_conv(3, transposed=False),
    "transposed_conv1d": _case_conv(1, transposed=True),
    "transposed_conv2d": _case_conv(2, transposed=True),
    "transposed_conv3d": _case_conv(3, transposed=True),
    "sum": _case_reduce("sum"),
    "mean": _case_reduce("mean"),
    "reshape": _case_reshape,
    "transpose": _case_transpose,
    "slice": _case_slice,
    "concat": _case_concat,
    "ssm_scan": _case_ssm_scan,
    "channel_scan:static": _case_channel_scan(False),
    "channel_scan:selective": _case_channel_scan(True),
}


def audit_ops(
    kinds: Iterable[str] | None = None, n_trials: int = 50, seed: int = 0
) -> dict[str, float]:
    """grad_check every registered op kind on ``n_trials`` random instances.

    Returns op_kind -> worst observed relative error; callers compare against
    their tolerance (1e-4 everywhere in this package).
    """
    results = {}
    for kind in kinds if kinds is not None else AUDIT_CASES:
        builder = AUDIT_CASES[kind]
        rng = np.random.default_rng(seed + (zlib.crc32(kind.encode()) % 100003))
        worst = 0.0
        for _ in range(n_trials):
            f, params = builder(rng)
            worst = max(worst, grad_check(f, params))
        results[kind] = worst
    return results
