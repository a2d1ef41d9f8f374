"""Dimension-generic convolution kernels (plain numpy, no tape).

Cross-correlation convention (no kernel flip), channels-first layout:
inputs (B, C_in, *spatial), weights (C_out, C_in, *kernel). Both directions
lower to one GEMM over an im2col buffer, which keeps 1-D/2-D/3-D on a single
BLAS-backed code path.
"""

from __future__ import annotations

import itertools

import numpy as np

from ..errors import InvalidAttr, ShapeMismatch


def _check_attrs(rank: int, stride, padding):
    stride = (stride,) * rank if isinstance(stride, int) else tuple(stride)
    padding = (padding,) * rank if isinstance(padding, int) else tuple(padding)
    if len(stride) != rank or len(padding) != rank:
        raise InvalidAttr(f"stride/padding rank must be {rank}")
    if any(s < 1 for s in stride):
        raise InvalidAttr(f"stride must be >= 1, got {stride}")
    if any(p < 0 for p in padding):
        raise InvalidAttr(f"padding must be >= 0, got {padding}")
    return stride, padding


def conv_out_shape(spatial, kernel, stride, padding):
    out = tuple(
        (n + 2 * p - k) // s + 1 for n, k, s, p in zip(spatial, kernel, stride, padding)
    )
    if any(n < 1 for n in out):
        raise ShapeMismatch(
            f"kernel {kernel} does not fit input {spatial} with padding {padding}"
        )
    return out


def _offsets(kernel):
    return list(itertools.product(*[range(k) for k in kernel]))


def _offset_slice(offs, stride, out_sp):
    return (slice(None), slice(None)) + tuple(
        slice(o, o + s * n, s) for o, s, n in zip(offs, stride, out_sp)
    )


def _im2col(xp, kernel, stride, out_sp):
    """(B, C, *padded) -> (B, C * prod(kernel), prod(out_sp))."""
    b, c = xp.shape[:2]
    k = int(np.prod(kernel))
    p = int(np.prod(out_sp))
    col = np.empty((b, c, k, p))
    for ki, offs in enumerate(_offsets(kernel)):
        col[:, :, ki, :] = xp[_offset_slice(offs, stride, out_sp)].reshape(b, c, p)
    return col.reshape(b, c * k, p)


def _col2im(dcol, xp_shape, kernel, stride, out_sp):
    """Scatter-add the im2col adjoint back onto the padded input."""
    b, c = xp_shape[:2]
    p = int(np.prod(out_sp))
    dcol = dcol.reshape(b, c, int(np.prod(kernel)), p)
    dxp = np.zeros(xp_shape)
    for ki, offs in enumerate(_offsets(kernel)):
        dxp[_offset_slice(offs, stride, out_sp)] += dcol[:, :, ki, :].reshape(
            (b, c) + out_sp
        )
    return dxp


def conv_forward(x: np.ndarray, w: np.ndarray, stride, padding):
    rank = x.ndim - 2
    if w.ndim != rank + 2:
        raise ShapeMismatch(f"weight rank {w.ndim} does not match input rank {x.ndim}")
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"input channels {x.shape[1]} != weight channels {w.shape[1]}")
    stride, padding = _check_attrs(rank, stride, padding)
    kernel = w.shape[2:]
    out_sp = conv_out_shape(x.shape[2:], kernel, stride, padding)
    xp = np.pad(x, [(0, 0), (0, 0)] + [(p, p) for p in padding]) if any(padding) else x
    col = _im2col(xp, kernel, stride, out_sp)
    w2 = w.reshape(w.shape[0], -1)
    out = np.matmul(w2, col).reshape((x.shape[0], w.shape[0]) + out_sp)
    return out, (xp.shape, stride, padding, out_sp, col)


def conv_backward(g: np.ndarray, x: np.ndarray, w: np.ndarray, ctx):
    xp_shape, stride, padding, out_sp, col = ctx
    kernel = w.shape[2:]
    b = x.shape[0]
    p = int(np.prod(out_sp))
    gf = np.ascontiguousarray(g).reshape(b, w.shape[0], p)
    dw = np.tensordot(gf, col, axes=([0, 2], [0, 2])).reshape(w.shape)
    dcol = np.matmul(w.reshape(w.shape[0], -1).T, gf)
    dxp = _col2im(dcol, xp_shape, kernel, stride, out_sp)
    if any(padding):
        dxp = dxp[
            (slice(None), slice(None))
            + tuple(slice(pd, n - pd) for pd, n in zip(padding, xp_shape[2:]))
        ]
    return dxp, dw


def tconv_out_shape(spatial, kernel, stride, padding):
    out = tuple(
        (n - 1) * s + k - 2 * p for n, k, s, p in zip(spatial, kernel, stride, padding)
    )
    if any(n < 1 for n in out):
        raise ShapeMismatch(f"transposed conv output collapsed: {out}")
    return out


def tconv_forward(x: np.ndarray, w: np.ndarray, stride, padding):
    """Transposed convolution; weights are (C_in, C_out, *kernel)."""
    rank = x.ndim - 2
    if w.ndim != rank + 2:
        raise ShapeMismatch(f"weight rank {w.ndim} does not match input rank {x.ndim}")
    if x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"input channels {x.shape[1]} != weight channels {w.shape[0]}")
    stride, padding = _check_attrs(rank, stride, padding)
    kernel = w.shape[2:]
    in_sp = x.shape[2:]
    full = tuple((n - 1) * s + k for n, k, s in zip(in_sp, kernel, stride))
    out_sp = tconv_out_shape(in_sp, kernel, stride, padding)
    b, cin = x.shape[:2]
    cout = w.shape[1]
    p = int(np.prod(in_sp))
    xf = x.reshape(b, cin, p)
    z = np.matmul(w.reshape(cin, -1).T, xf)  # (B, Cout*K, P_in)
    buf = _col2im(z, (b, cout) + full, kernel, stride, in_sp)
    out = buf[
        (slice(None), slice(None))
        + tuple(slice(pd, f - pd) for pd, f in zip(padding, full))
    ]
    return np.ascontiguousarray(out), (stride, padding, full, in_sp, xf)


def tconv_backward(g: np.ndarray, x: np.ndarray, w: np.ndarray, ctx):
    stride, padding, full, in_sp, xf = ctx
    kernel = w.shape[2:]
    b, cin = x.shape[:2]
    cout = w.shape[1]
    gfull = np.zeros((b, cout) + full)
    gfull[
        (slice(None), slice(None))
        + tuple(slice(pd, f - pd) for pd, f in zip(padding, full))
    ] = g
    dz = _im2col(gfull, kernel, stride, in_sp)  # (B, Cout*K, P_in)
    dx = np.matmul(w.reshape(cin, -1), dz).reshape(x.shape)
    dw = np.tensordot(xf, dz, axes=([0, 2], [0, 2])).reshape(w.shape)
    return dx, dw
