"""Sequential linear-recurrence kernels with hand-written adjoints.

Running the recurrence as one fused tape node keeps the graph at O(1) nodes
per scan instead of O(T); the backward pass is the textbook adjoint
recurrence run in reverse. Only the state update lives here; observation
outputs are composed from ordinary primitives by the callers.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimMismatch, Overflow


def dense_scan_forward(A, B, x0, u):
    """states[t] = A @ states[t-1] + B @ u[t], states[-1] = x0.

    A is (n, n) or a diagonal vector (n,); B is (n, n_in); u is (T, n_in).
    Returns states (T, n).
    """
    T = u.shape[0]
    n = x0.shape[0]
    diag = A.ndim == 1
    if (diag and A.shape != (n,)) or (not diag and A.shape != (n, n)):
        raise DimMismatch(f"A shape {A.shape} incompatible with state size {n}")
    if B.shape[0] != n or u.shape[1] != B.shape[1]:
        raise DimMismatch(f"B {B.shape} / u {u.shape} do not chain with state size {n}")
    bu = u @ B.T  # (T, n)
    states = np.empty((T, n))
    s = x0
    with np.errstate(over="ignore"):  # divergence is detected and reported
        for t in range(T):
            s = A * s + bu[t] if diag else A @ s + bu[t]
            if not np.all(np.isfinite(s)):
                raise Overflow(f"non-finite state at scan step {t}")
            states[t] = s
    return states


def dense_scan_backward(g, A, B, x0, u, states):
    """Adjoint of dense_scan_forward. g is d(loss)/d(states), shape (T, n)."""
    T = u.shape[0]
    diag = A.ndim == 1
    dA = np.zeros_like(A)
    lam = np.zeros_like(x0)
    lam_all = np.empty_like(states)
    for t in range(T - 1, -1, -1):
        lam = lam + g[t]
        lam_all[t] = lam
        lam = A * lam if diag else A.T @ lam
    s_prev = np.concatenate([x0[None], states[:-1]], axis=0)
    if diag:
        dA = np.einsum("tn,tn->n", lam_all, s_prev)
    else:
        dA = np.einsum("tn,tm->nm", lam_all, s_prev)
    dB = np.einsum("tn,ti->ni", lam_all, u)
    du = lam_all @ B
    dx0 = lam
    return dA, dB, dx0, du


def channel_scan_forward(u, a, bsrc, x0, selective):
    """Per-channel diagonal recurrence over a batch of sequences.

    u: (B, T, C) scalar input per channel; a: (C, N) diagonal transition;
    x0: (C, N) initial state. Static mode uses bsrc (C, N); selective mode
    uses per-timestep bsrc (B, T, N) shared across channels. Returns states
    (B, T, C, N).
    """
    Bb, T, C = u.shape
    N = a.shape[1]
    if a.shape[0] != C or x0.shape != (C, N):
        raise DimMismatch(f"a {a.shape} / x0 {x0.shape} do not match channels {C}")
    if selective:
        if bsrc.shape != (Bb, T, N):
            raise DimMismatch(f"selective B has shape {bsrc.shape}, want {(Bb, T, N)}")
        bu = u[..., None] * bsrc[:, :, None, :]
    else:
        if bsrc.shape != (C, N):
            raise DimMismatch(f"static B has shape {bsrc.shape}, want {(C, N)}")
        bu = u[..., None] * bsrc[None, None]
    bu = np.ascontiguousarray(np.moveaxis(bu, 1, 0))  # (T, B, C, N)
    states = np.empty((T, Bb, C, N))
    prev = np.broadcast_to(x0, (Bb, C, N))
    for t in range(T):
        st = states[t]
        np.multiply(prev, a, out=st)
        st += bu[t]
        prev = st
    if not np.all(np.isfinite(states[-1])):
        raise Overflow("non-finite state at end of channel scan")
    return np.ascontiguousarray(np.moveaxis(states, 0, 1))  # (B, T, C, N)


def channel_scan_backward(g, u, a, bsrc, x0, states, selective):
    """Adjoint of channel_scan_forward. g is (B, T, C, N)."""
    Bb, T, C = u.shape
    gT = np.ascontiguousarray(np.moveaxis(g, 1, 0))  # (T, B, C, N)
    lam = np.zeros((Bb, C, a.shape[1]))
    lam_all = np.empty_like(gT)
    for t in range(T - 1, -1, -1):
        lam = lam + gT[t]
        lam_all[t] = lam
        lam = lam * a
    sT = np.moveaxis(states, 1, 0)
    s_prev = np.concatenate([np.broadcast_to(x0, (1, Bb) + x0.shape), sT[:-1]], axis=0)
    da = np.einsum("tbcn,tbcn->cn", lam_all, s_prev)
    dx0 = lam.sum(axis=0)
    if selective:
        dbsrc = np.einsum("tbcn,btc->btn", lam_all, u)
        du = np.einsum("tbcn,btn->btc", lam_all, bsrc)
    else:
        dbsrc = np.einsum("tbcn,btc->cn", lam_all, u)
        du = np.einsum("tbcn,cn->btc", lam_all, bsrc)
    return du, da, dbsrc, dx0
