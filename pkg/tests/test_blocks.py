"""State-space scan, attention, and block contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mambaseg.blocks import (
    AttentionInputs,
    MambaBlock,
    SSMParams,
    UMambaBlock,
    mamba_block_forward,
    selective_attention,
    ssm_scan,
    umamba_block_forward,
)
from mambaseg.engine import Tensor, grad_check, ops
from mambaseg.errors import DimMismatch, Overflow


def scalar_params(a, b, c, d, x0):
    return SSMParams(
        A=Tensor([[a]]), B=Tensor([[b]]), C=Tensor([[c]]), D=Tensor([[d]]), x0=Tensor([x0])
    )


def test_scan_hand_example():
    p = scalar_params(0.5, 1.0, 1.0, 0.0, 0.0)
    states, outputs = ssm_scan(p, [[1.0], [1.0]])
    np.testing.assert_allclose(states.data.ravel(), [1.0, 1.5])
    np.testing.assert_allclose(outputs.data.ravel(), [0.0, 1.0])


def test_scan_identity_fixed_point():
    n = 3
    p = SSMParams(
        A=Tensor(np.eye(n)),
        B=Tensor(np.zeros((n, 2))),
        C=Tensor(np.eye(n)),
        D=Tensor(np.zeros((n, 2))),
        x0=Tensor([1.0, -2.0, 3.0]),
    )
    states, _ = ssm_scan(p, np.random.default_rng(0).standard_normal((6, 2)))
    for t in range(6):
        np.testing.assert_allclose(states.data[t], [1.0, -2.0, 3.0])


def test_scan_one_step_delay():
    n = 2
    p = SSMParams(
        A=Tensor(np.zeros((n, n))),
        B=Tensor(np.eye(n)),
        C=Tensor(np.eye(n)),
        D=Tensor(np.zeros((n, n))),
        x0=Tensor([5.0, 7.0]),
    )
    u = np.random.default_rng(1).standard_normal((5, 2))
    _, outputs = ssm_scan(p, u)
    np.testing.assert_allclose(outputs.data[0], [5.0, 7.0])
    for t in range(1, 5):
        np.testing.assert_allclose(outputs.data[t], u[t - 1])


def test_scan_diagonal_a_matches_dense():
    rng = np.random.default_rng(2)
    diag = rng.uniform(-0.5, 0.5, 3)
    u = rng.standard_normal((4, 2))
    common = dict(
        B=Tensor(rng.standard_normal((3, 2))),
        C=Tensor(rng.standard_normal((2, 3))),
        D=Tensor(rng.standard_normal((2, 2))),
        x0=Tensor(rng.standard_normal(3)),
    )
    s1, o1 = ssm_scan(SSMParams(A=Tensor(diag), **common), u)
    s2, o2 = ssm_scan(SSMParams(A=Tensor(np.diag(diag)), **common), u)
    np.testing.assert_allclose(s1.data, s2.data, atol=1e-14)
    np.testing.assert_allclose(o1.data, o2.data, atol=1e-14)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_scan_restart_associativity(a_len, b_len, seed):
    rng = np.random.default_rng(seed)
    n, i = 3, 2
    mats = dict(
        A=Tensor(rng.uniform(-0.7, 0.7, (n, n))),
        B=Tensor(rng.standard_normal((n, i))),
        C=Tensor(rng.standard_normal((2, n))),
        D=Tensor(rng.standard_normal((2, i))),
    )
    u = rng.standard_normal((a_len + b_len, i))
    x0 = rng.standard_normal(n)
    states_full, _ = ssm_scan(SSMParams(x0=Tensor(x0), **mats), u)
    states_a, _ = ssm_scan(SSMParams(x0=Tensor(x0), **mats), u[:a_len])
    states_b, _ = ssm_scan(
        SSMParams(x0=Tensor(states_a.data[-1].copy()), **mats), u[a_len:]
    )
    np.testing.assert_allclose(
        np.concatenate([states_a.data, states_b.data]), states_full.data, atol=1e-12
    )


def test_scan_overflow_detected():
    p = scalar_params(3.0, 1.0, 1.0, 0.0, 1.0)
    with pytest.raises(Overflow):
        ssm_scan(p, np.ones((800, 1)))


def test_scan_dim_mismatch():
    p = scalar_params(0.5, 1.0, 1.0, 0.0, 0.0)
    with pytest.raises(DimMismatch):
        ssm_scan(p, np.ones((4, 3)))
    with pytest.raises(DimMismatch):
        SSMParams(A=Tensor(np.eye(2)), B=Tensor(np.zeros((3, 1))),
                  C=Tensor(np.zeros((1, 2))), D=Tensor(np.zeros((1, 1))),
                  x0=Tensor(np.zeros(2)))


def test_scan_differentiable():
    rng = np.random.default_rng(3)
    p = SSMParams(
        A=Tensor(rng.uniform(-0.6, 0.6, (3, 3)), requires_grad=True),
        B=Tensor(rng.standard_normal((3, 2)), requires_grad=True),
        C=Tensor(rng.standard_normal((2, 3)), requires_grad=True),
        D=Tensor(rng.standard_normal((2, 2)), requires_grad=True),
        x0=Tensor(rng.standard_normal(3), requires_grad=True),
    )
    u = Tensor(rng.standard_normal((5, 2)), requires_grad=True)
    w_s = Tensor(np.random.default_rng(9).standard_normal((5, 3)))
    w_o = Tensor(np.random.default_rng(10).standard_normal((5, 2)))

    def f():
        states, outputs = ssm_scan(p, u)
        return ops.sum(states * w_s) + ops.sum(outputs * w_o)

    assert grad_check(f, [p.A, p.B, p.C, p.D, p.x0, u]) < 1e-4


# --- attention ---------------------------------------------------------


def test_attention_single_token_identity():
    inp = AttentionInputs(Q=[[2.0]], K=[[1.0]], V=[[3.0, 4.0]])
    np.testing.assert_allclose(selective_attention(inp).data, [[3.0, 4.0]])


def test_attention_equal_scores_average():
    v = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])
    inp = AttentionInputs(Q=np.zeros((3, 2)), K=np.zeros((3, 2)), V=v)
    out = selective_attention(inp).data
    np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (3, 1)), atol=1e-12)


def test_attention_hand_softmax():
    inp = AttentionInputs(Q=[[1.0], [0.0]], K=[[1.0], [0.0]], V=[[1.0, 0.0], [0.0, 1.0]])
    out = selective_attention(inp).data
    e = np.exp(1.0)
    np.testing.assert_allclose(out[0], [e / (e + 1), 1 / (e + 1)], atol=1e-9)
    np.testing.assert_allclose(out[0], [0.7311, 0.2689], atol=1e-4)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_attention_rows_convex_and_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    t, dk, dv = 5, 3, 4
    q = rng.standard_normal((t, dk))
    k = rng.standard_normal((t, dk))
    v = rng.standard_normal((t, dv))
    scores = np.exp((q @ k.T) / np.sqrt(dk))
    weights = scores / scores.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(weights.sum(axis=1), np.ones(t), atol=1e-12)
    out = selective_attention(AttentionInputs(Q=q, K=k, V=v)).data
    perm = rng.permutation(t)
    out_p = selective_attention(AttentionInputs(Q=q[perm], K=k, V=v)).data
    np.testing.assert_allclose(out_p, out[perm], atol=1e-12)


def test_attention_scale_limit_to_column_mean():
    rng = np.random.default_rng(12)
    q = rng.standard_normal((4, 3))
    k = rng.standard_normal((4, 3))
    v = rng.standard_normal((4, 2))
    out_tiny = selective_attention(AttentionInputs(Q=q * 1e-9, K=k, V=v)).data
    np.testing.assert_allclose(out_tiny, np.tile(v.mean(axis=0), (4, 1)), atol=1e-7)


@given(st.floats(0.05, 20.0), st.integers(0, 2**31 - 1))
@settings(max_examples=15, deadline=None)
def test_attention_q_scaling_scales_logits(c, seed):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((3, 2))
    k = rng.standard_normal((3, 2))
    v = rng.standard_normal((3, 2))
    got = selective_attention(AttentionInputs(Q=c * q, K=k, V=v)).data
    logits = c * (q @ k.T) / np.sqrt(2)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    expect = (e / e.sum(axis=1, keepdims=True)) @ v
    np.testing.assert_allclose(got, expect, atol=1e-10)


def test_attention_dim_mismatch():
    with pytest.raises(DimMismatch):
        AttentionInputs(Q=np.zeros((2, 3)), K=np.zeros((2, 4)), V=np.zeros((2, 2)))


# --- blocks -------------------------------------------------------------


def test_mamba_zero_input_zero_out_proj():
    rng = np.random.default_rng(0)
    blk = MambaBlock(channels=3, n_state=2, selective=True, rng=rng)
    x = Tensor(np.zeros((1, 3, 4, 4)))
    out = mamba_block_forward(blk, x)
    np.testing.assert_array_equal(out.data, np.zeros((1, 3, 4, 4)))


@pytest.mark.parametrize("trial", range(10))
def test_mamba_shape_contract(trial):
    rng = np.random.default_rng(100 + trial)
    c = int(rng.integers(1, 5))
    n = int(rng.integers(1, 4))
    sp = tuple(int(rng.integers(2, 6)) for _ in range(int(rng.integers(1, 3)) + 1))
    blk = MambaBlock(channels=c, n_state=n, selective=bool(rng.integers(0, 2)), rng=rng)
    x = Tensor(rng.standard_normal((2, c) + sp))
    assert mamba_block_forward(blk, x).shape == (2, c) + sp


def test_mamba_gradcheck():
    rng = np.random.default_rng(1)
    blk = MambaBlock(channels=1, n_state=2, selective=True, rng=rng)
    blk.w_out.data = rng.uniform(-0.5, 0.5, blk.w_out.shape)
    x = Tensor(rng.standard_normal((1, 1, 4, 4)), requires_grad=True)
    w = Tensor(np.random.default_rng(7).standard_normal((1, 1, 4, 4)))
    f = lambda: ops.sum(blk.forward(x) * w)
    assert grad_check(f, list(blk.params("m").values()) + [x]) < 1e-4


def test_umamba_passthrough_with_identity_convs():
    """Identity residual convs + zero Mamba projection reduce the block to
    the two residual adds."""
    rng = np.random.default_rng(2)
    blk = UMambaBlock(2, 2, 2, False, 2, rng)
    for res in (blk.res1, blk.res2):
        res.w.data[:] = 0.0
        for o in range(2):
            res.w.data[o, o, 1, 1] = 1.0  # identity 3x3 kernel
    blk.mamba.w_out.data[:] = 0.0
    x = np.random.default_rng(3).standard_normal((1, 2, 6, 6))
    out = umamba_block_forward(blk, Tensor(x)).data

    def res_step(v):
        mu = v.mean(axis=(2, 3), keepdims=True)
        var = v.var(axis=(2, 3), keepdims=True)
        norm = (v - mu) / np.sqrt(var + 1e-5)
        return v + np.where(norm >= 0, norm, 0.01 * norm)

    np.testing.assert_allclose(out, res_step(res_step(x)), atol=1e-12)


@pytest.mark.parametrize("trial", range(10))
def test_umamba_shape_contract(trial):
    rng = np.random.default_rng(200 + trial)
    cin = int(rng.integers(1, 4))
    cout = int(rng.integers(1, 5))
    sp = tuple(int(rng.integers(3, 7)) for _ in range(2))
    blk = UMambaBlock(cin, cout, 2, True, 2, rng)
    x = Tensor(rng.standard_normal((1, cin) + sp))
    assert umamba_block_forward(blk, x).shape == (1, cout) + sp


def test_umamba_gradcheck():
    rng = np.random.default_rng(4)
    blk = UMambaBlock(1, 2, 2, True, 2, rng)
    blk.mamba.w_out.data = rng.uniform(-0.5, 0.5, blk.mamba.w_out.shape)
    x = Tensor(rng.standard_normal((1, 1, 4, 4)), requires_grad=True)
    w = Tensor(np.random.default_rng(8).standard_normal((1, 2, 4, 4)))
    f = lambda: ops.sum(blk.forward(x) * w)
    assert grad_check(f, list(blk.params("u").values()) + [x]) < 1e-4
