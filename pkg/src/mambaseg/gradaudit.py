"""Finite-difference audits above the primitive level: scan + attention,
whole blocks, and the full toy network under each loss mode.

Instances are deliberately tiny (a few hundred parameters) so the exhaustive
entry-by-entry central-difference sweep stays fast.
"""

from __future__ import annotations

import numpy as np

from .blocks import (
    AttentionInputs,
    MambaBlock,
    SSMParams,
    UMambaBlock,
    selective_attention,
    ssm_scan,
)
from .engine import ops
from .engine.gradcheck import grad_check
from .engine.tensor import Tensor
from .losses import UncertaintyLossState, ce_loss, dice_loss, focal_loss, uncertainty_aware_loss
from .network import NetworkConfig, build_network


def _weighted_sum(t: Tensor, seed: int = 51) -> Tensor:
    w = Tensor(np.random.default_rng(seed).standard_normal(t.shape))
    return ops.sum(ops.mul(t, w))


def _audit_ssm_scan(seed: int):
    rng = np.random.default_rng(seed)
    p = SSMParams(
        A=Tensor(rng.uniform(-0.6, 0.6, (3, 3)), requires_grad=True),
        B=Tensor(rng.standard_normal((3, 2)), requires_grad=True),
        C=Tensor(rng.standard_normal((2, 3)), requires_grad=True),
        D=Tensor(rng.standard_normal((2, 2)), requires_grad=True),
        x0=Tensor(rng.standard_normal(3), requires_grad=True),
    )
    u = Tensor(rng.standard_normal((5, 2)), requires_grad=True)

    def f():
        states, outputs = ssm_scan(p, u)
        return _weighted_sum(states, 52) + _weighted_sum(outputs, 53)

    return f, [p.A, p.B, p.C, p.D, p.x0, u]


def _audit_attention(seed: int):
    rng = np.random.default_rng(seed)
    q = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    k = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    v = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    return (
        lambda: _weighted_sum(selective_attention(AttentionInputs(Q=q, K=k, V=v)), 54),
        [q, k, v],
    )


def _audit_mamba(selective: bool):
    def build(seed: int):
        rng = np.random.default_rng(seed)
        blk = MambaBlock(channels=2, n_state=2, selective=selective, rng=rng)
        blk.w_out.data = rng.uniform(-0.5, 0.5, blk.w_out.shape)  # exercise the scan path
        x = Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True)
        params = list(blk.params("m").values()) + [x]
        return lambda: _weighted_sum(blk.forward(x), 55), params

    return build


def _audit_umamba(seed: int):
    rng = np.random.default_rng(seed)
    blk = UMambaBlock(1, 2, 2, True, 2, rng)
    blk.mamba.w_out.data = rng.uniform(-0.5, 0.5, blk.mamba.w_out.shape)
    x = Tensor(rng.standard_normal((1, 1, 4, 4)), requires_grad=True)
    params = list(blk.params("u").values()) + [x]
    return lambda: _weighted_sum(blk.forward(x), 56), params


def _micro_network(seed: int):
    cfg = NetworkConfig(
        n_stages=2,
        channels=(2, 3),
        downsample=(1, 2),
        input_shape=(8, 8),
        n_classes=3,
        deep_supervision=False,
        selective_ssm=True,
        n_state=2,
    )
    net = build_network(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    for name, p in net.params().items():  # exercise zero-initialized tails
        if name.endswith("w_out") or name.startswith("head"):
            p.data = rng.uniform(-0.3, 0.3, p.shape)
    image = rng.uniform(0.0, 1.0, (1, 1, 8, 8))
    labels = rng.integers(0, 3, (8, 8))
    onehot = np.zeros((1, 3, 8, 8))
    for k in range(3):
        onehot[0, k][labels == k] = 1.0
    return net, Tensor(image), Tensor(onehot)


def _audit_network_loss(mode: str):
    def build(seed: int):
        net, image, onehot = _micro_network(seed)
        params = list(net.params().values())
        if mode == "ce":
            def f():
                p = net.forward(image)[0][0]
                return ce_loss(p, onehot)
        else:
            state = UncertaintyLossState()
            params = params + [state.raw]

            def f():
                p = net.forward(image)[0][0]
                return uncertainty_aware_loss(
                    [dice_loss(p, onehot), ce_loss(p, onehot), focal_loss(p, onehot, 2.0)],
                    state,
                )
        return f, params

    return build


def _audit_loss(loss_name: str):
    def build(seed: int):
        rng = np.random.default_rng(seed)
        logits = Tensor(rng.standard_normal((1, 3, 4, 4)), requires_grad=True)
        labels = rng.integers(0, 3, (4, 4))
        onehot = np.zeros((1, 3, 4, 4))
        for k in range(3):
            onehot[0, k][labels == k] = 1.0
        target = Tensor(onehot)

        def probs():
            perm = (0, 2, 3, 1)
            back = (0, 3, 1, 2)
            return ops.transpose(ops.softmax(ops.transpose(logits, perm)), back)

        if loss_name == "dice":
            f = lambda: dice_loss(probs(), target)
        elif loss_name == "ce":
            f = lambda: ce_loss(probs(), target)
        elif loss_name == "focal":
            f = lambda: focal_loss(probs(), target, 2.0)
        else:
            state = UncertaintyLossState()

            def f():
                p = probs()
                return uncertainty_aware_loss(
                    [dice_loss(p, target), ce_loss(p, target), focal_loss(p, target, 2.0)],
                    state,
                )
            return f, [logits, state.raw]
        return f, [logits]

    return build


MODULE_AUDITS = {
    "blocks": {
        "ssm_scan": _audit_ssm_scan,
        "selective_attention": _audit_attention,
        "mamba_block_static": _audit_mamba(False),
        "mamba_block_selective": _audit_mamba(True),
        "umamba_block": _audit_umamba,
    },
    "segnet": {
        "network_ce": _audit_network_loss("ce"),
        "network_uncertainty": _audit_network_loss("uncertainty"),
    },
    "losses": {
        "dice_softmax": _audit_loss("dice"),
        "ce_softmax": _audit_loss("ce"),
        "focal_softmax": _audit_loss("focal"),
        "uncertainty_softmax": _audit_loss("uncertainty"),
    },
}


def run_module_audit(module: str, seed: int = 0):
    """Yield (name, max_rel_error) for each audit in the module."""
    for name, builder in MODULE_AUDITS[module].items():
        f, params = builder(seed)
        yield name, grad_check(f, params)
