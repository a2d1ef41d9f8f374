"""Reverse-mode tensor engine: tape, primitives, gradient audit, checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import AUDIT_CASES, audit_ops, grad_check
from .ops import (
    OP_TABLE,
    add,
    channel_scan_states,
    clip,
    concat,
    conv,
    div,
    exp,
    forward_primitive,
    instance_norm,
    layer_norm,
    leaky_relu,
    log,
    matmul,
    mean,
    mul,
    neg,
    pow,
    reshape,
    sigmoid,
    slice_,
    softmax,
    softplus,
    ssm_scan_states,
    sub,
    sum,
    transpose,
    transposed_conv,
)
from .tensor import Graph, Tensor, as_tensor, current_graph, zero_grads

__all__ = [
    "AUDIT_CASES",
    "Graph",
    "OP_TABLE",
    "Tensor",
    "add",
    "as_tensor",
    "audit_ops",
    "channel_scan_states",
    "clip",
    "concat",
    "conv",
    "current_graph",
    "div",
    "exp",
    "forward_primitive",
    "grad_check",
    "instance_norm",
    "layer_norm",
    "leaky_relu",
    "load_checkpoint",
    "log",
    "matmul",
    "mean",
    "mul",
    "neg",
    "pow",
    "reshape",
    "save_checkpoint",
    "sigmoid",
    "slice_",
    "softmax",
    "softplus",
    "ssm_scan_states",
    "sub",
    "sum",
    "transpose",
    "transposed_conv",
    "zero_grads",
]
