"""State-space scan, selective attention, and the Mamba / U-Mamba blocks.

Conventions: feature maps are (B, C, *spatial); flattened sequences are
(B, T, C) in raster (row-major) order, single direction. The scan output at
step t observes the state *entering* the step, so y[0] = C x0 + D u[0].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import ops
from .engine.tensor import Tensor, as_tensor
from .errors import DimMismatch, ShapeMismatch


@dataclass
class SSMParams:
    """Matrices of the linear state-space recurrence.

    A: (n_state, n_state) or diagonal (n_state,); B: (n_state, n_in);
    C: (n_out, n_state); D: (n_out, n_in); x0: (n_state,). Process and
    observation noise are identically zero: inference is deterministic.
    """

    A: Tensor
    B: Tensor
    C: Tensor
    D: Tensor
    x0: Tensor

    def __post_init__(self):
        self.A = as_tensor(self.A)
        self.B = as_tensor(self.B)
        self.C = as_tensor(self.C)
        self.D = as_tensor(self.D)
        self.x0 = as_tensor(self.x0)
        n = self.x0.shape[0] if self.x0.ndim == 1 else -1
        if self.x0.ndim != 1:
            raise DimMismatch(f"x0 must be a vector, got shape {self.x0.shape}")
        if self.A.ndim not in (1, 2) or self.A.shape[0] != n or (
            self.A.ndim == 2 and self.A.shape[1] != n
        ):
            raise DimMismatch(f"A shape {self.A.shape} does not match n_state {n}")
        if self.B.ndim != 2 or self.B.shape[0] != n:
            raise DimMismatch(f"B shape {self.B.shape} does not match n_state {n}")
        if self.C.ndim != 2 or self.C.shape[1] != n:
            raise DimMismatch(f"C shape {self.C.shape} does not match n_state {n}")
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise DimMismatch(
                f"D shape {self.D.shape} != (n_out, n_in) = "
                f"({self.C.shape[0]}, {self.B.shape[1]})"
            )

    @property
    def n_state(self) -> int:
        return self.x0.shape[0]

    @property
    def n_in(self) -> int:
        return self.B.shape[1]

    @property
    def n_out(self) -> int:
        return self.C.shape[0]


def ssm_scan(params: SSMParams, u_seq) -> tuple[Tensor, Tensor]:
    """Run the recurrence over u_seq (T, n_in).

    Returns (states, outputs): states[t] is the post-update state of step t;
    outputs[t] = C @ (state entering step t) + D @ u[t]. Differentiable in
    A, B, C, D, x0 and u.
    """
    u = as_tensor(u_seq)
    if u.ndim != 2 or u.shape[1] != params.n_in:
        raise DimMismatch(f"u_seq shape {u.shape} does not match n_in {params.n_in}")
    if u.shape[0] < 1:
        raise DimMismatch("scan needs T >= 1")
    states = ops.ssm_scan_states(params.A, params.B, params.x0, u)
    x0_row = ops.reshape(params.x0, (1, params.n_state))
    if u.shape[0] > 1:
        entering = ops.concat([x0_row, ops.slice_(states, ((0, u.shape[0] - 1),))], axis=0)
    else:
        entering = x0_row
    outputs = ops.matmul(entering, ops.transpose(params.C, (1, 0))) + ops.matmul(
        u, ops.transpose(params.D, (1, 0))
    )
    return states, outputs


@dataclass
class AttentionInputs:
    """Query/key/value matrices for one sequence: Q (T, d_k), K (T, d_k),
    V (T, d_v)."""

    Q: Tensor
    K: Tensor
    V: Tensor
    d_k: int = 0

    def __post_init__(self):
        self.Q, self.K, self.V = as_tensor(self.Q), as_tensor(self.K), as_tensor(self.V)
        if self.Q.ndim != 2 or self.K.ndim != 2 or self.V.ndim != 2:
            raise DimMismatch("Q, K, V must all be rank-2 matrices")
        if self.Q.shape[1] != self.K.shape[1]:
            raise DimMismatch(
                f"Q and K key dims differ: {self.Q.shape[1]} vs {self.K.shape[1]}"
            )
        if self.K.shape[0] != self.V.shape[0]:
            raise DimMismatch(
                f"K has {self.K.shape[0]} rows but V has {self.V.shape[0]}"
            )
        if self.d_k == 0:
            self.d_k = self.Q.shape[1]
        elif self.d_k != self.Q.shape[1]:
            raise DimMismatch(f"declared d_k {self.d_k} != Q trailing dim {self.Q.shape[1]}")


def selective_attention(inp: AttentionInputs) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V; each output row is a convex combination
    of rows of V."""
    scores = ops.matmul(inp.Q, ops.transpose(inp.K, (1, 0))) * (1.0 / math.sqrt(inp.d_k))
    return ops.matmul(ops.softmax(scores), inp.V)


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, shape)


class MambaBlock:
    """Two-branch gated block. Branch 1 projects the normalized sequence and
    runs a per-channel diagonal state-space scan; branch 2 projects and
    applies the activation. Branches merge by Hadamard product, project back,
    and add the block input (residual).

    The diagonal transition is held in (0, 1) by a sigmoid over a learnable
    logit. With ``selective`` the B/C scan parameters are per-timestep linear
    projections of the scan input; otherwise they are static matrices.
    """

    def __init__(self, channels: int, n_state: int, selective: bool, rng: np.random.Generator,
                 slope: float = 0.01):
        c, n = channels, n_state
        self.channels = c
        self.n_state = n
        self.selective = selective
        self.slope = slope
        self.ln_scale = Tensor(np.ones(c), requires_grad=True)
        self.ln_shift = Tensor(np.zeros(c), requires_grad=True)
        self.w_in = Tensor(_he_uniform(rng, (c, c), c), requires_grad=True)
        self.w_gate = Tensor(_he_uniform(rng, (c, c), c), requires_grad=True)
        self.a_logit = Tensor(rng.uniform(0.5, 2.5, (c, n)), requires_grad=True)
        self.x0 = Tensor(np.zeros((c, n)), requires_grad=True)
        self.d_skip = Tensor(np.ones(c), requires_grad=True)
        if selective:
            self.w_b = Tensor(_he_uniform(rng, (c, n), c), requires_grad=True)
            self.w_c = Tensor(_he_uniform(rng, (c, n), c), requires_grad=True)
        else:
            self.b_mat = Tensor(rng.normal(0.0, 1.0 / math.sqrt(n), (c, n)), requires_grad=True)
            self.c_mat = Tensor(rng.normal(0.0, 1.0 / math.sqrt(n), (c, n)), requires_grad=True)
        # zero output projection: the block starts as an identity residual
        self.w_out = Tensor(np.zeros((c, c)), requires_grad=True)

    def params(self, prefix: str) -> dict[str, Tensor]:
        named = {
            "ln_scale": self.ln_scale,
            "ln_shift": self.ln_shift,
            "w_in": self.w_in,
            "w_gate": self.w_gate,
            "a_logit": self.a_logit,
            "x0": self.x0,
            "d_skip": self.d_skip,
            "w_out": self.w_out,
        }
        if self.selective:
            named.update(w_b=self.w_b, w_c=self.w_c)
        else:
            named.update(b_mat=self.b_mat, c_mat=self.c_mat)
        return {f"{prefix}.{k}": v for k, v in named.items()}

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim < 3 or x.shape[1] != self.channels:
            raise ShapeMismatch(
                f"expected (B, {self.channels}, *spatial), got {x.shape}"
            )
        b = x.shape[0]
        spatial = x.shape[2:]
        t = int(np.prod(spatial))
        seq = ops.transpose(ops.reshape(x, (b, self.channels, t)), (0, 2, 1))
        h = ops.layer_norm(seq) * self.ln_scale + self.ln_shift

        u = ops.matmul(h, self.w_in)  # (B, T, C) scan input
        a = ops.sigmoid(self.a_logit)
        if self.selective:
            bsrc = ops.matmul(u, self.w_b)  # (B, T, N)
            csel = ops.matmul(u, self.w_c)  # (B, T, N)
        else:
            bsrc = self.b_mat
        states = ops.channel_scan_states(u, a, bsrc, self.x0, selective=self.selective)
        # observation uses the state entering each step: x0, then states[:-1]
        x0_row = ops.reshape(self.x0, (1, 1, self.channels, self.n_state)) * Tensor(
            np.ones((b, 1, 1, 1))
        )
        if t > 1:
            entering = ops.concat([x0_row, ops.slice_(states, (None, (0, t - 1)))], axis=1)
        else:
            entering = x0_row
        if self.selective:
            obs = ops.sum(entering * ops.reshape(csel, (b, t, 1, self.n_state)), axis=-1)
        else:
            obs = ops.sum(entering * self.c_mat, axis=-1)
        branch1 = obs + u * self.d_skip

        branch2 = ops.leaky_relu(ops.matmul(h, self.w_gate), self.slope)

        merged = branch1 * branch2
        out_seq = ops.matmul(merged, self.w_out)
        out = ops.reshape(ops.transpose(out_seq, (0, 2, 1)), (b, self.channels) + spatial)
        return x + out


class ResidualConvBlock:
    """conv -> instance norm -> leaky ReLU, with an identity skip (1x1
    projection when the channel count changes)."""

    def __init__(self, in_ch: int, out_ch: int, rank: int, rng: np.random.Generator,
                 slope: float = 0.01, eps: float = 1e-5):
        k = (3,) * rank
        self.in_ch, self.out_ch = in_ch, out_ch
        self.slope, self.eps = slope, eps
        self.w = Tensor(
            _he_uniform(rng, (out_ch, in_ch) + k, in_ch * 3**rank), requires_grad=True
        )
        self.scale = Tensor(np.ones(out_ch), requires_grad=True)
        self.shift = Tensor(np.zeros(out_ch), requires_grad=True)
        self.w_skip = None
        if in_ch != out_ch:
            self.w_skip = Tensor(
                _he_uniform(rng, (out_ch, in_ch) + (1,) * rank, in_ch), requires_grad=True
            )

    def params(self, prefix: str) -> dict[str, Tensor]:
        named = {"w": self.w, "scale": self.scale, "shift": self.shift}
        if self.w_skip is not None:
            named["w_skip"] = self.w_skip
        return {f"{prefix}.{k}": v for k, v in named.items()}

    def forward(self, x: Tensor) -> Tensor:
        rank = x.ndim - 2
        bshape = (1, self.out_ch) + (1,) * rank
        h = ops.conv(x, self.w, stride=1, padding=1)
        h = ops.instance_norm(h, self.eps) * ops.reshape(self.scale, bshape) + ops.reshape(
            self.shift, bshape
        )
        h = ops.leaky_relu(h, self.slope)
        skip = x if self.w_skip is None else ops.conv(x, self.w_skip)
        return h + skip


class UMambaBlock:
    """Two sequential residual conv blocks followed by a Mamba block."""

    def __init__(self, in_ch: int, out_ch: int, n_state: int, selective: bool,
                 rank: int, rng: np.random.Generator):
        self.res1 = ResidualConvBlock(in_ch, out_ch, rank, rng)
        self.res2 = ResidualConvBlock(out_ch, out_ch, rank, rng)
        self.mamba = MambaBlock(out_ch, n_state, selective, rng)

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        out.update(self.res1.params(f"{prefix}.res1"))
        out.update(self.res2.params(f"{prefix}.res2"))
        out.update(self.mamba.params(f"{prefix}.mamba"))
        return out

    def forward(self, x: Tensor) -> Tensor:
        return self.mamba.forward(self.res2.forward(self.res1.forward(x)))


def mamba_block_forward(block: MambaBlock, features: Tensor) -> Tensor:
    return block.forward(as_tensor(features))


def umamba_block_forward(block: UMambaBlock, features: Tensor) -> Tensor:
    return block.forward(as_tensor(features))
