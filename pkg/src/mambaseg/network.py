"""Encoder-decoder segmentation network assembled from U-Mamba blocks.

Encoder stages pair one U-Mamba block with a strided downsampling conv
(kernel = stride = the stage factor, so extents divide exactly). The decoder
mirrors with transposed convs, concatenates the matching encoder skip, and
refines with a residual conv block. A 1x1 conv plus softmax head emits the
probability map; optional auxiliary heads supervise the coarser decoder
stages with 2^-s weights (normalized to sum 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .blocks import ResidualConvBlock, UMambaBlock, _he_uniform
from .engine import ops
from .engine.tensor import Tensor, as_tensor
from .errors import InvalidConfig, ShapeMismatch


@dataclass
class NetworkConfig:
    n_stages: int = 3
    channels: tuple[int, ...] = (8, 16, 32)
    downsample: tuple[int, ...] = (1, 2, 2)  # stride entering each stage
    input_shape: tuple[int, ...] = (32, 32)
    in_channels: int = 1
    n_classes: int = 4
    deep_supervision: bool = True
    selective_ssm: bool = True
    n_state: int = 4

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.downsample = tuple(int(f) for f in self.downsample)
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if self.n_stages < 2:
            raise InvalidConfig(f"need n_stages >= 2, got {self.n_stages}")
        if len(self.channels) != self.n_stages:
            raise InvalidConfig(
                f"channels has {len(self.channels)} entries for {self.n_stages} stages"
            )
        if len(self.downsample) != self.n_stages:
            raise InvalidConfig(
                f"downsample has {len(self.downsample)} entries for {self.n_stages} stages"
            )
        if self.downsample[0] != 1:
            raise InvalidConfig("downsample[0] must be 1 (stage 0 runs at input resolution)")
        if any(f < 1 for f in self.downsample) or any(c < 1 for c in self.channels):
            raise InvalidConfig("channels and downsample factors must be positive")
        if len(self.input_shape) not in (2, 3):
            raise InvalidConfig(f"input must be 2-D or 3-D, got {self.input_shape}")
        if self.n_classes < 2:
            raise InvalidConfig(f"need n_classes >= 2, got {self.n_classes}")
        if self.n_state < 1:
            raise InvalidConfig(f"need n_state >= 1, got {self.n_state}")
        total = 1
        for f in self.downsample:
            total *= f
        if any(s % total != 0 for s in self.input_shape):
            raise InvalidConfig(
                f"input extents {self.input_shape} not divisible by cumulative "
                f"downsampling {total}"
            )

    @property
    def rank(self) -> int:
        return len(self.input_shape)

    def stage_shape(self, stage: int) -> tuple[int, ...]:
        total = 1
        for f in self.downsample[: stage + 1]:
            total *= f
        return tuple(s // total for s in self.input_shape)

    def to_dict(self) -> dict:
        return {
            "n_stages": self.n_stages,
            "channels": list(self.channels),
            "downsample": list(self.downsample),
            "input_shape": list(self.input_shape),
            "in_channels": self.in_channels,
            "n_classes": self.n_classes,
            "deep_supervision": self.deep_supervision,
            "selective_ssm": self.selective_ssm,
            "n_state": self.n_state,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)


class _Head:
    """1x1 conv (with bias) followed by softmax over the class axis."""

    def __init__(self, in_ch: int, n_classes: int, rank: int, rng: np.random.Generator):
        # zero init emits uniform class probabilities at step 0, which keeps
        # the first epochs stable under the high-momentum base optimizer
        del rng
        self.w = Tensor(np.zeros((n_classes, in_ch) + (1,) * rank), requires_grad=True)
        self.b = Tensor(np.zeros(n_classes), requires_grad=True)
        self.rank = rank

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}

    def forward(self, x: Tensor) -> Tensor:
        logits = ops.conv(x, self.w) + ops.reshape(
            self.b, (1, self.b.shape[0]) + (1,) * self.rank
        )
        # softmax acts on the last axis; rotate classes there and back
        fwd = (0,) + tuple(range(2, logits.ndim)) + (1,)
        back = (0, logits.ndim - 1) + tuple(range(1, logits.ndim - 1))
        return ops.transpose(ops.softmax(ops.transpose(logits, fwd)), back)


class SegNetwork:
    def __init__(self, cfg: NetworkConfig, seed: int):
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence([411290177, seed]))
        rank = cfg.rank
        ch = cfg.channels
        self.enc_blocks: list[UMambaBlock] = []
        self.down_ws: list[Tensor] = []
        in_ch = cfg.in_channels
        for i in range(cfg.n_stages):
            self.enc_blocks.append(
                UMambaBlock(in_ch, ch[i], cfg.n_state, cfg.selective_ssm, rank, rng)
            )
            if i < cfg.n_stages - 1:
                f = cfg.downsample[i + 1]
                self.down_ws.append(
                    Tensor(
                        _he_uniform(rng, (ch[i + 1], ch[i]) + (f,) * rank, ch[i] * f**rank),
                        requires_grad=True,
                    )
                )
            in_ch = ch[i] if i == cfg.n_stages - 1 else ch[i + 1]

        self.up_ws: list[Tensor] = []
        self.dec_blocks: list[ResidualConvBlock] = []
        self.aux_heads: dict[int, _Head] = {}
        for j in range(cfg.n_stages - 2, -1, -1):
            f = cfg.downsample[j + 1]
            self.up_ws.append(
                Tensor(
                    _he_uniform(rng, (ch[j + 1], ch[j]) + (f,) * rank, ch[j + 1] * f**rank),
                    requires_grad=True,
                )
            )
            self.dec_blocks.append(ResidualConvBlock(2 * ch[j], ch[j], rank, rng))
            if cfg.deep_supervision and j >= 1:
                self.aux_heads[j] = _Head(ch[j], cfg.n_classes, rank, rng)
        self.head = _Head(ch[0], cfg.n_classes, rank, rng)
        self.param_count = sum(p.size for p in self.params().values())

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, blk in enumerate(self.enc_blocks):
            out.update(blk.params(f"enc{i}"))
        for i, w in enumerate(self.down_ws):
            out[f"down{i}.w"] = w
        for idx, j in enumerate(range(self.cfg.n_stages - 2, -1, -1)):
            out[f"up{j}.w"] = self.up_ws[idx]
            out.update(self.dec_blocks[idx].params(f"dec{j}"))
        for j, head in self.aux_heads.items():
            out.update(head.params(f"aux{j}"))
        out.update(self.head.params("head"))
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.params()
        missing = set(params) - set(arrays)
        if missing:
            raise ShapeMismatch(f"missing parameters in state: {sorted(missing)[:5]}")
        for name, p in params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeMismatch(
                    f"parameter {name!r}: stored {arr.shape} != model {p.data.shape}"
                )
            p.data = arr.copy()

    def forward(self, image) -> list[tuple[Tensor, int]]:
        """Returns [(prob_map, scale)] with the full-resolution map first;
        scale is the integer downsampling factor of each map."""
        x = as_tensor(image)
        cfg = self.cfg
        if x.ndim != cfg.rank + 2 or x.shape[1] != cfg.in_channels or x.shape[2:] != cfg.input_shape:
            raise ShapeMismatch(
                f"expected (B, {cfg.in_channels}, {cfg.input_shape}), got {x.shape}"
            )
        skips = []
        for i in range(cfg.n_stages):
            x = self.enc_blocks[i].forward(x)
            if i < cfg.n_stages - 1:
                skips.append(x)
                f = cfg.downsample[i + 1]
                x = ops.conv(x, self.down_ws[i], stride=f, padding=0)
        aux: list[tuple[Tensor, int]] = []
        for idx, j in enumerate(range(cfg.n_stages - 2, -1, -1)):
            f = cfg.downsample[j + 1]
            x = ops.transposed_conv(x, self.up_ws[idx], stride=f, padding=0)
            x = ops.concat([x, skips[j]], axis=1)
            x = self.dec_blocks[idx].forward(x)
            if j in self.aux_heads:
                factor = 1
                for ff in cfg.downsample[: j + 1]:
                    factor *= ff
                aux.append((self.aux_heads[j].forward(x), factor))
        main = self.head.forward(x)
        return [(main, 1)] + aux[::-1]


def deep_supervision_weights(n_heads: int) -> list[float]:
    """2^-s per head (s = 0 full resolution), normalized to sum 1."""
    raw = [2.0 ** (-s) for s in range(n_heads)]
    z = math.fsum(raw)
    return [r / z for r in raw]


def build_network(cfg: NetworkConfig, seed: int) -> SegNetwork:
    """Deterministic construction; same (cfg, seed) gives bit-identical
    parameters."""
    return SegNetwork(cfg, seed)


def network_forward(net: SegNetwork, image) -> list[tuple[Tensor, int]]:
    return net.forward(image)
