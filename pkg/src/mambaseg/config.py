"""Run configuration: strict JSON schema, validation, and hashing.

Unknown keys are rejected everywhere so ablation configs stay auditable;
every artifact a run writes embeds the sha256 hash of the canonical config.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .errors import InvalidConfig
from .network import NetworkConfig

LOSS_MODES = ("ce", "uncertainty", "uncertainty+sam")


def _take(d: dict, context: str, spec: dict) -> dict:
    """Pop known keys with defaults; reject anything left over."""
    if not isinstance(d, dict):
        raise InvalidConfig(f"{context}: expected an object, got {type(d).__name__}")
    d = dict(d)
    out = {}
    for key, default in spec.items():
        out[key] = d.pop(key, default)
    if d:
        raise InvalidConfig(f"{context}: unknown keys {sorted(d)}")
    return out


@dataclass
class OptimizerSettings:
    lr: float = 5e-3
    momentum: float = 0.99
    nesterov: bool = False
    sam_enabled: bool = False
    sam_rho: float = 0.05

    def validate(self):
        if self.lr <= 0:
            raise InvalidConfig(f"optimizer.lr must be positive, got {self.lr}")
        if not (0.0 <= self.momentum < 1.0):
            raise InvalidConfig(f"optimizer.momentum must be in [0, 1), got {self.momentum}")
        if self.sam_enabled and self.sam_rho <= 0:
            raise InvalidConfig(f"optimizer.sam.rho must be positive, got {self.sam_rho}")


@dataclass
class LossSettings:
    mode: str = "uncertainty+sam"
    gamma: float = 2.0
    M: int = 3
    components: tuple[str, ...] = ("dice", "ce", "focal")

    def validate(self):
        if self.mode not in LOSS_MODES:
            raise InvalidConfig(f"loss.mode must be one of {LOSS_MODES}, got {self.mode!r}")
        if self.gamma < 0:
            raise InvalidConfig(f"loss.gamma must be >= 0, got {self.gamma}")
        if self.mode != "ce" and len(self.components) != self.M:
            raise InvalidConfig(
                f"loss.components has {len(self.components)} entries for M = {self.M}"
            )
        known = {"dice", "ce", "focal"}
        bad = set(self.components) - known
        if bad:
            raise InvalidConfig(f"unknown loss components {sorted(bad)}")


@dataclass
class DataSettings:
    path: str | None = None
    synth: dict | None = None  # SynthConfig fields + n_train / n_val

    def validate(self):
        if (self.path is None) == (self.synth is None):
            raise InvalidConfig("data: exactly one of 'path' or 'synth' is required")


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    loss: LossSettings = field(default_factory=LossSettings)
    data: DataSettings = field(default_factory=DataSettings)
    epochs: int = 6
    batch_size: int = 2
    max_steps: int | None = None
    eval_every: int = 1
    seed: int = 0
    output_dir: str = "runs/out"

    def validate(self):
        self.optimizer.validate()
        self.loss.validate()
        self.data.validate()
        if self.epochs < 1:
            raise InvalidConfig(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidConfig(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eval_every < 1:
            raise InvalidConfig(f"eval_every must be >= 1, got {self.eval_every}")
        wants_sam = self.loss.mode == "uncertainty+sam"
        if wants_sam != self.optimizer.sam_enabled:
            raise InvalidConfig(
                "loss.mode 'uncertainty+sam' requires optimizer.sam.enabled = true "
                "(and other modes require it disabled)"
            )
        return self

    def to_dict(self) -> dict:
        return {
            "network": self.network.to_dict(),
            "optimizer": {
                "lr": self.optimizer.lr,
                "momentum": self.optimizer.momentum,
                "nesterov": self.optimizer.nesterov,
                "sam": {"enabled": self.optimizer.sam_enabled, "rho": self.optimizer.sam_rho},
            },
            "loss": {
                "mode": self.loss.mode,
                "gamma": self.loss.gamma,
                "M": self.loss.M,
                "components": list(self.loss.components),
            },
            "data": {"path": self.data.path, "synth": self.data.synth},
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "max_steps": self.max_steps,
            "eval_every": self.eval_every,
            "seed": self.seed,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        top = _take(
            raw,
            "config",
            {
                "network": {},
                "optimizer": {},
                "loss": {},
                "data": {},
                "epochs": 6,
                "batch_size": 2,
                "max_steps": None,
                "eval_every": 1,
                "seed": 0,
                "output_dir": "runs/out",
            },
        )
        net_kwargs = _take(
            top["network"],
            "network",
            {
                "n_stages": 3,
                "channels": (8, 16, 32),
                "downsample": (1, 2, 2),
                "input_shape": (32, 32),
                "in_channels": 1,
                "n_classes": 4,
                "deep_supervision": True,
                "selective_ssm": True,
                "n_state": 4,
            },
        )
        opt_raw = _take(
            top["optimizer"],
            "optimizer",
            {"lr": 5e-3, "momentum": 0.99, "nesterov": False, "sam": {}},
        )
        sam_raw = _take(opt_raw.pop("sam"), "optimizer.sam", {"enabled": False, "rho": 0.05})
        loss_raw = _take(
            top["loss"],
            "loss",
            {"mode": "uncertainty+sam", "gamma": 2.0, "M": 3, "components": ["dice", "ce", "focal"]},
        )
        data_raw = _take(top["data"], "data", {"path": None, "synth": None})
        cfg = cls(
            network=NetworkConfig(**net_kwargs),
            optimizer=OptimizerSettings(
                lr=opt_raw["lr"],
                momentum=opt_raw["momentum"],
                nesterov=opt_raw["nesterov"],
                sam_enabled=sam_raw["enabled"],
                sam_rho=sam_raw["rho"],
            ),
            loss=LossSettings(
                mode=loss_raw["mode"],
                gamma=loss_raw["gamma"],
                M=loss_raw["M"],
                components=tuple(loss_raw["components"]),
            ),
            data=DataSettings(path=data_raw["path"], synth=data_raw["synth"]),
            epochs=top["epochs"],
            batch_size=top["batch_size"],
            max_steps=top["max_steps"],
            eval_every=top["eval_every"],
            seed=top["seed"],
            output_dir=top["output_dir"],
        )
        return cfg.validate()

    @classmethod
    def from_json_file(cls, path: str) -> "RunConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise InvalidConfig(f"cannot parse config {path}: {e}") from None
        return cls.from_dict(raw)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]
