"""Training loop, evaluation, and the dataset-loss closure shared with the
landscape tooling.

A run is fully determined by (config, seed): data generation, parameter
init, and batch shuffling all derive from fixed seed streams, so repeated
runs produce bit-identical epoch-loss traces.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .engine.checkpoint import save_checkpoint
from .engine.tensor import Tensor
from .errors import EmptyDataset, InvalidConfig
from .losses import LOSS_COMPONENTS, UncertaintyLossState, ce_loss, uncertainty_aware_loss
from .metrics import MetricsReport, evaluate_dataset
from .network import SegNetwork, build_network, deep_supervision_weights
from .optim import OptimizerState, SAMConfig, poly_lr, sam_step, sgd_step, _collect_grads
from .synthdata import (
    TRAIN_SEED0,
    VAL_SEED0,
    LabeledVolume,
    SynthConfig,
    generate_dataset,
    read_dataset,
)

SIGMA_PARAM = "loss.sigma_raw"


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    eye = np.eye(n_classes)
    return np.moveaxis(eye[labels], -1, 0)


def batch_arrays(samples: list[LabeledVolume], n_classes: int):
    images = np.stack([s.image.astype(np.float64)[None] for s in samples])
    onehot = np.stack([one_hot(s.labels, n_classes) for s in samples])
    return images, onehot


def load_data(cfg: RunConfig) -> tuple[list[LabeledVolume], list[LabeledVolume]]:
    if cfg.data.path is not None:
        samples = read_dataset(cfg.data.path)
        if len(samples) < 2:
            raise EmptyDataset(f"dataset at {cfg.data.path} has {len(samples)} samples")
        n_val = max(1, len(samples) // 5)
        return samples[:-n_val], samples[-n_val:]
    synth = dict(cfg.data.synth or {})
    n_train = int(synth.pop("n_train", 200))
    n_val = int(synth.pop("n_val", 40))
    synth.setdefault("shape", cfg.network.input_shape)
    synth.setdefault("K", cfg.network.n_classes - 1)
    scfg = SynthConfig(**synth)
    if tuple(scfg.shape) != tuple(cfg.network.input_shape):
        raise InvalidConfig(
            f"synth shape {scfg.shape} != network input {cfg.network.input_shape}"
        )
    train = generate_dataset(scfg, TRAIN_SEED0, n_train)
    val = generate_dataset(scfg, VAL_SEED0, n_val)
    return train, val


def _downsampled(onehot_t: dict[int, Tensor], onehot: np.ndarray, factor: int) -> Tensor:
    if factor not in onehot_t:
        sl = (slice(None), slice(None)) + (slice(None, None, factor),) * (onehot.ndim - 2)
        onehot_t[factor] = Tensor(onehot[sl])
    return onehot_t[factor]


def make_loss_fn(net: SegNetwork, images: np.ndarray, onehot: np.ndarray, mode: str,
                 ua_state: UncertaintyLossState | None, gamma: float):
    """Closure computing the configured training objective on one batch.

    With deep supervision the objective is the 2^-s weighted sum of the head
    losses against nearest-neighbor downsampled targets.
    """
    images_t = Tensor(images)
    targets: dict[int, Tensor] = {1: Tensor(onehot)}

    def component_losses(p, tgt):
        return [LOSS_COMPONENTS[cid](p, tgt, gamma) for cid in ua_state.component_ids]

    def loss_fn():
        outs = net.forward(images_t)
        weights = deep_supervision_weights(len(outs))
        total = None
        for (p, factor), w in zip(outs, weights):
            tgt = _downsampled(targets, onehot, factor)
            if mode == "ce":
                head_loss = ce_loss(p, tgt)
            else:
                head_loss = uncertainty_aware_loss(component_losses(p, tgt), ua_state)
            term = head_loss * w
            total = term if total is None else total + term
        return total

    return loss_fn


def dataset_loss(net: SegNetwork, samples: list[LabeledVolume], mode: str,
                 ua_state: UncertaintyLossState | None, gamma: float,
                 batch_size: int = 4) -> float:
    """Mean training objective over a dataset, graph-free and deterministic.

    Sigma parameters are used at their current (frozen) values.
    """
    n_classes = net.cfg.n_classes
    total = 0.0
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        images, onehot = batch_arrays(chunk, n_classes)
        value = float(make_loss_fn(net, images, onehot, mode, ua_state, gamma)().data)
        total += value * len(chunk)
    return total / len(samples)


def predict(net: SegNetwork, samples: list[LabeledVolume], batch_size: int = 4):
    """Forward the main head over a dataset; returns (prob maps, label maps)."""
    probs, labels = [], []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        images, _ = batch_arrays(chunk, net.cfg.n_classes)
        p = net.forward(images)[0][0].data
        for j in range(len(chunk)):
            probs.append(p[j])
            labels.append(np.argmax(p[j], axis=0))
    return probs, labels


def evaluate(net: SegNetwork, samples: list[LabeledVolume], extra: dict | None = None) -> MetricsReport:
    probs, pred_labels = predict(net, samples)
    gt_labels = [s.labels for s in samples]
    gt_onehot = [one_hot(s.labels, net.cfg.n_classes) for s in samples]
    return evaluate_dataset(
        pred_labels, probs, gt_labels, gt_onehot, net.cfg.n_classes, extra=extra
    )


@dataclass
class TrainResult:
    net: SegNetwork
    ua_state: UncertaintyLossState | None
    epoch_losses: list[float]
    epoch_losses_perturbed: list[float]
    step_losses: list[float] = field(default_factory=list)
    best_val_dsc: float = 0.0
    final_report: MetricsReport | None = None
    train_samples: list[LabeledVolume] = field(default_factory=list)
    val_samples: list[LabeledVolume] = field(default_factory=list)

    def params_with_sigma(self) -> dict[str, Tensor]:
        params = dict(self.net.params())
        if self.ua_state is not None:
            params[SIGMA_PARAM] = self.ua_state.raw
        return params


def run_training(cfg: RunConfig, write_artifacts: bool = True, log=None) -> TrainResult:
    cfg.validate()
    chash = cfg.config_hash()
    train, val = load_data(cfg)
    net = build_network(cfg.network, cfg.seed)
    if log:
        log(f"built network: {net.param_count} parameters, config {chash}")

    mode = cfg.loss.mode
    ua_state = None
    params = dict(net.params())
    if mode != "ce":
        ua_state = UncertaintyLossState(component_ids=list(cfg.loss.components))
        params[SIGMA_PARAM] = ua_state.raw
    opt = OptimizerState(
        params=params,
        lr=cfg.optimizer.lr,
        momentum=cfg.optimizer.momentum,
        nesterov=cfg.optimizer.nesterov,
    )
    sam_cfg = SAMConfig(rho=cfg.optimizer.sam_rho, enabled=cfg.optimizer.sam_enabled)

    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xD47A]))
    n_classes = cfg.network.n_classes
    result = TrainResult(net=net, ua_state=ua_state, epoch_losses=[], epoch_losses_perturbed=[])
    rows = []
    best_dsc = -1.0
    steps_done = 0
    out_dir = cfg.output_dir
    if write_artifacts:
        os.makedirs(out_dir, exist_ok=True)

    for epoch in range(cfg.epochs):
        opt.lr = poly_lr(epoch, cfg.epochs, cfg.optimizer.lr)
        order = shuffle_rng.permutation(len(train))
        clean_losses, pert_losses = [], []
        for start in range(0, len(train), cfg.batch_size):
            if cfg.max_steps is not None and steps_done >= cfg.max_steps:
                break
            chunk = [train[i] for i in order[start : start + cfg.batch_size]]
            images, onehot = batch_arrays(chunk, n_classes)
            loss_fn = make_loss_fn(net, images, onehot, mode, ua_state, cfg.loss.gamma)
            if sam_cfg.enabled:
                lp, lc = sam_step(opt, sam_cfg, loss_fn)
                pert_losses.append(lp)
            else:
                lc, grads = _collect_grads(loss_fn, opt.params)
                sgd_step(opt, grads)
            clean_losses.append(lc)
            result.step_losses.append(lc)
            steps_done += 1
        result.epoch_losses.append(float(np.mean(clean_losses)) if clean_losses else float("nan"))
        result.epoch_losses_perturbed.append(
            float(np.mean(pert_losses)) if pert_losses else float("nan")
        )

        val_dsc = ""
        if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            report = evaluate(net, val)
            val_dsc = report.mean_dsc
            if report.mean_dsc > best_dsc:
                best_dsc = report.mean_dsc
                if write_artifacts:
                    _save(net, ua_state, cfg, chash, epoch, report.mean_dsc,
                          os.path.join(out_dir, "checkpoint_best"))
        if log:
            log(
                f"epoch {epoch}: lr {opt.lr:.3e} loss {result.epoch_losses[-1]:.4f}"
                f" val_dsc {val_dsc if val_dsc != '' else '-'}"
            )
        rows.append(
            {
                "epoch": epoch,
                "lr": opt.lr,
                "train_loss": result.epoch_losses[-1],
                "train_loss_perturbed": result.epoch_losses_perturbed[-1],
                "val_mean_dsc": val_dsc,
            }
        )
        if cfg.max_steps is not None and steps_done >= cfg.max_steps:
            break

    result.best_val_dsc = best_dsc
    final_report = evaluate(
        net, val, extra={"config_hash": chash, "mode": mode, "seed": cfg.seed}
    )
    result.final_report = final_report
    result.train_samples = train
    result.val_samples = val

    if write_artifacts:
        _save(net, ua_state, cfg, chash, cfg.epochs - 1, final_report.mean_dsc,
              os.path.join(out_dir, "checkpoint_last"))
        with open(os.path.join(out_dir, "epochs.csv"), "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["epoch", "lr", "train_loss", "train_loss_perturbed", "val_mean_dsc"]
            )
            writer.writeheader()
            writer.writerows(rows)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(final_report.to_json_dict(), fh, indent=1, sort_keys=True)
        final_report.write_rows_csv(os.path.join(out_dir, "report_samples.csv"))
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            json.dump(cfg.to_dict(), fh, indent=1, sort_keys=True)
    return result


def _save(net: SegNetwork, ua_state, cfg: RunConfig, chash: str, epoch: int,
          val_dsc: float, path: str) -> None:
    tensors = dict(net.params())
    if ua_state is not None:
        tensors[SIGMA_PARAM] = ua_state.raw
    save_checkpoint(
        path,
        tensors,
        extra={
            "config": cfg.to_dict(),
            "config_hash": chash,
            "epoch": epoch,
            "val_mean_dsc": val_dsc,
        },
    )


def load_trained(path: str) -> tuple[SegNetwork, UncertaintyLossState | None, RunConfig, dict]:
    """Rebuild a network (and sigma state) from a checkpoint directory."""
    from .engine.checkpoint import load_checkpoint

    arrays, extra = load_checkpoint(path)
    cfg = RunConfig.from_dict(extra["config"])
    net = build_network(cfg.network, cfg.seed)
    sigma = arrays.pop(SIGMA_PARAM, None)
    net.load_state(arrays)
    ua_state = None
    if sigma is not None:
        ua_state = UncertaintyLossState(
            component_ids=list(cfg.loss.components),
            raw=Tensor(sigma.copy(), requires_grad=True),
        )
    return net, ua_state, cfg, extra
