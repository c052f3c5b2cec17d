"""Pretraining and fine-tuning loops.

Determinism is the organizing principle: every random draw comes from a
stream derived from (master_seed, purpose-tag, epoch, sample-id), so a run
is a pure function of its config. Resuming from an epoch-boundary
checkpoint therefore reproduces the uninterrupted run bit-for-bit -- no
generator state ever needs to be serialized.

Each run directory receives a line-delimited JSON training log, periodic
checkpoints (`ckpt-epoch-NNN.ckpt`) when a cadence is set, and a final
checkpoint with optimizer state.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointError, load_tensors, load_training_state, save_training_state
from .datasets import Dataset
from .losses import LossWeights
from .model import ModelConfig, encoder_param_names, forward_finetune, forward_pretrain, init_params
from .optim import AdamW
from .seeding import derive, derive_seed


class TrainAbort(RuntimeError):
    """Training stopped on a non-finite loss; the last checkpoint is intact."""


@dataclass(frozen=True)
class TrainConfig:
    phase: str  # "pretrain" | "finetune"
    model: ModelConfig
    data_dir: str
    out_dir: str
    batch_size: int
    epochs: int
    lr: float
    weight_decay: float = 0.05
    lambda_rec: float = 1.0
    lambda_cls: float = 0.1
    master_seed: int = 0
    checkpoint_every: int = 0  # epochs between periodic checkpoints; 0 = final only
    cosine_lr: bool = False  # optional cosine decay; constant lr by default
    fresh_masks: bool = True  # new masking seeds each epoch (False: per-sample fixed)

    def __post_init__(self):
        if self.phase not in ("pretrain", "finetune"):
            raise ValueError(f"unknown phase '{self.phase}'")
        if self.batch_size < 1 or self.epochs < 1 or self.lr <= 0:
            raise ValueError("batch_size, epochs must be >= 1 and lr > 0")

    def hash(self) -> str:
        doc = asdict(self)
        doc.pop("out_dir")  # where results land does not change what is computed
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    def resume_hash(self) -> str:
        """Hash over the fields that must match for a resumed run to be the
        same run; training longer or into another directory is allowed.

        Exception: under cosine decay the schedule's shape depends on the
        total epoch count, so extending a cosine run is a different
        computation and epochs stays pinned.
        """
        doc = asdict(self)
        free = ["out_dir", "checkpoint_every"]
        if not self.cosine_lr:
            free.append("epochs")
        for key in free:
            doc.pop(key)
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class TrainResult:
    params: dict
    log: list[dict] = field(default_factory=list)  # one record per epoch
    step_losses: list[float] = field(default_factory=list)
    checkpoint_path: Path | None = None


def set_global_seed(master_seed: int):
    """Named, independent RNG streams for one run.

    Returns a factory: streams(purpose, *tags) -> numpy Generator. Streams
    with different purposes or tags never overlap; the same arguments always
    reproduce the same stream.
    """

    def streams(purpose: str, *tags) -> np.random.Generator:
        return derive(master_seed, purpose, *tags)

    return streams


def _epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    if not cfg.cosine_lr:
        return cfg.lr
    t = (epoch - 1) / max(cfg.epochs - 1, 1)
    return cfg.lr * 0.5 * (1.0 + float(np.cos(np.pi * t)))


def _append_log(out_dir: Path, record: dict) -> None:
    with open(out_dir / "train_log.jsonl", "a") as f:
        f.write(json.dumps(record) + "\n")


def _save(out_dir: Path, name: str, params, opt, meta) -> Path:
    path = out_dir / name
    save_training_state(path, params, opt, meta)
    return path


def _check_finite_loss(value: float, epoch: int, step: int) -> None:
    if not np.isfinite(value):
        raise TrainAbort(
            f"non-finite loss at epoch {epoch} step {step}; last saved checkpoint is unchanged"
        )


def pretrain(cfg: TrainConfig, resume_from: str | Path | None = None) -> TrainResult:
    """Denoising + position-classification pretraining over the pretrain split."""
    if cfg.phase != "pretrain":
        raise ValueError("config phase must be 'pretrain'")
    model_cfg = cfg.model.validate()
    dataset = Dataset(cfg.data_dir)
    rows = dataset.split("pretrain")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    params = init_params(model_cfg, cfg.master_seed, phase="pretrain")
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    weights = LossWeights(cfg.lambda_rec, cfg.lambda_cls)
    start_epoch = 1
    if resume_from is not None:
        meta = load_training_state(resume_from, params, opt)
        if meta.get("resume_hash") not in (None, cfg.resume_hash()):
            raise CheckpointError("checkpoint was written under an incompatible config")
        start_epoch = int(meta["epoch"]) + 1

    result = TrainResult(params=params)
    cfg_hash = cfg.hash()
    n = len(rows)
    for epoch in range(start_epoch, cfg.epochs + 1):
        t0 = time.monotonic()
        opt.lr = _epoch_lr(cfg, epoch)
        order = derive(cfg.master_seed, "shuffle", epoch).permutation(n)
        totals, recs, clss = [], [], []
        for step, start in enumerate(range(0, n, cfg.batch_size), 1):
            batch_ids = order[start : start + cfg.batch_size]
            noisy, clean, _, _ = dataset.load_batch("pretrain", batch_ids)
            mask_epoch = epoch if cfg.fresh_masks else 0
            mask_seeds = [derive_seed(cfg.master_seed, "mask", mask_epoch, int(i)) for i in batch_ids]
            out = forward_pretrain(noisy, clean, params, model_cfg, weights, mask_seeds)
            total = float(out.total.data)
            _check_finite_loss(total, epoch, step)
            opt.zero_grad()
            out.total.backward()
            opt.step()
            totals.append(total)
            recs.append(float(out.rec.data))
            clss.append(float(out.cls.data))
            result.step_losses.append(total)
        record = {
            "epoch": epoch,
            "total": float(np.mean(totals)),
            "rec": float(np.mean(recs)),
            "cls": float(np.mean(clss)),
            "lr": opt.lr,
            "wall_time_s": round(time.monotonic() - t0, 3),
            "seed": cfg.master_seed,
            "config_hash": cfg_hash,
        }
        result.log.append(record)
        _append_log(out_dir, record)
        meta = {"epoch": epoch, "phase": "pretrain", "config_hash": cfg_hash,
                "resume_hash": cfg.resume_hash()}
        if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0 and epoch < cfg.epochs:
            _save(out_dir, f"ckpt-epoch-{epoch:03d}.ckpt", params, opt, meta)
        if epoch == cfg.epochs:
            result.checkpoint_path = _save(out_dir, "model.ckpt", params, opt, meta)
    return result


def load_encoder(params: dict, ckpt_path: str | Path) -> list[str]:
    """Copy encoder tensors from a pretraining checkpoint into `params`.

    Returns the loaded names. Raises with the missing names listed if the
    checkpoint lacks any encoder tensor the model expects.
    """
    tensors, _ = load_tensors(ckpt_path)
    names = encoder_param_names(params)
    missing = [n for n in names if n not in tensors]
    if missing:
        raise CheckpointError(f"checkpoint missing encoder tensors: {missing}")
    for name in names:
        arr = tensors[name]
        if arr.shape != tuple(params[name].shape):
            raise CheckpointError(f"encoder tensor '{name}' shape {arr.shape} != {tuple(params[name].shape)}")
        params[name].data[...] = arr.astype(params[name].dtype, copy=False)
    return names


def finetune(cfg: TrainConfig, pretrained_ckpt: str | Path | None = None) -> TrainResult:
    """Supervised scheme classification; encoder-only model, no masking.

    `pretrained_ckpt = None` gives the from-scratch baseline: identical in
    every way except the encoder's starting weights.
    """
    if cfg.phase != "finetune":
        raise ValueError("config phase must be 'finetune'")
    model_cfg = cfg.model.validate()
    dataset = Dataset(cfg.data_dir)
    rows = dataset.split("train")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    params = init_params(model_cfg, cfg.master_seed, phase="finetune")
    if pretrained_ckpt is not None:
        load_encoder(params, pretrained_ckpt)
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    result = TrainResult(params=params)
    cfg_hash = cfg.hash()
    n = len(rows)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.monotonic()
        opt.lr = _epoch_lr(cfg, epoch)
        order = derive(cfg.master_seed, "shuffle", epoch).permutation(n)
        losses, correct, seen = [], 0, 0
        for step, start in enumerate(range(0, n, cfg.batch_size), 1):
            batch_ids = order[start : start + cfg.batch_size]
            noisy, _, labels, _ = dataset.load_batch("train", batch_ids)
            logits = forward_finetune(noisy, params, model_cfg)
            loss = T.softmax_cross_entropy(logits, labels)
            value = float(loss.data)
            _check_finite_loss(value, epoch, step)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(value)
            correct += int((np.argmax(logits.data, axis=-1) == labels).sum())
            seen += len(labels)
            result.step_losses.append(value)
        record = {
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "train_accuracy": correct / seen,
            "lr": opt.lr,
            "wall_time_s": round(time.monotonic() - t0, 3),
            "seed": cfg.master_seed,
            "config_hash": cfg_hash,
        }
        result.log.append(record)
        _append_log(out_dir, record)
        meta = {"epoch": epoch, "phase": "finetune", "config_hash": cfg_hash}
        if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0 and epoch < cfg.epochs:
            _save(out_dir, f"ckpt-epoch-{epoch:03d}.ckpt", params, opt, meta)
        if epoch == cfg.epochs:
            result.checkpoint_path = _save(out_dir, "finetuned.ckpt", params, opt, meta)
    return result
