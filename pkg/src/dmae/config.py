"""Flat dotted-key configuration with presets, files, and CLI overrides.

A config is a plain mapping like ``model.enc_dim -> 128``. Values resolve in
fixed precedence: built-in defaults, then a preset, then a config file, then
explicit overrides -- later wins. Every key must already exist in the
defaults; unknown keys are an error naming the key, and values are coerced to
the default's type (or rejected with the expected type named).

Config files are text: one ``key = value`` per line, ``#`` comments, blank
lines ignored. The resolved mapping can be written back in the same format,
so a run's snapshot is itself a valid config file.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

from .model import ModelConfig
from .render import RenderConfig

# Defaults are the desk preset: small enough to iterate on a laptop CPU.
DEFAULTS: dict[str, object] = {
    "run.seed": 0,
    "data.dir": "data",
    "data.pretrain_count": 500,
    "data.train_count": 1000,
    "data.test_count": 100,
    "render.plane_extent": 7.0,
    "render.image_size": 64,
    "render.alphas": (0.6, 1.2, 2.4),
    "render.neighborhood_radius": 6.0,
    "model.img_size": 64,
    "model.patch_size": 8,
    "model.in_channels": 3,
    "model.enc_dim": 128,
    "model.enc_depth": 4,
    "model.enc_heads": 4,
    "model.dec_dim": 64,
    "model.dec_depth": 2,
    "model.dec_heads": 4,
    "model.mask_ratio": 0.75,
    "model.cls_head_hidden": 128,
    "model.n_downstream_classes": 10,
    "pretrain.batch_size": 32,
    "pretrain.epochs": 30,
    "pretrain.lr": 1e-3,
    "pretrain.weight_decay": 0.05,
    "pretrain.lambda_rec": 1.0,
    "pretrain.lambda_cls": 0.1,
    "pretrain.checkpoint_every": 0,
    "pretrain.cosine_lr": False,
    "pretrain.fresh_masks": True,
    "finetune.batch_size": 32,
    "finetune.epochs": 15,
    "finetune.lr": 3e-4,
    "finetune.weight_decay": 0.05,
    "finetune.checkpoint_every": 0,
    "finetune.cosine_lr": True,
}

PRESETS: dict[str, dict[str, object]] = {
    "desk": {},  # the defaults
    "paper": {
        "data.pretrain_count": 10_000,
        "data.train_count": 1_000,
        "data.test_count": 100,
        "render.image_size": 224,
        "model.img_size": 224,
        "model.patch_size": 16,
        "model.enc_dim": 768,
        "model.enc_depth": 12,
        "model.enc_heads": 12,
        "model.dec_dim": 512,
        "model.dec_depth": 8,
        "model.dec_heads": 8,
        "model.cls_head_hidden": 768,
        "pretrain.batch_size": 64,
        "pretrain.epochs": 100,
        "pretrain.lr": 3e-4,
        "finetune.batch_size": 32,
        "finetune.epochs": 150,
        "finetune.lr": 1e-4,
    },
}


class ConfigError(ValueError):
    """Unknown key, malformed line, or untypeable value."""


def _coerce(key: str, raw: object, template: object):
    if isinstance(raw, str):
        text = raw.strip()
        try:
            if isinstance(template, bool):
                if text.lower() in ("true", "1", "yes", "on"):
                    return True
                if text.lower() in ("false", "0", "no", "off"):
                    return False
                raise ValueError(text)
            if isinstance(template, int):
                return int(text)
            if isinstance(template, float):
                return float(text)
            if isinstance(template, tuple):
                parts = [p for p in text.replace(",", " ").split() if p]
                return tuple(float(p) for p in parts)
            return text
        except ValueError:
            raise ConfigError(
                f"config key '{key}' expects {type(template).__name__}, got '{raw}'"
            ) from None
    if isinstance(template, bool) != isinstance(raw, bool):
        raise ConfigError(f"config key '{key}' expects {type(template).__name__}")
    if isinstance(template, float) and isinstance(raw, int):
        return float(raw)
    if not isinstance(raw, type(template)):
        raise ConfigError(f"config key '{key}' expects {type(template).__name__}")
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got '{line.strip()}'")
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(
    path: str | Path | None = None,
    overrides: dict[str, object] | None = None,
    preset: str = "desk",
) -> dict[str, object]:
    """Resolve defaults <- preset <- file <- overrides into a full mapping."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset '{preset}'; available: {sorted(PRESETS)}")
    cfg = dict(DEFAULTS)
    layers: list[dict] = [PRESETS[preset]]
    if path is not None:
        layers.append(parse_config_text(Path(path).read_text()))
    if overrides:
        layers.append(dict(overrides))
    for layer in layers:
        for key, raw in layer.items():
            if key not in cfg:
                raise ConfigError(f"unknown config key '{key}'")
            cfg[key] = _coerce(key, raw, DEFAULTS[key])
    return cfg


def format_config(cfg: dict[str, object]) -> str:
    lines = []
    for key in sorted(cfg):
        value = cfg[key]
        if isinstance(value, tuple):
            value = ",".join(repr(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: dict[str, object]) -> str:
    return hashlib.sha256(format_config(cfg).encode()).hexdigest()[:16]


def model_config(cfg: dict[str, object]) -> ModelConfig:
    return ModelConfig(
        img_size=cfg["model.img_size"],
        patch_size=cfg["model.patch_size"],
        in_channels=cfg["model.in_channels"],
        enc_dim=cfg["model.enc_dim"],
        enc_depth=cfg["model.enc_depth"],
        enc_heads=cfg["model.enc_heads"],
        dec_dim=cfg["model.dec_dim"],
        dec_depth=cfg["model.dec_depth"],
        dec_heads=cfg["model.dec_heads"],
        mask_ratio=cfg["model.mask_ratio"],
        cls_head_hidden=cfg["model.cls_head_hidden"],
        n_downstream_classes=cfg["model.n_downstream_classes"],
    ).validate()


def render_config(cfg: dict[str, object]) -> RenderConfig:
    rc = RenderConfig(
        plane_extent=cfg["render.plane_extent"],
        image_size=cfg["render.image_size"],
        alphas=tuple(cfg["render.alphas"]),
        neighborhood_radius=cfg["render.neighborhood_radius"],
    ).validate()
    if rc.image_size != cfg["model.img_size"]:
        raise ConfigError(
            f"render.image_size {rc.image_size} != model.img_size {cfg['model.img_size']}"
        )
    return rc
