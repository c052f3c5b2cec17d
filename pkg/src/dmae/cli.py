"""Command-line entry point.

Subcommands cover the full workflow: `gen` builds a dataset, `pretrain` and
`finetune` train, `eval`/`denoise`/`export-latents` measure, `ablate` sweeps
a config key over a grid, and `gradcheck` verifies the autodiff engine
end-to-end on a tiny model. Every run directory gets a resolved config
snapshot, the seed, and the package version, so runs are reproducible from
their artifacts alone.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    PRESETS,
    config_hash,
    format_config,
    load_config,
    model_config,
    render_config,
)
from .datasets import Dataset, export_png, gen_dataset
from .seeding import derive_seed


def _parse_overrides(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"override '{pair}' is not KEY=VALUE")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _resolve(args) -> dict[str, object]:
    overrides = _parse_overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["run.seed"] = str(args.seed)
    if getattr(args, "data", None) is not None:
        overrides["data.dir"] = args.data
    return load_config(getattr(args, "config", None), overrides, preset=args.preset)


def _write_run_records(out_dir: Path, cfg: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(format_config(cfg))
    (out_dir / "version.txt").write_text(f"dmae {__version__}\n")
    (out_dir / "seed.txt").write_text(f"{cfg['run.seed']}\n")


def _train_config(cfg: dict, phase: str, out_dir: str):
    from .train import TrainConfig

    return TrainConfig(
        phase=phase,
        model=model_config(cfg),
        data_dir=cfg["data.dir"],
        out_dir=out_dir,
        batch_size=cfg[f"{phase}.batch_size"],
        epochs=cfg[f"{phase}.epochs"],
        lr=cfg[f"{phase}.lr"],
        weight_decay=cfg[f"{phase}.weight_decay"],
        lambda_rec=cfg.get("pretrain.lambda_rec", 1.0),
        lambda_cls=cfg.get("pretrain.lambda_cls", 0.1),
        master_seed=cfg["run.seed"],
        checkpoint_every=cfg[f"{phase}.checkpoint_every"],
        cosine_lr=cfg[f"{phase}.cosine_lr"],
        fresh_masks=cfg.get("pretrain.fresh_masks", True),
    )


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out or cfg["data.dir"])
    _write_run_records(out, cfg)
    gen_dataset(
        out,
        cfg["run.seed"],
        render_config(cfg),
        cfg["data.pretrain_count"],
        cfg["data.train_count"],
        cfg["data.test_count"],
    )
    print(f"dataset written to {out}")
    return 0


def _cmd_pretrain(args) -> int:
    from .train import pretrain

    cfg = _resolve(args)
    out = Path(args.out)
    _write_run_records(out, cfg)
    tc = _train_config(cfg, "pretrain", str(out))
    result = pretrain(tc, resume_from=args.resume)
    last = result.log[-1]
    print(f"pretrain done: epoch {last['epoch']} total {last['total']:.4f} "
          f"(rec {last['rec']:.4f}, cls {last['cls']:.4f}) -> {result.checkpoint_path}")
    return 0


def _cmd_finetune(args) -> int:
    from .train import finetune

    cfg = _resolve(args)
    out = Path(args.out)
    _write_run_records(out, cfg)
    if args.ckpt is None and not args.from_scratch:
        print("finetune needs --ckpt PATH or an explicit --from-scratch", file=sys.stderr)
        return 1
    tc = _train_config(cfg, "finetune", str(out))
    result = finetune(tc, pretrained_ckpt=args.ckpt)
    last = result.log[-1]
    print(f"finetune done: epoch {last['epoch']} loss {last['loss']:.4f} "
          f"train acc {last['train_accuracy']:.4f} -> {result.checkpoint_path}")
    return 0


def _load_params(ckpt: str, cfg: dict, phase: str):
    from .checkpoint import load_training_state
    from .model import init_params

    params = init_params(model_config(cfg), cfg["run.seed"], phase=phase)
    load_training_state(ckpt, params)
    return params


def _cmd_eval(args) -> int:
    from .metrics import evaluate_classifier

    cfg = _resolve(args)
    out = Path(args.out)
    _write_run_records(out, cfg)
    params = _load_params(args.ckpt, cfg, "finetune")
    report = evaluate_classifier(params, model_config(cfg), Dataset(cfg["data.dir"]), args.split)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.txt").write_text(report.to_text())
    print(report.to_text())
    return 0


def _cmd_denoise(args) -> int:
    from .metrics import evaluate_denoising
    from .render import render_constellation
    from .signals import SCHEMES, add_awgn, gen_clean

    cfg = _resolve(args)
    out = Path(args.out)
    _write_run_records(out, cfg)
    params = _load_params(args.ckpt, cfg, "pretrain")
    rcfg = render_config(cfg)
    noisy, clean = [], []
    for i in range(args.count):
        seed = derive_seed(cfg["run.seed"], "denoise-heldout", i)
        sig = gen_clean(SCHEMES[i % len(SCHEMES)], seed=seed)
        noisy.append(render_constellation(add_awgn(sig, args.snr, seed), rcfg, "noisy").pixels)
        clean.append(render_constellation(sig, rcfg, "clean").pixels)
    report = evaluate_denoising(params, model_config(cfg), np.stack(noisy), np.stack(clean),
                                seed=cfg["run.seed"])
    (out / "denoising.json").write_text(report.to_json() + "\n")
    if args.save_images:
        from .metrics import denoise_image

        for i in range(min(args.save_images, args.count)):
            den, _ = denoise_image(noisy[i], params, model_config(cfg),
                                   derive_seed(cfg["run.seed"], "eval-mask", i))
            export_png(out / f"pair{i:03d}_noisy.png", noisy[i])
            export_png(out / f"pair{i:03d}_clean.png", clean[i])
            export_png(out / f"pair{i:03d}_denoised.png", np.clip(den, 0.0, 1.0))
    print(report.to_json())
    return 0


def _cmd_export_latents(args) -> int:
    from .metrics import export_latents

    cfg = _resolve(args)
    out = Path(args.out)
    _write_run_records(out, cfg)
    phase = "finetune" if args.finetuned else "pretrain"
    params = _load_params(args.ckpt, cfg, phase)
    n = export_latents(params, model_config(cfg), Dataset(cfg["data.dir"]), args.split,
                       out / "latents.csv", mask_ratio=args.mask_ratio, seed=cfg["run.seed"])
    print(f"wrote {n} rows to {out / 'latents.csv'}")
    return 0


def _cmd_ablate(args) -> int:
    from .metrics import evaluate_classifier
    from .train import finetune, pretrain

    cfg = _resolve(args)
    out = Path(args.out)
    _write_run_records(out, cfg)
    if "=" not in args.sweep:
        raise ConfigError(f"--sweep expects KEY=V1,V2,..., got '{args.sweep}'")
    key, values_text = args.sweep.split("=", 1)
    key = key.strip()
    values = [v.strip() for v in values_text.split(",") if v.strip()]
    if not values:
        raise ConfigError("--sweep lists no values")
    rows = []
    results_path = out / "ablation.jsonl"
    for value in values:
        point_cfg = load_config(getattr(args, "config", None),
                                {**_parse_overrides(args.set), key: value},
                                preset=args.preset)
        if getattr(args, "seed", None) is not None:
            point_cfg["run.seed"] = args.seed
        if getattr(args, "data", None) is not None:
            point_cfg["data.dir"] = args.data
        point_dir = out / f"{key.replace('.', '_')}={value}"
        pre = pretrain(_train_config(point_cfg, "pretrain", str(point_dir / "pretrain")))
        fin = finetune(_train_config(point_cfg, "finetune", str(point_dir / "finetune")),
                       pretrained_ckpt=pre.checkpoint_path)
        report = evaluate_classifier(fin.params, model_config(point_cfg),
                                     Dataset(point_cfg["data.dir"]), "test")
        row = {key: value, "test_accuracy": report.overall_accuracy}
        rows.append(row)
        with open(results_path, "a") as f:
            f.write(json.dumps(row) + "\n")
        print(f"{key}={value}: test accuracy {report.overall_accuracy:.4f}")
    print(f"{len(rows)} grid points -> {results_path}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import tiny_model_gradcheck

    errors = tiny_model_gradcheck(seed=args.seed if args.seed is not None else 0)
    worst = max(errors.values())
    for name in sorted(errors, key=errors.get, reverse=True)[:5]:
        print(f"  {name}: {errors[name]:.3e}")
    print(f"max relative error over {len(errors)} parameters: {worst:.3e} (tolerance {args.tol:g})")
    if worst >= args.tol:
        print("gradient check FAILED", file=sys.stderr)
        return 1
    print("gradient check passed")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_common(p: argparse.ArgumentParser, needs_out: bool = True) -> None:
    p.add_argument("--config", help="config file (key = value lines)")
    p.add_argument("--preset", default="desk", choices=sorted(PRESETS))
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="config override (repeatable)")
    p.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    p.add_argument("--data", help="dataset directory (overrides data.dir)")
    if needs_out:
        p.add_argument("--out", required=True, help="run output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dmae",
        description="Constellation denoising masked autoencoder workbench",
    )
    parser.add_argument("--version", action="version", version=f"dmae {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a paired noisy/clean dataset")
    _add_common(p, needs_out=False)
    p.add_argument("--out", help="dataset directory (default: data.dir)")
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("pretrain", help="denoising + position-classification pretraining")
    _add_common(p)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(fn=_cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised scheme classification")
    _add_common(p)
    p.add_argument("--ckpt", help="pretraining checkpoint for encoder init")
    p.add_argument("--from-scratch", action="store_true",
                   help="random encoder init (baseline)")
    p.set_defaults(fn=_cmd_finetune)

    p = sub.add_parser("eval", help="classification report on a split")
    _add_common(p)
    p.add_argument("--ckpt", required=True, help="fine-tuned checkpoint")
    p.add_argument("--split", default="test")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("denoise", help="denoising SSIM/PSNR on held-out pairs")
    _add_common(p)
    p.add_argument("--ckpt", required=True, help="pretraining checkpoint")
    p.add_argument("--snr", type=float, default=-5.0)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--save-images", type=int, default=0, metavar="N",
                   help="export N PNG triples for inspection")
    p.set_defaults(fn=_cmd_denoise)

    p = sub.add_parser("export-latents", help="mean-pooled encoder features to CSV")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--mask-ratio", type=float, default=None)
    p.add_argument("--finetuned", action="store_true",
                   help="checkpoint is from fine-tuning (default: pretraining)")
    p.set_defaults(fn=_cmd_export_latents)

    p = sub.add_parser("ablate", help="sweep one config key over a grid")
    _add_common(p)
    p.add_argument("--sweep", required=True, metavar="KEY=V1,V2,...",
                   help="e.g. pretrain.lambda_cls=0.01,0.05,0.1,0.25,0.5,1.0")
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("gradcheck", help="end-to-end finite-difference gradient check")
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # one diagnostic line, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        if "--traceback" in (argv or sys.argv):
            traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
