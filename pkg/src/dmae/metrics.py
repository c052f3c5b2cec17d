"""Image-quality and classification metrics, plus model evaluation drivers.

SSIM follows the canonical recipe: 11x11 Gaussian window (sigma 1.5),
K1=0.01, K2=0.03, dynamic range 1.0, local statistics from valid-mode
convolution, averaged over windows and then channels. PSNR is
10*log10(max^2/MSE) with identical inputs capped at 100 dB.

The evaluation drivers run the model on a dataset split: classification
produces an EvalReport (confusion matrix, per-class and per-SNR accuracy);
denoising assembles full images from masked predictions -- de-normalized
with the noisy input's own patch statistics, visible patches passed through
unchanged -- and compares SSIM/PSNR against the noisy baseline.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from . import tensor as T
from .losses import denorm_pix
from .model import ModelConfig, encode, decode, forward_finetune, patchify, plan_mask, unpatchify
from .seeding import derive_seed
from .tensor import Tensor

PSNR_CAP_DB = 100.0


# ---------------------------------------------------------------------------
# pixel metrics


def _as_channels(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        return a[None]
    if a.ndim == 3:
        return a
    raise ValueError(f"expected (H, W) or (C, H, W) image, got shape {a.shape}")


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


@dataclass(frozen=True)
class PSNRResult:
    value_db: float
    identical: bool


def psnr_result(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> PSNRResult:
    err = mse(a, b)
    if err == 0.0:
        return PSNRResult(PSNR_CAP_DB, True)
    return PSNRResult(float(10.0 * np.log10(max_val * max_val / err)), False)


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB (identical images report the 100 dB cap)."""
    return psnr_result(a, b, max_val).value_db


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """Mean structural similarity; per channel, then averaged."""
    a, b = _as_channels(a), _as_channels(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    win = gaussian_window()
    if a.shape[-2] < win.shape[0] or a.shape[-1] < win.shape[1]:
        raise ValueError(f"image {a.shape[-2:]} smaller than the {win.shape} SSIM window")
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2
    vals = []
    for x, y in zip(a, b):
        mu_x = convolve2d(x, win, mode="valid")
        mu_y = convolve2d(y, win, mode="valid")
        mu_xx = convolve2d(x * x, win, mode="valid")
        mu_yy = convolve2d(y * y, win, mode="valid")
        mu_xy = convolve2d(x * y, win, mode="valid")
        var_x = mu_xx - mu_x * mu_x
        var_y = mu_yy - mu_y * mu_y
        cov = mu_xy - mu_x * mu_y
        s = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / ((mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2))
        vals.append(s.mean())
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# classification reporting


@dataclass
class EvalReport:
    overall_accuracy: float
    per_class_accuracy: dict[str, float]
    confusion: np.ndarray  # (K, K) counts, rows = true class
    per_snr_accuracy: dict[float, float]
    n_samples: int
    class_names: list[str]
    mean_ssim_noisy: float | None = None
    mean_psnr_noisy: float | None = None
    mean_ssim_denoised: float | None = None
    mean_psnr_denoised: float | None = None

    def to_json(self) -> str:
        doc = {
            "overall_accuracy": self.overall_accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "confusion": self.confusion.tolist(),
            "per_snr_accuracy": {str(k): v for k, v in sorted(self.per_snr_accuracy.items())},
            "n_samples": self.n_samples,
            "class_names": self.class_names,
        }
        for k in ("mean_ssim_noisy", "mean_psnr_noisy", "mean_ssim_denoised", "mean_psnr_denoised"):
            if getattr(self, k) is not None:
                doc[k] = getattr(self, k)
        return json.dumps(doc, indent=2)

    def to_text(self) -> str:
        lines = [f"samples: {self.n_samples}", f"overall accuracy: {self.overall_accuracy:.4f}", ""]
        lines.append("per-class accuracy:")
        for name, acc in self.per_class_accuracy.items():
            lines.append(f"  {name:>6s}  {acc:.4f}")
        lines.append("")
        lines.append("per-SNR accuracy:")
        for snr in sorted(self.per_snr_accuracy):
            lines.append(f"  {snr:+6.1f} dB  {self.per_snr_accuracy[snr]:.4f}")
        lines.append("")
        lines.append("confusion (rows = true):")
        header = " ".join(f"{n:>6s}" for n in self.class_names)
        lines.append(f"{'':>6s} {header}")
        for i, name in enumerate(self.class_names):
            row = " ".join(f"{int(v):>6d}" for v in self.confusion[i])
            lines.append(f"{name:>6s} {row}")
        return "\n".join(lines) + "\n"


def classification_report(
    labels: np.ndarray,
    predictions: np.ndarray,
    snrs: np.ndarray,
    class_names,
) -> EvalReport:
    """Assemble an EvalReport from raw predictions."""
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    snrs = np.asarray(snrs, dtype=np.float64)
    k = len(class_names)
    if labels.size == 0:
        raise ValueError("empty evaluation set")
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    correct = predictions == labels
    per_class = {}
    for c, name in enumerate(class_names):
        n_c = int(confusion[c].sum())
        per_class[name] = float(confusion[c, c] / n_c) if n_c else float("nan")
    per_snr = {}
    for snr in np.unique(snrs):
        sel = snrs == snr
        per_snr[float(snr)] = float(correct[sel].mean())
    return EvalReport(
        overall_accuracy=float(correct.mean()),
        per_class_accuracy=per_class,
        confusion=confusion,
        per_snr_accuracy=per_snr,
        n_samples=int(labels.size),
        class_names=list(class_names),
    )


def evaluate_classifier(params: dict[str, Tensor], cfg: ModelConfig, dataset, split: str = "test",
                        batch_size: int = 32) -> EvalReport:
    """Run the fine-tuned model over a split and tabulate the results."""
    n_classes = len(dataset.manifest["schemes"])
    head_classes = params["head.b"].shape[0]
    if head_classes != n_classes:
        raise ValueError(f"checkpoint predicts {head_classes} classes, dataset has {n_classes}")
    rows = dataset.split(split)
    labels, preds, snrs = [], [], []
    with T.no_grad():
        for start in range(0, len(rows), batch_size):
            ids = range(start, min(start + batch_size, len(rows)))
            noisy, _, batch_labels, batch_snrs = dataset.load_batch(split, ids)
            logits = forward_finetune(noisy, params, cfg)
            preds.append(np.argmax(logits.data, axis=-1))
            labels.append(batch_labels)
            snrs.append(batch_snrs)
    return classification_report(
        np.concatenate(labels), np.concatenate(preds), np.concatenate(snrs),
        dataset.manifest["schemes"],
    )


# ---------------------------------------------------------------------------
# denoising evaluation


def assemble_denoised(recon_norm: np.ndarray, noisy_image: np.ndarray, masked_ids: np.ndarray,
                      cfg: ModelConfig) -> np.ndarray:
    """Full image from masked predictions.

    Masked rows take the model output de-normalized with the NOISY input's
    per-patch statistics (clean statistics do not exist at inference time);
    visible rows pass through from the input unchanged.
    """
    noisy_patches = patchify(noisy_image, cfg.patch_size)
    denormed = denorm_pix(np.asarray(recon_norm), noisy_patches)
    out = noisy_patches.copy()
    out[masked_ids] = denormed[masked_ids]
    return unpatchify(out, cfg.patch_size, cfg.in_channels)


def denoise_image(noisy_image: np.ndarray, params: dict[str, Tensor], cfg: ModelConfig,
                  mask_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """(denoised image, masked_ids) for a single noisy input."""
    plan = plan_mask(cfg.n_patches, cfg.mask_ratio, mask_seed)
    dtype = params["enc.patch_embed.w"].dtype
    patches = patchify(noisy_image, cfg.patch_size).astype(dtype)
    with T.no_grad():
        vis = Tensor(patches[plan.visible_ids][None])
        q_v = encode(vis, plan.visible_ids[None], params, cfg)
        recon = decode(q_v, plan.visible_ids[None], plan.masked_ids[None], params, cfg)
    denoised = assemble_denoised(recon.data[0].astype(np.float64), noisy_image, plan.masked_ids, cfg)
    return denoised, plan.masked_ids


@dataclass
class DenoisingReport:
    mean_ssim_noisy: float
    mean_psnr_noisy: float
    mean_ssim_denoised: float
    mean_psnr_denoised: float
    n_pairs: int

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2)


def evaluate_denoising(params: dict[str, Tensor], cfg: ModelConfig, noisy: np.ndarray,
                       clean: np.ndarray, seed: int = 0) -> DenoisingReport:
    """SSIM/PSNR of noisy-vs-clean and denoised-vs-clean over image pairs."""
    noisy, clean = np.asarray(noisy), np.asarray(clean)
    if noisy.shape != clean.shape:
        raise ValueError("noisy/clean stacks must match in shape")
    if noisy.ndim == 3:
        noisy, clean = noisy[None], clean[None]
    s_noisy, p_noisy, s_den, p_den = [], [], [], []
    for i in range(noisy.shape[0]):
        denoised, _ = denoise_image(noisy[i], params, cfg, derive_seed(seed, "eval-mask", i))
        s_noisy.append(ssim(noisy[i], clean[i]))
        p_noisy.append(psnr(noisy[i], clean[i]))
        s_den.append(ssim(denoised, clean[i]))
        p_den.append(psnr(denoised, clean[i]))
    return DenoisingReport(
        mean_ssim_noisy=float(np.mean(s_noisy)),
        mean_psnr_noisy=float(np.mean(p_noisy)),
        mean_ssim_denoised=float(np.mean(s_den)),
        mean_psnr_denoised=float(np.mean(p_den)),
        n_pairs=int(noisy.shape[0]),
    )


# ---------------------------------------------------------------------------
# latent export


def export_latents(params: dict[str, Tensor], cfg: ModelConfig, dataset, split: str,
                   out_path: str | Path, mask_ratio: float | None = None, seed: int = 0) -> int:
    """Mean-pooled encoder features, one CSV row per sample; returns row count.

    With a mask ratio, each sample is masked from a seed derived from its id
    (reproducible); 0 or None means all patches are encoded.
    """
    rows = dataset.split(split)
    out_path = Path(out_path)
    dtype = params["enc.patch_embed.w"].dtype
    with open(out_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["label", "snr_db"] + [f"f{i}" for i in range(cfg.enc_dim)])
        with T.no_grad():
            for i in range(len(rows)):
                noisy, _, label, snr = dataset.load_pair(split, i)
                patches = patchify(noisy, cfg.patch_size).astype(dtype)
                if mask_ratio:
                    plan = plan_mask(cfg.n_patches, mask_ratio, derive_seed(seed, "latent-mask", i))
                    ids = plan.visible_ids
                else:
                    ids = np.arange(cfg.n_patches)
                feats = encode(Tensor(patches[ids][None]), ids[None], params, cfg)
                pooled = feats.data[0].mean(axis=0)
                writer.writerow([label, snr] + [f"{v:.8g}" for v in pooled])
    return len(rows)
