"""Training objectives: masked-patch reconstruction plus position classification.

The reconstruction target is per-patch normalized -- each clean patch is
shifted/scaled to zero mean, unit variance (with a 1e-6 floor so constant
patches map to zeros instead of dividing by nothing). The squared error is
averaged over masked rows and their pixels only; visible rows never touch
the loss. The classification term is a plain softmax cross-entropy over
visible-token position logits. The two combine linearly with weights
(lambda_rec, lambda_cls), default (1.0, 0.1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

NORM_PIX_EPS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    lambda_rec: float = 1.0
    lambda_cls: float = 0.1

    def __post_init__(self):
        if self.lambda_rec < 0 or self.lambda_cls < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_rec == 0 and self.lambda_cls == 0:
            raise ValueError("at least one loss weight must be positive")


def norm_pix(patches: np.ndarray) -> np.ndarray:
    """(x - mean) / sqrt(var + 1e-6) along the last (pixel) axis, per patch."""
    patches = np.asarray(patches)
    mean = patches.mean(axis=-1, keepdims=True)
    var = patches.var(axis=-1, keepdims=True)
    return (patches - mean) / np.sqrt(var + NORM_PIX_EPS)


def denorm_pix(normalized: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Invert norm_pix using a reference patch matrix's statistics."""
    reference = np.asarray(reference)
    mean = reference.mean(axis=-1, keepdims=True)
    var = reference.var(axis=-1, keepdims=True)
    return np.asarray(normalized) * np.sqrt(var + NORM_PIX_EPS) + mean


def rec_loss(reconstruction: Tensor, normalized_target: np.ndarray, masked_ids: np.ndarray) -> Tensor:
    """MSE between reconstruction and target over masked rows only.

    Both are (B, N, D); `masked_ids` is (B, M) spatial indices. The mean
    runs over every masked row and pixel, so the value is insensitive to
    batch size and mask count.
    """
    masked_ids = np.asarray(masked_ids)
    if masked_ids.ndim == 1:
        masked_ids = masked_ids[None]
    if masked_ids.size == 0:
        raise ValueError("rec_loss needs at least one masked patch")
    target = np.asarray(normalized_target)
    if target.ndim == 2:
        target = target[None]
    if len(reconstruction.shape) == 2:
        reconstruction = T.reshape(reconstruction, (1, *reconstruction.shape))
    if tuple(reconstruction.shape) != target.shape:
        raise T.ShapeError(f"reconstruction {reconstruction.shape} vs target {target.shape}")
    recon_masked = T.gather_tokens(reconstruction, masked_ids)
    target_masked = np.take_along_axis(target, masked_ids[:, :, None], axis=1)
    diff = T.sub(recon_masked, Tensor(target_masked.astype(reconstruction.data.dtype)))
    return T.tmean(T.mul(diff, diff))


def cls_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy; delegates to the engine primitive."""
    return T.softmax_cross_entropy(logits, labels)


def total_loss(rec: Tensor, cls: Tensor, weights: LossWeights) -> Tensor:
    """lambda_rec * rec + lambda_cls * cls."""
    dtype = rec.data.dtype
    wr = Tensor(np.asarray(weights.lambda_rec, dtype=dtype))
    wc = Tensor(np.asarray(weights.lambda_cls, dtype=dtype))
    return T.add(T.mul(wr, rec), T.mul(wc, cls))
