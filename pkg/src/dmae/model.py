"""Masked autoencoder with a position-classification side head.

Pretraining masks a noisy constellation image, encodes the visible patches
with a small ViT, reconstructs the clean image at masked positions through
a decoder seeded with one shared mask token, and simultaneously classifies
every visible token by its spatial rank: the k-th visible patch (counting
in ascending patch-index order) must be recognized as class k. The number
of position classes therefore equals the visible-patch count,
round(N * (1 - mask_ratio)).

Fine-tuning drops the decoder and the position head entirely: all patches
are encoded (no masking), token features are mean-pooled, and a fresh
linear head predicts the modulation scheme.

Parameters live in a flat {name: Tensor} dict with stable names, so the
encoder subset transfers between phases by name.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .losses import LossWeights, cls_loss, norm_pix, rec_loss, total_loss
from .seeding import derive
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    img_size: int = 224
    patch_size: int = 16
    in_channels: int = 3
    enc_dim: int = 768
    enc_depth: int = 12
    enc_heads: int = 12
    dec_dim: int = 512
    dec_depth: int = 8
    dec_heads: int = 8
    mask_ratio: float = 0.75
    cls_head_hidden: int = 768  # 0 = single linear layer
    n_downstream_classes: int = 10

    def validate(self) -> "ModelConfig":
        if self.img_size % self.patch_size != 0:
            raise ValueError(f"img_size {self.img_size} not divisible by patch_size {self.patch_size}")
        if self.enc_dim % self.enc_heads != 0:
            raise ValueError("enc_dim must be divisible by enc_heads")
        if self.dec_dim % self.dec_heads != 0:
            raise ValueError("dec_dim must be divisible by dec_heads")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must lie strictly between 0 and 1")
        if min(self.enc_depth, self.dec_depth, self.in_channels) < 1:
            raise ValueError("depths and channel count must be >= 1")
        if self.cls_head_hidden < 0 or self.n_downstream_classes < 2:
            raise ValueError("cls_head_hidden >= 0 and n_downstream_classes >= 2 required")
        return self

    @property
    def grid(self) -> int:
        return self.img_size // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.in_channels

    @property
    def n_visible(self) -> int:
        return int(round(self.n_patches * (1.0 - self.mask_ratio)))

    @property
    def n_position_classes(self) -> int:
        return self.n_visible


DESK_CONFIG = ModelConfig(
    img_size=64, patch_size=8, enc_dim=128, enc_depth=4, enc_heads=4,
    dec_dim=64, dec_depth=2, dec_heads=4, cls_head_hidden=128,
)
PAPER_CONFIG = ModelConfig()


# ---------------------------------------------------------------------------
# patch geometry


def patchify(images: np.ndarray, patch_size: int) -> np.ndarray:
    """(..., C, H, W) -> (..., N, P*P*C); patches scan row-major, pixels channel-last."""
    images = np.asarray(images)
    *lead, c, h, w = images.shape
    p = patch_size
    if h % p or w % p:
        raise ValueError(f"image dims ({h}, {w}) not divisible by patch size {p}")
    gh, gw = h // p, w // p
    x = images.reshape(*lead, c, gh, p, gw, p)
    n = len(lead)
    # (..., gh, gw, p, p, c)
    x = x.transpose(*range(n), n + 1, n + 3, n + 2, n + 4, n)
    return np.ascontiguousarray(x.reshape(*lead, gh * gw, p * p * c))


def unpatchify(patches: np.ndarray, patch_size: int, in_channels: int = 3) -> np.ndarray:
    """Inverse of patchify for square images."""
    patches = np.asarray(patches)
    *lead, n, d = patches.shape
    p = patch_size
    c = in_channels
    if d != p * p * c:
        raise ValueError(f"patch width {d} != {p}*{p}*{c}")
    g = int(np.sqrt(n))
    if g * g != n:
        raise ValueError(f"{n} patches do not tile a square image")
    k = len(lead)
    x = patches.reshape(*lead, g, g, p, p, c)
    # (..., c, g, p, g, p)
    x = x.transpose(*range(k), k + 4, k, k + 2, k + 1, k + 3)
    return np.ascontiguousarray(x.reshape(*lead, c, g * p, g * p))


# ---------------------------------------------------------------------------
# masking


@dataclass(frozen=True)
class MaskPlan:
    """A visible/masked partition of the N patch indices."""

    visible_ids: np.ndarray  # sorted, ascending
    masked_ids: np.ndarray  # sorted, ascending
    n_patches: int

    @property
    def ids_restore(self) -> np.ndarray:
        """Maps spatial order -> position in concat(visible, masked)."""
        return np.argsort(np.concatenate([self.visible_ids, self.masked_ids]), kind="stable")


def plan_mask(n_patches: int, mask_ratio: float, seed: int) -> MaskPlan:
    """Uniformly random visible subset of size round(N*(1-r)).

    Implemented by ranking N i.i.d. uniform draws and keeping the lowest
    ranks visible; deterministic under `seed`.
    """
    if not 0.0 < mask_ratio < 1.0:
        raise ValueError("mask_ratio must lie strictly between 0 and 1")
    n_visible = int(round(n_patches * (1.0 - mask_ratio)))
    if n_visible < 1 or n_visible >= n_patches:
        raise ValueError(
            f"mask_ratio {mask_ratio} with {n_patches} patches leaves "
            f"{n_visible} visible / {n_patches - n_visible} masked; both sides need >= 1"
        )
    noise = derive(seed, "mask").random(n_patches)
    order = np.argsort(noise, kind="stable")
    return MaskPlan(
        visible_ids=np.sort(order[:n_visible]),
        masked_ids=np.sort(order[n_visible:]),
        n_patches=n_patches,
    )


def position_labels(plan: MaskPlan) -> np.ndarray:
    """Rank identity: the k-th visible patch (ascending spatial index) is class k."""
    return np.arange(len(plan.visible_ids), dtype=np.int64)


# ---------------------------------------------------------------------------
# parameters


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) with draws beyond 2*std rejected and redrawn."""
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2.0 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2.0 * std
    return x.astype(np.float32)


def _block_param_shapes(dim: int) -> dict[str, tuple]:
    hidden = 4 * dim
    return {
        "ln1.g": (dim,), "ln1.b": (dim,),
        "attn.wq": (dim, dim), "attn.bq": (dim,),
        "attn.wk": (dim, dim), "attn.bk": (dim,),
        "attn.wv": (dim, dim), "attn.bv": (dim,),
        "attn.wo": (dim, dim), "attn.bo": (dim,),
        "ln2.g": (dim,), "ln2.b": (dim,),
        "mlp.w1": (dim, hidden), "mlp.b1": (hidden,),
        "mlp.w2": (hidden, dim), "mlp.b2": (dim,),
    }


def param_shapes(cfg: ModelConfig, phase: str = "pretrain") -> dict[str, tuple]:
    """Stable name -> shape map for one phase's parameter set."""
    if phase not in ("pretrain", "finetune"):
        raise ValueError(f"unknown phase '{phase}'")
    shapes: dict[str, tuple] = {
        "enc.patch_embed.w": (cfg.patch_dim, cfg.enc_dim),
        "enc.patch_embed.b": (cfg.enc_dim,),
        "enc.pos_embed": (cfg.n_patches, cfg.enc_dim),
    }
    for i in range(cfg.enc_depth):
        for k, shp in _block_param_shapes(cfg.enc_dim).items():
            shapes[f"enc.blocks.{i}.{k}"] = shp
    shapes["enc.norm.g"] = (cfg.enc_dim,)
    shapes["enc.norm.b"] = (cfg.enc_dim,)
    if phase == "pretrain":
        shapes.update({
            "dec.embed.w": (cfg.enc_dim, cfg.dec_dim),
            "dec.embed.b": (cfg.dec_dim,),
            "dec.mask_token": (cfg.dec_dim,),
            "dec.pos_embed": (cfg.n_patches, cfg.dec_dim),
        })
        for i in range(cfg.dec_depth):
            for k, shp in _block_param_shapes(cfg.dec_dim).items():
                shapes[f"dec.blocks.{i}.{k}"] = shp
        shapes.update({
            "dec.norm.g": (cfg.dec_dim,), "dec.norm.b": (cfg.dec_dim,),
            "dec.pred.w": (cfg.dec_dim, cfg.patch_dim), "dec.pred.b": (cfg.patch_dim,),
        })
        if cfg.cls_head_hidden > 0:
            shapes.update({
                "cls.w1": (cfg.enc_dim, cfg.cls_head_hidden), "cls.b1": (cfg.cls_head_hidden,),
                "cls.w2": (cfg.cls_head_hidden, cfg.n_position_classes),
                "cls.b2": (cfg.n_position_classes,),
            })
        else:
            shapes.update({
                "cls.w": (cfg.enc_dim, cfg.n_position_classes),
                "cls.b": (cfg.n_position_classes,),
            })
    else:
        shapes.update({
            "head.w": (cfg.enc_dim, cfg.n_downstream_classes),
            "head.b": (cfg.n_downstream_classes,),
        })
    return shapes


def init_params(cfg: ModelConfig, seed: int, phase: str = "pretrain", dtype=np.float32) -> dict[str, Tensor]:
    """Truncated-normal weights (std 0.02), zero biases, unit norm gains.

    Each tensor is drawn from its own named stream, so the same (seed, name)
    produces the same values in every phase.
    """
    cfg.validate()
    params: dict[str, Tensor] = {}
    for name, shape in param_shapes(cfg, phase).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("g",):
            data = np.ones(shape, dtype=dtype)
        elif leaf in ("b", "b1", "b2", "bq", "bk", "bv", "bo"):
            data = np.zeros(shape, dtype=dtype)
        else:
            data = _trunc_normal(derive(seed, "init", name), shape).astype(dtype)
        params[name] = Tensor(data, requires_grad=True, dtype=dtype)
    return params


def encoder_param_names(params: dict[str, Tensor]) -> list[str]:
    return [n for n in params if n.startswith("enc.")]


# ---------------------------------------------------------------------------
# forward pieces


def _block(x: Tensor, params: dict[str, Tensor], prefix: str, n_heads: int) -> Tensor:
    """Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x))."""
    p = params
    h = T.layer_norm(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    q = T.linear(h, p[f"{prefix}.attn.wq"], p[f"{prefix}.attn.bq"])
    k = T.linear(h, p[f"{prefix}.attn.wk"], p[f"{prefix}.attn.bk"])
    v = T.linear(h, p[f"{prefix}.attn.wv"], p[f"{prefix}.attn.bv"])
    a = T.attention(q, k, v, n_heads)
    x = T.add(x, T.linear(a, p[f"{prefix}.attn.wo"], p[f"{prefix}.attn.bo"]))
    h = T.layer_norm(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    h = T.linear(h, p[f"{prefix}.mlp.w1"], p[f"{prefix}.mlp.b1"])
    h = T.gelu(h)
    h = T.linear(h, p[f"{prefix}.mlp.w2"], p[f"{prefix}.mlp.b2"])
    return T.add(x, h)


def encode(visible_patches: Tensor, visible_ids: np.ndarray, params: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Visible patches (B, V, patch_dim) + their spatial ids -> features (B, V, enc_dim)."""
    x = T.linear(visible_patches, params["enc.patch_embed.w"], params["enc.patch_embed.b"])
    x = T.add(x, T.embed_lookup(params["enc.pos_embed"], visible_ids))
    for i in range(cfg.enc_depth):
        x = _block(x, params, f"enc.blocks.{i}", cfg.enc_heads)
    return T.layer_norm(x, params["enc.norm.g"], params["enc.norm.b"])


def decode(q_v: Tensor, visible_ids: np.ndarray, masked_ids: np.ndarray, params: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Visible features -> reconstructed pixel rows for ALL N patches (B, N, patch_dim).

    Masked positions all start from the one shared mask token; the decoder
    positional embedding is what tells them apart.
    """
    b, v, _ = q_v.shape
    m = masked_ids.shape[1]
    if visible_ids.shape != (b, v) or masked_ids.shape != (b, m) or v + m != cfg.n_patches:
        raise T.ShapeError("mask plan does not match encoded feature shape")
    y = T.linear(q_v, params["dec.embed.w"], params["dec.embed.b"])
    token = T.reshape(params["dec.mask_token"], (1, 1, cfg.dec_dim))
    mask_rows = T.broadcast_to(token, (b, m, cfg.dec_dim))
    full = T.concat([y, mask_rows], axis=1)
    ids_restore = np.argsort(np.concatenate([visible_ids, masked_ids], axis=1), axis=1, kind="stable")
    x = T.gather_tokens(full, ids_restore)  # back to spatial order
    pos = T.reshape(params["dec.pos_embed"], (1, cfg.n_patches, cfg.dec_dim))
    x = T.add(x, T.broadcast_to(pos, (b, cfg.n_patches, cfg.dec_dim)))
    for i in range(cfg.dec_depth):
        x = _block(x, params, f"dec.blocks.{i}", cfg.dec_heads)
    x = T.layer_norm(x, params["dec.norm.g"], params["dec.norm.b"])
    return T.linear(x, params["dec.pred.w"], params["dec.pred.b"])


def classify_patches(q_v: Tensor, params: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Per-token position logits (B, V, n_position_classes) from a shared head."""
    if cfg.cls_head_hidden > 0:
        h = T.linear(q_v, params["cls.w1"], params["cls.b1"])
        h = T.gelu(h)
        return T.linear(h, params["cls.w2"], params["cls.b2"])
    return T.linear(q_v, params["cls.w"], params["cls.b"])


# ---------------------------------------------------------------------------
# full passes


@dataclass
class PretrainOutput:
    total: Tensor  # scalar
    rec: Tensor  # scalar
    cls: Tensor  # scalar
    recon_patches: Tensor  # (B, N, patch_dim), normalized pixel space
    visible_ids: np.ndarray  # (B, V)
    masked_ids: np.ndarray  # (B, M)


def forward_pretrain(
    noisy: np.ndarray,
    clean: np.ndarray,
    params: dict[str, Tensor],
    cfg: ModelConfig,
    weights: LossWeights,
    mask_seeds,
) -> PretrainOutput:
    """Denoising pretrain pass over a batch.

    The NOISY image is masked and encoded; the reconstruction target is the
    per-patch-normalized CLEAN image at the masked positions; visible tokens
    are classified against their position labels. `mask_seeds` gives one
    masking seed per sample.
    """
    noisy = np.asarray(noisy)
    clean = np.asarray(clean)
    if noisy.ndim == 3:
        noisy, clean = noisy[None], clean[None]
    if noisy.shape != clean.shape:
        raise T.ShapeError(f"noisy {noisy.shape} and clean {clean.shape} images must match")
    b = noisy.shape[0]
    mask_seeds = list(mask_seeds)
    if len(mask_seeds) != b:
        raise ValueError(f"need {b} mask seeds, got {len(mask_seeds)}")

    dtype = params["enc.patch_embed.w"].dtype
    noisy_patches = patchify(noisy, cfg.patch_size).astype(dtype)
    clean_patches = patchify(clean, cfg.patch_size).astype(dtype)

    plans = [plan_mask(cfg.n_patches, cfg.mask_ratio, s) for s in mask_seeds]
    visible_ids = np.stack([p.visible_ids for p in plans])
    masked_ids = np.stack([p.masked_ids for p in plans])

    vis = Tensor(np.take_along_axis(noisy_patches, visible_ids[:, :, None], axis=1))
    q_v = encode(vis, visible_ids, params, cfg)
    recon = decode(q_v, visible_ids, masked_ids, params, cfg)

    target = norm_pix(clean_patches)
    rec = rec_loss(recon, target, masked_ids)

    logits = classify_patches(q_v, params, cfg)
    flat_logits = T.reshape(logits, (b * cfg.n_visible, cfg.n_position_classes))
    labels = np.tile(position_labels(plans[0]), b)
    cls = cls_loss(flat_logits, labels)

    total = total_loss(rec, cls, weights)
    return PretrainOutput(total, rec, cls, recon, visible_ids, masked_ids)


def forward_finetune(images: np.ndarray, params: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """All-patch encode, mean-pool, downstream head -> logits (B, n_downstream_classes)."""
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    dtype = params["enc.patch_embed.w"].dtype
    patches = patchify(images, cfg.patch_size).astype(dtype)
    b = patches.shape[0]
    all_ids = np.broadcast_to(np.arange(cfg.n_patches), (b, cfg.n_patches))
    feats = encode(Tensor(patches), all_ids, params, cfg)
    pooled = T.tmean(feats, axis=1)
    return T.linear(pooled, params["head.w"], params["head.b"])
