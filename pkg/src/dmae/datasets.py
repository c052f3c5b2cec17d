"""Paired noisy/clean constellation datasets on disk.

A dataset directory looks like:

    manifest.json
    pretrain/noisy/000000.dmimg   pretrain/clean/000000.dmimg   ...
    train/...                     test/...

The pretrain split draws one SNR per sample uniformly from [-10, 10] dB;
the supervised splits walk the integer grid -10..10 dB. Classes are exactly
balanced everywhere (sample i gets scheme i mod 10). Every sample records
its seed, so any file can be regenerated bit-identically from the manifest.

`.dmimg` files are trivially simple: 6-byte magic "DMIMG1", three u32
dimensions (channels, height, width, little-endian), then the float32
pixel payload. A lossless 8-bit PNG export exists purely for eyeballing.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .render import ConstellationImage, RenderConfig, render_constellation
from .seeding import derive, derive_seed
from .signals import SCHEMES, SIGNAL_LENGTH, add_awgn, gen_clean, scheme_index

IMAGE_MAGIC = b"DMIMG1"
SNR_GRID_DB = tuple(range(-10, 11))  # integer SNRs for the supervised splits


class DatasetError(RuntimeError):
    """Malformed dataset directory or image file."""


# ---------------------------------------------------------------------------
# image file format


def save_image(path: str | Path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype="<f4")
    if pixels.ndim != 3:
        raise ValueError(f"expected (C, H, W) pixels, got shape {pixels.shape}")
    with open(path, "wb") as f:
        f.write(IMAGE_MAGIC)
        f.write(struct.pack("<III", *pixels.shape))
        f.write(pixels.tobytes())


def load_image(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:6] != IMAGE_MAGIC:
        raise DatasetError(f"{path} is not an image file (bad magic)")
    c, h, w = struct.unpack("<III", raw[6:18])
    expect = 18 + 4 * c * h * w
    if len(raw) != expect:
        raise DatasetError(f"{path}: expected {expect} bytes, found {len(raw)}")
    return np.frombuffer(raw[18:], dtype="<f4").reshape(c, h, w).copy()


def export_png(path: str | Path, pixels: np.ndarray) -> None:
    """8-bit preview for human inspection; not part of the data path."""
    from PIL import Image

    arr = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
    rgb = np.round(arr.transpose(1, 2, 0) * 255.0).astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(path)


# ---------------------------------------------------------------------------
# pair generation


def make_pair(
    scheme: str,
    snr_db: float,
    seed: int,
    cfg: RenderConfig,
) -> tuple[ConstellationImage, ConstellationImage, int]:
    """One (noisy, clean, label) training example.

    Both images come from the same symbol sequence: the clean signal is
    generated once from `seed` and the noisy variant adds AWGN on top. An
    infinite SNR therefore reproduces the clean image bit-exactly.
    """
    clean_sig = gen_clean(scheme, SIGNAL_LENGTH, seed)
    noisy_sig = add_awgn(clean_sig, snr_db, seed)
    clean_img = render_constellation(clean_sig, cfg, "clean")
    noisy_img = render_constellation(noisy_sig, cfg, "noisy")
    return noisy_img, clean_img, scheme_index(scheme)


@dataclass(frozen=True)
class SplitSpec:
    name: str
    count: int
    snr_mode: str  # "uniform" (continuous draw) or "grid" (integer cycle)


def _split_sample_plan(spec: SplitSpec, master_seed: int) -> list[dict]:
    if spec.count % len(SCHEMES) != 0:
        raise ValueError(f"split '{spec.name}' count {spec.count} not divisible by {len(SCHEMES)} classes")
    rows = []
    for i in range(spec.count):
        scheme = SCHEMES[i % len(SCHEMES)]
        if spec.snr_mode == "uniform":
            snr = float(derive(master_seed, "snr", spec.name, i).uniform(-10.0, 10.0))
        else:
            snr = float(SNR_GRID_DB[i % len(SNR_GRID_DB)])
        rows.append(
            {
                "id": i,
                "scheme": scheme,
                "label": scheme_index(scheme),
                "snr_db": snr,
                "seed": derive_seed(master_seed, "sample", spec.name, i),
                "noisy": f"{spec.name}/noisy/{i:06d}.dmimg",
                "clean": f"{spec.name}/clean/{i:06d}.dmimg",
            }
        )
    return rows


def gen_dataset(
    out_dir: str | Path,
    master_seed: int,
    cfg: RenderConfig,
    pretrain_count: int,
    train_count: int,
    test_count: int,
) -> Path:
    """Generate and persist all three splits; returns the dataset root."""
    cfg.validate()
    out_dir = Path(out_dir)
    specs = [
        SplitSpec("pretrain", pretrain_count, "uniform"),
        SplitSpec("train", train_count, "grid"),
        SplitSpec("test", test_count, "grid"),
    ]
    manifest: dict = {
        "master_seed": master_seed,
        "render": {
            "plane_extent": cfg.plane_extent,
            "image_size": cfg.image_size,
            "alphas": list(cfg.alphas),
            "neighborhood_radius": cfg.neighborhood_radius,
        },
        "schemes": list(SCHEMES),
        "splits": {},
    }
    for spec in specs:
        rows = _split_sample_plan(spec, master_seed)
        (out_dir / spec.name / "noisy").mkdir(parents=True, exist_ok=True)
        (out_dir / spec.name / "clean").mkdir(parents=True, exist_ok=True)
        for row in rows:
            noisy, clean, _ = make_pair(row["scheme"], row["snr_db"], row["seed"], cfg)
            save_image(out_dir / row["noisy"], noisy.pixels)
            save_image(out_dir / row["clean"], clean.pixels)
        manifest["splits"][spec.name] = {"count": spec.count, "samples": rows}
    # Manifest written last: its presence marks a complete dataset.
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    return out_dir


# ---------------------------------------------------------------------------
# reading


class Dataset:
    """Read-only view over a generated dataset directory.

    Loaded images are cached in memory up to `cache_limit_bytes` (training
    re-reads the same files every epoch); set 0 to disable.
    """

    def __init__(self, root: str | Path, cache_limit_bytes: int = 1 << 30):
        self.root = Path(root)
        self._cache: dict[str, np.ndarray] = {}
        self._cache_bytes = 0
        self._cache_limit = cache_limit_bytes
        manifest_path = self.root / "manifest.json"
        if not manifest_path.exists():
            raise DatasetError(f"no manifest.json under {self.root}")
        with open(manifest_path) as f:
            self.manifest = json.load(f)
        self.render_config = RenderConfig(
            plane_extent=self.manifest["render"]["plane_extent"],
            image_size=self.manifest["render"]["image_size"],
            alphas=tuple(self.manifest["render"]["alphas"]),
            neighborhood_radius=self.manifest["render"]["neighborhood_radius"],
        )

    def split(self, name: str) -> list[dict]:
        try:
            return self.manifest["splits"][name]["samples"]
        except KeyError:
            raise DatasetError(f"dataset has no split '{name}'") from None

    def _load(self, rel_path: str) -> np.ndarray:
        cached = self._cache.get(rel_path)
        if cached is not None:
            return cached
        img = load_image(self.root / rel_path)
        if self._cache_bytes + img.nbytes <= self._cache_limit:
            self._cache[rel_path] = img
            self._cache_bytes += img.nbytes
        return img

    def load_pair(self, split: str, idx: int) -> tuple[np.ndarray, np.ndarray, int, float]:
        """(noisy, clean, label, snr_db) for one sample."""
        row = self.split(split)[idx]
        return self._load(row["noisy"]), self._load(row["clean"]), row["label"], row["snr_db"]

    def load_batch(self, split: str, ids) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Stacked (noisy, clean, labels, snrs) arrays for a list of indices."""
        rows = self.split(split)
        noisy, clean, labels, snrs = [], [], [], []
        for i in ids:
            row = rows[i]
            noisy.append(self._load(row["noisy"]))
            clean.append(self._load(row["clean"]))
            labels.append(row["label"])
            snrs.append(row["snr_db"])
        return (
            np.stack(noisy),
            np.stack(clean),
            np.asarray(labels, dtype=np.int64),
            np.asarray(snrs, dtype=np.float64),
        )
