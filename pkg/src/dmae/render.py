"""Rasterize IQ samples into enhanced-grayscale constellation images.

Each sample contributes its instantaneous power to nearby pixels with an
exponential falloff in pixel-space distance, B[i,j] = sum_k P_k * exp(-a*d).
Three decay rates stacked as channels give a three-channel image whose
channels trade off spatial spread against point sharpness. A second, simpler
"signal image" view reshapes the real part of the waveform into a square and
upsamples it bilinearly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signals import IQSignal


@dataclass(frozen=True)
class RenderConfig:
    """Geometry and decay parameters for constellation rendering."""

    plane_extent: float = 7.0  # complex plane spans [-extent/2, extent/2]^2
    image_size: int = 224
    alphas: tuple[float, float, float] = (0.6, 1.2, 2.4)  # per-pixel decay rates
    neighborhood_radius: float = 6.0  # pixels

    def validate(self) -> "RenderConfig":
        if self.plane_extent <= 0:
            raise ValueError("plane_extent must be positive")
        if self.image_size < 2:
            raise ValueError("image_size must be >= 2")
        if len(self.alphas) != 3:
            raise ValueError("exactly three decay rates required")
        if any(a <= 0 for a in self.alphas):
            raise ValueError("decay rates must be strictly positive")
        if len(set(self.alphas)) != 3:
            raise ValueError("decay rates must be pairwise distinct")
        if self.neighborhood_radius <= 0:
            raise ValueError("neighborhood_radius must be positive")
        return self


@dataclass(frozen=True)
class ConstellationImage:
    pixels: np.ndarray  # (3, S, S) float32 in [0, 1]
    variant: str  # "noisy" | "clean"
    scheme: str
    snr_db: float | None
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "pixels", np.asarray(self.pixels, dtype=np.float32))


def _sample_pixel_coords(samples: np.ndarray, cfg: RenderConfig) -> tuple[np.ndarray, np.ndarray]:
    """Continuous (row, col) pixel coordinates; out-of-plane samples clip to the edge."""
    half = cfg.plane_extent / 2.0
    scale = cfg.image_size / cfg.plane_extent
    re = np.clip(samples.real, -half, half)
    im = np.clip(samples.imag, -half, half)
    col = (re + half) * scale - 0.5  # pixel centroids at integer coordinates
    row = (half - im) * scale - 0.5  # row 0 is the top (+imag) edge
    return row, col


def _accumulate_channels(
    samples: np.ndarray,
    cfg: RenderConfig,
    alphas,
    powers: np.ndarray | None,
) -> np.ndarray:
    """Shared rasterization: one grid per decay rate, max-normalized.

    Every sample deposits P_k * exp(-alpha * d) onto each pixel whose
    centroid lies within `neighborhood_radius` (pixel units). Geometry is
    computed once and reused across decay rates.
    """
    s = cfg.image_size
    samples = np.asarray(samples, dtype=np.complex128).ravel()
    out = np.zeros((len(alphas), s, s), dtype=np.float64)
    if samples.size == 0:
        return out.astype(np.float32)
    p = np.abs(samples) ** 2 if powers is None else np.asarray(powers, dtype=np.float64).ravel()
    if p.shape != samples.shape:
        raise ValueError("powers must match samples in shape")

    row, col = _sample_pixel_coords(samples, cfg)
    i0 = np.rint(row).astype(np.intp)
    j0 = np.rint(col).astype(np.intp)
    radius = cfg.neighborhood_radius
    w = int(np.floor(radius + 0.5))  # offsets beyond this are always > radius away
    offs = np.arange(-w, w + 1, dtype=np.intp)
    di = np.repeat(offs, len(offs))[:, None]  # (F, 1) window offsets
    dj = np.tile(offs, len(offs))[:, None]
    ii = i0[None, :] + di  # (F, K)
    jj = j0[None, :] + dj
    d = np.hypot(ii - row[None, :], jj - col[None, :])
    ok = (ii >= 0) & (ii < s) & (jj >= 0) & (jj < s) & (d <= radius)
    flat_idx = (ii * s + jj)[ok]
    d_ok = d[ok]
    p_ok = np.broadcast_to(p[None, :], d.shape)[ok]
    for c, alpha in enumerate(alphas):
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        grid = np.bincount(flat_idx, weights=p_ok * np.exp(-alpha * d_ok), minlength=s * s)
        peak = grid.max()
        if peak > 0:
            grid /= peak
        out[c] = grid.reshape(s, s)
    return out.astype(np.float32)


def enhanced_gray(
    samples: np.ndarray,
    cfg: RenderConfig,
    alpha: float,
    powers: np.ndarray | None = None,
) -> np.ndarray:
    """One decay channel: accumulate P_k * exp(-alpha * d) near each sample.

    `powers` defaults to |s_k|^2. The grid is scaled so its maximum is
    exactly 1; an empty sample set yields all zeros.
    """
    return _accumulate_channels(samples, cfg, (alpha,), powers)[0]


def to_rgb(samples: np.ndarray, cfg: RenderConfig, powers: np.ndarray | None = None) -> np.ndarray:
    """Stack one enhanced-gray channel per decay rate -> (3, S, S) in [0, 1]."""
    if len(cfg.alphas) != 3:
        raise ValueError("exactly three decay rates required")
    return _accumulate_channels(samples, cfg, cfg.alphas, powers)


def render_constellation(signal: IQSignal, cfg: RenderConfig, variant: str) -> ConstellationImage:
    return ConstellationImage(
        pixels=to_rgb(signal.samples, cfg),
        variant=variant,
        scheme=signal.scheme,
        snr_db=signal.snr_db,
        seed=signal.seed,
    )


def bilinear_resize(img: np.ndarray, out_size: int) -> np.ndarray:
    """Separable bilinear resize of a square grid; corners map to corners."""
    n = img.shape[0]
    pos = np.linspace(0.0, n - 1.0, out_size)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n - 1)
    frac = pos - lo
    rows = img[lo] * (1.0 - frac)[:, None] + img[hi] * frac[:, None]
    return rows[:, lo] * (1.0 - frac)[None, :] + rows[:, hi] * frac[None, :]


def signal_to_image(signal: IQSignal, cfg: RenderConfig) -> np.ndarray:
    """Waveform view: real part -> 32x32 -> bilinear upsample -> [0,1] x3 channels.

    The signal must already be 1024 samples long (resample first otherwise).
    """
    n = len(signal.samples)
    side = int(np.sqrt(n))
    if side * side != n or n != 1024:
        raise ValueError(f"signal-image path expects 1024 samples, got {n}")
    square = signal.samples.real.reshape(side, side)
    big = bilinear_resize(square, cfg.image_size)
    lo, hi = big.min(), big.max()
    if hi > lo:
        big = (big - lo) / (hi - lo)
    else:
        big = np.zeros_like(big)
    return np.repeat(big[None, :, :], 3, axis=0).astype(np.float32)
