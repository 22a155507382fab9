"""Temporal latent smoothing: replace temporally stable latent positions with
their time-mean to suppress flicker, plus plain Gaussian/uniform time
smoothing baselines.

Per spatial site (h, w) and frame f, the deviation of every channel from its
temporal mean is normalized by the channel's spatial variability and summed
across channels. Sites below a threshold are replaced (all channels jointly)
by the temporal mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .latent import LatentVideo

DEFAULT_SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class SmoothingConfig:
    """threshold is the replacement cutoff on the normalized variation;
    sigma_floor guards the degenerate spatially-constant-mean channel."""

    threshold: float
    sigma_floor: float = DEFAULT_SIGMA_FLOOR

    def __post_init__(self):
        if self.threshold < 0.0:
            raise ValueError(f"threshold must be >= 0, got {self.threshold}")
        if self.sigma_floor <= 0.0:
            raise ValueError(f"sigma_floor must be > 0, got {self.sigma_floor}")


@dataclass(frozen=True)
class SmoothingStats:
    """mu: temporal mean per (c, h, w); sigma_c: spatial std of mu per
    channel; delta: |x - mu| per (f, c, h, w); v: channel-summed normalized
    variation per (f, h, w)."""

    mu: np.ndarray
    sigma_c: np.ndarray
    delta: np.ndarray
    v: np.ndarray


def compute_smoothing_stats(
    x: LatentVideo, sigma_floor: float = DEFAULT_SIGMA_FLOOR
) -> SmoothingStats:
    d = x.data
    # anchored mean: exact (bit-wise) for inputs constant along f
    mu = d[0] + (d - d[0]).mean(axis=0)
    sigma_c = mu.std(axis=(1, 2))  # population std over (h, w)
    delta = np.abs(d - mu)
    denom = np.maximum(sigma_c, sigma_floor)
    v = (delta / denom[None, :, None, None]).sum(axis=1)
    return SmoothingStats(mu=mu, sigma_c=sigma_c, delta=delta, v=v)


def temporal_smooth(x: LatentVideo, cfg: SmoothingConfig) -> LatentVideo:
    """Replace every (f, h, w) site with v < threshold by the temporal mean
    (all channels jointly); other values pass through untouched. A zero
    threshold is a bitwise no-op.
    """
    stats = compute_smoothing_stats(x, cfg.sigma_floor)
    mask = stats.v < cfg.threshold  # (F, H, W)
    out = np.where(mask[:, None, :, :], stats.mu[None], x.data)
    return LatentVideo(out)


def _time_kernel_conv(d: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """1-D convolution along the frame axis with symmetric (reflected)
    boundaries, kernel support already truncated to at most 2F - 1 taps."""
    frames = d.shape[0]
    half = len(kernel) // 2
    out = np.zeros_like(d)
    for k, w in enumerate(kernel):
        offset = k - half
        idx = np.arange(frames) + offset
        idx = np.abs(idx)  # reflect below 0
        idx = np.where(idx >= frames, 2 * frames - 1 - idx, idx)  # and above F-1
        out += w * d[idx]
    return out


def _prepare_kernel(weights: np.ndarray, frames: int) -> np.ndarray:
    half = len(weights) // 2
    if half > frames - 1:  # truncate and renormalize
        weights = weights[half - (frames - 1) : half + frames]
    return weights / weights.sum()


def uniform_time_smooth(x: LatentVideo, width: int) -> LatentVideo:
    """Moving average along f with a width-tap box kernel (width odd; even
    widths use the next smaller odd support). width=1 is the identity."""
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    half = (width - 1) // 2
    kernel = _prepare_kernel(np.ones(2 * half + 1), x.frames)
    if len(kernel) == 1:
        return x
    return LatentVideo(_time_kernel_conv(x.data, kernel))


def gaussian_time_smooth(x: LatentVideo, width: int) -> LatentVideo:
    """Gaussian blur along f, sigma = width / 6, support as in
    :func:`uniform_time_smooth`."""
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    half = (width - 1) // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    sigma = width / 6.0
    kernel = _prepare_kernel(np.exp(-(offsets**2) / (2.0 * sigma**2)), x.frames)
    if len(kernel) == 1:
        return x
    return LatentVideo(_time_kernel_conv(x.data, kernel))
