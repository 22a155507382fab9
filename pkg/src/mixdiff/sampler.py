"""Single reverse-diffusion steps (stochastic DDPM, deterministic DDIM),
frame-correlated step noise, and plain single-model chain runners.

Step noise z is always drawn by the caller and passed in: the mixture
orchestrator owns noise generation because the correlation ratio r differs
depending on which model produced the current eps estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .denoisers import Condition, guided_eps
from .errors import ShapeError
from .latent import (
    Dims,
    LatentVideo,
    RngStream,
    frames_to_video,
    sample_standard_normal,
    video_to_frames,
)
from .schedule import NoiseSchedule, StepMap, effective_step_coeffs


@dataclass(frozen=True)
class EntropyConfig:
    """Step-noise shaping: r_video / r_image set the frame-shared fraction of
    the noise variance for steps taken by each model; gamma scales the whole
    noise term. gamma=1 with r=0 reproduces vanilla DDPM noise.
    """

    r_video: float = 0.0
    r_image: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("r_video", "r_image"):
            r = getattr(self, name)
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {r}")
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


def sample_correlated_noise(shape: Dims, r: float, rng: RngStream) -> LatentVideo:
    """Unit-variance noise whose entries at the same spatial site have
    cross-frame correlation r:

        z^f = sqrt(r) * z_shared + sqrt(1 - r) * z_ind^f

    Both components are always drawn (deterministic stream consumption), so
    chains with different r stay draw-aligned.
    """
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"r must be in [0, 1], got {r}")
    if len(shape) != 4 or min(shape) < 1:
        raise ShapeError(f"invalid shape {shape}")
    shared = rng.standard_normal((1,) + tuple(shape[1:]))
    ind = rng.standard_normal(tuple(shape))
    return LatentVideo(math.sqrt(r) * shared + math.sqrt(1.0 - r) * ind)


def ddpm_step(
    s_t: LatentVideo,
    t_pair: tuple[int, int],
    eps_hat: LatentVideo,
    sched: NoiseSchedule,
    entropy: EntropyConfig,
    z: LatentVideo,
) -> LatentVideo:
    """One stochastic reverse step t -> t_prev:

        (1/sqrt(a)) * (s_t - (b / sqrt(1 - ab_t)) * eps_hat) + gamma * sigma * z

    with a, b, sigma re-indexed through the step-map pair. The noise term is
    forced to zero on the final step (t_prev == 0), so s_0 is a point
    estimate regardless of gamma.
    """
    t, t_prev = t_pair
    if s_t.shape != eps_hat.shape or s_t.shape != z.shape:
        raise ShapeError(
            f"shape mismatch: s_t {s_t.shape}, eps {eps_hat.shape}, z {z.shape}"
        )
    alpha_eff, beta_eff, sigma_eff = effective_step_coeffs(sched, t, t_prev)
    ab_t = sched.alpha_bar_at(t)
    mean = (s_t.data - (beta_eff / math.sqrt(1.0 - ab_t)) * eps_hat.data) / math.sqrt(
        alpha_eff
    )
    if t_prev == 0:
        return LatentVideo(mean)
    return LatentVideo(mean + (entropy.gamma * sigma_eff) * z.data)


def ddim_step(
    s_t: LatentVideo,
    t_pair: tuple[int, int],
    eps_hat: LatentVideo,
    sched: NoiseSchedule,
) -> LatentVideo:
    """One deterministic (eta = 0) reverse step t -> t_prev:
    reconstruct x0_hat, then renoise it to the t_prev marginal with the same
    eps_hat.
    """
    t, t_prev = t_pair
    if s_t.shape != eps_hat.shape:
        raise ShapeError(f"shape mismatch: {s_t.shape} vs {eps_hat.shape}")
    effective_step_coeffs(sched, t, t_prev)  # validates the pair
    ab_t = sched.alpha_bar_at(t)
    ab_prev = sched.alpha_bar_at(t_prev)
    x0_hat = (s_t.data - math.sqrt(1.0 - ab_t) * eps_hat.data) / math.sqrt(ab_t)
    out = math.sqrt(ab_prev) * x0_hat + math.sqrt(1.0 - ab_prev) * eps_hat.data
    return LatentVideo(out)


def _predict(denoiser, s: LatentVideo, t: int, cond, guidance, per_frame: bool):
    if per_frame:
        eps_b = guided_eps(denoiser, video_to_frames(s), t, cond, guidance)
        return frames_to_video(eps_b)
    return guided_eps(denoiser, s, t, cond, guidance)


def run_ddpm_chain(
    denoiser,
    sched: NoiseSchedule,
    step_map: StepMap,
    dims: Dims,
    *,
    guidance: float = 1.0,
    cond: Condition = None,
    entropy: EntropyConfig = EntropyConfig(),
    r: float = 0.0,
    init_rng: RngStream,
    noise_rng: RngStream,
    per_frame: bool = False,
) -> LatentVideo:
    """A full single-model DDPM chain from pure noise to s_0.

    Draw-aligned with the mixture orchestrator: per step, one correlated
    noise draw at ratio r (also on the final step, where it is unused).
    """
    s = sample_standard_normal(dims, init_rng)
    for t_pair in step_map.pairs():
        eps = _predict(denoiser, s, t_pair[0], cond, guidance, per_frame)
        z = sample_correlated_noise(dims, r, noise_rng)
        s = ddpm_step(s, t_pair, eps, sched, entropy, z)
    return s


def run_ddim_chain(
    denoiser,
    sched: NoiseSchedule,
    step_map: StepMap,
    dims: Dims,
    *,
    guidance: float = 1.0,
    cond: Condition = None,
    init_rng: RngStream,
    per_frame: bool = False,
) -> LatentVideo:
    """A full deterministic DDIM chain from pure noise to s_0."""
    s = sample_standard_normal(dims, init_rng)
    for t_pair in step_map.pairs():
        eps = _predict(denoiser, s, t_pair[0], cond, guidance, per_frame)
        s = ddim_step(s, t_pair, eps, sched)
    return s
