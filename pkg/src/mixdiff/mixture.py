"""Model-selection policy and the mixture-of-denoisers reverse-diffusion
orchestration: at every step one of two compatible denoisers (a temporally
aware video model or a per-frame image model) is chosen at random and applied
to the shared noisy sample.

Progress runs over [0, 1]: 0 at pure noise (first reverse step), 1 at the
final step. The video-selection probability is piecewise affine in progress:
1 up to t_v, interpolating down to p_e at t_e, then to p_f at 1.

Three RNG streams feed a run: initial noise, step noise, and the selection
coin. Keeping them separate lets the policy vary without perturbing noise
realizations, which is what makes the degeneracy tests bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from enum import Enum

from .denoisers import Condition
from .errors import SamplingError
from .latent import (
    Dims,
    LatentVideo,
    RngStream,
    frames_to_video,
    sample_standard_normal,
    video_to_frames,
)
from .sampler import EntropyConfig, ddpm_step, sample_correlated_noise
from .schedule import NoiseSchedule, StepMap, effective_step_coeffs
from .denoisers import guided_eps


class ModelChoice(Enum):
    VIDEO = "VIDEO"
    IMAGE = "IMAGE"


@dataclass(frozen=True)
class MixturePolicy:
    """Knots of the video-selection probability over sampling progress."""

    t_v: float
    t_e: float
    p_e: float
    p_f: float

    def __post_init__(self):
        if not 0.0 <= self.t_v <= self.t_e <= 1.0:
            raise ValueError(
                f"need 0 <= t_v <= t_e <= 1, got ({self.t_v}, {self.t_e})"
            )
        for name in ("p_e", "p_f"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")


# Best-found policies per generation resolution (64/128/256 square latents).
PRESET_POLICIES = {
    "64": MixturePolicy(t_v=0.2, t_e=0.7, p_e=0.3, p_f=0.3),
    "128": MixturePolicy(t_v=0.4, t_e=0.7, p_e=0.4, p_f=0.1),
    "256": MixturePolicy(t_v=0.1, t_e=0.6, p_e=0.2, p_f=0.1),
}

VIDEO_ONLY = MixturePolicy(t_v=1.0, t_e=1.0, p_e=1.0, p_f=1.0)
IMAGE_ONLY = MixturePolicy(t_v=0.0, t_e=0.0, p_e=0.0, p_f=0.0)


def p_video(policy: MixturePolicy, progress: float) -> float:
    """Probability of selecting the video model at the given progress.

    Evaluated in convex-combination form, so segment endpoints reproduce
    (1, p_e, p_f) exactly; degenerate segments take their right-endpoint
    value.
    """
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress must be in [0, 1], got {progress}")
    if progress <= policy.t_v:
        return 1.0
    if progress <= policy.t_e:
        # t_e > t_v here, otherwise this branch is unreachable
        frac = (progress - policy.t_v) / (policy.t_e - policy.t_v)
        return (1.0 - frac) * 1.0 + frac * policy.p_e
    # progress > t_e implies t_e < 1
    frac = (progress - policy.t_e) / (1.0 - policy.t_e)
    return (1.0 - frac) * policy.p_e + frac * policy.p_f


def select_model(policy: MixturePolicy, progress: float, rng: RngStream) -> ModelChoice:
    """Bernoulli(p_video) pick; consumes exactly one coin from rng."""
    coin = rng.uniform()
    return ModelChoice.VIDEO if coin < p_video(policy, progress) else ModelChoice.IMAGE


def step_progress(index: int, total: int) -> float:
    """Fraction of reverse steps already taken: 0 at the first step, 1 at the
    last. A single-step chain counts as progress 0 (the video-first start).
    """
    if total <= 1:
        return 0.0
    return index / (total - 1)


@dataclass(frozen=True)
class StepRecord:
    step: int
    t: int
    progress: float
    p_video: float
    choice: str
    gamma_sigma: float


@dataclass
class StepTrace:
    """Per-step record of one sampling run; serializes to JSON lines."""

    records: list

    def __len__(self) -> int:
        return len(self.records)

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(asdict(r)) for r in self.records) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "StepTrace":
        records = [
            StepRecord(**json.loads(line))
            for line in text.splitlines()
            if line.strip()
        ]
        return cls(records=records)


def run_mixture_sampling(
    video_denoiser,
    image_denoiser,
    policy: MixturePolicy,
    sched: NoiseSchedule,
    step_map: StepMap,
    *,
    dims: Dims,
    guidance: float = 1.0,
    guidance_video: float | None = None,
    guidance_image: float | None = None,
    entropy: EntropyConfig = EntropyConfig(),
    cond: Condition = None,
    init_rng: RngStream,
    noise_rng: RngStream,
    select_rng: RngStream,
    step_callback=None,
) -> tuple[LatentVideo, StepTrace]:
    """Run one full mixture-of-denoisers DDPM chain.

    Starts from s_T ~ N(0, I). Each step selects a model from the policy
    coin: VIDEO applies guided prediction to the whole tensor and draws step
    noise at r_video; IMAGE reshapes to a frame batch, predicts per frame,
    reshapes back, and draws at r_image. Guidance defaults to the shared
    scale with optional per-model overrides.
    """
    g_video = guidance if guidance_video is None else guidance_video
    g_image = guidance if guidance_image is None else guidance_image
    pairs = step_map.pairs()
    total = len(pairs)

    s = sample_standard_normal(dims, init_rng)
    records = []
    for i, (t, t_prev) in enumerate(pairs):
        progress = step_progress(i, total)
        pv = p_video(policy, progress)
        choice = select_model(policy, progress, select_rng)
        try:
            if choice is ModelChoice.VIDEO:
                eps = guided_eps(video_denoiser, s, t, cond, g_video)
                r = entropy.r_video
            else:
                eps_frames = guided_eps(
                    image_denoiser, video_to_frames(s), t, cond, g_image
                )
                eps = frames_to_video(eps_frames)
                r = entropy.r_image
            z = sample_correlated_noise(dims, r, noise_rng)
            s = ddpm_step(s, (t, t_prev), eps, sched, entropy, z)
        except Exception as exc:  # annotate with the failing step
            raise SamplingError(i, t, exc) from exc
        sigma_eff = effective_step_coeffs(sched, t, t_prev)[2]
        gamma_sigma = 0.0 if t_prev == 0 else entropy.gamma * sigma_eff
        records.append(
            StepRecord(
                step=i,
                t=t,
                progress=progress,
                p_video=pv,
                choice=choice.value,
                gamma_sigma=gamma_sigma,
            )
        )
        if step_callback is not None:
            step_callback(i, s)
    return s, StepTrace(records=records)
