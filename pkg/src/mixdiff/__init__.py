"""mixdiff: a mixture-of-denoisers diffusion sampling engine for latent video.

A DDPM reverse chain that alternates between a temporally-aware video
denoiser and a per-frame image denoiser sharing one noisy-sample space,
plus frame-correlated step-noise shaping, temporal latent smoothing, and a
Monte-Carlo statistics suite that validates everything against analytic
Gaussian denoisers.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    SamplingError,
    ScheduleError,
    ShapeError,
    TrainingDiverged,
)
from .latent import (
    FrameBatch,
    LatentVideo,
    RngStream,
    frames_to_video,
    load_lvt,
    sample_standard_normal,
    save_lvt,
    video_to_frames,
)
from .schedule import (
    NoiseSchedule,
    StepMap,
    effective_step_coeffs,
    forward_perturb,
    make_schedule,
    make_step_map,
)
from .targets import (
    Ar1Temporal,
    Diagonal,
    FullCov,
    GaussianSpec,
    Isotropic,
    standard_normal_target,
)
from .denoisers import (
    AnalyticGaussianDenoiser,
    ToyDenoiser,
    TrainConfig,
    analytic_gaussian_eps,
    guided_eps,
    train_toy_denoiser,
)
from .sampler import (
    EntropyConfig,
    ddim_step,
    ddpm_step,
    run_ddim_chain,
    run_ddpm_chain,
    sample_correlated_noise,
)
from .mixture import (
    IMAGE_ONLY,
    PRESET_POLICIES,
    VIDEO_ONLY,
    MixturePolicy,
    ModelChoice,
    StepTrace,
    p_video,
    run_mixture_sampling,
    select_model,
)
from .smoothing import (
    SmoothingConfig,
    SmoothingStats,
    compute_smoothing_stats,
    gaussian_time_smooth,
    temporal_smooth,
    uniform_time_smooth,
)
from .metrics import (
    MetricReport,
    MomentSummary,
    empirical_moments,
    flicker_metric,
    gaussian_w2,
    metric_report,
    temporal_autocorr,
)
