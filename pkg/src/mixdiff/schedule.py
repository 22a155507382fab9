"""Discrete noise schedules: beta/alpha/alpha-bar/sigma tables, the closed-form
forward perturbation, and the inference-time timestep subsampling map.

Timesteps are 1-based (t = 1..T); table index 0 corresponds to t = 1.
alpha_bar at t = 0 is defined as 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ScheduleError, ShapeError
from .latent import LatentVideo

KINDS = ("linear", "scaled-linear")
SIGMA_KINDS = ("beta", "beta-tilde")


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variance tables of a forward diffusion process.

    sigma holds the reverse-step noise std: sigma_t^2 = beta_t for
    sigma_kind="beta", or the posterior variance
    (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t for "beta-tilde".
    Immutable after construction; freely shared across threads.
    """

    T: int
    kind: str
    sigma_kind: str
    beta_start: float
    beta_end: float
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ScheduleError(f"timestep {t} outside 1..{self.T}")

    def beta_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.beta[t - 1])

    def alpha_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.alpha_bar[t - 1])

    def sigma_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.sigma[t - 1])

    def to_config(self) -> dict:
        """Manifest form: enough to rebuild the schedule exactly."""
        return {
            "T": self.T,
            "kind": self.kind,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "sigma_kind": self.sigma_kind,
        }


def make_schedule(
    T: int,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    kind: str = "linear",
    sigma_kind: str = "beta-tilde",
) -> NoiseSchedule:
    """Build the beta/alpha/alpha-bar/sigma tables for T training steps."""
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if kind not in KINDS:
        raise ScheduleError(f"kind must be one of {KINDS}, got {kind!r}")
    if sigma_kind not in SIGMA_KINDS:
        raise ScheduleError(
            f"sigma_kind must be one of {SIGMA_KINDS}, got {sigma_kind!r}"
        )
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ScheduleError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )

    if kind == "linear":
        beta = np.linspace(beta_start, beta_end, T)
    else:  # scaled-linear: square-root spacing
        beta = np.linspace(math.sqrt(beta_start), math.sqrt(beta_end), T) ** 2

    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    if sigma_kind == "beta":
        sigma = np.sqrt(beta)
    else:
        sigma = np.sqrt((1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta)

    for name, table in (("beta", beta), ("alpha_bar", alpha_bar)):
        if not np.all((table > 0.0) & (table < 1.0)):
            raise ScheduleError(f"{name} table left (0, 1); bad parameters")
    if np.any(np.diff(alpha_bar) >= 0.0):
        raise ScheduleError("alpha_bar is not strictly decreasing")

    return NoiseSchedule(
        T=T,
        kind=kind,
        sigma_kind=sigma_kind,
        beta_start=float(beta_start),
        beta_end=float(beta_end),
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        sigma=sigma,
    )


def forward_perturb(
    s0: LatentVideo, t: int, eps: LatentVideo, sched: NoiseSchedule
) -> LatentVideo:
    """Closed-form forward noising:
    s_t = sqrt(alpha_bar_t) * s0 + sqrt(1 - alpha_bar_t) * eps.
    """
    if s0.shape != eps.shape:
        raise ShapeError(f"shape mismatch: {s0.shape} vs {eps.shape}")
    sched._check_t(t)
    ab = sched.alpha_bar_at(t)
    return LatentVideo(math.sqrt(ab) * s0.data + math.sqrt(1.0 - ab) * eps.data)


@dataclass(frozen=True)
class StepMap:
    """The training timesteps visited at inference, in sampling order.

    indices is strictly decreasing, starts at train_T, and has exactly
    infer_steps entries drawn from 1..train_T.
    """

    train_T: int
    infer_steps: int
    indices: tuple[int, ...]

    def __post_init__(self):
        idx = self.indices
        if len(idx) != self.infer_steps:
            raise ScheduleError("indices length != infer_steps")
        if idx[0] != self.train_T:
            raise ScheduleError("indices must start at train_T")
        if any(b >= a for a, b in zip(idx, idx[1:])):
            raise ScheduleError("indices must be strictly decreasing")
        if idx[-1] < 1:
            raise ScheduleError("indices must stay within 1..train_T")

    def pairs(self) -> list[tuple[int, int]]:
        """(t, t_prev) pairs for each reverse step; the last pair ends at 0."""
        nxt = list(self.indices[1:]) + [0]
        return list(zip(self.indices, nxt))


def make_step_map(train_T: int, infer_steps: int) -> StepMap:
    """Evenly spaced descending timesteps: train_T, train_T - s, ... with
    stride s = train_T // infer_steps.
    """
    if infer_steps < 1:
        raise ScheduleError(f"infer_steps must be >= 1, got {infer_steps}")
    if infer_steps > train_T:
        raise ScheduleError(
            f"infer_steps {infer_steps} exceeds train_T {train_T}"
        )
    stride = train_T // infer_steps
    indices = tuple(train_T - stride * k for k in range(infer_steps))
    return StepMap(train_T=train_T, infer_steps=infer_steps, indices=indices)


def effective_step_coeffs(
    sched: NoiseSchedule, t: int, t_prev: int
) -> tuple[float, float, float]:
    """(alpha_eff, beta_eff, sigma_eff) for the reverse step t -> t_prev.

    For consecutive steps (t_prev == t - 1) the table values are returned
    bit-for-bit, so a subsampled chain with infer_steps == train_T matches
    the full chain exactly. For larger strides the coefficients come from
    alpha_bar ratios between the mapped indices.
    """
    sched._check_t(t)
    if not 0 <= t_prev < t:
        raise ScheduleError(f"need 0 <= t_prev < t, got ({t}, {t_prev})")
    if t_prev == t - 1:
        return sched.alpha_at(t), sched.beta_at(t), sched.sigma_at(t)
    alpha_eff = sched.alpha_bar_at(t) / sched.alpha_bar_at(t_prev)
    beta_eff = 1.0 - alpha_eff
    if sched.sigma_kind == "beta":
        sigma_eff = math.sqrt(beta_eff)
    else:
        sigma_eff = math.sqrt(
            (1.0 - sched.alpha_bar_at(t_prev))
            / (1.0 - sched.alpha_bar_at(t))
            * beta_eff
        )
    return alpha_eff, beta_eff, sigma_eff
