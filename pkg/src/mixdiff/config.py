"""Run configuration: a single JSON document with explicit defaults, strict
validation with field-path diagnostics, and the run manifest that makes every
run reproducible byte-for-byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .denoisers import ToyDenoiser
from .errors import ConfigError
from .mixture import PRESET_POLICIES, MixturePolicy
from .sampler import EntropyConfig
from .schedule import NoiseSchedule, make_schedule
from .targets import (
    Ar1Temporal,
    Diagonal,
    FullCov,
    GaussianSpec,
    Isotropic,
)

# gamma values found to work best per resolution preset
PRESET_GAMMAS = {"64": 0.02, "128": 0.1, "256": 1.0}


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(path, message)


def _as_int(value, path: str) -> int:
    _require(isinstance(value, int) and not isinstance(value, bool), path, "must be an integer")
    return value


def _as_num(value, path: str) -> float:
    _require(
        isinstance(value, (int, float)) and not isinstance(value, bool),
        path,
        "must be a number",
    )
    return float(value)


def _no_extras(d: dict, allowed: set, path: str) -> None:
    extras = set(d) - allowed
    _require(not extras, path, f"unknown field(s): {sorted(extras)}")


@dataclass(frozen=True)
class Seeds:
    init: int = 1
    step_noise: int = 2
    selection: int = 3
    training: int = 4

    @classmethod
    def from_dict(cls, d: dict, path: str = "seeds") -> "Seeds":
        _require(isinstance(d, dict), path, "must be an object")
        _no_extras(d, {"init", "step_noise", "selection", "training"}, path)
        vals = {}
        for name in ("init", "step_noise", "selection", "training"):
            v = d.get(name, getattr(cls, name))
            v = _as_int(v, f"{path}.{name}")
            _require(0 <= v < 2**64, f"{path}.{name}", "must fit in 64 bits")
            vals[name] = v
        return cls(**vals)

    def to_dict(self) -> dict:
        return {
            "init": self.init,
            "step_noise": self.step_noise,
            "selection": self.selection,
            "training": self.training,
        }


def parse_schedule(d: dict, path: str = "schedule") -> NoiseSchedule:
    _require(isinstance(d, dict), path, "must be an object")
    _no_extras(d, {"T", "kind", "beta_start", "beta_end", "sigma_kind"}, path)
    T = _as_int(d.get("T", 1000), f"{path}.T")
    kind = d.get("kind", "linear")
    sigma_kind = d.get("sigma_kind", "beta-tilde")
    beta_start = _as_num(d.get("beta_start", 1e-4), f"{path}.beta_start")
    beta_end = _as_num(d.get("beta_end", 0.02), f"{path}.beta_end")
    try:
        return make_schedule(T, beta_start, beta_end, kind, sigma_kind)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from exc


def parse_policy(value, path: str = "policy") -> MixturePolicy:
    if isinstance(value, str):
        _require(
            value in PRESET_POLICIES,
            path,
            f"unknown preset {value!r}; options: {sorted(PRESET_POLICIES)}",
        )
        return PRESET_POLICIES[value]
    _require(isinstance(value, dict), path, "must be a preset name or an object")
    _no_extras(value, {"t_v", "t_e", "p_e", "p_f"}, path)
    vals = {}
    for name in ("t_v", "t_e", "p_e", "p_f"):
        _require(name in value, f"{path}.{name}", "is required")
        vals[name] = _as_num(value[name], f"{path}.{name}")
    try:
        return MixturePolicy(**vals)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from exc


def parse_entropy(d: dict, path: str = "entropy") -> EntropyConfig:
    _require(isinstance(d, dict), path, "must be an object")
    _no_extras(d, {"r_video", "r_image", "gamma"}, path)
    vals = {
        "r_video": _as_num(d.get("r_video", 0.0), f"{path}.r_video"),
        "r_image": _as_num(d.get("r_image", 0.0), f"{path}.r_image"),
        "gamma": _as_num(d.get("gamma", 1.0), f"{path}.gamma"),
    }
    for name in ("r_video", "r_image"):
        _require(0.0 <= vals[name] <= 1.0, f"{path}.{name}", "must be in [0, 1]")
    _require(vals["gamma"] >= 0.0, f"{path}.gamma", "must be >= 0")
    return EntropyConfig(**vals)


def parse_gaussian_target(d: dict, dims, path: str = "target") -> GaussianSpec:
    kind = d.get("kind")
    mean = d.get("mean", 0.0)
    try:
        if kind == "isotropic":
            _no_extras(d, {"kind", "mean", "scale"}, path)
            cov = Isotropic(_as_num(d.get("scale", 1.0), f"{path}.scale"))
        elif kind == "diagonal":
            _no_extras(d, {"kind", "mean", "variances"}, path)
            _require("variances" in d, f"{path}.variances", "is required")
            cov = Diagonal(np.asarray(d["variances"], dtype=np.float64))
        elif kind == "full":
            _no_extras(d, {"kind", "mean", "matrix"}, path)
            _require("matrix" in d, f"{path}.matrix", "is required")
            cov = FullCov(np.asarray(d["matrix"], dtype=np.float64))
        elif kind == "ar1":
            _no_extras(d, {"kind", "mean", "rho", "variance"}, path)
            _require("rho" in d, f"{path}.rho", "is required")
            cov = Ar1Temporal(
                rho=_as_num(d["rho"], f"{path}.rho"),
                variance=_as_num(d.get("variance", 1.0), f"{path}.variance"),
            )
        else:
            raise ConfigError(
                f"{path}.kind", f"unknown target kind {kind!r}"
            )
        return GaussianSpec(dims=tuple(dims), mean=np.asarray(mean), cov=cov)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(path, str(exc)) from exc


@dataclass
class SamplerConfig:
    """Fully resolved sampling run configuration."""

    dims: tuple
    chains: int
    guidance: float
    guidance_video: float | None
    guidance_image: float | None
    infer_steps: int
    cond: int | None
    schedule: NoiseSchedule
    entropy: EntropyConfig
    policy: MixturePolicy
    smoothing_threshold: float | None
    smoothing_sigma_floor: float
    seeds: Seeds
    target: dict
    jobs: int = 1
    raw: dict = field(default_factory=dict)

    def resolved_dict(self) -> dict:
        """Every field explicit; the manifest form."""
        return {
            "dims": list(self.dims),
            "chains": self.chains,
            "guidance": self.guidance,
            "guidance_video": self.guidance_video,
            "guidance_image": self.guidance_image,
            "infer_steps": self.infer_steps,
            "cond": self.cond,
            "schedule": self.schedule.to_config(),
            "entropy": {
                "r_video": self.entropy.r_video,
                "r_image": self.entropy.r_image,
                "gamma": self.entropy.gamma,
            },
            "policy": {
                "t_v": self.policy.t_v,
                "t_e": self.policy.t_e,
                "p_e": self.policy.p_e,
                "p_f": self.policy.p_f,
            },
            "smoothing": (
                None
                if self.smoothing_threshold is None
                else {
                    "threshold": self.smoothing_threshold,
                    "sigma_floor": self.smoothing_sigma_floor,
                }
            ),
            "seeds": self.seeds.to_dict(),
            "target": self.target,
            "jobs": self.jobs,
        }


_SAMPLE_FIELDS = {
    "dims",
    "chains",
    "guidance",
    "guidance_video",
    "guidance_image",
    "infer_steps",
    "cond",
    "schedule",
    "entropy",
    "policy",
    "preset",
    "smoothing",
    "seeds",
    "target",
    "jobs",
}


def parse_sampler_config(doc: dict) -> SamplerConfig:
    """Validate a raw JSON document into a SamplerConfig.

    A "preset" key ("64" | "128" | "256") fills the policy and gamma unless
    those are given explicitly. Raises ConfigError with a field path on any
    invariant violation.
    """
    _require(isinstance(doc, dict), "", "config must be a JSON object")
    _no_extras(doc, _SAMPLE_FIELDS, "config")

    _require("dims" in doc, "dims", "is required")
    dims = doc["dims"]
    _require(
        isinstance(dims, (list, tuple)) and len(dims) == 4,
        "dims",
        "must be [F, C, H, W]",
    )
    for i, d in enumerate(dims):
        _require(
            isinstance(d, int) and not isinstance(d, bool) and d >= 1,
            f"dims[{i}]",
            "must be an integer >= 1",
        )
    dims = tuple(dims)

    preset = doc.get("preset")
    if preset is not None:
        _require(
            preset in PRESET_POLICIES,
            "preset",
            f"unknown preset {preset!r}; options: {sorted(PRESET_POLICIES)}",
        )

    chains = _as_int(doc.get("chains", 1), "chains")
    _require(chains >= 1, "chains", "must be >= 1")
    jobs = _as_int(doc.get("jobs", 1), "jobs")
    _require(jobs >= 1, "jobs", "must be >= 1")

    guidance = _as_num(doc.get("guidance", 2.0), "guidance")
    g_video = doc.get("guidance_video")
    g_image = doc.get("guidance_image")
    if g_video is not None:
        g_video = _as_num(g_video, "guidance_video")
    if g_image is not None:
        g_image = _as_num(g_image, "guidance_image")

    infer_steps = _as_int(doc.get("infer_steps", 50), "infer_steps")
    cond = doc.get("cond")
    if cond is not None:
        cond = _as_int(cond, "cond")
        _require(cond >= 0, "cond", "must be >= 0 or null")

    sched = parse_schedule(doc.get("schedule", {}))
    _require(
        1 <= infer_steps <= sched.T,
        "infer_steps",
        f"must be in 1..schedule.T ({sched.T})",
    )

    entropy_doc = dict(doc.get("entropy", {}))
    if preset is not None and "gamma" not in entropy_doc:
        entropy_doc["gamma"] = PRESET_GAMMAS[preset]
    entropy = parse_entropy(entropy_doc)

    if "policy" in doc:
        policy = parse_policy(doc["policy"])
    elif preset is not None:
        policy = PRESET_POLICIES[preset]
    else:
        raise ConfigError("policy", "is required (or give a preset)")

    smoothing = doc.get("smoothing")
    if smoothing is None:
        threshold, sigma_floor = None, 1e-8
    else:
        _require(isinstance(smoothing, dict), "smoothing", "must be an object or null")
        _no_extras(smoothing, {"threshold", "sigma_floor"}, "smoothing")
        _require("threshold" in smoothing, "smoothing.threshold", "is required")
        threshold = _as_num(smoothing["threshold"], "smoothing.threshold")
        _require(threshold >= 0.0, "smoothing.threshold", "must be >= 0")
        sigma_floor = _as_num(smoothing.get("sigma_floor", 1e-8), "smoothing.sigma_floor")
        _require(sigma_floor > 0.0, "smoothing.sigma_floor", "must be > 0")

    seeds = Seeds.from_dict(doc.get("seeds", {}))

    _require("target" in doc, "target", "is required")
    target = doc["target"]
    _require(isinstance(target, dict), "target", "must be an object")
    if target.get("kind") == "toy":
        _no_extras(target, {"kind", "video_model", "image_model"}, "target")
        for name in ("video_model", "image_model"):
            _require(
                isinstance(target.get(name), str),
                f"target.{name}",
                "must be a model path stem",
            )
    else:
        parse_gaussian_target(target, dims)  # validates; spec rebuilt on use

    return SamplerConfig(
        dims=dims,
        chains=chains,
        guidance=guidance,
        guidance_video=g_video,
        guidance_image=g_image,
        infer_steps=infer_steps,
        cond=cond,
        schedule=sched,
        entropy=entropy,
        policy=policy,
        smoothing_threshold=threshold,
        smoothing_sigma_floor=sigma_floor,
        seeds=seeds,
        target=target,
        jobs=jobs,
        raw=doc,
    )


def build_denoisers(cfg: SamplerConfig):
    """(video_denoiser, image_denoiser) for the configured target."""
    from .denoisers import AnalyticGaussianDenoiser

    if cfg.target.get("kind") == "toy":
        video = ToyDenoiser.load(cfg.target["video_model"])
        image = ToyDenoiser.load(cfg.target["image_model"])
        if tuple(video.input_dims) != tuple(cfg.dims):
            raise ConfigError(
                "target.video_model",
                f"model dims {video.input_dims} do not match run dims {cfg.dims}",
            )
        if tuple(image.input_dims) != (1,) + tuple(cfg.dims[1:]):
            raise ConfigError(
                "target.image_model",
                f"model dims {image.input_dims} must be a single frame of {cfg.dims}",
            )
        return video, image
    spec = parse_gaussian_target(cfg.target, cfg.dims)
    video = AnalyticGaussianDenoiser(spec, cfg.schedule)
    image = AnalyticGaussianDenoiser(spec.frame_marginal(), cfg.schedule)
    return video, image


def make_manifest(cfg: SamplerConfig, chains, traces, wall_clock: float, metrics_path=None) -> dict:
    return {
        "artifact_version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "config": cfg.resolved_dict(),
        "schedule": cfg.schedule.to_config(),
        "chains": [str(p) for p in chains],
        "traces": [str(p) for p in traces],
        "wall_clock_sec": wall_clock,
        "metrics_path": None if metrics_path is None else str(metrics_path),
    }


def load_config_document(path) -> dict:
    """Read a config file; a run manifest is accepted too (its embedded
    resolved config is used, which is what makes manifests replayable)."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from exc
    if isinstance(doc, dict) and "artifact_version" in doc and "config" in doc:
        doc = doc["config"]
    return doc
