"""Noise-prediction denoisers.

Two realizations of the eps-prediction interface:

* :class:`AnalyticGaussianDenoiser` — the closed-form MMSE predictor
  E[eps | s_t] for a known Gaussian target; the ground-truth oracle.
* :class:`ToyDenoiser` — a two-layer tanh perceptron over
  (flattened s_t, sinusoidal timestep embedding, one-hot condition),
  trained with the standard denoising MSE objective.

Both accept a LatentVideo matching their declared dims; denoisers declared
with a single frame additionally accept any leading batch count and treat
items independently (the image side of a mixture run).

A condition is a small-integer class id; ``None`` is the distinguished
unconditional token.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Union

import numpy as np

from .errors import ShapeError, TrainingDiverged
from .latent import Dims, FrameBatch, LatentVideo, RngStream
from .schedule import NoiseSchedule
from .targets import Ar1Temporal, Diagonal, FullCov, GaussianSpec, Isotropic

Condition = Optional[int]
Tensor = Union[LatentVideo, FrameBatch]


class Denoiser(Protocol):
    dims: Dims

    def predict_eps(self, s_t: Tensor, t: int, cond: Condition = None) -> Tensor:
        ...


def _check_input(dims: Dims, x: Tensor) -> bool:
    """Validate x against a denoiser's declared dims.

    Returns True when x is a frame batch routed through a single-frame
    denoiser (leading axis treated as independent items).
    """
    if x.shape == dims:
        return False
    if dims[0] == 1 and x.shape[1:] == dims[1:]:
        return True
    raise ShapeError(f"denoiser expects {dims}, got {x.shape}")


def guided_eps(denoiser, s_t: Tensor, t: int, cond: Condition, g: float) -> Tensor:
    """Classifier-free guidance combination
    eps_u + g * (eps_c - eps_u), with the exact collapses at g in {0, 1}
    (a single denoiser evaluation, returned bit-unchanged).
    """
    if g == 1.0:
        return denoiser.predict_eps(s_t, t, cond)
    if g == 0.0:
        return denoiser.predict_eps(s_t, t, None)
    eps_u = denoiser.predict_eps(s_t, t, None)
    eps_c = denoiser.predict_eps(s_t, t, cond)
    return eps_u.with_data(eps_u.data + g * (eps_c.data - eps_u.data))


# ---------------------------------------------------------------------------
# Analytic MMSE denoiser for Gaussian targets
# ---------------------------------------------------------------------------


def _posterior_mean(
    data: np.ndarray,
    t: int,
    target: GaussianSpec,
    sched: NoiseSchedule,
    cache: dict | None,
) -> np.ndarray:
    """E[s0 | s_t] for a Gaussian target under the closed-form forward process:

        m = mu + sqrt(ab) * Sigma (ab * Sigma + (1 - ab) I)^{-1} (s_t - sqrt(ab) mu)

    ``data`` may carry a leading batch axis when the target has one frame.
    """
    ab = sched.alpha_bar_at(t)
    sab = math.sqrt(ab)
    mu = target.mean_tensor()
    centered = data - sab * mu
    cov = target.cov

    if isinstance(cov, Isotropic):
        coef = sab * cov.scale / (ab * cov.scale + (1.0 - ab))
        return mu + coef * centered
    if isinstance(cov, Diagonal):
        v = cov.variances.reshape(target.dims)
        coef = sab * v / (ab * v + (1.0 - ab))
        return mu + coef * centered
    if isinstance(cov, FullCov):
        gain = None if cache is None else cache.get(t)
        if gain is None:
            sigma = cov.matrix
            lhs = ab * sigma + (1.0 - ab) * np.eye(target.n)
            # lhs is a polynomial in sigma, so they commute and the gain
            # sqrt(ab) * sigma @ inv(lhs) is symmetric
            gain = sab * np.linalg.solve(lhs, sigma)
            if cache is not None:
                cache[t] = gain
        flat = centered.reshape(-1, target.n)
        return mu + (flat @ gain.T).reshape(centered.shape)
    # Ar1Temporal: one F x F solve shared by every spatial site
    gain = None if cache is None else cache.get(t)
    if gain is None:
        f = target.dims[0]
        sigma_f = cov.variance * cov.frame_corr(f)
        lhs = ab * sigma_f + (1.0 - ab) * np.eye(f)
        gain = sab * np.linalg.solve(lhs, sigma_f)
        if cache is not None:
            cache[t] = gain
    cols = centered.reshape(target.dims[0], -1)
    return mu + (gain @ cols).reshape(centered.shape)


def analytic_gaussian_eps(
    s_t: Tensor, t: int, target: GaussianSpec, sched: NoiseSchedule
) -> Tensor:
    """The MMSE noise estimate (s_t - sqrt(ab) * m) / sqrt(1 - ab) with m the
    Gaussian posterior mean of s0 given s_t. Raises for t = 0, where the
    noising map is the identity and eps is undefined.
    """
    if t == 0:
        raise ValueError("t=0 has no noise to predict (alpha_bar = 1)")
    ab = sched.alpha_bar_at(t)
    _check_input(target.dims, s_t)
    m = _posterior_mean(s_t.data, t, target, sched, None)
    eps = (s_t.data - math.sqrt(ab) * m) / math.sqrt(1.0 - ab)
    return s_t.with_data(eps)


class AnalyticGaussianDenoiser:
    """MMSE eps-predictor for a known Gaussian target.

    Ignores the condition argument (the oracle is already exactly
    conditioned on its target). Per-timestep linear gains are cached, so
    repeated chains over the same step map cost one solve per timestep.
    """

    def __init__(self, target: GaussianSpec, sched: NoiseSchedule):
        self.target = target
        self.sched = sched
        self.dims = target.dims
        self._cache: dict = {}

    def predict_eps(self, s_t: Tensor, t: int, cond: Condition = None) -> Tensor:
        if t == 0:
            raise ValueError("t=0 has no noise to predict (alpha_bar = 1)")
        _check_input(self.dims, s_t)
        ab = self.sched.alpha_bar_at(t)
        m = _posterior_mean(s_t.data, t, self.target, self.sched, self._cache)
        eps = (s_t.data - math.sqrt(ab) * m) / math.sqrt(1.0 - ab)
        return s_t.with_data(eps)


# ---------------------------------------------------------------------------
# Toy trainable denoiser
# ---------------------------------------------------------------------------


def sinusoidal_embedding(t: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal position embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


@dataclass
class ToyDenoiser:
    """Two-layer tanh MLP predicting flattened eps from
    (flattened s_t, timestep embedding, one-hot condition + null slot).
    """

    input_dims: Dims
    hidden_width: int
    num_classes: int
    embed_dim: int = 16
    params: dict = field(default_factory=dict)

    @property
    def dims(self) -> Dims:
        return self.input_dims

    @property
    def n(self) -> int:
        return int(np.prod(self.input_dims))

    @property
    def in_features(self) -> int:
        return self.n + self.embed_dim + self.num_classes + 1

    @classmethod
    def initialize(
        cls,
        input_dims: Dims,
        hidden_width: int,
        num_classes: int,
        rng: RngStream,
        embed_dim: int = 16,
    ) -> "ToyDenoiser":
        den = cls(
            input_dims=tuple(input_dims),
            hidden_width=hidden_width,
            num_classes=num_classes,
            embed_dim=embed_dim,
        )
        i, h, o = den.in_features, hidden_width, den.n
        den.params = {
            "W1": rng.standard_normal((i, h)) / math.sqrt(i),
            "b1": np.zeros(h),
            "W2": rng.standard_normal((h, o)) / math.sqrt(h),
            "b2": np.zeros(o),
        }
        return den

    def _features(self, rows: np.ndarray, t: np.ndarray, cond: list) -> np.ndarray:
        b = rows.shape[0]
        onehot = np.zeros((b, self.num_classes + 1))
        for j, c in enumerate(cond):
            if c is None:
                onehot[j, self.num_classes] = 1.0
            else:
                if not 0 <= c < self.num_classes:
                    raise ValueError(f"class id {c} outside 0..{self.num_classes - 1}")
                onehot[j, c] = 1.0
        return np.concatenate([rows, sinusoidal_embedding(t, self.embed_dim), onehot], axis=1)

    def _forward(self, feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = np.tanh(feats @ self.params["W1"] + self.params["b1"])
        return h @ self.params["W2"] + self.params["b2"], h

    def predict_rows(self, rows: np.ndarray, t: np.ndarray, cond: list) -> np.ndarray:
        pred, _ = self._forward(self._features(rows, t, cond))
        return pred

    def predict_eps(self, s_t: Tensor, t: int, cond: Condition = None) -> Tensor:
        batched = _check_input(self.input_dims, s_t)
        count = s_t.data.shape[0] if batched else 1
        rows = s_t.data.reshape(count, self.n)
        t_arr = np.full(count, t)
        pred = self.predict_rows(rows, t_arr, [cond] * count)
        return s_t.with_data(pred.reshape(s_t.shape))

    # -- serialization: flat f32 parameter file + JSON sidecar ---------------

    _PARAM_ORDER = ("W1", "b1", "W2", "b2")

    def save(self, stem) -> tuple[Path, Path]:
        stem = Path(stem)
        meta = {
            "hidden_width": self.hidden_width,
            "embed_dim": self.embed_dim,
            "num_classes": self.num_classes,
            "input_dims": list(self.input_dims),
        }
        sidecar = stem.with_suffix(".json")
        blob = stem.with_suffix(".f32")
        sidecar.write_text(json.dumps(meta, indent=2))
        flat = np.concatenate([self.params[k].ravel() for k in self._PARAM_ORDER])
        blob.write_bytes(flat.astype("<f4").tobytes())
        return blob, sidecar

    @classmethod
    def load(cls, stem) -> "ToyDenoiser":
        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".json").read_text())
        den = cls(
            input_dims=tuple(meta["input_dims"]),
            hidden_width=meta["hidden_width"],
            num_classes=meta["num_classes"],
            embed_dim=meta["embed_dim"],
        )
        flat = np.frombuffer(stem.with_suffix(".f32").read_bytes(), dtype="<f4")
        flat = flat.astype(np.float64)
        i, h, o = den.in_features, den.hidden_width, den.n
        shapes = {"W1": (i, h), "b1": (h,), "W2": (h, o), "b2": (o,)}
        offset = 0
        for k in cls._PARAM_ORDER:
            size = int(np.prod(shapes[k]))
            den.params[k] = flat[offset : offset + size].reshape(shapes[k])
            offset += size
        if offset != flat.size:
            raise ValueError(f"parameter file holds {flat.size} values, expected {offset}")
        return den


def toy_loss_and_grads(
    den: ToyDenoiser,
    rows: np.ndarray,
    t: np.ndarray,
    cond: list,
    targets: np.ndarray,
) -> tuple[float, dict]:
    """Mean-squared eps-prediction loss (over all entries) and its exact
    gradients w.r.t. every parameter.
    """
    feats = den._features(rows, t, cond)
    pred, h = den._forward(feats)
    diff = pred - targets
    loss = float(np.mean(diff**2))

    dpred = 2.0 * diff / diff.size
    grads = {
        "W2": h.T @ dpred,
        "b2": dpred.sum(axis=0),
    }
    dh = dpred @ den.params["W2"].T
    dz1 = dh * (1.0 - h**2)
    grads["W1"] = feats.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    return loss, grads


def apply_prompt_drop(labels: list, prob: float, rng: RngStream) -> list:
    """Replace each label by the unconditional token with probability prob.

    Consumes exactly one uniform draw per label.
    """
    if not 0.0 <= prob <= 1.0:
        raise ValueError(f"prompt-drop probability must be in [0, 1], got {prob}")
    return [None if rng.uniform() < prob else lab for lab in labels]


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch: int = 128
    lr: float = 1e-4
    warmup: int = 500
    prompt_drop_prob: float = 0.30
    noise_offset: float = 0.1
    hidden_width: int = 64
    embed_dim: int = 16
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if not 0.0 <= self.prompt_drop_prob <= 1.0:
            raise ValueError("prompt_drop_prob must be in [0, 1]")
        if self.noise_offset < 0.0:
            raise ValueError("noise_offset must be >= 0")


@dataclass
class TrainResult:
    denoiser: ToyDenoiser
    losses: np.ndarray


def train_toy_denoiser(
    dataset: GaussianSpec | np.ndarray,
    sched: NoiseSchedule,
    config: TrainConfig,
    rng: RngStream,
    labels: np.ndarray | None = None,
) -> TrainResult:
    """Train a ToyDenoiser with Adam and linear learning-rate warm-up.

    dataset is either a GaussianSpec (fresh draws each step, unconditional)
    or an array of samples (count, F, C, H, W) with optional integer labels.
    Per-sample training noise is eps = eps_base + noise_offset * o, where o
    is drawn once per (frame, channel) and broadcast over (h, w).
    """
    if isinstance(dataset, GaussianSpec):
        dims = dataset.dims
        if labels is not None:
            raise ValueError("labels require a finite sample set")
        num_classes = 0
    else:
        dataset = np.asarray(dataset, dtype=np.float64)
        dims = tuple(dataset.shape[1:])
        num_classes = 0 if labels is None else int(np.max(labels)) + 1

    den = ToyDenoiser.initialize(
        dims, config.hidden_width, num_classes, rng, embed_dim=config.embed_dim
    )
    n = den.n
    f, c = dims[0], dims[1]
    moments = {k: np.zeros_like(v) for k, v in den.params.items()}
    scales = {k: np.zeros_like(v) for k, v in den.params.items()}
    losses = []

    sab = np.sqrt(sched.alpha_bar)
    somb = np.sqrt(1.0 - sched.alpha_bar)

    for step in range(config.steps):
        if isinstance(dataset, GaussianSpec):
            s0 = dataset.sample_batch(rng, config.batch)
            batch_labels: list = [None] * config.batch
        else:
            idx = rng.integers(0, dataset.shape[0], size=config.batch)
            s0 = dataset[idx]
            batch_labels = [None] * config.batch if labels is None else [
                int(labels[i]) for i in idx
            ]
        batch_labels = apply_prompt_drop(batch_labels, config.prompt_drop_prob, rng)

        t = rng.integers(1, sched.T + 1, size=config.batch)
        eps = rng.standard_normal(s0.shape)
        if config.noise_offset > 0.0:
            offset = rng.standard_normal((config.batch, f, c, 1, 1))
            eps = eps + config.noise_offset * offset
        coef_a = sab[t - 1][:, None, None, None, None]
        coef_b = somb[t - 1][:, None, None, None, None]
        s_t = coef_a * s0 + coef_b * eps

        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = toy_loss_and_grads(
                den, s_t.reshape(config.batch, n), t, batch_labels, eps.reshape(config.batch, n)
            )
        if not math.isfinite(loss):
            raise TrainingDiverged(step)
        losses.append(loss)

        lr = config.lr * min(1.0, (step + 1) / max(1, config.warmup))
        for k, g in grads.items():
            moments[k] = config.adam_beta1 * moments[k] + (1 - config.adam_beta1) * g
            scales[k] = config.adam_beta2 * scales[k] + (1 - config.adam_beta2) * g**2
            mhat = moments[k] / (1 - config.adam_beta1 ** (step + 1))
            vhat = scales[k] / (1 - config.adam_beta2 ** (step + 1))
            den.params[k] = den.params[k] - lr * mhat / (np.sqrt(vhat) + config.adam_eps)

    return TrainResult(denoiser=den, losses=np.array(losses))
