"""Desk-scale statistics for validating sampler output distributions:
empirical moments, pooled temporal autocorrelation, a flicker measure, and
the closed-form 2-Wasserstein distance between Gaussians.

Confidence half-widths use the 95% normal approximation. Accumulations are
plain (single-threaded, deterministic-order) numpy reductions.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .latent import LatentVideo

_Z95 = 1.959963984540054
# floor keeps half-widths positive even for degenerate (constant) inputs
_HW_FLOOR = 1e-15


def _stack(samples) -> np.ndarray:
    arrs = [s.data if isinstance(s, LatentVideo) else np.asarray(s) for s in samples]
    if not arrs:
        raise ValueError("no samples given")
    shape = arrs[0].shape
    if any(a.shape != shape for a in arrs):
        raise ValueError("samples disagree on dims")
    return np.stack(arrs).astype(np.float64)


@dataclass(frozen=True)
class MomentSummary:
    """Unbiased mean/covariance of flattened samples with per-entry standard
    errors of the mean. covariance is 1-D (diagonal) unless full was
    requested."""

    n: int
    mean: np.ndarray
    covariance: np.ndarray
    stderr: np.ndarray


def empirical_moments(samples, full: bool = False) -> MomentSummary:
    x = _stack(samples)
    n = x.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    flat = x.reshape(n, -1)
    mean = flat.mean(axis=0)
    if full:
        cov = np.cov(flat, rowvar=False, ddof=1)
        var = np.diag(cov).copy()
    else:
        var = flat.var(axis=0, ddof=1)
        cov = var
    return MomentSummary(
        n=n, mean=mean, covariance=cov, stderr=np.sqrt(var / n)
    )


def temporal_autocorr(samples, lag: int) -> float:
    """Pearson correlation (through the origin, after per-site centering)
    between frame f and frame f+lag entries, pooled over sites, frames, and
    samples."""
    x = _stack(samples)
    frames = x.shape[1]
    if not 0 <= lag < frames:
        raise ValueError(f"lag must be in 0..{frames - 1}, got {lag}")
    centered = x - x.mean(axis=(0, 1), keepdims=True)
    a = centered[:, : frames - lag]
    b = centered[:, lag:]
    denom = math.sqrt(float(np.sum(a * a)) * float(np.sum(b * b)))
    if denom == 0.0:
        raise ValueError("zero variance; autocorrelation undefined")
    return float(np.sum(a * b) / denom)


def flicker_metric(x: LatentVideo, mask: np.ndarray | None = None) -> float:
    """Mean over (masked) sites and consecutive frame pairs of
    |x[f+1] - x[f]|. mask is boolean over (C, H, W)."""
    if x.frames < 2:
        raise ValueError(f"need F >= 2, got F={x.frames}")
    diffs = np.abs(np.diff(x.data, axis=0))
    if mask is None:
        return float(diffs.mean())
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape[1:])
    if not mask.any():
        raise ValueError("mask selects no sites")
    return float(diffs[:, mask].mean())


def _as_cov_matrix(cov) -> np.ndarray:
    c = np.atleast_1d(np.asarray(cov, dtype=np.float64))
    if c.ndim == 1:
        return np.diag(c)
    if c.ndim == 2 and c.shape[0] == c.shape[1]:
        return c
    raise ValueError(f"covariance must be 1-D or square, got shape {c.shape}")


def _check_psd(c: np.ndarray, name: str) -> None:
    tol = 1e-9 * max(1.0, float(np.abs(c).max()))
    if not np.allclose(c, c.T, atol=tol):
        raise ValueError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(c).min() < -tol:
        raise ValueError(f"{name} is not positive semi-definite")


def gaussian_w2(mu1, cov1, mu2, cov2) -> float:
    """2-Wasserstein distance between Gaussians:

        W2^2 = |mu1 - mu2|^2 + tr(c1 + c2 - 2 (c2^{1/2} c1 c2^{1/2})^{1/2})

    Covariances may be scalars, 1-D (diagonal) or full matrices.
    """
    m1 = np.atleast_1d(np.asarray(mu1, dtype=np.float64))
    m2 = np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    if m1.shape != m2.shape:
        raise ValueError(f"mean shapes differ: {m1.shape} vs {m2.shape}")
    c1 = _as_cov_matrix(cov1)
    c2 = _as_cov_matrix(cov2)
    if c1.shape[0] != m1.size or c2.shape[0] != m2.size:
        raise ValueError("covariance size does not match mean length")
    _check_psd(c1, "cov1")
    _check_psd(c2, "cov2")

    mean_term = float(np.sum((m1 - m2) ** 2))
    if np.count_nonzero(c1 - np.diag(np.diag(c1))) == 0 and np.count_nonzero(
        c2 - np.diag(np.diag(c2))
    ) == 0:
        # diagonal fast path
        d1 = np.clip(np.diag(c1), 0.0, None)
        d2 = np.clip(np.diag(c2), 0.0, None)
        cov_term = float(np.sum((np.sqrt(d1) - np.sqrt(d2)) ** 2))
    else:
        root2 = _sym_sqrt(c2)
        inner = _sym_sqrt(root2 @ c1 @ root2)
        cov_term = float(np.trace(c1) + np.trace(c2) - 2.0 * np.trace(inner))
    return math.sqrt(max(mean_term + cov_term, 0.0))


def _sym_sqrt(matrix: np.ndarray) -> np.ndarray:
    sym = 0.5 * (matrix + matrix.T)
    w, u = np.linalg.eigh(sym)
    return (u * np.sqrt(np.clip(w, 0.0, None))) @ u.T


# ---------------------------------------------------------------------------
# Metric report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricValue:
    name: str
    value: float
    half_width: float
    n: int


@dataclass
class MetricReport:
    """Named scalar metrics with 95% confidence half-widths."""

    metrics: list

    def by_name(self) -> dict:
        return {m.name: m for m in self.metrics}

    def to_json(self) -> str:
        return json.dumps(
            {
                m.name: {"value": m.value, "half_width": m.half_width, "n": m.n}
                for m in self.metrics
            },
            indent=2,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["name", "value", "half_width", "n"])
        for m in self.metrics:
            writer.writerow([m.name, repr(m.value), repr(m.half_width), m.n])
        return buf.getvalue()


def _hw(value: float) -> float:
    return max(float(value), _HW_FLOOR)


def _block_half_width(per_block: np.ndarray) -> float:
    k = len(per_block)
    if k < 2:
        return _HW_FLOOR
    return _hw(_Z95 * per_block.std(ddof=1) / math.sqrt(k))


def metric_report(
    samples,
    target=None,
    lags: tuple[int, ...] = (1,),
    blocks: int = 10,
) -> MetricReport:
    """The standard metric battery over a collection of samples.

    Scalar summaries (pooled mean/variance, per-frame mean/variance) carry
    analytic normal-approximation half-widths; autocorrelation, flicker and
    the pooled Wasserstein distance use block (sample-split) half-widths.
    target, when given, is a GaussianSpec providing pooled reference moments.
    """
    x = _stack(samples)
    n, frames = x.shape[0], x.shape[1]
    values = x.reshape(n, -1)
    total = values.size

    out: list[MetricValue] = []
    pooled_mean = float(values.mean())
    pooled_var = float(values.var(ddof=1))
    out.append(
        MetricValue(
            "mean_pooled",
            pooled_mean,
            _hw(_Z95 * math.sqrt(pooled_var / total)),
            n,
        )
    )
    out.append(
        MetricValue(
            "var_pooled",
            pooled_var,
            _hw(_Z95 * pooled_var * math.sqrt(2.0 / max(total - 1, 1))),
            n,
        )
    )
    per_frame = x.reshape(n, frames, -1)
    for f in range(frames):
        vals = per_frame[:, f]
        fv = float(vals.var(ddof=1))
        out.append(
            MetricValue(
                f"frame_mean_{f}",
                float(vals.mean()),
                _hw(_Z95 * math.sqrt(fv / vals.size)),
                n,
            )
        )
        out.append(
            MetricValue(
                f"frame_var_{f}",
                fv,
                _hw(_Z95 * fv * math.sqrt(2.0 / max(vals.size - 1, 1))),
                n,
            )
        )

    block_ids = np.array_split(np.arange(n), min(blocks, n))
    for lag in lags:
        if lag >= frames:
            continue
        try:
            value = temporal_autocorr([xi for xi in x], lag)
            per_block = np.array(
                [temporal_autocorr([x[i] for i in ids], lag) for ids in block_ids if len(ids)]
            )
        except ValueError:  # degenerate (zero-variance) input
            continue
        out.append(
            MetricValue(f"temporal_autocorr_{lag}", value, _block_half_width(per_block), n)
        )

    if frames >= 2:
        per_sample = np.array([flicker_metric(LatentVideo(xi)) for xi in x])
        out.append(
            MetricValue(
                "flicker",
                float(per_sample.mean()),
                _hw(_Z95 * per_sample.std(ddof=1) / math.sqrt(n)) if n > 1 else _HW_FLOOR,
                n,
            )
        )

    if target is not None:
        t_mean, t_var = target.pooled_moments()
        value = gaussian_w2([pooled_mean], [pooled_var], [t_mean], [t_var])
        per_block = np.array(
            [
                gaussian_w2(
                    [float(values[ids].mean())],
                    [float(values[ids].var(ddof=1))],
                    [t_mean],
                    [t_var],
                )
                for ids in block_ids
                if len(ids) > 1
            ]
        )
        out.append(
            MetricValue("w2_to_target", value, _block_half_width(per_block), n)
        )

    return MetricReport(metrics=out)
