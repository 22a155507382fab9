"""Synthetic Gaussian target distributions with known structure.

These drive the closed-form MMSE denoisers and every Monte-Carlo oracle:
each target knows how to sample itself, expose its dense covariance (at
desk scale), and reduce to its per-frame marginal for the time-agnostic
image side of a mixture run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .latent import Dims, LatentVideo, RngStream

_PSD_TOL = 1e-9


@dataclass(frozen=True)
class Isotropic:
    """Covariance scale * I. scale = 0 is a deterministic target."""

    scale: float

    def __post_init__(self):
        if self.scale < 0.0:
            raise ValueError(f"isotropic scale must be >= 0, got {self.scale}")


@dataclass(frozen=True)
class Diagonal:
    """Covariance diag(variances) over the flattened latent."""

    variances: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.variances, dtype=np.float64)
        if np.any(v < 0.0):
            raise ValueError("diagonal variances must be >= 0")
        object.__setattr__(self, "variances", v)


@dataclass(frozen=True)
class FullCov:
    """Dense covariance matrix over the flattened latent (desk scale)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"covariance must be square, got {m.shape}")
        if not np.allclose(m, m.T, atol=_PSD_TOL):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(m).min() < -_PSD_TOL * max(1.0, np.abs(m).max()):
            raise ValueError("covariance must be positive semi-definite")
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class Ar1Temporal:
    """Frames jointly Gaussian per spatial site with lag-k correlation rho^k
    and common per-frame variance; distinct sites independent.
    """

    rho: float
    variance: float = 1.0

    def __post_init__(self):
        if not abs(self.rho) < 1.0:
            raise ValueError(f"|rho| must be < 1, got {self.rho}")
        if self.variance < 0.0:
            raise ValueError(f"variance must be >= 0, got {self.variance}")

    def frame_corr(self, frames: int) -> np.ndarray:
        """The F x F lag correlation matrix rho^|i-j|."""
        lags = np.abs(np.subtract.outer(np.arange(frames), np.arange(frames)))
        return self.rho ** lags


Covariance = Union[Isotropic, Diagonal, FullCov, Ar1Temporal]


@dataclass(frozen=True)
class GaussianSpec:
    """Mean + covariance of a synthetic target over F x C x H x W latents.

    mean may be given as a scalar (broadcast) or a flattened length-N vector.
    """

    dims: Dims
    mean: np.ndarray
    cov: Covariance

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 4 or min(dims) < 1:
            raise ValueError(f"dims must be four positive ints, got {self.dims}")
        n = int(np.prod(dims))
        mu = np.asarray(self.mean, dtype=np.float64)
        if mu.ndim == 0:
            mu = np.full(n, float(mu))
        if mu.shape != (n,):
            raise ValueError(f"mean must have length {n}, got {mu.shape}")
        if isinstance(self.cov, Diagonal) and self.cov.variances.size != n:
            raise ValueError("diagonal variances must match flattened size")
        if isinstance(self.cov, FullCov) and self.cov.matrix.shape[0] != n:
            raise ValueError("full covariance must match flattened size")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "mean", mu)

    @property
    def n(self) -> int:
        return int(np.prod(self.dims))

    @property
    def sites(self) -> int:
        """Spatial size per frame, C*H*W."""
        return self.n // self.dims[0]

    def mean_tensor(self) -> np.ndarray:
        return self.mean.reshape(self.dims)

    def dense_cov(self) -> np.ndarray:
        """Covariance as a dense N x N matrix (tests and small dims only)."""
        if isinstance(self.cov, Isotropic):
            return self.cov.scale * np.eye(self.n)
        if isinstance(self.cov, Diagonal):
            return np.diag(self.cov.variances)
        if isinstance(self.cov, FullCov):
            return self.cov.matrix.copy()
        # flattened order is frame-major, so the cross-frame structure is a
        # Kronecker factor against the per-frame identity
        corr = self.cov.frame_corr(self.dims[0])
        return self.cov.variance * np.kron(corr, np.eye(self.sites))

    def frame_marginal(self) -> "GaussianSpec":
        """The per-frame marginal as a (1, C, H, W) target.

        Requires frame-exchangeable structure: the mean (and diagonal
        variances, if any) must be identical across frames.
        """
        f = self.dims[0]
        marg_dims = (1,) + self.dims[1:]
        mu = self.mean.reshape(f, -1)
        if not all(np.array_equal(mu[0], row) for row in mu[1:]):
            raise ValueError("mean differs across frames; no common marginal")
        if isinstance(self.cov, Isotropic):
            cov: Covariance = self.cov
        elif isinstance(self.cov, Diagonal):
            v = self.cov.variances.reshape(f, -1)
            if not all(np.array_equal(v[0], row) for row in v[1:]):
                raise ValueError("variances differ across frames")
            cov = Diagonal(v[0])
        elif isinstance(self.cov, Ar1Temporal):
            cov = Isotropic(self.cov.variance)
        else:
            if f != 1:
                raise ValueError("full covariance has no per-frame marginal")
            cov = self.cov
        return GaussianSpec(dims=marg_dims, mean=mu[0], cov=cov)

    def sample_batch(self, rng: RngStream, count: int) -> np.ndarray:
        """count independent draws, shape (count, F, C, H, W)."""
        f = self.dims[0]
        z = rng.standard_normal((count, self.n))
        if isinstance(self.cov, Isotropic):
            x = np.sqrt(self.cov.scale) * z
        elif isinstance(self.cov, Diagonal):
            x = np.sqrt(self.cov.variances) * z
        elif isinstance(self.cov, FullCov):
            x = z @ _psd_sqrt(self.cov.matrix).T
        else:
            corr = self.cov.frame_corr(f)
            chol = np.linalg.cholesky(corr)
            zf = z.reshape(count, f, self.sites)
            x = np.sqrt(self.cov.variance) * np.einsum("gf,bfs->bgs", chol, zf)
            x = x.reshape(count, self.n)
        return (self.mean + x).reshape((count,) + self.dims)

    def sample(self, rng: RngStream) -> LatentVideo:
        return LatentVideo(self.sample_batch(rng, 1)[0])

    def pooled_moments(self) -> tuple[float, float]:
        """Mean and variance of the distribution of a uniformly random entry
        (the scalar summary used by the pooled Wasserstein metric).
        """
        if isinstance(self.cov, Isotropic):
            per_entry = np.full(self.n, self.cov.scale)
        elif isinstance(self.cov, Diagonal):
            per_entry = self.cov.variances
        elif isinstance(self.cov, FullCov):
            per_entry = np.diag(self.cov.matrix)
        else:
            per_entry = np.full(self.n, self.cov.variance)
        mean = float(self.mean.mean())
        var = float(per_entry.mean() + self.mean.var())
        return mean, var


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix via eigendecomposition."""
    w, u = np.linalg.eigh(matrix)
    w = np.clip(w, 0.0, None)
    return (u * np.sqrt(w)) @ u.T


def standard_normal_target(dims: Dims) -> GaussianSpec:
    """The N(0, I) target over the given dims."""
    return GaussianSpec(dims=dims, mean=0.0, cov=Isotropic(1.0))
