"""Rank-4 latent tensors, the video<->frame-batch bridge, seeded RNG streams,
and the raw ``.lvt`` tensor file format.

All tensor data is float64 internally, row-major (f, c, h, w). Files store
float32. Tensors are treated as immutable once constructed: operations return
new objects and never write through ``.data``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError

Dims = tuple[int, int, int, int]

_MASK64 = (1 << 64) - 1

LVT_MAGIC = b"LVT1"


@dataclass(frozen=True, eq=False)
class _Rank4Tensor:
    """Shared container for rank-4 float64 tensors with finite entries."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 4:
            raise ShapeError(f"expected rank-4 data, got rank {arr.ndim}")
        if min(arr.shape) < 1:
            raise ShapeError(f"all dims must be >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ShapeError("tensor contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> Dims:
        return tuple(self.data.shape)  # type: ignore[return-value]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]

    def with_data(self, data: np.ndarray):
        """New tensor of the same kind around ``data``."""
        return type(self)(data)


class LatentVideo(_Rank4Tensor):
    """A latent video sample of shape F x C x H x W."""

    @property
    def frames(self) -> int:
        return self.data.shape[0]


class FrameBatch(_Rank4Tensor):
    """A batch of independent frames, shape B x C x H x W.

    Bijective with a LatentVideo of identical dims: item b is time-slice f=b.
    """

    @property
    def count(self) -> int:
        return self.data.shape[0]


def video_to_frames(v: LatentVideo) -> FrameBatch:
    """Reinterpret a video as a batch of frames (zero-copy)."""
    return FrameBatch(v.data)


def frames_to_video(b: FrameBatch) -> LatentVideo:
    """Exact inverse of :func:`video_to_frames` (zero-copy)."""
    return LatentVideo(b.data)


@dataclass
class RngStream:
    """Counter-based random stream: (seed, stream_id) fully determines the
    value sequence, independent of platform and thread count.

    Streams are single-consumer; use :meth:`split` to derive independent
    streams for concurrent chains or distinct noise roles.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        key = np.array(
            [self.seed & _MASK64, self.stream_id & _MASK64], dtype=np.uint64
        )
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def split(self, stream_id: int) -> "RngStream":
        """Independent stream with the same seed and a new stream id."""
        return RngStream(self.seed, stream_id)

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape, dtype=np.float64)

    def uniform(self) -> float:
        """One draw uniform on [0, 1)."""
        return float(self._gen.random())

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=size)


def sample_standard_normal(shape: Dims, rng: RngStream) -> LatentVideo:
    """Draw an F x C x H x W tensor of i.i.d. standard-normal entries."""
    if len(shape) != 4:
        raise ShapeError(f"expected 4 dims, got {len(shape)}")
    if min(shape) < 1:
        raise ShapeError(f"all dims must be >= 1, got {shape}")
    return LatentVideo(rng.standard_normal(shape))


def save_lvt(path, video: _Rank4Tensor) -> None:
    """Write tensor to the raw .lvt format.

    Layout: magic "LVT1", u32 LE rank (always 4), four u32 LE dims
    (F, C, H, W), then F*C*H*W float32 LE values row-major.
    """
    arr = np.ascontiguousarray(video.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(LVT_MAGIC)
        fh.write(struct.pack("<I", 4))
        fh.write(struct.pack("<4I", *video.data.shape))
        fh.write(arr.tobytes())


def load_lvt(path) -> LatentVideo:
    """Read a .lvt file written by :func:`save_lvt` (values become float64)."""
    raw = Path(path).read_bytes()
    if len(raw) < 24 or raw[:4] != LVT_MAGIC:
        raise ValueError(f"{path}: not an .lvt file (bad magic)")
    (rank,) = struct.unpack_from("<I", raw, 4)
    if rank != 4:
        raise ValueError(f"{path}: unsupported rank {rank}")
    dims = struct.unpack_from("<4I", raw, 8)
    if min(dims) < 1:
        raise ValueError(f"{path}: zero dimension in header {dims}")
    count = int(np.prod(dims))
    payload = raw[24:]
    if len(payload) != 4 * count:
        raise ValueError(
            f"{path}: payload holds {len(payload)} bytes, expected {4 * count}"
        )
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return LatentVideo(values.reshape(dims))
