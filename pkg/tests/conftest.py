import numpy as np
import pytest

import mixdiff as md


@pytest.fixture(scope="session")
def sched1000():
    return md.make_schedule(1000)


@pytest.fixture(scope="session")
def sched1000_beta():
    return md.make_schedule(1000, sigma_kind="beta")


@pytest.fixture()
def rng():
    return md.RngStream(12345, 0)


def random_video(seed: int, shape=(3, 2, 4, 4)) -> md.LatentVideo:
    gen = np.random.default_rng(seed)
    return md.LatentVideo(gen.normal(size=shape))


def moving_square_video(
    frames: int = 8,
    side: int = 8,
    square: int = 2,
    amplitude: float = 10.0,
    jitter: float = 0.01,
    seed: int = 7,
):
    """The moving-square smoothing instance: a constant background with tiny
    per-frame jitter and a square of the given amplitude translating one
    column per frame along the top rows.

    Returns (video, square_mask (F, H, W), background_sites (H, W)).
    """
    gen = np.random.default_rng(seed)
    data = jitter * gen.normal(size=(frames, 1, side, side))
    square_mask = np.zeros((frames, side, side), dtype=bool)
    for f in range(frames):
        col = f % (side - square + 1)
        square_mask[f, 0:square, col : col + square] = True
        data[f, 0][square_mask[f]] += amplitude
    touched = square_mask.any(axis=0)
    return md.LatentVideo(data), square_mask, ~touched
