"""Synthetic binary segmentation data: bright ellipses on a noisy background."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import make_rng

MIN_FG = 0.02
MAX_FG = 0.6
# test samples are drawn from indices starting here; train uses [0, TEST_OFFSET)
TEST_OFFSET = 1 << 32


@dataclass(frozen=True)
class Sample:
    image: np.ndarray  # 1 x H x W in [0, 1]
    mask: np.ndarray  # H x W, {0, 1}
    seed: int
    index: int


def _ellipse_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    mask = np.zeros((h, w), dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        cy = rng.uniform(0.15, 0.85) * h
        cx = rng.uniform(0.15, 0.85) * w
        ay = rng.uniform(0.08, 0.3) * h
        ax = rng.uniform(0.08, 0.3) * w
        theta = rng.uniform(0.0, np.pi)
        c, s = np.cos(theta), np.sin(theta)
        dy, dx = yy - cy, xx - cx
        u = (c * dx + s * dy) / ax
        v = (-s * dx + c * dy) / ay
        mask |= u * u + v * v <= 1.0
    return mask


def gen_sample(seed: int, index: int, h: int, w: int, difficulty: float) -> Sample:
    """Generate sample ``index`` of the stream keyed by ``seed``."""
    rng = make_rng(seed, "sample", index)
    while True:
        mask = _ellipse_mask(rng, h, w)
        if MIN_FG <= mask.mean() <= MAX_FG:
            break
    fg = 0.6 + 0.2 * rng.uniform()
    image = mask * fg + 0.2 + (0.05 + 0.15 * difficulty) * rng.standard_normal((h, w))
    image = np.clip(image, 0.0, 1.0)
    return Sample(image[None], mask.astype(np.float64), int(seed), int(index))


def gen_dataset(n: int, h: int, w: int, seed: int, difficulty: float = 0.5,
                start: int = 0) -> list[Sample]:
    """``n`` samples with indices ``start .. start+n-1``."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    if h < 16 or w < 16:
        raise ConfigError("H and W must be >= 16")
    if not 0.0 <= difficulty <= 1.0:
        raise ConfigError("difficulty must lie in [0, 1]")
    return [gen_sample(seed, start + i, h, w, difficulty) for i in range(n)]


def train_test_split(n_train: int, n_test: int, h: int, w: int, seed: int,
                     difficulty: float = 0.5) -> tuple[list[Sample], list[Sample]]:
    """Train and test sets from disjoint index ranges of the same seed stream."""
    if n_train >= TEST_OFFSET:
        raise ConfigError("n_train too large for the index split")
    return (gen_dataset(n_train, h, w, seed, difficulty, start=0),
            gen_dataset(n_test, h, w, seed, difficulty, start=TEST_OFFSET))


def stack(samples: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
    """Batch arrays: images ``N x 1 x H x W`` and masks ``N x H x W``."""
    return (np.stack([s.image for s in samples]), np.stack([s.mask for s in samples]))
