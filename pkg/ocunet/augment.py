"""
Flip, blur and sharpen augmentations that keep masks aligned with images
"""

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy.ndimage import correlate1d

from .constants import AUGMENT_OPS, BLUR_SIGMA, SHARPEN_AMOUNT
from .exceptions import ConfigError

GEOMETRIC_OPS = ("hflip", "vflip")


@dataclass(frozen=True)
class AugmentationSpec:
    """
    Ops to apply to one sample.

    Geometric ops (flips) move image and labels together; photometric ops
    (blur, sharpen) touch the image only. Ops run in the order of
    ``AUGMENT_OPS`` regardless of the order given.
    """

    ops: Tuple[str, ...] = ()
    seed: int = 0
    sigma: float = BLUR_SIGMA
    amount: float = SHARPEN_AMOUNT

    def __post_init__(self) -> None:
        unknown = [op for op in self.ops if op not in AUGMENT_OPS]
        if unknown:
            raise ConfigError(
                f"unknown augmentation ops {unknown}, choose from {AUGMENT_OPS}"
            )
        if self.sigma <= 0:
            raise ConfigError(f"blur sigma must be > 0, got {self.sigma}")
        if self.amount < 0:
            raise ConfigError(f"sharpen amount must be >= 0, got {self.amount}")
        ordered = tuple(op for op in AUGMENT_OPS if op in self.ops)
        object.__setattr__(self, "ops", ordered)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps over radius ceil(3 sigma)."""
    if sigma <= 0:
        raise ConfigError(f"blur sigma must be > 0, got {sigma}")
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(x**2) / (2 * sigma**2))
    return kernel / kernel.sum()


def gaussian_blur(image: np.ndarray, sigma: float = BLUR_SIGMA) -> np.ndarray:
    kernel = gaussian_kernel(sigma)
    out = np.asarray(image, dtype=np.float64)
    out = correlate1d(out, kernel, axis=0, mode="nearest")
    return correlate1d(out, kernel, axis=1, mode="nearest")


def sharpen(
    image: np.ndarray, amount: float = SHARPEN_AMOUNT, sigma: float = BLUR_SIGMA
) -> np.ndarray:
    """Unsharp mask: image + amount * (image - blur), clamped to [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    return np.clip(image + amount * (image - gaussian_blur(image, sigma)), 0.0, 1.0)


def augment(
    image: np.ndarray, labels: np.ndarray, spec: AugmentationSpec
) -> Tuple[np.ndarray, np.ndarray]:
    for op in spec.ops:
        if op == "hflip":
            image, labels = image[:, ::-1], labels[:, ::-1]
        elif op == "vflip":
            image, labels = image[::-1], labels[::-1]
        elif op == "gaussian_blur":
            image = gaussian_blur(image, spec.sigma)
        elif op == "sharpen":
            image = sharpen(image, spec.amount, spec.sigma)
    return np.ascontiguousarray(image), np.ascontiguousarray(labels)


def sample_spec(
    candidates: Sequence[str],
    seed: int,
    epoch: int,
    index: int,
    sigma: float = BLUR_SIGMA,
    amount: float = SHARPEN_AMOUNT,
) -> AugmentationSpec:
    """Draw each candidate op with probability 1/2, seeded by (seed, epoch, index)."""
    rng = np.random.default_rng([seed, epoch, index])
    chosen = tuple(op for op in candidates if rng.random() < 0.5)
    return AugmentationSpec(ops=chosen, seed=seed, sigma=sigma, amount=amount)
