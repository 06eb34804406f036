"""
Synthetic H&E-like datasets with known masks, for smoke and acceptance runs
"""

import logging
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image, ImageDraw

from .constants import MANIFEST_NAME
from .exceptions import ConfigError
from .manifest import ManifestEntry, SampleManifest, save_manifest, write_png
from .masks import MaskEncoding

logger = logging.getLogger(__name__)

# Mean RGB per class: pale background, pink stroma, purple tumour nests.
PALETTE = {
    MaskEncoding.ORCA3: np.array([[236, 232, 236], [222, 150, 190], [110, 50, 140]]),
    MaskEncoding.BINARY: np.array([[228, 170, 205], [110, 50, 140]]),
}
NOISE_STD = 8.0


def encoding_for_classes(classes: int) -> MaskEncoding:
    if classes in (1, 2):
        return MaskEncoding.BINARY
    if classes == 3:
        return MaskEncoding.ORCA3
    raise ConfigError(f"synthetic data supports 1, 2 or 3 classes, got {classes}")


def _draw_shapes(
    draw: ImageDraw.ImageDraw,
    rng: np.random.Generator,
    size: Tuple[int, int],
    value: int,
    count: int,
    scale: Tuple[float, float],
) -> None:
    height, width = size
    for _ in range(count):
        h = int(rng.uniform(*scale) * height)
        w = int(rng.uniform(*scale) * width)
        y = int(rng.integers(0, max(1, height - h)))
        x = int(rng.integers(0, max(1, width - w)))
        box = [x, y, x + max(w, 2), y + max(h, 2)]
        if rng.random() < 0.5:
            draw.ellipse(box, fill=value)
        else:
            draw.rectangle(box, fill=value)


def synth_labels(
    rng: np.random.Generator, size: Tuple[int, int], encoding: MaskEncoding
) -> np.ndarray:
    canvas = Image.new("L", (size[1], size[0]), 0)
    draw = ImageDraw.Draw(canvas)
    if encoding is MaskEncoding.ORCA3:
        _draw_shapes(draw, rng, size, 1, int(rng.integers(1, 3)), (0.4, 0.8))
        _draw_shapes(draw, rng, size, 2, int(rng.integers(1, 4)), (0.1, 0.3))
    else:
        _draw_shapes(draw, rng, size, 1, int(rng.integers(1, 4)), (0.15, 0.4))
    return np.asarray(canvas, dtype=np.int64)


def synth_image(
    rng: np.random.Generator, labels: np.ndarray, encoding: MaskEncoding
) -> np.ndarray:
    colors = PALETTE[encoding][labels].astype(np.float64)
    noisy = colors + rng.normal(0.0, NOISE_STD, size=colors.shape)
    return np.clip(np.rint(noisy), 0, 255).astype(np.uint8)


def synth_dataset(
    out_dir: Union[str, Path],
    n: int,
    size: Tuple[int, int] = (64, 64),
    classes: int = 1,
    seed: int = 0,
    test_fraction: float = 0.0,
) -> SampleManifest:
    """
    Write ``n`` image/mask PNG pairs and ``manifest.csv`` under ``out_dir``.

    ``classes`` 1 or 2 produces binary masks, 3 produces three-class masks.
    The last ``round(test_fraction * n)`` samples form the test split. Output
    bytes depend only on the arguments.

    Raises:
        ConfigError: If n < 1, the size is not divisible by 16, or the class
            count is unsupported
    """
    if n < 1:
        raise ConfigError(f"need at least one sample, got n={n}")
    height, width = size
    if height <= 0 or width <= 0 or height % 16 or width % 16:
        raise ConfigError(f"synthetic size {height}x{width} must be divisible by 16")
    if not 0.0 <= test_fraction < 1.0:
        raise ConfigError(f"test_fraction must lie in [0, 1), got {test_fraction}")
    encoding = encoding_for_classes(classes)
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    n_test = int(round(test_fraction * n))

    entries = []
    for i in range(n):
        labels = synth_labels(rng, (height, width), encoding)
        image = synth_image(rng, labels, encoding)
        image_path = write_png(image, out / "images" / f"image_{i:03d}.png")
        mask = encoding.encode(labels)
        mask_path = write_png(mask, out / "masks" / f"mask_{i:03d}.png")
        split = "test" if i >= n - n_test else "train"
        entries.append(ManifestEntry(image_path, mask_path, split))

    manifest = SampleManifest(
        entries, encoding, (height, width), source=out / MANIFEST_NAME
    )
    save_manifest(manifest, out / MANIFEST_NAME)
    logger.info("Wrote %d synthetic %s samples to %s", n, encoding.value, out)
    return manifest
