"""
Grid patch extraction and reassembly for aligned image/label pairs
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ConfigError, ShapeError


@dataclass
class Patch:
    """One tile; ``origin`` is its top-left pixel in the source."""

    image: np.ndarray
    labels: Optional[np.ndarray]
    origin: Tuple[int, int]
    grid_index: Tuple[int, int]


def grid_shape(
    height: int, width: int, patch: Tuple[int, int], stride: Tuple[int, int]
) -> Tuple[int, int]:
    """Rows and columns of whole tiles; partial border tiles are dropped."""
    ph, pw = patch
    sh, sw = stride
    if sh <= 0 or sw <= 0:
        raise ConfigError(f"patch stride must be positive, got {stride}")
    if ph <= 0 or pw <= 0:
        raise ConfigError(f"patch size must be positive, got {patch}")
    if ph > height or pw > width:
        raise ShapeError(f"patch {ph}x{pw} is larger than the {height}x{width} image")
    return (height - ph) // sh + 1, (width - pw) // sw + 1


def extract_patches(
    image: np.ndarray,
    labels: Optional[np.ndarray],
    patch: Tuple[int, int],
    stride: Optional[Tuple[int, int]] = None,
) -> List[Patch]:
    """
    Tile ``image`` (and ``labels`` when given) on a regular grid, row-major.

    Raises:
        ShapeError: If the patch exceeds the image or labels are misaligned
        ConfigError: If patch or stride are not positive
    """
    stride = stride or patch
    height, width = image.shape[:2]
    if labels is not None and labels.shape[:2] != (height, width):
        raise ShapeError(f"labels {labels.shape} do not align with image {image.shape}")
    rows, cols = grid_shape(height, width, patch, stride)
    ph, pw = patch
    out = []
    for r in range(rows):
        for c in range(cols):
            y, x = r * stride[0], c * stride[1]
            out.append(
                Patch(
                    image=image[y : y + ph, x : x + pw],
                    labels=None if labels is None else labels[y : y + ph, x : x + pw],
                    origin=(y, x),
                    grid_index=(r, c),
                )
            )
    return out


def reassemble_patches(
    patches: Sequence[Patch],
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Paste tiles back at their origins, covering the tiled area only."""
    if not patches:
        raise ShapeError("cannot reassemble an empty patch list")
    ph, pw = patches[0].image.shape[:2]
    height = max(p.origin[0] for p in patches) + ph
    width = max(p.origin[1] for p in patches) + pw
    first = patches[0]
    image = np.zeros((height, width) + first.image.shape[2:], dtype=first.image.dtype)
    labels = (
        None
        if first.labels is None
        else np.zeros(
            (height, width) + first.labels.shape[2:], dtype=first.labels.dtype
        )
    )
    for p in patches:
        y, x = p.origin
        image[y : y + ph, x : x + pw] = p.image
        if labels is not None and p.labels is not None:
            labels[y : y + ph, x : x + pw] = p.labels
    return image, labels
