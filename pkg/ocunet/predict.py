"""
Tiled inference and export of label masks, probability heatmaps and overlays
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .constants import OVERLAY_OPACITY
from .exceptions import DataError
from .manifest import load_image, write_png
from .masks import MaskEncoding
from .metrics import labels_from_probs
from .model import OCUNet
from .patches import extract_patches
from .tensor import Tensor

logger = logging.getLogger(__name__)


def _pad_to_multiple(image: np.ndarray, tile: Tuple[int, int]) -> np.ndarray:
    pad_h = (-image.shape[0]) % tile[0]
    pad_w = (-image.shape[1]) % tile[1]
    if not pad_h and not pad_w:
        return image
    mode = "reflect" if min(image.shape[:2]) > 1 else "edge"
    return np.pad(image, ((0, pad_h), (0, pad_w), (0, 0)), mode=mode)


def predict_image(model: OCUNet, image: np.ndarray, batch_size: int = 4) -> np.ndarray:
    """
    Class probabilities (H x W x channels) for an image of any size.

    The image is reflect-padded to a multiple of the model input, predicted
    tile by tile, stitched and cropped back.
    """
    model.eval()
    height, width = image.shape[:2]
    tile = model.config.input_size
    padded = _pad_to_multiple(image, tile)
    patches = extract_patches(padded, None, tile)
    channels = model.config.num_classes
    out = np.zeros(padded.shape[:2] + (channels,), dtype=np.float64)
    for start in range(0, len(patches), batch_size):
        chunk = patches[start : start + batch_size]
        probs = model(Tensor(np.stack([p.image for p in chunk]))).data
        for patch, tile_probs in zip(chunk, probs):
            y, x = patch.origin
            out[y : y + tile[0], x : x + tile[1]] = tile_probs
    return out[:height, :width]


def carcinoma_probability(probs: np.ndarray, encoding: MaskEncoding) -> np.ndarray:
    """Probability of the carcinoma class, the last label class in both schemes."""
    if probs.shape[-1] == 1:
        return probs[..., 0]
    return probs[..., encoding.num_classes - 1]


def heatmap(p: np.ndarray) -> np.ndarray:
    """Probabilities quantized to 8-bit gray levels, round(255 p)."""
    return np.rint(np.clip(p, 0.0, 1.0) * 255.0).astype(np.uint8)


def overlay(
    image: np.ndarray, p: np.ndarray, opacity: float = OVERLAY_OPACITY
) -> np.ndarray:
    """
    Blend a red-to-yellow ramp of ``p`` over an RGB image in [0, 1].

    Pixel colour is (255, round(255 p), 0) at alpha ``opacity * p``.
    """
    color = np.zeros(p.shape + (3,), dtype=np.float64)
    color[..., 0] = 255.0
    color[..., 1] = np.rint(255.0 * p)
    alpha = (opacity * p)[..., np.newaxis]
    blended = (1.0 - alpha) * (image * 255.0) + alpha * color
    return np.clip(np.rint(blended), 0, 255).astype(np.uint8)


@dataclass
class PredictionSummary:
    written: Dict[Path, List[Path]] = field(default_factory=dict)
    failed: List[Tuple[Path, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return bool(self.written)


def export_prediction(
    image: np.ndarray,
    probs: np.ndarray,
    stem: str,
    out_dir: Path,
    encoding: MaskEncoding,
) -> List[Path]:
    labels = labels_from_probs(probs)
    paths = [
        write_png(encoding.encode(labels), out_dir / f"{stem}_labels.png"),
    ]
    for k in range(probs.shape[-1]):
        target = out_dir / f"{stem}_prob_{k}.png"
        paths.append(write_png(heatmap(probs[..., k]), target))
    npy = out_dir / f"{stem}_probs.npy"
    np.save(npy, probs.astype(np.float32))
    paths.append(npy)
    p = carcinoma_probability(probs, encoding)
    paths.append(write_png(overlay(image, p), out_dir / f"{stem}_overlay.png"))
    return paths


def predict_paths(
    model: OCUNet,
    images: Sequence[Union[str, Path]],
    out_dir: Union[str, Path],
    encoding: MaskEncoding,
    batch_size: int = 4,
) -> PredictionSummary:
    """Predict every readable image; unreadable ones are skipped with a warning."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = PredictionSummary()
    for path in map(Path, images):
        try:
            image = load_image(path)
        except DataError as e:
            logger.warning("Skipping %s: %s", path, e)
            summary.failed.append((path, str(e)))
            continue
        probs = predict_image(model, image, batch_size)
        written = export_prediction(image, probs, path.stem, out, encoding)
        summary.written[path] = written
        logger.info("Predicted %s", path)
    return summary
