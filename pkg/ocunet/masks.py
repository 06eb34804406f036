"""
Mask intensity encodings for the three-class and binary label schemes
"""

from enum import Enum
from typing import Optional, Tuple

import numpy as np

from .constants import (
    BINARY_CLASS_NAMES,
    BINARY_CODES,
    CODE_TOLERANCE,
    ORCA_CLASS_NAMES,
    ORCA_CODES,
)
from .exceptions import MaskDecodingError

# ITU-R 601-2 luma, the transform PIL applies for mode "L".
_LUMA = np.array([0.299, 0.587, 0.114])


class MaskEncoding(Enum):
    """
    Label scheme of a dataset.

    ``orca3`` masks hold black (non-tissue), gray (non-carcinoma tissue) and
    white (carcinoma); ``binary`` masks hold black background and white
    carcinoma.
    """

    ORCA3 = "orca3"
    BINARY = "binary"

    @property
    def codes(self) -> Tuple[int, ...]:
        return ORCA_CODES if self is MaskEncoding.ORCA3 else BINARY_CODES

    @property
    def class_names(self) -> Tuple[str, ...]:
        return ORCA_CLASS_NAMES if self is MaskEncoding.ORCA3 else BINARY_CLASS_NAMES

    @property
    def num_classes(self) -> int:
        """Label classes in the masks."""
        return len(self.codes)

    @property
    def head_channels(self) -> int:
        """Output channels of a matching network head; binary uses one sigmoid."""
        return 1 if self is MaskEncoding.BINARY else self.num_classes

    @classmethod
    def for_head(cls, channels: int) -> "MaskEncoding":
        return cls.BINARY if channels == 1 else cls.ORCA3

    def encode(self, labels: np.ndarray) -> np.ndarray:
        """Label map to an 8-bit single-channel mask."""
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise MaskDecodingError(
                f"{self.value} labels must lie in [0, {self.num_classes}), "
                f"got {labels.min()}..{labels.max()}"
            )
        return np.asarray(self.codes, dtype=np.uint8)[labels.astype(np.int64)]

    def decode(self, mask: np.ndarray, source: Optional[str] = None) -> np.ndarray:
        """
        8-bit mask to a label map by nearest intensity code.

        RGB masks are reduced to luminance first.

        Raises:
            MaskDecodingError: If any pixel lies farther than the tolerance
                from every code
        """
        mask = np.asarray(mask)
        if mask.ndim == 3:
            mask = np.rint(mask[..., :3].astype(np.float64) @ _LUMA)
        values = mask.astype(np.int64)
        codes = np.asarray(self.codes, dtype=np.int64)
        distance = np.abs(values[..., np.newaxis] - codes)
        labels = distance.argmin(axis=-1)
        outside = distance.min(axis=-1) > CODE_TOLERANCE
        if outside.any():
            bad = np.unique(values[outside])
            where = f" in {source}" if source else ""
            raise MaskDecodingError(
                f"{int(outside.sum())} mask pixels{where} match no {self.value} code "
                f"within ±{CODE_TOLERANCE}: values {bad[:5].tolist()}"
            )
        return labels.astype(np.int64)
