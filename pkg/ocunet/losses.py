"""
Training losses: categorical cross-entropy, weighted binary cross-entropy,
soft Dice and their hybrid
"""

from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from . import ops
from .constants import CLAMP_EPS, DEFAULT_ALPHA, DICE_SMOOTH
from .exceptions import ConfigError, ShapeError
from .tensor import Tensor

LOSS_KINDS = ("auto", "cce", "hybrid")

Target = Union[Tensor, np.ndarray]


@dataclass
class ClassWeights:
    """
    Nonnegative weights for the weighted binary cross-entropy.

    ``per_pixel=False`` means two values indexed by class (background,
    carcinoma); ``per_pixel=True`` means one value per target element.
    """

    values: np.ndarray
    per_pixel: bool = False

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.size == 0 or not np.all(np.isfinite(self.values)):
            raise ConfigError("class weights must be a non-empty set of finite values")
        if np.any(self.values < 0):
            raise ConfigError(f"class weights must be >= 0, got {self.values.tolist()}")
        if not np.any(self.values > 0):
            raise ConfigError("at least one class weight must be > 0")

    @classmethod
    def uniform(cls) -> "ClassWeights":
        return cls(np.ones(2))

    def expand(self, y_true: np.ndarray) -> np.ndarray:
        """
        Weight per target element.

        Raises:
            ShapeError: If the values are sized neither per class (2) nor
                per pixel (the target size)
        """
        if self.per_pixel:
            if self.values.size != y_true.size:
                raise ShapeError(
                    f"per-pixel weights hold {self.values.size} values, "
                    f"target has {y_true.size}"
                )
            return self.values.reshape(y_true.shape)
        if self.values.size != 2:
            raise ShapeError(
                f"weights must be per-class (2) or per-pixel ({y_true.size}), "
                f"got {self.values.size} values"
            )
        return np.where(y_true > 0.5, self.values[1], self.values[0])


@dataclass
class HybridLossConfig:
    alpha: float = DEFAULT_ALPHA
    smooth: float = DICE_SMOOTH
    symmetric_weights: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.smooth < 0:
            raise ConfigError(f"Dice smoothing must be >= 0, got {self.smooth}")


@dataclass
class LossConfig:
    """
    Loss selection for training.

    ``auto`` uses categorical cross-entropy for multi-class heads and the
    hybrid WBCE + Dice loss for a single sigmoid channel.
    """

    kind: str = "auto"
    alpha: float = DEFAULT_ALPHA
    smooth: float = DICE_SMOOTH
    symmetric_weights: bool = False
    class_weights: Optional[List[float]] = None

    def __post_init__(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss '{self.kind}', choose from {LOSS_KINDS}")
        self.hybrid()
        if self.class_weights is not None:
            self.class_weights = [float(w) for w in self.class_weights]
            ClassWeights(np.asarray(self.class_weights))

    def hybrid(self) -> HybridLossConfig:
        return HybridLossConfig(self.alpha, self.smooth, self.symmetric_weights)

    def resolve(self, num_classes: int) -> str:
        if self.kind != "auto":
            return self.kind
        return "hybrid" if num_classes == 1 else "cce"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "LossConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown loss config keys: {unknown}")
        return cls(**doc)


def _target(y_true: Target, like: Tensor) -> np.ndarray:
    data = y_true.data if isinstance(y_true, Tensor) else np.asarray(y_true)
    if data.shape != like.shape:
        raise ShapeError(f"prediction {like.shape} and target {data.shape} differ")
    return data.astype(like.dtype)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ShapeError(
            f"labels must lie in [0, {num_classes}), got {labels.min()}..{labels.max()}"
        )
    return np.eye(num_classes)[labels]


def cce(y_pred: Tensor, y_true: Target, eps: float = CLAMP_EPS) -> Tensor:
    """Mean over pixels of -sum_c y_c log p_c, with p clamped to [eps, 1 - eps]."""
    target = _target(y_true, y_pred)
    pixels = target.size // target.shape[-1]
    p = ops.clip(y_pred, eps, 1.0 - eps)
    total = ops.sum(ops.mul(Tensor(target, dtype=target.dtype), ops.log(p)))
    return ops.mul(total, -1.0 / pixels)


def wbce(
    y_pred: Tensor,
    y_true: Target,
    weights: Optional[ClassWeights] = None,
    symmetric: bool = False,
    eps: float = CLAMP_EPS,
) -> Tensor:
    """
    Weighted binary cross-entropy.

    -(1/N) sum_i [w_i y_i log p_i + (1 - y_i) log(1 - p_i)]; the weight
    multiplies only the positive term unless ``symmetric`` is set.
    """
    target = _target(y_true, y_pred)
    w = (weights or ClassWeights.uniform()).expand(target).astype(y_pred.dtype)
    p = ops.clip(y_pred, eps, 1.0 - eps)
    positive = ops.mul(Tensor(w * target, dtype=y_pred.dtype), ops.log(p))
    negative_coeff = (1.0 - target) * w if symmetric else 1.0 - target
    negative = ops.mul(
        Tensor(negative_coeff, dtype=y_pred.dtype), ops.log(ops.sub(1.0, p))
    )
    return ops.mul(ops.sum(ops.add(positive, negative)), -1.0 / target.size)


def dice_loss(y_pred: Tensor, y_true: Target, smooth: float = DICE_SMOOTH) -> Tensor:
    """Soft Dice over the whole batch: 1 - (2 sum yp + s) / (sum y + sum p + s)."""
    target = _target(y_true, y_pred)
    intersection = ops.sum(ops.mul(Tensor(target, dtype=target.dtype), y_pred))
    numerator = ops.add(ops.mul(intersection, 2.0), smooth)
    denominator = ops.add(ops.sum(y_pred), float(target.sum()) + smooth)
    return ops.sub(1.0, ops.div(numerator, denominator))


def hybrid_loss(
    cfg: HybridLossConfig,
    y_pred: Tensor,
    y_true: Target,
    weights: Optional[ClassWeights] = None,
) -> Tensor:
    """alpha * wbce + (1 - alpha) * dice_loss."""
    weighted = wbce(y_pred, y_true, weights, symmetric=cfg.symmetric_weights)
    overlap = dice_loss(y_pred, y_true, cfg.smooth)
    return ops.add(ops.mul(weighted, cfg.alpha), ops.mul(overlap, 1.0 - cfg.alpha))


def compute_loss(
    config: LossConfig,
    probs: Tensor,
    labels: np.ndarray,
    weights: Optional[ClassWeights] = None,
) -> Tensor:
    """
    Loss of a probability map against a B x H x W label map.

    Raises:
        ConfigError: If the hybrid loss is requested for a multi-class head
    """
    num_classes = probs.shape[-1]
    kind = config.resolve(num_classes)
    if kind == "cce":
        if num_classes == 1:
            raise ConfigError(
                "categorical cross-entropy needs at least 2 output channels"
            )
        return cce(probs, one_hot(labels, num_classes))
    if num_classes != 1:
        raise ConfigError(
            f"the hybrid loss needs a single-channel head, got {num_classes}"
        )
    target = np.asarray(labels)[..., np.newaxis]
    return hybrid_loss(config.hybrid(), probs, target, weights)


def class_weights_from(values: Optional[Sequence[float]]) -> Optional[ClassWeights]:
    return None if values is None else ClassWeights(np.asarray(values))
