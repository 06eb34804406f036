"""
The optimization loop: Adam steps, validation, plateau schedule, early
stopping, per-epoch log and best-checkpoint tracking
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .augment import AugmentationSpec
from .checkpoint import Checkpoint, save_checkpoint
from .constants import (
    AUGMENT_OPS,
    BLUR_SIGMA,
    DEFAULT_LR,
    SHARPEN_AMOUNT,
    VAL_FRACTION,
)
from .dataset import (
    BatchLoader,
    SegmentationDataset,
    dataset_class_frequencies,
    default_batch_size,
    derive_class_weights,
    split_train_val,
)
from .exceptions import ConfigError, NonFiniteGradientError, TrainingError
from .losses import ClassWeights, LossConfig, compute_loss
from .manifest import SampleManifest
from .masks import MaskEncoding
from .metrics import ConfusionCounts, MetricReport, confusion, labels_from_probs
from .model import OCUNet
from .optim import (
    AdamState,
    EarlyStopPolicy,
    PlateauPolicy,
    adam_step,
    early_stop_check,
    plateau_update,
)
from .tensor import Tape, Tensor

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "train_loss", "train_dice", "val_dice", "val_miou", "lr"]


def _optional_str(path: Optional[Path]) -> Optional[str]:
    return str(path) if path is not None else None


@dataclass
class TrainingConfig:
    """
    Everything the loop needs besides the model and the data.

    ``batch_size=None`` picks the default for the manifest's patch size;
    ``early_stop=None`` disables early stopping; ``max_steps`` caps the
    total number of optimizer steps.
    """

    epochs: int = 50
    batch_size: Optional[int] = None
    lr: float = DEFAULT_LR
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    plateau: PlateauPolicy = field(default_factory=PlateauPolicy)
    early_stop: Optional[EarlyStopPolicy] = field(default_factory=EarlyStopPolicy)
    augment: Tuple[str, ...] = AUGMENT_OPS
    blur_sigma: float = BLUR_SIGMA
    sharpen_amount: float = SHARPEN_AMOUNT
    workers: int = 1
    val_fraction: float = VAL_FRACTION
    resize: bool = False
    max_steps: Optional[int] = None
    checkpoint_path: Optional[Path] = None
    log_path: Optional[Path] = None

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(
                f"val_fraction must lie in [0, 1), got {self.val_fraction}"
            )
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")
        self.augment = tuple(self.augment)
        # Validates op names, sigma and amount.
        AugmentationSpec(self.augment, self.seed, self.blur_sigma, self.sharpen_amount)
        if self.checkpoint_path is not None:
            self.checkpoint_path = Path(self.checkpoint_path)
        if self.log_path is not None:
            self.log_path = Path(self.log_path)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "seed": self.seed,
            "loss": self.loss.to_dict(),
            "plateau": self.plateau.to_dict(),
            "early_stop": self.early_stop.to_dict() if self.early_stop else None,
            "augment": list(self.augment),
            "blur_sigma": self.blur_sigma,
            "sharpen_amount": self.sharpen_amount,
            "workers": self.workers,
            "val_fraction": self.val_fraction,
            "resize": self.resize,
            "max_steps": self.max_steps,
            "checkpoint_path": _optional_str(self.checkpoint_path),
            "log_path": _optional_str(self.log_path),
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "TrainingConfig":
        doc = dict(doc)
        if "loss" in doc:
            doc["loss"] = LossConfig.from_dict(doc["loss"])
        if "plateau" in doc:
            doc["plateau"] = PlateauPolicy.from_dict(doc["plateau"])
        if doc.get("early_stop") is not None:
            doc["early_stop"] = EarlyStopPolicy.from_dict(doc["early_stop"])
        try:
            return cls(**doc)
        except TypeError as e:
            raise ConfigError(f"invalid training config: {e}")


@dataclass
class TrainingResult:
    history: pd.DataFrame
    best_checkpoint: Optional[Checkpoint]
    best_epoch: int
    best_metric: float
    steps: int
    stopped_early: bool = False


def monitored_dice(report: MetricReport, encoding: MaskEncoding) -> float:
    """Carcinoma Dice for binary data, the class-average Dice otherwise."""
    if encoding is MaskEncoding.BINARY:
        return float(report.table["dice"].iloc[1])
    return report.value("average", "dice")


def evaluate(
    model: OCUNet,
    dataset: SegmentationDataset,
    batch_size: int,
    workers: int = 1,
) -> MetricReport:
    """Metric report of ``model`` in eval mode over every item of ``dataset``."""
    encoding = dataset.encoding
    model.eval()
    counts = ConfusionCounts.zeros(encoding.num_classes)
    loader = BatchLoader(dataset, batch_size, shuffle=False, workers=workers)
    for images, labels in loader.batches():
        probs = model(Tensor(images))
        pred = labels_from_probs(probs.data)
        counts = counts + confusion(pred, labels, encoding.num_classes)
    return MetricReport.from_counts(counts, encoding.class_names)


def check_head(model: OCUNet, encoding: MaskEncoding) -> None:
    if model.config.num_classes != encoding.head_channels:
        raise ConfigError(
            f"model has {model.config.num_classes} output channels but "
            f"{encoding.value} masks need {encoding.head_channels}"
        )


def _class_weights(
    config: TrainingConfig, dataset: SegmentationDataset, model: OCUNet
) -> Optional[ClassWeights]:
    if config.loss.resolve(model.config.num_classes) != "hybrid":
        return None
    if config.loss.class_weights is not None:
        return ClassWeights(np.asarray(config.loss.class_weights))
    weights = derive_class_weights(dataset_class_frequencies(dataset))
    logger.info(
        "Class weights from training frequencies: %s", np.round(weights.values, 4)
    )
    return weights


def _append_log(path: Path, row: Dict[str, Any], first: bool) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([row], columns=HISTORY_COLUMNS)
    frame.to_csv(path, mode="w" if first else "a", header=first, index=False)


def train(
    model: OCUNet,
    manifest: SampleManifest,
    config: Optional[TrainingConfig] = None,
) -> TrainingResult:
    """
    Fit ``model`` on the manifest's training split.

    Every epoch runs one pass over shuffled, augmented training batches,
    then scores the validation entries (a held-out share of train when the
    manifest has no ``val`` split). The best validation Dice is kept as a
    checkpoint, written to ``config.checkpoint_path`` when set.

    Raises:
        DataError: If the training split is empty
        TrainingError: On an empty batch or a non-finite loss or gradient
        ConfigError: If the model head does not fit the mask encoding
    """
    config = config or TrainingConfig()
    encoding = manifest.encoding
    check_head(model, encoding)

    train_entries, val_entries = split_train_val(
        manifest, config.seed, config.val_fraction
    )
    patch, resize = manifest.patch_size, config.resize
    train_set = SegmentationDataset(train_entries, encoding, patch, resize)
    val_set = SegmentationDataset(val_entries, encoding, patch, resize)
    if len(train_set) == 0:
        raise TrainingError("the training split yields no samples")
    batch_size = config.batch_size or default_batch_size(manifest.patch_size)
    loader = BatchLoader(
        train_set,
        batch_size,
        shuffle=True,
        seed=config.seed,
        augment_ops=config.augment,
        workers=config.workers,
        sigma=config.blur_sigma,
        amount=config.sharpen_amount,
    )
    weights = _class_weights(config, train_set, model)
    adam = AdamState(lr=config.lr)
    plateau = PlateauPolicy.from_dict(config.plateau.to_dict())
    early = None
    if config.early_stop is not None:
        early = EarlyStopPolicy.from_dict(config.early_stop.to_dict())
    params = model.parameters()
    logger.info(
        "Training on %d samples (%d validation), batch %d, %d steps per epoch",
        len(train_set),
        len(val_set),
        batch_size,
        len(loader),
    )

    rows: List[Dict[str, Any]] = []
    best: Optional[Checkpoint] = None
    best_epoch, best_metric = -1, -np.inf
    steps = 0
    stopped_early = False
    for epoch in range(config.epochs):
        model.train()
        losses: List[float] = []
        counts = ConfusionCounts.zeros(encoding.num_classes)
        for step, (images, labels) in enumerate(loader.batches(epoch)):
            if images.shape[0] == 0:
                raise TrainingError("empty batch", epoch, step)
            with Tape() as tape:
                probs = model(Tensor(images))
                loss = compute_loss(config.loss, probs, labels, weights)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss {value}", epoch, step)
            model.zero_grad()
            tape.backward(loss)
            try:
                adam_step(adam, params)
            except NonFiniteGradientError as e:
                raise NonFiniteGradientError(e.parameter, epoch, step) from e
            counts = counts + confusion(
                labels_from_probs(probs.data), labels, encoding.num_classes
            )
            losses.append(value)
            steps += 1
            logger.debug("epoch %d step %d loss %.6f", epoch, step, value)
            if config.max_steps is not None and steps >= config.max_steps:
                break

        train_report = MetricReport.from_counts(counts, encoding.class_names)
        val_report = evaluate(model, val_set, batch_size, config.workers)
        val_dice = monitored_dice(val_report, encoding)
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "train_dice": monitored_dice(train_report, encoding),
            "val_dice": val_dice,
            "val_miou": val_report.miou,
            "lr": adam.lr,
        }
        rows.append(row)
        if config.log_path is not None:
            _append_log(config.log_path, row, first=epoch == 0)
        logger.info(
            "epoch %d: train_loss %.4f train_dice %.4f val_dice %.4f "
            "val_miou %.4f lr %.3g",
            epoch,
            row["train_loss"],
            row["train_dice"],
            val_dice,
            val_report.miou,
            adam.lr,
        )

        if val_dice > best_metric:
            best_epoch, best_metric = epoch, val_dice
            best = Checkpoint.capture(
                model,
                adam,
                epoch,
                rows,
                metadata={"encoding": encoding.value, "val_dice": val_dice},
            )
            if config.checkpoint_path is not None:
                save_checkpoint(config.checkpoint_path, best)

        adam.lr = plateau_update(plateau, val_dice, adam.lr)
        if early is not None and early_stop_check(early, val_dice, epoch):
            stopped_early = True
            break
        if config.max_steps is not None and steps >= config.max_steps:
            break

    history = pd.DataFrame(rows, columns=HISTORY_COLUMNS)
    return TrainingResult(
        history, best, best_epoch, float(best_metric), steps, stopped_early
    )
