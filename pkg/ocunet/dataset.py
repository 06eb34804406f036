"""
Datasets, class statistics and the batch loader used for training and evaluation
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .augment import augment, sample_spec
from .constants import BATCH_SIZE_RULE, BLUR_SIGMA, SHARPEN_AMOUNT, VAL_FRACTION
from .exceptions import ConfigError, DataError
from .losses import ClassWeights
from .manifest import ManifestEntry, SampleManifest, load_sample
from .masks import MaskEncoding
from .patches import grid_shape

logger = logging.getLogger(__name__)

Batch = Tuple[np.ndarray, np.ndarray]


def default_batch_size(patch_size: Tuple[int, int]) -> int:
    """8 for patches up to 512x512 pixels, 4 above."""
    area = patch_size[0] * patch_size[1]
    for bound, size in BATCH_SIZE_RULE:
        if area <= bound:
            return size
    return BATCH_SIZE_RULE[-1][1]


@dataclass(frozen=True)
class _Item:
    entry: ManifestEntry
    origin: Tuple[int, int]


class SegmentationDataset:
    """
    Patches (or resized whole images) of a list of manifest entries.

    Items enumerate entries in order and, within an entry, grid tiles in
    row-major order. Decoded samples are cached per entry.
    """

    def __init__(
        self,
        entries: Sequence[ManifestEntry],
        encoding: MaskEncoding,
        patch_size: Tuple[int, int],
        resize: bool = False,
        cache_size: int = 8,
    ):
        self.entries = list(entries)
        self.encoding = encoding
        self.patch_size = patch_size
        self.resize = resize
        self._load = lru_cache(maxsize=cache_size)(self._load_entry)
        self.items: List[_Item] = []
        for entry in self.entries:
            if resize:
                self.items.append(_Item(entry, (0, 0)))
                continue
            width, height = _image_size(entry)
            rows, cols = grid_shape(height, width, patch_size, patch_size)
            for r in range(rows):
                for c in range(cols):
                    origin = (r * patch_size[0], c * patch_size[1])
                    self.items.append(_Item(entry, origin))

    @classmethod
    def from_manifest(
        cls, manifest: SampleManifest, split: str, resize: bool = False
    ) -> "SegmentationDataset":
        return cls(
            manifest.split(split), manifest.encoding, manifest.patch_size, resize
        )

    def __len__(self) -> int:
        return len(self.items)

    def _load_entry(self, entry: ManifestEntry) -> Tuple[np.ndarray, np.ndarray]:
        return load_sample(
            entry, self.encoding, resize_to=self.patch_size if self.resize else None
        )

    def __getitem__(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        item = self.items[index]
        image, labels = self._load(item.entry)
        y, x = item.origin
        ph, pw = self.patch_size
        return image[y : y + ph, x : x + pw], labels[y : y + ph, x : x + pw]


def _image_size(entry: ManifestEntry) -> Tuple[int, int]:
    try:
        with Image.open(entry.image_path) as image:
            return image.size
    except OSError as e:
        raise DataError(f"cannot read image {entry.image_path}: {e}")


def class_frequencies(
    manifest: SampleManifest,
    encoding: Optional[MaskEncoding] = None,
    split: str = "train",
    resize: bool = False,
) -> np.ndarray:
    """
    Fraction of pixels per label class over one split.

    Raises:
        DataError: If the split is empty
    """
    encoding = encoding or manifest.encoding
    entries = manifest.split(split)
    if not entries:
        raise DataError(f"the '{split}' split is empty")
    dataset = SegmentationDataset(entries, encoding, manifest.patch_size, resize)
    return dataset_class_frequencies(dataset)


def dataset_class_frequencies(dataset: SegmentationDataset) -> np.ndarray:
    num_classes = dataset.encoding.num_classes
    counts = np.zeros(num_classes, dtype=np.int64)
    for i in range(len(dataset)):
        _, labels = dataset[i]
        counts += np.bincount(labels.ravel(), minlength=num_classes)
    if counts.sum() == 0:
        raise DataError("cannot count class frequencies over an empty dataset")
    return counts / counts.sum()


def derive_class_weights(frequencies: Sequence[float]) -> ClassWeights:
    """
    Inverse class frequency normalized to mean 1.

    A class with no pixels gets the largest inverse frequency among the
    classes that do occur.
    """
    freq = np.asarray(frequencies, dtype=np.float64)
    present = freq > 0
    if not present.any():
        raise DataError("cannot derive class weights: every class frequency is zero")
    inverse = np.zeros_like(freq)
    inverse[present] = 1.0 / freq[present]
    inverse[~present] = inverse[present].max()
    return ClassWeights(inverse / inverse.mean())


def split_train_val(
    manifest: SampleManifest, seed: int = 0, fraction: float = VAL_FRACTION
) -> Tuple[List[ManifestEntry], List[ManifestEntry]]:
    """
    Training and validation entries.

    A manifest without a ``val`` split donates floor(fraction * n) training
    entries, chosen by ``seed``. When that is zero the training entries
    double as validation data.
    """
    train = manifest.split("train")
    if not train:
        raise DataError("the 'train' split is empty")
    val = manifest.split("val")
    if val:
        return train, val
    n_val = int(math.floor(fraction * len(train)))
    if n_val == 0:
        logger.warning(
            "No validation split and %d training samples; validating on train",
            len(train),
        )
        return train, list(train)
    order = np.random.default_rng(seed).permutation(len(train))
    held = set(order[:n_val].tolist())
    return (
        [e for i, e in enumerate(train) if i not in held],
        [e for i, e in enumerate(train) if i in held],
    )


class BatchLoader:
    """
    Deterministic batches of (images B x H x W x 3, labels B x H x W).

    Shuffling is seeded by (seed, epoch) and each sample's augmentation by
    (seed, epoch, index); samples load on a thread pool and keep their order.
    """

    def __init__(
        self,
        dataset: SegmentationDataset,
        batch_size: int,
        shuffle: bool = True,
        seed: int = 0,
        augment_ops: Sequence[str] = (),
        workers: int = 1,
        sigma: float = BLUR_SIGMA,
        amount: float = SHARPEN_AMOUNT,
    ):
        if batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {batch_size}")
        if workers < 1:
            raise ConfigError(f"workers must be >= 1, got {workers}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.shuffle = shuffle
        self.seed = seed
        self.augment_ops = tuple(augment_ops)
        self.workers = workers
        self.sigma = sigma
        self.amount = amount

    def __len__(self) -> int:
        return math.ceil(len(self.dataset) / self.batch_size)

    def order(self, epoch: int) -> np.ndarray:
        if not self.shuffle:
            return np.arange(len(self.dataset))
        return np.random.default_rng([self.seed, epoch]).permutation(len(self.dataset))

    def _prepare(self, index: int, epoch: int) -> Tuple[np.ndarray, np.ndarray]:
        image, labels = self.dataset[index]
        if self.augment_ops:
            spec = sample_spec(
                self.augment_ops, self.seed, epoch, index, self.sigma, self.amount
            )
            image, labels = augment(image, labels, spec)
        return image, labels

    def batches(self, epoch: int = 0) -> Iterator[Batch]:
        order = self.order(epoch).tolist()
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            for start in range(0, len(order), self.batch_size):
                chunk = order[start : start + self.batch_size]
                samples = list(executor.map(lambda i: self._prepare(i, epoch), chunk))
                images = np.stack([s[0] for s in samples])
                labels = np.stack([s[1] for s in samples])
                yield images, labels

    def __iter__(self) -> Iterator[Batch]:
        return self.batches(0)
