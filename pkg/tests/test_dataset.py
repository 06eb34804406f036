"""Unit tests for datasets, class statistics and batching."""

import numpy as np
import pytest

from ocunet.dataset import (
    BatchLoader,
    SegmentationDataset,
    class_frequencies,
    default_batch_size,
    derive_class_weights,
    split_train_val,
)
from ocunet.exceptions import ConfigError, DataError
from ocunet.manifest import load_sample


@pytest.fixture
def tiles(binary_data):
    """Three 16x16 training images cut into four 8x8 tiles each."""
    return SegmentationDataset(
        binary_data.split("train"), binary_data.encoding, (8, 8)
    )


class TestBatchSize:
    @pytest.mark.parametrize(
        "patch,size", [((256, 256), 8), ((512, 512), 8), ((640, 640), 4)]
    )
    def test_rule(self, patch, size):
        assert default_batch_size(patch) == size


class TestSegmentationDataset:
    def test_tiles_row_major(self, binary_data, tiles):
        assert len(tiles) == 12
        image, labels = load_sample(binary_data.entries[0], binary_data.encoding)
        tile_image, tile_labels = tiles[1]
        np.testing.assert_array_equal(tile_image, image[0:8, 8:16])
        np.testing.assert_array_equal(tile_labels, labels[0:8, 8:16])

    def test_resize_gives_one_item_per_entry(self, binary_data):
        binary_data.patch_size = (8, 8)
        dataset = SegmentationDataset.from_manifest(binary_data, "train", resize=True)
        assert len(dataset) == 3
        image, labels = dataset[0]
        assert image.shape == (8, 8, 3) and labels.shape == (8, 8)


class TestClassStatistics:
    def test_frequencies_match_pixel_counts(self, binary_data):
        counts = np.zeros(2)
        for entry in binary_data.split("train"):
            _, labels = load_sample(entry, binary_data.encoding)
            counts += [np.sum(labels == 0), np.sum(labels == 1)]
        expected = counts / counts.sum()
        np.testing.assert_allclose(class_frequencies(binary_data), expected)

    def test_empty_split(self, binary_data):
        with pytest.raises(DataError, match="'val'"):
            class_frequencies(binary_data, split="val")

    def test_ninety_ten_split(self):
        weights = derive_class_weights([0.9, 0.1])
        np.testing.assert_allclose(weights.values, [0.2, 1.8])

    def test_absent_class_gets_largest_weight(self):
        weights = derive_class_weights([0.75, 0.25, 0.0])
        assert weights.values[2] == weights.values[1]
        assert weights.values.mean() == pytest.approx(1.0)

    def test_all_zero(self):
        with pytest.raises(DataError):
            derive_class_weights([0.0, 0.0])


class TestSplitTrainVal:
    def test_small_set_validates_on_train(self, binary_data):
        train, val = split_train_val(binary_data)
        assert train == val == binary_data.split("train")

    def test_holds_out_a_fraction(self, binary_data):
        train, val = split_train_val(binary_data, seed=4, fraction=0.4)
        assert len(train) == 2 and len(val) == 1
        assert not set(train) & set(val)
        assert split_train_val(binary_data, seed=4, fraction=0.4) == (train, val)

    def test_explicit_val_split_wins(self, binary_data):
        first = binary_data.entries[0]
        binary_data.entries[0] = type(first)(first.image_path, first.mask_path, "val")
        train, val = split_train_val(binary_data)
        assert val == [binary_data.entries[0]]
        assert len(train) == 2


class TestBatchLoader:
    def test_batch_shapes(self, tiles):
        shapes = [(x.shape, y.shape) for x, y in BatchLoader(tiles, 5)]
        assert shapes == [
            ((5, 8, 8, 3), (5, 8, 8)),
            ((5, 8, 8, 3), (5, 8, 8)),
            ((2, 8, 8, 3), (2, 8, 8)),
        ]
        assert len(BatchLoader(tiles, 5)) == 3

    def test_order_is_seeded_per_epoch(self, tiles):
        loader = BatchLoader(tiles, 4, seed=1)
        again = BatchLoader(tiles, 4, seed=1)
        np.testing.assert_array_equal(loader.order(2), again.order(2))
        assert sorted(loader.order(0).tolist()) == list(range(12))
        assert loader.order(0).tolist() != loader.order(1).tolist()

    def test_unshuffled_order(self, tiles):
        assert BatchLoader(tiles, 4, shuffle=False).order(3).tolist() == list(range(12))

    def test_workers_do_not_change_batches(self, tiles):
        ops = ("hflip", "vflip", "gaussian_blur")
        serial = list(BatchLoader(tiles, 4, seed=2, augment_ops=ops).batches(1))
        pooled = list(
            BatchLoader(tiles, 4, seed=2, augment_ops=ops, workers=3).batches(1)
        )
        for (xa, ya), (xb, yb) in zip(serial, pooled):
            np.testing.assert_array_equal(xa, xb)
            np.testing.assert_array_equal(ya, yb)

    @pytest.mark.parametrize(
        "kwargs", [{"batch_size": 0}, {"batch_size": 2, "workers": 0}]
    )
    def test_rejects_invalid(self, tiles, kwargs):
        with pytest.raises(ConfigError):
            BatchLoader(tiles, **kwargs)
