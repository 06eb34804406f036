"""Unit tests for mask intensity encodings."""

import numpy as np
import pytest

from ocunet.exceptions import MaskDecodingError
from ocunet.masks import MaskEncoding


class TestMaskEncoding:
    @pytest.mark.parametrize(
        "encoding,classes,head",
        [(MaskEncoding.ORCA3, 3, 3), (MaskEncoding.BINARY, 2, 1)],
    )
    def test_class_and_head_counts(self, encoding, classes, head):
        assert encoding.num_classes == classes
        assert encoding.head_channels == head
        assert len(encoding.class_names) == classes

    @pytest.mark.parametrize("channels,expected", [(1, "binary"), (3, "orca3")])
    def test_for_head(self, channels, expected):
        assert MaskEncoding.for_head(channels).value == expected

    def test_three_class_round_trip(self, rng):
        labels = rng.integers(0, 3, size=(16, 16))
        mask = MaskEncoding.ORCA3.encode(labels)
        assert mask.dtype == np.uint8
        assert set(np.unique(mask)) <= {0, 128, 255}
        np.testing.assert_array_equal(MaskEncoding.ORCA3.decode(mask), labels)

    def test_decode_tolerates_compression_noise(self):
        mask = np.array([[3, 120, 250], [0, 140, 255]], dtype=np.uint8)
        np.testing.assert_array_equal(
            MaskEncoding.ORCA3.decode(mask), [[0, 1, 2], [0, 1, 2]]
        )

    def test_decode_rgb_mask(self):
        mask = np.zeros((2, 2, 3), dtype=np.uint8)
        mask[0, 0] = 255
        labels = MaskEncoding.BINARY.decode(mask)
        np.testing.assert_array_equal(labels, [[1, 0], [0, 0]])

    def test_out_of_band_value_names_source(self):
        mask = np.array([[0, 128]], dtype=np.uint8)
        with pytest.raises(MaskDecodingError, match="mask_7.png"):
            MaskEncoding.BINARY.decode(mask, source="mask_7.png")

    def test_encode_rejects_unknown_label(self):
        with pytest.raises(MaskDecodingError):
            MaskEncoding.BINARY.encode(np.array([0, 2]))
