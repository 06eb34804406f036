"""Unit tests for augmentations."""

import numpy as np
import pytest

from ocunet.augment import (
    AugmentationSpec,
    augment,
    gaussian_blur,
    gaussian_kernel,
    sample_spec,
    sharpen,
)
from ocunet.constants import AUGMENT_OPS
from ocunet.exceptions import ConfigError


class TestSpec:
    def test_ops_run_in_canonical_order(self):
        spec = AugmentationSpec(ops=("sharpen", "hflip"))
        assert spec.ops == ("hflip", "sharpen")

    @pytest.mark.parametrize(
        "kwargs", [{"ops": ("rotate",)}, {"sigma": 0.0}, {"amount": -1.0}]
    )
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            AugmentationSpec(**kwargs)

    def test_sampling_is_deterministic(self):
        a = sample_spec(AUGMENT_OPS, seed=3, epoch=2, index=5)
        b = sample_spec(AUGMENT_OPS, seed=3, epoch=2, index=5)
        assert a == b

    def test_sampling_varies_across_samples(self):
        drawn = {sample_spec(AUGMENT_OPS, 0, 0, i).ops for i in range(40)}
        assert len(drawn) > 4
        assert set().union(*drawn) == set(AUGMENT_OPS)


class TestGeometric:
    @pytest.mark.parametrize("op", ["hflip", "vflip"])
    def test_double_flip_is_identity(self, op, rng):
        image = rng.random((6, 5, 3))
        labels = rng.integers(0, 3, size=(6, 5))
        spec = AugmentationSpec(ops=(op,))
        once = augment(image, labels, spec)
        twice = augment(*once, spec)
        np.testing.assert_array_equal(twice[0], image)
        np.testing.assert_array_equal(twice[1], labels)

    def test_flip_keeps_alignment(self, rng):
        labels = rng.integers(0, 2, size=(4, 4))
        image = np.repeat(labels[..., None], 3, axis=-1).astype(np.float64)
        out_image, out_labels = augment(image, labels, AugmentationSpec(("hflip",)))
        np.testing.assert_array_equal(out_image[..., 0], out_labels)
        np.testing.assert_array_equal(out_labels, labels[:, ::-1])

    def test_photometric_ops_leave_labels(self, rng):
        labels = rng.integers(0, 3, size=(8, 8))
        spec = AugmentationSpec(("gaussian_blur", "sharpen"))
        _, out = augment(rng.random((8, 8, 3)), labels, spec)
        np.testing.assert_array_equal(out, labels)


class TestFilters:
    def test_kernel_is_normalized(self):
        kernel = gaussian_kernel(1.5)
        assert kernel.size == 2 * 5 + 1
        assert kernel.sum() == pytest.approx(1.0)

    def test_blur_of_impulse_is_kernel(self):
        sigma = 1.0
        kernel = gaussian_kernel(sigma)
        size = kernel.size
        image = np.zeros((size, size, 1))
        image[size // 2, size // 2] = 1.0
        blurred = gaussian_blur(image, sigma)[..., 0]
        np.testing.assert_allclose(blurred, np.outer(kernel, kernel), atol=1e-15)
        x = np.arange(size) - size // 2
        analytic = np.exp(-(x**2) / 2) / np.exp(-(x**2) / 2).sum()
        np.testing.assert_allclose(kernel, analytic)

    def test_blur_keeps_constant_image(self):
        image = np.full((7, 7, 3), 0.4)
        np.testing.assert_allclose(gaussian_blur(image), image)

    def test_sharpen_increases_edge_contrast(self):
        image = np.zeros((9, 9, 1))
        image[:, 5:] = 0.6
        out = sharpen(image, amount=1.0)
        assert out[4, 5, 0] > 0.6
        assert out.min() >= 0.0 and out.max() <= 1.0
