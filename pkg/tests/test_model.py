"""Unit tests for the assembled network."""

import numpy as np
import pytest

from ocunet.blocks import Conv2D
from ocunet.exceptions import ConfigError, ShapeError
from ocunet.losses import LossConfig, compute_loss
from ocunet.model import PRESETS, ModelConfig, build_ocunet, forward, param_count
from ocunet.optim import AdamState, adam_step
from ocunet.tensor import Precision, Tape, Tensor, precision


def _conv(cin, cout, k):
    return k * k * cin * cout + cout


def _unit(cin, cout, k=3):
    return _conv(cin, cout, k) + 2 * cout


def _conv_block(cin, cout):
    return _unit(cin, cout) + _unit(cout, cout)


def _se(c):
    return 2 * c * max(1, c // min(16, c))


def _csaf(c, spatial_kernel=5):
    return 2 * _unit(c, c) + _unit(c, c, 1) + _se(c) + _conv(1, 1, spatial_kernel)


def _residual(c):
    return _unit(c, c) + _unit(c, c, 1)


def _hand_tally(base, classes, rates=4):
    """Per-layer parameter count of the full network on a 16x16 input."""
    w = [base, 2 * base, 4 * base, 8 * base]
    encoder = (
        _conv_block(3, w[0])
        + _conv_block(w[0], w[1])
        + _conv_block(w[1] + w[0], w[2])
        + _conv_block(w[2] + w[1], w[3])
        + sum(_se(c) for c in w)
        + _residual(w[1])
        + _residual(w[0])
        + _residual(w[2])
        + _residual(w[1])
        + _csaf(w[2])
        + _csaf(w[3])
    )
    f = 2 * w[3]
    aspp = (
        2 * _unit(w[3], f, 1)
        + rates * _unit(w[3], f)
        + _unit((2 + rates) * f, f, 1)
    )
    skips = sum((4 - i) * _residual(w[i]) + _se(w[i]) for i in range(4))
    decoder = (
        _conv_block(w[1] + w[0] + w[2], w[0])
        + _conv_block(w[2] + w[1] + w[3], w[1])
        + _conv_block(w[3] + w[2], w[2])
        + _conv_block(f + w[3], w[3])
        + sum(_csaf(c) for c in w)
    )
    return encoder + aspp + skips + decoder + _conv(w[0], classes, 1)


class TestModelConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"input_size": (24, 32)},
            {"input_size": (0, 16)},
            {"num_classes": 0},
            {"base_channels": 0},
            {"channel_schedule": (4, 8, 16)},
            {"leaky_slope": -0.1},
        ],
    )
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            ModelConfig(**kwargs)

    def test_widths_double(self):
        assert ModelConfig(base_channels=4).widths == (4, 8, 16, 32)
        assert ModelConfig(channel_schedule=(3, 5, 7, 9)).bottleneck_width == 18

    def test_dict_round_trip(self):
        config = ModelConfig(base_channels=4, num_classes=1, input_size=(32, 64))
        assert ModelConfig.from_dict(config.to_dict()) == config

    def test_from_dict_rejects_unknown(self):
        with pytest.raises(ConfigError, match="unknown"):
            ModelConfig.from_dict({"depth": 5})

    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_preset_name(self, name):
        assert ModelConfig.preset(name).preset_name == name

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            ModelConfig.preset("resnet")


class TestStructure:
    def test_full_network_counts(self, tiny_model):
        assert tiny_model.structure_counts() == {
            "csaf": 6,
            "aspp": 1,
            "skip_residual_blocks": 10,
        }

    def test_skip_chain_lengths(self, tiny_model):
        assert [len(chain.blocks) for chain in tiny_model.skips] == [4, 3, 2, 1]

    def test_plain_unet_has_no_extras(self):
        config = ModelConfig.preset("unet", base_channels=2, input_size=(16, 16))
        model = build_ocunet(config)
        assert model.structure_counts() == {
            "csaf": 0,
            "aspp": 0,
            "skip_residual_blocks": 0,
        }

    def test_csaf_kernel_follows_level_size(self):
        model = build_ocunet(ModelConfig(base_channels=2, input_size=(256, 256)))
        assert [m.spatial_kernel for m in model.decoder_csaf] == [7, 5, 5, 5]
        assert [m.spatial_kernel for m in model.encoder_csaf] == [5, 5]


class TestForward:
    def test_multiclass_probabilities(self, tiny_model, rng):
        probs = forward(tiny_model, Tensor(rng.random((2, 16, 16, 3))))
        assert probs.shape == (2, 16, 16, 3)
        np.testing.assert_allclose(probs.data.sum(axis=-1), 1.0, atol=1e-5)

    def test_binary_head_is_sigmoid(self, rng):
        config = ModelConfig(base_channels=2, num_classes=1, input_size=(16, 16))
        model = build_ocunet(config)
        probs = model(Tensor(rng.random((1, 16, 16, 3)))).data
        assert probs.shape == (1, 16, 16, 1)
        assert np.all((probs > 0) & (probs < 1))

    def test_small_default_style_config(self, rng):
        model = build_ocunet(ModelConfig(base_channels=4, input_size=(64, 64)))
        assert model(Tensor(rng.random((1, 64, 64, 3)))).shape == (1, 64, 64, 3)

    @pytest.mark.parametrize("preset", sorted(PRESETS))
    def test_every_preset_runs(self, preset, rng):
        config = ModelConfig.preset(preset, base_channels=2, input_size=(16, 16))
        model = build_ocunet(config)
        assert model(Tensor(rng.random((1, 16, 16, 3)))).shape == (1, 16, 16, 3)

    def test_spatial_mismatch(self, tiny_model):
        with pytest.raises(ShapeError, match="expects input"):
            tiny_model(Tensor(np.zeros((1, 32, 32, 3))))

    def test_same_seed_same_weights(self, tiny_config):
        a, b = build_ocunet(tiny_config), build_ocunet(tiny_config)
        for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            np.testing.assert_array_equal(pa.data, pb.data)


class TestParamCount:
    def test_single_pointwise_conv(self):
        assert Conv2D(2, 3, (1, 1)).param_count() == 9

    @pytest.mark.parametrize("base,classes", [(2, 3), (4, 1)])
    def test_matches_hand_tally(self, base, classes):
        model = build_ocunet(
            ModelConfig(base_channels=base, num_classes=classes, input_size=(16, 16))
        )
        assert param_count(model) == _hand_tally(base, classes)

    def test_doubling_widths_roughly_quadruples(self):
        small, large = (
            param_count(build_ocunet(ModelConfig(base_channels=b, input_size=(16, 16))))
            for b in (8, 16)
        )
        assert 3.5 < large / small <= 4.0

    def test_each_parameter_registered_once(self, tiny_model):
        ids = [id(p) for _, p in tiny_model.named_parameters()]
        assert len(ids) == len(set(ids))


@pytest.fixture(scope="module")
def constant_probs():
    """Probabilities of a 128x128 network for a uniform grey image."""
    config = ModelConfig(base_channels=2, num_classes=3, input_size=(128, 128), seed=7)
    with precision(Precision.DOUBLE):
        model = build_ocunet(config)
        return forward(model, Tensor(np.full((1, 128, 128, 3), 0.5))).data


class TestConstantInput:
    def test_shape_at_128(self, constant_probs):
        assert constant_probs.shape == (1, 128, 128, 3)
        np.testing.assert_allclose(constant_probs.sum(axis=-1), 1.0, atol=1e-9)

    def test_interior_is_constant(self, constant_probs):
        interior = constant_probs[0, 48:80, 48:80]
        spread = interior.max(axis=(0, 1)) - interior.min(axis=(0, 1))
        assert np.all(spread <= 1e-4), spread


def _batch_loss(model, images, labels):
    with Tape() as tape:
        loss = compute_loss(LossConfig(), model(Tensor(images)), labels)
    return tape, loss


def test_single_adam_step_lowers_loss(double):
    failures = 0
    for seed in range(20):
        config = ModelConfig(
            base_channels=2, num_classes=3, input_size=(16, 16), seed=seed
        )
        model = build_ocunet(config)
        rng = np.random.default_rng(seed)
        images = rng.random((2, 16, 16, 3))
        labels = rng.integers(0, 3, size=(2, 16, 16))
        tape, before = _batch_loss(model, images, labels)
        tape.backward(before)
        adam_step(AdamState(lr=3e-4), model.parameters())
        _, after = _batch_loss(model, images, labels)
        failures += after.item() >= before.item()
    assert failures <= 2
