"""Unit tests for the network building blocks."""

import numpy as np
import pytest
from scipy.special import expit

from ocunet import ops
from ocunet.blocks import (
    ASPPModule,
    ConvBlock,
    ConvBnLReLU,
    CSAFModule,
    LayerSettings,
    ResidualBlock,
    ResidualSkipChain,
    SEBlock,
    apply_residual_blocks,
    aspp_forward,
    conv_bn_lrelu,
    csaf_forward,
    residual_block,
    residual_block_count,
    se_forward,
    se_hidden_width,
    spatial_kernel_size,
)
from ocunet.exceptions import CheckpointError, ConfigError, ShapeError
from ocunet.tensor import Precision, Tensor


def _zero_biases_and_betas(module):
    for name, p in module.named_parameters():
        if name.endswith("bias") or name.endswith("beta"):
            p.data[...] = 0.0


class TestLayerSettings:
    @pytest.mark.parametrize(
        "kwargs",
        [{"slope": 1.0}, {"bn_epsilon": 0.0}, {"bn_momentum": 1.0}, {"se_ratio": 0}],
    )
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            LayerSettings(**kwargs)


class TestConvBnLReLU:
    def test_zero_input_gives_zero_output(self):
        unit = ConvBnLReLU(3, 5)
        _zero_biases_and_betas(unit)
        out = unit(Tensor(np.zeros((2, 6, 6, 3))))
        np.testing.assert_array_equal(out.data, 0.0)

    @pytest.mark.parametrize("kernel", [(3, 3), (1, 1)])
    def test_keeps_spatial_size(self, kernel):
        out = ConvBnLReLU(2, 4, kernel)(Tensor(np.ones((1, 7, 5, 2))))
        assert out.shape == (1, 7, 5, 4)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError, match="input channels"):
            ConvBnLReLU(3, 4)(Tensor(np.ones((1, 4, 4, 2))))

    def test_applies_conv_then_bn_then_activation(self, double, rng):
        settings = LayerSettings(slope=0.2)
        unit = ConvBnLReLU(2, 3, settings=settings, rng=rng)
        x = Tensor(rng.normal(size=(2, 4, 4, 2)))
        expected = ops.leaky_relu(unit.bn(unit.conv(x)), 0.2).data
        np.testing.assert_allclose(unit(x).data, expected)
        np.testing.assert_allclose(conv_bn_lrelu(unit, x).data, expected)


class TestSEBlock:
    @pytest.mark.parametrize(
        "channels,ratio,hidden",
        [(32, None, 2), (8, None, 1), (3, None, 1), (64, 4, 16)],
    )
    def test_hidden_width(self, channels, ratio, hidden):
        assert se_hidden_width(channels, ratio) == hidden

    def test_zero_weights_halve_input(self, double, rng):
        block = SEBlock(4, rng=rng)
        block.w1.data[...] = 0.0
        block.w2.data[...] = 0.0
        x = Tensor(rng.normal(size=(2, 3, 3, 4)))
        np.testing.assert_allclose(se_forward(block, x).data, 0.5 * x.data)

    def test_matches_scalar_loops(self, double, rng):
        block = SEBlock(3, LayerSettings(se_ratio=1), rng=rng)
        x = rng.normal(size=(1, 4, 4, 3))
        out = block(Tensor(x)).data
        z = [x[0, :, :, c].mean() for c in range(3)]
        hidden = []
        for k in range(block.hidden):
            a = sum(z[c] * block.w1.data[c, k] for c in range(3))
            hidden.append(a if a >= 0 else 0.3 * a)
        for c in range(3):
            s = expit(sum(hidden[k] * block.w2.data[k, c] for k in range(block.hidden)))
            np.testing.assert_allclose(out[0, :, :, c], s * x[0, :, :, c], atol=1e-6)

    def test_shrinks_magnitudes(self, rng):
        x = Tensor(rng.normal(size=(2, 5, 5, 8)))
        out = SEBlock(8, rng=rng)(x)
        assert np.all(np.abs(out.data) <= np.abs(x.data))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            SEBlock(4)(Tensor(np.ones((1, 2, 2, 3))))


class TestCSAFModule:
    @pytest.mark.parametrize("size,kernel", [(64, 5), (128, 5), (256, 7)])
    def test_spatial_kernel_rule(self, size, kernel):
        assert spatial_kernel_size(size, size) == kernel
        assert CSAFModule(2, (size, size)).spatial_kernel == kernel

    def test_kernel_rule_uses_area(self):
        assert spatial_kernel_size(64, 512) == 7
        assert spatial_kernel_size(32, 512) == 5

    def test_preserves_shape_and_shrinks(self, rng):
        x = Tensor(rng.normal(size=(1, 64, 64, 8)))
        out = csaf_forward(CSAFModule(8, (64, 64), rng=rng), x)
        assert out.shape == x.shape
        assert np.all(np.abs(out.data) <= np.abs(x.data))

    def test_attention_map_is_single_channel(self, rng):
        module = CSAFModule(4, (8, 8), rng=rng)
        m = module.attention_map(Tensor(rng.normal(size=(2, 8, 8, 4)))).data
        assert m.shape == (2, 8, 8, 1)
        assert np.all((m > 0) & (m < 1))

    def test_blocks_are_chained(self, rng):
        module = CSAFModule(4, (8, 8), rng=rng)
        units = (module.block1, module.block2, module.block3)
        assert [u.conv.kernel_size for u in units] == [(3, 3), (3, 3), (1, 1)]
        assert all(u.in_channels == u.filters == 4 for u in units)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            CSAFModule(4, (8, 8))(Tensor(np.ones((1, 8, 8, 2))))


class TestResidual:
    def test_zero_input_gives_zero_output(self):
        block = ResidualBlock(8)
        _zero_biases_and_betas(block)
        out = residual_block(block, Tensor(np.zeros((1, 16, 16, 8))))
        assert out.shape == (1, 16, 16, 8)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_sums_branches(self, double, rng):
        block = ResidualBlock(2, rng=rng)
        x = Tensor(rng.normal(size=(2, 4, 4, 2)))
        expected = block.branch3x3(x).data + block.branch1x1(x).data
        np.testing.assert_allclose(block(x).data, expected)

    @pytest.mark.parametrize("level,count", [(1, 4), (2, 3), (3, 2), (4, 1)])
    def test_block_count_per_level(self, level, count, rng):
        assert residual_block_count(level) == count
        chain = ResidualSkipChain(3, level, rng=rng)
        x = Tensor(rng.normal(size=(1, 4, 4, 3)))
        out = apply_residual_blocks(chain, x)
        assert out.shape == x.shape
        assert chain.blocks_applied == count
        assert chain.se_applied == 1

    @pytest.mark.parametrize("level", [0, 5])
    def test_level_out_of_range(self, level):
        with pytest.raises(ConfigError):
            residual_block_count(level)


class TestASPP:
    def test_keeps_spatial_size(self, rng):
        module = ASPPModule(8, 6, (1, 6, 12, 18), rng=rng)
        out = aspp_forward(module, Tensor(rng.normal(size=(1, 32, 32, 8))))
        assert out.shape == (1, 32, 32, 6)
        assert len(module.branch_outputs(Tensor(np.ones((1, 32, 32, 8))))) == 6

    def test_reduces_to_identity_branch(self, double, rng):
        settings = LayerSettings(bn_epsilon=1e-12)
        module = ASPPModule(3, 3, (1, 2), settings, rng).eval()
        for unit in module.atrous + [module.pooling]:
            unit.conv.kernel.data[...] = 0.0
        module.pointwise.conv.kernel.data[...] = np.eye(3)[None, None]
        module.fuse.conv.kernel.data[...] = 0.0
        module.fuse.conv.kernel.data[0, 0, :3, :] = np.eye(3)
        x = Tensor(rng.uniform(0.1, 1.0, size=(1, 6, 6, 3)))
        np.testing.assert_allclose(module(x).data, x.data, rtol=1e-9)

    def test_rejects_bad_rates(self):
        with pytest.raises(ConfigError):
            ASPPModule(2, 2, (1, 0))


class TestModuleState:
    def test_parameter_names_are_unique_and_ordered(self):
        block = ConvBlock(2, 3)
        names = [name for name, _ in block.named_parameters()]
        assert names == [
            "first.conv.kernel",
            "first.conv.bias",
            "first.bn.gamma",
            "first.bn.beta",
            "second.conv.kernel",
            "second.conv.bias",
            "second.bn.gamma",
            "second.bn.beta",
        ]

    def test_state_round_trip(self, rng):
        a, b = ConvBlock(2, 3, rng=rng), ConvBlock(2, 3, rng=rng)
        b.load_state_arrays(a.state_arrays())
        for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_state_shape_mismatch(self):
        state = ConvBlock(2, 3).state_arrays()
        with pytest.raises(CheckpointError):
            ConvBlock(2, 4).load_state_arrays(state)

    def test_train_eval_propagates(self):
        block = ConvBlock(2, 3).eval()
        assert not any(m.training for m in block.modules())
        block.train()
        assert all(m.training for m in block.modules())

    def test_astype(self):
        block = ConvBlock(2, 3).astype(Precision.DOUBLE)
        assert all(p.dtype == np.float64 for _, p in block.named_parameters())
        assert block.first.bn.stats.mean.dtype == np.float64
