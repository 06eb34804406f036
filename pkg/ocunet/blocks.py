"""
Reusable network blocks: ConvBnLReLU, SE, CSAF, residual skip chains, ASPP
"""

import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import ops
from .constants import (
    ASPP_RATES,
    BN_EPSILON,
    BN_MOMENTUM,
    LEAKY_SLOPE,
    SE_MAX_RATIO,
    SPATIAL_ATTENTION_THRESHOLD,
    SPATIAL_KERNEL_LARGE,
    SPATIAL_KERNEL_SMALL,
)
from .exceptions import CheckpointError, ConfigError, ShapeError
from .ops import RunningStats
from .tensor import Precision, Tensor, get_precision


@dataclass(frozen=True)
class LayerSettings:
    """Hyperparameters shared by every block of one network."""

    slope: float = LEAKY_SLOPE
    bn_epsilon: float = BN_EPSILON
    bn_momentum: float = BN_MOMENTUM
    se_ratio: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.slope < 1.0:
            raise ConfigError(f"leaky ReLU slope must lie in [0, 1), got {self.slope}")
        if self.bn_epsilon <= 0:
            raise ConfigError(f"batch norm epsilon must be > 0, got {self.bn_epsilon}")
        if not 0.0 <= self.bn_momentum < 1.0:
            raise ConfigError(
                f"batch norm momentum must lie in [0, 1), got {self.bn_momentum}"
            )
        if self.se_ratio is not None and self.se_ratio < 1:
            raise ConfigError(f"SE ratio must be >= 1, got {self.se_ratio}")


DEFAULT_SETTINGS = LayerSettings()


def _he_uniform(
    rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int
) -> Tensor:
    limit = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def _zeros(size: int) -> Tensor:
    return Tensor(np.zeros(size), requires_grad=True)


def _ones(size: int) -> Tensor:
    return Tensor(np.ones(size), requires_grad=True)


class Module:
    """
    Base class for parameterized units.

    Parameters are the attributes holding tensors with ``requires_grad``;
    child modules are attributes holding a Module or a list of Modules.
    Attribute insertion order fixes the parameter naming order.
    """

    def __init__(self) -> None:
        self.training = True

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def named_children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self.named_children():
            yield from child.modules()

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield f"{prefix}{name}", value
        for name, child in self.named_children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, value in vars(self).items():
            if isinstance(value, RunningStats):
                yield f"{prefix}{name}.mean", value.mean
                yield f"{prefix}{name}.var", value.var
        for name, child in self.named_children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self.named_parameters())

    def param_count(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def train(self, mode: bool = True) -> "Module":
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.zero_grad()

    def astype(self, mode: Union[Precision, str]) -> "Module":
        """Cast parameters and running statistics to the given precision."""
        dtype = Precision(mode).dtype
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for module in self.modules():
            for value in vars(module).values():
                if isinstance(value, RunningStats):
                    value.mean = value.mean.astype(dtype)
                    value.var = value.var.astype(dtype)
        return self

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Parameters under ``param/<name>`` and buffers under ``buffer/<name>``."""
        state = {f"param/{name}": p.data for name, p in self.named_parameters()}
        state.update({f"buffer/{name}": arr for name, arr in self.named_buffers()})
        return state

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        """
        Copy arrays into parameters and buffers in place.

        Raises:
            CheckpointError: If names or shapes differ from this module's state
        """
        state = self.state_arrays()
        missing = sorted(set(state) - set(arrays))
        unexpected = sorted(set(arrays) - set(state))
        if missing or unexpected:
            raise CheckpointError(
                f"state does not fit this architecture: missing {missing[:3]}"
                f"{'...' if len(missing) > 3 else ''}, "
                f"unexpected {unexpected[:3]}{'...' if len(unexpected) > 3 else ''}"
            )
        for name, target in state.items():
            source = np.asarray(arrays[name])
            if source.shape != target.shape:
                raise CheckpointError(
                    f"'{name}' has shape {source.shape}, "
                    f"architecture expects {target.shape}"
                )
            target[...] = source


class Conv2D(Module):
    """Convolution layer with He-uniform kernel and zero bias."""

    def __init__(
        self,
        in_channels: int,
        filters: int,
        kernel: Tuple[int, int] = (3, 3),
        dilation: int = 1,
        use_bias: bool = True,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        kh, kw = kernel
        self.in_channels = in_channels
        self.filters = filters
        self.dilation = dilation
        fan_in = kh * kw * in_channels
        self.kernel = _he_uniform(rng, (kh, kw, in_channels, filters), fan_in)
        self.bias = _zeros(filters) if use_bias else None

    @property
    def kernel_size(self) -> Tuple[int, int]:
        return self.kernel.shape[0], self.kernel.shape[1]

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.kernel, self.bias, dilation=self.dilation)


class BatchNorm(Module):
    def __init__(
        self, channels: int, epsilon: float = BN_EPSILON, momentum: float = BN_MOMENTUM
    ):
        super().__init__()
        self.gamma = _ones(channels)
        self.beta = _zeros(channels)
        self.stats = RunningStats.fresh(channels, get_precision().dtype)
        self.epsilon = epsilon
        self.momentum = momentum

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(
            x,
            self.gamma,
            self.beta,
            self.stats,
            self.training,
            self.epsilon,
            self.momentum,
        )


class ConvBnLReLU(Module):
    """Convolution, then batch norm, then leaky ReLU; stride 1, same padding."""

    def __init__(
        self,
        in_channels: int,
        filters: int,
        kernel: Tuple[int, int] = (3, 3),
        dilation: int = 1,
        settings: LayerSettings = DEFAULT_SETTINGS,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        self.conv = Conv2D(in_channels, filters, kernel, dilation=dilation, rng=rng)
        self.bn = BatchNorm(filters, settings.bn_epsilon, settings.bn_momentum)
        self.slope = settings.slope

    @property
    def in_channels(self) -> int:
        return self.conv.in_channels

    @property
    def filters(self) -> int:
        return self.conv.filters

    def forward(self, x: Tensor) -> Tensor:
        return conv_bn_lrelu(self, x)


def conv_bn_lrelu(block: ConvBnLReLU, x: Tensor) -> Tensor:
    """delta(B(C(x))) in exactly that order."""
    if x.shape[-1] != block.in_channels:
        raise ShapeError(
            f"ConvBnLReLU expects {block.in_channels} input channels, "
            f"got input {x.shape}"
        )
    return ops.leaky_relu(block.bn(block.conv(x)), block.slope)


class ConvBlock(Module):
    """Two chained 3x3 ConvBnLReLU units."""

    def __init__(
        self,
        in_channels: int,
        filters: int,
        settings: LayerSettings = DEFAULT_SETTINGS,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        self.first = ConvBnLReLU(in_channels, filters, settings=settings, rng=rng)
        self.second = ConvBnLReLU(filters, filters, settings=settings, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.second(self.first(x))


def se_hidden_width(channels: int, ratio: Optional[int] = None) -> int:
    ratio = ratio if ratio is not None else min(SE_MAX_RATIO, channels)
    return max(1, channels // ratio)


class SEBlock(Module):
    """
    Squeeze-and-excitation channel attention.

    ``w1`` is stored as [C, C/r] and ``w2`` as [C/r, C] so both apply with
    ``dense``; they are the transposes of the excitation matrices.
    """

    def __init__(
        self,
        channels: int,
        settings: LayerSettings = DEFAULT_SETTINGS,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.hidden = se_hidden_width(channels, settings.se_ratio)
        self.w1 = _he_uniform(rng, (channels, self.hidden), channels)
        self.w2 = _he_uniform(rng, (self.hidden, channels), self.hidden)
        self.slope = settings.slope

    def forward(self, x: Tensor) -> Tensor:
        return se_forward(self, x)

    def channel_weights(self, x: Tensor) -> Tensor:
        """Per-sample channel scales s in (0, 1), shape [B, C]."""
        if x.ndim != 4 or x.shape[-1] != self.channels:
            raise ShapeError(
                f"SE block expects {self.channels} channels, got input {x.shape}"
            )
        z = ops.global_avg_pool(x)
        hidden = ops.leaky_relu(ops.dense(z, self.w1), self.slope)
        return ops.sigmoid(ops.dense(hidden, self.w2))


def se_forward(block: SEBlock, x: Tensor) -> Tensor:
    s = block.channel_weights(x)
    return ops.mul(x, ops.reshape(s, (x.shape[0], 1, 1, x.shape[-1])))


def spatial_kernel_size(height: int, width: int) -> int:
    """7 for feature maps larger than 128x128 in area, 5 otherwise."""
    if height * width > SPATIAL_ATTENTION_THRESHOLD:
        return SPATIAL_KERNEL_LARGE
    return SPATIAL_KERNEL_SMALL


class CSAFModule(Module):
    """
    Channel and spatial attention fusion.

    Three chained ConvBnLReLU units (3x3, 3x3, 1x1) keep the channel count;
    their outputs and the SE-recalibrated third output are summed, reduced
    by a channel max, turned into a sigmoid spatial map, and the map scales
    the module input.
    """

    def __init__(
        self,
        channels: int,
        spatial_size: Tuple[int, int],
        settings: LayerSettings = DEFAULT_SETTINGS,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        self.channels = channels
        self.block1 = ConvBnLReLU(channels, channels, (3, 3), 1, settings, rng)
        self.block2 = ConvBnLReLU(channels, channels, (3, 3), 1, settings, rng)
        self.block3 = ConvBnLReLU(channels, channels, (1, 1), 1, settings, rng)
        self.se = SEBlock(channels, settings=settings, rng=rng)
        k = spatial_kernel_size(*spatial_size)
        self.spatial = Conv2D(1, 1, (k, k), rng=rng)

    @property
    def spatial_kernel(self) -> int:
        return self.spatial.kernel_size[0]

    def forward(self, x: Tensor) -> Tensor:
        return csaf_forward(self, x)

    def attention_map(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[-1] != self.channels:
            raise ShapeError(
                f"CSAF module expects {self.channels} channels, got input {x.shape}"
            )
        f1 = self.block1(x)
        f2 = self.block2(f1)
        f3 = self.block3(f2)
        fused = ops.add(ops.add(f1, f2), self.se(f3))
        return ops.sigmoid(self.spatial(ops.channel_max(fused)))


def csaf_forward(module: CSAFModule, x: Tensor) -> Tensor:
    return ops.mul(x, module.attention_map(x))


class ResidualBlock(Module):
    """Parallel 3x3 and 1x1 ConvBnLReLU branches, summed."""

    def __init__(
        self,
        channels: int,
        settings: LayerSettings = DEFAULT_SETTINGS,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        self.branch3x3 = ConvBnLReLU(channels, channels, (3, 3), 1, settings, rng)
        self.branch1x1 = ConvBnLReLU(channels, channels, (1, 1), 1, settings, rng)

    def forward(self, x: Tensor) -> Tensor:
        return residual_block(self, x)


def residual_block(block: ResidualBlock, x: Tensor) -> Tensor:
    return ops.add(block.branch3x3(x), block.branch1x1(x))


def residual_block_count(level: int) -> int:
    """Residual blocks on the skip connection of encoder level 1..4."""
    if level not in (1, 2, 3, 4):
        raise ConfigError(f"skip level must be in 1..4, got {level}")
    return 5 - level


class ResidualSkipChain(Module):
    """
    Skip connection of one level: ``5 - level`` residual blocks then SE.

    ``blocks_applied`` and ``se_applied`` count block applications across
    forward passes.
    """

    def __init__(
        self,
        channels: int,
        level: int,
        settings: LayerSettings = DEFAULT_SETTINGS,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        self.level = level
        self.blocks = [
            ResidualBlock(channels, settings=settings, rng=rng)
            for _ in range(residual_block_count(level))
        ]
        self.se = SEBlock(channels, settings=settings, rng=rng)
        self.blocks_applied = 0
        self.se_applied = 0

    def forward(self, x: Tensor) -> Tensor:
        return apply_residual_blocks(self, x)


def apply_residual_blocks(chain: ResidualSkipChain, features: Tensor) -> Tensor:
    out = features
    for block in chain.blocks:
        out = block(out)
        chain.blocks_applied += 1
    chain.se_applied += 1
    return chain.se(out)


class ASPPModule(Module):
    """
    Atrous spatial pyramid pooling.

    Branches: one 1x1 unit, one dilated 3x3 unit per rate, and an image
    pooling unit whose output is broadcast back over the map. Every branch
    emits ``filters`` channels; a 1x1 unit fuses their concatenation.
    """

    def __init__(
        self,
        in_channels: int,
        filters: int,
        rates: Sequence[int] = ASPP_RATES,
        settings: LayerSettings = DEFAULT_SETTINGS,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        if not rates or any(r < 1 for r in rates):
            raise ConfigError(f"ASPP rates must be positive, got {tuple(rates)}")
        self.rates = tuple(rates)
        self.pointwise = ConvBnLReLU(in_channels, filters, (1, 1), 1, settings, rng)
        self.atrous = [
            ConvBnLReLU(in_channels, filters, (3, 3), r, settings, rng)
            for r in self.rates
        ]
        self.pooling = ConvBnLReLU(in_channels, filters, (1, 1), 1, settings, rng)
        branches = 2 + len(self.rates)
        self.fuse = ConvBnLReLU(branches * filters, filters, (1, 1), 1, settings, rng)

    def branch_outputs(self, x: Tensor) -> List[Tensor]:
        batch, height, width, channels = x.shape
        pooled = ops.reshape(ops.global_avg_pool(x), (batch, 1, 1, channels))
        image_level = self.pooling(pooled)
        filters = image_level.shape[-1]
        return (
            [self.pointwise(x)]
            + [branch(x) for branch in self.atrous]
            + [ops.broadcast_to(image_level, (batch, height, width, filters))]
        )

    def forward(self, x: Tensor) -> Tensor:
        return aspp_forward(self, x)


def aspp_forward(module: ASPPModule, x: Tensor) -> Tensor:
    return module.fuse(ops.concat(module.branch_outputs(x)))
