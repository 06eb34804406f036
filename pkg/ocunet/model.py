"""
OCU-Net assembly: encoder, ASPP bottleneck, decoder with residual skips, head
"""

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from . import ops
from .blocks import (
    ASPPModule,
    ConvBlock,
    Conv2D,
    CSAFModule,
    LayerSettings,
    Module,
    ResidualBlock,
    ResidualSkipChain,
    SEBlock,
)
from .constants import (
    ASPP_RATES,
    BN_EPSILON,
    BN_MOMENTUM,
    CHANNEL_SCHEDULE,
    ENCODER_LEVELS,
    LEAKY_SLOPE,
)
from .exceptions import ConfigError, ShapeError
from .tensor import Tensor

logger = logging.getLogger(__name__)

_ABLATION_FLAGS = (
    "use_se",
    "use_residual_skips",
    "use_multiscale",
    "use_aspp",
    "use_csaf",
)

# Incremental ablation ladder, from plain U-Net to the full network: each
# preset switches on one more component than the previous one.
PRESETS: Dict[str, Dict[str, bool]] = {
    name: {flag: i < enabled for i, flag in enumerate(_ABLATION_FLAGS)}
    for enabled, name in enumerate(
        [
            "unet",
            "se",
            "se_residual",
            "se_residual_multiscale",
            "se_residual_multiscale_aspp",
            "ocunet",
        ]
    )
}

DOWNSAMPLING = 2**ENCODER_LEVELS


@dataclass
class ModelConfig:
    """
    Architecture hyperparameters.

    ``channel_schedule`` lists the widths of encoder levels 1..4; when empty
    it doubles from ``base_channels``. The bottleneck is twice the level-4
    width.
    """

    base_channels: int = CHANNEL_SCHEDULE[0]
    channel_schedule: Tuple[int, ...] = ()
    num_classes: int = 3
    input_size: Tuple[int, int] = (512, 512)
    in_channels: int = 3
    leaky_slope: float = LEAKY_SLOPE
    se_ratio: Optional[int] = None
    aspp_rates: Tuple[int, ...] = ASPP_RATES
    bn_epsilon: float = BN_EPSILON
    bn_momentum: float = BN_MOMENTUM
    use_se: bool = True
    use_residual_skips: bool = True
    use_multiscale: bool = True
    use_aspp: bool = True
    use_csaf: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        self.channel_schedule = tuple(int(c) for c in self.channel_schedule)
        self.input_size = (int(self.input_size[0]), int(self.input_size[1]))
        self.aspp_rates = tuple(int(r) for r in self.aspp_rates)
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        height, width = self.input_size
        if height <= 0 or width <= 0 or height % DOWNSAMPLING or width % DOWNSAMPLING:
            raise ConfigError(
                f"input size {height}x{width} must be positive and divisible "
                f"by {DOWNSAMPLING}"
            )
        schedule = self.channel_schedule
        if schedule and (len(schedule) != ENCODER_LEVELS or min(schedule) < 1):
            raise ConfigError(
                f"channel_schedule needs {ENCODER_LEVELS} positive widths, "
                f"got {self.channel_schedule}"
            )
        # LayerSettings repeats the numeric checks.
        self.layer_settings()

    @classmethod
    def preset(cls, name: str, **overrides: Any) -> "ModelConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset '{name}', choose from {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})

    @property
    def widths(self) -> Tuple[int, ...]:
        if self.channel_schedule:
            return self.channel_schedule
        return tuple(self.base_channels * 2**i for i in range(ENCODER_LEVELS))

    @property
    def bottleneck_width(self) -> int:
        return 2 * self.widths[-1]

    @property
    def preset_name(self) -> Optional[str]:
        switches = {key: getattr(self, key) for key in PRESETS["ocunet"]}
        for name, values in PRESETS.items():
            if values == switches:
                return name
        return None

    def layer_settings(self) -> LayerSettings:
        return LayerSettings(
            slope=self.leaky_slope,
            bn_epsilon=self.bn_epsilon,
            bn_momentum=self.bn_momentum,
            se_ratio=self.se_ratio,
        )

    def level_size(self, level: int) -> Tuple[int, int]:
        """Spatial size of the feature maps at level 1..4."""
        scale = 2 ** (level - 1)
        return self.input_size[0] // scale, self.input_size[1] // scale

    def to_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc["channel_schedule"] = list(self.channel_schedule)
        doc["input_size"] = list(self.input_size)
        doc["aspp_rates"] = list(self.aspp_rates)
        return doc

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {unknown}")
        return cls(**doc)

    def with_overrides(self, **overrides: Any) -> "ModelConfig":
        return replace(self, **overrides)


@dataclass
class _LevelWidths:
    encoder_in: List[int] = field(default_factory=list)
    decoder_in: List[int] = field(default_factory=list)


def _plan_widths(config: ModelConfig) -> _LevelWidths:
    w = config.widths
    plan = _LevelWidths()
    for level in range(1, ENCODER_LEVELS + 1):
        if level == 1:
            plan.encoder_in.append(config.in_channels)
        elif level >= 3 and config.use_multiscale:
            plan.encoder_in.append(w[level - 2] + w[level - 3])
        else:
            plan.encoder_in.append(w[level - 2])
    for level in range(1, ENCODER_LEVELS + 1):
        below = config.bottleneck_width if level == ENCODER_LEVELS else w[level]
        width = below + w[level - 1]
        if level <= 2 and config.use_multiscale:
            width += w[level + 1]
        plan.decoder_in.append(width)
    return plan


class OCUNet(Module):
    """
    Encoder-decoder segmentation network.

    Lists are indexed by level minus one: ``encoder[0]`` is level 1 and
    ``decoder[0]`` is the last decoder level, the one feeding the head.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(config.seed)
        settings = config.layer_settings()
        w = config.widths
        plan = _plan_widths(config)
        levels = range(1, ENCODER_LEVELS + 1)

        self.encoder = [
            ConvBlock(plan.encoder_in[lv - 1], w[lv - 1], settings, rng)
            for lv in levels
        ]
        self.encoder_se = (
            [SEBlock(w[lv - 1], settings, rng) for lv in levels]
            if config.use_se
            else []
        )
        # Multi-scale refinement for levels 3 and 4: one residual block for
        # the previous level, one for the level before it.
        self.multiscale_near: List[ResidualBlock] = []
        self.multiscale_far: List[ResidualBlock] = []
        if config.use_multiscale:
            for lv in (3, 4):
                self.multiscale_near.append(ResidualBlock(w[lv - 2], settings, rng))
                self.multiscale_far.append(ResidualBlock(w[lv - 3], settings, rng))
        self.encoder_csaf = (
            [
                CSAFModule(w[lv - 1], config.level_size(lv), settings, rng)
                for lv in (3, 4)
            ]
            if config.use_csaf
            else []
        )

        self.bottleneck: Module
        if config.use_aspp:
            self.bottleneck = ASPPModule(
                w[-1], config.bottleneck_width, config.aspp_rates, settings, rng
            )
        else:
            self.bottleneck = ConvBlock(w[-1], config.bottleneck_width, settings, rng)

        self.skips = (
            [ResidualSkipChain(w[lv - 1], lv, settings, rng) for lv in levels]
            if config.use_residual_skips
            else []
        )
        self.decoder = [
            ConvBlock(plan.decoder_in[lv - 1], w[lv - 1], settings, rng)
            for lv in levels
        ]
        self.decoder_csaf = (
            [
                CSAFModule(w[lv - 1], config.level_size(lv), settings, rng)
                for lv in levels
            ]
            if config.use_csaf
            else []
        )
        self.head = Conv2D(w[0], config.num_classes, (1, 1), rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return forward(self, x)

    def logits(self, x: Tensor) -> Tensor:
        """Head output before softmax/sigmoid."""
        cfg = self.config
        expected = (cfg.input_size[0], cfg.input_size[1], cfg.in_channels)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeError(
                f"model expects input B x {expected[0]} x {expected[1]} "
                f"x {expected[2]}, got {x.shape}"
            )
        encoded = self._encode(x)
        below = self.bottleneck(ops.max_pool(encoded[-1]))
        decoded = self._decode(below, encoded)
        return self.head(decoded)

    def _encode(self, x: Tensor) -> List[Tensor]:
        cfg = self.config
        features: List[Tensor] = []
        for lv in range(1, ENCODER_LEVELS + 1):
            if lv == 1:
                inputs = x
            elif lv >= 3 and cfg.use_multiscale:
                near = ops.max_pool(features[lv - 2])
                far = ops.max_pool(ops.max_pool(features[lv - 3]))
                refined_near = self.multiscale_near[lv - 3](near)
                refined_far = self.multiscale_far[lv - 3](far)
                inputs = ops.concat([refined_near, refined_far])
            else:
                inputs = ops.max_pool(features[lv - 2])
            h = self.encoder[lv - 1](inputs)
            if cfg.use_se:
                h = self.encoder_se[lv - 1](h)
            if cfg.use_csaf and lv >= 3:
                h = self.encoder_csaf[lv - 3](h)
            features.append(h)
        return features

    def _decode(self, below: Tensor, encoded: List[Tensor]) -> Tensor:
        cfg = self.config
        decoded: Dict[int, Tensor] = {}
        previous = below
        for lv in range(ENCODER_LEVELS, 0, -1):
            skip = encoded[lv - 1]
            if cfg.use_residual_skips:
                skip = self.skips[lv - 1](skip)
            parts = [ops.upsample2x(previous), skip]
            if cfg.use_multiscale and lv <= 2:
                parts.append(ops.upsample(decoded[lv + 2], 4))
            h = self.decoder[lv - 1](ops.concat(parts))
            if cfg.use_csaf:
                h = self.decoder_csaf[lv - 1](h)
            decoded[lv] = h
            previous = h
        return previous

    def structure_counts(self) -> Dict[str, int]:
        """Introspected counts of the attention, pyramid and skip units."""
        modules = list(self.modules())
        return {
            "csaf": sum(isinstance(m, CSAFModule) for m in modules),
            "aspp": sum(isinstance(m, ASPPModule) for m in modules),
            "skip_residual_blocks": sum(len(chain.blocks) for chain in self.skips),
        }


def forward(model: OCUNet, batch: Tensor) -> Tensor:
    """Per-pixel class probabilities, B x H x W x num_classes."""
    logits = model.logits(batch)
    if model.config.num_classes >= 2:
        return ops.softmax(logits, axis=-1)
    return ops.sigmoid(logits)


def build_ocunet(config: ModelConfig) -> OCUNet:
    """
    Build and initialize a network from ``config``.

    Raises:
        ConfigError: If the config is invalid
    """
    model = OCUNet(config)
    logger.info(
        "Built %s network: widths %s, %d classes, %d parameters",
        config.preset_name or "custom",
        config.widths,
        config.num_classes,
        model.param_count(),
    )
    return model


def param_count(model: Module) -> int:
    return model.param_count()
