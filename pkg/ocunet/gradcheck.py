"""
Central finite-difference checks of the tape's gradients

Each checked unit is a scalar function of some leaf tensors. The analytic
gradient comes from one taped forward/backward pass; the numeric one from
(f(x + h) - f(x - h)) / 2h at randomly chosen elements. The error of a
probe is |a - n| / max(|a|, |n|, floor) and a unit's error is the maximum
over its probes.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import ops
from .blocks import (
    ASPPModule,
    ConvBnLReLU,
    CSAFModule,
    LayerSettings,
    Module,
    ResidualBlock,
    ResidualSkipChain,
    SEBlock,
)
from .constants import (
    GRADCHECK_FLOOR,
    GRADCHECK_PROBES,
    GRADCHECK_STEP,
    GRADCHECK_SUITE_TOLERANCE,
    GRADCHECK_TOLERANCE,
)
from .losses import ClassWeights, HybridLossConfig, cce, dice_loss, hybrid_loss, wbce
from .model import ModelConfig, build_ocunet
from .ops import RunningStats
from .tensor import Precision, Tape, Tensor, precision

logger = logging.getLogger(__name__)

ScalarFn = Callable[[], Tensor]
Builder = Callable[[np.random.Generator], Tuple[ScalarFn, List[Tensor]]]


@dataclass
class GradCheckResult:
    name: str
    kind: str
    max_rel_error: float
    probes: int
    tolerance: float

    @property
    def passed(self) -> bool:
        error = self.max_rel_error
        return bool(np.isfinite(error) and error <= self.tolerance)


def check_gradients(
    fn: ScalarFn,
    inputs: Sequence[Tensor],
    probes: int = GRADCHECK_PROBES,
    step: float = GRADCHECK_STEP,
    floor: float = GRADCHECK_FLOOR,
    seed: int = 0,
) -> Tuple[float, int]:
    """
    Largest relative error between taped and finite-difference gradients.

    ``inputs`` must be leaves that ``fn`` reads; they are perturbed in
    place and restored. Returns (max error, number of probes).
    """
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()
    with Tape() as tape:
        out = fn()
    tape.backward(out)
    analytic = [
        np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs
    ]

    sizes = np.array([t.size for t in inputs])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    flat_ids = rng.choice(total, size=min(probes, total), replace=False)
    bounds = np.cumsum(sizes)

    worst = 0.0
    for flat in flat_ids:
        which = int(np.searchsorted(bounds, flat, side="right"))
        offset = int(flat - (bounds[which - 1] if which else 0))
        tensor = inputs[which]
        view = tensor.data.reshape(-1)
        original = view[offset]
        view[offset] = original + step
        plus = fn().item()
        view[offset] = original - step
        minus = fn().item()
        view[offset] = original
        numeric = (plus - minus) / (2 * step)
        a = float(analytic[which].reshape(-1)[offset])
        error = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        if not np.isfinite(error):
            return float("inf"), len(flat_ids)
        worst = max(worst, error)
    return worst, len(flat_ids)


def _leaf(
    rng: np.random.Generator, *shape: int, low: float = -1.0, high: float = 1.0
) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _positive(rng: np.random.Generator, *shape: int) -> Tensor:
    return _leaf(rng, *shape, low=0.5, high=2.0)


def _away_from_zero(rng: np.random.Generator, *shape: int) -> Tensor:
    magnitude = rng.uniform(0.1, 1.0, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return Tensor(magnitude * sign, requires_grad=True)


def _project(f: Callable[[], Tensor], rng: np.random.Generator) -> ScalarFn:
    """sum(f() * R) for a fixed random R of f's output shape."""
    weights = Tensor(rng.normal(size=f().shape))
    return lambda: ops.sum(ops.mul(f(), weights))


def _unary(op: Callable[[Tensor], Tensor], make: Callable[..., Tensor]) -> Builder:
    def build(rng: np.random.Generator) -> Tuple[ScalarFn, List[Tensor]]:
        x = make(rng, 2, 4, 4, 3)
        return _project(lambda: op(x), rng), [x]

    return build


def _binary(
    op: Callable[[Tensor, Tensor], Tensor], positive_b: bool = False
) -> Builder:
    def build(rng: np.random.Generator) -> Tuple[ScalarFn, List[Tensor]]:
        a = _leaf(rng, 2, 3, 3, 4)
        low, high = (0.5, 1.5) if positive_b else (-1.0, 1.0)
        b = _leaf(rng, 2, 1, 1, 4, low=low, high=high)
        return _project(lambda: op(a, b), rng), [a, b]

    return build


def _conv(dilation: int = 1, stride: int = 1, padding: str = "same") -> Builder:
    def build(rng: np.random.Generator) -> Tuple[ScalarFn, List[Tensor]]:
        x = _leaf(rng, 2, 7, 7, 3)
        k = _leaf(rng, 3, 3, 3, 4)
        b = _leaf(rng, 4)

        def f() -> Tensor:
            return ops.conv2d(
                x, k, b, stride=stride, dilation=dilation, padding=padding
            )

        return _project(f, rng), [x, k, b]

    return build


def _dense(rng: np.random.Generator) -> Tuple[ScalarFn, List[Tensor]]:
    x, w, b = _leaf(rng, 3, 5), _leaf(rng, 5, 4), _leaf(rng, 4)
    return _project(lambda: ops.dense(x, w, b), rng), [x, w, b]


def _batch_norm(training: bool) -> Builder:
    def build(rng: np.random.Generator) -> Tuple[ScalarFn, List[Tensor]]:
        x = _leaf(rng, 2, 3, 3, 4)
        gamma, beta = _leaf(rng, 4, low=0.5, high=1.5), _leaf(rng, 4)
        stats = RunningStats(rng.uniform(-0.5, 0.5, 4), rng.uniform(0.5, 1.5, 4))
        return (
            _project(lambda: ops.batch_norm(x, gamma, beta, stats, training), rng),
            [x, gamma, beta],
        )

    return build


def _concat(rng: np.random.Generator) -> Tuple[ScalarFn, List[Tensor]]:
    a, b = _leaf(rng, 2, 3, 3, 2), _leaf(rng, 2, 3, 3, 3)
    return _project(lambda: ops.concat([a, b]), rng), [a, b]


def _reductions(rng: np.random.Generator) -> Tuple[ScalarFn, List[Tensor]]:
    x = _leaf(rng, 2, 3, 3, 4)
    return (
        _project(
            lambda: ops.add(
                ops.mean(x, axis=(1, 2), keepdims=True),
                ops.reshape(ops.sum(x, axis=-1), (2, 3, 3, 1)),
            ),
            rng,
        ),
        [x],
    )


def _broadcast(rng: np.random.Generator) -> Tuple[ScalarFn, List[Tensor]]:
    x = _leaf(rng, 2, 1, 1, 3)
    fn = _project(
        lambda: ops.slice_channels(ops.broadcast_to(x, (2, 3, 3, 3)), 1, 3), rng
    )
    return fn, [x]


def _module(
    make: Callable[[np.random.Generator], Module], shape: Tuple[int, ...]
) -> Builder:
    def build(rng: np.random.Generator) -> Tuple[ScalarFn, List[Tensor]]:
        module = make(rng)
        x = _leaf(rng, *shape)
        params = [p for _, p in module.named_parameters()]
        return _project(lambda: module(x), rng), [x] + params

    return build


def _loss_inputs(rng: np.random.Generator, channels: int) -> Tuple[Tensor, np.ndarray]:
    p = _leaf(rng, 2, 4, 4, channels, low=0.05, high=0.95)
    if channels == 1:
        return p, (rng.random((2, 4, 4, 1)) < 0.4).astype(np.float64)
    labels = rng.integers(0, channels, size=(2, 4, 4))
    return p, np.eye(channels)[labels]


def _cce(rng: np.random.Generator) -> Tuple[ScalarFn, List[Tensor]]:
    p, y = _loss_inputs(rng, 3)
    return (lambda: cce(p, y)), [p]


def _wbce(rng: np.random.Generator) -> Tuple[ScalarFn, List[Tensor]]:
    p, y = _loss_inputs(rng, 1)
    weights = ClassWeights(np.array([0.6, 1.7]))
    return (lambda: wbce(p, y, weights)), [p]


def _dice(rng: np.random.Generator) -> Tuple[ScalarFn, List[Tensor]]:
    p, y = _loss_inputs(rng, 1)
    return (lambda: dice_loss(p, y)), [p]


def _hybrid(rng: np.random.Generator) -> Tuple[ScalarFn, List[Tensor]]:
    p, y = _loss_inputs(rng, 1)
    cfg = HybridLossConfig(alpha=0.5)
    weights = ClassWeights(np.array([0.8, 1.2]))
    return (lambda: hybrid_loss(cfg, p, y, weights)), [p]


def _tiny_model(rng: np.random.Generator) -> Tuple[ScalarFn, List[Tensor]]:
    config = ModelConfig(
        base_channels=2,
        num_classes=3,
        input_size=(16, 16),
        seed=int(rng.integers(1 << 16)),
    )
    model = build_ocunet(config)
    # Two samples keep the 1x1 bottleneck batch norm away from zero variance.
    x = _leaf(rng, 2, 16, 16, 3, low=0.0, high=1.0)
    params = [p for _, p in model.named_parameters()]
    return _project(lambda: model(x), rng), [x] + params


SETTINGS = LayerSettings()

UNITS: List[Tuple[str, str, Builder]] = [
    ("add", "primitive", _binary(ops.add)),
    ("sub", "primitive", _binary(ops.sub)),
    ("mul", "primitive", _binary(ops.mul)),
    ("div", "primitive", _binary(ops.div, positive_b=True)),
    ("log", "primitive", _unary(ops.log, _positive)),
    ("clip", "primitive", _unary(lambda x: ops.clip(x, -0.5, 0.5), _away_from_zero)),
    ("sum_mean", "primitive", _reductions),
    ("broadcast_slice", "primitive", _broadcast),
    ("concat", "primitive", _concat),
    ("conv2d", "primitive", _conv()),
    ("conv2d_dilated", "primitive", _conv(dilation=2)),
    ("conv2d_strided", "primitive", _conv(stride=2, padding="valid")),
    ("dense", "primitive", _dense),
    ("batch_norm_train", "primitive", _batch_norm(True)),
    ("batch_norm_eval", "primitive", _batch_norm(False)),
    ("leaky_relu", "primitive", _unary(ops.leaky_relu, _away_from_zero)),
    ("sigmoid", "primitive", _unary(ops.sigmoid, _leaf)),
    ("softmax", "primitive", _unary(ops.softmax, _leaf)),
    ("max_pool", "primitive", _unary(ops.max_pool, _leaf)),
    ("global_avg_pool", "primitive", _unary(ops.global_avg_pool, _leaf)),
    ("channel_max", "primitive", _unary(ops.channel_max, _leaf)),
    ("upsample2x", "primitive", _unary(ops.upsample2x, _leaf)),
    (
        "ConvBnLReLU",
        "block",
        _module(lambda rng: ConvBnLReLU(3, 4, (3, 3), 1, SETTINGS, rng), (2, 6, 6, 3)),
    ),
    ("SEBlock", "block", _module(lambda rng: SEBlock(8, SETTINGS, rng), (2, 4, 4, 8))),
    (
        "CSAFModule",
        "block",
        _module(lambda rng: CSAFModule(4, (6, 6), SETTINGS, rng), (2, 6, 6, 4)),
    ),
    (
        "ResidualBlock",
        "block",
        _module(lambda rng: ResidualBlock(3, SETTINGS, rng), (2, 5, 5, 3)),
    ),
    (
        "ResidualSkipChain",
        "block",
        _module(lambda rng: ResidualSkipChain(3, 3, SETTINGS, rng), (2, 4, 4, 3)),
    ),
    (
        "ASPPModule",
        "block",
        _module(lambda rng: ASPPModule(3, 4, (1, 2), SETTINGS, rng), (2, 5, 5, 3)),
    ),
    ("cce", "loss", _cce),
    ("wbce", "loss", _wbce),
    ("dice_loss", "loss", _dice),
    ("hybrid_loss", "loss", _hybrid),
    ("ocunet_tiny", "model", _tiny_model),
]

MODEL_PROBES = 32


def run_gradcheck_suite(
    seed: int = 0,
    tolerance: Optional[float] = None,
    names: Optional[Sequence[str]] = None,
) -> List[GradCheckResult]:
    """
    Check every unit (or only ``names``) in double precision.

    Without an explicit ``tolerance`` the tiny model is held to
    GRADCHECK_SUITE_TOLERANCE and every other unit to GRADCHECK_TOLERANCE.
    """
    results = []
    with precision(Precision.DOUBLE):
        for index, (name, kind, build) in enumerate(UNITS):
            if names is not None and name not in names:
                continue
            rng = np.random.default_rng([seed, index])
            fn, inputs = build(rng)
            probes = MODEL_PROBES if kind == "model" else GRADCHECK_PROBES
            error, used = check_gradients(fn, inputs, probes=probes, seed=seed + index)
            limit = tolerance
            if limit is None:
                model = kind == "model"
                limit = GRADCHECK_SUITE_TOLERANCE if model else GRADCHECK_TOLERANCE
            result = GradCheckResult(name, kind, error, used, limit)
            logger.debug("gradcheck %s: %.3g over %d probes", name, error, used)
            results.append(result)
    return results


def results_frame(results: Sequence[GradCheckResult]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "unit": r.name,
                "kind": r.kind,
                "max_rel_error": r.max_rel_error,
                "probes": r.probes,
                "status": "pass" if r.passed else "FAIL",
            }
            for r in results
        ]
    )
