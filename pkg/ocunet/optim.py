"""
Adam updates and the plateau / early-stopping schedules
"""

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Mapping, Optional

import numpy as np

from .constants import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    DEFAULT_LR,
    EARLY_STOP_PATIENCE,
    IMPROVEMENT_THRESHOLD,
    PLATEAU_FACTOR,
    PLATEAU_MIN_LR,
    PLATEAU_PATIENCE,
)
from .exceptions import ConfigError, NonFiniteGradientError, ShapeError
from .tensor import Tensor

logger = logging.getLogger(__name__)


def _from_dict(cls: Any, doc: Mapping[str, Any]) -> Any:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {unknown}")
    return cls(**doc)


@dataclass
class AdamState:
    """Step size, decay rates and per-parameter moments."""

    lr: float = DEFAULT_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    v: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(
                f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}"
            )
        if self.eps <= 0:
            raise ConfigError(f"Adam eps must be > 0, got {self.eps}")

    def scalars(self) -> Dict[str, Any]:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
        }


def adam_step(
    state: AdamState,
    params: Mapping[str, Tensor],
    grads: Optional[Mapping[str, np.ndarray]] = None,
) -> AdamState:
    """
    One bias-corrected Adam update, written into the parameters in place.

    ``grads`` defaults to each parameter's ``grad`` slot; a missing
    gradient counts as zero. Every gradient is checked before any
    parameter changes.

    Raises:
        NonFiniteGradientError: If a gradient holds NaN or Inf
        ShapeError: If a gradient does not match its parameter
    """
    resolved: Dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads.get(name) if grads is not None else p.grad
        g = np.zeros_like(p.data) if g is None else np.asarray(g)
        if g.shape != p.shape:
            raise ShapeError(
                f"gradient {g.shape} does not match parameter '{name}' {p.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
        resolved[name] = g

    state.t += 1
    correction1 = 1.0 - state.beta1**state.t
    correction2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = resolved[name].astype(p.dtype)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or v is None:
            m, v = np.zeros_like(p.data), np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)
    return state


@dataclass
class PlateauPolicy:
    """Multiply the learning rate by ``factor`` after ``patience`` flat epochs."""

    factor: float = PLATEAU_FACTOR
    patience: int = PLATEAU_PATIENCE
    min_lr: float = PLATEAU_MIN_LR
    threshold: float = IMPROVEMENT_THRESHOLD
    best: Optional[float] = None
    wait: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.factor < 1.0:
            raise ConfigError(f"plateau factor must lie in (0, 1), got {self.factor}")
        if self.patience < 1:
            raise ConfigError(f"plateau patience must be >= 1, got {self.patience}")
        if self.min_lr < 0:
            raise ConfigError(f"min_lr must be >= 0, got {self.min_lr}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "PlateauPolicy":
        return _from_dict(cls, doc)


def plateau_update(policy: PlateauPolicy, epoch_metric: float, lr: float) -> float:
    """
    Learning rate after observing one epoch's monitored metric.

    The first observation sets the baseline. An improvement means a value
    above ``best + threshold``.
    """
    if policy.best is None or epoch_metric > policy.best + policy.threshold:
        policy.best = epoch_metric
        policy.wait = 0
        return lr
    policy.wait += 1
    if policy.wait < policy.patience:
        return lr
    policy.wait = 0
    reduced = max(lr * policy.factor, policy.min_lr)
    if reduced < lr:
        logger.info(
            "Validation metric plateaued; learning rate %.3g -> %.3g", lr, reduced
        )
    return min(reduced, lr)


@dataclass
class EarlyStopPolicy:
    patience: int = EARLY_STOP_PATIENCE
    threshold: float = IMPROVEMENT_THRESHOLD
    best_value: Optional[float] = None
    best_epoch: int = -1
    wait: int = 0

    def __post_init__(self) -> None:
        if self.patience < 1:
            raise ConfigError(f"early-stop patience must be >= 1, got {self.patience}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "EarlyStopPolicy":
        return _from_dict(cls, doc)


def early_stop_check(policy: EarlyStopPolicy, epoch_metric: float, epoch: int) -> bool:
    """True once ``patience`` consecutive epochs have passed without improvement."""
    if policy.best_value is None or epoch_metric > policy.best_value + policy.threshold:
        policy.best_value = epoch_metric
        policy.best_epoch = epoch
        policy.wait = 0
        return False
    policy.wait += 1
    if policy.wait >= policy.patience:
        logger.info(
            "Early stop at epoch %d: no improvement since epoch %d (best %.4f)",
            epoch,
            policy.best_epoch,
            policy.best_value,
        )
        return True
    return False
