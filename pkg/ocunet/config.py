"""
Command configuration: built-in defaults, a JSON config file, then flags
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

from .constants import DEFAULT_LR
from .exceptions import ConfigError
from .losses import LossConfig
from .manifest import parse_patch_size
from .masks import MaskEncoding
from .model import PRESETS, ModelConfig
from .training import TrainingConfig

logger = logging.getLogger(__name__)

COMMANDS = ("train", "eval", "predict", "gradcheck", "synth-data")

# Fields each command cannot run without.
REQUIRED: Dict[str, Tuple[str, ...]] = {
    "train": ("manifest",),
    "eval": ("manifest", "checkpoint"),
    "predict": ("checkpoint",),
    "gradcheck": (),
    "synth-data": ("out",),
}


@dataclass
class CommandConfig:
    """
    Effective settings of one CLI invocation.

    ``model`` and ``training`` hold extra ModelConfig / TrainingConfig keys
    from the config file; the named fields win over them.
    """

    command: str
    manifest: Optional[Path] = None
    checkpoint: Optional[Path] = None
    out: Optional[Path] = None
    seed: int = 0
    epochs: Optional[int] = None
    batch_size: Optional[int] = None
    lr: float = DEFAULT_LR
    alpha: Optional[float] = None
    classes: Optional[int] = None
    patch_size: Optional[Tuple[int, int]] = None
    preset: str = "ocunet"
    base_channels: Optional[int] = None
    workers: int = 1
    resize: bool = False
    verbose: bool = False
    inputs: List[Path] = field(default_factory=list)
    split: str = "test"
    n: int = 8
    test_fraction: float = 0.0
    model: Dict[str, Any] = field(default_factory=dict)
    training: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(
                f"unknown command '{self.command}', choose from {COMMANDS}"
            )
        for name in ("manifest", "checkpoint", "out"):
            value = getattr(self, name)
            if value is not None and not isinstance(value, Path):
                setattr(self, name, Path(value))
        self.inputs = [Path(p) for p in self.inputs]
        if isinstance(self.patch_size, str):
            self.patch_size = parse_patch_size(self.patch_size)
        elif self.patch_size is not None:
            self.patch_size = (int(self.patch_size[0]), int(self.patch_size[1]))
        if self.preset not in PRESETS:
            raise ConfigError(
                f"unknown preset '{self.preset}', choose from {sorted(PRESETS)}"
            )
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")

    def validate(self) -> None:
        """
        Raises:
            ConfigError: If a field the command needs is missing
        """
        required = REQUIRED[self.command]
        missing = [name for name in required if getattr(self, name) is None]
        if missing:
            flags = ", ".join(f"--{name.replace('_', '-')}" for name in missing)
            raise ConfigError(f"'{self.command}' requires {flags}")
        if self.command == "predict" and not (self.inputs or self.manifest):
            raise ConfigError("'predict' requires input images or --manifest")

    def model_config(
        self, encoding: MaskEncoding, patch_size: Tuple[int, int]
    ) -> ModelConfig:
        """Model config for a dataset with this encoding and patch size."""
        doc = dict(PRESETS[self.preset])
        doc.update(self.model)
        doc["input_size"] = self.patch_size or patch_size
        doc["num_classes"] = self.classes or encoding.head_channels
        doc.setdefault("seed", self.seed)
        if self.base_channels is not None:
            doc["base_channels"] = self.base_channels
        return ModelConfig.from_dict(doc)

    def training_config(self) -> TrainingConfig:
        doc = dict(self.training)
        loss = dict(doc.pop("loss", {}))
        if self.alpha is not None:
            loss["alpha"] = self.alpha
        doc["loss"] = LossConfig.from_dict(loss).to_dict()
        doc["seed"] = self.seed
        doc["lr"] = self.lr
        doc["workers"] = self.workers
        doc["resize"] = self.resize
        if self.epochs is not None:
            doc["epochs"] = self.epochs
        if self.batch_size is not None:
            doc["batch_size"] = self.batch_size
        if self.out is not None:
            doc.setdefault("checkpoint_path", str(self.out / "best.ocun"))
            doc.setdefault("log_path", str(self.out / "epochs.csv"))
        return TrainingConfig.from_dict(doc)

    def to_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        for name in ("manifest", "checkpoint", "out"):
            doc[name] = str(doc[name]) if doc[name] is not None else None
        doc["inputs"] = [str(p) for p in self.inputs]
        doc["patch_size"] = list(self.patch_size) if self.patch_size else None
        return doc


def load_config_file(path: Path) -> Dict[str, Any]:
    """
    Raises:
        ConfigError: If the file is missing or not a JSON object
    """
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return doc


def resolve(
    command: str,
    flags: Mapping[str, Any],
    config_path: Optional[Path] = None,
) -> CommandConfig:
    """
    Merge defaults, the config file and flags, in increasing precedence.

    ``flags`` values of None count as "not given".
    """
    known = {f.name for f in fields(CommandConfig)} - {"command"}
    doc: Dict[str, Any] = {}
    if config_path is not None:
        file_doc = load_config_file(Path(config_path))
        unknown = sorted(set(file_doc) - known)
        if unknown:
            raise ConfigError(f"unknown keys in {config_path}: {unknown}")
        doc.update(file_doc)
    doc.update({k: v for k, v in flags.items() if v is not None and k in known})
    cfg = CommandConfig(command=command, **doc)
    logger.info("Effective config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    return cfg
