"""
Self-describing checkpoint files

Layout, all integers little-endian:

    magic b"OCUN" | version u32 | config length u32 | config JSON (UTF-8)
    | index length u32 | index JSON | payload length u64 | payload (<f4)
    | sha256 of everything before it (32 bytes)

The config JSON holds the model config, epoch, metric history, Adam
scalars and free-form metadata. The index lists name, shape and element
offset of every tensor in the payload.
"""

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from .exceptions import CheckpointError, ConfigError
from .model import ModelConfig, OCUNet, build_ocunet
from .optim import AdamState

logger = logging.getLogger(__name__)

_DIGEST = 32
_PAYLOAD_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    model_config: ModelConfig
    arrays: Dict[str, np.ndarray]
    epoch: int = -1
    history: List[Dict[str, Any]] = field(default_factory=list)
    adam: Dict[str, Any] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def capture(
        cls,
        model: OCUNet,
        adam_state: Optional[AdamState] = None,
        epoch: int = -1,
        history: Optional[List[Dict[str, Any]]] = None,
        metadata: Optional[Dict[str, Any]] = None,
    ) -> "Checkpoint":
        """Snapshot (copy) the model state and optimizer moments."""
        arrays = {name: np.array(a) for name, a in model.state_arrays().items()}
        adam: Dict[str, Any] = {}
        if adam_state is not None:
            adam = adam_state.scalars()
            for name, m in adam_state.m.items():
                arrays[f"adam.m/{name}"] = np.array(m)
            for name, v in adam_state.v.items():
                arrays[f"adam.v/{name}"] = np.array(v)
        return cls(
            model.config, arrays, epoch, list(history or []), adam, dict(metadata or {})
        )

    def model_arrays(self) -> Dict[str, np.ndarray]:
        return {
            k: v for k, v in self.arrays.items() if k.startswith(("param/", "buffer/"))
        }

    def restore_model(self) -> OCUNet:
        model = build_ocunet(self.model_config)
        load_into(model, self)
        return model

    def restore_adam(self) -> AdamState:
        scalars = dict(self.adam)
        t = int(scalars.pop("t", 0))
        state = AdamState(**scalars) if scalars else AdamState()
        state.t = t
        for key, array in self.arrays.items():
            if key.startswith("adam.m/"):
                state.m[key[len("adam.m/") :]] = array.copy()
            elif key.startswith("adam.v/"):
                state.v[key[len("adam.v/") :]] = array.copy()
        return state


def load_into(model: OCUNet, ckpt: Checkpoint) -> None:
    """
    Copy checkpoint state into ``model``.

    Raises:
        CheckpointError: If the architectures differ
    """
    ours = model.config.to_dict()
    theirs = ckpt.model_config.to_dict()
    ours.pop("seed", None)
    theirs.pop("seed", None)
    diff = sorted(k for k in ours if ours[k] != theirs.get(k))
    if diff:
        details = ", ".join(
            f"{k}: checkpoint {theirs.get(k)!r} vs model {ours[k]!r}" for k in diff
        )
        raise CheckpointError(f"checkpoint does not fit this architecture ({details})")
    model.load_state_arrays(ckpt.model_arrays())


def _pack(fmt: str, value: int) -> bytes:
    return struct.pack("<" + fmt, value)


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> Path:
    path = Path(path)
    doc = {
        "config": ckpt.model_config.to_dict(),
        "epoch": ckpt.epoch,
        "history": ckpt.history,
        "adam": ckpt.adam,
        "metadata": ckpt.metadata,
    }
    index = []
    chunks = []
    offset = 0
    for name, array in ckpt.arrays.items():
        data = np.ascontiguousarray(array, dtype=_PAYLOAD_DTYPE)
        index.append({"name": name, "shape": list(data.shape), "offset": offset})
        chunks.append(data.tobytes())
        offset += data.size
    config_bytes = json.dumps(doc, sort_keys=True).encode("utf-8")
    index_bytes = json.dumps(index).encode("utf-8")
    payload = b"".join(chunks)
    body = b"".join(
        [
            CHECKPOINT_MAGIC,
            _pack("I", CHECKPOINT_VERSION),
            _pack("I", len(config_bytes)),
            config_bytes,
            _pack("I", len(index_bytes)),
            index_bytes,
            _pack("Q", len(payload)),
            payload,
        ]
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + hashlib.sha256(body).digest())
    logger.info(
        "Saved checkpoint %s (epoch %d, %d tensors)", path, ckpt.epoch, len(index)
    )
    return path


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, count: int) -> bytes:
        end = self.pos + count
        if end > len(self.data) - _DIGEST:
            raise CheckpointError(f"checkpoint {self.path} is truncated")
        chunk = self.data[self.pos : end]
        self.pos = end
        return chunk

    def unpack(self, fmt: str) -> int:
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))[0]


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    Raises:
        CheckpointError: On a bad magic number, version mismatch,
            truncation, checksum failure or an inconsistent index
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    too_short = len(data) < len(CHECKPOINT_MAGIC) + _DIGEST
    if too_short or not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path} is not an ocunet checkpoint")
    reader = _Reader(data, path)
    reader.take(len(CHECKPOINT_MAGIC))
    version = reader.unpack("I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has format version {version}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    config_bytes = reader.take(reader.unpack("I"))
    index_bytes = reader.take(reader.unpack("I"))
    payload = reader.take(reader.unpack("Q"))
    if reader.pos != len(data) - _DIGEST:
        raise CheckpointError(f"checkpoint {path} has trailing bytes")
    if hashlib.sha256(data[: reader.pos]).digest() != data[reader.pos :]:
        raise CheckpointError(f"checkpoint {path} failed its checksum")

    try:
        doc = json.loads(config_bytes.decode("utf-8"))
        index = json.loads(index_bytes.decode("utf-8"))
        config = ModelConfig.from_dict(doc["config"])
    except (ValueError, KeyError, ConfigError) as e:
        raise CheckpointError(f"checkpoint {path} has an unreadable header: {e}")

    values = np.frombuffer(payload, dtype=_PAYLOAD_DTYPE)
    arrays: Dict[str, np.ndarray] = {}
    for item in index:
        shape: Tuple[int, ...] = tuple(item["shape"])
        start = int(item["offset"])
        count = int(np.prod(shape)) if shape else 1
        if start + count > values.size:
            raise CheckpointError(
                f"tensor '{item['name']}' lies outside the payload of {path}"
            )
        arrays[item["name"]] = values[start : start + count].reshape(shape).copy()
    return Checkpoint(
        config,
        arrays,
        int(doc.get("epoch", -1)),
        list(doc.get("history", [])),
        dict(doc.get("adam", {})),
        dict(doc.get("metadata", {})),
    )
