"""Unit tests for checkpoint files."""

import numpy as np
import pytest

from ocunet.checkpoint import Checkpoint, load_checkpoint, load_into, save_checkpoint
from ocunet.exceptions import CheckpointError
from ocunet.model import ModelConfig, build_ocunet
from ocunet.optim import AdamState, adam_step


@pytest.fixture
def saved(tmp_path, tiny_model):
    adam = AdamState(lr=1e-3)
    params = tiny_model.parameters()
    grads = {name: np.ones_like(p.data) for name, p in params.items()}
    adam_step(adam, params, grads)
    ckpt = Checkpoint.capture(
        tiny_model,
        adam,
        epoch=3,
        history=[{"epoch": 3, "val_dice": 0.5}],
        metadata={"encoding": "orca3"},
    )
    return save_checkpoint(tmp_path / "best.ckpt", ckpt), ckpt


class TestRoundTrip:
    def test_header_fields(self, saved, tiny_config):
        path, _ = saved
        loaded = load_checkpoint(path)
        assert loaded.model_config == tiny_config
        assert loaded.epoch == 3
        assert loaded.history == [{"epoch": 3, "val_dice": 0.5}]
        assert loaded.metadata == {"encoding": "orca3"}

    def test_model_state(self, saved, tiny_model):
        path, _ = saved
        restored = load_checkpoint(path).restore_model()
        for (name, a), (_, b) in zip(
            tiny_model.named_parameters(), restored.named_parameters()
        ):
            np.testing.assert_array_equal(a.data, b.data, err_msg=name)
        for (_, a), (_, b) in zip(
            tiny_model.named_buffers(), restored.named_buffers()
        ):
            np.testing.assert_array_equal(a, b)

    def test_adam_state(self, saved):
        path, ckpt = saved
        adam = load_checkpoint(path).restore_adam()
        assert adam.t == 1
        assert adam.lr == 1e-3
        for name, m in adam.m.items():
            np.testing.assert_array_equal(m, ckpt.arrays[f"adam.m/{name}"])

    def test_capture_copies(self, tiny_model):
        ckpt = Checkpoint.capture(tiny_model)
        tiny_model.head.bias.data[...] = 42.0
        assert not np.any(ckpt.arrays["param/head.bias"] == 42.0)


class TestCorruption:
    def test_missing(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "none.ckpt")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"PK\x03\x04" + bytes(64))
        with pytest.raises(CheckpointError, match="not an ocunet checkpoint"):
            load_checkpoint(path)

    def test_flipped_payload_byte(self, saved):
        path, _ = saved
        data = bytearray(path.read_bytes())
        data[-100] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="checksum"):
            load_checkpoint(path)

    def test_truncated(self, saved):
        path, _ = saved
        path.write_bytes(path.read_bytes()[:-200])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_version_mismatch(self, saved):
        path, _ = saved
        data = bytearray(path.read_bytes())
        data[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="version 99"):
            load_checkpoint(path)


class TestArchitectureMismatch:
    def test_load_into_other_width(self, saved):
        path, _ = saved
        other = build_ocunet(ModelConfig(base_channels=4, input_size=(16, 16)))
        with pytest.raises(CheckpointError, match="base_channels"):
            load_into(other, load_checkpoint(path))

    def test_seed_is_ignored(self, saved, tiny_config):
        path, _ = saved
        model = build_ocunet(tiny_config.with_overrides(seed=99))
        load_into(model, load_checkpoint(path))
