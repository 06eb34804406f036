"""Unit tests for tensors, precision modes and the tape."""

import numpy as np
import pytest

from ocunet import ops
from ocunet.exceptions import ShapeError, TapeError
from ocunet.tensor import (
    Precision,
    Tape,
    Tensor,
    backward,
    current_tape,
    get_precision,
    precision,
)


class TestPrecision:
    def test_default_is_single(self):
        assert get_precision() is Precision.SINGLE
        assert Tensor([1.0, 2.0]).dtype == np.float32

    def test_context_switches_and_restores(self):
        with precision("double") as mode:
            assert mode is Precision.DOUBLE
            assert Tensor(np.zeros(3)).dtype == np.float64
        assert Tensor(np.zeros(3)).dtype == np.float32

    def test_explicit_dtype_wins(self):
        assert Tensor([1, 2], dtype=np.float64).dtype == np.float64


class TestTensor:
    def test_item_of_scalar(self):
        assert Tensor(3.5).item() == 3.5

    def test_item_of_vector_raises(self):
        with pytest.raises(ShapeError, match="one-element"):
            Tensor([1.0, 2.0]).item()

    def test_operators_build_graph(self, double):
        a = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = ops.sum((a * 3.0 - 1.0) / 2.0)
        tape.backward(y)
        np.testing.assert_allclose(a.grad, [1.5, 1.5])

    def test_reverse_operators(self, double):
        a = Tensor([2.0, 4.0], requires_grad=True)
        with Tape() as tape:
            y = ops.sum(1.0 - 8.0 / a)
        tape.backward(y)
        np.testing.assert_allclose(a.grad, [2.0, 0.5])


class TestTape:
    def test_records_only_inside_context(self):
        a = Tensor([1.0], requires_grad=True)
        ops.add(a, a)
        with Tape() as tape:
            ops.add(a, a)
        ops.add(a, a)
        assert len(tape.nodes) == 1
        assert current_tape() is None

    def test_skips_ops_without_grad_inputs(self):
        with Tape() as tape:
            ops.add(Tensor([1.0]), Tensor([2.0]))
        assert tape.nodes == []

    def test_nested_tapes_record_on_innermost(self):
        a = Tensor([1.0], requires_grad=True)
        with Tape() as outer:
            ops.neg(a)
            with Tape() as inner:
                ops.neg(a)
            ops.neg(a)
        assert len(outer.nodes) == 2
        assert len(inner.nodes) == 1

    def test_op_counts(self):
        a = Tensor(np.ones((1, 2, 2, 1)), requires_grad=True)
        with Tape() as tape:
            ops.sum(ops.sigmoid(ops.sigmoid(a)))
        assert tape.op_counts() == {"sigmoid": 2, "sum": 1}

    def test_backward_needs_scalar(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = ops.mul(a, 2.0)
        with pytest.raises(TapeError, match="scalar"):
            tape.backward(y)

    def test_tape_freezes_after_backward(self):
        a = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            y = ops.sum(ops.mul(a, a))
        backward(y, tape)
        assert tape.frozen
        with tape:
            with pytest.raises(TapeError, match="frozen"):
                ops.mul(a, a)

    def test_unreached_leaf_gets_zero_gradient(self, double):
        a = Tensor([1.0, 2.0], requires_grad=True)
        b = Tensor([3.0, 4.0], requires_grad=True)
        with Tape() as tape:
            y = ops.sum(a)
            ops.sum(b)
        tape.backward(y)
        np.testing.assert_array_equal(b.grad, [0.0, 0.0])
        np.testing.assert_array_equal(a.grad, [1.0, 1.0])

    def test_fan_out_accumulates(self, double):
        a = Tensor([3.0], requires_grad=True)
        with Tape() as tape:
            y = ops.sum(ops.add(ops.mul(a, a), a))
        grads = tape.backward(y)
        assert grads[id(a)][0] == pytest.approx(7.0)
