"""Minimal reverse-mode differentiation over dense float64 tensors.

A Tape records operations in execution order (which is already topological);
backward() walks the record list in reverse, routing gradient flow through
each operation's backward rule. Only tensors attached to a tape receive
gradients. There is no broadcasting beyond the row-bias case in add_bias,
which keeps every backward rule auditable by hand.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DimensionError",
    "NumericsError",
    "Tensor",
    "Tape",
    "Parameter",
    "matmul",
    "add_bias",
    "tanh",
    "multiply",
    "softmax_cross_entropy",
    "tensor_sum",
    "backward",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible with the operation's contract."""


class NumericsError(RuntimeError):
    """A forward value came out NaN or infinite; never silently propagated."""


def _ensure_finite(values: np.ndarray, context: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise NumericsError(f"non-finite values produced by {context}")
    return values


class Tensor:
    """Dense float64 array, optionally attached to a tape as a graph node.

    ``grad`` exists only while the tensor is attached to a tape; it
    accumulates across backward passes until ``zero_grad`` is called.
    """

    __slots__ = ("values", "grad", "node_id", "tape")

    def __init__(self, values, tape: "Tape | None" = None):
        self.values = _ensure_finite(
            np.asarray(values, dtype=np.float64), "Tensor constructor"
        )
        self.grad: np.ndarray | None = None
        self.node_id: int | None = None
        self.tape: Tape | None = None
        if tape is not None:
            tape.watch(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def __repr__(self) -> str:
        tag = f", node={self.node_id}" if self.node_id is not None else ""
        return f"Tensor(shape={self.values.shape}{tag})"


class _OpRecord:
    __slots__ = ("name", "input_ids", "output_id", "backward_rule")

    def __init__(self, name, input_ids, output_id, backward_rule):
        self.name = name
        self.input_ids = input_ids  # node id per input; None for untracked
        self.output_id = output_id
        self.backward_rule = backward_rule  # grad_out -> grad per input


class Tape:
    """Ordered operation log for one forward pass.

    Execution order is topological by construction: an operation can only
    consume tensors that already exist. One tape serves one single-threaded
    forward/backward cycle; parallel runs each own a private tape.
    """

    def __init__(self):
        self._records: list[_OpRecord] = []
        self._tensors: dict[int, Tensor] = {}
        self._next_id = 0

    def watch(self, tensor: Tensor) -> Tensor:
        """Attach a leaf tensor so gradients accumulate into it."""
        if tensor.tape is self:
            return tensor
        if tensor.tape is not None:
            raise ValueError("tensor is already attached to a different tape")
        tensor.node_id = self._next_id
        self._next_id += 1
        tensor.tape = self
        if tensor.grad is None or tensor.grad.shape != tensor.values.shape:
            tensor.grad = np.zeros_like(tensor.values)
        self._tensors[tensor.node_id] = tensor
        return tensor

    def record(self, name: str, inputs, output: Tensor, backward_rule) -> None:
        """Register output and log the op; backward_rule(g) returns one
        gradient array (or None) per input, in input order."""
        self.watch(output)
        input_ids = tuple(
            t.node_id if (t.tape is self) else None for t in inputs
        )
        self._records.append(
            _OpRecord(name, input_ids, output.node_id, backward_rule)
        )

    def release(self) -> None:
        """Detach every tensor so it can join a later tape. Accumulated
        grad buffers survive; only the graph bookkeeping is dropped."""
        for tensor in self._tensors.values():
            tensor.tape = None
            tensor.node_id = None
        self._tensors.clear()
        self._records.clear()

    def __len__(self) -> int:
        return len(self._records)


class Parameter:
    """Named trainable tensor plus per-parameter optimizer state."""

    __slots__ = ("tensor", "name", "state")

    def __init__(self, values, name: str):
        self.tensor = Tensor(values)
        self.name = name
        self.state: dict = {}

    @property
    def values(self) -> np.ndarray:
        return self.tensor.values

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.zero_grad()

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


def _resolve_tape(inputs) -> Tape | None:
    tape = None
    for t in inputs:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ValueError("operands live on different tapes")
    return tape


def _emit(name: str, inputs, out_values: np.ndarray, backward_rule) -> Tensor:
    _ensure_finite(out_values, name)
    out = Tensor(out_values)
    tape = _resolve_tape(inputs)
    if tape is not None:
        tape.record(name, inputs, out, backward_rule)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise DimensionError(
            f"matmul needs rank-2 operands, got {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}"
        )
    av, bv = a.values, b.values
    track_a, track_b = a.tape is not None, b.tape is not None

    def backward_rule(g):
        ga = g @ bv.T if track_a else None
        gb = av.T @ g if track_b else None
        return ga, gb

    return _emit("matmul", (a, b), av @ bv, backward_rule)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast sum of a rank-2 tensor and a rank-1 bias."""
    if x.values.ndim != 2 or b.values.ndim != 1:
        raise DimensionError(
            f"add_bias needs rank-2 x and rank-1 b, got {x.shape} and {b.shape}"
        )
    if x.shape[1] != b.shape[0]:
        raise DimensionError(
            f"add_bias trailing dimensions disagree: {x.shape} + {b.shape}"
        )
    track_x, track_b = x.tape is not None, b.tape is not None

    def backward_rule(g):
        gx = g if track_x else None
        gb = g.sum(axis=0) if track_b else None
        return gx, gb

    return _emit("add_bias", (x, b), x.values + b.values[None, :], backward_rule)


def tanh(x: Tensor) -> Tensor:
    """Elementwise hyperbolic tangent."""
    y = np.tanh(x.values)

    def backward_rule(g):
        return (g * (1.0 - y * y),)

    return _emit("tanh", (x,), y, backward_rule)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors (no broadcasting)."""
    if a.shape != b.shape:
        raise DimensionError(
            f"multiply needs matching shapes, got {a.shape} and {b.shape}"
        )
    av, bv = a.values, b.values
    track_a, track_b = a.tape is not None, b.tape is not None

    def backward_rule(g):
        ga = g * bv if track_a else None
        gb = g * av if track_b else None
        return ga, gb

    return _emit("multiply", (a, b), av * bv, backward_rule)


def tensor_sum(x: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    shape = x.values.shape

    def backward_rule(g):
        return (np.full(shape, float(g)),)

    return _emit("sum", (x,), np.asarray(x.values.sum()), backward_rule)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the true-class logit over the batch.

    Stabilized by row-max subtraction, so arbitrarily large logits cannot
    overflow. Backward seeds (softmax - onehot) / batch_size.
    """
    if logits.values.ndim != 2:
        raise DimensionError(f"logits must be rank-2, got {logits.shape}")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise DimensionError(
            f"labels shape {labels.shape} does not match logits {logits.shape}"
        )
    m, k = logits.shape
    if labels.dtype.kind not in "iu":
        raise IndexError("labels must be integer class indices")
    if labels.min() < 0 or labels.max() >= k:
        raise IndexError(
            f"label out of range [0, {k}): saw {int(labels.min())}..{int(labels.max())}"
        )

    z = logits.values
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_norm[:, None]
    loss = -log_probs[np.arange(m), labels].mean()

    softmax = np.exp(log_probs)

    def backward_rule(g):
        grad = softmax.copy()
        grad[np.arange(m), labels] -= 1.0
        return (grad * (float(g) / m),)

    return _emit("softmax_cross_entropy", (logits,), np.asarray(loss), backward_rule)


def backward(tape: Tape, loss: Tensor) -> None:
    """Propagate d(loss)/d(node) to every tracked tensor's grad buffer.

    Each pass seeds 1 at the loss and computes its own flow; repeated calls
    without zero_grad therefore accumulate (two passes double the gradient).
    """
    if loss.tape is not tape or loss.node_id is None:
        raise ValueError("loss is not a node on this tape")
    if loss.values.size != 1:
        raise ValueError(
            f"backward needs a scalar seed, got shape {loss.values.shape}"
        )

    flows: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.values)}
    for rec in reversed(tape._records):
        g = flows.pop(rec.output_id, None)
        if g is None:
            continue
        self_tensor = tape._tensors[rec.output_id]
        self_tensor.grad += g
        input_grads = rec.backward_rule(g)
        for node_id, gi in zip(rec.input_ids, input_grads):
            if node_id is None or gi is None:
                continue
            if node_id in flows:
                flows[node_id] = flows[node_id] + gi
            else:
                flows[node_id] = gi
    # whatever remains belongs to leaves (no producing record)
    for node_id, g in flows.items():
        tape._tensors[node_id].grad += g
