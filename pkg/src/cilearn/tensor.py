"""Dense float64 tensors with taped reverse-mode differentiation.

All training math runs in double precision.  Operations (see ``ops``) record
themselves on the innermost active :class:`Tape`; a single backward sweep then
walks the recorded nodes in reverse, visiting each exactly once.  Tensors
flagged ``frozen`` never accumulate gradients and are skipped by the
optimizer, which is how parameter groups are locked during incremental
phases.
"""

from __future__ import annotations

import numpy as np

from .errors import GraphError

_TAPE_STACK: list["Tape | None"] = []


class Tensor:
    """A float64 array plus gradient bookkeeping.

    ``requires_grad`` marks tensors that want gradients, ``frozen`` overrides
    it without losing the trainable marker (so a parameter group can be
    thawed later).  ``grad`` is populated by :meth:`Tape.backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "frozen", "name")

    def __init__(self, data, requires_grad=False, name=""):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite values in tensor {name or '<unnamed>'}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.frozen = False
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def live(self):
        """True when this tensor participates in gradient accumulation."""
        return self.requires_grad and not self.frozen

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = self.name or "tensor"
        flags = "".join(c for c, on in (("g", self.requires_grad), ("f", self.frozen)) if on)
        return f"Tensor({tag}, shape={tuple(self.shape)}{', ' + flags if flags else ''})"


def _active_tape():
    if _TAPE_STACK and _TAPE_STACK[-1] is not None:
        return _TAPE_STACK[-1]
    return None


class no_grad:
    """Context manager that suspends recording on any active tape."""

    def __enter__(self):
        _TAPE_STACK.append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False


class Tape:
    """Ordered record of primitive operations for one backward sweep.

    A tape is single-owner: enter it as a context manager, compute a scalar
    loss inside, then call :meth:`backward` once.  Recording order equals
    execution order, so the node list is already topologically sorted.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, object]] = []
        self._products: set[int] = set()
        self._spent = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        if popped is not self:
            raise GraphError("tape context stack corrupted")
        return False

    def __len__(self):
        return len(self._nodes)

    def record(self, output: Tensor, backward_fn):
        """Append one node; ``backward_fn(grad)`` yields (input, contribution) pairs."""
        self._nodes.append((output, backward_fn))
        self._products.add(id(output))

    def owns(self, tensor: Tensor) -> bool:
        return id(tensor) in self._products

    def backward(self, loss: Tensor):
        """Accumulate dLoss/dTensor into every live tensor reachable from ``loss``."""
        if self._spent:
            raise GraphError("tape already consumed by a previous backward sweep")
        if not self._nodes:
            raise GraphError("backward on an empty tape")
        if loss.data.size != 1:
            raise GraphError(f"loss must be scalar, got shape {tuple(loss.shape)}")
        if id(loss) not in self._products:
            raise GraphError("loss tensor was not produced on this tape")
        self._spent = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for output, backward_fn in reversed(self._nodes):
            grad_out = grads.pop(id(output), None)
            if grad_out is None:
                continue  # dead branch: nothing downstream consumed it
            for tensor, contrib in backward_fn(grad_out):
                if not tensor.requires_grad or tensor.frozen:
                    continue
                if id(tensor) in self._products:
                    held = grads.get(id(tensor))
                    grads[id(tensor)] = contrib if held is None else held + contrib
                else:
                    tensor.grad = contrib if tensor.grad is None else tensor.grad + contrib


def sgd_step(params, lr: float):
    """Plain SGD update ``p -= lr * grad`` over live parameters with gradients."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for p in params:
        if p.frozen or not p.requires_grad or p.grad is None:
            continue
        p.data -= lr * p.grad
        if not np.all(np.isfinite(p.data)):
            raise ValueError(f"parameter {p.name or '<unnamed>'} became non-finite after update")


def zero_grads(params):
    for p in params:
        p.grad = None
