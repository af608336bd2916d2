"""Dense tensors with reverse-mode differentiation.

A ``Tensor`` either wraps data directly (a leaf or a constant) or records the
primitive that produced it together with its inputs. Nodes are only recorded
when at least one input is *tracked*, i.e. depends on a leaf registered in a
``Graph``. Tracking lets a graph be replayed with new leaf values (used by
``forward`` and the finite-difference checker); ``requires_grad`` marks the
subset of tracked nodes that depend on a trainable leaf.
"""

from __future__ import annotations

import contextlib
import contextvars
from typing import Any, Iterator

import numpy as np

from abc_embed.core.errors import GraphError

_GRAD_ENABLED: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate primitives without recording any graph nodes."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


class Tensor:
    """A float64 array, optionally a node of a differentiation graph."""

    __slots__ = ("data", "op", "inputs", "attrs", "tracked", "requires_grad", "name", "trainable")

    def __init__(
        self,
        data: Any,
        *,
        op: str | None = None,
        inputs: tuple[Tensor, ...] = (),
        attrs: dict[str, Any] | None = None,
        tracked: bool = False,
        requires_grad: bool = False,
        name: str | None = None,
        trainable: bool = False,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.op = op
        self.inputs = inputs
        self.attrs = attrs or {}
        self.tracked = tracked
        self.requires_grad = requires_grad
        self.name = name
        self.trainable = trainable

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self.op is None

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        """Constant copy that cuts every gradient path."""
        return Tensor(self.data.copy())

    def __add__(self, other: Any) -> Tensor:
        from abc_embed.autodiff import ops

        return ops.add(self, other)

    def __sub__(self, other: Any) -> Tensor:
        from abc_embed.autodiff import ops

        return ops.sub(self, other)

    def __mul__(self, other: Any) -> Tensor:
        from abc_embed.autodiff import ops

        if isinstance(other, (int, float)):
            return ops.scalar_mul(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other: Tensor) -> Tensor:
        from abc_embed.autodiff import ops

        return ops.matmul(self, other)

    def __repr__(self) -> str:
        label = self.name or self.op or "const"
        return f"Tensor({label}, shape={self.shape})"


def as_tensor(value: Any) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def topological_order(output: Tensor) -> list[Tensor]:
    """Tracked nodes reachable from ``output``, inputs before consumers."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited or not node.tracked:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node.inputs):
            if parent.tracked and id(parent) not in visited:
                stack.append((parent, False))
    return order


class Graph:
    """Named leaf parameters, each marked trainable or frozen."""

    def __init__(self) -> None:
        self.parameters: dict[str, Tensor] = {}

    def leaf(self, name: str, data: Any, *, trainable: bool = True) -> Tensor:
        if name in self.parameters:
            raise GraphError(f"leaf {name!r} is already bound")
        tensor = Tensor(
            np.array(data, dtype=np.float64, copy=True),
            tracked=True,
            requires_grad=trainable,
            name=name,
            trainable=trainable,
        )
        self.parameters[name] = tensor
        return tensor

    @property
    def trainable(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.parameters.items() if v.trainable}

    @property
    def frozen(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.parameters.items() if not v.trainable}

    def nodes(self, output: Tensor) -> list[Tensor]:
        return topological_order(output)

    def bind(self, values: dict[str, Any]) -> None:
        """Overwrite leaf values in place."""
        for name, value in values.items():
            if name not in self.parameters:
                raise GraphError(f"unknown leaf {name!r}")
            leaf = self.parameters[name]
            array = np.asarray(value, dtype=np.float64)
            if array.shape != leaf.shape:
                raise GraphError(f"leaf {name!r} expects shape {leaf.shape}, got {array.shape}")
            leaf.data = array.copy()

    def forward(self, output: Tensor, inputs: dict[str, Any] | None = None) -> Tensor:
        """Re-evaluate every recorded node feeding ``output``.

        Args:
            output: Node whose value should be recomputed
            inputs: Optional new leaf values, keyed by leaf name

        Returns:
            ``output`` with refreshed data
        """
        from abc_embed.autodiff.ops import PRIMITIVES

        if inputs:
            self.bind(inputs)
        for node in topological_order(output):
            if node.op is None:
                continue
            node.data = PRIMITIVES[node.op].forward(*(x.data for x in node.inputs), **node.attrs)
        return output

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Gradients of a scalar ``loss`` for every reachable trainable leaf.

        Raises:
            GraphError: If ``loss`` is not a scalar
        """
        from abc_embed.autodiff.ops import PRIMITIVES

        if loss.shape != ():
            raise GraphError(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
        for node in reversed(topological_order(loss)):
            g = grads.get(id(node))
            if g is None or node.op is None or not node.requires_grad:
                continue
            input_grads = PRIMITIVES[node.op].vjp(g, node.data, *(x.data for x in node.inputs), **node.attrs)
            for parent, pg in zip(node.inputs, input_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
        return {
            name: grads[id(leaf)]
            for name, leaf in self.parameters.items()
            if leaf.trainable and id(leaf) in grads
        }


def forward(graph: Graph, output: Tensor, inputs: dict[str, Any] | None = None) -> Tensor:
    return graph.forward(output, inputs)


def backward(graph: Graph, loss: Tensor) -> dict[str, np.ndarray]:
    return graph.backward(loss)
