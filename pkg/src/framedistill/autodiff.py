"""Minimal dense-tensor reverse-mode automatic differentiation.

A :class:`Graph` is an append-only tape of primitive applications; insertion
order is the topological order, and :func:`backward` walks it once in
reverse, accumulating gradients additively across fan-out. Tensors hold
float64 data (row-major), an optional gradient of the same size, and a
``requires_grad`` flag that taints downstream outputs.

Scalars are tensors of shape (1,). All primitives validate operand shapes up
front and raise ``ValueError`` naming the op and the offending shapes.

Dropout masks are drawn from the counter-based generator in :mod:`rng`,
seeded per op from (graph seed, node index), so a rebuilt graph with the same
seed reproduces the same masks bit for bit.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .rng import SplitMix64, derive


class Tensor:
    """Dense float64 value, optionally a differentiable graph node."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(d <= 0 for d in arr.shape):
            raise ValueError(f"tensor shape {arr.shape} has a non-positive extent")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def detach(t: Tensor) -> Tensor:
    """Copy of t's value severed from any graph (stop-gradient)."""
    return Tensor(t.data.copy())


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class _Node:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Graph:
    """Append-only tape of primitive ops; insertion order is topological."""

    def __init__(self, seed: int = 0):
        self.nodes: list[_Node] = []
        self.seed = seed

    def _record(self, op, inputs, out_data, backward) -> Tensor:
        out = Tensor(out_data)
        out.requires_grad = any(t.requires_grad for t in inputs)
        self.nodes.append(_Node(op, inputs, out, backward))
        return out

    # -- binary elementwise (numpy broadcasting over leading axes) --

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        try:
            data = a.data + b.data
        except ValueError:
            raise ValueError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
        return self._record(
            "add",
            (a, b),
            data,
            lambda g: (
                _accumulate(a, _unbroadcast(g, a.shape)),
                _accumulate(b, _unbroadcast(g, b.shape)),
            ),
        )

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        try:
            data = a.data - b.data
        except ValueError:
            raise ValueError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")
        return self._record(
            "sub",
            (a, b),
            data,
            lambda g: (
                _accumulate(a, _unbroadcast(g, a.shape)),
                _accumulate(b, -_unbroadcast(g, b.shape)),
            ),
        )

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        try:
            data = a.data * b.data
        except ValueError:
            raise ValueError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
        return self._record(
            "mul",
            (a, b),
            data,
            lambda g: (
                _accumulate(a, _unbroadcast(g * b.data, a.shape)),
                _accumulate(b, _unbroadcast(g * a.data, b.shape)),
            ),
        )

    def scale(self, a: Tensor, alpha: float) -> Tensor:
        alpha = float(alpha)
        return self._record(
            "scale", (a,), a.data * alpha, lambda g: _accumulate(a, g * alpha)
        )

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
            raise ValueError(f"matmul: rank must be 1 or 2, got {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[0]:
            raise ValueError(f"matmul: inner dims differ for {a.shape} @ {b.shape}")
        data = a.data @ b.data

        def back(g):
            if a.data.ndim == 2 and b.data.ndim == 2:
                _accumulate(a, g @ b.data.T)
                _accumulate(b, a.data.T @ g)
            elif a.data.ndim == 1 and b.data.ndim == 2:
                _accumulate(a, g @ b.data.T)
                _accumulate(b, np.outer(a.data, g))
            elif a.data.ndim == 2 and b.data.ndim == 1:
                _accumulate(a, np.outer(g, b.data))
                _accumulate(b, a.data.T @ g)
            else:
                _accumulate(a, g * b.data)
                _accumulate(b, g * a.data)

        if a.data.ndim == 1 and b.data.ndim == 1:
            data = np.array([data])
        return self._record("matmul", (a, b), data, back)

    # -- unary --

    def sigmoid(self, a: Tensor) -> Tensor:
        s = 1.0 / (1.0 + np.exp(-a.data))
        return self._record(
            "sigmoid", (a,), s, lambda g: _accumulate(a, g * s * (1.0 - s))
        )

    def tanh(self, a: Tensor) -> Tensor:
        t = np.tanh(a.data)
        return self._record("tanh", (a,), t, lambda g: _accumulate(a, g * (1.0 - t * t)))

    def relu(self, a: Tensor) -> Tensor:
        mask = a.data > 0
        return self._record(
            "relu", (a,), a.data * mask, lambda g: _accumulate(a, g * mask)
        )

    def log(self, a: Tensor) -> Tensor:
        if np.any(a.data <= 0):
            raise ValueError("log: non-positive input rejected")
        return self._record("log", (a,), np.log(a.data), lambda g: _accumulate(a, g / a.data))

    def clip(self, a: Tensor, lo: float, hi: float) -> Tensor:
        data = np.clip(a.data, lo, hi)
        mask = (a.data > lo) & (a.data < hi)
        return self._record("clip", (a,), data, lambda g: _accumulate(a, g * mask))

    def rsqrt(self, a: Tensor, eps: float = 0.0) -> Tensor:
        base = a.data + eps
        if np.any(base <= 0):
            raise ValueError("rsqrt: input + eps must be positive")
        out = 1.0 / np.sqrt(base)
        return self._record(
            "rsqrt", (a,), out, lambda g: _accumulate(a, -0.5 * g * out / base)
        )

    def softmax(self, a: Tensor) -> Tensor:
        """Softmax over the last axis, max-subtracted for stability."""
        shifted = a.data - a.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        s = e / e.sum(axis=-1, keepdims=True)

        def back(g):
            dot = (g * s).sum(axis=-1, keepdims=True)
            _accumulate(a, (g - dot) * s)

        return self._record("softmax", (a,), s, back)

    # -- shape ops --

    def reshape(self, a: Tensor, shape: tuple) -> Tensor:
        shape = tuple(int(d) for d in shape)
        if int(np.prod(shape)) != a.size:
            raise ValueError(f"reshape: {a.shape} has {a.size} elements, target {shape}")
        return self._record(
            "reshape",
            (a,),
            a.data.reshape(shape),
            lambda g: _accumulate(a, g.reshape(a.shape)),
        )

    def transpose(self, a: Tensor) -> Tensor:
        if a.data.ndim != 2:
            raise ValueError(f"transpose: need rank 2, got shape {a.shape}")
        return self._record(
            "transpose", (a,), a.data.T.copy(), lambda g: _accumulate(a, g.T)
        )

    def slice(self, a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
        if not (0 <= axis < a.data.ndim):
            raise ValueError(f"slice: axis {axis} out of range for shape {a.shape}")
        if not (0 <= start < stop <= a.shape[axis]):
            raise ValueError(
                f"slice: range [{start}, {stop}) invalid for axis {axis} of {a.shape}"
            )
        key = tuple(
            slice(start, stop) if ax == axis else slice(None)
            for ax in range(a.data.ndim)
        )

        def back(g):
            if not a.requires_grad:
                return
            full = np.zeros_like(a.data)
            full[key] = g
            _accumulate(a, full)

        return self._record("slice", (a,), a.data[key].copy(), back)

    def concat(self, tensors: list) -> Tensor:
        """Concatenate along the last axis."""
        if not tensors:
            raise ValueError("concat: empty input list")
        lead = tensors[0].shape[:-1]
        for t in tensors:
            if t.shape[:-1] != lead:
                raise ValueError(
                    f"concat: leading dims differ: {tensors[0].shape} vs {t.shape}"
                )
        widths = [t.shape[-1] for t in tensors]
        offsets = np.cumsum([0] + widths)

        def back(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                _accumulate(t, g[..., lo:hi])

        return self._record(
            "concat",
            tuple(tensors),
            np.concatenate([t.data for t in tensors], axis=-1),
            back,
        )

    def stack_rows(self, tensors: list) -> Tensor:
        """Stack equal-length vectors into a matrix (one per row)."""
        if not tensors:
            raise ValueError("stack_rows: empty input list")
        width = tensors[0].size
        for t in tensors:
            if t.data.ndim != 1 or t.size != width:
                raise ValueError(
                    f"stack_rows: need 1-d tensors of width {width}, got {t.shape}"
                )

        def back(g):
            for i, t in enumerate(tensors):
                _accumulate(t, g[i])

        return self._record(
            "stack_rows",
            tuple(tensors),
            np.stack([t.data for t in tensors], axis=0),
            back,
        )

    # -- reductions --

    def sum(self, a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
        if axis is not None and a.data.ndim == 1:
            axis = None
        if axis is None:
            data = np.array([a.data.sum()])
            back = lambda g: _accumulate(a, np.full_like(a.data, g[0]))
        else:
            data = a.data.sum(axis=axis, keepdims=keepdims)

            def back(g):
                gg = g if keepdims else np.expand_dims(g, axis)
                _accumulate(a, np.broadcast_to(gg, a.shape).copy())

        return self._record("sum", (a,), data, back)

    def mean(self, a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
        if axis is not None and a.data.ndim == 1:
            axis = None
        n = a.size if axis is None else a.shape[axis]
        if axis is None:
            data = np.array([a.data.mean()])
            back = lambda g: _accumulate(a, np.full_like(a.data, g[0] / n))
        else:
            data = a.data.mean(axis=axis, keepdims=keepdims)

            def back(g):
                gg = g if keepdims else np.expand_dims(g, axis)
                _accumulate(a, np.broadcast_to(gg / n, a.shape).copy())

        return self._record("mean", (a,), data, back)

    def squared_error(self, a: Tensor, b: Tensor) -> Tensor:
        """Sum of squared differences, reduced to a scalar."""
        if a.shape != b.shape:
            raise ValueError(f"squared_error: shapes {a.shape} vs {b.shape} differ")
        diff = a.data - b.data

        def back(g):
            _accumulate(a, 2.0 * g[0] * diff)
            _accumulate(b, -2.0 * g[0] * diff)

        return self._record(
            "squared_error", (a, b), np.array([(diff * diff).sum()]), back
        )

    # -- stochastic / fused --

    def dropout(self, a: Tensor, rate: float, train: bool) -> Tensor:
        if not (0.0 <= rate < 1.0):
            raise ValueError(f"dropout: rate {rate} outside [0, 1)")
        if not train or rate == 0.0:
            return self._record(
                "dropout", (a,), a.data.copy(), lambda g: _accumulate(a, g)
            )
        gen = SplitMix64(derive(self.seed, "dropout", len(self.nodes)))
        keep = (gen.uniforms(a.size) >= rate).reshape(a.shape)
        scale = 1.0 / (1.0 - rate)
        return self._record(
            "dropout",
            (a,),
            a.data * keep * scale,
            lambda g: _accumulate(a, g * keep * scale),
        )

    def lstm(self, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
        """One LSTM layer over all timesteps of x; returns hidden states [T, H]."""
        if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
            raise ValueError(
                f"lstm: need x [T,D], w [D+H,4H], b [4H]; got {x.shape}, {w.shape}, {b.shape}"
            )
        if w.shape[1] % 4 != 0:
            raise ValueError(f"lstm: weight last dim {w.shape[1]} not divisible by 4")
        h_dim = w.shape[1] // 4
        if w.shape[0] != x.shape[1] + h_dim or b.shape[0] != 4 * h_dim:
            raise ValueError(
                f"lstm: inconsistent shapes x {x.shape}, w {w.shape}, b {b.shape}"
            )
        hs, acts, cs = kernels.lstm_forward(x.data, w.data, b.data)

        def back(g):
            dx, dw, db = kernels.lstm_backward(x.data, w.data, hs, acts, cs, g)
            _accumulate(x, dx)
            _accumulate(w, dw)
            _accumulate(b, db)

        return self._record("lstm", (x, w, b), hs, back)

    def apply(self, kind: str, *args, **kwargs) -> Tensor:
        """Dispatch a primitive by name (the generic forward surface)."""
        try:
            fn = getattr(self, kind)
        except AttributeError:
            raise ValueError(f"unknown primitive kind {kind!r}")
        return fn(*args, **kwargs)


def backward(graph: Graph, loss: Tensor) -> None:
    """Populate gradients of every requires_grad tensor reachable from loss."""
    if loss.shape != (1,):
        raise ValueError(f"backward: loss must be a scalar of shape (1,), got {loss.shape}")
    if loss.grad is None:
        loss.grad = np.ones(1)
    for node in reversed(graph.nodes):
        out = node.output
        if out.requires_grad and out.grad is not None:
            node.backward(out.grad)
    for node in graph.nodes:
        for t in node.inputs:
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)


def grad_check(f, params: list, eps: float = 1e-5) -> float:
    """Max relative error between autodiff and central finite differences.

    ``f(graph, params)`` must build and return a scalar loss tensor and be
    deterministic (dropout off or seed-fixed). Relative error per entry uses
    the denominator max(|analytic|, |numeric|, 1e-8).
    """
    if not (0.0 < eps <= 1e-2):
        raise ValueError(f"grad_check: eps {eps} outside (0, 1e-2]")
    g = Graph()
    loss = f(g, params)
    if loss.shape != (1,) or not np.isfinite(loss.data[0]):
        raise ValueError("grad_check: f must return a finite scalar")
    backward(g, loss)
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]
    for p in params:
        p.zero_grad()
    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        an_flat = an.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = f(Graph(), params).data[0]
            flat[idx] = orig - eps
            down = f(Graph(), params).data[0]
            flat[idx] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise ValueError("grad_check: non-finite loss under perturbation")
            numeric = (up - down) / (2.0 * eps)
            err = abs(an_flat[idx] - numeric) / max(abs(an_flat[idx]), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
