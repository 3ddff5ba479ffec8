"""Reverse-mode automatic differentiation on dense float64 arrays.

Every operation is recorded on a Tape.  backward() walks the records in
reverse append order (which is already a topological order) and accumulates
gradients additively into each leaf tensor that requires them.  Gradient
arrays are never mutated in place, so calling backward twice on the same
tape exactly doubles every leaf gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, ShapeError


@dataclass
class RngState:
    """Seed plus generator family; equal states yield bit-identical streams."""

    seed: int
    algorithm: str = "pcg64"

    def generator(self) -> np.random.Generator:
        if self.algorithm != "pcg64":
            raise ConfigError(f"unknown rng algorithm: {self.algorithm!r}")
        return np.random.Generator(np.random.PCG64(self.seed))


class Tensor:
    """A dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _unbroadcast(grad, shape):
    """Sum `grad` back down to `shape` (the adjoint of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class _Node:
    __slots__ = ("op", "inputs", "output", "rule")

    def __init__(self, op, inputs, output, rule):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.rule = rule


class Tape:
    """Append-only operation record; reverse walk computes gradients."""

    def __init__(self):
        self.nodes = []
        self._produced = set()
        self._leaves = {}

    def _out(self, op, inputs, value, rule):
        out = Tensor(value)
        if any(t.requires_grad for t in inputs):
            out.requires_grad = True
            self.nodes.append(_Node(op, inputs, out, rule))
            self._produced.add(id(out))
            for t in inputs:
                if t.requires_grad and id(t) not in self._produced:
                    self._leaves.setdefault(id(t), t)
        return out

    # ------------------------------------------------------------------
    # primitives
    # ------------------------------------------------------------------

    def matmul(self, a, b):
        if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError("matmul", a.shape, b.shape)
        value = a.data @ b.data

        def rule(g, a=a, b=b):
            return (
                g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None,
            )

        return self._out("matmul", (a, b), value, rule)

    def add(self, a, b):
        try:
            value = a.data + b.data
        except ValueError:
            raise ShapeError("add", a.shape, b.shape) from None

        def rule(g, a=a, b=b):
            return (
                _unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g, b.data.shape) if b.requires_grad else None,
            )

        return self._out("add", (a, b), value, rule)

    def mul(self, a, b):
        try:
            value = a.data * b.data
        except ValueError:
            raise ShapeError("mul", a.shape, b.shape) from None

        def rule(g, a=a, b=b):
            return (
                _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
            )

        return self._out("mul", (a, b), value, rule)

    def scale(self, x, factor):
        factor = float(factor)
        value = x.data * factor

        def rule(g, factor=factor):
            return (g * factor,)

        return self._out("scale", (x,), value, rule)

    def concat(self, parts):
        """Concatenate along the last axis; leading dims must agree."""
        parts = tuple(parts)
        if not parts:
            raise ShapeError("concat")
        if len({p.data.shape[:-1] for p in parts}) != 1:
            raise ShapeError("concat", *[p.shape for p in parts])
        value = np.concatenate([p.data for p in parts], axis=-1)
        splits = np.cumsum([p.shape[-1] for p in parts])[:-1]

        def rule(g, parts=parts, splits=splits):
            pieces = np.split(g, splits, axis=-1)
            return tuple(
                piece if p.requires_grad else None for p, piece in zip(parts, pieces)
            )

        return self._out("concat", parts, value, rule)

    def narrow(self, x, start, size):
        """Slice [start, start+size) along the last axis."""
        if not (0 <= start and size >= 1 and start + size <= x.shape[-1]):
            raise ShapeError("narrow", x.shape, (start, size))
        value = x.data[..., start : start + size]

        def rule(g, x=x, start=start, size=size):
            full = np.zeros(x.data.shape)
            full[..., start : start + size] = g
            return (full,)

        return self._out("narrow", (x,), value, rule)

    def time_step(self, x, t):
        """Select step t along axis 1 of a [batch, steps, width] tensor."""
        if x.data.ndim != 3 or not (0 <= t < x.shape[1]):
            raise ShapeError("time_step", x.shape, (t,))
        value = x.data[:, t, :]

        def rule(g, x=x, t=t):
            full = np.zeros(x.data.shape)
            full[:, t, :] = g
            return (full,)

        return self._out("time_step", (x,), value, rule)

    def reshape(self, x, shape):
        try:
            value = x.data.reshape(shape)
        except ValueError:
            raise ShapeError("reshape", x.shape, shape) from None

        def rule(g, old=x.data.shape):
            return (g.reshape(old),)

        return self._out("reshape", (x,), value, rule)

    def sigmoid(self, x):
        v = x.data
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        out[~pos] = ev / (1.0 + ev)

        def rule(g, out=out):
            return (g * out * (1.0 - out),)

        return self._out("sigmoid", (x,), out, rule)

    def tanh(self, x):
        value = np.tanh(x.data)

        def rule(g, value=value):
            return (g * (1.0 - value * value),)

        return self._out("tanh", (x,), value, rule)

    def softmax(self, x, mask=None):
        """Numerically stable softmax along the last axis.

        With a boolean mask of the same shape, masked-out positions get
        probability exactly 0.0 and the normalization runs over the rest;
        each row must keep at least one unmasked position.
        """
        v = x.data
        if mask is None:
            e = np.exp(v - v.max(axis=-1, keepdims=True))
        else:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != v.shape:
                raise ShapeError("softmax", v.shape, mask.shape)
            m = np.where(mask, v, -np.inf).max(axis=-1, keepdims=True)
            e = np.zeros_like(v)
            np.exp(v - m, out=e, where=mask)
        value = e / e.sum(axis=-1, keepdims=True)

        def rule(g, value=value):
            inner = (g * value).sum(axis=-1, keepdims=True)
            return (value * (g - inner),)

        return self._out("softmax", (x,), value, rule)

    def log(self, x):
        value = np.log(x.data)

        def rule(g, x=x):
            return (g / x.data,)

        return self._out("log", (x,), value, rule)

    def sum(self, x, axis=None):
        value = x.data.sum(axis=axis)

        def rule(g, x=x, axis=axis):
            if axis is None:
                return (np.broadcast_to(g, x.data.shape),)
            return (np.broadcast_to(np.expand_dims(g, axis), x.data.shape),)

        return self._out("sum", (x,), value, rule)

    def pick(self, x, ids):
        """Select one entry along the last axis per leading position."""
        ids = np.asarray(ids)
        last = x.shape[-1]
        flat = x.data.reshape(-1, last)
        idx = ids.reshape(-1)
        if idx.shape[0] != flat.shape[0]:
            raise ShapeError("pick", x.shape, ids.shape)
        rows = np.arange(flat.shape[0])
        value = flat[rows, idx].reshape(ids.shape)

        def rule(g, x=x, rows=rows, idx=idx):
            gf = np.zeros((rows.shape[0], x.shape[-1]))
            gf[rows, idx] = g.reshape(-1)
            return (gf.reshape(x.data.shape),)

        return self._out("pick", (x,), value, rule)

    def embed(self, table, ids):
        """Row lookup into a [vocab, width] table by an integer id array."""
        ids = np.asarray(ids)
        if table.data.ndim != 2:
            raise ShapeError("embed", table.shape, ids.shape)
        value = table.data[ids]

        def rule(g, table=table, ids=ids):
            gt = np.zeros(table.data.shape)
            np.add.at(gt, ids.reshape(-1), g.reshape(-1, g.shape[-1]))
            return (gt,)

        return self._out("embed", (table,), value, rule)

    def grad_reverse(self, x):
        """Identity forward (same underlying array); backward negates."""

        def rule(g):
            return (-g,)

        return self._out("grad_reverse", (x,), x.data, rule)

    def dropout(self, x, rate, rng=None, train=False):
        """Inverted dropout; identity when train is False or rate is 0."""
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        if not train or rate == 0.0:
            return x
        keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
        value = x.data * keep

        def rule(g, keep=keep):
            return (g * keep,)

        return self._out("dropout", (x,), value, rule)

    # ------------------------------------------------------------------
    # backward
    # ------------------------------------------------------------------

    def backward(self, loss):
        """Accumulate d(loss)/d(leaf) into .grad of every requiring leaf.

        Leaves that touched the tape but are unreachable from `loss`
        receive an explicit zero gradient.
        """
        if loss.data.shape != ():
            raise ContractError(
                f"backward needs a scalar loss, got shape {loss.data.shape}"
            )
        grads = {id(loss): np.ones(())}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for t, gt in zip(node.inputs, node.rule(g)):
                if gt is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gt
                else:
                    grads[key] = gt
        for key, leaf in self._leaves.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros(leaf.data.shape)
            leaf.grad = g if leaf.grad is None else leaf.grad + g


@dataclass
class LstmParams:
    """One LSTM direction: input weights, recurrent weights, bias.

    Gate blocks along the last axis are ordered [input, forget, output,
    candidate]; a freshly initialized bias has 1.0 in the forget block.
    """

    wx: Tensor  # [input_dim, 4*hidden]
    wh: Tensor  # [hidden, 4*hidden]
    b: Tensor  # [4*hidden]

    @property
    def hidden_dim(self):
        return self.wh.shape[0]

    def tensors(self):
        return {"wx": self.wx, "wh": self.wh, "b": self.b}


def lstm_cell(tape, x_t, h_prev, c_prev, params):
    """One LSTM step; returns (h_t, c_t), each [batch, hidden]."""
    hd = params.hidden_dim
    if x_t.shape[-1] != params.wx.shape[0] or h_prev.shape[-1] != hd:
        raise ShapeError("lstm_cell", x_t.shape, h_prev.shape)
    pre = tape.add(
        tape.add(tape.matmul(x_t, params.wx), tape.matmul(h_prev, params.wh)),
        params.b,
    )
    gates = tape.sigmoid(tape.narrow(pre, 0, 3 * hd))
    cand = tape.tanh(tape.narrow(pre, 3 * hd, hd))
    i = tape.narrow(gates, 0, hd)
    f = tape.narrow(gates, hd, hd)
    o = tape.narrow(gates, 2 * hd, hd)
    c_t = tape.add(tape.mul(f, c_prev), tape.mul(i, cand))
    h_t = tape.mul(o, tape.tanh(c_t))
    return h_t, c_t
