"""Reverse-mode differentiation over the tensor and convolution primitives.

Values flowing through a computation are either plain numpy arrays or
:class:`Var` handles living on a :class:`Tape`. Every op in this module
accepts both; when none of its inputs is a ``Var`` it simply returns the
forward value, so model code is written once and runs with or without
gradient recording.

>>> tape = Tape()
>>> x = tape.var(np.zeros((1, 1, 2, 2)))
>>> loss = total(sigmoid(x))
>>> tape.backward(loss)[x][0, 0]
array([[0.25, 0.25],
       [0.25, 0.25]])
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import conv as _conv
from . import tensor as _t

log = logging.getLogger(__name__)


class Var:
    __slots__ = ("value", "tape", "index", "name")

    def __init__(self, value: np.ndarray, tape: "Tape", index: int, name: Optional[str] = None):
        self.value = value
        self.tape = tape
        self.index = index
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Var{label}(shape={self.value.shape}, node={self.index})"


@dataclass
class Node:
    op: str
    parents: list
    vjp: Optional[Callable]  # grad_out -> list of parent grads (None where not a Var)


@dataclass
class Tape:
    nodes: list[Node] = field(default_factory=list)
    vars: list[Var] = field(default_factory=list)

    def var(self, value, name: Optional[str] = None) -> Var:
        """Register a leaf (input or parameter)."""
        return self._push("leaf", np.asarray(value), [], None, name)

    def record(self, op: str, value, parents, vjp) -> Var:
        return self._push(op, value, list(parents), vjp, None)

    def _push(self, op, value, parents, vjp, name) -> Var:
        v = Var(value, self, len(self.nodes), name)
        self.nodes.append(Node(op, parents, vjp))
        self.vars.append(v)
        return v

    def backward(self, loss: Var) -> dict[Var, np.ndarray]:
        """Propagate d(loss)/d(node) back through the tape.

        Returns a mapping from every ``Var`` reachable from ``loss`` to its
        gradient, which always has the shape of the ``Var``'s value.
        """
        if not isinstance(loss, Var) or loss.tape is not self:
            raise ValueError("loss is not a variable recorded on this tape")
        if loss.value.size != 1:
            raise ValueError(f"loss must hold exactly one element, got shape {loss.value.shape}")
        grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
        for idx in range(loss.index, -1, -1):
            g = grads.get(idx)
            node = self.nodes[idx]
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if not isinstance(parent, Var) or pg is None:
                    continue
                if parent.index in grads:
                    grads[parent.index] = grads[parent.index] + pg
                else:
                    grads[parent.index] = pg
        return {self.vars[i]: g for i, g in grads.items()}


def value(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(inputs) -> Optional[Tape]:
    for x in inputs:
        if isinstance(x, Var):
            return x.tape
    return None


def _emit(op: str, out, inputs, vjp):
    tape = _tape_of(inputs)
    if tape is None:
        return out
    return tape.record(op, out, inputs, vjp)


def add(a, b):
    out = _t.elementwise_add(value(a), value(b))
    return _emit("add", out, [a, b], lambda g: [g, g])


def mul(a, b):
    av, bv = value(a), value(b)
    out = _t.elementwise_mul(av, bv)
    return _emit("mul", out, [a, b], lambda g: [g * bv, g * av])


def add_n(*xs):
    out = xs[0]
    for x in xs[1:]:
        out = add(out, x)
    return out


def sigmoid(x):
    s = _t.sigmoid(value(x))
    return _emit("sigmoid", s, [x], lambda g: [g * s * (1.0 - s)])


def silu(x):
    xv = value(x)
    s = _t.sigmoid(xv)
    out = xv * s
    return _emit("silu", out, [x], lambda g: [g * (s + xv * s * (1.0 - s))])


def global_avg_pool(x):
    xv = value(x)
    out = _t.global_avg_pool(xv)
    H, W = xv.shape[2:]
    return _emit("global_avg_pool", out, [x], lambda g: [np.broadcast_to(g / (H * W), xv.shape).copy()])


def avg_pool2d(x, k: int, stride: int = 1, pad: int = 0):
    xv = value(x)
    out = _t.avg_pool2d(xv, k, stride, pad)

    def vjp(g):
        Ho, Wo = g.shape[2:]
        gp = np.zeros((xv.shape[0], xv.shape[1], xv.shape[2] + 2 * pad, xv.shape[3] + 2 * pad), dtype=g.dtype)
        share = g / (k * k)
        for i in range(k):
            for j in range(k):
                gp[:, :, i : i + stride * (Ho - 1) + 1 : stride, j : j + stride * (Wo - 1) + 1 : stride] += share
        return [np.ascontiguousarray(gp[:, :, pad : pad + xv.shape[2], pad : pad + xv.shape[3]])]

    return _emit("avg_pool2d", out, [x], vjp)


def channel_split(x, at: int):
    xv = value(x)
    first, second = _t.channel_split(xv, at)

    def vjp_first(g):
        full = np.zeros_like(xv, dtype=g.dtype)
        full[:, :at] = g
        return [full]

    def vjp_second(g):
        full = np.zeros_like(xv, dtype=g.dtype)
        full[:, at:] = g
        return [full]

    return _emit("split_lo", first, [x], vjp_first), _emit("split_hi", second, [x], vjp_second)


def channel_concat(a, b):
    av = value(a)
    out = _t.channel_concat(av, value(b))
    ca = av.shape[1]
    return _emit("concat", out, [a, b], lambda g: [np.ascontiguousarray(g[:, :ca]), np.ascontiguousarray(g[:, ca:])])


def conv2d(x, weight, bias=None, stride: int = 1, pad=(0, 0), dilation: int = 1, groups: int = 1):
    xv, wv = value(x), value(weight)
    bv = value(bias) if bias is not None else None
    kernel = _conv.ConvKernel(wv, bv, stride=stride, pad=pad, dilation=dilation, groups=groups)
    out = _conv.conv2d(xv, kernel)

    def vjp(g):
        gx, gw, gb = _conv.conv2d_backward(xv, kernel, g)
        return [gx, gw, gb]

    inputs = [x, weight] if bias is None else [x, weight, bias]
    return _emit("conv2d", out, inputs, vjp)


def batch_norm(x, gamma, beta, running_mean=None, running_var=None, eps: float = 1e-5):
    """Per-channel normalization.

    With running statistics given this is a fixed affine map (inference);
    otherwise the batch statistics over (B, H, W) are used and differentiated.
    """
    xv, gv, bv = value(x), value(gamma), value(beta)
    shape = (1, -1, 1, 1)
    if running_mean is not None:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (xv - running_mean.reshape(shape)) * inv.reshape(shape)
        out = xhat * gv.reshape(shape) + bv.reshape(shape)

        def vjp(g):
            return [g * (gv * inv).reshape(shape), (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))]

        return _emit("batch_norm_eval", out, [x, gamma, beta], vjp)

    mean = xv.mean(axis=(0, 2, 3), keepdims=True)
    var = xv.var(axis=(0, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mean) * inv
    out = xhat * gv.reshape(shape) + bv.reshape(shape)
    n = xv.shape[0] * xv.shape[2] * xv.shape[3]

    def vjp_train(g):
        dxhat = g * gv.reshape(shape)
        dx = inv / n * (n * dxhat - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
        return [dx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))]

    return _emit("batch_norm", out, [x, gamma, beta], vjp_train)


def total(x):
    xv = value(x)
    out = np.asarray(xv.sum())
    return _emit("sum", out, [x], lambda g: [np.full_like(xv, g)])


def sum_scalars(*xs):
    """Sum of 0-d values, e.g. several losses."""
    out = np.asarray(sum(float(value(x)) for x in xs))
    return _emit("sum_scalars", out, list(xs), lambda g: [g for _ in xs])


def scale(x, alpha: float):
    out = value(x) * alpha
    return _emit("scale", out, [x], lambda g: [g * alpha])


def softmax_cross_entropy(logits, labels: Sequence[int]):
    """Mean cross-entropy of (B, K, 1, 1) logits against integer labels."""
    z = value(logits).reshape(value(logits).shape[0], -1)
    labels = np.asarray(labels)
    B = z.shape[0]
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = np.asarray(-logp[np.arange(B), labels].mean())

    def vjp(g):
        p = np.exp(logp)
        p[np.arange(B), labels] -= 1.0
        return [(g * p / B).reshape(value(logits).shape)]

    return _emit("cross_entropy", out, [logits], vjp)


def gradcheck(
    fn: Callable,
    inputs: Sequence[np.ndarray],
    h: float = 1e-5,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Largest |analytic - central difference| / max(1, |analytic|).

    ``fn`` maps a list of inputs (arrays or Vars) to a scalar. With
    ``max_coords`` set, that many coordinates per input are sampled instead
    of sweeping all of them. Returns ``inf`` if anything is non-finite.
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    tape = Tape()
    vs = [tape.var(x) for x in inputs]
    out = fn(vs)
    grads = tape.backward(out)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k, x in enumerate(inputs):
        analytic = grads.get(vs[k], np.zeros_like(x))
        flat = x.reshape(-1)
        if max_coords is None or max_coords >= flat.size:
            coords = range(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            fp = float(fn(inputs))
            flat[c] = orig - h
            fm = float(fn(inputs))
            flat[c] = orig
            numeric = (fp - fm) / (2 * h)
            a = float(analytic.reshape(-1)[c])
            if not (math.isfinite(numeric) and math.isfinite(a)):
                log.warning("gradcheck: non-finite value at input %d coordinate %d", k, c)
                return math.inf
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
