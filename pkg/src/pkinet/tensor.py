"""Dense rank-4 tensors in (batch, channel, height, width) layout.

Tensors are plain C-contiguous numpy arrays; the helpers here enforce the
rank-4 contract and provide the elementwise, pooling and channel-splitting
primitives the rest of the package builds on. Every function is pure.
"""

from __future__ import annotations

import numpy as np

Tensor = np.ndarray

FLOAT64 = np.float64
FLOAT32 = np.float32


class ShapeError(ValueError):
    pass


def tensor(data, dtype=FLOAT64) -> Tensor:
    """Build a validated rank-4 tensor (copying ``data``)."""
    arr = np.array(data, dtype=dtype, order="C")
    check(arr)
    return arr


def zeros(shape, dtype=FLOAT64) -> Tensor:
    return tensor(np.zeros(shape), dtype)


def ones(shape, dtype=FLOAT64) -> Tensor:
    return tensor(np.ones(shape), dtype)


def check(t: Tensor, name: str = "tensor") -> Tensor:
    if not isinstance(t, np.ndarray):
        raise TypeError(f"{name} must be a numpy array, got {type(t).__name__}")
    if t.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (B, C, H, W), got shape {t.shape}")
    if min(t.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension: {t.shape}")
    return t


def flat_index(shape, b: int, c: int, y: int, x: int) -> int:
    _, C, H, W = shape
    return ((b * C + c) * H + y) * W + x


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    check(a, "a")
    check(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def elementwise_add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "elementwise_add")
    return a + b


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "elementwise_mul")
    return a * b


def sigmoid(t: Tensor) -> Tensor:
    # Two-branch form: exp never sees a large positive argument, so no overflow.
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    # Saturated values are clamped into the open interval.
    tiny = np.finfo(t.dtype).tiny
    return np.clip(out, tiny, np.nextafter(t.dtype.type(1), t.dtype.type(0)))


def silu(t: Tensor) -> Tensor:
    return t * sigmoid(t)


def global_avg_pool(t: Tensor) -> Tensor:
    check(t)
    return t.mean(axis=(2, 3), keepdims=True)


def pool_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def avg_pool2d(t: Tensor, k: int, stride: int = 1, pad: int = 0) -> Tensor:
    """k x k mean pooling; padded taps count toward the k*k divisor."""
    check(t)
    if k < 1 or k % 2 == 0:
        raise ValueError(f"avg_pool2d: kernel size must be odd and positive, got {k}")
    if stride < 1 or pad < 0:
        raise ValueError(f"avg_pool2d: bad stride/pad ({stride}, {pad})")
    B, C, H, W = t.shape
    Ho = pool_output_size(H, k, stride, pad)
    Wo = pool_output_size(W, k, stride, pad)
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"avg_pool2d: non-positive output size {(Ho, Wo)} for input {t.shape}")
    tp = np.pad(t, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else t
    acc = np.zeros((B, C, Ho, Wo), dtype=t.dtype)
    for i in range(k):
        for j in range(k):
            acc += tp[:, :, i : i + stride * (Ho - 1) + 1 : stride, j : j + stride * (Wo - 1) + 1 : stride]
    return acc / (k * k)


def channel_split(t: Tensor, at: int) -> tuple[Tensor, Tensor]:
    check(t)
    C = t.shape[1]
    if not 0 < at < C:
        raise ValueError(f"channel_split: split point {at} outside (0, {C})")
    return np.ascontiguousarray(t[:, :at]), np.ascontiguousarray(t[:, at:])


def channel_concat(a: Tensor, b: Tensor) -> Tensor:
    check(a, "a")
    check(b, "b")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ShapeError(f"channel_concat: batch/spatial mismatch {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=1)
