"""Direct 2D convolution: dense, grouped, depthwise, dilated, pointwise, strip.

The reference path accumulates one kernel tap at a time over a zero-padded
view of the input, which keeps the summation order fixed (row-major over
taps) and therefore makes results reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .tensor import ShapeError, Tensor, check


@dataclass
class ConvKernel:
    weight: np.ndarray  # (out, in // groups, kh, kw)
    bias: Optional[np.ndarray] = None
    stride: int = 1
    pad: tuple[int, int] = (0, 0)
    dilation: int = 1
    groups: int = 1
    in_channels: int = field(init=False)

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ShapeError(f"conv weight must be rank 4, got {self.weight.shape}")
        if isinstance(self.pad, int):
            self.pad = (self.pad, self.pad)
        self.pad = tuple(int(p) for p in self.pad)
        out_c, cin_g = self.weight.shape[:2]
        self.in_channels = cin_g * self.groups
        if self.groups < 1 or out_c % self.groups:
            raise ValueError(f"out_channels {out_c} not divisible by groups {self.groups}")
        if self.bias is not None and self.bias.shape != (out_c,):
            raise ShapeError(f"bias shape {self.bias.shape} does not match out_channels {out_c}")
        if self.stride < 1 or self.dilation < 1 or min(self.pad) < 0:
            raise ValueError("stride and dilation must be >= 1, padding >= 0")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel_size(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]

    @property
    def is_depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels

    @property
    def is_strip(self) -> bool:
        kh, kw = self.kernel_size
        return self.is_depthwise and ((kh == 1) != (kw == 1))

    def num_params(self) -> int:
        n = self.weight.size
        return n + (self.bias.size if self.bias is not None else 0)


def same_pad(k: int, dilation: int = 1) -> int:
    return dilation * (k - 1) // 2


def output_size(size: int, k: int, stride: int, pad: int, dilation: int) -> int:
    return (size + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def output_shape(input_shape, kernel: ConvKernel) -> tuple[int, int, int, int]:
    B, C, H, W = input_shape
    if C != kernel.in_channels:
        raise ShapeError(f"input has {C} channels, kernel expects {kernel.in_channels}")
    kh, kw = kernel.kernel_size
    Ho = output_size(H, kh, kernel.stride, kernel.pad[0], kernel.dilation)
    Wo = output_size(W, kw, kernel.stride, kernel.pad[1], kernel.dilation)
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"convolution output would be {Ho}x{Wo} for input {H}x{W}")
    return B, kernel.out_channels, Ho, Wo


def pad_input(x: Tensor, pad: tuple[int, int]) -> Tensor:
    ph, pw = pad
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def tap_slice(i: int, j: int, kernel: ConvKernel, Ho: int, Wo: int):
    """Index into the padded input read by tap (i, j) for every output pixel."""
    s, d = kernel.stride, kernel.dilation
    return (
        slice(None),
        slice(None),
        slice(i * d, i * d + s * (Ho - 1) + 1, s),
        slice(j * d, j * d + s * (Wo - 1) + 1, s),
    )


def conv2d(x: Tensor, kernel: ConvKernel, general: bool = False) -> Tensor:
    """Convolve ``x`` with ``kernel``.

    Out-of-bounds taps read as zero. Depthwise kernels take a dedicated
    elementwise path unless ``general`` forces the grouped einsum path.
    """
    check(x, "input")
    B, O, Ho, Wo = output_shape(x.shape, kernel)
    if kernel.is_depthwise and not general:
        return _depthwise(x, kernel, Ho, Wo)
    return _grouped(x, kernel, Ho, Wo)


def _grouped(x: Tensor, kernel: ConvKernel, Ho: int, Wo: int) -> Tensor:
    B = x.shape[0]
    G = kernel.groups
    O = kernel.out_channels
    cin_g = kernel.weight.shape[1]
    xp = pad_input(x, kernel.pad)
    w = kernel.weight.reshape(G, O // G, cin_g, *kernel.kernel_size)
    out = np.zeros((B, G, O // G, Ho * Wo), dtype=np.result_type(x, kernel.weight))
    kh, kw = kernel.kernel_size
    for i in range(kh):
        for j in range(kw):
            patch = xp[tap_slice(i, j, kernel, Ho, Wo)].reshape(B, G, cin_g, Ho * Wo)
            out += np.matmul(w[None, :, :, :, i, j], patch)
    out = out.reshape(B, O, Ho, Wo)
    if kernel.bias is not None:
        out += kernel.bias[None, :, None, None]
    return out


def _depthwise(x: Tensor, kernel: ConvKernel, Ho: int, Wo: int) -> Tensor:
    B, C = x.shape[:2]
    xp = pad_input(x, kernel.pad)
    w = kernel.weight[:, 0]
    out = np.zeros((B, C, Ho, Wo), dtype=np.result_type(x, kernel.weight))
    kh, kw = kernel.kernel_size
    for i in range(kh):
        for j in range(kw):
            out += w[None, :, i, j, None, None] * xp[tap_slice(i, j, kernel, Ho, Wo)]
    if kernel.bias is not None:
        out += kernel.bias[None, :, None, None]
    return out


def pointwise(x: Tensor, kernel: ConvKernel) -> Tensor:
    if kernel.kernel_size != (1, 1) or kernel.groups != 1:
        raise ValueError(f"pointwise needs a 1x1 dense kernel, got {kernel.kernel_size} groups={kernel.groups}")
    return conv2d(x, kernel)


def strip_pair(x: Tensor, horiz: ConvKernel, vert: ConvKernel) -> Tensor:
    """Horizontal 1 x k then vertical k x 1 depthwise convolution."""
    if not (horiz.is_strip and vert.is_strip):
        raise ValueError("strip_pair needs two depthwise strip kernels")
    k = horiz.kernel_size[1]
    if horiz.kernel_size != (1, k) or vert.kernel_size != (k, 1):
        raise ValueError(f"strip_pair needs 1x{k} then {k}x1, got {horiz.kernel_size} and {vert.kernel_size}")
    if horiz.out_channels != vert.in_channels:
        raise ShapeError("strip_pair kernels disagree on channel count")
    return conv2d(conv2d(x, horiz), vert)


def depthwise_kernel(weight: np.ndarray, bias=None, dilation: int = 1, pad=None) -> ConvKernel:
    """Depthwise kernel with 'same' padding unless ``pad`` is given."""
    C, _, kh, kw = weight.shape
    if pad is None:
        pad = (same_pad(kh, dilation), same_pad(kw, dilation))
    return ConvKernel(weight, bias, stride=1, pad=pad, dilation=dilation, groups=C)


def conv2d_backward(x: Tensor, kernel: ConvKernel, grad_out: Tensor):
    """Gradients of conv2d w.r.t. input, weight and bias (None if no bias)."""
    B, C, H, W = x.shape
    _, O, Ho, Wo = grad_out.shape
    kh, kw = kernel.kernel_size
    ph, pw = kernel.pad
    xp = pad_input(x, kernel.pad)
    gxp = np.zeros_like(xp, dtype=np.result_type(x, grad_out))
    gw = np.zeros_like(kernel.weight, dtype=np.result_type(kernel.weight, grad_out))
    if kernel.is_depthwise:
        w = kernel.weight[:, 0]
        for i in range(kh):
            for j in range(kw):
                sl = tap_slice(i, j, kernel, Ho, Wo)
                gxp[sl] += w[None, :, i, j, None, None] * grad_out
                gw[:, 0, i, j] = np.einsum("bcyx,bcyx->c", grad_out, xp[sl])
    else:
        G = kernel.groups
        cin_g = kernel.weight.shape[1]
        w = kernel.weight.reshape(G, O // G, cin_g, kh, kw)
        g = grad_out.reshape(B, G, O // G, Ho * Wo)
        gwg = gw.reshape(G, O // G, cin_g, kh, kw)
        for i in range(kh):
            for j in range(kw):
                sl = tap_slice(i, j, kernel, Ho, Wo)
                wt = np.swapaxes(w[:, :, :, i, j], 1, 2)[None]
                gxp[sl] += np.matmul(wt, g).reshape(B, C, Ho, Wo)
                patch = xp[sl].reshape(B, G, cin_g, Ho * Wo)
                gwg[:, :, :, i, j] = np.matmul(g, np.swapaxes(patch, 2, 3)).sum(axis=0)
    gx = gxp[:, :, ph : ph + H, pw : pw + W]
    gb = grad_out.sum(axis=(0, 2, 3)) if kernel.bias is not None else None
    return np.ascontiguousarray(gx), gw, gb
