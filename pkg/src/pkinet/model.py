"""Executable backbone: stem, four cross-stage-partial stages of PKI blocks.

Parameters live in a flat ``{name: array}`` dict whose keys come from the
layer plan (``<layer>.weight``, ``<layer>.bias``, ``<norm>.gamma``,
``<norm>.beta``). Forward functions take an optional ``params`` override so
the same code runs on plain arrays for inference and on tape variables for
training and gradient checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from . import autodiff as ad
from .config import ModelConfig
from .plan import CONV_KINDS, LayerSpec, layer_plan
from .tensor import ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
INIT_STD = 0.02


@dataclass
class ModelGraph:
    cfg: ModelConfig
    layers: list[LayerSpec]
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def stage_channels(self) -> list[int]:
        return list(self.cfg.stage_channels)


def truncated_normal(rng: np.random.Generator, shape, std: float, dtype=np.float64) -> np.ndarray:
    """Normal(0, std) samples redrawn until they fall within two std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(dtype)


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float64, init_std: float = INIT_STD) -> ModelGraph:
    layers = layer_plan(cfg, (1024, 1024))
    _check_chain(layers)
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    for layer in layers:
        if layer.kind in CONV_KINDS:
            params[f"{layer.name}.weight"] = truncated_normal(rng, layer.weight_shape, init_std, dtype)
            if layer.bias:
                params[f"{layer.name}.bias"] = np.zeros(layer.out_channels, dtype=dtype)
        elif layer.kind == "norm":
            params[f"{layer.name}.gamma"] = np.ones(layer.out_channels, dtype=dtype)
            params[f"{layer.name}.beta"] = np.zeros(layer.out_channels, dtype=dtype)
            buffers[f"{layer.name}.running_mean"] = np.zeros(layer.out_channels, dtype=dtype)
            buffers[f"{layer.name}.running_var"] = np.ones(layer.out_channels, dtype=dtype)
    return ModelGraph(cfg, layers, params, buffers)


def _check_chain(layers: list[LayerSpec]) -> None:
    by_name = {layer.name: layer for layer in layers}
    for layer in layers:
        if layer.kind in CONV_KINDS and layer.in_channels % layer.groups:
            raise ShapeError(f"{layer.name}: {layer.in_channels} channels not divisible by {layer.groups} groups")
        if layer.kind == "norm":
            conv = by_name.get(layer.name[: -len(".bn")] + ".conv")
            if conv is not None and conv.out_channels != layer.in_channels:
                raise ShapeError(f"{layer.name}: expects {layer.in_channels} channels, conv emits {conv.out_channels}")


class _Run:
    """Per-call forward state: parameter source, norm mode, optional trace."""

    def __init__(self, graph: ModelGraph, params: Optional[Mapping] = None, train: bool = False,
                 trace: Optional[list] = None):
        self.graph = graph
        self.cfg = graph.cfg
        self.p = graph.params if params is None else params
        self.train = train
        self.trace = trace

    def _log(self, name, out):
        if self.trace is not None:
            self.trace.append((name, ad.value(out).shape))

    def conv(self, name, x, k, stride=1, dilation=1, groups=1):
        pad = dilation * (k[0] - 1) // 2, dilation * (k[1] - 1) // 2
        out = ad.conv2d(x, self.p[f"{name}.weight"], self.p.get(f"{name}.bias"),
                        stride=stride, pad=pad, dilation=dilation, groups=groups)
        self._log(name, out)
        return out

    def norm(self, name, x):
        gamma, beta = self.p[f"{name}.gamma"], self.p[f"{name}.beta"]
        rm = self.graph.buffers[f"{name}.running_mean"]
        rv = self.graph.buffers[f"{name}.running_var"]
        if not self.train:
            return ad.batch_norm(x, gamma, beta, rm, rv, eps=BN_EPS)
        xv = ad.value(x)
        n = xv.shape[0] * xv.shape[2] * xv.shape[3]
        mean = xv.mean(axis=(0, 2, 3))
        var = xv.var(axis=(0, 2, 3)) * (n / max(n - 1, 1))
        rm *= 1 - BN_MOMENTUM
        rm += BN_MOMENTUM * mean
        rv *= 1 - BN_MOMENTUM
        rv += BN_MOMENTUM * var
        return ad.batch_norm(x, gamma, beta, eps=BN_EPS)

    def unit(self, name, x, k=1, stride=1, act=True):
        """conv -> batch norm -> SiLU, as laid out by the plan."""
        x = self.conv(f"{name}.conv", x, (k, k), stride=stride)
        if self.cfg.norm_act:
            x = self.norm(f"{name}.bn", x)
            if act:
                x = ad.silu(x)
        return x


def _run(graph, params, train, trace=None) -> _Run:
    return _Run(graph, params, train, trace)


def pki_module_forward(graph: ModelGraph, stage: int, depth: int, x, *, params=None, train=False, _r=None):
    """Local depthwise conv, parallel depthwise context convs, 1x1 fusion.

    Every context branch reads the local feature (they are not chained):
    ``P = fuse(L + sum_m Z_m)``.
    """
    r = _r or _run(graph, params, train)
    cfg = r.cfg
    if not cfg.pki_kernels:
        raise ValueError("PKI module needs at least one kernel")
    c = ad.value(x).shape[1]
    name = f"stage{stage + 1}.block{depth}.pki"
    k0, d0 = cfg.pki_kernels[0], cfg.dilations[0]
    local = r.conv(f"{name}.local", x, (k0, k0), dilation=d0, groups=c)
    acc = local
    for m, (k, d) in enumerate(zip(cfg.pki_kernels[1:], cfg.dilations[1:]), start=1):
        acc = ad.add(acc, r.conv(f"{name}.branch{m}", local, (k, k), dilation=d, groups=c))
    return r.unit(f"{name}.fuse", acc)


def caa_forward(graph: ModelGraph, stage: int, depth: int, x, p, *, params=None, train=False, _r=None,
                return_attention=False):
    """Context anchor attention: ``(A * P) + P`` with ``A`` from strip convs over pooled ``x``."""
    r = _r or _run(graph, params, train)
    cfg = r.cfg
    if ad.value(x).shape != ad.value(p).shape:
        raise ShapeError(f"CAA input {ad.value(x).shape} and PKI output {ad.value(p).shape} differ")
    c = ad.value(x).shape[1]
    name = f"stage{stage + 1}.block{depth}.caa"
    kb = cfg.caa_kernel_size(stage, depth)
    pooled = ad.avg_pool2d(x, cfg.caa_pool, 1, cfg.caa_pool // 2)
    f = r.unit(f"{name}.pre", pooled)
    f = r.conv(f"{name}.h", f, (1, kb), groups=c)
    f = r.conv(f"{name}.v", f, (kb, 1), groups=c)
    attn = ad.sigmoid(r.unit(f"{name}.post", f, act=False))
    out = ad.add(ad.mul(attn, p), p)
    return (out, attn) if return_attention else out


def pki_block_forward(graph: ModelGraph, stage: int, depth: int, x, *, params=None, train=False, _r=None):
    r = _r or _run(graph, params, train)
    p = pki_module_forward(graph, stage, depth, x, _r=r)
    if r.cfg.caa_stages[stage]:
        p = caa_forward(graph, stage, depth, x, p, _r=r)
    out = r.unit(f"stage{stage + 1}.block{depth}.out", p)
    if r.cfg.block_residual:
        out = ad.add(out, x)
    return out


def stage_forward(graph: ModelGraph, stage: int, f, *, params=None, train=False, _r=None):
    """One stage: downsample, 3x3 conv, split into FFN and PKI-block paths, fuse."""
    r = _r or _run(graph, params, train)
    cfg = r.cfg
    expected = cfg.stage_input_channels(stage)
    if ad.value(f).shape[1] != expected:
        raise ShapeError(f"stage {stage + 1} expects {expected} input channels, got {ad.value(f).shape[1]}")
    name = f"stage{stage + 1}"
    x = r.unit(f"{name}.down", f, k=3, stride=2)
    x = r.unit(f"{name}.conv", x, k=3)
    if cfg.csp:
        half = cfg.stage_channels[stage] // 2
        x1, x2 = ad.channel_split(x, half)
        x1 = r.unit(f"{name}.ffn.project", r.unit(f"{name}.ffn.expand", x1), act=False)
    else:
        x2 = x
    for n in range(cfg.blocks[stage]):
        x2 = pki_block_forward(graph, stage, n, x2, _r=r)
    merged = ad.channel_concat(x1, x2) if cfg.csp else x2
    return r.unit(f"{name}.fuse", merged)


def stem_forward(graph: ModelGraph, image, *, params=None, train=False, _r=None):
    r = _r or _run(graph, params, train)
    x = r.unit("stem.0", image, k=3, stride=2)
    x = r.unit("stem.1", x, k=3)
    return r.unit("stem.2", x, k=3)


def backbone_forward(graph: ModelGraph, image, *, params=None, train=False, trace=None) -> list:
    """Run the whole backbone; returns the four stage outputs."""
    shape = ad.value(image).shape
    if len(shape) != 4 or shape[1] != graph.cfg.in_channels:
        raise ShapeError(f"image must be (B, {graph.cfg.in_channels}, H, W), got {shape}")
    if shape[2] % 32 or shape[3] % 32:
        raise ShapeError(f"image height and width must be divisible by 32, got {shape[2]}x{shape[3]}")
    r = _run(graph, params, train, trace)
    x = stem_forward(graph, image, _r=r)
    outs = []
    for s in range(4):
        x = stage_forward(graph, s, x, _r=r)
        outs.append(x)
    return outs
