"""Declarative layer inventory of a backbone.

:func:`layer_plan` lists every layer the backbone executes, in execution
order, with its channel counts, kernel geometry and spatial sizes at a
given input resolution. The live model allocates its parameters from this
list, so the static cost model and the runnable network cannot drift.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import ModelConfig

CONV_KINDS = ("conv", "pointwise", "depthwise", "strip")
KINDS = CONV_KINDS + ("pool", "norm", "activation", "elementwise")


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    in_channels: int
    out_channels: int
    in_hw: tuple[int, int]
    out_hw: tuple[int, int]
    kernel: tuple[int, int] = (1, 1)
    stride: int = 1
    dilation: int = 1
    groups: int = 1
    bias: bool = True

    @property
    def params(self) -> int:
        if self.kind in CONV_KINDS:
            kh, kw = self.kernel
            n = (self.in_channels // self.groups) * self.out_channels * kh * kw
            return n + (self.out_channels if self.bias else 0)
        if self.kind == "norm":
            return 2 * self.out_channels
        return 0

    @property
    def flops(self) -> int:
        """Multiply-accumulates for convolutions, one op per output element otherwise."""
        h, w = self.out_hw
        if self.kind in CONV_KINDS:
            kh, kw = self.kernel
            return h * w * self.out_channels * (self.in_channels // self.groups) * kh * kw
        return h * w * self.out_channels

    @property
    def pad(self) -> tuple[int, int]:
        kh, kw = self.kernel
        return self.dilation * (kh - 1) // 2, self.dilation * (kw - 1) // 2

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, *self.kernel)


def _down(hw, stride):
    # 3x3 conv, pad 1
    return tuple((s + 2 - 3) // stride + 1 for s in hw)


class _Planner:
    def __init__(self, norm_act: bool = True):
        self.norm_act = norm_act
        self.layers: list[LayerSpec] = []

    def add(self, name, kind, cin, cout, hw, out_hw=None, **kw) -> tuple[int, int]:
        out_hw = out_hw or hw
        self.layers.append(LayerSpec(name, kind, cin, cout, tuple(hw), tuple(out_hw), **kw))
        return out_hw

    def conv_unit(self, name, cin, cout, hw, k=1, stride=1, act=True):
        """conv + batch norm (+ SiLU)."""
        out_hw = _down(hw, stride) if k == 3 else hw
        kind = "pointwise" if k == 1 else "conv"
        self.add(f"{name}.conv", kind, cin, cout, hw, out_hw, kernel=(k, k), stride=stride)
        if not self.norm_act:
            return out_hw
        self.add(f"{name}.bn", "norm", cout, cout, out_hw)
        if act:
            self.add(f"{name}.act", "activation", cout, cout, out_hw)
        return out_hw


def layer_plan(cfg: ModelConfig, hw: tuple[int, int] = (1024, 1024)) -> list[LayerSpec]:
    p = _Planner(cfg.norm_act)
    w0, w1, w2 = cfg.stem_widths
    hw = p.conv_unit("stem.0", cfg.in_channels, w0, hw, k=3, stride=2)
    hw = p.conv_unit("stem.1", w0, w1, hw, k=3)
    hw = p.conv_unit("stem.2", w1, w2, hw, k=3)
    for s in range(4):
        hw = _plan_stage(p, cfg, s, hw)
    return p.layers


def _plan_stage(p: _Planner, cfg: ModelConfig, s: int, hw):
    name = f"stage{s + 1}"
    cin, cout = cfg.stage_input_channels(s), cfg.stage_channels[s]
    hw = p.conv_unit(f"{name}.down", cin, cout, hw, k=3, stride=2)
    hw = p.conv_unit(f"{name}.conv", cout, cout, hw, k=3)
    c = cfg.block_width(s)
    if cfg.csp:
        hidden = cfg.ffn_width(s)
        p.conv_unit(f"{name}.ffn.expand", c, hidden, hw)
        p.conv_unit(f"{name}.ffn.project", hidden, c, hw, act=False)
    for n in range(cfg.blocks[s]):
        _plan_block(p, cfg, s, n, c, hw)
    p.conv_unit(f"{name}.fuse", cout, cout, hw)
    return hw


def _plan_block(p: _Planner, cfg: ModelConfig, s: int, n: int, c: int, hw):
    name = f"stage{s + 1}.block{n}"
    for m, (k, d) in enumerate(zip(cfg.pki_kernels, cfg.dilations)):
        part = "local" if m == 0 else f"branch{m}"
        p.add(f"{name}.pki.{part}", "depthwise", c, c, hw, kernel=(k, k), dilation=d, groups=c)
    for m in range(1, len(cfg.pki_kernels)):
        p.add(f"{name}.pki.sum{m}", "elementwise", c, c, hw)
    p.conv_unit(f"{name}.pki.fuse", c, c, hw)
    if cfg.caa_stages[s]:
        kb = cfg.caa_kernel_size(s, n)
        p.add(f"{name}.caa.pool", "pool", c, c, hw, kernel=(cfg.caa_pool, cfg.caa_pool))
        p.conv_unit(f"{name}.caa.pre", c, c, hw)
        p.add(f"{name}.caa.h", "strip", c, c, hw, kernel=(1, kb), groups=c)
        p.add(f"{name}.caa.v", "strip", c, c, hw, kernel=(kb, 1), groups=c)
        p.conv_unit(f"{name}.caa.post", c, c, hw, act=False)
        p.add(f"{name}.caa.gate", "activation", c, c, hw)
        p.add(f"{name}.caa.mul", "elementwise", c, c, hw)
        p.add(f"{name}.caa.add", "elementwise", c, c, hw)
    p.conv_unit(f"{name}.out", c, c, hw)
    if cfg.block_residual:
        p.add(f"{name}.residual", "elementwise", c, c, hw)
