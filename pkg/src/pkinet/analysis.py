"""Static cost model: parameters, FLOPs, receptive field, ablation tables.

FLOPs follow the detection-literature convention of one multiply-accumulate
per FLOP for convolutions; normalization, activations, pooling and
elementwise ops cost one op per output element. Nothing here touches tensor
data, so full-size configurations are costed instantly.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Union

from .config import ModelConfig, variant
from .model import ModelGraph
from .plan import LayerSpec, layer_plan


@dataclass
class CostRow:
    name: str
    kind: str
    params: int
    flops: int


@dataclass
class CostReport:
    rows: list[CostRow]
    input_hw: tuple[int, int]
    params: int = field(init=False)
    flops: int = field(init=False)

    def __post_init__(self):
        self.params = sum(r.params for r in self.rows)
        self.flops = sum(r.flops for r in self.rows)

    @property
    def params_m(self) -> float:
        return self.params / 1e6

    @property
    def flops_g(self) -> float:
        return self.flops / 1e9

    def to_text(self) -> str:
        width = max(len(r.name) for r in self.rows)
        lines = [f"{'layer':<{width}}  {'kind':<11} {'params':>12} {'flops':>16}"]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {r.kind:<11} {r.params:>12d} {r.flops:>16d}")
        lines.append(f"input: {self.input_hw[0]}x{self.input_hw[1]}")
        lines.append(f"total params: {self.params} ({self.params_m:.2f}M)")
        lines.append(f"total flops:  {self.flops} ({self.flops_g:.2f}G)")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["name", "kind", "params", "flops"])
        for r in self.rows:
            writer.writerow([r.name, r.kind, r.params, r.flops])
        return buf.getvalue()


Target = Union[ModelConfig, ModelGraph]


def _config(target: Target) -> ModelConfig:
    return target.cfg if isinstance(target, ModelGraph) else target


def cost_report(target: Target, input_hw: tuple[int, int] = (1024, 1024)) -> CostReport:
    h, w = input_hw
    if h % 32 or w % 32:
        raise ValueError(f"input size must be divisible by 32, got {h}x{w}")
    layers = layer_plan(_config(target), (h, w))
    return CostReport([CostRow(l.name, l.kind, l.params, l.flops) for l in layers], (h, w))


def count_params(target: Target) -> CostReport:
    return cost_report(target)


def count_flops(target: Target, input_hw: tuple[int, int] = (1024, 1024)) -> CostReport:
    return cost_report(target, input_hw)


def effective_kernel(k: int, dilation: int) -> int:
    return dilation * (k - 1) + 1


def compose_rf(layers: list[tuple[int, int]]) -> int:
    """Receptive field of a chain of (effective kernel, stride) layers."""
    rf, jump = 1, 1
    for k, stride in layers:
        rf += (k - 1) * jump
        jump *= stride
    return rf


def receptive_field(cfg: ModelConfig) -> int:
    """Largest receptive field of one PKI module: local conv then widest branch."""
    eff = [effective_kernel(k, d) for k, d in zip(cfg.pki_kernels, cfg.dilations)]
    chain = [(eff[0], 1)]
    if len(eff) > 1:
        chain.append((max(eff[1:]), 1))
    return compose_rf(chain)


# Published rows of the ablation tables: label -> (params M, FLOPs G).
@dataclass
class Variant:
    suite: str
    label: str
    cfg: ModelConfig
    published_params: Optional[float] = None
    published_flops: Optional[float] = None
    published_rf: Optional[int] = None
    base: bool = False


@dataclass
class AblationRow:
    suite: str
    label: str
    params: int
    flops: int
    d_params: int
    d_flops: int
    rf: int
    published_params: Optional[float]
    published_flops: Optional[float]
    published_rf: Optional[int]
    base: bool


def ablation_variants(base: Optional[ModelConfig] = None) -> list[Variant]:
    b = base or variant("S")
    # Published costs were measured on the S backbone; other bases get none.
    published = b == variant("S")
    ks = lambda *k: b.replace(pki_kernels=k, dilations=(1,) * len(k))
    dil = lambda d: b.replace(dilations=(d,) * len(b.pki_kernels))
    caa_only = lambda s: b.replace(caa_stages=tuple(i == s for i in range(4)))
    fixed = lambda pool, k: b.replace(caa_schedule="fixed", caa_pool=pool, caa_kernel=k)
    rows = [
        Variant("kernel design", "(3, 3, 3, 3, 3)", ks(3, 3, 3, 3, 3), 12.62, 62.40),
        Variant("kernel design", "(3, 5, 7, 9, 11)", b, 13.69, 70.20, base=True),
        Variant("kernel design", "(3, 5, 9, 13, 17)", ks(3, 5, 9, 13, 17), 14.99, 79.57),
        Variant("kernel design", "(11, 11, 11, 11, 11)", ks(11, 11, 11, 11, 11), 15.13, 80.61),
        Variant("kernel design", "(15, 15, 15, 15, 15)", ks(15, 15, 15, 15, 15), 17.44, 92.45),
        Variant("kernel number", "2", ks(3, 5), 12.56, 61.95),
        Variant("kernel number", "3", ks(3, 5, 7), 12.78, 63.57),
        Variant("kernel number", "4", ks(3, 5, 7, 9), 13.13, 66.24),
        Variant("kernel number", "5", b, 13.69, 70.20, base=True),
        Variant("kernel number", "6", ks(3, 5, 7, 9, 11, 13), 14.35, 75.26),
        Variant("caa location", "None", b.replace(caa_stages=(False,) * 4), 12.03, 61.72),
        Variant("caa location", "1", caa_only(0), 12.19, 64.04),
        Variant("caa location", "2", caa_only(1), 12.31, 65.45),
        Variant("caa location", "3", caa_only(2), 12.97, 66.59),
        Variant("caa location", "ALL", b, 13.69, 70.20, base=True),
        Variant("kernel dilations", "(1, 1, 1, 1, 1)", b, published_rf=13, base=True),
        Variant("kernel dilations", "(2, 2, 2, 2, 2)", dil(2), published_rf=24),
        Variant("kernel dilations", "(3, 3, 3, 3, 3)", dil(3), published_rf=36),
        Variant("csp", "yes (4, 12, 20, 4)", b, 13.69, 70.20, base=True),
        Variant("csp", "no (4, 12, 20, 4)", b.replace(csp=False), 42.59, 182.07),
        Variant("csp", "no (2, 2, 4, 2)", b.replace(csp=False, blocks=(2, 2, 4, 2)), 17.30, 58.60),
        Variant("caa kernel", "(3, 3, 3)", fixed(3, 3), 13.50, 68.95),
        Variant("caa kernel", "(5, 5, 5)", fixed(5, 5), 13.52, 69.08),
        Variant("caa kernel", "(5, 7, 7)", fixed(5, 7), 13.54, 69.21),
        Variant("caa kernel", "(7, 11, 11)", fixed(7, 11), 13.58, 69.47),
        Variant("caa kernel", "Expansive", b, 13.69, 70.20, base=True),
    ]
    if not published:
        for v in rows:
            v.published_params = v.published_flops = None
    return rows


def ablation_report(variants: list[Variant], input_hw=(1024, 1024)) -> list[AblationRow]:
    """Cost every variant; deltas are against the row marked ``base`` in its suite."""
    costs = {}
    for v in variants:
        rep = cost_report(v.cfg, input_hw)
        costs[id(v)] = (rep.params, rep.flops)
    bases = {v.suite: costs[id(v)] for v in variants if v.base}
    rows = []
    for v in variants:
        p, f = costs[id(v)]
        bp, bf = bases.get(v.suite, (p, f))
        rows.append(AblationRow(v.suite, v.label, p, f, p - bp, f - bf, receptive_field(v.cfg),
                                v.published_params, v.published_flops, v.published_rf, v.base))
    return rows


def suite_delta(rows: list[AblationRow], suite: str, label: str, minus: Optional[str] = None) -> int:
    """Parameter difference ``label - minus`` (``minus`` defaults to the suite base)."""
    by_label = {r.label: r for r in rows if r.suite == suite}
    ref = by_label[minus] if minus else next(r for r in by_label.values() if r.base)
    return by_label[label].params - ref.params


def format_ablation(rows: list[AblationRow]) -> str:
    lines = []
    suite = None
    for r in rows:
        if r.suite != suite:
            suite = r.suite
            lines.append(f"[{suite}]")
            if suite == "kernel dilations":
                lines.append(f"  {'variant':<22} {'max RF':>7} {'pub.':>7}  note")
            else:
                lines.append(f"  {'variant':<22} {'params':>9} {'dparams':>9} {'flops':>9} {'dflops':>9}"
                             f" {'pub. P':>9} {'pub. F':>9}")
        mark = "*" if r.base else " "
        if suite == "kernel dilations":
            note = "" if r.rf == r.published_rf else "mismatch: standard composition law"
            lines.append(f"{mark} {r.label:<22} {r.rf:>7d} {r.published_rf:>7d}  {note}".rstrip())
            continue
        pp = f"{r.published_params:.2f}M" if r.published_params is not None else "-"
        pf = f"{r.published_flops:.2f}G" if r.published_flops is not None else "-"
        lines.append(
            f"{mark} {r.label:<22} {r.params / 1e6:>8.2f}M {r.d_params / 1e6:>+8.2f}M"
            f" {r.flops / 1e9:>8.2f}G {r.d_flops / 1e9:>+8.2f}G {pp:>9} {pf:>9}"
        )
    return "\n".join(lines) + "\n"
