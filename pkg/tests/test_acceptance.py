"""Acceptance gate: one test per criterion, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v`` (lines appear in the
terminal summary) or directly with ``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import contextlib
import io
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import CONV_KINDS, conv2d_loops, random_conv_case  # noqa: E402
from pkinet import analysis, checks  # noqa: E402
from pkinet.cli import main as cli_main  # noqa: E402
from pkinet.config import PKINET_S, PKINET_T, toy_config  # noqa: E402
from pkinet.conv import ConvKernel, conv2d, depthwise_kernel, strip_pair  # noqa: E402
from pkinet.model import backbone_forward, build_model  # noqa: E402
from pkinet.pcc import CategoryStat, pcc, pearson  # noqa: E402
from pkinet.plan import layer_plan  # noqa: E402

RESULTS: dict[int, str] = {}

# Published targets
S_PARAMS, T_PARAMS = 13.69e6, 4.13e6
S_FLOPS, T_FLOPS = 70.20e9, 22.70e9


def within(value, target, tol):
    return abs(value / target - 1) <= tol


def _record(n: int, title: str, ok: bool, detail: str, seconds: float) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {title}: {detail} ({seconds:.1f}s)"
    RESULTS[n] = line
    print(line)
    return ok


def criterion_1():
    s = analysis.count_params(PKINET_S).params
    t = analysis.count_params(PKINET_T).params
    ok = within(s, S_PARAMS, 0.05) and within(t, T_PARAMS, 0.05)
    return ok, f"S {s / 1e6:.3f}M ({s / S_PARAMS - 1:+.1%}), T {t / 1e6:.3f}M ({t / T_PARAMS - 1:+.1%}), tol 5%"


def criterion_2():
    rows = analysis.ablation_report(analysis.ablation_variants())
    checks_ = [
        ("design 3..11 - 3x5", analysis.suite_delta(rows, "kernel design", "(3, 5, 7, 9, 11)", "(3, 3, 3, 3, 3)"), 1.07e6, 0.02),
        ("design 15x5 - base", analysis.suite_delta(rows, "kernel design", "(15, 15, 15, 15, 15)"), 3.75e6, 0.02),
        ("number 5 - 2", analysis.suite_delta(rows, "kernel number", "5", "2"), 1.13e6, 0.02),
        ("caa expansive - (3,3,3)", analysis.suite_delta(rows, "caa kernel", "Expansive", "(3, 3, 3)"), 0.19e6, 0.05),
        ("caa all - none", analysis.suite_delta(rows, "caa location", "ALL", "None"), 1.66e6, 0.10),
    ]
    ok = all(within(v, target, tol) for _, v, target, tol in checks_)
    detail = "; ".join(f"{name} {v / 1e6:.3f}M ({v / target - 1:+.1%})" for name, v, target, _ in checks_)
    return ok, detail


def criterion_3():
    s = analysis.count_flops(PKINET_S, (1024, 1024)).flops
    t = analysis.count_flops(PKINET_T, (1024, 1024)).flops
    ok = within(s, S_FLOPS, 0.05) and within(t, T_FLOPS, 0.05)
    return ok, f"S {s / 1e9:.2f}G ({s / S_FLOPS - 1:+.1%}), T {t / 1e9:.2f}G ({t / T_FLOPS - 1:+.1%}), tol 5%"


def criterion_4():
    rf = analysis.receptive_field(PKINET_S)
    rows = analysis.ablation_report([v for v in analysis.ablation_variants() if v.suite == "kernel dilations"])
    text = analysis.format_ablation(rows)
    dilated = [l for l in text.splitlines() if l.lstrip("* ").startswith(("(2,", "(3,"))]
    reported = all("mismatch" in l for l in dilated) and len(dilated) == 2
    got = [r.rf for r in rows]
    return rf == 13 and reported, f"max RF {rf} (need 13); dilated rows ours {got[1:]} vs published 24/36, mismatch noted: {reported}"


def criterion_5():
    worst, n = 0.0, 0
    for seed in range(10):
        for kind in CONV_KINDS:
            x, w, b, stride, pad, dilation, groups = random_conv_case(1000 + seed, kind)
            out = conv2d(x, ConvKernel(w, b, stride=stride, pad=pad, dilation=dilation, groups=groups))
            ref = conv2d_loops(x, w, b, stride, pad, dilation, groups)
            worst = max(worst, np.max(np.abs(out - ref)) / np.max(np.abs(ref)))
            n += 1
    rng = np.random.default_rng(0)
    strip_worst = 0.0
    for k in (3, 7, 11):
        for _ in range(5):
            C = 3
            x = rng.normal(size=(2, C, 15, 14))
            u, v = rng.normal(size=(C, k)), rng.normal(size=(C, k))
            out = strip_pair(x, depthwise_kernel(u.reshape(C, 1, 1, k)), depthwise_kernel(v.reshape(C, 1, k, 1)))
            ref = conv2d(x, depthwise_kernel(np.einsum("ci,cj->cij", v, u)[:, None]))
            strip_worst = max(strip_worst, np.max(np.abs(out - ref)) / np.max(np.abs(ref)))
    ok = n >= 50 and worst < 1e-10 and strip_worst < 1e-10
    return ok, f"{n} oracle cases max rel err {worst:.1e}; strip_pair vs rank-1 {strip_worst:.1e} (tol 1e-10)"


def criterion_6():
    worst_op, worst_name = 0.0, ""
    block = backbone = 0.0
    for seed in range(10):
        for name, err in checks.op_gradchecks(seed).items():
            if err > worst_op:
                worst_op, worst_name = err, name
        block = max(block, checks.block_gradcheck(seed))
        backbone = max(backbone, checks.backbone_gradcheck(seed))
    ok = max(worst_op, block, backbone) < 1e-4
    return ok, f"10 seeds: ops max {worst_op:.1e} ({worst_name}), PKI block {block:.1e}, toy backbone {backbone:.1e} (tol 1e-4)"


def criterion_7():
    bad = []
    for base in (PKINET_S, PKINET_T):
        reduced = base.replace(stem_channels=base.stem_channels // 8,
                               stage_channels=tuple(c // 8 for c in base.stage_channels))
        graph = build_model(reduced, dtype=np.float32)
        for size in (256, 512, 1024):
            outs = backbone_forward(graph, np.ones((1, 3, size, size), np.float32))
            layers = {l.name: l for l in layer_plan(base, (size, size))}
            for s, o in enumerate(outs):
                want = size // 2 ** (s + 2)
                full = layers[f"stage{s + 1}.fuse.conv"]
                if o.shape[2:] != (want, want) or full.out_hw != (want, want) or full.out_channels != base.stage_channels[s]:
                    bad.append((base.variant, size, s + 1))
    return not bad, "S and T at 256/512/1024: run at 1/8 width and checked statically at full width" + (
        f"; violations {bad}" if bad else "; all stages obey H/2^(l+1)")


def criterion_8(run=None):
    if run is None:
        from pkinet.trainer import gen_synthetic, train_toy
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=1):
            run = train_toy(toy_config(), gen_synthetic(0, 256), 200, 1e-3, seed=0)
    losses = run.losses
    finite = all(math.isfinite(v) for v in losses)
    ratio = losses[-1] / losses[0]
    return finite and ratio <= 0.5 and len(losses) == 200, (
        f"200 steps: loss {losses[0]:.4f} -> {losses[-1]:.4f}, ratio {ratio:.3f} (need <= 0.5), finite: {finite}")


def criterion_9():
    rng = np.random.default_rng(0)
    bounded = True
    for _ in range(1000):
        k = int(rng.integers(2, 20))
        stats = [CategoryStat(str(i), float(a), float(s), 1) for i, (a, s) in
                 enumerate(zip(rng.uniform(1, 1e4, k), rng.random(k)))]
        bounded &= abs(pcc(stats)) <= 1.0
    s = [3.0, 10.0, 40.0, 90.0]
    perfect = pearson(s, s) == 1.0 and pearson(s, [5 - v for v in s]) == -1.0
    r3 = pearson([1, 2, 3], [2, 4, 5])
    ok = bounded and perfect and abs(r3 - 0.9820) <= 1e-4
    return ok, f"|r| <= 1 over 1000 sets: {bounded}; trivial fixtures +1/-1: {perfect}; 3-category r = {r3:.6f}"


def criterion_10():
    golden = Path(__file__).parent / "golden"
    mismatched = []
    for cmd in ("summary", "rf", "ablate"):
        for v in ("S", "T"):
            outs = []
            for _ in range(2):
                buf = io.StringIO()
                with contextlib.redirect_stdout(buf):
                    code = cli_main(["--threads", "1", cmd, "--config", f"pkinet-{v.lower()}"])
                outs.append(buf.getvalue().encode("utf-8"))
            if code != 0 or outs[0] != outs[1] or outs[0] != (golden / f"{cmd}_{v}.txt").read_bytes():
                mismatched.append(f"{cmd}_{v}")
    return not mismatched, "summary/rf/ablate for S and T byte-identical across runs and to golden files" + (
        f"; mismatched {mismatched}" if mismatched else "")


TITLES = {
    1: "parameter totals",
    2: "ablation parameter deltas",
    3: "FLOPs at 1024x1024",
    4: "receptive field",
    5: "convolution oracle suite",
    6: "gradient checks",
    7: "shape law",
    8: "toy learning",
    9: "PCC properties",
    10: "byte-stable reports",
}
CRITERIA = {n: globals()[f"criterion_{n}"] for n in TITLES}


def evaluate(n: int, *args) -> bool:
    start = time.perf_counter()
    try:
        ok, detail = CRITERIA[n](*args)
    except Exception as exc:  # a crash is a failure, reported on the same line
        ok, detail = False, f"raised {type(exc).__name__}: {exc}"
    return _record(n, TITLES[n], ok, detail, time.perf_counter() - start)


def _id(n):
    return f"{n:02d}-{TITLES[n].replace(' ', '-')}"


@pytest.mark.parametrize("n", [n for n in TITLES if n != 8], ids=_id)
def test_criterion(n):
    assert evaluate(n), RESULTS[n]


def test_criterion_8(toy_fixture_run):
    assert evaluate(8, toy_fixture_run), RESULTS[8]


if __name__ == "__main__":
    failed = [n for n in TITLES if not evaluate(n)]
    print(f"{len(TITLES) - len(failed)}/{len(TITLES)} criteria pass")
    sys.exit(1 if failed else 0)
