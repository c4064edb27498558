"""Command-line entry point.

Exit codes: 0 on success, 1 when inputs fail validation, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import analysis, checks, pcc
from .config import ConfigError, ModelConfig, toy_config, variant
from .formats import FormatError, load_config, load_image, read_bundle, write_bundle, write_tensor
from .model import backbone_forward, build_model
from .tensor import ShapeError

GRAD_TOLERANCE = 1e-4


class ValidationError(Exception):
    pass


def resolve_config(name: str) -> ModelConfig:
    """A file path if one exists, otherwise a variant name (pkinet-s, T, toy, ...)."""
    path = Path(name)
    if path.is_file():
        return load_config(path)
    if name.lower() == "toy":
        return toy_config()
    try:
        return variant(name)
    except ConfigError as exc:
        raise ConfigError(f"{name!r} is neither a config file nor a known variant") from exc


def _hw(text: str) -> tuple[int, int]:
    try:
        parts = [int(p) for p in text.lower().split("x")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or HxW, got {text!r}")
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2 or min(parts) <= 0:
        raise argparse.ArgumentTypeError(f"expected N or HxW, got {text!r}")
    return parts[0], parts[1]


def cmd_summary(args) -> int:
    report = analysis.cost_report(resolve_config(args.config), args.hw)
    sys.stdout.write(report.to_csv() if args.csv else report.to_text())
    return 0


def cmd_flops(args) -> int:
    cfg = resolve_config(args.config)
    report = analysis.cost_report(cfg, args.hw)
    print(f"variant: {cfg.variant}")
    print(f"input: {args.hw[0]}x{args.hw[1]}")
    print(f"params: {report.params_m:.2f}M")
    print(f"flops: {report.flops_g:.2f}G")
    return 0


def cmd_rf(args) -> int:
    cfg = resolve_config(args.config)
    print(f"max RF: {analysis.receptive_field(cfg)}")
    return 0


def cmd_ablate(args) -> int:
    variants = analysis.ablation_variants(resolve_config(args.config))
    sys.stdout.write(analysis.format_ablation(analysis.ablation_report(variants, args.hw)))
    return 0


def cmd_gradcheck(args) -> int:
    worst: dict[str, float] = {}
    for seed in range(args.seeds):
        for name, err in checks.op_gradchecks(seed).items():
            worst[name] = max(worst.get(name, 0.0), err)
        if not args.ops_only:
            worst["pki_block"] = max(worst.get("pki_block", 0.0), checks.block_gradcheck(seed))
            worst["backbone"] = max(worst.get("backbone", 0.0), checks.backbone_gradcheck(seed))
    failed = 0
    for name, err in worst.items():
        ok = err < GRAD_TOLERANCE
        failed += not ok
        print(f"{name:<28} {err:.3e}  {'ok' if ok else 'FAIL'}")
    print(f"seeds: {args.seeds}  max error: {max(worst.values()):.3e}  tolerance: {GRAD_TOLERANCE:.0e}")
    return 1 if failed else 0


def cmd_train_toy(args) -> int:
    from .trainer import DivergenceError, gen_synthetic, train_toy

    cfg = resolve_config(args.config) if args.config else toy_config()
    data = gen_synthetic(args.seed, args.samples)
    try:
        result = train_toy(cfg, data, args.steps, args.lr, batch_size=args.batch_size, seed=args.seed)
    except DivergenceError as exc:
        raise ValidationError(str(exc)) from exc
    result.write_csv(args.out)
    if args.weights:
        write_bundle(result.model.state(), args.weights)
    first, last = result.losses[0], result.losses[-1]
    print(f"steps: {args.steps}  initial loss: {first:.6f}  final loss: {last:.6f}  ratio: {last / first:.4f}")
    print(f"loss trace: {args.out}")
    return 0


def cmd_infer(args) -> int:
    cfg = resolve_config(args.config)
    graph = build_model(cfg, dtype=np.float32)
    state = graph.params | graph.buffers
    loaded = read_bundle(args.weights)
    missing = sorted(set(state) - set(loaded))
    if missing:
        raise ValidationError(f"{args.weights}: missing {len(missing)} tensors, e.g. {missing[0]!r}")
    for name, target in state.items():
        if loaded[name].shape != target.shape:
            raise ValidationError(f"{args.weights}: {name} has shape {loaded[name].shape}, expected {target.shape}")
        target[...] = loaded[name]
    image = load_image(args.image).astype(np.float32)
    if image.shape[1] != cfg.in_channels:
        raise ValidationError(f"{args.image}: {image.shape[1]} channels, model expects {cfg.in_channels}")
    outs = backbone_forward(graph, image)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, t in enumerate(outs, start=1):
        path = out_dir / f"stage{i}.pkit"
        write_tensor(t, path)
        print(f"stage{i}: {tuple(t.shape)} -> {path}")
    return 0


def cmd_pcc(args) -> int:
    stats = pcc.aggregate(pcc.read_records(args.records))
    print(f"categories: {len(stats)}")
    print(f"r = {pcc.pcc(stats):.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pkinet", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None, help="limit BLAS threads (1 for bit-exact runs)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help, config=True, hw=False):
        p = sub.add_parser(name, help=help)
        if config:
            p.add_argument("--config", required=True, help="config file or variant name (pkinet-s, pkinet-t, toy)")
        if hw:
            p.add_argument("--hw", type=_hw, default=(1024, 1024), help="input size, N or HxW (default 1024)")
        p.set_defaults(func=func)
        return p

    p = command("summary", cmd_summary, "per-layer parameter and FLOP report", hw=True)
    p.add_argument("--csv", action="store_true", help="emit CSV instead of a table")
    command("flops", cmd_flops, "parameter and FLOP totals", hw=True)
    command("rf", cmd_rf, "largest receptive field of one PKI module")
    p = command("ablate", cmd_ablate, "cost every ablation variant", hw=True)
    p.add_argument("--suite", choices=["table8"], default="table8")

    p = command("gradcheck", cmd_gradcheck, "finite-difference gradient checks", config=False)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--ops-only", action="store_true", help="skip the block and backbone checks")

    p = command("train-toy", cmd_train_toy, "train a toy backbone on synthetic shapes", config=False)
    p.add_argument("--config", default=None, help="shrunken config (default: built-in toy)")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--out", default="loss.csv", help="loss trace CSV (step,loss)")
    p.add_argument("--weights", default=None, help="optionally save the trained weights bundle")

    p = command("infer", cmd_infer, "run the backbone on one PPM/PGM image")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", default=".", help="directory for stage1..4 .pkit files")

    p = command("pcc", cmd_pcc, "size-sensitivity correlation from detection records", config=False)
    p.add_argument("--records", required=True, help="CSV with header category,score,area")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        if args.threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except (ValidationError, ConfigError, FormatError, ShapeError, pcc.DegenerateInputError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
