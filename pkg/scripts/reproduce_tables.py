"""Static cost tables for both variants: totals, receptive field and every ablation row.

    python scripts/reproduce_tables.py [--hw 1024] [--out results/]
"""

import argparse
from pathlib import Path

from pkinet import analysis
from pkinet.config import PKINET_S, PKINET_T

PUBLISHED = {"S": (13.69, 70.20), "T": (4.13, 22.70)}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--hw", type=int, default=1024)
    parser.add_argument("--out", type=Path, default=None, help="also write per-layer CSVs here")
    args = parser.parse_args()

    print(f"{'variant':<8} {'params':>9} {'published':>10} {'flops':>9} {'published':>10} {'max RF':>7}")
    for cfg in (PKINET_T, PKINET_S):
        rep = analysis.cost_report(cfg, (args.hw, args.hw))
        p, f = PUBLISHED[cfg.variant]
        print(f"{cfg.variant:<8} {rep.params_m:>8.2f}M {p:>9.2f}M {rep.flops_g:>8.2f}G {f:>9.2f}G"
              f" {analysis.receptive_field(cfg):>7d}")
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            (args.out / f"layers_{cfg.variant}.csv").write_text(rep.to_csv())
    print()
    rows = analysis.ablation_report(analysis.ablation_variants(), (args.hw, args.hw))
    print(analysis.format_ablation(rows), end="")


if __name__ == "__main__":
    main()
