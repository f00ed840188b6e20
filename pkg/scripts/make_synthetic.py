"""Write a seeded synthetic return panel (and asset-class sidecar) to CSV."""

import argparse
from pathlib import Path

from latentfolio.data import save_panel
from latentfolio.synthetic import crash_regime_panel, planted_block_panel


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path, help="output CSV path")
    ap.add_argument("--kind", choices=("planted", "crash"), default="crash")
    ap.add_argument("--d", type=int, default=8)
    ap.add_argument("--k", type=int, default=2)
    ap.add_argument("--T", type=int, default=800)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if args.kind == "planted":
        panel, _ = planted_block_panel(d=args.d, T=args.T, k=args.k, seed=args.seed)
    else:
        panel, _, _ = crash_regime_panel(d=args.d, T=args.T, k=args.k, seed=args.seed, crash_from=args.T // 2)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_panel(panel, args.out)
    classes = args.out.with_suffix(".classes")
    classes.write_text("".join(f"{c} = {k}\n" for c, k in zip(panel.codes, panel.classes)), encoding="utf-8")
    print(f"wrote {args.out} ({panel.T} x {panel.d}) and {classes}")


if __name__ == "__main__":
    main()
