"""Ablations: full agent, no auxiliary head, no privileged critic, no dropout.

    python scripts/ablations.py [--config configs/desk.json] [--out runs/ablation]
"""
import argparse
import os

from _common import run, variant

VARIANTS = {
    "full": {},
    "no_aux": {"no_aux": True},
    "no_privileged": {"no_privileged": True},
    "no_dropout": {"dropout_p": 0.0},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk.json")
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--only", nargs="+", choices=sorted(VARIANTS), help="subset of variants")
    args = ap.parse_args()

    runs = []
    for label in args.only or VARIANTS:
        cfg = variant(args.config, args.out, label, **VARIANTS[label])
        out = os.path.join(args.out, f"train_{label}")
        run("train", "--config", cfg, "--out", out, skip_if=out)
        runs += ["--run", f"{label}={os.path.join(out, 'checkpoint')}"]
    run("analyze", "--config", args.config, "--task", "ablation", *runs, "--out", os.path.join(args.out, "report"))


if __name__ == "__main__":
    main()
