"""Dropout-rate sweep: train one agent per p, then compare them on a fixed deployment mask
and by the rank stability of their sensor-importance scores.

    python scripts/dropout_sweep.py [--config configs/desk.json] [--p 0 0.1 0.3 0.5 0.7]
"""
import argparse
import os

from _common import run, variant


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk.json")
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--p", type=float, nargs="+", default=[0.0, 0.1, 0.3, 0.5, 0.7])
    args = ap.parse_args()

    runs = []
    for p in args.p:
        tag = f"p{int(round(100 * p)):02d}"
        cfg = variant(args.config, args.out, tag, dropout_p=p)
        out = os.path.join(args.out, f"train_{tag}")
        run("train", "--config", cfg, "--out", out, skip_if=out)
        runs += ["--run", f"{p}={os.path.join(out, 'checkpoint')}"]
    report = os.path.join(args.out, "report")
    run("analyze", "--config", args.config, "--task", "sweep", *runs, "--out", report)
    run("plotdata", "--config", args.config, "--kind", "rank", "--input", os.path.join(report, "rank.json"),
        "--out", os.path.join(args.out, "plots"))


if __name__ == "__main__":
    main()
