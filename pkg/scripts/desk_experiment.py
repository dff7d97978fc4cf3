"""Desk-scale experiment: baselines, p=0.3 and p=0 agents, masked evaluation, sensor importance.

    python scripts/desk_experiment.py [--config configs/desk.json] [--out runs/desk]
"""
import argparse
import json
import os

from _common import run, variant


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk.json")
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--skip-analysis", action="store_true", help="stop after the evaluations")
    args = ap.parse_args()
    o = lambda *p: os.path.join(args.out, *p)

    cfg = {p: variant(args.config, args.out, f"p{p:02d}", dropout_p=p / 100) for p in (0, 30)}
    run("dataset", "--config", cfg[30], "--out", o("dataset"), skip_if=o("dataset"))
    run("eval", "--config", cfg[30], "--random", "--out", o("eval_random"), skip_if=o("eval_random"))
    run("train", "--config", cfg[30], "--steps", 0, "--out", o("untrained"), skip_if=o("untrained"))
    run("eval", "--config", cfg[30], "--checkpoint", o("untrained", "checkpoint"), "--out", o("eval_untrained"),
        skip_if=o("eval_untrained"))
    for p in (30, 0):
        run("train", "--config", cfg[p], "--out", o(f"train_p{p:02d}"), skip_if=o(f"train_p{p:02d}"))
        for mask in ("full", "fixed"):
            tag = f"eval_p{p:02d}_{mask}"
            run("eval", "--config", cfg[30], "--checkpoint", o(f"train_p{p:02d}", "checkpoint"), "--mask", mask,
                "--out", o(tag), skip_if=o(tag))

    print(f"\n{'run':22s} {'reward':>8s} {'d_shape_m':>10s} {'aux/zero':>9s}")
    for tag in ("eval_random", "eval_untrained", "eval_p30_full", "eval_p30_fixed", "eval_p00_full",
                "eval_p00_fixed"):
        with open(o(tag, "summary.json")) as f:
            s = json.load(f)
        ratio = s["aux_sq_err"] / s["zero_sq_err"] if "aux_sq_err" in s else float("nan")
        print(f"{tag:22s} {s['mean_reward']:8.4f} {s['mean_d_shape_m']:10.4f} {ratio:9.2f}")

    if args.skip_analysis:
        return
    run("analyze", "--config", cfg[30], "--task", "topk", "--checkpoint", o("train_p30", "checkpoint"),
        "--out", o("topk"), skip_if=o("topk"))
    for kind, src in (("training", o("train_p30", "metrics.csv")), ("sensitivity", o("topk", "sensitivity.csv")),
                      ("topk", o("topk", "topk.csv"))):
        run("plotdata", "--config", cfg[30], "--kind", kind, "--input", src, "--out", o("plots", kind))


if __name__ == "__main__":
    main()
