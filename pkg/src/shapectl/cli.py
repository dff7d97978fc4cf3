"""Command-line entry point: dataset, train, eval, analyze and plotdata subcommands.

Every subcommand reads a JSON run config, writes its files into a staging
directory and moves them into the output directory only on success, together
with a manifest describing how to reproduce them.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import platform
import shutil
import sys
import tempfile

import numba
import numpy as np

from . import analysis
from .config import ConfigError, RunConfig, load_config, stream_seed
from .dataset import ShapeDataset, generate_corpus, greedy_select
from .neural import NonFiniteGradient
from .obs import MaskSpec
from .surrogate.env import EnvFault, SurrogateEnv
from .tqc import TQCAgent, load_checkpoint, save_checkpoint, train

EXIT_CONFIG = 2
EXIT_RUNTIME = 3
MASK_KINDS = ("full", "fixed", "file", "topk", "randomk")


def _version() -> str:
    try:
        from importlib.metadata import version
        return version("shapectl")
    except Exception:
        return "unknown"


def file_digest(path) -> str:
    h = hashlib.sha256()
    if os.path.isdir(path):
        for name in sorted(os.listdir(path)):
            h.update(name.encode())
            h.update(file_digest(os.path.join(path, name)).encode())
        return h.hexdigest()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Stage:
    """Collects outputs in a temporary sibling directory; ``commit`` moves them into place."""

    def __init__(self, out_dir):
        self.out_dir = os.path.abspath(out_dir)
        parent = os.path.dirname(self.out_dir)
        os.makedirs(parent, exist_ok=True)
        self.dir = tempfile.mkdtemp(prefix=".stage-", dir=parent)

    def path(self, name) -> str:
        return os.path.join(self.dir, name)

    def commit(self, names=None) -> None:
        os.makedirs(self.out_dir, exist_ok=True)
        for name in sorted(os.listdir(self.dir)) if names is None else names:
            src, dst = self.path(name), os.path.join(self.out_dir, name)
            if not os.path.exists(src):
                continue
            if os.path.isdir(dst):
                shutil.rmtree(dst)
            os.replace(src, dst)

    def discard(self) -> None:
        shutil.rmtree(self.dir, ignore_errors=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.discard()
        return False


def write_manifest(stage: Stage, command: str, cfg: RunConfig, streams: dict, inputs: dict,
                   extra: dict | None = None) -> None:
    outputs = {name: file_digest(stage.path(name)) for name in sorted(os.listdir(stage.dir))}
    doc = {
        "command": command,
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "streams": streams,
        "versions": {"python": platform.python_version(), "numpy": np.__version__,
                     "numba": numba.__version__, "shapectl": _version()},
        "inputs": {k: file_digest(v) for k, v in sorted(inputs.items())},
        "outputs": outputs,
        **(extra or {}),
    }
    with open(stage.path("manifest.json"), "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)


# --- shared plumbing ------------------------------------------------------------------

def build_dataset(cfg: RunConfig, env: SurrogateEnv) -> tuple[ShapeDataset, dict]:
    spec = cfg.dataset
    if spec.path is not None:
        if not os.path.exists(spec.path):
            raise ConfigError(f"dataset.path: file not found: {spec.path}")
        return ShapeDataset.load(spec.path), {"dataset": spec.path}
    basis = env.reachable_basis() if spec.basis == "reachable" else None
    corpus = generate_corpus(spec.corpus_size, seed=spec.corpus_seed, walk_step=spec.walk_step, basis=basis)
    prov = {"corpus_seed": spec.corpus_seed, "walk_step": spec.walk_step, "basis": spec.basis}
    return greedy_select(corpus, spec.threshold, prov), {}


def _require(path, what) -> str:
    if not os.path.exists(path):
        raise ConfigError(f"{what}: not found: {path}")
    return path


def _checkpoint(path) -> TQCAgent:
    _require(os.path.join(path, "checkpoint.json"), "--checkpoint")
    return load_checkpoint(path)


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "out", None):
        cfg = dataclasses.replace(cfg, output_dir=args.out)
    return cfg


def _pairs(items, what, key=str) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"{what}: expected LABEL=DIR, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[key(k)] = v
        except ValueError:
            raise ConfigError(f"{what}: bad label {k!r}") from None
    if not out:
        raise ConfigError(f"{what}: at least one LABEL=DIR is required")
    return out


# --- subcommands -----------------------------------------------------------------------

def cmd_dataset(args) -> int:
    cfg = _load(args)
    env = SurrogateEnv(cfg.env)
    with Stage(cfg.output_dir) as stage:
        ds, inputs = build_dataset(cfg, env)
        ds.save(stage.path("dataset.json"))
        write_manifest(stage, "dataset", cfg, {}, inputs, {"n_shapes": len(ds)})
        stage.commit()
    n_corpus = ds.provenance.get("corpus_size", len(ds))
    print(f"selected {len(ds)} shapes from {n_corpus}")
    print("extremes: " + ", ".join(f"{k}={v}" for k, v in ds.extremes().items()))
    return 0


def cmd_train(args) -> int:
    cfg = _load(args)
    if args.steps is not None and args.steps < 0:
        raise ConfigError("--steps: must be non-negative")
    env = SurrogateEnv(cfg.env)
    with Stage(cfg.output_dir) as stage:
        ds, inputs = build_dataset(cfg, env)
        if args.resume:
            agent = _checkpoint(os.path.join(args.resume, "checkpoint"))
            inputs["resume"] = os.path.join(args.resume, "checkpoint")
            old_metrics = os.path.join(args.resume, "metrics.csv")
            if os.path.exists(old_metrics):
                shutil.copyfile(old_metrics, stage.path("metrics.csv"))
        else:
            agent = TQCAgent(cfg.tqc, env.cfg.n_act, seed=cfg.seed)
        try:
            train(env, ds, agent, steps=args.steps, metrics_path=stage.path("metrics.csv"),
                  fault_checkpoint=stage.path("fault_checkpoint"))
        except EnvFault:
            os.remove(stage.path("metrics.csv"))
            write_manifest(stage, "train", cfg, {"root": cfg.seed}, inputs, {"status": "fault"})
            stage.commit(["fault_checkpoint", "manifest.json"])
            raise
        save_checkpoint(agent, stage.path("checkpoint"))
        write_manifest(stage, "train", cfg, {"root": cfg.seed}, inputs,
                       {"status": "ok", "env_steps": agent.env_steps, "episodes": agent.episodes})
        stage.commit()
    print(f"trained to step {agent.env_steps} ({agent.episodes} episodes) -> {cfg.output_dir}")
    return 0


def resolve_mask(args, cfg: RunConfig, agent, env, ds) -> tuple[MaskSpec, dict, dict]:
    """Mask for evaluation from the --mask options; returns (mask, info, extra inputs)."""
    kind = args.mask
    seed = args.mask_seed if args.mask_seed is not None else stream_seed(cfg.seed, "masks")
    info, inputs = {"kind": kind}, {}
    if kind == "full":
        return MaskSpec.full(), info, inputs
    if kind == "fixed":
        info.update(seed=seed, n_disabled=cfg.eval.n_disabled)
        return analysis.deployment_mask(seed, cfg.eval.n_disabled), info, inputs
    if kind == "file":
        if not args.mask_file:
            raise ConfigError("--mask file: requires --mask-file")
        inputs["mask"] = _require(args.mask_file, "--mask-file")
        with open(args.mask_file) as f:
            try:
                return MaskSpec.from_dict(json.load(f)), info, inputs
            except (ValueError, KeyError, TypeError) as e:
                raise ConfigError(f"--mask-file: invalid mask: {e}") from None
    K = args.k
    if args.percent is not None:
        Kp = analysis.percent_to_k(args.percent)
        if K is not None and K != Kp:
            raise ConfigError(f"--k {K} disagrees with --percent {args.percent} (which gives K={Kp})")
        K = Kp
    if K is None:
        raise ConfigError(f"--mask {kind}: requires --k or --percent")
    if not 1 <= K <= 114:
        raise ConfigError("--k: must lie in [1, 114]")
    info["K"] = K
    if kind == "randomk":
        info.update(seed=seed, draw=args.draw)
        masks = analysis.random_k_masks(K, args.draw + 1, np.random.default_rng(seed))
        return masks[args.draw], info, inputs
    if args.sensitivity:
        inputs["sensitivity"] = _require(args.sensitivity, "--sensitivity")
        report = analysis.SensitivityReport.from_csv(args.sensitivity)
    else:
        if agent is None:
            raise ConfigError("--mask topk: needs --sensitivity or a --checkpoint to score")
        states = analysis.collect_states(agent, env, ds, cfg.analysis.sensitivity_states,
                                         stream_seed(cfg.seed, "sensitivity"), workers=cfg.eval.workers)
        report = analysis.gradient_sensitivity(agent, states)
    return analysis.topk_proportional(report, K), info, inputs


def cmd_eval(args) -> int:
    cfg = _load(args)
    if (args.checkpoint is None) == (not args.random):
        raise ConfigError("eval: give exactly one of --checkpoint or --random")
    env = SurrogateEnv(cfg.env)
    ds, inputs = build_dataset(cfg, env)
    agent = _checkpoint(args.checkpoint) if args.checkpoint else None
    if agent is not None:
        inputs["checkpoint"] = args.checkpoint
        if agent.n_act != env.cfg.n_act:
            raise ConfigError(f"--checkpoint: agent has {agent.n_act} actions, env has {env.cfg.n_act}")
    mask, mask_info, extra = resolve_mask(args, cfg, agent, env, ds)
    inputs.update(extra)
    seed = stream_seed(cfg.seed, "eval")
    with Stage(cfg.output_dir) as stage:
        rows, _ = analysis.evaluate_policy(agent if agent is not None else "random", env, ds, mask,
                                           cfg.eval.episodes_per_shape, seed, cfg.eval.episode_len,
                                           cfg.eval.workers, collect=agent is not None)
        analysis.write_rows(stage.path("eval.csv"), rows)
        summary = analysis.summarize(rows)
        if agent is not None:
            summary["aux_sq_err"] = float(np.nanmean([r["aux_sq_err"] for r in rows]))
            summary["zero_sq_err"] = float(np.nanmean([r["zero_sq_err"] for r in rows]))
        summary["mask"] = mask_info
        summary["masked_fraction"] = mask.masked_fraction
        analysis.save_json(stage.path("summary.json"), summary)
        with open(stage.path("mask.json"), "w") as f:
            json.dump(mask.to_dict(), f)
        write_manifest(stage, "eval", cfg, {"eval": seed, "masks": mask_info.get("seed")}, inputs)
        stage.commit()
    print(f"mean reward {summary['mean_reward']:.4f}  mean d_shape {summary['mean_d_shape_m']:.4f} m  "
          f"({len(rows)} shapes) -> {cfg.output_dir}")
    return 0


def cmd_analyze(args) -> int:
    cfg = _load(args)
    env = SurrogateEnv(cfg.env)
    ds, inputs = build_dataset(cfg, env)
    a = cfg.analysis
    seed = stream_seed(cfg.seed, "eval")
    sens_seed = stream_seed(cfg.seed, "sensitivity")
    mask_seed = args.mask_seed if args.mask_seed is not None else stream_seed(cfg.seed, "masks")
    fixed = analysis.deployment_mask(mask_seed, cfg.eval.n_disabled)
    ev = dict(episode_len=cfg.eval.episode_len, workers=cfg.eval.workers)
    streams = {"eval": seed, "sensitivity": sens_seed, "masks": mask_seed}
    with Stage(cfg.output_dir) as stage:
        if args.task == "sensitivity" or args.task == "topk":
            if not args.checkpoint:
                raise ConfigError(f"analyze {args.task}: requires --checkpoint")
            agent = _checkpoint(args.checkpoint)
            inputs["checkpoint"] = args.checkpoint
            states = analysis.collect_states(agent, env, ds, a.sensitivity_states, sens_seed, **ev)
            report = analysis.gradient_sensitivity(agent, states)
            report.to_csv(stage.path("sensitivity.csv"))
            if args.task == "topk":
                rows = analysis.sensor_sweep(agent, env, ds, report, a.sweep_k, a.n_random, seed, **ev)
                analysis.write_rows(stage.path("topk.csv"), rows, list(rows[0]))
        elif args.task == "sweep":
            runs = _pairs(args.run, "--run", float)
            out = analysis.sweep_dropout(runs, env, ds, fixed, seed, a.sensitivity_states, top_subset=a.top_subset,
                                         **ev)
            analysis.write_rows(stage.path("sweep.csv"), out["table"], analysis.SWEEP_COLUMNS)
            analysis.save_json(stage.path("rank.json"), {k: out[k] for k in ("p", "rank_full", "rank_top",
                                                                              "top_channels")})
            with open(stage.path("scores.csv"), "w", newline="") as f:
                w = csv.writer(f, lineterminator="\n")
                w.writerow(["channel"] + [f"p={p}" for p in out["p"]])
                for i in range(len(out["scores"][0])):
                    w.writerow([i] + [repr(s[i]) for s in out["scores"]])
            inputs.update({f"run_p={p}": d for p, d in runs.items()})
        elif args.task == "ablation":
            runs = _pairs(args.run, "--run")
            rows = analysis.ablation_table(runs, env, ds, fixed, seed, **ev)
            analysis.write_rows(stage.path("ablation.csv"), rows, list(rows[0]))
            inputs.update({f"run_{k}": d for k, d in runs.items()})
        write_manifest(stage, f"analyze {args.task}", cfg, streams, inputs)
        stage.commit()
    print(f"analyze {args.task} -> {cfg.output_dir}")
    return 0


def _tidy_training(path):
    with open(path) as f:
        for r in csv.DictReader(f):
            for k in ("mean_reward", "mean_d_shape_m", "mean_d_xpt_m", "eplen", "mask_fraction"):
                yield {"episode": r["episode"], "steps": r["steps"], "metric": k, "value": r[k]}


def _tidy_sensitivity(path):
    with open(path) as f:
        rows = sorted(csv.DictReader(f), key=lambda r: int(r["rank"]))
    yield from rows


def _tidy_rank(path):
    with open(path) as f:
        doc = json.load(f)
    for scope in ("rank_full", "rank_top"):
        for i, pi in enumerate(doc["p"]):
            for j, pj in enumerate(doc["p"]):
                yield {"scope": scope.split("_")[1], "p_i": pi, "p_j": pj, "rho": doc[scope][i][j]}


def _tidy_topk(path):
    with open(path) as f:
        for r in csv.DictReader(f):
            for k in ("mean_reward", "mean_d_shape_m", "mean_d_xpt_m"):
                yield {"K": r["K"], "kind": r["kind"], "draw": r["draw"], "metric": k, "value": r[k]}


PLOT_KINDS = {"training": _tidy_training, "sensitivity": _tidy_sensitivity, "rank": _tidy_rank,
              "topk": _tidy_topk}


def cmd_plotdata(args) -> int:
    cfg = _load(args)
    src = _require(args.input, "--input")
    try:
        rows = list(PLOT_KINDS[args.kind](src))
    except (KeyError, ValueError, json.JSONDecodeError) as e:
        raise ConfigError(f"--input: not a {args.kind} file: {e}") from None
    if not rows:
        raise ConfigError(f"--input: {src} has no rows")
    with Stage(cfg.output_dir) as stage:
        analysis.write_rows(stage.path(f"plot_{args.kind}.csv"), rows, list(rows[0]))
        write_manifest(stage, f"plotdata {args.kind}", cfg, {}, {"input": src})
        stage.commit()
    print(f"wrote plot_{args.kind}.csv ({len(rows)} rows) -> {cfg.output_dir}")
    return 0


# --- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shapectl", description="Plasma shape control with diagnostic dropout.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="JSON run config")
        sp.add_argument("--out", help="override the config's output_dir")

    sp = sub.add_parser("dataset", help="generate and curate the shape dataset")
    common(sp)
    sp.set_defaults(fn=cmd_dataset)

    sp = sub.add_parser("train", help="train an agent")
    common(sp)
    sp.add_argument("--steps", type=int, help="environment steps (default: remaining total_steps)")
    sp.add_argument("--resume", help="earlier train output directory to continue from")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="per-shape evaluation under a sensor mask")
    common(sp)
    sp.add_argument("--checkpoint", help="checkpoint directory")
    sp.add_argument("--random", action="store_true", help="evaluate the uniform random policy")
    sp.add_argument("--mask", choices=MASK_KINDS, default="full")
    sp.add_argument("--mask-seed", type=int, help="seed for fixed and random-K masks")
    sp.add_argument("--mask-file", help="mask JSON (as written by eval)")
    sp.add_argument("--k", type=int, help="number of active sensors for topk/randomk")
    sp.add_argument("--percent", type=float, help="percentage of each sensor type for topk/randomk")
    sp.add_argument("--draw", type=int, default=0, help="which random-K draw")
    sp.add_argument("--sensitivity", help="sensitivity CSV for topk")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("analyze", help="sensitivity, top-K, dropout sweep and ablation reports")
    common(sp)
    sp.add_argument("--task", choices=("sensitivity", "topk", "sweep", "ablation"), required=True)
    sp.add_argument("--checkpoint", help="checkpoint directory (sensitivity, topk)")
    sp.add_argument("--run", action="append", help="LABEL=DIR checkpoint (p=DIR for sweep); repeatable")
    sp.add_argument("--mask-seed", type=int, help="seed of the fixed deployment mask")
    sp.set_defaults(fn=cmd_analyze)

    sp = sub.add_parser("plotdata", help="tidy CSV for external plotting")
    common(sp)
    sp.add_argument("--kind", choices=sorted(PLOT_KINDS), required=True)
    sp.add_argument("--input", required=True, help="metrics.csv, sensitivity.csv, rank.json or topk.csv")
    sp.set_defaults(fn=cmd_plotdata)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (EnvFault, NonFiniteGradient, FloatingPointError, ValueError, OSError) as e:
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
