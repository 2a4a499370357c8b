"""Command line entry points: data generation, training, evaluation, sweeps.

Every subcommand accepts the full set of configuration keys as ``--key
value`` flags, optionally on top of a ``--config`` file.  Relative output
directories resolve under $RILIR_OUT when that variable is set.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import fields, replace

import numpy as np

from .agent import load_checkpoint, policy_from_checkpoint, train
from .agent import evaluate_policy as _evaluate_policy
from .config import RunConfig, apply_overrides, canonical, load_config
from .envsim import (
    FRAME_STACK,
    HEIGHT,
    WIDTH,
    PerturbationSpec,
    PixelEnv,
    collect_expert,
    load_expert_dataset,
)
from .errors import AggregationError, ConfigError, RilirError
from .representation import Encoder, saliency, write_pgm
from .seeding import stream

# ergonomic shorthands for the most-typed keys
_ALIASES = {
    "steps": "total_steps",
    "env": "env_id",
    "task": "env_id",
    "perturb": "perturbation",
    "episodes": "eval_episodes",
    "n": "n_expert",
    "out": "out_dir",
}

SUMMARY_COLUMNS = (
    "label",
    "seeds",
    "final_return_mean",
    "final_return_std",
    "fraction_of_expert",
    "auc",
)


def resolve_out(path, default):
    """Place relative outputs under $RILIR_OUT (or the cwd)."""
    path = path or default
    if os.path.isabs(path):
        return path
    return os.path.join(os.environ.get("RILIR_OUT", "."), path)


def _add_config_flags(parser):
    for f in fields(RunConfig):
        parser.add_argument(f"--{f.name}", dest=f.name, default=None, metavar="V")
    for alias, target in _ALIASES.items():
        parser.add_argument(f"--{alias}", dest=target, default=None, metavar="V")
    parser.add_argument("--config", dest="config_file", default=None, metavar="FILE")


def _config_from_args(args):
    cfg = load_config(args.config_file) if args.config_file else RunConfig()
    overrides = {
        f.name: getattr(args, f.name)
        for f in fields(RunConfig)
        if getattr(args, f.name, None) is not None
    }
    return apply_overrides(cfg, overrides)


def build_parser():
    parser = argparse.ArgumentParser(prog="rilir", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-expert", help="collect scripted demonstrations in the clean environment")
    _add_config_flags(p)

    p = sub.add_parser("train", help="run the full training loop")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint's greedy policy")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("saliency", help="write per-pixel influence maps for sampled observations")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=3)

    p = sub.add_parser("sweep", help="run the {clean, perturbed} x {full, ablation} grid")
    _add_config_flags(p)
    p.add_argument("--seeds", default="0", help="comma-separated list")
    p.add_argument(
        "--ablation",
        default="no_representation",
        choices=["no_representation", "no_discriminator", "raw_pixels"],
    )

    p = sub.add_parser("summarize", help="aggregate finished runs; each argument is one seed group")
    p.add_argument("groups", nargs="+", help="run directory, or directory of per-seed run directories")
    p.add_argument("--out", default=None, metavar="CSV")
    return parser


# -- subcommands -----------------------------------------------------------


def cmd_gen_expert(cfg):
    dataset = collect_expert(cfg.env_id, cfg.n_expert, cfg.horizon, cfg.seed)
    path = cfg.expert_path or os.path.join(resolve_out(cfg.out_dir, "."), f"expert_{cfg.env_id}.bin")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    dataset.save(path)
    baseline = dataset.mean_diag_return()
    with open(path + ".baseline.txt", "w") as fh:
        fh.write(f"mean_diag_return = {baseline!r}\nepisodes = {len(dataset)}\n")
    print(f"wrote {path}: {len(dataset)} episodes, mean diagnostic return {baseline:.4f}")
    return 0


def cmd_train(cfg):
    out_dir = resolve_out(cfg.out_dir, f"run_{cfg.env_id}_seed{cfg.seed}")
    summary = train(cfg, out_dir=out_dir)
    print(f"run complete: {summary['steps']} steps, {summary['episodes']} episodes")
    print(f"final eval return {summary['final_eval_mean']:.4f} +- {summary['final_eval_std']:.4f}")
    print(f"artifacts in {out_dir}")
    return 0


def cmd_eval(cfg, checkpoint_path):
    policy = policy_from_checkpoint(checkpoint_path)
    mean, std, returns = _evaluate_policy(
        policy,
        cfg.env_id,
        PerturbationSpec.parse(cfg.perturbation),
        cfg.eval_episodes,
        cfg.horizon,
        cfg.seed,
    )
    print(f"eval_return_mean = {mean!r}")
    print(f"eval_return_std = {std!r}")
    print(f"returns = {[round(r, 6) for r in returns.tolist()]}")
    return 0


def cmd_saliency(cfg, checkpoint_path, count):
    sets = load_checkpoint(checkpoint_path)
    encoder = Encoder.from_params(sets["encoder"])
    policy = policy_from_checkpoint(checkpoint_path)
    env = PixelEnv(cfg.env_id, PerturbationSpec.parse(cfg.perturbation), cfg.horizon)
    out_dir = resolve_out(cfg.out_dir, "saliency")
    os.makedirs(out_dir, exist_ok=True)
    for i in range(count):
        rng = stream(cfg.seed, "saliency", i)
        obs = env.reset(int(rng.integers(0, 2**31 - 1)))
        for _ in range(int(rng.integers(0, cfg.horizon))):
            obs, done, _ = env.step(policy(obs.values))
        flat_map = saliency(encoder, obs.values)
        path = os.path.join(out_dir, f"saliency_{i:03d}.pgm")
        write_pgm(path, flat_map, HEIGHT, WIDTH, FRAME_STACK)
        print(f"wrote {path}")
    return 0


def _ablation_overrides(name):
    if name == "raw_pixels":
        return {"reward_space": "pixel"}
    return {name: True}


def cmd_sweep(cfg, seeds, ablation):
    root = resolve_out(cfg.out_dir, f"sweep_{cfg.env_id}")
    os.makedirs(root, exist_ok=True)
    expert_path = cfg.expert_path
    if not expert_path:
        expert_path = os.path.join(root, f"expert_{cfg.env_id}.bin")
        if not os.path.exists(expert_path):
            dataset = collect_expert(cfg.env_id, cfg.n_expert, cfg.horizon, cfg.seed)
            dataset.save(expert_path)
    perturbed = cfg.perturbation if cfg.perturbation != "none" else "random_mask(4,2)"
    cells = []
    for pert_label, pert in (("clean", "none"), ("perturbed", perturbed)):
        for variant in ("full", ablation):
            cells.append((f"{pert_label}-{variant}", pert, variant))
    groups = []
    for label, pert, variant in cells:
        cell_dir = os.path.join(root, label)
        members = []
        for seed in seeds:
            extra = _ablation_overrides(variant) if variant != "full" else {}
            run_cfg = replace(
                cfg,
                perturbation=pert,
                seed=seed,
                expert_path=expert_path,
                out_dir=os.path.join(cell_dir, f"seed{seed}"),
                **extra,
            )
            print(f"[sweep] {label} seed {seed}")
            train(run_cfg)
            members.append(run_cfg.out_dir)
        groups.append(members)
    rows = summarize(groups)
    out_csv = os.path.join(root, "summary.csv")
    write_summary(rows, out_csv)
    print(format_summary(rows))
    print(f"summary written to {out_csv}")
    return 0


# -- aggregation -----------------------------------------------------------


def _final_and_auc(csv_path):
    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise AggregationError(f"{csv_path}: no evaluation rows")
    steps = np.array([float(r["step"]) for r in rows])
    evals = np.array([float(r["eval_return_mean"]) for r in rows])
    final = evals[-1]
    if len(rows) == 1 or steps[-1] == steps[0]:
        return final, final
    area = 0.5 * float(((evals[1:] + evals[:-1]) * np.diff(steps)).sum())
    return final, area / float(steps[-1] - steps[0])


def _group_label(cfg):
    tags = []
    if cfg.no_representation:
        tags.append("no_representation")
    if cfg.no_discriminator:
        tags.append("no_discriminator")
    if cfg.reward_space == "pixel":
        tags.append("raw_pixels")
    variant = "+".join(tags) if tags else "full"
    return f"{cfg.env_id}|{cfg.perturbation}|{variant}"


def _comparable(cfg):
    return canonical(replace(cfg, seed=0, out_dir="", expert_path=""))


def summarize(groups):
    """Aggregate per-seed runs; each group must share one config."""
    if not groups or not any(groups):
        raise AggregationError("no runs to summarize")
    baselines = {}
    rows = []
    for members in groups:
        configs = [load_config(os.path.join(d, "config.txt")) for d in members]
        reference = _comparable(configs[0])
        for d, c in zip(members[1:], configs[1:]):
            if _comparable(c) != reference:
                raise AggregationError(f"{d}: config differs from the rest of its group")
        finals, aucs = [], []
        for d in members:
            final, auc = _final_and_auc(os.path.join(d, "training_log.csv"))
            finals.append(final)
            aucs.append(auc)
        expert_path = configs[0].expert_path
        if expert_path and expert_path not in baselines:
            baselines[expert_path] = load_expert_dataset(expert_path).mean_diag_return()
        baseline = baselines.get(expert_path)
        rows.append(
            {
                "label": _group_label(configs[0]),
                "seeds": len(members),
                "final_return_mean": float(np.mean(finals)),
                "final_return_std": float(np.std(finals)),
                "fraction_of_expert": float(np.mean(finals) / baseline) if baseline else float("nan"),
                "auc": float(np.mean(aucs)),
            }
        )
    return rows


def write_summary(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row["label"],
                    row["seeds"],
                    f"{row['final_return_mean']:.10g}",
                    f"{row['final_return_std']:.10g}",
                    f"{row['fraction_of_expert']:.10g}",
                    f"{row['auc']:.10g}",
                ]
            )


def format_summary(rows):
    table = [list(SUMMARY_COLUMNS)]
    for row in rows:
        table.append(
            [
                str(row["label"]),
                str(row["seeds"]),
                f"{row['final_return_mean']:.3f}",
                f"{row['final_return_std']:.3f}",
                f"{row['fraction_of_expert']:.3f}",
                f"{row['auc']:.3f}",
            ]
        )
    widths = [max(len(line[i]) for line in table) for i in range(len(SUMMARY_COLUMNS))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(line, widths)) for line in table)


def _expand_group(path):
    """A group argument is one run dir or a directory of per-seed run dirs."""
    if os.path.exists(os.path.join(path, "config.txt")):
        return [path]
    members = sorted(
        os.path.join(path, name)
        for name in os.listdir(path)
        if os.path.exists(os.path.join(path, name, "config.txt"))
    )
    if not members:
        raise AggregationError(f"{path}: no completed runs found")
    return members


def cmd_summarize(group_paths, out_csv):
    rows = summarize([_expand_group(p) for p in group_paths])
    print(format_summary(rows))
    if out_csv:
        write_summary(rows, out_csv)
        print(f"summary written to {out_csv}")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "summarize":
            return cmd_summarize(args.groups, args.out)
        cfg = _config_from_args(args)
        if args.command == "gen-expert":
            return cmd_gen_expert(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "saliency":
            return cmd_saliency(cfg, args.checkpoint, args.count)
        if args.command == "sweep":
            seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
            if not seeds:
                raise ConfigError("seeds", "need at least one seed")
            return cmd_sweep(cfg, seeds, args.ablation)
        raise ConfigError("command", f"unknown subcommand {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RilirError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
