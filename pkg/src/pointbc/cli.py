"""Command line interface.

Subcommands: demo-gen (record expert demonstrations), train (behavior
cloning, optionally multi-seed), eval (success rates to CSV and an
optional SVG chart), ablate (representation-variant sweep), report
(re-render a chart from a CSV).

A JSON config file (--config) may set any field under {"policy": {...},
"task": {...}}; explicit flags override the file.  Exit codes: 0 on
success, 2 for configuration or validation problems, 3 for runtime
failures such as diverged training or corrupted data.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import dataset, nn, report, runner, sim
from .policy import PolicyConfig, PolicyNetwork, TrainingDiverged, train_bc

log = logging.getLogger("pointbc")


class ConfigError(Exception):
    """A problem the user can fix: bad flags, paths, or config files."""


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    if not os.path.isfile(path):
        raise ConfigError(f"config file {path} does not exist")
    try:
        with open(path) as f:
            cfg = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    unknown = set(cfg) - {"policy", "task"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def _build_policy_config(file_cfg: dict, overrides: dict) -> PolicyConfig:
    values = dict(file_cfg.get("policy", {}))
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return PolicyConfig(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad policy config: {e}") from e


def _build_task_config(file_cfg: dict, overrides: dict) -> sim.TaskConfig:
    values = dict(file_cfg.get("task", {}))
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return sim.task_from_dict(values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad task config: {e}") from e


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError as e:
        raise ConfigError(f"bad seed list {text!r}") from e
    if not seeds:
        raise ConfigError("empty seed list")
    return seeds


def _ensure_parent_dir(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise ConfigError(f"output directory {parent} does not exist")


def _ensure_out_dir(path: str) -> None:
    if os.path.exists(path) and not os.path.isdir(path):
        raise ConfigError(f"output path {path} exists and is not a directory")
    os.makedirs(path, exist_ok=True)


# ---------------------------------------------------------------- commands


def cmd_demo_gen(args) -> int:
    file_cfg = _load_config(args.config)
    task = _build_task_config(
        file_cfg, {"resolution": args.resolution, "horizon": args.horizon}
    )
    _ensure_out_dir(args.out)
    children = np.random.SeedSequence(args.seed).spawn(args.demos)
    trajectories = []
    for i, child in enumerate(children):
        traj = dataset.collect_demo(
            task,
            int(child.generate_state(1)[0]),
            action_noise=args.action_noise,
            noise_prob=args.noise_prob,
        )
        trajectories.append(traj)
        log.info("demo %d/%d: %d steps", i + 1, args.demos, traj.steps)
    dataset.save_demo_set(args.out, trajectories)
    with open(os.path.join(args.out, "task.json"), "w") as f:
        json.dump(dataclasses.asdict(task), f, indent=2, sort_keys=True)
    print(f"collected {len(trajectories)}/{args.demos} successful demonstrations -> {args.out}")
    return 0


def cmd_train(args) -> int:
    file_cfg = _load_config(args.config)
    cfg = _build_policy_config(file_cfg, {"epochs": args.epochs})
    if args.variant is not None:
        if args.variant not in runner.VARIANTS:
            raise ConfigError(f"unknown variant {args.variant!r} (choose from {runner.VARIANTS})")
        cfg = runner.variant_config(cfg, args.variant)
    if not os.path.isdir(args.data):
        raise ConfigError(f"dataset directory {args.data} does not exist")
    _ensure_out_dir(args.out)
    seeds = _parse_seeds(args.seeds) if args.seeds else [args.seed]

    demos = dataset.load_demonstrations(args.data, cfg, args.demos)
    log.info("loaded %d demonstrations", len(demos))
    for seed in seeds:
        state_path = os.path.join(args.out, f"train_state_s{seed}.ckpt")
        resume = args.resume and os.path.isfile(state_path)
        result = train_bc(
            demos,
            cfg,
            seed,
            log_fn=lambda rec: log.info(
                "seed %d epoch %d: train %.4f full %.4f", seed, rec["epoch"],
                rec["train_loss"], rec["full_loss"],
            ),
            state_path=state_path,
            resume=resume,
        )
        ckpt = os.path.join(args.out, f"policy_s{seed}.ckpt")
        result.network.save(
            ckpt, extra={"seed": seed, "best_epoch": result.best_epoch,
                         "best_loss": result.best_loss},
        )
        with open(os.path.join(args.out, f"trace_s{seed}.json"), "w") as f:
            json.dump(result.trace, f, indent=2, sort_keys=True)
        print(
            f"seed {seed}: best epoch {result.best_epoch} "
            f"loss {result.best_loss:.4f} -> {ckpt}"
        )
    return 0


def cmd_eval(args) -> int:
    file_cfg = _load_config(args.config)
    task = _build_task_config(file_cfg, {"horizon": args.horizon})
    variations = [v.strip() for v in args.variation.split(",")]
    for v in variations:
        if v not in sim.VARIATIONS:
            raise ConfigError(f"unknown variation {v!r} (choose from {sim.VARIATIONS})")
    for ckpt in args.ckpt:
        if not os.path.isfile(ckpt):
            raise ConfigError(f"checkpoint {ckpt} does not exist")
    _ensure_parent_dir(args.out)

    reference = None
    if args.data:
        if not os.path.isdir(args.data):
            raise ConfigError(f"dataset directory {args.data} does not exist")
        reference = runner.load_reference(args.data)

    records = []
    for variation in variations:
        for ckpt in args.ckpt:
            network = PolicyNetwork.load(ckpt)
            _, meta = nn.read_arrays(ckpt)
            seed_label = meta.get("extra", {}).get("seed", args.seed)
            res = runner.evaluate_network(
                network, task, variation, args.episodes, args.seed,
                tracker=args.tracker, jobs=args.jobs, variation_seed=args.variation_seed,
                reference=reference,
            )
            records.append(
                report.EvalRecord(variation, int(seed_label), args.episodes, res.successes)
            )
            print(f"{ckpt}: {res.successes}/{args.episodes} on {variation}")
    records.extend(report.aggregate_records(records))
    report.write_csv(args.out, records)
    print(f"wrote {args.out}")
    if args.chart:
        _ensure_parent_dir(args.chart)
        report.svg_bar_chart(args.chart, records)
        print(f"wrote {args.chart}")
    return 0


def cmd_ablate(args) -> int:
    file_cfg = _load_config(args.config)
    cfg = _build_policy_config(file_cfg, {"epochs": args.epochs})
    task = _build_task_config(file_cfg, {"horizon": args.horizon})
    if not os.path.isdir(args.data):
        raise ConfigError(f"dataset directory {args.data} does not exist")
    _ensure_out_dir(args.out)
    variants = list(runner.VARIANTS)
    if args.variants:
        variants = [v.strip() for v in args.variants.split(",")]
        for v in variants:
            if v not in runner.VARIANTS:
                raise ConfigError(f"unknown variant {v!r} (choose from {runner.VARIANTS})")
    variations = args.variations.split(",") if args.variations else [
        "canonical", "background_hard", "camera_easy", "camera_hard",
    ]
    for v in variations:
        if v not in sim.VARIATIONS:
            raise ConfigError(f"unknown variation {v!r} (choose from {sim.VARIATIONS})")

    records = runner.run_ablation(
        args.data, cfg, _parse_seeds(args.seeds), args.episodes, args.seed,
        task, variations, variants, log_fn=lambda msg: log.info("%s", msg),
    )
    csv_path = os.path.join(args.out, "ablation.csv")
    report.write_csv(csv_path, records)
    report.svg_bar_chart(
        os.path.join(args.out, "ablation.svg"), records,
        title="Success rate by representation",
    )
    for (variant, variation), rate in sorted(report.summarize(records).items()):
        print(f"{variant:18s} {variation:18s}: {rate:.1f}%")
    print(f"wrote {csv_path}")
    return 0


def cmd_report(args) -> int:
    if not os.path.isfile(args.csv):
        raise ConfigError(f"csv file {args.csv} does not exist")
    _ensure_parent_dir(args.out)
    records = report.read_csv(args.csv)
    report.svg_bar_chart(args.out, records, title=args.title)
    print(f"wrote {args.out}")
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pointbc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("demo-gen", help="record scripted-expert demonstrations")
    g.add_argument("--out", required=True, help="dataset directory to create")
    g.add_argument("--demos", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--resolution", type=int, default=None)
    g.add_argument("--horizon", type=int, default=None)
    g.add_argument(
        "--action-noise", type=float, default=0.0,
        help="gaussian sigma added to executed position deltas; labels stay clean",
    )
    g.add_argument(
        "--noise-prob", type=float, default=1.0,
        help="fraction of steps the execution noise applies to",
    )
    g.add_argument("--config", default=None)
    g.set_defaults(fn=cmd_demo_gen)

    t = sub.add_parser("train", help="behavior-clone a policy from demonstrations")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="directory for checkpoints and traces")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--seeds", default=None, help="comma-separated training seeds")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--demos", type=int, default=None, help="limit demonstrations")
    t.add_argument("--variant", default=None, help=f"one of {runner.VARIANTS}")
    t.add_argument("--resume", action="store_true", help="continue from saved training state")
    t.add_argument("--config", default=None)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="roll episodes and write success rates")
    e.add_argument("--ckpt", nargs="+", required=True)
    e.add_argument(
        "--variation", default="canonical",
        help="variation name, or a comma-separated list of them",
    )
    e.add_argument("--episodes", type=int, default=20)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--variation-seed", type=int, default=0)
    e.add_argument("--horizon", type=int, default=None)
    e.add_argument("--tracker", default="ground_truth", choices=("ground_truth", "iou"))
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument(
        "--data", default=None,
        help="training dataset root; enables appearance re-grounding on new_object",
    )
    e.add_argument("--out", required=True, help="CSV output path")
    e.add_argument("--chart", default=None, help="optional SVG output path")
    e.add_argument("--config", default=None)
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="train and evaluate representation variants")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--seeds", default="0")
    a.add_argument("--seed", type=int, default=0, help="evaluation seed")
    a.add_argument("--episodes", type=int, default=20)
    a.add_argument("--epochs", type=int, default=None)
    a.add_argument("--horizon", type=int, default=None)
    a.add_argument("--variants", default=None)
    a.add_argument("--variations", default=None)
    a.add_argument("--config", default=None)
    a.set_defaults(fn=cmd_ablate)

    r = sub.add_parser("report", help="render an SVG chart from an eval CSV")
    r.add_argument("--csv", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--title", default="Success rate by variation")
    r.set_defaults(fn=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s"
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        log.error("%s", e)
        return 2
    except (TrainingDiverged, RuntimeError, OSError, ValueError) as e:
        log.error("%s", e)
        return 3


if __name__ == "__main__":
    sys.exit(main())
