"""Command-line surface.

Commands: ``demo`` (generate demonstration files), ``inspect-keyframes``
(print the keyframe table of a trajectory file), ``inspect-qmap`` (dump
per-pixel Q grids for a checkpoint), ``train`` (run a configuration),
``ablate`` (run the preset suite), ``bc`` (behavioural-cloning baseline),
and ``report`` (aggregate metrics CSVs into mean/min/max curves).

Every artifact lands under the command's --out directory; metrics and
heat maps are numeric CSV files.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import sys
from pathlib import Path

import numpy as np

TOGGLE_FIELDS = {
    "qattention": "use_qattention",
    "demo_aug": "use_demo_aug",
    "confidence": "use_confidence",
    "qreg": "use_qreg",
}


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pixelpose",
        description="Attention-guided next-best-pose manipulation learning",
    )
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("demo", help="generate scripted demonstration files")
    d.add_argument("--task", default="lift_block")
    d.add_argument("--demos", type=int, default=10)
    d.add_argument("--seed", type=int, default=0, help="first demo seed")
    d.add_argument("--out", required=True)
    d.add_argument("--image-size", type=int, default=64)

    k = sub.add_parser("inspect-keyframes", help="print a trajectory's keyframes")
    k.add_argument("--traj", required=True)
    k.add_argument("--eps-v", type=float, default=1e-3)

    q = sub.add_parser("inspect-qmap", help="dump per-pixel Q grids to CSV")
    q.add_argument("--ckpt", required=True)
    q.add_argument("--traj", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--frame", type=int, default=-1, help="-1 dumps every frame")
    q.add_argument("--config", default=None)

    t = sub.add_parser("train", help="run one training configuration")
    t.add_argument("--config", default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--task", default=None)
    t.add_argument("--demos", type=int, default=None)
    t.add_argument("--crop", type=int, default=None)
    t.add_argument("--env-steps", type=int, default=None)
    t.add_argument(
        "--toggle",
        action="append",
        default=[],
        metavar="NAME=on|off",
        help=f"component toggles: {', '.join(sorted(TOGGLE_FIELDS))}",
    )

    a = sub.add_parser("ablate", help="run the ablation preset suite")
    a.add_argument("--config", default=None)
    a.add_argument("--out", required=True)
    a.add_argument("--parallel", type=int, default=1)
    a.add_argument("--presets", default=None, help="comma list; default all")

    b = sub.add_parser("bc", help="train the behavioural-cloning baseline")
    b.add_argument("--demo-dir", required=True)
    b.add_argument("--epochs", type=int, default=30)
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--config", default=None)

    r = sub.add_parser("report", help="aggregate metrics CSVs into curves")
    r.add_argument("--runs", nargs="+", required=True)
    r.add_argument("--out", required=True)
    return p


def _load_or_default_config(path):
    from .config import RunConfig, load_config

    return load_config(path) if path else RunConfig()


def _apply_overrides(cfg, args):
    updates = {}
    if args.seed is not None:
        updates["seeds"] = (args.seed,)
    if args.task is not None:
        updates["task"] = args.task
    if args.demos is not None:
        updates["demo_count"] = args.demos
    if args.crop is not None:
        updates["crop_size"] = args.crop
    if getattr(args, "env_steps", None) is not None:
        updates["env_steps"] = args.env_steps
    for toggle in args.toggle:
        name, _, value = toggle.partition("=")
        if name not in TOGGLE_FIELDS or value.lower() not in ("on", "off"):
            raise SystemExit(f"bad --toggle {toggle!r}; use NAME=on|off")
        updates[TOGGLE_FIELDS[name]] = value.lower() == "on"
    return dataclasses.replace(cfg, **updates)


def _cmd_demo(args) -> int:
    from .teacher import generate_demo, save_trajectory
    from .world import SimConfig

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = SimConfig(image_size=args.image_size)
    for i in range(args.demos):
        traj = generate_demo(args.task, args.seed + i, cfg)
        path = out / f"{args.task}_{args.seed + i:05d}.traj"
        save_trajectory(path, traj)
        print(f"wrote {path} ({len(traj)} frames)")
    return 0


def _cmd_inspect_keyframes(args) -> int:
    from .keyframes import discover_keyframes
    from .teacher import load_trajectory

    traj = load_trajectory(args.traj)
    kf = discover_keyframes(traj, args.eps_v)
    print(f"trajectory {args.traj}: {len(traj)} frames, {len(kf)} keyframes")
    print(f"{'index':>6}  {'rules':<18} {'label_x':>7} {'label_y':>7}")
    for idx, rules, label in zip(kf.indices, kf.rules, kf.labels):
        print(f"{idx:>6}  {'+'.join(rules):<18} {label[0]:>7} {label[1]:>7}")
    return 0


def _cmd_inspect_qmap(args) -> int:
    from .attention import QAttentionAgent, argmax2d
    from .checkpoint import load_arrays
    from .teacher import load_trajectory

    cfg = _load_or_default_config(args.config)
    traj = load_trajectory(args.traj)
    agent = QAttentionAgent(cfg.sim_config().workspace)
    arrays, _ = load_arrays(args.ckpt)
    agent.load_state_arrays(arrays)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frames = range(len(traj)) if args.frame < 0 else [args.frame]
    chosen_lines = ["frame,x,y"]
    for i in frames:
        qmap = agent.qmap(traj.frames[i].obs)
        np.savetxt(out / f"qmap_{i:04d}.csv", qmap, delimiter=",")
        x, y = argmax2d(qmap)
        chosen_lines.append(f"{i},{x},{y}")
        print(f"frame {i}: argmax pixel ({x}, {y})")
    (out / "chosen.csv").write_text("\n".join(chosen_lines) + "\n", encoding="utf-8")
    return 0


def _cmd_train(args) -> int:
    from .training import run

    cfg = _apply_overrides(_load_or_default_config(args.config), args)
    results = run(cfg, args.out)
    for seed, summary in results.items():
        print(
            f"seed {seed}: {summary['env_steps']} env steps, "
            f"final eval success {summary['final_eval_success']:.2f}"
        )
    return 0


def _run_preset(payload) -> tuple[str, float]:
    name, text, out_dir = payload
    from .config import config_from_text
    from .training import run

    results = run(config_from_text(text), out_dir)
    rates = [s["final_eval_success"] for s in results.values()]
    return name, float(np.mean(rates))


def _cmd_ablate(args) -> int:
    import multiprocessing as mp

    from .config import ablation_suite, config_to_text

    base = _load_or_default_config(args.config)
    suite = ablation_suite(base)
    jobs = {"full": suite.default, **suite.presets}
    if args.presets:
        wanted = {"full", *args.presets.split(",")}
        jobs = {n: c for n, c in jobs.items() if n in wanted}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payloads = [
        (name, config_to_text(cfg), str(out / name)) for name, cfg in jobs.items()
    ]
    if args.parallel > 1:
        ctx = mp.get_context("spawn")
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=args.parallel, mp_context=ctx
        ) as pool:
            results = list(pool.map(_run_preset, payloads))
    else:
        results = [_run_preset(p) for p in payloads]
    for name, rate in results:
        print(f"{name}: mean final success {rate:.2f}")
    return 0


def _cmd_bc(args) -> int:
    from .bc import bc_train
    from .teacher import load_trajectory

    paths = sorted(Path(args.demo_dir).glob("*.traj"))
    if not paths:
        raise SystemExit(f"no .traj files in {args.demo_dir}")
    trajectories = [load_trajectory(p) for p in paths]
    cfg = _load_or_default_config(args.config)
    summary = bc_train(
        trajectories, args.epochs, cfg, seed=args.seed, run_dir=args.out
    )
    print(
        f"bc: {summary['samples']} samples, final loss "
        f"{summary['epoch_losses'][-1]:.4f}, eval success "
        f"{summary.get('eval_success_rate', float('nan')):.2f}"
    )
    return 0


def _cmd_report(args) -> int:
    from .training import aggregate_eval_curves, write_curve_csv

    csvs = []
    for d in args.runs:
        path = Path(d)
        if path.is_file():
            csvs.append(path)
        else:
            csvs.extend(sorted(path.glob("**/metrics.csv")))
    if not csvs:
        raise SystemExit("no metrics.csv files found under the given runs")
    rows = aggregate_eval_curves(csvs)
    write_curve_csv(args.out, rows)
    print(f"wrote {args.out} ({len(rows)} rows from {len(csvs)} metrics files)")
    return 0


COMMANDS = {
    "demo": _cmd_demo,
    "inspect-keyframes": _cmd_inspect_keyframes,
    "inspect-qmap": _cmd_inspect_qmap,
    "train": _cmd_train,
    "ablate": _cmd_ablate,
    "bc": _cmd_bc,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
