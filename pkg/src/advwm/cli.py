"""Command-line entry points.

Subcommands: gen-demos, pretrain, run, eval, fingerprint, report.
Exit codes: 0 success, 2 configuration error, 3 runtime fault (the
persisted state path, when one exists, is printed).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import coordinator, env, evalsuite, wm
from .config import ArmConfig, ConfigError, dump_config, load_config
from .fingerprint import fingerprint, novel_modes
from .latent import load_codec
from .pat_buffer import load_buffer


def _cmd_gen_demos(args) -> int:
    trajs = env.gen_passive_dataset(args.kind, args.episodes, args.length, args.base_seed)
    env.save_dataset(trajs, args.out)
    print(f"wrote {len(trajs)} {args.kind} episodes to {args.out}")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = load_config(args.config) if args.config else ArmConfig(mode="phase1")
    art = coordinator.run_phase1(cfg, args.out)
    print(f"phase-1 checkpoint: {art.wm_path}")
    print(f"reference policy:   {art.ref_path}")
    print(f"eval curve:         {art.eval_csv}")
    return 0


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "arm_config.txt").write_text(dump_config(cfg))
    art = coordinator.run_arm(cfg, outdir, args.phase1)
    print(f"checkpoint: {art.checkpoint}")
    print(f"buffer:     {art.buffer_dir}")
    print(f"metrics:    {art.metrics_csv}")
    return 0


def _load_eval_dataset(spec: str) -> list[env.Trajectory]:
    path = Path(spec)
    if (path / "index.json").exists():  # buffer snapshot
        return [e.trajectory for e in load_buffer(path).entries]
    return env.load_dataset(path)


def _cmd_eval(args) -> int:
    codec = load_codec(args.codec)
    if args.protocol == "cross_buffer":
        checkpoints, buffers = {}, {}
        for spec in args.arm:
            name, ckpt, buf = spec.split(":")
            checkpoints[name], _ = wm.load_wm_checkpoint(ckpt)
            buffers[name] = _load_eval_dataset(buf)
        result = evalsuite.cross_buffer_eval(checkpoints, buffers, codec, args.seed)
        lines = ["arm,l_regret,l_afs,pixel_mse"]
        for arm in sorted(result):
            m = result[arm]
            lines.append(f"{arm},{m['l_regret']!r},{m['l_afs']!r},{m['pixel_mse']!r}")
        Path(args.out).write_text("\n".join(lines) + "\n")
        print(f"wrote cross-buffer metrics to {args.out}")
        return 0

    params, _ = wm.load_wm_checkpoint(args.checkpoint)
    dataset = _load_eval_dataset(args.dataset)
    if args.protocol == "heldout":
        records = evalsuite.eval_checkpoint(
            params, codec, dataset, args.seed, args.seed_chunks, args.horizon
        )
        evalsuite.write_metrics_csv(
            args.out, records, run_id=args.run_id, arm=args.arm_label,
            dataset=args.dataset, horizon=args.horizon,
        )
    else:  # long_horizon
        records = evalsuite.long_horizon_eval(
            params, codec, dataset, args.seed, args.seed_chunks, args.horizon
        )
        cols = (
            "traj_id,l_regret_final,pixel_mse_final,mean_abs_diff_final,"
            "l_regret_first,pixel_mse_first"
        )
        lines = [cols]
        for r in records:
            lines.append(
                ",".join(
                    [r["traj_id"]]
                    + [repr(r[c]) for c in cols.split(",")[1:]]
                )
            )
        Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {len(records)} rows to {args.out}")
    return 0


def _window_labels(trajs, seed_chunks: int, horizon_chunks: int) -> list[str]:
    start = seed_chunks * env.CHUNK
    end = start + horizon_chunks * env.CHUNK
    return [fingerprint(t.actions[start:end]).label for t in trajs if len(t) >= end]


def _cmd_fingerprint(args) -> int:
    candidates = {}
    for spec in args.candidate:
        name, path = spec.split(":", 1)
        candidates[name] = _window_labels(
            _load_eval_dataset(path), args.seed_chunks, args.horizon
        )
    references = [
        _window_labels(_load_eval_dataset(p), args.seed_chunks, args.horizon)
        for p in args.reference
    ]
    novel = novel_modes(candidates, references)
    lines = ["label,source,count"]
    for label, per_source in novel.items():
        for source, count in sorted(per_source.items()):
            lines.append(f"{label},{source},{count}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"{len(novel)} strictly novel modes -> {args.out}")
    return 0


def _cmd_report(args) -> int:
    arm_csvs = []
    for spec in args.arm:
        name, path = spec.split(":", 1)
        arm_csvs.append((name, path))
    rows = evalsuite.comparison_report(arm_csvs, fractions=tuple(args.fraction))
    evalsuite.write_report_csv(args.out, rows)
    print(f"wrote comparison report to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="advwm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-demos", help="generate scripted demonstration episodes")
    g.add_argument("--kind", choices=env.DEMO_KINDS, required=True)
    g.add_argument("--episodes", type=int, required=True)
    g.add_argument("--length", type=int, default=12)
    g.add_argument("--base-seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_gen_demos)

    g = sub.add_parser("pretrain", help="phase-1 pretraining plus the reference policy")
    g.add_argument("--config", default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_pretrain)

    g = sub.add_parser("run", help="run one adversarial arm")
    g.add_argument("--config", required=True)
    g.add_argument("--phase1", required=True, help="directory produced by pretrain")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_run)

    g = sub.add_parser("eval", help="evaluation protocols")
    g.add_argument("--protocol", choices=("heldout", "long_horizon", "cross_buffer"),
                   default="heldout")
    g.add_argument("--checkpoint")
    g.add_argument("--codec", required=True)
    g.add_argument("--dataset", help="trajectory dir or buffer snapshot dir")
    g.add_argument("--arm", action="append", default=[],
                   help="name:checkpoint:buffer (cross_buffer only, repeat)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--seed-chunks", type=int, default=2)
    g.add_argument("--horizon", type=int, default=2)
    g.add_argument("--run-id", default="run")
    g.add_argument("--arm-label", default="arm")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_eval)

    g = sub.add_parser("fingerprint", help="action-mode report across sources")
    g.add_argument("--candidate", action="append", required=True, help="name:path (repeat)")
    g.add_argument("--reference", action="append", required=True, help="path (repeat)")
    g.add_argument("--seed-chunks", type=int, default=2)
    g.add_argument("--horizon", type=int, default=2)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_fingerprint)

    g = sub.add_parser("report", help="comparison tables with delta-percent rows")
    g.add_argument("--arm", action="append", required=True,
                   help="name:metrics.csv (repeat; first is the baseline)")
    g.add_argument("--fraction", action="append", type=float, default=None,
                   help="hardest-subset fractions (default 0.25 and 0.10)")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "fraction", None) is None and args.command == "report":
        args.fraction = [0.25, 0.10]
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime fault
        print(f"runtime fault: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
