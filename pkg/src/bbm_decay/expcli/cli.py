"""Command-line driver: ``python -m bbm_decay.expcli <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, ExperimentConfig, config_from_dict, parse_config, sim_hash
from .experiments import OUT_ENV, output_dir, run_experiment, summarize
from .plots import KINDS, emit_plot
from .records import SnapshotError, read_header, read_records, restore, state_hash


def _load(path: str | None, preset: str | None = None) -> ExperimentConfig:
    if path:
        return parse_config(Path(path).read_text())
    if preset is None:
        raise ConfigError("--config", "a config file is required")
    return config_from_dict({"preset": preset})


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, sim=replace(cfg.sim, seed=args.seed))
    if getattr(args, "replicates", None) is not None:
        if args.replicates < 1:
            raise ConfigError("--replicates", "must be >= 1")
        cfg = replace(cfg, replicates=args.replicates)
    if getattr(args, "out", None) is not None:
        cfg = replace(cfg, output_dir=args.out)
    if getattr(args, "workers", None) is not None:
        cfg = replace(cfg, workers=args.workers)
    return cfg


def _finish(cfg, result, out_stream):
    text = json.dumps(result.summary, indent=2, sort_keys=True, default=str)
    out = output_dir(cfg)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{cfg.preset}.summary.json").write_text(text + "\n")
    print(text, file=out_stream)
    return 0


def cmd_simulate(args, out_stream):
    cfg = _apply_overrides(_load(args.config), args)
    resume = restore(args.resume, sim_hash(cfg.sim)) if args.resume else None
    if args.snapshot_at is not None and not args.snapshot:
        raise ConfigError("--snapshot", "needed together with --snapshot-at")
    res = run_experiment(cfg, resume=resume, snapshot_at=args.snapshot_at,
                         snapshot_path=args.snapshot)
    return _finish(cfg, res, out_stream)


def cmd_envelope(args, out_stream):
    if args.config:
        cfg = _load(args.config)
    else:
        if args.c is None:
            raise ConfigError("--c", "give --c or --config")
        params = {"c": args.c}
        if args.t:
            params["t_list"] = args.t
        if args.beta is not None:
            params["beta"] = args.beta
        cfg = config_from_dict({"preset": "envelope", "params": params})
    cfg = _apply_overrides(cfg, args)
    return _finish(cfg, run_experiment(cfg), out_stream)


def cmd_bounds(args, out_stream):
    cfg = _apply_overrides(_load(args.config, "bounds-verify"), args)
    if not args.config and args.replicates is None:
        cfg = replace(cfg, replicates=100_000)
    res = run_experiment(cfg)
    _finish(cfg, res, out_stream)
    return 0 if res.summary.get("all_pass") else 1


def cmd_report(args, out_stream):
    records = read_records(args.records)
    header = read_header(args.records)
    summary = summarize(records)
    print(json.dumps({"preset": header.get("preset"), "rows": len(records),
                      "per_time": summary}, indent=2, sort_keys=True), file=out_stream)
    if args.plot:
        script = emit_plot(records, args.plot, m=args.m)
        target = Path(args.plot_out) if args.plot_out else Path(args.records).with_suffix(
            f".{args.plot}.gp")
        target.write_text(script)
        print(f"plot script written to {target}", file=out_stream)
    return 0


def cmd_snapshot(args, out_stream):
    state = restore(args.path)
    info = {"time": state.time, "step_count": state.step_count, "particles": state.n,
            "replicas": state.replica_index.tolist(), "hash": state_hash(state),
            "curves": [c.to_dict() for c in state.curves], "tubes": list(state.tubes)}
    print(json.dumps(info, indent=2), file=out_stream)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bbm_decay.expcli",
                                description="Branching Brownian motion with mass decay: experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, replicates=True):
        sp.add_argument("--config", help="JSON experiment configuration")
        sp.add_argument("--seed", type=int, help="override sim.seed")
        if replicates:
            sp.add_argument("--replicates", type=int, help="override replicates")
        sp.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")
        sp.add_argument("--workers", type=int, help="worker processes for replicates")

    s = sub.add_parser("simulate", help="run a simulation preset")
    common(s)
    s.add_argument("--resume", help="continue from a snapshot file")
    s.add_argument("--snapshot-at", type=float, help="write a snapshot of replicate 0 at this time")
    s.add_argument("--snapshot", help="snapshot path for --snapshot-at")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("envelope", help="solve the envelope equation and check its properties")
    common(e, replicates=False)
    e.add_argument("--c", type=float, help="curve constant, 0 < c < c*")
    e.add_argument("--t", type=float, nargs="*", help="horizons")
    e.add_argument("--beta", type=float)
    e.set_defaults(func=cmd_envelope)

    b = sub.add_parser("bounds", help="Monte Carlo verification of the tail bounds")
    common(b)
    b.set_defaults(func=cmd_bounds)

    r = sub.add_parser("report", help="summarize a records file, optionally emit a plot script")
    r.add_argument("--records", required=True)
    r.add_argument("--plot", choices=KINDS)
    r.add_argument("--plot-out")
    r.add_argument("--m", type=float, default=0.5)
    r.set_defaults(func=cmd_report)

    t = sub.add_parser("snapshot-tools", help="inspect a snapshot")
    t.add_argument("path")
    t.set_defaults(func=cmd_snapshot)
    return p


def main(argv=None, out_stream=None) -> int:
    out_stream = sys.stdout if out_stream is None else out_stream
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out_stream)
    except (ConfigError, SnapshotError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
