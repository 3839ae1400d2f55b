"""Batch front-end: dataset generation, runs, oracle comparison, sweeps.

Subcommands: gen, run, compare, sweep, schedule. Every command is
deterministic given its config; sweep parallelism is bounded by --jobs and
the HIHGNN_SIM_THREADS environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .graph import SyntheticSpec, gen_synthetic, save_hetgraph
from .presets import PRESET_NAMES, synthetic_preset
from .runner import (
    ORACLE_TOLERANCE,
    ExperimentConfig,
    SWEEP_AXES,
    compare_oracle,
    load_graph,
    run_experiment,
    run_sweep,
    schedule_graphs,
    select_semantic_graphs,
    write_outputs,
    write_sweep_csv,
)
from .scheduling import save_schedule


def _tristate(value):
    if value in ("on", "true", "1"):
        return True
    if value in ("off", "false", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {value!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hihgnn-sim",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic graph file")
    g.add_argument("--preset", choices=PRESET_NAMES)
    g.add_argument("--spec", help="JSON file with a synthetic spec")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    def add_run_flags(sp):
        sp.add_argument("--config", required=True, help="experiment JSON file")
        sp.add_argument("--model")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--lanes", dest="num_lanes", type=int)
        sp.add_argument("--fusion", type=_tristate)
        sp.add_argument("--balance", type=_tristate)
        sp.add_argument("--rab", type=_tristate)
        sp.add_argument("--schedule")
        sp.add_argument("--output-dir", dest="output_dir")

    r = sub.add_parser("run", help="run one experiment and write its reports")
    add_run_flags(r)

    c = sub.add_parser("compare", help="max relative error, fused vs oracle")
    add_run_flags(c)

    s = sub.add_parser("sweep", help="run an ablation axis, emit a CSV")
    add_run_flags(s)
    s.add_argument("--axis", required=True, choices=SWEEP_AXES)
    s.add_argument("--points", nargs="*",
                   help="axis points (lane counts, schedules, or graph counts)")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", help="CSV path (default <output_dir>/sweep.csv)")

    e = sub.add_parser("schedule", help="emit the execution order only")
    add_run_flags(e)
    e.add_argument("--out", help="schedule path (default <output_dir>/schedule.json)")
    return p


def _config_from_args(args) -> ExperimentConfig:
    overrides = {k: getattr(args, k, None) for k in
                 ("model", "seed", "num_lanes", "fusion", "balance", "rab",
                  "schedule", "output_dir")}
    return ExperimentConfig.from_file(args.config, **overrides)


def cmd_gen(args) -> int:
    if (args.preset is None) == (args.spec is None):
        raise SystemExit("gen: give exactly one of --preset/--spec")
    if args.preset:
        spec = synthetic_preset(args.preset, seed=args.seed)
    else:
        with open(args.spec) as f:
            doc = json.load(f)
        doc.setdefault("seed", args.seed)
        spec = SyntheticSpec.from_dict(doc)
    g = gen_synthetic(spec)
    save_hetgraph(g, args.out)
    edges = {r.name: g.num_edges(r.name) for r in g.relations}
    print(f"wrote {args.out}: "
          f"{sum(t.count for t in g.vertex_types)} vertices, "
          f"{sum(edges.values())} edges {edges}")
    return 0


def cmd_run(args) -> int:
    config = _config_from_args(args)
    arts = run_experiment(config)
    paths = write_outputs(arts, config.output_dir)
    report = arts.report
    print(f"{config.model} {report.mode} lanes={report.num_lanes} "
          f"cycles={report.total_cycles} "
          f"dram={report.dram_read_bytes + report.dram_write_bytes}B "
          f"-> {config.output_dir}")
    for name in sorted(paths):
        print(f"  {paths[name]}")
    return 0


def cmd_compare(args) -> int:
    config = _config_from_args(args)
    err = compare_oracle(config)
    ok = err <= ORACLE_TOLERANCE
    print(f"max relative error: {err:.3e} "
          f"({'within' if ok else 'EXCEEDS'} {ORACLE_TOLERANCE:.0e})")
    return 0 if ok else 1


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    rows = run_sweep(config, args.axis, points=args.points, jobs=args.jobs)
    out = args.out or os.path.join(config.output_dir, "sweep.csv")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    write_sweep_csv(rows, out)
    print(f"wrote {out}: {len(rows)} rows on axis {args.axis}")
    return 0


def cmd_schedule(args) -> int:
    config = _config_from_args(args)
    g = load_graph(config)
    sgs = select_semantic_graphs(g, config)
    _, order = schedule_graphs(sgs, config)
    out = args.out or os.path.join(config.output_dir, "schedule.json")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    save_schedule(out, order)
    print(f"wrote {out}: {' -> '.join(order.ids)}"
          + (f" (cost {order.cost:.4f})" if order.cost is not None else ""))
    return 0


_COMMANDS = {"gen": cmd_gen, "run": cmd_run, "compare": cmd_compare,
             "sweep": cmd_sweep, "schedule": cmd_schedule}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
