"""Flag-based command line interface.

Subcommands: ``init`` (wizard), ``gen`` (flags to descriptor), ``run``,
``replay``, ``analyze``, ``trace``. Exit codes: 0 all good, 1 some runs
failed, 2 configuration or usage error. Every subcommand prints the paths it
wrote on success.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .algorithms import build_schedule
from .model import CollectiveKind
from .orchestrator import (
    ConfigError,
    default_test_dict,
    load_env,
    load_test,
    parse_size,
    plan_runs,
    replay,
    run,
    parse_test_config,
    write_test_config,
)
from .tracer import AllocationPolicy, load_topology, make_allocation, rank_cell_map, trace


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="collbench",
        description="benchmark collective communication algorithms on an in-process "
        "fabric or a virtual-time network model",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_init = sub.add_parser("init", help="build a test descriptor interactively")
    p_init.add_argument("--env", help="environment descriptor (shown on the review screen)")
    p_init.add_argument("--out", default="test.json", help="descriptor output path")

    p_gen = sub.add_parser("gen", help="build a test descriptor from flags")
    p_gen.add_argument("--collective", default="allreduce",
                       choices=[k.value for k in CollectiveKind])
    p_gen.add_argument("--algorithms", help="comma-separated algorithm keys (default: all)")
    p_gen.add_argument("--ranks", default="4", help="comma-separated rank counts")
    p_gen.add_argument("--sizes", default="1KiB:1MiB:2",
                       help="MIN:MAX:MULTIPLIER with optional KiB/MiB/GiB suffixes")
    p_gen.add_argument("--datatype", default="float32")
    p_gen.add_argument("--reduce-op", default="sum", dest="reduce_op")
    p_gen.add_argument("--iterations", type=int, default=10)
    p_gen.add_argument("--warmup", type=int, default=3)
    p_gen.add_argument("--backend", default="fabric", choices=["fabric", "netsim", "both"])
    p_gen.add_argument("--granularity", default="full",
                       choices=["full", "statistics", "minimal", "summary"])
    p_gen.add_argument("--alloc-policy", default="block", choices=["block", "rr"],
                       dest="alloc_policy")
    p_gen.add_argument("--sweep", action="append", default=[],
                       help="named model override, e.g. 'rails4:rails=4'; repeatable")
    p_gen.add_argument("--out", default="test.json")

    p_run = sub.add_parser("run", help="execute a test descriptor")
    p_run.add_argument("--env", required=True)
    p_run.add_argument("--test", required=True)
    p_run.add_argument("--quiet", action="store_true", help="suppress per-point progress lines")

    p_replay = sub.add_parser("replay", help="re-execute a run from its metadata.log")
    p_replay.add_argument("--metadata", required=True)
    p_replay.add_argument("--output-root", dest="output_root")

    p_an = sub.add_parser("analyze", help="post-process runs listed in a system index")
    p_an.add_argument("--index", required=True)
    p_an.add_argument("--out", help="artifact directory (default: <index dir>/analysis)")
    p_an.add_argument("--gain", metavar="REFERENCE",
                      help="emit a gain heatmap against this reference algorithm")
    p_an.add_argument("--phases", action="store_true", help="emit a phase breakdown chart")
    p_an.add_argument("--tuning", action="store_true", help="emit a tuning decision file")
    p_an.add_argument("--collective", help="restrict to one collective")
    p_an.add_argument("--backend", help="restrict to one backend")
    p_an.add_argument("--variant", help="restrict to one sweep variant")

    p_tr = sub.add_parser("trace", help="estimate traffic placement for a test's algorithms")
    p_tr.add_argument("--test", required=True)
    p_tr.add_argument("--topology", required=True)
    p_tr.add_argument("--policy", default="block", choices=["block", "rr"])
    p_tr.add_argument("--ranks", type=int, help="rank count (default: largest in the test)")
    p_tr.add_argument("--size", help="message size (default: largest in the test)")
    p_tr.add_argument("--out", default="trace_out")
    return parser


def _cmd_init(args) -> int:
    from .wizard import WizardUnavailable, run_wizard

    env = load_env(args.env) if args.env else None
    try:
        path = run_wizard(env, args.out)
    except WizardUnavailable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if path is None:
        return 2
    print(f"wrote {path}")
    return 0


def _cmd_gen(args) -> int:
    try:
        min_s, max_s, mult = args.sizes.split(":")
    except ValueError:
        raise ConfigError("--sizes expects MIN:MAX:MULTIPLIER") from None
    d = default_test_dict(args.collective)
    if args.algorithms:
        d["algorithms"] = [a for a in args.algorithms.replace(" ", "").split(",") if a]
    d["sizes"] = {
        "min_bytes": parse_size(min_s),
        "max_bytes": parse_size(max_s),
        "multiplier": int(mult),
    }
    d["ranks"] = [int(p) for p in args.ranks.replace(" ", "").split(",") if p]
    d["datatype"] = args.datatype
    d["reduce_op"] = args.reduce_op
    d["iterations"] = args.iterations
    d["warmup"] = args.warmup
    d["backend"] = args.backend
    d["granularity"] = args.granularity
    d["allocation_policy"] = args.alloc_policy
    sweeps = []
    for spec in args.sweep:
        if ":" not in spec:
            raise ConfigError(f"--sweep expects NAME:key=value[,key=value], got {spec!r}")
        name, assignments = spec.split(":", 1)
        sweep: dict = {"name": name}
        for assignment in assignments.split(","):
            if "=" not in assignment:
                raise ConfigError(f"bad sweep assignment {assignment!r}")
            key, value = assignment.split("=", 1)
            try:
                sweep[key] = int(value)
            except ValueError:
                sweep[key] = float(value)
        sweeps.append(sweep)
    d["sweeps"] = sweeps
    cfg = parse_test_config(d)
    path = write_test_config(cfg, args.out)
    print(f"wrote {path} ({len(cfg.sizes())} sizes x {len(cfg.ranks)} rank counts "
          f"x {len(cfg.algorithms)} algorithms)")
    return 0


def _cmd_run(args) -> int:
    env = load_env(args.env)
    test = load_test(args.test)
    plan = plan_runs(env, test)
    progress = None if args.quiet else print
    print(f"plan: {len(plan)} run points")
    report = run(plan, env, progress=progress)
    for rel, status in report.statuses.items():
        print(f"{status:>6}  {Path(env.output_root) / rel}")
    print(f"index: {report.index_path}")
    return report.exit_code


def _cmd_replay(args) -> int:
    report = replay(args.metadata, args.output_root)
    for rel, status in report.statuses.items():
        print(f"{status:>6}  {rel}")
    print(f"index: {report.index_path}")
    return report.exit_code


def _cmd_analyze(args) -> int:
    from .analysis import (
        RenderKind,
        aggregate,
        emit_tuning_table,
        gain_matrix,
        phase_breakdown,
        render,
    )
    from .orchestrator import read_index

    if not (args.gain or args.phases or args.tuning):
        raise ConfigError("analyze needs at least one of --gain, --phases, --tuning")
    index_path = Path(args.index)
    out_dir = Path(args.out) if args.out else index_path.parent / "analysis"
    selection = aggregate(
        index_path,
        collective=args.collective,
        backend=args.backend,
        variant=args.variant,
    )
    if selection.skipped_rows:
        print(f"warning: skipped {selection.skipped_rows} corrupted result rows", file=sys.stderr)
    if not selection.records:
        raise ConfigError("selection matched no records")
    rows = [r for r in read_index(index_path) if r["status"] == "ok"]
    test_id = rows[-1]["test_id"] if rows else "analysis"
    meta = {
        "system": rows[-1]["system"] if rows else "unknown",
        "backend": args.backend or "all",
        "variant": args.variant or "all",
    }
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.gain:
        gm = gain_matrix(selection.records, args.gain)
        result = render(RenderKind.HEATMAP, gm, out_dir, test_id, meta=meta)
        print(f"wrote {result.svg_path}\nwrote {result.csv_path}")
    if args.phases:
        entries = phase_breakdown(selection.records)
        result = render(RenderKind.BREAKDOWN, entries, out_dir, test_id, meta=meta)
        print(f"wrote {result.svg_path}\nwrote {result.csv_path}")
    if args.tuning:
        table_path = out_dir / f"{test_id}_tuning.txt"
        emit_tuning_table(selection.records, table_path)
        print(f"wrote {table_path}")
    return 0


def _cmd_trace(args) -> int:
    from .analysis import RenderKind, render

    test = load_test(args.test)
    topo = load_topology(args.topology)
    policy = AllocationPolicy.from_key(args.policy)
    p = args.ranks or max(test.ranks)
    size = parse_size(args.size) if args.size else max(test.sizes())
    alloc = make_allocation(policy, p, topo)
    reports = []
    print(f"{'algorithm':<24}{'intra_node':>12}{'local':>12}{'global':>12}")
    for alg in test.algorithms:
        schedule = build_schedule(alg, p, size, test.datatype.width)
        report = trace(schedule, alloc, topo)
        reports.append(report)
        print(f"{report.label:<24}{report.intra_node_bytes:>12}{report.local_bytes:>12}"
              f"{report.global_bytes:>12}")
    grid = rank_cell_map(alloc, topo)
    result = render(
        RenderKind.TRACER_PANEL,
        reports,
        args.out,
        f"{test.collective.value}-p{p}-{policy.value}",
        meta={"topology": topo.name, "policy": policy.value},
        cell_map=grid,
    )
    print(f"wrote {result.svg_path}\nwrote {result.csv_path}")
    return 0


_HANDLERS = {
    "init": _cmd_init,
    "gen": _cmd_gen,
    "run": _cmd_run,
    "replay": _cmd_replay,
    "analyze": _cmd_analyze,
    "trace": _cmd_trace,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
