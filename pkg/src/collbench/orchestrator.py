"""Benchmark orchestration: descriptors, run expansion, results tree, replay.

Environment and test descriptors are declarative JSON files. The orchestrator
expands their cross product into a run plan, executes each point on the
requested backend (in-process fabric or virtual-time simulator), and writes a
structured results tree:

    <output_root>/<system>/<timestamp>/<backend>-<variant>/p<N>_<policy>/
        <collective>_results.csv
        metadata.log
        alloc.csv

plus one row per run directory in ``<output_root>/<system>_index.csv``, the
central registry used by the analysis tools. ``metadata.log`` captures enough
(verbatim test descriptor, resolved model, topology, versions) to re-execute
the run identically through ``replay``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import secrets
import statistics
from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .algorithms import AlgorithmId, build_schedule
from .fabric import InstrumentationConfig, execute, make_inputs
from .model import CollectiveKind, DataType, PhaseTag, ReduceOp
from .netsim import NetworkModel, simulate
from .tracer import AllocationPolicy, Topology, load_topology, make_allocation

FULL_HEADER = (
    "collective,algorithm,ranks,msg_bytes,variant,iteration,rank,"
    "total_ns,alloc_ns,copy_ns,reduction_ns,communication_ns,sync_ns"
)
STATISTICS_HEADER = "collective,algorithm,ranks,msg_bytes,variant,iteration,min_ns,max_ns,mean_ns,median_ns"
MINIMAL_HEADER = "collective,algorithm,ranks,msg_bytes,variant,iteration,max_ns"
SUMMARY_HEADER = "collective,algorithm,ranks,msg_bytes,variant,min_ns,max_ns,mean_ns,median_ns,stddev_ns"
INDEX_HEADER = (
    "timestamp,test_id,system,collective,algorithms,ranks,min_bytes,max_bytes,"
    "backend,variants,status,path"
)

_PHASE_COLUMNS = [PhaseTag.ALLOC, PhaseTag.COPY, PhaseTag.REDUCTION, PhaseTag.COMMUNICATION, PhaseTag.SYNC]

_SIZE_SUFFIXES = {"kib": 1024, "mib": 1024**2, "gib": 1024**3, "b": 1}


class ConfigError(ValueError):
    """Descriptor violation, reported with the offending field path."""

    def __init__(self, message: str, field_path: str | None = None):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}" if field_path else message)


class Backend(Enum):
    FABRIC = "fabric"
    NETSIM = "netsim"

    def __str__(self) -> str:
        return self.value


class GranularityMode(Enum):
    FULL = "full"
    STATISTICS = "statistics"
    MINIMAL = "minimal"
    SUMMARY = "summary"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def from_key(cls, key: str) -> "GranularityMode":
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown granularity {key!r}")


@dataclass(frozen=True)
class SweepVariant:
    """Named partial override of the environment's network model."""

    name: str
    overrides: dict = field(default_factory=dict)


BASE_VARIANT = SweepVariant("base", {})


def parse_size(text: str) -> int:
    """Parse a byte count with optional KiB/MiB/GiB suffix."""
    raw = str(text).strip()
    lowered = raw.lower()
    for suffix, factor in _SIZE_SUFFIXES.items():
        if lowered.endswith(suffix):
            number = lowered[: -len(suffix)].strip()
            if not number:
                raise ValueError(f"bad size {text!r}")
            return int(float(number) * factor)
    return int(raw)


@dataclass
class EnvConfig:
    """Per-machine description: identity, topology, default model, output root."""

    system_name: str
    topology: Topology
    model: NetworkModel
    output_root: Path
    labels: dict = field(default_factory=dict)
    topology_path: str = ""


@dataclass
class TestConfig:
    collective: CollectiveKind
    algorithms: list[AlgorithmId]
    min_bytes: int
    max_bytes: int
    multiplier: int
    datatype: DataType
    reduce_op: ReduceOp
    ranks: list[int]
    iterations: int
    warmup: int
    backends: list[Backend]
    granularity: GranularityMode
    allocation_policy: AllocationPolicy
    sweeps: list[SweepVariant] = field(default_factory=list)

    def sizes(self) -> list[int]:
        out = []
        size = self.min_bytes
        while size <= self.max_bytes:
            out.append(size)
            size *= self.multiplier
        return out

    @property
    def variants(self) -> list[SweepVariant]:
        return self.sweeps if self.sweeps else [BASE_VARIANT]

    def to_dict(self) -> dict:
        return test_config_dict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TestConfig":
        return parse_test_config(d)


def default_test_dict(collective: str = "allreduce") -> dict:
    """The documented defaults, used by the wizard and by sparse descriptors."""
    kind = CollectiveKind.from_key(collective)
    return {
        "collective": kind.value,
        "algorithms": [a.key for a in AlgorithmId.for_collective(kind)],
        "sizes": {"min_bytes": 1024, "max_bytes": 1048576, "multiplier": 2},
        "datatype": "float32",
        "reduce_op": "sum",
        "ranks": [4],
        "iterations": 10,
        "warmup": 3,
        "backend": "fabric",
        "granularity": "full",
        "allocation_policy": "block",
        "sweeps": [],
    }


_TEST_KEYS = set(default_test_dict())


def parse_test_config(d: dict) -> TestConfig:
    """Validate a test descriptor dict; violations name the field path."""
    if not isinstance(d, dict):
        raise ConfigError("test descriptor must be a JSON object")
    for key in d:
        if key not in _TEST_KEYS:
            raise ConfigError(f"unknown field {key!r}")
    if "collective" not in d:
        raise ConfigError("required field missing", "collective")
    try:
        collective = CollectiveKind.from_key(str(d["collective"]))
    except ValueError as exc:
        raise ConfigError(str(exc), "collective") from None

    merged = default_test_dict(collective.value)
    merged.update(d)

    algorithms = []
    raw_algos = merged["algorithms"]
    if not isinstance(raw_algos, list) or not raw_algos:
        raise ConfigError("must be a non-empty list", "algorithms")
    for key in raw_algos:
        try:
            algorithms.append(AlgorithmId.parse(collective, str(key)))
        except ValueError as exc:
            raise ConfigError(str(exc), "algorithms") from None

    sizes = merged["sizes"]
    if not isinstance(sizes, dict):
        raise ConfigError("must be an object with min_bytes/max_bytes/multiplier", "sizes")
    try:
        min_bytes = int(sizes["min_bytes"])
        max_bytes = int(sizes["max_bytes"])
        multiplier = int(sizes["multiplier"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad sizes object: {exc}", "sizes") from None
    if min_bytes < 1:
        raise ConfigError("must be >= 1", "sizes.min_bytes")
    if max_bytes < min_bytes:
        raise ConfigError("must be >= sizes.min_bytes", "sizes.max_bytes")
    if multiplier < 2:
        raise ConfigError("must be >= 2", "sizes.multiplier")

    try:
        datatype = DataType.from_key(str(merged["datatype"]))
    except ValueError as exc:
        raise ConfigError(str(exc), "datatype") from None
    try:
        reduce_op = ReduceOp.from_key(str(merged["reduce_op"]))
    except ValueError as exc:
        raise ConfigError(str(exc), "reduce_op") from None

    ranks = merged["ranks"]
    if not isinstance(ranks, list) or not ranks or any(int(p) < 1 for p in ranks):
        raise ConfigError("must be a non-empty list of positive rank counts", "ranks")
    ranks = [int(p) for p in ranks]

    iterations = int(merged["iterations"])
    warmup = int(merged["warmup"])
    if iterations < 1:
        raise ConfigError("must be >= 1", "iterations")
    if warmup < 0:
        raise ConfigError("must be >= 0", "warmup")

    backend_key = str(merged["backend"])
    if backend_key == "both":
        backends = [Backend.FABRIC, Backend.NETSIM]
    else:
        try:
            backends = [Backend(backend_key)]
        except ValueError:
            raise ConfigError(f"unknown backend {backend_key!r} (fabric|netsim|both)", "backend") from None

    try:
        granularity = GranularityMode.from_key(str(merged["granularity"]))
    except ValueError as exc:
        raise ConfigError(str(exc), "granularity") from None
    try:
        policy = AllocationPolicy.from_key(str(merged["allocation_policy"]))
    except ValueError as exc:
        raise ConfigError(str(exc), "allocation_policy") from None

    sweeps = []
    raw_sweeps = merged["sweeps"]
    if not isinstance(raw_sweeps, list):
        raise ConfigError("must be a list", "sweeps")
    probe = NetworkModel.homogeneous(1e-6, 1e-9)
    for i, sweep in enumerate(raw_sweeps):
        if not isinstance(sweep, dict) or "name" not in sweep:
            raise ConfigError("each sweep needs a 'name'", f"sweeps[{i}]")
        overrides = {k: v for k, v in sweep.items() if k != "name"}
        try:
            probe.with_overrides(overrides)
        except ValueError as exc:
            raise ConfigError(str(exc), f"sweeps[{i}]") from None
        name = str(sweep["name"])
        if any(s.name == name for s in sweeps):
            raise ConfigError(f"duplicate sweep name {name!r}", f"sweeps[{i}]")
        sweeps.append(SweepVariant(name, overrides))

    return TestConfig(
        collective=collective,
        algorithms=algorithms,
        min_bytes=min_bytes,
        max_bytes=max_bytes,
        multiplier=multiplier,
        datatype=datatype,
        reduce_op=reduce_op,
        ranks=ranks,
        iterations=iterations,
        warmup=warmup,
        backends=backends,
        granularity=granularity,
        allocation_policy=policy,
        sweeps=sweeps,
    )


def test_config_dict(cfg: TestConfig) -> dict:
    backend = "both" if len(cfg.backends) == 2 else cfg.backends[0].value
    return {
        "collective": cfg.collective.value,
        "algorithms": [a.key for a in cfg.algorithms],
        "sizes": {"min_bytes": cfg.min_bytes, "max_bytes": cfg.max_bytes, "multiplier": cfg.multiplier},
        "datatype": cfg.datatype.key,
        "reduce_op": cfg.reduce_op.value,
        "ranks": list(cfg.ranks),
        "iterations": cfg.iterations,
        "warmup": cfg.warmup,
        "backend": backend,
        "granularity": cfg.granularity.value,
        "allocation_policy": cfg.allocation_policy.value,
        "sweeps": [{"name": s.name, **s.overrides} for s in cfg.sweeps],
    }


def canonical_test_json(cfg: TestConfig) -> str:
    """The single serialisation used by both the wizard and the CLI, so the
    two construction paths produce byte-identical descriptors."""
    return json.dumps(test_config_dict(cfg), indent=2, sort_keys=True) + "\n"


def write_test_config(cfg: TestConfig, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(canonical_test_json(cfg))
    return path


def test_id_of(cfg: TestConfig) -> str:
    return hashlib.sha256(canonical_test_json(cfg).encode()).hexdigest()[:8]


def load_test(path: str | Path) -> TestConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"test descriptor not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"parse error in {path}: {exc}") from None
    return parse_test_config(data)


def load_env(path: str | Path) -> EnvConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"environment descriptor not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"parse error in {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("environment descriptor must be a JSON object")
    for key in ("system_name", "topology", "model", "output_root"):
        if key not in data:
            raise ConfigError("required field missing", key)
    topo_path = Path(data["topology"])
    if not topo_path.is_absolute():
        topo_path = path.parent / topo_path
    if not topo_path.exists():
        raise ConfigError(f"referenced topology file not found: {topo_path}", "topology")
    try:
        topology = load_topology(topo_path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad topology file {topo_path}: {exc}", "topology") from None
    try:
        model = NetworkModel.from_dict(data["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad network model: {exc}", "model") from None
    output_root = Path(data["output_root"])
    if not output_root.is_absolute():
        output_root = path.parent / output_root
    return EnvConfig(
        system_name=str(data["system_name"]),
        topology=topology,
        model=model,
        output_root=output_root,
        labels=dict(data.get("labels", {})),
        topology_path=str(topo_path),
    )


@dataclass(frozen=True)
class RunPoint:
    algorithm: AlgorithmId
    p: int
    msg_bytes: int
    variant: SweepVariant
    backend: Backend

    @property
    def run_point_id(self) -> str:
        return f"{self.algorithm.key}/p{self.p}/{self.msg_bytes}"


@dataclass
class RunPlan:
    points: list[RunPoint]
    test: TestConfig

    def __len__(self) -> int:
        return len(self.points)

    def groups(self) -> dict:
        """Run points per output directory: keyed (backend, variant name, p)."""
        grouped: dict = {}
        for backend in dict.fromkeys(pt.backend for pt in self.points):
            for vname in dict.fromkeys(pt.variant.name for pt in self.points):
                for p in dict.fromkeys(pt.p for pt in self.points):
                    members = [
                        pt for pt in self.points
                        if pt.backend is backend and pt.variant.name == vname and pt.p == p
                    ]
                    if members:
                        grouped[(backend, vname, p)] = members
        return grouped


def plan_runs(env: EnvConfig, test: TestConfig) -> RunPlan:
    """Expand the full cross product of algorithms, rank counts, sizes, sweep
    variants and backends, in deterministic algorithm-major order."""
    sizes = test.sizes()
    if not sizes or not test.ranks or not test.algorithms:
        raise ConfigError("empty run plan")
    for p in test.ranks:
        if p > env.topology.capacity:
            raise ConfigError(f"p={p} exceeds topology capacity {env.topology.capacity}", "ranks")
        for alg in test.algorithms:
            if not alg.supports(p):
                raise ConfigError(f"algorithm {alg.key} unsupported for p={p}", "ranks")
            for size in sizes:
                try:
                    build_schedule(alg, p, size, test.datatype.width)
                except ValueError as exc:
                    raise ConfigError(str(exc), "sizes") from None
    for variant in test.variants:
        env.model.with_overrides(variant.overrides)

    points = [
        RunPoint(alg, p, size, variant, backend)
        for alg in test.algorithms
        for p in test.ranks
        for size in sizes
        for variant in test.variants
        for backend in test.backends
    ]
    return RunPlan(points=points, test=test)


@dataclass
class ResultRow:
    collective: str
    algorithm: str
    ranks: int
    msg_bytes: int
    variant: str
    iteration: int
    rank: int
    total_ns: float | int
    phases: dict


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def _point_key(row: ResultRow) -> tuple:
    return (row.collective, row.algorithm, row.ranks, row.msg_bytes, row.variant)


def write_results(rows: Sequence[ResultRow], mode: GranularityMode, path: str | Path) -> Path:
    """Write one results file at the requested granularity.

    full:       one row per (iteration, rank) with per-phase columns
    statistics: per iteration, min/max/mean/median of total_ns across ranks
    minimal:    per iteration, max across ranks
    summary:    one row per point with global aggregates
    """
    if not rows:
        raise ValueError("no measurements to write")
    path = Path(path)
    out = io.StringIO()

    if mode is GranularityMode.FULL:
        out.write(FULL_HEADER + "\n")
        for row in rows:
            phases = [_fmt(row.phases.get(tag, 0)) for tag in _PHASE_COLUMNS]
            out.write(
                f"{row.collective},{row.algorithm},{row.ranks},{row.msg_bytes},{row.variant},"
                f"{row.iteration},{row.rank},{_fmt(row.total_ns)},{','.join(phases)}\n"
            )
    elif mode in (GranularityMode.STATISTICS, GranularityMode.MINIMAL):
        header = STATISTICS_HEADER if mode is GranularityMode.STATISTICS else MINIMAL_HEADER
        out.write(header + "\n")
        grouped: dict = {}
        for row in rows:
            grouped.setdefault((_point_key(row), row.iteration), []).append(float(row.total_ns))
        for (pk, iteration), values in grouped.items():
            prefix = f"{pk[0]},{pk[1]},{pk[2]},{pk[3]},{pk[4]},{iteration}"
            if mode is GranularityMode.STATISTICS:
                out.write(
                    f"{prefix},{_fmt(min(values))},{_fmt(max(values))},"
                    f"{_fmt(statistics.fmean(values))},{_fmt(statistics.median(values))}\n"
                )
            else:
                out.write(f"{prefix},{_fmt(max(values))}\n")
    else:
        out.write(SUMMARY_HEADER + "\n")
        grouped = {}
        for row in rows:
            grouped.setdefault(_point_key(row), []).append(float(row.total_ns))
        for pk, values in grouped.items():
            out.write(
                f"{pk[0]},{pk[1]},{pk[2]},{pk[3]},{pk[4]},"
                f"{_fmt(min(values))},{_fmt(max(values))},{_fmt(statistics.fmean(values))},"
                f"{_fmt(statistics.median(values))},{_fmt(statistics.pstdev(values))}\n"
            )

    path.write_text(out.getvalue())
    return path


def record_metadata(
    run_dir: Path,
    env: EnvConfig,
    test: TestConfig,
    resolved_model: NetworkModel,
    variant: SweepVariant,
    backend: Backend,
    p: int,
    timestamp: str,
) -> Path:
    """Write metadata.log: everything needed to re-execute this run."""
    md = {
        "framework": "collbench",
        "framework_version": __version__,
        "timestamp": timestamp,
        "test_id": test_id_of(test),
        "system": env.system_name,
        "backend": backend.value,
        "variant": {"name": variant.name, "overrides": dict(variant.overrides)},
        "allocation_policy": test.allocation_policy.value,
        "ranks": p,
        "base_model": env.model.to_dict(),
        "resolved_model": resolved_model.to_dict(),
        "topology": env.topology.to_dict(),
        "env_labels": dict(env.labels),
        "output_root": str(env.output_root),
        "test": test_config_dict(test),
    }
    path = run_dir / "metadata.log"
    path.write_text(json.dumps(md, indent=2, sort_keys=True) + "\n")
    return path


@dataclass
class RunReport:
    timestamp: str
    run_dirs: list[Path]
    statuses: dict
    index_path: Path

    @property
    def exit_code(self) -> int:
        return 0 if all(s == "ok" for s in self.statuses.values()) else 1

    @property
    def failed(self) -> list[str]:
        return [k for k, s in self.statuses.items() if s != "ok"]


def _new_timestamp() -> str:
    return datetime.now().strftime("%Y%m%d-%H%M%S") + "-" + secrets.token_hex(2)


def _execute_point(
    point: RunPoint,
    test: TestConfig,
    model: NetworkModel,
    alloc,
    topology: Topology,
) -> list[ResultRow]:
    schedule = build_schedule(point.algorithm, point.p, point.msg_bytes, test.datatype.width)
    rows: list[ResultRow] = []
    common = dict(
        collective=test.collective.value,
        algorithm=point.algorithm.key,
        ranks=point.p,
        msg_bytes=point.msg_bytes,
        variant=point.variant.name,
    )
    if point.backend is Backend.FABRIC:
        inputs = make_inputs(schedule, test.datatype)
        _outputs, measurements = execute(
            schedule,
            inputs,
            test.reduce_op,
            InstrumentationConfig(time_phases=True),
            iterations=test.iterations,
            warmup=test.warmup,
            run_point=point.run_point_id,
        )
        for m in measurements:
            rows.append(
                ResultRow(iteration=m.iteration, rank=m.rank, total_ns=m.total_ns,
                          phases=dict(m.phase_ns), **common)
            )
    else:
        sim = simulate(schedule, model, alloc, topology)
        for iteration in range(test.iterations):
            for rank in range(point.p):
                phases = {tag: sim.phase_s[rank][tag] * 1e9 for tag in PhaseTag}
                rows.append(
                    ResultRow(iteration=iteration, rank=rank,
                              total_ns=sim.completion_s[rank] * 1e9, phases=phases, **common)
                )
    return rows


def run(
    plan: RunPlan,
    env: EnvConfig,
    *,
    timestamp: str | None = None,
    progress: Callable[[str], None] | None = None,
) -> RunReport:
    """Execute a plan and write the results tree plus index rows.

    A failure inside one run directory marks that directory failed in the
    index and moves on; the rest of the plan still executes.
    """
    test = plan.test
    timestamp = timestamp or _new_timestamp()
    say = progress or (lambda _msg: None)
    output_root = Path(env.output_root)
    system_dir = output_root / env.system_name
    index_path = output_root / f"{env.system_name}_index.csv"
    output_root.mkdir(parents=True, exist_ok=True)
    if not index_path.exists():
        index_path.write_text(INDEX_HEADER + "\n")

    report = RunReport(timestamp=timestamp, run_dirs=[], statuses={}, index_path=index_path)
    tid = test_id_of(test)
    sizes = test.sizes()

    for (backend, vname, p), points in plan.groups().items():
        variant = points[0].variant
        rel_dir = Path(env.system_name) / timestamp / f"{backend.value}-{vname}" / (
            f"p{p}_{test.allocation_policy.value}"
        )
        run_dir = output_root / rel_dir
        status = "ok"
        try:
            run_dir.mkdir(parents=True, exist_ok=True)
            resolved_model = env.model.with_overrides(variant.overrides)
            record_metadata(run_dir, env, test, resolved_model, variant, backend, p, timestamp)
            alloc = make_allocation(test.allocation_policy, p, env.topology)
            alloc.to_csv(run_dir / "alloc.csv")
            rows: list[ResultRow] = []
            for point in points:
                say(f"run {backend.value}-{variant.name} {point.run_point_id}")
                rows.extend(_execute_point(point, test, resolved_model, alloc, env.topology))
            write_results(rows, test.granularity, run_dir / f"{test.collective.value}_results.csv")
        except Exception as exc:
            status = "failed"
            say(f"FAILED {rel_dir}: {exc}")
        report.run_dirs.append(run_dir)
        report.statuses[str(rel_dir)] = status
        with open(index_path, "a", newline="") as f:
            csv.writer(f).writerow(
                [
                    timestamp,
                    tid,
                    env.system_name,
                    test.collective.value,
                    ";".join(a.key for a in test.algorithms),
                    p,
                    min(sizes),
                    max(sizes),
                    backend.value,
                    variant.name,
                    status,
                    rel_dir.as_posix(),
                ]
            )
    return report


def read_index(index_path: str | Path) -> list[dict]:
    with open(index_path, newline="") as f:
        return list(csv.DictReader(f))


def replay(metadata_path: str | Path, output_root: str | Path | None = None,
           progress: Callable[[str], None] | None = None) -> RunReport:
    """Re-execute the run described by a metadata.log into a fresh timestamp.

    Simulator runs reproduce their result CSVs bit for bit; fabric runs
    reproduce the structure and re-verify correctness with fresh timings.
    """
    md = json.loads(Path(metadata_path).read_text())
    test = parse_test_config(md["test"])
    variant = SweepVariant(md["variant"]["name"], dict(md["variant"]["overrides"]))
    test = replace(
        test,
        ranks=[int(md["ranks"])],
        backends=[Backend(md["backend"])],
        sweeps=[variant],
    )
    env = EnvConfig(
        system_name=md["system"],
        topology=Topology.from_dict(md["topology"]),
        model=NetworkModel.from_dict(md["base_model"]),
        output_root=Path(output_root) if output_root else Path(md["output_root"]),
        labels=dict(md.get("env_labels", {})),
    )
    plan = plan_runs(env, test)
    return run(plan, env, progress=progress)

