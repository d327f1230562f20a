"""Post-processing of benchmark results.

Loads result trees through the per-system index, normalises them into tidy
records, and derives the paper-style artifacts: gain-ratio matrices, phase
breakdowns, tuning decision tables, and rendered figures (SVG plus a CSV
sidecar holding the exact plotted numbers).

Medians are used throughout; an iteration's completion time is the maximum
across ranks (the collective finishes when its slowest rank does).
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .algorithms import AlgorithmId, step_count
from .model import CollectiveKind, PhaseTag
from .orchestrator import (
    FULL_HEADER,
    MINIMAL_HEADER,
    STATISTICS_HEADER,
    SUMMARY_HEADER,
    GranularityMode,
    read_index,
)
from .tracer import TrafficReport


@dataclass
class Record:
    """One normalised measurement row."""

    system: str
    backend: str
    variant: str
    collective: str
    algorithm: str
    p: int
    msg_bytes: int
    iteration: int | None
    rank: int | None
    total_ns: float
    phases: dict | None
    granularity: GranularityMode


@dataclass
class AggregateResult:
    records: list[Record] = field(default_factory=list)
    skipped_rows: int = 0


_PHASE_ORDER = [PhaseTag.ALLOC, PhaseTag.COPY, PhaseTag.REDUCTION, PhaseTag.COMMUNICATION, PhaseTag.SYNC]


def _parse_results_file(path: Path, system: str, backend: str, variant: str) -> tuple[list[Record], int]:
    records: list[Record] = []
    skipped = 0
    lines = path.read_text().splitlines()
    if not lines:
        return records, 0
    header = lines[0]
    mode = {
        FULL_HEADER: GranularityMode.FULL,
        STATISTICS_HEADER: GranularityMode.STATISTICS,
        MINIMAL_HEADER: GranularityMode.MINIMAL,
        SUMMARY_HEADER: GranularityMode.SUMMARY,
    }.get(header)
    if mode is None:
        raise ValueError(f"unrecognised results header in {path}")
    ncols = len(header.split(","))
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != ncols:
            skipped += 1
            continue
        try:
            common = dict(
                system=system,
                backend=backend,
                variant=parts[4],
                collective=parts[0],
                algorithm=parts[1],
                p=int(parts[2]),
                msg_bytes=int(parts[3]),
                granularity=mode,
            )
            if mode is GranularityMode.FULL:
                phases = {tag: float(v) for tag, v in zip(_PHASE_ORDER, parts[8:13])}
                records.append(
                    Record(iteration=int(parts[5]), rank=int(parts[6]),
                           total_ns=float(parts[7]), phases=phases, **common)
                )
            elif mode is GranularityMode.STATISTICS:
                records.append(
                    Record(iteration=int(parts[5]), rank=None, total_ns=float(parts[7]),
                           phases=None, **common)
                )
            elif mode is GranularityMode.MINIMAL:
                records.append(
                    Record(iteration=int(parts[5]), rank=None, total_ns=float(parts[6]),
                           phases=None, **common)
                )
            else:
                records.append(
                    Record(iteration=None, rank=None, total_ns=float(parts[8]),
                           phases=None, **common)
                )
        except ValueError:
            skipped += 1
    return records, skipped


def aggregate(
    index_path: str | Path,
    *,
    statuses: tuple = ("ok",),
    collective: str | None = None,
    backend: str | None = None,
    variant: str | None = None,
) -> AggregateResult:
    """Load all matching runs listed in a system index into tidy records.

    Summary-granularity runs contribute their single aggregate per point,
    flagged through ``Record.granularity``. Corrupted CSV rows are skipped
    and counted rather than failing the whole selection.
    """
    index_path = Path(index_path)
    root = index_path.parent
    result = AggregateResult()
    for row in read_index(index_path):
        if row["status"] not in statuses:
            continue
        if collective and row["collective"] != collective:
            continue
        if backend and row["backend"] != backend:
            continue
        if variant and row["variants"] != variant:
            continue
        run_dir = root / row["path"]
        if not run_dir.exists():
            raise FileNotFoundError(f"index row points at missing directory: {run_dir}")
        results_file = run_dir / f"{row['collective']}_results.csv"
        if not results_file.exists():
            continue  # failed run directories may have no results file
        records, skipped = _parse_results_file(results_file, row["system"], row["backend"], row["variants"])
        result.records.extend(records)
        result.skipped_rows += skipped
    return result


def _completion_per_iteration(records: list[Record]) -> list[float]:
    """Per-iteration completion times; max across ranks for full records."""
    summary = [r.total_ns for r in records if r.granularity is GranularityMode.SUMMARY]
    if summary:
        return summary
    by_iter: dict = {}
    for r in records:
        by_iter.setdefault(r.iteration, []).append(r.total_ns)
    return [max(vals) for _it, vals in sorted(by_iter.items())]


def median_completion(records: list[Record]) -> float:
    return statistics.median(_completion_per_iteration(records))


@dataclass
class GainMatrix:
    """Median time ratio of the best alternative against a reference algorithm.

    Cells below 1.0 mean a better alternative exists at that (rank count,
    size); when the reference is itself best the ratio is taken against the
    next best, and so sits at or above 1.0 (exactly 1.0 on ties).
    """

    reference: str
    rank_counts: list[int]
    sizes: list[int]
    cells: list[list[float | None]]


def gain_matrix(records: list[Record], reference: AlgorithmId | str) -> GainMatrix:
    ref_key = reference.key if isinstance(reference, AlgorithmId) else str(reference)
    groups: dict = {}
    for r in records:
        groups.setdefault((r.p, r.msg_bytes), {}).setdefault(r.algorithm, []).append(r)
    rank_counts = sorted({p for p, _ in groups})
    sizes = sorted({s for _, s in groups})
    cells: list[list[float | None]] = []
    for p in rank_counts:
        row: list[float | None] = []
        for size in sizes:
            algos = groups.get((p, size), {})
            medians = {alg: median_completion(recs) for alg, recs in algos.items()}
            if ref_key not in medians or len(medians) < 2:
                row.append(None)
                continue
            ref_time = medians[ref_key]
            alternatives = [t for alg, t in medians.items() if alg != ref_key]
            best_alt = min(alternatives)
            row.append(best_alt / ref_time)
        cells.append(row)
    return GainMatrix(reference=ref_key, rank_counts=rank_counts, sizes=sizes, cells=cells)


@dataclass
class BreakdownEntry:
    algorithm: str
    msg_bytes: int
    fractions: dict  # PhaseTag -> fraction of total
    residual: float


def phase_breakdown(records: list[Record]) -> list[BreakdownEntry]:
    """Median per-phase fraction of runtime per (algorithm, size)."""
    with_phases = [r for r in records if r.phases is not None]
    if not with_phases:
        raise ValueError("phase breakdown requires full-granularity records with phase columns")
    groups: dict = {}
    for r in with_phases:
        groups.setdefault((r.algorithm, r.msg_bytes), []).append(r)
    entries = []
    for (alg, size), recs in sorted(groups.items()):
        med_total = statistics.median([r.total_ns for r in recs])
        fractions = {}
        for tag in _PHASE_ORDER:
            med_phase = statistics.median([r.phases.get(tag, 0.0) for r in recs])
            fractions[tag] = (med_phase / med_total) if med_total > 0 else 0.0
        residual = max(0.0, 1.0 - sum(fractions.values()))
        entries.append(BreakdownEntry(alg, size, fractions, residual))
    return entries


@dataclass(frozen=True)
class TuningRule:
    collective: str
    ranks_min: int
    ranks_max: int
    bytes_min: int
    bytes_max: int
    algorithm: str

    def format(self) -> str:
        return (
            f"{self.collective} {self.ranks_min} {self.ranks_max} "
            f"{self.bytes_min} {self.bytes_max} {self.algorithm}"
        )


@dataclass
class TuningTable:
    rules: list[TuningRule]

    def format(self) -> str:
        lines = ["# collective ranks_min ranks_max bytes_min bytes_max algorithm"]
        lines += [rule.format() for rule in self.rules]
        return "\n".join(lines) + "\n"

    def choice(self, collective: str, p: int, msg_bytes: int) -> str | None:
        for rule in self.rules:
            if (
                rule.collective == collective
                and rule.ranks_min <= p <= rule.ranks_max
                and rule.bytes_min <= msg_bytes <= rule.bytes_max
            ):
                return rule.algorithm
        return None

    @classmethod
    def parse(cls, text: str) -> "TuningTable":
        rules = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            coll, rmin, rmax, bmin, bmax, alg = line.split()
            rules.append(TuningRule(coll, int(rmin), int(rmax), int(bmin), int(bmax), alg))
        return cls(rules)


def _intervals(values: list[int]) -> list[tuple[int, int]]:
    """Partition of the measured domain: each value owns [itself, next-1]."""
    out = []
    for i, v in enumerate(values):
        hi = values[i + 1] - 1 if i + 1 < len(values) else v
        out.append((v, hi))
    return out


def emit_tuning_table(records: list[Record], path: str | Path | None = None) -> TuningTable:
    """Per (collective, rank interval, size interval), the algorithm with the
    minimal median time; ties broken by fewer steps, then lexicographically."""
    if not records:
        raise ValueError("no records to tune from")
    rules: list[TuningRule] = []
    by_collective: dict = {}
    for r in records:
        by_collective.setdefault(r.collective, []).append(r)
    for collective, recs in sorted(by_collective.items()):
        kind = CollectiveKind.from_key(collective)
        groups: dict = {}
        for r in recs:
            groups.setdefault((r.p, r.msg_bytes), {}).setdefault(r.algorithm, []).append(r)
        ps = sorted({p for p, _ in groups})
        sizes = sorted({s for _, s in groups})
        p_intervals = dict(zip(ps, _intervals(ps)))
        size_intervals = dict(zip(sizes, _intervals(sizes)))
        for p in ps:
            for size in sizes:
                algos = groups.get((p, size))
                if not algos:
                    continue
                medians = {alg: median_completion(rs) for alg, rs in algos.items()}

                def rank_key(alg: str) -> tuple:
                    return (medians[alg], step_count(AlgorithmId.parse(kind, alg), p), alg)

                winner = min(medians, key=rank_key)
                pmin, pmax = p_intervals[p]
                bmin, bmax = size_intervals[size]
                rules.append(TuningRule(collective, pmin, pmax, bmin, bmax, winner))
    table = TuningTable(rules)
    if path is not None:
        Path(path).write_text(table.format())
    return table


class RenderKind(Enum):
    HEATMAP = "heatmap"
    BARS = "bars"
    LINES = "lines"
    BREAKDOWN = "breakdown"
    TRACER_PANEL = "tracer_panel"

    def __str__(self) -> str:
        return self.value


@dataclass
class BarsData:
    categories: list[str]
    series: dict  # label -> list of values aligned with categories
    ylabel: str = "time (ns)"


@dataclass
class LinesData:
    x: list[int]
    series: dict  # label -> list of values aligned with x
    xlabel: str = "message size (bytes)"
    ylabel: str = "time (ns)"


@dataclass
class RenderResult:
    svg_path: Path
    csv_path: Path


def render(
    kind: RenderKind,
    data,
    out_dir: str | Path,
    test_id: str,
    meta: dict | None = None,
    cell_map=None,
) -> RenderResult:
    """Render one artifact as ``<test_id>_<kind>.svg`` plus a CSV sidecar.

    The sidecar holds the exact plotted numbers (and the display labels drawn
    on the figure), so every number visible in the SVG can be traced back to
    data. Raises before writing anything when the data is empty or the wrong
    shape for the kind.
    """
    from . import figures  # deferred: keeps matplotlib out of non-plotting paths

    out_dir = Path(out_dir)
    builders = {
        RenderKind.HEATMAP: (GainMatrix, figures.heatmap_figure),
        RenderKind.BARS: (BarsData, figures.bars_figure),
        RenderKind.LINES: (LinesData, figures.lines_figure),
        RenderKind.BREAKDOWN: (list, figures.breakdown_figure),
        RenderKind.TRACER_PANEL: (list, figures.tracer_panel_figure),
    }
    expected_type, builder = builders[kind]
    if not isinstance(data, expected_type):
        raise ValueError(f"{kind} expects {expected_type.__name__}, got {type(data).__name__}")
    if kind is RenderKind.BREAKDOWN and (not data or not all(isinstance(e, BreakdownEntry) for e in data)):
        raise ValueError("breakdown expects a non-empty list of BreakdownEntry")
    if kind is RenderKind.TRACER_PANEL and (not data or not all(isinstance(e, TrafficReport) for e in data)):
        raise ValueError("tracer_panel expects a non-empty list of TrafficReport")

    if kind is RenderKind.TRACER_PANEL:
        fig, header, rows = builder(data, test_id, cell_map=cell_map)
    else:
        fig, header, rows = builder(data, test_id)
    out_dir.mkdir(parents=True, exist_ok=True)
    svg_path = out_dir / f"{test_id}_{kind.value}.svg"
    csv_path = out_dir / f"{test_id}_{kind.value}.csv"
    meta_items = {"test_id": test_id, "kind": kind.value, **(meta or {})}
    figures.annotate_meta(fig, meta_items)
    meta_line = "# " + ",".join(f"{k}={v}" for k, v in meta_items.items())
    lines = [meta_line, ",".join(header)] + [",".join(str(c) for c in row) for row in rows]
    csv_path.write_text("\n".join(lines) + "\n")
    figures.save_svg(fig, svg_path)
    return RenderResult(svg_path=svg_path, csv_path=csv_path)
