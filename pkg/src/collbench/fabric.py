"""In-process execution of schedules over concurrent logical ranks.

Each rank runs as a worker thread holding real payload buffers and follows
its scheduled action list: non-blocking sends into a shared mailbox, blocking
receives by (peer, tag), local reductions and copies. Wall-clock time is
accumulated per instrumentation phase with a monotonic nanosecond clock, per
rank, so no cross-rank clock comparison is needed.

Every iteration starts from a barrier that sits outside the timed window, so
per-rank totals measure the collective itself rather than thread scheduling
skew at iteration start.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .algorithms import Action, ActionKind, Region, Schedule
from .model import (
    CollectiveKind,
    DataType,
    PhaseTag,
    RankVector,
    ReduceOp,
    naive_oracle,
)

DEFAULT_TIMEOUT_S = 10.0


class FabricError(RuntimeError):
    """Execution produced structurally or numerically wrong results."""


class DeadlockError(RuntimeError):
    """A rank waited past the timeout on a receive with no matching send."""


@dataclass(frozen=True)
class InstrumentationConfig:
    """What the executor records and what it subtracts from totals.

    Phases named in ``exclude_phases`` are still executed and timed, but
    their measured duration is subtracted from ``total_ns`` and they are
    omitted from the reported per-phase map. Exclusion requires phase timing.
    """

    time_phases: bool = True
    exclude_phases: frozenset = frozenset()
    per_step: bool = False

    def validate(self) -> None:
        if self.exclude_phases and not self.time_phases:
            raise ValueError("exclude_phases requires time_phases")
        for tag in self.exclude_phases:
            if not isinstance(tag, PhaseTag):
                raise ValueError(f"exclude_phases entries must be PhaseTag, got {tag!r}")


@dataclass
class Measurement:
    """Timing record for one (iteration, rank)."""

    run_point: str
    iteration: int
    rank: int
    total_ns: int
    phase_ns: dict = field(default_factory=dict)
    per_step_ns: list | None = None


@dataclass
class VerificationReport:
    ok: bool
    mismatch: tuple[int, int] | None = None  # (rank, element index)
    message: str = ""


class _Mailbox:
    """Matched point-to-point channels keyed by (iteration, tag)."""

    def __init__(self):
        self._cond = threading.Condition()
        self._slots: dict = {}
        self._failed: BaseException | None = None

    def put(self, key, payload) -> None:
        with self._cond:
            self._slots[key] = payload
            self._cond.notify_all()

    def take(self, key, timeout_s: float, diag: Callable[[], str]):
        with self._cond:
            ok = self._cond.wait_for(
                lambda: key in self._slots or self._failed is not None, timeout=timeout_s
            )
            if self._failed is not None:
                raise FabricError("peer worker failed") from self._failed
            if not ok:
                raise DeadlockError(diag())
            return self._slots.pop(key)

    def abort(self, exc: BaseException) -> None:
        with self._cond:
            self._failed = exc
            self._cond.notify_all()


def make_inputs(
    schedule: Schedule,
    dtype: DataType,
    seed: int | None = None,
) -> list[RankVector]:
    """Default payloads: rank r's buffer filled with r+1 (human-checkable),
    or pseudo-random contents when a seed is given."""
    n = schedule.input_elements
    out = []
    rng = np.random.default_rng(seed) if seed is not None else None
    for r in range(schedule.p):
        if rng is None:
            data = np.full(n, r + 1, dtype=dtype.np_dtype)
        elif dtype.is_integer:
            data = rng.integers(1, 100, size=n).astype(dtype.np_dtype)
        else:
            data = rng.uniform(0.0, 1.0, size=n).astype(dtype.np_dtype)
        out.append(RankVector(r, data))
    return out


def verify(
    outputs: Sequence[RankVector],
    expected: Sequence[RankVector],
    dtype: DataType,
) -> VerificationReport:
    """Exact comparison for integers, relative-tolerance for floats."""
    if len(outputs) != len(expected):
        return VerificationReport(False, None, f"rank count {len(outputs)} vs {len(expected)}")
    tol = dtype.rel_tol
    for got, want in zip(outputs, expected):
        a, b = np.asarray(got.data), np.asarray(want.data)
        if a.shape != b.shape:
            return VerificationReport(False, (got.rank, 0), f"rank {got.rank}: shape {a.shape} vs {b.shape}")
        if tol == 0.0:
            bad = np.nonzero(a != b)[0]
        else:
            bad = np.nonzero(~np.isclose(a, b, rtol=tol, atol=0.0))[0]
        if bad.size:
            i = int(bad[0])
            return VerificationReport(
                False, (got.rank, i), f"rank {got.rank} index {i}: {a[i]!r} != {b[i]!r}"
            )
    return VerificationReport(True)


def _gather(work: np.ndarray, inp: np.ndarray, region: Region) -> np.ndarray:
    buf = inp if region.source == "input" else work
    if len(region.runs) == 1:
        a, b = region.runs[0]
        return buf[a:b].copy()
    return np.concatenate([buf[a:b] for a, b in region.runs])


def _scatter(work: np.ndarray, region: Region, data: np.ndarray) -> None:
    off = 0
    for a, b in region.runs:
        work[a:b] = data[off : off + (b - a)]
        off += b - a


def _combine_into(work: np.ndarray, region: Region, data: np.ndarray, op: ReduceOp) -> None:
    off = 0
    for a, b in region.runs:
        work[a:b] = op.combine(work[a:b], data[off : off + (b - a)])
        off += b - a


class _Worker:
    def __init__(self, rank: int, schedule: Schedule, inp: np.ndarray, op: ReduceOp,
                 mailbox: _Mailbox, barrier: threading.Barrier, timeout_s: float):
        self.rank = rank
        self.schedule = schedule
        self.input = inp
        self.op = op
        self.mailbox = mailbox
        self.barrier = barrier
        self.timeout_s = timeout_s
        self.work = np.zeros(schedule.elements, dtype=inp.dtype)
        self.raw_phase_ns: dict = {}
        self.per_step_ns: list = []
        self.wall_ns = 0

    def run_iteration(self, iteration: int, instr: InstrumentationConfig) -> None:
        self.raw_phase_ns = {tag: 0 for tag in PhaseTag}
        self.per_step_ns = []
        staged: dict = {}
        scratch = None  # keeps alloc results alive for the iteration
        self.barrier.wait()
        t_start = time.perf_counter_ns()
        for step, acts in enumerate(self.schedule.steps[self.rank]):
            step_ns = 0
            for act in acts:
                t0 = time.perf_counter_ns()
                scratch = self._apply(act, iteration, staged, scratch)
                dt = time.perf_counter_ns() - t0
                if instr.time_phases:
                    self.raw_phase_ns[act.phase] += dt
                    if act.kind is not ActionKind.SYNC:
                        step_ns += dt
            if instr.per_step:
                self.per_step_ns.append(step_ns)
        self.wall_ns = time.perf_counter_ns() - t_start

    def _apply(self, act: Action, iteration: int, staged: dict, scratch):
        kind = act.kind
        if kind is ActionKind.SEND:
            payload = _gather(self.work, self.input, act.src)
            self.mailbox.put((iteration, act.tag), payload)
        elif kind is ActionKind.RECV:
            tag = act.tag
            data = self.mailbox.take(
                (iteration, tag),
                self.timeout_s,
                lambda: (
                    f"deadlock: rank {self.rank} waited {self.timeout_s}s at step {tag[0]} "
                    f"for tag {tag} from rank {act.peer}"
                ),
            )
            if act.dst is not None:
                _scatter(self.work, act.dst, data)
            else:
                staged[tag] = data
        elif kind is ActionKind.REDUCE:
            _combine_into(self.work, act.dst, staged.pop(act.tag), self.op)
        elif kind is ActionKind.COPY:
            _scatter(self.work, act.dst, _gather(self.work, self.input, act.src))
        elif kind is ActionKind.ALLOC:
            scratch = np.empty(act.bytes, dtype=np.uint8)
        elif kind is ActionKind.SYNC:
            self.barrier.wait()
        return scratch

    def output(self) -> np.ndarray:
        if self.schedule.collective is CollectiveKind.REDUCE_SCATTER:
            blk = self.schedule.block_elements
            return self.work[self.rank * blk : (self.rank + 1) * blk].copy()
        return self.work.copy()


def execute(
    schedule: Schedule,
    inputs: Sequence[RankVector],
    op: ReduceOp = ReduceOp.SUM,
    instr: InstrumentationConfig = InstrumentationConfig(),
    iterations: int = 10,
    warmup: int = 3,
    *,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    check_result: bool = True,
    run_point: str = "",
) -> tuple[list[RankVector], list[Measurement]]:
    """Run a schedule with real payloads; return outputs and per-rank timings.

    Warmup iterations are executed but not recorded; one Measurement is
    produced per (recorded iteration, rank). Integer results are bit-identical
    across repeated executions regardless of worker interleaving because each
    rank's data operations are fully determined by its schedule.
    """
    instr.validate()
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    if len(inputs) != schedule.p:
        raise ValueError(f"expected {schedule.p} inputs, got {len(inputs)}")
    expected_elems = schedule.input_elements
    for v in inputs:
        if v.elements != expected_elems:
            raise ValueError(
                f"rank {v.rank}: expected {expected_elems} input elements, got {v.elements}"
            )
    dtype = DataType.from_key(str(inputs[0].data.dtype))

    mailbox = _Mailbox()
    barrier = threading.Barrier(schedule.p)
    workers = [
        _Worker(r, schedule, inputs[r].data, op, mailbox, barrier, timeout_s)
        for r in range(schedule.p)
    ]
    measurements: list[Measurement] = []
    lock = threading.Lock()
    errors: list[BaseException] = []

    def run_rank(worker: _Worker) -> None:
        try:
            for it in range(-warmup, iterations):
                worker.run_iteration(it, instr)
                if it < 0:
                    continue
                excluded = sum(worker.raw_phase_ns[t] for t in instr.exclude_phases)
                phase_ns = {
                    t: v for t, v in worker.raw_phase_ns.items() if t not in instr.exclude_phases
                } if instr.time_phases else {}
                m = Measurement(
                    run_point=run_point,
                    iteration=it,
                    rank=worker.rank,
                    total_ns=worker.wall_ns - excluded,
                    phase_ns=phase_ns,
                    per_step_ns=list(worker.per_step_ns) if instr.per_step else None,
                )
                with lock:
                    measurements.append(m)
        except BaseException as exc:  # propagate to the caller, unblock peers
            with lock:
                errors.append(exc)
            mailbox.abort(exc)
            barrier.abort()

    threads = [threading.Thread(target=run_rank, args=(w,), daemon=True) for w in workers]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]

    outputs = [RankVector(w.rank, w.output()) for w in workers]
    if check_result:
        expected = naive_oracle(schedule.collective, list(inputs), op)
        report = verify(outputs, expected, dtype)
        if not report.ok:
            raise FabricError(f"result mismatch: {report.message}")
    measurements.sort(key=lambda m: (m.iteration, m.rank))
    return outputs, measurements
