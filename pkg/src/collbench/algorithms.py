"""Per-rank schedule construction for the reference collective algorithms.

A :class:`Schedule` is the single structural description consumed by the
in-process executor (``fabric``), the virtual-time cost simulator
(``netsim``) and the traffic tracer (``tracer``): for every rank, an ordered
list of bulk-synchronous steps, each holding the actions that rank performs
in that round. Matched send/recv pairs always share a step index, which is
what makes the same schedule executable, simulatable and traceable.

Step and per-rank volume accounting for payload n bytes over p ranks:

    ring allreduce                     A = 2(p-1)    B = 2n(p-1)/p
    recursive doubling allreduce       A = log2 p    B = n log2 p
    rabenseifner allreduce             A = 2 log2 p  B = 2n(p-1)/p
    distance halving reduce-scatter    A = log2 p    B = n(p-1)/p
    distance doubling reduce-scatter   A = log2 p    B = n(p-1)/p
    ring reduce-scatter / allgather    A = p-1       B = n(p-1)/p
    recursive doubling allgather       A = log2 p    B = n(p-1)/p
    pairwise alltoall                  A = p-1       B = n(p-1)/p

``msg_bytes`` is the collective's problem size n: the per-rank vector for
allreduce and reduce-scatter, the gathered result for allgather (each rank
contributes n/p), and the full per-rank send buffer for alltoall.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator

from .model import CollectiveKind, PhaseTag

Tag = tuple[int, int, int]  # (step, source rank, destination rank)


class AlgorithmId(Enum):
    """A concrete algorithm for one collective, with its rank constraint."""

    ALLREDUCE_RING = (CollectiveKind.ALLREDUCE, "ring", False)
    ALLREDUCE_RECURSIVE_DOUBLING = (CollectiveKind.ALLREDUCE, "recursive_doubling", True)
    ALLREDUCE_RABENSEIFNER = (CollectiveKind.ALLREDUCE, "rabenseifner", True)
    REDUCE_SCATTER_DISTANCE_HALVING = (CollectiveKind.REDUCE_SCATTER, "distance_halving", True)
    REDUCE_SCATTER_DISTANCE_DOUBLING = (CollectiveKind.REDUCE_SCATTER, "distance_doubling", True)
    REDUCE_SCATTER_RING = (CollectiveKind.REDUCE_SCATTER, "ring", False)
    ALLGATHER_RING = (CollectiveKind.ALLGATHER, "ring", False)
    ALLGATHER_DISTANCE_DOUBLING = (CollectiveKind.ALLGATHER, "distance_doubling", True)
    ALLTOALL_PAIRWISE = (CollectiveKind.ALLTOALL, "pairwise", False)

    def __init__(self, collective: CollectiveKind, key: str, power_of_two: bool):
        self.collective = collective
        self.key = key
        self.requires_power_of_two = power_of_two

    def __str__(self) -> str:
        return f"{self.collective}:{self.key}"

    def supports(self, p: int) -> bool:
        if p < 2:
            return False
        if self.requires_power_of_two:
            return p & (p - 1) == 0
        return True

    @classmethod
    def for_collective(cls, kind: CollectiveKind) -> list["AlgorithmId"]:
        return [a for a in cls if a.collective is kind]

    @classmethod
    def parse(cls, kind: CollectiveKind, key: str) -> "AlgorithmId":
        for a in cls:
            if a.collective is kind and a.key == key:
                return a
        valid = ", ".join(a.key for a in cls.for_collective(kind))
        raise ValueError(f"unknown algorithm {key!r} for {kind} (valid: {valid})")


class ActionKind(Enum):
    SEND = "send"
    RECV = "recv"
    REDUCE = "reduce"
    COPY = "copy"
    ALLOC = "alloc"
    SYNC = "sync"

    def __str__(self) -> str:
        return self.value


_PHASE_OF = {
    ActionKind.SEND: PhaseTag.COMMUNICATION,
    ActionKind.RECV: PhaseTag.COMMUNICATION,
    ActionKind.REDUCE: PhaseTag.REDUCTION,
    ActionKind.COPY: PhaseTag.COPY,
    ActionKind.ALLOC: PhaseTag.ALLOC,
    ActionKind.SYNC: PhaseTag.SYNC,
}


@dataclass(frozen=True)
class Region:
    """Element-index runs inside a rank-local buffer.

    ``source`` selects the buffer: "work" is the rank's working/output buffer,
    "input" its read-only input. Runs are half-open [start, stop) element
    ranges; non-contiguous block sets (distance-doubling keeps interleaved
    blocks) are lists of runs.
    """

    runs: tuple[tuple[int, int], ...]
    source: str = "work"

    @property
    def elements(self) -> int:
        return sum(stop - start for start, stop in self.runs)

    @staticmethod
    def span(start: int, stop: int, source: str = "work") -> "Region":
        return Region(((start, stop),), source)

    @staticmethod
    def blocks(block_ids: list[int], blk: int, source: str = "work") -> "Region":
        """Region covering the given blocks, merging adjacent ids into runs."""
        runs: list[tuple[int, int]] = []
        for b in sorted(block_ids):
            start, stop = b * blk, (b + 1) * blk
            if runs and runs[-1][1] == start:
                runs[-1] = (runs[-1][0], stop)
            else:
                runs.append((start, stop))
        return Region(tuple(runs), source)


@dataclass(frozen=True)
class Action:
    """One scheduled operation of one rank.

    send:   push ``src`` to ``peer`` under ``tag`` (non-blocking)
    recv:   blocking receive of ``tag`` from ``peer``; delivered into ``dst``
            when set, otherwise parked for a later reduce
    reduce: combine the payload parked under ``tag`` into ``dst``
    copy:   move ``src`` into ``dst``
    alloc:  acquire a scratch buffer of ``bytes``
    sync:   barrier across all ranks
    """

    kind: ActionKind
    peer: int = -1
    bytes: int = 0
    elements: int = 0
    tag: Tag | None = None
    src: Region | None = None
    dst: Region | None = None

    @property
    def phase(self) -> PhaseTag:
        return _PHASE_OF[self.kind]


@dataclass
class Schedule:
    """Per-rank, per-step action lists realising one collective algorithm.

    ``steps[rank][step]`` is the ordered action list rank ``rank`` performs in
    round ``step``; the step count is identical across ranks and matched
    send/recv pairs share a step index.
    """

    algorithm: AlgorithmId
    p: int
    msg_bytes: int
    element_width: int
    steps: list[list[list[Action]]]
    phase_labels: list[str] = field(default_factory=list)

    @property
    def collective(self) -> CollectiveKind:
        return self.algorithm.collective

    @property
    def num_steps(self) -> int:
        return len(self.steps[0]) if self.steps else 0

    @property
    def elements(self) -> int:
        return self.msg_bytes // self.element_width

    @property
    def block_elements(self) -> int:
        return self.elements // self.p

    @property
    def input_elements(self) -> int:
        """Elements each rank contributes (allgather contributes one block)."""
        if self.collective is CollectiveKind.ALLGATHER:
            return self.elements // self.p
        return self.elements

    def actions(self) -> Iterator[tuple[int, int, Action]]:
        for rank, rank_steps in enumerate(self.steps):
            for step, acts in enumerate(rank_steps):
                for act in acts:
                    yield rank, step, act

    def sends(self) -> Iterator[tuple[int, int, Action]]:
        for rank, step, act in self.actions():
            if act.kind is ActionKind.SEND:
                yield rank, step, act


@dataclass(frozen=True)
class CostTerms:
    """The cost-model inputs extracted from one rank's schedule.

    ``steps`` is the round count A, ``bytes_sent_per_rank`` the volume B, and
    ``reduced_elements_per_rank`` the compute count C. Per-step breakdowns
    keep individual send sizes because protocol thresholds apply per message.
    """

    steps: int
    bytes_sent_per_rank: int
    reduced_elements_per_rank: int
    step_send_bytes: tuple[tuple[int, ...], ...]
    step_reduced_elements: tuple[int, ...]

    @property
    def per_step_bytes(self) -> tuple[int, ...]:
        return tuple(sum(sends) for sends in self.step_send_bytes)


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _is_power_of_two(p: int) -> bool:
    return p >= 1 and p & (p - 1) == 0


def _log2(p: int) -> int:
    return p.bit_length() - 1


def _send(step: int, rank: int, peer: int, region: Region, width: int) -> Action:
    return Action(
        ActionKind.SEND,
        peer=peer,
        bytes=region.elements * width,
        elements=region.elements,
        tag=(step, rank, peer),
        src=region,
    )


def _recv(step: int, rank: int, peer: int, nbytes: int, width: int, dst: Region | None = None) -> Action:
    return Action(
        ActionKind.RECV,
        peer=peer,
        bytes=nbytes,
        elements=nbytes // width,
        tag=(step, peer, rank),
        dst=dst,
    )


def _reduce(tag: Tag, dst: Region, width: int) -> Action:
    return Action(ActionKind.REDUCE, bytes=dst.elements * width, elements=dst.elements, tag=tag, dst=dst)


def _copy(src: Region, dst: Region, width: int) -> Action:
    return Action(ActionKind.COPY, bytes=dst.elements * width, elements=dst.elements, src=src, dst=dst)


def _alloc(nbytes: int) -> Action:
    return Action(ActionKind.ALLOC, bytes=nbytes)


def _ring_reduce_scatter_steps(p: int, m: int, w: int, base_step: int, prologue: bool):
    """Ring reduce-scatter rounds; afterwards rank r owns fully reduced block r.

    At step s rank r forwards block (r-1-s) mod p and accumulates the incoming
    block (r-2-s) mod p, so each block travels the whole ring exactly once.
    """
    blk = m // p
    per_rank: list[list[list[Action]]] = []
    for r in range(p):
        right, left = (r + 1) % p, (r - 1) % p
        steps = []
        for s in range(p - 1):
            step = base_step + s
            acts: list[Action] = []
            if prologue and s == 0:
                acts.append(_alloc(blk * w))
                acts.append(_copy(Region.span(0, m, "input"), Region.span(0, m), w))
            send_block = (r - 1 - s) % p
            recv_block = (r - 2 - s) % p
            acts.append(_send(step, r, right, Region.span(send_block * blk, (send_block + 1) * blk), w))
            recv = _recv(step, r, left, blk * w, w)
            acts.append(recv)
            acts.append(_reduce(recv.tag, Region.span(recv_block * blk, (recv_block + 1) * blk), w))
            steps.append(acts)
        per_rank.append(steps)
    return per_rank


def _ring_allgather_steps(p: int, m: int, w: int, base_step: int):
    """Ring allgather rounds; rank r starts from its own block r."""
    blk = m // p
    per_rank: list[list[list[Action]]] = []
    for r in range(p):
        right, left = (r + 1) % p, (r - 1) % p
        steps = []
        for j in range(p - 1):
            step = base_step + j
            send_block = (r - j) % p
            recv_block = (r - 1 - j) % p
            acts = [
                _send(step, r, right, Region.span(send_block * blk, (send_block + 1) * blk), w),
                _recv(step, r, left, blk * w, w, dst=Region.span(recv_block * blk, (recv_block + 1) * blk)),
            ]
            steps.append(acts)
        per_rank.append(steps)
    return per_rank


def _build_ring_allreduce(p: int, m: int, w: int):
    rs = _ring_reduce_scatter_steps(p, m, w, 0, prologue=True)
    ag = _ring_allgather_steps(p, m, w, p - 1)
    steps = [rs[r] + ag[r] for r in range(p)]
    labels = ["reduce-scatter"] * (p - 1) + ["allgather"] * (p - 1)
    return steps, labels


def _build_ring_reduce_scatter(p: int, m: int, w: int):
    return _ring_reduce_scatter_steps(p, m, w, 0, prologue=True), ["reduce-scatter"] * (p - 1)


def _build_ring_allgather(p: int, m: int, w: int):
    blk = m // p
    steps = _ring_allgather_steps(p, m, w, 0)
    for r in range(p):
        own = Region.span(r * blk, (r + 1) * blk)
        steps[r][0] = [_copy(Region.span(0, blk, "input"), own, w)] + steps[r][0]
    return steps, ["allgather"] * (p - 1)


def _build_recursive_doubling_allreduce(p: int, m: int, w: int):
    """Full-vector XOR exchanges: log2 p rounds, partner distance doubling."""
    k = _log2(p)
    per_rank = []
    for r in range(p):
        steps = []
        for s in range(k):
            partner = r ^ (1 << s)
            acts: list[Action] = []
            if s == 0:
                acts.append(_alloc(m * w))
                acts.append(_copy(Region.span(0, m, "input"), Region.span(0, m), w))
            acts.append(_send(s, r, partner, Region.span(0, m), w))
            recv = _recv(s, r, partner, m * w, w)
            acts.append(recv)
            acts.append(_reduce(recv.tag, Region.span(0, m), w))
            steps.append(acts)
        per_rank.append(steps)
    return per_rank, ["exchange"] * k


def _halving_reduce_scatter_steps(p: int, m: int, w: int, prologue: bool):
    """Recursive halving: partner distance p/2^i, message n/2^i at step i.

    Each rank keeps a contiguous block interval chosen MSB-first by its own
    rank bits, so after log2 p steps rank r holds exactly block r with no
    block reshuffling.
    """
    k = _log2(p)
    blk = m // p
    per_rank = []
    for r in range(p):
        lo, hi = 0, p
        steps = []
        for i in range(1, k + 1):
            step = i - 1
            dist = p >> i
            partner = r ^ dist
            half = (hi - lo) // 2
            if r & dist:
                keep = (lo + half, hi)
                send = (lo, lo + half)
            else:
                keep = (lo, lo + half)
                send = (lo + half, hi)
            acts: list[Action] = []
            if prologue and step == 0:
                acts.append(_alloc((m // 2) * w))
                acts.append(_copy(Region.span(0, m, "input"), Region.span(0, m), w))
            acts.append(_send(step, r, partner, Region.span(send[0] * blk, send[1] * blk), w))
            recv = _recv(step, r, partner, half * blk * w, w)
            acts.append(recv)
            acts.append(_reduce(recv.tag, Region.span(keep[0] * blk, keep[1] * blk), w))
            steps.append(acts)
            lo, hi = keep
        per_rank.append(steps)
    return per_rank


def _doubling_allgather_steps(p: int, m: int, w: int, base_step: int):
    """Recursive doubling gather of aligned block groups, distances 1..p/2."""
    k = _log2(p)
    blk = m // p
    per_rank = []
    for r in range(p):
        steps = []
        for j in range(1, k + 1):
            step = base_step + j - 1
            dist = 1 << (j - 1)
            partner = r ^ dist
            mine_lo = (r >> (j - 1)) << (j - 1)
            theirs_lo = (partner >> (j - 1)) << (j - 1)
            acts = [
                _send(step, r, partner, Region.span(mine_lo * blk, (mine_lo + dist) * blk), w),
                _recv(
                    step, r, partner, dist * blk * w, w,
                    dst=Region.span(theirs_lo * blk, (theirs_lo + dist) * blk),
                ),
            ]
            steps.append(acts)
        per_rank.append(steps)
    return per_rank


def _build_rabenseifner(p: int, m: int, w: int):
    k = _log2(p)
    rs = _halving_reduce_scatter_steps(p, m, w, prologue=True)
    ag = _doubling_allgather_steps(p, m, w, k)
    steps = [rs[r] + ag[r] for r in range(p)]
    return steps, ["reduce-scatter"] * k + ["allgather"] * k


def _build_distance_halving_rs(p: int, m: int, w: int):
    k = _log2(p)
    return _halving_reduce_scatter_steps(p, m, w, prologue=True), ["reduce-scatter"] * k


def _build_distance_doubling_rs(p: int, m: int, w: int):
    """Distance-doubling reduce-scatter: partner 2^(i-1), message n/2^i.

    Bit tests run LSB-first, so the kept block set is interleaved at every
    intermediate step but still converges on block r for rank r. Same step
    count, volume and reduction count as distance halving; only the partner
    sequence (and hence traffic placement) differs.
    """
    k = _log2(p)
    blk = m // p
    per_rank = []
    for r in range(p):
        kept = list(range(p))
        steps = []
        for i in range(1, k + 1):
            step = i - 1
            dist = 1 << (i - 1)
            partner = r ^ dist
            keep = [b for b in kept if (b & dist) == (r & dist)]
            send = [b for b in kept if (b & dist) == (partner & dist)]
            acts: list[Action] = []
            if step == 0:
                acts.append(_alloc((m // 2) * w))
                acts.append(_copy(Region.span(0, m, "input"), Region.span(0, m), w))
            acts.append(_send(step, r, partner, Region.blocks(send, blk), w))
            recv = _recv(step, r, partner, len(keep) * blk * w, w)
            acts.append(recv)
            acts.append(_reduce(recv.tag, Region.blocks(keep, blk), w))
            steps.append(acts)
            kept = keep
        per_rank.append(steps)
    return per_rank, ["reduce-scatter"] * k


def _build_allgather_distance_doubling(p: int, m: int, w: int):
    blk = m // p
    steps = _doubling_allgather_steps(p, m, w, 0)
    for r in range(p):
        own = Region.span(r * blk, (r + 1) * blk)
        steps[r][0] = [_copy(Region.span(0, blk, "input"), own, w)] + steps[r][0]
    return steps, ["allgather"] * _log2(p)


def _build_pairwise_alltoall(p: int, m: int, w: int):
    """Pairwise exchange: XOR partners for power-of-two p, rank +/- i otherwise."""
    blk = m // p
    xor = _is_power_of_two(p)
    per_rank = []
    for r in range(p):
        steps = []
        for i in range(1, p):
            step = i - 1
            acts: list[Action] = []
            if step == 0:
                acts.append(
                    _copy(Region.span(r * blk, (r + 1) * blk, "input"), Region.span(r * blk, (r + 1) * blk), w)
                )
            if xor:
                send_to = recv_from = r ^ i
            else:
                send_to = (r + i) % p
                recv_from = (r - i) % p
            acts.append(_send(step, r, send_to, Region.span(send_to * blk, (send_to + 1) * blk, "input"), w))
            acts.append(
                _recv(step, r, recv_from, blk * w, w, dst=Region.span(recv_from * blk, (recv_from + 1) * blk))
            )
            steps.append(acts)
        per_rank.append(steps)
    return per_rank, ["exchange"] * (p - 1)


_BUILDERS = {
    AlgorithmId.ALLREDUCE_RING: (_build_ring_allreduce, True),
    AlgorithmId.ALLREDUCE_RECURSIVE_DOUBLING: (_build_recursive_doubling_allreduce, False),
    AlgorithmId.ALLREDUCE_RABENSEIFNER: (_build_rabenseifner, True),
    AlgorithmId.REDUCE_SCATTER_DISTANCE_HALVING: (_build_distance_halving_rs, True),
    AlgorithmId.REDUCE_SCATTER_DISTANCE_DOUBLING: (_build_distance_doubling_rs, True),
    AlgorithmId.REDUCE_SCATTER_RING: (_build_ring_reduce_scatter, True),
    AlgorithmId.ALLGATHER_RING: (_build_ring_allgather, True),
    AlgorithmId.ALLGATHER_DISTANCE_DOUBLING: (_build_allgather_distance_doubling, True),
    AlgorithmId.ALLTOALL_PAIRWISE: (_build_pairwise_alltoall, True),
}


def step_count(alg: AlgorithmId, p: int) -> int:
    """Round count A without materialising a schedule."""
    if not alg.supports(p):
        raise ValueError(f"algorithm {alg.key} unsupported for p={p}")
    if alg is AlgorithmId.ALLREDUCE_RING:
        return 2 * (p - 1)
    if alg in (AlgorithmId.REDUCE_SCATTER_RING, AlgorithmId.ALLGATHER_RING, AlgorithmId.ALLTOALL_PAIRWISE):
        return p - 1
    if alg is AlgorithmId.ALLREDUCE_RABENSEIFNER:
        return 2 * _log2(p)
    return _log2(p)


def build_schedule(alg: AlgorithmId, p: int, msg_bytes: int, element_width: int = 4) -> Schedule:
    """Construct the per-rank schedule for one algorithm instance."""
    if element_width not in (4, 8):
        raise ValueError(f"element_width must be 4 or 8, got {element_width}")
    if not alg.supports(p):
        constraint = "a power of two" if alg.requires_power_of_two else ">= 2"
        raise ValueError(f"algorithm {alg.key} unsupported for p={p} (requires p {constraint})")
    if msg_bytes <= 0 or msg_bytes % element_width != 0:
        raise ValueError(f"msg_bytes={msg_bytes} not a positive multiple of element_width={element_width}")
    m = msg_bytes // element_width
    builder, needs_blocks = _BUILDERS[alg]
    if needs_blocks and m % p != 0:
        raise ValueError(f"{alg.key} requires p*element_width | msg_bytes, got p={p}, msg_bytes={msg_bytes}")
    steps, labels = builder(p, m, element_width)
    return Schedule(alg, p, msg_bytes, element_width, steps, labels)


def validate_schedule(s: Schedule) -> ValidationReport:
    """Structural checks: matched pairs, peer ranges, step symmetry, tag reuse."""
    report = ValidationReport()
    lengths = {len(rank_steps) for rank_steps in s.steps}
    if len(lengths) > 1:
        report.violations.append(f"step count differs across ranks: {sorted(lengths)}")

    sends: dict[Tag, tuple[int, int, int]] = {}
    recvs: dict[Tag, tuple[int, int, int]] = {}
    seen_send_tags: set[tuple[int, Tag]] = set()
    seen_recv_tags: set[tuple[int, Tag]] = set()
    for rank, step, act in s.actions():
        if act.kind in (ActionKind.SEND, ActionKind.RECV):
            if not (0 <= act.peer < s.p):
                report.violations.append(f"rank {rank} step {step}: peer {act.peer} out of range [0,{s.p})")
                continue
            if act.peer == rank:
                report.violations.append(f"rank {rank} step {step}: self-directed {act.kind}")
            if act.bytes <= 0:
                report.violations.append(f"rank {rank} step {step}: non-positive byte count")
        if act.kind is ActionKind.SEND:
            if (rank, act.tag) in seen_send_tags:
                report.violations.append(f"rank {rank} sends tag {act.tag} twice")
            seen_send_tags.add((rank, act.tag))
            sends[act.tag] = (rank, step, act.bytes)
        elif act.kind is ActionKind.RECV:
            if (rank, act.tag) in seen_recv_tags:
                report.violations.append(f"rank {rank} receives tag {act.tag} twice")
            seen_recv_tags.add((rank, act.tag))
            recvs[act.tag] = (rank, step, act.bytes)

    for tag, (rank, step, nbytes) in sends.items():
        match = recvs.pop(tag, None)
        if match is None:
            report.violations.append(f"unmatched send: rank {rank} step {step} tag {tag}")
            continue
        peer, peer_step, peer_bytes = match
        if peer_step != step:
            report.violations.append(
                f"tag {tag}: send at step {step} matched by recv at step {peer_step}"
            )
        if peer_bytes != nbytes:
            report.violations.append(f"tag {tag}: send {nbytes} B vs recv {peer_bytes} B")
    for tag, (rank, step, _) in recvs.items():
        report.violations.append(f"unmatched recv: rank {rank} step {step} tag {tag}")
    return report


def cost_terms(s: Schedule, rank: int) -> CostTerms:
    """Extract A, B and C (with per-step breakdowns) for one rank."""
    if not (0 <= rank < s.p):
        raise ValueError(f"rank {rank} out of range [0,{s.p})")
    step_sends: list[tuple[int, ...]] = []
    step_reduced: list[int] = []
    for acts in s.steps[rank]:
        step_sends.append(tuple(a.bytes for a in acts if a.kind is ActionKind.SEND))
        step_reduced.append(sum(a.elements for a in acts if a.kind is ActionKind.REDUCE))
    return CostTerms(
        steps=len(s.steps[rank]),
        bytes_sent_per_rank=sum(sum(t) for t in step_sends),
        reduced_elements_per_rank=sum(step_reduced),
        step_send_bytes=tuple(step_sends),
        step_reduced_elements=tuple(step_reduced),
    )


def serialize_schedule(s: Schedule) -> str:
    """Text form, one line per action: ``rank step phase action peer bytes tag``."""
    lines = [f"# {s.algorithm} p={s.p} msg_bytes={s.msg_bytes} element_width={s.element_width}"]
    for rank, step, act in s.actions():
        label = s.phase_labels[step] if step < len(s.phase_labels) else "-"
        peer = act.peer if act.peer >= 0 else "-"
        tag = f"{act.tag[0]}.{act.tag[1]}.{act.tag[2]}" if act.tag else "-"
        lines.append(f"{rank} {step} {label} {act.kind} {peer} {act.bytes} {tag}")
    return "\n".join(lines) + "\n"
