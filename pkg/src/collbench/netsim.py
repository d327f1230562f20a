"""Deterministic virtual-time cost simulation of schedules.

The model follows the classic latency/bandwidth/compute decomposition: a
round costs its latency alpha, each transferred byte costs beta (per link
class), and each reduced element costs gamma. On top of that, buffer copies
cost ``copy_beta`` per byte, allocations ``alloc_alpha`` each, and transfers
larger than ``eager_threshold`` may spread over ``rails`` parallel links,
dividing beta only (small eager messages are unaffected).

Transfer rule: a receive completes at

    max(receiver ready, sender send epoch) + alpha(class) + bytes * beta_eff(class)

where the class (intra-node / intra-group / inter-group) is derived from the
endpoints' placement. Sends are non-blocking: they stamp their epoch and cost
the sender nothing. A rank's actions within a step are serialised in schedule
order, so concurrent sends in one step share an epoch and effectively pay the
max, not the sum, of their transfer times. There is no congestion modelling
on shared links; traffic placement questions belong to the tracer.

``predict_closed_form`` evaluates the same model from the schedule's cost
terms alone. Its accumulation mirrors the simulator's per-step arithmetic so
the two routes agree exactly (not merely approximately) on homogeneous
models, which is the cross-validation the test suite relies on.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from enum import Enum

from .algorithms import ActionKind, AlgorithmId, Schedule, build_schedule, cost_terms
from .model import PhaseTag
from .tracer import Allocation, Topology


class LinkClass(Enum):
    INTRA_NODE = "intra_node"
    INTRA_GROUP = "intra_group"
    INTER_GROUP = "inter_group"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class LinkCost:
    """Per-class latency (seconds) and inverse bandwidth (seconds per byte)."""

    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("link alpha/beta must be >= 0")


@dataclass(frozen=True)
class NetworkModel:
    """All cost parameters of the simulated machine."""

    intra_node: LinkCost
    intra_group: LinkCost
    inter_group: LinkCost
    gamma: float = 0.0  # seconds per reduced element
    copy_beta: float = 0.0  # seconds per copied byte
    alloc_alpha: float = 0.0  # seconds per allocation
    eager_threshold: int = 0  # bytes; transfers above it may use rails
    rails: int = 1

    def __post_init__(self):
        if self.rails < 1:
            raise ValueError("rails must be >= 1")
        if self.eager_threshold < 0:
            raise ValueError("eager_threshold must be >= 0")
        if self.gamma < 0 or self.copy_beta < 0 or self.alloc_alpha < 0:
            raise ValueError("gamma/copy_beta/alloc_alpha must be >= 0")
        if not (self.intra_node.alpha <= self.intra_group.alpha <= self.inter_group.alpha):
            warnings.warn(
                "unusual latency ordering: expected alpha(intra_node) <= alpha(intra_group)"
                " <= alpha(inter_group)",
                stacklevel=2,
            )

    def link(self, cls: LinkClass) -> LinkCost:
        if cls is LinkClass.INTRA_NODE:
            return self.intra_node
        if cls is LinkClass.INTRA_GROUP:
            return self.intra_group
        return self.inter_group

    def beta_eff(self, cls: LinkClass, nbytes: int) -> float:
        beta = self.link(cls).beta
        return beta / self.rails if nbytes > self.eager_threshold else beta

    @property
    def is_homogeneous(self) -> bool:
        return self.intra_node == self.intra_group == self.inter_group

    @classmethod
    def homogeneous(
        cls,
        alpha: float,
        beta: float,
        gamma: float = 0.0,
        copy_beta: float = 0.0,
        alloc_alpha: float = 0.0,
        eager_threshold: int = 0,
        rails: int = 1,
    ) -> "NetworkModel":
        link = LinkCost(alpha, beta)
        return cls(link, link, link, gamma, copy_beta, alloc_alpha, eager_threshold, rails)

    def scaled(self, k: float) -> "NetworkModel":
        """All cost parameters multiplied by k (thresholds and rails unchanged)."""
        return NetworkModel(
            LinkCost(self.intra_node.alpha * k, self.intra_node.beta * k),
            LinkCost(self.intra_group.alpha * k, self.intra_group.beta * k),
            LinkCost(self.inter_group.alpha * k, self.inter_group.beta * k),
            self.gamma * k,
            self.copy_beta * k,
            self.alloc_alpha * k,
            self.eager_threshold,
            self.rails,
        )

    def to_dict(self) -> dict:
        return {
            "intra_node": {"alpha": self.intra_node.alpha, "beta": self.intra_node.beta},
            "intra_group": {"alpha": self.intra_group.alpha, "beta": self.intra_group.beta},
            "inter_group": {"alpha": self.inter_group.alpha, "beta": self.inter_group.beta},
            "gamma": self.gamma,
            "copy_beta": self.copy_beta,
            "alloc_alpha": self.alloc_alpha,
            "eager_threshold": self.eager_threshold,
            "rails": self.rails,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkModel":
        def link(key: str) -> LinkCost:
            sub = d[key]
            return LinkCost(float(sub["alpha"]), float(sub["beta"]))

        return cls(
            intra_node=link("intra_node"),
            intra_group=link("intra_group"),
            inter_group=link("inter_group"),
            gamma=float(d.get("gamma", 0.0)),
            copy_beta=float(d.get("copy_beta", 0.0)),
            alloc_alpha=float(d.get("alloc_alpha", 0.0)),
            eager_threshold=int(d.get("eager_threshold", 0)),
            rails=int(d.get("rails", 1)),
        )

    def with_overrides(self, overrides: dict) -> "NetworkModel":
        """Apply a sweep variant: flat keys (``rails``) or dotted link keys
        (``inter_group.beta``)."""
        model = self
        scalar_fields = {"gamma", "copy_beta", "alloc_alpha", "eager_threshold", "rails"}
        for key, value in overrides.items():
            if key in scalar_fields:
                value = int(value) if key in ("rails", "eager_threshold") else float(value)
                model = replace(model, **{key: value})
            elif "." in key:
                link_name, fld = key.split(".", 1)
                if link_name not in ("intra_node", "intra_group", "inter_group") or fld not in ("alpha", "beta"):
                    raise ValueError(f"unknown model override {key!r}")
                link = getattr(model, link_name)
                model = replace(model, **{link_name: replace(link, **{fld: float(value)})})
            else:
                raise ValueError(f"unknown model override {key!r}")
        return model


@dataclass
class SimResult:
    """Virtual-time outcome: per-rank completion, phase split, step timeline."""

    completion_s: list[float]
    phase_s: list[dict]
    step_finish_s: list[list[float]]

    @property
    def max_completion_s(self) -> float:
        return max(self.completion_s)


def _link_class(alloc: Allocation, a: int, b: int) -> LinkClass:
    pa, pb = alloc.placement(a), alloc.placement(b)
    if pa.node == pb.node:
        return LinkClass.INTRA_NODE
    if pa.group == pb.group:
        return LinkClass.INTRA_GROUP
    return LinkClass.INTER_GROUP


def simulate(
    s: Schedule,
    model: NetworkModel,
    placement: Allocation,
    topology: Topology,
) -> SimResult:
    """Event-driven virtual-time execution of one schedule. Deterministic."""
    placement.validate_against(topology)
    for r in range(s.p):
        placement.placement(r)  # raises if a rank is missing

    programs = [[(step, act) for step, acts in enumerate(rank_steps) for act in acts] for rank_steps in s.steps]
    pc = [0] * s.p
    t = [0.0] * s.p
    phase = [{tag: 0.0 for tag in PhaseTag} for _ in range(s.p)]
    step_finish = [[0.0] * s.num_steps for _ in range(s.p)]
    send_epoch: dict = {}
    sync_wait: list[int | None] = [None] * s.p  # sync ordinal a rank is stalled at
    sync_seen = [0] * s.p

    def advance(r: int) -> bool:
        """Run rank r until it blocks; True if anything progressed."""
        progressed = False
        while pc[r] < len(programs[r]):
            step, act = programs[r][pc[r]]
            kind = act.kind
            if kind is ActionKind.SEND:
                send_epoch[act.tag] = t[r]
            elif kind is ActionKind.RECV:
                if act.tag not in send_epoch:
                    return progressed
                epoch = send_epoch.pop(act.tag)
                cls = _link_class(placement, act.peer, r)
                link = model.link(cls)
                beta_eff = model.beta_eff(cls, act.bytes)
                start = t[r] if t[r] >= epoch else epoch
                t[r] = start + link.alpha + act.bytes * beta_eff
                phase[r][PhaseTag.COMMUNICATION] += link.alpha + act.bytes * beta_eff
            elif kind is ActionKind.REDUCE:
                t[r] = t[r] + act.elements * model.gamma
                phase[r][PhaseTag.REDUCTION] += act.elements * model.gamma
            elif kind is ActionKind.COPY:
                t[r] = t[r] + act.bytes * model.copy_beta
                phase[r][PhaseTag.COPY] += act.bytes * model.copy_beta
            elif kind is ActionKind.ALLOC:
                t[r] = t[r] + model.alloc_alpha
                phase[r][PhaseTag.ALLOC] += model.alloc_alpha
            elif kind is ActionKind.SYNC:
                sync_wait[r] = sync_seen[r]
                return progressed
            step_finish[r][step] = t[r]
            pc[r] += 1
            progressed = True
        return progressed

    while True:
        progressed = False
        for r in range(s.p):
            if sync_wait[r] is None:
                progressed |= advance(r)
        active = [r for r in range(s.p) if pc[r] < len(programs[r])]
        if not active:
            break
        stalled = [r for r in active if sync_wait[r] is not None]
        if len(stalled) == s.p and len({sync_wait[r] for r in stalled}) == 1:
            release = max(t[r] for r in stalled)
            for r in stalled:
                phase[r][PhaseTag.SYNC] += release - t[r]
                t[r] = release
                step, _act = programs[r][pc[r]]
                step_finish[r][step] = t[r]
                pc[r] += 1
                sync_seen[r] += 1
                sync_wait[r] = None
            progressed = True
        if not progressed:
            blocked = [(r, programs[r][pc[r]]) for r in active]
            raise RuntimeError(f"simulation cannot progress; blocked ranks: {blocked[:4]}")

    return SimResult(completion_s=t, phase_s=phase, step_finish_s=step_finish)


def predict_closed_form(
    alg: AlgorithmId,
    p: int,
    n_bytes: int,
    element_width: int,
    model: NetworkModel,
) -> float:
    """Closed-form cost: steps * alpha + sent bytes * beta_eff + reduced * gamma.

    Requires a homogeneous model (single link class). The protocol threshold
    applies per message, so steps are accumulated individually; for algorithms
    with a uniform step size this reduces to A*alpha + B*beta_eff + C*gamma.
    Copy and allocation terms are deliberately absent: this is the pure
    three-term cost model, evaluated for a representative rank of the
    symmetric schedule.
    """
    if not model.is_homogeneous:
        raise ValueError("predict_closed_form requires a homogeneous model")
    schedule = build_schedule(alg, p, n_bytes, element_width)
    ct = cost_terms(schedule, 0)
    alpha = model.intra_node.alpha
    beta = model.intra_node.beta
    t = 0.0
    for step_sends, reduced in zip(ct.step_send_bytes, ct.step_reduced_elements):
        for b in step_sends:
            beta_eff = beta / model.rails if b > model.eager_threshold else beta
            t = t + alpha + b * beta_eff
        if reduced:
            t = t + reduced * model.gamma
    return t


class ThroughputConvention(Enum):
    GOODPUT = "goodput"
    BUS_BANDWIDTH = "bus_bandwidth"


def throughput(
    n_bytes: int,
    time_s: float,
    convention: ThroughputConvention = ThroughputConvention.GOODPUT,
    wire_bytes: int | None = None,
) -> float:
    """Bits per second. Goodput charges the payload size n; bus bandwidth
    charges the per-rank bytes actually sent (``wire_bytes``, e.g. the B term
    from cost_terms), which makes different collectives comparable against
    link capacity."""
    if time_s <= 0:
        raise ValueError(f"time must be positive, got {time_s}")
    if convention is ThroughputConvention.GOODPUT:
        return 8.0 * n_bytes / time_s
    if wire_bytes is None:
        raise ValueError("bus bandwidth convention requires wire_bytes")
    return 8.0 * wire_bytes / time_s
