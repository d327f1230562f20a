"""Traffic placement estimation for scheduled collectives.

Given a schedule, a rank-to-node allocation and a two-level group/node
topology description, every transfer is classified by its endpoints:
intra-node, local (inter-node but intra-group) or global (inter-group).
Bytes are counted once per transfer, by the heaviest class it traverses.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .algorithms import Schedule

ALLOC_CSV_HEADER = "rank,node,group,slot"


@dataclass(frozen=True)
class Topology:
    """Two-level hierarchy: groups of nodes, nodes holding rank slots.

    The descriptor format reserves a deeper ``levels`` extension; the shipped
    classification only distinguishes group and node boundaries.
    """

    name: str
    groups: int
    nodes_per_group: int
    ranks_per_node: int

    def __post_init__(self):
        for fld in ("groups", "nodes_per_group", "ranks_per_node"):
            if getattr(self, fld) < 1:
                raise ValueError(f"topology.{fld} must be >= 1")

    @property
    def capacity(self) -> int:
        return self.groups * self.nodes_per_group * self.ranks_per_node

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "groups": self.groups,
            "nodes_per_group": self.nodes_per_group,
            "ranks_per_node": self.ranks_per_node,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Topology":
        return cls(
            name=str(d["name"]),
            groups=int(d["groups"]),
            nodes_per_group=int(d["nodes_per_group"]),
            ranks_per_node=int(d["ranks_per_node"]),
        )


def load_topology(path: str | Path) -> Topology:
    with open(path) as f:
        return Topology.from_dict(json.load(f))


def save_topology(topo: Topology, path: str | Path) -> None:
    Path(path).write_text(json.dumps(topo.to_dict(), indent=2) + "\n")


@dataclass(frozen=True)
class Placement:
    rank: int
    node: int  # global node id, unique across groups
    group: int
    slot: int


@dataclass(frozen=True)
class Allocation:
    """Where each rank lives: node, group and slot within the node."""

    entries: tuple[Placement, ...]

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.rank in seen:
                raise ValueError(f"rank {e.rank} mapped more than once")
            seen.add(e.rank)

    @property
    def p(self) -> int:
        return len(self.entries)

    def placement(self, rank: int) -> Placement:
        for e in self.entries:
            if e.rank == rank:
                return e
        raise ValueError(f"rank {rank} missing from allocation")

    def node_of(self, rank: int) -> int:
        return self.placement(rank).node

    def group_of(self, rank: int) -> int:
        return self.placement(rank).group

    def validate_against(self, topo: Topology) -> None:
        per_node: dict[int, int] = {}
        for e in self.entries:
            per_node[e.node] = per_node.get(e.node, 0) + 1
            if not (0 <= e.group < topo.groups):
                raise ValueError(f"rank {e.rank}: group {e.group} out of range")
            if not (0 <= e.node < topo.groups * topo.nodes_per_group):
                raise ValueError(f"rank {e.rank}: node {e.node} out of range")
            if e.group != e.node // topo.nodes_per_group:
                raise ValueError(f"rank {e.rank}: node {e.node} is not in group {e.group}")
        for node, count in per_node.items():
            if count > topo.ranks_per_node:
                raise ValueError(f"node {node} holds {count} ranks > ranks_per_node={topo.ranks_per_node}")

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            f.write(ALLOC_CSV_HEADER + "\n")
            writer = csv.writer(f)
            for e in sorted(self.entries, key=lambda e: e.rank):
                writer.writerow([e.rank, e.node, e.group, e.slot])

    @classmethod
    def from_csv(cls, path: str | Path) -> "Allocation":
        with open(path, newline="") as f:
            header = f.readline().strip()
            if header != ALLOC_CSV_HEADER:
                raise ValueError(f"bad alloc.csv header: {header!r}")
            entries = tuple(
                Placement(int(row[0]), int(row[1]), int(row[2]), int(row[3]))
                for row in csv.reader(f)
                if row
            )
        return cls(entries)


class AllocationPolicy(Enum):
    BLOCK = "block"
    ROUND_ROBIN = "rr"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def from_key(cls, key: str) -> "AllocationPolicy":
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown allocation policy {key!r}")


def make_allocation(policy: AllocationPolicy, p: int, topo: Topology) -> Allocation:
    """Deterministic synthetic placement: block fills nodes in order,
    round-robin deals ranks across groups first."""
    if p > topo.capacity:
        raise ValueError(f"p={p} exceeds topology capacity {topo.capacity}")
    entries = []
    if policy is AllocationPolicy.BLOCK:
        for r in range(p):
            node = r // topo.ranks_per_node
            entries.append(Placement(r, node, node // topo.nodes_per_group, r % topo.ranks_per_node))
    else:
        for r in range(p):
            group = r % topo.groups
            idx_in_group = r // topo.groups
            node_in_group = idx_in_group // topo.ranks_per_node
            node = group * topo.nodes_per_group + node_in_group
            entries.append(Placement(r, node, group, idx_in_group % topo.ranks_per_node))
    return Allocation(tuple(entries))


def rank_cell_map(alloc: Allocation, topo: Topology) -> list[list[list[int]]]:
    """Grid of rank placements: ``grid[group][node_in_group]`` lists ranks."""
    grid = [[[] for _ in range(topo.nodes_per_group)] for _ in range(topo.groups)]
    for e in sorted(alloc.entries, key=lambda e: e.rank):
        grid[e.group][e.node % topo.nodes_per_group].append(e.rank)
    return grid


@dataclass
class TrafficReport:
    """Byte totals per placement class, plus the inter-group byte matrix."""

    label: str
    intra_node_bytes: int
    local_bytes: int
    global_bytes: int
    group_matrix: tuple[tuple[int, ...], ...]

    @property
    def total_bytes(self) -> int:
        return self.intra_node_bytes + self.local_bytes + self.global_bytes


def trace(s: Schedule, alloc: Allocation, topo: Topology) -> TrafficReport:
    """Classify every scheduled send by the placement of its endpoints."""
    alloc.validate_against(topo)
    if alloc.p < s.p:
        raise ValueError(f"allocation covers {alloc.p} ranks, schedule needs {s.p}")
    by_rank = {e.rank: e for e in alloc.entries}
    intra = local = global_ = 0
    matrix = [[0] * topo.groups for _ in range(topo.groups)]
    for rank, _step, act in s.sends():
        src, dst = by_rank[rank], by_rank[act.peer]
        if src.node == dst.node:
            intra += act.bytes
        elif src.group == dst.group:
            local += act.bytes
        else:
            global_ += act.bytes
            matrix[src.group][dst.group] += act.bytes
    return TrafficReport(
        label=f"{s.algorithm.key}",
        intra_node_bytes=intra,
        local_bytes=local,
        global_bytes=global_,
        group_matrix=tuple(tuple(row) for row in matrix),
    )
