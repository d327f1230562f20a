"""Domain vocabulary for collective operations.

Defines the collectives, element types, reduction operators and per-rank
buffers used across the package, plus ``naive_oracle``: the straightforward
reference semantics every scheduled algorithm is verified against.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np


class CollectiveKind(Enum):
    """The collective patterns exercised by the benchmark suite."""

    ALLREDUCE = "allreduce"
    REDUCE_SCATTER = "reduce_scatter"
    ALLGATHER = "allgather"
    ALLTOALL = "alltoall"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def from_key(cls, key: str) -> "CollectiveKind":
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown collective {key!r}")


class PhaseTag(Enum):
    """Instrumentation category of a scheduled action.

    Every action maps to exactly one tag; the executor and the simulator
    account time per tag so that allocation, data movement, reduction,
    communication and synchronisation can be separated in the results.
    """

    ALLOC = "alloc"
    COPY = "copy"
    REDUCTION = "reduction"
    COMMUNICATION = "communication"
    SYNC = "sync"

    def __str__(self) -> str:
        return self.value


class DataType(Enum):
    """Element types supported for payload buffers."""

    INT32 = ("int32", 4)
    INT64 = ("int64", 8)
    FLOAT32 = ("float32", 4)
    FLOAT64 = ("float64", 8)

    def __init__(self, key: str, width: int):
        self.key = key
        self.width = width

    def __str__(self) -> str:
        return self.key

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.key)

    @property
    def is_integer(self) -> bool:
        return self in (DataType.INT32, DataType.INT64)

    @property
    def rel_tol(self) -> float:
        """Comparison tolerance: exact for integers, relative for floats.

        Scheduled algorithms reduce in tree orders that differ from the
        oracle's fixed rank order, so float results are compared with a
        relative tolerance.
        """
        if self is DataType.FLOAT32:
            return 1e-5
        if self is DataType.FLOAT64:
            return 1e-12
        return 0.0

    @classmethod
    def from_key(cls, key: str) -> "DataType":
        for member in cls:
            if member.key == key:
                return member
        raise ValueError(f"unknown datatype {key!r}")


class ReduceOp(Enum):
    """Elementwise, associative, commutative reduction operators."""

    SUM = "sum"
    MAX = "max"
    MIN = "min"

    def __str__(self) -> str:
        return self.value

    def combine(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self is ReduceOp.SUM:
            return np.add(a, b)
        if self is ReduceOp.MAX:
            return np.maximum(a, b)
        return np.minimum(a, b)

    def identity(self, dtype: DataType) -> np.generic:
        """Neutral element: op(identity, x) == x."""
        np_dtype = dtype.np_dtype
        if self is ReduceOp.SUM:
            return np_dtype.type(0)
        info = np.iinfo(np_dtype) if dtype.is_integer else np.finfo(np_dtype)
        return np_dtype.type(info.min if self is ReduceOp.MAX else info.max)

    @classmethod
    def from_key(cls, key: str) -> "ReduceOp":
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown reduce op {key!r}")


@dataclass(frozen=True)
class RankVector:
    """One rank's payload buffer."""

    rank: int
    data: np.ndarray

    @property
    def elements(self) -> int:
        return int(self.data.size)


def reduce_elementwise(a: np.ndarray, b: np.ndarray, op: ReduceOp) -> np.ndarray:
    """Elementwise reduction of two equally long element sequences."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    return op.combine(a, b)


def _check_inputs(kind: CollectiveKind, inputs: Sequence[RankVector]) -> tuple[int, int]:
    p = len(inputs)
    if p < 1:
        raise ValueError("need at least one rank")
    lengths = {v.elements for v in inputs}
    if len(lengths) != 1:
        raise ValueError(f"unequal input lengths: {sorted(lengths)}")
    for i, v in enumerate(inputs):
        if v.rank != i:
            raise ValueError(f"inputs must be ordered by rank, got rank {v.rank} at index {i}")
    n = inputs[0].elements
    # Block semantics: reduce-scatter and alltoall split the input into p
    # blocks, so the length must divide evenly. Allgather concatenates whole
    # inputs and carries no such requirement.
    if kind in (CollectiveKind.REDUCE_SCATTER, CollectiveKind.ALLTOALL) and n % p != 0:
        raise ValueError(f"{kind} requires p | elements, got p={p}, elements={n}")
    return p, n


def naive_oracle(
    kind: CollectiveKind,
    inputs: Sequence[RankVector],
    op: ReduceOp = ReduceOp.SUM,
) -> list[RankVector]:
    """Textbook semantics of each collective, used as the correctness baseline.

    Reductions are performed in fixed rank order 0..p-1 so float results are
    deterministic. Allreduce: every rank receives the full reduction.
    Reduce-scatter: rank r receives block r of the reduction. Allgather:
    every rank receives the concatenation of all inputs. Alltoall: rank r
    receives block r of every rank's input, ordered by source rank.
    """
    p, n = _check_inputs(kind, inputs)
    arrays = [v.data for v in inputs]

    if kind is CollectiveKind.ALLREDUCE:
        total = arrays[0].copy()
        for a in arrays[1:]:
            total = op.combine(total, a)
        return [RankVector(r, total.copy()) for r in range(p)]

    if kind is CollectiveKind.REDUCE_SCATTER:
        total = arrays[0].copy()
        for a in arrays[1:]:
            total = op.combine(total, a)
        blk = n // p
        return [RankVector(r, total[r * blk : (r + 1) * blk].copy()) for r in range(p)]

    if kind is CollectiveKind.ALLGATHER:
        gathered = np.concatenate(arrays)
        return [RankVector(r, gathered.copy()) for r in range(p)]

    # Alltoall: out[r] block s = input[s] block r.
    blk = n // p
    outputs = []
    for r in range(p):
        parts = [arrays[s][r * blk : (r + 1) * blk] for s in range(p)]
        outputs.append(RankVector(r, np.concatenate(parts)))
    return outputs
