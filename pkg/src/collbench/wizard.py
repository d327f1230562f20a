"""Guided terminal wizard for building a test descriptor.

A plain line-oriented form flow over six screens: collective, algorithms,
shape (ranks/sizes/iterations), backend and model sweeps, output options,
review. Each field validates on entry and blocks forward navigation until it
parses; '?' shows help for the focused field, 'b' steps back a screen, and
the descriptor file is written only from the review screen, so an abort at
any earlier point leaves nothing behind.

The wizard and the ``gen`` subcommand share one construction and
serialisation path, so equivalent answers produce byte-identical files.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, TextIO

from .algorithms import AlgorithmId
from .model import CollectiveKind, DataType, ReduceOp
from .orchestrator import (
    EnvConfig,
    GranularityMode,
    canonical_test_json,
    default_test_dict,
    parse_size,
    parse_test_config,
    write_test_config,
)
from .tracer import AllocationPolicy


class WizardUnavailable(RuntimeError):
    pass


class _Back(Exception):
    pass


class _Abort(Exception):
    pass


@dataclass
class _Field:
    key: str
    label: str
    default: str
    help: str
    parse: Callable[[str], object]


def _parse_choice(valid: list[str], what: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in valid:
            raise ValueError(f"{what} must be one of: {', '.join(valid)}")
        return text

    return parse


def _parse_int(minimum: int, what: str) -> Callable[[str], int]:
    def parse(text: str) -> int:
        try:
            value = int(text)
        except ValueError:
            raise ValueError(f"{what} must be an integer") from None
        if value < minimum:
            raise ValueError(f"{what} must be >= {minimum}")
        return value

    return parse


def _parse_ranks(text: str) -> list[int]:
    try:
        ranks = [int(part) for part in text.replace(" ", "").split(",") if part]
    except ValueError:
        raise ValueError("ranks must be a comma-separated list of integers") from None
    if not ranks or any(p < 2 for p in ranks):
        raise ValueError("need at least one rank count >= 2")
    return ranks


def _parse_sweeps(text: str) -> list[dict]:
    """``rails2 rails=2; rails4 rails=4`` -> sweep dicts; empty means none."""
    text = text.strip()
    if not text or text.lower() == "none":
        return []
    sweeps = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split()
        if len(parts) < 2:
            raise ValueError("each sweep needs: <name> <key>=<value> [...]")
        sweep = {"name": parts[0]}
        for assignment in parts[1:]:
            if "=" not in assignment:
                raise ValueError(f"bad sweep assignment {assignment!r}, expected key=value")
            key, value = assignment.split("=", 1)
            try:
                sweep[key] = int(value)
            except ValueError:
                sweep[key] = float(value)
        sweeps.append(sweep)
    return sweeps


class Wizard:
    def __init__(
        self,
        env: EnvConfig | None = None,
        input_stream: TextIO | None = None,
        output_stream: TextIO | None = None,
    ):
        if input_stream is None:
            if not sys.stdin.isatty():
                raise WizardUnavailable(
                    "no interactive terminal available; use 'collbench gen' with flags instead"
                )
            input_stream = sys.stdin
        self.env = env
        self.stdin = input_stream
        self.stdout = output_stream or sys.stdout
        self.state: dict = {}

    def _say(self, text: str = "") -> None:
        self.stdout.write(text + "\n")

    def _ask(self, field: _Field):
        while True:
            self.stdout.write(f"{field.label} [{field.default}]: ")
            self.stdout.flush()
            line = self.stdin.readline()
            if line == "":
                raise _Abort
            line = line.strip()
            if line == "?":
                self._say(f"  help: {field.help}")
                continue
            if line == "b":
                raise _Back
            raw = line or field.default
            try:
                return field.parse(raw)
            except ValueError as exc:
                self._say(f"  invalid: {exc}")

    # -- screens -----------------------------------------------------------

    def _screen_collective(self) -> None:
        self._say("\n== 1/6 collective ==")
        valid = [k.value for k in CollectiveKind]
        self.state["collective"] = self._ask(
            _Field(
                "collective",
                "collective operation",
                "allreduce",
                "which collective pattern to benchmark: " + ", ".join(valid),
                _parse_choice(valid, "collective"),
            )
        )

    def _screen_algorithms(self) -> None:
        kind = CollectiveKind.from_key(self.state["collective"])
        available = [a.key for a in AlgorithmId.for_collective(kind)]
        self._say(f"\n== 2/6 algorithms ==\navailable for {kind}: {', '.join(available)}")

        def parse(text: str) -> list[str]:
            keys = [part for part in text.replace(" ", "").split(",") if part]
            if not keys:
                raise ValueError("need at least one algorithm")
            for key in keys:
                AlgorithmId.parse(kind, key)  # raises with the valid list
            return keys

        self.state["algorithms"] = self._ask(
            _Field(
                "algorithms",
                "algorithms (comma separated)",
                ",".join(available),
                "reference algorithms to benchmark against each other; "
                "power-of-two rank counts are required for the recursive ones",
                parse,
            )
        )

    def _screen_shape(self) -> None:
        self._say("\n== 3/6 ranks, sizes, iterations ==")
        self.state["ranks"] = self._ask(
            _Field("ranks", "rank counts (comma separated)", "4",
                   "communicator sizes to benchmark, e.g. 4,8,16", _parse_ranks)
        )
        self.state["min_bytes"] = self._ask(
            _Field("min_bytes", "smallest message size", "1KiB",
                   "per-rank payload lower bound; accepts KiB/MiB/GiB suffixes", parse_size)
        )
        while True:
            self.state["max_bytes"] = self._ask(
                _Field("max_bytes", "largest message size", "1MiB",
                       "per-rank payload upper bound; accepts KiB/MiB/GiB suffixes", parse_size)
            )
            if self.state["max_bytes"] >= self.state["min_bytes"]:
                break
            self._say("  invalid: largest size is below smallest size")
        self.state["multiplier"] = self._ask(
            _Field("multiplier", "size multiplier", "2",
                   "geometric step between sizes; must be at least 2", _parse_int(2, "multiplier"))
        )
        self.state["iterations"] = self._ask(
            _Field("iterations", "timed iterations", "10",
                   "measured repetitions per point", _parse_int(1, "iterations"))
        )
        self.state["warmup"] = self._ask(
            _Field("warmup", "warmup iterations", "3",
                   "untimed repetitions before measurement", _parse_int(0, "warmup"))
        )

    def _screen_backend(self) -> None:
        self._say("\n== 4/6 backend and network model ==")
        self.state["backend"] = self._ask(
            _Field("backend", "backend", "fabric",
                   "fabric executes with real payloads and wall clocks; netsim predicts "
                   "with the configured cost model; both runs each point twice",
                   _parse_choice(["fabric", "netsim", "both"], "backend"))
        )
        self.state["datatype"] = self._ask(
            _Field("datatype", "datatype", "float32",
                   "element type of the payload buffers",
                   _parse_choice([d.key for d in DataType], "datatype"))
        )
        self.state["reduce_op"] = self._ask(
            _Field("reduce_op", "reduce op", "sum",
                   "reduction operator for reducing collectives",
                   _parse_choice([o.value for o in ReduceOp], "reduce op"))
        )
        self.state["sweeps"] = self._ask(
            _Field("sweeps", "model sweeps", "none",
                   "named model overrides run as extra variants, e.g. "
                   "'rails2 rails=2; rails4 rails=4'; 'none' for a single variant",
                   _parse_sweeps)
        )

    def _screen_output(self) -> None:
        self._say("\n== 5/6 result granularity and placement ==")
        self.state["granularity"] = self._ask(
            _Field("granularity", "result granularity", "full",
                   "full keeps every (iteration, rank); statistics keeps per-iteration "
                   "aggregates; minimal keeps the per-iteration max; summary keeps one row",
                   _parse_choice([g.value for g in GranularityMode], "granularity"))
        )
        self.state["allocation_policy"] = self._ask(
            _Field("allocation_policy", "allocation policy", "block",
                   "synthetic rank placement: block fills nodes in order, rr deals "
                   "ranks across groups round-robin",
                   _parse_choice([p.value for p in AllocationPolicy], "allocation policy"))
        )

    def _build_config(self):
        d = default_test_dict(self.state["collective"])
        d["algorithms"] = self.state["algorithms"]
        d["sizes"] = {
            "min_bytes": self.state["min_bytes"],
            "max_bytes": self.state["max_bytes"],
            "multiplier": self.state["multiplier"],
        }
        d["ranks"] = self.state["ranks"]
        d["iterations"] = self.state["iterations"]
        d["warmup"] = self.state["warmup"]
        d["backend"] = self.state["backend"]
        d["datatype"] = self.state["datatype"]
        d["reduce_op"] = self.state["reduce_op"]
        d["sweeps"] = self.state["sweeps"]
        d["granularity"] = self.state["granularity"]
        d["allocation_policy"] = self.state["allocation_policy"]
        return parse_test_config(d)

    def _screen_review(self, out_path: Path) -> Path | None:
        cfg = self._build_config()
        self._say("\n== 6/6 review ==")
        if self.env is not None:
            self._say(f"target system: {self.env.system_name}")
        self._say(canonical_test_json(cfg))
        while True:
            self.stdout.write(f"write descriptor to {out_path}? [y/N/b]: ")
            self.stdout.flush()
            line = self.stdin.readline()
            if line == "":
                raise _Abort
            answer = line.strip().lower()
            if answer == "b":
                raise _Back
            if answer == "y":
                return write_test_config(cfg, out_path)
            if answer in ("", "n"):
                return None
            self._say("  answer y, n or b")

    def run(self, out_path: str | Path) -> Path | None:
        """Run the form flow; returns the written path, or None on abort."""
        out_path = Path(out_path)
        screens = [
            self._screen_collective,
            self._screen_algorithms,
            self._screen_shape,
            self._screen_backend,
            self._screen_output,
        ]
        i = 0
        try:
            while True:
                if i < len(screens):
                    try:
                        screens[i]()
                        i += 1
                    except _Back:
                        i = max(0, i - 1)
                else:
                    try:
                        return self._screen_review(out_path)
                    except _Back:
                        i = len(screens) - 1
        except _Abort:
            self._say("\naborted; no descriptor written")
            return None


def run_wizard(
    env: EnvConfig | None,
    out_path: str | Path,
    input_stream: TextIO | None = None,
    output_stream: TextIO | None = None,
) -> Path | None:
    return Wizard(env, input_stream, output_stream).run(out_path)
