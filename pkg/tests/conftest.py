import json
from pathlib import Path

import pytest

from collbench.orchestrator import EnvConfig, TestConfig, load_env, parse_test_config

DEFAULT_MODEL = {
    "intra_node": {"alpha": 1e-7, "beta": 1e-11},
    "intra_group": {"alpha": 1e-6, "beta": 1e-10},
    "inter_group": {"alpha": 2e-6, "beta": 2e-10},
    "gamma": 5e-10,
    "copy_beta": 2e-11,
    "alloc_alpha": 1e-7,
    "eager_threshold": 16384,
    "rails": 1,
}


def write_env(
    root: Path,
    model: dict | None = None,
    topology: dict | None = None,
    system: str = "testbox",
) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    topo = topology or {"name": "box", "groups": 2, "nodes_per_group": 8, "ranks_per_node": 2}
    (root / "topology.json").write_text(json.dumps(topo))
    env = {
        "system_name": system,
        "topology": "topology.json",
        "output_root": "results",
        "model": model or DEFAULT_MODEL,
        "labels": {"library": "builtin-reference", "version": "0.1.0"},
    }
    path = root / "env.json"
    path.write_text(json.dumps(env))
    return path


def make_test(**overrides) -> TestConfig:
    base = {
        "collective": "allreduce",
        "algorithms": ["ring"],
        "sizes": {"min_bytes": 1024, "max_bytes": 4096, "multiplier": 2},
        "ranks": [4],
        "iterations": 3,
        "warmup": 1,
        "backend": "netsim",
        "granularity": "full",
    }
    base.update(overrides)
    return parse_test_config(base)


@pytest.fixture
def env(tmp_path) -> EnvConfig:
    return load_env(write_env(tmp_path))
