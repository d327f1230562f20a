"""Acceptance criteria, one test per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to get one line per
criterion. Expected values marked as derived below are computed from the
stated independent route (formula evaluation, brute-force classification,
recomputation) inside the test, never from the code path under test.
"""

import io
import math
import statistics

import numpy as np

from collbench import orchestrator as orch
from collbench.algorithms import AlgorithmId, build_schedule, cost_terms
from collbench.analysis import aggregate, emit_tuning_table
from collbench.cli import main as cli_main
from collbench.fabric import InstrumentationConfig, execute, make_inputs
from collbench.model import DataType, PhaseTag, ReduceOp, naive_oracle
from collbench.netsim import NetworkModel, predict_closed_form, simulate
from collbench.orchestrator import (
    GranularityMode,
    load_env,
    plan_runs,
    read_index,
    replay,
    run,
)
from collbench.tracer import AllocationPolicy, Topology, make_allocation, trace
from collbench.wizard import Wizard

from conftest import make_test, write_env

RING_LIKE_PS = [2, 3, 4, 5, 6, 8, 16]
POW2_PS = [2, 4, 8, 16]


def report(num, text):
    print(f"ACCEPTANCE {num:02d} PASS: {text}")


def supported_ps(alg):
    return POW2_PS if alg.requires_power_of_two else RING_LIKE_PS


def test_c01_oracle_equivalence():
    """Every algorithm x rank count x size matches the naive oracle exactly."""
    cases = 0
    for alg in AlgorithmId:
        for p in supported_ps(alg):
            for n_elements in (p, 4 * p, 64 * p):
                schedule = build_schedule(alg, p, n_elements * 8, 8)
                inputs = make_inputs(schedule, DataType.INT64, seed=1000 + p)
                outputs, _ = execute(
                    schedule, inputs, ReduceOp.SUM, InstrumentationConfig(),
                    iterations=1, warmup=0, check_result=False,
                )
                expected = naive_oracle(alg.collective, inputs, ReduceOp.SUM)
                for got, want in zip(outputs, expected):
                    assert np.array_equal(got.data, want.data), (alg.key, p, n_elements)
                cases += 1
    report(1, f"oracle equivalence exact over {cases} (algorithm, p, size) cases")


def test_c02_ring_laws():
    """Ring allreduce: B = 2n(p-1)/p and A = 2(p-1), exact."""
    checked = 0
    for p in RING_LIKE_PS:
        for n_elements in (p, 4 * p, 64 * p):
            nbytes = n_elements * 4
            ct = cost_terms(build_schedule(AlgorithmId.ALLREDUCE_RING, p, nbytes, 4), 0)
            assert ct.steps == 2 * (p - 1)
            assert ct.bytes_sent_per_rank == 2 * nbytes * (p - 1) // p
            checked += 1
    report(2, f"ring volume and step laws exact over {checked} (p, n) pairs")


def test_c03_step_laws():
    for p in POW2_PS:
        log2p = int(math.log2(p))
        assert build_schedule(AlgorithmId.ALLREDUCE_RECURSIVE_DOUBLING, p, 64 * p, 4).num_steps == log2p
        assert build_schedule(AlgorithmId.ALLREDUCE_RABENSEIFNER, p, 64 * p, 4).num_steps == 2 * log2p
    for p in RING_LIKE_PS:
        assert build_schedule(AlgorithmId.ALLTOALL_PAIRWISE, p, 64 * p, 4).num_steps == p - 1
    report(3, "step laws exact: log2(p), 2*log2(p), p-1")


def test_c04_closed_form_cross_validation():
    """Simulated max-rank time equals the closed form exactly (homogeneous model)."""
    model = NetworkModel.homogeneous(1e-6, 1e-9, gamma=2e-9)
    topo = Topology("flat", 1, 16, 1)
    checked = 0
    for alg in AlgorithmId:
        for p in POW2_PS:
            if not alg.supports(p):
                continue
            nbytes = p * 64 * 4
            schedule = build_schedule(alg, p, nbytes, 4)
            alloc = make_allocation(AllocationPolicy.BLOCK, p, topo)
            sim = simulate(schedule, model, alloc, topo)
            assert sim.max_completion_s == predict_closed_form(alg, p, nbytes, 4, model)
            checked += 1
    report(4, f"simulate == closed form exactly for {checked} algorithm/p cases")


def test_c05_tracer_distances():
    """p=8, two groups of four: brute-force XOR classification fixes the split."""
    topo = Topology("two", 2, 4, 1)
    alloc = make_allocation(AllocationPolicy.BLOCK, 8, topo)
    n = 1024

    def brute_force(distances):
        # Independent oracle: classify each rank's per-step XOR partner by
        # block placement (rank r lives in group r // 4) and count bytes.
        global_bytes = local_bytes = 0
        for r in range(8):
            for i, dist in enumerate(distances, start=1):
                nbytes = n // (1 << i)
                partner = r ^ dist
                if r // 4 != partner // 4:
                    global_bytes += nbytes
                else:
                    local_bytes += nbytes
        return global_bytes, local_bytes

    expected_doubling = brute_force([1, 2, 4])
    expected_halving = brute_force([4, 2, 1])
    assert expected_doubling == (1024, 6144)
    assert expected_halving == (4096, 3072)

    doubling = trace(build_schedule(AlgorithmId.REDUCE_SCATTER_DISTANCE_DOUBLING, 8, n, 4), alloc, topo)
    halving = trace(build_schedule(AlgorithmId.REDUCE_SCATTER_DISTANCE_HALVING, 8, n, 4), alloc, topo)
    assert (doubling.global_bytes, doubling.local_bytes) == expected_doubling
    assert (halving.global_bytes, halving.local_bytes) == expected_halving
    assert doubling.total_bytes == halving.total_bytes == 7168
    report(5, "tracer split: doubling global=1024, halving global=4096, totals 7168")


def test_c06_locality_strict():
    """Distance doubling keeps strictly more bytes inside groups than halving."""
    for groups in (2, 4):
        for p in (4, 8, 16, 32):
            nodes_per_group = max(2, p // groups)
            topo = Topology("t", groups, nodes_per_group, 1)
            alloc = make_allocation(AllocationPolicy.BLOCK, p, topo)
            nbytes = p * 32 * 4
            doubling = trace(
                build_schedule(AlgorithmId.REDUCE_SCATTER_DISTANCE_DOUBLING, p, nbytes, 4), alloc, topo
            )
            halving = trace(
                build_schedule(AlgorithmId.REDUCE_SCATTER_DISTANCE_HALVING, p, nbytes, 4), alloc, topo
            )
            local_d = doubling.local_bytes + doubling.intra_node_bytes
            local_h = halving.local_bytes + halving.intra_node_bytes
            assert local_d > local_h, (groups, p)
    report(6, "locality: local_bytes(doubling) > local_bytes(halving) for p in {4..32}, groups in {2,4}")


def test_c07_rails_regime_split():
    """Above the eager threshold 2 -> 4 rails speeds up >= 1.9x; below, exactly 0 change."""
    topo = Topology("flat", 1, 8, 1)
    alloc = make_allocation(AllocationPolicy.BLOCK, 8, topo)
    small, big = 8 * 1024, 4 * 1024 * 1024  # per-step messages straddle the threshold
    threshold = 16 * 1024
    times = {}
    for rails in (2, 4):
        model = NetworkModel.homogeneous(0.0, 1e-9, eager_threshold=threshold, rails=rails)
        for size in (small, big):
            schedule = build_schedule(AlgorithmId.ALLREDUCE_RABENSEIFNER, 8, size, 4)
            times[(rails, size)] = simulate(schedule, model, alloc, topo).max_completion_s
    assert times[(2, small)] == times[(4, small)]
    ratio = times[(2, big)] / times[(4, big)]
    assert ratio >= 1.9
    report(7, f"rails 2->4: above-threshold speedup {ratio:.2f}x, below-threshold delta exactly 0")


def test_c08_crossover():
    """Excluding copy+alloc wins below a unique size n*, excluding reduction above."""
    model = NetworkModel.homogeneous(
        1e-6, 1e-9, gamma=4e-9, copy_beta=5e-10, alloc_alpha=2e-6
    )
    topo = Topology("flat", 1, 8, 1)
    alloc = make_allocation(AllocationPolicy.BLOCK, 8, topo)
    sizes = [1024 * (1 << k) for k in range(7)]  # 1 KiB .. 64 KiB
    diffs = []
    for size in sizes:
        sim = simulate(build_schedule(AlgorithmId.ALLREDUCE_RING, 8, size, 4), model, alloc, topo)
        total = sim.max_completion_s
        rank = sim.completion_s.index(total)
        phases = sim.phase_s[rank]
        t_excl_copy_alloc = total - phases[PhaseTag.COPY] - phases[PhaseTag.ALLOC]
        t_excl_reduction = total - phases[PhaseTag.REDUCTION]
        diffs.append(t_excl_copy_alloc - t_excl_reduction)
    assert diffs[0] < 0, "excluding copy+alloc must win at the smallest size"
    assert diffs[-1] > 0, "excluding reduction must win at the largest size"
    sign_changes = sum(1 for a, b in zip(diffs, diffs[1:]) if (a < 0) != (b < 0))
    assert sign_changes == 1
    crossover_at = next(s for s, d in zip(sizes, diffs) if d > 0)
    report(8, f"crossover unique; exclude-reduction takes over at {crossover_at} B")


def test_c09_tuning_transition(tmp_path):
    """On a latency-heavy model the tuning table picks recursive doubling for
    small messages and ring for large ones, with a transition between."""
    model = {
        "intra_node": {"alpha": 1e-5, "beta": 1e-9},
        "intra_group": {"alpha": 1e-5, "beta": 1e-9},
        "inter_group": {"alpha": 1e-5, "beta": 1e-9},
        "gamma": 0.0, "copy_beta": 0.0, "alloc_alpha": 0.0,
        "eager_threshold": 0, "rails": 1,
    }
    env = load_env(write_env(tmp_path, model=model))
    test = make_test(
        algorithms=["recursive_doubling", "ring"], ranks=[8], iterations=1, warmup=0,
        sizes={"min_bytes": 1024, "max_bytes": 1048576, "multiplier": 2},
    )
    run_report = run(plan_runs(env, test), env)
    assert run_report.exit_code == 0
    records = aggregate(run_report.index_path).records
    table = emit_tuning_table(records, tmp_path / "tuning.txt")
    smallest = table.choice("allreduce", 8, 1024)
    largest = table.choice("allreduce", 8, 1048576)
    assert smallest == "recursive_doubling"
    assert largest == "ring"
    picks = [rule.algorithm for rule in table.rules]
    assert "recursive_doubling" in picks and "ring" in picks
    flip = next(rule.bytes_min for rule in table.rules if rule.algorithm == "ring")
    report(9, f"tuning table: recursive_doubling small, ring large, transition at {flip} B")


def _recompute(mode, full_csv_text):
    """Independent recomputation of an aggregate file from Full rows."""
    lines = full_csv_text.splitlines()
    assert lines[0] == orch.FULL_HEADER
    groups: dict = {}
    order = []
    for line in lines[1:]:
        parts = line.split(",")
        key = tuple(parts[:5])
        iteration = int(parts[5])
        if (key, iteration) not in groups:
            order.append((key, iteration))
        groups.setdefault((key, iteration), []).append(float(parts[7]))

    def fmt(x):
        return repr(float(x))

    if mode is GranularityMode.STATISTICS:
        out = [orch.STATISTICS_HEADER]
        for (key, iteration) in order:
            vals = groups[(key, iteration)]
            out.append(
                ",".join(key) + f",{iteration},{fmt(min(vals))},{fmt(max(vals))},"
                f"{fmt(statistics.fmean(vals))},{fmt(statistics.median(vals))}"
            )
    elif mode is GranularityMode.MINIMAL:
        out = [orch.MINIMAL_HEADER]
        for (key, iteration) in order:
            out.append(",".join(key) + f",{iteration},{fmt(max(groups[(key, iteration)]))}")
    else:
        out = [orch.SUMMARY_HEADER]
        merged: dict = {}
        point_order = []
        for (key, iteration) in order:
            if key not in merged:
                point_order.append(key)
            merged.setdefault(key, []).extend(groups[(key, iteration)])
        for key in point_order:
            vals = merged[key]
            out.append(
                ",".join(key) + f",{fmt(min(vals))},{fmt(max(vals))},{fmt(statistics.fmean(vals))},"
                f"{fmt(statistics.median(vals))},{fmt(statistics.pstdev(vals))}"
            )
    return "\n".join(out) + "\n"


def test_c10_granularity_consistency(tmp_path):
    """Statistics/Minimal/Summary files are exactly recomputable from Full."""
    configs = [
        dict(algorithms=["ring"], ranks=[4], sizes={"min_bytes": 1024, "max_bytes": 2048, "multiplier": 2}),
        dict(algorithms=["rabenseifner"], ranks=[8], sizes={"min_bytes": 4096, "max_bytes": 4096, "multiplier": 2}),
        dict(algorithms=["recursive_doubling", "ring"], ranks=[2],
             sizes={"min_bytes": 1024, "max_bytes": 4096, "multiplier": 4}),
    ]
    for i, overrides in enumerate(configs):
        env = load_env(write_env(tmp_path / f"run{i}"))
        base = make_test(iterations=3, warmup=0, **overrides)
        full_report = run(plan_runs(env, base), env)
        full_text = (full_report.run_dirs[0] / "allreduce_results.csv").read_text()
        for mode in (GranularityMode.STATISTICS, GranularityMode.MINIMAL, GranularityMode.SUMMARY):
            coarse = make_test(iterations=3, warmup=0, granularity=mode.value, **overrides)
            coarse_report = run(plan_runs(env, coarse), env)
            written = (coarse_report.run_dirs[0] / "allreduce_results.csv").read_text()
            assert written == _recompute(mode, full_text), (i, mode)
    report(10, "statistics/minimal/summary recomputed exactly from full for 3 runs")


def test_c11_replay_and_index_integrity(tmp_path, monkeypatch):
    env = load_env(write_env(tmp_path))

    # Replay fidelity: bit-identical result CSVs from metadata.log.
    test = make_test(sweeps=[{"name": "rails2", "rails": 2}])
    first = run(plan_runs(env, test), env)
    src = first.run_dirs[0]
    second = replay(src / "metadata.log")
    dst = second.run_dirs[0]
    assert (src / "allreduce_results.csv").read_bytes() == (dst / "allreduce_results.csv").read_bytes()

    # Ten mixed runs, one with a forced write failure.
    original_write = orch.write_results
    state = {"remaining_failures": 1}

    def flaky_write(rows, mode, path):
        if state["remaining_failures"] and "fabric" in str(path.parent.parent):
            state["remaining_failures"] -= 1
            raise OSError("injected write failure")
        return original_write(rows, mode, path)

    monkeypatch.setattr(orch, "write_results", flaky_write)
    mixed = [
        make_test(backend="netsim", granularity="full"),
        make_test(backend="fabric", iterations=1, warmup=0,
                  sizes={"min_bytes": 1024, "max_bytes": 1024, "multiplier": 2}),
        make_test(backend="netsim", granularity="summary"),
        make_test(backend="netsim", granularity="minimal", ranks=[8]),
        make_test(backend="netsim", granularity="statistics"),
        make_test(backend="netsim", algorithms=["rabenseifner"], ranks=[16]),
        make_test(backend="netsim", collective="alltoall", algorithms=["pairwise"]),
        make_test(backend="netsim", collective="allgather", algorithms=["ring", "distance_doubling"]),
        make_test(backend="netsim", sweeps=[{"name": "r2", "rails": 2}, {"name": "r4", "rails": 4}]),
        make_test(backend="netsim", collective="reduce_scatter",
                  algorithms=["distance_halving", "distance_doubling", "ring"], ranks=[8]),
    ]
    failed_total = 0
    for t in mixed:
        rep = run(plan_runs(env, t), env)
        failed_total += len(rep.failed)
    assert failed_total == 1

    # Index integrity: rows and run directories correspond one to one.
    rows = read_index(env.output_root / "testbox_index.csv")
    indexed_paths = [r["path"] for r in rows]
    assert len(indexed_paths) == len(set(indexed_paths))
    for row in rows:
        assert (env.output_root / row["path"]).is_dir()
    on_disk = {
        p.relative_to(env.output_root).as_posix()
        for p in (env.output_root / "testbox").glob("*/*/*")
        if p.is_dir()
    }
    assert on_disk == set(indexed_paths)
    assert sum(1 for r in rows if r["status"] == "failed") == 1
    report(11, f"replay bit-identical; {len(rows)} index rows match directories 1:1 incl. 1 failure")


def test_c12_wizard_cli_equivalence(tmp_path):
    wiz_path = tmp_path / "wiz.json"
    answers = "\n" * 14 + "y\n"  # accept every default, confirm at review
    wizard = Wizard(None, io.StringIO(answers), io.StringIO())
    assert wizard.run(wiz_path) == wiz_path

    gen_path = tmp_path / "gen.json"
    assert cli_main(["gen", "--out", str(gen_path)]) == 0
    assert wiz_path.read_bytes() == gen_path.read_bytes()

    # Invalid field entry blocks navigation until corrected.
    echo = io.StringIO()
    blocked = Wizard(None, io.StringIO("\n" * 5 + "1\n" + "2\n" + "\n" * 8 + "y\n"), echo)
    path2 = blocked.run(tmp_path / "wiz2.json")
    assert path2 is not None
    assert "invalid" in echo.getvalue()
    assert path2.read_bytes() == wiz_path.read_bytes()
    report(12, "wizard default descriptor byte-identical to gen; invalid entry blocked")
