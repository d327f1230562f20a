import math

import pytest

from collbench.algorithms import (
    Action,
    ActionKind,
    AlgorithmId,
    Region,
    Schedule,
    build_schedule,
    cost_terms,
)
from collbench.netsim import (
    LinkCost,
    NetworkModel,
    ThroughputConvention,
    predict_closed_form,
    simulate,
    throughput,
)
from collbench.tracer import Allocation, AllocationPolicy, Placement, Topology, make_allocation

FLAT = Topology("flat", 1, 64, 1)


def flat_alloc(p):
    return make_allocation(AllocationPolicy.BLOCK, p, FLAT)


def point_to_point_schedule(nbytes):
    """Two ranks, one step, a single transfer rank0 -> rank1."""
    send = Action(ActionKind.SEND, peer=1, bytes=nbytes, elements=nbytes // 4,
                  tag=(0, 0, 1), src=Region.span(0, nbytes // 4, "input"))
    recv = Action(ActionKind.RECV, peer=0, bytes=nbytes, elements=nbytes // 4,
                  tag=(0, 0, 1), dst=Region.span(0, nbytes // 4))
    return Schedule(AlgorithmId.ALLGATHER_RING, 2, nbytes, 4, [[[send]], [[recv]]], ["transfer"])


class TestClosedForm:
    def test_ring_allreduce_example(self):
        # A=6 steps, B=6144 bytes, C=768 elements at p=4, n=4096.
        model = NetworkModel.homogeneous(1e-6, 1e-9, gamma=1e-9)
        got = predict_closed_form(AlgorithmId.ALLREDUCE_RING, 4, 4096, 4, model)
        assert math.isclose(got, 6 * 1e-6 + 6144 * 1e-9 + 768 * 1e-9, rel_tol=1e-12)
        assert math.isclose(got, 1.2912e-5, rel_tol=1e-9)

    def test_all_zero_model(self):
        model = NetworkModel.homogeneous(0.0, 0.0)
        for alg in AlgorithmId:
            assert predict_closed_form(alg, 4, 4 * 64 * 4, 4, model) == 0.0

    def test_requires_homogeneous(self):
        model = NetworkModel(LinkCost(1e-7, 1e-11), LinkCost(1e-6, 1e-10), LinkCost(2e-6, 2e-10))
        with pytest.raises(ValueError, match="homogeneous"):
            predict_closed_form(AlgorithmId.ALLREDUCE_RING, 4, 4096, 4, model)

    @pytest.mark.parametrize("rails,expected", [(2, 5.25288e-4), (4, 2.63144e-4)])
    def test_rails_divide_beta_above_threshold(self, rails, expected):
        model = NetworkModel.homogeneous(1e-6, 1e-9, eager_threshold=16384, rails=rails)
        sim = simulate(point_to_point_schedule(1 << 20), model, flat_alloc(2), FLAT)
        assert math.isclose(sim.completion_s[1], expected, rel_tol=1e-9)

    def test_eager_messages_unaffected_by_rails(self):
        small = point_to_point_schedule(4096)
        base = NetworkModel.homogeneous(1e-6, 1e-9, eager_threshold=16384, rails=1)
        railed = NetworkModel.homogeneous(1e-6, 1e-9, eager_threshold=16384, rails=8)
        a = simulate(small, base, flat_alloc(2), FLAT)
        b = simulate(small, railed, flat_alloc(2), FLAT)
        assert a.completion_s == b.completion_s


class TestSimulator:
    @pytest.mark.parametrize("alg", list(AlgorithmId))
    @pytest.mark.parametrize("p", [2, 4, 8, 16])
    def test_matches_closed_form_exactly(self, alg, p):
        if not alg.supports(p):
            pytest.skip("rank constraint")
        nbytes = p * 32 * 4
        model = NetworkModel.homogeneous(1e-6, 1e-9, gamma=2e-9)
        sim = simulate(build_schedule(alg, p, nbytes, 4), model, flat_alloc(p), FLAT)
        assert sim.max_completion_s == predict_closed_form(alg, p, nbytes, 4, model)

    def test_matches_closed_form_with_threshold_and_rails(self):
        model = NetworkModel.homogeneous(1e-6, 1e-9, gamma=2e-9, eager_threshold=512, rails=3)
        for alg in (AlgorithmId.ALLREDUCE_RABENSEIFNER, AlgorithmId.ALLREDUCE_RING):
            s = build_schedule(alg, 8, 8 * 512 * 4, 4)
            sim = simulate(s, model, flat_alloc(8), FLAT)
            assert sim.max_completion_s == predict_closed_form(alg, 8, 8 * 512 * 4, 4, model)

    def test_zero_model_zero_times(self):
        s = build_schedule(AlgorithmId.ALLTOALL_PAIRWISE, 4, 4 * 64, 4)
        sim = simulate(s, NetworkModel.homogeneous(0.0, 0.0), flat_alloc(4), FLAT)
        assert sim.completion_s == [0.0] * 4

    def test_determinism(self):
        s = build_schedule(AlgorithmId.ALLREDUCE_RABENSEIFNER, 8, 8 * 128 * 4, 4)
        model = NetworkModel.homogeneous(3e-6, 2e-9, gamma=1e-9, copy_beta=1e-10, alloc_alpha=1e-7)
        a = simulate(s, model, flat_alloc(8), FLAT)
        b = simulate(s, model, flat_alloc(8), FLAT)
        assert a.completion_s == b.completion_s
        assert a.step_finish_s == b.step_finish_s

    def test_rank_missing_from_placement(self):
        s = build_schedule(AlgorithmId.ALLREDUCE_RING, 4, 1024, 4)
        short = Allocation(tuple(Placement(r, r, 0, 0) for r in range(3)))
        with pytest.raises(ValueError, match="rank 3"):
            simulate(s, NetworkModel.homogeneous(1e-6, 1e-9), short, FLAT)

    def test_rails_monotonic_and_strict_only_above_threshold(self):
        s = build_schedule(AlgorithmId.ALLREDUCE_RING, 4, 4 * 4096 * 4, 4)
        threshold = 8192  # ring step message is 16384 > threshold
        times = []
        for rails in (1, 2, 4, 8):
            model = NetworkModel.homogeneous(1e-6, 1e-9, eager_threshold=threshold, rails=rails)
            times.append(simulate(s, model, flat_alloc(4), FLAT).max_completion_s)
        assert times == sorted(times, reverse=True)
        assert all(a > b for a, b in zip(times, times[1:]))
        eager_times = []
        for rails in (1, 2, 4, 8):
            model = NetworkModel.homogeneous(1e-6, 1e-9, eager_threshold=1 << 30, rails=rails)
            eager_times.append(simulate(s, model, flat_alloc(4), FLAT).max_completion_s)
        assert len(set(eager_times)) == 1

    def test_scale_invariance(self):
        # k=2 keeps the float arithmetic exact; argmin choice is unchanged.
        model = NetworkModel.homogeneous(1e-6, 1e-9, gamma=2e-9, copy_beta=1e-10, alloc_alpha=1e-7)
        doubled = model.scaled(2.0)
        times, times2 = {}, {}
        for alg in AlgorithmId.for_collective(AlgorithmId.ALLREDUCE_RING.collective):
            s = build_schedule(alg, 8, 8 * 256 * 4, 4)
            times[alg] = simulate(s, model, flat_alloc(8), FLAT).max_completion_s
            times2[alg] = simulate(s, doubled, flat_alloc(8), FLAT).max_completion_s
        for alg in times:
            assert times2[alg] == 2.0 * times[alg]
        assert min(times, key=times.get) is min(times2, key=times2.get)

    def test_doubling_beats_halving_across_groups(self):
        # Two groups of four, inter-group links 10x slower; frozen regression
        # values from the first implementation of this model.
        topo = Topology("two", 2, 4, 1)
        alloc = make_allocation(AllocationPolicy.BLOCK, 8, topo)
        model = NetworkModel(LinkCost(0.0, 1e-9), LinkCost(0.0, 1e-9), LinkCost(0.0, 1e-8))
        doubling = simulate(
            build_schedule(AlgorithmId.REDUCE_SCATTER_DISTANCE_DOUBLING, 8, 1024, 4), model, alloc, topo
        ).max_completion_s
        halving = simulate(
            build_schedule(AlgorithmId.REDUCE_SCATTER_DISTANCE_HALVING, 8, 1024, 4), model, alloc, topo
        ).max_completion_s
        assert doubling < halving
        assert doubling == 2.048e-06
        assert halving == 5.504e-06

    def test_phase_split_accounts_for_copy_and_alloc(self):
        model = NetworkModel.homogeneous(1e-6, 1e-9, gamma=1e-9, copy_beta=1e-10, alloc_alpha=5e-7)
        s = build_schedule(AlgorithmId.ALLREDUCE_RING, 4, 4096, 4)
        sim = simulate(s, model, flat_alloc(4), FLAT)
        from collbench.model import PhaseTag

        for r in range(4):
            phases = sim.phase_s[r]
            assert phases[PhaseTag.COPY] == 4096 * 1e-10
            assert phases[PhaseTag.ALLOC] == 5e-7
            total = sum(phases.values())
            assert math.isclose(total, sim.completion_s[r], rel_tol=1e-9)


class TestModelValidation:
    def test_rails_positive(self):
        with pytest.raises(ValueError, match="rails"):
            NetworkModel.homogeneous(1e-6, 1e-9, rails=0)

    def test_latency_ordering_warns(self):
        with pytest.warns(UserWarning, match="latency ordering"):
            NetworkModel(LinkCost(5e-6, 1e-11), LinkCost(1e-6, 1e-10), LinkCost(2e-6, 2e-10))

    def test_override_roundtrip(self):
        model = NetworkModel.homogeneous(1e-6, 1e-9, rails=1)
        swept = model.with_overrides({"rails": 4, "inter_group.beta": 5e-10})
        assert swept.rails == 4
        assert swept.inter_group.beta == 5e-10
        with pytest.raises(ValueError, match="unknown model override"):
            model.with_overrides({"bogus": 1})

    def test_dict_roundtrip(self):
        model = NetworkModel.homogeneous(1e-6, 1e-9, gamma=2e-9, eager_threshold=4096, rails=2)
        assert NetworkModel.from_dict(model.to_dict()) == model


class TestThroughput:
    def test_goodput(self):
        assert throughput(1 << 30, 1.0, ThroughputConvention.GOODPUT) == 8.589934592e9

    def test_bus_bandwidth_uses_wire_bytes(self):
        ct = cost_terms(build_schedule(AlgorithmId.ALLREDUCE_RING, 4, 4096, 4), 0)
        got = throughput(4096, 1e-5, ThroughputConvention.BUS_BANDWIDTH, wire_bytes=ct.bytes_sent_per_rank)
        assert math.isclose(got, 8 * 6144 / 1e-5, rel_tol=1e-12)

    def test_nonpositive_time(self):
        with pytest.raises(ValueError, match="positive"):
            throughput(1024, 0.0)

    def test_bus_bandwidth_requires_wire_bytes(self):
        with pytest.raises(ValueError, match="wire_bytes"):
            throughput(1024, 1.0, ThroughputConvention.BUS_BANDWIDTH)
