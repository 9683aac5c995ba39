import numpy as np
import pytest

from memix.futuremap import FutureMapStore
from memix.model import ModelConfig, random_weights
from memix.predictor import Predictor, PredictorConfig
from memix.trace import GenParams, Workload, gen_synthetic


def fresh(seed=0, **kw):
    w = random_weights(ModelConfig(), seed=seed)
    cfg = PredictorConfig(**kw) if kw else None
    return Predictor(w, cfg), FutureMapStore(k=64)


def residue_preserving_remap(trace):
    """Bijective page relayout that keeps every vpn's mod-64 residue."""
    distinct = sorted(set(trace.vpns.tolist()))
    mapping = {v: (v % 64) + 64 * (rank + 10_000) for rank, v in enumerate(distinct)}
    assert len(set(mapping.values())) == len(distinct)
    remapped = np.array([mapping[v] for v in trace.vpns.tolist()], dtype=np.uint64)
    return remapped


class TestOnMiss:
    def test_cold_start_returns_no_candidates(self):
        p, store = fresh()
        assert p.on_miss(store, 1000, 5) == []
        assert len(store) == 0  # no previous miss, nothing observed

    def test_transition_recorded_from_second_miss(self):
        p, store = fresh()
        p.on_miss(store, 1000, 5)
        p.on_miss(store, 2000, 5)
        assert store.resolve(1000, 2000 % 64) == 2000

    def test_min_prob_one_suppresses_everything(self):
        p, store = fresh(min_prob=0.99)
        vpns = [100, 200, 300, 100, 200, 300] * 10
        for v in vpns:
            # random weights spread probability ~1/64 per ordinal, far below
            assert p.on_miss(store, v, 7) == []

    def test_candidates_are_observed_successors_only(self):
        p, store = fresh(min_prob=0.0, top_n=8)
        t = gen_synthetic(Workload.GRAPH_WALK, GenParams(32, 4, walk_steps=300), seed=1)
        seen = set()
        successors = set()
        prev = None
        for v, pc in zip(t.vpns.tolist(), t.pcs.tolist()):
            if prev is not None:
                successors.add(v)
            for cand, prob in p.on_miss(store, v, pc):
                assert cand in successors
                assert 0.0 <= prob <= 1.0
            prev = v
            seen.add(v)

    def test_token_history_tracks_mod_k(self):
        p, store = fresh()
        events = [(1000, 3), (2049, 70), (4096, 129)]
        for v, pc in events:
            p.on_miss(store, v, pc)
        assert list(p.state.history) == [(v % 64, pc % 64) for v, pc in events]

    def test_history_ring_bounded(self):
        p, store = fresh(history_len=4)
        for i in range(20):
            p.on_miss(store, 100 + i, 1)
        assert len(p.state.history) == 4

    def test_deterministic_candidate_stream(self):
        t = gen_synthetic(Workload.LINKED_TRAVERSAL, GenParams(64, 3), seed=5)
        streams = []
        for _ in range(2):
            p, store = fresh(min_prob=0.0)
            out = [p.on_miss(store, int(v), int(pc))
                   for v, pc in zip(t.vpns, t.pcs)]
            streams.append(out)
        assert streams[0] == streams[1]


class TestReset:
    def test_reset_replays_like_fresh(self):
        t = gen_synthetic(Workload.LINKED_TRAVERSAL, GenParams(32, 2), seed=2)
        p1, store1 = fresh(min_prob=0.0)
        for v, pc in zip(t.vpns.tolist(), t.pcs.tolist()):
            p1.on_miss(store1, v, pc)
        p1.reset()
        store1b = FutureMapStore(k=64)
        out1 = [p1.on_miss(store1b, v, pc)
                for v, pc in zip(t.vpns.tolist(), t.pcs.tolist())]
        p2, store2 = fresh(min_prob=0.0)
        out2 = [p2.on_miss(store2, v, pc)
                for v, pc in zip(t.vpns.tolist(), t.pcs.tolist())]
        assert out1 == out2

    def test_reset_leaves_store_alone(self):
        p, store = fresh()
        p.on_miss(store, 1, 0)
        p.on_miss(store, 2, 0)
        maps_before = len(store)
        p.reset()
        assert len(store) == maps_before
        assert p.state.last_miss_vpn is None
        assert p.state.rstate.token_count == 0

    def test_reset_does_not_touch_shared_weights(self):
        w = random_weights(ModelConfig(), seed=3)
        snap = w.head.copy()
        a = Predictor(w)
        b = Predictor(w)
        store = FutureMapStore(k=64)
        for v in range(100, 120):
            a.on_miss(store, v, 1)
            b.on_miss(store, v, 1)
        a.reset()
        assert np.array_equal(w.head, snap)
        assert b.state.rstate.token_count == 20


class TestSpeculativeChaining:
    def test_depth_two_does_not_corrupt_committed_state(self):
        t = gen_synthetic(Workload.LINKED_TRAVERSAL, GenParams(32, 3), seed=7)
        events = list(zip(t.vpns.tolist(), t.pcs.tolist()))
        p1, store1 = fresh(min_prob=0.0, depth=1)
        p2, store2 = fresh(min_prob=0.0, depth=2)
        for v, pc in events:
            p1.on_miss(store1, v, pc)
            p2.on_miss(store2, v, pc)
        assert np.array_equal(p1.state.rstate.s, p2.state.rstate.s)
        assert p1.state.rstate.token_count == p2.state.rstate.token_count

    def test_depth_two_extends_candidates(self):
        t = gen_synthetic(Workload.SEQUENTIAL, GenParams(16, 4), seed=7)
        events = list(zip(t.vpns.tolist(), t.pcs.tolist()))
        p1, store1 = fresh(min_prob=0.0, top_n=1, depth=1)
        p2, store2 = fresh(min_prob=0.0, top_n=1, depth=2)
        n1 = sum(len(p1.on_miss(store1, v, pc)) for v, pc in events)
        n2 = sum(len(p2.on_miss(store2, v, pc)) for v, pc in events)
        assert n2 >= n1

    def test_candidates_deduplicated(self):
        p, store = fresh(min_prob=0.0, top_n=8, depth=3)
        t = gen_synthetic(Workload.LINKED_TRAVERSAL, GenParams(8, 6), seed=9)
        for v, pc in zip(t.vpns.tolist(), t.pcs.tolist()):
            cands = p.on_miss(store, v, pc)
            vpns = [c for c, _ in cands]
            assert len(vpns) == len(set(vpns))


class TestDecoupling:
    def test_residue_preserving_relayout_keeps_ordinal_stream(self):
        t = gen_synthetic(Workload.LINKED_TRAVERSAL, GenParams(200, 2), seed=13)
        remapped = residue_preserving_remap(t)
        w = random_weights(ModelConfig(), seed=21)

        def ordinal_stream(vpns):
            p = Predictor(w, PredictorConfig(top_n=4, min_prob=0.0))
            out = []
            for v, pc in zip(vpns.tolist(), t.pcs.tolist()):
                out.append(p.ordinal_predictions(v, pc))
            return out

        assert ordinal_stream(t.vpns) == ordinal_stream(remapped)


class TestValidation:
    def test_k_mismatch_rejected(self):
        w = random_weights(ModelConfig(), seed=0)
        with pytest.raises(ValueError):
            Predictor(w, PredictorConfig(k=32))

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            PredictorConfig(top_n=0).validate()
        with pytest.raises(ValueError):
            PredictorConfig(min_prob=1.0).validate()
        with pytest.raises(ValueError):
            PredictorConfig(depth=0).validate()
