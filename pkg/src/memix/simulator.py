"""Trace-driven far-memory swap simulator.

Replays a FullAccess trace against a bounded LRU-managed local memory on a
virtual clock. Every access charges t_local; an on-demand fetch adds t_far
(for the learned policy, max(t_far, t_inf): inference runs while the demand
I/O is outstanding); an access that lands on a still-inflight prefetch
stalls for the remainder. Prefetch candidates come from a pluggable policy
consulted on each hard miss; completions insert pages at most-recent
position, evicting LRU when full.
"""

from __future__ import annotations

import enum
import heapq
import os
from collections import OrderedDict, deque
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .futuremap import DEFAULT_CAPACITY, FutureMapStore
from .model import ModelWeights
from .predictor import Predictor, PredictorConfig
from .trace import Trace, TraceKind


class SimulationError(ValueError):
    pass


class Policy(enum.Enum):
    NONE = "none"
    READAHEAD = "readahead"
    STRIDE = "stride"
    LEAP_MAJORITY = "leap"
    MEMIX = "memix"
    ORACLE = "oracle"


@dataclass
class SimConfig:
    capacity_fraction: float
    t_local: int = 100          # ns per local access
    t_far: int = 6_000          # ns per far-memory fetch
    t_inf: int = 1_000          # ns charged per miss for model inference (Memix)
    max_inflight_prefetch: int = 8
    policy: Policy = Policy.NONE
    readahead_window: int = 8
    leap_history: int = 32
    futuremap_capacity: int = DEFAULT_CAPACITY
    predictor: Optional[PredictorConfig] = None

    def validate(self) -> None:
        if not 0.0 < self.capacity_fraction <= 1.0:
            raise SimulationError("capacity_fraction must be in (0, 1]")
        if self.t_far <= self.t_local:
            raise SimulationError("t_far must exceed t_local")
        if self.t_local < 0 or self.t_inf < 0:
            raise SimulationError("timing charges must be non-negative")
        if self.max_inflight_prefetch < 1:
            raise SimulationError("max_inflight_prefetch must be >= 1")
        if self.readahead_window < 1:
            raise SimulationError("readahead_window must be >= 1")


@dataclass
class SimReport:
    policy: str
    capacity_fraction: float
    capacity_pages: int
    footprint_pages: int
    accesses: int
    total_time_ns: int
    time_local_ns: int
    time_fetch_ns: int
    time_stall_ns: int
    hits: int
    partial_hits: int
    misses: int
    prefetch_issued: int
    prefetch_useful: int
    prefetch_wasted: int
    prefetch_inflight_at_end: int
    evictions: int
    prefetch_evictions: int
    baseline_misses: int
    coverage: float
    accuracy: float
    futuremap_bytes: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class _Frame:
    __slots__ = ("prefetched", "used")

    def __init__(self, prefetched: bool):
        self.prefetched = prefetched
        self.used = False


class _NonePolicy:
    def on_miss(self, vpn: int, pc: int, idx: int) -> List[int]:
        return []

    def notify(self, vpn: int, useful: bool) -> None:
        pass


class _ReadaheadPolicy(_NonePolicy):
    """Sequential-window prefetch, gated on the last two misses being sequential."""

    def __init__(self, window: int):
        self.window = window
        self.prev = None
        self.prev2 = None

    def on_miss(self, vpn, pc, idx):
        out = []
        if (
            self.prev is not None
            and self.prev2 is not None
            and self.prev == self.prev2 + 1
            and vpn == self.prev + 1
        ):
            out = [vpn + i for i in range(1, self.window + 1)]
        self.prev2, self.prev = self.prev, vpn
        return out


class _StridePolicy(_NonePolicy):
    """Per-PC stride detector: emit vpn+delta after two consecutive equal deltas."""

    def __init__(self):
        self.table: Dict[int, Tuple[int, Optional[int]]] = {}

    def on_miss(self, vpn, pc, idx):
        out = []
        entry = self.table.get(pc)
        if entry is not None:
            last_vpn, last_delta = entry
            delta = vpn - last_vpn
            if delta == last_delta and delta != 0:
                target = vpn + delta
                if target >= 0:
                    out = [target]
            self.table[pc] = (vpn, delta)
        else:
            self.table[pc] = (vpn, None)
        return out


class _LeapMajorityPolicy(_NonePolicy):
    """Majority delta over a global miss-delta window, adaptive window size."""

    def __init__(self, history: int, max_window: int):
        self.history = history
        self.max_window = max_window
        self.deltas: deque = deque(maxlen=history)
        self.last_vpn: Optional[int] = None
        self.window = 1

    def on_miss(self, vpn, pc, idx):
        out = []
        if self.last_vpn is not None:
            self.deltas.append(vpn - self.last_vpn)
        self.last_vpn = vpn
        if self.deltas:
            counts: Dict[int, int] = {}
            for dv in self.deltas:
                counts[dv] = counts.get(dv, 0) + 1
            best, n = max(counts.items(), key=lambda kv: (kv[1], -abs(kv[0])))
            if n > self.history // 2 and best != 0:
                out = [vpn + best * i for i in range(1, self.window + 1)
                       if vpn + best * i >= 0]
        return out

    def notify(self, vpn, useful):
        if useful:
            self.window = min(self.max_window, self.window * 2)
        else:
            self.window = max(1, self.window // 2)


class _MemixPolicy(_NonePolicy):
    """Learned policy: recurrent model + per-page future maps."""

    def __init__(self, weights: ModelWeights, pconfig: Optional[PredictorConfig],
                 store_capacity: int):
        self.predictor = Predictor(weights, pconfig)
        self.store = FutureMapStore(k=weights.config.vocab_size, capacity=store_capacity)

    def on_miss(self, vpn, pc, idx):
        return [v for v, _prob in self.predictor.on_miss(self.store, vpn, pc)]


class _OraclePolicy(_NonePolicy):
    """Clairvoyant: targets the next absent pages in future access order.

    Scans ahead only across the next `capacity` distinct pages; anything
    further out would be evicted before use, so prefetching it could only
    displace sooner-needed pages.
    """

    def __init__(self, engine: "_Engine"):
        self.engine = engine

    def on_miss(self, vpn, pc, idx):
        eng = self.engine
        budget = eng.config.max_inflight_prefetch - len(eng.inflight)
        picks: List[int] = []
        seen = {vpn}
        j = idx + 1
        vpns = eng.vpns
        n = len(vpns)
        while budget > 0 and j < n and len(seen) < eng.capacity_pages:
            page = int(vpns[j])
            if page not in seen:
                seen.add(page)
                if page not in eng.resident and page not in eng.inflight:
                    picks.append(page)
                    budget -= 1
            j += 1
        return picks


class _Engine:
    def __init__(self, trace: Trace, config: SimConfig, weights: Optional[ModelWeights]):
        self.config = config
        self.vpns = trace.vpns
        self.pcs = trace.pcs
        self.footprint = trace.footprint_pages()
        self.capacity_pages = max(1, int(round(config.capacity_fraction * self.footprint)))
        self.resident: "OrderedDict[int, _Frame]" = OrderedDict()
        self.inflight: Dict[int, Tuple[int, int]] = {}  # vpn -> (completion, seq)
        self.heap: List[Tuple[int, int, int]] = []      # (completion, seq, vpn)
        self.seq = 0
        self.clock = 0
        self.time_local = 0
        self.time_fetch = 0
        self.time_stall = 0
        self.hits = 0
        self.partial_hits = 0
        self.misses = 0
        self.issued = 0
        self.useful = 0
        self.wasted = 0
        self.evictions = 0
        self.prefetch_evictions = 0
        self.policy = self._make_policy(weights)

    def _make_policy(self, weights):
        cfg = self.config
        if cfg.policy is Policy.NONE:
            return _NonePolicy()
        if cfg.policy is Policy.READAHEAD:
            return _ReadaheadPolicy(cfg.readahead_window)
        if cfg.policy is Policy.STRIDE:
            return _StridePolicy()
        if cfg.policy is Policy.LEAP_MAJORITY:
            return _LeapMajorityPolicy(cfg.leap_history, max_window=8)
        if cfg.policy is Policy.MEMIX:
            if weights is None:
                raise SimulationError("policy=memix requires model weights")
            return _MemixPolicy(weights, cfg.predictor, cfg.futuremap_capacity)
        if cfg.policy is Policy.ORACLE:
            return _OraclePolicy(self)
        raise SimulationError(f"unknown policy {cfg.policy}")

    def _evict_one(self, by_prefetch: bool) -> None:
        victim, frame = self.resident.popitem(last=False)
        self.evictions += 1
        if by_prefetch:
            self.prefetch_evictions += 1
        if frame.prefetched and not frame.used:
            self.wasted += 1
            self.policy.notify(victim, False)

    def _insert(self, vpn: int, prefetched: bool) -> None:
        if len(self.resident) >= self.capacity_pages:
            self._evict_one(by_prefetch=prefetched)
        self.resident[vpn] = _Frame(prefetched)

    def _complete_until(self, t: int) -> None:
        while self.heap and self.heap[0][0] <= t:
            completion, seq, vpn = heapq.heappop(self.heap)
            entry = self.inflight.get(vpn)
            if entry is None or entry[1] != seq:
                continue  # stale heap entry
            del self.inflight[vpn]
            self._insert(vpn, prefetched=True)

    def _touch(self, vpn: int) -> None:
        frame = self.resident[vpn]
        self.resident.move_to_end(vpn)
        if frame.prefetched and not frame.used:
            frame.used = True
            self.useful += 1
            self.policy.notify(vpn, True)

    def _issue_prefetches(self, candidates: Sequence[int], demand_vpn: int) -> None:
        for cand in candidates:
            if len(self.inflight) >= self.config.max_inflight_prefetch:
                break
            if cand == demand_vpn or cand in self.resident or cand in self.inflight:
                continue
            self.seq += 1
            completion = self.clock + self.config.t_far
            self.inflight[cand] = (completion, self.seq)
            heapq.heappush(self.heap, (completion, self.seq, cand))
            self.issued += 1

    def run(self, miss_log: Optional[list] = None) -> None:
        memix = self.config.policy is Policy.MEMIX
        fetch_cost = max(self.config.t_far, self.config.t_inf) if memix else self.config.t_far
        t_local = self.config.t_local
        vpns = self.vpns
        pcs = self.pcs
        for idx in range(len(vpns)):
            vpn = int(vpns[idx])
            self._complete_until(self.clock)
            if vpn in self.resident:
                self.hits += 1
                self._touch(vpn)
            elif vpn in self.inflight:
                completion = self.inflight[vpn][0]
                self.time_stall += completion - self.clock
                self.clock = completion
                self.partial_hits += 1
                self._complete_until(self.clock)
                self._touch(vpn)
            else:
                pc = int(pcs[idx])
                self.misses += 1
                if miss_log is not None:
                    miss_log.append((vpn, pc))
                candidates = self.policy.on_miss(vpn, pc, idx)
                self._issue_prefetches(candidates, vpn)
                self.clock += fetch_cost
                self.time_fetch += fetch_cost
                self._complete_until(self.clock)
                self._insert(vpn, prefetched=False)
            self.clock += t_local
            self.time_local += t_local
            assert len(self.resident) <= self.capacity_pages
        # classify leftovers: resident-but-unused prefetches are wasted
        for vpn, frame in self.resident.items():
            if frame.prefetched and not frame.used:
                self.wasted += 1
                self.policy.notify(vpn, False)

    def report(self, baseline_misses: int) -> SimReport:
        inflight_at_end = len(self.inflight)
        coverage = 0.0
        if baseline_misses > 0:
            coverage = 1.0 - self.misses / baseline_misses
        accuracy = self.useful / self.issued if self.issued else 0.0
        fmap_bytes = 0
        if isinstance(self.policy, _MemixPolicy):
            fmap_bytes = self.policy.store.memory_bytes()
        return SimReport(
            policy=self.config.policy.value,
            capacity_fraction=self.config.capacity_fraction,
            capacity_pages=self.capacity_pages,
            footprint_pages=self.footprint,
            accesses=len(self.vpns),
            total_time_ns=self.clock,
            time_local_ns=self.time_local,
            time_fetch_ns=self.time_fetch,
            time_stall_ns=self.time_stall,
            hits=self.hits,
            partial_hits=self.partial_hits,
            misses=self.misses,
            prefetch_issued=self.issued,
            prefetch_useful=self.useful,
            prefetch_wasted=self.wasted,
            prefetch_inflight_at_end=inflight_at_end,
            evictions=self.evictions,
            prefetch_evictions=self.prefetch_evictions,
            baseline_misses=baseline_misses,
            coverage=coverage,
            accuracy=accuracy,
            futuremap_bytes=fmap_bytes,
        )


def run(trace: Trace, config: SimConfig, weights: Optional[ModelWeights] = None,
        baseline_misses: Optional[int] = None,
        miss_log: Optional[list] = None) -> SimReport:
    """Simulate one trace under one configuration.

    baseline_misses (for the coverage metric) defaults to a policy=none run
    at the same capacity; pass it explicitly to avoid recomputation.
    """
    config.validate()
    if trace.kind is not TraceKind.FULL_ACCESS:
        raise SimulationError("simulator input must be a FullAccess trace")
    engine = _Engine(trace, config, weights)
    engine.run(miss_log=miss_log)
    if baseline_misses is None:
        if config.policy is Policy.NONE:
            baseline_misses = engine.misses
        else:
            base = _Engine(trace, replace(config, policy=Policy.NONE), None)
            base.run()
            baseline_misses = base.misses
    return engine.report(baseline_misses)


def collect_misslog(trace: Trace, capacity_fraction: float,
                    config: Optional[SimConfig] = None) -> Trace:
    """Record the hard-miss stream of a policy=none run as a MissLog trace."""
    if config is None:
        config = SimConfig(capacity_fraction=capacity_fraction)
    else:
        config = replace(config, capacity_fraction=capacity_fraction)
    config = replace(config, policy=Policy.NONE)
    log: List[Tuple[int, int]] = []
    run(trace, config, miss_log=log)
    vpns = np.array([m[0] for m in log], dtype=np.uint64)
    pcs = np.array([m[1] for m in log], dtype=np.uint64)
    return Trace(vpns, pcs, kind=TraceKind.MISS_LOG,
                 page_size_bits=trace.page_size_bits,
                 capacity_fraction=capacity_fraction)


def _sweep_cell(args):
    trace, config, weights, baseline = args
    return run(trace, config, weights, baseline_misses=baseline)


def sweep(trace: Trace, capacities: Sequence[float], policies: Sequence[Policy],
          weights: Optional[ModelWeights] = None,
          base_config: Optional[SimConfig] = None) -> List[dict]:
    """Cross-product run; each row is normalized by the same policy's run at
    full local-memory capacity. Honors MEMIX_SIM_THREADS for parallel cells.
    """
    if base_config is None:
        base_config = SimConfig(capacity_fraction=1.0)
    caps = list(capacities)
    for c in caps:
        if not 0.0 < c <= 1.0:
            raise SimulationError(f"capacity fraction {c} outside (0, 1]")

    all_caps = sorted(set(caps) | {1.0})
    none_reports: Dict[float, SimReport] = {}
    for cap in all_caps:
        cfg = replace(base_config, capacity_fraction=cap, policy=Policy.NONE)
        none_reports[cap] = run(trace, cfg)

    jobs = []
    for policy in policies:
        needed = sorted(set(caps) | {1.0}) if policy is not Policy.NONE else []
        for cap in needed:
            cfg = replace(base_config, capacity_fraction=cap, policy=policy)
            w = weights if policy is Policy.MEMIX else None
            jobs.append(((policy, cap), (trace, cfg, w, none_reports[cap].misses)))

    threads = int(os.environ.get("MEMIX_SIM_THREADS", "1") or "1")
    results: Dict[Tuple[Policy, float], SimReport] = {}
    if threads > 1 and len(jobs) > 1:
        import concurrent.futures as cf

        with cf.ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            for key_args, rep in zip([j[0] for j in jobs],
                                     pool.map(_sweep_cell, [j[1] for j in jobs])):
                results[key_args] = rep
    else:
        for key, args in jobs:
            results[key] = _sweep_cell(args)
    for cap, rep in none_reports.items():
        results[(Policy.NONE, cap)] = rep

    rows = []
    for policy in policies:
        full = results[(policy, 1.0)]
        for cap in caps:
            rep = results[(policy, cap)]
            normalized = (
                rep.total_time_ns / full.total_time_ns if full.total_time_ns else 1.0
            )
            row = rep.to_dict()
            row["normalized"] = normalized
            rows.append(row)
    return rows


SWEEP_CSV_COLUMNS = [
    "policy", "capacity_fraction", "total_time_ns", "normalized", "misses",
    "issued", "useful", "wasted", "accuracy", "coverage", "evictions",
    "futuremap_bytes",
]


def sweep_rows_to_csv(rows: List[dict]) -> str:
    lines = [",".join(SWEEP_CSV_COLUMNS)]
    for row in rows:
        values = {
            "policy": row["policy"],
            "capacity_fraction": f"{row['capacity_fraction']:g}",
            "total_time_ns": str(row["total_time_ns"]),
            "normalized": f"{row['normalized']:.6f}",
            "misses": str(row["misses"]),
            "issued": str(row["prefetch_issued"]),
            "useful": str(row["prefetch_useful"]),
            "wasted": str(row["prefetch_wasted"]),
            "accuracy": f"{row['accuracy']:.6f}",
            "coverage": f"{row['coverage']:.6f}",
            "evictions": str(row["evictions"]),
            "futuremap_bytes": str(row["futuremap_bytes"]),
        }
        lines.append(",".join(values[c] for c in SWEEP_CSV_COLUMNS))
    return "\n".join(lines) + "\n"
