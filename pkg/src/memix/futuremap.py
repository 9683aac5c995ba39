"""Per-page future maps: ordinal -> concrete successor page, learned online.

A page's future map has K slots; slot i can only ever hold a successor vpn
with vpn mod K == i, so the slot index doubles as the ordinal the model
predicts and as the label the trainer computes offline from the same trace.
Two successors sharing a residue collide; most-recent wins.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from typing import Dict, List, Optional

DEFAULT_CAPACITY = 1_000_000
MAP_HEADER_BYTES = 32  # owner vpn + counters + bookkeeping
SLOT_BYTES = 8


class FutureMap:
    __slots__ = ("owner_vpn", "slots", "hits", "updates")

    def __init__(self, owner_vpn: int, k: int):
        self.owner_vpn = owner_vpn
        self.slots: List[Optional[int]] = [None] * k
        self.hits = 0
        self.updates = 0

    def fanout(self) -> int:
        return sum(1 for s in self.slots if s is not None)


class FutureMapStore:
    """vpn -> FutureMap association with least-recently-updated eviction."""

    def __init__(self, k: int = 64, capacity: int = DEFAULT_CAPACITY):
        if k < 2:
            raise ValueError("k must be >= 2")
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.k = k
        self.capacity = capacity
        self.maps: "OrderedDict[int, FutureMap]" = OrderedDict()
        self.evictions = 0

    def __len__(self) -> int:
        return len(self.maps)

    def observe_transition(self, from_vpn: int, to_vpn: int) -> None:
        """Record to_vpn at slot (to_vpn mod K) of from_vpn's map (most-recent-wins)."""
        fmap = self.maps.get(from_vpn)
        if fmap is None:
            fmap = FutureMap(from_vpn, self.k)
            self.maps[from_vpn] = fmap
            if len(self.maps) > self.capacity:
                self.maps.popitem(last=False)
                self.evictions += 1
        else:
            self.maps.move_to_end(from_vpn)
        fmap.slots[to_vpn % self.k] = to_vpn
        fmap.updates += 1

    def resolve(self, from_vpn: int, ordinal: int) -> Optional[int]:
        """Slot contents, or None for a missing map / never-observed outcome."""
        if not 0 <= ordinal < self.k:
            raise ValueError(f"ordinal out of range [0, {self.k})")
        fmap = self.maps.get(from_vpn)
        if fmap is None:
            return None
        vpn = fmap.slots[ordinal]
        if vpn is not None:
            fmap.hits += 1
        return vpn

    def fanout_stats(self) -> Dict[int, int]:
        """Histogram: non-empty-slot count -> number of maps with that count."""
        hist: Dict[int, int] = {}
        for fmap in self.maps.values():
            f = fmap.fanout()
            hist[f] = hist.get(f, 0) + 1
        return hist

    def memory_bytes(self) -> int:
        return len(self.maps) * (self.k * SLOT_BYTES + MAP_HEADER_BYTES)

    def to_json_obj(self) -> list:
        return [
            {"vpn": fmap.owner_vpn, "slots": list(fmap.slots)}
            for fmap in self.maps.values()
        ]

    def dump_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_obj(), fh)
