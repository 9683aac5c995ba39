"""Online miss-driven prediction pipeline.

Per hard miss: record the observed transition into the future-map store,
tokenize the miss (vpn mod K, pc mod K), advance the recurrent model one
step, and resolve the top predicted ordinals against the faulting page's
future map. Only pages previously observed as successors can come out.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Deque, List, Optional, Tuple

from .futuremap import FutureMapStore
from .model import ModelWeights, RecurrentState, forward_step, predict_topn, zero_state


@dataclass
class PredictorConfig:
    k: int = 64
    history_len: int = 8
    top_n: int = 2
    min_prob: float = 0.1
    depth: int = 1

    def validate(self) -> None:
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.history_len < 1:
            raise ValueError("history_len must be >= 1")
        if not 1 <= self.top_n <= self.k:
            raise ValueError("top_n must be in [1, k]")
        if not 0.0 <= self.min_prob < 1.0:
            raise ValueError("min_prob must be in [0, 1)")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")


@dataclass
class PredictorState:
    history: Deque[Tuple[int, int]]
    rstate: RecurrentState
    last_miss_vpn: Optional[int] = None


class Predictor:
    """Single-owner prediction state over shared read-only weights."""

    def __init__(self, weights: ModelWeights, config: Optional[PredictorConfig] = None):
        if config is None:
            config = PredictorConfig(k=weights.config.vocab_size)
        config.validate()
        if config.k != weights.config.vocab_size:
            raise ValueError(
                f"predictor k={config.k} does not match model K={weights.config.vocab_size}"
            )
        self.weights = weights
        self.config = config
        self.state = PredictorState(
            history=deque(maxlen=config.history_len),
            rstate=zero_state(weights.config),
        )

    def reset(self) -> None:
        """Back to a fresh predictor; future-map stores are external and untouched."""
        self.state = PredictorState(
            history=deque(maxlen=self.config.history_len),
            rstate=zero_state(self.weights.config),
        )

    def on_miss(self, store: FutureMapStore, vpn: int, pc: int) -> List[Tuple[int, float]]:
        """Consume one hard miss; return prefetch candidates as (vpn, probability).

        An empty list is a normal outcome: cold maps, low confidence, or a
        min_prob threshold nothing clears.
        """
        cfg = self.config
        st = self.state
        if st.last_miss_vpn is not None:
            store.observe_transition(st.last_miss_vpn, vpn)
        addr_tok = vpn % cfg.k
        pc_tok = pc % cfg.k
        st.history.append((addr_tok, pc_tok))
        logits, _ = forward_step(self.weights, st.rstate, addr_tok, pc_tok)
        candidates = self._resolve(store, vpn, logits)
        if cfg.depth > 1 and candidates:
            spec_state = st.rstate.clone()
            current = candidates[0][0]
            for _ in range(cfg.depth - 1):
                # hypothetical next miss: the best candidate so far, reusing
                # the faulting pc (the speculative fault site is unknown)
                lg, _ = forward_step(self.weights, spec_state, current % cfg.k, pc_tok)
                extra = self._resolve(store, current, lg)
                if not extra:
                    break
                candidates.extend(extra)
                current = extra[0][0]
        st.last_miss_vpn = vpn
        return self._dedupe(candidates)

    def ordinal_predictions(self, vpn: int, pc: int) -> List[Tuple[int, float]]:
        """Advance one miss and return raw top-n ordinals (no map resolution).

        Bypasses future maps entirely; used to inspect the layout-independent
        half of the pipeline.
        """
        cfg = self.config
        st = self.state
        addr_tok = vpn % cfg.k
        pc_tok = pc % cfg.k
        st.history.append((addr_tok, pc_tok))
        st.last_miss_vpn = vpn
        logits, _ = forward_step(self.weights, st.rstate, addr_tok, pc_tok)
        return predict_topn(logits, cfg.top_n)

    def _resolve(self, store: FutureMapStore, from_vpn: int, logits) -> List[Tuple[int, float]]:
        out = []
        for ordinal, prob in predict_topn(logits, self.config.top_n):
            if prob < self.config.min_prob:
                continue
            target = store.resolve(from_vpn, ordinal)
            if target is not None:
                out.append((target, prob))
        return out

    @staticmethod
    def _dedupe(candidates: List[Tuple[int, float]]) -> List[Tuple[int, float]]:
        seen = set()
        out = []
        for vpn, prob in candidates:
            if vpn not in seen:
                seen.add(vpn)
                out.append((vpn, prob))
        return out
