"""Constant-time recurrent inference for the tiny retention network.

The network maps a stream of (addr mod K, pc mod K) token pairs to a
distribution over K ordinals. Each token advances a fixed-size per-layer
state matrix, so per-step work is O(layers * d^2) regardless of history
length. Values are stored as 32-bit floats; accumulation runs in double
precision inside the jitted kernel so the recurrent evaluation stays in
lockstep with the trainer's parallel form.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numba import njit

MAGIC = b"MXW1"
VERSION = 1
HEADER = struct.Struct("<4sBBHHH")  # magic, version, layers, K, d, ffn_mult
RMSNORM_EPS = 1e-6
GELU_C = 0.7978845608028654  # sqrt(2/pi)
GELU_A = 0.044715


class WeightsError(ValueError):
    """Base class for weight-file problems."""


class BadWeightsMagicError(WeightsError):
    pass


class UnsupportedWeightsVersionError(WeightsError):
    pass


class WeightsShapeError(WeightsError):
    pass


class NonFiniteError(ArithmeticError):
    """Raised when inference produces or loads non-finite values."""


def default_decays(layers: int) -> Tuple[float, ...]:
    """Per-layer decay schedule: layer l gets 1 - 2^-(5+l)."""
    return tuple(1.0 - 2.0 ** -(5 + l) for l in range(layers))


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 64
    hidden_dim: int = 8
    layers: int = 2
    ffn_mult: int = 2
    decays: Tuple[float, ...] = field(default_factory=lambda: default_decays(2))

    @property
    def ffn_dim(self) -> int:
        return self.ffn_mult * self.hidden_dim

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.ffn_mult < 1:
            raise ValueError("ffn_mult must be >= 1")
        if len(self.decays) != self.layers:
            raise ValueError("need one decay per layer")
        for g in self.decays:
            if not 0.0 < g < 1.0:
                raise ValueError(f"decay {g} outside (0, 1)")

    def param_count(self) -> int:
        k, d, fd = self.vocab_size, self.hidden_dim, self.ffn_dim
        return 2 * k * d + self.layers * (4 * d * d + 2 * d * fd) + d * k


@dataclass
class ModelWeights:
    """All trainable parameters, stored as contiguous float32 arrays.

    Per-layer matrices are stacked along axis 0 (layers, ...). Immutable by
    convention after construction; shareable across threads.
    """

    config: ModelConfig
    e_addr: np.ndarray  # (K, d)
    e_pc: np.ndarray    # (K, d)
    wq: np.ndarray      # (L, d, d)
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    f1: np.ndarray      # (L, d, fd)
    f2: np.ndarray      # (L, fd, d)
    head: np.ndarray    # (d, K)

    def __post_init__(self):
        for name in ("e_addr", "e_pc", "wq", "wk", "wv", "wo", "f1", "f2", "head"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float32))
        self._decays = np.asarray(self.config.decays, dtype=np.float32)
        self.validate_shapes()

    def validate_shapes(self) -> None:
        c = self.config
        k, d, fd, L = c.vocab_size, c.hidden_dim, c.ffn_dim, c.layers
        expect = {
            "e_addr": (k, d), "e_pc": (k, d),
            "wq": (L, d, d), "wk": (L, d, d), "wv": (L, d, d), "wo": (L, d, d),
            "f1": (L, d, fd), "f2": (L, fd, d), "head": (d, k),
        }
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise WeightsShapeError(f"{name}: expected {shape}, got {got}")

    def param_count(self) -> int:
        return self.config.param_count()

    def all_finite(self) -> bool:
        return all(
            np.isfinite(getattr(self, n)).all()
            for n in ("e_addr", "e_pc", "wq", "wk", "wv", "wo", "f1", "f2", "head")
        )

    def arrays(self):
        return (self.e_addr, self.e_pc, self.wq, self.wk, self.wv, self.wo,
                self.f1, self.f2, self.head, self._decays)


def random_weights(config: ModelConfig, seed: int = 0, scale: float = 0.02) -> ModelWeights:
    """Gaussian-initialized weights; used by tests and benchmarks."""
    config.validate()
    rng = np.random.default_rng(seed)
    k, d, fd, L = config.vocab_size, config.hidden_dim, config.ffn_dim, config.layers

    def m(*shape):
        return rng.normal(0.0, scale, shape).astype(np.float32)

    return ModelWeights(
        config=config,
        e_addr=m(k, d), e_pc=m(k, d),
        wq=m(L, d, d), wk=m(L, d, d), wv=m(L, d, d), wo=m(L, d, d),
        f1=m(L, d, fd), f2=m(L, fd, d),
        head=m(d, k),
    )


@dataclass
class RecurrentState:
    """Per-layer d x d state matrices plus the number of tokens consumed.

    Single-owner: one state must not be advanced from two threads. Cloning
    is cheap and is how speculative lookahead avoids corrupting the
    committed state.
    """

    s: np.ndarray  # (L, d, d) float32
    token_count: int = 0

    def clone(self) -> "RecurrentState":
        return RecurrentState(self.s.copy(), self.token_count)


def zero_state(config: ModelConfig) -> RecurrentState:
    return RecurrentState(
        np.zeros((config.layers, config.hidden_dim, config.hidden_dim), dtype=np.float32)
    )


@njit(cache=True)
def _step_kernel(e_addr, e_pc, wq, wk, wv, wo, f1, f2, head, decays, S, a, p, logits):
    """One recurrent token step. Returns 1 if all outputs stayed finite.

    Storage is float32; scalar accumulation happens in float64 (numba
    locals), which mirrors typed-array arithmetic in other runtimes.
    """
    L = wq.shape[0]
    d = e_addr.shape[1]
    fd = f1.shape[2]
    K = head.shape[1]
    x = np.empty(d, np.float32)
    u = np.empty(d, np.float32)
    q = np.empty(d, np.float32)
    k = np.empty(d, np.float32)
    v = np.empty(d, np.float32)
    o = np.empty(d, np.float32)
    h = np.empty(fd, np.float32)
    for i in range(d):
        x[i] = e_addr[a, i] + e_pc[p, i]
    for l in range(L):
        ss = 0.0
        for i in range(d):
            ss += x[i] * x[i]
        r = 1.0 / np.sqrt(ss / d + RMSNORM_EPS)
        for i in range(d):
            u[i] = x[i] * r
        for j in range(d):
            aq = 0.0
            ak = 0.0
            av = 0.0
            for i in range(d):
                aq += u[i] * wq[l, i, j]
                ak += u[i] * wk[l, i, j]
                av += u[i] * wv[l, i, j]
            q[j] = aq
            k[j] = ak
            v[j] = av
        g = decays[l]
        for i in range(d):
            ki = k[i]
            for j in range(d):
                S[l, i, j] = g * S[l, i, j] + ki * v[j]
        for j in range(d):
            acc = 0.0
            for i in range(d):
                acc += q[i] * S[l, i, j]
            o[j] = acc
        for j in range(d):
            acc = 0.0
            for i in range(d):
                acc += o[i] * wo[l, i, j]
            x[j] = x[j] + acc
        ss = 0.0
        for i in range(d):
            ss += x[i] * x[i]
        r = 1.0 / np.sqrt(ss / d + RMSNORM_EPS)
        for j in range(fd):
            acc = 0.0
            for i in range(d):
                acc += (x[i] * r) * f1[l, i, j]
            t = GELU_C * (acc + GELU_A * acc * acc * acc)
            h[j] = 0.5 * acc * (1.0 + np.tanh(t))
        for j in range(d):
            acc = 0.0
            for i in range(fd):
                acc += h[i] * f2[l, i, j]
            x[j] = x[j] + acc
    ok = 1
    for j in range(K):
        acc = 0.0
        for i in range(d):
            acc += x[i] * head[i, j]
        logits[j] = acc
        if not np.isfinite(logits[j]):
            ok = 0
    return ok


@njit(cache=True)
def _stream_kernel(e_addr, e_pc, wq, wk, wv, wo, f1, f2, head, decays, S,
                   addr_toks, pc_toks, out):
    ok = 1
    for t in range(addr_toks.shape[0]):
        ok &= _step_kernel(e_addr, e_pc, wq, wk, wv, wo, f1, f2, head, decays, S,
                           addr_toks[t], pc_toks[t], out[t])
    return ok


def embed_token(weights: ModelWeights, addr_tok: int, pc_tok: int) -> np.ndarray:
    """Element-wise sum of the two embedding rows."""
    k = weights.config.vocab_size
    if not (0 <= addr_tok < k and 0 <= pc_tok < k):
        raise ValueError(f"token out of range [0, {k}): ({addr_tok}, {pc_tok})")
    return weights.e_addr[addr_tok] + weights.e_pc[pc_tok]


def forward_step(weights: ModelWeights, state: RecurrentState,
                 addr_tok: int, pc_tok: int) -> Tuple[np.ndarray, RecurrentState]:
    """Advance one token; returns (logits, state). state is updated in place."""
    k = weights.config.vocab_size
    if not (0 <= addr_tok < k and 0 <= pc_tok < k):
        raise ValueError(f"token out of range [0, {k}): ({addr_tok}, {pc_tok})")
    logits = np.empty(k, dtype=np.float32)
    (e_addr, e_pc, wq, wk, wv, wo, f1, f2, head, decays) = weights.arrays()
    ok = _step_kernel(e_addr, e_pc, wq, wk, wv, wo, f1, f2, head, decays,
                      state.s, addr_tok, pc_tok, logits)
    state.token_count += 1
    if not ok:
        raise NonFiniteError("non-finite logits; weights are corrupt or diverged")
    return logits, state


def stream_logits(weights: ModelWeights, addr_toks: Sequence[int],
                  pc_toks: Sequence[int],
                  state: Optional[RecurrentState] = None) -> np.ndarray:
    """Per-position logits for a whole token stream (single kernel call)."""
    if state is None:
        state = zero_state(weights.config)
    a = np.asarray(addr_toks, dtype=np.int64)
    p = np.asarray(pc_toks, dtype=np.int64)
    if a.shape != p.shape or a.ndim != 1:
        raise ValueError("token streams must be parallel 1-D sequences")
    k = weights.config.vocab_size
    if len(a) and not (0 <= a.min() and a.max() < k and 0 <= p.min() and p.max() < k):
        raise ValueError(f"token out of range [0, {k})")
    out = np.empty((len(a), k), dtype=np.float32)
    ok = _stream_kernel(*weights.arrays(), state.s, a, p, out)
    state.token_count += len(a)
    if not ok:
        raise NonFiniteError("non-finite logits; weights are corrupt or diverged")
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def predict_topn(logits: np.ndarray, n: int) -> List[Tuple[int, float]]:
    """Top-n (ordinal, probability), ties broken toward the lower ordinal."""
    k = len(logits)
    if not 1 <= n <= k:
        raise ValueError(f"n must be in [1, {k}]")
    probs = softmax(logits)
    order = np.lexsort((np.arange(k), -probs))
    return [(int(i), float(probs[i])) for i in order[:n]]


def save_weights(config: ModelConfig, weights: ModelWeights, path) -> None:
    """Write the MXW1 format: 12-byte header, per-layer f32 decays, f32 arrays."""
    config.validate()
    if weights.config != config:
        raise WeightsShapeError("config does not match weights")
    if not weights.all_finite():
        raise NonFiniteError("refusing to save non-finite weights")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, config.layers, config.vocab_size,
                             config.hidden_dim, config.ffn_mult))
        fh.write(np.asarray(config.decays, dtype="<f4").tobytes())
        for arr in _serialization_order(weights):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _serialization_order(w: ModelWeights):
    yield w.e_addr
    yield w.e_pc
    for l in range(w.config.layers):
        yield w.wq[l]
        yield w.wk[l]
        yield w.wv[l]
        yield w.wo[l]
        yield w.f1[l]
        yield w.f2[l]
    yield w.head


def load_weights(path) -> Tuple[ModelConfig, ModelWeights]:
    """Read an MXW1 file, validating magic, version, shape, and finiteness."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadWeightsMagicError(f"not an MXW1 weights file: {path}")
    if len(blob) < HEADER.size:
        raise WeightsShapeError(f"truncated weights header in {path}")
    _, version, layers, k, d, ffn_mult = HEADER.unpack_from(blob)
    if version != VERSION:
        raise UnsupportedWeightsVersionError(f"unsupported weights version {version}")
    if layers < 1 or k < 2 or d < 1 or ffn_mult < 1:
        raise WeightsShapeError(f"bad header dims layers={layers} K={k} d={d}")
    off = HEADER.size
    if len(blob) < off + 4 * layers:
        raise WeightsShapeError(f"truncated decay table in {path}")
    decays = tuple(float(x) for x in np.frombuffer(blob, "<f4", count=layers, offset=off))
    off += 4 * layers
    config = ModelConfig(vocab_size=k, hidden_dim=d, layers=layers,
                         ffn_mult=ffn_mult, decays=decays)
    config.validate()
    expected = off + 4 * config.param_count()
    if len(blob) != expected:
        raise WeightsShapeError(
            f"weight payload mismatch: file has {len(blob)} bytes, header implies {expected}"
        )

    fd = config.ffn_dim

    def take(*shape):
        nonlocal off
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, "<f4", count=n, offset=off).reshape(shape).copy()
        off += 4 * n
        return arr

    e_addr = take(k, d)
    e_pc = take(k, d)
    wq = np.empty((layers, d, d), np.float32)
    wk = np.empty((layers, d, d), np.float32)
    wv = np.empty((layers, d, d), np.float32)
    wo = np.empty((layers, d, d), np.float32)
    f1 = np.empty((layers, d, fd), np.float32)
    f2 = np.empty((layers, fd, d), np.float32)
    for l in range(layers):
        wq[l] = take(d, d)
        wk[l] = take(d, d)
        wv[l] = take(d, d)
        wo[l] = take(d, d)
        f1[l] = take(d, fd)
        f2[l] = take(fd, d)
    head = take(d, k)
    weights = ModelWeights(config, e_addr, e_pc, wq, wk, wv, wo, f1, f2, head)
    if not weights.all_finite():
        raise NonFiniteError(f"non-finite entries in {path}")
    return config, weights


@dataclass
class BenchStats:
    tokens: int
    mean_ns: float
    p99_ns: float
    min_ns: float
    max_ns: float

    def to_dict(self) -> dict:
        return {
            "tokens": self.tokens,
            "mean_ns": self.mean_ns,
            "p99_ns": self.p99_ns,
            "min_ns": self.min_ns,
            "max_ns": self.max_ns,
        }


def bench_inference(weights: ModelWeights, addr_toks: Sequence[int],
                    pc_toks: Sequence[int], warmup: int = 256) -> BenchStats:
    """Per-token latency of forward_step on this core, warm-up excluded."""
    a = np.asarray(addr_toks, dtype=np.int64)
    p = np.asarray(pc_toks, dtype=np.int64)
    if len(a) <= warmup:
        raise ValueError("token stream shorter than warm-up")
    state = zero_state(weights.config)
    for i in range(warmup):
        forward_step(weights, state, int(a[i]), int(p[i]))
    n = len(a) - warmup
    samples = np.empty(n)
    for i in range(n):
        at = int(a[warmup + i])
        pt = int(p[warmup + i])
        t0 = time.perf_counter_ns()
        forward_step(weights, state, at, pt)
        samples[i] = time.perf_counter_ns() - t0
    return BenchStats(
        tokens=n,
        mean_ns=float(samples.mean()),
        p99_ns=float(np.percentile(samples, 99)),
        min_ns=float(samples.min()),
        max_ns=float(samples.max()),
    )


def bench_kernel_only(weights: ModelWeights, tokens: int, seed: int = 0) -> float:
    """Mean ns/token of the raw kernel over a jitted stream loop.

    Excludes Python call overhead; used for scaling comparisons where the
    per-call dispatch cost would swamp the O(d^2) arithmetic.
    """
    rng = np.random.default_rng(seed)
    k = weights.config.vocab_size
    a = rng.integers(0, k, tokens, dtype=np.int64)
    p = rng.integers(0, k, tokens, dtype=np.int64)
    out = np.empty((tokens, k), dtype=np.float32)
    state = zero_state(weights.config)
    _stream_kernel(*weights.arrays(), state.s, a[:16], p[:16], out[:16])  # compile+warm
    state = zero_state(weights.config)
    t0 = time.perf_counter_ns()
    _stream_kernel(*weights.arrays(), state.s, a, p, out)
    return (time.perf_counter_ns() - t0) / tokens
