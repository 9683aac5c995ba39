"""Page-access traces: binary/CSV formats and synthetic workload generators.

A trace is an ordered stream of (vpn, pc) events. FullAccess traces feed the
simulator; MissLog traces (recorded at some local-memory capacity) feed the
offline trainer. The binary "MXT1" format is the format of record; CSV is a
debugging convenience.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

MAGIC = b"MXT1"
VERSION = 1
HEADER = struct.Struct("<4sBBBBfI")  # magic, version, kind, page_size_bits, rsvd, capacity, rsvd
HEADER_SIZE = HEADER.size  # 16
RECORD_SIZE = 16  # u64 vpn + u64 pc
VPN_LIMIT = 1 << 52  # 64-bit address space, 4 KB pages

SEQ_PC = 0x401000
STRIDE_PC = 0x402000
LINKED_PC = 0x403000
TREE_ROOT_PC = 0x404000
TREE_LEFT_PC = 0x404100
TREE_RIGHT_PC = 0x404200
GRAPH_PC_BASE = 0x405000


class TraceError(ValueError):
    """Base class for trace format problems."""


class BadMagicError(TraceError):
    pass


class UnsupportedVersionError(TraceError):
    pass


class TruncatedTraceError(TraceError):
    pass


class TraceKind(enum.Enum):
    FULL_ACCESS = 0
    MISS_LOG = 1


class AccessEvent(NamedTuple):
    vpn: int
    pc: int


class Workload(enum.Enum):
    SEQUENTIAL = "seq"
    STRIDED = "stride"
    LINKED_TRAVERSAL = "linked"
    TREE_DESCENT = "tree"
    GRAPH_WALK = "graph"


@dataclass(eq=False)
class Trace:
    """Ordered event stream plus its collection metadata.

    vpns/pcs are parallel uint64 arrays; capacity_fraction is only meaningful
    for MISS_LOG traces (the local-memory fraction the log was collected at).
    """

    vpns: np.ndarray
    pcs: np.ndarray
    kind: TraceKind = TraceKind.FULL_ACCESS
    page_size_bits: int = 12
    capacity_fraction: float = 0.0

    def __post_init__(self):
        self.vpns = np.ascontiguousarray(self.vpns, dtype=np.uint64)
        self.pcs = np.ascontiguousarray(self.pcs, dtype=np.uint64)
        if self.vpns.shape != self.pcs.shape or self.vpns.ndim != 1:
            raise TraceError("vpns and pcs must be parallel 1-D arrays")

    def __len__(self) -> int:
        return len(self.vpns)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.page_size_bits == other.page_size_bits
            and np.float32(self.capacity_fraction) == np.float32(other.capacity_fraction)
            and np.array_equal(self.vpns, other.vpns)
            and np.array_equal(self.pcs, other.pcs)
        )

    def events(self):
        """Iterate events as AccessEvent tuples (plain ints)."""
        for v, p in zip(self.vpns.tolist(), self.pcs.tolist()):
            yield AccessEvent(v, p)

    def footprint_pages(self) -> int:
        return int(np.unique(self.vpns).size)

    def validate(self) -> None:
        if len(self.vpns) and int(self.vpns.max()) >= VPN_LIMIT:
            raise TraceError("vpn out of range (must be < 2^52)")
        if not 1 <= self.page_size_bits <= 30:
            raise TraceError(f"bad page_size_bits {self.page_size_bits}")
        if self.kind is TraceKind.MISS_LOG:
            if not 0.0 < self.capacity_fraction <= 1.0:
                raise TraceError("MissLog trace needs capacity_fraction in (0, 1]")
        elif self.capacity_fraction != 0.0:
            raise TraceError("FullAccess trace must carry capacity_fraction 0.0")


def save_trace(trace: Trace, path) -> None:
    """Write the binary MXT1 format (little-endian, 16-byte header + records)."""
    trace.validate()
    header = HEADER.pack(
        MAGIC,
        VERSION,
        trace.kind.value,
        trace.page_size_bits,
        0,
        np.float32(trace.capacity_fraction),
        0,
    )
    records = np.empty((len(trace), 2), dtype="<u8")
    records[:, 0] = trace.vpns
    records[:, 1] = trace.pcs
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())


def load_trace(path) -> Trace:
    """Read an MXT1 file; raises distinct errors for magic/version/truncation."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < HEADER_SIZE:
        if blob[:4] != MAGIC:
            raise BadMagicError(f"not an MXT1 trace: {path}")
        raise TruncatedTraceError(f"truncated header in {path}")
    magic, version, kind, psb, _r0, capacity, _r1 = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"not an MXT1 trace: {path}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported trace version {version}")
    body = len(blob) - HEADER_SIZE
    if body % RECORD_SIZE:
        raise TruncatedTraceError(f"truncated record in {path} ({body} body bytes)")
    try:
        tkind = TraceKind(kind)
    except ValueError:
        raise TraceError(f"unknown trace kind byte {kind}") from None
    records = np.frombuffer(blob, dtype="<u8", offset=HEADER_SIZE).reshape(-1, 2)
    trace = Trace(
        vpns=records[:, 0].copy(),
        pcs=records[:, 1].copy(),
        kind=tkind,
        page_size_bits=psb,
        capacity_fraction=float(np.float32(capacity)),
    )
    trace.validate()
    return trace


def save_trace_csv(trace: Trace, path) -> None:
    """Debug CSV: header 'vpn,pc', hexadecimal values."""
    with open(path, "w") as fh:
        fh.write("vpn,pc\n")
        for v, p in zip(trace.vpns.tolist(), trace.pcs.tolist()):
            fh.write(f"{v:x},{p:x}\n")


def load_trace_csv(path, kind: TraceKind = TraceKind.FULL_ACCESS,
                   page_size_bits: int = 12, capacity_fraction: float = 0.0) -> Trace:
    vpns, pcs = [], []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "vpn,pc":
            raise TraceError(f"bad CSV header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                v, p = line.split(",")
                vpns.append(int(v, 16))
                pcs.append(int(p, 16))
            except ValueError:
                raise TraceError(f"bad CSV record at line {lineno}") from None
    trace = Trace(np.array(vpns, dtype=np.uint64), np.array(pcs, dtype=np.uint64),
                  kind=kind, page_size_bits=page_size_bits,
                  capacity_fraction=capacity_fraction)
    trace.validate()
    return trace


@dataclass
class GenParams:
    """Parameters for the synthetic workload generators.

    footprint_pages is the number of distinct pages touched per iteration;
    walk_steps (GraphWalk only) is the visit count per iteration, defaulting
    to footprint_pages. base_vpn None picks a deterministic seeded base.
    """

    footprint_pages: int
    iterations: int
    stride: int = 1
    out_degree: int = 8
    walk_steps: Optional[int] = None
    base_vpn: Optional[int] = None

    def validate(self, workload: Workload) -> None:
        if self.footprint_pages <= 0:
            raise ValueError("footprint_pages must be positive")
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if workload is Workload.STRIDED and self.stride < 1:
            raise ValueError("stride must be >= 1")
        if workload is Workload.GRAPH_WALK:
            if not 1 <= self.out_degree <= 8:
                raise ValueError("out_degree must be in [1, 8]")
            if self.walk_steps is not None and self.walk_steps <= 0:
                raise ValueError("walk_steps must be positive")


def _pick_base(rng: np.random.Generator, params: GenParams, span: int) -> int:
    if params.base_vpn is not None:
        base = params.base_vpn
    else:
        base = int(rng.integers(1 << 20, 1 << 32))
    if base + span >= VPN_LIMIT:
        raise ValueError("workload footprint exceeds the 2^52 vpn limit")
    return base


def gen_synthetic(workload: Workload, params: GenParams, seed: int) -> Trace:
    """Generate a deterministic FullAccess trace for one synthetic workload.

    One iteration block is built first and then tiled, so the per-iteration
    vpn sequence is identical across iterations (and independent of the
    iteration count for a fixed seed). Pointer-style workloads lay their
    nodes out over a seeded random permutation of a contiguous page block:
    same visit semantics every run, arbitrary layout per seed.
    """
    params.validate(workload)
    rng = np.random.default_rng(seed)
    n = params.footprint_pages

    if workload is Workload.SEQUENTIAL:
        base = _pick_base(rng, params, n)
        block = base + np.arange(n, dtype=np.uint64)
        pcs_block = np.full(n, SEQ_PC, dtype=np.uint64)
    elif workload is Workload.STRIDED:
        base = _pick_base(rng, params, n * params.stride)
        block = base + np.arange(n, dtype=np.uint64) * np.uint64(params.stride)
        pcs_block = np.full(n, STRIDE_PC, dtype=np.uint64)
    elif workload is Workload.LINKED_TRAVERSAL:
        base = _pick_base(rng, params, n)
        layout = rng.permutation(n).astype(np.uint64)
        block = base + layout
        pcs_block = np.full(n, LINKED_PC, dtype=np.uint64)
    elif workload is Workload.TREE_DESCENT:
        base = _pick_base(rng, params, n)
        layout = base + rng.permutation(n).astype(np.uint64)
        visits, sites = _tree_descents(n)
        block = layout[visits]
        pcs_block = sites
    elif workload is Workload.GRAPH_WALK:
        base = _pick_base(rng, params, n)
        layout = base + rng.permutation(n).astype(np.uint64)
        steps = params.walk_steps if params.walk_steps is not None else n
        visits, sites = _graph_walk(n, params.out_degree, steps, rng)
        block = layout[visits]
        pcs_block = sites
    else:  # pragma: no cover
        raise ValueError(f"unknown workload {workload}")

    vpns = np.tile(block, params.iterations)
    pcs = np.tile(pcs_block, params.iterations)
    trace = Trace(vpns, pcs, kind=TraceKind.FULL_ACCESS)
    trace.validate()
    return trace


def _tree_descents(n: int):
    """Root-to-leaf descents over a heap-ordered binary tree of n nodes.

    One iteration descends to every leaf in left-to-right order; the pc
    records which branch reached each node (root / left child / right child).
    """
    visits, sites = [], []
    leaves = [i for i in range(n) if 2 * i + 1 >= n]
    for leaf in leaves:
        path = []
        node = leaf
        while node > 0:
            path.append(node)
            node = (node - 1) // 2
        path.append(0)
        path.reverse()
        for node in path:
            visits.append(node)
            if node == 0:
                sites.append(TREE_ROOT_PC)
            elif node % 2 == 1:
                sites.append(TREE_LEFT_PC)
            else:
                sites.append(TREE_RIGHT_PC)
    return np.array(visits, dtype=np.int64), np.array(sites, dtype=np.uint64)


def _graph_walk(n: int, out_degree: int, steps: int, rng: np.random.Generator):
    """Seeded walk over a sparse random graph (per-node fanout <= out_degree).

    The walk itself is fixed at generation time, so every iteration repeats
    the same node-visit order; the pc encodes which outgoing edge was taken.
    Node 0 (the walk start) is a neighbor of every node, so the wraparound
    transition between iterations is itself a graph edge and per-page fanout
    stays bounded by out_degree even across iteration boundaries.
    """
    succs = []
    for i in range(n):
        if n == 1:
            succs.append(np.array([0]))
            continue
        deg = int(rng.integers(1, out_degree + 1))
        others = [j for j in range(n) if j != i and j != 0]
        if i == 0:
            picks = rng.choice(len(others), size=min(deg, len(others)), replace=False)
            succ = sorted(others[j] for j in picks)
        else:
            picks = rng.choice(len(others), size=min(deg - 1, len(others)), replace=False)
            succ = [0] + sorted(others[j] for j in picks)
        succs.append(np.array(succ))
    visits, sites = [], []
    node = 0
    for _ in range(steps):
        visits.append(node)
        edge = int(rng.integers(len(succs[node])))
        sites.append(GRAPH_PC_BASE + 16 * edge)
        node = int(succs[node][edge])
    return np.array(visits, dtype=np.int64), np.array(sites, dtype=np.uint64)
