"""Command-line entry point.

Subcommands: gen, misslog, run, sweep, bench, inspect-weights,
dump-futuremaps. Option precedence is flags > config file (TOML, --config)
> built-in defaults. Artifacts are written atomically (temp file + rename).

Exit codes: 0 success, 1 usage error, 2 I/O or artifact-format error,
3 validation error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from typing import List, Optional

import numpy as np

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import futuremap, model, simulator, trace
from .predictor import PredictorConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_VALIDATION = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we want exit code 1
        raise UsageError(message)


def _atomic_write(path: str, writer) -> None:
    """writer(tmp_path) + atomic rename into place."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".memix-tmp-")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        _atomic_write(out, lambda tmp: open(tmp, "w").write(text))
    else:
        sys.stdout.write(text)


class Options:
    """Flag > config-file > default resolution for one command."""

    def __init__(self, args: argparse.Namespace, defaults: dict):
        self.args = vars(args)
        self.defaults = defaults
        self.file_cfg = {}
        cfg_path = self.args.get("config")
        if cfg_path:
            with open(cfg_path, "rb") as fh:
                self.file_cfg = tomllib.load(fh)

    def get(self, key):
        value = self.args.get(key)
        if value is not None:
            return value
        if key in self.file_cfg:
            return self.file_cfg[key]
        return self.defaults.get(key)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="TOML config file (flags take precedence)")


def _build_parser() -> _Parser:
    parser = _Parser(prog="memix", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen", help="generate a synthetic FullAccess trace")
    _add_common(p)
    p.add_argument("--workload", choices=[w.value for w in trace.Workload])
    p.add_argument("--pages", type=int, help="footprint in pages")
    p.add_argument("--iters", type=int, help="iteration count")
    p.add_argument("--stride", type=int, help="stride in pages (stride workload)")
    p.add_argument("--degree", type=int, help="max out-degree (graph workload)")
    p.add_argument("--steps", type=int, help="walk steps per iteration (graph workload)")
    p.add_argument("--base-vpn", type=int, dest="base_vpn")
    p.add_argument("--seed", type=int)
    p.add_argument("--csv", action="store_const", const=True, help="emit CSV instead of MXT1")
    p.add_argument("--out", required=True)

    p = sub.add_parser("misslog", help="record the policy=none miss stream at a capacity")
    _add_common(p)
    p.add_argument("--trace", dest="trace_path")
    p.add_argument("--capacity", type=float)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="simulate one trace/policy/capacity cell")
    _add_common(p)
    p.add_argument("--trace", dest="trace_path")
    p.add_argument("--policy", choices=[pl.value for pl in simulator.Policy])
    p.add_argument("--capacity", type=float)
    p.add_argument("--weights")
    p.add_argument("--t-local", type=int, dest="t_local")
    p.add_argument("--t-far", type=int, dest="t_far")
    p.add_argument("--t-inf", type=int, dest="t_inf")
    p.add_argument("--max-inflight", type=int, dest="max_inflight")
    p.add_argument("--top-n", type=int, dest="top_n")
    p.add_argument("--min-prob", type=float, dest="min_prob")
    p.add_argument("--depth", type=int)
    p.add_argument("--history", type=int)
    p.add_argument("--out")

    p = sub.add_parser("sweep", help="cross product of capacities x policies, CSV out")
    _add_common(p)
    p.add_argument("--trace", dest="trace_path")
    p.add_argument("--capacities", help="comma-separated fractions, e.g. 0.3,0.5,0.7,0.9")
    p.add_argument("--policies", help="comma-separated policy names")
    p.add_argument("--weights")
    p.add_argument("--t-local", type=int, dest="t_local")
    p.add_argument("--t-far", type=int, dest="t_far")
    p.add_argument("--t-inf", type=int, dest="t_inf")
    p.add_argument("--max-inflight", type=int, dest="max_inflight")
    p.add_argument("--out")

    p = sub.add_parser("bench", help="per-token inference latency")
    _add_common(p)
    p.add_argument("--weights")
    p.add_argument("--seed", type=int, help="random-weights seed when --weights absent")
    p.add_argument("--tokens", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--out")

    p = sub.add_parser("inspect-weights", help="summarize an MXW1 weights file")
    _add_common(p)
    p.add_argument("--weights")
    p.add_argument("--out")

    p = sub.add_parser("dump-futuremaps", help="replay a trace's transitions, dump store JSON")
    _add_common(p)
    p.add_argument("--trace", dest="trace_path")
    p.add_argument("--k", type=int)
    p.add_argument("--map-capacity", type=int, dest="map_capacity")
    p.add_argument("--out")

    return parser


def _require(opts: Options, *keys):
    for key in keys:
        if opts.get(key) is None:
            raise UsageError(f"missing required option --{key.replace('_', '-')}")


def _cmd_gen(opts: Options) -> int:
    _require(opts, "workload", "pages", "iters")
    params = trace.GenParams(
        footprint_pages=int(opts.get("pages")),
        iterations=int(opts.get("iters")),
        stride=int(opts.get("stride")),
        out_degree=int(opts.get("degree")),
        walk_steps=opts.get("steps"),
        base_vpn=opts.get("base_vpn"),
    )
    workload = trace.Workload(opts.get("workload"))
    t = trace.gen_synthetic(workload, params, int(opts.get("seed")))
    out = opts.get("out")
    if opts.get("csv"):
        _atomic_write(out, lambda tmp: trace.save_trace_csv(t, tmp))
    else:
        _atomic_write(out, lambda tmp: trace.save_trace(t, tmp))
    print(f"wrote {len(t)} events to {out}", file=sys.stderr)
    return EXIT_OK


def _cmd_misslog(opts: Options) -> int:
    _require(opts, "trace_path", "capacity")
    t = trace.load_trace(opts.get("trace_path"))
    capacity = float(opts.get("capacity"))
    log = simulator.collect_misslog(t, capacity)
    out = opts.get("out")
    _atomic_write(out, lambda tmp: trace.save_trace(log, tmp))
    print(f"wrote {len(log)} misses to {out}", file=sys.stderr)
    return EXIT_OK


def _sim_config(opts: Options, policy: simulator.Policy, capacity: float) -> simulator.SimConfig:
    pconfig = None
    if policy is simulator.Policy.MEMIX and any(
        opts.get(k) is not None for k in ("top_n", "min_prob", "depth", "history")
    ):
        pconfig = PredictorConfig(
            top_n=int(opts.get("top_n") or 2),
            min_prob=float(opts.get("min_prob") if opts.get("min_prob") is not None else 0.1),
            depth=int(opts.get("depth") or 1),
            history_len=int(opts.get("history") or 8),
        )
    return simulator.SimConfig(
        capacity_fraction=capacity,
        t_local=int(opts.get("t_local")),
        t_far=int(opts.get("t_far")),
        t_inf=int(opts.get("t_inf")),
        max_inflight_prefetch=int(opts.get("max_inflight")),
        policy=policy,
        predictor=pconfig,
    )


def _load_weights_if(opts: Options, needed: bool):
    path = opts.get("weights")
    if needed and not path:
        raise ValueError("policy=memix requires --weights")
    if path:
        _, weights = model.load_weights(path)
        return weights
    return None


def _cmd_run(opts: Options) -> int:
    _require(opts, "trace_path", "policy", "capacity")
    t = trace.load_trace(opts.get("trace_path"))
    policy = simulator.Policy(opts.get("policy"))
    weights = _load_weights_if(opts, needed=policy is simulator.Policy.MEMIX)
    config = _sim_config(opts, policy, float(opts.get("capacity")))
    report = simulator.run(t, config, weights)
    _emit(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", opts.get("out"))
    return EXIT_OK


def _cmd_sweep(opts: Options) -> int:
    _require(opts, "trace_path", "capacities", "policies")
    t = trace.load_trace(opts.get("trace_path"))
    caps = [float(c) for c in str(opts.get("capacities")).split(",") if c]
    policies = [simulator.Policy(p) for p in str(opts.get("policies")).split(",") if p]
    weights = _load_weights_if(opts, needed=simulator.Policy.MEMIX in policies)
    base = _sim_config(opts, simulator.Policy.NONE, 1.0)
    rows = simulator.sweep(t, caps, policies, weights, base_config=base)
    _emit(simulator.sweep_rows_to_csv(rows), opts.get("out"))
    return EXIT_OK


def _cmd_bench(opts: Options) -> int:
    path = opts.get("weights")
    if path:
        _, weights = model.load_weights(path)
    else:
        weights = model.random_weights(model.ModelConfig(), seed=int(opts.get("seed")))
    tokens = int(opts.get("tokens"))
    warmup = int(opts.get("warmup"))
    rng = np.random.default_rng(int(opts.get("seed")))
    k = weights.config.vocab_size
    addr = rng.integers(0, k, tokens + warmup)
    pc = rng.integers(0, k, tokens + warmup)
    stats = model.bench_inference(weights, addr, pc, warmup=warmup)
    _emit(json.dumps(stats.to_dict(), sort_keys=True, indent=2) + "\n", opts.get("out"))
    return EXIT_OK


def _cmd_inspect_weights(opts: Options) -> int:
    _require(opts, "weights")
    config, weights = model.load_weights(opts.get("weights"))
    info = {
        "vocab_size": config.vocab_size,
        "hidden_dim": config.hidden_dim,
        "layers": config.layers,
        "ffn_mult": config.ffn_mult,
        "decays": list(config.decays),
        "param_count": config.param_count(),
        "finite": bool(weights.all_finite()),
        "norms": {
            name: float(np.linalg.norm(getattr(weights, name)))
            for name in ("e_addr", "e_pc", "wq", "wk", "wv", "wo", "f1", "f2", "head")
        },
    }
    _emit(json.dumps(info, sort_keys=True, indent=2) + "\n", opts.get("out"))
    return EXIT_OK


def _cmd_dump_futuremaps(opts: Options) -> int:
    _require(opts, "trace_path")
    t = trace.load_trace(opts.get("trace_path"))
    store = futuremap.FutureMapStore(k=int(opts.get("k")),
                                     capacity=int(opts.get("map_capacity")))
    vpns = t.vpns.tolist()
    for prev, nxt in zip(vpns, vpns[1:]):
        store.observe_transition(prev, nxt)
    _emit(json.dumps(store.to_json_obj()) + "\n", opts.get("out"))
    return EXIT_OK


_DEFAULTS = {
    "gen": {"stride": 1, "degree": 8, "steps": None, "base_vpn": None, "seed": 0,
            "csv": False},
    "misslog": {},
    "run": {"t_local": 100, "t_far": 6000, "t_inf": 1000, "max_inflight": 8},
    "sweep": {"t_local": 100, "t_far": 6000, "t_inf": 1000, "max_inflight": 8},
    "bench": {"tokens": 10000, "warmup": 1000, "seed": 0},
    "inspect-weights": {},
    "dump-futuremaps": {"k": 64, "map_capacity": futuremap.DEFAULT_CAPACITY},
}

_COMMANDS = {
    "gen": _cmd_gen,
    "misslog": _cmd_misslog,
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "bench": _cmd_bench,
    "inspect-weights": _cmd_inspect_weights,
    "dump-futuremaps": _cmd_dump_futuremaps,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("missing command (try --help)")
        opts = Options(args, _DEFAULTS[args.command])
        return _COMMANDS[args.command](opts)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, trace.TraceError, model.WeightsError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ArithmeticError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
