"""memix: trace-driven far-memory simulator and learned-prefetching toolkit."""

from .futuremap import FutureMap, FutureMapStore
from .model import (
    BenchStats,
    ModelConfig,
    ModelWeights,
    RecurrentState,
    bench_inference,
    default_decays,
    embed_token,
    forward_step,
    load_weights,
    predict_topn,
    random_weights,
    save_weights,
    stream_logits,
    zero_state,
)
from .predictor import Predictor, PredictorConfig, PredictorState
from .simulator import Policy, SimConfig, SimReport, collect_misslog, run, sweep
from .trace import (
    AccessEvent,
    GenParams,
    Trace,
    TraceKind,
    Workload,
    gen_synthetic,
    load_trace,
    load_trace_csv,
    save_trace,
    save_trace_csv,
)

__version__ = "0.1.0"
