"""Throughput and fairness metrics, baseline allocators, the method comparison
harness and inference latency timing."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from hlwnet.assoc import Association, mptcp_association, sss_association
from hlwnet.channel import channel_state
from hlwnet.env import make_rng
from hlwnet.models import encode_features, fold, predict_rows, project_feasible
from hlwnet.pf_solver import equal_split, solve_pf, utility

log = logging.getLogger(__name__)

METHODS = ("optimizer", "tcnn", "dnn", "heuristic", "sss")
LEARNED = ("tcnn", "dnn")
CSV_COLUMNS = ("method", "n_ue", "n_f", "seed", "throughput_mbps", "jain", "utility_nats",
               "latency_us_median", "latency_us_p95")


def _chi(assoc):
    return np.asarray(getattr(assoc, "chi", assoc), dtype=bool)


def ue_rates(rho, capacity, assoc=None) -> np.ndarray:
    """Per-UE throughput R_j = sum over serving APs of rho * C."""
    rho = np.asarray(rho, dtype=np.float64)
    cap = np.asarray(capacity, dtype=np.float64)
    if assoc is not None:
        rho = np.where(_chi(assoc), rho, 0.0)
    return np.einsum("ij,ij->j", rho, cap)


def ue_throughput(rho, capacity, assoc, j: int) -> float:
    chi = _chi(assoc)
    serving = np.flatnonzero(chi[:, j])
    return float(np.sum(np.asarray(rho)[serving, j] * np.asarray(capacity)[serving, j]))


def network_throughput(rho, capacity, assoc=None) -> float:
    return float(ue_rates(rho, capacity, assoc).sum())


def jain_index(rates) -> float:
    x = np.asarray(rates, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("need at least one rate")
    if np.any(x < 0):
        raise ValueError("rates must be non-negative")
    sq = float(np.dot(x, x))
    if sq == 0.0:
        raise ValueError("all rates are zero")
    return float(x.sum() ** 2 / (x.size * sq))


def heuristic_equal_share(assoc) -> np.ndarray:
    """Proportional fairness among subflows rather than UEs.

    Maximising sum over subflows of log(rho_ij * C_ij) separates per AP into
    sum_j log rho_ij + const under sum_j rho_ij <= 1, whose maximiser is the
    equal share 1 / |U_i| regardless of the capacities.
    """
    return equal_split(_chi(assoc))


def subflow_utility(rho, capacity, assoc) -> float:
    chi = _chi(assoc)
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(np.asarray(rho)[chi] * np.asarray(capacity)[chi])))


def sss_tcp_allocate(channel, topology=None, by: str = "sinr") -> tuple[Association, np.ndarray]:
    """Single best AP per UE; with one link each, PF splits every AP equally."""
    assoc = sss_association(channel, by=by)
    return assoc, equal_split(assoc.chi)


# ---------------------------------------------------------------------------
# drops and per-method allocation
# ---------------------------------------------------------------------------

def random_drop(topology, n_ue: int, rng: np.random.Generator, ue_height: float = 0.5):
    x = rng.uniform(0.0, topology.room_length, n_ue)
    y = rng.uniform(0.0, topology.room_width, n_ue)
    return np.column_stack([x, y, np.full(n_ue, ue_height)])


@dataclass
class DropResult:
    method: str
    rates: np.ndarray
    throughput: float
    jain: float
    utility: float
    rho: np.ndarray


def allocate(method: str, ch, assoc, models: dict | None = None, norm_max_db: float = 60.0):
    """Allocation matrix of one method on one drop (MPTCP association given)."""
    if method == "optimizer":
        return assoc, solve_pf(ch.capacity, assoc).allocation
    if method == "heuristic":
        return assoc, heuristic_equal_share(assoc)
    if method == "sss":
        return sss_tcp_allocate(ch)
    if method in LEARNED:
        model, params = models[method]
        feats = encode_features(ch.sinr, assoc.chi, norm_max_db)
        return assoc, project_feasible(predict_rows(model, params, feats), assoc)
    raise ValueError(f"unknown method {method!r}")


def evaluate_drop(topology, positions, n_f: int, methods, models: dict | None = None,
                  norm_max_db: float = 60.0) -> dict[str, DropResult]:
    ch = channel_state(topology, positions)
    mp = mptcp_association(ch, topology, n_f)
    out = {}
    for m in methods:
        assoc, rho = allocate(m, ch, mp, models, norm_max_db)
        rates = ue_rates(rho, ch.capacity, assoc)
        out[m] = DropResult(m, rates, float(rates.sum()), jain_index(rates),
                            utility(ch.capacity, rho), rho)
    return out


# ---------------------------------------------------------------------------
# latency
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Latency:
    median_us: float
    p95_us: float
    samples: int


def time_inference(fn, *args, warmup: int = 100, repetitions: int = 1000) -> Latency:
    """Median and 95th percentile wall time of ``fn(*args)`` in microseconds."""
    for _ in range(warmup):
        fn(*args)
    t = np.empty(repetitions)
    clock = time.perf_counter_ns
    for r in range(repetitions):
        t0 = clock()
        fn(*args)
        t[r] = clock() - t0
    t /= 1e3
    return Latency(float(np.median(t)), float(np.percentile(t, 95)), repetitions)


def inference_callable(method: str, topology, positions, n_f: int, models=None,
                       norm_max_db: float = 60.0):
    """A zero-argument callable performing one inference, plus a description.

    The user-centric model is timed per target UE (its deployment unit);
    every other method is timed per full network.
    """
    ch = channel_state(topology, positions)
    mp = mptcp_association(ch, topology, n_f)
    if method == "optimizer":
        return lambda: solve_pf(ch.capacity, mp), "network"
    if method == "heuristic":
        return lambda: heuristic_equal_share(mp), "network"
    if method == "sss":
        return lambda: sss_tcp_allocate(ch), "network"
    model, params = models[method]
    feats = np.asarray(encode_features(ch.sinr, mp.chi, norm_max_db))
    folded = fold(model, params)
    x_c = feats.reshape(1, -1)
    if method == "tcnn":
        x_k = feats[:1]
        return lambda: folded(x_k, x_c), "target"
    return lambda: folded(x_c), "network"


# ---------------------------------------------------------------------------
# harness
# ---------------------------------------------------------------------------

@dataclass
class MetricsRow:
    method: str
    n_ue: int
    n_f: int
    seed: int
    throughput_mbps: float
    jain: float
    utility_nats: float
    latency_us_median: float = math.nan
    latency_us_p95: float = math.nan
    throughput_std: float = 0.0
    jain_std: float = 0.0
    n_drops: int = 0
    per_drop: list = field(default_factory=list, repr=False)


def evaluate_methods(topology, methods, n_ue_list, n_f_list, episodes: int, seeds,
                     model_loader=None, ue_height: float = 0.5, norm_max_db: float = 60.0,
                     latency: bool = False, warmup: int = 100,
                     repetitions: int = 1000) -> list[MetricsRow]:
    """Compare allocation methods over random drops.

    For each (n_ue, n_f, seed) the drops come from the same seeded stream, so
    every method sees identical channel states. ``model_loader(kind, n_ue,
    n_f)`` returns (model, params) or None; learned methods without a
    checkpoint are skipped with a warning.
    """
    rows = []
    for n_ue in n_ue_list:
        for n_f in n_f_list:
            models = {}
            active = []
            for m in methods:
                if m not in METHODS:
                    raise ValueError(f"unknown method {m!r}")
                if m in LEARNED:
                    got = model_loader(m, n_ue, n_f) if model_loader else None
                    if got is None:
                        log.warning("no %s checkpoint for n_ue=%d n_f=%d; skipping", m, n_ue, n_f)
                        continue
                    models[m] = got
                active.append(m)
            for seed in seeds:
                rng = make_rng(seed)
                drops = [random_drop(topology, n_ue, rng, ue_height) for _ in range(episodes)]
                results = [evaluate_drop(topology, p, n_f, active, models, norm_max_db)
                           for p in drops]
                for m in active:
                    tp = np.array([r[m].throughput for r in results]) / 1e6
                    jn = np.array([r[m].jain for r in results])
                    ut = np.array([r[m].utility for r in results])
                    row = MetricsRow(m, n_ue, n_f, int(seed), float(tp.mean()), float(jn.mean()),
                                     float(ut.mean()), throughput_std=float(tp.std()),
                                     jain_std=float(jn.std()), n_drops=len(results),
                                     per_drop=[r[m] for r in results])
                    if latency:
                        fn, _ = inference_callable(m, topology, drops[0], n_f, models,
                                                   norm_max_db)
                        reps = repetitions if m != "optimizer" else max(1, repetitions // 20)
                        lat = time_inference(fn, warmup=min(warmup, reps), repetitions=reps)
                        row.latency_us_median, row.latency_us_p95 = lat.median_us, lat.p95_us
                    rows.append(row)
    return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_metrics_csv(path, rows, config_digest: str = "", include_latency: bool = True) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if config_digest:
            fh.write(f"# config_digest={config_digest}\n")
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for r in rows:
            vals = [getattr(r, c) for c in CSV_COLUMNS]
            if not include_latency:
                vals[-2:] = [math.nan, math.nan]
            fh.write(",".join(_fmt(v) for v in vals) + "\n")
