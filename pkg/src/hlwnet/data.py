"""Labelled dataset collection, the binary dataset file, splitting and training.

Dataset file layout (all little-endian):

    offset 0   8 bytes   magic b"HLWNDS\\x00\\x01"
    offset 8   u32       header length H
    offset 12  H bytes   UTF-8 JSON header (sorted keys)
    then n_samples fixed-width records of RECORD_DTYPE(n_u, n_a, n_f):
        u32 time_index, u32 target, u32 flags, u32 reserved,
        f64 positions[n_u, 3], f64 features[n_u, n_a],
        f64 labels[n_u, n_f], i32 indices[n_u, n_f]

Only the target row of ``labels``/``indices`` feeds the user-centric model;
the remaining rows are kept for the network-centric model and for audits.
"""
from __future__ import annotations

import copy
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from hlwnet import nn_core as nn
from hlwnet.assoc import mptcp_association
from hlwnet.channel import channel_state
from hlwnet.env import MobilityConfig, NetworkTopology, trajectory
from hlwnet.models import NORM_MAX_DB, build_model, encode_features
from hlwnet.pf_solver import solve_pf

log = logging.getLogger(__name__)

MAGIC = b"HLWNDS\x00\x01"
FORMAT_VERSION = 1
FLAG_NOT_CONVERGED = 1
FLAG_EXCLUDED_UE = 2
MAX_FLAGGED_FRACTION = 0.01


class DatasetError(ValueError):
    """Malformed, truncated or incompatible dataset file."""


class CollectionAborted(RuntimeError):
    """Too many solver failures during collection."""


class TrainingError(RuntimeError):
    """Training diverged."""


def record_dtype(n_u: int, n_a: int, n_f: int) -> np.dtype:
    return np.dtype([
        ("time_index", "<u4"), ("target", "<u4"), ("flags", "<u4"), ("reserved", "<u4"),
        ("positions", "<f8", (n_u, 3)),
        ("features", "<f8", (n_u, n_a)),
        ("labels", "<f8", (n_u, n_f)),
        ("indices", "<i4", (n_u, n_f)),
    ])


@dataclass(frozen=True)
class DatasetHeader:
    n_a: int
    n_u: int
    n_f: int
    config_digest: str
    seed: int
    norm_max_db: float
    n_samples: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["format_version"] = FORMAT_VERSION
        return d


@dataclass(frozen=True)
class Sample:
    time_index: int
    target_ue: int
    condition_features: np.ndarray
    label: np.ndarray
    subflow_ap_indices: np.ndarray


@dataclass
class Dataset:
    header: DatasetHeader
    records: np.ndarray  # structured array of record_dtype

    def __len__(self) -> int:
        return self.records.shape[0]

    def __getitem__(self, i: int) -> Sample:
        r = self.records[i]
        k = int(r["target"])
        return Sample(int(r["time_index"]), k, r["features"].reshape(-1).copy(),
                      r["labels"][k].copy(), r["indices"][k].copy())

    @property
    def usable(self) -> np.ndarray:
        """Mask of samples whose label came from a converged solve."""
        return (self.records["flags"] & FLAG_NOT_CONVERGED) == 0

    def subset(self, idx) -> "Dataset":
        rec = self.records[np.asarray(idx, dtype=np.int64)].copy()
        h = self.header
        return Dataset(DatasetHeader(h.n_a, h.n_u, h.n_f, h.config_digest, h.seed,
                                     h.norm_max_db, rec.shape[0]), rec)


# ---------------------------------------------------------------------------
# collection
# ---------------------------------------------------------------------------

def collect_dataset(topology: NetworkTopology, mobility: MobilityConfig, n_ue: int, n_f: int,
                    seed: int | None = None, config_digest: str = "",
                    norm_max_db: float = NORM_MAX_DB, n_steps: int | None = None,
                    solver_kw: dict | None = None) -> Dataset:
    """Run one RWP episode, solving the PF program at every sample instant.

    The target UE of step t is t mod n_ue. Steps where the solver did not
    converge are kept but flagged; more than 1% flagged aborts the run.
    """
    if seed is not None:
        mobility = MobilityConfig(**{**asdict(mobility), "seed": int(seed)})
    n_a = topology.n_aps
    steps = mobility.n_steps if n_steps is None else int(n_steps)
    rec = np.zeros(steps, dtype=record_dtype(n_ue, n_a, n_f))
    solver_kw = solver_kw or {}
    n_flagged = 0
    for t, pos in trajectory(topology, n_ue, mobility, steps):
        ch = channel_state(topology, pos)
        assoc = mptcp_association(ch, topology, n_f)
        rep = solve_pf(ch.capacity, assoc, **solver_kw)
        idx = assoc.subflow_indices()
        flags = 0
        if not rep.converged:
            flags |= FLAG_NOT_CONVERGED
            n_flagged += 1
            log.warning("step %d: solver stopped after %d sweeps (kkt %.3g)",
                        t, rep.iterations, rep.kkt_residual)
        if rep.excluded_ues.size:
            flags |= FLAG_EXCLUDED_UE
        r = rec[t]
        r["time_index"] = t
        r["target"] = t % n_ue
        r["flags"] = flags
        r["positions"] = pos
        r["features"] = encode_features(ch.sinr, assoc.chi, norm_max_db)
        r["labels"] = rep.allocation[idx, np.arange(n_ue)[:, None]]
        r["indices"] = idx
    if n_flagged > MAX_FLAGGED_FRACTION * steps:
        raise CollectionAborted(f"{n_flagged}/{steps} steps did not converge")
    header = DatasetHeader(n_a, n_ue, n_f, config_digest, int(mobility.seed),
                           float(norm_max_db), steps)
    return Dataset(header, rec)


def audit_labels(ds: Dataset, topology: NetworkTopology, fraction: float = 0.01,
                 seed: int = 0) -> float:
    """Re-solve a random fraction of samples; return the largest label deviation."""
    rng = np.random.default_rng(seed)
    n = max(1, int(math.ceil(fraction * len(ds))))
    worst = 0.0
    for i in rng.choice(len(ds), n, replace=False):
        r = ds.records[i]
        ch = channel_state(topology, r["positions"])
        assoc = mptcp_association(ch, topology, ds.header.n_f)
        rep = solve_pf(ch.capacity, assoc)
        lab = rep.allocation[assoc.subflow_indices(), np.arange(ds.header.n_u)[:, None]]
        worst = max(worst, float(np.max(np.abs(lab - r["labels"]))))
    return worst


def split_dataset(ds: Dataset, ratio: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Uniform shuffle, then the first round(ratio * n) samples train."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(len(ds))
    n_train = int(math.floor(ratio * len(ds) + 0.5))
    return ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:]))


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def save_dataset(ds: Dataset, path) -> None:
    header = json.dumps(ds.header.to_dict(), sort_keys=True).encode("utf-8")
    rec = np.ascontiguousarray(ds.records, dtype=record_dtype(ds.header.n_u, ds.header.n_a,
                                                              ds.header.n_f))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(rec.tobytes())


def load_dataset(path, expect_digest: str | None = None,
                 expect_dims: tuple[int, int, int] | None = None) -> Dataset:
    """Read and validate a dataset file.

    ``expect_dims`` is (n_a, n_u, n_f); a mismatch, like a digest mismatch,
    raises DatasetError.
    """
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:8] != MAGIC:
        raise DatasetError(f"{path}: not a dataset file")
    (hlen,) = struct.unpack_from("<I", blob, 8)
    if len(blob) < 12 + hlen:
        raise DatasetError(f"{path}: truncated header")
    try:
        d = json.loads(blob[12:12 + hlen].decode("utf-8"))
        if d.pop("format_version") != FORMAT_VERSION:
            raise DatasetError(f"{path}: unsupported format version")
        header = DatasetHeader(**d)
    except (ValueError, TypeError, KeyError) as exc:
        raise DatasetError(f"{path}: bad header ({exc})") from None
    dt = record_dtype(header.n_u, header.n_a, header.n_f)
    body = len(blob) - 12 - hlen
    if body != header.n_samples * dt.itemsize:
        raise DatasetError(f"{path}: expected {header.n_samples} records of {dt.itemsize} bytes, "
                           f"found {body} bytes")
    rec = np.frombuffer(blob, dtype=dt, count=header.n_samples, offset=12 + hlen).copy()
    if expect_digest is not None and header.config_digest != expect_digest:
        raise DatasetError(f"{path}: config digest {header.config_digest} != {expect_digest}")
    if expect_dims is not None and (header.n_a, header.n_u, header.n_f) != tuple(expect_dims):
        raise DatasetError(f"{path}: dims {(header.n_a, header.n_u, header.n_f)} "
                           f"!= expected {tuple(expect_dims)}")
    return Dataset(header, rec)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 200
    dropout_p: float = 0.5
    seed: int = 0
    patience: int = 20

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for batch norm")
        if self.epochs < 1 or self.patience < 1:
            raise ValueError("epochs and patience must be >= 1")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must lie in [0, 1)")


@dataclass
class TrainResult:
    model: object
    params: dict
    curves: list = field(default_factory=list)  # (epoch, train_mse, val_mse)
    best_epoch: int = 0

    @property
    def best_val(self) -> float:
        return self.curves[self.best_epoch - 1][2]


def model_inputs(kind: str, ds: Dataset):
    """Network inputs and labels for every usable sample."""
    rec = ds.records[ds.usable]
    feats = rec["features"]
    n = feats.shape[0]
    x_c = feats.reshape(n, -1)
    if kind == "tcnn":
        k = rec["target"].astype(np.int64)
        rows = np.arange(n)
        return (feats[rows, k], x_c), rec["labels"][rows, k]
    return x_c, rec["labels"].reshape(n, -1)


def _take(inputs, idx):
    if isinstance(inputs, tuple):
        return tuple(a[idx] for a in inputs)
    return inputs[idx]


def _batches(n: int, size: int, rng) -> list[np.ndarray]:
    perm = rng.permutation(n)
    out = [perm[i:i + size] for i in range(0, n, size)]
    # a trailing batch of one cannot be batch-normalised
    if len(out) > 1 and out[-1].size < 2:
        out[-2] = np.concatenate([out[-2], out.pop()])
    return out


def evaluate_mse(model, params, inputs, labels) -> float:
    out, _ = model.forward(params, inputs, nn.EVAL)
    return nn.mse_loss(out, labels)[0]


def check_compatible(model, ds: Dataset) -> None:
    h = ds.header
    if (model.n_a, model.n_u, model.n_f) != (h.n_a, h.n_u, h.n_f):
        raise DatasetError(f"dataset dims {(h.n_a, h.n_u, h.n_f)} do not match model "
                           f"{(model.n_a, model.n_u, model.n_f)}")


def train(kind: str, train_set: Dataset, val_set: Dataset, cfg: TrainConfig = TrainConfig(),
          model=None, params=None, progress=None) -> TrainResult:
    """Minibatch Adam on the MSE loss with early stopping on validation MSE.

    The recorded train MSE of an epoch is the sample-weighted mean of its
    Train-mode minibatch losses; validation MSE is computed in Eval mode.
    Returns the parameters of the best validation epoch.
    """
    h = train_set.header
    if (h.n_a, h.n_u, h.n_f) != (val_set.header.n_a, val_set.header.n_u, val_set.header.n_f):
        raise DatasetError("train and validation sets have different dims")
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = build_model(kind, h.n_a, h.n_u, h.n_f, cfg.dropout_p)
        params = model.init_params(rng)
    check_compatible(model, train_set)
    x_tr, y_tr = model_inputs(kind, train_set)
    x_va, y_va = model_inputs(kind, val_set)
    n = y_tr.shape[0]
    if n < 2 or y_va.shape[0] < 1:
        raise DatasetError("need at least two training samples and one validation sample")

    adam = nn.AdamState(lr=cfg.learning_rate)
    mode = nn.ForwardMode(nn.Mode.TRAIN, rng=rng)
    result = TrainResult(model, copy.deepcopy(params))
    best = math.inf
    since_best = 0
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for b, idx in enumerate(_batches(n, cfg.batch_size, rng)):
            out, cache = model.forward(params, _take(x_tr, idx), mode)
            loss, dout = nn.mse_loss(out, y_tr[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, batch {b} "
                                    f"(batch size {idx.size}, lr {cfg.learning_rate})")
            _, grads = model.backward(params, cache, dout)
            nn.adam_step(params, grads, adam)
            total += loss * idx.size
        train_mse = total / n
        val_mse = evaluate_mse(model, params, x_va, y_va)
        if not math.isfinite(val_mse):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        result.curves.append((epoch, train_mse, val_mse))
        if progress:
            progress(epoch, train_mse, val_mse)
        if val_mse < best:
            best = val_mse
            since_best = 0
            result.best_epoch = epoch
            result.params = copy.deepcopy(params)
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    return result


def write_curves(path, curves, config_digest: str = "") -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if config_digest:
            fh.write(f"# config_digest={config_digest}\n")
        fh.write("epoch,train_mse,val_mse\n")
        for e, tr, va in curves:
            fh.write(f"{e},{tr!r},{va!r}\n")
