"""Small float64 neural-network engine.

Layers: fully connected, batch norm, ReLU, (inverted) dropout, sigmoid and
concatenation. Parameters live in a flat ``dict[str, ndarray]`` keyed
``"<chain>.<layer>.<W|b|gamma|beta|running_mean|running_var>"``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

TRAINABLE = ("W", "b", "gamma", "beta")
BUFFERS = ("running_mean", "running_var")


class LayerKind(str, Enum):
    FC = "fc"
    BN = "bn"
    RELU = "relu"
    DROPOUT = "dropout"
    SIGMOID = "sigmoid"
    CONCAT = "concat"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    in_dim: int
    out_dim: int
    dropout_p: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dimensions must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if self.kind not in (LayerKind.FC, LayerKind.CONCAT) and self.in_dim != self.out_dim:
            raise ValueError(f"{self.kind.value} layer must preserve its width")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "in_dim": self.in_dim, "out_dim": self.out_dim,
                "dropout_p": self.dropout_p}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(LayerKind(d["kind"]), int(d["in_dim"]), int(d["out_dim"]),
                   float(d.get("dropout_p", 0.0)))


def fc(i, o):
    return LayerSpec(LayerKind.FC, i, o)


def bn(n):
    return LayerSpec(LayerKind.BN, n, n)


def relu(n):
    return LayerSpec(LayerKind.RELU, n, n)


def dropout(n, p):
    return LayerSpec(LayerKind.DROPOUT, n, n, p)


def sigmoid(n):
    return LayerSpec(LayerKind.SIGMOID, n, n)


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass
class ForwardMode:
    mode: Mode = Mode.EVAL
    rng: np.random.Generator | None = None
    update_stats: bool = True
    # grad checking needs dropout off even in train mode
    disable_dropout: bool = False

    @property
    def train(self) -> bool:
        return self.mode is Mode.TRAIN


EVAL = ForwardMode(Mode.EVAL)


def sigmoid_fn(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class Sequential:
    """A named chain of layers; a leading CONCAT layer takes a tuple input."""

    name: str
    specs: list[LayerSpec]

    def __post_init__(self):
        for prev, nxt in zip(self.specs, self.specs[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(f"{self.name}: width mismatch {prev.out_dim} -> {nxt.in_dim}")
        if any(s.kind is LayerKind.CONCAT for s in self.specs[1:]):
            raise ValueError("CONCAT is only supported as the first layer of a chain")

    def key(self, idx: int, what: str) -> str:
        return f"{self.name}.{idx}.{what}"

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        params = {}
        for k, s in enumerate(self.specs):
            if s.kind is LayerKind.FC:
                limit = np.sqrt(6.0 / (s.in_dim + s.out_dim))
                params[self.key(k, "W")] = rng.uniform(-limit, limit, (s.in_dim, s.out_dim))
                params[self.key(k, "b")] = np.zeros(s.out_dim)
            elif s.kind is LayerKind.BN:
                params[self.key(k, "gamma")] = np.ones(s.out_dim)
                params[self.key(k, "beta")] = np.zeros(s.out_dim)
                params[self.key(k, "running_mean")] = np.zeros(s.out_dim)
                params[self.key(k, "running_var")] = np.ones(s.out_dim)
        return params

    def n_trainable(self) -> int:
        n = 0
        for s in self.specs:
            if s.kind is LayerKind.FC:
                n += s.in_dim * s.out_dim + s.out_dim
            elif s.kind is LayerKind.BN:
                n += 2 * s.out_dim
        return n

    def forward(self, params, x, mode: ForwardMode = EVAL):
        """Return (output, cache); ``cache["acts"]`` keeps every layer's output."""
        if self.specs and self.specs[0].kind is LayerKind.CONCAT:
            parts = tuple(np.asarray(p, dtype=np.float64) for p in x)
            widths = [p.shape[1] for p in parts]
            if sum(widths) != self.specs[0].in_dim:
                raise ValueError(f"{self.name}: concat inputs {widths} != {self.specs[0].in_dim}")
        else:
            x = np.asarray(x, dtype=np.float64)
            if x.ndim != 2 or x.shape[1] != self.specs[0].in_dim:
                raise ValueError(f"{self.name}: expected (batch, {self.specs[0].in_dim}) input, "
                                 f"got {x.shape}")
        acts = [x]
        aux = []
        h = x
        for k, s in enumerate(self.specs):
            a = None
            if s.kind is LayerKind.CONCAT:
                a = [p.shape[1] for p in h]
                h = np.concatenate(h, axis=1)
            elif s.kind is LayerKind.FC:
                h = h @ params[self.key(k, "W")] + params[self.key(k, "b")]
            elif s.kind is LayerKind.BN:
                gamma = params[self.key(k, "gamma")]
                beta = params[self.key(k, "beta")]
                if mode.train:
                    n = h.shape[0]
                    if n < 2:
                        raise ValueError("train-mode batch norm needs a batch of at least 2")
                    mean = h.mean(axis=0)
                    centred = h - mean
                    var = (centred * centred).mean(axis=0)
                    inv_std = 1.0 / np.sqrt(var + BN_EPS)
                    xhat = centred * inv_std
                    if mode.update_stats:
                        rm = params[self.key(k, "running_mean")]
                        rv = params[self.key(k, "running_var")]
                        rm *= 1.0 - BN_MOMENTUM
                        rm += BN_MOMENTUM * mean
                        rv *= 1.0 - BN_MOMENTUM
                        rv += BN_MOMENTUM * var * n / (n - 1)
                    a = (xhat, inv_std)
                else:
                    inv_std = 1.0 / np.sqrt(params[self.key(k, "running_var")] + BN_EPS)
                    xhat = (h - params[self.key(k, "running_mean")]) * inv_std
                    a = (xhat, inv_std)
                h = gamma * xhat + beta
            elif s.kind is LayerKind.RELU:
                h = np.maximum(h, 0.0)
            elif s.kind is LayerKind.DROPOUT:
                if mode.train and s.dropout_p > 0 and not mode.disable_dropout:
                    if mode.rng is None:
                        raise ValueError("train-mode dropout needs an rng")
                    a = (mode.rng.random(h.shape) >= s.dropout_p) / (1.0 - s.dropout_p)
                    h = h * a
            elif s.kind is LayerKind.SIGMOID:
                h = sigmoid_fn(h)
            acts.append(h)
            aux.append(a)
        return h, {"acts": acts, "aux": aux, "train": mode.train}

    def backward(self, params, cache, dout):
        """Return (d_input, grads); d_input is a tuple for a CONCAT chain."""
        grads = {}
        acts, aux = cache["acts"], cache["aux"]
        g = np.asarray(dout, dtype=np.float64)
        for k in range(len(self.specs) - 1, -1, -1):
            s = self.specs[k]
            x_in, y, a = acts[k], acts[k + 1], aux[k]
            if s.kind is LayerKind.CONCAT:
                splits = np.cumsum(a)[:-1]
                g = tuple(np.split(g, splits, axis=1))
            elif s.kind is LayerKind.FC:
                W = params[self.key(k, "W")]
                grads[self.key(k, "W")] = x_in.T @ g
                grads[self.key(k, "b")] = g.sum(axis=0)
                g = g @ W.T
            elif s.kind is LayerKind.BN:
                xhat, inv_std = a
                gamma = params[self.key(k, "gamma")]
                grads[self.key(k, "gamma")] = (g * xhat).sum(axis=0)
                grads[self.key(k, "beta")] = g.sum(axis=0)
                dxhat = g * gamma
                if cache["train"]:
                    n = g.shape[0]
                    g = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0)
                                         - xhat * (dxhat * xhat).sum(axis=0))
                else:
                    g = dxhat * inv_std
            elif s.kind is LayerKind.RELU:
                g = g * (x_in > 0)
            elif s.kind is LayerKind.DROPOUT:
                if a is not None:
                    g = g * a
            elif s.kind is LayerKind.SIGMOID:
                g = g * y * (1.0 - y)
        return g, grads


def mse_loss(pred, label):
    """Mean over samples and output dimensions, with its gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if pred.shape != label.shape:
        raise ValueError(f"prediction {pred.shape} and label {label.shape} differ in shape")
    if pred.size == 0:
        raise ValueError("empty batch")
    diff = pred - label
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float | None = None):
    """In-place bias-corrected Adam update of every key present in ``grads``."""
    lr = state.lr if lr is None else lr
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for key, g in grads.items():
        if key not in state.m:
            state.m[key] = np.zeros_like(g)
            state.v[key] = np.zeros_like(g)
        m, v = state.m[key], state.v[key]
        if m.shape != g.shape:
            raise ValueError(f"Adam state for {key} has shape {m.shape}, gradient {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[key] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# finite-difference gradient check
# ---------------------------------------------------------------------------

def trainable_keys(params: dict) -> list[str]:
    return [k for k in params if k.rsplit(".", 1)[-1] in TRAINABLE]


def grad_check(model, params, inputs, labels, h: float = 1e-5, max_entries: int | None = None,
               rng: np.random.Generator | None = None, backward=None) -> float:
    """Largest per-tensor relative error between backprop and central differences.

    ``model`` needs ``forward(params, inputs, mode)`` and
    ``backward(params, cache, dout) -> (d_input, grads)``. Train-mode batch norm is used with
    running statistics frozen and dropout disabled. The error of tensor t is
    ||g_t - n_t|| / max(||g_t||, ||n_t||, 1e-3 * max_s ||g_s||); the floor
    covers tensors whose true gradient vanishes, such as an FC bias feeding
    batch norm. ``max_entries`` caps how many entries per tensor are probed.
    """
    mode = ForwardMode(Mode.TRAIN, update_stats=False, disable_dropout=True)
    rng = rng or np.random.default_rng(0)

    def loss_at(p):
        out, _ = model.forward(p, inputs, mode)
        return mse_loss(out, labels)[0]

    out, cache = model.forward(params, inputs, mode)
    _, dout = mse_loss(out, labels)
    _, grads = (backward or model.backward)(params, cache, dout)

    work = {k: v.copy() for k, v in params.items()}
    keys = trainable_keys(params)
    scale = max(float(np.linalg.norm(grads[k])) for k in keys)
    worst = 0.0
    for key in keys:
        arr = work[key]
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        num = np.empty(idx.size)
        for n, e in enumerate(idx):
            orig = flat[e]
            flat[e] = orig + h
            lp = loss_at(work)
            flat[e] = orig - h
            lm = loss_at(work)
            flat[e] = orig
            num[n] = (lp - lm) / (2.0 * h)
        ana = grads[key].reshape(-1)[idx]
        denom = max(np.linalg.norm(ana), np.linalg.norm(num), 1e-3 * scale, 1e-300)
        worst = max(worst, float(np.linalg.norm(ana - num) / denom))
    return worst


# ---------------------------------------------------------------------------
# checkpoint text format
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "hlwnet-checkpoint"
CHECKPOINT_VERSION = 1


def params_to_json(params: dict) -> dict:
    return {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()} for k, v in params.items()}


def params_from_json(d: dict) -> dict:
    return {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in d.items()}


def save_checkpoint(path, *, model_meta: dict, spec_chains: dict, params: dict,
                    normalizer: dict, train_config: dict, config_digest: str, extra=None):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_digest": config_digest,
        "model": model_meta,
        "spec_chains": {name: [s.to_dict() for s in specs] for name, specs in spec_chains.items()},
        "normalizer": normalizer,
        "train_config": train_config,
        "params": params_to_json(params),
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, allow_nan=False)
        fh.write("\n")


def load_checkpoint(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an hlwnet checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    doc["spec_chains"] = {name: [LayerSpec.from_dict(s) for s in specs]
                          for name, specs in doc["spec_chains"].items()}
    doc["params"] = params_from_json(doc["params"])
    return doc
