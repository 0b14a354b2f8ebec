"""Feature encoding, the user-centric TCNN, the network-centric DNN baseline,
and the per-AP budget projection applied to learned outputs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hlwnet import nn_core as nn
from hlwnet.nn_core import ForwardMode, Sequential

NORM_MAX_DB = 60.0
DEFAULT_DROPOUT = 0.5
CONDITION_WIDTHS = (128, 64, 32, 8)
DNN_WIDTHS = (256, 128, 64, 32)


class EncodedFeatures(np.ndarray):
    """Marker type for normalised network inputs; re-encoding is refused."""

    def __new__(cls, arr):
        return np.asarray(arr, dtype=np.float64).view(cls)


def encode_target_input(gamma_db, chi, norm_max_db: float = NORM_MAX_DB) -> EncodedFeatures:
    """Clip SNR to [0, norm_max_db] dB, mask by the connection vector, scale to [0, 1]."""
    if isinstance(gamma_db, EncodedFeatures):
        raise TypeError("input is already encoded")
    if not norm_max_db > 0:
        raise ValueError("norm_max_db must be positive")
    g = np.asarray(gamma_db, dtype=np.float64)
    c = np.asarray(chi, dtype=bool)
    clipped = np.clip(np.nan_to_num(g, nan=0.0, neginf=0.0), 0.0, norm_max_db)
    return EncodedFeatures(np.where(c, clipped, 0.0) / norm_max_db)


def encode_features(sinr, chi, norm_max_db: float = NORM_MAX_DB) -> EncodedFeatures:
    """Per-UE target inputs from linear (N_a, N_u) SINR; returns (N_u, N_a)."""
    if isinstance(sinr, EncodedFeatures):
        raise TypeError("input is already encoded")
    s = np.asarray(sinr, dtype=np.float64)
    with np.errstate(divide="ignore"):
        gamma_db = 10.0 * np.log10(s)
    return encode_target_input(gamma_db.T, np.asarray(chi, dtype=bool).T, norm_max_db)


def encode_condition_input(features: EncodedFeatures) -> EncodedFeatures:
    """Concatenate every UE's target input, UE order preserved."""
    f = np.asarray(features)
    return EncodedFeatures(f.reshape(*f.shape[:-2], f.shape[-2] * f.shape[-1]))


# ---------------------------------------------------------------------------
# architectures
# ---------------------------------------------------------------------------

def _fc_bn_relu(i, o):
    return [nn.fc(i, o), nn.bn(o), nn.relu(o)]


class TCNN:
    """Target, condition and combiner sub-networks for one target UE."""

    kind = "tcnn"

    def __init__(self, n_a: int, n_u: int, n_f: int, dropout_p: float = DEFAULT_DROPOUT):
        if n_f < 2:
            raise ValueError("n_f must be >= 2")
        self.n_a, self.n_u, self.n_f, self.dropout_p = n_a, n_u, n_f, dropout_p
        w = CONDITION_WIDTHS
        self.target = Sequential("target", [
            *_fc_bn_relu(n_a, 8), nn.dropout(8, dropout_p), *_fc_bn_relu(8, 4)])
        self.condition = Sequential("condition", [
            *_fc_bn_relu(n_u * n_a, w[0]), *_fc_bn_relu(w[0], w[1]), *_fc_bn_relu(w[1], w[2]),
            nn.dropout(w[2], dropout_p), *_fc_bn_relu(w[2], w[3])])
        self.combiner = Sequential("combiner", [
            nn.LayerSpec(nn.LayerKind.CONCAT, 4 + w[3], 12), nn.fc(12, n_f), nn.bn(n_f),
            nn.sigmoid(n_f)])

    @property
    def chains(self) -> dict[str, Sequential]:
        return {"target": self.target, "condition": self.condition, "combiner": self.combiner}

    @property
    def meta(self) -> dict:
        return {"kind": self.kind, "n_a": self.n_a, "n_u": self.n_u, "n_f": self.n_f,
                "dropout_p": self.dropout_p}

    def init_params(self, rng: np.random.Generator) -> dict:
        params = {}
        for chain in self.chains.values():
            params.update(chain.init_params(rng))
        return params

    def n_trainable(self) -> int:
        return sum(c.n_trainable() for c in self.chains.values())

    def forward(self, params, inputs, mode: ForwardMode = nn.EVAL):
        x_k, x_c = inputs
        y_k, c_t = self.target.forward(params, x_k, mode)
        y_c, c_c = self.condition.forward(params, x_c, mode)
        out, c_m = self.combiner.forward(params, (y_k, y_c), mode)
        return out, (c_t, c_c, c_m)

    def backward(self, params, cache, dout):
        c_t, c_c, c_m = cache
        (d_yk, d_yc), grads = self.combiner.backward(params, c_m, dout)
        dx_k, g_t = self.target.backward(params, c_t, d_yk)
        dx_c, g_c = self.condition.backward(params, c_c, d_yc)
        grads.update(g_t)
        grads.update(g_c)
        return (dx_k, dx_c), grads


class NetworkCentricDNN:
    """Single MLP mapping all UEs' inputs to all UEs' subflow coefficients."""

    kind = "dnn"

    def __init__(self, n_a: int, n_u: int, n_f: int, dropout_p: float = DEFAULT_DROPOUT):
        if n_f < 2:
            raise ValueError("n_f must be >= 2")
        self.n_a, self.n_u, self.n_f, self.dropout_p = n_a, n_u, n_f, dropout_p
        w = DNN_WIDTHS
        self.net = Sequential("dnn", [
            *_fc_bn_relu(n_u * n_a, w[0]), *_fc_bn_relu(w[0], w[1]), *_fc_bn_relu(w[1], w[2]),
            *_fc_bn_relu(w[2], w[3]), nn.dropout(w[3], dropout_p),
            nn.fc(w[3], n_u * n_f), nn.bn(n_u * n_f), nn.sigmoid(n_u * n_f)])

    @property
    def chains(self) -> dict[str, Sequential]:
        return {"dnn": self.net}

    @property
    def meta(self) -> dict:
        return {"kind": self.kind, "n_a": self.n_a, "n_u": self.n_u, "n_f": self.n_f,
                "dropout_p": self.dropout_p}

    def init_params(self, rng: np.random.Generator) -> dict:
        return self.net.init_params(rng)

    def n_trainable(self) -> int:
        return self.net.n_trainable()

    def forward(self, params, inputs, mode: ForwardMode = nn.EVAL):
        return self.net.forward(params, inputs, mode)

    def backward(self, params, cache, dout):
        return self.net.backward(params, cache, dout)


MODEL_KINDS = {"tcnn": TCNN, "dnn": NetworkCentricDNN}


def build_tcnn(n_a: int, n_u: int, n_f: int, dropout_p: float = DEFAULT_DROPOUT, seed: int = 0):
    model = TCNN(n_a, n_u, n_f, dropout_p)
    return model, model.init_params(np.random.default_rng(seed))


def build_network_centric(n_a: int, n_u: int, n_f: int, dropout_p: float = DEFAULT_DROPOUT,
                          seed: int = 0):
    model = NetworkCentricDNN(n_a, n_u, n_f, dropout_p)
    return model, model.init_params(np.random.default_rng(seed))


def build_model(kind: str, n_a: int, n_u: int, n_f: int, dropout_p: float = DEFAULT_DROPOUT):
    try:
        return MODEL_KINDS[kind](n_a, n_u, n_f, dropout_p)
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}") from None


@dataclass(frozen=True)
class TcnnOutput:
    rho_k: np.ndarray
    subflow_ap_indices: np.ndarray


def tcnn_forward(model: TCNN, params, x_k, x_c, subflow_ap_indices=None,
                 mode: ForwardMode = nn.EVAL) -> TcnnOutput:
    x_k = np.atleast_2d(np.asarray(x_k, dtype=np.float64))
    x_c = np.atleast_2d(np.asarray(x_c, dtype=np.float64))
    out, _ = model.forward(params, (x_k, x_c), mode)
    if subflow_ap_indices is None:
        subflow_ap_indices = np.full(model.n_f, -1)
    idx = np.asarray(subflow_ap_indices)
    if idx.size and idx.min() >= 0 and np.any(np.diff(idx) <= 0):
        raise ValueError("subflow AP indices must be strictly ascending")
    return TcnnOutput(out[0] if out.shape[0] == 1 else out, idx)


# ---------------------------------------------------------------------------
# Eval-mode inference with batch norm folded into the preceding FC layer
# ---------------------------------------------------------------------------

def fold_chain(chain: Sequential, params) -> list[tuple[np.ndarray, np.ndarray, str]]:
    """Collapse an eval-mode chain into (W, b, activation) stages."""
    stages = []
    W = b = None
    act = "none"
    for k, s in enumerate(chain.specs):
        kind = s.kind
        if kind is nn.LayerKind.FC:
            if W is not None:
                stages.append((W, b, act))
            W = params[chain.key(k, "W")].copy()
            b = params[chain.key(k, "b")].copy()
            act = "none"
        elif kind is nn.LayerKind.BN:
            scale = params[chain.key(k, "gamma")] / np.sqrt(
                params[chain.key(k, "running_var")] + nn.BN_EPS)
            W = W * scale
            b = (b - params[chain.key(k, "running_mean")]) * scale + params[chain.key(k, "beta")]
        elif kind in (nn.LayerKind.RELU, nn.LayerKind.SIGMOID):
            act = kind.value
        elif kind in (nn.LayerKind.DROPOUT, nn.LayerKind.CONCAT):
            continue
    if W is not None:
        stages.append((W, b, act))
    return stages


def _run_stages(stages, h):
    for W, b, act in stages:
        h = h @ W + b
        if act == "relu":
            h = np.maximum(h, 0.0)
        elif act == "sigmoid":
            h = 1.0 / (1.0 + np.exp(-h))
    return h


class FoldedTCNN:
    def __init__(self, model: TCNN, params):
        self.target = fold_chain(model.target, params)
        self.condition = fold_chain(model.condition, params)
        (W, b, act), = fold_chain(model.combiner, params)
        self.w_target, self.w_condition = W[:4], W[4:]
        self.b = b

    def condition_latent(self, x_c):
        return _run_stages(self.condition, x_c)

    def combine(self, x_k, y_c):
        y_k = _run_stages(self.target, x_k)
        z = y_k @ self.w_target + y_c @ self.w_condition + self.b
        return 1.0 / (1.0 + np.exp(-z))

    def __call__(self, x_k, x_c):
        return self.combine(x_k, self.condition_latent(x_c))


class FoldedDNN:
    def __init__(self, model: NetworkCentricDNN, params):
        self.stages = fold_chain(model.net, params)

    def __call__(self, x_c):
        return _run_stages(self.stages, x_c)


def fold(model, params):
    return FoldedTCNN(model, params) if model.kind == "tcnn" else FoldedDNN(model, params)


def predict_rows(model, params, features: np.ndarray) -> np.ndarray:
    """Per-UE coefficient rows (N_u, N_f) for one drop from encoded (N_u, N_a) features."""
    f = np.asarray(features, dtype=np.float64)
    x_c = f.reshape(1, -1)
    folded = fold(model, params)
    if model.kind == "tcnn":
        y_c = folded.condition_latent(x_c)
        return folded.combine(f, y_c)
    return folded(x_c).reshape(model.n_u, model.n_f)


# ---------------------------------------------------------------------------
# budget projection
# ---------------------------------------------------------------------------

def scatter_rows(rows, assoc) -> np.ndarray:
    """Place (N_u, N_f) rows into an (N_a, N_u) matrix by ascending AP index."""
    idx = assoc.subflow_indices()
    rows = np.asarray(rows, dtype=np.float64)
    rho = np.zeros(assoc.chi.shape)
    ue = np.repeat(np.arange(assoc.n_ues), idx.shape[1])
    rho[idx.reshape(-1), ue] = rows.reshape(-1)
    return rho


def gather_rows(rho, assoc) -> np.ndarray:
    idx = assoc.subflow_indices()
    return np.asarray(rho)[idx, np.arange(assoc.n_ues)[:, None]]


def project_feasible(raw, assoc) -> np.ndarray:
    """Scatter per-UE rows and shrink overloaded APs uniformly to a unit budget."""
    rho = np.clip(scatter_rows(raw, assoc), 0.0, 1.0)
    load = rho.sum(axis=1)
    over = load > 1.0
    rho[over] /= load[over, None]
    return rho


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

class CheckpointMismatch(ValueError):
    pass


def save_model(path, model, params, *, norm_max_db: float, train_config: dict,
               config_digest: str, extra: dict | None = None) -> None:
    nn.save_checkpoint(path, model_meta=model.meta,
                       spec_chains={k: c.specs for k, c in model.chains.items()},
                       params=params, normalizer={"clip_min_db": 0.0, "clip_max_db": norm_max_db},
                       train_config=train_config, config_digest=config_digest, extra=extra)


def load_model(path, expect_digest: str | None = None):
    """Rebuild (model, params, document) from a checkpoint and validate it."""
    doc = nn.load_checkpoint(path)
    meta = doc["model"]
    model = build_model(meta["kind"], meta["n_a"], meta["n_u"], meta["n_f"], meta["dropout_p"])
    if {k: c.specs for k, c in model.chains.items()} != doc["spec_chains"]:
        raise CheckpointMismatch(f"{path}: layer chain does not match a fresh {meta['kind']} build")
    fresh = model.init_params(np.random.default_rng(0))
    params = doc["params"]
    if set(fresh) != set(params) or any(fresh[k].shape != params[k].shape for k in fresh):
        raise CheckpointMismatch(f"{path}: parameter set does not match the layer chain")
    if expect_digest is not None and doc["config_digest"] != expect_digest:
        raise CheckpointMismatch(f"{path}: config digest {doc['config_digest']} != {expect_digest}")
    return model, params, doc
