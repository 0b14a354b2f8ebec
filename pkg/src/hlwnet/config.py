"""Run configuration: TOML file, validation and the scenario digest."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from hlwnet.channel import InterferenceMode, LiFiRadioParams, WiFiRadioParams
from hlwnet.data import TrainConfig
from hlwnet.env import ConfigError, MobilityConfig, TopologyConfig
from hlwnet.evalx import METHODS
from hlwnet.models import NORM_MAX_DB

# file key -> dataclass field
ROOM_KEYS = {"length": "room_length", "width": "room_width", "height": "room_height",
             "grid_n": "grid_n", "lifi_separation": "lifi_separation",
             "wifi_position": "wifi_position"}
LIFI_KEYS = {"bandwidth": None, "optical_power": "optical_tx_power",
             "half_intensity_angle_deg": "half_intensity_angle", "pd_area": "pd_area",
             "fov_deg": "fov", "responsivity": "responsivity", "filter_gain": "filter_gain",
             "concentrator_index": "concentrator_index", "noise_psd": "noise_psd",
             "wall_reflectivity": "wall_reflectivity", "nlos": "nlos_enabled",
             "nlos_resolution": "nlos_grid_resolution", "interference": "interference_mode"}
WIFI_KEYS = {"bandwidth": None, "tx_power_dbm": "tx_power", "carrier_freq": "carrier_freq",
             "noise_psd_dbm": "noise_psd", "noise_figure_db": "noise_figure",
             "breakpoint_m": "breakpoint_distance",
             "pathloss_exponent": "pathloss_exponent_after_bp"}
MOBILITY_KEYS = {"v_min": "v_min", "v_max": "v_max", "ue_height": "ue_height"}
DATASET_KEYS = {"duration": "duration", "sample_period": "sample_period", "n_ue": "n_ue",
                "norm_max_db": "norm_max_db", "split_ratio": "split_ratio"}
TRAIN_KEYS = {f.name: f.name for f in dataclasses.fields(TrainConfig)}
EVAL_KEYS = {"methods": "methods", "n_ue": "n_ue", "n_f": "n_f", "episodes": "episodes",
             "seeds": "seeds", "latency_warmup": "latency_warmup",
             "latency_repetitions": "latency_repetitions"}
SECTIONS = ("room", "lifi", "wifi", "mobility", "mptcp", "dataset", "train", "eval")


@dataclass(frozen=True)
class EvalConfig:
    methods: tuple[str, ...] = METHODS
    n_ue: tuple[int, ...] = (10, 20, 30, 40, 50)
    n_f: tuple[int, ...] = (2, 3, 4)
    episodes: int = 20
    seeds: tuple[int, ...] = (0, 1, 2)
    latency_warmup: int = 100
    latency_repetitions: int = 1000

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"eval.methods: unknown method(s) {bad}; choose from {METHODS}")
        if not self.n_ue or min(self.n_ue) < 1:
            raise ConfigError("eval.n_ue entries must be >= 1")
        if not self.n_f or min(self.n_f) < 2:
            raise ConfigError("eval.n_f entries must be >= 2")
        if self.episodes < 1:
            raise ConfigError("eval.episodes must be >= 1")
        if self.latency_repetitions < 1 or self.latency_warmup < 0:
            raise ConfigError("eval latency counts must be positive")


@dataclass(frozen=True)
class RunConfig:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    mobility: MobilityConfig = field(default_factory=MobilityConfig)
    n_f: int = 3
    n_ue: int = 30
    norm_max_db: float = NORM_MAX_DB
    split_ratio: float = 0.8
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0

    def __post_init__(self):
        n_lifi = self.topology.grid_n ** 2
        if not 2 <= self.n_f <= 1 + n_lifi:
            raise ConfigError(f"mptcp.n_f must lie in [2, {1 + n_lifi}], got {self.n_f}")
        if max(self.eval.n_f) > 1 + n_lifi:
            raise ConfigError(f"eval.n_f entries must be <= {1 + n_lifi}")
        if self.n_ue < 1:
            raise ConfigError("dataset.n_ue must be >= 1")
        if not self.norm_max_db > 0:
            raise ConfigError("dataset.norm_max_db must be positive")
        if not 0 < self.split_ratio < 1:
            raise ConfigError("dataset.split_ratio must lie in (0, 1)")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(
            self, seed=seed,
            mobility=dataclasses.replace(self.mobility, seed=seed),
            train=dataclasses.replace(self.train, seed=seed))

    def scenario(self) -> dict:
        """Everything that shapes the channel states a dataset is drawn from."""
        topo = dataclasses.asdict(self.topology)
        topo["lifi"]["interference_mode"] = InterferenceMode(
            topo["lifi"]["interference_mode"]).value
        mob = dataclasses.asdict(self.mobility)
        mob.pop("seed")
        return {"topology": topo, "mobility": mob, "norm_max_db": self.norm_max_db}

    @property
    def digest(self) -> str:
        blob = json.dumps(self.scenario(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _take(section: dict, keys: dict, where: str) -> dict:
    unknown = sorted(set(section) - set(keys))
    if unknown:
        raise ConfigError(f"[{where}] unknown key(s): {', '.join(unknown)}")
    return {keys[k]: v for k, v in section.items() if keys[k] is not None}


def _build(factory, kwargs, where):
    try:
        return factory(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def from_dict(doc: dict) -> RunConfig:
    unknown = sorted(set(doc) - set(SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    for s in SECTIONS:
        if s in doc and not isinstance(doc[s], dict):
            raise ConfigError(f"[{s}] must be a table")
    room = _take(doc.get("room", {}), ROOM_KEYS, "room")
    if room.get("wifi_position") is not None:
        room["wifi_position"] = tuple(float(v) for v in room["wifi_position"])
    lifi_doc = doc.get("lifi", {})
    wifi_doc = doc.get("wifi", {})
    lifi = _build(LiFiRadioParams, _take(lifi_doc, LIFI_KEYS, "lifi"), "lifi")
    wifi = _build(WiFiRadioParams, _take(wifi_doc, WIFI_KEYS, "wifi"), "wifi")
    for name, sec in (("lifi", lifi_doc), ("wifi", wifi_doc)):
        if "bandwidth" in sec:
            room[f"{name}_bandwidth"] = sec["bandwidth"]
    topology = _build(TopologyConfig, {**room, "lifi": lifi, "wifi": wifi}, "room")

    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    data = _take(doc.get("dataset", {}), DATASET_KEYS, "dataset")
    mob = _take(doc.get("mobility", {}), MOBILITY_KEYS, "mobility")
    for k in ("duration", "sample_period"):
        if k in data:
            mob[k] = data.pop(k)
    mobility = _build(MobilityConfig, {**mob, "seed": seed}, "mobility")
    mptcp = _take(doc.get("mptcp", {}), {"n_f": "n_f"}, "mptcp")
    train = _build(TrainConfig, {"seed": seed, **_take(doc.get("train", {}), TRAIN_KEYS, "train")},
                   "train")
    ev = _take(doc.get("eval", {}), EVAL_KEYS, "eval")
    for k in ("methods", "n_ue", "n_f", "seeds"):
        if k in ev:
            if not isinstance(ev[k], list):
                raise ConfigError(f"[eval] {k} must be a list")
            ev[k] = tuple(ev[k])
    evalc = _build(EvalConfig, ev, "eval")
    return _build(RunConfig, dict(topology=topology, mobility=mobility, train=train, eval=evalc,
                                  seed=seed, **mptcp, **data), "config")


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(doc)
