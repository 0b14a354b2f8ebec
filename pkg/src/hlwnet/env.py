"""Room/AP topology and random waypoint mobility."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from hlwnet.channel import LiFiRadioParams, WiFiRadioParams


class ConfigError(ValueError):
    """Raised for invalid topology or mobility configuration."""


class ApKind(str, Enum):
    LIFI = "lifi"
    WIFI = "wifi"


@dataclass(frozen=True)
class ApDescriptor:
    kind: ApKind
    position: tuple[float, float, float]
    bandwidth: float

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ConfigError(f"AP bandwidth must be positive, got {self.bandwidth}")


@dataclass(frozen=True)
class TopologyConfig:
    room_length: float = 10.0
    room_width: float = 10.0
    room_height: float = 3.0
    grid_n: int = 4
    lifi_separation: float = 2.5
    # None -> (L/2, W/2, 1.0)
    wifi_position: tuple[float, float, float] | None = None
    lifi_bandwidth: float = 20e6
    wifi_bandwidth: float = 20e6
    lifi: LiFiRadioParams = field(default_factory=LiFiRadioParams)
    wifi: WiFiRadioParams = field(default_factory=WiFiRadioParams)


@dataclass(frozen=True)
class NetworkTopology:
    room_length: float
    room_width: float
    room_height: float
    aps: tuple[ApDescriptor, ...]
    lifi_params: LiFiRadioParams
    wifi_params: WiFiRadioParams

    @property
    def n_aps(self) -> int:
        return len(self.aps)

    @property
    def positions(self) -> np.ndarray:
        return np.array([ap.position for ap in self.aps], dtype=np.float64)

    @property
    def is_lifi(self) -> np.ndarray:
        return np.array([ap.kind is ApKind.LIFI for ap in self.aps])

    @property
    def bandwidths(self) -> np.ndarray:
        return np.array([ap.bandwidth for ap in self.aps], dtype=np.float64)

    @property
    def wifi_index(self) -> int:
        return next(i for i, ap in enumerate(self.aps) if ap.kind is ApKind.WIFI)

    @property
    def lifi_indices(self) -> np.ndarray:
        return np.flatnonzero(self.is_lifi)


def build_topology(config: TopologyConfig = TopologyConfig()) -> NetworkTopology:
    """Place the WiFi AP (index 0) and an n x n LiFi ceiling grid, row-major.

    The grid is centred in the room footprint.
    """
    L, W, H = config.room_length, config.room_width, config.room_height
    if min(L, W, H) <= 0:
        raise ConfigError("room dimensions must be positive")
    n = int(config.grid_n)
    if n < 1:
        raise ConfigError("grid_n must be >= 1")
    span = (n - 1) * config.lifi_separation
    if span > L or span > W:
        raise ConfigError(
            f"{n}x{n} LiFi grid with separation {config.lifi_separation} m "
            f"overflows the {L} x {W} m room"
        )
    x0 = (L - span) / 2.0
    y0 = (W - span) / 2.0

    wifi_pos = config.wifi_position
    if wifi_pos is None:
        wifi_pos = (L / 2.0, W / 2.0, 1.0)
    wifi_pos = tuple(float(v) for v in wifi_pos)
    if not (0 <= wifi_pos[0] <= L and 0 <= wifi_pos[1] <= W and 0 <= wifi_pos[2] <= H):
        raise ConfigError(f"WiFi AP position {wifi_pos} lies outside the room")

    aps = [ApDescriptor(ApKind.WIFI, wifi_pos, config.wifi_bandwidth)]
    for row in range(n):
        for col in range(n):
            pos = (x0 + col * config.lifi_separation, y0 + row * config.lifi_separation, H)
            aps.append(ApDescriptor(ApKind.LIFI, pos, config.lifi_bandwidth))
    return NetworkTopology(L, W, H, tuple(aps), config.lifi, config.wifi)


@dataclass(frozen=True)
class MobilityConfig:
    v_min: float = 0.5
    v_max: float = 5.0
    sample_period: float = 0.1
    duration: float = 500.0
    ue_height: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.v_min <= self.v_max):
            raise ConfigError(f"need 0 < v_min <= v_max, got [{self.v_min}, {self.v_max}]")
        if not (0 < self.sample_period <= self.duration):
            raise ConfigError("need 0 < sample_period <= duration")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def n_steps(self) -> int:
        # guard against 500/0.1 = 4999.999...
        return int(np.floor(self.duration / self.sample_period + 1e-9))


@dataclass(frozen=True)
class UEState:
    position: tuple[float, float, float]
    waypoint: tuple[float, float]
    speed: float


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.uint64(seed)))


def _draw_point(topology: NetworkTopology, rng: np.random.Generator) -> tuple[float, float]:
    x = rng.uniform(0.0, topology.room_length)
    y = rng.uniform(0.0, topology.room_width)
    return float(x), float(y)


def _draw_speed(mobility: MobilityConfig, rng: np.random.Generator) -> float:
    return float(rng.uniform(mobility.v_min, mobility.v_max))


def init_ues(topology: NetworkTopology, n_ue: int, mobility: MobilityConfig,
             rng: np.random.Generator) -> list[UEState]:
    if n_ue < 1:
        raise ConfigError("n_ue must be >= 1")
    ues = []
    for _ in range(n_ue):
        x, y = _draw_point(topology, rng)
        waypoint = _draw_point(topology, rng)
        ues.append(UEState((x, y, mobility.ue_height), waypoint, _draw_speed(mobility, rng)))
    return ues


def rwp_step(ue: UEState, topology: NetworkTopology, mobility: MobilityConfig,
             rng: np.random.Generator) -> UEState:
    """Advance one sample period.

    Reaching the waypoint ends the move for this period (leftover time is
    dropped) and redraws waypoint and speed; there is no pause.
    """
    x, y, z = ue.position
    wx, wy = ue.waypoint
    step = ue.speed * mobility.sample_period
    dx, dy = wx - x, wy - y
    remaining = float(np.hypot(dx, dy))
    if remaining <= step:
        return UEState((wx, wy, z), _draw_point(topology, rng), _draw_speed(mobility, rng))
    frac = step / remaining
    return replace(ue, position=(x + dx * frac, y + dy * frac, z))


def ue_positions(ues: list[UEState]) -> np.ndarray:
    return np.array([ue.position for ue in ues], dtype=np.float64)


def trajectory(topology: NetworkTopology, n_ue: int, mobility: MobilityConfig, n_steps: int | None = None):
    """Yield (step index, positions array) for a full RWP episode."""
    rng = make_rng(mobility.seed)
    ues = init_ues(topology, n_ue, mobility, rng)
    n_steps = mobility.n_steps if n_steps is None else n_steps
    for t in range(n_steps):
        yield t, ue_positions(ues)
        ues = [rwp_step(ue, topology, mobility, rng) for ue in ues]
