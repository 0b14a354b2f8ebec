"""LiFi/WiFi channel gains, SINR and link capacity.

Gains are deterministic: no small-scale fading, no device tilt. LiFi APs
point straight down and UE photodiodes straight up.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

from hlwnet import kernels

if TYPE_CHECKING:
    from hlwnet.env import NetworkTopology

SPEED_OF_LIGHT = 299_792_458.0


class InterferenceMode(str, Enum):
    WDM_ORTHOGONAL = "wdm_orthogonal"
    CO_CHANNEL = "co_channel"


@dataclass(frozen=True)
class LiFiRadioParams:
    optical_tx_power: float = 3.0          # W
    half_intensity_angle: float = 60.0     # deg
    pd_area: float = 1e-4                  # m^2
    fov: float = 80.0                      # deg
    responsivity: float = 0.53             # A/W
    filter_gain: float = 1.0
    concentrator_index: float = 1.5
    noise_psd: float = 1e-21               # A^2/Hz
    wall_reflectivity: float = 0.8
    nlos_enabled: bool = False
    nlos_grid_resolution: float = 0.25     # m
    interference_mode: InterferenceMode = InterferenceMode.WDM_ORTHOGONAL

    def __post_init__(self):
        positive = ("optical_tx_power", "half_intensity_angle", "pd_area", "fov",
                    "responsivity", "filter_gain", "concentrator_index", "noise_psd",
                    "nlos_grid_resolution")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"lifi.{name} must be positive")
        if not 0 < self.fov <= 90:
            raise ValueError("lifi.fov must lie in (0, 90] degrees")
        if not 0 < self.half_intensity_angle < 90:
            raise ValueError("lifi.half_intensity_angle must lie in (0, 90) degrees")
        if not 0 <= self.wall_reflectivity <= 1:
            raise ValueError("lifi.wall_reflectivity must lie in [0, 1]")
        object.__setattr__(self, "interference_mode", InterferenceMode(self.interference_mode))

    @property
    def lambertian_order(self) -> float:
        return -math.log(2.0) / math.log(math.cos(math.radians(self.half_intensity_angle)))

    @property
    def concentrator_gain(self) -> float:
        return self.concentrator_index ** 2 / math.sin(math.radians(self.fov)) ** 2


@dataclass(frozen=True)
class WiFiRadioParams:
    tx_power: float = 20.0                 # dBm
    carrier_freq: float = 2.4e9            # Hz
    noise_psd: float = -174.0              # dBm/Hz
    noise_figure: float = 10.0             # dB
    breakpoint_distance: float = 10.0      # m
    pathloss_exponent_after_bp: float = 3.5

    def __post_init__(self):
        if not self.breakpoint_distance > 0:
            raise ValueError("wifi.breakpoint_distance must be positive")
        if not self.pathloss_exponent_after_bp >= 2:
            raise ValueError("wifi.pathloss_exponent_after_bp must be >= 2")
        if not self.carrier_freq > 0:
            raise ValueError("wifi.carrier_freq must be positive")


@dataclass(frozen=True)
class ChannelState:
    sinr: np.ndarray        # (N_a, N_u), linear
    capacity: np.ndarray    # (N_a, N_u), bit/s

    @property
    def sinr_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(self.sinr)


# ---------------------------------------------------------------------------
# LiFi
# ---------------------------------------------------------------------------

def lifi_los_gain(ap_position, ue_position, params: LiFiRadioParams) -> float:
    ap = np.asarray(ap_position, dtype=np.float64)
    ue = np.asarray(ue_position, dtype=np.float64)
    return float(_los_gain(ap[None, :], ue[None, :], params)[0, 0])


def _los_gain(ap_pos: np.ndarray, ue_pos: np.ndarray, params: LiFiRadioParams) -> np.ndarray:
    """Vectorised LoS gain, shape (A, U)."""
    diff = ue_pos[None, :, :] - ap_pos[:, None, :]
    d2 = np.einsum("auk,auk->au", diff, diff)
    if np.any(d2 == 0):
        raise ValueError("AP and UE are co-located")
    if np.any(diff[..., 2] >= 0):
        raise ValueError("LiFi AP must lie above the UE plane")
    d = np.sqrt(d2)
    cos_t = -diff[..., 2] / d  # emission and incidence angles coincide
    m = params.lambertian_order
    in_fov = cos_t >= math.cos(math.radians(params.fov))
    gain = ((m + 1.0) * params.pd_area / (2.0 * math.pi * d2) * cos_t ** m
            * params.filter_gain * params.concentrator_gain * cos_t)
    return np.where(in_fov, gain, 0.0)


def wall_elements(room_length: float, room_width: float, room_height: float, resolution: float):
    """Midpoint discretisation of the four walls.

    Returns (centers (E,3), inward normals (E,3), areas (E,)).
    """
    def axis(extent):
        n = max(1, int(math.ceil(extent / resolution - 1e-9)))
        edges = np.linspace(0.0, extent, n + 1)
        return 0.5 * (edges[:-1] + edges[1:]), np.diff(edges)

    xs, dxs = axis(room_length)
    ys, dys = axis(room_width)
    zs, dzs = axis(room_height)
    centers, normals, areas = [], [], []

    def add(wall_pts, wall_areas, normal):
        centers.append(wall_pts)
        areas.append(wall_areas)
        normals.append(np.tile(normal, (wall_pts.shape[0], 1)))

    gz, gx = np.meshgrid(zs, xs, indexing="ij")
    az, ax = np.meshgrid(dzs, dxs, indexing="ij")
    for y_wall, ny in ((0.0, 1.0), (room_width, -1.0)):
        pts = np.column_stack([gx.ravel(), np.full(gx.size, y_wall), gz.ravel()])
        add(pts, (az * ax).ravel(), np.array([0.0, ny, 0.0]))
    gz, gy = np.meshgrid(zs, ys, indexing="ij")
    az, ay = np.meshgrid(dzs, dys, indexing="ij")
    for x_wall, nx in ((0.0, 1.0), (room_length, -1.0)):
        pts = np.column_stack([np.full(gy.size, x_wall), gy.ravel(), gz.ravel()])
        add(pts, (az * ay).ravel(), np.array([nx, 0.0, 0.0]))
    return np.vstack(centers), np.vstack(normals), np.concatenate(areas)


def _nlos_gain(ap_pos, ue_pos, topology: "NetworkTopology", params: LiFiRadioParams,
               impl=None) -> np.ndarray:
    if params.wall_reflectivity == 0.0:
        return np.zeros((ap_pos.shape[0], ue_pos.shape[0]))
    centers, normals, areas = wall_elements(topology.room_length, topology.room_width,
                                            topology.room_height, params.nlos_grid_resolution)
    fn = impl or kernels.nlos_gain_matrix
    return fn(np.ascontiguousarray(ap_pos, dtype=np.float64),
              np.ascontiguousarray(ue_pos, dtype=np.float64),
              centers, normals, areas, params.lambertian_order, params.pd_area,
              params.wall_reflectivity, math.cos(math.radians(params.fov)),
              params.concentrator_gain, params.filter_gain)


def lifi_nlos_gain(ap_position, ue_position, topology: "NetworkTopology",
                   params: LiFiRadioParams) -> float:
    ap = np.asarray(ap_position, dtype=np.float64)[None, :]
    ue = np.asarray(ue_position, dtype=np.float64)[None, :]
    return float(_nlos_gain(ap, ue, topology, params)[0, 0])


# ---------------------------------------------------------------------------
# WiFi
# ---------------------------------------------------------------------------

def free_space_path_loss_db(distance, freq):
    return 20.0 * np.log10(4.0 * math.pi * np.asarray(distance) * freq / SPEED_OF_LIGHT)


def wifi_path_loss_db(distance, params: WiFiRadioParams):
    d = np.asarray(distance, dtype=np.float64)
    d_bp = params.breakpoint_distance
    beyond = (free_space_path_loss_db(d_bp, params.carrier_freq)
              + 10.0 * params.pathloss_exponent_after_bp * np.log10(np.maximum(d, d_bp) / d_bp))
    return np.where(d <= d_bp, free_space_path_loss_db(d, params.carrier_freq), beyond)


def _wifi_snr(distance, bandwidth: float, params: WiFiRadioParams):
    d = np.asarray(distance, dtype=np.float64)
    if np.any(d <= 0):
        raise ValueError("WiFi AP and UE are co-located")
    noise_dbm = params.noise_psd + 10.0 * math.log10(bandwidth) + params.noise_figure
    snr_db = params.tx_power - wifi_path_loss_db(d, params) - noise_dbm
    return 10.0 ** (snr_db / 10.0)


def wifi_snr(ap, ue_position, params: WiFiRadioParams) -> float:
    """Linear SNR of one WiFi link; ``ap`` is an ApDescriptor."""
    d = float(np.linalg.norm(np.asarray(ue_position, float) - np.asarray(ap.position, float)))
    return float(_wifi_snr(d, ap.bandwidth, params))


# ---------------------------------------------------------------------------
# whole-network matrices
# ---------------------------------------------------------------------------

def lifi_gain_matrix(topology: "NetworkTopology", ue_positions: np.ndarray,
                     include_nlos: bool | None = None) -> np.ndarray:
    """Total optical gain for every LiFi AP row (WiFi rows are zero)."""
    params = topology.lifi_params
    ue = np.asarray(ue_positions, dtype=np.float64).reshape(-1, 3)
    pos = topology.positions
    lifi = topology.lifi_indices
    gain = np.zeros((topology.n_aps, ue.shape[0]))
    gain[lifi] = _los_gain(pos[lifi], ue, params)
    if params.nlos_enabled if include_nlos is None else include_nlos:
        gain[lifi] += _nlos_gain(pos[lifi], ue, topology, params)
    return gain


def sinr_matrix(topology: "NetworkTopology", ue_positions: np.ndarray) -> np.ndarray:
    """Linear SINR, rows = APs, columns = UEs."""
    ue = np.asarray(ue_positions, dtype=np.float64).reshape(-1, 3)
    if ue.shape[0] < 1:
        raise ValueError("need at least one UE")
    lp = topology.lifi_params
    lifi = topology.lifi_indices
    bw = topology.bandwidths
    sinr = np.zeros((topology.n_aps, ue.shape[0]))

    gain = lifi_gain_matrix(topology, ue)[lifi]
    signal = (lp.responsivity * lp.optical_tx_power * gain) ** 2
    noise = lp.noise_psd * bw[lifi][:, None]
    if lp.interference_mode is InterferenceMode.CO_CHANNEL:
        interference = signal.sum(axis=0, keepdims=True) - signal
        sinr[lifi] = signal / (noise + interference)
    else:
        sinr[lifi] = signal / noise

    w = topology.wifi_index
    d = np.linalg.norm(ue - topology.positions[w][None, :], axis=1)
    sinr[w] = _wifi_snr(d, bw[w], topology.wifi_params)
    return sinr


def link_capacity(sinr, bandwidth, kind) -> np.ndarray | float:
    """Shannon-type capacity; LiFi uses half the band and the e/(2*pi) SINR factor.

    ``kind`` is an ApKind/str, or a boolean array (True = LiFi) broadcastable
    against ``sinr``.
    """
    s = np.asarray(sinr, dtype=np.float64)
    if np.any(s < 0):
        raise ValueError("SINR must be non-negative")
    b = np.asarray(bandwidth, dtype=np.float64)
    if isinstance(kind, (str, Enum)):
        is_lifi = str(getattr(kind, "value", kind)).lower() == "lifi"
    else:
        is_lifi = np.asarray(kind, dtype=bool)
    lifi_cap = 0.5 * b * np.log2(1.0 + (math.e / (2.0 * math.pi)) * s)
    wifi_cap = b * np.log2(1.0 + s)
    out = np.where(is_lifi, lifi_cap, wifi_cap)
    return float(out) if out.ndim == 0 else out


def channel_state(topology: "NetworkTopology", ue_positions: np.ndarray) -> ChannelState:
    sinr = sinr_matrix(topology, ue_positions)
    cap = link_capacity(sinr, topology.bandwidths[:, None], topology.is_lifi[:, None])
    return ChannelState(sinr=sinr, capacity=cap)
