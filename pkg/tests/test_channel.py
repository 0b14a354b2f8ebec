import dataclasses
import math

import numpy as np
import pytest

from hlwnet.channel import (InterferenceMode, LiFiRadioParams, WiFiRadioParams, channel_state,
                            free_space_path_loss_db, lifi_los_gain, lifi_nlos_gain, link_capacity,
                            sinr_matrix, wifi_path_loss_db, wifi_snr)
from hlwnet.env import ApDescriptor, ApKind, TopologyConfig, build_topology


def hand_params():
    return LiFiRadioParams(half_intensity_angle=60.0, pd_area=1e-4, filter_gain=1.0,
                           concentrator_index=1.5, fov=80.0)


def test_los_under_ap_hand_value():
    # m = 1: (2 A / (2 pi d^2)) * g, g = 2.25 / sin^2(80 deg)
    h = lifi_los_gain((0, 0, 2.5), (0, 0, 0), hand_params())
    g = 1.5 ** 2 / math.sin(math.radians(80)) ** 2
    assert h == pytest.approx(2e-4 / (2 * math.pi * 6.25) * g, rel=1e-12)
    assert h == pytest.approx(1.1815e-5, rel=1e-3)


def test_los_inverse_square():
    p = hand_params()
    assert lifi_los_gain((0, 0, 2), (0, 0, 0), p) / lifi_los_gain((0, 0, 4), (0, 0, 0), p) \
        == pytest.approx(4.0)


def test_los_fov_cutoff():
    p = dataclasses.replace(hand_params(), fov=30.0)
    assert lifi_los_gain((0, 0, 1), (2, 0, 0), p) == 0.0
    assert lifi_los_gain((0, 0, 1), (0.1, 0, 0), p) > 0.0


def test_los_errors():
    with pytest.raises(ValueError):
        lifi_los_gain((0, 0, 1), (0, 0, 1), hand_params())
    with pytest.raises(ValueError):
        lifi_los_gain((0, 0, 0), (0, 0, 1), hand_params())


def test_nlos_zero_reflectivity(topo):
    p = dataclasses.replace(topo.lifi_params, wall_reflectivity=0.0)
    assert lifi_nlos_gain((3.75, 3.75, 3), (5, 5, 0.5), topo, p) == 0.0


def test_nlos_grid_convergence_and_below_los(topo):
    ap, ue = (6.25, 6.25, 3.0), (6.25, 6.25, 0.5)
    coarse = lifi_nlos_gain(ap, ue, topo, topo.lifi_params)
    fine = lifi_nlos_gain(ap, ue, topo,
                          dataclasses.replace(topo.lifi_params, nlos_grid_resolution=0.125))
    assert coarse > 0
    assert abs(coarse - fine) / fine < 0.05
    assert coarse < lifi_los_gain(ap, ue, topo.lifi_params)


def test_nlos_scales_with_reflectivity(topo):
    ap, ue = (3.75, 3.75, 3.0), (1.0, 8.0, 0.5)
    half = dataclasses.replace(topo.lifi_params, wall_reflectivity=0.4)
    assert lifi_nlos_gain(ap, ue, topo, half) == pytest.approx(
        0.5 * lifi_nlos_gain(ap, ue, topo, topo.lifi_params), rel=1e-12)


def wifi_ap(pos=(0, 0, 0)):
    return ApDescriptor(ApKind.WIFI, pos, 20e6)


def test_wifi_snr_hand_value():
    # FSPL(3 m, 2.4 GHz) = 49.595 dB, noise = -174 + 73.010 + 10 dBm
    snr_db = 10 * math.log10(wifi_snr(wifi_ap(), (3, 0, 0), WiFiRadioParams()))
    assert snr_db == pytest.approx(20 - 49.595 + 90.990, abs=0.01)
    assert snr_db == pytest.approx(61.40, abs=0.01)


def test_wifi_doubling_in_free_space():
    p = WiFiRadioParams()
    a = wifi_snr(wifi_ap(), (2, 0, 0), p)
    b = wifi_snr(wifi_ap(), (4, 0, 0), p)
    assert 10 * math.log10(a / b) == pytest.approx(20 * math.log10(2), abs=1e-9)


def test_wifi_breakpoint_extra_loss():
    p = WiFiRadioParams()
    extra = wifi_path_loss_db(20.0, p) - free_space_path_loss_db(10.0, p.carrier_freq)
    assert extra == pytest.approx(35 * math.log10(2), abs=1e-9)
    assert 35 * math.log10(2) == pytest.approx(10.54, abs=0.005)


def test_capacity_values():
    assert link_capacity(0.0, 20e6, "lifi") == 0.0
    assert link_capacity(0.0, 20e6, "wifi") == 0.0
    assert link_capacity(100.0, 20e6, ApKind.LIFI) == pytest.approx(
        10e6 * math.log2(1 + math.e / (2 * math.pi) * 100))
    assert link_capacity(100.0, 20e6, "lifi") / 1e6 == pytest.approx(54.68, abs=0.01)
    assert link_capacity(31.623, 20e6, "wifi") / 1e6 == pytest.approx(100.56, abs=0.01)
    with pytest.raises(ValueError):
        link_capacity(-1.0, 20e6, "wifi")


def test_capacity_monotone():
    s = np.linspace(0, 1e4, 1001)
    for kind in ("lifi", "wifi"):
        c = link_capacity(s, 20e6, kind)
        assert np.all(np.diff(c) > 0)


def test_channel_matrix_invariants(topo, rng):
    ue = np.column_stack([rng.uniform(0, 10, (25, 2)), np.full(25, 0.5)])
    ch = channel_state(topo, ue)
    assert ch.sinr.shape == ch.capacity.shape == (17, 25)
    assert np.all(ch.sinr >= 0) and np.all(ch.capacity >= 0)
    assert np.array_equal(ch.capacity == 0, ch.sinr == 0)
    assert np.array_equal(sinr_matrix(topo, ue), sinr_matrix(topo, ue))


def test_mirror_symmetry(topo):
    a = sinr_matrix(topo, np.array([[2.0, 3.0, 0.5]]))[topo.lifi_indices, 0].reshape(4, 4)
    b = sinr_matrix(topo, np.array([[8.0, 3.0, 0.5]]))[topo.lifi_indices, 0].reshape(4, 4)
    np.testing.assert_allclose(a, b[:, ::-1], rtol=1e-12)


def co_channel(cfg=TopologyConfig()):
    return dataclasses.replace(cfg, lifi=dataclasses.replace(
        cfg.lifi, interference_mode=InterferenceMode.CO_CHANNEL))


def test_co_channel_never_exceeds_wdm(topo, rng):
    ue = np.column_stack([rng.uniform(0, 10, (20, 2)), np.full(20, 0.5)])
    assert np.all(sinr_matrix(build_topology(co_channel()), ue) <= sinr_matrix(topo, ue))


def test_single_ap_modes_agree():
    cfg = TopologyConfig(grid_n=1)
    ue = np.array([[4.0, 6.0, 0.5], [5.0, 5.0, 0.5]])
    assert np.array_equal(sinr_matrix(build_topology(cfg), ue),
                          sinr_matrix(build_topology(co_channel(cfg)), ue))


def test_outside_all_fov():
    cfg = TopologyConfig(grid_n=1, lifi=LiFiRadioParams(fov=20.0))
    t = build_topology(cfg)
    s = sinr_matrix(t, np.array([[0.2, 0.2, 0.5]]))
    assert np.all(s[t.lifi_indices] == 0) and s[t.wifi_index, 0] > 0


def test_nlos_raises_sinr(topo):
    cfg = TopologyConfig(lifi=LiFiRadioParams(nlos_enabled=True))
    ue = np.array([[5.0, 5.0, 0.5], [1.0, 9.0, 0.5]])
    lifi = topo.lifi_indices
    assert np.all(sinr_matrix(build_topology(cfg), ue)[lifi] >= sinr_matrix(topo, ue)[lifi])
