import math

import numpy as np
import pytest

from hlwnet.assoc import Association, mptcp_association, sss_association
from hlwnet.channel import channel_state
from hlwnet.evalx import (CSV_COLUMNS, evaluate_drop, evaluate_methods, heuristic_equal_share,
                          inference_callable, jain_index, network_throughput, random_drop,
                          sss_tcp_allocate, subflow_utility, time_inference, ue_rates,
                          ue_throughput, write_metrics_csv)
from hlwnet.models import build_model
from hlwnet.pf_solver import solve_pf


def test_jain_values():
    assert jain_index([3.0, 3.0, 3.0]) == 1.0
    assert jain_index([1, 0, 0, 0]) == 0.25
    assert jain_index([1, 2, 3]) == pytest.approx(6 / 7, abs=1e-12)
    for bad in ([], [0, 0], [1, -1]):
        with pytest.raises(ValueError):
            jain_index(bad)


def test_jain_bounds_and_scale(rng):
    for _ in range(50):
        x = rng.random(int(rng.integers(1, 20)))
        j = jain_index(x)
        assert 1 / x.size - 1e-12 <= j <= 1 + 1e-12
        assert jain_index(7.5 * x) == pytest.approx(j, rel=1e-12)


def test_ue_throughput_example():
    chi = np.ones((2, 1), dtype=bool)
    assert ue_throughput([[0.5], [0.25]], [[100.0], [200.0]], chi, 0) == 100.0
    assert ue_throughput([[0.0], [0.0]], [[100.0], [200.0]], chi, 0) == 0.0


def test_network_throughput_two_paths(rng):
    rho, cap = rng.random((5, 8)), rng.random((5, 8)) * 1e8
    chi = rng.random((5, 8)) < 0.6
    direct = sum(ue_throughput(rho, cap, chi, j) for j in range(8))
    assert network_throughput(rho, cap, chi) == pytest.approx(direct, rel=1e-12)
    assert network_throughput(3 * rho / 3, 2 * cap, chi) == pytest.approx(2 * direct)


def test_heuristic_equal_share_examples():
    chi = np.array([[1, 1, 1, 1], [0, 1, 0, 0]], dtype=bool)
    rho = heuristic_equal_share(Association(chi, 1))
    np.testing.assert_array_equal(rho[0], 0.25)
    assert rho[1, 1] == 1.0


def test_heuristic_maximises_subflow_utility(rng):
    chi = rng.random((4, 6)) < 0.6
    chi[0] = True
    cap = rng.uniform(10, 500, (4, 6))
    best = subflow_utility(heuristic_equal_share(chi), cap, chi)
    for _ in range(1000):
        w = np.where(chi, rng.random((4, 6)), 0.0)
        w /= w.sum(1, keepdims=True)
        assert subflow_utility(w, cap, chi) <= best + 1e-12


def test_sss_closed_form_matches_solver(topo, rng):
    for n_ue in (2, 15, 40):
        ch = channel_state(topo, random_drop(topo, n_ue, rng))
        assoc, rho = sss_tcp_allocate(ch, topo)
        np.testing.assert_allclose(rho, solve_pf(ch.capacity, assoc).allocation, atol=1e-9)
    same = np.array([[5.0, 5.1], [1.0, 1.0]])
    from hlwnet.channel import ChannelState
    _, rho = sss_tcp_allocate(ChannelState(same, same))
    np.testing.assert_array_equal(rho[0], [0.5, 0.5])


def test_drop_orderings(topo, rng):
    models = {k: (m, m.init_params(rng)) for k in ("tcnn", "dnn")
              for m in [build_model(k, 17, 12, 3)]}
    for _ in range(3):
        res = evaluate_drop(topo, random_drop(topo, 12, rng), 3,
                            ["optimizer", "tcnn", "dnn", "heuristic", "sss"], models)
        for m, r in res.items():
            assert r.utility <= res["optimizer"].utility + 1e-9
            assert np.all(r.rho.sum(1) <= 1 + 1e-9) and np.all(r.rho >= 0)
            assert r.throughput == pytest.approx(r.rates.sum())


def test_harness_rows_and_skip(topo, caplog):
    rows = evaluate_methods(topo, ["optimizer", "tcnn", "sss"], [5], [2, 3], episodes=2,
                            seeds=[0, 1])
    assert {r.method for r in rows} == {"optimizer", "sss"}
    assert len(rows) == 8 and all(r.n_drops == 2 for r in rows)
    assert "no tcnn checkpoint" in caplog.text
    again = evaluate_methods(topo, ["optimizer", "sss"], [5], [2, 3], episodes=2, seeds=[0, 1])
    assert [r.throughput_mbps for r in rows] == [r.throughput_mbps for r in again]


def test_latency_harness(topo):
    lat = time_inference(lambda: sum(range(100)), warmup=5, repetitions=50)
    assert lat.samples == 50 and 0 < lat.median_us <= lat.p95_us
    pos = random_drop(topo, 10, np.random.default_rng(0))
    models = {k: (m, m.init_params(np.random.default_rng(0)))
              for k in ("tcnn", "dnn") for m in [build_model(k, 17, 10, 3)]}
    units = {m: inference_callable(m, topo, pos, 3, models)[1]
             for m in ("optimizer", "tcnn", "dnn", "heuristic", "sss")}
    assert units == {"optimizer": "network", "tcnn": "target", "dnn": "network",
                     "heuristic": "network", "sss": "network"}
    fn, _ = inference_callable("tcnn", topo, pos, 3, models)
    assert fn().shape == (1, 3)


def test_metrics_csv(tmp_path, topo):
    rows = evaluate_methods(topo, ["optimizer"], [4], [2], episodes=1, seeds=[0])
    path = tmp_path / "m.csv"
    write_metrics_csv(path, rows, "d1g")
    lines = path.read_text().splitlines()
    assert lines[0] == "# config_digest=d1g" and lines[1] == ",".join(CSV_COLUMNS)
    cells = lines[2].split(",")
    assert cells[:4] == ["optimizer", "4", "2", "0"] and cells[-2:] == ["", ""]
    assert math.isclose(float(cells[4]), rows[0].throughput_mbps)
