"""Numba vs pure-numpy kernels: PF water-filling sweeps and the NLoS wall sum.

    python benchmarks/bench_kernels.py [--reps 5] [--csv out.csv]

Both back-ends run in the same process through kernels.IMPLEMENTATIONS, so
HLWNET_DISABLE_NUMBA does not need to be toggled. Results are checked for
agreement before timings are reported.
"""
import argparse
import dataclasses
import time

import numpy as np

from hlwnet import kernels
from hlwnet.assoc import mptcp_association
from hlwnet.channel import _nlos_gain, channel_state
from hlwnet.env import build_topology
from hlwnet.evalx import random_drop
from hlwnet.pf_solver import _active, equal_split


def best_of(fn, reps):
    fn()  # warm-up / jit compile
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def pf_case(topo, n_ue, n_f, seed):
    pos = random_drop(topo, n_ue, np.random.default_rng(seed))
    ch = channel_state(topo, pos)
    chi = mptcp_association(ch, topo, n_f).chi
    cap = np.ascontiguousarray(ch.capacity)
    link, ue = _active(cap, chi)

    def run(impl):
        rho = equal_split(link)
        hist = np.zeros(10_000)
        out = kernels.IMPLEMENTATIONS[impl]["pf_sweeps"](cap, np.ascontiguousarray(chi), link, ue,
                                                         rho, 1e-8, 1e-6, 10_000, hist)
        return rho, out
    return run


def nlos_case(topo, n_ue, resolution):
    params = dataclasses.replace(topo.lifi_params, nlos_grid_resolution=resolution)
    ap = topo.positions[topo.is_lifi]
    ue = random_drop(topo, n_ue, np.random.default_rng(0))
    return lambda impl: _nlos_gain(ap, ue, topo, params,
                                   impl=kernels.IMPLEMENTATIONS[impl]["nlos"])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--csv", help="also write results here")
    args = ap.parse_args()
    topo = build_topology()
    rows = []

    for n_ue, n_f in [(10, 3), (30, 3), (50, 2), (50, 4)]:
        run = pf_case(topo, n_ue, n_f, seed=n_ue * 10 + n_f)
        (r_nb, o_nb), (r_np, o_np) = run("numba"), run("numpy")
        assert abs(o_nb[1] - o_np[1]) < 1e-7, "back-ends disagree on utility"
        t_nb = best_of(lambda: run("numba"), args.reps)
        t_np = best_of(lambda: run("numpy"), args.reps)
        rows.append(("pf_sweeps", f"n_ue={n_ue} n_f={n_f} sweeps={o_nb[0]}", t_nb, t_np,
                     float(np.max(np.abs(r_nb - r_np)))))

    for n_ue, res in [(10, 0.25), (30, 0.25), (30, 0.1)]:
        run = nlos_case(topo, n_ue, res)
        g_nb, g_np = run("numba"), run("numpy")
        rel = float(np.max(np.abs(g_nb - g_np)) / np.max(np.abs(g_np)))
        t_nb = best_of(lambda: run("numba"), args.reps)
        t_np = best_of(lambda: run("numpy"), args.reps)
        rows.append(("nlos_gain", f"n_ue={n_ue} res={res}m", t_nb, t_np, rel))

    print(f"{'kernel':10s} {'case':32s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s} "
          f"{'max diff':>9s}")
    for k, case, t_nb, t_np, diff in rows:
        print(f"{k:10s} {case:32s} {t_nb * 1e3:10.3f} {t_np * 1e3:10.3f} {t_np / t_nb:8.1f} "
              f"{diff:9.1e}")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("kernel,case,numba_ms,numpy_ms,speedup,max_diff\n")
            for k, case, t_nb, t_np, diff in rows:
                fh.write(f"{k},{case},{t_nb * 1e3:.6g},{t_np * 1e3:.6g},{t_np / t_nb:.4g},"
                         f"{diff:.3g}\n")


if __name__ == "__main__":
    main()
