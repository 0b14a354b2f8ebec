"""Proportional-fairness time-share allocation under a fixed association.

maximise   sum_j log( sum_i rho[i, j] * C[i, j] )
subject to sum_j rho[i, j] <= 1 per AP,  0 <= rho <= 1,  rho = 0 off-association.

The solver does Gauss-Seidel block ascent over APs. With the other APs
fixed, AP i faces max sum_j log(a_j + rho_j C_ij), whose maximiser is the
water-filling rule rho_j = clamp(1/nu - a_j / C_ij, 0, 1) with nu set so the
budget binds.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from hlwnet import kernels


@dataclass
class SolveReport:
    allocation: np.ndarray
    utility: float
    kkt_residual: float
    iterations: int
    converged: bool
    excluded_ues: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    history: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def rho(self) -> np.ndarray:
        return self.allocation


def _chi_of(assoc) -> np.ndarray:
    return np.asarray(getattr(assoc, "chi", assoc), dtype=bool)


def _active(capacity: np.ndarray, chi: np.ndarray):
    link = chi & (capacity > 0)
    ue = link.any(axis=0)
    return link & ue[None, :], ue


def equal_split(active_link: np.ndarray) -> np.ndarray:
    counts = active_link.sum(axis=1, keepdims=True)
    return np.where(active_link, 1.0 / np.maximum(counts, 1), 0.0)


def utility(capacity: np.ndarray, rho: np.ndarray, active_ue: np.ndarray | None = None) -> float:
    """Sum of log per-UE rates (nats); -inf if a counted UE gets nothing."""
    rates = np.einsum("ij,ij->j", rho, capacity)
    if active_ue is not None:
        rates = rates[active_ue]
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(rates)))


def solve_pf(capacity, assoc, tol: float = 1e-8, max_iters: int = 10_000,
             tol_kkt: float = 1e-6, impl=None, switch_after: int | None = 1000) -> SolveReport:
    """Maximise the PF utility by block-coordinate water-filling.

    UEs without any positive-capacity link are excluded from the objective
    and get all-zero coefficients; they are listed in ``excluded_ues``.
    Convergence needs both a per-sweep utility gain below ``tol`` and a KKT
    residual at most ``tol_kkt``.

    Gauss-Seidel ascent can crawl when APs are coupled through long chains of
    shared UEs. If it has not converged after ``switch_after`` sweeps, a
    log-barrier Newton stage moves to the optimum and water-filling sweeps
    resume from there to restore exact zeros. ``switch_after=None`` keeps
    pure block-coordinate ascent.
    """
    cap = np.ascontiguousarray(capacity, dtype=np.float64)
    chi = np.ascontiguousarray(_chi_of(assoc))
    if cap.shape != chi.shape:
        raise ValueError(f"capacity {cap.shape} and association {chi.shape} differ in shape")
    if np.any(cap < 0) or not np.all(np.isfinite(cap)):
        raise ValueError("capacities must be finite and non-negative")
    active_link, active_ue = _active(cap, chi)
    rho = equal_split(active_link)
    max_iters = max(int(max_iters), 1)
    history = np.zeros(max_iters)
    sweeps = impl or kernels.pf_sweeps
    first = max_iters if switch_after is None else min(max_iters, int(switch_after))
    iters, u, kkt, conv = sweeps(cap, chi, active_link, active_ue, rho,
                                 float(tol), float(tol_kkt), first, history)
    if not conv and iters < max_iters:
        cand = barrier_refine(cap, active_link, rho)
        if utility(cap, cand, active_ue) >= u:
            rho[:] = cand
        rest = np.zeros(max_iters - iters)
        more, u, kkt, conv = sweeps(cap, chi, active_link, active_ue, rho,
                                    float(tol), float(tol_kkt), max_iters - iters, rest)
        history[iters:iters + more] = rest[:more]
        iters += more
    return SolveReport(
        allocation=rho,
        utility=float(u),
        kkt_residual=float(kkt),
        iterations=int(iters),
        converged=bool(conv),
        excluded_ues=np.flatnonzero(~active_ue),
        history=history[:iters].copy(),
    )


def barrier_refine(cap, active_link, rho0, mu0: float = 1e-2, mu_min: float = 1e-13,
                   shrink: float = 0.1, max_newton: int = 50) -> np.ndarray:
    """Path-following Newton on the active links with a log barrier on rho >= 0.

    Budgets of APs with any active link are held tight (the objective is
    increasing in every coefficient). The returned point is interior, so
    coefficients that belong at zero are tiny but positive.
    """
    ap, ue = np.nonzero(active_link)
    n_l = ap.size
    if n_l == 0:
        return np.zeros_like(cap)
    aps, slot = np.unique(ap, return_inverse=True)
    n_b = aps.size
    counts = np.bincount(slot, minlength=n_b).astype(np.float64)
    x = rho0[ap, ue].astype(np.float64)
    load = np.bincount(slot, weights=x, minlength=n_b)
    x = 0.5 * x / np.where(load > 0, load, 1.0)[slot] + 0.5 / counts[slot]
    x /= np.bincount(slot, weights=x, minlength=n_b)[slot]

    n_u = cap.shape[1]
    M = np.zeros((n_u, n_l))
    M[ue, np.arange(n_l)] = cap[ap, ue]
    served = M.any(axis=1)
    M = M[served]
    B = np.zeros((n_b, n_l))
    B[slot, np.arange(n_l)] = 1.0
    K = np.zeros((n_l + n_b, n_l + n_b))
    K[:n_l, n_l:] = B.T
    K[n_l:, :n_l] = B
    rhs = np.zeros(n_l + n_b)

    def merit(z, mu):
        r = M @ z
        if np.any(r <= 0) or np.any(z <= 0):
            return -np.inf
        return float(np.sum(np.log(r)) + mu * np.sum(np.log(z)))

    mu = mu0
    while True:
        for _ in range(max_newton):
            inv = 1.0 / (M @ x)
            g = M.T @ inv + mu / x
            Mh = M * inv[:, None]
            H = -(Mh.T @ Mh)
            H[np.diag_indices(n_l)] -= mu / (x * x)
            K[:n_l, :n_l] = H
            rhs[:n_l] = -g
            d = np.linalg.solve(K, rhs)[:n_l]
            if -(d @ H @ d) < 1e-14:
                break
            neg = d < 0
            t = min(1.0, 0.99 * float(np.min(-x[neg] / d[neg]))) if neg.any() else 1.0
            f0 = merit(x, mu)
            slope = float(g @ d)
            while t > 1e-16 and merit(x + t * d, mu) < f0 + 0.25 * t * slope:
                t *= 0.5
            x = x + t * d
        if mu <= mu_min:
            break
        mu *= shrink
    rho = np.zeros_like(cap)
    rho[ap, ue] = x
    return rho


def kkt_residual(capacity, assoc, rho) -> float:
    """Largest violation of primal feasibility, complementarity and stationarity.

    Stationarity per AP: no UE that could receive more time (rho < 1) may
    have a higher marginal utility C_ij / R_j than a UE that could give time
    up (rho > 0). The gap is measured relative to the AP's largest marginal.
    """
    cap = np.ascontiguousarray(capacity, dtype=np.float64)
    chi = np.ascontiguousarray(_chi_of(assoc))
    active_link, _ = _active(cap, chi)
    return float(kernels.kkt_kernel(np.ascontiguousarray(rho, dtype=np.float64), cap, chi,
                                    active_link))


# ---------------------------------------------------------------------------
# grid-search oracle
# ---------------------------------------------------------------------------

MAX_EXHAUSTIVE = 2_000_000
_LEVELS = (10, 20, 100, 200, 1000, 2000, 10000)


def _compositions(total: int, parts: int) -> np.ndarray:
    """All non-negative integer vectors of length ``parts`` summing to ``total``."""
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    out = []
    for first in range(total + 1):
        rest = _compositions(total - first, parts - 1)
        out.append(np.column_stack([np.full(rest.shape[0], first), rest]))
    return np.vstack(out)


def _n_compositions(total: int, parts: int) -> int:
    return math.comb(total + parts - 1, parts - 1)


def _best_of_product(cands, maps, active_ue, chunk=250_000):
    """Evaluate every combination of per-AP candidate allocations.

    cands[i]: (n_i, k_i) fractions; maps[i]: (k_i, N_u) capacity rows.
    """
    contrib = [c @ m for c, m in zip(cands, maps)]  # (n_i, N_u)
    sizes = [c.shape[0] for c in contrib]
    total = int(np.prod(sizes))
    best_u, best_idx = -np.inf, None
    for start in range(0, total, chunk):
        flat = np.arange(start, min(total, start + chunk))
        idx = np.unravel_index(flat, sizes)
        rates = sum(contrib[i][idx[i]] for i in range(len(contrib)))
        with np.errstate(divide="ignore"):
            u = np.log(rates[:, active_ue]).sum(axis=1)
        k = int(np.argmax(u))
        if u[k] > best_u:
            best_u, best_idx = float(u[k]), tuple(int(ix[k]) for ix in idx)
    return best_u, best_idx, total


def _neighbourhood(point: np.ndarray, total: int, radius: int) -> np.ndarray:
    """Lattice points with the same total within ``radius`` steps of ``point``."""
    k = point.size
    if k == 1:
        return point[None, :]
    offsets = np.array(list(itertools.product(range(-radius, radius + 1), repeat=k - 1)))
    head = point[None, :-1] + offsets
    last = total - head.sum(axis=1, keepdims=True)
    pts = np.hstack([head, last])
    return pts[np.all((pts >= 0) & (pts <= total), axis=1)]


def brute_force_pf(capacity, assoc, grid_step: float = 0.001, radius: int = 3) -> SolveReport:
    """Grid-search oracle for tiny instances (N_a <= 3, N_u <= 3).

    Each AP's allocation ranges over the budget-tight simplex lattice with
    spacing ``grid_step`` (the objective is non-decreasing in every
    coefficient, so a slack budget is never strictly better). When the full
    product of per-AP lattices is small enough it is enumerated outright.
    Otherwise the search enumerates a coarse lattice exhaustively and then
    refines on nested lattices down to ``grid_step``, re-enumerating the
    joint neighbourhood of the incumbent until it stops moving.
    """
    cap = np.asarray(capacity, dtype=np.float64)
    chi = _chi_of(assoc)
    n_a, n_u = cap.shape
    if n_a > 3 or n_u > 3:
        raise ValueError("brute_force_pf is limited to N_a <= 3 and N_u <= 3")
    final = int(round(1.0 / grid_step))
    if final < 1 or not math.isclose(final * grid_step, 1.0, rel_tol=1e-9):
        raise ValueError("grid_step must divide 1")

    active_link, active_ue = _active(cap, chi)
    aps = [i for i in range(n_a) if active_link[i].any()]
    links = {i: np.flatnonzero(active_link[i]) for i in aps}
    maps = []
    for i in aps:
        m = np.zeros((links[i].size, n_u))
        m[np.arange(links[i].size), links[i]] = cap[i, links[i]]
        maps.append(m)

    def assemble(points, total):
        rho = np.zeros_like(cap)
        for i, p in zip(aps, points):
            rho[i, links[i]] = p / total
        return rho

    evaluations = 0
    if not aps:
        rho = np.zeros_like(cap)
        return SolveReport(rho, 0.0, 0.0, 0, True, np.flatnonzero(~active_ue))

    full = int(np.prod([_n_compositions(final, links[i].size) for i in aps]))
    if full <= MAX_EXHAUSTIVE:
        cands = [_compositions(final, links[i].size) for i in aps]
        best_u, idx, evaluations = _best_of_product(
            [c / final for c in cands], maps, active_ue)
        points = [cands[a][idx[a]] for a in range(len(aps))]
        total = final
    else:
        levels = [lv for lv in _LEVELS if lv < final and final % lv == 0]
        total = levels[0]
        cands = [_compositions(total, links[i].size) for i in aps]
        best_u, idx, evaluations = _best_of_product([c / total for c in cands], maps, active_ue)
        points = [cands[a][idx[a]] for a in range(len(aps))]
        for nxt in levels[1:] + [final]:
            points = [p * (nxt // total) for p in points]
            total = nxt
            while True:
                cands = [_neighbourhood(p, total, radius) for p in points]
                u, idx, n_eval = _best_of_product([c / total for c in cands], maps, active_ue)
                evaluations += n_eval
                new_points = [cands[a][idx[a]] for a in range(len(aps))]
                moved = any(not np.array_equal(p, q) for p, q in zip(points, new_points))
                points = new_points
                if u <= best_u or not moved:
                    best_u = max(best_u, u)
                    break
                best_u = u

    rho = assemble(points, total)
    return SolveReport(
        allocation=rho,
        utility=utility(cap, rho, active_ue),
        kkt_residual=kkt_residual(cap, chi, rho),
        iterations=evaluations,
        converged=True,
        excluded_ues=np.flatnonzero(~active_ue),
    )
