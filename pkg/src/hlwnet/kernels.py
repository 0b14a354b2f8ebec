"""Hot numeric kernels, each with a numba loop version and a numpy version.

The module-level names (``nlos_gain_matrix``, ``pf_sweeps``) point at the
numba kernels unless numba is missing or ``HLWNET_DISABLE_NUMBA`` is set.
Both variants stay importable for benchmarking and cross-checking.
"""
import math

import numpy as np

from hlwnet._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# first-order reflection gain
# ---------------------------------------------------------------------------


@njit(cache=True)
def _nlos_gain_matrix_nb(ap_pos, ue_pos, centers, normals, areas, m, pd_area,
                         reflectivity, cos_fov, conc_gain, filter_gain):
    n_ap = ap_pos.shape[0]
    n_ue = ue_pos.shape[0]
    n_el = centers.shape[0]
    coef = (m + 1.0) * pd_area * reflectivity * filter_gain * conc_gain / (2.0 * math.pi ** 2)
    # the wall element factorises the path into an AP hop and a UE hop
    hop1 = np.zeros((n_ap, n_el))
    for a in range(n_ap):
        for e in range(n_el):
            v1x = centers[e, 0] - ap_pos[a, 0]
            v1y = centers[e, 1] - ap_pos[a, 1]
            v1z = centers[e, 2] - ap_pos[a, 2]
            d1sq = v1x * v1x + v1y * v1y + v1z * v1z
            d1 = math.sqrt(d1sq)
            cos_phi = -v1z / d1
            cos_alpha = -(v1x * normals[e, 0] + v1y * normals[e, 1] + v1z * normals[e, 2]) / d1
            if cos_phi > 0.0 and cos_alpha > 0.0:
                hop1[a, e] = areas[e] * cos_phi ** m * cos_alpha / d1sq
    hop2 = np.zeros((n_ue, n_el))
    for u in range(n_ue):
        for e in range(n_el):
            v2x = ue_pos[u, 0] - centers[e, 0]
            v2y = ue_pos[u, 1] - centers[e, 1]
            v2z = ue_pos[u, 2] - centers[e, 2]
            d2sq = v2x * v2x + v2y * v2y + v2z * v2z
            d2 = math.sqrt(d2sq)
            cos_beta = (v2x * normals[e, 0] + v2y * normals[e, 1] + v2z * normals[e, 2]) / d2
            cos_psi = -v2z / d2
            if cos_beta > 0.0 and cos_psi > 0.0 and cos_psi >= cos_fov:
                hop2[u, e] = cos_beta * cos_psi / d2sq
    out = np.zeros((n_ap, n_ue))
    for a in range(n_ap):
        for u in range(n_ue):
            acc = 0.0
            for e in range(n_el):
                acc += hop1[a, e] * hop2[u, e]
            out[a, u] = coef * acc
    return out


def _nlos_gain_matrix_np(ap_pos, ue_pos, centers, normals, areas, m, pd_area,
                         reflectivity, cos_fov, conc_gain, filter_gain):
    coef = (m + 1.0) * pd_area * reflectivity * filter_gain * conc_gain / (2.0 * np.pi ** 2)
    # (A, E, 3) and (U, E, 3)
    v1 = centers[None, :, :] - ap_pos[:, None, :]
    d1sq = np.einsum("aek,aek->ae", v1, v1)
    d1 = np.sqrt(d1sq)
    cos_phi = -v1[..., 2] / d1
    cos_alpha = -np.einsum("aek,ek->ae", v1, normals) / d1
    v2 = ue_pos[:, None, :] - centers[None, :, :]
    d2sq = np.einsum("uek,uek->ue", v2, v2)
    d2 = np.sqrt(d2sq)
    cos_beta = np.einsum("uek,ek->ue", v2, normals) / d2
    cos_psi = -v2[..., 2] / d2

    ok1 = (cos_phi > 0) & (cos_alpha > 0)
    ok2 = (cos_beta > 0) & (cos_psi > 0) & (cos_psi >= cos_fov)
    hop1 = np.where(ok1, np.abs(cos_phi) ** m * cos_alpha / d1sq, 0.0)
    hop2 = np.where(ok2, cos_beta * cos_psi / d2sq, 0.0)
    return coef * (hop1 * areas[None, :]) @ hop2.T


# ---------------------------------------------------------------------------
# proportional-fairness block-coordinate ascent
# ---------------------------------------------------------------------------

BISECT_ITERS = 100
BISECT_WIDTH = 1e-12


@njit(cache=True)
def _waterfill_nb(a, c, out):
    """Maximise sum_j log(a_j + rho_j c_j) s.t. sum rho <= 1, 0 <= rho <= 1."""
    n = a.shape[0]
    if n == 0:
        return
    if n == 1:
        out[0] = 1.0
        return
    r = a / c
    rmin = r.min()
    # f(nu) = sum clamp(1/nu - r, 0, 1) is decreasing; f(lo) >= 1 >= f(hi)
    lo = 1.0 / (1.0 + rmin)
    hi = float(n)
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        level = 1.0 / mid
        s = 0.0
        for j in range(n):
            v = level - r[j]
            if v > 1.0:
                s += 1.0
            elif v > 0.0:
                s += v
        if s > 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < BISECT_WIDTH:
            break
    level = 2.0 / (lo + hi)

    # exact level on the active set found by bisection
    n_int = 0
    n_one = 0
    s_r = 0.0
    for j in range(n):
        v = level - r[j]
        if v >= 1.0:
            n_one += 1
        elif v > 0.0:
            n_int += 1
            s_r += r[j]
    if n_int > 0:
        exact = (1.0 - n_one + s_r) / n_int
        consistent = True
        for j in range(n):
            v_old = level - r[j]
            v_new = exact - r[j]
            if v_old >= 1.0:
                if v_new < 1.0:
                    consistent = False
            elif v_old > 0.0:
                if v_new <= 0.0 or v_new >= 1.0:
                    consistent = False
            elif v_new > 0.0:
                consistent = False
        if consistent:
            level = exact
    for j in range(n):
        v = level - r[j]
        out[j] = 1.0 if v >= 1.0 else (v if v > 0.0 else 0.0)


@njit(cache=True)
def _utility_nb(rho, cap, active_ue):
    n_ap, n_ue = cap.shape
    u = 0.0
    for j in range(n_ue):
        if not active_ue[j]:
            continue
        rj = 0.0
        for i in range(n_ap):
            rj += rho[i, j] * cap[i, j]
        u += math.log(rj) if rj > 0.0 else -math.inf
    return u


@njit(cache=True)
def _kkt_nb(rho, cap, chi, active_link):
    n_ap, n_ue = cap.shape
    rates = np.zeros(n_ue)
    for j in range(n_ue):
        for i in range(n_ap):
            rates[j] += rho[i, j] * cap[i, j]
    worst = 0.0
    for i in range(n_ap):
        load = 0.0
        g_max = 0.0
        up = -math.inf
        down = math.inf
        can_grow = False
        for j in range(n_ue):
            x = rho[i, j]
            load += x
            if x < 0.0:
                worst = max(worst, -x)
            if x > 1.0:
                worst = max(worst, x - 1.0)
            if not chi[i, j]:
                worst = max(worst, abs(x))
                continue
            if not active_link[i, j]:
                continue
            g = cap[i, j] / rates[j] if rates[j] > 0.0 else math.inf
            g_max = max(g_max, g)
            if x < 1.0:
                can_grow = True
                up = max(up, g)
            if x > 0.0:
                down = min(down, g)
        worst = max(worst, load - 1.0)
        if can_grow:
            worst = max(worst, 1.0 - load)
        if g_max > 0.0 and up > down:
            if math.isinf(up):
                return math.inf
            worst = max(worst, (up - down) / g_max)
    return worst


@njit(cache=True)
def _pf_sweeps_nb(cap, chi, active_link, active_ue, rho, tol_utility, tol_kkt,
                  max_iters, history):
    n_ap, n_ue = cap.shape
    rates = np.zeros(n_ue)
    for j in range(n_ue):
        for i in range(n_ap):
            rates[j] += rho[i, j] * cap[i, j]
    idx = np.empty(n_ue, dtype=np.int64)
    a = np.empty(n_ue)
    c = np.empty(n_ue)
    out = np.empty(n_ue)
    u_prev = _utility_nb(rho, cap, active_ue)
    kkt = math.inf
    for it in range(max_iters):
        for i in range(n_ap):
            n = 0
            for j in range(n_ue):
                if active_link[i, j]:
                    idx[n] = j
                    a[n] = rates[j] - rho[i, j] * cap[i, j]
                    if a[n] < 0.0:
                        a[n] = 0.0
                    c[n] = cap[i, j]
                    n += 1
            if n == 0:
                continue
            _waterfill_nb(a[:n], c[:n], out[:n])
            for k in range(n):
                j = idx[k]
                rho[i, j] = out[k]
                rates[j] = a[k] + out[k] * c[k]
        u = _utility_nb(rho, cap, active_ue)
        history[it] = u
        kkt = _kkt_nb(rho, cap, chi, active_link)
        if u - u_prev < tol_utility and kkt <= tol_kkt:
            return it + 1, u, kkt, True
        u_prev = u
    return max_iters, u_prev, kkt, False


def _waterfill_np(a, c):
    """Exact water level by scanning the breakpoints of the piecewise-linear budget curve."""
    n = a.shape[0]
    if n == 1:
        return np.ones(1)
    r = a / c
    brk = np.unique(np.concatenate([r, r + 1.0]))
    load = np.clip(brk[:, None] - r[None, :], 0.0, 1.0).sum(axis=1)
    k = int(np.searchsorted(load, 1.0))
    if k == 0:
        level = brk[0]
    elif k >= brk.size:
        level = brk[-1]
    else:
        l0, l1 = load[k - 1], load[k]
        level = brk[k - 1] + (1.0 - l0) * (brk[k] - brk[k - 1]) / (l1 - l0)
    return np.clip(level - r, 0.0, 1.0)


def _utility_np(rho, cap, active_ue):
    rates = np.einsum("ij,ij->j", rho, cap)[active_ue]
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(rates)))


def _kkt_np(rho, cap, chi, active_link):
    rates = np.einsum("ij,ij->j", rho, cap)
    worst = 0.0
    worst = max(worst, float(np.max(-rho, initial=0.0)), float(np.max(rho - 1.0, initial=0.0)))
    worst = max(worst, float(np.max(np.abs(rho[~chi]), initial=0.0)))
    load = rho.sum(axis=1)
    worst = max(worst, float(np.max(load - 1.0, initial=0.0)))
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(active_link, cap / rates[None, :], np.nan)
    for i in range(cap.shape[0]):
        act = active_link[i]
        if not act.any():
            continue
        gi, xi = g[i, act], rho[i, act]
        grow = xi < 1.0
        if grow.any():
            worst = max(worst, 1.0 - load[i])
        shrink = xi > 0.0
        if grow.any() and shrink.any():
            up, down = gi[grow].max(), gi[shrink].min()
            if up > down:
                if np.isinf(up):
                    return float("inf")
                worst = max(worst, float((up - down) / gi.max()))
    return worst


def _pf_sweeps_np(cap, chi, active_link, active_ue, rho, tol_utility, tol_kkt,
                  max_iters, history):
    rates = np.einsum("ij,ij->j", rho, cap)
    links = [np.flatnonzero(active_link[i]) for i in range(cap.shape[0])]
    u_prev = _utility_np(rho, cap, active_ue)
    kkt = float("inf")
    for it in range(max_iters):
        for i, js in enumerate(links):
            if js.size == 0:
                continue
            a = np.maximum(rates[js] - rho[i, js] * cap[i, js], 0.0)
            x = _waterfill_np(a, cap[i, js])
            rho[i, js] = x
            rates[js] = a + x * cap[i, js]
        u = _utility_np(rho, cap, active_ue)
        history[it] = u
        kkt = _kkt_np(rho, cap, chi, active_link)
        if u - u_prev < tol_utility and kkt <= tol_kkt:
            return it + 1, u, kkt, True
        u_prev = u
    return max_iters, u_prev, kkt, False


if USE_NUMBA:
    nlos_gain_matrix = _nlos_gain_matrix_nb
    pf_sweeps = _pf_sweeps_nb
    kkt_kernel = _kkt_nb
else:
    nlos_gain_matrix = _nlos_gain_matrix_np
    pf_sweeps = _pf_sweeps_np
    kkt_kernel = _kkt_np

IMPLEMENTATIONS = {
    "numba": {"nlos": _nlos_gain_matrix_nb, "pf_sweeps": _pf_sweeps_nb, "kkt": _kkt_nb},
    "numpy": {"nlos": _nlos_gain_matrix_np, "pf_sweeps": _pf_sweeps_np, "kkt": _kkt_np},
}
