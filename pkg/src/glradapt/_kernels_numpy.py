"""Vectorised numpy Monte Carlo path kernels.

Each kernel simulates ``reps`` adaptive-trial paths for one model family and
returns four (looks, reps) arrays: cumulative per-arm sample size, effect
estimate, GLR against u0 and GLR against the futility reference.  Stage
sizes follow the design rule

    n_next = lo ∨ (hi ∧ ⌈(1+ρ)·n_est − 1e-12⌉),
    n_est  = min(la / i0, lat / i_fut),  i_j = GLR_j / n,

with (lo, hi) = (m, M) after the first look, (n, M') after the second look
of a four-stage design, and the final size fixed at the cap.  Thresholds
never enter: sizes depend only on the data, so one simulation serves every
threshold query.

The numba twin (_kernels_numba) implements the same arithmetic with inline
scalar RNG.  Keep expressions textually in sync between the two modules:
uniform/integer draws match bit for bit, and identical expression shapes
keep float results equal up to the ulp-level libm-vs-SIMD log difference
(see rng.py).
"""

from __future__ import annotations

import math

import numpy as np

from . import rng


def _next_sizes(g0: np.ndarray, g1: np.ndarray, n_f: np.ndarray, lo, hi: int,
                la: float, lat: float, rho: float) -> np.ndarray:
    i0 = g0 / n_f
    i1 = g1 / n_f
    t0 = np.where(i0 > 1e-300, la / np.maximum(i0, 1e-300), np.inf)
    t1 = np.where(i1 > 1e-300, lat / np.maximum(i1, 1e-300), np.inf)
    nest = np.minimum(t0, t1)
    raw = np.where(np.isfinite(nest), np.ceil((1.0 + rho) * nest - 1e-12), float(hi))
    return np.maximum(lo, np.minimum(float(hi), raw)).astype(np.int64)


def _alloc(looks: int, reps: int):
    n = np.empty((looks, reps), dtype=np.int64)
    uh = np.empty((looks, reps))
    g0 = np.empty((looks, reps))
    g1 = np.empty((looks, reps))
    return n, uh, g0, g1


def _transition(i: int, looks: int, g0_i, g1_i, n_cur, n_f, m, M, Mp, Mt, la, lat, rho):
    if i == 0:
        return _next_sizes(g0_i, g1_i, n_f, float(m), M, la, lat, rho)
    if looks == 4 and i == 1:
        return _next_sizes(g0_i, g1_i, n_f, n_f, Mp, la, lat, rho)
    return np.full(len(n_cur), Mt, dtype=np.int64)


def gaussian_paths(key: int, reps: int, looks: int, m: int, M: int, Mp: int, Mt: int,
                   u: float, v_eff: float, u0: float, u_fut: float,
                   la: float, lat: float, rho: float):
    """Gaussian effect process: û ~ mean u, variance v_eff/n; one draw per look."""
    n, uh, g0, g1 = _alloc(looks, reps)
    ridx = np.arange(reps, dtype=np.uint64) * np.uint64(8)
    n_cur = np.full(reps, m, dtype=np.int64)
    S = m * u + math.sqrt(m * v_eff) * rng.gaussian_array(key, ridx)
    for i in range(looks):
        n_f = n_cur.astype(np.float64)
        est = S / n_f
        n[i] = n_cur
        uh[i] = est
        g0[i] = n_f * (est - u0) * (est - u0) / (2.0 * v_eff)
        g1[i] = n_f * (est - u_fut) * (est - u_fut) / (2.0 * v_eff)
        if i == looks - 1:
            break
        nxt = _transition(i, looks, g0[i], g1[i], n_cur, n_f, m, M, Mp, Mt, la, lat, rho)
        inc = (nxt - n_cur).astype(np.float64)
        S = S + inc * u + np.sqrt(inc * v_eff) * rng.gaussian_array(key, ridx + np.uint64(i + 1))
        n_cur = nxt
    return n, uh, g0, g1


def _bern_kl_vec(p: np.ndarray, q: float) -> np.ndarray:
    # callers pass clamped rates, strictly inside (0,1)
    return p * np.log(p / q) + (1.0 - p) * np.log((1.0 - p) / (1.0 - q))


def bernoulli_paths(key: int, reps: int, looks: int, m: int, M: int, Mp: int, Mt: int,
                    p: float, u0: float, u_fut: float,
                    la: float, lat: float, rho: float):
    """Single-arm Bernoulli(p): unit j of rep r draws at counter r·Mt + j."""
    n, uh, g0, g1 = _alloc(looks, reps)
    base = np.arange(reps, dtype=np.uint64) * np.uint64(Mt)
    n_cur = np.full(reps, m, dtype=np.int64)
    s = rng.bernoulli_sum_array(key, base, n_cur, p)
    for i in range(looks):
        n_f = n_cur.astype(np.float64)
        est = s / n_f
        lo_c = 1.0 / (2.0 * n_f)
        pc = np.minimum(np.maximum(est, lo_c), 1.0 - lo_c)
        n[i] = n_cur
        uh[i] = est
        g0[i] = n_f * _bern_kl_vec(pc, u0)
        g1[i] = n_f * _bern_kl_vec(pc, u_fut)
        if i == looks - 1:
            break
        nxt = _transition(i, looks, g0[i], g1[i], n_cur, n_f, m, M, Mp, Mt, la, lat, rho)
        s = s + rng.bernoulli_sum_array(key, base + n_cur.astype(np.uint64), nxt - n_cur, p)
        n_cur = nxt
    return n, uh, g0, g1


def _pair_glr_vec(px: np.ndarray, py: np.ndarray, n_f: np.ndarray, delta: float) -> np.ndarray:
    """min over r of n·KL(px‖r+delta) + n·KL(py‖r) via 80-step derivative bisection."""
    lo = max(0.0, -delta) + 1e-12
    hi = min(1.0, 1.0 - delta) - 1e-12

    def dfdr(r):
        pd = r + delta
        return n_f * (-px / pd + (1.0 - px) / (1.0 - pd)) + n_f * (-py / r + (1.0 - py) / (1.0 - r))

    flo = dfdr(lo)
    fhi = dfdr(hi)
    a = np.full_like(px, lo)
    b = np.full_like(px, hi)
    for _ in range(80):
        mid = 0.5 * (a + b)
        neg = dfdr(mid) < 0.0
        a = np.where(neg, mid, a)
        b = np.where(neg, b, mid)
    r = 0.5 * (a + b)
    r = np.where(flo >= 0.0, lo, np.where(fhi <= 0.0, hi, r))
    return n_f * (
        px * np.log(px / (r + delta)) + (1.0 - px) * np.log((1.0 - px) / (1.0 - (r + delta)))
    ) + n_f * (py * np.log(py / r) + (1.0 - py) * np.log((1.0 - py) / (1.0 - r)))


def two_arm_bernoulli_paths(kx: int, ky: int, reps: int, looks: int, m: int, M: int,
                            Mp: int, Mt: int, px: float, py: float,
                            u0: float, u_fut: float, la: float, lat: float, rho: float):
    """Two Bernoulli arms with equal per-arm sizes; û = p̂x − p̂y."""
    n, uh, g0, g1 = _alloc(looks, reps)
    base = np.arange(reps, dtype=np.uint64) * np.uint64(Mt)
    n_cur = np.full(reps, m, dtype=np.int64)
    sx = rng.bernoulli_sum_array(kx, base, n_cur, px)
    sy = rng.bernoulli_sum_array(ky, base, n_cur, py)
    for i in range(looks):
        n_f = n_cur.astype(np.float64)
        lo_c = 1.0 / (2.0 * n_f)
        cx = np.minimum(np.maximum(sx / n_f, lo_c), 1.0 - lo_c)
        cy = np.minimum(np.maximum(sy / n_f, lo_c), 1.0 - lo_c)
        n[i] = n_cur
        uh[i] = (sx - sy) / n_f
        g0[i] = _pair_glr_vec(cx, cy, n_f, u0)
        g1[i] = _pair_glr_vec(cx, cy, n_f, u_fut)
        if i == looks - 1:
            break
        nxt = _transition(i, looks, g0[i], g1[i], n_cur, n_f, m, M, Mp, Mt, la, lat, rho)
        inc = nxt - n_cur
        off = base + n_cur.astype(np.uint64)
        sx = sx + rng.bernoulli_sum_array(kx, off, inc, px)
        sy = sy + rng.bernoulli_sum_array(ky, off, inc, py)
        n_cur = nxt
    return n, uh, g0, g1


def two_sample_unknownvar_paths(kx: int, ky: int, reps: int, looks: int, m: int, M: int,
                                Mp: int, Mt: int, delta: float, mu_y: float, sigma: float,
                                u0: float, u_fut: float, la: float, lat: float, rho: float):
    """Two normal arms, common unknown variance; the GLR profiles σ² out."""
    n, uh, g0, g1 = _alloc(looks, reps)
    base = np.arange(reps, dtype=np.uint64) * np.uint64(Mt)
    mu_x = mu_y + delta
    n_cur = np.full(reps, m, dtype=np.int64)
    sx = np.zeros(reps)
    qx = np.zeros(reps)
    sy = np.zeros(reps)
    qy = np.zeros(reps)

    def draw(key, mu, cnt_prev, cnt):
        sz, sz2 = rng.gaussian_segment_sums(key, base + cnt_prev.astype(np.uint64), cnt)
        cnt_f = cnt.astype(np.float64)
        s = cnt_f * mu + sigma * sz
        q = cnt_f * (mu * mu) + 2.0 * mu * sigma * sz + (sigma * sigma) * sz2
        return s, q

    d_s, d_q = draw(kx, mu_x, np.zeros(reps, np.int64), n_cur)
    sx += d_s
    qx += d_q
    d_s, d_q = draw(ky, mu_y, np.zeros(reps, np.int64), n_cur)
    sy += d_s
    qy += d_q
    for i in range(looks):
        n_f = n_cur.astype(np.float64)
        est = (sx - sy) / n_f
        sse = (qx - sx * sx / n_f) + (qy - sy * sy / n_f)
        s2 = np.maximum(sse / (2.0 * n_f), 1e-12)
        n[i] = n_cur
        uh[i] = est
        g0[i] = n_f * np.log1p((est - u0) * (est - u0) / (4.0 * s2))
        g1[i] = n_f * np.log1p((est - u_fut) * (est - u_fut) / (4.0 * s2))
        if i == looks - 1:
            break
        nxt = _transition(i, looks, g0[i], g1[i], n_cur, n_f, m, M, Mp, Mt, la, lat, rho)
        inc = nxt - n_cur
        d_s, d_q = draw(kx, mu_x, n_cur, inc)
        sx += d_s
        qx += d_q
        d_s, d_q = draw(ky, mu_y, n_cur, inc)
        sy += d_s
        qy += d_q
        n_cur = nxt
    return n, uh, g0, g1
