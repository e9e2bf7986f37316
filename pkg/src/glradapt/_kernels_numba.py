"""Numba-jitted Monte Carlo path kernels.

Same contracts as _kernels_numpy (see its docstring); per-rep scalar loops
under prange with the splitmix64 generator inlined.  Expressions mirror the
numpy module textually so both backends agree bit for bit on everything
integer-valued and to the last ulp elsewhere.
"""

from __future__ import annotations

import math
import os

import numba
import numpy as np
from numba import njit, prange

if os.environ.get("GLR_ADAPT_THREADS"):
    numba.set_num_threads(int(os.environ["GLR_ADAPT_THREADS"]))

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U53 = 2.0 ** -53


@njit(cache=True, inline="always")
def _u64(key: np.uint64, counter: np.uint64) -> np.uint64:
    z = key + (counter + np.uint64(1)) * _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _uniform(key: np.uint64, counter: np.uint64) -> float:
    u = np.float64(_u64(key, counter) >> np.uint64(11)) * _U53
    return u if u > 0.0 else _U53


@njit(cache=True, inline="always")
def _gaussian(key: np.uint64, index: np.uint64) -> float:
    u1 = _uniform(key, np.uint64(2) * index)
    u2 = _uniform(key, np.uint64(2) * index + np.uint64(1))
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@njit(cache=True, inline="always")
def _next_size(g0: float, g1: float, n_f: float, lo: float, hi: int,
               la: float, lat: float, rho: float) -> np.int64:
    i0 = g0 / n_f
    i1 = g1 / n_f
    t0 = la / i0 if i0 > 1e-300 else np.inf
    t1 = lat / i1 if i1 > 1e-300 else np.inf
    nest = min(t0, t1)
    raw = math.ceil((1.0 + rho) * nest - 1e-12) if math.isfinite(nest) else float(hi)
    v = raw
    if v < lo:
        v = lo
    if v > float(hi):
        v = float(hi)
    return np.int64(v)


@njit(cache=True, inline="always")
def _transition(i: int, looks: int, g0: float, g1: float, n_cur: np.int64, n_f: float,
                m: int, M: int, Mp: int, Mt: int, la: float, lat: float, rho: float) -> np.int64:
    if i == 0:
        return _next_size(g0, g1, n_f, float(m), M, la, lat, rho)
    if looks == 4 and i == 1:
        return _next_size(g0, g1, n_f, n_f, Mp, la, lat, rho)
    return np.int64(Mt)


@njit(cache=True, parallel=True)
def gaussian_paths(key: int, reps: int, looks: int, m: int, M: int, Mp: int, Mt: int,
                   u: float, v_eff: float, u0: float, u_fut: float,
                   la: float, lat: float, rho: float):
    n = np.empty((looks, reps), dtype=np.int64)
    uh = np.empty((looks, reps))
    g0 = np.empty((looks, reps))
    g1 = np.empty((looks, reps))
    k = np.uint64(key)
    s_m = math.sqrt(m * v_eff)
    for r in prange(reps):
        ridx = np.uint64(r) * np.uint64(8)
        n_cur = np.int64(m)
        S = m * u + s_m * _gaussian(k, ridx)
        for i in range(looks):
            n_f = float(n_cur)
            est = S / n_f
            n[i, r] = n_cur
            uh[i, r] = est
            g0[i, r] = n_f * (est - u0) * (est - u0) / (2.0 * v_eff)
            g1[i, r] = n_f * (est - u_fut) * (est - u_fut) / (2.0 * v_eff)
            if i == looks - 1:
                break
            nxt = _transition(i, looks, g0[i, r], g1[i, r], n_cur, n_f,
                              m, M, Mp, Mt, la, lat, rho)
            inc = float(nxt - n_cur)
            S = S + inc * u + math.sqrt(inc * v_eff) * _gaussian(k, ridx + np.uint64(i + 1))
            n_cur = nxt
    return n, uh, g0, g1


@njit(cache=True, inline="always")
def _bern_kl(p: float, q: float) -> float:
    return p * math.log(p / q) + (1.0 - p) * math.log((1.0 - p) / (1.0 - q))


@njit(cache=True, inline="always")
def _bern_count(key: np.uint64, base: np.uint64, start: np.int64, stop: np.int64, p: float) -> np.int64:
    s = np.int64(0)
    for j in range(start, stop):
        if _uniform(key, base + np.uint64(j)) < p:
            s += 1
    return s


@njit(cache=True, parallel=True)
def bernoulli_paths(key: int, reps: int, looks: int, m: int, M: int, Mp: int, Mt: int,
                    p: float, u0: float, u_fut: float,
                    la: float, lat: float, rho: float):
    n = np.empty((looks, reps), dtype=np.int64)
    uh = np.empty((looks, reps))
    g0 = np.empty((looks, reps))
    g1 = np.empty((looks, reps))
    k = np.uint64(key)
    for r in prange(reps):
        base = np.uint64(r) * np.uint64(Mt)
        n_cur = np.int64(m)
        s = _bern_count(k, base, np.int64(0), n_cur, p)
        for i in range(looks):
            n_f = float(n_cur)
            est = s / n_f
            lo_c = 1.0 / (2.0 * n_f)
            pc = min(max(est, lo_c), 1.0 - lo_c)
            n[i, r] = n_cur
            uh[i, r] = est
            g0[i, r] = n_f * _bern_kl(pc, u0)
            g1[i, r] = n_f * _bern_kl(pc, u_fut)
            if i == looks - 1:
                break
            nxt = _transition(i, looks, g0[i, r], g1[i, r], n_cur, n_f,
                              m, M, Mp, Mt, la, lat, rho)
            s = s + _bern_count(k, base, n_cur, nxt, p)
            n_cur = nxt
    return n, uh, g0, g1


@njit(cache=True)
def _pair_glr(px: float, py: float, n_f: float, delta: float) -> float:
    lo = max(0.0, -delta) + 1e-12
    hi = min(1.0, 1.0 - delta) - 1e-12
    pd = lo + delta
    flo = n_f * (-px / pd + (1.0 - px) / (1.0 - pd)) + n_f * (-py / lo + (1.0 - py) / (1.0 - lo))
    pd = hi + delta
    fhi = n_f * (-px / pd + (1.0 - px) / (1.0 - pd)) + n_f * (-py / hi + (1.0 - py) / (1.0 - hi))
    a = lo
    b = hi
    for _ in range(80):
        mid = 0.5 * (a + b)
        pd = mid + delta
        g = n_f * (-px / pd + (1.0 - px) / (1.0 - pd)) + n_f * (-py / mid + (1.0 - py) / (1.0 - mid))
        if g < 0.0:
            a = mid
        else:
            b = mid
    r = 0.5 * (a + b)
    if flo >= 0.0:
        r = lo
    elif fhi <= 0.0:
        r = hi
    return n_f * (
        px * math.log(px / (r + delta)) + (1.0 - px) * math.log((1.0 - px) / (1.0 - (r + delta)))
    ) + n_f * (py * math.log(py / r) + (1.0 - py) * math.log((1.0 - py) / (1.0 - r)))


@njit(cache=True, parallel=True)
def two_arm_bernoulli_paths(kx: int, ky: int, reps: int, looks: int, m: int, M: int,
                            Mp: int, Mt: int, px: float, py: float,
                            u0: float, u_fut: float, la: float, lat: float, rho: float):
    n = np.empty((looks, reps), dtype=np.int64)
    uh = np.empty((looks, reps))
    g0 = np.empty((looks, reps))
    g1 = np.empty((looks, reps))
    ux = np.uint64(kx)
    uy = np.uint64(ky)
    for r in prange(reps):
        base = np.uint64(r) * np.uint64(Mt)
        n_cur = np.int64(m)
        sx = _bern_count(ux, base, np.int64(0), n_cur, px)
        sy = _bern_count(uy, base, np.int64(0), n_cur, py)
        for i in range(looks):
            n_f = float(n_cur)
            lo_c = 1.0 / (2.0 * n_f)
            cx = min(max(sx / n_f, lo_c), 1.0 - lo_c)
            cy = min(max(sy / n_f, lo_c), 1.0 - lo_c)
            n[i, r] = n_cur
            uh[i, r] = (sx - sy) / n_f
            g0[i, r] = _pair_glr(cx, cy, n_f, u0)
            g1[i, r] = _pair_glr(cx, cy, n_f, u_fut)
            if i == looks - 1:
                break
            nxt = _transition(i, looks, g0[i, r], g1[i, r], n_cur, n_f,
                              m, M, Mp, Mt, la, lat, rho)
            sx = sx + _bern_count(ux, base, n_cur, nxt, px)
            sy = sy + _bern_count(uy, base, n_cur, nxt, py)
            n_cur = nxt
    return n, uh, g0, g1


@njit(cache=True, parallel=True)
def two_sample_unknownvar_paths(kx: int, ky: int, reps: int, looks: int, m: int, M: int,
                                Mp: int, Mt: int, delta: float, mu_y: float, sigma: float,
                                u0: float, u_fut: float, la: float, lat: float, rho: float):
    n = np.empty((looks, reps), dtype=np.int64)
    uh = np.empty((looks, reps))
    g0 = np.empty((looks, reps))
    g1 = np.empty((looks, reps))
    ux = np.uint64(kx)
    uy = np.uint64(ky)
    mu_x = mu_y + delta
    for r in prange(reps):
        base = np.uint64(r) * np.uint64(Mt)
        n_cur = np.int64(m)
        sx = 0.0
        qx = 0.0
        sy = 0.0
        qy = 0.0
        # per-arm unit draws: sum z and z² first, then shift/scale, matching
        # the vector backend's segment-sum arithmetic exactly
        start = np.int64(0)
        for arm in range(2):
            key = ux if arm == 0 else uy
            mu = mu_x if arm == 0 else mu_y
            sz = 0.0
            sz2 = 0.0
            for j in range(start, n_cur):
                z = _gaussian(key, base + np.uint64(j))
                sz += z
                sz2 += z * z
            cnt_f = float(n_cur - start)
            s = cnt_f * mu + sigma * sz
            q = cnt_f * (mu * mu) + 2.0 * mu * sigma * sz + (sigma * sigma) * sz2
            if arm == 0:
                sx += s
                qx += q
            else:
                sy += s
                qy += q
        for i in range(looks):
            n_f = float(n_cur)
            est = (sx - sy) / n_f
            sse = (qx - sx * sx / n_f) + (qy - sy * sy / n_f)
            s2 = max(sse / (2.0 * n_f), 1e-12)
            n[i, r] = n_cur
            uh[i, r] = est
            g0[i, r] = n_f * math.log1p((est - u0) * (est - u0) / (4.0 * s2))
            g1[i, r] = n_f * math.log1p((est - u_fut) * (est - u_fut) / (4.0 * s2))
            if i == looks - 1:
                break
            nxt = _transition(i, looks, g0[i, r], g1[i, r], n_cur, n_f,
                              m, M, Mp, Mt, la, lat, rho)
            for arm in range(2):
                key = ux if arm == 0 else uy
                mu = mu_x if arm == 0 else mu_y
                sz = 0.0
                sz2 = 0.0
                for j in range(n_cur, nxt):
                    z = _gaussian(key, base + np.uint64(j))
                    sz += z
                    sz2 += z * z
                cnt_f = float(nxt - n_cur)
                s = cnt_f * mu + sigma * sz
                q = cnt_f * (mu * mu) + 2.0 * mu * sigma * sz + (sigma * sigma) * sz2
                if arm == 0:
                    sx += s
                    qx += q
                else:
                    sy += s
                    qy += q
            n_cur = nxt
    return n, uh, g0, g1
