"""Benchmark trial designs evaluated alongside the adaptive GLR test.

Each design carries its parameters in a frozen dataclass, answers stagewise
decisions with the shared ``design.Decision`` vocabulary, and provides a
vectorised path simulator consumed by the operating-characteristic engine.
Parameter points for the simulators:

    FSS / CondPower2 / CondPower3 / CHW / OBFCurtail   {"theta": effect}
    Simon2                                             {"p": response rate}
    Thall2                                             {"p": treatment, "q": control}
    Stein2                                             {"delta": mean difference, "sigma": common sd}

Normal-theory designs draw stage increments at the sufficient-statistic
level, so simulation cost does not grow with the sample sizes involved.
Counter layout: one block of draws per replicate, block size fixed per
design; two-arm binomial designs use one stream per arm (2*stream and
2*stream+1), matching the adaptive simulator's convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np
from scipy.stats import binom, norm
from scipy.stats import t as student_t

from . import rng
from .design import Decision, Thresholds
from .errors import InfeasibilityError


# ---------------------------------------------------------------- fixed size


@dataclass(frozen=True)
class FSS:
    """One-look test: reject iff the standardized effect exceeds the cutoff."""

    n: int
    critical_value: float
    theta0: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("FSS needs n >= 1")
        if not math.isfinite(self.critical_value):
            raise ValueError("critical value must be finite")

    def power(self, theta: float) -> float:
        drift = math.sqrt(self.n) * (theta - self.theta0) / self.sigma
        return float(norm.sf(self.critical_value - drift))

    def decide(self, mean: float) -> Decision:
        z = math.sqrt(self.n) * (mean - self.theta0) / self.sigma
        return Decision.REJECT_BOUNDARY if z >= self.critical_value else Decision.ACCEPT_BOUNDARY

    def to_dict(self) -> dict:
        return {"comparator": "fss", "n": self.n, "critical_value": self.critical_value,
                "theta0": self.theta0, "sigma": self.sigma}


def _fss_paths(comp: FSS, point: dict, reps: int, seed: int, stream: int) -> dict:
    theta = float(point["theta"])
    key = rng.stream_key(seed, stream)
    z = rng.gaussian_array(key, np.arange(reps, dtype=np.uint64))
    stat = math.sqrt(comp.n) * (theta - comp.theta0) / comp.sigma + z
    return {"rejected": stat >= comp.critical_value,
            "stages": np.ones(reps, dtype=np.int64),
            "final_n": np.full(reps, comp.n, dtype=np.int64)}


def binomial_fss(p0: float, p1: float, alpha: float, beta: float, n_max: int = 4000) -> tuple[int, int]:
    """Smallest n whose exact one-look binomial test meets both error targets.

    Returns (n, cutoff); the test rejects iff S_n > cutoff.
    """
    if not 0.0 < p0 < p1 < 1.0:
        raise InfeasibilityError(f"need 0 < p0 < p1 < 1, got ({p0}, {p1})")
    for n in range(1, n_max + 1):
        cutoff = int(binom.ppf(1.0 - alpha, n, p0))
        if binom.sf(cutoff, n, p1) >= 1.0 - beta:
            return n, cutoff
    raise InfeasibilityError(f"no single-look design of size <= {n_max} meets the error targets")


# ------------------------------------------------------- Simon's two-stage


@dataclass(frozen=True)
class Simon2:
    """Futility-only two-stage binomial design (m, M, r1, r2)."""

    m: int
    M: int
    r1: int
    r2: int

    def __post_init__(self):
        if not (1 <= self.m < self.M):
            raise ValueError("need 1 <= m < M")
        if not (0 <= self.r1 <= self.m):
            raise ValueError("need 0 <= r1 <= m")
        if not (self.r1 <= self.r2 <= self.M):
            raise ValueError("need r1 <= r2 <= M")

    def decide(self, stage: int, successes: int) -> Decision:
        if stage == 1:
            return Decision.ACCEPT_FUTILITY if successes <= self.r1 else Decision.CONTINUE
        return Decision.REJECT_BOUNDARY if successes > self.r2 else Decision.ACCEPT_BOUNDARY

    def to_dict(self) -> dict:
        return {"comparator": "simon2", "m": self.m, "M": self.M, "r1": self.r1, "r2": self.r2}


def simon_oc(design: Simon2, p: float) -> tuple[float, float, float]:
    """Exact (power, expected sample size, expected stages) at response rate p."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0,1)")
    m, M, r1, r2 = design.m, design.M, design.r1, design.r2
    pet = float(binom.cdf(r1, m, p))
    k = np.arange(r1 + 1, m + 1)
    power = float(np.sum(binom.pmf(k, m, p) * binom.sf(r2 - k, M - m, p)))
    ess = m + (M - m) * (1.0 - pet)
    return power, ess, 2.0 - pet


def _simon_paths(comp: Simon2, point: dict, reps: int, seed: int, stream: int) -> dict:
    p = float(point["p"])
    key = rng.stream_key(seed, stream)
    base = np.arange(reps, dtype=np.uint64) * np.uint64(comp.M)
    s1 = rng.bernoulli_sum_array(key, base, np.full(reps, comp.m), p)
    cont = s1 > comp.r1
    s2 = s1 + rng.bernoulli_sum_array(key, base + np.uint64(comp.m), np.full(reps, comp.M - comp.m), p)
    return {"rejected": cont & (s2 > comp.r2),
            "stages": np.where(cont, 2, 1).astype(np.int64),
            "final_n": np.where(cont, comp.M, comp.m).astype(np.int64)}


def simon_search(p0: float, p1: float, alpha: float, beta: float) -> Simon2:
    """Exact-binomial search for the design minimizing E_{p0}(N).

    Enumerates every (m, M, r1, r2) with M at most twice the one-look size;
    ties go to smaller M, then smaller m.
    """
    if not (0.0 < p0 < 1.0 and 0.0 < p1 < 1.0) or p1 <= p0:
        raise InfeasibilityError(f"need 0 < p0 < p1 < 1, got ({p0}, {p1})")
    n_fss, _ = binomial_fss(p0, p1, alpha, beta)
    m_cap = 2 * n_fss

    # second-stage survival tables depend only on d = M - m; cache them over
    # the shifted argument j = r2 - k in [-m_cap, m_cap]
    js = np.arange(-m_cap, m_cap + 1)

    def sf_table(d: int, p: float) -> np.ndarray:
        out = np.ones(len(js))
        nonneg = js >= 0
        out[nonneg] = binom.sf(js[nonneg], d, p)
        return out

    sf0_cache: dict[int, np.ndarray] = {}
    sf1_cache: dict[int, np.ndarray] = {}
    first_cache: dict[int, tuple] = {}

    def first_stage(m: int):
        # r1 larger than r1_bound already sinks the power target at stage one
        if m not in first_cache:
            k = np.arange(m + 1)
            pmf0 = binom.pmf(k, m, p0)
            pmf1 = binom.pmf(k, m, p1)
            cdf0 = np.cumsum(pmf0)
            cdf1 = np.cumsum(pmf1)
            r1_bound = int(np.searchsorted(cdf1, beta + 1e-12, side="right")) - 1
            pet_max = float(cdf0[r1_bound]) if r1_bound >= 0 else 0.0
            first_cache[m] = (pmf0, pmf1, cdf0, r1_bound, pet_max)
        return first_cache[m]

    best: Simon2 | None = None
    best_ess = math.inf
    for M in range(2, m_cap + 1):
        for m in range(1, M):
            if m >= best_ess - 1e-9:
                break
            pmf0, pmf1, cdf0, r1_bound, pet_max = first_stage(m)
            if r1_bound < 0:
                continue
            d = M - m
            if m + d * (1.0 - pet_max) >= best_ess - 1e-9:
                continue
            if d not in sf0_cache:
                sf0_cache[d] = sf_table(d, p0)
                sf1_cache[d] = sf_table(d, p1)
            k = np.arange(m + 1)
            shift = np.arange(M + 1)[None, :] - k[:, None] + m_cap
            g0 = pmf0[:, None] * sf0_cache[d][shift]
            g1 = pmf1[:, None] * sf1_cache[d][shift]
            # reject prob for first-stage bar r1: sum over k > r1
            rej0 = np.cumsum(g0[::-1], axis=0)[::-1]
            rej1 = np.cumsum(g1[::-1], axis=0)[::-1]
            r1s = np.arange(r1_bound + 1)
            type1 = rej0[r1s + 1]       # (r1, r2) grids
            power = rej1[r1s + 1]
            feas = (type1 <= alpha + 1e-12) & (power >= 1.0 - beta - 1e-12)
            feas &= np.arange(M + 1)[None, :] >= r1s[:, None]
            rows = np.nonzero(feas.any(axis=1))[0]
            if len(rows) == 0:
                continue
            r1 = int(rows[-1])          # largest feasible r1 stops earliest
            ess = m + d * (1.0 - float(cdf0[r1]))
            if ess < best_ess - 1e-9:
                r2 = int(np.argmax(feas[r1]))
                best, best_ess = Simon2(m, M, r1, r2), ess
    if best is None:
        raise InfeasibilityError("no feasible two-stage design within twice the one-look size")
    return best


# ------------------------------------------------- two-arm two-stage (Opt2)


@dataclass(frozen=True)
class Thall2:
    """Randomized two-stage design: futility look at n1 per arm, test at n2_total."""

    n1: int
    n2_total: int
    y1: float
    y2: float

    def __post_init__(self):
        if not (1 <= self.n1 < self.n2_total):
            raise ValueError("need 1 <= n1 < n2_total")
        if not (math.isfinite(self.y1) and math.isfinite(self.y2)):
            raise ValueError("y thresholds must be finite")

    def decide(self, stage: int, z: float) -> Decision:
        if stage == 1:
            return Decision.CONTINUE if z > self.y1 else Decision.ACCEPT_FUTILITY
        return Decision.REJECT_BOUNDARY if z > self.y2 else Decision.ACCEPT_BOUNDARY

    def to_dict(self) -> dict:
        return {"comparator": "thall2", "n1": self.n1, "n2_total": self.n2_total,
                "y1": self.y1, "y2": self.y2}


def pooled_z(sx: np.ndarray, sy: np.ndarray, n: int) -> np.ndarray:
    """Two-proportion z statistic with pooled variance; 0 when degenerate."""
    pbar = (sx + sy) / (2.0 * n)
    var = pbar * (1.0 - pbar) * 2.0 / n
    num = (sx - sy) / n
    return np.where(var > 0.0, num / np.sqrt(np.maximum(var, 1e-300)), 0.0)


def _thall_paths(comp: Thall2, point: dict, reps: int, seed: int, stream: int) -> dict:
    p, q = float(point["p"]), float(point["q"])
    kx = rng.stream_key(seed, 2 * stream)
    ky = rng.stream_key(seed, 2 * stream + 1)
    base = np.arange(reps, dtype=np.uint64) * np.uint64(comp.n2_total)
    n1 = np.full(reps, comp.n1)
    sx1 = rng.bernoulli_sum_array(kx, base, n1, p)
    sy1 = rng.bernoulli_sum_array(ky, base, n1, q)
    cont = pooled_z(sx1, sy1, comp.n1) > comp.y1
    inc = np.full(reps, comp.n2_total - comp.n1)
    off = base + np.uint64(comp.n1)
    sx2 = sx1 + rng.bernoulli_sum_array(kx, off, inc, p)
    sy2 = sy1 + rng.bernoulli_sum_array(ky, off, inc, q)
    rejected = cont & (pooled_z(sx2, sy2, comp.n2_total) > comp.y2)
    return {"rejected": rejected,
            "stages": np.where(cont, 2, 1).astype(np.int64),
            "final_n": np.where(cont, comp.n2_total, comp.n1).astype(np.int64)}


# ------------------------------------------- variance-adaptive two-stage


@dataclass(frozen=True)
class Stein2:
    """Two-stage test sizing itself from the first-stage variance estimate.

    The final statistic keeps the first-stage variance, so it is exactly
    t-distributed with 2(m-1) degrees of freedom under a zero mean difference.
    """

    m: int
    alpha: float = 0.05
    alpha_tilde: float = 0.05
    delta: float = 1.0

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("need m >= 2 per arm: the variance is undefined otherwise")
        for name, v in (("alpha", self.alpha), ("alpha_tilde", self.alpha_tilde)):
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0,1)")
        if self.delta <= 0.0:
            raise ValueError("delta must be positive")

    @property
    def df(self) -> int:
        return 2 * (self.m - 1)

    def quantiles(self) -> tuple[float, float]:
        return (float(student_t.ppf(1.0 - self.alpha, self.df)),
                float(student_t.ppf(1.0 - self.alpha_tilde, self.df)))

    def total_size(self, s2: float) -> int:
        tq, tqt = self.quantiles()
        return max(self.m, math.ceil(2.0 * s2 * (tq + tqt) ** 2 / self.delta**2))

    def to_dict(self) -> dict:
        return {"comparator": "stein2", "m": self.m, "alpha": self.alpha,
                "alpha_tilde": self.alpha_tilde, "delta": self.delta}


def stein_two_stage(comp: Stein2, x1, y1, x2=(), y2=()) -> tuple[Decision, int]:
    """Run the test on raw per-arm samples (stage 2 possibly empty)."""
    x1, y1 = np.asarray(x1, float), np.asarray(y1, float)
    x2, y2 = np.asarray(x2, float), np.asarray(y2, float)
    if len(x1) != comp.m or len(y1) != comp.m:
        raise ValueError(f"first stage must have exactly m={comp.m} observations per arm")
    s2 = (np.sum((x1 - x1.mean()) ** 2) + np.sum((y1 - y1.mean()) ** 2)) / comp.df
    n = comp.total_size(float(s2))
    if len(x2) != n - comp.m or len(y2) != n - comp.m:
        raise ValueError(f"second stage must have exactly {n - comp.m} observations per arm")
    diff = np.concatenate([x1, x2]).mean() - np.concatenate([y1, y2]).mean()
    t_stat = diff / math.sqrt(2.0 * s2 / n)
    tq, _ = comp.quantiles()
    return (Decision.REJECT_BOUNDARY if t_stat > tq else Decision.ACCEPT_BOUNDARY), n


def _stein_paths(comp: Stein2, point: dict, reps: int, seed: int, stream: int) -> dict:
    mu = float(point["delta"])
    sigma = float(point["sigma"])
    key = rng.stream_key(seed, stream)
    block = np.uint64(2 * comp.m)
    base = np.arange(reps, dtype=np.uint64) * block
    z_first = rng.gaussian_array(key, base)
    z_inc = rng.gaussian_array(key, base + np.uint64(1))
    vidx = (base[:, None] + np.arange(2, 2 + comp.df, dtype=np.uint64)[None, :]).ravel()
    zz = rng.gaussian_array(key, vidx).reshape(reps, comp.df)
    s2 = sigma**2 * np.sum(zz * zz, axis=1) / comp.df
    tq, tqt = comp.quantiles()
    n = np.maximum(comp.m, np.ceil(2.0 * s2 * (tq + tqt) ** 2 / comp.delta**2)).astype(np.int64)
    inc = n - comp.m
    d_first = mu + sigma * math.sqrt(2.0 / comp.m) * z_first
    d_inc = mu + sigma * np.sqrt(2.0 / np.maximum(inc, 1)) * z_inc
    d_total = np.where(inc > 0, (comp.m * d_first + inc * d_inc) / n, d_first)
    t_stat = d_total / np.sqrt(2.0 * s2 / n)
    return {"rejected": t_stat > tq,
            "stages": np.where(inc > 0, 2, 1).astype(np.int64),
            "final_n": n}


# --------------------------------------------- conditional-power designs


def _cp_shortfall(n, m: int, s_m, theta_hat, theta0: float, sigma: float,
                  za: float, zat: float):
    """>= 0 iff the conditional power at theta_hat reaches its target by n."""
    n = np.asarray(n, dtype=np.float64)
    return (s_m + (n - m) * theta_hat - n * theta0
            - sigma * za * np.sqrt(n)
            - sigma * zat * np.sqrt(np.maximum(n - m, 0.0)))


def cond_power_sample_size(theta_hat: float, m: int, M_cap: int, alpha: float,
                           alpha_tilde: float, s_m: float, *, theta0: float = 0.0,
                           sigma: float = 1.0, theta1: float | None = None) -> int:
    """Total size chosen by the conditional-power criterion, capped at M_cap.

    Above theta0 the size is the smallest n at which the conditional
    probability of the fixed-sample level-alpha test rejecting reaches
    1 - alpha_tilde; at or below theta0 it is the information-based size
    against the implied alternative theta1.
    """
    if not (0.0 < alpha < 0.5 and 0.0 < alpha_tilde < 0.5):
        raise ValueError("alpha and alpha_tilde must be in (0, 0.5)")
    if M_cap < m:
        raise ValueError("need M_cap >= m")
    if theta_hat > theta0:
        za, zat = norm.isf(alpha), norm.isf(alpha_tilde)
        f = lambda n: float(_cp_shortfall(n, m, s_m, theta_hat, theta0, sigma, za, zat))
        if f(m) >= 0.0:
            return m
        if f(M_cap) < 0.0:
            return M_cap
        # the shortfall is convex in n, so left of its first nonnegative
        # point it stays negative and plain bisection finds the crossing
        lo, hi = m, M_cap
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if f(mid) >= 0.0:
                hi = mid
            else:
                lo = mid
        return hi
    if theta1 is None:
        raise ValueError("theta_hat <= theta0 needs the implied alternative theta1")
    info = (theta_hat - theta1) ** 2 / (2.0 * sigma**2)
    if info <= 0.0:
        return M_cap
    return min(M_cap, max(m, math.ceil(-math.log(alpha_tilde) / info)))


def _cp_sizes_vec(theta_hat: np.ndarray, s_m: np.ndarray, m: int, M_cap: int,
                  alpha: float, alpha_tilde: float, theta0: float, sigma: float,
                  theta1: float | None) -> np.ndarray:
    """Vectorised cond_power_sample_size over replicate arrays.

    With theta1=None every estimate takes the conditional-power route (the
    shortfall is convex for any estimate; hopeless ones land on M_cap).
    """
    za, zat = norm.isf(alpha), norm.isf(alpha_tilde)
    out = np.full(len(theta_hat), M_cap, dtype=np.int64)
    pos = theta_hat > theta0 if theta1 is not None else np.ones(len(theta_hat), dtype=bool)
    if pos.any():
        th, sm = theta_hat[pos], s_m[pos]
        at_m = _cp_shortfall(m, m, sm, th, theta0, sigma, za, zat) >= 0.0
        at_cap = _cp_shortfall(M_cap, m, sm, th, theta0, sigma, za, zat) >= 0.0
        lo = np.full(len(th), m, dtype=np.int64)
        hi = np.full(len(th), M_cap, dtype=np.int64)
        for _ in range(max(1, int(math.ceil(math.log2(max(2, M_cap - m)))) + 1)):
            mid = (lo + hi) // 2
            ok = _cp_shortfall(mid, m, sm, th, theta0, sigma, za, zat) >= 0.0
            hi = np.where(ok, mid, hi)
            lo = np.where(ok, lo, np.maximum(mid, lo))
            lo = np.minimum(lo, hi - 1)
        res = np.where(at_m, m, np.where(at_cap, hi, M_cap))
        out[pos] = res
    neg = ~pos
    if neg.any():
        if theta1 is None:
            raise ValueError("estimates at or below theta0 need theta1")
        info = (theta_hat[neg] - theta1) ** 2 / (2.0 * sigma**2)
        with np.errstate(divide="ignore"):
            want = np.ceil(-math.log(alpha_tilde) / np.maximum(info, 1e-300))
        want = np.where(info > 0.0, want, float(M_cap))
        out[neg] = np.clip(want, m, M_cap).astype(np.int64)
    return out


@dataclass(frozen=True)
class CondPower2:
    """Two-stage conditional-power test with a futility margin at stage one."""

    m: int
    M_cap: int
    delta_futility: float = 0.0
    alpha: float = 0.05
    alpha_tilde: float = 0.2
    theta0: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not (1 <= self.m <= self.M_cap):
            raise ValueError("need 1 <= m <= M_cap")
        if not (0.0 < self.alpha < 0.5 and 0.0 < self.alpha_tilde < 0.5):
            raise ValueError("alpha and alpha_tilde must be in (0, 0.5)")
        if self.delta_futility < 0.0:
            raise ValueError("delta_futility must be nonnegative")

    def to_dict(self) -> dict:
        return {"comparator": "cond_power2", "m": self.m, "M_cap": self.M_cap,
                "delta_futility": self.delta_futility, "alpha": self.alpha,
                "alpha_tilde": self.alpha_tilde, "theta0": self.theta0, "sigma": self.sigma}


def _cond_power2_paths(comp: CondPower2, point: dict, reps: int, seed: int, stream: int) -> dict:
    theta = float(point["theta"])
    key = rng.stream_key(seed, stream)
    base = np.arange(reps, dtype=np.uint64) * np.uint64(2)
    m, sig = comp.m, comp.sigma
    s_m = m * theta + sig * math.sqrt(m) * rng.gaussian_array(key, base)
    theta_hat = s_m / m
    cont = theta_hat >= comp.theta0 + comp.delta_futility
    n2 = np.full(reps, m, dtype=np.int64)
    if cont.any():
        n2[cont] = _cp_sizes_vec(theta_hat[cont], s_m[cont], m, comp.M_cap,
                                 comp.alpha, comp.alpha_tilde, comp.theta0, sig, None)
    inc = np.where(cont, n2 - m, 0)
    s_n = s_m + inc * theta + sig * np.sqrt(inc) * rng.gaussian_array(key, base + np.uint64(1))
    za = norm.isf(comp.alpha)
    z_final = (s_n - n2 * comp.theta0) / (sig * np.sqrt(n2))
    return {"rejected": cont & (z_final >= za),
            # a decision epoch happens at n2 even when no new units accrue
            "stages": np.where(cont, 2, 1).astype(np.int64),
            "final_n": np.where(cont, n2, m).astype(np.int64)}


@dataclass(frozen=True)
class CondPower3:
    """Three-stage variant: conditional-power second-stage size, GLR stopping rules.

    The stopping boundaries are the adaptive design's (b, b_tilde, c) for the
    same (m, M, alpha, alpha_tilde); pass them in after calibrating.
    """

    m: int
    M: int
    alpha: float = 0.05
    alpha_tilde: float = 0.2
    theta0: float = 0.0
    sigma: float = 1.0
    theta1: float | None = None   # None: imply from M like the adaptive design
    thresholds: Thresholds | None = None

    def __post_init__(self):
        if not (1 <= self.m < self.M):
            raise ValueError("need 1 <= m < M")
        if not (0.0 < self.alpha < 0.5 and 0.0 < self.alpha_tilde < 0.5):
            raise ValueError("alpha and alpha_tilde must be in (0, 0.5)")
        if self.theta1 is not None and self.theta1 <= self.theta0:
            raise ValueError("theta1 must exceed theta0")

    def implied_alternative(self) -> float:
        za = norm.isf(self.alpha) + norm.isf(self.alpha_tilde)
        return self.theta0 + self.sigma * za / math.sqrt(self.M)

    def alternative(self) -> float:
        return self.implied_alternative() if self.theta1 is None else self.theta1

    def to_dict(self) -> dict:
        return {"comparator": "cond_power3", "m": self.m, "M": self.M,
                "alpha": self.alpha, "alpha_tilde": self.alpha_tilde,
                "theta0": self.theta0, "sigma": self.sigma, "theta1": self.theta1,
                "thresholds": None if self.thresholds is None else self.thresholds.to_dict()}


def cond_power3_paths(comp: CondPower3, point: dict, reps: int, seed: int, stream: int) -> dict:
    """Simulate the three-look conditional-power test at effect point["theta"]."""
    if comp.thresholds is None:
        raise ValueError("CondPower3 needs calibrated thresholds before simulation")
    theta = float(point["theta"])
    key = rng.stream_key(seed, stream)
    base = np.arange(reps, dtype=np.uint64) * np.uint64(4)
    m, M, sig, th0 = comp.m, comp.M, comp.sigma, comp.theta0
    theta1 = comp.alternative()

    s = m * theta + sig * math.sqrt(m) * rng.gaussian_array(key, base)
    n2 = _cp_sizes_vec(s / m, s, m, M, comp.alpha, comp.alpha_tilde, th0, sig, theta1)
    looks = np.array([np.full(reps, m, dtype=np.int64), n2,
                      np.full(reps, M, dtype=np.int64)])
    n = looks
    uh = np.empty((3, reps))
    g0 = np.empty((3, reps))
    g1 = np.empty((3, reps))
    for i in range(3):
        if i > 0:
            inc = (n[i] - n[i - 1]).astype(np.float64)
            s = s + inc * theta + sig * np.sqrt(inc) * rng.gaussian_array(key, base + np.uint64(i))
        n_f = n[i].astype(np.float64)
        est = s / n_f
        uh[i] = est
        g0[i] = n_f * (est - th0) ** 2 / (2.0 * sig**2)
        g1[i] = n_f * (est - theta1) ** 2 / (2.0 * sig**2)
    paths = {"n": n, "u_hat": uh, "glr_null": g0, "glr_fut": g1, "u_fut_ref": theta1}
    from .simulate import apply_design  # local import: simulate pulls in the kernel backends
    rules = SimpleNamespace(u0=th0, n_max=M)
    return apply_design(rules, comp.thresholds, paths)


# ------------------------------------------ group-sequential comparators


def _walk_crossing_scale(weights: np.ndarray, alpha: float, reps: int, seed: int,
                         stream: int = 0) -> float:
    """Level-alpha scale C for boundaries of the form W_k >= C / sqrt(t_k).

    Under the null the running weighted sum A_k = sum_{j<=k} sqrt(w_j) eps_j
    is a Gaussian walk; the boundary fires iff max_k A_k >= C.  C is the
    largest achievable level whose empirical tail still meets alpha (same
    inversion convention as the Monte Carlo threshold calibration).
    """
    from .calibration import _quantile_level
    key = rng.stream_key(seed, stream)
    k_looks = len(weights)
    idx = np.arange(reps * k_looks, dtype=np.uint64).reshape(reps, k_looks)
    eps = rng.gaussian_array(key, idx.ravel()).reshape(reps, k_looks)
    walk = np.cumsum(np.sqrt(weights)[None, :] * eps, axis=1)
    return _quantile_level(walk.max(axis=1), alpha)


def obf_critical_values(groups: tuple[int, ...], alpha: float, reps: int = 400_000,
                        seed: int = 0) -> tuple[float, ...]:
    """O'Brien-Fleming-shaped one-sided boundary c_k = C * sqrt(t_K / t_k)."""
    g = np.asarray(groups, dtype=np.float64)
    w = np.diff(np.concatenate([[0.0], g])) / g[-1]
    t = np.cumsum(w)
    scale = _walk_crossing_scale(w, alpha, reps, seed)
    return tuple(float(scale / math.sqrt(tk)) for tk in t)


@dataclass(frozen=True)
class CHW:
    """Weighted adaptive group-sequential test with mid-course group resizing.

    At the end of analysis L the remaining groups are rescaled so the maximum
    becomes M_tilde ^ M*(theta1/theta_hat)^2 whenever the conditional-power
    ratio trigger fires; the weighted statistic keeps the original plan's
    information fractions, so the original critical values stay valid.
    """

    groups: tuple[int, ...]
    crit: tuple[float, ...]
    L: int
    theta1: float
    M_tilde: int
    theta0: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        g = self.groups
        if len(g) < 2 or any(b <= a for a, b in zip(g, g[1:])) or g[0] < 1:
            raise ValueError("groups must be strictly increasing cumulative sizes")
        if len(g) > 8:
            raise ValueError("at most 8 analyses supported")
        if len(self.crit) != len(g):
            raise ValueError("need one critical value per analysis")
        if not 1 <= self.L < len(g):
            raise ValueError("modification analysis L must precede the last one")
        if self.M_tilde < g[-1]:
            raise ValueError("M_tilde must be at least the planned maximum")
        if self.theta1 <= self.theta0:
            raise ValueError("theta1 must exceed theta0")

    @property
    def M(self) -> int:
        return self.groups[-1]

    def weights(self) -> np.ndarray:
        g = np.asarray(self.groups, dtype=np.float64)
        return np.diff(np.concatenate([[0.0], g])) / g[-1]

    def to_dict(self) -> dict:
        return {"comparator": "chw", "groups": list(self.groups), "crit": list(self.crit),
                "L": self.L, "theta1": self.theta1, "M_tilde": self.M_tilde,
                "theta0": self.theta0, "sigma": self.sigma}


def chw_new_maximum(comp: CHW, theta_hat: float) -> int:
    """Updated maximum per the square-ratio rule; sign of theta_hat ignored."""
    if theta_hat == 0.0:
        return comp.M_tilde
    return min(comp.M_tilde, math.ceil(comp.M * (comp.theta1 / theta_hat) ** 2))


def _chw_cond_power(comp: CHW, a_now: float, t_now: float, theta: float,
                    remaining: np.ndarray) -> float:
    """P(final weighted statistic crosses | walk at a_now), future groups as given."""
    w = comp.weights()
    k_done = len(w) - len(remaining)
    drift = 0.0
    var = 0.0
    for j, dn in enumerate(remaining):
        wj = w[k_done + j]
        drift += math.sqrt(wj * max(dn, 0.0)) * (theta - comp.theta0) / comp.sigma
        var += wj
    bound = comp.crit[-1]  # t_K = 1
    if var <= 0.0:
        return 1.0 if a_now >= bound else 0.0
    return float(norm.sf((bound - a_now - drift) / math.sqrt(var)))


def chw_init(comp: CHW) -> dict:
    return {"k": 1, "a": 0.0, "n_prev": 0, "s_prev": 0.0,
            "plan": list(comp.groups), "modified": False}


def chw_step(comp: CHW, state: dict, n_cum: int, s_cum: float) -> Decision:
    """Fold one analysis into the trial; mutates state like design.step."""
    k = state["k"]
    if k > len(state["plan"]):
        raise ValueError("trial already finished")
    if n_cum != state["plan"][k - 1]:
        raise ValueError(f"analysis {k} must report cumulative n={state['plan'][k - 1]}")
    w = comp.weights()
    dn = n_cum - state["n_prev"]
    eps = ((s_cum - state["s_prev"]) - dn * comp.theta0) / (comp.sigma * math.sqrt(dn)) if dn > 0 else 0.0
    state["a"] += math.sqrt(w[k - 1]) * eps
    state["n_prev"], state["s_prev"] = n_cum, s_cum
    t_k = float(np.cumsum(w)[k - 1])
    if state["a"] / math.sqrt(t_k) >= comp.crit[k - 1]:
        return Decision.REJECT_BOUNDARY if k == len(w) else Decision.REJECT_EARLY
    if k == len(w):
        return Decision.ACCEPT_BOUNDARY
    if k == comp.L and not state["modified"]:
        state["modified"] = True
        theta_hat = s_cum / n_cum
        remaining = np.diff([n_cum] + state["plan"][k:])
        cp_hat = _chw_cond_power(comp, state["a"], t_k, theta_hat, remaining)
        cp_ref = _chw_cond_power(comp, state["a"], t_k, comp.theta1, remaining)
        ratio = cp_hat / cp_ref if cp_ref > 0.0 else math.inf
        if ratio > 1.0 or ratio < 0.8:
            new_max = chw_new_maximum(comp, theta_hat)
            if new_max <= n_cum:
                # updated maximum already spent: settle on the current boundary
                return Decision.ACCEPT_BOUNDARY
            k_left = len(w) - k
            state["plan"][k:] = [n_cum + round(j * (new_max - n_cum) / k_left)
                                 for j in range(1, k_left + 1)]
    state["k"] = k + 1
    return Decision.CONTINUE


def _chw_paths(comp: CHW, point: dict, reps: int, seed: int, stream: int) -> dict:
    theta = float(point["theta"])
    key = rng.stream_key(seed, stream)
    k_looks = len(comp.groups)
    base = np.arange(reps, dtype=np.uint64) * np.uint64(8)
    w = comp.weights()
    t = np.cumsum(w)
    sizes = np.tile(np.asarray(comp.groups, dtype=np.int64), (reps, 1))
    alive = np.ones(reps, dtype=bool)
    rejected = np.zeros(reps, dtype=bool)
    stages = np.full(reps, k_looks, dtype=np.int64)
    final_n = np.zeros(reps, dtype=np.int64)
    a = np.zeros(reps)
    s = np.zeros(reps)
    n_prev = np.zeros(reps, dtype=np.int64)
    for k in range(k_looks):
        dn = (sizes[:, k] - n_prev).astype(np.float64)
        z = rng.gaussian_array(key, base + np.uint64(k))
        inc = dn * theta + comp.sigma * np.sqrt(dn) * z
        s = s + inc
        eps = np.where(dn > 0.0, (inc - dn * comp.theta0) / (comp.sigma * np.sqrt(np.maximum(dn, 1.0))), 0.0)
        a = a + math.sqrt(w[k]) * eps
        n_prev = sizes[:, k]
        cross = a / math.sqrt(t[k]) >= comp.crit[k]
        stop = alive & (cross | (k == k_looks - 1))
        rejected |= alive & cross
        stages = np.where(stop, k + 1, stages)
        final_n = np.where(stop, n_prev, final_n)
        alive &= ~stop
        if k + 1 == comp.L and alive.any():
            theta_hat = s / np.maximum(n_prev, 1)
            remaining = sizes[:, k:].astype(np.float64) - n_prev[:, None].astype(np.float64)
            remaining = np.diff(np.concatenate([np.zeros((reps, 1)), remaining], axis=1), axis=1)
            w_left = w[k + 1:]
            drift_hat = (np.sqrt(np.maximum(remaining[:, 1:], 0.0) * w_left[None, :])
                         * (theta_hat[:, None] - comp.theta0) / comp.sigma).sum(axis=1)
            drift_ref = (np.sqrt(np.maximum(remaining[:, 1:], 0.0) * w_left[None, :])
                         * (comp.theta1 - comp.theta0) / comp.sigma).sum(axis=1)
            var_left = w_left.sum()
            bound = comp.crit[-1]
            cp_hat = norm.sf((bound - a - drift_hat) / math.sqrt(var_left))
            cp_ref = norm.sf((bound - a - drift_ref) / math.sqrt(var_left))
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(cp_ref > 0.0, cp_hat / cp_ref, np.inf)
            trigger = alive & ((ratio > 1.0) | (ratio < 0.8))
            if trigger.any():
                th = theta_hat[trigger]
                with np.errstate(divide="ignore"):
                    factor = np.where(th != 0.0, (comp.theta1 / np.where(th != 0.0, th, 1.0)) ** 2, np.inf)
                new_max = np.where(np.isfinite(factor),
                                   np.minimum(float(comp.M_tilde), np.ceil(comp.M * factor)),
                                   float(comp.M_tilde)).astype(np.int64)
                spent = new_max <= n_prev[trigger]
                # spent paths settle on the boundary already evaluated: accept
                # (a rejection would have stopped above)
                idx = np.nonzero(trigger)[0]
                dead = idx[spent]
                stages[dead] = k + 1
                final_n[dead] = n_prev[dead]
                alive[dead] = False
                live = idx[~spent]
                k_left = k_looks - (k + 1)
                for j in range(1, k_left + 1):
                    sizes[live, k + j] = n_prev[live] + np.round(
                        j * (new_max[~spent] - n_prev[live]) / k_left).astype(np.int64)
    return {"rejected": rejected, "stages": stages, "final_n": final_n}


@dataclass(frozen=True)
class OBFCurtail:
    """One-sided O'Brien-Fleming group-sequential test with curtailment futility.

    Rejects at analysis k when Z_k >= crit_scale * sqrt(n_K / n_k); stops for
    futility when the conditional power at the reference alternative of
    crossing the final boundary drops below 1 - gamma.
    """

    groups: tuple[int, ...]
    gamma: float
    reference_alt: float
    crit_scale: float
    theta0: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        g = self.groups
        if len(g) < 2 or any(b <= a for a, b in zip(g, g[1:])) or g[0] < 1:
            raise ValueError("groups must be strictly increasing cumulative sizes")
        if len(g) > 8:
            raise ValueError("at most 8 analyses supported")
        if not 0.5 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0.5, 1)")
        if self.reference_alt <= self.theta0:
            raise ValueError("reference alternative must exceed theta0")

    def boundary(self, k: int) -> float:
        return self.crit_scale * math.sqrt(self.groups[-1] / self.groups[k - 1])

    def final_sum_bound(self) -> float:
        n_K = self.groups[-1]
        return n_K * self.theta0 + self.crit_scale * self.sigma * math.sqrt(n_K)

    def cond_power(self, k: int, s_cum: float) -> float:
        """Probability at the reference alternative of crossing the final bound."""
        n_k, n_K = self.groups[k - 1], self.groups[-1]
        if n_k == n_K:
            return 1.0 if s_cum >= self.final_sum_bound() else 0.0
        left = n_K - n_k
        drift = s_cum + left * self.reference_alt
        return float(norm.sf((self.final_sum_bound() - drift) / (self.sigma * math.sqrt(left))))

    def to_dict(self) -> dict:
        return {"comparator": "obf_curtail", "groups": list(self.groups), "gamma": self.gamma,
                "reference_alt": self.reference_alt, "crit_scale": self.crit_scale,
                "theta0": self.theta0, "sigma": self.sigma}


def obf_sc_step(comp: OBFCurtail, k: int, s_cum: float) -> Decision:
    """Decision at analysis k given the cumulative sum; k is 1-based."""
    if not 1 <= k <= len(comp.groups):
        raise ValueError(f"analysis index {k} out of range")
    n_k = comp.groups[k - 1]
    z = (s_cum - n_k * comp.theta0) / (comp.sigma * math.sqrt(n_k))
    last = k == len(comp.groups)
    if z >= comp.boundary(k):
        return Decision.REJECT_BOUNDARY if last else Decision.REJECT_EARLY
    if last:
        return Decision.ACCEPT_BOUNDARY
    if comp.cond_power(k, s_cum) < 1.0 - comp.gamma:
        return Decision.ACCEPT_FUTILITY
    return Decision.CONTINUE


def _obf_paths(comp: OBFCurtail, point: dict, reps: int, seed: int, stream: int) -> dict:
    theta = float(point["theta"])
    key = rng.stream_key(seed, stream)
    k_looks = len(comp.groups)
    base = np.arange(reps, dtype=np.uint64) * np.uint64(8)
    alive = np.ones(reps, dtype=bool)
    rejected = np.zeros(reps, dtype=bool)
    stages = np.full(reps, k_looks, dtype=np.int64)
    final_n = np.full(reps, comp.groups[-1], dtype=np.int64)
    s = np.zeros(reps)
    n_prev = 0
    sum_bound = comp.final_sum_bound()
    for k in range(k_looks):
        n_k = comp.groups[k]
        dn = float(n_k - n_prev)
        z = rng.gaussian_array(key, base + np.uint64(k))
        s = s + dn * theta + comp.sigma * math.sqrt(dn) * z
        n_prev = n_k
        zstat = (s - n_k * comp.theta0) / (comp.sigma * math.sqrt(n_k))
        cross = zstat >= comp.boundary(k + 1)
        if k == k_looks - 1:
            futile = ~cross
        else:
            left = float(comp.groups[-1] - n_k)
            cp = norm.sf((sum_bound - s - left * comp.reference_alt)
                         / (comp.sigma * math.sqrt(left)))
            futile = ~cross & (cp < 1.0 - comp.gamma)
        stop = alive & (cross | futile)
        rejected |= alive & cross
        stages = np.where(stop, k + 1, stages)
        final_n = np.where(stop, n_k, final_n)
        alive &= ~stop
    return {"rejected": rejected, "stages": stages, "final_n": final_n}


# ------------------------------------------------------------- dispatch


_PATH_FNS = {
    FSS: _fss_paths,
    Simon2: _simon_paths,
    Thall2: _thall_paths,
    Stein2: _stein_paths,
    CondPower2: _cond_power2_paths,
    CondPower3: cond_power3_paths,
    CHW: _chw_paths,
    OBFCurtail: _obf_paths,
}

COMPARATOR_REGISTRY = {
    "fss": FSS,
    "simon2": Simon2,
    "thall2": Thall2,
    "stein2": Stein2,
    "cond_power2": CondPower2,
    "cond_power3": CondPower3,
    "chw": CHW,
    "obf_curtail": OBFCurtail,
}


def max_stages(comp) -> int:
    if isinstance(comp, FSS):
        return 1
    if isinstance(comp, (Simon2, Thall2, Stein2, CondPower2)):
        return 2
    if isinstance(comp, CondPower3):
        return 3
    return len(comp.groups)


def comparator_paths(comp, point: dict, reps: int, seed: int, stream: int = 0) -> dict:
    """Simulate reps paths of a comparator design at one parameter point."""
    try:
        fn = _PATH_FNS[type(comp)]
    except KeyError:
        raise TypeError(f"no simulator for {type(comp).__name__}") from None
    return fn(comp, point, reps, seed, stream)


def comparator_from_dict(d: dict):
    kind = d.get("comparator")
    if kind not in COMPARATOR_REGISTRY:
        raise ValueError(f"unknown comparator {kind!r}")
    kwargs = {k: v for k, v in d.items() if k != "comparator"}
    if kind == "cond_power3" and kwargs.get("thresholds") is not None:
        kwargs["thresholds"] = Thresholds.from_dict(kwargs["thresholds"])
    for tup in ("groups", "crit"):
        if tup in kwargs and kwargs[tup] is not None:
            kwargs[tup] = tuple(kwargs[tup])
    return COMPARATOR_REGISTRY[kind](**kwargs)
