"""Threshold calibration.

Solves for (b, b̃, c) so that

  (F)  P_{u₁}{ futility stop at an adaptive stage }            = ε̃ α̃
  (R)  P_{u₀}{ no futility, early rejection }                  = ε α
  (C)  P_{u₀}{ no early stop, rejection at the max size }      = (1-ε) α

in succession.  Three routes:

* normal approximation: the signed-root statistic is a Gaussian random walk,
  the second-stage size is a step function k(x) of the first-stage mean, and
  each probability becomes a piecewise-smooth integral.  Pieces are split at
  the (closed-form) jump points of k and integrated with Gauss-Legendre
  nodes; thresholds are found with Brent's method.
* Monte Carlo: simulate trial paths from the anchored (or constrained-MLE)
  distributions, record each path's maximal crossing level per equation, and
  read thresholds off as order statistics — an exact inversion of the
  step-function LHS without re-simulation.
* exact binomial: enumerate all reachable paths and sweep the achievable GLR
  jump values, keeping the largest candidate whose LHS still meets the
  target (so the futility equation holds approximately and the rejection
  equations conservatively, as discrete atoms allow).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import brentq
from scipy.special import erfc
from scipy.stats import binom

from .design import DesignSpec, Thresholds
from .errors import InfeasibilityError, PrecisionError
from .models import Bernoulli, StageStat

_BRACKET = (1e-4, 30.0)
_XTOL = 1e-6


@dataclass
class CalibrationReport:
    thresholds: Thresholds
    u1: float
    u2: float | None
    achieved: dict[str, float]
    targets: dict[str, float]
    method: dict

    @property
    def residuals(self) -> dict[str, float]:
        return {k: self.achieved[k] - self.targets[k] for k in self.targets}

    def to_dict(self) -> dict:
        return {
            "thresholds": self.thresholds.to_dict(),
            "u1": self.u1,
            "u2": self.u2,
            "achieved": self.achieved,
            "targets": self.targets,
            "residuals": self.residuals,
            "method": self.method,
        }


# ---------------------------------------------------------------------------
# Normal-approximation machinery.


def _gl(n: int) -> tuple[np.ndarray, np.ndarray]:
    return leggauss(n)


def _map_gl(lo: float, hi: float, nodes: np.ndarray, weights: np.ndarray):
    half = 0.5 * (hi - lo)
    return lo + half * (nodes + 1.0), weights * half


_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)


def _phi(x):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def _Phi(x):
    return 0.5 * erfc(-np.asarray(x) / _SQRT2)


def _Phibar(x):
    return 0.5 * erfc(np.asarray(x) / _SQRT2)


@dataclass(frozen=True)
class NormalSurrogate:
    """Standardized problem: N(θ,1) walk, u₀ = 0, alternative drift theta1."""

    m: int
    M: int
    alpha: float
    alpha_tilde: float
    eps: float
    eps_tilde: float
    rho: float
    theta1: float
    nodes: int = 64

    @property
    def la(self) -> float:
        return -math.log(self.alpha)

    @property
    def lat(self) -> float:
        return -math.log(self.alpha_tilde)

    def n_of(self, x: float) -> float:
        i0 = 0.5 * x * x
        i1 = 0.5 * (x - self.theta1) ** 2
        t0 = self.la / i0 if i0 > 1e-300 else math.inf
        t1 = self.lat / i1 if i1 > 1e-300 else math.inf
        return min(t0, t1)

    def k_of(self, x: float) -> int:
        n = self.n_of(x)
        raw = math.ceil((1.0 + self.rho) * n - 1e-12) if math.isfinite(n) else self.M
        return max(self.m, min(self.M, raw))

    def _jump_points(self, lo_cap: int | None = None, hi_cap: int | None = None) -> list[float]:
        lo_cap = self.m if lo_cap is None else lo_cap
        hi_cap = self.M if hi_cap is None else hi_cap
        pts: list[float] = []
        for j in range(lo_cap, hi_cap + 1):
            t = j / (1.0 + self.rho)
            r0 = math.sqrt(2.0 * self.la / t)
            r1 = math.sqrt(2.0 * self.lat / t)
            pts.extend((-r0, r0, self.theta1 - r1, self.theta1 + r1))
        return pts

    def _pieces(self, lo: float, hi: float):
        """Sub-intervals of [lo, hi] on which k(x) is constant."""
        if hi <= lo:
            return
        cuts = sorted({lo, hi, *(p for p in self._jump_points() if lo < p < hi)})
        for a, bnd in zip(cuts[:-1], cuts[1:]):
            if bnd - a < 1e-14:
                continue
            yield a, bnd, self.k_of(0.5 * (a + bnd))

    # -- equation LHS evaluators ------------------------------------------
    # Each accepts an optional sampling drift so the same integrals provide
    # operating characteristics at arbitrary standardized effects; the
    # decision boundaries stay anchored at 0 and theta1 regardless.

    def futility_prob(self, b_tilde: float, drift: float | None = None) -> float:
        """P_drift{stage-1 futility, or stage-2 futility with n₂ < M}."""
        m, th = self.m, self.theta1
        d = th if drift is None else drift
        sm = math.sqrt(m)
        x_fut = th - math.sqrt(2.0 * b_tilde / m)
        total = float(_Phi(sm * (x_fut - d)))
        gx, gw = _gl(self.nodes)
        for a, bnd, k in self._pieces(x_fut, d + 8.0 / sm):
            if k <= m or k >= self.M:
                continue
            xs, ws = _map_gl(a, bnd, gx, gw)
            dens = sm * _phi(sm * (xs - d))
            bound = k * th - math.sqrt(2.0 * b_tilde * k)
            cross = _Phi((bound - m * xs - (k - m) * d) / math.sqrt(k - m))
            total += float(np.sum(ws * dens * cross))
        return total

    def early_reject_prob(self, b: float, b_tilde: float, drift: float = 0.0) -> float:
        """P_drift{no futility through stage 2, GLR rejection at stage 1 or 2 (n₂<M)}."""
        m = self.m
        d = drift
        sm = math.sqrt(m)
        x_fut = self.theta1 - math.sqrt(2.0 * b_tilde / m)
        x_rej = math.sqrt(2.0 * b / m)
        total = float(_Phibar(sm * (x_rej - d)))
        gx, gw = _gl(self.nodes)
        lo = max(x_fut, d - 8.0 / sm)
        hi = min(x_rej, d + 8.0 / sm)
        for a, bnd, k in self._pieces(lo, hi):
            if k <= m or k >= self.M:
                continue
            xs, ws = _map_gl(a, bnd, gx, gw)
            dens = sm * _phi(sm * (xs - d))
            cross = _Phibar((math.sqrt(2.0 * b * k) - m * xs - (k - m) * d) / math.sqrt(k - m))
            total += float(np.sum(ws * dens * cross))
        return total

    def final_reject_prob(self, c: float, b: float, b_tilde: float, drift: float = 0.0) -> float:
        """P_drift{continue through stage 2, final GLR ≥ c at the maximum M}."""
        m, M = self.m, self.M
        d = drift
        x_fut = self.theta1 - math.sqrt(2.0 * b_tilde / m)
        x_rej = math.sqrt(2.0 * b / m)
        gx, gw = _gl(self.nodes)
        sm = math.sqrt(m)
        sM = math.sqrt(2.0 * c * M)
        total = 0.0
        lo = max(x_fut, d - 8.0 / sm)
        hi = min(x_rej, d + 8.0 / sm)
        for a, bnd, k in self._pieces(lo, hi):
            xs, ws = _map_gl(a, bnd, gx, gw)
            dens = sm * _phi(sm * (xs - d))
            if k <= m or k >= M:
                # no informative middle analysis: walk straight from S_m to S_M
                tail = _Phibar((sM - m * xs - (M - m) * d) / math.sqrt(M - m))
                total += float(np.sum(ws * dens * tail))
                continue
            y_lo = k * self.theta1 - math.sqrt(2.0 * b_tilde * k)
            y_hi = math.sqrt(2.0 * b * k)
            if y_hi <= y_lo:
                continue
            ys, wy = _map_gl(y_lo, y_hi, gx, gw)
            tail = _Phibar((sM - ys - (M - k) * d) / math.sqrt(M - k))
            sd2 = math.sqrt(k - m)
            inc = _phi((ys[None, :] - m * xs[:, None] - (k - m) * d) / sd2) / sd2
            inner = inc @ (wy * tail)
            total += float(np.sum(ws * dens * inner))
        return total

    # -- solving -----------------------------------------------------------

    def solve(self) -> tuple[Thresholds, dict[str, float], dict[str, float]]:
        targets = {
            "futility": self.eps_tilde * self.alpha_tilde,
            "early_rejection": self.eps * self.alpha,
            "final_rejection": (1.0 - self.eps) * self.alpha,
        }
        bt = _brent(lambda v: self.futility_prob(v) - targets["futility"], "futility")
        b = _brent(lambda v: self.early_reject_prob(v, bt) - targets["early_rejection"], "early rejection")
        c = _brent(lambda v: self.final_reject_prob(v, b, bt) - targets["final_rejection"], "final rejection")
        thresholds = Thresholds(b=b, b_tilde=bt, c=c)
        achieved = {
            "futility": self.futility_prob(bt),
            "early_rejection": self.early_reject_prob(b, bt),
            "final_rejection": self.final_reject_prob(c, b, bt),
        }
        return thresholds, achieved, targets


def _brent(f, label: str) -> float:
    lo, hi = _BRACKET
    flo, fhi = f(lo), f(hi)
    if flo < 0.0 or fhi > 0.0:
        raise InfeasibilityError(
            f"{label} threshold not bracketed on {_BRACKET}: f(lo)={flo:.3g}, f(hi)={fhi:.3g}"
        )
    return float(brentq(f, lo, hi, xtol=_XTOL))


@dataclass
class NormalSurrogateFour:
    """Four-stage standardized problem; futility reference drift theta2.

    All three equation LHS values are computed by recursive numerical
    integration over the Gaussian walk, with the sample space partitioned at
    the jump points of the data-driven stage sizes and Gauss-Legendre nodes
    on each piece.  The final-rejection equation is factored into
    threshold-independent node weights so its root-find costs almost
    nothing per iteration.
    """

    m: int
    M: int
    M_prime: int
    M_tilde: int
    alpha: float
    alpha_tilde: float
    eps: float
    eps_tilde: float
    rho: float
    theta2: float
    nodes_x: int = 32
    nodes_y: int = 16
    nodes_z: int = 16

    def __post_init__(self):
        j = np.arange(self.m, self.M_tilde + 1, dtype=float)
        t = j / (1.0 + self.rho)
        r0 = np.sqrt(2.0 * self.la / t)
        r2 = np.sqrt(2.0 * self.lat / t)
        self._roots = np.stack([-r0, r0, self.theta2 - r2, self.theta2 + r2], axis=1)
        self._jump_cache: dict[tuple[int, int], np.ndarray] = {}

    @property
    def la(self) -> float:
        return -math.log(self.alpha)

    @property
    def lat(self) -> float:
        return -math.log(self.alpha_tilde)

    # -- geometry of the data-driven sizes ---------------------------------

    def _jumps_sorted(self, lo_cap: int, hi_cap: int) -> np.ndarray:
        key = (lo_cap, hi_cap)
        if key not in self._jump_cache:
            rows = self._roots[lo_cap - self.m : hi_cap - self.m + 1]
            self._jump_cache[key] = np.unique(rows.ravel())
        return self._jump_cache[key]

    def _n_vec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        i0 = 0.5 * x * x
        i2 = 0.5 * (x - self.theta2) ** 2
        t0 = np.where(i0 > 1e-300, self.la / np.maximum(i0, 1e-300), np.inf)
        t2 = np.where(i2 > 1e-300, self.lat / np.maximum(i2, 1e-300), np.inf)
        return np.minimum(t0, t2)

    def _size_vec(self, x: np.ndarray, lo: int, hi: int) -> np.ndarray:
        n = np.minimum(self._n_vec(x), 4.0 * self.M_tilde)
        raw = np.ceil((1.0 + self.rho) * n - 1e-12)
        return np.clip(raw, lo, hi).astype(np.int64)

    def _partition(self, lo: float, hi: float, lo_cap: int, hi_cap: int):
        if hi - lo < 1e-13:
            return None
        jumps = self._jumps_sorted(lo_cap, hi_cap)
        i0, i1 = np.searchsorted(jumps, [lo, hi])
        cuts = np.unique(np.concatenate([[lo, hi], jumps[i0:i1]]))
        a, b = cuts[:-1], cuts[1:]
        keep = (b - a) > 1e-14
        if not keep.any():
            return None
        return a[keep], b[keep]

    @staticmethod
    def _nodes_on(a: np.ndarray, b: np.ndarray, gx: np.ndarray, gw: np.ndarray):
        half = 0.5 * (b - a)
        xs = (a[:, None] + half[:, None] * (gx[None, :] + 1.0)).ravel()
        ws = (half[:, None] * gw[None, :]).ravel()
        return xs, ws

    def _x_groups(self, lo: float, hi: float, drift: float):
        """(k, x-nodes, weighted density) with first-stage-mean pieces grouped by k."""
        part = self._partition(lo, hi, self.m, self.M)
        if part is None:
            return
        a, b = part
        gx, gw = _gl(self.nodes_x)
        kvals = self._size_vec(0.5 * (a + b), self.m, self.M)
        xs_all, ws_all = self._nodes_on(a, b, gx, gw)
        k_nodes = np.repeat(kvals, self.nodes_x)
        sm = math.sqrt(self.m)
        dens = ws_all * sm * _phi(sm * (xs_all - drift))
        for k in np.unique(kvals):
            sel = k_nodes == k
            yield int(k), xs_all[sel], dens[sel]

    def _y_nodes(self, k: int, lo: float, hi: float):
        """Flattened nodes over third-stage-size pieces of [lo, hi] (walk units)."""
        part = self._partition(lo / k, hi / k, k, self.M_prime)
        if part is None:
            return None
        a, b = part
        gy, gw = _gl(self.nodes_y)
        hvals = self._size_vec(0.5 * (a + b), k, self.M_prime)
        ys, ws = self._nodes_on(a * k, b * k, gy, gw)
        return ys, ws, np.repeat(hvals, self.nodes_y)

    # -- equation LHS evaluators --------------------------------------------

    def futility_prob(self, bt: float, drift: float | None = None) -> float:
        """P_drift{futility crossing at stage 1, 2 or 3}."""
        th, m, Mt = self.theta2, self.m, self.M_tilde
        d = th if drift is None else drift
        sm = math.sqrt(m)
        x_fut = th - math.sqrt(2.0 * bt / m)
        total = float(_Phi(sm * (x_fut - d)))
        for k, xs, dens in self._x_groups(x_fut, d + 8.0 / sm, d):
            if k <= m:
                continue  # degenerate middle stages: no new statistic
            if k >= Mt:
                continue  # second look at the cap: only the final rule applies
            sdk = math.sqrt(k - m)
            bound2 = k * th - math.sqrt(2.0 * bt * k)
            cross2 = _Phi((bound2 - m * xs - (k - m) * d) / sdk)
            total += float(dens @ cross2)
            y_lo = k * th - math.sqrt(2.0 * bt * k)
            y_hi = m * float(xs.max()) + (k - m) * d + 8.0 * math.sqrt(k - m)
            yn = self._y_nodes(k, y_lo, y_hi)
            if yn is None:
                continue
            ys, wys, h = yn
            sel = (h > k) & (h < Mt)
            if not sel.any():
                continue
            ys, wys, h = ys[sel], wys[sel], h[sel]
            cross3 = _Phi(((h * th - np.sqrt(2.0 * bt * h)) - ys - (h - k) * d) / np.sqrt(h - k))
            A = _phi((ys[None, :] - m * xs[:, None] - (k - m) * d) / sdk) / sdk
            total += float(dens @ (A @ (wys * cross3)))
        return total

    def early_reject_prob(self, b: float, bt: float, drift: float = 0.0) -> float:
        """P_drift{no prior futility, GLR rejection at stage 1, 2 or 3}."""
        th, m, Mt = self.theta2, self.m, self.M_tilde
        d = drift
        sm = math.sqrt(m)
        x_rej = math.sqrt(2.0 * b / m)
        total = float(_Phibar(sm * (x_rej - d)))
        x_lo = max(th - math.sqrt(2.0 * bt / m), d - 8.0 / sm)
        x_hi = min(x_rej, d + 8.0 / sm)
        for k, xs, dens in self._x_groups(x_lo, x_hi, d):
            if k <= m:
                continue
            if k >= Mt:
                continue
            sdk = math.sqrt(k - m)
            cross2 = _Phibar((math.sqrt(2.0 * b * k) - m * xs - (k - m) * d) / sdk)
            total += float(dens @ cross2)
            y_lo = k * th - math.sqrt(2.0 * bt * k)
            y_hi = math.sqrt(2.0 * b * k)
            yn = self._y_nodes(k, y_lo, y_hi)
            if yn is None:
                continue
            ys, wys, h = yn
            sel = (h > k) & (h < Mt)
            if not sel.any():
                continue
            ys, wys, h = ys[sel], wys[sel], h[sel]
            cross3 = _Phibar((np.sqrt(2.0 * b * h) - ys - (h - k) * d) / np.sqrt(h - k))
            A = _phi((ys[None, :] - m * xs[:, None] - (k - m) * d) / sdk) / sdk
            total += float(dens @ (A @ (wys * cross3)))
        return total

    def _final_terms(self, b: float, bt: float, drift: float = 0.0):
        """Threshold-independent weights for the final-rejection integral.

        Every surviving path is reduced to a weighted node (value, size); the
        c equation is then a weighted sum of normal tails over these nodes.
        """
        th, m, Mt = self.theta2, self.m, self.M_tilde
        d = drift
        sm = math.sqrt(m)
        nodes: list[tuple[int, np.ndarray, np.ndarray]] = []  # (size, values, weights)
        x_lo = max(th - math.sqrt(2.0 * bt / m), d - 8.0 / sm)
        x_hi = min(math.sqrt(2.0 * b / m), d + 8.0 / sm)
        gz, gwz = _gl(self.nodes_z)
        for k, xs, dens in self._x_groups(x_lo, x_hi, d):
            if k <= m or k >= Mt:
                # no intermediate tests between the first look and the end:
                # either stages 2-3 re-test the same statistic, or the second
                # look already sits at the cap where only the final rule runs
                nodes.append((m, m * xs, dens))
                continue
            y_lo = k * th - math.sqrt(2.0 * bt * k)
            y_hi = math.sqrt(2.0 * b * k)
            yn = self._y_nodes(k, y_lo, y_hi)
            if yn is None:
                continue
            ys, wys, h = yn
            sdk = math.sqrt(k - m)
            A = _phi((ys[None, :] - m * xs[:, None] - (k - m) * d) / sdk) / sdk
            wy_eff = (dens @ A) * wys
            # h<=k: degenerate third stage; h=M̃: the third look IS the final one
            passthrough = (h <= k) | (h >= Mt)
            if passthrough.any():
                nodes.append((k, ys[passthrough], wy_eff[passthrough]))
            inner = ~passthrough
            for hv in np.unique(h[inner]) if inner.any() else ():
                selh = inner & (h == hv)
                z_lo = hv * th - math.sqrt(2.0 * bt * hv)
                z_hi = math.sqrt(2.0 * b * hv)
                if z_hi <= z_lo:
                    continue
                sdh = math.sqrt(hv - k)
                # panel the range so the increment density is resolved
                npan = int(min(24, max(1, math.ceil((z_hi - z_lo) / (2.0 * sdh)))))
                cuts = np.linspace(z_lo, z_hi, npan + 1)
                zs, wzs = self._nodes_on(cuts[:-1], cuts[1:], gz, gwz)
                B = _phi((zs[None, :] - ys[selh][:, None] - (hv - k) * d) / sdh) / sdh
                nodes.append((int(hv), zs, (wy_eff[selh] @ B) * wzs))
        return nodes

    def final_reject_prob(self, c: float, b: float, bt: float,
                          drift: float = 0.0, terms=None) -> float:
        """P_drift{alive through stage 3, final GLR ≥ c at M̃}."""
        if terms is None:
            terms = self._final_terms(b, bt, drift)
        Mt = self.M_tilde
        sC = math.sqrt(2.0 * c * Mt)
        total = 0.0
        for size, vals, w in terms:
            total += float(w @ _Phibar((sC - vals - (Mt - size) * drift) / math.sqrt(Mt - size)))
        return total

    def solve(self) -> tuple[Thresholds, dict[str, float], dict[str, float]]:
        targets = {
            "futility": self.eps_tilde * self.alpha_tilde,
            "early_rejection": self.eps * self.alpha,
            "final_rejection": (1.0 - self.eps) * self.alpha,
        }
        bt = _brent(lambda v: self.futility_prob(v) - targets["futility"], "futility")
        b = _brent(lambda v: self.early_reject_prob(v, bt) - targets["early_rejection"], "early rejection")
        terms = self._final_terms(b, bt)
        c = _brent(
            lambda v: self.final_reject_prob(v, b, bt, terms=terms) - targets["final_rejection"],
            "final rejection",
        )
        thresholds = Thresholds(b=b, b_tilde=bt, c=c)
        achieved = {
            "futility": self.futility_prob(bt),
            "early_rejection": self.early_reject_prob(b, bt),
            "final_rejection": self.final_reject_prob(c, b, bt, terms=terms),
        }
        return thresholds, achieved, targets


def _surrogate_drift(spec: DesignSpec, u_ref: float) -> float:
    """Map an effect value onto the standardized drift scale via matched KL."""
    sign = 1.0 if u_ref >= spec.u0 else -1.0
    return sign * math.sqrt(2.0 * spec.model.effect_kl(u_ref, spec.u0))


def three_stage_surrogate(spec: DesignSpec, nodes: int = 64) -> NormalSurrogate:
    return NormalSurrogate(
        m=spec.m, M=spec.M, alpha=spec.alpha, alpha_tilde=spec.alpha_tilde,
        eps=spec.eps, eps_tilde=spec.eps_tilde, rho=spec.rho_m,
        theta1=_surrogate_drift(spec, spec.resolved_u1()), nodes=nodes,
    )


def four_stage_surrogate(spec: DesignSpec, nodes: tuple[int, int, int] = (32, 16, 16)) -> NormalSurrogateFour:
    return NormalSurrogateFour(
        m=spec.m, M=spec.M, M_prime=spec.M_prime, M_tilde=spec.M_tilde,
        alpha=spec.alpha, alpha_tilde=spec.alpha_tilde,
        eps=spec.eps, eps_tilde=spec.eps_tilde, rho=spec.rho_m,
        theta2=_surrogate_drift(spec, spec.resolved_u2()),
        nodes_x=nodes[0], nodes_y=nodes[1], nodes_z=nodes[2],
    )


def crossing_probability(
    spec: DesignSpec,
    thresholds: Thresholds,
    hypothesis_u: float,
    event: str,
) -> float:
    """Probability of a named stopping event under a point hypothesis.

    event is one of "futility", "early_rejection", "final_rejection";
    the hypothesis effect is mapped to the standardized drift scale by
    matched KL information (exact for NormalKnownVar).
    """
    drift = _surrogate_drift(spec, hypothesis_u)
    if spec.four_stage:
        surr4 = four_stage_surrogate(spec)
        if event == "futility":
            return surr4.futility_prob(thresholds.b_tilde, drift=drift)
        if event == "early_rejection":
            return surr4.early_reject_prob(thresholds.b, thresholds.b_tilde, drift=drift)
        if event == "final_rejection":
            return surr4.final_reject_prob(thresholds.c, thresholds.b, thresholds.b_tilde, drift=drift)
        raise ValueError(f"unknown event {event!r}")
    surr = three_stage_surrogate(spec)
    if event == "futility":
        return surr.futility_prob(thresholds.b_tilde, drift=drift)
    if event == "early_rejection":
        return surr.early_reject_prob(thresholds.b, thresholds.b_tilde, drift=drift)
    if event == "final_rejection":
        return surr.final_reject_prob(thresholds.c, thresholds.b, thresholds.b_tilde, drift=drift)
    raise ValueError(f"unknown event {event!r}")


def calibrate_three_stage(spec: DesignSpec, nodes: int = 64) -> CalibrationReport:
    if spec.four_stage:
        raise ValueError("spec has four stages; use calibrate_four_stage")
    surr = three_stage_surrogate(spec, nodes)
    thresholds, achieved, targets = surr.solve()
    return CalibrationReport(
        thresholds=thresholds, u1=spec.resolved_u1(), u2=None,
        achieved=achieved, targets=targets,
        method={"kind": "normal_approx", "nodes": nodes, "theta1_std": surr.theta1},
    )


def calibrate_four_stage(spec: DesignSpec, nodes: tuple[int, int, int] = (32, 16, 16)) -> CalibrationReport:
    if not spec.four_stage:
        raise ValueError("spec lacks M_prime/M_tilde; use calibrate_three_stage")
    surr = four_stage_surrogate(spec, nodes)
    thresholds, achieved, targets = surr.solve()
    return CalibrationReport(
        thresholds=thresholds, u1=spec.resolved_u1(), u2=spec.resolved_u2(),
        achieved=achieved, targets=targets,
        method={"kind": "normal_approx", "nodes": list(nodes), "theta2_std": surr.theta2},
    )


# ---------------------------------------------------------------------------
# Monte Carlo calibration (order-statistic inversion).


def _quantile_level(levels: np.ndarray, tail_prob: float) -> float:
    """Largest achievable threshold whose empirical tail still meets the budget.

    With atom-valued levels (discrete data) this matches the exact sweep's
    inclusive-crossing convention; for continuous levels it coincides with
    the (1 - tail_prob) order statistic to within one rank.  Levels of -inf
    mark paths on which the event cannot fire; if the budget rank lands
    there the rule is disabled by placing the threshold above every level.
    """
    k = math.ceil(tail_prob * len(levels))
    t = float(np.partition(levels, len(levels) - k)[len(levels) - k])
    if math.isfinite(t):
        return t
    finite = levels[np.isfinite(levels)]
    return float(finite.max()) + 1.0 if len(finite) else 1.0


def calibrate_monte_carlo(
    spec: DesignSpec,
    stage1_stat: StageStat | None = None,
    stage2_stat: StageStat | None = None,
) -> CalibrationReport:
    """Bootstrap-style calibration from simulated trial paths.

    Without data, paths are anchored at the hypothesised effects (u₁ for the
    futility equation, u₀ for the rejection equations).  With first-stage
    data the anchors become the constrained MLEs, and if a second-stage
    statistic is supplied the c-equation re-anchors at its constrained MLE.
    """
    from . import simulate  # local import: simulate depends on design types

    reps = spec.calibration.reps
    seed = spec.calibration.seed
    u1 = spec.resolved_u1()
    u2 = spec.resolved_u2() if spec.four_stage else None
    u_fut = u2 if spec.four_stage else u1

    anchor_fut = simulate.anchor_point(spec, u_fut, stage1_stat)
    anchor_null = simulate.anchor_point(spec, spec.u0, stage1_stat)
    anchor_final = simulate.anchor_point(spec, spec.u0, stage2_stat or stage1_stat)

    targets = {
        "futility": spec.eps_tilde * spec.alpha_tilde,
        "early_rejection": spec.eps * spec.alpha,
        "final_rejection": (1.0 - spec.eps) * spec.alpha,
    }
    for name, t in targets.items():
        if t < 10.0 / reps:
            raise PrecisionError(
                f"{name} target {t:.2e} below Monte Carlo resolution 10/reps={10.0/reps:.2e}"
            )

    fut_paths = simulate.stage_statistics(spec, anchor_fut, reps, seed, stream=1)
    bt = _quantile_level(_futility_levels(spec, fut_paths), targets["futility"])

    null_paths = simulate.stage_statistics(spec, anchor_null, reps, seed, stream=2)
    b = _quantile_level(_rejection_levels(spec, null_paths, bt), targets["early_rejection"])

    final_paths = null_paths if stage2_stat is None else simulate.stage_statistics(
        spec, anchor_final, reps, seed, stream=3
    )
    c = _quantile_level(_final_levels(spec, final_paths, b, bt), targets["final_rejection"])

    thresholds = Thresholds(b=b, b_tilde=bt, c=c)
    achieved = {
        "futility": float(np.mean(_futility_levels(spec, fut_paths) >= bt)),
        "early_rejection": float(np.mean(_rejection_levels(spec, null_paths, bt) >= b)),
        "final_rejection": float(np.mean(_final_levels(spec, final_paths, b, bt) >= c)),
    }
    se = {k: math.sqrt(max(v * (1 - v), 1e-12) / reps) for k, v in achieved.items()}
    return CalibrationReport(
        thresholds=thresholds, u1=u1, u2=u2,
        achieved=achieved, targets=targets,
        method={"kind": "monte_carlo", "reps": reps, "seed": seed, "mc_se": se,
                "anchors": {"futility": anchor_fut, "null": anchor_null}},
    )


def _adaptive_stage_count(spec: DesignSpec) -> int:
    return 3 if spec.four_stage else 2


def _futility_levels(spec: DesignSpec, paths: dict) -> np.ndarray:
    """Per-path maximal b̃ level at which a futility stop would occur."""
    n_max = spec.n_max
    best = np.full(paths["n"][0].shape, -np.inf)
    for i in range(_adaptive_stage_count(spec)):
        tested = paths["n"][i] < n_max
        lev = np.where(tested & (paths["u_hat"][i] < paths["u_fut_ref"]), paths["glr_fut"][i], -np.inf)
        best = np.maximum(best, lev)
    return best


def _rejection_levels(spec: DesignSpec, paths: dict, bt: float) -> np.ndarray:
    """Per-path maximal b level for early rejection, after futility exclusion."""
    n_max = spec.n_max
    alive = np.ones(paths["n"][0].shape, dtype=bool)
    best = np.full(paths["n"][0].shape, -np.inf)
    for i in range(_adaptive_stage_count(spec)):
        tested = paths["n"][i] < n_max
        rej = np.where(tested & (paths["u_hat"][i] > spec.u0) & alive, paths["glr_null"][i], -np.inf)
        best = np.maximum(best, rej)
        fut = tested & (paths["u_hat"][i] < paths["u_fut_ref"]) & (paths["glr_fut"][i] >= bt)
        alive &= ~fut
    return best


def _final_levels(spec: DesignSpec, paths: dict, b: float, bt: float) -> np.ndarray:
    """Per-path final-stage c level on paths alive through the adaptive stages."""
    n_max = spec.n_max
    alive = np.ones(paths["n"][0].shape, dtype=bool)
    for i in range(_adaptive_stage_count(spec)):
        tested = paths["n"][i] < n_max
        rej = tested & (paths["u_hat"][i] > spec.u0) & (paths["glr_null"][i] >= b)
        fut = tested & (paths["u_hat"][i] < paths["u_fut_ref"]) & (paths["glr_fut"][i] >= bt)
        alive &= ~(rej | fut)
    last = _adaptive_stage_count(spec)
    return np.where(alive & (paths["u_hat"][last] > spec.u0), paths["glr_null"][last], -np.inf)


# ---------------------------------------------------------------------------
# Exact binomial calibration.


@dataclass
class _BernPath:
    prob: float
    stat: StageStat
    n2: int


def _bern_stage1(spec: DesignSpec, p: float) -> list[_BernPath]:
    m = spec.m
    pmf = binom.pmf(np.arange(m + 1), m, p)
    out = []
    for s in range(m + 1):
        stat = StageStat(n=m, s=(float(s),))
        out.append(_BernPath(prob=float(pmf[s]), stat=stat, n2=spec.next_stage_size(1, stat)))
    return out


def _bern_glrs(spec: DesignSpec, stat: StageStat, u1: float) -> tuple[float, float, float]:
    model = spec.model
    return model.u_hat(stat), model.glr(stat, spec.u0), model.glr(stat, u1)


def calibrate_binomial_exact(spec: DesignSpec) -> CalibrationReport:
    """Exact single-arm binomial calibration by sweeping achievable GLR jumps.

    Each equation's LHS is a tail sum over a fixed, threshold-independent
    distribution of per-path maximal crossing levels (the stop-or-continue
    structure folds into a max because the rules at a given stage are
    mutually exclusive), so each threshold is the largest achievable level
    whose tail probability still meets its budget.  The futility equation is
    then met approximately and the rejection equations conservatively.
    """
    if not isinstance(spec.model, Bernoulli):
        raise ValueError("exact calibration implemented for single-arm Bernoulli models")
    if spec.four_stage:
        raise ValueError("exact binomial calibration covers the three-stage design")
    m, M = spec.m, spec.M
    p0 = spec.u0
    u1 = spec.resolved_u1()
    targets = {
        "futility": spec.eps_tilde * spec.alpha_tilde,
        "early_rejection": spec.eps * spec.alpha,
        "final_rejection": (1.0 - spec.eps) * spec.alpha,
    }

    def stage_values(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        uh = np.empty(n + 1)
        g0 = np.empty(n + 1)
        g1 = np.empty(n + 1)
        for s in range(n + 1):
            stat = StageStat(n=n, s=(float(s),))
            uh[s], g0[s], g1[s] = _bern_glrs(spec, stat, u1)
        return uh, g0, g1

    uh_m, g0_m, g1_m = stage_values(m)
    n2_of = np.array([
        spec.next_stage_size(1, StageStat(n=m, s=(float(s),))) for s in range(m + 1)
    ])
    cache: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {m: (uh_m, g0_m, g1_m)}

    def values_at(n: int):
        if n not in cache:
            cache[n] = stage_values(n)
        return cache[n]

    def two_stage_atoms(p: float):
        """(prob, s1, n2, s2) over all stage-1 x stage-2-increment paths."""
        pmf1 = binom.pmf(np.arange(m + 1), m, p)
        for s1 in range(m + 1):
            n2 = int(n2_of[s1])
            inc = n2 - m
            if inc <= 0:
                yield float(pmf1[s1]), s1, n2, s1
                continue
            pmf2 = binom.pmf(np.arange(inc + 1), inc, p)
            for t in range(inc + 1):
                yield float(pmf1[s1] * pmf2[t]), s1, n2, s1 + t

    def futility_atoms():
        for prob, s1, n2, s2 in two_stage_atoms(u1):
            lev = g1_m[s1] if uh_m[s1] < u1 else -np.inf
            if m < n2 < M:
                uh2, _, g12 = values_at(n2)
                if uh2[s2] < u1:
                    lev = max(lev, g12[s2])
            yield prob, lev

    def rejection_atoms(bt_val: float):
        for prob, s1, n2, s2 in two_stage_atoms(p0):
            fut1 = uh_m[s1] < u1 and g1_m[s1] >= bt_val
            lev = g0_m[s1] if uh_m[s1] > p0 else -np.inf
            if not fut1 and m < n2 < M:
                uh2, g02, _ = values_at(n2)
                if uh2[s2] > p0:
                    lev = max(lev, g02[s2])
            yield prob, lev

    def final_atoms(b_val: float, bt_val: float):
        uh_M, g0_M, _ = values_at(M)
        for prob, s1, n2, s2 in two_stage_atoms(p0):
            if uh_m[s1] < u1 and g1_m[s1] >= bt_val:
                continue
            if uh_m[s1] > p0 and g0_m[s1] >= b_val:
                continue
            if m < n2 < M:
                uh2, g02, g12 = values_at(n2)
                if uh2[s2] < u1 and g12[s2] >= bt_val:
                    continue
                if uh2[s2] > p0 and g02[s2] >= b_val:
                    continue
            left = M - min(n2, M)
            if left > 0:
                pmfF = binom.pmf(np.arange(left + 1), left, p0)
                for t in range(left + 1):
                    sM = s2 + t
                    yield prob * float(pmfF[t]), (g0_M[sM] if uh_M[sM] > p0 else -np.inf)
            else:
                yield prob, (g0_M[s2] if uh_M[s2] > p0 else -np.inf)

    def collect(gen):
        pairs = list(gen)
        if not pairs:
            raise InfeasibilityError(
                "no sample path reaches this stage, so the design cannot "
                "spend its error budget; widen the stage caps")
        pr, lv = zip(*pairs)
        return np.asarray(pr), np.asarray(lv)

    pr_f, lv_f = collect(futility_atoms())
    bt = _sweep_levels(pr_f, lv_f, targets["futility"])
    pr_r, lv_r = collect(rejection_atoms(bt))
    b = _sweep_levels(pr_r, lv_r, targets["early_rejection"])
    pr_c, lv_c = collect(final_atoms(b, bt))
    c = _sweep_levels(pr_c, lv_c, targets["final_rejection"])

    achieved = {
        "futility": float(np.sum(pr_f[lv_f >= bt])),
        "early_rejection": float(np.sum(pr_r[lv_r >= b])),
        "final_rejection": float(np.sum(pr_c[lv_c >= c])),
    }
    return CalibrationReport(
        thresholds=Thresholds(b=b, b_tilde=bt, c=c), u1=u1, u2=None,
        achieved=achieved, targets=targets,
        method={"kind": "binomial_exact"},
    )


def _sweep_levels(probs: np.ndarray, levels: np.ndarray, target: float) -> float:
    """Largest achievable level whose tail probability still meets the target.

    If even the loosest achievable threshold underspends the budget, fall
    back to one above the largest level, disabling the rule (conservative
    for the rejection equations).
    """
    finite = np.isfinite(levels)
    if not finite.any():
        return 1.0
    lv = levels[finite]
    pr = probs[finite]
    order = np.argsort(lv)[::-1]
    lv, pr = lv[order], pr[order]
    tails = np.cumsum(pr)
    uniq_last = np.r_[lv[1:] != lv[:-1], True]  # last index of each unique level
    cand_levels = lv[uniq_last]
    cand_tails = tails[uniq_last]
    ok = cand_tails >= target - 1e-15
    if not ok.any():
        return float(lv[0] + 1.0)
    # candidates are in descending level order; take the largest level meeting target
    return float(cand_levels[int(np.argmax(ok))])
