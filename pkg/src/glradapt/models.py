"""Exponential-family trial models.

Each model knows its sufficient statistic, the effect measure u(θ) the
hypotheses are phrased in, and the generalized likelihood ratio

    Λ(stat, u_ref) = inf { KL(θ̂ → λ) summed over observations : u(λ) = u_ref }

The GLR is returned as a total (already multiplied by the sample size), and
``n_units`` is the per-arm sample size used by the adaptive stage-size rule
(for two-arm models one "unit" is a pair of observations, one per arm).

The implied alternative is the effect at which the fixed-size level-α test
with the maximum sample size attains power 1-α̃.  Binomial models compute it
from exact binomial tails; the continuous models invert the information
identity 2·M·I(u₁→u₀) = (z_α + z_{α̃})².
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

from scipy.optimize import brentq
from scipy.stats import binom, norm

from .errors import InfeasibilityError


def _bern_kl(p: float, q: float) -> float:
    """KL(Bernoulli(p) || Bernoulli(q)), finite for p in [0,1], q in (0,1)."""
    out = 0.0
    if p > 0.0:
        out += p * math.log(p / q)
    if p < 1.0:
        out += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return out


def _clamp_rate(s: float, n: float) -> float:
    """Clamp an estimated rate into [1/(2n), 1-1/(2n)] for GLR evaluation."""
    lo = 1.0 / (2.0 * n)
    return min(max(s / n, lo), 1.0 - lo)


@dataclass(frozen=True)
class StageStat:
    """Cumulative sufficient statistic at one analysis.

    Field meaning depends on the model family:
      single-arm:  n, s = sum of observations (successes for Bernoulli)
      two-arm:     n per arm, s = (sum_x, sum_y); ss = (sumsq_x, sumsq_y)
                   only for the unknown-variance model
    """

    n: int
    s: tuple[float, ...]
    ss: tuple[float, ...] | None = None

    def to_dict(self) -> dict:
        d = {"n": self.n, "s": list(self.s)}
        if self.ss is not None:
            d["ss"] = list(self.ss)
        return d

    @staticmethod
    def from_dict(d: dict) -> "StageStat":
        ss = tuple(d["ss"]) if d.get("ss") is not None else None
        return StageStat(n=int(d["n"]), s=tuple(float(v) for v in d["s"]), ss=ss)


class Model(ABC):
    family: str

    @abstractmethod
    def u_hat(self, stat: StageStat) -> float:
        """Effect estimate u(θ̂)."""

    @abstractmethod
    def glr(self, stat: StageStat, u_ref: float) -> float:
        """Total GLR statistic Λ against {u(θ) = u_ref}; nonnegative."""

    @abstractmethod
    def effect_kl(self, u_a: float, u_b: float) -> float:
        """Per-unit KL information between the anchored points at u_a, u_b."""

    @abstractmethod
    def validate_stat(self, stat: StageStat) -> None:
        """Raise ValueError on an impossible statistic."""

    def n_units(self, stat: StageStat) -> int:
        return stat.n

    def signed_root(self, stat: StageStat, u_ref: float) -> float:
        lam = self.glr(stat, u_ref)
        sign = 1.0 if self.u_hat(stat) >= u_ref else -1.0
        return sign * math.sqrt(2.0 * self.n_units(stat) * lam)

    def effect_domain(self, u0: float) -> tuple[float, float]:
        """Open interval of representable effect values."""
        return (-math.inf, math.inf)

    def implied_alternative(self, u0: float, M: int, alpha: float, alpha_tilde: float) -> float:
        za = norm.ppf(1.0 - alpha) + norm.ppf(1.0 - alpha_tilde)
        target = za * za / (2.0 * M)
        lo = u0 + 1e-9
        _, dom_hi = self.effect_domain(u0)
        if math.isfinite(dom_hi):
            hi = dom_hi - 1e-9
            if self.effect_kl(hi, u0) < target:
                raise InfeasibilityError(
                    f"no effect in ({u0}, {dom_hi}) reaches information {target:.4g}"
                )
        else:
            hi = u0 + 1.0
            while self.effect_kl(hi, u0) < target:
                hi += 1.0
                if hi > u0 + 1e3:
                    raise InfeasibilityError("implied alternative out of range")
        return float(brentq(lambda u: self.effect_kl(u, u0) - target, lo, hi, xtol=1e-12))

    @abstractmethod
    def to_dict(self) -> dict: ...


class NormalKnownVar(Model):
    """N(θ, σ²) observations, u(θ) = θ."""

    family = "normal_known_var"

    def __init__(self, sigma: float = 1.0):
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.sigma = float(sigma)

    def u_hat(self, stat: StageStat) -> float:
        return stat.s[0] / stat.n

    def glr(self, stat: StageStat, u_ref: float) -> float:
        d = self.u_hat(stat) - u_ref
        return stat.n * d * d / (2.0 * self.sigma**2)

    def effect_kl(self, u_a: float, u_b: float) -> float:
        d = u_a - u_b
        return d * d / (2.0 * self.sigma**2)

    def validate_stat(self, stat: StageStat) -> None:
        if stat.n < 1 or len(stat.s) != 1:
            raise ValueError("normal stat needs n >= 1 and a single sum")

    def to_dict(self) -> dict:
        return {"family": self.family, "sigma": self.sigma}


class Bernoulli(Model):
    """Bernoulli(p) observations, u(θ) = p."""

    family = "bernoulli"

    def u_hat(self, stat: StageStat) -> float:
        return stat.s[0] / stat.n

    def glr(self, stat: StageStat, u_ref: float) -> float:
        if not 0.0 < u_ref < 1.0:
            raise ValueError("Bernoulli reference rate must be in (0,1)")
        return stat.n * _bern_kl(_clamp_rate(stat.s[0], stat.n), u_ref)

    def effect_domain(self, u0: float) -> tuple[float, float]:
        return (0.0, 1.0)

    def effect_kl(self, u_a: float, u_b: float) -> float:
        return _bern_kl(u_a, u_b)

    def validate_stat(self, stat: StageStat) -> None:
        if stat.n < 1 or len(stat.s) != 1:
            raise ValueError("bernoulli stat needs n >= 1 and a single count")
        s = stat.s[0]
        if s < 0 or s > stat.n or s != int(s):
            raise ValueError("success count must be an integer in [0, n]")

    def implied_alternative(self, u0: float, M: int, alpha: float, alpha_tilde: float) -> float:
        # exact: smallest c with P_{u0}(S_M > c) <= alpha, then the p with
        # P_p(S_M > c) = 1 - alpha_tilde
        c = int(binom.ppf(1.0 - alpha, M, u0))
        if c >= M:
            raise InfeasibilityError(
                f"no level-{alpha} rejection region exists with M={M} at p0={u0}")
        lo, hi = u0 + 1e-9, 1 - 1e-12
        if binom.cdf(c, M, lo) <= alpha_tilde:
            raise InfeasibilityError(
                f"Type II target {alpha_tilde} already met at p0={u0}; alternative undefined")
        return float(brentq(lambda p: binom.cdf(c, M, p) - alpha_tilde, lo, hi, xtol=1e-14))

    def to_dict(self) -> dict:
        return {"family": self.family}


def _constrained_pair_root(px: float, py: float, nx: float, ny: float, delta: float) -> float:
    """argmin over r of nx*KL(px||r+delta) + ny*KL(py||r); r + delta and r in (0,1)."""
    lo = max(0.0, -delta) + 1e-12
    hi = min(1.0, 1.0 - delta) - 1e-12
    if lo >= hi:
        raise ValueError(f"infeasible rate difference {delta}")

    def dfdr(r: float) -> float:
        g = 0.0
        pd = r + delta
        g += nx * (-px / pd + (1.0 - px) / (1.0 - pd))
        g += ny * (-py / r + (1.0 - py) / (1.0 - r))
        return g

    # objective is convex in r; bisect the derivative
    flo, fhi = dfdr(lo), dfdr(hi)
    if flo >= 0.0:
        return lo
    if fhi <= 0.0:
        return hi
    a, bnd = lo, hi
    for _ in range(80):
        mid = 0.5 * (a + bnd)
        if dfdr(mid) < 0.0:
            a = mid
        else:
            bnd = mid
    return 0.5 * (a + bnd)


def _constrained_pair_bern(px: float, py: float, nx: float, ny: float, delta: float) -> float:
    """min over r of nx*KL(px||r+delta) + ny*KL(py||r); r + delta and r in (0,1)."""
    r = _constrained_pair_root(px, py, nx, ny, delta)
    return nx * _bern_kl(px, r + delta) + ny * _bern_kl(py, r)


class TwoArmBernoulli(Model):
    """Two Bernoulli arms with equal allocation; u(θ) = p_x - p_y.

    ``q0`` anchors the design-time information calculations (the reference
    response rate of the control arm); the GLR itself depends only on data.
    """

    family = "two_arm_bernoulli"

    def __init__(self, q0: float = 0.5):
        if not 0.0 < q0 < 1.0:
            raise ValueError("q0 must be in (0,1)")
        self.q0 = float(q0)

    def u_hat(self, stat: StageStat) -> float:
        return (stat.s[0] - stat.s[1]) / stat.n

    def glr(self, stat: StageStat, u_ref: float) -> float:
        n = stat.n
        px = _clamp_rate(stat.s[0], n)
        py = _clamp_rate(stat.s[1], n)
        return _constrained_pair_bern(px, py, n, n, u_ref)

    def effect_domain(self, u0: float) -> tuple[float, float]:
        return (-self.q0, 1.0 - self.q0)

    def effect_kl(self, u_a: float, u_b: float) -> float:
        px, py = self.q0 + u_a, self.q0
        if not (0.0 < px < 1.0):
            raise ValueError(f"anchored rate {px} outside (0,1)")
        return _constrained_pair_bern(px, py, 1.0, 1.0, u_b)

    def validate_stat(self, stat: StageStat) -> None:
        if stat.n < 1 or len(stat.s) != 2:
            raise ValueError("two-arm bernoulli stat needs n >= 1 and two counts")
        for s in stat.s:
            if s < 0 or s > stat.n or s != int(s):
                raise ValueError("success counts must be integers in [0, n]")

    def to_dict(self) -> dict:
        return {"family": self.family, "q0": self.q0}


class TwoSampleNormal(Model):
    """Two normal arms with known common σ; u(θ) = μ_x - μ_y."""

    family = "two_sample_normal"

    def __init__(self, sigma: float = 1.0):
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.sigma = float(sigma)

    def u_hat(self, stat: StageStat) -> float:
        return (stat.s[0] - stat.s[1]) / stat.n

    def glr(self, stat: StageStat, u_ref: float) -> float:
        d = self.u_hat(stat) - u_ref
        return stat.n * d * d / (4.0 * self.sigma**2)

    def effect_kl(self, u_a: float, u_b: float) -> float:
        d = u_a - u_b
        return d * d / (4.0 * self.sigma**2)

    def validate_stat(self, stat: StageStat) -> None:
        if stat.n < 1 or len(stat.s) != 2:
            raise ValueError("two-sample normal stat needs n >= 1 and two sums")

    def to_dict(self) -> dict:
        return {"family": self.family, "sigma": self.sigma}


class TwoSampleNormalUnknownVar(Model):
    """Two normal arms, common unknown variance; u(θ) = μ_x - μ_y.

    The variance is profiled out of the GLR:
        Λ = n · log(1 + (δ̂ - u_ref)² / (4 σ̂²)),
    with σ̂² the pooled maximum-likelihood variance.  ``sigma_ref`` anchors
    design-time information (implied alternatives, stage-size previews).
    """

    family = "two_sample_normal_unknown_var"

    def __init__(self, sigma_ref: float = 1.0):
        if sigma_ref <= 0:
            raise ValueError("sigma_ref must be positive")
        self.sigma_ref = float(sigma_ref)

    def u_hat(self, stat: StageStat) -> float:
        return (stat.s[0] - stat.s[1]) / stat.n

    def _sigma2_hat(self, stat: StageStat) -> float:
        n = stat.n
        sse = 0.0
        for mean_sum, sq_sum in zip(stat.s, stat.ss):
            sse += sq_sum - mean_sum * mean_sum / n
        # degenerate spread happens with n=1 or constant data; floor it
        return max(sse / (2.0 * n), 1e-12)

    def glr(self, stat: StageStat, u_ref: float) -> float:
        d = self.u_hat(stat) - u_ref
        return stat.n * math.log1p(d * d / (4.0 * self._sigma2_hat(stat)))

    def effect_kl(self, u_a: float, u_b: float) -> float:
        d = u_a - u_b
        return math.log1p(d * d / (4.0 * self.sigma_ref**2))

    def validate_stat(self, stat: StageStat) -> None:
        if stat.n < 2 or len(stat.s) != 2 or stat.ss is None or len(stat.ss) != 2:
            raise ValueError("unknown-variance stat needs n >= 2, two sums and two sums of squares")
        for mean_sum, sq_sum in zip(stat.s, stat.ss):
            if sq_sum * stat.n < mean_sum * mean_sum - 1e-9:
                raise ValueError("sum of squares inconsistent with sum")

    def to_dict(self) -> dict:
        return {"family": self.family, "sigma_ref": self.sigma_ref}


MODEL_REGISTRY = {
    cls.family: cls
    for cls in (NormalKnownVar, Bernoulli, TwoArmBernoulli, TwoSampleNormal, TwoSampleNormalUnknownVar)
}


def model_from_dict(d: dict) -> Model:
    family = d.get("family")
    if family not in MODEL_REGISTRY:
        raise ValueError(f"unknown model family {family!r}")
    kwargs = {k: v for k, v in d.items() if k != "family"}
    return MODEL_REGISTRY[family](**kwargs)
