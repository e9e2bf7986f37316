"""Adaptive multi-stage design: stage-size rule and stopping decisions.

Three-stage test (stages m, n₂, M):
  at stage i ≤ 2 with n_i < M:
      reject   if u(θ̂) > u₀ and Λ(u₀) ≥ b
      accept   if u(θ̂) < u₁ and Λ(u₁) ≥ b̃          (futility)
  at any analysis with n_i = M:
      reject   if u(θ̂) > u₀ and Λ(u₀) ≥ c, else accept.
  n₂ = m ∨ (M ∧ ⌈(1+ρ) n(θ̂_m)⌉),
  n(θ) = min(|log α| / I(θ,u₀), |log α̃| / I(θ,u₁)).

Four-stage test (m, n₂ ≤ M, n₃ ≤ M′, M̃) replaces u₁ by u₂ (the alternative
implied by M̃) in both the futility rule and the stage-size rule; the b/b̃
rules apply at every analysis with n_i < M̃ and the c rule at n_i = M̃.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .models import Model, StageStat


class Decision(str, Enum):
    CONTINUE = "continue"
    REJECT_EARLY = "reject_early"
    ACCEPT_FUTILITY = "accept_futility"
    REJECT_BOUNDARY = "reject_boundary"
    ACCEPT_BOUNDARY = "accept_boundary"

    @property
    def terminal(self) -> bool:
        return self is not Decision.CONTINUE

    @property
    def rejects(self) -> bool:
        return self in (Decision.REJECT_EARLY, Decision.REJECT_BOUNDARY)


@dataclass(frozen=True)
class Thresholds:
    b: float
    b_tilde: float
    c: float

    def to_dict(self) -> dict:
        return {"b": self.b, "b_tilde": self.b_tilde, "c": self.c}

    @staticmethod
    def from_dict(d: dict) -> "Thresholds":
        return Thresholds(float(d["b"]), float(d["b_tilde"]), float(d["c"]))


@dataclass(frozen=True)
class CalibrationMethod:
    kind: str = "normal_approx"  # or "monte_carlo"
    reps: int = 200_000
    seed: int = 0

    def to_dict(self) -> dict:
        if self.kind == "monte_carlo":
            return {"kind": self.kind, "reps": self.reps, "seed": self.seed}
        return {"kind": self.kind}

    @staticmethod
    def from_dict(d: dict) -> "CalibrationMethod":
        kind = d.get("kind", "normal_approx")
        if kind not in ("normal_approx", "monte_carlo", "binomial_exact"):
            raise ValueError(f"unknown calibration kind {kind!r}")
        return CalibrationMethod(kind, int(d.get("reps", 200_000)), int(d.get("seed", 0)))


@dataclass(frozen=True)
class DesignSpec:
    model: Model
    m: int
    M: int
    alpha: float
    alpha_tilde: float
    u0: float
    u1: float | None = None        # implied from M when omitted
    eps: float = 0.5
    eps_tilde: float = 0.5
    rho_m: float = 0.1
    M_prime: int | None = None     # four-stage cap on n3
    M_tilde: int | None = None     # four-stage maximum
    u2: float | None = None        # implied from M_tilde when omitted
    calibration: CalibrationMethod = field(default_factory=CalibrationMethod)

    def __post_init__(self):
        if self.m < 1 or self.M <= self.m:
            raise ValueError("need 1 <= m < M")
        for name, v in (("alpha", self.alpha), ("alpha_tilde", self.alpha_tilde)):
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0,1)")
        for name, v in (("eps", self.eps), ("eps_tilde", self.eps_tilde)):
            if not 0.05 <= v <= 0.95:
                raise ValueError(f"{name} must lie in [0.05, 0.95]")
        if self.rho_m < 0:
            raise ValueError("rho_m must be nonnegative")
        if (self.M_prime is None) != (self.M_tilde is None):
            raise ValueError("four-stage designs need both M_prime and M_tilde")
        # M_prime == M == M_tilde is allowed: the four-stage design then
        # degenerates to the three-stage one
        if self.M_tilde is not None and not (self.M <= self.M_prime <= self.M_tilde):
            raise ValueError("need M <= M_prime <= M_tilde")

    @property
    def four_stage(self) -> bool:
        return self.M_tilde is not None

    @property
    def n_max(self) -> int:
        return self.M_tilde if self.four_stage else self.M

    def resolved_u1(self) -> float:
        if self.u1 is not None:
            return self.u1
        return self.model.implied_alternative(self.u0, self.M, self.alpha, self.alpha_tilde)

    def resolved_u2(self) -> float:
        if not self.four_stage:
            raise ValueError("u2 only exists for four-stage designs")
        if self.u2 is not None:
            return self.u2
        return self.model.implied_alternative(self.u0, self.M_tilde, self.alpha, self.alpha_tilde)

    def futility_reference(self) -> float:
        return self.resolved_u2() if self.four_stage else self.resolved_u1()

    def sample_size_function(self, stat: StageStat) -> float:
        """n(θ̂): the information-based total-size estimate (uncapped)."""
        n = self.model.n_units(stat)
        i0 = self.model.glr(stat, self.u0) / n
        i1 = self.model.glr(stat, self.futility_reference()) / n
        la, lat = -math.log(self.alpha), -math.log(self.alpha_tilde)
        t0 = la / i0 if i0 > 1e-300 else math.inf
        t1 = lat / i1 if i1 > 1e-300 else math.inf
        return min(t0, t1)

    def _inflate_clip(self, n_est: float, lo: int, hi: int) -> int:
        # -1e-12 keeps an exactly-integer product from being bumped a unit up
        raw = math.ceil((1.0 + self.rho_m) * n_est - 1e-12) if math.isfinite(n_est) else hi
        return max(lo, min(hi, raw))

    def next_stage_size(self, stage: int, stat: StageStat) -> int:
        """Cumulative size of the next stage given the stage-``stage`` statistic."""
        n_est = self.sample_size_function(stat)
        if not self.four_stage:
            if stage == 1:
                return self._inflate_clip(n_est, self.m, self.M)
            return self.M
        if stage == 1:
            return self._inflate_clip(n_est, self.m, self.M)
        if stage == 2:
            return self._inflate_clip(n_est, stat.n, self.M_prime)
        return self.M_tilde

    def max_stages(self) -> int:
        return 4 if self.four_stage else 3

    def to_dict(self) -> dict:
        d = {
            "model": self.model.to_dict(),
            "m": self.m,
            "M": self.M,
            "alpha": self.alpha,
            "alpha_tilde": self.alpha_tilde,
            "u0": self.u0,
            "u1": self.u1,
            "eps": self.eps,
            "eps_tilde": self.eps_tilde,
            "rho_m": self.rho_m,
            "calibration": self.calibration.to_dict(),
        }
        if self.four_stage:
            d.update(M_prime=self.M_prime, M_tilde=self.M_tilde, u2=self.u2)
        return d

    @staticmethod
    def from_dict(d: dict) -> "DesignSpec":
        from .models import model_from_dict

        def opt(key, conv):
            v = d.get(key)
            return None if v is None else conv(v)

        return DesignSpec(
            model=model_from_dict(d["model"]),
            m=int(d["m"]),
            M=int(d["M"]),
            alpha=float(d["alpha"]),
            alpha_tilde=float(d["alpha_tilde"]),
            u0=float(d["u0"]),
            u1=opt("u1", float),
            eps=float(d.get("eps", 0.5)),
            eps_tilde=float(d.get("eps_tilde", 0.5)),
            rho_m=float(d.get("rho_m", 0.1)),
            M_prime=opt("M_prime", int),
            M_tilde=opt("M_tilde", int),
            u2=opt("u2", float),
            calibration=CalibrationMethod.from_dict(d.get("calibration", {})),
        )


@dataclass
class StageRecord:
    stage: int
    stat: StageStat
    u_hat: float
    glr_null: float
    glr_alt: float
    decision: Decision
    next_n: int | None

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "stat": self.stat.to_dict(),
            "u_hat": self.u_hat,
            "glr_null": self.glr_null,
            "glr_alt": self.glr_alt,
            "decision": self.decision.value,
            "next_n": self.next_n,
        }


@dataclass
class TrialState:
    stage: int = 1                # next stage awaiting data
    planned_n: int | None = None  # cumulative size that stage must report
    history: list[StageRecord] = field(default_factory=list)

    @property
    def status(self) -> str:
        if not self.history or not self.history[-1].decision.terminal:
            return "open"
        return "rejected" if self.history[-1].decision.rejects else "accepted"

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "planned_n": self.planned_n,
            "status": self.status,
            "history": [r.to_dict() for r in self.history],
        }


def decide(spec: DesignSpec, thresholds: Thresholds, stage: int, stat: StageStat) -> tuple[Decision, int | None]:
    """Apply the stopping rules to the cumulative statistic at ``stage``.

    Returns the decision and, when continuing, the next cumulative size.
    """
    model = spec.model
    n = model.n_units(stat)
    u_hat = model.u_hat(stat)
    u_ref = spec.futility_reference()
    n_cap = spec.n_max
    last_stage = spec.max_stages()

    if n < n_cap and stage < last_stage:
        if u_hat > spec.u0 and model.glr(stat, spec.u0) >= thresholds.b:
            return Decision.REJECT_EARLY, None
        if u_hat < u_ref and model.glr(stat, u_ref) >= thresholds.b_tilde:
            return Decision.ACCEPT_FUTILITY, None
        return Decision.CONTINUE, spec.next_stage_size(stage, stat)
    if n != n_cap:
        # adaptive caps guarantee the final analysis lands exactly on the max
        raise ValueError(f"stage {stage} reported n={n}, expected the maximum {n_cap}")
    if u_hat > spec.u0 and model.glr(stat, spec.u0) >= thresholds.c:
        return Decision.REJECT_BOUNDARY, None
    return Decision.ACCEPT_BOUNDARY, None


def step(spec: DesignSpec, thresholds: Thresholds, state: TrialState, stat: StageStat) -> StageRecord:
    """Validate and fold one stage's cumulative statistic into the trial."""
    if state.status != "open":
        raise ValueError(f"trial already {state.status}")
    spec.model.validate_stat(stat)
    expected = state.planned_n if state.planned_n is not None else spec.m
    if spec.model.n_units(stat) != expected:
        raise ValueError(f"stage {state.stage} must report cumulative n={expected}, got {spec.model.n_units(stat)}")
    decision, next_n = decide(spec, thresholds, state.stage, stat)
    record = StageRecord(
        stage=state.stage,
        stat=stat,
        u_hat=spec.model.u_hat(stat),
        glr_null=spec.model.glr(stat, spec.u0),
        glr_alt=spec.model.glr(stat, spec.futility_reference()),
        decision=decision,
        next_n=next_n,
    )
    state.history.append(record)
    state.stage += 1
    state.planned_n = next_n
    return record


def replay(spec: DesignSpec, thresholds: Thresholds, stats: list[StageStat]) -> TrialState:
    """Rebuild trial state purely from the submitted statistics."""
    state = TrialState()
    for stat in stats:
        step(spec, thresholds, state, stat)
    return state
