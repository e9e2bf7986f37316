"""Operating characteristics and efficiency diagnostics.

Three engines:

* ``exact_oc_binomial`` — forward recursion over the reachable success-count
  states of a Bernoulli or two-arm Bernoulli design; exact to floating
  precision because the next stage size is a deterministic function of the
  current counts.
* ``simulate_oc`` — Monte Carlo over the adaptive design or any comparator,
  sharing the counter-based streams with calibration (grid point i uses
  stream 16+i so no draw collides with the calibration streams under the
  same seed).
* ``efficiency_diagnostic`` — rescales a design along a shrinking-alpha
  sequence, measures ESS by simulation, and compares it against the
  information-theoretic lower bound and the matching first-order formula.
"""

from __future__ import annotations

import dataclasses
import io
import json
import math

import numpy as np
from scipy.optimize import bisect
from scipy.signal import fftconvolve
from scipy.stats import binom

from . import comparators as _comp
from ._kernels_numpy import _next_sizes, _pair_glr_vec
from .calibration import calibrate_four_stage, calibrate_three_stage
from .design import DesignSpec, Thresholds, decide
from .errors import NumericError, SchemaError
from .models import Model, NormalKnownVar, StageStat
from .simulate import anchor_point, apply_design, stage_statistics

_STATE_BOUND = 10_000_000
_OC_STREAM_OFFSET = 16  # streams 0-3 belong to calibration; leave headroom


# ------------------------------------------------------------------ types


@dataclasses.dataclass
class OCPoint:
    params: dict
    power: float
    ess: float
    e_stages: float
    power_se: float | None = None
    ess_se: float | None = None
    avss: float | None = None

    def to_dict(self) -> dict:
        d = dict(self.params)
        d.update(power=self.power, power_se=self.power_se, ess=self.ess,
                 ess_se=self.ess_se, e_stages=self.e_stages, avss=self.avss)
        return d


def _sig2(x: float | None) -> float | None:
    if x is None or x == 0.0 or not math.isfinite(x):
        return x
    return round(x, 1 - int(math.floor(math.log10(abs(x)))))


@dataclasses.dataclass
class OperatingChars:
    points: list[OCPoint]
    design_info: dict
    reps: int | None = None   # None marks exact computation
    seed: int | None = None

    def param_keys(self) -> list[str]:
        return list(self.points[0].params) if self.points else []

    def to_csv(self) -> str:
        keys = self.param_keys()
        buf = io.StringIO()
        buf.write(",".join(keys + ["power", "power_se", "ess", "ess_se", "e_stages", "avss"]) + "\n")
        for pt in self.points:
            cells = [repr(pt.params[k]) for k in keys]
            for v in (pt.power, _sig2(pt.power_se), pt.ess, _sig2(pt.ess_se), pt.e_stages, pt.avss):
                cells.append("" if v is None else repr(float(v)))
            buf.write(",".join(cells) + "\n")
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "design": self.design_info,
            "reps": self.reps,
            "seed": self.seed,
            "points": [p.to_dict() for p in self.points],
        }, indent=2)

    def validate(self, n_min: float, n_cap: float, max_stages: int) -> None:
        for pt in self.points:
            if not -1e-12 <= pt.power <= 1.0 + 1e-12:
                raise NumericError(f"power {pt.power} outside [0,1] at {pt.params}")
            if not n_min - 1e-9 <= pt.ess <= n_cap + 1e-9:
                raise NumericError(f"ess {pt.ess} outside [{n_min}, {n_cap}] at {pt.params}")
            if not 1.0 - 1e-12 <= pt.e_stages <= max_stages + 1e-12:
                raise NumericError(f"stage count {pt.e_stages} outside [1, {max_stages}]")


# -------------------------------------------------- exact binomial engine


def _exact_single_arm(spec: DesignSpec, thresholds: Thresholds, p: float):
    """Exact OC by recursion over (stage, cumulative n, success count)."""
    m = spec.m
    buckets: dict[tuple[int, int], np.ndarray] = {
        (1, m): binom.pmf(np.arange(m + 1), m, p)
    }
    states = m + 1
    power = ess = est = 0.0
    for stage in range(1, spec.max_stages() + 1):
        todo = sorted(k for k in buckets if k[0] == stage)
        for key in todo:
            _, n = key
            vec = buckets.pop(key)
            nxt_of = np.full(n + 1, -1, dtype=np.int64)
            rejects = np.zeros(n + 1, dtype=bool)
            for s in range(n + 1):
                dec, nxt = decide(spec, thresholds, stage, StageStat(n=n, s=(s,)))
                if dec.terminal:
                    rejects[s] = dec.rejects
                else:
                    nxt_of[s] = nxt
            term = nxt_of < 0
            tp = vec[term]
            power += float(np.sum(tp * rejects[term]))
            ess += float(np.sum(tp)) * n
            est += float(np.sum(tp)) * stage
            for v in np.unique(nxt_of[~term]):
                mask = nxt_of == v
                inc = int(v) - n
                child = np.convolve(vec * mask, binom.pmf(np.arange(inc + 1), inc, p))
                nk = (stage + 1, int(v))
                if nk in buckets:
                    buckets[nk] = buckets[nk] + child
                else:
                    buckets[nk] = child
                    states += int(v) + 1
                if states > _STATE_BOUND:
                    raise NumericError(
                        f"exact recursion needs more than {_STATE_BOUND} states; use simulate_oc")
    return power, ess, est


def _exact_two_arm(spec: DesignSpec, thresholds: Thresholds, px: float, py: float):
    """Two-arm exact OC; decisions mirror the simulation kernel expressions."""
    looks, m = spec.max_stages(), spec.m
    Mp = spec.M_prime if spec.four_stage else spec.M
    la, lat = -math.log(spec.alpha), -math.log(spec.alpha_tilde)
    u0, u_fut = spec.u0, spec.futility_reference()
    n_cap = spec.n_max
    buckets: dict[tuple[int, int], np.ndarray] = {
        (1, m): np.outer(binom.pmf(np.arange(m + 1), m, px), binom.pmf(np.arange(m + 1), m, py))
    }
    states = (m + 1) ** 2
    power = ess = est = 0.0
    for stage in range(1, looks + 1):
        todo = sorted(k for k in buckets if k[0] == stage)
        for key in todo:
            _, n = key
            prob = buckets.pop(key)
            sx, sy = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
            n_f = np.full(sx.size, float(n))
            lo_c = 1.0 / (2.0 * n)
            cx = np.clip(sx.ravel() / n, lo_c, 1.0 - lo_c)
            cy = np.clip(sy.ravel() / n, lo_c, 1.0 - lo_c)
            uh = (sx.ravel() - sy.ravel()) / n
            g0 = _pair_glr_vec(cx, cy, n_f, u0)
            g1 = _pair_glr_vec(cx, cy, n_f, u_fut)
            if n < n_cap and stage < looks:
                rej = (uh > u0) & (g0 >= thresholds.b)
                fut = (uh < u_fut) & (g1 >= thresholds.b_tilde)
                cont = ~(rej | fut)
                if stage == 1:
                    nxt = _next_sizes(g0, g1, n_f, float(m), spec.M, la, lat, spec.rho_m)
                elif looks == 4 and stage == 2:
                    nxt = _next_sizes(g0, g1, n_f, n_f, Mp, la, lat, spec.rho_m)
                else:
                    nxt = np.full(sx.size, n_cap, dtype=np.int64)
            else:
                rej = (uh > u0) & (g0 >= thresholds.c)
                cont = np.zeros(sx.size, dtype=bool)
                nxt = None
            term = (~cont).reshape(n + 1, n + 1)
            tp = prob * term
            power += float(np.sum(tp * rej.reshape(n + 1, n + 1)))
            ess += float(np.sum(tp)) * n
            est += float(np.sum(tp)) * stage
            if nxt is None:
                continue
            for v in np.unique(nxt[cont]):
                mask = (cont & (nxt == v)).reshape(n + 1, n + 1)
                inc = int(v) - n
                kx = binom.pmf(np.arange(inc + 1), inc, px)
                ky = binom.pmf(np.arange(inc + 1), inc, py)
                child = fftconvolve(prob * mask, np.outer(kx, ky))
                child = np.clip(child, 0.0, None)
                nk = (stage + 1, int(v))
                if nk in buckets:
                    buckets[nk] = buckets[nk] + child
                else:
                    buckets[nk] = child
                    states += (int(v) + 1) ** 2
                if states > _STATE_BOUND:
                    raise NumericError(
                        f"exact recursion needs more than {_STATE_BOUND} states; use simulate_oc")
    return power, ess, est


def exact_oc_binomial(spec: DesignSpec, thresholds: Thresholds, p_grid) -> OperatingChars:
    """Exact operating characteristics over a rate grid.

    ``p_grid`` holds rates p for the single-arm model or (px, py) pairs /
    {"px","py"} dicts for the two-arm model.  Sample sizes are per arm for
    the two-arm family.
    """
    fam = spec.model.family
    points = []
    if fam == "bernoulli":
        for entry in p_grid:
            p = float(entry["p"]) if isinstance(entry, dict) else float(entry)
            if not 0.0 <= p <= 1.0:
                raise SchemaError(f"rate {p} outside [0,1]", field="p_grid")
            power, ess, est = _exact_single_arm(spec, thresholds, p)
            points.append(OCPoint({"p": p}, power, ess, est))
    elif fam == "two_arm_bernoulli":
        for entry in p_grid:
            if isinstance(entry, dict):
                px, py = float(entry["px"]), float(entry["py"])
            else:
                px, py = float(entry[0]), float(entry[1])
            if not (0.0 <= px <= 1.0 and 0.0 <= py <= 1.0):
                raise SchemaError(f"rates ({px}, {py}) outside [0,1]", field="p_grid")
            power, ess, est = _exact_two_arm(spec, thresholds, px, py)
            points.append(OCPoint({"px": px, "py": py}, power, ess, est))
    else:
        raise SchemaError(
            f"exact evaluation needs a Bernoulli family, got {fam!r}", field="model")
    oc = OperatingChars(points, design_info={"kind": "design", "family": fam})
    oc.validate(spec.m, spec.n_max, spec.max_stages())
    return oc


# ------------------------------------------------------ Monte Carlo engine


def _as_anchor(spec: DesignSpec, entry) -> dict:
    if isinstance(entry, dict):
        return dict(entry)
    return anchor_point(spec, float(entry))


def _comparator_point(comp, entry) -> dict:
    if isinstance(entry, dict):
        return dict(entry)
    if isinstance(comp, _comp.Simon2):
        return {"p": float(entry)}
    if isinstance(comp, (_comp.Thall2, _comp.Stein2)):
        raise SchemaError(f"{type(comp).__name__} grid entries must be dicts", field="param_grid")
    return {"theta": float(entry)}


_PAIR_KEYS = (("px", "py"), ("p", "q"))


def _attach_avss(points: list[OCPoint], delta: float) -> None:
    """Pair each alternative row with its control-matched null row, Eq-style:
    avss = mean of the null-row and alternative-row expected sizes."""
    for keys in _PAIR_KEYS:
        kx, ky = keys
        if not all(kx in pt.params and ky in pt.params for pt in points):
            continue
        null_rows = {round(pt.params[ky], 9): pt for pt in points
                     if abs(pt.params[kx] - pt.params[ky]) < 1e-9}
        for pt in points:
            if abs(pt.params[kx] - pt.params[ky] - delta) < 1e-9:
                base = null_rows.get(round(pt.params[ky], 9))
                if base is not None:
                    pt.avss = 0.5 * (base.ess + pt.ess)
        return


def simulate_oc(design, thresholds: Thresholds | None, param_grid, reps: int,
                seed: int, delta: float | None = None) -> OperatingChars:
    """Monte Carlo operating characteristics for a design or comparator.

    Grid entries are anchor dicts (family keys) or bare effect values.
    Returns per-point power/ESS/stage means with standard errors, plus the
    paired average sample size when ``delta`` is given on a two-arm grid.
    """
    reps = int(reps)
    if reps < 1_000:
        raise SchemaError("simulate_oc needs at least 1000 replications", field="reps")
    points = []
    is_design = isinstance(design, DesignSpec)
    if is_design and thresholds is None:
        raise SchemaError("a DesignSpec needs calibrated thresholds", field="thresholds")
    for idx, entry in enumerate(param_grid):
        stream = _OC_STREAM_OFFSET + idx
        if is_design:
            anchor = _as_anchor(design, entry)
            paths = stage_statistics(design, anchor, reps, seed, stream)
            res = apply_design(design, thresholds, paths)
            params = {k: v for k, v in paths["anchor"].items()}
        else:
            params = _comparator_point(design, entry)
            res = _comp.comparator_paths(design, params, reps, seed, stream)
        rej = res["rejected"]
        fin = res["final_n"].astype(np.float64)
        phat = float(np.mean(rej))
        points.append(OCPoint(
            params=params,
            power=phat,
            ess=float(np.mean(fin)),
            e_stages=float(np.mean(res["stages"])),
            power_se=math.sqrt(max(phat * (1.0 - phat), 0.0) / reps),
            ess_se=float(np.std(fin, ddof=1) / math.sqrt(reps)),
        ))
    if delta is not None:
        _attach_avss(points, float(delta))
    if is_design:
        info = {"kind": "design", "family": design.model.family}
        n_min, n_cap, smax = design.m, design.n_max, design.max_stages()
    else:
        info = design.to_dict()
        n_min, n_cap, smax = _comparator_bounds(design)
    oc = OperatingChars(points, design_info=info, reps=reps, seed=seed)
    oc.validate(n_min, n_cap, smax)
    return oc


def _comparator_bounds(comp) -> tuple[float, float, int]:
    smax = _comp.max_stages(comp)
    if isinstance(comp, _comp.FSS):
        return comp.n, comp.n, smax
    if isinstance(comp, _comp.Simon2):
        return comp.m, comp.M, smax
    if isinstance(comp, _comp.Thall2):
        return comp.n1, comp.n2_total, smax
    if isinstance(comp, _comp.Stein2):
        return comp.m, math.inf, smax
    if isinstance(comp, _comp.CondPower2):
        return comp.m, comp.M_cap, smax
    if isinstance(comp, _comp.CondPower3):
        return comp.m, comp.M, smax
    if isinstance(comp, _comp.CHW):
        return comp.groups[0], comp.M_tilde, smax
    return comp.groups[0], comp.groups[-1], smax


# ------------------------------------------------ efficiency diagnostics


def eta_theta(model: Model, theta0: float, theta: float) -> float:
    """The effect between theta0 and theta carrying equal information to both.

    Solves I(eta, theta0) = I(eta, theta) on (theta0, theta); for the normal
    family this is the midpoint.
    """
    if theta <= theta0:
        raise SchemaError("eta_theta needs theta > theta0", field="theta")
    span = theta - theta0
    eps = min(1e-13 * max(span, 1.0), 0.25 * span)
    lo = theta0 + eps
    hi = theta - eps

    def f(eta):
        return model.effect_kl(eta, theta0) - model.effect_kl(eta, theta)

    return float(bisect(f, lo, hi, xtol=1e-10))


@dataclasses.dataclass
class EfficiencyDiagnostic:
    kind: str
    alpha: float
    alpha_tilde: float
    m: int
    M: int
    theta: float
    hoeffding_bound: float
    asymptotic_ess: float
    measured_ess: float
    measured_se: float
    ratio: float
    a: float
    A: float
    eta: float | None = None
    M_prime: int | None = None
    M_tilde: int | None = None
    A_prime: float | None = None
    A_tilde: float | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def hoeffding_bound(m: int, cap: int, la: float, i0: float, i_alt: float) -> float:
    """First-order lower bound on ESS: m or the capped information quota.

    ``i_alt`` is the information against the futility-defining alternative:
    the stage-two implied effect for three-stage designs, the final implied
    effect (with cap = the absolute maximum) for four-stage designs.
    """
    denom = max(i0, i_alt)
    quota = la / denom if denom > 1e-300 else math.inf
    return max(m, min(cap, quota))


def _diag_specs(base: DesignSpec, alpha_sequence) -> list[DesignSpec]:
    """Rescale (m, M[, M', M~], alpha, alpha~) along the alpha sequence.

    Sizes scale linearly in |log alpha| with ratios (a, A, ...) fixed by the
    base design; |log alpha~|/|log alpha| is held constant.  Implied
    alternatives (u1/u2 None) re-imply per point from that point's (M,
    alpha~); explicit ones are a statement about the effect scale and stay
    fixed.  rho_m stays fixed: the first-order theory wants it shrinking
    slowly with m, but the reference examples all use a constant, so the
    diagnostic does too.
    """
    alphas = [float(a) for a in alpha_sequence]
    if any(b >= a for a, b in zip(alphas, alphas[1:])):
        raise SchemaError("alpha_sequence must be decreasing", field="alpha_sequence")
    la0 = -math.log(base.alpha)
    ratio_t = math.log(base.alpha_tilde) / math.log(base.alpha)
    a = base.m / la0
    A = base.M / la0
    Ap = base.M_prime / la0 if base.four_stage else None
    At = base.M_tilde / la0 if base.four_stage else None
    out = []
    for al in alphas:
        la = -math.log(al)
        at = math.exp(ratio_t * math.log(al))
        m_k = max(2, round(a * la))
        M_k = max(m_k + 1, round(A * la))
        kw = dict(m=m_k, M=M_k, alpha=al, alpha_tilde=at)
        if base.four_stage:
            Mp_k = max(M_k, round(Ap * la))
            kw.update(M_prime=Mp_k, M_tilde=max(Mp_k, round(At * la)))
        out.append(dataclasses.replace(base, **kw))
    return out


def efficiency_diagnostic(design, theta: float, alpha_sequence=(0.05, 0.01, 0.001),
                          reps: int = 50_000, seed: int = 0,
                          nodes: int = 64) -> list[EfficiencyDiagnostic]:
    """Measured-versus-bound ESS along a shrinking alpha sequence.

    ``design`` is a DesignSpec (three- or four-stage) or a CondPower3
    comparator; the first alpha fixes the size-scaling constants.  Each
    point calibrates thresholds under the normal approximation, simulates
    the ESS at ``theta``, and reports the information lower bound, the
    first-order ESS formula, and measured/bound.
    """
    if isinstance(design, _comp.CondPower3):
        return _diag_cond_power3(design, theta, alpha_sequence, reps, seed, nodes)
    if not isinstance(design, DesignSpec):
        raise SchemaError("diagnostic runs on a DesignSpec or CondPower3", field="design")
    model = design.model
    out = []
    for k, spec in enumerate(_diag_specs(design, alpha_sequence)):
        la = -math.log(spec.alpha)
        if spec.four_stage:
            report = calibrate_four_stage(spec)
        else:
            report = calibrate_three_stage(spec, nodes=nodes)
        oc = simulate_oc(spec, report.thresholds, [theta], reps, seed + k)
        pt = oc.points[0]
        i0 = model.effect_kl(theta, spec.u0)
        if spec.four_stage:
            i_alt = model.effect_kl(theta, spec.resolved_u2())
            cap = spec.M_tilde
            bound = hoeffding_bound(spec.m, cap, la, i0, i_alt)
            A = spec.M / la
            # first-order split: initial-cap information decides which cap binds
            if i0 > 1.0 / A:
                asym = max(spec.m, la / i0)
            else:
                asym = bound
        else:
            i_alt = model.effect_kl(theta, spec.resolved_u1())
            bound = hoeffding_bound(spec.m, spec.M, la, i0, i_alt)
            asym = bound
        eta = eta_theta(model, spec.u0, theta) if theta > spec.u0 else None
        out.append(EfficiencyDiagnostic(
            kind="four_stage" if spec.four_stage else "three_stage",
            alpha=spec.alpha, alpha_tilde=spec.alpha_tilde, m=spec.m, M=spec.M,
            theta=theta, hoeffding_bound=bound, asymptotic_ess=asym,
            measured_ess=pt.ess, measured_se=pt.ess_se, ratio=pt.ess / bound,
            a=spec.m / la, A=spec.M / la, eta=eta,
            M_prime=spec.M_prime, M_tilde=spec.M_tilde,
            A_prime=(spec.M_prime / la if spec.four_stage else None),
            A_tilde=(spec.M_tilde / la if spec.four_stage else None),
        ))
    return out


def _diag_cond_power3(comp: _comp.CondPower3, theta: float, alpha_sequence,
                      reps: int, seed: int, nodes: int) -> list[EfficiencyDiagnostic]:
    """Diagnostic for the conditional-power three-stage comparator.

    Its first-order ESS replaces the design's information rate with
    I(eta_theta, theta0): the sample-size rule aims at the data estimate, so
    along the least-favorable path the trial only accrues the balanced-point
    information.  Thresholds come from the companion adaptive design.
    """
    model = NormalKnownVar(comp.sigma)
    base = DesignSpec(model=model, m=comp.m, M=comp.M, alpha=comp.alpha,
                      alpha_tilde=comp.alpha_tilde, u0=comp.theta0, u1=comp.theta1)
    out = []
    for k, spec in enumerate(_diag_specs(base, alpha_sequence)):
        la = -math.log(spec.alpha)
        report = calibrate_three_stage(spec, nodes=nodes)
        comp_k = dataclasses.replace(comp, m=spec.m, M=spec.M, alpha=spec.alpha,
                                     alpha_tilde=spec.alpha_tilde,
                                     thresholds=report.thresholds)
        oc = simulate_oc(comp_k, None, [{"theta": theta}], reps, seed + k)
        pt = oc.points[0]
        i0 = model.effect_kl(theta, comp.theta0)
        i_alt = model.effect_kl(theta, spec.resolved_u1())
        bound = hoeffding_bound(spec.m, spec.M, la, i0, i_alt)
        eta = eta_theta(model, comp.theta0, theta) if theta > comp.theta0 else None
        if eta is not None:
            i_eta = model.effect_kl(eta, comp.theta0)
            asym = max(spec.m, min(spec.M, la / i_eta)) if i_eta > 1e-300 else float(spec.M)
        else:
            asym = float(spec.M)
        out.append(EfficiencyDiagnostic(
            kind="cond_power3",
            alpha=spec.alpha, alpha_tilde=spec.alpha_tilde, m=spec.m, M=spec.M,
            theta=theta, hoeffding_bound=bound, asymptotic_ess=asym,
            measured_ess=pt.ess, measured_se=pt.ess_se, ratio=pt.ess / bound,
            a=spec.m / la, A=spec.M / la, eta=eta,
        ))
    return out
