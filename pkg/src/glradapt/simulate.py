"""Trial-path simulation: sampling anchors, path statistics, design post-pass.

``stage_statistics`` simulates every look of the adaptive design without any
thresholds: stage sizes are threshold-free, so one pass serves both Monte
Carlo calibration (which inverts tail probabilities over the returned GLR
levels) and operating-characteristic estimation (``apply_design`` folds a
threshold triple over the same arrays).

Anchors are model-family sampling parameters:
    normal_known_var / two_sample_normal   {"u": effect}
    bernoulli                              {"p": rate}
    two_arm_bernoulli                      {"px": rate, "py": rate}
    two_sample_normal_unknown_var          {"delta":, "mu_y":, "sigma":}

``anchor_point`` builds them from a hypothesised effect and, when first- or
second-stage data are supplied, from the constrained MLE under that effect.

Stream layout: single-arm families draw from stream_key(seed, stream);
two-arm families use stream_key(seed, 2·stream) and (..., 2·stream+1), one
per arm.  Within a stream, rep r addresses its own counter block.
"""

from __future__ import annotations

import math

import numpy as np

from . import backend, rng
from .design import DesignSpec, Thresholds
from .errors import SchemaError
from .models import StageStat, _clamp_rate, _constrained_pair_root


def anchor_point(spec: DesignSpec, u_ref: float, stat: StageStat | None = None) -> dict:
    """Sampling parameters under the constraint {u(θ) = u_ref}.

    Without data the free coordinates sit at their design-time references;
    with data they become the constrained MLE at ``stat``.
    """
    model = spec.model
    fam = model.family
    if fam in ("normal_known_var", "two_sample_normal"):
        return {"u": float(u_ref)}
    if fam == "bernoulli":
        if not 0.0 < u_ref < 1.0:
            raise SchemaError(f"bernoulli rate {u_ref} outside (0,1)")
        return {"p": float(u_ref)}
    if fam == "two_arm_bernoulli":
        if stat is None:
            px, py = model.q0 + u_ref, model.q0
        else:
            model.validate_stat(stat)
            cx = _clamp_rate(stat.s[0], stat.n)
            cy = _clamp_rate(stat.s[1], stat.n)
            r = _constrained_pair_root(cx, cy, stat.n, stat.n, u_ref)
            px, py = r + u_ref, r
        if not (0.0 < px < 1.0 and 0.0 < py < 1.0):
            raise SchemaError(f"anchored rates ({px:.4g}, {py:.4g}) outside (0,1)")
        return {"px": float(px), "py": float(py)}
    if fam == "two_sample_normal_unknown_var":
        if stat is None:
            return {"delta": float(u_ref), "mu_y": 0.0, "sigma": model.sigma_ref}
        model.validate_stat(stat)
        n = stat.n
        mu_y = (stat.s[0] + stat.s[1] - n * u_ref) / (2.0 * n)
        mu_x = mu_y + u_ref
        sse = (stat.ss[0] - 2.0 * mu_x * stat.s[0] + n * mu_x * mu_x
               + stat.ss[1] - 2.0 * mu_y * stat.s[1] + n * mu_y * mu_y)
        sigma = math.sqrt(max(sse / (2.0 * n), 1e-12))
        return {"delta": float(u_ref), "mu_y": float(mu_y), "sigma": sigma}
    raise SchemaError(f"no sampler for model family {fam!r}")


def _design_constants(spec: DesignSpec):
    looks = spec.max_stages()
    Mp = spec.M_prime if spec.four_stage else spec.M
    return looks, spec.m, spec.M, Mp, spec.n_max, -math.log(spec.alpha), -math.log(spec.alpha_tilde), spec.rho_m


def _key(seed: int, stream: int) -> np.uint64:
    # uint64 scalar: keys >= 2**63 overflow the jit dispatcher's int64 default
    return np.uint64(rng.stream_key(seed, stream))


def stage_statistics(spec: DesignSpec, anchor: dict, reps: int, seed: int, stream: int) -> dict:
    """Simulate all looks of ``reps`` paths sampled at ``anchor``.

    Returns {"n", "u_hat", "glr_null", "glr_fut"} as (looks, reps) arrays
    plus the futility reference effect; row i is the i-th analysis.
    """
    K = backend.kernels()
    looks, m, M, Mp, Mt, la, lat, rho = _design_constants(spec)
    u_fut = spec.futility_reference()
    fam = spec.model.family
    if fam == "normal_known_var":
        key = _key(seed, stream)
        out = K.gaussian_paths(key, reps, looks, m, M, Mp, Mt, anchor["u"],
                               spec.model.sigma ** 2, spec.u0, u_fut, la, lat, rho)
    elif fam == "two_sample_normal":
        key = _key(seed, stream)
        out = K.gaussian_paths(key, reps, looks, m, M, Mp, Mt, anchor["u"],
                               2.0 * spec.model.sigma ** 2, spec.u0, u_fut, la, lat, rho)
    elif fam == "bernoulli":
        key = _key(seed, stream)
        out = K.bernoulli_paths(key, reps, looks, m, M, Mp, Mt, anchor["p"],
                                spec.u0, u_fut, la, lat, rho)
    elif fam == "two_arm_bernoulli":
        kx = _key(seed, 2 * stream)
        ky = _key(seed, 2 * stream + 1)
        out = K.two_arm_bernoulli_paths(kx, ky, reps, looks, m, M, Mp, Mt,
                                        anchor["px"], anchor["py"],
                                        spec.u0, u_fut, la, lat, rho)
    elif fam == "two_sample_normal_unknown_var":
        kx = _key(seed, 2 * stream)
        ky = _key(seed, 2 * stream + 1)
        out = K.two_sample_unknownvar_paths(kx, ky, reps, looks, m, M, Mp, Mt,
                                            anchor["delta"], anchor["mu_y"], anchor["sigma"],
                                            spec.u0, u_fut, la, lat, rho)
    else:
        raise SchemaError(f"no sampler for model family {fam!r}")
    n, uh, g0, g1 = out
    return {"n": n, "u_hat": uh, "glr_null": g0, "glr_fut": g1,
            "u_fut_ref": u_fut, "anchor": dict(anchor)}


def apply_design(spec: DesignSpec, thresholds: Thresholds, paths: dict) -> dict:
    """Fold the stopping rules over simulated paths.

    Returns {"rejected": bool[reps], "stages": int[reps], "final_n": int[reps]}.
    """
    n, uh = paths["n"], paths["u_hat"]
    g0, g1 = paths["glr_null"], paths["glr_fut"]
    u_fut = paths["u_fut_ref"]
    looks, reps = n.shape
    n_cap = spec.n_max
    alive = np.ones(reps, dtype=bool)
    rejected = np.zeros(reps, dtype=bool)
    stop_look = np.full(reps, looks - 1, dtype=np.int64)
    for i in range(looks - 1):
        interim = n[i] < n_cap
        pos = uh[i] > spec.u0
        rej = np.where(interim, pos & (g0[i] >= thresholds.b), pos & (g0[i] >= thresholds.c))
        fut = interim & (uh[i] < u_fut) & (g1[i] >= thresholds.b_tilde)
        stop = alive & (rej | fut | ~interim)
        rejected |= alive & rej
        stop_look = np.where(stop, i, stop_look)
        alive &= ~stop
    rejected |= alive & (uh[-1] > spec.u0) & (g0[-1] >= thresholds.c)
    return {
        "rejected": rejected,
        "stages": stop_look + 1,
        "final_n": n[stop_look, np.arange(reps)],
    }
