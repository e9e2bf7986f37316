import math

import numpy as np
import pytest
from scipy.stats import norm, t as student_t

import refvals
from glradapt.comparators import (CHW, COMPARATOR_REGISTRY, FSS, CondPower2,
                                  CondPower3, OBFCurtail, Simon2, Stein2, Thall2,
                                  binomial_fss, chw_init, chw_new_maximum,
                                  chw_step, comparator_from_dict, comparator_paths,
                                  cond_power_sample_size, max_stages,
                                  obf_critical_values, obf_sc_step, pooled_z,
                                  simon_oc, stein_two_stage)
from glradapt.design import Decision, Thresholds
from glradapt.evaluation import simulate_oc

OBF_GROUPS = (31, 62, 94, 125)
OBF_CRIT = (4.071264333704367, 2.878818618365289, 2.3380092266387185,
            2.0274732876596744)


# ------------------------------------------------------------------ FSS


def test_fss_power_closed_form_and_decide():
    f = FSS(n=100, critical_value=norm.isf(0.025))
    assert f.power(0.0) == pytest.approx(0.025, abs=1e-12)
    assert f.power(0.28) == pytest.approx(norm.sf(norm.isf(0.025) - 2.8), abs=1e-12)
    assert f.decide(0.3) is Decision.REJECT_BOUNDARY
    assert f.decide(0.1) is Decision.ACCEPT_BOUNDARY
    mc = simulate_oc(f, None, [0.28], 50_000, 2)
    pt = mc.points[0]
    assert abs(pt.power - f.power(0.28)) < 4 * pt.power_se
    assert pt.ess == 100.0 and pt.e_stages == 1.0


def test_binomial_fss_smallest_feasible_size():
    n, cutoff = binomial_fss(0.1, 0.3, 0.05, 0.2)
    assert (n, cutoff) == (25, 5)
    from scipy.stats import binom
    assert binom.sf(cutoff, n, 0.1) <= 0.05
    assert binom.sf(cutoff, n, 0.3) >= 0.8
    # n-1 must fail one of the two constraints for every cutoff
    feasible = any(binom.sf(c, n - 1, 0.1) <= 0.05 and binom.sf(c, n - 1, 0.3) >= 0.8
                   for c in range(n))
    assert not feasible


# ---------------------------------------------------------------- Simon


def test_simon_decide_bands():
    s = Simon2(10, 29, 1, 5)
    assert s.decide(1, 1) is Decision.ACCEPT_FUTILITY
    assert s.decide(1, 2) is Decision.CONTINUE
    assert s.decide(2, 5) is Decision.ACCEPT_BOUNDARY
    assert s.decide(2, 6) is Decision.REJECT_BOUNDARY
    with pytest.raises(ValueError):
        Simon2(10, 10, 1, 5)
    with pytest.raises(ValueError):
        Simon2(10, 29, 6, 5)


def test_simon_exact_oc_reference_curves():
    sa = Simon2(10, 29, 1, 5)
    for p, want in refvals.SIMON_A_EXACT.items():
        got = simon_oc(sa, p)
        for g, w in zip(got, want):
            assert g == pytest.approx(w, abs=1e-10)
    sb = Simon2(30, 82, 9, 29)
    for p, want in refvals.SIMON_B_EXACT.items():
        got = simon_oc(sb, p)
        for g, w in zip(got, want):
            assert g == pytest.approx(w, abs=1e-10)


def test_simon_simulation_matches_exact():
    sa = Simon2(10, 29, 1, 5)
    mc = simulate_oc(sa, None, [0.3], 50_000, 4)
    power, ess, est = simon_oc(sa, 0.3)
    pt = mc.points[0]
    assert pt.params == {"p": 0.3}
    assert abs(pt.power - power) < 4 * pt.power_se
    assert abs(pt.ess - ess) < 4 * pt.ess_se
    assert abs(pt.e_stages - est) < 0.02


# ---------------------------------------------------------------- Thall


def test_thall_decide_and_pooled_z():
    th = Thall2(n1=33, n2_total=78, y1=0.356, y2=1.584)
    assert th.decide(1, 0.355) is Decision.ACCEPT_FUTILITY
    assert th.decide(1, 0.357) is Decision.CONTINUE
    assert th.decide(2, 1.585) is Decision.REJECT_BOUNDARY
    assert th.decide(2, 1.583) is Decision.ACCEPT_BOUNDARY
    z = pooled_z(np.array([20.0]), np.array([12.0]), 33)
    pbar = 32.0 / 66.0
    want = (8.0 / 33.0) / math.sqrt(pbar * (1 - pbar) * 2 / 33)
    assert z[0] == pytest.approx(want, abs=1e-12)
    assert pooled_z(np.array([0.0]), np.array([0.0]), 33)[0] == 0.0
    assert pooled_z(np.array([33.0]), np.array([33.0]), 33)[0] == 0.0


def test_thall_simulation_matches_exact_enumeration():
    th = Thall2(n1=33, n2_total=78, y1=0.356, y2=1.584)
    for (p, q), (power, ess, est) in refvals.THALL_EXACT.items():
        mc = simulate_oc(th, None, [{"p": p, "q": q}], 50_000, 4)
        pt = mc.points[0]
        assert abs(pt.power - power) < 4 * max(pt.power_se, 1e-4), (p, q)
        assert abs(pt.ess - ess) < 4 * pt.ess_se, (p, q)
        assert abs(pt.e_stages - est) < 0.02, (p, q)


# ---------------------------------------------------------------- Stein


def test_stein_quantiles_and_size_formula():
    st = Stein2(m=5, alpha=0.05, alpha_tilde=0.05, delta=1.2)
    assert st.df == 8
    tq, tqt = st.quantiles()
    assert tq == pytest.approx(float(student_t.ppf(0.95, 8)), abs=1e-12)
    assert tqt == tq
    s2 = 1.7
    want = max(5, math.ceil(2 * s2 * (tq + tqt) ** 2 / 1.2**2))
    assert st.total_size(s2) == want
    assert st.total_size(1e-9) == 5
    with pytest.raises(ValueError):
        Stein2(m=1)


def test_stein_two_stage_on_raw_samples():
    st = Stein2(m=3, alpha=0.05, alpha_tilde=0.05, delta=2.0)
    x1, y1 = [1.0, 2.0, 3.0], [0.0, 1.0, 2.0]
    s2 = 2.0 / 2.0  # pooled from both arms, df=4
    n = st.total_size(s2)
    need = n - 3
    x2 = [2.0] * need
    y2 = [1.0] * need
    dec, n_used = stein_two_stage(st, x1, y1, x2, y2)
    assert n_used == n
    diff = (np.mean(x1 + x2) - np.mean(y1 + y2))
    t_stat = diff / math.sqrt(2 * s2 / n)
    want = Decision.REJECT_BOUNDARY if t_stat > st.quantiles()[0] else Decision.ACCEPT_BOUNDARY
    assert dec is want
    with pytest.raises(ValueError):
        stein_two_stage(st, x1[:2], y1[:2])
    with pytest.raises(ValueError):
        stein_two_stage(st, x1, y1, x2[:1], y2[:1])


def test_stein_size_invariant_to_variance():
    st = Stein2(m=5, alpha=0.05, alpha_tilde=0.05, delta=1.2)
    for sigma in (0.35, 7.0):
        mc = simulate_oc(st, None, [{"delta": 0.0, "sigma": sigma}], 50_000, 9)
        pt = mc.points[0]
        assert abs(pt.power - 0.05) < 4 * pt.power_se, sigma


# ------------------------------------------------------ conditional power


def test_cond_power_sample_size_matches_brute_force():
    from glradapt.comparators import _cp_shortfall
    za, zat = norm.isf(0.025), norm.isf(0.1)
    for th_hat, s_m, want in ((0.3, 7.5, 106), (0.15, 2.0, 481),
                              (2.0, 60.0, 25), (0.02, 0.5, 500)):
        got = cond_power_sample_size(th_hat, 25, 500, 0.025, 0.1, s_m)
        brute = next((n for n in range(25, 501)
                      if float(_cp_shortfall(n, 25, s_m, th_hat, 0.0, 1.0, za, zat)) >= 0.0),
                     500)
        assert got == brute == want, th_hat


def test_cond_power_sample_size_below_null_uses_information_rule():
    got = cond_power_sample_size(-0.1, 25, 500, 0.025, 0.1, -2.5, theta1=0.29)
    want = min(500, max(25, math.ceil(-math.log(0.1) / ((-0.1 - 0.29) ** 2 / 2))))
    assert got == want == 31
    with pytest.raises(ValueError):
        cond_power_sample_size(-0.1, 25, 500, 0.025, 0.1, -2.5)
    with pytest.raises(ValueError):
        cond_power_sample_size(0.3, 25, 20, 0.025, 0.1, 7.5)


def test_cond_power3_alternatives():
    cp = CondPower3(m=50, M=764, alpha=0.001, alpha_tilde=0.001, theta1=0.5)
    assert cp.alternative() == 0.5
    auto = CondPower3(m=50, M=764, alpha=0.001, alpha_tilde=0.001)
    want = (norm.isf(0.001) + norm.isf(0.001)) / math.sqrt(764)
    assert auto.implied_alternative() == pytest.approx(want, abs=1e-12)
    assert auto.alternative() == auto.implied_alternative()


# ------------------------------------------------------------------ CHW


def _chw():
    return CHW(groups=OBF_GROUPS, crit=OBF_CRIT, L=1, theta1=0.29, M_tilde=500)


def test_obf_critical_values_deterministic_pin():
    crit = obf_critical_values(OBF_GROUPS, 0.025)
    for got, want in zip(crit, OBF_CRIT):
        assert got == pytest.approx(want, abs=1e-12)
    # O'Brien-Fleming shape: c_k = c_K * sqrt(t_K / t_k)
    t = np.asarray(OBF_GROUPS, float) / OBF_GROUPS[-1]
    for ck, tk in zip(crit, t):
        assert ck == pytest.approx(crit[-1] / math.sqrt(tk), rel=1e-12)


def test_chw_weights_and_validation():
    comp = _chw()
    w = comp.weights()
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(w * comp.M, np.diff(np.concatenate([[0], OBF_GROUPS])))
    assert comp.M == 125
    with pytest.raises(ValueError):
        CHW(groups=(31, 31), crit=(2.0, 2.0), L=1, theta1=0.29, M_tilde=500)
    with pytest.raises(ValueError):
        CHW(groups=OBF_GROUPS, crit=OBF_CRIT, L=4, theta1=0.29, M_tilde=500)
    with pytest.raises(ValueError):
        CHW(groups=OBF_GROUPS, crit=OBF_CRIT, L=1, theta1=0.29, M_tilde=100)
    with pytest.raises(ValueError):
        CHW(groups=OBF_GROUPS, crit=OBF_CRIT[:3], L=1, theta1=0.29, M_tilde=500)


def test_chw_resizing_ignores_effect_sign():
    comp = _chw()
    assert chw_new_maximum(comp, 0.29) == 125
    assert chw_new_maximum(comp, -0.29) == 125   # the square blinds the rule to sign
    assert chw_new_maximum(comp, 0.1) == 500
    assert chw_new_maximum(comp, -0.1) == 500
    assert chw_new_maximum(comp, 0.0) == 500


def test_chw_scripted_walks():
    comp = _chw()
    # weak positive estimate: conditional-power ratio collapses, plan stretches
    st = chw_init(comp)
    assert chw_step(comp, st, 31, 31 * 0.05) is Decision.CONTINUE
    assert st["modified"] is True
    assert st["plan"] == [31, 187, 344, 500]
    # early crossing at the first analysis
    st = chw_init(comp)
    assert chw_step(comp, st, 31, 40.0) is Decision.REJECT_EARLY
    # huge estimate below the boundary: updated maximum already spent
    st = chw_init(comp)
    assert chw_step(comp, st, 31, 20.0) is Decision.ACCEPT_BOUNDARY
    # off-plan cumulative size
    st = chw_init(comp)
    with pytest.raises(ValueError):
        chw_step(comp, st, 30, 1.0)


def test_chw_walk_to_final_analysis():
    comp = _chw()
    st = chw_init(comp)
    # drift just strong enough to keep the ratio trigger quiet (near theta1)
    sums = [31 * 0.29, 62 * 0.29, 94 * 0.29, 125 * 0.29]
    decisions = []
    for n, s in zip(st["plan"][:], sums):
        decisions.append(chw_step(comp, st, n, s))
        if decisions[-1] is not Decision.CONTINUE:
            break
    assert decisions[-1] in (Decision.REJECT_BOUNDARY, Decision.ACCEPT_BOUNDARY,
                             Decision.REJECT_EARLY)
    with pytest.raises(ValueError):
        chw_step(comp, st, 999, 0.0)


# ------------------------------------------------------------------ OBF


def test_obf_boundary_shape_and_validation():
    comp = OBFCurtail(groups=OBF_GROUPS, gamma=0.8, reference_alt=0.29,
                      crit_scale=OBF_CRIT[-1])
    for k in range(1, 5):
        want = OBF_CRIT[-1] * math.sqrt(125 / OBF_GROUPS[k - 1])
        assert comp.boundary(k) == pytest.approx(want, rel=1e-12)
    assert comp.final_sum_bound() == pytest.approx(OBF_CRIT[-1] * math.sqrt(125))
    with pytest.raises(ValueError):
        OBFCurtail(groups=OBF_GROUPS, gamma=0.4, reference_alt=0.29, crit_scale=2.0)
    with pytest.raises(ValueError):
        OBFCurtail(groups=OBF_GROUPS, gamma=0.8, reference_alt=0.0, crit_scale=2.0)


def test_obf_curtailment_stops_hopeless_trial_early():
    comp = OBFCurtail(groups=OBF_GROUPS, gamma=0.8, reference_alt=0.29,
                      crit_scale=OBF_CRIT[-1])
    # flat-zero data: conditional power decays and the futility rule fires
    assert obf_sc_step(comp, 1, 0.0) is Decision.CONTINUE
    assert obf_sc_step(comp, 2, 0.0) is Decision.CONTINUE
    assert obf_sc_step(comp, 3, 0.0) is Decision.ACCEPT_FUTILITY
    assert comp.cond_power(3, 0.0) < 1 - comp.gamma < comp.cond_power(1, 0.0)
    # strong data crosses early
    assert obf_sc_step(comp, 1, 50.0) is Decision.REJECT_EARLY
    assert obf_sc_step(comp, 4, 125.0) is Decision.REJECT_BOUNDARY
    assert obf_sc_step(comp, 4, 0.0) is Decision.ACCEPT_BOUNDARY
    with pytest.raises(ValueError):
        obf_sc_step(comp, 5, 0.0)


def test_obf_null_level_by_simulation():
    comp = OBFCurtail(groups=OBF_GROUPS, gamma=0.8, reference_alt=0.29,
                      crit_scale=OBF_CRIT[-1])
    mc = simulate_oc(comp, None, [0.0], 50_000, 6)
    pt = mc.points[0]
    # curtailment can only remove rejections, so the level sits at or below alpha
    assert pt.power < 0.025 + 3 * pt.power_se
    assert pt.ess < 125.0


# ------------------------------------------------------------- dispatch


def test_registry_and_max_stages():
    assert set(COMPARATOR_REGISTRY) == {"fss", "simon2", "thall2", "stein2",
                                        "cond_power2", "cond_power3", "chw",
                                        "obf_curtail"}
    assert max_stages(FSS(n=10, critical_value=1.0)) == 1
    assert max_stages(Simon2(10, 29, 1, 5)) == 2
    assert max_stages(Thall2(33, 78, 0.3, 1.5)) == 2
    assert max_stages(Stein2(m=5)) == 2
    assert max_stages(CondPower2(m=20, M_cap=100)) == 2
    assert max_stages(CondPower3(m=20, M=100)) == 3
    assert max_stages(_chw()) == 4
    assert max_stages(OBFCurtail(groups=(10, 20), gamma=0.8, reference_alt=0.2,
                                 crit_scale=2.0)) == 2


def test_comparator_paths_rejects_unknown_type():
    with pytest.raises(TypeError):
        comparator_paths(object(), {"theta": 0.0}, 1000, 0)


def test_comparator_round_trips():
    comps = [
        FSS(n=100, critical_value=1.96, theta0=0.1, sigma=2.0),
        Simon2(10, 29, 1, 5),
        Thall2(33, 78, 0.356, 1.584),
        Stein2(m=5, alpha=0.05, alpha_tilde=0.05, delta=1.2),
        CondPower2(m=20, M_cap=100, delta_futility=0.05),
        CondPower3(m=50, M=764, alpha=0.001, alpha_tilde=0.001, theta1=0.5,
                   thresholds=Thresholds(2.0, 1.0, 1.5)),
        _chw(),
        OBFCurtail(groups=OBF_GROUPS, gamma=0.8, reference_alt=0.29,
                   crit_scale=2.0),
    ]
    for comp in comps:
        clone = comparator_from_dict(comp.to_dict())
        assert clone == comp, type(comp).__name__
    with pytest.raises(ValueError):
        comparator_from_dict({"comparator": "nope"})
