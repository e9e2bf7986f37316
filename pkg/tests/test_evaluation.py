import csv
import io
import math

import pytest

import refvals
from glradapt.comparators import Stein2, Thall2
from glradapt.errors import NumericError, SchemaError
from glradapt.evaluation import (OCPoint, OperatingChars, eta_theta,
                                 exact_oc_binomial, hoeffding_bound, simulate_oc,
                                 efficiency_diagnostic)
from glradapt.models import Bernoulli, NormalKnownVar


def test_exact_single_arm_reference_curve(bin_a_spec):
    grid = sorted(refvals.BIN_A_EXACT)
    oc = exact_oc_binomial(bin_a_spec, refvals.BIN_A_THRESHOLDS, grid)
    assert oc.reps is None and oc.seed is None
    for pt, p in zip(oc.points, grid):
        power, ess, est = refvals.BIN_A_EXACT[p]
        assert pt.params == {"p": p}
        assert pt.power == pytest.approx(power, abs=1e-10)
        assert pt.ess == pytest.approx(ess, abs=1e-8)
        assert pt.e_stages == pytest.approx(est, abs=1e-10)
        assert pt.power_se is None and pt.ess_se is None


def test_exact_two_arm_reference_points(twoarm_spec):
    grid = [(0.5, 0.5), (0.7, 0.5)]
    oc = exact_oc_binomial(twoarm_spec, refvals.TWOARM_THRESHOLDS, grid)
    for pt, key in zip(oc.points, grid):
        power, ess, est = refvals.TWOARM_EXACT[key]
        assert pt.power == pytest.approx(power, abs=1e-10)
        assert pt.ess == pytest.approx(ess, abs=1e-8)
        assert pt.e_stages == pytest.approx(est, abs=1e-10)


def test_exact_rejects_wrong_family(normal3_spec):
    with pytest.raises(SchemaError):
        exact_oc_binomial(normal3_spec, refvals.NORMAL3_THRESHOLDS, [0.0])


def test_simulation_matches_exact_binomial(bin_a_spec):
    mc = simulate_oc(bin_a_spec, refvals.BIN_A_THRESHOLDS, [0.2], 50_000, 1)
    power, ess, est = refvals.BIN_A_EXACT[0.2]
    pt = mc.points[0]
    assert abs(pt.power - power) < 4 * pt.power_se
    assert abs(pt.ess - ess) < 4 * pt.ess_se
    assert abs(pt.e_stages - est) < 0.02


def test_simulation_matches_exact_two_arm(twoarm_spec):
    mc = simulate_oc(twoarm_spec, refvals.TWOARM_THRESHOLDS,
                     [{"px": 0.7, "py": 0.5}], 50_000, 1)
    power, ess, _ = refvals.TWOARM_EXACT[(0.7, 0.5)]
    pt = mc.points[0]
    assert abs(pt.power - power) < 4 * pt.power_se
    assert abs(pt.ess - ess) < 4 * pt.ess_se


def test_average_sample_size_pairs_null_and_alternative(twoarm_spec):
    grid = [{"px": 0.5, "py": 0.5}, {"px": 0.7, "py": 0.5}]
    oc = simulate_oc(twoarm_spec, refvals.TWOARM_THRESHOLDS, grid, 20_000, 7, delta=0.2)
    null_pt, alt_pt = oc.points
    assert null_pt.avss is None
    assert alt_pt.avss == pytest.approx(0.5 * (null_pt.ess + alt_pt.ess), abs=1e-12)
    # without delta no pairing happens
    oc2 = simulate_oc(twoarm_spec, refvals.TWOARM_THRESHOLDS, grid, 20_000, 7)
    assert all(pt.avss is None for pt in oc2.points)


def test_simulate_oc_argument_validation(bin_a_spec):
    with pytest.raises(SchemaError):
        simulate_oc(bin_a_spec, refvals.BIN_A_THRESHOLDS, [0.1], 10, 0)
    with pytest.raises(SchemaError):
        simulate_oc(bin_a_spec, None, [0.1], 2_000, 0)
    with pytest.raises(SchemaError):
        simulate_oc(Thall2(n1=30, n2_total=82, y1=0.03, y2=0.05), None, [0.5], 2_000, 0)
    with pytest.raises(SchemaError):
        simulate_oc(Stein2(m=5, alpha=0.05, alpha_tilde=0.05, delta=1.2),
                    None, [1.0], 2_000, 0)


def test_bare_grid_entries_become_anchors(bin_a_spec, normal3_spec):
    oc = simulate_oc(bin_a_spec, refvals.BIN_A_THRESHOLDS, [0.1], 2_000, 0)
    assert oc.points[0].params == {"p": 0.1}
    oc = simulate_oc(normal3_spec, refvals.NORMAL3_THRESHOLDS, [0.2], 2_000, 0)
    assert oc.points[0].params == {"u": 0.2}


def test_csv_round_trip(twoarm_spec):
    oc = simulate_oc(twoarm_spec, refvals.TWOARM_THRESHOLDS,
                     [{"px": 0.5, "py": 0.5}, {"px": 0.7, "py": 0.5}],
                     5_000, 3, delta=0.2)
    text = oc.to_csv()
    rows = list(csv.DictReader(io.StringIO(text)))
    assert list(rows[0]) == ["px", "py", "power", "power_se", "ess",
                             "ess_se", "e_stages", "avss"]
    assert rows[0]["avss"] == ""
    for row, pt in zip(rows, oc.points):
        assert float(row["power"]) == pt.power
        assert float(row["ess"]) == pt.ess
        # standard errors are rounded to two significant digits
        se = float(row["power_se"])
        assert abs(se - pt.power_se) <= 10.0 ** math.floor(math.log10(pt.power_se)) / 2


def test_validate_flags_impossible_summaries(bin_a_spec):
    bad = OperatingChars([OCPoint({"p": 0.1}, 1.5, 20.0, 1.2)], {})
    with pytest.raises(NumericError):
        bad.validate(10, 29, 3)
    bad = OperatingChars([OCPoint({"p": 0.1}, 0.5, 40.0, 1.2)], {})
    with pytest.raises(NumericError):
        bad.validate(10, 29, 3)
    bad = OperatingChars([OCPoint({"p": 0.1}, 0.5, 20.0, 3.5)], {})
    with pytest.raises(NumericError):
        bad.validate(10, 29, 3)


def test_equal_information_effect_normal_midpoint():
    got = eta_theta(NormalKnownVar(1.0), 0.0, 1.0)
    assert got == pytest.approx(refvals.ETA_NORMAL_0_1, abs=1e-12)
    assert got == pytest.approx(0.5, abs=1e-6)
    got = eta_theta(NormalKnownVar(2.0), -0.4, 0.6)
    assert got == pytest.approx(0.1, abs=1e-6)


def test_equal_information_effect_bernoulli_pin():
    got = eta_theta(Bernoulli(), 0.1, refvals.BIN_A_IMPLIED)
    assert got == pytest.approx(refvals.ETA_BERN_A, abs=1e-12)
    kl = Bernoulli().effect_kl
    assert kl(got, 0.1) == pytest.approx(kl(got, refvals.BIN_A_IMPLIED), abs=1e-9)
    with pytest.raises(SchemaError):
        eta_theta(Bernoulli(), 0.3, 0.1)


def test_information_lower_bound_clamps():
    la = -math.log(0.05)
    assert hoeffding_bound(20, 121, la, 0.1, 0.02) == pytest.approx(la / 0.1)
    assert hoeffding_bound(20, 121, la, 1.0, 0.5) == 20.0      # floor at m
    assert hoeffding_bound(20, 121, la, 0.01, 0.001) == 121.0  # ceiling at cap
    assert hoeffding_bound(20, 121, la, 0.0, 0.0) == 121.0


def test_efficiency_diagnostic_smoke(normal3_spec):
    diags = efficiency_diagnostic(normal3_spec, theta=0.45,
                                  alpha_sequence=(0.05,), reps=10_000, seed=2)
    d = diags[0]
    assert d.kind == "three_stage"
    assert d.hoeffding_bound >= normal3_spec.m
    assert d.measured_ess >= d.hoeffding_bound > 0
    assert d.ratio == pytest.approx(d.measured_ess / d.hoeffding_bound, rel=1e-12)
    assert d.asymptotic_ess == pytest.approx(d.hoeffding_bound, rel=1e-12)
    assert d.eta == pytest.approx(0.225, abs=1e-6)
    assert d.a == pytest.approx(normal3_spec.m / -math.log(0.05), rel=1e-12)


def test_efficiency_diagnostic_requires_decreasing_alphas(normal3_spec):
    with pytest.raises(SchemaError):
        efficiency_diagnostic(normal3_spec, theta=0.45,
                              alpha_sequence=(0.01, 0.05), reps=10_000)
