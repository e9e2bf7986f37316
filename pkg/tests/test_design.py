import dataclasses
import math

import pytest

import refvals
from glradapt.design import (Decision, DesignSpec, StageRecord, Thresholds, TrialState,
                             decide, replay, step)
from glradapt.models import Bernoulli, NormalKnownVar, StageStat

TH = refvals.BIN_A_THRESHOLDS


def _decisions(spec, stage, n, successes):
    out = {}
    for s in successes:
        d, next_n = decide(spec, TH, stage, StageStat(n=n, s=(float(s),)))
        out[s] = (d, next_n)
    return out


def test_stage_one_decision_bands(bin_a_spec):
    got = _decisions(bin_a_spec, 1, 10, range(0, 11))
    for s in (0, 1):
        assert got[s][0] is Decision.ACCEPT_FUTILITY
    assert got[2] == (Decision.CONTINUE, 29)
    assert got[3] == (Decision.CONTINUE, 20)
    for s in range(4, 11):
        assert got[s][0] is Decision.REJECT_EARLY


def test_stage_two_interim_decision_bands(bin_a_spec):
    got = _decisions(bin_a_spec, 2, 20, range(0, 21))
    for s in range(0, 4):
        assert got[s][0] is Decision.ACCEPT_FUTILITY
    for s in (4, 5):
        assert got[s] == (Decision.CONTINUE, 29)
    for s in range(6, 21):
        assert got[s][0] is Decision.REJECT_EARLY


def test_stage_two_at_cap_uses_final_rule(bin_a_spec):
    # n2 == M: the boundary threshold applies even though stage < 3
    got = _decisions(bin_a_spec, 2, 29, range(0, 30))
    for s in range(0, 6):
        assert got[s][0] is Decision.ACCEPT_BOUNDARY
    for s in range(6, 30):
        assert got[s][0] is Decision.REJECT_BOUNDARY


def test_final_stage_decision_bands(bin_a_spec):
    got = _decisions(bin_a_spec, 3, 29, range(0, 30))
    for s in range(0, 6):
        assert got[s][0] is Decision.ACCEPT_BOUNDARY
    for s in range(6, 30):
        assert got[s][0] is Decision.REJECT_BOUNDARY


def test_rejection_checked_before_futility():
    # wide-open futility threshold next to a crossable rejection threshold:
    # a clearly positive estimate must reject, not accept
    spec = DesignSpec(model=NormalKnownVar(1.0), m=10, M=40, alpha=0.05,
                      alpha_tilde=0.2, u0=0.0, u1=3.0)
    th = Thresholds(b=1.0, b_tilde=0.0, c=1.0)
    d, _ = decide(spec, th, 1, StageStat(n=10, s=(20.0,)))
    assert d is Decision.REJECT_EARLY


def test_interim_off_plan_n_at_final_stage_raises(bin_a_spec):
    with pytest.raises(ValueError):
        decide(bin_a_spec, TH, 3, StageStat(n=20, s=(5.0,)))


def test_next_stage_size_matches_capped_information_rule(bin_a_spec):
    # ceil of the uncapped information estimate, no inflation (rho_m=0)
    for s in (2, 3):
        stat = StageStat(n=10, s=(float(s),))
        est = bin_a_spec.sample_size_function(stat)
        expect = max(10, min(29, math.ceil(est - 1e-12)))
        assert bin_a_spec.next_stage_size(1, stat) == expect


def test_three_stage_final_size_is_always_cap(bin_a_spec):
    for s in (4, 5):
        assert bin_a_spec.next_stage_size(2, StageStat(n=20, s=(float(s),))) == 29


def test_inflate_clip_integer_guard(normal3_spec):
    assert normal3_spec.rho_m == pytest.approx(0.1)
    assert normal3_spec._inflate_clip(20.0, 1, 1000) == 22
    assert normal3_spec._inflate_clip(20.05, 1, 1000) == 23
    assert normal3_spec._inflate_clip(2.0, 10, 1000) == 10
    assert normal3_spec._inflate_clip(math.inf, 10, 121) == 121


def test_four_stage_size_ladder(four_spec):
    assert four_spec.max_stages() == 4
    assert four_spec.n_max == 500
    stat1 = StageStat(n=25, s=(2.0,))
    n2 = four_spec.next_stage_size(1, stat1)
    assert 25 <= n2 <= 125
    stat2 = StageStat(n=n2, s=(4.0,))
    n3 = four_spec.next_stage_size(2, stat2)
    assert n2 <= n3 <= 250
    stat3 = StageStat(n=n3, s=(6.0,))
    assert four_spec.next_stage_size(3, stat3) == 500


def test_four_stage_futility_reference_uses_second_implied(four_spec):
    assert four_spec.futility_reference() == pytest.approx(refvals.FOUR_U2, abs=1e-12)
    assert four_spec.resolved_u1() == pytest.approx(refvals.FOUR_U1, abs=1e-12)


def test_step_and_replay_reference_session(bin_a_spec):
    state = TrialState()
    rec1 = step(bin_a_spec, TH, state, StageStat(n=10, s=(3.0,)))
    assert rec1.decision is Decision.CONTINUE and rec1.next_n == 20
    assert state.status == "open" and state.planned_n == 20
    rec2 = step(bin_a_spec, TH, state, StageStat(n=20, s=(6.0,)))
    assert rec2.decision is Decision.REJECT_EARLY
    assert state.status == "rejected"
    with pytest.raises(ValueError):
        step(bin_a_spec, TH, state, StageStat(n=29, s=(7.0,)))

    again = replay(bin_a_spec, TH, [StageStat(n=10, s=(3.0,)), StageStat(n=20, s=(6.0,))])
    assert [r.decision for r in again.history] == [r.decision for r in state.history]
    assert [r.next_n for r in again.history] == [r.next_n for r in state.history]


def test_step_rejects_wrong_cumulative_n(bin_a_spec):
    state = TrialState()
    step(bin_a_spec, TH, state, StageStat(n=10, s=(3.0,)))
    with pytest.raises(ValueError):
        step(bin_a_spec, TH, state, StageStat(n=21, s=(6.0,)))


def test_futility_session_status(bin_a_spec):
    state = replay(bin_a_spec, TH, [StageStat(n=10, s=(1.0,))])
    assert state.status == "accepted"
    assert state.history[0].decision is Decision.ACCEPT_FUTILITY


def test_spec_validation_errors():
    with pytest.raises(ValueError):
        DesignSpec(model=Bernoulli(), m=29, M=29, alpha=0.05, alpha_tilde=0.2, u0=0.1)
    with pytest.raises(ValueError):
        DesignSpec(model=Bernoulli(), m=5, M=29, alpha=1.5, alpha_tilde=0.2, u0=0.1)
    with pytest.raises(ValueError):
        DesignSpec(model=Bernoulli(), m=5, M=29, alpha=0.05, alpha_tilde=0.2, u0=0.1,
                   eps=0.01)
    with pytest.raises(ValueError):
        DesignSpec(model=Bernoulli(), m=5, M=29, alpha=0.05, alpha_tilde=0.2, u0=0.1,
                   M_prime=40)
    with pytest.raises(ValueError):
        DesignSpec(model=Bernoulli(), m=5, M=29, alpha=0.05, alpha_tilde=0.2, u0=0.1,
                   M_prime=20, M_tilde=60)


def test_spec_dict_round_trip(bin_a_spec, four_spec, twoarm_spec):
    for spec in (bin_a_spec, four_spec, twoarm_spec):
        clone = DesignSpec.from_dict(spec.to_dict())
        assert clone.to_dict() == spec.to_dict()
        assert clone.four_stage == spec.four_stage


def test_three_stage_dict_omits_extension_fields(bin_a_spec):
    d = bin_a_spec.to_dict()
    assert "M_prime" not in d and "M_tilde" not in d and "u2" not in d


def test_thresholds_round_trip():
    th = Thresholds(1.25, 0.5, 0.75)
    assert Thresholds.from_dict(th.to_dict()) == th


def test_decision_flags():
    assert Decision.CONTINUE.terminal is False
    assert all(d.terminal for d in Decision if d is not Decision.CONTINUE)
    assert {d for d in Decision if d.rejects} == {Decision.REJECT_EARLY, Decision.REJECT_BOUNDARY}
