import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from avio.aware import AwareParams, Decision, SensorHealth, aware_step, quality_score_dvl, quality_score_vis
from avio.errors import NonMonotonicTime


def test_vis_score_saturates():
    assert quality_score_vis(1.0, 80, 50, 0.0) == 1.0


def test_vis_score_no_tracks():
    assert quality_score_vis(0.0, 0, 50, np.inf) == 0.0


def test_vis_score_mid_example():
    q = quality_score_vis(0.5, 25, 50, 1.0, u_px=1.0)
    assert q == pytest.approx(0.4 * 0.5 + 0.3 * 0.5 + 0.3 * math.exp(-1), abs=1e-15)
    assert round(q, 3) == 0.460


def test_dvl_score_gated_is_bounded():
    assert quality_score_dvl(False, 0.0, 1e-3, 4) <= 0.5


def test_dvl_score_perfect():
    assert quality_score_dvl(True, 0.0, 1e-3, 4) == 1.0


def test_dvl_score_mid_example():
    tr = 4e-4
    q = quality_score_dvl(True, math.sqrt(tr), tr, 3)
    assert q == pytest.approx(0.5 + 0.3 * math.exp(-1) + 0.15, abs=1e-15)
    assert round(q, 3) == 0.760


@given(st.floats(0, 1), st.integers(0, 200), st.floats(0, 50))
def test_vis_score_in_unit_interval(ratio, tracked, rms):
    assert 0.0 <= quality_score_vis(ratio, tracked, 50, rms) <= 1.0


def test_healthy_nominal_update():
    h = SensorHealth("VIS")
    _, d = aware_step(h, 0.0, 0.9)
    assert d == Decision(True, 1.0)


def test_sigma_grows_by_gamma_per_unhealthy_event():
    h = SensorHealth("DVL")
    _, d1 = aware_step(h, 0.0, 0.1)
    _, d2 = aware_step(h, 0.1, 0.1)
    assert h.sigma == 4.0
    # grow first, then update with sigma * R
    assert d1 == Decision(True, 2.0)
    assert d2 == Decision(True, 4.0)


def test_burst_disables_and_resets():
    h = SensorHealth("DVL", AwareParams(N=5, dT=2.0))
    decisions = [aware_step(h, t, 0.1)[1] for t in (0.0, 0.4, 0.8, 1.2, 1.6)]
    assert not h.enabled
    assert h.sigma == 1.0 and len(h.queue) == 0
    assert all(d.update for d in decisions[:4]) and not decisions[4].update


def test_span_equal_to_window_does_not_disable():
    h = SensorHealth("DVL", AwareParams(N=5, dT=2.0))
    for t in (0.0, 0.5, 1.0, 1.5, 2.0):
        aware_step(h, t, 0.1)
    assert h.enabled and h.sigma == 32.0


def test_queue_evicts_oldest():
    h = SensorHealth("VIS", AwareParams(N=3, dT=1.0))
    for t in (0.0, 2.0, 4.0, 6.0):
        aware_step(h, t, 0.2)
    assert [e[0] for e in h.queue] == [2.0, 4.0, 6.0] and h.enabled


def test_disabled_skips_until_recovery():
    h = SensorHealth("VIS", AwareParams(N=2, dT=1.0))
    aware_step(h, 0.0, 0.0)
    aware_step(h, 0.1, 0.0)
    assert not h.enabled
    assert not aware_step(h, 0.2, 0.79)[1].update  # below tau_rec
    assert not h.enabled
    _, d = aware_step(h, 0.3, 0.8)
    assert h.enabled and not d.update  # resumes on the next measurement
    fresh = SensorHealth("VIS", AwareParams(N=2, dT=1.0))
    assert (h.sigma, list(h.queue)) == (fresh.sigma, list(fresh.queue))
    assert aware_step(h, 0.4, 0.9)[1] == aware_step(fresh, 0.4, 0.9)[1]


def test_healthy_after_growth_tightens_when_enabled():
    h = SensorHealth("VIS", AwareParams(tighten_healthy=True))
    aware_step(h, 0.0, 0.1)
    _, d = aware_step(h, 0.1, 0.9)
    assert d == Decision(True, 0.25)


def test_healthy_after_growth_uses_nominal_by_default():
    h = SensorHealth("VIS")
    aware_step(h, 0.0, 0.1)
    _, d = aware_step(h, 0.1, 0.9)
    assert d == Decision(True, 1.0) and h.sigma == 2.0


def test_time_must_not_go_backwards():
    h = SensorHealth("VIS")
    aware_step(h, 1.0, 0.9)
    with pytest.raises(NonMonotonicTime):
        aware_step(h, 0.5, 0.9)


@given(st.lists(st.tuples(st.floats(0.001, 1.0), st.floats(0, 1)), min_size=1, max_size=60))
def test_sigma_monotone_between_resets(events):
    h = SensorHealth("DVL")
    t = 0.0
    for dt, q in events:
        t += dt
        was_enabled, prev = h.enabled, h.sigma
        _, d = aware_step(h, t, q)
        assert len(h.queue) <= h.params.N
        if was_enabled and h.enabled:
            assert h.sigma == prev or h.sigma == prev * h.params.gamma
        if was_enabled != h.enabled:
            assert h.sigma == 1.0 and not h.queue


def test_params_validation():
    with pytest.raises(ValueError):
        AwareParams(tau=0.9, tau_rec=0.5)
    with pytest.raises(ValueError):
        AwareParams(gamma=1.0)
