import io
import math
from dataclasses import replace

import numpy as np
import pytest

from atr_qkd.attack import AttackConfig, expected_resend_rate, match_count_rate, predicted_qber
from atr_qkd.countermeasures import (AFTERPULSE, PHOTOCURRENT, REMOVED_GATE, TIMING, ClickHistogram,
                                     IlluminationSpec, MonitorConfig, RemovedGatePattern, Verdict,
                                     average_photocurrent, evaluate_monitors, illumination_off_rate, jitter_sensitivity,
                                     measure_afterpulse, measure_afterpulse_baseline, photocurrent_alarm,
                                     photocurrent_tradeoff, reference_histogram, removed_gate_check, timing_monitor)
from atr_qkd.detector import ATTACK_TIMING, NORMAL_TIMING, ClickCause, EventLog, GatedDetector, ideal_detector
from atr_qkd.exceptions import ConfigError, UndefinedResultError
from atr_qkd.protocol import SessionConfig, qber_eq2, run_session

__author__ = "John Conwell"
__copyright__ = "John Conwell"
__license__ = "MIT"


def test_average_photocurrent():
    # homemade SPD at 1.09 ns
    assert average_photocurrent(9110, 0.215, 0.00107, 0.287, 33.832) == pytest.approx(5.6, abs=0.1)
    # no half-flux clicks
    assert average_photocurrent(9110, 0.3, 0.0, 0.287, 33.832) == pytest.approx(9110 * 0.287 / 1000)
    assert average_photocurrent(0, 0.3, 0.1, 0.287, 33.832) == 0.0
    with pytest.raises(UndefinedResultError):
        average_photocurrent(9110, 0.0, 0.0, 0.287, 33.832)


def test_average_photocurrent_exact():
    rng = np.random.default_rng(17)
    for c, pf, ph, i_f, i_h in rng.uniform(0.01, 1e4, (100, 5)):
        expected = c * (pf * i_f + 2 * ph * i_h) / (pf + 2 * ph) / 1000
        assert average_photocurrent(c, pf, ph, i_f, i_h) == pytest.approx(expected, rel=1e-12)


def test_photocurrent_alarm():
    assert photocurrent_alarm(5.6, 5.7, 2.0) == Verdict.PASS
    # blinding-scale current
    assert photocurrent_alarm(228.0, 5.7, 2.0) == Verdict.ALARM
    assert photocurrent_alarm(5.7, 5.7, 1.01) == Verdict.PASS
    with pytest.raises(ConfigError):
        photocurrent_alarm(1.0, 0.0)


def test_measure_afterpulse():
    causes = [ClickCause.PHOTON] * 200 + [ClickCause.AFTERPULSE] * 2 + [ClickCause.DARK] * 5
    events = EventLog(range(len(causes)), np.zeros(len(causes)), causes, np.ones(len(causes)))
    assert measure_afterpulse(events) == pytest.approx(0.01)
    with pytest.raises(UndefinedResultError):
        measure_afterpulse(events.of_cause(ClickCause.DARK))



def test_measure_afterpulse_baseline(id201):
    n_gates = 3_000_000
    lit = np.zeros(n_gates, dtype=bool)
    lit[::10] = True
    events = GatedDetector(id201, np.random.default_rng(8)).run(np.where(lit, 890.0, 0.0), 1.16)
    dark_rate = illumination_off_rate(id201, n_gates=2_000_000, rng_seed=9)
    assert dark_rate < 1e-4
    # counting clicks against the baseline agrees with the cause labels
    assert measure_afterpulse_baseline(events, lit, dark_rate) == pytest.approx(measure_afterpulse(events), rel=0.1)
    # a baseline above every unlit click clamps to zero
    assert measure_afterpulse_baseline(events, lit, 1.0) == 0.0
    with pytest.raises(UndefinedResultError):
        measure_afterpulse_baseline(events, np.ones(n_gates, dtype=bool), dark_rate)
    with pytest.raises(UndefinedResultError):
        measure_afterpulse_baseline(EventLog.concat([]), lit, dark_rate)


def test_click_histogram():
    histogram = ClickHistogram.from_samples([0.2, 0.7, 1.5, 3.9], resolution_ps=1.0)
    np.testing.assert_array_equal(histogram.bin_start_ps, [0.0, 1.0, 2.0, 3.0])
    np.testing.assert_array_equal(histogram.counts, [2, 1, 0, 1])
    assert histogram.total == 4
    assert histogram.mean_ps == pytest.approx((0.5 * 2 + 1.5 + 3.5) / 4)
    handle = io.StringIO()
    histogram.to_csv(handle)
    lines = handle.getvalue().splitlines()
    assert lines[0] == "bin_start_ps,normalized_count"
    assert lines[1] == "0.0,0.5"
    with pytest.raises(UndefinedResultError):
        ClickHistogram.from_samples([]).mean_ps


def test_support_width():
    rng = np.random.default_rng(1)
    histogram = ClickHistogram.from_samples(rng.uniform(0.0, 100.0, 100_000))
    assert histogram.support_width_ps() == pytest.approx(100.0, abs=2.0)


def test_timing_monitor():
    rng = np.random.default_rng(21)
    reference = ClickHistogram.from_samples(NORMAL_TIMING.sample(rng, 100_000))
    attack = timing_monitor(ATTACK_TIMING.sample(rng, 10_000), reference)
    assert attack.verdict == Verdict.ALARM
    assert attack.center_shift_ns == pytest.approx(0.043, abs=0.005)
    assert attack.support_width_ns > 1.5 * reference.support_width_ps() / 1000
    normal = timing_monitor(NORMAL_TIMING.sample(rng, 10_000), reference)
    assert normal.verdict == Verdict.PASS
    assert normal.center_shift_ns == pytest.approx(0.0, abs=0.002)
    # too few clicks to say anything
    assert timing_monitor(NORMAL_TIMING.sample(rng, 10), reference).verdict == Verdict.INCONCLUSIVE


def test_removed_gate_check(id201):
    normal = removed_gate_check(id201, IlluminationSpec(0.1, 0.0), n_slots=200_000, rng_seed=1)
    attack = removed_gate_check(id201, IlluminationSpec(890.0, 1.16), n_slots=200_000, rng_seed=2,
                                reference_flux=890.0)
    for result in (normal, attack):
        # clicks only at gated slots
        assert result.slot_counts[0] > 0
        assert result.slot_counts[1] == 0
        assert result.removed_clicks == 0
        assert result.removed_slots == 100_000
        assert result.verdict == Verdict.PASS
        assert result.histogram.resolution_ps == 16.0
    dark = removed_gate_check(ideal_detector(), IlluminationSpec(0.0), n_slots=1_000)
    assert dark.histogram.total == 0


def test_random_gate_removal(id201):
    pattern = RemovedGatePattern(slots_per_period=1, removed=(), random_fraction=0.3)
    result = removed_gate_check(id201, IlluminationSpec(890.0, 1.16), pattern, n_slots=50_000, rng_seed=5)
    assert result.removed_clicks == 0
    assert result.removed_slots == pytest.approx(15_000, abs=600)
    with pytest.raises(ConfigError):
        RemovedGatePattern(slots_per_period=2, removed=(2,))


def test_jitter_sensitivity(id201):
    settings = id201.timing_settings
    rows = jitter_sensitivity(id201.surface, [settings["bypass"], settings["set_15ns"], settings["set_15ns_shifted"]],
                              1.16, 890.0)
    bypass, wide, shifted = rows
    assert bypass.p_full == pytest.approx(0.262, abs=0.02)
    assert bypass.qber == pytest.approx(0.0031, abs=0.0005)
    # the plain 65 ps setting is the same surface convolved with a wider kernel
    assert wide.offset_ps == 0.0
    assert wide.p_full == pytest.approx(id201.surface.probability(1.16, 890.0, 65.0), rel=1e-12)
    assert wide.p_full > bypass.p_full
    assert wide.p_half > bypass.p_half
    assert shifted.offset_ps > 0
    assert shifted.p_full == pytest.approx(0.976, abs=0.03)
    assert shifted.p_half == pytest.approx(0.449, abs=0.03)
    assert shifted.qber == pytest.approx(0.24, abs=0.02)
    # zero jitter is the raw surface
    (raw,) = jitter_sensitivity(id201.surface, [0.0], 1.16, 890.0)
    assert raw.p_full == id201.surface.raw_probability(1.16, 890.0)
    assert raw.qber == qber_eq2(raw.p_full, raw.p_half)


def test_photocurrent_tradeoff(homemade):
    rows = photocurrent_tradeoff(homemade, 1.09, [890.0, 1000.0], 9110, resend_rate=500_000)
    at_reference, other = rows
    assert not at_reference.extrapolated
    assert other.extrapolated
    assert 4.0 < at_reference.photocurrent_na < 2 * 5.7
    expected = 9110 / (500_000 * 0.25 * (at_reference.p_full + 2 * at_reference.p_half))
    assert at_reference.duty == pytest.approx(expected)
    # only rows above the reference flux are compared against its current
    assert at_reference.exceeds_reference_current is None
    assert other.exceeds_reference_current == (other.photocurrent_na > at_reference.photocurrent_na)
    assert other.p_full > at_reference.p_full


def test_monitor_config():
    config = MonitorConfig(removed_gate_slots=1000, removed_gate_pattern=RemovedGatePattern(4, (1, 3)))
    assert MonitorConfig.from_dict(config.to_dict()) == config
    with pytest.raises(ConfigError):
        MonitorConfig.from_dict({"threshold": 1})
    with pytest.raises(ConfigError):
        MonitorConfig(baseline_photocurrent_na=0.0)


def test_evaluate_monitors_normal(id201):
    session = SessionConfig(n_gates=100_000, seed=5)
    report = run_session(session, id201)
    monitors = evaluate_monitors(report, id201, session, MonitorConfig(removed_gate_slots=10_000))
    assert set(monitors.verdicts) == {PHOTOCURRENT, AFTERPULSE, REMOVED_GATE, TIMING}
    # a few hundred clicks are not enough for the timing monitor
    assert monitors.verdicts[TIMING] == Verdict.INCONCLUSIVE
    assert monitors.verdicts[REMOVED_GATE] == Verdict.PASS
    assert monitors.verdicts[PHOTOCURRENT] == Verdict.PASS
    assert monitors.alarms == {name for name, v in monitors.verdicts.items() if v == Verdict.ALARM}
    data = monitors.to_dict()
    assert data["verdicts"][TIMING] == "inconclusive"
    assert data["alarms"] == sorted(monitors.alarms)


def test_reference_histogram(id201):
    reference = reference_histogram(id201, n_samples=50_000, rng_seed=3)
    assert reference.mean_ps == pytest.approx(0.0, abs=0.5)
    assert reference.support_width_ps() < 100.0


@pytest.mark.slow
def test_id201_attack_session(id201):
    """ duty-matched attack at 1.16 ns: low QBER, full knowledge, same counts as normal operation """
    normal_config = SessionConfig(n_gates=2_000_000, phase_error=0.0, seed=31)
    attack_config = replace(normal_config, n_gates=10_000_000, seed=32, attack=AttackConfig())
    normal = run_session(normal_config, id201)
    report = run_session(attack_config, id201)

    predicted = predicted_qber(id201, 1.16, 890.0)
    n_eb = sum(report.counts_eve_bob)
    assert abs(report.qber_eq1 - predicted) <= 4 * math.sqrt(predicted * (1 - predicted) / n_eb)
    assert report.eve_knowledge_fraction > 0.99
    assert measure_afterpulse(report.events) == pytest.approx(0.0057, abs=0.002)

    # click rate held at the normal-operation value
    n1, n2 = report.total_clicks, normal.total_clicks
    rate1, rate2 = n1 / report.total_gates, n2 / normal.total_gates
    assert abs(rate1 - rate2) <= 4 * math.sqrt(n1 / report.total_gates ** 2 + n2 / normal.total_gates ** 2)

    # Alice-Bob counts per phase difference look like normal operation
    short = run_session(replace(attack_config, n_gates=2_000_000, seed=33), id201)
    for a, b in zip(short.counts_alice_bob, normal.counts_alice_bob):
        assert abs(a - b) <= 4 * math.sqrt(a + b)

    monitors = evaluate_monitors(report, id201, attack_config, MonitorConfig(removed_gate_slots=100_000))
    assert monitors.verdicts[TIMING] == Verdict.ALARM
    assert monitors.timing_center_shift == pytest.approx(0.043, abs=0.005)
    assert monitors.verdicts[REMOVED_GATE] == Verdict.PASS
    assert monitors.verdicts[PHOTOCURRENT] == Verdict.PASS


@pytest.mark.slow
def test_homemade_attack_passes_existing_monitors(homemade):
    """ photocurrent, afterpulse and removed-gate monitors all pass under attack at 1.09 ns """
    attack = AttackConfig(target_delay_ns=1.09, full_flux=890.0)
    config = SessionConfig(n_gates=6_000_000, phase_error=0.0, seed=41, attack=attack)
    resend_rate = expected_resend_rate(config, attack)
    assert resend_rate == pytest.approx(500_000, rel=1e-3)
    duty = match_count_rate(homemade, replace(attack, resend_rate=resend_rate), 9110)
    config = replace(config, attack=replace(attack, duty_factor=duty))

    report = run_session(config, homemade)
    assert report.click_rate_hz == pytest.approx(9110, rel=0.05)
    assert report.eve_knowledge_fraction > 0.99
    monitors = evaluate_monitors(report, homemade, config, MonitorConfig(removed_gate_slots=100_000))
    assert monitors.verdicts[PHOTOCURRENT] == Verdict.PASS
    assert monitors.afterpulse_prob <= 0.01
    assert monitors.verdicts[AFTERPULSE] == Verdict.PASS
    assert monitors.removed_gate_clicks == 0
    assert monitors.verdicts[REMOVED_GATE] == Verdict.PASS
