from dataclasses import replace

import numpy as np
import pytest

from atr_qkd.calibration import (REGIME_FALLBACK_TOLERANCE, AnchorSet, RegimeAnchor, builtin_anchor_set, builtin_profiles,
                                 calibrate_afterpulse_scaling, calibrate_gate_offset, fit_surface, load_anchor_csv,
                                 parse_anchor_csv)
from atr_qkd.detector import AfterpulseKernel
from atr_qkd.exceptions import AnchorParseError, DataValidationError, FitFailure
from atr_qkd.surface import Anchor

__author__ = "John Conwell"
__copyright__ = "John Conwell"
__license__ = "MIT"


def test_builtin_anchor_sets():
    names = [a.detector_name for a in builtin_profiles()]
    assert names == ["id201", "homemade_1mhz", "homemade_1ghz"]
    id201 = builtin_anchor_set("id201")
    assert len(id201.rows) == 7
    assert id201.measured_jitter_ps == 19.0
    assert id201.atr_window_ns == (1.06, 1.26)
    assert id201.gate_period_ns == 1000.0
    assert builtin_anchor_set("homemade_1ghz").gate_period_ns == pytest.approx(1.0)
    with pytest.raises(DataValidationError):
        builtin_anchor_set("nope")


def test_parse_errors():
    # wrong header on the first line
    with pytest.raises(AnchorParseError) as info:
        parse_anchor_csv("delay,flux\n1.0,2.0\n")
    assert info.value.line_number == 1
    # comment lines still count
    with pytest.raises(AnchorParseError) as info:
        parse_anchor_csv("# detector: x\ndelay_ns,flux_photons,probability\n1.0,abc,0.5\n")
    assert info.value.line_number == 3
    assert "line 3" in str(info.value)
    with pytest.raises(AnchorParseError):
        parse_anchor_csv("delay_ns,flux_photons,probability\n1.0,2.0\n")


def test_anchor_set_validation():
    with pytest.raises(DataValidationError):
        AnchorSet("x", rows=())
    with pytest.raises(DataValidationError):
        AnchorSet("x", rows=(Anchor(1.0, 10.0, 1.2), Anchor(1.0, 20.0, 0.5)))
    # a single flux over the whole set
    with pytest.raises(DataValidationError):
        AnchorSet("x", rows=(Anchor(1.0, 10.0, 0.2), Anchor(1.1, 10.0, 0.1)))


def test_csv_file_round_trip(tmp_path):
    anchors = builtin_anchor_set("id201")
    path = tmp_path / "copy.csv"
    path.write_text(anchors.to_csv())
    loaded = load_anchor_csv(path)
    assert loaded.rows == anchors.rows
    assert loaded.detector_name == "id201"
    assert loaded.atr_window_ns == anchors.atr_window_ns
    assert loaded.measured_jitter_ps == anchors.measured_jitter_ps
    assert loaded.regimes == anchors.regimes


@pytest.mark.parametrize("name", ["id201", "homemade_1mhz", "homemade_1ghz"])
def test_fit_reproduces_anchors(name):
    anchors = builtin_anchor_set(name)
    surface, report = fit_surface(anchors)
    assert report.converged
    assert report.max_residual <= 0.02
    for row in anchors.rows:
        p = surface.probability(row.delay_ns, row.flux, anchors.measured_jitter_ps)
        assert p == pytest.approx(row.probability, abs=0.02)


def test_fit_surface_domain():
    surface, _ = fit_surface(builtin_anchor_set("id201"))
    assert surface.domain_ns == (0.0, 1.26)
    assert surface.atr_onset_ns == 1.06
    assert surface.peak_efficiency > 0


def test_single_flux_delays_borrow_slope():
    anchors = builtin_anchor_set("id201")
    _, report = fit_surface(anchors)
    # 0 ns only has the 0.1 photon anchor
    assert 0.0 in report.defaulted_slopes
    assert 1.16 not in report.defaulted_slopes


def test_contradicting_anchors():
    rows = (Anchor(1.0, 100.0, 0.5), Anchor(1.0, 200.0, 0.1))
    with pytest.raises(DataValidationError):
        fit_surface(AnchorSet("bad", rows=rows))


def test_fit_failure_carries_report():
    with pytest.raises(FitFailure) as info:
        fit_surface(builtin_anchor_set("homemade_1mhz"), tolerance=1e-4)
    assert info.value.report is not None
    assert not info.value.report.converged
    assert info.value.report.max_residual > 1e-4
    assert info.value.surface is not None


def test_calibrate_gate_offset():
    surface, _ = fit_surface(builtin_anchor_set("id201"))
    targets = surface.probability(1.16, [890.0, 445.0], 65.0, 50.0)
    offset = calibrate_gate_offset(surface, 1.16, [890.0, 445.0], targets, 65.0)
    assert offset == pytest.approx(50.0, abs=0.5)


def test_calibrate_afterpulse_scaling(id201):
    pattern = [890.0, 445.0, 0.0, 445.0]
    model = replace(id201, afterpulse=AfterpulseKernel(base=0.01))
    once = calibrate_afterpulse_scaling(model, 0.0057, 1.16, pattern)
    twice = calibrate_afterpulse_scaling(model, 0.0114, 1.16, pattern)
    assert once > 0
    assert twice == pytest.approx(2 * once)
    with pytest.raises(DataValidationError):
        calibrate_afterpulse_scaling(replace(id201, afterpulse=AfterpulseKernel(base=0.0)), 0.0057, 1.16, pattern)


def test_jitter_regimes_parsed():
    regimes = builtin_anchor_set("id201").regimes
    assert regimes == (RegimeAnchor(65.0, 1.16, 890.0, 0.976), RegimeAnchor(65.0, 1.16, 445.0, 0.449))
    assert builtin_anchor_set("homemade_1mhz").regimes == ()
    with pytest.raises(AnchorParseError) as info:
        parse_anchor_csv("# jitter_regime: 65, 1.16\ndelay_ns,flux_photons,probability\n1.0,2.0,0.5\n")
    assert info.value.line_number == 1
    with pytest.raises(DataValidationError):
        RegimeAnchor(65.0, 1.16, 890.0, 1.5)


def test_jitter_regime_residuals_reported():
    anchors = builtin_anchor_set("id201")
    surface, report = fit_surface(anchors)
    assert report.max_residual <= 0.02
    for regime, residual in zip(anchors.regimes, report.regime_residuals):
        expected = surface.probability(regime.delay_ns, regime.flux, regime.fwhm_ps) - regime.probability
        assert residual == pytest.approx(expected, abs=1e-9)
    data = report.to_dict()
    assert [r["residual"] for r in data["jitter_regimes"]] == list(report.regime_residuals)
    assert data["max_regime_residual"] == report.max_regime_residual
    assert data["regimes_within_tolerance"] == report.regimes_within_tolerance


def test_jitter_regimes_bounded_by_kernel_ratio():
    # the 19 ps kernel is at most 65/19 times the 65 ps one, so a miss at 19 ps
    # caps how close 65 ps can get to 1 with the same raw surface
    anchors = builtin_anchor_set("id201")
    surface, report = fit_surface(anchors)
    p19 = surface.probability(1.16, 890.0, 19.0)
    p65 = surface.probability(1.16, 890.0, 65.0)
    assert 1.0 - p19 <= 65.0 / 19.0 * (1.0 - p65) + 0.01
    # with 0.262 held at 19 ps, 0.976 at 65 ps is out of reach
    assert report.max_regime_residual > REGIME_FALLBACK_TOLERANCE
    assert not report.regimes_within_tolerance


def test_half_flux_ratio_kept():
    surface, report = fit_surface(builtin_anchor_set("homemade_1mhz"))
    assert report.max_residual <= 0.02
    ratio = surface.probability(1.09, 445.0) / surface.probability(1.09, 890.0)
    assert ratio < 0.006


@pytest.mark.parametrize("name", ["id201", "homemade_1mhz"])
def test_fitted_surface_monotone_grid(name):
    anchors = builtin_anchor_set(name)
    surface, _ = fit_surface(anchors)
    lo = anchors.atr_window_ns[0] if anchors.atr_window_ns else surface.domain_ns[0]
    delays = np.linspace(lo, surface.domain_ns[1], 100)
    fluxes = np.logspace(-1, 3.5, 100)
    p = surface.probability(delays[:, None], fluxes[None, :], anchors.measured_jitter_ps or 0.0)
    assert np.all(np.diff(p, axis=1) >= -1e-12)
    assert np.all(np.diff(p, axis=0) <= 1e-12)
