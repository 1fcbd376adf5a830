"""
Monitors a receiver could run against detector-control attacks: average
photocurrent, afterpulse probability, randomly removed gates and the
click-time distribution.
"""
import csv
import json
import logging
import math
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Dict, FrozenSet, List, Optional

import numpy as np

from atr_qkd.attack import duty_for_rate
from atr_qkd.detector import ClickCause, GatedDetector, GateTiming
from atr_qkd.exceptions import ConfigError, InfeasibleRateError, UndefinedQberError, UndefinedResultError
from atr_qkd.protocol import qber_eq2

__author__ = "John Conwell"
__copyright__ = "John Conwell"
__license__ = "MIT"

_logger = logging.getLogger(__name__)

PHOTOCURRENT = "photocurrent"
AFTERPULSE = "afterpulse"
REMOVED_GATE = "removed_gate"
TIMING = "timing"


class Verdict(Enum):
    PASS = "pass"
    ALARM = "alarm"
    INCONCLUSIVE = "inconclusive"


def average_photocurrent(click_rate, p_full, p_half, i_full, i_half):
    """Average SPD photocurrent in nA

    C (P_f i_f + 2 P_h i_h) / (P_f + 2 P_h), with C in counts/s and the charges
    in pA/count. Background photocurrent is neglected.
    """
    if click_rate < 0:
        raise ConfigError(f"click rate must be >= 0, got {click_rate}")
    denominator = p_full + 2.0 * p_half
    if denominator <= 0:
        raise UndefinedResultError(f"P_f + 2 P_h is zero (P_f={p_full}, P_h={p_half})")
    return click_rate * (p_full * i_full + 2.0 * p_half * i_half) / denominator / 1000.0


def photocurrent_alarm(observed_na, baseline_na, threshold_ratio=2.0) -> Verdict:
    if baseline_na <= 0:
        raise ConfigError(f"photocurrent baseline must be > 0, got {baseline_na}")
    return Verdict.ALARM if observed_na / baseline_na > threshold_ratio else Verdict.PASS


def measure_afterpulse(events):
    """Afterpulse-caused clicks per photon-caused click

    Reads the simulator's cause labels, so dark counts drop out by attribution
    rather than by subtraction. :func:`measure_afterpulse_baseline` is the
    estimate a receiver can make from click counts alone.
    """
    photon = events.count(ClickCause.PHOTON)
    if photon == 0:
        raise UndefinedResultError("no photon-caused clicks to measure afterpulses against")
    return events.count(ClickCause.AFTERPULSE) / photon


def illumination_off_rate(detector, n_gates=1_000_000, rng_seed=None):
    """ clicks per gate with no light at all: the dark-count baseline """
    events = GatedDetector(detector, np.random.default_rng(rng_seed)).run(np.zeros(n_gates), 0.0)
    return len(events) / n_gates


def measure_afterpulse_baseline(events, lit, dark_rate):
    """Afterpulse probability from click counts and an illumination-off baseline

    ``lit`` marks the gates that carried light. Clicks on unlit gates in excess
    of ``dark_rate`` (clicks per gate, from :func:`illumination_off_rate`) are
    afterpulses; their count is divided by the clicks on lit gates. Lit gates
    should be sparse enough that afterpulses rarely fall on them.

    Raises:
      UndefinedResultError: no clicks on lit gates, or no unlit gates
    """
    lit = np.asarray(lit, dtype=bool)
    on_lit = lit[events.gate_index]
    lit_clicks = int(on_lit.sum())
    unlit_gates = int(lit.size - lit.sum())
    if lit_clicks == 0 or unlit_gates == 0:
        raise UndefinedResultError(f"need clicks on lit gates ({lit_clicks}) and unlit gates ({unlit_gates})")
    excess = (len(events) - lit_clicks) - dark_rate * unlit_gates
    return max(excess, 0.0) / lit_clicks


@dataclass
class ClickHistogram:
    """ click times binned at ``resolution_ps``; ``bin_start_ps`` holds the left edges """
    bin_start_ps: np.ndarray
    counts: np.ndarray
    resolution_ps: float

    @classmethod
    def from_samples(cls, samples_ps, resolution_ps=1.0, span_ps=None):
        samples_ps = np.asarray(samples_ps, dtype=float)
        if span_ps is None:
            if samples_ps.size == 0:
                return cls(np.array([]), np.array([], dtype=np.int64), resolution_ps)
            span_ps = (samples_ps.min(), samples_ps.max())
        lo = math.floor(span_ps[0] / resolution_ps) * resolution_ps
        hi = math.floor(span_ps[1] / resolution_ps) * resolution_ps + resolution_ps
        edges = np.arange(lo, hi + resolution_ps / 2, resolution_ps)
        counts, _ = np.histogram(samples_ps, bins=edges)
        return cls(edges[:-1], counts, resolution_ps)

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def normalized(self):
        return self.counts / self.total if self.total else np.zeros(self.counts.size)

    @property
    def mean_ps(self):
        if not self.total:
            raise UndefinedResultError("mean of an empty histogram")
        return float(np.dot(self.bin_start_ps + self.resolution_ps / 2, self.normalized))

    def support_ps(self, mass=0.99):
        """ (lo, hi) edges of the central interval holding ``mass`` of the clicks """
        if not self.total:
            raise UndefinedResultError("support of an empty histogram")
        cdf = np.cumsum(self.normalized)
        tail = (1.0 - mass) / 2
        lo = int(np.searchsorted(cdf, tail, side="right"))
        hi = int(np.searchsorted(cdf, 1.0 - tail, side="left"))
        hi = min(hi, cdf.size - 1)
        return float(self.bin_start_ps[lo]), float(self.bin_start_ps[hi] + self.resolution_ps)

    def support_width_ps(self, mass=0.99):
        lo, hi = self.support_ps(mass)
        return hi - lo

    def to_csv(self, handle):
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["bin_start_ps", "normalized_count"])
        for start, value in zip(self.bin_start_ps, self.normalized):
            writer.writerow([repr(float(start)), repr(float(value))])


@dataclass(frozen=True)
class IlluminationSpec:
    """ laser pulse train used for the removed-gate check, one pulse per slot """
    flux: float
    delay_ns: float = 0.0


@dataclass(frozen=True)
class RemovedGatePattern:
    """Which illumination slots of a gate period carry no gate

    ``slots_per_period`` illumination pulses fall in each gate period; slots in
    ``removed`` never get a gate and each remaining gated slot is removed with
    probability ``random_fraction``.
    """
    slots_per_period: int = 2
    removed: tuple = (1,)
    random_fraction: float = 0.0

    def __post_init__(self):
        if self.slots_per_period < 1:
            raise ConfigError(f"slots_per_period must be >= 1, got {self.slots_per_period}")
        if any(not 0 <= s < self.slots_per_period for s in self.removed):
            raise ConfigError(f"removed slots {self.removed} outside 0..{self.slots_per_period - 1}")
        if not 0.0 <= self.random_fraction <= 1.0:
            raise ConfigError(f"random_fraction must be in [0, 1], got {self.random_fraction}")


@dataclass
class RemovedGateResult:
    slot_counts: np.ndarray
    removed_clicks: int
    removed_slots: int
    histogram: ClickHistogram

    @property
    def verdict(self):
        return Verdict.ALARM if self.removed_clicks else Verdict.PASS


def removed_gate_check(detector, illumination: IlluminationSpec, pattern: RemovedGatePattern = RemovedGatePattern(),
                       n_slots=1_000_000, rng_seed=0, resolution_ps=16.0,
                       reference_flux=None) -> RemovedGateResult:
    """Illuminate every slot and count clicks per slot

    A removed slot has the APD biased below breakdown for the whole period, so
    it never clicks. The histogram folds click times onto one gate period.
    """
    rng = np.random.default_rng(rng_seed)
    slot = np.arange(n_slots) % pattern.slots_per_period
    live = ~np.isin(slot, pattern.removed)
    if pattern.random_fraction > 0:
        live &= rng.random(n_slots) >= pattern.random_fraction
    flux = np.full(n_slots, float(illumination.flux))

    events = GatedDetector(detector, rng, reference_flux=reference_flux).run(
        flux, illumination.delay_ns, live=live)
    event_slot = slot[events.gate_index]
    slot_counts = np.bincount(event_slot, minlength=pattern.slots_per_period)
    removed_clicks = int(np.count_nonzero(~live[events.gate_index]))

    slot_period_ps = detector.surface.gate_period_ns * 1000.0 / pattern.slots_per_period
    folded = event_slot * slot_period_ps + events.click_time_ps
    span = (-slot_period_ps / 2, detector.surface.gate_period_ns * 1000.0 - slot_period_ps / 2)
    histogram = ClickHistogram.from_samples(folded, resolution_ps, span_ps=span)
    _logger.info(f"removed-gate check on {detector.name}: {len(events)} clicks, {removed_clicks} in removed slots")
    return RemovedGateResult(slot_counts, removed_clicks, int(np.count_nonzero(~live)), histogram)


@dataclass(frozen=True)
class TimingResult:
    center_shift_ns: Optional[float]
    support_width_ns: Optional[float]
    verdict: Verdict


def timing_monitor(click_times_ps, reference: ClickHistogram, resolution_ps=1.0, min_samples=10_000,
                   shift_threshold_ns=0.02, width_ratio=1.5) -> TimingResult:
    """Compare the click-time distribution with a normal-operation reference

    Alarm when the mean moved by more than ``shift_threshold_ns`` or the 99 %
    support widened by more than ``width_ratio``. Fewer than ``min_samples``
    clicks gives an inconclusive verdict.
    """
    click_times_ps = np.asarray(click_times_ps, dtype=float)
    if click_times_ps.size < min_samples:
        _logger.warning(f"timing monitor: {click_times_ps.size} clicks, need {min_samples}")
        return TimingResult(None, None, Verdict.INCONCLUSIVE)
    observed = ClickHistogram.from_samples(click_times_ps, resolution_ps)
    shift_ns = (observed.mean_ps - reference.mean_ps) / 1000.0
    width_ps = observed.support_width_ps()
    alarm = abs(shift_ns) > shift_threshold_ns or width_ps > width_ratio * reference.support_width_ps()
    return TimingResult(shift_ns, width_ps / 1000.0, Verdict.ALARM if alarm else Verdict.PASS)


def reference_histogram(detector, n_samples=100_000, rng_seed=0, resolution_ps=1.0):
    """ normal-operation click-time histogram of a detector model """
    rng = np.random.default_rng(rng_seed)
    return ClickHistogram.from_samples(detector.normal_timing.sample(rng, n_samples), resolution_ps)


@dataclass(frozen=True)
class JitterRow:
    fwhm_ps: float
    offset_ps: float
    p_full: float
    p_half: float
    qber: Optional[float]


def jitter_sensitivity(surface, timings, delay_ns, flux) -> List[JitterRow]:
    """ P_f, P_h and qber_eq2 of one attack point for each gate jitter (FWHM in ps or :class:`GateTiming`) """
    surface.check_domain(delay_ns)
    rows = []
    for timing in timings:
        if not isinstance(timing, GateTiming):
            timing = GateTiming(float(timing))
        pf = surface.probability(delay_ns, flux, timing.fwhm_ps, timing.offset_ps)
        ph = surface.probability(delay_ns, flux / 2.0, timing.fwhm_ps, timing.offset_ps)
        try:
            qber = qber_eq2(pf, ph)
        except UndefinedQberError:
            qber = None
        rows.append(JitterRow(timing.fwhm_ps, timing.offset_ps, pf, ph, qber))
    return rows


@dataclass(frozen=True)
class TradeoffRow:
    flux: float
    p_full: float
    p_half: float
    qber: Optional[float]
    duty: Optional[float]
    photocurrent_na: Optional[float]
    extrapolated: bool
    # above the reference flux the current is expected to fall; True flags a row where it does not
    exceeds_reference_current: Optional[bool] = None


def photocurrent_tradeoff(detector, delay_ns, flux_grid, click_rate, resend_rate=None) -> List[TradeoffRow]:
    """Predicted photocurrent and QBER against attack flux at a fixed click rate

    The charge constants are only known at the reference flux; rows at other
    fluxes reuse them and are flagged ``extrapolated``. Rows above the
    reference flux carry ``exceeds_reference_current``: a higher flux should
    draw less current than the reference, and fixed charges need not show it.
    """
    charges = detector.charges
    reference_current = None
    ref_full = detector.probability(delay_ns, charges.reference_flux)
    ref_half = detector.probability(delay_ns, charges.reference_flux / 2.0)
    try:
        reference_current = average_photocurrent(click_rate, ref_full, ref_half, charges.full, charges.half)
    except UndefinedResultError:
        pass
    rows = []
    for flux in flux_grid:
        pf = detector.probability(delay_ns, flux)
        ph = detector.probability(delay_ns, flux / 2.0)
        try:
            qber = qber_eq2(pf, ph)
            current = average_photocurrent(click_rate, pf, ph, charges.full, charges.half)
        except UndefinedResultError:
            qber = current = None
        duty = None
        if resend_rate is not None:
            try:
                duty = duty_for_rate(pf, ph, resend_rate, click_rate)
            except InfeasibleRateError:
                pass
        extrapolated = not math.isclose(flux, charges.reference_flux)
        exceeds = None
        if extrapolated and flux > charges.reference_flux and None not in (current, reference_current):
            exceeds = bool(current > reference_current)
        rows.append(TradeoffRow(float(flux), pf, ph, qber, duty, current, extrapolated, exceeds))
    n_extra = sum(r.extrapolated for r in rows)
    if n_extra:
        _logger.warning(f"{n_extra} photocurrent values extrapolate the charge constants "
                        f"measured at {charges.reference_flux} photons/pulse")
    rising = [r.flux for r in rows if r.exceeds_reference_current]
    if rising:
        _logger.warning(f"photocurrent at {rising} photons/pulse is not below the {reference_current:.3f} nA "
                        f"drawn at the reference flux")
    return rows


@dataclass(frozen=True)
class MonitorConfig:
    baseline_photocurrent_na: float = 5.7
    photocurrent_ratio: float = 2.0
    afterpulse_limit: float = 0.01
    timing_shift_ns: float = 0.02
    timing_width_ratio: float = 1.5
    timing_min_samples: int = 10_000
    timing_resolution_ps: float = 1.0
    removed_gate_slots: int = 1_000_000
    removed_gate_pattern: RemovedGatePattern = field(default_factory=RemovedGatePattern)

    def __post_init__(self):
        if self.baseline_photocurrent_na <= 0:
            raise ConfigError(f"baseline_photocurrent_na must be > 0, got {self.baseline_photocurrent_na}")
        if self.afterpulse_limit < 0 or self.photocurrent_ratio <= 0 or self.timing_width_ratio <= 0:
            raise ConfigError("monitor thresholds must be positive")

    def to_dict(self):
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        pattern = self.removed_gate_pattern
        data["removed_gate_pattern"] = {"slots_per_period": pattern.slots_per_period,
                                        "removed": list(pattern.removed), "random_fraction": pattern.random_fraction}
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown monitor config keys: {sorted(unknown)}")
        if "removed_gate_pattern" in data:
            pattern = dict(data["removed_gate_pattern"])
            pattern["removed"] = tuple(pattern.get("removed", (1,)))
            data["removed_gate_pattern"] = RemovedGatePattern(**pattern)
        return cls(**data)


@dataclass
class MonitorReport:
    photocurrent_avg: float
    afterpulse_prob: Optional[float]
    removed_gate_clicks: int
    removed_gate_slot_counts: List[int]
    timing_center_shift: Optional[float]
    timing_support_width: Optional[float]
    verdicts: Dict[str, Verdict]
    alarms: FrozenSet[str] = field(init=False)

    def __post_init__(self):
        self.alarms = frozenset(name for name, v in self.verdicts.items() if v == Verdict.ALARM)

    def to_dict(self):
        return {
            "photocurrent_avg_na": self.photocurrent_avg,
            "afterpulse_prob": self.afterpulse_prob,
            "removed_gate_clicks": self.removed_gate_clicks,
            "removed_gate_slot_counts": list(self.removed_gate_slot_counts),
            "timing_center_shift_ns": self.timing_center_shift,
            "timing_support_width_ns": self.timing_support_width,
            "verdicts": {name: v.value for name, v in self.verdicts.items()},
            "alarms": sorted(self.alarms),
        }

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


def session_photocurrent(report):
    """ Monte Carlo form of the average photocurrent: click rate times mean charge per click, nA """
    if not len(report.events):
        return 0.0
    return report.click_rate_hz * float(report.events.charge.mean()) / 1000.0


def evaluate_monitors(report, detector, session_config, config: MonitorConfig = MonitorConfig(),
                      reference: Optional[ClickHistogram] = None) -> MonitorReport:
    """ run all four monitors over a finished session """
    verdicts = {}
    current = session_photocurrent(report)
    verdicts[PHOTOCURRENT] = photocurrent_alarm(current, config.baseline_photocurrent_na, config.photocurrent_ratio)

    try:
        afterpulse = measure_afterpulse(report.events)
        verdicts[AFTERPULSE] = Verdict.ALARM if afterpulse > config.afterpulse_limit else Verdict.PASS
    except UndefinedResultError:
        _logger.warning("afterpulse monitor inconclusive: no photon-caused clicks")
        afterpulse = None
        verdicts[AFTERPULSE] = Verdict.INCONCLUSIVE

    attack = session_config.attack
    if attack is not None:
        illumination = IlluminationSpec(attack.full_flux, attack.target_delay_ns)
    else:
        illumination = IlluminationSpec(session_config.bob_flux, session_config.signal_delay_ns)
    seed = report.seed if report.seed is not None else 0
    removed = removed_gate_check(detector, illumination, config.removed_gate_pattern, config.removed_gate_slots,
                                 rng_seed=seed + 1, reference_flux=attack.full_flux if attack else None)
    verdicts[REMOVED_GATE] = removed.verdict

    if reference is None:
        reference = reference_histogram(detector, rng_seed=seed + 2, resolution_ps=config.timing_resolution_ps)
    photon_times = report.events.of_cause(ClickCause.PHOTON).click_time_ps
    timing = timing_monitor(photon_times, reference, config.timing_resolution_ps, config.timing_min_samples,
                            config.timing_shift_ns, config.timing_width_ratio)
    verdicts[TIMING] = timing.verdict

    monitors = MonitorReport(current, afterpulse, removed.removed_clicks, removed.slot_counts.tolist(),
                             timing.center_shift_ns, timing.support_width_ns, verdicts)
    _logger.info(f"monitors: alarms={sorted(monitors.alarms) or 'none'}")
    return monitors

