"""
Eve's intercept-resend machinery for the ATR detector-control attack.

Eve-Bob measures Alice's pulse with a random phase; on a conclusive click
Eve-Alice resends a bright pulse carrying the guessed phase, timed into the
avalanche transition region of Bob's detector where only the full-flux
(matching phase) pulse is likely to click. An optical switch (duty factor)
keeps Bob's click rate at its normal value.
"""
import csv
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from atr_qkd.detector import DetectorModel, GateTiming, ideal_detector
from atr_qkd.exceptions import (ConfigError, InfeasibleRateError, NoSolutionError, UndefinedQberError)
from atr_qkd.protocol import (Origin, Phase, PulseFrame, expected_click_rate, expected_phase_response, interference_flux,
                              qber_eq1, qber_eq2)

__author__ = "John Conwell"
__copyright__ = "John Conwell"
__license__ = "MIT"

_logger = logging.getLogger(__name__)

# the ideal unit clicks with certainty at this flux and a zero phase difference
DEFAULT_EVE_RECEIVE_FLUX = 1.0


class GuessStrategy(Enum):
    CONCLUSIVE_ONLY = "conclusive_only"
    ALWAYS_GUESS = "always_guess"


@dataclass(frozen=True)
class AttackConfig:
    """
    target_delay_ns: where Eve's pulses land relative to Bob's gate zero point
    full_flux: flux at Bob's SPD for a zero Eve-Bob phase difference
    resend_rate: M, resend opportunities per second Eve uses; None uses every conclusive round
    duty_factor: fraction of opportunities actually resent; None matches Bob's normal click rate
    eve_receive_flux: mean flux of Alice's pulse at Eve's measurement unit; Eve-Bob sends strong
        pulses, so by default the ideal unit saturates on a zero phase difference. None uses Alice's flux
    """
    target_delay_ns: float = 1.16
    full_flux: float = 890.0
    resend_rate: Optional[float] = None
    duty_factor: Optional[float] = None
    eve_detector: DetectorModel = field(default_factory=ideal_detector)
    guess_strategy: GuessStrategy = GuessStrategy.CONCLUSIVE_ONLY
    eve_receive_flux: Optional[float] = DEFAULT_EVE_RECEIVE_FLUX

    def __post_init__(self):
        object.__setattr__(self, "guess_strategy", GuessStrategy(self.guess_strategy))
        if not self.full_flux > 0:
            raise ConfigError(f"full_flux must be > 0, got {self.full_flux}")
        if self.target_delay_ns < 0:
            raise ConfigError(f"target_delay_ns must be >= 0, got {self.target_delay_ns}")
        if self.duty_factor is not None and not 0.0 <= self.duty_factor <= 1.0:
            raise ConfigError(f"duty_factor must be in [0, 1], got {self.duty_factor}")
        if self.resend_rate is not None and not self.resend_rate > 0:
            raise ConfigError(f"resend_rate must be > 0, got {self.resend_rate}")
        if self.eve_receive_flux is not None and self.eve_receive_flux < 0:
            raise ConfigError(f"eve_receive_flux must be >= 0, got {self.eve_receive_flux}")

    def to_dict(self):
        eve = self.eve_detector
        return {
            "target_delay_ns": self.target_delay_ns,
            "full_flux": self.full_flux,
            "resend_rate": self.resend_rate,
            "duty_factor": self.duty_factor,
            "eve_detector": "ideal" if eve.name == "ideal" else eve.to_dict(),
            "guess_strategy": self.guess_strategy.value,
            "eve_receive_flux": self.eve_receive_flux,
        }

    @classmethod
    def from_dict(cls, data, library=None):
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown attack config keys: {sorted(unknown)}")
        eve = data.pop("eve_detector", "ideal")
        if isinstance(eve, str):
            if eve == "ideal":
                data["eve_detector"] = ideal_detector()
            elif library is None:
                raise ConfigError(f"eve_detector {eve!r} needs a profile library")
            else:
                data["eve_detector"] = library.model(eve)
        else:
            data["eve_detector"] = DetectorModel.from_dict(eve)
        return cls(**data)


@dataclass(frozen=True)
class EveRoundOutcome:
    intercepted: bool
    eve_measured_phase: Optional[Phase]
    conclusive: bool
    guessed_phase: Optional[Phase] = None
    resent: Optional[PulseFrame] = None

    def __post_init__(self):
        if (self.conclusive or self.resent is not None) and not self.intercepted:
            raise ConfigError("a conclusive or resent round must be intercepted")


def eve_click_probabilities(eve_detector, receive_flux):
    """ Eve's click probability for each Alice-Eve phase difference, at her gate zero point """
    return np.asarray(eve_detector.probability(0.0, receive_flux * np.array([1.0, 0.5, 0.0, 0.5])), dtype=float)


def eve_measure(alice_phase, eve_detector, rng, receive_flux=DEFAULT_EVE_RECEIVE_FLUX,
                strategy=GuessStrategy.CONCLUSIVE_ONLY) -> EveRoundOutcome:
    """One Eve-Bob measurement of Alice's pulse

    A click makes the round conclusive with guess = Eve's phase. Without a
    click, ``always_guess`` still picks a random phase to resend.
    """
    measured = Phase(int(rng.integers(4)))
    flux = interference_flux(receive_flux, Phase(alice_phase).difference(measured))
    conclusive = bool(rng.random() < eve_detector.probability(0.0, flux))
    guess = None
    if conclusive:
        guess = measured
    elif GuessStrategy(strategy) == GuessStrategy.ALWAYS_GUESS:
        guess = Phase(int(rng.integers(4)))
    return EveRoundOutcome(intercepted=True, eve_measured_phase=measured, conclusive=conclusive, guessed_phase=guess)


def eve_resend(outcome: EveRoundOutcome, config: AttackConfig, rng=None) -> Optional[PulseFrame]:
    """ Eve-Alice's faked-state pulse for this round, or None (no guess, or switch closed by the duty factor) """
    if outcome.guessed_phase is None:
        return None
    duty = 1.0 if config.duty_factor is None else config.duty_factor
    if duty <= 0:
        return None
    if duty < 1:
        if rng is None:
            raise ConfigError("a duty factor below 1 needs an rng")
        if rng.random() >= duty:
            return None
    return PulseFrame(outcome.guessed_phase, config.full_flux, config.target_delay_ns, Origin.EVE)


@dataclass
class EveBatch:
    measured_phase: np.ndarray
    conclusive: np.ndarray
    guessed_phase: np.ndarray
    resent: np.ndarray


def intercept_batch(alice_phase, attack: AttackConfig, resend_probability, rng, receive_flux) -> EveBatch:
    """ vectorized :func:`eve_measure` + :func:`eve_resend` over a block of rounds """
    alice_phase = np.asarray(alice_phase)
    m = alice_phase.size
    measured = rng.integers(0, 4, m)
    p_click = eve_click_probabilities(attack.eve_detector, receive_flux)
    conclusive = rng.random(m) < p_click[(alice_phase - measured) % 4]
    random_guess = rng.integers(0, 4, m)
    if attack.guess_strategy == GuessStrategy.ALWAYS_GUESS:
        guess = np.where(conclusive, measured, random_guess)
        attempt = np.ones(m, dtype=bool)
    else:
        guess = measured
        attempt = conclusive
    resent = attempt & (rng.random(m) < resend_probability)
    return EveBatch(measured, conclusive, guess, resent)


def expected_resend_rate(config, attack: AttackConfig):
    """ resend opportunities per second: Eve's conclusive rate, or every round when always guessing """
    if attack.guess_strategy == GuessStrategy.ALWAYS_GUESS:
        return config.gate_rate_hz
    receive_flux = attack.eve_receive_flux if attack.eve_receive_flux is not None else config.alice_flux
    return config.gate_rate_hz * float(eve_click_probabilities(attack.eve_detector, receive_flux).mean())


def _duty(click_prob, resend_rate, normal_click_rate):
    attack_rate = resend_rate * click_prob
    if attack_rate <= 0:
        raise InfeasibleRateError(math.inf, normal_click_rate)
    duty = normal_click_rate / attack_rate
    if duty > 1.0:
        raise InfeasibleRateError(duty, normal_click_rate - attack_rate)
    return max(duty, 0.0)


def duty_for_rate(p_full, p_half, resend_rate, normal_click_rate):
    """ duty = normal / (M * (P_f + 2 P_h) / 4) """
    return _duty(0.25 * (p_full + 2.0 * p_half), resend_rate, normal_click_rate)


def match_count_rate(detector: DetectorModel, config: AttackConfig, normal_click_rate, timing=None, phase_error=0.0):
    """Duty factor that keeps Bob's click rate at ``normal_click_rate``

    With a phase-error floor the click probability of a resent pulse is
    averaged over the phase noise instead of taken from P_f and P_h alone.

    Raises:
      InfeasibleRateError: the attack cannot reach the normal rate even at duty 1
    """
    if config.resend_rate is None:
        raise ConfigError("match_count_rate needs a resend rate M")
    model = detector.with_timing(timing) if timing is not None else detector
    delay, flux = config.target_delay_ns, config.full_flux
    if phase_error:
        click_prob = float(expected_phase_response(model, delay, flux, phase_error).mean())
    else:
        click_prob = 0.25 * (model.probability(delay, flux) + 2.0 * model.probability(delay, flux / 2.0))
    duty = _duty(click_prob, config.resend_rate, normal_click_rate)
    _logger.info(f"{detector.name}: duty {duty:.4f} for {normal_click_rate:.1f} counts/s "
                 f"(click probability {click_prob:.4g} per resend, M={config.resend_rate:.4g})")
    return duty


def resolve_attack(config, detector):
    """(attack, duty, resend_rate) actually used by a session

    ``resend_rate`` (M) defaults to Eve's available opportunities; ``duty``
    defaults to the rate-matching value. The switch passes ``duty * M``
    pulses per second, which may not exceed Eve's opportunities.

    Raises:
      ConfigError: more resends than Eve has conclusive rounds
      InfeasibleRateError: duty matching impossible
    """
    attack = config.attack
    available = expected_resend_rate(config, attack)
    resend_rate = available if attack.resend_rate is None else attack.resend_rate
    duty = attack.duty_factor
    if duty is None:
        normal = expected_click_rate(replace(config, attack=None), detector)
        duty = match_count_rate(detector, replace(attack, resend_rate=resend_rate), normal,
                                phase_error=config.phase_error)
    if duty * resend_rate > available * (1 + 1e-9):
        raise ConfigError(f"{duty * resend_rate:.4g} resends/s (duty {duty:.4g} x M {resend_rate:.4g}) exceed "
                          f"Eve's {available:.4g}/s opportunities")
    return attack, duty, resend_rate


def session_resend_probability(duty, resend_rate, config, attack):
    available = expected_resend_rate(config, attack)
    return duty * resend_rate / available if available > 0 else 0.0


def predicted_qber(detector, delay_ns, full_flux, phase_error=0.0):
    """ expected Eve-Bob phase-count QBER (qber_eq1) of photon-caused clicks, including the apparatus phase floor """
    dark = detector.dark_count_prob
    probs = (expected_phase_response(detector, delay_ns, full_flux, phase_error) - dark) / (1.0 - dark)
    return qber_eq1(np.clip(probs, 0.0, 1.0))


def phase_error_for_qber(detector, delay_ns, full_flux, target_qber, bounds=(0.0, 0.05)):
    """ phase-error floor at which :func:`predicted_qber` equals ``target_qber`` """
    def gap(e):
        return predicted_qber(detector, delay_ns, full_flux, e) - target_qber

    lo, hi = bounds
    if gap(lo) * gap(hi) > 0:
        raise NoSolutionError(f"target QBER {target_qber} not reachable for phase error in {bounds}")
    return float(brentq(gap, lo, hi, xtol=1e-10))


@dataclass(frozen=True)
class RateConstraint:
    normal_click_rate: float
    resend_rate: float


@dataclass(frozen=True)
class AttackCandidate:
    delay_ns: float
    flux: float
    p_full: float
    p_half: float
    qber_pred: float
    duty: Optional[float]
    feasible: bool


def optimize_attack(surface, flux_grid, delay_grid, qber_budget, rate_constraint: Optional[RateConstraint] = None,
                    timing: Optional[GateTiming] = None) -> List[AttackCandidate]:
    """Exhaustive grid search over attack (delay, flux)

    Every point gets ``qber_eq2(P(d, n), P(d, n/2))``; a point is feasible when
    that is within ``qber_budget`` and, given a ``rate_constraint``, duty
    matching succeeds. Feasible points come first, ranked by predicted QBER,
    then lower flux, then larger delay.

    Raises:
      ConfigError: empty grid
      OutOfDomainError: a delay outside the surface
      NoSolutionError: nothing feasible
    """
    fluxes = np.asarray(list(flux_grid), dtype=float)
    delays = np.asarray(list(delay_grid), dtype=float)
    if fluxes.size == 0 or delays.size == 0:
        raise ConfigError("flux and delay grids must be non-empty")
    surface.check_domain(delays)
    fwhm, offset = (timing.fwhm_ps, timing.offset_ps) if timing is not None else (0.0, 0.0)
    _logger.debug(f"optimizing over {delays.size} delays x {fluxes.size} fluxes")

    candidates = []
    for delay in delays:
        p_full = np.atleast_1d(surface.probability(delay, fluxes, fwhm, offset))
        p_half = np.atleast_1d(surface.probability(delay, fluxes / 2.0, fwhm, offset))
        for flux, pf, ph in zip(fluxes, p_full, p_half):
            try:
                qber = qber_eq2(float(pf), float(ph))
            except UndefinedQberError:
                qber = math.nan
            feasible = flux > 0 and qber <= qber_budget
            duty = None
            if rate_constraint is not None:
                try:
                    duty = duty_for_rate(pf, ph, rate_constraint.resend_rate, rate_constraint.normal_click_rate)
                except InfeasibleRateError:
                    feasible = False
            candidates.append(AttackCandidate(float(delay), float(flux), float(pf), float(ph), qber, duty,
                                              bool(feasible)))

    candidates.sort(key=lambda c: (not c.feasible, c.qber_pred if not math.isnan(c.qber_pred) else math.inf,
                                   c.flux, -c.delay_ns))
    if not candidates[0].feasible:
        raise NoSolutionError(f"no feasible attack point within QBER budget {qber_budget}")
    return candidates


def write_candidates_csv(candidates: Sequence[AttackCandidate], handle):
    writer = csv.writer(handle, lineterminator="\n")
    writer.writerow(["delay_ns", "flux", "qber_pred", "duty", "feasible"])
    for c in candidates:
        writer.writerow([repr(c.delay_ns), repr(c.flux), repr(c.qber_pred),
                         repr(c.duty) if c.duty is not None else "", int(c.feasible)])


@dataclass(frozen=True)
class MismatchRow:
    detector: str
    delay_ns: float
    p_full: float
    p_half: float
    qber: Optional[float]


@dataclass(frozen=True)
class MismatchReport:
    rows: tuple
    combined_qber: Optional[float]


def timing_mismatch(detectors: Sequence[DetectorModel], attack_delay_ns, full_flux,
                    offsets_ns: Optional[Mapping[str, float]] = None) -> MismatchReport:
    """Predicted QBER of one attack against a receiver with several SPDs

    Each detector sees the pulse at ``attack_delay_ns - offset``; the offset
    stands in for a gate-timing mismatch between detectors (or one induced
    through the receiver's calibration routine).
    """
    offsets_ns = offsets_ns or {}
    rows = []
    for model in detectors:
        delay = attack_delay_ns - offsets_ns.get(model.name, 0.0)
        pf = model.probability(delay, full_flux)
        ph = model.probability(delay, full_flux / 2.0)
        try:
            qber = qber_eq2(pf, ph)
        except UndefinedQberError:
            qber = None
        rows.append(MismatchRow(model.name, delay, pf, ph, qber))
    try:
        combined = qber_eq2(sum(r.p_full for r in rows), sum(r.p_half for r in rows))
    except UndefinedQberError:
        combined = None
    return MismatchReport(tuple(rows), combined)
