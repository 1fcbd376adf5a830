"""
Plug-and-play phase-encoded BB84 with a single gated SPD.

Alice modulates one of four phases, Bob picks one of four phases and his
single detector sees ``flux * cos^2(dphi / 2)``. A click is read as "Alice
used my phase". Rounds are simulated in vectorized chunks; the detector
itself keeps gate order for afterpulses and deadtime.
"""
import csv
import json
import logging
import math
from dataclasses import dataclass, field, fields
from enum import Enum, IntEnum
from numbers import Integral
from typing import TYPE_CHECKING, Iterator, Optional, Sequence, Tuple

import numpy as np

from atr_qkd.detector import ClickCause, EventLog, GatedDetector
from atr_qkd.exceptions import ConfigError, DataValidationError, UndefinedQberError

if TYPE_CHECKING:
    from atr_qkd.attack import AttackConfig

__author__ = "John Conwell"
__copyright__ = "John Conwell"
__license__ = "MIT"

_logger = logging.getLogger(__name__)

_QUADRATURE_NODES = 48


class Phase(IntEnum):
    """ the four BB84 phases in units of pi/2 """
    ZERO = 0
    HALF_PI = 1
    PI = 2
    THREE_HALF_PI = 3

    @property
    def radians(self):
        return self.value * math.pi / 2

    @property
    def basis(self):
        """ 0 for {0, pi}, 1 for {pi/2, 3pi/2} """
        return self.value % 2

    @property
    def bit(self):
        return self.value // 2

    @property
    def label(self):
        return ("0", "pi/2", "pi", "3pi/2")[self.value]

    def difference(self, other):
        return Phase((self.value - int(other)) % 4)

    @classmethod
    def from_radians(cls, radians):
        steps = radians / (math.pi / 2)
        if abs(steps - round(steps)) > 1e-9:
            raise DataValidationError(f"phase {radians} rad is not a multiple of pi/2")
        return cls(int(round(steps)) % 4)


class Origin(Enum):
    ALICE = "alice"
    EVE = "eve"


@dataclass(frozen=True)
class PulseFrame:
    phase: Phase
    flux: float
    delay_ns: float = 0.0
    origin: Origin = Origin.ALICE

    def __post_init__(self):
        object.__setattr__(self, "phase", Phase(self.phase))
        if not math.isfinite(self.flux) or self.flux < 0:
            raise DataValidationError(f"pulse flux must be finite and >= 0, got {self.flux}")


def interference_flux(full_flux, dphi=None, phase_error=0.0, *, radians=None):
    """Mean flux reaching the SPD for a phase difference between encoder and decoder

    ``full_flux * cos^2(dphi / 2)``; a phase-error floor ``e`` leaks ``e`` of the
    flux into the destructive (pi) case and removes it from the constructive one.

    Args:
      dphi: :class:`Phase` or its integer index, in units of pi/2
      radians: the phase difference as an angle instead of ``dphi``

    Raises:
      ConfigError: both or neither of ``dphi`` and ``radians`` given
      DataValidationError: negative flux, ``dphi`` not an index, angle not a multiple of pi/2
    """
    if full_flux < 0:
        raise DataValidationError(f"flux must be >= 0, got {full_flux}")
    if (dphi is None) == (radians is None):
        raise ConfigError("give the phase difference either as dphi or as radians")
    if radians is not None:
        dphi = Phase.from_radians(radians)
    elif isinstance(dphi, (Integral, np.integer)) and not isinstance(dphi, bool) and 0 <= dphi < 4:
        dphi = Phase(int(dphi))
    else:
        raise DataValidationError(f"phase difference {dphi!r} is not a Phase index 0-3, pass angles as radians=")
    factors = (1.0 - phase_error, 0.5, phase_error, 0.5)
    return full_flux * factors[dphi]


def phase_noise_sigma(phase_error):
    """ rms interferometer phase noise (rad) whose mean leak into the pi port is ``phase_error`` """
    if not 0.0 <= phase_error < 0.5:
        raise ConfigError(f"phase_error must be in [0, 0.5), got {phase_error}")
    return math.sqrt(-2.0 * math.log1p(-2.0 * phase_error))


def phase_factors(dphi, sigma, rng=None):
    """ per-round interference factor for phase differences ``dphi`` (units of pi/2) """
    dphi = np.asarray(dphi)
    if sigma == 0:
        return np.array([1.0, 0.5, 0.0, 0.5])[dphi]
    noise = rng.normal(0.0, sigma, dphi.shape)
    return 0.5 * (1.0 + np.cos(dphi * (math.pi / 2) + noise))


def expected_phase_response(model, delay_ns, full_flux, phase_error=0.0):
    """ expected click probability for each of the four phase differences, averaged over phase noise """
    sigma = phase_noise_sigma(phase_error)
    if sigma == 0:
        return np.asarray(model.probability(delay_ns, full_flux * np.array([1.0, 0.5, 0.0, 0.5])), dtype=float)
    nodes, weights = np.polynomial.hermite_e.hermegauss(_QUADRATURE_NODES)
    weights = weights / weights.sum()
    angles = np.arange(4)[:, None] * (math.pi / 2) + sigma * nodes[None, :]
    p = model.probability(delay_ns, full_flux * 0.5 * (1.0 + np.cos(angles)))
    return np.asarray(p, dtype=float) @ weights


def qber_eq1(counts):
    """(C_pi/2 + C_3pi/2 + 2 C_pi) / (2 (C_0 + C_pi/2 + C_pi + C_3pi/2))

    Args:
      counts: click counts indexed by phase difference (0, pi/2, pi, 3pi/2)
    """
    c0, c1, c2, c3 = (float(c) for c in counts)
    total = c0 + c1 + c2 + c3
    if total <= 0:
        raise UndefinedQberError("all phase-difference counts are zero")
    return (c1 + c3 + 2.0 * c2) / (2.0 * total)


def qber_eq2(p_full, p_half):
    """ attack QBER from full/half-flux detection probabilities, P_h / (P_f + 2 P_h) """
    denominator = p_full + 2.0 * p_half
    if denominator <= 0:
        raise UndefinedQberError(f"P_f + 2 P_h is zero (P_f={p_full}, P_h={p_half})")
    return p_half / denominator


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    alice_phase: Phase
    eve_phase: Optional[Phase]
    bob_phase: Phase
    flux: float
    click: bool
    click_time_ps: Optional[float]
    sifted: bool
    error: bool

    def __post_init__(self):
        if self.sifted and not (self.click and Phase(self.alice_phase).basis == Phase(self.bob_phase).basis):
            raise DataValidationError(f"round {self.round_index}: sifted without a matched-basis click")
        if self.error and not self.sifted:
            raise DataValidationError(f"round {self.round_index}: error on an unsifted round")


def sift(rounds: Sequence[RoundRecord]):
    """ (sifted length, error count): clicked rounds with matching bases, error when bits differ """
    length = errors = 0
    for r in rounds:
        alice, bob = Phase(r.alice_phase), Phase(r.bob_phase)
        if r.click and alice.basis == bob.basis:
            length += 1
            errors += alice.bit != bob.bit
    return length, errors


@dataclass(frozen=True)
class SessionConfig:
    gate_rate_hz: float = 1e6
    n_gates: int = 1_000_000
    alice_flux: float = 0.1
    signal_delay_ns: float = 0.0
    channel_transmittance: float = 1.0
    bob_internal_loss: float = 0.0
    phase_error: float = 0.005
    seed: Optional[int] = None
    attack: Optional["AttackConfig"] = None
    keep_trace: bool = False
    chunk_gates: int = 1_000_000

    def __post_init__(self):
        if self.gate_rate_hz <= 0:
            raise ConfigError(f"gate_rate_hz must be > 0, got {self.gate_rate_hz}")
        if self.n_gates < 0 or self.chunk_gates <= 0:
            raise ConfigError(f"n_gates must be >= 0 and chunk_gates > 0 ({self.n_gates}, {self.chunk_gates})")
        if self.alice_flux < 0:
            raise ConfigError(f"alice_flux must be >= 0, got {self.alice_flux}")
        for name in ("channel_transmittance", "bob_internal_loss"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        phase_noise_sigma(self.phase_error)

    @property
    def bob_flux(self):
        """ mean flux at Bob's SPD for a constructive round in normal operation """
        return self.alice_flux * self.channel_transmittance * (1.0 - self.bob_internal_loss)

    @property
    def duration_s(self):
        return self.n_gates / self.gate_rate_hz

    def to_dict(self):
        data = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "attack"}
        data["attack"] = self.attack.to_dict() if self.attack is not None else None
        return data

    @classmethod
    def from_dict(cls, data, library=None):
        from atr_qkd.attack import AttackConfig
        data = dict(data)
        attack = data.pop("attack", None)
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown session config keys: {sorted(unknown)}")
        if attack is not None:
            data["attack"] = AttackConfig.from_dict(attack, library)
        return cls(**data)


@dataclass
class SessionTrace:
    """ per-round arrays; eve_phase is -1 where Eve resent nothing """
    alice_phase: np.ndarray
    eve_phase: np.ndarray
    bob_phase: np.ndarray
    flux: np.ndarray
    click: np.ndarray
    click_time_ps: np.ndarray

    @property
    def sifted(self):
        return self.click & (self.alice_phase % 2 == self.bob_phase % 2)

    @property
    def error(self):
        return self.sifted & (self.alice_phase != self.bob_phase)

    def rounds(self) -> Iterator[RoundRecord]:
        sifted, error = self.sifted, self.error
        for i in range(self.alice_phase.size):
            click = bool(self.click[i])
            yield RoundRecord(
                round_index=i, alice_phase=Phase(int(self.alice_phase[i])),
                eve_phase=Phase(int(self.eve_phase[i])) if self.eve_phase[i] >= 0 else None,
                bob_phase=Phase(int(self.bob_phase[i])), flux=float(self.flux[i]), click=click,
                click_time_ps=float(self.click_time_ps[i]) if click else None,
                sifted=bool(sifted[i]), error=bool(error[i]))

    def write_csv(self, handle):
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["round", "alice_phase", "eve_phase", "bob_phase", "flux", "click", "click_time_ps",
                         "sifted", "error"])
        for r in self.rounds():
            writer.writerow([r.round_index, r.alice_phase.label, r.eve_phase.label if r.eve_phase is not None else "",
                             r.bob_phase.label, repr(r.flux), int(r.click),
                             repr(r.click_time_ps) if r.click else "", int(r.sifted), int(r.error)])


@dataclass
class SessionReport:
    counts_alice_bob: Tuple[int, int, int, int]
    counts_eve_bob: Optional[Tuple[int, int, int, int]]
    unattributed_clicks: int
    qber_eq1: Optional[float]
    qber_eq1_alice_bob: Optional[float]
    qber_sifted: Optional[float]
    sifted_length: int
    sifted_errors: int
    eve_knowledge_fraction: Optional[float]
    total_gates: int
    total_clicks: int
    click_rate_hz: float
    duty_factor: Optional[float] = None
    resend_rate: Optional[float] = None
    resent_pulses: int = 0
    seed: Optional[int] = None
    monitors: Optional[dict] = None
    events: EventLog = field(default_factory=EventLog, repr=False, compare=False)
    trace: Optional[SessionTrace] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if sum(self.counts_alice_bob) > self.total_clicks:
            raise DataValidationError("phase-difference counts exceed total clicks")

    def to_dict(self):
        data = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("events", "trace")}
        data["counts_alice_bob"] = list(self.counts_alice_bob)
        if self.counts_eve_bob is not None:
            data["counts_eve_bob"] = list(self.counts_eve_bob)
        return data

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


def _ratio_or_none(fn, *args):
    try:
        return fn(*args)
    except UndefinedQberError:
        return None


def expected_click_rate(config: SessionConfig, detector):
    """ expected Bob click rate (counts/s) ignoring afterpulses and deadtime """
    if config.attack is None:
        probs = expected_phase_response(detector, config.signal_delay_ns, config.bob_flux, config.phase_error)
        return config.gate_rate_hz * float(probs.mean())
    from atr_qkd.attack import resolve_attack
    attack, duty, resend_rate = resolve_attack(config, detector)
    probs = expected_phase_response(detector, attack.target_delay_ns, attack.full_flux, config.phase_error)
    resent = duty * resend_rate / config.gate_rate_hz
    return config.gate_rate_hz * (resent * float(probs.mean()) + (1.0 - resent) * detector.dark_count_prob)


def run_session(config: SessionConfig, detector, rng_seed=None) -> SessionReport:
    """Simulate ``config.n_gates`` rounds against Bob's detector

    Without an attack Alice's pulses reach Bob through the channel. With one,
    Eve intercepts every round (see :func:`atr_qkd.attack.intercept_batch`) and
    only her resent pulses reach Bob, at the attack delay and flux.

    Raises:
      ConfigError: no seed given
      OutOfDomainError: a configured delay is outside the detector surface
      InfeasibleRateError: duty matching asked for and impossible
    """
    from atr_qkd.attack import intercept_batch, resolve_attack, session_resend_probability

    seed = config.seed if rng_seed is None else rng_seed
    if seed is None:
        raise ConfigError("a seed is required for a session")
    rng = np.random.default_rng(seed)
    attack = duty = resend_rate = None
    if config.attack is not None:
        attack, duty, resend_rate = resolve_attack(config, detector)
        resend_probability = session_resend_probability(duty, resend_rate, config, attack)
        eve_flux = attack.eve_receive_flux if attack.eve_receive_flux is not None else config.alice_flux
        detector.probability(attack.target_delay_ns, attack.full_flux)
    else:
        detector.probability(config.signal_delay_ns, config.bob_flux)
    _logger.info(f"session: {config.n_gates} gates on {detector.name}, seed {seed}, "
                 f"{'attack duty ' + format(duty, '.4f') if attack else 'no attack'}")

    bob = GatedDetector(detector, rng, reference_flux=attack.full_flux if attack else None)
    sigma = phase_noise_sigma(config.phase_error)
    counts_ab = np.zeros(4, dtype=np.int64)
    counts_eb = np.zeros(4, dtype=np.int64)
    sifted_length = sifted_errors = resent_pulses = 0
    knowledge = 0.0
    logs, traces = [], []

    start = 0
    while start < config.n_gates:
        m = min(config.chunk_gates, config.n_gates - start)
        alice = rng.integers(0, 4, m)
        bob_phase = rng.integers(0, 4, m)
        if attack is not None:
            eve = intercept_batch(alice, attack, resend_probability, rng, receive_flux=eve_flux)
            resent, guess = eve.resent, eve.guessed_phase
            flux = np.where(resent, attack.full_flux * phase_factors((guess - bob_phase) % 4, sigma, rng), 0.0)
            delay = attack.target_delay_ns
            resent_pulses += int(resent.sum())
        else:
            resent = np.zeros(m, dtype=bool)
            guess = np.full(m, -1)
            flux = config.bob_flux * phase_factors((alice - bob_phase) % 4, sigma, rng)
            delay = config.signal_delay_ns
        events = bob.run(flux, delay)
        local = events.gate_index - start
        photon = events.cause == ClickCause.PHOTON

        a, b, g, r = alice[local], bob_phase[local], guess[local], resent[local]
        counts_ab += np.bincount(((a - b) % 4)[photon], minlength=4)
        if attack is not None:
            counts_eb += np.bincount(((g - b) % 4)[photon & r], minlength=4)
        matched = a % 2 == b % 2
        sifted_length += int(matched.sum())
        sifted_errors += int((matched & (a != b)).sum())
        credit = np.where(r & (g % 2 == b % 2), (g == b).astype(float), 0.5)
        knowledge += float(credit[matched].sum())

        logs.append(events)
        if config.keep_trace:
            click = np.zeros(m, dtype=bool)
            click[local] = True
            times = np.full(m, np.nan)
            times[local] = events.click_time_ps
            traces.append((alice, np.where(resent, guess, -1), bob_phase, flux, click, times))
        _logger.debug(f"chunk {start}-{start + m - 1}: {len(events)} clicks")
        start += m

    events = EventLog.concat(logs)
    total = len(events)
    trace = None
    if config.keep_trace and traces:
        trace = SessionTrace(*(np.concatenate(cols) if cols else np.array([]) for cols in zip(*traces)))
    report = SessionReport(
        counts_alice_bob=tuple(int(c) for c in counts_ab),
        counts_eve_bob=tuple(int(c) for c in counts_eb) if attack is not None else None,
        unattributed_clicks=total - int(counts_ab.sum()),
        qber_eq1=_ratio_or_none(qber_eq1, counts_eb if attack is not None else counts_ab),
        qber_eq1_alice_bob=_ratio_or_none(qber_eq1, counts_ab),
        qber_sifted=sifted_errors / sifted_length if sifted_length else None,
        sifted_length=sifted_length,
        sifted_errors=sifted_errors,
        eve_knowledge_fraction=knowledge / sifted_length if sifted_length else None,
        total_gates=config.n_gates,
        total_clicks=total,
        click_rate_hz=total / config.duration_s if config.n_gates else 0.0,
        duty_factor=duty,
        resend_rate=resend_rate,
        resent_pulses=resent_pulses,
        seed=seed,
        events=events,
        trace=trace,
    )
    _logger.info(f"session done: {total} clicks, qber_eq1={report.qber_eq1}, sifted QBER={report.qber_sifted}")
    return report
