"""
Stochastic model of a gated-mode APD single-photon detector.

:class:`DetectorModel` is the static profile (surface, jitter, charges,
afterpulse kernel, click-time models). :class:`GatedDetector` owns the
mutable per-instance state (pending afterpulses, deadtime) and an RNG, and
turns per-gate incident flux into :class:`DetectionEvent` records.
"""
import heapq
import json
import logging
from dataclasses import dataclass, field, replace
from enum import IntEnum
from functools import cached_property
from typing import Dict, Iterator, Optional

import numpy as np
from scipy.optimize import brentq
from scipy.stats import truncnorm

from atr_qkd.exceptions import DataValidationError
from atr_qkd.surface import Surface, ideal_surface, surface_from_dict

__author__ = "John Conwell"
__copyright__ = "John Conwell"
__license__ = "MIT"

_logger = logging.getLogger(__name__)

# above this many distinct flux values per batch the response is tabulated in log-flux
_EXACT_LIMIT = 256
_TABLE_POINTS = 2049


class ClickCause(IntEnum):
    PHOTON = 0
    DARK = 1
    AFTERPULSE = 2


@dataclass(frozen=True)
class GateTiming:
    """ gate-jitter setting: Gaussian FWHM plus a mean gate offset, both in ps """
    fwhm_ps: float
    offset_ps: float = 0.0

    def __post_init__(self):
        if self.fwhm_ps < 0:
            raise DataValidationError(f"jitter FWHM must be >= 0, got {self.fwhm_ps}")


@dataclass(frozen=True)
class ChargeConstants:
    """ charge-equivalent per click in pA/count """
    full: float = 0.287
    half: float = 33.832
    normal: float = 0.6257
    reference_flux: float = 890.0

    def __post_init__(self):
        if min(self.full, self.half, self.normal) < 0:
            raise DataValidationError(f"charges must be >= 0: {self}")
        if self.normal == 0:
            raise DataValidationError("normal charge must be > 0")
        if self.reference_flux <= 0:
            raise DataValidationError(f"reference flux must be > 0, got {self.reference_flux}")

    def for_flux(self, flux, reference_flux=None):
        """ charge of a photon-caused click, picked by flux regime """
        ref = self.reference_flux if reference_flux is None else reference_flux
        flux = np.asarray(flux, dtype=float)
        charge = np.where(flux >= 0.75 * ref, self.full, np.where(flux >= 0.25 * ref, self.half, self.normal))
        return float(charge) if charge.ndim == 0 else charge

    def for_click(self, cause, flux, reference_flux=None):
        if cause == ClickCause.PHOTON:
            return self.for_flux(flux, reference_flux)
        return self.normal


@dataclass(frozen=True)
class AfterpulseKernel:
    base: float = 0.0
    scaling: float = 1.0
    decay_gates: float = 1.5

    def __post_init__(self):
        if not 0.0 <= self.base <= 1.0:
            raise DataValidationError(f"afterpulse base {self.base} not in [0, 1]")
        if self.scaling < 0:
            raise DataValidationError(f"afterpulse scaling must be >= 0, got {self.scaling}")

    def probability(self, charge, charge_normal):
        return float(np.clip(self.base * (charge / charge_normal) * self.scaling, 0.0, 1.0))

    def sample_offset(self, rng):
        """ gates between a click and its afterpulse, geometric with mean ~decay_gates """
        if self.decay_gates <= 0:
            return 1
        return int(rng.geometric(1.0 - np.exp(-1.0 / self.decay_gates)))


@dataclass(frozen=True)
class ClickTimeModel:
    """ truncated Gaussian response time in ps around the zero point """
    lower_ps: float
    upper_ps: float
    mean_ps: float
    scale_ps: float

    def __post_init__(self):
        if self.scale_ps < 0:
            raise DataValidationError(f"click-time scale must be >= 0, got {self.scale_ps}")
        if self.scale_ps > 0 and not self.lower_ps < self.mean_ps < self.upper_ps:
            raise DataValidationError(f"click-time mean {self.mean_ps} outside ({self.lower_ps}, {self.upper_ps})")

    def _bounds(self, loc):
        return (self.lower_ps - loc) / self.scale_ps, (self.upper_ps - loc) / self.scale_ps

    @cached_property
    def loc_ps(self):
        """ untruncated centre that puts the truncated mean at ``mean_ps`` """
        if self.scale_ps == 0:
            return self.mean_ps

        def mean_error(loc):
            a, b = self._bounds(loc)
            return truncnorm.mean(a, b, loc=loc, scale=self.scale_ps) - self.mean_ps

        span = 5.0 * self.scale_ps
        return brentq(mean_error, self.lower_ps - span, self.upper_ps + span, xtol=1e-9)

    def sample(self, rng, size=None):
        if self.scale_ps == 0:
            return self.mean_ps if size is None else np.full(size, self.mean_ps)
        a, b = self._bounds(self.loc_ps)
        return truncnorm.rvs(a, b, loc=self.loc_ps, scale=self.scale_ps, size=size, random_state=rng)

    def to_dict(self):
        return {"lower_ps": self.lower_ps, "upper_ps": self.upper_ps, "mean_ps": self.mean_ps, "scale_ps": self.scale_ps}


NORMAL_TIMING = ClickTimeModel(-50.0, 50.0, 0.0, 20.0)
ATTACK_TIMING = ClickTimeModel(-50.0, 150.0, 43.0, 40.0)


@dataclass(frozen=True)
class DetectionEvent:
    gate_index: int
    click_time_ps: float
    cause: ClickCause
    charge: float

    def __post_init__(self):
        if self.gate_index < 0:
            raise DataValidationError(f"gate_index must be >= 0, got {self.gate_index}")
        if self.charge < 0:
            raise DataValidationError(f"charge must be >= 0, got {self.charge}")


@dataclass(frozen=True)
class DetectorModel:
    name: str
    surface: Surface
    jitter_fwhm_ps: float = 0.0
    gate_offset_ps: float = 0.0
    charges: ChargeConstants = ChargeConstants()
    afterpulse: AfterpulseKernel = AfterpulseKernel()
    deadtime_gates: int = 0
    normal_timing: ClickTimeModel = NORMAL_TIMING
    attack_timing: ClickTimeModel = ATTACK_TIMING
    timing_settings: Dict[str, GateTiming] = field(default_factory=dict)

    def __post_init__(self):
        if self.jitter_fwhm_ps < 0:
            raise DataValidationError(f"{self.name}: jitter_fwhm_ps must be >= 0, got {self.jitter_fwhm_ps}")
        if self.deadtime_gates < 0 or int(self.deadtime_gates) != self.deadtime_gates:
            raise DataValidationError(f"{self.name}: deadtime_gates must be a non-negative integer")

    @property
    def dark_count_prob(self):
        return self.surface.dark_count_prob

    @property
    def timing(self):
        return GateTiming(self.jitter_fwhm_ps, self.gate_offset_ps)

    def probability(self, delay_ns, flux):
        return self.surface.probability(delay_ns, flux, self.jitter_fwhm_ps, self.gate_offset_ps)

    def with_timing(self, timing):
        """ copy of the model at a named gate-timing setting or an explicit :class:`GateTiming` """
        if isinstance(timing, str):
            if timing not in self.timing_settings:
                raise DataValidationError(f"{self.name}: unknown timing setting {timing!r}, "
                                          f"known: {sorted(self.timing_settings)}")
            timing = self.timing_settings[timing]
        return replace(self, jitter_fwhm_ps=timing.fwhm_ps, gate_offset_ps=timing.offset_ps)

    def click_time_model(self, delay_ns, flux):
        onset = self.surface.atr_onset_ns
        if flux > 0 and onset is not None and delay_ns >= onset:
            return self.attack_timing
        return self.normal_timing

    def to_dict(self):
        surface = self.surface
        return {
            "name": self.name,
            "gate_period_ns": surface.gate_period_ns,
            "gate_width_ns": surface.gate_width_ns,
            "dark_count_prob": surface.dark_count_prob,
            "peak_efficiency": surface.peak_efficiency,
            "anchors": [a.to_dict() for a in surface.anchors],
            "jitter_fwhm_ps": self.jitter_fwhm_ps,
            "gate_offset_ps": self.gate_offset_ps,
            "charges": {"full": self.charges.full, "half": self.charges.half, "normal": self.charges.normal,
                        "reference_flux": self.charges.reference_flux},
            "afterpulse": {"base": self.afterpulse.base, "scaling": self.afterpulse.scaling,
                           "decay_gates": self.afterpulse.decay_gates},
            "deadtime_gates": self.deadtime_gates,
            "click_time": {"normal": self.normal_timing.to_dict(), "attack": self.attack_timing.to_dict()},
            "timing_settings": {k: {"fwhm_ps": v.fwhm_ps, "offset_ps": v.offset_ps}
                                for k, v in sorted(self.timing_settings.items())},
            "surface": surface.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        if "surface" in data:
            surface = surface_from_dict(data["surface"])
        else:
            # profile written by hand: fit the surface from its anchors
            from atr_qkd.calibration import AnchorSet, fit_surface
            anchors = AnchorSet.from_dict(data)
            surface, _ = fit_surface(anchors)
        click_time = data.get("click_time", {})
        return cls(
            name=data["name"],
            surface=surface,
            jitter_fwhm_ps=float(data.get("jitter_fwhm_ps", 0.0)),
            gate_offset_ps=float(data.get("gate_offset_ps", 0.0)),
            charges=ChargeConstants(**data["charges"]) if "charges" in data else ChargeConstants(),
            afterpulse=AfterpulseKernel(**data["afterpulse"]) if "afterpulse" in data else AfterpulseKernel(),
            deadtime_gates=int(data.get("deadtime_gates", 0)),
            normal_timing=ClickTimeModel(**click_time["normal"]) if "normal" in click_time else NORMAL_TIMING,
            attack_timing=ClickTimeModel(**click_time["attack"]) if "attack" in click_time else ATTACK_TIMING,
            timing_settings={k: GateTiming(**v) for k, v in data.get("timing_settings", {}).items()},
        )

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def ideal_detector():
    """ Eve's default measurement unit: P = min(1, n) at the zero point, no dark counts """
    return DetectorModel(name="ideal", surface=ideal_surface())


def detection_probability(model, delay_ns, flux):
    return model.probability(delay_ns, flux)


def sample_click_time(model, delay_ns, flux, rng):
    """ one response time in ps for a click from a pulse at (delay, flux) """
    return float(model.click_time_model(delay_ns, flux).sample(rng))


def afterpulse_probability_of_event(model, event):
    return model.afterpulse.probability(event.charge, model.charges.normal)


class EventLog:
    """ column store of detection events, in gate order """

    def __init__(self, gate_index=(), click_time_ps=(), cause=(), charge=()):
        self.gate_index = np.asarray(gate_index, dtype=np.int64)
        self.click_time_ps = np.asarray(click_time_ps, dtype=float)
        self.cause = np.asarray(cause, dtype=np.int8)
        self.charge = np.asarray(charge, dtype=float)

    def __len__(self):
        return int(self.gate_index.size)

    def __iter__(self) -> Iterator[DetectionEvent]:
        for g, t, c, q in zip(self.gate_index, self.click_time_ps, self.cause, self.charge):
            yield DetectionEvent(int(g), float(t), ClickCause(int(c)), float(q))

    def count(self, cause):
        return int(np.count_nonzero(self.cause == cause))

    def of_cause(self, cause):
        return self.select(self.cause == cause)

    def select(self, mask):
        return EventLog(self.gate_index[mask], self.click_time_ps[mask], self.cause[mask], self.charge[mask])

    @classmethod
    def concat(cls, logs):
        logs = list(logs)
        if not logs:
            return cls()
        return cls(np.concatenate([x.gate_index for x in logs]), np.concatenate([x.click_time_ps for x in logs]),
                   np.concatenate([x.cause for x in logs]), np.concatenate([x.charge for x in logs]))


class GatedDetector:
    """One detector instance with its own deadtime/afterpulse state

    Gates must be fed in increasing order, either one at a time with
    :meth:`simulate_gate` or in blocks with :meth:`run`. Not thread safe.
    """

    def __init__(self, model: DetectorModel, rng: np.random.Generator, reference_flux: Optional[float] = None):
        self.model = model
        self.reference_flux = reference_flux
        self._rng = rng
        self._pending = []
        self._blocked_until = -1
        self._next_gate = 0

    @property
    def next_gate(self):
        return self._next_gate

    def _register_click(self, gate, cause, flux):
        """ charge of the click; schedules its afterpulse and deadtime """
        model = self.model
        charge = model.charges.for_click(cause, flux, self.reference_flux)
        p_after = model.afterpulse.probability(charge, model.charges.normal)
        if p_after > 0 and self._rng.random() < p_after:
            heapq.heappush(self._pending, gate + model.afterpulse.sample_offset(self._rng))
        self._blocked_until = gate + model.deadtime_gates
        return charge

    def _afterpulse_due(self, gate):
        due = False
        while self._pending and self._pending[0] <= gate:
            due = heapq.heappop(self._pending) == gate or due
        return due

    def _split(self, p_total):
        pd = self.model.dark_count_prob
        return np.clip((p_total - pd) / (1.0 - pd), 0.0, 1.0)

    def simulate_gate(self, gate_index, incident=None, live=True) -> Optional[DetectionEvent]:
        """One gate, optionally with an incident :class:`~atr_qkd.protocol.PulseFrame`

        Returns ``None`` when the gate does not click, is inside deadtime or
        is removed (``live=False``).
        """
        if gate_index < self._next_gate:
            raise ValueError(f"gate {gate_index} already simulated, next gate is {self._next_gate}")
        self._next_gate = gate_index + 1
        afterpulse_due = self._afterpulse_due(gate_index)
        if gate_index <= self._blocked_until or not live:
            return None
        flux = incident.flux if incident is not None else 0.0
        delay = incident.delay_ns if incident is not None else 0.0
        p_total = self.model.probability(delay, flux) if flux > 0 else self.model.dark_count_prob
        p_photon = float(self._split(p_total))
        u = self._rng.random()
        if u < p_photon:
            cause = ClickCause.PHOTON
        elif afterpulse_due:
            cause = ClickCause.AFTERPULSE
        elif u < p_total:
            cause = ClickCause.DARK
        else:
            return None
        charge = self._register_click(gate_index, cause, flux)
        timing = self.model.click_time_model(delay, flux if cause == ClickCause.PHOTON else 0.0)
        return DetectionEvent(gate_index, float(timing.sample(self._rng)), cause, charge)

    def click_probabilities(self, flux, delay_ns):
        """ per-gate click probability for a block of incident fluxes at one delay """
        flux = np.asarray(flux, dtype=float)
        uniq, inverse = np.unique(flux, return_inverse=True)
        if uniq.size <= _EXACT_LIMIT:
            return np.asarray(self.model.probability(delay_ns, uniq), dtype=float).reshape(-1)[inverse.reshape(-1)]
        positive = uniq[uniq > 0]
        grid = np.linspace(np.log(positive[0]), np.log(positive[-1]), _TABLE_POINTS)
        table = self.model.probability(delay_ns, np.exp(grid))
        with np.errstate(divide="ignore"):
            p = np.interp(np.log(flux), grid, table)
        return np.where(flux > 0, p, self.model.dark_count_prob)

    def run(self, flux, delay_ns, live=None) -> EventLog:
        """Simulate the next ``len(flux)`` gates

        Args:
          flux: incident flux per gate (0 for empty gates)
          delay_ns (float): pulse delay relative to the gate zero point
          live: optional bool mask, False marks a removed gate (no bias, no clicks)

        Returns:
          :obj:`EventLog` with absolute gate indices
        """
        flux = np.asarray(flux, dtype=float)
        m = flux.size
        start = self._next_gate
        p_total = self.click_probabilities(flux, delay_ns)
        if live is not None:
            live = np.asarray(live, dtype=bool)
            p_total = np.where(live, p_total, 0.0)
        p_photon = self._split(p_total)
        if live is not None:
            p_photon = np.where(live, p_photon, 0.0)
        u = self._rng.random(m)
        candidates = np.flatnonzero(u < p_total) + start
        end = start + m

        gates, causes, charges, fluxes = [], [], [], []
        i = 0
        while True:
            next_c = candidates[i] if i < candidates.size else end
            next_a = self._pending[0] if self._pending else end
            g = int(min(next_c, next_a))
            if g >= end:
                break
            afterpulse_due = self._afterpulse_due(g)
            if next_c == g:
                i += 1
            local = g - start
            if g <= self._blocked_until or (live is not None and not live[local]):
                continue
            if u[local] < p_photon[local]:
                cause = ClickCause.PHOTON
            elif afterpulse_due:
                cause = ClickCause.AFTERPULSE
            elif u[local] < p_total[local]:
                cause = ClickCause.DARK
            else:
                continue
            charges.append(self._register_click(g, cause, flux[local]))
            gates.append(g)
            causes.append(cause)
            fluxes.append(flux[local])
        self._next_gate = end

        causes = np.asarray(causes, dtype=np.int8)
        times = np.empty(causes.size)
        onset = self.model.surface.atr_onset_ns
        attack_like = (causes == ClickCause.PHOTON) & (np.asarray(fluxes) > 0)
        if onset is None or delay_ns < onset:
            attack_like[:] = False
        n_attack = int(attack_like.sum())
        if n_attack:
            times[attack_like] = self.model.attack_timing.sample(self._rng, n_attack)
        if causes.size - n_attack:
            times[~attack_like] = self.model.normal_timing.sample(self._rng, causes.size - n_attack)
        _logger.debug(f"gates {start}-{end - 1}: {causes.size} clicks, {len(self._pending)} afterpulses pending")
        return EventLog(gates, times, causes, charges)
