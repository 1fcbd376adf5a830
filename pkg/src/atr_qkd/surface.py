"""
Detection-probability surface of a gated avalanche photodiode.

The surface maps (delay of a pulse relative to the gate zero point, incident
flux in photons/pulse) to a click probability. For every delay the flux
response is a logistic in log-flux::

    P(d, n) = p_dark + (1 - p_dark) * expit((ln n - theta(d)) / w(d))

``theta`` and ``w`` are piecewise linear between knots and held constant
outside them. A running minimum of the logistic argument over the knots
already passed keeps P non-increasing along delay, so the avalanche
transition region never "recovers" between two anchored delays.

Gate-timing jitter is applied as a Gaussian convolution along the delay axis
(``fwhm_ps``), optionally with a mean gate offset (``offset_ps``).
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from atr_qkd.exceptions import DataValidationError, OutOfDomainError

__author__ = "John Conwell"
__copyright__ = "John Conwell"
__license__ = "MIT"

_logger = logging.getLogger(__name__)

FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))

# jitter kernel is sampled on +-6 sigma
_KERNEL_SPAN = 6.0
_KERNEL_POINTS = 241
_DOMAIN_EPS = 1e-9


@dataclass(frozen=True)
class Anchor:
    """ one measured point of the surface """
    delay_ns: float
    flux: float
    probability: float

    def to_dict(self):
        return {"delay_ns": self.delay_ns, "flux": self.flux, "prob": self.probability}

    @classmethod
    def from_dict(cls, data):
        return cls(float(data["delay_ns"]), float(data["flux"]), float(data["prob"]))


def jitter_kernel(fwhm_ps, offset_ps=0.0):
    """ Delay shifts (ns) and normalized weights of the Gaussian gate-jitter kernel """
    sigma_ns = fwhm_ps * FWHM_TO_SIGMA / 1000.0
    u = np.linspace(-_KERNEL_SPAN, _KERNEL_SPAN, _KERNEL_POINTS)
    weights = norm.pdf(u)
    weights /= weights.sum()
    return offset_ps / 1000.0 + sigma_ns * u, weights


def _in_domain(domain_ns, delay_ns):
    lo, hi = domain_ns
    d = np.asarray(delay_ns, dtype=float)
    return bool(np.all(np.isfinite(d)) and np.all(d >= lo - _DOMAIN_EPS) and np.all(d <= hi + _DOMAIN_EPS))


def _check_domain(domain_ns, delay_ns):
    if not _in_domain(domain_ns, delay_ns):
        d = np.asarray(delay_ns, dtype=float).ravel()
        lo, hi = domain_ns
        bad = d[~((d >= lo - _DOMAIN_EPS) & (d <= hi + _DOMAIN_EPS))]
        raise OutOfDomainError(float(bad[0]), domain_ns)


def _check_flux(flux):
    n = np.asarray(flux, dtype=float)
    if np.any(~np.isfinite(n)) or np.any(n < 0):
        raise DataValidationError("flux must be finite and >= 0")
    return n


@dataclass(frozen=True)
class AtrSurface:
    """
    knots_ns: delays at which the logistic midpoint/width are pinned
    midpoints: theta at each knot, in ln(photons/pulse)
    slopes: logistic width w at each knot, in ln(photons/pulse)
    domain_ns: delays the surface may be queried at
    atr_onset_ns: first delay of the avalanche transition region, if known
    """
    knots_ns: Tuple[float, ...]
    midpoints: Tuple[float, ...]
    slopes: Tuple[float, ...]
    dark_count_prob: float = 0.0
    gate_period_ns: float = 1000.0
    gate_width_ns: float = 2.5
    peak_efficiency: Optional[float] = None
    anchors: Tuple[Anchor, ...] = ()
    domain_ns: Optional[Tuple[float, float]] = None
    atr_onset_ns: Optional[float] = None
    _k: np.ndarray = field(init=False, repr=False, compare=False)
    _m: np.ndarray = field(init=False, repr=False, compare=False)
    _s: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        k = np.asarray(self.knots_ns, dtype=float)
        m = np.asarray(self.midpoints, dtype=float)
        s = np.asarray(self.slopes, dtype=float)
        if k.ndim != 1 or k.size == 0 or not (k.shape == m.shape == s.shape):
            raise DataValidationError("knots, midpoints and slopes must be equal-length non-empty sequences")
        if np.any(np.diff(k) <= 0):
            raise DataValidationError(f"knot delays must be strictly increasing: {list(k)}")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(s))) or np.any(s <= 0):
            raise DataValidationError(f"midpoints must be finite and slopes positive: {list(m)}, {list(s)}")
        if not 0.0 <= self.dark_count_prob < 1.0:
            raise DataValidationError(f"dark_count_prob {self.dark_count_prob} not in [0, 1)")
        if self.peak_efficiency is not None and not 0.0 <= self.peak_efficiency <= 1.0:
            raise DataValidationError(f"peak_efficiency {self.peak_efficiency} not in [0, 1]")
        object.__setattr__(self, "knots_ns", tuple(float(x) for x in k))
        object.__setattr__(self, "midpoints", tuple(float(x) for x in m))
        object.__setattr__(self, "slopes", tuple(float(x) for x in s))
        object.__setattr__(self, "anchors", tuple(self.anchors))
        if self.domain_ns is None:
            object.__setattr__(self, "domain_ns", (min(0.0, float(k[0])), float(k[-1])))
        else:
            lo, hi = (float(x) for x in self.domain_ns)
            if hi < lo:
                raise DataValidationError(f"empty delay domain {self.domain_ns}")
            object.__setattr__(self, "domain_ns", (lo, hi))
        object.__setattr__(self, "_k", k)
        object.__setattr__(self, "_m", m)
        object.__setattr__(self, "_s", s)

    def contains(self, delay_ns):
        return _in_domain(self.domain_ns, delay_ns)

    def check_domain(self, delay_ns):
        _check_domain(self.domain_ns, delay_ns)

    def logistic_argument(self, delay_ns, log_flux):
        """ monotone-enveloped (ln n - theta(d)) / w(d), broadcast over both inputs """
        d, lf = np.broadcast_arrays(np.asarray(delay_ns, dtype=float), np.asarray(log_flux, dtype=float))
        theta = np.interp(d, self._k, self._m)
        width = np.interp(d, self._k, self._s)
        z = (lf - theta) / width
        if self._k.size == 1:
            return z
        per_knot = (lf[..., None] - self._m) / self._s
        running = np.minimum.accumulate(per_knot, axis=-1)
        idx = np.searchsorted(self._k, d, side="right") - 1
        envelope = np.take_along_axis(running, np.clip(idx, 0, None)[..., None], axis=-1)[..., 0]
        envelope = np.where(idx >= 0, envelope, np.inf)
        return np.minimum(z, envelope)

    def raw_probability(self, delay_ns, flux):
        """ surface without jitter; no domain check, delays outside the knots are clamped """
        n = np.asarray(flux, dtype=float)
        with np.errstate(divide="ignore"):
            log_flux = np.log(n)
        z = self.logistic_argument(delay_ns, log_flux)
        pd = self.dark_count_prob
        return np.clip(pd + (1.0 - pd) * expit(z), pd, 1.0)

    def probability(self, delay_ns, flux, fwhm_ps=0.0, offset_ps=0.0):
        """Jitter-convolved detection probability

        Args:
          delay_ns: pulse delay(s) relative to the gate zero point
          flux: incident mean photon number(s), broadcast against ``delay_ns``
          fwhm_ps (float): Gaussian gate jitter, 0 returns the raw surface
          offset_ps (float): mean gate offset added to the jitter

        Returns:
          float for scalar inputs, otherwise an ndarray
        """
        d = np.asarray(delay_ns, dtype=float)
        self.check_domain(d)
        n = _check_flux(flux)
        if fwhm_ps < 0:
            raise DataValidationError(f"jitter FWHM must be >= 0, got {fwhm_ps}")
        if fwhm_ps == 0:
            p = self.raw_probability(d - offset_ps / 1000.0, n)
        else:
            shifts, weights = jitter_kernel(fwhm_ps, offset_ps)
            d, n = np.broadcast_arrays(d, n)
            p = self.raw_probability(d[..., None] - shifts, n[..., None]) @ weights
            p = np.clip(p, self.dark_count_prob, 1.0)
        if p.ndim == 0:
            return float(p)
        return p

    def to_dict(self):
        return {
            "kind": "logistic",
            "knots_ns": list(self.knots_ns),
            "midpoints": list(self.midpoints),
            "slopes": list(self.slopes),
            "dark_count_prob": self.dark_count_prob,
            "gate_period_ns": self.gate_period_ns,
            "gate_width_ns": self.gate_width_ns,
            "peak_efficiency": self.peak_efficiency,
            "anchors": [a.to_dict() for a in self.anchors],
            "domain_ns": list(self.domain_ns),
            "atr_onset_ns": self.atr_onset_ns,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            knots_ns=tuple(data["knots_ns"]),
            midpoints=tuple(data["midpoints"]),
            slopes=tuple(data["slopes"]),
            dark_count_prob=float(data.get("dark_count_prob", 0.0)),
            gate_period_ns=float(data.get("gate_period_ns", 1000.0)),
            gate_width_ns=float(data.get("gate_width_ns", 2.5)),
            peak_efficiency=data.get("peak_efficiency"),
            anchors=tuple(Anchor.from_dict(a) for a in data.get("anchors", [])),
            domain_ns=tuple(data["domain_ns"]) if data.get("domain_ns") is not None else None,
            atr_onset_ns=data.get("atr_onset_ns"),
        )


@dataclass(frozen=True)
class LinearSurface:
    """
    Threshold-free unit: P = p_dark + (1 - p_dark) * min(1, efficiency * n)
    at every delay of its domain, so gate jitter has no effect on it.
    """
    efficiency: float = 1.0
    dark_count_prob: float = 0.0
    gate_period_ns: float = 1000.0
    gate_width_ns: float = 2.5
    domain_ns: Tuple[float, float] = (0.0, 0.0)
    anchors: Tuple[Anchor, ...] = ()
    atr_onset_ns: Optional[float] = None

    def __post_init__(self):
        if not self.efficiency > 0:
            raise DataValidationError(f"efficiency must be > 0, got {self.efficiency}")
        if not 0.0 <= self.dark_count_prob < 1.0:
            raise DataValidationError(f"dark_count_prob {self.dark_count_prob} not in [0, 1)")
        lo, hi = (float(x) for x in self.domain_ns)
        if hi < lo:
            raise DataValidationError(f"empty delay domain {self.domain_ns}")
        object.__setattr__(self, "domain_ns", (lo, hi))
        object.__setattr__(self, "anchors", tuple(self.anchors))

    @property
    def peak_efficiency(self):
        return min(1.0, self.efficiency)

    def contains(self, delay_ns):
        return _in_domain(self.domain_ns, delay_ns)

    def check_domain(self, delay_ns):
        _check_domain(self.domain_ns, delay_ns)

    def raw_probability(self, delay_ns, flux):
        n = np.asarray(flux, dtype=float)
        n = np.broadcast_arrays(np.asarray(delay_ns, dtype=float), n)[1]
        pd = self.dark_count_prob
        return pd + (1.0 - pd) * np.minimum(1.0, self.efficiency * n)

    def probability(self, delay_ns, flux, fwhm_ps=0.0, offset_ps=0.0):
        self.check_domain(delay_ns)
        n = _check_flux(flux)
        if fwhm_ps < 0:
            raise DataValidationError(f"jitter FWHM must be >= 0, got {fwhm_ps}")
        p = self.raw_probability(delay_ns, n)
        if p.ndim == 0:
            return float(p)
        return p

    def to_dict(self):
        return {
            "kind": "linear",
            "efficiency": self.efficiency,
            "dark_count_prob": self.dark_count_prob,
            "gate_period_ns": self.gate_period_ns,
            "gate_width_ns": self.gate_width_ns,
            "anchors": [a.to_dict() for a in self.anchors],
            "domain_ns": list(self.domain_ns),
            "atr_onset_ns": self.atr_onset_ns,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            efficiency=float(data.get("efficiency", 1.0)),
            dark_count_prob=float(data.get("dark_count_prob", 0.0)),
            gate_period_ns=float(data.get("gate_period_ns", 1000.0)),
            gate_width_ns=float(data.get("gate_width_ns", 2.5)),
            domain_ns=tuple(data.get("domain_ns", (0.0, 0.0))),
            anchors=tuple(Anchor.from_dict(a) for a in data.get("anchors", [])),
            atr_onset_ns=data.get("atr_onset_ns"),
        )


Surface = Union[AtrSurface, LinearSurface]
SURFACE_KINDS = {"logistic": AtrSurface, "linear": LinearSurface}


def surface_from_dict(data):
    """ rebuild a surface from its ``to_dict`` form; documents without ``kind`` are logistic """
    kind = data.get("kind", "logistic")
    if kind not in SURFACE_KINDS:
        raise DataValidationError(f"unknown surface kind {kind!r}, known: {sorted(SURFACE_KINDS)}")
    return SURFACE_KINDS[kind].from_dict(data)


def ideal_surface():
    """ unit efficiency at the zero point, P = min(1, n), no dark counts """
    return LinearSurface()
