"""
Fit :class:`~atr_qkd.surface.AtrSurface` parameters from measured anchors.

Anchor files are plain CSV (``delay_ns,flux_photons,probability``) with
``# key: value`` comment lines carrying metadata. The three built-in
profiles ship as resource files inside the package.
"""
import importlib.resources
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import curve_fit, least_squares, minimize, minimize_scalar
from scipy.special import expit, logit

from atr_qkd.exceptions import AnchorParseError, DataValidationError, FitFailure
from atr_qkd.surface import Anchor, AtrSurface

__author__ = "John Conwell"
__copyright__ = "John Conwell"
__license__ = "MIT"

_logger = logging.getLogger(__name__)

CSV_HEADER = ("delay_ns", "flux_photons", "probability")
DEFAULT_TOLERANCE = 0.02
# targets for probabilities measured at another gate jitter than the anchors
REGIME_TOLERANCE = 0.03
REGIME_FALLBACK_TOLERANCE = 0.06
# primary anchors may move this far in logit space while the regimes are fitted
REGIME_LOGIT_MARGIN = 0.05
# logistic width used when no delay has two fluxes to borrow from (linear single-photon response)
DEFAULT_SLOPE = 1.0
BUILTIN_RESOURCES = ("id201.csv", "homemade_1mhz.csv", "homemade_1ghz.csv")


@dataclass(frozen=True)
class RegimeAnchor:
    """ probability measured at a gate jitter other than the anchor set's own """
    fwhm_ps: float
    delay_ns: float
    flux: float
    probability: float

    def __post_init__(self):
        if not all(math.isfinite(x) for x in (self.fwhm_ps, self.delay_ns, self.flux, self.probability)):
            raise DataValidationError(f"non-finite jitter regime anchor {self}")
        if self.fwhm_ps < 0 or self.delay_ns < 0 or self.flux <= 0:
            raise DataValidationError(f"jitter regime anchor needs fwhm, delay >= 0 and flux > 0: {self}")
        if not 0.0 < self.probability < 1.0:
            raise DataValidationError(f"jitter regime probability {self.probability} not in (0, 1)")

    def to_dict(self):
        return {"fwhm_ps": self.fwhm_ps, "delay_ns": self.delay_ns, "flux": self.flux, "prob": self.probability}

    @classmethod
    def from_dict(cls, data):
        return cls(float(data["fwhm_ps"]), float(data["delay_ns"]), float(data["flux"]), float(data["prob"]))


@dataclass(frozen=True)
class AnchorSet:
    detector_name: str
    rows: Tuple[Anchor, ...]
    gate_rate_hz: float = 1e6
    source: str = ""
    atr_window_ns: Optional[Tuple[float, float]] = None
    measured_jitter_ps: float = 0.0
    dark_count_prob: float = 0.0
    gate_width_ns: float = 2.5
    gate_period_ns: Optional[float] = None
    regimes: Tuple[RegimeAnchor, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        object.__setattr__(self, "regimes", tuple(self.regimes))
        if not self.rows:
            raise DataValidationError(f"{self.detector_name}: anchor set has no rows")
        for row in self.rows:
            if not all(math.isfinite(x) for x in (row.delay_ns, row.flux, row.probability)):
                raise DataValidationError(f"{self.detector_name}: non-finite anchor {row}")
            if row.delay_ns < 0 or row.flux < 0:
                raise DataValidationError(f"{self.detector_name}: negative delay or flux in {row}")
            if not 0.0 <= row.probability <= 1.0:
                raise DataValidationError(f"{self.detector_name}: probability {row.probability} not in [0, 1]")
        if len({row.flux for row in self.rows}) < 2:
            raise DataValidationError(f"{self.detector_name}: need at least 2 distinct fluxes")
        if self.gate_rate_hz <= 0:
            raise DataValidationError(f"{self.detector_name}: gate rate must be > 0")
        if not 0.0 <= self.dark_count_prob < 1.0:
            raise DataValidationError(f"{self.detector_name}: dark_count_prob {self.dark_count_prob} not in [0, 1)")
        if self.measured_jitter_ps < 0:
            raise DataValidationError(f"{self.detector_name}: measured jitter must be >= 0")
        if self.atr_window_ns is not None:
            lo, hi = (float(x) for x in self.atr_window_ns)
            if hi < lo:
                raise DataValidationError(f"{self.detector_name}: empty ATR window {self.atr_window_ns}")
            object.__setattr__(self, "atr_window_ns", (lo, hi))
        if self.gate_period_ns is None:
            object.__setattr__(self, "gate_period_ns", 1e9 / self.gate_rate_hz)

    @property
    def delays(self):
        return sorted({row.delay_ns for row in self.rows})

    def at_delay(self, delay_ns):
        return [row for row in self.rows if row.delay_ns == delay_ns]

    def to_csv(self):
        lines = [f"# detector: {self.detector_name}", f"# gate_rate_hz: {self.gate_rate_hz!r}"]
        if self.source:
            lines.append(f"# source: {self.source}")
        if self.atr_window_ns is not None:
            lines.append(f"# atr_window_ns: {self.atr_window_ns[0]!r}, {self.atr_window_ns[1]!r}")
        lines += [f"# measured_jitter_ps: {self.measured_jitter_ps!r}",
                  f"# dark_count_prob: {self.dark_count_prob!r}",
                  f"# gate_width_ns: {self.gate_width_ns!r}",
                  f"# gate_period_ns: {self.gate_period_ns!r}"]
        lines += [f"# jitter_regime: {r.fwhm_ps!r}, {r.delay_ns!r}, {r.flux!r}, {r.probability!r}"
                  for r in self.regimes]
        lines.append(",".join(CSV_HEADER))
        lines += [f"{r.delay_ns!r},{r.flux!r},{r.probability!r}" for r in self.rows]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, data):
        """ anchor part of a profile JSON document """
        return cls(
            detector_name=data["name"],
            rows=tuple(Anchor.from_dict(a) for a in data["anchors"]),
            gate_rate_hz=1e9 / float(data.get("gate_period_ns", 1000.0)),
            atr_window_ns=tuple(data["atr_window_ns"]) if data.get("atr_window_ns") else None,
            measured_jitter_ps=float(data.get("jitter_fwhm_ps", 0.0)),
            dark_count_prob=float(data.get("dark_count_prob", 0.0)),
            gate_width_ns=float(data.get("gate_width_ns", 2.5)),
            gate_period_ns=data.get("gate_period_ns"),
            regimes=tuple(RegimeAnchor.from_dict(r) for r in data.get("jitter_regimes", [])),
        )


@dataclass(frozen=True)
class FitReport:
    knots_ns: Tuple[float, ...]
    thetas: Tuple[float, ...]
    slopes: Tuple[float, ...]
    residuals: Tuple[float, ...]
    tolerance: float
    converged: bool
    defaulted_slopes: Tuple[float, ...] = field(default=())
    message: str = ""
    regimes: Tuple[RegimeAnchor, ...] = ()
    regime_residuals: Tuple[float, ...] = ()

    @property
    def max_residual(self):
        return max((abs(r) for r in self.residuals), default=0.0)

    @property
    def max_regime_residual(self):
        """ best-achieved distance to the other-jitter targets, 0 without any """
        return max((abs(r) for r in self.regime_residuals), default=0.0)

    @property
    def regimes_within_tolerance(self):
        return self.max_regime_residual <= REGIME_TOLERANCE

    def to_dict(self):
        return {"knots_ns": list(self.knots_ns), "thetas": list(self.thetas), "slopes": list(self.slopes),
                "residuals": list(self.residuals), "max_residual": self.max_residual,
                "tolerance": self.tolerance, "converged": self.converged,
                "defaulted_slopes": list(self.defaulted_slopes), "message": self.message,
                "jitter_regimes": [{**r.to_dict(), "residual": res}
                                   for r, res in zip(self.regimes, self.regime_residuals)],
                "max_regime_residual": self.max_regime_residual,
                "regime_tolerance": REGIME_TOLERANCE,
                "regimes_within_tolerance": self.regimes_within_tolerance}


_META_FLOATS = {"gate_rate_hz", "measured_jitter_ps", "dark_count_prob", "gate_width_ns", "gate_period_ns"}


def parse_anchor_csv(text, detector_name="anchors"):
    """ Parse anchor CSV text, see :func:`load_anchor_csv` """
    meta = {}
    rows = []
    regimes = []
    header_seen = False
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition(":")
            if sep and key.strip() == "jitter_regime":
                try:
                    regimes.append(RegimeAnchor(*(float(x) for x in value.split(","))))
                except (TypeError, ValueError):
                    raise AnchorParseError(f"jitter_regime needs fwhm_ps, delay_ns, flux, probability: "
                                           f"{value.strip()!r}", line_number) from None
            elif sep:
                meta[key.strip()] = value.strip()
            continue
        parts = [p.strip() for p in line.split(",")]
        if not header_seen:
            if tuple(parts) != CSV_HEADER:
                raise AnchorParseError(f"expected header {','.join(CSV_HEADER)!r}, got {line!r}", line_number)
            header_seen = True
            continue
        if len(parts) != 3:
            raise AnchorParseError(f"expected 3 columns, got {len(parts)}", line_number)
        try:
            delay, flux, prob = (float(p) for p in parts)
        except ValueError:
            raise AnchorParseError(f"malformed number in {line!r}", line_number) from None
        rows.append(Anchor(delay, flux, prob))

    kwargs = {}
    for key, value in meta.items():
        try:
            if key in _META_FLOATS:
                kwargs[key] = float(value)
            elif key == "atr_window_ns":
                lo, hi = (float(x) for x in value.split(","))
                kwargs[key] = (lo, hi)
        except ValueError:
            raise AnchorParseError(f"malformed metadata {key}: {value!r}") from None
    return AnchorSet(detector_name=meta.get("detector", detector_name), rows=tuple(rows),
                     source=meta.get("source", ""), regimes=tuple(regimes), **kwargs)


def load_anchor_csv(path):
    """Read an anchor CSV file

    Args:
      path: file with header ``delay_ns,flux_photons,probability``; lines
        starting with ``#`` are comments, ``# key: value`` comments are metadata

    Returns:
      :obj:`AnchorSet` with rows in file order
    """
    path = Path(path)
    _logger.info(f"loading anchors from {path}")
    return parse_anchor_csv(path.read_text(), detector_name=path.stem)


def builtin_profiles():
    """ the three shipped anchor sets: id201, homemade 1 MHz and homemade 1 GHz """
    data = importlib.resources.files("atr_qkd") / "data"
    return [parse_anchor_csv((data / name).read_text(), Path(name).stem) for name in BUILTIN_RESOURCES]


def builtin_anchor_set(name):
    for anchors in builtin_profiles():
        if anchors.detector_name == name:
            return anchors
    raise DataValidationError(f"no built-in anchor set named {name!r}")


def _check_monotone(anchors, tolerance):
    rows = anchors.rows
    onset = anchors.atr_window_ns[0] if anchors.atr_window_ns else 0.0
    for a in rows:
        for b in rows:
            if a.delay_ns == b.delay_ns and a.flux < b.flux and a.probability > b.probability + tolerance:
                raise DataValidationError(
                    f"{anchors.detector_name}: probability falls with flux at {a.delay_ns} ns: "
                    f"({a.flux}, {a.probability}) vs ({b.flux}, {b.probability})")
            if (a.flux == b.flux and onset <= a.delay_ns < b.delay_ns and a.delay_ns > 0
                    and b.probability > a.probability + tolerance):
                raise DataValidationError(
                    f"{anchors.detector_name}: probability rises with delay at flux {a.flux}: "
                    f"({a.delay_ns} ns, {a.probability}) vs ({b.delay_ns} ns, {b.probability})")


def _logistic(log_flux, theta, log_width, dark):
    return dark + (1.0 - dark) * expit((log_flux - theta) / np.exp(log_width))


def _fit_delay(rows, dark, tolerance=DEFAULT_TOLERANCE):
    """(theta, w) from >= 2 fluxes at one delay

    Least squares in logit space, so the ratio between a tiny half-flux
    probability and its full-flux partner survives the fit, with every anchor
    held within 0.9 * ``tolerance`` absolute. Falls back to binomially
    weighted least squares in probability space.
    """
    log_flux = np.log([r.flux for r in rows])
    p = np.array([r.probability for r in rows])
    target = logit((p - dark) / (1.0 - dark))
    bound = 0.9 * tolerance
    slope, intercept = np.polyfit(log_flux, target, 1)
    width0 = 1.0 / slope if slope > 0 else DEFAULT_SLOPE
    theta0 = float(np.mean(log_flux - width0 * target))
    x0 = np.array([theta0, math.log(width0)])

    def gap(x):
        return _logistic(log_flux, x[0], x[1], dark) - p

    if slope > 0 and np.max(np.abs(gap(x0))) <= bound:
        return theta0, width0

    if slope > 0:
        result = minimize(lambda x: float(np.sum(((log_flux - x[0]) / np.exp(x[1]) - target) ** 2)), x0,
                          method="SLSQP", constraints=[{"type": "ineq", "fun": lambda x: bound - np.abs(gap(x))}],
                          options={"maxiter": 200, "ftol": 1e-12})
        if result.success and np.max(np.abs(gap(result.x))) <= bound * (1 + 1e-6):
            return float(result.x[0]), float(math.exp(result.x[1]))
        _logger.debug(f"logit-space fit left the tolerance band ({result.message}), refitting in probability")
    popt, _ = curve_fit(lambda x, t, lw: _logistic(x, t, lw, dark), log_flux, p,
                        p0=list(x0), sigma=np.sqrt(p * (1.0 - p)), maxfev=10000)
    return float(popt[0]), float(math.exp(popt[1]))


def _theta_for(row, width, dark):
    q = (row.probability - dark) / (1.0 - dark)
    return math.log(row.flux) - width * float(logit(q))


def _peak_efficiency(anchors, dark):
    """ single-photon efficiency from the lowest-flux zero-point anchor, if there is one """
    zero = [r for r in anchors.rows if r.delay_ns == 0.0]
    if not zero:
        return None
    row = min(zero, key=lambda r: r.flux)
    q = (row.probability - dark) / (1.0 - dark)
    return float(min(1.0, -math.log1p(-q) / row.flux))


def _build_surface(anchors, knots, thetas, slopes, dark):
    domain_hi = knots[-1]
    onset = None
    if anchors.atr_window_ns is not None:
        domain_hi = max(domain_hi, anchors.atr_window_ns[1])
        onset = anchors.atr_window_ns[0]
    else:
        positive = [k for k in knots if k > 0]
        onset = positive[0] if positive else None
    return AtrSurface(
        knots_ns=tuple(knots), midpoints=tuple(thetas), slopes=tuple(slopes), dark_count_prob=dark,
        gate_period_ns=anchors.gate_period_ns, gate_width_ns=anchors.gate_width_ns,
        peak_efficiency=_peak_efficiency(anchors, dark), anchors=anchors.rows,
        domain_ns=(min(0.0, knots[0]), domain_hi), atr_onset_ns=onset)


def fit_surface(anchors: AnchorSet, tolerance: float = DEFAULT_TOLERANCE):
    """Fit a surface that reproduces every anchor within ``tolerance``

    Delays with two or more fluxes get their own logistic fit. Single-flux
    delays borrow the width of the nearest multi-flux delay inside the ATR
    window, or :data:`DEFAULT_SLOPE`. When the anchors were measured with gate
    jitter the raw surface is refined so that its jitter-convolved version
    hits the anchors.

    Returns:
      (AtrSurface, FitReport)

    Raises:
      DataValidationError: anchors contradict flux/delay monotonicity
      FitFailure: residuals stay above ``tolerance``
    """
    dark = anchors.dark_count_prob
    _check_monotone(anchors, tolerance)
    for row in anchors.rows:
        if not dark < row.probability < 1.0 or row.flux <= 0:
            raise DataValidationError(
                f"{anchors.detector_name}: anchor {row} must have flux > 0 and dark_count_prob < probability < 1")

    knots = anchors.delays
    fitted = {}
    for delay in knots:
        rows = anchors.at_delay(delay)
        if len({r.flux for r in rows}) >= 2:
            fitted[delay] = _fit_delay(rows, dark, tolerance)

    window = anchors.atr_window_ns
    thetas, slopes, defaulted = [], [], []
    for delay in knots:
        if delay in fitted:
            theta, width = fitted[delay]
        else:
            donors = [d for d in fitted if window is not None and window[0] <= d <= window[1]]
            if donors and window[0] <= delay <= window[1]:
                width = fitted[min(donors, key=lambda d: (abs(d - delay), d))][1]
            else:
                width = DEFAULT_SLOPE
            _logger.warning(f"{anchors.detector_name}: single-flux delay {delay} ns uses slope {width:.4g}")
            defaulted.append(delay)
            theta = float(np.mean([_theta_for(r, width, dark) for r in anchors.at_delay(delay)]))
        thetas.append(theta)
        slopes.append(width)

    surface = _build_surface(anchors, knots, thetas, slopes, dark)
    message = "closed-form per-delay fit"
    success = True
    if anchors.measured_jitter_ps > 0:
        surface, success, message = _deconvolve(anchors, surface, set(defaulted))
    if anchors.regimes and success:
        surface, regime_message = _fit_regimes(anchors, surface, set(defaulted), tolerance)
        message = f"{message}; {regime_message}"

    residuals = _residuals(surface, anchors.rows, anchors.measured_jitter_ps)
    regime_residuals = tuple(float(r) for r in _regime_residuals(surface, anchors.regimes))
    report = FitReport(knots_ns=surface.knots_ns, thetas=surface.midpoints, slopes=surface.slopes,
                       residuals=tuple(float(r) for r in residuals), tolerance=tolerance,
                       converged=False, defaulted_slopes=tuple(defaulted), message=message,
                       regimes=anchors.regimes, regime_residuals=regime_residuals)
    if report.max_regime_residual > REGIME_FALLBACK_TOLERANCE:
        _logger.warning(f"{anchors.detector_name}: other-jitter targets missed by up to "
                        f"{report.max_regime_residual:.3f}, best achieved with the anchors held")
    converged = success and report.max_residual <= tolerance
    report = replace(report, converged=converged)
    if not converged:
        raise FitFailure(f"{anchors.detector_name}: fit did not converge, max residual "
                         f"{report.max_residual:.4f} > {tolerance} ({message})", report=report, surface=surface)
    _logger.info(f"{anchors.detector_name}: fitted {len(knots)} knots, max residual {report.max_residual:.2e}")
    return surface, report


def _residuals(surface, rows, fwhm_ps):
    delays = np.array([r.delay_ns for r in rows])
    fluxes = np.array([r.flux for r in rows])
    return surface.probability(delays, fluxes, fwhm_ps) - np.array([r.probability for r in rows])


def _regime_residuals(surface, regimes):
    return np.array([surface.probability(r.delay_ns, r.flux, r.fwhm_ps) - r.probability for r in regimes])


def _logit_residuals(surface, rows, fwhm_ps):
    delays = np.array([r.delay_ns for r in rows])
    fluxes = np.array([r.flux for r in rows])
    p = surface.probability(delays, fluxes, fwhm_ps)
    return logit(np.clip(p, 1e-15, 1 - 1e-15)) - logit(np.array([r.probability for r in rows]))


class _SurfaceParameters:
    """ (theta per knot, ln w per free knot) as one flat vector """

    def __init__(self, anchors, start, fixed_width):
        self.anchors = anchors
        self.start = start
        self.free_width = [k not in fixed_width for k in start.knots_ns]

    @property
    def x0(self):
        return list(self.start.midpoints) + [math.log(w) for w, free in zip(self.start.slopes, self.free_width)
                                             if free]

    def surface(self, x):
        knots = self.start.knots_ns
        widths = list(self.start.slopes)
        extra = iter(x[len(knots):])
        for j, free in enumerate(self.free_width):
            if free:
                widths[j] = math.exp(next(extra))
        return _build_surface(self.anchors, knots, list(x[:len(knots)]), widths, self.start.dark_count_prob)


def _deconvolve(anchors, start, fixed_width):
    """ refine raw (theta, ln w) so the jitter-convolved surface matches the anchors """
    params = _SurfaceParameters(anchors, start, fixed_width)
    jitter = anchors.measured_jitter_ps

    def residuals(x):
        return _logit_residuals(params.surface(x), anchors.rows, jitter)

    result = least_squares(residuals, params.x0, xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=2000)
    _logger.debug(f"{anchors.detector_name}: jitter deconvolution {result.nfev} evaluations, {result.message}")
    return params.surface(result.x), bool(result.success), f"deconvolved {jitter} ps jitter: {result.message}"


def _fit_regimes(anchors, start, fixed_width, tolerance):
    """Pull the raw surface toward probabilities measured at other gate jitters

    Every regime goes through the same zero-offset Gaussian convolution. The
    anchors stay within :data:`REGIME_LOGIT_MARGIN` in logit space (and within
    ``tolerance``); when no raw surface meets both, the regimes keep their
    best-achieved residuals.
    """
    params = _SurfaceParameters(anchors, start, fixed_width)
    jitter = anchors.measured_jitter_ps
    x0 = np.array(params.x0)
    margin = max(REGIME_LOGIT_MARGIN, float(np.max(np.abs(_logit_residuals(start, anchors.rows, jitter)))))

    def objective(x):
        return float(np.sum(_regime_residuals(params.surface(x), anchors.regimes) ** 2))

    def slack(x):
        r = _logit_residuals(params.surface(x), anchors.rows, jitter)
        return np.concatenate([margin - r, margin + r])

    before = objective(x0)
    result = minimize(objective, x0, method="SLSQP", bounds=[(v - 5.0, v + 5.0) for v in x0],
                      constraints=[{"type": "ineq", "fun": slack}], options={"maxiter": 300, "ftol": 1e-12})
    fitted = params.surface(result.x)
    held = float(np.max(np.abs(_residuals(fitted, anchors.rows, jitter))))
    after = objective(result.x)
    if held > tolerance or np.min(slack(result.x)) < -1e-6 or not after < before:
        _logger.info(f"{anchors.detector_name}: jitter regimes left at the anchor fit ({result.message})")
        return start, "jitter regimes not improved"
    _logger.debug(f"{anchors.detector_name}: jitter regimes {result.nit} iterations, squared error "
                  f"{before:.3g} -> {after:.3g}")
    return fitted, f"{len(anchors.regimes)} jitter regime targets, squared error {after:.3g}"


def calibrate_gate_offset(surface, delay_ns, fluxes, targets, fwhm_ps, bounds=(0.0, 200.0)):
    """Mean gate offset (ps) that makes the jittered surface hit target probabilities

    Used for gate-timing settings where only the widened probabilities are known.
    """
    fluxes = np.asarray(fluxes, dtype=float)
    targets = np.asarray(targets, dtype=float)

    def loss(offset_ps):
        return float(np.sum((surface.probability(delay_ns, fluxes, fwhm_ps, offset_ps) - targets) ** 2))

    result = minimize_scalar(loss, bounds=bounds, method="bounded", options={"xatol": 1e-4})
    _logger.info(f"gate offset at {fwhm_ps} ps jitter: {result.x:.3f} ps (loss {result.fun:.2e})")
    return float(result.x)


def calibrate_afterpulse_scaling(model, target, delay_ns, flux_pattern, reference_flux=None):
    """Charge-to-afterpulse scaling that yields ``target`` afterpulses per photon click

    ``flux_pattern`` lists equiprobable per-gate fluxes. Afterpulses landing on
    a gate that clicks from light anyway are not counted, as in a measurement.
    """
    flux = np.asarray(flux_pattern, dtype=float)
    if model.afterpulse.base <= 0:
        raise DataValidationError(f"{model.name}: afterpulse base is 0, nothing to scale")
    p_total = np.asarray(model.probability(delay_ns, flux), dtype=float)
    dark = model.dark_count_prob
    p_photon = np.clip((p_total - dark) / (1.0 - dark), 0.0, 1.0)
    if p_photon.sum() <= 0:
        raise DataValidationError("flux pattern produces no photon clicks")
    charge_ratio = np.asarray(model.charges.for_flux(flux, reference_flux)) / model.charges.normal
    mean_ratio = float(np.sum(p_photon * charge_ratio) / np.sum(p_photon))
    visible = 1.0 - float(p_photon.mean())
    scaling = target / (model.afterpulse.base * mean_ratio * visible)
    _logger.info(f"{model.name}: afterpulse scaling {scaling:.4f} for target {target}")
    return scaling
