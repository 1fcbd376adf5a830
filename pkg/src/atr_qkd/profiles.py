"""
Built-in detector profiles.

The anchor CSVs hold what was measured; ``detectors.json`` holds the rest
of each profile (charges, afterpulse kernel, click-time models, gate-timing
settings). Fitting the id201 surface means a jitter deconvolution, so the
fitted models can be cached on disk as JSON.
"""
import importlib.resources
import json
import logging
import os
from dataclasses import replace
from functools import lru_cache

from atr_qkd.calibration import (DEFAULT_TOLERANCE, builtin_profiles, calibrate_afterpulse_scaling,
                                 calibrate_gate_offset, fit_surface)
from atr_qkd.detector import (AfterpulseKernel, ChargeConstants, ClickTimeModel, DetectorModel, GateTiming,
                              ideal_detector)
from atr_qkd.exceptions import DataValidationError

__author__ = "John Conwell"
__copyright__ = "John Conwell"
__license__ = "MIT"

_logger = logging.getLogger(__name__)

settings_resource = "detectors.json"


def _load_settings():
    data = importlib.resources.files("atr_qkd") / "data" / settings_resource
    return json.loads(data.read_text())


def profile_settings(name):
    """ settings block of a built-in profile, empty for unknown names """
    return _load_settings().get(name, {})


def build_model(anchors, surface, settings):
    """ assemble a :class:`DetectorModel` from a fitted surface and its settings block """
    click_time = settings.get("click_time", {})
    model = DetectorModel(
        name=anchors.detector_name,
        surface=surface,
        jitter_fwhm_ps=anchors.measured_jitter_ps,
        charges=ChargeConstants(**settings.get("charges", {})),
        deadtime_gates=int(settings.get("deadtime_gates", 0)),
        **{key: ClickTimeModel(**click_time[kind]) for key, kind in
           (("normal_timing", "normal"), ("attack_timing", "attack")) if kind in click_time},
    )

    timings = {}
    for name, spec in settings.get("timing_settings", {}).items():
        offset = spec.get("offset_ps", 0.0)
        if "calibrate" in spec:
            cal = spec["calibrate"]
            offset = calibrate_gate_offset(surface, cal["delay_ns"], cal["fluxes"], cal["targets"], spec["fwhm_ps"])
        timings[name] = GateTiming(spec["fwhm_ps"], offset)
    model = replace(model, timing_settings=timings)
    if "default_timing" in settings:
        model = model.with_timing(settings["default_timing"])

    ap = dict(settings.get("afterpulse", {}))
    target = ap.pop("calibrate", None)
    kernel = AfterpulseKernel(**{"scaling": 1.0, **ap})
    model = replace(model, afterpulse=kernel)
    if target is not None:
        scaling = calibrate_afterpulse_scaling(model, target["probability"], target["delay_ns"], target["flux_pattern"])
        model = replace(model, afterpulse=replace(kernel, scaling=scaling))
    return model


def build_profiles(tolerance=DEFAULT_TOLERANCE):
    settings = _load_settings()
    models = {}
    for anchors in builtin_profiles():
        surface, report = fit_surface(anchors, tolerance)
        models[anchors.detector_name] = build_model(anchors, surface, settings.get(anchors.detector_name, {}))
    return models


def save_profiles(cache_path, models):
    with open(cache_path, "w") as handle:
        json.dump({name: model.to_dict() for name, model in models.items()}, handle, indent=2, sort_keys=True)


def load_profiles(cache_path):
    with open(cache_path, "r") as handle:
        data = json.load(handle)
    return {name: DetectorModel.from_dict(doc) for name, doc in data.items()}


class ProfileLibrary:
    def __init__(self, read_cache=True, save_cache=True, cache_path=None, tolerance=DEFAULT_TOLERANCE):
        if read_cache and cache_path and os.path.exists(cache_path):
            _logger.info("loading detector profiles from cache")
            self._models = load_profiles(cache_path)
        else:
            _logger.info("fitting built-in detector profiles")
            self._models = build_profiles(tolerance)
            if save_cache and cache_path:
                _logger.info("saving detector profiles to cache")
                save_profiles(cache_path, self._models)

    def names(self):
        return list(self._models)

    def model(self, name, timing=None):
        """ fitted model by name, optionally switched to a named gate-timing setting """
        if name == "ideal":
            return ideal_detector()
        if name not in self._models:
            raise DataValidationError(f"unknown detector profile {name!r}, known: {self.names()}")
        model = self._models[name]
        if timing is not None:
            model = model.with_timing(timing)
        return model

    def __getitem__(self, name):
        return self.model(name)


@lru_cache(maxsize=1)
def default_library():
    """ process-wide library of the built-in profiles, no disk cache """
    return ProfileLibrary(read_cache=False, save_cache=False)
