"""
Command line front end for the ATR attack simulator.

Installed as the ``atr-qkd`` console script (see ``[options.entry_points]``
in ``setup.cfg``)::

    atr-qkd characterize --profile id201 --delay-range 1.06 1.26 21 --fluxes 0.1 445 890
    atr-qkd attack --seed 7 --gates 1000000 -o runs/attack
    atr-qkd replay runs/attack/manifest.json -o runs/again

Every command writes its CSV/JSON results plus a ``manifest.json`` into
``--out-dir``; ``replay`` re-executes a run from that manifest.

References:
    - https://setuptools.pypa.io/en/latest/userguide/entry_point.html
"""

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

import numpy as np

from atr_qkd import __version__
from atr_qkd.attack import AttackConfig, RateConstraint, optimize_attack, write_candidates_csv
from atr_qkd.calibration import DEFAULT_TOLERANCE, load_anchor_csv, fit_surface
from atr_qkd.countermeasures import (ClickHistogram, IlluminationSpec, MonitorConfig, evaluate_monitors,
                                     jitter_sensitivity, photocurrent_tradeoff, reference_histogram,
                                     removed_gate_check, timing_monitor)
from atr_qkd.detector import DetectorModel
from atr_qkd.exceptions import (AtrError, ConfigError, FitFailure, InfeasibleRateError, NoSolutionError,
                                OutOfDomainError)
from atr_qkd.profiles import ProfileLibrary, build_model, default_library, profile_settings
from atr_qkd.protocol import Phase, SessionConfig, expected_click_rate, run_session

__author__ = "John Conwell"
__copyright__ = "John Conwell"
__license__ = "MIT"

_logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_FIT_FAILURE = 4

MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    """ what was run and what it wrote; ``argv`` is enough to rerun it """
    command: str
    argv: List[str]
    config_paths: List[str] = field(default_factory=list)
    seed: Optional[int] = None
    outputs: List[str] = field(default_factory=list)
    version: str = __version__
    timestamp: str = ""

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown manifest keys: {sorted(unknown)}")
        return cls(**data)


class _Run:
    """ output directory bookkeeping for one command """

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.outputs = []

    def open(self, name):
        self.outputs.append(name)
        _logger.info(f"writing {self.out_dir / name}")
        return open(self.out_dir / name, "w", newline="", encoding="utf-8")

    def write_text(self, name, text):
        with self.open(name) as handle:
            handle.write(text)
            handle.write("\n")


# ---- Python API ----
# Each command is a plain function of a parsed namespace and a run directory,
# so they can be called without going through the argument parser.

def _library(args):
    if args.profile_cache:
        return ProfileLibrary(cache_path=args.profile_cache)
    return default_library()


def load_detector(args, name=None, timing=None):
    """ a detector by built-in profile name or from a profile JSON file written by ``calibrate`` """
    name = name or args.profile
    if name.endswith(".json"):
        model = DetectorModel.from_json(Path(name).read_text())
        return model.with_timing(timing) if timing else model
    return _library(args).model(name, timing)


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _float_list(values, what):
    if not values:
        raise ConfigError(f"{what} list is empty")
    return [float(v) for v in values]


def _delay_grid(args):
    if args.delays:
        return _float_list(args.delays, "delay")
    if args.delay_range:
        lo, hi, n = args.delay_range
        if int(n) < 1:
            raise ConfigError("delay range needs at least one point")
        return [float(d) for d in np.linspace(lo, hi, int(n))]
    raise ConfigError("give --delays or --delay-range")


def cmd_characterize(args, run):
    """ detection probability over a delay x flux grid """
    model = load_detector(args, timing=getattr(args, "timing", None))
    delays = _delay_grid(args)
    fluxes = _float_list(args.fluxes, "flux")
    for d in delays:
        if not model.surface.contains(d):
            raise ConfigError(f"delay {d} ns outside {model.name}'s modeled range {model.surface.domain_ns}")
    with run.open("characterize.csv") as handle:
        handle.write("delay_ns,flux,probability\n")
        for d in delays:
            for n, p in zip(fluxes, np.atleast_1d(model.probability(d, np.array(fluxes)))):
                handle.write(f"{d!r},{n!r},{float(p)!r}\n")
    print(f"{model.name}: {len(delays) * len(fluxes)} points written")


def cmd_calibrate(args, run):
    """ fit a surface to an anchor CSV and write the detector profile """
    anchors = load_anchor_csv(args.csv)
    try:
        surface, report = fit_surface(anchors, args.tolerance)
    except FitFailure as exc:
        if exc.report is not None:
            run.write_text("fit_report.json", json.dumps(exc.report.to_dict(), indent=2, sort_keys=True))
        raise
    model = build_model(anchors, surface, profile_settings(anchors.detector_name))
    run.write_text("fit_report.json", json.dumps(report.to_dict(), indent=2, sort_keys=True))
    run.write_text(f"{anchors.detector_name}.json", model.to_json())
    print(f"{anchors.detector_name}: max residual {report.max_residual:.4g} (tolerance {args.tolerance})")


def _session_config(args):
    data = _read_json(args.config) if args.config else {}
    library = _library(args)
    config = SessionConfig.from_dict(data, library)
    overrides = {k: v for k, v in (("n_gates", args.gates), ("alice_flux", args.alice_flux),
                                   ("phase_error", args.phase_error), ("seed", args.seed)) if v is not None}
    if args.trace:
        overrides["keep_trace"] = True
    if args.no_attack:
        overrides["attack"] = None
    elif "attack" not in data:
        overrides["attack"] = AttackConfig()
    config = replace(config, **overrides)
    if config.attack is not None:
        attack = {k: v for k, v in (("target_delay_ns", args.delay), ("full_flux", args.flux),
                                    ("duty_factor", args.duty), ("resend_rate", args.resend_rate)) if v is not None}
        if args.eve_profile:
            attack["eve_detector"] = load_detector(args, args.eve_profile)
        config = replace(config, attack=replace(config.attack, **attack))
    return config


def write_phase_counts(handle, normal, attacked=None):
    """ counts against phase difference: normal A-B, and attack E-B / A-B when an attack ran """
    columns = ["phase_difference", "normal_alice_bob"]
    if attacked is not None:
        columns += ["attack_eve_bob", "attack_alice_bob"]
    handle.write(",".join(columns) + "\n")
    for phase in Phase:
        row = [phase.label, str(normal.counts_alice_bob[phase])]
        if attacked is not None:
            row += [str(attacked.counts_eve_bob[phase]), str(attacked.counts_alice_bob[phase])]
        handle.write(",".join(row) + "\n")


def cmd_attack(args, run):
    """ session with (or without) the attack, then every monitor """
    config = _session_config(args)
    model = load_detector(args, timing=getattr(args, "timing", None))
    monitor_config = MonitorConfig.from_dict(_read_json(args.monitor_config)) if args.monitor_config else MonitorConfig()

    normal = run_session(replace(config, attack=None, keep_trace=False), model)
    attacked = run_session(config, model) if config.attack is not None else None
    report = attacked or normal
    monitors = evaluate_monitors(report, model, config, monitor_config)

    run.write_text("session_config.json", json.dumps(config.to_dict(), indent=2, sort_keys=True))
    run.write_text("session_report.json", report.to_json())
    run.write_text("monitor_report.json", monitors.to_json())
    with run.open("phase_counts.csv") as handle:
        write_phase_counts(handle, normal, attacked)
    if report.trace is not None:
        with run.open("trace.csv") as handle:
            report.trace.write_csv(handle)
    print(f"phase-count QBER: {report.qber_eq1}, sifted QBER: {report.qber_sifted}, "
          f"Eve knowledge: {report.eve_knowledge_fraction}, alarms: {sorted(monitors.alarms) or 'none'}")


def cmd_optimize(args, run):
    """ rank attack (delay, flux) points by predicted QBER """
    model = load_detector(args, timing=getattr(args, "timing", None))
    fluxes = _float_list(args.fluxes, "flux")
    delays = _delay_grid(args)
    constraint = None
    if args.resend_rate is not None:
        normal = args.normal_rate
        if normal is None:
            normal = expected_click_rate(SessionConfig(alice_flux=args.alice_flux), model)
        constraint = RateConstraint(normal, args.resend_rate)
    candidates = optimize_attack(model.surface, fluxes, delays, args.budget, constraint, model.timing)
    with run.open("optimize.csv") as handle:
        write_candidates_csv(candidates, handle)
    best = candidates[0]
    print(f"best: delay {best.delay_ns} ns, flux {best.flux}, predicted QBER {best.qber_pred:.4%}")


def cmd_monitor(args, run):
    """ countermeasure study at one attack point """
    model = load_detector(args, timing=getattr(args, "timing", None))
    rng = np.random.default_rng(args.seed)

    timings = [model.timing_settings[k] for k in sorted(model.timing_settings)] + list(args.fwhm or [])
    with run.open("jitter_sensitivity.csv") as handle:
        handle.write("fwhm_ps,offset_ps,p_full,p_half,qber\n")
        for row in jitter_sensitivity(model.surface, timings or [model.jitter_fwhm_ps], args.delay, args.flux):
            qber = repr(row.qber) if row.qber is not None else ""
            handle.write(f"{row.fwhm_ps!r},{row.offset_ps!r},{row.p_full!r},{row.p_half!r},{qber}\n")

    click_rate = args.click_rate
    if click_rate is None:
        click_rate = expected_click_rate(SessionConfig(alice_flux=args.alice_flux), model)
    with run.open("photocurrent_tradeoff.csv") as handle:
        handle.write("flux,p_full,p_half,qber,photocurrent_na,extrapolated,exceeds_reference_current\n")
        for row in photocurrent_tradeoff(model, args.delay, args.tradeoff_fluxes or [args.flux], click_rate):
            values = [row.flux, row.p_full, row.p_half, row.qber, row.photocurrent_na]
            flag = "" if row.exceeds_reference_current is None else str(int(row.exceeds_reference_current))
            handle.write(",".join(repr(v) if v is not None else "" for v in values)
                         + f",{int(row.extrapolated)},{flag}\n")

    summary = {"click_rate_hz": click_rate, "removed_gate_clicks": {}, "timing": {}}
    for label, illumination in (("normal", IlluminationSpec(args.alice_flux, 0.0)),
                                ("attack", IlluminationSpec(args.flux, args.delay))):
        result = removed_gate_check(model, illumination, n_slots=args.slots, rng_seed=int(rng.integers(2 ** 32)),
                                    reference_flux=args.flux)
        with run.open(f"removed_gate_{label}.csv") as handle:
            result.histogram.to_csv(handle)
        summary["removed_gate_clicks"][label] = result.removed_clicks

    reference = reference_histogram(model, rng_seed=int(rng.integers(2 ** 32)))
    for label, (delay, flux) in (("normal", (0.0, args.alice_flux)), ("attack", (args.delay, args.flux))):
        samples = model.click_time_model(delay, flux).sample(rng, args.samples)
        with run.open(f"timing_{label}.csv") as handle:
            ClickHistogram.from_samples(samples, 1.0).to_csv(handle)
        result = timing_monitor(samples, reference)
        summary["timing"][label] = {"center_shift_ns": result.center_shift_ns,
                                    "support_width_ns": result.support_width_ns, "verdict": result.verdict.value}
    run.write_text("monitor_summary.json", json.dumps(summary, indent=2, sort_keys=True))
    print(f"timing monitor: normal {summary['timing']['normal']['verdict']}, "
          f"attack {summary['timing']['attack']['verdict']}")


COMMANDS = {
    "characterize": cmd_characterize,
    "calibrate": cmd_calibrate,
    "attack": cmd_attack,
    "optimize": cmd_optimize,
    "monitor": cmd_monitor,
}


# ---- CLI ----

def parse_args(args):
    """Parse command line parameters

    Args:
      args (List[str]): command line parameters as list of strings
          (for example  ``["attack", "--seed", "1"]``).

    Returns:
      :obj:`argparse.Namespace`: command line parameters namespace
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-o", "--out-dir", default=".", help="directory for results and manifest.json")
    common.add_argument("--profile-cache", help="JSON file caching the fitted built-in profiles")
    common.add_argument("-v", "--verbose", dest="loglevel", help="set loglevel to INFO",
                        action="store_const", const=logging.INFO)
    common.add_argument("-vv", "--very-verbose", dest="loglevel", help="set loglevel to DEBUG",
                        action="store_const", const=logging.DEBUG)

    profile = argparse.ArgumentParser(add_help=False)
    profile.add_argument("--profile", default="id201", help="built-in profile name or profile JSON path")
    profile.add_argument("--timing", help="named gate-timing setting of the profile, e.g. set_15ns")

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--fluxes", nargs="*", type=float, help="incident fluxes, photons/pulse")
    grid.add_argument("--delays", nargs="*", type=float, help="delays, ns")
    grid.add_argument("--delay-range", nargs=3, type=float, metavar=("LO", "HI", "N"),
                      help="N evenly spaced delays from LO to HI ns")

    parser = argparse.ArgumentParser(description="Simulate ATR detector-control attacks on phase-encoded BB84")
    parser.add_argument("--version", action="version", version="atr_qkd {ver}".format(ver=__version__))
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("characterize", parents=[common, profile, grid], help="probability sweep from a fitted surface")

    p = sub.add_parser("calibrate", parents=[common], help="fit a detector profile to an anchor CSV")
    p.add_argument(dest="csv", help="anchor CSV (delay_ns,flux_photons,probability)")
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)

    p = sub.add_parser("attack", parents=[common, profile], help="run a QKD session, with the attack by default")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", help="session config JSON")
    p.add_argument("--monitor-config", help="monitor thresholds JSON")
    p.add_argument("--gates", type=int)
    p.add_argument("--alice-flux", type=float)
    p.add_argument("--phase-error", type=float)
    p.add_argument("--delay", type=float, help="attack delay, ns")
    p.add_argument("--flux", type=float, help="attack full flux at Bob's SPD, photons/pulse")
    p.add_argument("--duty", type=float, help="fixed duty factor instead of click-rate matching")
    p.add_argument("--resend-rate", type=float, help="Eve's resend rate M, pulses/s")
    p.add_argument("--eve-profile", help="profile for Eve's measurement detector (default: ideal)")
    p.add_argument("--no-attack", action="store_true")
    p.add_argument("--trace", action="store_true", help="also write the per-round trace CSV")

    p = sub.add_parser("optimize", parents=[common, profile, grid], help="rank attack points by predicted QBER")
    p.add_argument("--budget", type=float, default=0.11, help="QBER budget")
    p.add_argument("--resend-rate", type=float, help="Eve's resend rate M; enables duty feasibility")
    p.add_argument("--normal-rate", type=float, help="Bob's normal click rate, counts/s")
    p.add_argument("--alice-flux", type=float, default=0.1)

    p = sub.add_parser("monitor", parents=[common, profile], help="countermeasure study at one attack point")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--delay", type=float, default=1.16)
    p.add_argument("--flux", type=float, default=890.0)
    p.add_argument("--alice-flux", type=float, default=0.1)
    p.add_argument("--fwhm", nargs="*", type=float, help="extra gate jitter values, ps")
    p.add_argument("--tradeoff-fluxes", nargs="*", type=float)
    p.add_argument("--click-rate", type=float, help="fixed click rate for the photocurrent table, counts/s")
    p.add_argument("--slots", type=int, default=1_000_000, help="illumination slots for the removed-gate check")
    p.add_argument("--samples", type=int, default=10_000, help="click-time samples per distribution")

    p = sub.add_parser("replay", parents=[common], help="rerun a command from its manifest.json")
    p.add_argument(dest="manifest", help="manifest.json of an earlier run")
    return parser.parse_args(args)


def setup_logging(loglevel):
    """Setup basic logging

    Args:
      loglevel (int): minimum loglevel for emitting messages
    """
    logformat = "[%(asctime)s] %(levelname)s:%(name)s:%(message)s"
    logging.basicConfig(
        level=loglevel, stream=sys.stdout, format=logformat, datefmt="%Y-%m-%d %H:%M:%S"
    )


def exit_code(exc):
    if isinstance(exc, FitFailure):
        return EXIT_FIT_FAILURE
    if isinstance(exc, (InfeasibleRateError, NoSolutionError, OutOfDomainError)):
        return EXIT_INFEASIBLE
    return EXIT_USAGE


def _execute(args, argv):
    run = _Run(args.out_dir)
    COMMANDS[args.command](args, run)
    manifest = RunManifest(
        command=args.command,
        argv=list(argv),
        config_paths=[p for p in (getattr(args, "config", None), getattr(args, "monitor_config", None)) if p],
        seed=getattr(args, "seed", None),
        outputs=list(run.outputs),
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    (run.out_dir / MANIFEST_NAME).write_text(manifest.to_json() + "\n", encoding="utf-8")
    return manifest


def main(args):
    """Run one subcommand, returning the process exit code

    Args:
      args (List[str]): command line parameters as list of strings
          (for example  ``["characterize", "-v", "--fluxes", "890", "--delays", "1.16"]``).
    """
    argv = list(args)
    args = parse_args(argv)
    setup_logging(args.loglevel)
    _logger.debug(f"starting {args.command}")
    try:
        if args.command == "replay":
            manifest = RunManifest.from_json(Path(args.manifest).read_text())
            original = parse_args(manifest.argv)
            original.out_dir = args.out_dir
            _logger.info(f"replaying {manifest.command} from {args.manifest}")
            _execute(original, manifest.argv)
        else:
            _execute(args, argv)
    except (AtrError, OSError) as exc:
        _logger.error(str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    return EXIT_OK


def run():
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    # After installing the project with pip, the CLI also runs as a module::
    #
    #     python -m atr_qkd.cli attack --seed 1
    #
    run()
