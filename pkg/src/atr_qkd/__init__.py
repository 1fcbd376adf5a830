from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("atr_qkd")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "unknown"
finally:
    del version, PackageNotFoundError

from atr_qkd.attack import AttackConfig, GuessStrategy, match_count_rate, optimize_attack  # noqa: E402
from atr_qkd.calibration import AnchorSet, fit_surface, load_anchor_csv  # noqa: E402
from atr_qkd.countermeasures import MonitorConfig, MonitorReport, evaluate_monitors  # noqa: E402
from atr_qkd.detector import DetectorModel, GatedDetector, detection_probability  # noqa: E402
from atr_qkd.profiles import ProfileLibrary, default_library  # noqa: E402
from atr_qkd.protocol import Phase, SessionConfig, SessionReport, qber_eq1, qber_eq2, run_session  # noqa: E402
from atr_qkd.surface import AtrSurface  # noqa: E402

__all__ = [
    "AnchorSet", "AtrSurface", "AttackConfig", "DetectorModel", "GatedDetector", "GuessStrategy", "MonitorConfig",
    "MonitorReport", "Phase", "ProfileLibrary", "SessionConfig", "SessionReport", "default_library",
    "detection_probability", "evaluate_monitors", "fit_surface", "load_anchor_csv", "match_count_rate",
    "optimize_attack", "qber_eq1", "qber_eq2", "run_session",
]
