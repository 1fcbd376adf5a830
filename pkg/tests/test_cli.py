import csv
import json
from pathlib import Path

import pytest

import atr_qkd
from atr_qkd.cli import (EXIT_FIT_FAILURE, EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, MANIFEST_NAME, RunManifest,
                         main, parse_args)

__author__ = "John Conwell"
__copyright__ = "John Conwell"
__license__ = "MIT"

DATA = Path(atr_qkd.__file__).parent / "data"


def _rows(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


def test_characterize(tmp_path, capsys, id201):
    code = main(["characterize", "--delays", "1.11", "1.16", "--fluxes", "445", "890", "-o", str(tmp_path)])
    assert code == EXIT_OK
    assert "4 points written" in capsys.readouterr().out
    rows = _rows(tmp_path / "characterize.csv")
    assert len(rows) == 4
    for row in rows:
        expected = id201.probability(float(row["delay_ns"]), float(row["flux"]))
        assert float(row["probability"]) == pytest.approx(expected, rel=1e-12)
    manifest = RunManifest.from_json((tmp_path / MANIFEST_NAME).read_text())
    assert manifest.command == "characterize"
    assert manifest.outputs == ["characterize.csv"]


def test_characterize_bad_input(tmp_path, capsys):
    assert main(["characterize", "--delays", "1.16", "--fluxes", "-o", str(tmp_path)]) == EXIT_USAGE
    assert "flux list is empty" in capsys.readouterr().err
    code = main(["characterize", "--profile", "homemade_1mhz", "--delays", "1.5", "--fluxes", "890",
                 "-o", str(tmp_path)])
    assert code == EXIT_USAGE
    assert "outside" in capsys.readouterr().err


def test_calibrate(tmp_path, capsys):
    assert main(["calibrate", str(tmp_path / "missing.csv"), "-o", str(tmp_path)]) == EXIT_USAGE
    capsys.readouterr()

    assert main(["calibrate", str(DATA / "id201.csv"), "-o", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "fit_report.json").read_text())
    assert report
    profile = tmp_path / "id201.json"
    assert profile.exists()
    # the written profile is usable wherever a profile name is
    code = main(["characterize", "--profile", str(profile), "--delays", "1.16", "--fluxes", "890",
                 "-o", str(tmp_path / "sweep")])
    assert code == EXIT_OK
    (row,) = _rows(tmp_path / "sweep" / "characterize.csv")
    assert float(row["probability"]) == pytest.approx(0.262, abs=0.02)


def test_calibrate_fit_failure(tmp_path, capsys):
    code = main(["calibrate", str(DATA / "homemade_1mhz.csv"), "--tolerance", "1e-4", "-o", str(tmp_path)])
    assert code == EXIT_FIT_FAILURE
    assert "error:" in capsys.readouterr().err
    assert (tmp_path / "fit_report.json").exists()


def test_optimize(tmp_path, capsys):
    code = main(["optimize", "--fluxes", "445", "890", "--delay-range", "1.11", "1.21", "3", "-o", str(tmp_path)])
    assert code == EXIT_OK
    assert capsys.readouterr().out.startswith("best: delay")
    rows = _rows(tmp_path / "optimize.csv")
    assert len(rows) == 6
    assert list(rows[0]) == ["delay_ns", "flux", "qber_pred", "duty", "feasible"]
    assert rows[0]["feasible"] == "1"


def test_optimize_errors(tmp_path):
    assert main(["optimize", "--fluxes", "--delays", "1.16", "-o", str(tmp_path)]) == EXIT_USAGE
    # nothing fits a zero QBER budget
    assert main(["optimize", "--fluxes", "890", "--delays", "1.16", "--budget", "0", "-o", str(tmp_path)]) \
        == EXIT_INFEASIBLE


def test_attack_default(tmp_path, capsys):
    # the default attack matches a lossless click rate from strong Eve-Bob pulses
    out = tmp_path / "default"
    assert main(["attack", "--seed", "1", "--gates", "1000000", "--phase-error", "0", "-o", str(out)]) == EXIT_OK
    capsys.readouterr()
    report = json.loads((out / "session_report.json").read_text())
    assert report["resent_pulses"] > 0
    assert report["qber_eq1"] < 0.02
    assert report["eve_knowledge_fraction"] > 0.99


def test_attack_infeasible(tmp_path, capsys):
    # a dim receive flux leaves too few conclusive rounds to resend from
    config = tmp_path / "session.json"
    config.write_text(json.dumps({"attack": {"eve_receive_flux": 0.01}}))
    code = main(["attack", "--seed", "1", "--gates", "1000", "--config", str(config), "-o", str(tmp_path)])
    assert code == EXIT_INFEASIBLE
    assert "error:" in capsys.readouterr().err


def test_attack_and_replay(tmp_path, capsys):
    config = tmp_path / "session.json"
    config.write_text(json.dumps({"channel_transmittance": 0.4}))
    monitors = tmp_path / "monitors.json"
    monitors.write_text(json.dumps({"removed_gate_slots": 2000}))
    out = tmp_path / "run"
    argv = ["attack", "--seed", "3", "--gates", "50000", "--config", str(config),
            "--monitor-config", str(monitors), "--trace", "-o", str(out)]
    assert main(argv) == EXIT_OK
    assert "phase-count QBER" in capsys.readouterr().out

    rows = _rows(out / "phase_counts.csv")
    assert [r["phase_difference"] for r in rows] == ["0", "pi/2", "pi", "3pi/2"]
    assert set(rows[0]) == {"phase_difference", "normal_alice_bob", "attack_eve_bob", "attack_alice_bob"}
    report = json.loads((out / "session_report.json").read_text())
    assert report["resent_pulses"] > 0
    assert report["seed"] == 3
    assert (out / "trace.csv").exists()
    monitor_report = json.loads((out / "monitor_report.json").read_text())
    assert set(monitor_report["verdicts"]) == {"photocurrent", "afterpulse", "removed_gate", "timing"}
    manifest = RunManifest.from_json((out / MANIFEST_NAME).read_text())
    assert manifest.seed == 3
    assert manifest.config_paths == [str(config), str(monitors)]

    again = tmp_path / "again"
    assert main(["replay", str(out / MANIFEST_NAME), "-o", str(again)]) == EXIT_OK
    assert (again / "session_report.json").read_bytes() == (out / "session_report.json").read_bytes()
    assert (again / "phase_counts.csv").read_bytes() == (out / "phase_counts.csv").read_bytes()


def test_attack_off(tmp_path):
    out = tmp_path / "normal"
    assert main(["attack", "--seed", "2", "--gates", "20000", "--no-attack", "-o", str(out)]) == EXIT_OK
    rows = _rows(out / "phase_counts.csv")
    assert set(rows[0]) == {"phase_difference", "normal_alice_bob"}
    report = json.loads((out / "session_report.json").read_text())
    assert report["counts_eve_bob"] is None


def test_bad_session_config(tmp_path):
    config = tmp_path / "session.json"
    config.write_text(json.dumps({"gates": 10}))
    assert main(["attack", "--seed", "1", "--config", str(config), "-o", str(tmp_path)]) == EXIT_USAGE
    config.write_text("{not json")
    assert main(["attack", "--seed", "1", "--config", str(config), "-o", str(tmp_path)]) == EXIT_USAGE


def test_monitor(tmp_path, capsys):
    code = main(["monitor", "--seed", "4", "--slots", "2000", "--samples", "20000",
                 "--tradeoff-fluxes", "890", "1000", "-o", str(tmp_path)])
    assert code == EXIT_OK
    assert "attack alarm" in capsys.readouterr().out
    summary = json.loads((tmp_path / "monitor_summary.json").read_text())
    assert summary["removed_gate_clicks"] == {"normal": 0, "attack": 0}
    assert summary["timing"]["normal"]["verdict"] == "pass"
    jitter = _rows(tmp_path / "jitter_sensitivity.csv")
    assert [float(r["fwhm_ps"]) for r in jitter] == [19.0, 65.0, 65.0]
    assert [float(r["offset_ps"]) > 0 for r in jitter] == [False, False, True]
    tradeoff = _rows(tmp_path / "photocurrent_tradeoff.csv")
    assert [r["extrapolated"] for r in tradeoff] == ["0", "1"]
    reference, extra = tradeoff
    assert reference["exceeds_reference_current"] == ""
    higher = float(extra["photocurrent_na"]) > float(reference["photocurrent_na"])
    assert extra["exceeds_reference_current"] == str(int(higher))
    for name in ("removed_gate_normal.csv", "removed_gate_attack.csv", "timing_normal.csv", "timing_attack.csv"):
        assert (tmp_path / name).read_text().startswith("bin_start_ps,normalized_count\n")


def test_parse_args():
    args = parse_args(["attack", "--seed", "5", "-vv"])
    assert args.command == "attack"
    assert args.seed == 5
    assert args.profile == "id201"
    with pytest.raises(SystemExit):
        parse_args(["attack"])
