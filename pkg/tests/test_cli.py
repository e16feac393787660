import json

import numpy as np
import pytest

from hdsemg_shift import cli
from hdsemg_shift.recording import read_recording, write_recording
from hdsemg_shift.session_io import read_csv
from hdsemg_shift.synthetic import MotorUnit, ScenarioConfig, exercise_activation, stationary_motor_units


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def diagnostic(err):
    return json.loads(err.strip().splitlines()[-1])


def test_shift_round_trip(capsys, tmp_path):
    assert run(capsys, "simulate", "--out", tmp_path, "--scan-triple", "2,-1,15", "--seed", 3)[0] == 0
    code, out, _ = run(capsys, "shift", "--pre", tmp_path / "pre.json", "--post", tmp_path / "post.json",
                       "--bare", tmp_path / "bare.json", "--out", tmp_path / "est")
    assert code == 0
    assert out.strip() == "x=2.000 y=-1.000 theta=15.000"
    assert json.loads((tmp_path / "est" / "shift.json").read_text())["theta_deg"] == pytest.approx(15)


def test_zero_shift_zero_gain_session(capsys, tmp_path):
    code, _, _ = run(capsys, "simulate", "--out", tmp_path / "s", "--muscles", "GM", "--exercises", "ISO",
                     "--n-shifts", 1, "--max-shift-cm", 0, "--max-theta-deg", 0, "--gain-range", "1,1")
    assert code == 0
    cfg = tmp_path / "fast.cfg"
    cfg.write_text("n_resamples = 200\n")
    code, out, _ = run(capsys, "analyze", "--manifest", tmp_path / "s" / "manifest.json", "--out", tmp_path / "a",
                       "--config", cfg)
    assert code == 0 and "failures=0" in out
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    medians = [s["same_location"]["median_pct"] for s in summary["strata"].values()]
    assert len(medians) == 12 and all(m == 0 for m in medians)


def test_pipeline_stages_compose(capsys, tmp_path):
    win, dur = exercise_activation("ISO", 0.3)
    scenario = ScenarioConfig(stationary_motor_units(0, 1.5, density_per_cm2=0.5), duration_s=dur, seed=2,
                              activation=win, metadata={"rec_id": "r1", "muscle": "GM"})
    (tmp_path / "sc.json").write_text(json.dumps(scenario.to_json()))
    assert run(capsys, "simulate", "--out", tmp_path / "raw", "--scenario", tmp_path / "sc.json")[0] == 0
    code, out, _ = run(capsys, "preprocess", "--recording", tmp_path / "raw" / "recording.bin", "--out", tmp_path / "p")
    assert code == 0 and out.strip() == "open_channels=0"
    code, out, _ = run(capsys, "segment", "--envelope", tmp_path / "p" / "envelope.bin", "--out", tmp_path / "g")
    assert code == 0 and out.strip() == "segments=3"
    code, out, _ = run(capsys, "features", "--filtered", tmp_path / "p" / "filtered.bin", "--envelope",
                       tmp_path / "p" / "envelope.bin", "--segments", tmp_path / "g" / "segments.csv",
                       "--out", tmp_path / "f")
    assert code == 0 and out.strip() == "channels=64 contractions=3"
    with open(tmp_path / "f" / "averaged.csv") as fh:
        assert len(fh.read().splitlines()) == 65


def test_env_var_config(capsys, tmp_path, monkeypatch):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("seed = 11\n")
    monkeypatch.setenv("HDSEMG_SHIFT_CONFIG", str(cfg))
    run(capsys, "simulate", "--out", tmp_path / "a", "--scan-triple", "0,0,0")
    run(capsys, "simulate", "--out", tmp_path / "b", "--scan-triple", "0,0,0", "--seed", 11)
    assert (tmp_path / "a" / "pre.json").read_bytes() == (tmp_path / "b" / "pre.json").read_bytes()


class TestExitCodes:
    @pytest.mark.parametrize("argv", [[], ["nope"], ["shift", "--pre", "a"], ["simulate", "--out", "x", "--seed", "-3"],
                                      ["analyze", "--manifest", "m", "--out", "o", "--stratum", "mdf,BIC,ISO"]])
    def test_usage(self, capsys, argv):
        assert run(capsys, *argv)[0] == 2

    def test_missing_file_is_data_error(self, capsys, tmp_path):
        code, _, err = run(capsys, "analyze", "--manifest", tmp_path / "none.json", "--out", tmp_path / "o")
        assert code == 3
        d = diagnostic(err)
        assert d["error"] == "ManifestError" and d["family"] == "data" and d["exit_code"] == 3

    def test_bad_config_is_data_error(self, capsys, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("unknown_key = 1\n")
        code, _, err = run(capsys, "shift", "--pre", "a", "--post", "b", "--bare", "c", "--config", cfg)
        assert code == 3 and diagnostic(err)["error"] == "InvalidConfigurationError"

    def test_silent_recording_is_degenerate(self, capsys, tmp_path):
        win, dur = exercise_activation("ISO", 0.3)
        cfg = ScenarioConfig((MotorUnit((3.0, 3.0)),), duration_s=dur, seed=1, activation=win,
                             metadata={"rec_id": "r"})
        (tmp_path / "sc.json").write_text(json.dumps(cfg.to_json()))
        run(capsys, "simulate", "--out", tmp_path, "--scenario", tmp_path / "sc.json")
        run(capsys, "preprocess", "--recording", tmp_path / "recording.bin", "--out", tmp_path / "p")
        env = read_recording(tmp_path / "p" / "envelope.bin")
        write_recording(tmp_path / "p" / "envelope.bin", env.with_data(np.zeros_like(env.data)))
        code, _, err = run(capsys, "segment", "--envelope", tmp_path / "p" / "envelope.bin", "--out", tmp_path / "g")
        assert code == 4
        d = diagnostic(err)
        assert d["family"] == "analysis" and d["error"] == "EmptySegmentationError"

    def test_failed_entry_reported_and_outputs_written(self, capsys, session_dir, tmp_path):
        import shutil

        work = tmp_path / "s"
        shutil.copytree(session_dir, work)
        path = work / "recordings" / "P00_GM_ISO_s1.bin"
        rec = read_recording(path)
        write_recording(path, rec.with_data(np.zeros_like(rec.data)))
        code, _, err = run(capsys, "analyze", "--manifest", work / "manifest.json", "--out", tmp_path / "o",
                           "--stratum", "mdf,GM,ISO")
        assert code == 3
        lines = [json.loads(x) for x in err.strip().splitlines()]
        assert lines[0]["id"] == "GM_ISO_s1" and lines[0]["error_type"] == "InsufficientDataError"
        rows, _ = read_csv(tmp_path / "o" / "entries.csv")
        assert [r["status"] for r in rows] == ["ok", "failed", "ok"]


def test_report_command(capsys, analysis_dir, tmp_path):
    code, out, _ = run(capsys, "report", "--in", analysis_dir, "--out", tmp_path / "r", "--emit-volts",
                       "--stratum", "max_env,combined")
    assert code == 0
    assert (tmp_path / "r" / "strata" / "max_env__combined" / "volts.svg").is_file()


def test_writes_only_inside_out(capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    run(capsys, "simulate", "--out", "scans", "--scan-triple", "1,1,5")
    run(capsys, "shift", "--pre", "scans/pre.json", "--post", "scans/post.json", "--bare", "scans/bare.json",
        "--out", "est")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["est", "scans"]
