import json
import shutil

import numpy as np
import pytest

from conftest import FAST
from hdsemg_shift.acceptance import tree_digest
from hdsemg_shift.config import PipelineConfig
from hdsemg_shift.errors import ManifestError
from hdsemg_shift.recording import read_recording, write_recording
from hdsemg_shift.session_io import (
    StratumKey,
    load_manifest,
    read_csv,
    run_pipeline,
    write_csv,
    write_manifest,
    write_outputs,
)


def manifest_doc(session_dir):
    return json.loads((session_dir / "manifest.json").read_text())


def write_doc(tmp_path, doc, session_dir):
    # keep relative paths valid by writing next to the session files
    path = session_dir / f"m_{tmp_path.name}.json"
    path.write_text(json.dumps(doc))
    return path


class TestManifest:
    def test_load(self, session_dir):
        m = load_manifest(session_dir / "manifest.json")
        assert m.participant == "P00"
        assert [e.entry_id for e in m.entries] == ["GM_ISO_s0", "GM_ISO_s1", "GM_ISO_s2"]
        assert m.entries[0].scans is None and m.entries[1].scans is not None

    def test_minimal(self, session_dir, tmp_path):
        doc = {"schema_version": 1, "participant": "X",
               "entries": [{"muscle": "GM", "exercise": "ISO", "shift_index": 0,
                            "recording": "recordings/P00_GM_ISO_s0.bin"}]}
        m = load_manifest(write_doc(tmp_path, doc, session_dir))
        assert len(m.entries) == 1 and m.entries[0].segments is None

    def test_normalized_round_trip(self, session_dir, tmp_path):
        m = load_manifest(session_dir / "manifest.json")
        doc = m.to_json()
        doc["entries"] = doc["entries"][::-1]
        again = load_manifest(write_doc(tmp_path, doc, session_dir))
        assert again.to_json() == m.to_json()
        write_manifest(again, session_dir / "copy.json")
        assert load_manifest(session_dir / "copy.json").to_json() == m.to_json()

    def test_missing_scan_names_entry(self, session_dir, tmp_path):
        doc = manifest_doc(session_dir)
        doc["entries"][2]["scans"] = None
        with pytest.raises(ManifestError, match="GM/ISO/s2"):
            load_manifest(write_doc(tmp_path, doc, session_dir))

    def test_missing_file_names_entry(self, session_dir, tmp_path):
        doc = manifest_doc(session_dir)
        doc["entries"][1]["recording"] = "recordings/nope.bin"
        with pytest.raises(ManifestError, match="GM_ISO_s1"):
            load_manifest(write_doc(tmp_path, doc, session_dir))
        load_manifest(write_doc(tmp_path, doc, session_dir), check_files=False)

    @pytest.mark.parametrize("field,value", [("muscle", "BIC"), ("exercise", "RUN"), ("shift_index", 4),
                                             ("shift_index", True)])
    def test_bad_fields(self, session_dir, tmp_path, field, value):
        doc = manifest_doc(session_dir)
        doc["entries"][0][field] = value
        with pytest.raises(ManifestError, match=field):
            load_manifest(write_doc(tmp_path, doc, session_dir), check_files=False)

    def test_duplicate(self, session_dir, tmp_path):
        doc = manifest_doc(session_dir)
        doc["entries"].append(dict(doc["entries"][0]))
        with pytest.raises(ManifestError, match="duplicate"):
            load_manifest(write_doc(tmp_path, doc, session_dir))

    def test_schema_and_json(self, session_dir, tmp_path):
        doc = manifest_doc(session_dir)
        doc["schema_version"] = 2
        with pytest.raises(ManifestError, match="schema_version"):
            load_manifest(write_doc(tmp_path, doc, session_dir))
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        with pytest.raises(ManifestError, match="malformed"):
            load_manifest(bad)


class TestStratumKey:
    def test_parse(self):
        assert StratumKey.parse("mdf,GM,ISO") == StratumKey("mdf", "GM", "ISO")
        assert StratumKey.parse("iemg, combined").dirname == "iemg__combined"
        assert StratumKey("mdf", "GM", "ISO").dirname == "mdf__GM__ISO"

    @pytest.mark.parametrize("text", ["mdf", "nope,combined", "mdf,BIC,ISO", "mdf,GM"])
    def test_bad(self, text):
        with pytest.raises(ValueError):
            StratumKey.parse(text)


def test_csv_comment_round_trip(tmp_path):
    write_csv(tmp_path / "t.csv", ["a", "b"], [[1, 0.1], [2, float("nan")]], {"stratum": "x", "seed": 5})
    text = (tmp_path / "t.csv").read_text().splitlines()
    assert text[0] == "# stratum=x seed=5"
    rows, comment = read_csv(tmp_path / "t.csv")
    assert comment == {"stratum": "x", "seed": "5"}
    assert rows == [{"a": "1", "b": "0.1"}, {"a": "2", "b": "nan"}]


class TestOutputs:
    def test_tree(self, analysis_dir):
        assert (analysis_dir / "summary.json").is_file()
        for name in ("curve.csv", "curve_abs.csv", "fit.csv", "same_location.csv", "residuals.csv", "tests.csv",
                     "fraction_below.csv"):
            assert (analysis_dir / "strata" / "mdf__GM__ISO" / name).is_file(), name
        assert (analysis_dir / "strata" / "mdf__combined").is_dir()

    def test_summary(self, analysis_dir):
        s = json.loads((analysis_dir / "summary.json").read_text())
        assert s["failures"] == []
        assert [e["status"] for e in s["entries"]] == ["ok"] * 3
        assert s["config"]["n_resamples"] == 200 and "n_jobs" not in s["config"]
        assert len(s["strata"]) == 12

    def test_shifts_match_truth(self, analysis_dir, session_dir):
        truth = json.loads((session_dir / "truth.json").read_text())
        rows, _ = read_csv(analysis_dir / "shifts.csv")
        assert len(rows) == 2
        for r in rows:
            t = truth[f"GM_s{r['shift_index']}"]
            assert float(r["x_cm"]) == pytest.approx(t["x_cm"], abs=1e-6)
            assert float(r["theta_deg"]) == pytest.approx(t["theta_deg"], abs=1e-6)

    def test_curve_comment_carries_seed(self, analysis_dir):
        _, comment = read_csv(analysis_dir / "strata" / "mnf__GM__ISO" / "curve.csv")
        assert comment["stratum"] == "mnf__GM__ISO" and int(comment["seed"]) >= 0

    def test_deterministic(self, session_dir, analysis_dir, tmp_path):
        m = load_manifest(session_dir / "manifest.json")
        write_outputs(run_pipeline(m, PipelineConfig(**FAST, n_jobs=3)), tmp_path / "again")
        assert tree_digest(tmp_path / "again") == tree_digest(analysis_dir)

    def test_strata_filter(self, session_dir):
        keys = [StratumKey("mdf", "GM", "ISO")]
        res = run_pipeline(load_manifest(session_dir / "manifest.json"), PipelineConfig(**FAST), strata=keys)
        assert list(res.strata) == keys


def test_failure_isolation(session_dir, tmp_path):
    work = tmp_path / "s"
    shutil.copytree(session_dir, work)
    path = work / "recordings" / "P00_GM_ISO_s2.bin"
    rec = read_recording(path)
    write_recording(path, rec.with_data(np.zeros_like(rec.data)))
    res = run_pipeline(load_manifest(work / "manifest.json"), PipelineConfig(**FAST))
    clean = run_pipeline(load_manifest(session_dir / "manifest.json"), PipelineConfig(**FAST))
    for broken, ok in zip(res.entries[:2], clean.entries[:2]):
        for k in ("mdf", "max_env"):
            assert np.array_equal(broken.features[k], ok.features[k])
    failed = [f for f in res.failures if f["scope"] == "entry"]
    assert [f["id"] for f in failed] == ["GM_ISO_s2"]
    assert failed[0]["error_type"] == "InsufficientDataError"
    st = res.strata[StratumKey("mdf", "GM", "ISO")]
    assert st.n_recordings == 2 and st.n_shift_pairs == 1
    assert st.fit is not None and st.same_location is not None
    summary = write_outputs(res, tmp_path / "out")
    assert [e["status"] for e in summary["entries"]] == ["ok", "ok", "failed"]
