import json

import pytest

from hdsemg_shift.config import PipelineConfig
from hdsemg_shift.errors import InvalidConfigurationError


def test_defaults():
    c = PipelineConfig()
    assert (c.bandpass_low_hz, c.bandpass_high_hz, c.notch_base_hz) == (20.0, 450.0, 60.0)
    assert c.seed == 0 and c.n_jobs == 1


def test_json_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 7, "include_self": True, "threshold_frac": 0.3}))
    c = PipelineConfig.from_file(p)
    assert (c.seed, c.include_self, c.threshold_frac) == (7, True, 0.3)


def test_key_value_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nseed = 9\n\ninclude_self = yes  # trailing\nchannel_reduction = per-channel\n")
    c = PipelineConfig.from_file(p)
    assert (c.seed, c.include_self, c.channel_reduction) == (9, True, "per-channel")


@pytest.mark.parametrize("text,value", [("true", True), ("OFF", False), ("1", True), ("no", False)])
def test_bool_parsing(text, value):
    assert PipelineConfig(include_self=text).include_self is value


@pytest.mark.parametrize("bad", [{"sede": 1}, {"include_self": "maybe"}, {"seed": -1}, {"n_jobs": 0},
                                 {"confidence": 1.0}, {"channel_reduction": "max"}, {"alpha": "x"}])
def test_rejected(bad):
    with pytest.raises(InvalidConfigurationError):
        PipelineConfig.from_mapping(bad)


def test_bad_line(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("seed 3\n")
    with pytest.raises(InvalidConfigurationError, match=":1:"):
        PipelineConfig.from_file(p)


def test_hash_ignores_execution_settings():
    a = PipelineConfig()
    assert a.config_hash() == a.replace(n_jobs=8).config_hash()
    assert a.config_hash() != a.replace(seed=1).config_hash()
    assert "n_jobs" in a.to_dict(include_execution=True) and "n_jobs" not in a.to_dict()
