import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdsemg_shift.analysis import fit_inverse_exponential, intra_pairwise
from hdsemg_shift.config import PipelineConfig
from hdsemg_shift.errors import InvalidConfigurationError
from hdsemg_shift.grid_geometry import GridLayout, ShiftTransform, extract_shift
from hdsemg_shift.session_io import process_recording
from hdsemg_shift.synthetic import (
    GainLaw,
    MotorUnit,
    Pose,
    ScenarioConfig,
    band_energy_fraction,
    exercise_activation,
    load_scenario,
    simulate_recording,
    simulate_session,
    stationary_motor_units,
    synth_scan_triple,
)

LAYOUT = GridLayout()
# noiseless recordings have no rest-period floor to compare against
NOISELESS = PipelineConfig(open_rms_floor_v=0.0)


def quiet(units, iso_scale=0.3, seed=3, **kw):
    win, dur = exercise_activation("ISO", iso_scale)
    return ScenarioConfig(units, duration_s=dur, noise_sigma_v=0.0, powerline_amp_v=0.0, seed=seed,
                          activation=win, **kw)


def features_of(cfg):
    fs, _, _ = process_recording(simulate_recording(cfg, LAYOUT), NOISELESS)
    return fs


def spread(values):
    return (np.max(values) - np.min(values)) / np.mean(values)


def test_no_units_no_noise_is_zero():
    rec = simulate_recording(ScenarioConfig(duration_s=1.0, noise_sigma_v=0, powerline_amp_v=0), LAYOUT)
    assert rec.data.shape == (2000, 64)
    assert not np.any(rec.data)


def test_bit_identical_for_same_seed():
    units = stationary_motor_units(1, 1.0, density_per_cm2=0.5)
    cfg = ScenarioConfig(units, duration_s=2.0, seed=11, reapplication=GainLaw("uniform", 0.9, 1.1, 4))
    a = simulate_recording(cfg, LAYOUT).data
    b = simulate_recording(cfg, LAYOUT).data
    assert a.tobytes() == b.tobytes()
    c = simulate_recording(ScenarioConfig(units, duration_s=2.0, seed=12), LAYOUT).data
    assert a.tobytes() != c.tobytes()


def test_single_unit_decay_ratio():
    # channel 0 sits on the unit, channel 3 is 3 cm away
    unit = MotorUnit((0.0, 0.0), 12.0, 1e-4, 6.0, 1.0)
    fs = features_of(quiet((unit,)))
    ratio = fs.lookup("max_env", 3) / fs.lookup("max_env", 0)
    assert ratio == pytest.approx(math.exp(-3), rel=1e-6)


def test_single_unit_frequency_features_identical_everywhere():
    fs = features_of(quiet((MotorUnit((3.5, 3.5), 12.0, 1e-4, 6.0, 1.0),)))
    for k in ("mnf", "mdf", "pkf"):
        assert spread(fs[k]) < 1e-9
    assert spread(fs["max_env"]) > 1.0


@pytest.fixture(scope="module")
def long_field():
    units = stationary_motor_units(0, 2.0, density_per_cm2=1.0)
    return features_of(quiet(units, iso_scale=2.0))


@pytest.mark.parametrize("name", ["mnf", "mdf"])
def test_many_unit_frequency_features_within_two_percent(long_field, name):
    assert spread(long_field[name]) < 0.02


@pytest.mark.xfail(reason="peak of a broad spectrum jumps between 5 Hz bins from Welch variance", strict=False)
def test_many_unit_peak_frequency_within_two_percent(long_field):
    assert spread(long_field["pkf"]) < 0.02


@pytest.fixture(scope="module")
def lambda_by_decay():
    cache = {}

    def median_lambda(decay):
        if decay not in cache:
            lams = []
            for seed in range(5):
                units = stationary_motor_units(seed, decay, density_per_cm2=1.0)
                fs = features_of(quiet(units, iso_scale=0.5, seed=seed + 10))
                fit = fit_inverse_exponential(intra_pairwise(fs, LAYOUT, feature_names=("max_env",))["max_env"])
                lams.append(fit.length_scale_lambda)
            cache[decay] = float(np.median(lams))
        return cache[decay]

    return median_lambda


def test_length_scale_tracks_decay_length(lambda_by_decay):
    lams = [lambda_by_decay(d) for d in (0.5, 1.0, 2.0)]
    assert np.all(np.diff(lams) > 0), lams
    assert lams[0] < 1.0 < lams[2]


@pytest.mark.xfail(reason="a 4 cm decay barely saturates across a 7 cm grid, so only A/lambda is identified",
                   strict=False)
def test_length_scale_tracks_long_decay(lambda_by_decay):
    assert lambda_by_decay(4.0) > lambda_by_decay(2.0) * 1.2


@pytest.mark.parametrize("shift", [ShiftTransform(2, -1, 15), ShiftTransform(0, 0, 0), ShiftTransform(-2.5, 2.5, -30)])
def test_scan_triple_recovers_shift(shift):
    est = extract_shift(*synth_scan_triple(LAYOUT, shift, seed=5), layout=LAYOUT)
    assert (est.x_cm, est.y_cm, est.theta_deg) == pytest.approx((shift.x_cm, shift.y_cm, shift.theta_deg), abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(x=st.floats(-3, 3), y=st.floats(-3, 3), th=st.floats(-60, 60), seed=st.integers(0, 2**31),
       px=st.floats(-5, 5), pth=st.floats(-180, 180))
def test_scan_triple_round_trip_any_pose(x, y, th, seed, px, pth):
    shift = ShiftTransform(x, y, th)
    scans = synth_scan_triple(LAYOUT, shift, seed=seed, pre_pose=Pose(pth, px, 0.0))
    est = extract_shift(*scans, layout=LAYOUT)
    assert est.x_cm == pytest.approx(x, abs=1e-6)
    assert est.y_cm == pytest.approx(y, abs=1e-6)
    assert est.theta_deg == pytest.approx(th, abs=1e-6)


def test_cylinder_radius_guard():
    with pytest.raises(InvalidConfigurationError):
        synth_scan_triple(LAYOUT, ShiftTransform(), surface=("cylinder", 3.0))


def test_scenario_json_round_trip(tmp_path):
    cfg = ScenarioConfig(
        stationary_motor_units(2, 1.0, density_per_cm2=0.2), duration_s=3.0, shift=ShiftTransform(1, 2, 3),
        reapplication=GainLaw("uniform", 0.8, 1.2, 9), seed=4, activation=((0.5, 2.5),), pose=Pose(10, 1, 1),
        metadata={"muscle": "GM"},
    )
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(cfg.to_json()))
    back = load_scenario(path)
    assert back == cfg
    assert simulate_recording(back).data.tobytes() == simulate_recording(cfg).data.tobytes()


def test_scenario_requires_seed():
    with pytest.raises(InvalidConfigurationError):
        ScenarioConfig(seed=None)


class TestMotorUnit:
    def test_band_fraction(self):
        assert band_energy_fraction(6.0) > 0.9

    @pytest.mark.parametrize("dur", [0.5, 60.0])
    def test_out_of_band_waveform_rejected(self, dur):
        with pytest.raises(InvalidConfigurationError):
            MotorUnit((0, 0), duration_ms=dur)

    def test_nonpositive_rejected(self):
        with pytest.raises(InvalidConfigurationError):
            MotorUnit((0, 0), decay_length_cm=0)


class TestGainLaw:
    def test_none_is_unity(self):
        assert np.all(GainLaw().draw(64) == 1)

    def test_uniform_range_and_seed(self):
        g = GainLaw("uniform", 0.85, 1.15, 3).draw(64)
        assert np.all((g >= 0.85) & (g <= 1.15))
        assert np.array_equal(g, GainLaw("uniform", 0.85, 1.15, 3).draw(64))

    def test_bad_bounds(self):
        with pytest.raises(InvalidConfigurationError):
            GainLaw("uniform", 1.2, 1.1)

    def test_gain_scales_channels(self):
        unit = MotorUnit((3.0, 3.0), 12.0, 1e-4, 6.0, 1.0)
        law = GainLaw("uniform", 0.5, 2.0, 1)
        base = simulate_recording(quiet((unit,)), LAYOUT).data
        scaled = simulate_recording(quiet((unit,), reapplication=law), LAYOUT).data
        np.testing.assert_allclose(scaled, base * law.draw(64)[None, :], rtol=1e-12, atol=1e-20)


def test_exercise_windows():
    win, dur = exercise_activation("ISO", 1.0)
    assert len(win) == 3 and win[0] == (1.5, 11.5)
    assert dur == pytest.approx(win[-1][1] + 1.5)
    assert len(exercise_activation("STS")[0]) == 4
    assert len(exercise_activation("TUG")[0]) == 10
    with pytest.raises(InvalidConfigurationError):
        exercise_activation("RUN")


def test_session_layout_and_true_shifts():
    entries = simulate_session(0, muscles=("GM",), exercises=("ISO", "STS"), n_shifts=2, n_units=30)
    assert [e.rec_id for e in entries] == [
        "P00_GM_ISO_s0", "P00_GM_ISO_s1", "P00_GM_ISO_s2", "P00_GM_STS_s0", "P00_GM_STS_s1", "P00_GM_STS_s2",
    ]
    for e in entries:
        if e.shift_index:
            est = extract_shift(*e.scans, layout=LAYOUT)
            assert est.x_cm == pytest.approx(e.true_shift.x_cm, abs=1e-6)
            assert est.theta_deg == pytest.approx(e.true_shift.theta_deg, abs=1e-6)
    assert entries[3].boundaries is not None and entries[0].boundaries is None
