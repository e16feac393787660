import numpy as np
import pytest

from hdsemg_shift.grid_geometry import GridLayout
from hdsemg_shift.recording import RawRecording

FS = 2000.0


def tone(f, duration_s=4.0, amp=1.0, fs=FS):
    t = np.arange(int(duration_s * fs)) / fs
    return amp * np.sin(2 * np.pi * f * t)


def grid_recording(columns, fs=FS, layout=None, **metadata):
    """Wrap a (n_samples, k) array as a recording on a 1 x k grid."""
    X = np.asarray(columns, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    layout = layout or GridLayout(rows=1, cols=X.shape[1])
    return RawRecording(X, fs, layout, metadata=metadata)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_acceptance_lines = []


def record_acceptance(result):
    _acceptance_lines.append(result.line())


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


FAST = {"n_resamples": 200}


@pytest.fixture(scope="session")
def session_dir(tmp_path_factory):
    """Small synthetic session: GM isometric trials at three placements."""
    from hdsemg_shift.session_io import write_session
    from hdsemg_shift.synthetic import simulate_session

    out = tmp_path_factory.mktemp("session")
    write_session(simulate_session(0, muscles=("GM",), exercises=("ISO",), n_shifts=2, n_units=60), out)
    return out


@pytest.fixture(scope="session")
def analysis_dir(session_dir, tmp_path_factory):
    from hdsemg_shift.config import PipelineConfig
    from hdsemg_shift.session_io import load_manifest, run_pipeline, write_outputs

    out = tmp_path_factory.mktemp("analysis")
    result = run_pipeline(load_manifest(session_dir / "manifest.json"), PipelineConfig(**FAST))
    write_outputs(result, out)
    return out
