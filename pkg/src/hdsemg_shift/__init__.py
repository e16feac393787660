"""Electrode-shift analysis for high-density surface EMG grids.

Preprocessing, contraction segmentation, spectral and amplitude feature
extraction, scan-based shift recovery, and the distance / reapplication /
inter-session difference analyses, plus a synthetic motor-unit model that
gives every step a ground truth.
"""

__version__ = "0.1.0"

from .config import PipelineConfig
from .errors import AnalysisDegeneracyError, DataError, HDsEMGError
from .features import FEATURES, extract_features
from .grid_geometry import GridLayout, ShiftTransform, closest_channel_map, electrode_positions, extract_shift
from .recording import ChannelMask, EnvelopeRecording, RawRecording, read_recording, write_recording
from .segmentation import apply_manual_segments, segment_isometric
from .session_io import StratumKey, load_manifest, run_pipeline, write_outputs, write_session
from .signal_core import preprocess

__all__ = [
    "FEATURES",
    "AnalysisDegeneracyError",
    "ChannelMask",
    "DataError",
    "EnvelopeRecording",
    "GridLayout",
    "HDsEMGError",
    "PipelineConfig",
    "RawRecording",
    "ShiftTransform",
    "StratumKey",
    "apply_manual_segments",
    "closest_channel_map",
    "electrode_positions",
    "extract_features",
    "extract_shift",
    "load_manifest",
    "preprocess",
    "read_recording",
    "run_pipeline",
    "segment_isometric",
    "write_outputs",
    "write_recording",
    "write_session",
]
