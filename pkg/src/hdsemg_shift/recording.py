"""Recording containers and the on-disk recording format.

File layout (little-endian throughout)::

    {"schema_version": 1, "kind": "raw", "sample_rate_hz": 2000.0, ...}\n
    <float32 samples, channel-major: ch0[0..n), ch1[0..n), ...>

The first line is UTF-8 JSON terminated by a single ``\\n``. The sample
count is implied by the payload length.
"""

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import FileFormatError, InvalidInputError
from .grid_geometry import GridLayout

SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class RawRecording:
    """Multichannel time series bound to an electrode grid.

    ``data`` has shape (n_samples, n_channels) in volts. ``channel_ids`` maps
    columns to grid channels (row-major index) and shrinks when a
    :class:`ChannelMask` is applied.
    """

    data: np.ndarray
    sample_rate: float
    grid: GridLayout = field(default_factory=GridLayout)
    channel_ids: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise InvalidInputError(f"recording data must be (n_samples>=1, n_channels>=1), got {data.shape}")
        if not self.sample_rate > 0:
            raise InvalidInputError(f"sample rate must be positive, got {self.sample_rate}")
        ids = np.arange(data.shape[1]) if self.channel_ids is None else np.asarray(self.channel_ids, dtype=np.int64)
        if ids.shape != (data.shape[1],):
            raise InvalidInputError("channel_ids length must match channel count")
        if len(np.unique(ids)) != len(ids) or ids.min() < 0 or ids.max() >= self.grid.n_channels:
            raise InvalidInputError(f"channel_ids must be unique indices into a {self.grid.rows}x{self.grid.cols} grid")
        if self.channel_ids is None and data.shape[1] != self.grid.n_channels:
            raise InvalidInputError(
                f"{data.shape[1]} channels do not fill a {self.grid.rows}x{self.grid.cols} grid"
            )
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_ids", ids)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    @property
    def n_samples(self):
        return self.data.shape[0]

    @property
    def n_channels(self):
        return self.data.shape[1]

    @property
    def rec_id(self):
        return str(self.metadata.get("rec_id", ""))

    def with_data(self, data):
        return replace(self, data=data)


@dataclass(frozen=True, eq=False)
class EnvelopeRecording(RawRecording):
    """Rectified, low-passed recording. All samples are >= 0.

    ``edge_samples`` marks the filter warm-up region at each end; it is
    flagged, not removed.
    """

    source_id: str = ""
    edge_samples: int = 0

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.data < 0):
            raise InvalidInputError("envelope samples must be nonnegative")


@dataclass(frozen=True)
class ChannelMask:
    """Open-channel flags over grid channels.

    ``first_window`` holds, per channel, the start sample of the first
    window whose RMS fell below the floor, or -1.
    """

    open: np.ndarray
    first_window: np.ndarray = None

    def __post_init__(self):
        is_open = np.asarray(self.open, dtype=bool)
        object.__setattr__(self, "open", is_open)
        if self.first_window is None:
            object.__setattr__(self, "first_window", np.where(is_open, 0, -1))
        else:
            object.__setattr__(self, "first_window", np.asarray(self.first_window, dtype=np.int64))

    @property
    def closed_ids(self):
        return np.flatnonzero(~self.open)

    @property
    def n_open(self):
        return int(self.open.sum())

    def apply(self, rec):
        """Drop open channels from ``rec``. Applying twice equals applying once."""
        if len(self.open) != rec.grid.n_channels:
            raise InvalidInputError("mask length must equal the grid channel count")
        keep = ~self.open[rec.channel_ids]
        if not keep.any():
            raise InvalidInputError("every channel is open; nothing left to analyse")
        return replace(rec, data=rec.data[:, keep], channel_ids=rec.channel_ids[keep])

    def to_json(self):
        return {"open": self.open.astype(int).tolist(), "first_window": self.first_window.tolist()}

    @classmethod
    def from_json(cls, doc):
        return cls(open=np.asarray(doc["open"], dtype=bool), first_window=np.asarray(doc["first_window"]))


def _header(rec):
    head = {
        "schema_version": SCHEMA_VERSION,
        "kind": "envelope" if isinstance(rec, EnvelopeRecording) else "raw",
        "sample_rate_hz": rec.sample_rate,
        "n_channels": rec.n_channels,
        "grid": {"rows": rec.grid.rows, "cols": rec.grid.cols, "pitch_cm": rec.grid.pitch_cm},
        "metadata": rec.metadata,
    }
    if rec.n_channels != rec.grid.n_channels or np.any(rec.channel_ids != np.arange(rec.n_channels)):
        head["channel_ids"] = rec.channel_ids.tolist()
    if isinstance(rec, EnvelopeRecording):
        head["source_id"] = rec.source_id
        head["edge_samples"] = rec.edge_samples
    return head


def write_recording(path, rec):
    path = Path(path)
    line = json.dumps(_header(rec), sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(rec.data.T, dtype="<f4").tobytes()
    path.write_bytes(line + b"\n" + payload)
    return path


def _parse_header(path, line):
    try:
        head = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FileFormatError(f"{path}: malformed header ({exc})") from exc
    if not isinstance(head, dict) or head.get("schema_version") != SCHEMA_VERSION:
        found = head.get("schema_version") if isinstance(head, dict) else None
        raise FileFormatError(f"{path}: unsupported schema_version {found!r}")
    try:
        n_ch = int(head["n_channels"])
        fs = float(head["sample_rate_hz"])
        grid = GridLayout(**head["grid"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: header field missing or invalid ({exc})") from exc
    return head, n_ch, fs, grid


def read_recording_header(path):
    """Parse only the JSON header line of a recording file."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            line = fh.readline()
    except OSError as exc:
        raise FileFormatError(f"{path}: cannot read recording ({exc})") from exc
    if not line.endswith(b"\n"):
        raise FileFormatError(f"{path}: missing JSON header line")
    return _parse_header(path, line[:-1])[0]


def read_recording(path):
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FileFormatError(f"{path}: cannot read recording ({exc})") from exc
    nl = blob.find(b"\n")
    if nl < 0:
        raise FileFormatError(f"{path}: missing JSON header line")
    head, n_ch, fs, grid = _parse_header(path, blob[:nl])
    payload = blob[nl + 1:]
    if n_ch < 1 or len(payload) % (4 * n_ch):
        raise FileFormatError(f"{path}: payload of {len(payload)} bytes does not hold {n_ch} float32 channels")
    data = np.frombuffer(payload, dtype="<f4").reshape(n_ch, -1).T.astype(np.float64)
    kwargs = dict(
        data=data,
        sample_rate=fs,
        grid=grid,
        channel_ids=head.get("channel_ids"),
        metadata=head.get("metadata", {}),
    )
    try:
        if head.get("kind") == "envelope":
            return EnvelopeRecording(
                **kwargs, source_id=head.get("source_id", ""), edge_samples=int(head.get("edge_samples", 0))
            )
        return RawRecording(**kwargs)
    except InvalidInputError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc


def read_csv_recording(path, sample_rate, grid=None, metadata=None):
    """Read a small fixture: header row of channel labels, one row per sample."""
    grid = grid or GridLayout()
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise FileFormatError(f"{path}: need a header row and at least one sample row")
    labels = rows[0]
    try:
        data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise FileFormatError(f"{path}: non-numeric sample ({exc})") from exc
    if data.shape[1] != len(labels):
        raise FileFormatError(f"{path}: ragged rows")
    meta = dict(metadata or {})
    meta.setdefault("channel_labels", labels)
    return RawRecording(data=data, sample_rate=sample_rate, grid=grid, metadata=meta)
