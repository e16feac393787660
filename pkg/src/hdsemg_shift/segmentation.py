"""Contraction segmentation: relative-threshold runs for isometric trials,
externally supplied boundaries for dynamic ones."""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptySegmentationError, FileFormatError, InvalidConfigurationError, InvalidInputError

METHODS = ("isometric-threshold", "manual")


@dataclass(frozen=True, order=True)
class ContractionSegment:
    """Half-open sample interval ``[start_sample, end_sample)``."""

    start_sample: int
    end_sample: int
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if not 0 <= self.start_sample < self.end_sample:
            raise InvalidInputError(f"invalid segment [{self.start_sample}, {self.end_sample})")

    @property
    def n_samples(self):
        return self.end_sample - self.start_sample


@dataclass(frozen=True)
class SegmentSet:
    rec_id: str
    segments: tuple
    method: str
    channel: int = None

    def __post_init__(self):
        segs = tuple(self.segments)
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown segmentation method {self.method!r}")
        for prev, nxt in zip(segs, segs[1:]):
            if nxt.start_sample < prev.end_sample:
                raise InvalidInputError("segments must be sorted and non-overlapping")
        object.__setattr__(self, "segments", segs)

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def check_within(self, n_samples):
        if self.segments and self.segments[-1].end_sample > n_samples:
            raise InvalidInputError(
                f"segment ends at {self.segments[-1].end_sample} beyond recording length {n_samples}"
            )


def threshold_runs(x, threshold, min_len=1):
    """Maximal runs where ``x > threshold``, as (start, end) half-open pairs."""
    above = np.concatenate([[False], x > threshold, [False]])
    edges = np.flatnonzero(np.diff(above.astype(np.int8)))
    starts, ends = edges[::2], edges[1::2]
    keep = (ends - starts) >= min_len
    return list(zip(starts[keep].tolist(), ends[keep].tolist()))


def _segment_trace(x, fs, threshold_frac, min_duration_s, edge):
    n = len(x)
    core = x[edge:n - edge] if n > 2 * edge else x
    peak = float(np.max(core))
    if not peak > 0:
        raise EmptySegmentationError("envelope is identically zero; no contraction to segment")
    min_len = max(int(round(min_duration_s * fs)), 1)
    runs = threshold_runs(x, threshold_frac * peak, min_len)
    if n > 2 * edge:
        runs = [(s, e) for s, e in runs if e > edge and s < n - edge]
    return [ContractionSegment(s, e, f"c{i + 1}") for i, (s, e) in enumerate(runs)]


def segment_isometric(env, channel_reduction="grid-mean", threshold_frac=0.2, min_duration_s=0.5):
    """Threshold the envelope at ``threshold_frac`` of its maximum.

    The maximum ignores the flagged warm-up edges; runs lying entirely in
    those edges are discarded. With ``channel_reduction="grid-mean"`` one
    :class:`SegmentSet` is returned for all channels; with ``"per-channel"``
    a list with one set per column of ``env``.
    """
    if not 0 < threshold_frac < 1:
        raise InvalidConfigurationError(f"threshold_frac must lie in (0, 1), got {threshold_frac}")
    if env.n_samples < 1:
        raise InvalidInputError("empty envelope")
    edge = int(env.edge_samples)
    if channel_reduction == "grid-mean":
        segs = _segment_trace(env.data.mean(axis=1), env.sample_rate, threshold_frac, min_duration_s, edge)
        if not segs:
            raise EmptySegmentationError(f"no run above {threshold_frac:.0%} of the envelope maximum")
        return SegmentSet(env.rec_id, segs, "isometric-threshold")
    if channel_reduction == "per-channel":
        out = []
        for col, ch in enumerate(env.channel_ids):
            segs = _segment_trace(env.data[:, col], env.sample_rate, threshold_frac, min_duration_s, edge)
            if not segs:
                raise EmptySegmentationError(f"channel {ch}: no run above threshold")
            out.append(SegmentSet(env.rec_id, segs, "isometric-threshold", channel=int(ch)))
        return out
    raise InvalidConfigurationError(f"channel_reduction must be 'grid-mean' or 'per-channel', got {channel_reduction!r}")


def apply_manual_segments(rec_id, boundaries, sample_rate, n_samples=None):
    """Convert ``(start_s, end_s[, label])`` boundaries to a manual SegmentSet."""
    if not boundaries:
        raise EmptySegmentationError(f"{rec_id}: no manual segment boundaries")
    segs = []
    prev_end = -np.inf
    for b in boundaries:
        start_s, end_s = float(b[0]), float(b[1])
        label = str(b[2]) if len(b) > 2 else ""
        if start_s < 0 or end_s <= start_s:
            raise InvalidInputError(f"{rec_id}: invalid boundary ({start_s}, {end_s})")
        if start_s < prev_end:
            raise InvalidInputError(f"{rec_id}: boundary ({start_s}, {end_s}) overlaps or is out of order")
        start, end = int(round(start_s * sample_rate)), int(round(end_s * sample_rate))
        if n_samples is not None and end > n_samples:
            raise InvalidInputError(f"{rec_id}: boundary end {end_s} s beyond recording duration")
        segs.append(ContractionSegment(start, end, label))
        prev_end = end_s
    return SegmentSet(rec_id, segs, "manual")


def read_boundaries_csv(path):
    """Read ``recording_id,start_s,end_s,label`` rows into {rec_id: [(start, end, label), ...]}."""
    out = {}
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"recording_id", "start_s", "end_s"} - set(reader.fieldnames or [])
            if missing:
                raise FileFormatError(f"{path}: missing columns {sorted(missing)}")
            for row in reader:
                out.setdefault(row["recording_id"], []).append(
                    (float(row["start_s"]), float(row["end_s"]), row.get("label") or "")
                )
    except (OSError, ValueError) as exc:
        raise FileFormatError(f"{path}: cannot parse segment boundaries ({exc})") from exc
    return out


def write_boundaries_csv(path, rows):
    """Write (recording_id, start_s, end_s, label) tuples."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["recording_id", "start_s", "end_s", "label"])
        for rid, s, e, label in rows:
            w.writerow([rid, f"{s:.6f}", f"{e:.6f}", label])


def segments_to_rows(segset, sample_rate):
    return [
        (segset.rec_id, s.start_sample / sample_rate, s.end_sample / sample_rate, s.label) for s in segset
    ]
