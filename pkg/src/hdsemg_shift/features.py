"""Per-contraction spectral and envelope features and their contraction averages."""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import signal
from scipy.integrate import trapezoid
from sklearn.base import BaseEstimator

from .errors import FileFormatError, InsufficientDataError, InvalidInputError, UndefinedFeatureError

FEATURES = ("mnf", "mdf", "pkf", "total_power", "iemg", "max_env")
FREQUENCY_FEATURES = ("mnf", "mdf", "pkf")
AMPLITUDE_FEATURES = ("total_power", "iemg", "max_env")
FEATURE_COLUMNS = {
    "mnf": "mnf_hz",
    "mdf": "mdf_hz",
    "pkf": "pkf_hz",
    "total_power": "total_power_v2",
    "iemg": "iemg_vs",
    "max_env": "max_env_v",
}


@dataclass(frozen=True, eq=False)
class PowerSpectrum:
    """One-sided PSD on a uniform grid. ``density`` is V^2/Hz and may be
    (n_freqs,) or (n_freqs, n_channels)."""

    freqs: np.ndarray
    density: np.ndarray
    delta_f: float
    contraction: int = None

    def __post_init__(self):
        if np.any(self.density < 0):
            raise InvalidInputError("PSD density must be nonnegative")


@dataclass(frozen=True)
class ContractionFeatures:
    channel: int
    contraction: int
    mnf: float
    mdf: float
    pkf: float
    total_power: float
    iemg: float
    max_env: float

    def as_dict(self):
        return {k: getattr(self, k) for k in FEATURES}


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Contraction-averaged features: ``values[name]`` is aligned with ``channel_ids``."""

    channel_ids: np.ndarray
    values: dict
    n_contractions: int
    metadata: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.values[name]

    def lookup(self, name, channel):
        idx = np.searchsorted(self.channel_ids, channel)
        if idx >= len(self.channel_ids) or self.channel_ids[idx] != channel:
            raise KeyError(channel)
        return self.values[name][idx]

    def scaled(self, factor):
        """Features of the same recording scaled by a positive amplitude ``factor``."""
        vals = dict(self.values)
        vals["total_power"] = vals["total_power"] * factor**2
        vals["iemg"] = vals["iemg"] * factor
        vals["max_env"] = vals["max_env"] * factor
        return FeatureSet(self.channel_ids, vals, self.n_contractions, dict(self.metadata))


def _column(rec, channel):
    hits = np.flatnonzero(rec.channel_ids == channel)
    if not len(hits):
        raise InvalidInputError(f"channel {channel} is not present (masked?)")
    return int(hits[0])


def _welch(x, fs, window_s, overlap_frac):
    nperseg = int(round(window_s * fs))
    if x.shape[0] < nperseg:
        raise InsufficientDataError(
            f"segment of {x.shape[0]} samples is shorter than one {window_s * 1e3:.0f} ms window"
        )
    freqs, S = signal.welch(
        x,
        fs=fs,
        window="hamming",
        nperseg=nperseg,
        noverlap=int(round(overlap_frac * nperseg)),
        detrend="constant",
        scaling="density",
        return_onesided=True,
        axis=0,
    )
    return freqs, np.maximum(S, 0.0), fs / nperseg


def welch_psd(rec, seg, channel=None, window_s=0.2, overlap_frac=0.5):
    """Hamming-window Welch PSD of one segment.

    ``channel`` selects one grid channel; ``None`` returns every column.
    """
    x = rec.data[seg.start_sample:seg.end_sample]
    if channel is not None:
        x = x[:, _column(rec, channel)]
    freqs, S, df = _welch(x, rec.sample_rate, window_s, overlap_frac)
    return PowerSpectrum(freqs=freqs, density=S, delta_f=df)


def total_power(psd):
    return np.sum(psd.density, axis=0) * psd.delta_f


def _require_power(P):
    if np.any(np.asarray(P) <= 0):
        raise UndefinedFeatureError("spectrum has zero total power")


def median_frequency(psd):
    """Smallest grid frequency at which cumulative power reaches half the total."""
    cum = np.cumsum(psd.density, axis=0) * psd.delta_f
    P = cum[-1]
    _require_power(P)
    idx = np.argmax(cum >= 0.5 * P, axis=0)
    return psd.freqs[idx]


def mean_frequency(psd):
    P = total_power(psd)
    _require_power(P)
    f = psd.freqs if psd.density.ndim == 1 else psd.freqs[:, None]
    return np.sum(f * psd.density, axis=0) * psd.delta_f / P


def peak_frequency(psd):
    """Grid frequency of maximal density; ties resolve to the lowest frequency."""
    if np.any(np.max(psd.density, axis=0) <= 0):
        raise UndefinedFeatureError("spectrum is identically zero")
    return psd.freqs[np.argmax(psd.density, axis=0)]


def _segment_values(env, seg, channel):
    x = env.data if channel is None else env.data[:, [_column(env, channel)]]
    if seg.end_sample > env.n_samples:
        raise InvalidInputError("segment extends beyond the envelope")
    return x


def integrated_emg(env, seg, channel=None):
    """Trapezoidal integral of the envelope over the segment, V*s.

    The half-open interval ``[start, end)`` spans ``(end - start) / fs``
    seconds, so the closing sample at ``end`` is used when it exists.
    """
    x = _segment_values(env, seg, channel)
    stop = min(seg.end_sample + 1, env.n_samples)
    out = trapezoid(x[seg.start_sample:stop], dx=1.0 / env.sample_rate, axis=0)
    return out if channel is None else float(out[0])


def max_envelope(env, seg, channel=None):
    x = _segment_values(env, seg, channel)
    out = np.max(x[seg.start_sample:seg.end_sample], axis=0)
    return out if channel is None else float(out[0])


def average_features(per_contraction):
    """Contraction average of one channel's :class:`ContractionFeatures`."""
    per_contraction = list(per_contraction)
    if not per_contraction:
        raise InvalidInputError("no contractions to average")
    channels = {c.channel for c in per_contraction}
    if len(channels) != 1:
        raise InvalidInputError(f"contractions from several channels: {sorted(channels)}")
    vals = {k: np.array([np.mean([getattr(c, k) for c in per_contraction])]) for k in FEATURES}
    return FeatureSet(np.array(sorted(channels)), vals, len(per_contraction))


class FeatureExtractor(BaseEstimator):
    """Extract the six features for every (channel, contraction) pair.

    Parameters
    ----------
    window_s : float
        Welch window length in seconds (Hamming taper).
    overlap_frac : float
        Fractional overlap between consecutive Welch windows.
    """

    def __init__(self, window_s=0.2, overlap_frac=0.5):
        self.window_s = window_s
        self.overlap_frac = overlap_frac

    def transform(self, filtered, env, segments):
        """Return ``(per_contraction, feature_set)``.

        ``segments`` is a SegmentSet shared by all channels. ``filtered`` and
        ``env`` must carry the same channels.
        """
        if not np.array_equal(filtered.channel_ids, env.channel_ids):
            raise InvalidInputError("filtered and envelope recordings carry different channels")
        if not len(segments):
            raise InvalidInputError("feature extraction needs at least one segment")
        segments.check_within(filtered.n_samples)
        table = {k: [] for k in FEATURES}
        for seg in segments:
            psd = welch_psd(filtered, seg, None, self.window_s, self.overlap_frac)
            table["total_power"].append(total_power(psd))
            table["mdf"].append(median_frequency(psd))
            table["mnf"].append(mean_frequency(psd))
            table["pkf"].append(peak_frequency(psd))
            table["iemg"].append(integrated_emg(env, seg))
            table["max_env"].append(max_envelope(env, seg))
        stacked = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}  # (n_contr, n_ch)
        per_contraction = [
            ContractionFeatures(int(ch), c, *(float(stacked[k][c, j]) for k in FEATURES))
            for j, ch in enumerate(filtered.channel_ids)
            for c in range(len(segments))
        ]
        fs = FeatureSet(
            channel_ids=filtered.channel_ids.copy(),
            values={k: v.mean(axis=0) for k, v in stacked.items()},
            n_contractions=len(segments),
            metadata=dict(filtered.metadata),
        )
        return per_contraction, fs


def extract_features(filtered, env, segments, window_s=0.2, overlap_frac=0.5):
    return FeatureExtractor(window_s, overlap_frac).transform(filtered, env, segments)


_CONTEXT = ("session", "muscle", "exercise", "shift_index")


def _context(meta):
    return [meta.get("session", meta.get("participant", "")), meta.get("muscle", ""),
            meta.get("exercise", ""), meta.get("shift_index", "")]


def write_features_csv(path, per_contraction, metadata):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*_CONTEXT, "channel", "contraction", *FEATURE_COLUMNS.values()])
        ctx = _context(metadata)
        for c in per_contraction:
            w.writerow([*ctx, c.channel, c.contraction, *(repr(float(getattr(c, k))) for k in FEATURES)])


def write_averaged_csv(path, feature_set):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*_CONTEXT, "channel", "n_contractions", *FEATURE_COLUMNS.values()])
        ctx = _context(feature_set.metadata)
        for j, ch in enumerate(feature_set.channel_ids):
            w.writerow([*ctx, int(ch), feature_set.n_contractions,
                        *(repr(float(feature_set.values[k][j])) for k in FEATURES)])


def read_averaged_csv(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise FileFormatError(f"{path}: no feature rows")
        ids = np.array([int(r["channel"]) for r in rows])
        vals = {k: np.array([float(r[col]) for r in rows]) for k, col in FEATURE_COLUMNS.items()}
        meta = {k: rows[0][k] for k in _CONTEXT}
        n_c = int(rows[0]["n_contractions"])
    except (OSError, KeyError, ValueError) as exc:
        raise FileFormatError(f"{path}: cannot parse averaged features ({exc})") from exc
    order = np.argsort(ids)
    return FeatureSet(ids[order], {k: v[order] for k, v in vals.items()}, n_c, meta)
