"""Zero-phase preprocessing of multichannel sEMG.

The estimators follow the scikit-learn transformer protocol on arrays of
shape (n_samples, n_channels); the module-level functions apply them to
:class:`~hdsemg_shift.recording.RawRecording` objects.
"""

import numpy as np
from scipy import signal
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_band, check_cutoff, check_even_order, check_sample_rate, check_signal
from .config import PipelineConfig
from .errors import InsufficientDataError, InvalidConfigurationError
from .recording import ChannelMask, EnvelopeRecording

EDGE_S = 0.5


def _filtfilt(sos, X):
    # default padlen can exceed very short inputs
    padlen = min(3 * (2 * len(sos) + 1), X.shape[0] - 1)
    return signal.sosfiltfilt(sos, X, axis=0, padlen=max(padlen, 0))


class BandpassFilter(TransformerMixin, BaseEstimator):
    """Butterworth band-pass applied forward and backward.

    ``order`` is the order of the Butterworth prototype handed to the
    design routine (as in ``scipy.signal.butter(order, ...)``). The
    zero-phase gain is the squared single-pass magnitude.
    """

    def __init__(self, sample_rate=2000.0, low_hz=20.0, high_hz=450.0, order=8):
        self.sample_rate = sample_rate
        self.low_hz = low_hz
        self.high_hz = high_hz
        self.order = order

    def fit(self, X=None, y=None):
        fs = check_sample_rate(self.sample_rate)
        check_band(self.low_hz, self.high_hz, fs)
        order = check_even_order(self.order)
        self.sos_ = signal.butter(order, [self.low_hz, self.high_hz], btype="bandpass", fs=fs, output="sos")
        return self

    def transform(self, X):
        check_is_fitted(self, "sos_")
        return _filtfilt(self.sos_, check_signal(X))

    def gain(self, freqs):
        """Zero-phase magnitude response at ``freqs`` (Hz)."""
        check_is_fitted(self, "sos_")
        _, h = signal.sosfreqz(self.sos_, worN=np.atleast_1d(freqs), fs=self.sample_rate)
        return np.abs(h) ** 2


def powerline_harmonics(base_hz=60.0, max_hz=450.0):
    n = int(np.floor(max_hz / base_hz + 1e-9))
    return base_hz * np.arange(1, n + 1)


class PowerlineNotch(TransformerMixin, BaseEstimator):
    """Bank of second-order notches at every harmonic of ``base_hz`` up to ``max_hz``.

    Each notch has a -3 dB bandwidth of ``width_hz`` (single pass).
    """

    def __init__(self, sample_rate=2000.0, base_hz=60.0, width_hz=2.0, order=2, max_hz=450.0):
        self.sample_rate = sample_rate
        self.base_hz = base_hz
        self.width_hz = width_hz
        self.order = order
        self.max_hz = max_hz

    def fit(self, X=None, y=None):
        fs = check_sample_rate(self.sample_rate)
        if not self.width_hz > 0:
            raise InvalidConfigurationError(f"notch width must be positive, got {self.width_hz}")
        if self.order != 2:
            raise InvalidConfigurationError("only second-order notch sections are supported")
        if not self.base_hz > 0:
            raise InvalidConfigurationError(f"base frequency must be positive, got {self.base_hz}")
        centers = powerline_harmonics(self.base_hz, self.max_hz)
        if len(centers) and centers[-1] >= fs / 2:
            raise InvalidConfigurationError(
                f"harmonic {centers[-1]} Hz is not below Nyquist ({fs / 2} Hz); lower max_hz"
            )
        sections = []
        for f0 in centers:
            b, a = signal.iirnotch(f0, f0 / self.width_hz, fs=fs)
            sections.append(np.concatenate([b, a]))
        self.centers_ = centers
        self.sos_ = np.array(sections).reshape(-1, 6)
        return self

    def transform(self, X):
        check_is_fitted(self, "sos_")
        X = check_signal(X)
        if not len(self.sos_):
            return X.copy()
        return _filtfilt(self.sos_, X)

    def gain(self, freqs):
        check_is_fitted(self, "sos_")
        freqs = np.atleast_1d(freqs)
        if not len(self.sos_):
            return np.ones_like(freqs, dtype=float)
        _, h = signal.sosfreqz(self.sos_, worN=freqs, fs=self.sample_rate)
        return np.abs(h) ** 2


class EnvelopeExtractor(TransformerMixin, BaseEstimator):
    """Full-wave rectification followed by a zero-phase Butterworth low-pass.

    Forward-backward filtering can ring slightly below zero next to sharp
    offsets; those samples are clamped to 0.
    """

    def __init__(self, sample_rate=2000.0, cutoff_hz=2.0, order=8):
        self.sample_rate = sample_rate
        self.cutoff_hz = cutoff_hz
        self.order = order

    def fit(self, X=None, y=None):
        fs = check_sample_rate(self.sample_rate)
        check_cutoff(self.cutoff_hz, fs)
        order = check_even_order(self.order)
        self.sos_ = signal.butter(order, self.cutoff_hz, btype="lowpass", fs=fs, output="sos")
        return self

    def transform(self, X):
        check_is_fitted(self, "sos_")
        env = _filtfilt(self.sos_, np.abs(check_signal(X)))
        return np.maximum(env, 0.0)


def windowed_rms(X, window):
    """RMS of every length-``window`` sliding window, shape (n_samples - window + 1, n_channels)."""
    sq = np.vstack([np.zeros((1, X.shape[1])), np.cumsum(X * X, axis=0)])
    ms = (sq[window:] - sq[:-window]) / window
    return np.sqrt(np.maximum(ms, 0.0))


class OpenChannelDetector(TransformerMixin, BaseEstimator):
    """Flag channels whose RMS drops below ``rms_floor_v`` in any sliding window.

    A channel is open if any window of ``window_s`` seconds is below the
    floor, so channels that go dead for only part of a recording are caught.
    ``transform`` drops the open columns.
    """

    def __init__(self, sample_rate=2000.0, window_s=0.5, rms_floor_v=0.5e-6):
        self.sample_rate = sample_rate
        self.window_s = window_s
        self.rms_floor_v = rms_floor_v

    def fit(self, X, y=None):
        fs = check_sample_rate(self.sample_rate)
        X = check_signal(X)
        if not self.window_s > 0:
            raise InvalidConfigurationError(f"window_s must be positive, got {self.window_s}")
        if self.rms_floor_v < 0:
            raise InvalidConfigurationError(f"rms_floor_v must be >= 0, got {self.rms_floor_v}")
        window = max(int(round(self.window_s * fs)), 1)
        if window > X.shape[0]:
            raise InvalidConfigurationError(
                f"window of {window} samples is longer than the recording ({X.shape[0]} samples)"
            )
        below = windowed_rms(X, window) < self.rms_floor_v
        self.open_ = below.any(axis=0)
        self.first_window_ = np.where(self.open_, np.argmax(below, axis=0), -1)
        return self

    def transform(self, X):
        check_is_fitted(self, "open_")
        return check_signal(X)[:, ~self.open_]


def bandpass_filter(rec, low_hz=20.0, high_hz=450.0, order=8):
    est = BandpassFilter(rec.sample_rate, low_hz, high_hz, order).fit()
    return rec.with_data(est.transform(rec.data))


def notch_powerline(rec, base_hz=60.0, width_hz=2.0, order=2, max_hz=450.0):
    est = PowerlineNotch(rec.sample_rate, base_hz, width_hz, order, max_hz).fit()
    return rec.with_data(est.transform(rec.data))


def detect_open_channels(rec, window_s=0.5, rms_floor_v=0.5e-6):
    """Return a grid-wide :class:`ChannelMask` for ``rec``.

    Channels already absent from ``rec`` (masked earlier) are reported open.
    """
    est = OpenChannelDetector(rec.sample_rate, window_s, rms_floor_v).fit(rec.data)
    is_open = np.ones(rec.grid.n_channels, dtype=bool)
    first = np.zeros(rec.grid.n_channels, dtype=np.int64)
    is_open[rec.channel_ids] = est.open_
    first[rec.channel_ids] = est.first_window_
    return ChannelMask(open=is_open, first_window=first)


def compute_envelope(rec, cutoff_hz=2.0, order=8, edge_s=EDGE_S):
    est = EnvelopeExtractor(rec.sample_rate, cutoff_hz, order).fit()
    return EnvelopeRecording(
        data=est.transform(rec.data),
        sample_rate=rec.sample_rate,
        grid=rec.grid,
        channel_ids=rec.channel_ids,
        metadata=dict(rec.metadata),
        source_id=rec.rec_id,
        edge_samples=int(round(edge_s * rec.sample_rate)),
    )


def preprocess(rec, config=None):
    """Bandpass, notch, mask and envelope ``rec`` in the standard order.

    ``config`` is a :class:`~hdsemg_shift.config.PipelineConfig` (defaults
    if omitted). Returns ``(filtered, mask, envelope)`` where ``filtered``
    and ``envelope`` already exclude open channels.
    """
    cfg = config or PipelineConfig()
    filtered = bandpass_filter(rec, cfg.bandpass_low_hz, cfg.bandpass_high_hz, cfg.bandpass_order)
    filtered = notch_powerline(filtered, cfg.notch_base_hz, cfg.notch_width_hz, 2, cfg.notch_max_hz)
    mask = detect_open_channels(filtered, cfg.open_window_s, cfg.open_rms_floor_v)
    if not np.any(~mask.open[filtered.channel_ids]):
        raise InsufficientDataError(f"{rec.rec_id or 'recording'}: every channel is open")
    filtered = mask.apply(filtered)
    env = compute_envelope(filtered, cfg.envelope_cutoff_hz, cfg.envelope_order)
    return filtered, mask, env
