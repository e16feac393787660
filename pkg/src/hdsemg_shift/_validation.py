"""Input validation helpers shared by the estimators and functional API."""

import numbers

import numpy as np
from sklearn.utils import check_array

from .errors import InvalidConfigurationError, InvalidInputError


def check_sample_rate(fs):
    if not isinstance(fs, numbers.Real) or not np.isfinite(fs) or fs <= 0:
        raise InvalidConfigurationError(f"sample rate must be a positive real, got {fs!r}")
    return float(fs)


def check_signal(X, *, min_samples=1):
    """Validate a (n_samples, n_channels) float array.

    1-D input is treated as a single channel. Empty input raises
    :class:`InvalidInputError` rather than sklearn's ``ValueError`` so callers
    can tell a bad recording from a bad parameter.
    """
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[:, None]
    if X.size == 0 or X.shape[0] < min_samples:
        raise InvalidInputError(
            f"recording needs at least {min_samples} sample(s), got shape {X.shape}"
        )
    return check_array(X, dtype=np.float64, ensure_2d=True, copy=False)


def check_band(low_hz, high_hz, fs):
    nyq = fs / 2.0
    if not 0 < low_hz < high_hz:
        raise InvalidConfigurationError(f"need 0 < low_hz < high_hz, got {low_hz}, {high_hz}")
    if high_hz >= nyq:
        raise InvalidConfigurationError(f"high_hz={high_hz} must lie below Nyquist ({nyq} Hz)")


def check_cutoff(cutoff_hz, fs):
    if not 0 < cutoff_hz < fs / 2.0:
        raise InvalidConfigurationError(
            f"cutoff {cutoff_hz} Hz must lie in (0, {fs / 2.0}) for fs={fs}"
        )


def check_even_order(order):
    if not isinstance(order, numbers.Integral) or order < 2 or order % 2:
        raise InvalidConfigurationError(f"filter order must be an even integer >= 2, got {order!r}")
    return int(order)
