"""Independent reference computations used by the self-test.

Each function recomputes a quantity from first principles without calling
the code it is meant to check: closed-form filter responses, exhaustive
enumeration of signed-rank sign patterns, and a dense grid search for the
distance-curve fit.
"""

import numpy as np
from scipy.stats import rankdata


def _prewarp(f, fs):
    return 2.0 * fs * np.tan(np.pi * np.asarray(f, dtype=np.float64) / fs)


def butterworth_bandpass_zero_phase_gain(f, fs, low_hz, high_hz, order):
    """Amplitude gain of a forward-backward bilinear Butterworth band-pass.

    The analog band-pass built from an ``order``-pole low-pass prototype
    has ``|H|^2 = 1 / (1 + x^(2 order))`` with
    ``x = (w^2 - wl wh) / (w (wh - wl))``; the bilinear transform maps
    digital ``f`` to ``w = 2 fs tan(pi f / fs)``. Forward-backward filtering
    applies ``|H|`` twice, so the amplitude gain equals ``|H|^2``.
    """
    w, wl, wh = _prewarp(f, fs), _prewarp(low_hz, fs), _prewarp(high_hz, fs)
    with np.errstate(divide="ignore"):
        x = (w**2 - wl * wh) / (w * (wh - wl))
    return 1.0 / (1.0 + x ** (2 * order))


def notch_zero_phase_gain(f, fs, centers_hz, width_hz):
    """Amplitude gain of forward-backward second-order notches.

    Each section is ``b (1 - 2 c z^-1 + z^-2) / (1 - 2 b c z^-1 + (2b - 1) z^-2)``
    with ``c = cos(w0)`` and ``b = 1 / (1 + tan(pi width / fs))``.
    """
    w = 2 * np.pi * np.asarray(f, dtype=np.float64) / fs
    z1 = np.exp(-1j * w)
    g = np.ones_like(w)
    beta = 1.0 / (1.0 + np.tan(np.pi * width_hz / fs))
    for f0 in centers_hz:
        c = np.cos(2 * np.pi * f0 / fs)
        h = beta * (1 - 2 * c * z1 + z1**2) / (1 - 2 * beta * c * z1 + (2 * beta - 1) * z1**2)
        g = g * np.abs(h) ** 2
    return g


def tone_amplitude(x, f, fs):
    """Least-squares amplitude of a sinusoid at ``f`` in ``x``."""
    t = np.arange(len(x)) / fs
    basis = np.column_stack([np.sin(2 * np.pi * f * t), np.cos(2 * np.pi * f * t), np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(basis, x, rcond=None)
    return float(np.hypot(coef[0], coef[1]))


def signed_rank_p_bruteforce(x, mu0=0.0):
    """Two-sided exact signed-rank p-value by enumerating all 2^n sign patterns.

    Zero differences are dropped and tied magnitudes get average ranks.
    Returns ``min(1, 2 min(P(W <= w), P(W >= w)))``.
    """
    d = np.asarray(x, dtype=np.float64) - mu0
    d = d[d != 0]
    n = len(d)
    r2 = np.rint(2 * rankdata(np.abs(d))).astype(np.int64)
    observed = int(r2[d > 0].sum())
    patterns = (np.arange(2**n)[:, None] >> np.arange(n)) & 1
    w = patterns @ r2
    le = int(np.sum(w <= observed))
    ge = int(np.sum(w >= observed))
    return min(1.0, 2 * min(le, ge) / 2**n)


def grid_search_inverse_exponential(d, y, amplitudes, length_scales):
    """Exhaustive least-squares search of ``A (1 - exp(-d / lambda))`` on a grid.

    Uses the sufficient statistics ``sum y^2``, ``sum y g`` and ``sum g^2``
    per length scale so the full grid costs one pass over distinct
    distances. Returns ``(A, lambda, rss)``.
    """
    d = np.asarray(d, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    uniq, inv = np.unique(d, return_inverse=True)
    count = np.bincount(inv).astype(np.float64)
    sy = np.bincount(inv, weights=y)
    syy = float(np.sum(y * y))
    lam = np.asarray(length_scales, dtype=np.float64)
    amp = np.asarray(amplitudes, dtype=np.float64)
    g = -np.expm1(-uniq[None, :] / lam[:, None])
    syg = g @ sy
    sgg = (g * g) @ count
    rss = syy - 2 * amp[None, :] * syg[:, None] + amp[None, :] ** 2 * sgg[:, None]
    i, j = np.unravel_index(np.argmin(rss), rss.shape)
    return float(amp[j]), float(lam[i]), float(rss[i, j])
