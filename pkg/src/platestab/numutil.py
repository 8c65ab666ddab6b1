"""Small numerical helpers shared across modules."""

import numpy as np

__all__ = ["trapz_weights", "cumtrapz_last", "trapz_last", "fit_decay_rate", "tri_weights"]


def trapz_weights(x):
    """Composite-trapezoid weight vector on a uniform grid."""
    x = np.asarray(x, float)
    d = x[1] - x[0]
    w = np.full(x.size, d)
    w[0] = w[-1] = d / 2.0
    return w


def tri_weights(ms, d):
    """Rows k: trapezoid weights over [x_0, x_k]; row 0 is empty."""
    W = np.tril(np.full((ms, ms), d))
    W[:, 0] = d / 2.0
    idx = np.arange(ms)
    W[idx, idx] = d / 2.0
    W[0, :] = 0.0
    return W


def cumtrapz_last(vals, d):
    """Cumulative trapezoid along the last axis, starting at zero."""
    avg = 0.5 * (vals[..., 1:] + vals[..., :-1]) * d
    out = np.zeros_like(vals)
    out[..., 1:] = np.cumsum(avg, axis=-1)
    return out


def trapz_last(vals, d):
    """Composite trapezoid along the last axis."""
    s = vals.sum(axis=-1) - 0.5 * (vals[..., 0] + vals[..., -1])
    return s * d


def fit_decay_rate(t, series, window=(0.5, 4.0)):
    """Least-squares slope of -log(series) over a time window."""
    t = np.asarray(t, float)
    series = np.asarray(series, float)
    mask = (t >= window[0]) & (t <= window[1]) & (series > 0) & np.isfinite(series)
    if mask.sum() < 3:
        raise ValueError("not enough positive samples in the fit window")
    A = np.vstack([t[mask], np.ones(mask.sum())]).T
    slope, _ = np.linalg.lstsq(A, np.log(series[mask]), rcond=None)[0]
    return -slope
