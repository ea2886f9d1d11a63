"""Log-domain helpers used by the posterior grids, losses and decoders.

Everything operates on float64. -inf is a legal log probability (exact
zero); NaN never is.
"""

import numpy as np

from .errors import NumericError

NEG_INF = float("-inf")


def logsumexp(a, axis=None):
    """Stable log(sum(exp(a))) that tolerates all--inf slices."""
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True) if a.size else np.float64(NEG_INF)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(-1)[0]) if a.size else NEG_INF
    return np.squeeze(out, axis=axis)


def log_softmax(scores, axis=-1):
    scores = np.asarray(scores, dtype=float)
    m = np.max(scores, axis=axis, keepdims=True)
    shifted = scores - m
    norm = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    return shifted - norm


def softmax(scores, axis=-1):
    return np.exp(log_softmax(scores, axis=axis))


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def log_sigmoid(x):
    """log(sigmoid(x)), exact for large |x|."""
    return -softplus(-np.asarray(x, dtype=float))


def require_finite(name, arr):
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")
    return arr
