"""Internal language model: label scores with the encoder contribution removed.

Evaluating the joint on decoder rows alone and normalizing over V gives the
label prior the model has absorbed from its training transcripts.  For the
factorized model this is exact up to the nonlinearity; for the
single-softmax transducer the same formula is only an approximation (the
blank score cannot be separated out), and is used for reporting only.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .network import decode_trace, encode
from .numerics import log_softmax


def ilm_scores(g, params):
    """Joint output on a decoder row alone (encoder term dropped)."""
    a = params.nl(np.asarray(g, dtype=float))
    return a @ params.joint_out + params.joint_bias


def ilm_local_logprobs(g, params):
    """log P_ilm(. | history) for the history that produced decoder row g."""
    return log_softmax(ilm_scores(g, params))


def ilm_local(g, params):
    return np.exp(ilm_local_logprobs(g, params))


def _labels_of(item):
    return tuple(item.labels) if hasattr(item, "labels") else tuple(item)


def ilm_sequence(labels, params):
    """log P_ilm of a whole label sequence (sum of local log probs)."""
    labels = _labels_of(labels)
    trace = decode_trace(labels, params)
    total = 0.0
    for u, y in enumerate(labels):
        total += float(ilm_local_logprobs(trace.dec[u], params)[y - 1])
    return total


def prior_cost(dataset, params):
    """Mean negative internal-LM log probability over transcripts."""
    items = list(dataset)
    if not items:
        raise ShapeError("prior_cost needs at least one transcript")
    return -sum(ilm_sequence(item, params) for item in items) / len(items)


@dataclass
class LinearityStats:
    mean: np.ndarray       # per-dimension mean of f_t + g_u
    std: np.ndarray        # per-dimension population std
    count: int
    tau: float

    @property
    def linear_range_fraction(self):
        lo = self.mean - self.std
        hi = self.mean + self.std
        return float(np.mean((lo >= -self.tau) & (hi <= self.tau)))


def linearity_stats(dataset, params, tau=1.0):
    """Streaming per-dimension mean/std of f_t + g_u over all lattice cells.

    One pass, Chan-style merge of per-utterance moments; the dataset-level
    cell matrix is never materialized.
    """
    count = 0
    mean = np.zeros(params.dims.joint)
    m2 = np.zeros(params.dims.joint)
    for item in dataset:
        if hasattr(item, "features"):
            feats, labels = item.features, tuple(item.labels)
        else:
            feats, labels = item[0], tuple(item[1])
        enc = encode(feats, params).enc
        dec = decode_trace(labels, params).dec
        cells = (enc[:, None, :] + dec[None, :, :]).reshape(-1, enc.shape[1])
        n = cells.shape[0]
        cmean = cells.mean(axis=0)
        cm2 = ((cells - cmean) ** 2).sum(axis=0)
        delta = cmean - mean
        tot = count + n
        mean = mean + delta * (n / tot)
        m2 = m2 + cm2 + delta * delta * (count * n / tot)
        count = tot
    if count == 0:
        raise ShapeError("linearity_stats needs at least one utterance")
    return LinearityStats(mean=mean, std=np.sqrt(m2 / count), count=count, tau=tau)


def factorization_residual(acts, params):
    """How far local label score differences are from additive t/u split.

    For every (t, u, u', y, y') compares the score gap between y and y'
    after subtracting the internal-LM gap at the same u; with an exactly
    linear joint the result is independent of u, so the max spread over u
    is zero up to rounding.
    """
    enc = np.asarray(acts.enc, dtype=float)
    dec = np.asarray(acts.dec, dtype=float)
    scores = params.nl(enc[:, None, :] + dec[None, :, :]) @ params.joint_out + params.joint_bias
    ilm = params.nl(dec) @ params.joint_out + params.joint_bias
    d_score = scores[:, :, :, None] - scores[:, :, None, :]   # (T, U+1, V, V)
    d_ilm = ilm[:, :, None] - ilm[:, None, :]                 # (U+1, V, V)
    r = d_score - d_ilm[None]
    return float((r.max(axis=1) - r.min(axis=1)).max())
