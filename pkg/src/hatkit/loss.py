"""Marginalized sequence losses, their exact gradients, and the SGD step.

The transducer losses (factorized and single-softmax) share one lattice
recursion over horizontal (blank) and vertical (label) edge weights; CTC
runs the usual blank-interleaved state recursion.  Gradients are derived
by hand: edge occupancies from the alpha/beta products, then chain rule
through the softmax/sigmoid heads, the joint, the projections, the Elman
cells and the embeddings.  brute_force_loss enumerates paths and sums in
the probability domain, deliberately sharing no code with the recursions.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, NumericError, ShapeError
from .ilm import ilm_local_logprobs
from .lattice import (CTC_ENUM_CAP, PATH_ENUM_CAP, BLANK_ID, LatticeDims,
                      enumerate_ctc_paths, enumerate_paths, min_ctc_frames)
from .network import Activations, FiniteContextTable, decode_trace, encode
from .numerics import NEG_INF, log_sigmoid, log_softmax
from .posterior import CTC, HAT, RNNT, cell_parts, ctc_grid, hat_grid, rnnt_grid


@dataclass
class LossResult:
    neg_log_posterior: float
    alpha: np.ndarray
    beta: np.ndarray | None = None


class GradientSet:
    """One float64 buffer per model tensor, keyed like ModelParams.tensors()."""

    def __init__(self, buffers):
        self.buffers = buffers

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(v) for k, v in params.tensors().items()})

    def __getitem__(self, name):
        return self.buffers[name]

    def __setitem__(self, name, value):
        self.buffers[name] = value

    def items(self):
        return self.buffers.items()

    def add(self, other, scale=1.0):
        for k, v in other.items():
            self.buffers[k] += scale * v
        return self

    def scale(self, c):
        for v in self.buffers.values():
            v *= c
        return self

    def global_norm(self):
        return math.sqrt(sum(float(np.sum(v * v)) for v in self.buffers.values()))


# --- lattice recursions -----------------------------------------------------

def lattice_forward(horiz, vert):
    """alpha[t, u]: log mass of prefixes reaching node (t+1, u) from (1, 0)."""
    T, U1 = horiz.shape
    U = U1 - 1
    alpha = np.full((T, U1), NEG_INF)
    alpha[0, 0] = 0.0
    for u in range(1, U1):
        alpha[0, u] = alpha[0, u - 1] + vert[0, u - 1]
    for t in range(1, T):
        alpha[t, 0] = alpha[t - 1, 0] + horiz[t - 1, 0]
        for u in range(1, U1):
            alpha[t, u] = np.logaddexp(alpha[t - 1, u] + horiz[t - 1, u],
                                       alpha[t, u - 1] + vert[t, u - 1])
    return alpha


def lattice_backward(horiz, vert):
    """beta[t, u]: log mass of suffixes from node (t+1, u) to (T, U)."""
    T, U1 = horiz.shape
    U = U1 - 1
    beta = np.full((T, U1), NEG_INF)
    beta[T - 1, U] = 0.0
    for t in range(T - 1, -1, -1):
        for u in range(U, -1, -1):
            if t == T - 1 and u == U:
                continue
            acc = NEG_INF
            if t + 1 < T:
                acc = beta[t + 1, u] + horiz[t, u]
            if u + 1 < U1:
                acc = np.logaddexp(acc, beta[t, u + 1] + vert[t, u])
            beta[t, u] = acc
    return beta


def _check_kind(grid, kind, name):
    if grid.kind != kind:
        raise ShapeError(f"{name} needs a {kind} grid, got {grid.kind}")


def _transducer_loss(grid, labels, need_beta):
    labels = tuple(labels)
    horiz, vert = grid.edge_logprobs(labels)
    alpha = lattice_forward(horiz, vert)
    beta = lattice_backward(horiz, vert) if need_beta else None
    return LossResult(neg_log_posterior=-float(alpha[-1, -1]), alpha=alpha, beta=beta)


def hat_loss(grid, labels, need_beta=False):
    """Negative log marginalized posterior under a factorized grid."""
    _check_kind(grid, HAT, "hat_loss")
    return _transducer_loss(grid, labels, need_beta)


def rnnt_loss(grid, labels, need_beta=False):
    """Negative log marginalized posterior under a single-softmax grid."""
    _check_kind(grid, RNNT, "rnnt_loss")
    return _transducer_loss(grid, labels, need_beta)


# --- CTC --------------------------------------------------------------------

def _ctc_state_logprobs(grid, labels):
    """(aug symbols, per-frame log prob of each augmented state)."""
    aug = [BLANK_ID]
    for y in labels:
        aug.extend((y, BLANK_ID))
    pb = grid.log_blank[:, 0]
    pl = grid.log_label[:, 0, :]
    lp = np.empty((grid.frames, len(aug)))
    for s, sym in enumerate(aug):
        lp[:, s] = pb if sym == BLANK_ID else pl[:, sym - 1]
    return aug, lp


def ctc_loss(grid, labels, need_beta=False):
    """Standard CTC negative log likelihood over the blank-augmented states.

    alpha here is the (T, 2U+1) augmented-state forward matrix rather than
    the transducer lattice shape.
    """
    _check_kind(grid, CTC, "ctc_loss")
    labels = tuple(labels)
    T = grid.frames
    if T < min_ctc_frames(labels):
        raise InfeasibleError(
            f"{T} frames cannot carry {len(labels)} labels under CTC collapse")
    aug, lp = _ctc_state_logprobs(grid, labels)
    S = len(aug)
    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = lp[0, 0]
    if S > 1:
        alpha[0, 1] = lp[0, 1]
    for t in range(1, T):
        for s in range(S):
            acc = alpha[t - 1, s]
            if s >= 1:
                acc = np.logaddexp(acc, alpha[t - 1, s - 1])
            if s >= 2 and aug[s] != BLANK_ID and aug[s] != aug[s - 2]:
                acc = np.logaddexp(acc, alpha[t - 1, s - 2])
            alpha[t, s] = acc + lp[t, s]
    total = alpha[T - 1, S - 1]
    if S > 1:
        total = np.logaddexp(total, alpha[T - 1, S - 2])
    beta = None
    if need_beta:
        beta = np.full((T, S), NEG_INF)
        beta[T - 1, S - 1] = 0.0
        if S > 1:
            beta[T - 1, S - 2] = 0.0
        for t in range(T - 2, -1, -1):
            for s in range(S):
                acc = beta[t + 1, s] + lp[t + 1, s]
                if s + 1 < S:
                    acc = np.logaddexp(acc, beta[t + 1, s + 1] + lp[t + 1, s + 1])
                if s + 2 < S and aug[s + 2] != BLANK_ID and aug[s + 2] != aug[s]:
                    acc = np.logaddexp(acc, beta[t + 1, s + 2] + lp[t + 1, s + 2])
                beta[t, s] = acc
    return LossResult(neg_log_posterior=-float(total), alpha=alpha, beta=beta)


# --- brute force oracle -----------------------------------------------------

def brute_force_loss(grid, labels, cap=None):
    """Enumerate every path, multiply edge posteriors, compensated-sum them.

    Shares nothing with the recursions above; this is the oracle they are
    checked against.
    """
    labels = tuple(labels)
    T = grid.frames
    probs = []
    if grid.kind in (HAT, RNNT):
        paths = enumerate_paths(LatticeDims(T, len(labels)), labels,
                                cap=cap if cap is not None else PATH_ENUM_CAP)
        for path in paths:
            t = u = 0
            lp = 0.0
            for edge in path:
                if edge == BLANK_ID:
                    lp += grid.log_edge_blank(t, u)
                    t += 1
                else:
                    lp += grid.log_edge_label(t, u, edge)
                    u += 1
            probs.append(math.exp(lp))
    elif grid.kind == CTC:
        paths = enumerate_ctc_paths(T, labels,
                                    cap=cap if cap is not None else CTC_ENUM_CAP)
        pb = grid.log_blank[:, 0]
        pl = grid.log_label[:, 0, :]
        for path in paths:
            lp = 0.0
            for t, sym in enumerate(path):
                lp += pb[t] if sym == BLANK_ID else pl[t, sym - 1]
            probs.append(math.exp(lp))
    else:
        raise ShapeError(f"unknown grid kind {grid.kind}")
    total = math.fsum(probs)
    return math.inf if total <= 0.0 else -math.log(total)


# --- multi-task prior term ----------------------------------------------------

def mtl_prior_loss(dec_rows, labels, params):
    """Negative internal-LM log prob of the labels, from decoder rows alone."""
    labels = tuple(labels)
    total = 0.0
    for u, y in enumerate(labels):
        total += float(ilm_local_logprobs(dec_rows[u], params)[y - 1])
    return -total


# --- gradients ----------------------------------------------------------------

def _occupancies(alpha, beta, horiz, vert, log_z):
    """Posterior probability of each lattice edge given the target sequence."""
    T, U1 = horiz.shape
    U = U1 - 1
    gh = np.zeros((T, U1))
    if T > 1:
        gh[:-1, :] = np.exp(alpha[:-1, :] + horiz[:-1, :] + beta[1:, :] - log_z)
    gv = np.zeros((T, U))
    if U > 0:
        gv[:, :] = np.exp(alpha[:, :U] + vert + beta[:, 1:] - log_z)
    return gh, gv


def _head_and_trunk_backprop(enc_tr, dec_tr, z, act, dq, d_scores, params,
                             labels, mtl_weight):
    """Chain rule from head-input gradients down to every parameter tensor."""
    grads = GradientSet.zeros_like(params)
    grads["joint_out"] += np.einsum("tud,tuv->dv", act, d_scores)
    grads["joint_bias"] += d_scores.sum(axis=(0, 1))
    d_act = d_scores @ params.joint_out.T
    dz = d_act * params.nl_deriv_from_act(act) + dq[:, :, None] * params.blank_w
    grads["blank_w"] += np.einsum("tu,tud->d", dq, z)
    grads["blank_bias"] += np.array([dq.sum()])
    d_enc = dz.sum(axis=1)
    d_dec = dz.sum(axis=0) if dec_tr is not None else None

    if dec_tr is not None and mtl_weight:
        for u, y in enumerate(labels):
            a_u = params.nl(dec_tr.dec[u])
            p = np.exp(log_softmax(a_u @ params.joint_out + params.joint_bias))
            d_s = p.copy()
            d_s[y - 1] -= 1.0
            grads["joint_out"] += mtl_weight * np.outer(a_u, d_s)
            grads["joint_bias"] += mtl_weight * d_s
            d_dec[u] += mtl_weight * (d_s @ params.joint_out.T) \
                * params.nl_deriv_from_act(a_u)

    # encoder trunk
    grads["enc_proj"] += enc_tr.hidden.T @ d_enc
    d_hidden = d_enc @ params.enc_proj.T
    carry = np.zeros(params.dims.enc_hidden)
    for t in range(enc_tr.x.shape[0] - 1, -1, -1):
        d_pre = (d_hidden[t] + carry) * (1.0 - enc_tr.hidden[t] ** 2)
        grads["encoder_wx"] += np.outer(enc_tr.x[t], d_pre)
        if t > 0:
            grads["encoder_wh"] += np.outer(enc_tr.hidden[t - 1], d_pre)
        grads["encoder_bias"] += d_pre
        carry = d_pre @ params.encoder_wh.T

    # decoder trunk
    if dec_tr is not None:
        if isinstance(params.decoder, FiniteContextTable):
            np.add.at(grads["context_table"], np.array(dec_tr.rows, dtype=int), d_dec)
        else:
            dec = params.decoder
            grads["dec_proj"] += dec_tr.hidden.T @ d_dec
            d_hid = d_dec @ dec.proj.T
            carry = np.zeros(params.dims.dec_hidden)
            emb_rows = [params.alphabet.size if i == params.alphabet.start_id
                        else i - 1 for i in dec_tr.input_ids]
            for u in range(len(emb_rows) - 1, -1, -1):
                d_pre = (d_hid[u] + carry) * (1.0 - dec_tr.hidden[u] ** 2)
                grads["decoder_wx"] += np.outer(dec_tr.inputs[u], d_pre)
                if u > 0:
                    grads["decoder_wh"] += np.outer(dec_tr.hidden[u - 1], d_pre)
                grads["decoder_bias"] += d_pre
                grads["label_embedding"][emb_rows[u]] += d_pre @ dec.wx.T
                carry = d_pre @ dec.wh.T
    return grads


def hat_gradients(features, labels, params, mtl_weight=0.0):
    """Loss and exact parameter gradients for the factorized model.

    When mtl_weight is nonzero the gradients include the weighted prior
    term; the returned LossResult still reports the sequence loss alone.
    """
    labels = params.alphabet.check_labels(labels)
    enc_tr = encode(features, params)
    dec_tr = decode_trace(labels, params)
    z, act, scores, blank = cell_parts(enc_tr.enc, dec_tr.dec, params)
    U = len(labels)
    idx = np.array(labels, dtype=int) - 1
    log_b = log_sigmoid(blank)
    log_bc = log_sigmoid(-blank)
    log_p = log_softmax(scores, axis=-1)
    horiz = log_b
    vert = log_bc[:, :U] + log_p[:, np.arange(U), idx] if U else np.zeros((blank.shape[0], 0))
    alpha = lattice_forward(horiz, vert)
    beta = lattice_backward(horiz, vert)
    log_z = alpha[-1, -1]
    if not np.isfinite(log_z):
        raise NumericError("sequence has zero posterior mass; no gradient exists")
    gh, gv = _occupancies(alpha, beta, horiz, vert, log_z)

    b = np.exp(log_b)
    p = np.exp(log_p)
    dq = -gh * np.exp(log_bc)
    d_scores = np.zeros_like(scores)
    if U:
        dq[:, :U] += gv * b[:, :U]
        d_scores[:, :U, :] = gv[:, :, None] * p[:, :U, :]
        d_scores[:, np.arange(U), idx] -= gv
    grads = _head_and_trunk_backprop(enc_tr, dec_tr, z, act, dq, d_scores,
                                     params, labels, mtl_weight)
    result = LossResult(neg_log_posterior=-float(log_z), alpha=alpha, beta=beta)
    return result, grads


def rnnt_gradients(features, labels, params, mtl_weight=0.0):
    """Loss and exact parameter gradients for the single-softmax model."""
    labels = params.alphabet.check_labels(labels)
    enc_tr = encode(features, params)
    dec_tr = decode_trace(labels, params)
    z, act, scores, blank = cell_parts(enc_tr.enc, dec_tr.dec, params)
    U = len(labels)
    idx = np.array(labels, dtype=int) - 1
    full = np.concatenate([blank[:, :, None], scores], axis=2)
    log_p = log_softmax(full, axis=-1)
    horiz = log_p[:, :, 0]
    vert = log_p[:, np.arange(U), idx + 1] if U else np.zeros((blank.shape[0], 0))
    alpha = lattice_forward(horiz, vert)
    beta = lattice_backward(horiz, vert)
    log_z = alpha[-1, -1]
    if not np.isfinite(log_z):
        raise NumericError("sequence has zero posterior mass; no gradient exists")
    gh, gv = _occupancies(alpha, beta, horiz, vert, log_z)

    coef = gh.copy()
    if U:
        coef[:, :U] += gv
    d_full = coef[:, :, None] * np.exp(log_p)
    d_full[:, :, 0] -= gh
    if U:
        d_full[:, np.arange(U), idx + 1] -= gv
    grads = _head_and_trunk_backprop(enc_tr, dec_tr, z, act, d_full[:, :, 0],
                                     d_full[:, :, 1:], params, labels, mtl_weight)
    result = LossResult(neg_log_posterior=-float(log_z), alpha=alpha, beta=beta)
    return result, grads


def ctc_gradients(features, labels, params):
    """Loss and exact parameter gradients for the CTC baseline."""
    labels = params.alphabet.check_labels(labels)
    enc_tr = encode(features, params)
    grid = ctc_grid(enc_tr.enc, params)
    result = ctc_loss(grid, labels, need_beta=True)
    log_z = -result.neg_log_posterior
    if not np.isfinite(log_z):
        raise NumericError("sequence has zero posterior mass; no gradient exists")
    aug, lp = _ctc_state_logprobs(grid, labels)
    gamma = np.exp(result.alpha + result.beta - log_z)   # (T, S)
    T = grid.frames
    v = params.alphabet.size
    d_logp = np.zeros((T, v + 1))
    for s, sym in enumerate(aug):
        d_logp[:, 0 if sym == BLANK_ID else sym] -= gamma[:, s]
    p = np.exp(np.concatenate([grid.log_blank[:, 0][:, None],
                               grid.log_label[:, 0, :]], axis=1))
    d_full = d_logp - p * d_logp.sum(axis=1, keepdims=True)

    # reuse the shared trunk backprop with a single zero decoder column
    z, act, _, _ = cell_parts(enc_tr.enc, np.zeros((1, params.dims.joint)), params)
    grads = _head_and_trunk_backprop(enc_tr, None, z, act,
                                     d_full[:, 0][:, None],
                                     d_full[:, 1:][:, None, :],
                                     params, labels, 0.0)
    return result, grads


def sequence_gradients(kind, features, labels, params, mtl_weight=0.0):
    if kind == HAT:
        return hat_gradients(features, labels, params, mtl_weight)
    if kind == RNNT:
        return rnnt_gradients(features, labels, params, mtl_weight)
    if kind == CTC:
        return ctc_gradients(features, labels, params)
    raise ShapeError(f"unknown loss kind {kind}")


def sequence_loss_value(kind, features, labels, params, mtl_weight=0.0):
    """Objective value alone (sequence loss plus weighted prior term)."""
    enc = encode(features, params).enc
    if kind == CTC:
        return ctc_loss(ctc_grid(enc, params), labels).neg_log_posterior
    dec_tr = decode_trace(labels, params)
    acts = Activations(enc=enc, dec=dec_tr.dec)
    if kind == HAT:
        value = hat_loss(hat_grid(acts, params), labels).neg_log_posterior
    elif kind == RNNT:
        value = rnnt_loss(rnnt_grid(acts, params), labels).neg_log_posterior
    else:
        raise ShapeError(f"unknown loss kind {kind}")
    if mtl_weight:
        value += mtl_weight * mtl_prior_loss(dec_tr.dec, labels, params)
    return value


# --- finite differences and SGD ----------------------------------------------

def finite_difference_gradients(fn, params, eps=1e-5):
    """Central-difference gradient of fn() w.r.t. every parameter element."""
    out = {}
    for name, tensor in params.tensors().items():
        g = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            hi = fn()
            flat[i] = keep - eps
            lo = fn()
            flat[i] = keep
            gflat[i] = (hi - lo) / (2.0 * eps)
        out[name] = g
    return GradientSet(out)


def max_relative_error(analytic, numeric, floor=1e-8):
    """Worst relative disagreement; elements tiny on both sides are exempt."""
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.abs(a), np.abs(n))
        mask = denom >= floor
        if mask.any():
            rel = np.abs(a - n)[mask] / denom[mask]
            worst = max(worst, float(rel.max()))
    return worst


def sgd_step(params, grads, lr=0.05, clip=5.0):
    """In-place SGD update with global-norm clipping; returns pre-clip norm."""
    norm = grads.global_norm()
    if not math.isfinite(norm):
        raise NumericError("gradient norm is not finite")
    scale = lr * (clip / norm if clip and norm > clip else 1.0)
    for name, tensor in params.tensors().items():
        tensor -= scale * grads[name]
    return norm
