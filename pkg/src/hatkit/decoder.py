"""Frame-synchronous beam decoding with LM fusion, plus exhaustive oracles.

Factorized decoding maximizes

    lambda1 * log P(seq|x)  -  lambda2 * log P_ilm(seq)  +  log P_lm(seq)

with hypotheses that share a collapsed label history and frame merged by
log-sum-exp of their posterior mass, so an un-pruned beam reproduces the
fully marginalized posterior.  CTC/RNNT fusion instead maximizes over
single alignment paths with a rescaled blank probability and a coverage
bonus per non-blank edge.  wer() is plain Levenshtein with a fixed
tie-break order.
"""

import math
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from .errors import ConfigError, DecodeFailure, EnumerationCapError, ShapeError
from .ilm import ilm_local_logprobs, ilm_sequence
from .lattice import BLANK_ID, LatticeDims, ctc_collapse, enumerate_paths
from .loss import hat_loss, rnnt_loss
from .network import (Activations, blank_logit, decode_trace, decoder_advance,
                      decoder_start, encode, joint_scores)
from .ngram import EOS
from .numerics import NEG_INF, log_sigmoid, log_softmax, logsumexp
from .posterior import CTC, RNNT, hat_grid, rnnt_grid, ctc_grid

LABEL_MODE, WORD_MODE = "label_lm", "word_lm"


@dataclass
class DecodeConfig:
    lambda1: float = 2.5
    lambda2: float = 0.95
    beam_width: int = 8
    max_labels_per_frame: int = 5
    max_labels_total: int | None = None
    nbest: int = 10
    mode: str = LABEL_MODE
    merge: str = "lse"            # lse | max | none
    blank_scale: float = 1.0      # fused decoding only
    coverage: float = 0.0         # fused decoding only

    def validate(self):
        if self.mode not in (LABEL_MODE, WORD_MODE):
            raise ConfigError(f"unknown decode mode {self.mode!r}")
        if self.merge not in ("lse", "max", "none"):
            raise ConfigError(f"unknown merge rule {self.merge!r}")
        if self.beam_width < 1:
            raise ConfigError("beam width must be >= 1")
        if self.blank_scale <= 0.0:
            raise ConfigError("blank scale must be > 0")
        return self


class TrieNode:
    __slots__ = ("children", "words", "idx")

    def __init__(self, idx):
        self.children = {}
        self.words = []
        self.idx = idx


class LexiconTrie:
    """Prefix tree over pronunciations; terminals carry the word(s) ending there."""

    def __init__(self, lexicon, alphabet):
        self.root = TrieNode(0)
        self.n_nodes = 1
        for word in sorted(lexicon):
            labels = alphabet.check_labels(lexicon[word])
            if not labels:
                raise ConfigError(f"word {word!r} has an empty pronunciation")
            node = self.root
            for y in labels:
                if y not in node.children:
                    node.children[y] = TrieNode(self.n_nodes)
                    self.n_nodes += 1
                node = node.children[y]
            node.words.append(word)
        # deterministic homophone order
        stack = [self.root]
        while stack:
            node = stack.pop()
            node.words.sort()
            stack.extend(node.children.values())


@dataclass
class Hypothesis:
    labels: tuple
    dec_state: object
    lm_state: tuple
    frame: int = 0
    score_posterior: float = 0.0
    score_ilm: float = 0.0
    score_lm: float = 0.0
    words: tuple = ()
    lex_node: object = None
    frame_adds: int = 0

    def combined(self, cfg):
        return (cfg.lambda1 * self.score_posterior
                - cfg.lambda2 * self.score_ilm
                + self.score_lm)


def _sort_key(cfg):
    def key(h):
        return (-h.combined(cfg), h.labels, h.words)
    return key


def _merge_into(pool, key, hyp, merge):
    if merge == "none":
        pool[key + (len(pool),)] = hyp
        return hyp
    cur = pool.get(key)
    if cur is None:
        pool[key] = hyp
        return hyp
    if merge == "lse":
        cur.score_posterior = float(np.logaddexp(cur.score_posterior,
                                                 hyp.score_posterior))
    elif hyp.score_posterior > cur.score_posterior:
        cur.score_posterior = hyp.score_posterior
    cur.frame_adds = min(cur.frame_adds, hyp.frame_adds)
    return cur


def _pool_key(hyp, cfg):
    if cfg.mode == WORD_MODE:
        return (hyp.words, hyp.lex_node.idx)
    return (hyp.labels,)


def beam_decode_hat(features, params, lm, cfg, lexicon=None):
    """n-best list for the factorized model under the fusion objective.

    lm may be None (no external LM).  Word mode needs a LexiconTrie (or a
    word -> label-ids mapping to build one from).  The word LM is applied
    when a trie terminal completes a word; there is no partial-word
    lookahead, so in-word prefixes carry posterior and prior mass only,
    unlike a decoder built by full graph composition.
    """
    cfg = cfg.validate()
    alphabet = params.alphabet
    trie = None
    if cfg.mode == WORD_MODE:
        if lexicon is None:
            raise ConfigError("word mode needs a lexicon")
        trie = lexicon if isinstance(lexicon, LexiconTrie) else LexiconTrie(lexicon, alphabet)
    enc = encode(features, params).enc
    T = enc.shape[0]
    start = Hypothesis(labels=(), dec_state=decoder_start(params),
                       lm_state=lm.initial_state() if lm else (),
                       lex_node=trie.root if trie else None)
    pool = {}
    _merge_into(pool, _pool_key(start, cfg), start, cfg.merge)

    for t in range(T):
        f = enc[t]
        # vertical closure, processed in increasing label count so each
        # history's mass is complete before it expands; the pool of
        # not-yet-expanded histories is pruned to the beam width between
        # levels, which cuts nothing when the beam exceeds the space
        done = {}
        while pool:
            if len(pool) > cfg.beam_width:
                keep = sorted(pool.items(),
                              key=lambda kv: _sort_key(cfg)(kv[1]))
                pool = dict(keep[: cfg.beam_width])
            depth = min(len(h.labels) for h in pool.values())
            batch = [k for k, h in pool.items() if len(h.labels) == depth]
            for k in sorted(batch):
                hyp = pool.pop(k)
                hyp.frame = t + 1
                done[k] = hyp
                if cfg.max_labels_total is not None and len(hyp.labels) >= cfg.max_labels_total:
                    continue
                if hyp.frame_adds >= cfg.max_labels_per_frame:
                    continue
                g = hyp.dec_state.g
                logp = log_softmax(joint_scores(f, g, params))
                log_bc = float(log_sigmoid(-blank_logit(f, g, params)))
                ilm_lp = ilm_local_logprobs(g, params)
                if trie is None:
                    steps = [(y, None, None) for y in alphabet.label_ids()]
                else:
                    steps = []
                    for y in sorted(hyp.lex_node.children):
                        child = hyp.lex_node.children[y]
                        for w in child.words:
                            steps.append((y, w, trie.root))
                        if child.children:
                            steps.append((y, None, child))
                for y, word, node in steps:
                    post = hyp.score_posterior + log_bc + float(logp[y - 1])
                    new = Hypothesis(
                        labels=hyp.labels + (y,),
                        dec_state=decoder_advance(params, hyp.dec_state, y),
                        lm_state=hyp.lm_state,
                        frame=t + 1,
                        score_posterior=post,
                        score_ilm=hyp.score_ilm + float(ilm_lp[y - 1]),
                        score_lm=hyp.score_lm,
                        words=hyp.words,
                        lex_node=node,
                        frame_adds=hyp.frame_adds + 1,
                    )
                    if trie is None:
                        if lm is not None:
                            lp, new.lm_state = lm.score(new.lm_state, alphabet.name_of(y))
                            new.score_lm += lp
                    elif word is not None:
                        new.words = hyp.words + (word,)
                        if lm is not None:
                            lp, new.lm_state = lm.score(new.lm_state, word)
                            new.score_lm += lp
                    merged = _merge_into(pool, _pool_key(new, cfg), new, cfg.merge)
                    merged.frame = t + 1
        if t < T - 1:
            survivors = sorted(done.values(), key=_sort_key(cfg))[: cfg.beam_width]
            pool = {}
            for hyp in survivors:
                hyp.score_posterior += float(
                    log_sigmoid(blank_logit(f, hyp.dec_state.g, params)))
                hyp.frame_adds = 0
                _merge_into(pool, _pool_key(hyp, cfg), hyp, cfg.merge)
        else:
            # final frame: rank every closed hypothesis rather than the
            # pruned beam, so completions are not crowded out by
            # partial-word entries that owe their LM charge
            pool = done

    finals = list(pool.values())
    if trie is not None:
        finals = [h for h in finals if h.lex_node.idx == trie.root.idx]
    if lm is not None:
        for h in finals:
            lp, h.lm_state = lm.score(h.lm_state, EOS)
            h.score_lm += lp
    finals.sort(key=_sort_key(cfg))
    if not finals:
        raise DecodeFailure("no complete hypothesis survived the beam")
    for h in finals:
        if not math.isfinite(h.combined(cfg)):
            raise DecodeFailure("non-finite hypothesis score")
    return finals[: cfg.nbest] if cfg.nbest else finals


def exhaustive_decode(features, params, lm, cfg, caps=(4, 3, 3)):
    """Score every label sequence up to the cap and rank exactly.

    caps = (max frames, max labels, max vocab); exceeding any is a hard
    error since the enumeration is exponential.  Label mode only.
    """
    cfg = cfg.validate()
    if cfg.mode != LABEL_MODE:
        raise ConfigError("exhaustive decoding is label-mode only")
    alphabet = params.alphabet
    enc = encode(features, params).enc
    T = enc.shape[0]
    u_max = cfg.max_labels_total if cfg.max_labels_total is not None else caps[1]
    if T > caps[0] or u_max > caps[1] or alphabet.size > caps[2]:
        raise EnumerationCapError(
            f"exhaustive decode caps {caps} exceeded by (T={T}, U={u_max}, "
            f"V={alphabet.size})")
    scored = []
    for u in range(u_max + 1):
        for labels in product(alphabet.label_ids(), repeat=u):
            acts = Activations(enc=enc, dec=decode_trace(labels, params).dec)
            post = -hat_loss(hat_grid(acts, params), labels).neg_log_posterior
            ilm = ilm_sequence(labels, params)
            lm_total = 0.0
            if lm is not None:
                state = lm.initial_state()
                for y in labels:
                    lp, state = lm.score(state, alphabet.name_of(y))
                    lm_total += lp
                lp, _ = lm.score(state, EOS)
                lm_total += lp
            hyp = Hypothesis(labels=labels, dec_state=None, lm_state=(),
                             frame=T, score_posterior=post, score_ilm=ilm,
                             score_lm=lm_total)
            scored.append(hyp)
    scored.sort(key=_sort_key(cfg))
    return scored[: cfg.nbest] if cfg.nbest else scored


# --- CTC / RNNT shallow fusion -------------------------------------------------

def _scale_blank(log_blank, log_labels, blank_scale):
    """Rescale the blank probability by beta and renormalize the cell."""
    lb = math.log(blank_scale) + log_blank
    z = np.logaddexp(lb, logsumexp(log_labels))
    return lb - z, log_labels - z


@dataclass
class _FusedHyp:
    labels: tuple
    dec_state: object
    lm_state: tuple
    last: int = BLANK_ID          # ctc only: symbol emitted at previous frame
    score_posterior: float = 0.0
    score_ilm: float = 0.0        # always 0: fusion here has no subtraction
    score_lm: float = 0.0
    n_emitted: int = 0
    frame_adds: int = 0
    words: tuple = ()

    def combined(self, cfg):
        return (cfg.lambda1 * self.score_posterior + self.score_lm
                + cfg.coverage * self.n_emitted)


def _fused_merge(pool, key, hyp, cfg):
    cur = pool.get(key)
    if cur is None or hyp.combined(cfg) > cur.combined(cfg):
        pool[key] = hyp
        if cur is not None:
            hyp.frame_adds = min(hyp.frame_adds, cur.frame_adds)
        return
    cur.frame_adds = min(cur.frame_adds, hyp.frame_adds)


def beam_decode_fused(kind, features, params, lm, cfg):
    """Best-path shallow fusion for the single-softmax and CTC baselines.

    Maximizes lambda1 * log P'(path|x) + log P_lm(collapse(path)) +
    coverage * (non-blank edges), where P' rescales each cell's blank
    probability by cfg.blank_scale and renormalizes.  Label mode only.
    """
    cfg = cfg.validate()
    if cfg.mode != LABEL_MODE:
        raise ConfigError("fused decoding is label-mode only")
    if kind not in (RNNT, CTC):
        raise ShapeError(f"fused decoding needs rnnt or ctc, got {kind}")
    alphabet = params.alphabet
    enc = encode(features, params).enc
    T = enc.shape[0]

    if kind == CTC:
        grid = ctc_grid(enc, params)
        pool = {(): _FusedHyp(labels=(), dec_state=None,
                              lm_state=lm.initial_state() if lm else ())}
        for t in range(T):
            lb, ll = _scale_blank(grid.log_blank[t, 0], grid.log_label[t, 0, :],
                                  cfg.blank_scale)
            nxt = {}
            for key in sorted(pool):
                hyp = pool[key]
                stay = replace(hyp, score_posterior=hyp.score_posterior + lb,
                               last=BLANK_ID)
                _fused_merge(nxt, (stay.labels, BLANK_ID), stay, cfg)
                for y in alphabet.label_ids():
                    if y == hyp.last:
                        rep = replace(hyp, score_posterior=hyp.score_posterior + ll[y - 1],
                                      n_emitted=hyp.n_emitted + 1)
                        _fused_merge(nxt, (rep.labels, y), rep, cfg)
                        continue
                    if cfg.max_labels_total is not None and len(hyp.labels) >= cfg.max_labels_total:
                        continue
                    new = replace(hyp, labels=hyp.labels + (y,),
                                  score_posterior=hyp.score_posterior + ll[y - 1],
                                  n_emitted=hyp.n_emitted + 1, last=y)
                    if lm is not None:
                        lp, new.lm_state = lm.score(new.lm_state, alphabet.name_of(y))
                        new.score_lm += lp
                    _fused_merge(nxt, (new.labels, y), new, cfg)
            ranked = sorted(nxt.items(),
                            key=lambda kv: (-kv[1].combined(cfg), kv[0]))
            pool = dict(ranked[: cfg.beam_width])
    else:
        start = _FusedHyp(labels=(), dec_state=decoder_start(params),
                          lm_state=lm.initial_state() if lm else ())
        pool = {(): start}
        for t in range(T):
            f = enc[t]
            done = {}
            while pool:
                if len(pool) > cfg.beam_width:
                    keep = sorted(pool.items(),
                                  key=lambda kv: (-kv[1].combined(cfg), kv[0]))
                    pool = dict(keep[: cfg.beam_width])
                depth = min(len(h.labels) for h in pool.values())
                batch = sorted(k for k, h in pool.items() if len(h.labels) == depth)
                for k in batch:
                    hyp = pool.pop(k)
                    done[k] = hyp
                    if cfg.max_labels_total is not None and len(hyp.labels) >= cfg.max_labels_total:
                        continue
                    if hyp.frame_adds >= cfg.max_labels_per_frame:
                        continue
                    scores = joint_scores(f, hyp.dec_state.g, params)
                    q = blank_logit(f, hyp.dec_state.g, params)
                    logp = log_softmax(np.concatenate([[q], scores]))
                    _, ll = _scale_blank(logp[0], logp[1:], cfg.blank_scale)
                    for y in alphabet.label_ids():
                        new = _FusedHyp(
                            labels=hyp.labels + (y,),
                            dec_state=decoder_advance(params, hyp.dec_state, y),
                            lm_state=hyp.lm_state,
                            score_posterior=hyp.score_posterior + float(ll[y - 1]),
                            score_lm=hyp.score_lm,
                            n_emitted=hyp.n_emitted + 1,
                            frame_adds=hyp.frame_adds + 1,
                        )
                        if lm is not None:
                            lp, new.lm_state = lm.score(new.lm_state,
                                                        alphabet.name_of(y))
                            new.score_lm += lp
                        _fused_merge(pool, new.labels, new, cfg)
            ranked = sorted(done.items(),
                            key=lambda kv: (-kv[1].combined(cfg), kv[0]))
            survivors = dict(ranked[: cfg.beam_width])
            pool = {}
            for key, hyp in survivors.items():
                if t < T - 1:
                    scores = joint_scores(f, hyp.dec_state.g, params)
                    q = blank_logit(f, hyp.dec_state.g, params)
                    logp = log_softmax(np.concatenate([[q], scores]))
                    lb, _ = _scale_blank(logp[0], logp[1:], cfg.blank_scale)
                    hyp.score_posterior += float(lb)
                    hyp.frame_adds = 0
                pool[key] = hyp

    finals = sorted(pool.values(), key=lambda h: (-h.combined(cfg), h.labels))
    if lm is not None:
        for h in finals:
            lp, h.lm_state = lm.score(h.lm_state, EOS)
            h.score_lm += lp
        finals.sort(key=lambda h: (-h.combined(cfg), h.labels))
    if not finals:
        raise DecodeFailure("no fused hypothesis survived the beam")
    return finals[: cfg.nbest]


def exhaustive_decode_fused(kind, features, params, lm, cfg, caps=(4, 3, 3)):
    """Max over every alignment path of the fused objective (oracle)."""
    cfg = cfg.validate()
    alphabet = params.alphabet
    enc = encode(features, params).enc
    T = enc.shape[0]
    u_max = cfg.max_labels_total if cfg.max_labels_total is not None else caps[1]
    if T > caps[0] or u_max > caps[1] or alphabet.size > caps[2]:
        raise EnumerationCapError("exhaustive fused decode caps exceeded")

    def lm_score_labels(labels):
        if lm is None:
            return 0.0
        total = 0.0
        state = lm.initial_state()
        for y in labels:
            lp, state = lm.score(state, alphabet.name_of(y))
            total += lp
        lp, _ = lm.score(state, EOS)
        return total + lp

    best = None
    if kind == CTC:
        grid = ctc_grid(enc, params)
        cells = []
        for t in range(T):
            lb, ll = _scale_blank(grid.log_blank[t, 0], grid.log_label[t, 0, :],
                                  cfg.blank_scale)
            cells.append(np.concatenate([[lb], ll]))
        for path in product(range(alphabet.size + 1), repeat=T):
            labels = ctc_collapse(path)
            if len(labels) > u_max:
                continue
            post = sum(float(cells[t][sym]) for t, sym in enumerate(path))
            v = sum(1 for sym in path if sym != BLANK_ID)
            score = cfg.lambda1 * post + lm_score_labels(labels) + cfg.coverage * v
            cand = (score, labels, path)
            if best is None or score > best[0] or (score == best[0] and labels < best[1]):
                best = cand
    elif kind == RNNT:
        for u in range(u_max + 1):
            for labels in product(alphabet.label_ids(), repeat=u):
                acts = Activations(enc=enc, dec=decode_trace(labels, params).dec)
                grid = rnnt_grid(acts, params)
                scaled_b = np.empty((T, u + 1))
                scaled_l = np.empty((T, u + 1, alphabet.size))
                for t in range(T):
                    for col in range(u + 1):
                        lb, ll = _scale_blank(grid.log_blank[t, col],
                                              grid.log_label[t, col, :],
                                              cfg.blank_scale)
                        scaled_b[t, col] = lb
                        scaled_l[t, col] = ll
                lm_total = lm_score_labels(labels)
                for path in enumerate_paths(LatticeDims(T, u), labels):
                    t = col = 0
                    post = 0.0
                    for edge in path:
                        if edge == BLANK_ID:
                            post += scaled_b[t, col]
                            t += 1
                        else:
                            post += scaled_l[t, col, edge - 1]
                            col += 1
                    score = cfg.lambda1 * post + lm_total + cfg.coverage * u
                    if best is None or score > best[0] or (score == best[0] and labels < best[1]):
                        best = (score, labels, path)
    else:
        raise ShapeError(f"fused decoding needs rnnt or ctc, got {kind}")
    return best[1], best[0]


# --- word error rate -----------------------------------------------------------

@dataclass
class WerCounts:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    ref_len: int = 0

    @property
    def errors(self):
        return self.substitutions + self.insertions + self.deletions

    @property
    def rate(self):
        if self.ref_len == 0:
            return 0.0 if self.errors == 0 else math.inf
        return self.errors / self.ref_len

    def add(self, other):
        self.substitutions += other.substitutions
        self.insertions += other.insertions
        self.deletions += other.deletions
        self.ref_len += other.ref_len
        return self


def wer(ref, hyp):
    """Levenshtein alignment counts; ties prefer substitution, then
    insertion, then deletion."""
    ref = list(ref)
    hyp = list(hyp)
    R, H = len(ref), len(hyp)
    d = np.zeros((R + 1, H + 1), dtype=int)
    d[:, 0] = np.arange(R + 1)
    d[0, :] = np.arange(H + 1)
    for i in range(1, R + 1):
        for j in range(1, H + 1):
            sub = d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i, j] = min(sub, d[i, j - 1] + 1, d[i - 1, j] + 1)
    out = WerCounts(ref_len=R)
    i, j = R, H
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and d[i, j] == d[i - 1, j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + 1:
            out.substitutions += 1
            i, j = i - 1, j - 1
        elif j > 0 and d[i, j] == d[i, j - 1] + 1:
            out.insertions += 1
            j -= 1
        else:
            out.deletions += 1
            i -= 1
    return out


def corpus_wer(pairs):
    """Aggregate counts over (ref tokens, hyp tokens) pairs."""
    total = WerCounts()
    for ref, hyp in pairs:
        total.add(wer(ref, hyp))
    return total
