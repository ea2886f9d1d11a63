"""Self-contained verification suites with deterministic output.

Each suite recomputes a quantity two independent ways (dynamic program vs
enumeration, analytic vs finite difference, closed form vs code) and
prints one PASS/FAIL line.  All randomness is seeded, so consecutive runs
emit byte-identical text; the process exits nonzero if any suite fails.
"""

import math

import numpy as np

from .decoder import (DecodeConfig, beam_decode_fused, beam_decode_hat,
                      exhaustive_decode, exhaustive_decode_fused, wer)
from .ilm import factorization_residual, ilm_sequence
from .lattice import Alphabet, alphabet00
from .loss import (brute_force_loss, ctc_loss, finite_difference_gradients,
                   hat_loss, max_relative_error, rnnt_loss,
                   sequence_gradients, sequence_loss_value)
from .network import Activations, ModelDims, decode_trace, encode, init_params
from .ngram import load_arpa, perplexity, save_arpa, train_ngram
from .numerics import softmax
from .posterior import (CTC, HAT, RNNT, ctc_grid, edge_posterior_sums,
                        hat_grid, rnnt_grid)


def _random_case(rng, kind):
    v = int(rng.integers(2, 5))
    t = int(rng.integers(1, 6 if kind != CTC else 9))
    alpha = alphabet00(v)
    dims = ModelDims(d_in=3, embed=2, enc_hidden=3, dec_hidden=3, joint=4)
    params = init_params(alpha, dims, seed=int(rng.integers(0, 2**31)))
    feats = rng.uniform(-1, 1, size=(t, dims.d_in))
    u_hi = min(3, t) if kind != CTC else max(1, t // 2)
    u = int(rng.integers(0, u_hi + 1))
    labels = tuple(int(x) for x in rng.integers(1, v + 1, size=u))
    return params, feats, labels


def suite_marginalization():
    rng = np.random.Generator(np.random.PCG64(101))
    worst = 0.0
    n = 0
    for kind in (HAT, RNNT, CTC):
        fn = {HAT: hat_loss, RNNT: rnnt_loss, CTC: ctc_loss}[kind]
        for _ in range(25):
            params, feats, labels = _random_case(rng, kind)
            enc = encode(feats, params).enc
            if kind == CTC:
                from .lattice import min_ctc_frames
                if feats.shape[0] < min_ctc_frames(labels):
                    continue
                grid = ctc_grid(enc, params)
            else:
                acts = Activations(enc=enc,
                                   dec=decode_trace(labels, params).dec)
                grid = hat_grid(acts, params) if kind == HAT else rnnt_grid(acts, params)
            dp = fn(grid, labels).neg_log_posterior
            bf = brute_force_loss(grid, labels)
            worst = max(worst, abs(dp - bf))
            n += 1
    return worst <= 1e-8, f"max |dp - enumeration| {worst:.3g} over {n} cases"


def suite_gradients():
    alpha = alphabet00(3)
    dims = ModelDims(d_in=4, embed=3, enc_hidden=5, dec_hidden=5, joint=6)
    rng = np.random.Generator(np.random.PCG64(47))
    feats = rng.uniform(-1, 1, size=(4, dims.d_in))
    labels = (2, 1)
    worst = 0.0
    for kind, mu in ((HAT, 0.0), (HAT, 0.1), (RNNT, 0.0), (CTC, 0.0)):
        params = init_params(alpha, dims, seed=47)
        _, grads = sequence_gradients(kind, feats, labels, params, mu)
        fd = finite_difference_gradients(
            lambda: sequence_loss_value(kind, feats, labels, params, mu),
            params)
        worst = max(worst, max_relative_error(grads, fd))
    return worst <= 1e-4, f"max relative error {worst:.3g} (4 loss configs)"


def suite_normalization():
    rng = np.random.Generator(np.random.PCG64(202))
    worst = 0.0
    for _ in range(20):
        params, feats, labels = _random_case(rng, HAT)
        acts = Activations(enc=encode(feats, params).enc,
                           dec=decode_trace(labels, params).dec)
        for grid in (hat_grid(acts, params), rnnt_grid(acts, params)):
            worst = max(worst,
                        float(np.abs(edge_posterior_sums(grid) - 1.0).max()))
    return worst <= 1e-12, f"worst cell sum error {worst:.3g} over 20 models"


def suite_internal_lm():
    rng = np.random.Generator(np.random.PCG64(303))
    worst_fwd = 0.0
    worst_rev = 0.0
    worst_resid = 0.0
    for _ in range(10):
        # forward: a constant score shift never moves the distribution
        v = rng.uniform(-5, 5, size=6)
        c = float(rng.uniform(-3, 3))
        worst_fwd = max(worst_fwd,
                        float(np.abs(softmax(v + c) - softmax(v)).max()))
        # reverse: equal distributions imply a constant score difference;
        # log of the softmax is a second score vector with the same output
        w = np.log(softmax(v))
        diff = v - w
        worst_rev = max(worst_rev, float(np.abs(diff - diff.mean()).max()))
        # an exactly linear joint factorizes: the residual vanishes
        params, feats, labels = _random_case(rng, HAT)
        lin = init_params(params.alphabet, params.dims,
                          seed=int(rng.integers(0, 2**31)),
                          joint_nonlinearity="identity")
        acts_l = Activations(enc=encode(feats, lin).enc,
                             dec=decode_trace(labels, lin).dec)
        worst_resid = max(worst_resid, factorization_residual(acts_l, lin))
    ok = worst_fwd <= 1e-12 and worst_rev <= 1e-9 and worst_resid <= 1e-9
    return ok, (f"shift invariance {worst_fwd:.3g}, constant recovery "
                f"{worst_rev:.3g}, linear-joint residual {worst_resid:.3g}")


def suite_decoder():
    rng = np.random.Generator(np.random.PCG64(404))
    alpha = alphabet00(3)
    dims = ModelDims(d_in=3, embed=2, enc_hidden=3, dec_hidden=3, joint=4)
    corpus = [["p00", "p01"], ["p01", "p02"], ["p00"]]
    lm = train_ngram(corpus, order=2, k=0.5)
    mismatches = 0
    n = 0
    for i in range(8):
        params = init_params(alpha, dims, seed=500 + i)
        feats = rng.uniform(-1, 1, size=(int(rng.integers(2, 5)), dims.d_in))
        cfg = DecodeConfig(lambda1=2.5, lambda2=0.95, beam_width=10_000,
                           nbest=1, max_labels_total=2)
        if beam_decode_hat(feats, params, lm, cfg)[0].labels != \
                exhaustive_decode(feats, params, lm, cfg)[0].labels:
            mismatches += 1
        n += 1
        for kind in (CTC, RNNT):
            fcfg = DecodeConfig(lambda1=1.5, lambda2=0.0, beam_width=10_000,
                                nbest=1, max_labels_total=2, blank_scale=0.7,
                                coverage=0.2)
            got = beam_decode_fused(kind, feats, params, lm, fcfg)[0].labels
            want, _ = exhaustive_decode_fused(kind, feats, params, lm, fcfg)
            if got != want:
                mismatches += 1
            n += 1
    return mismatches == 0, f"{mismatches} argmax mismatches over {n} decodes"


def suite_ngram():
    corpus = [["a", "b"], ["a", "c"]]
    model = train_ngram(corpus, order=2, k=1.0)
    got = math.exp(model.score(("a",), "b")[0])
    pinned = 2.0 / 7.0
    text = save_arpa(model)
    reread = load_arpa(text)
    rt = abs(save_arpa(reread) != text)
    ppl = perplexity(model, corpus)
    direct = math.exp(-sum(model.sequence_logprob(s)[0] for s in corpus)
                      / sum(len(s) + 1 for s in corpus))
    ok = abs(got - pinned) <= 1e-12 and rt == 0 and abs(ppl - direct) <= 1e-9
    return ok, (f"P(b|a) {got:.6f} vs 2/7, arpa round-trip "
                f"{'stable' if rt == 0 else 'UNSTABLE'}, "
                f"perplexity delta {abs(ppl - direct):.3g}")


def suite_alignment_metric():
    cases = [
        ("a b c".split(), "a b c".split(), (0, 0, 0)),
        ("a b c".split(), "a c".split(), (0, 0, 1)),
        ("a b".split(), "b a".split(), None),
    ]
    ok = True
    for ref, hyp, want in cases:
        c = wer(ref, hyp)
        if want is not None:
            ok = ok and (c.substitutions, c.insertions, c.deletions) == want
        else:
            ok = ok and c.errors == 2
    return ok, "3 pinned alignment cases"


SUITES = (
    ("marginalization", suite_marginalization),
    ("gradients", suite_gradients),
    ("normalization", suite_normalization),
    ("internal_lm", suite_internal_lm),
    ("decoder_oracle", suite_decoder),
    ("ngram", suite_ngram),
    ("alignment_metric", suite_alignment_metric),
)


def run_selftest(write=print):
    failures = 0
    for name, fn in SUITES:
        ok, detail = fn()
        failures += 0 if ok else 1
        write(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    write(f"{len(SUITES) - failures}/{len(SUITES)} suites passed")
    return failures
