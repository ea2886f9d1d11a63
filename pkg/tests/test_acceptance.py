"""Whole-toolkit acceptance checks, one test per promised behavior.

Each test prints a single PASS/FAIL line through the `criterion` fixture
(collected again in the terminal summary) and then asserts.  Training and
decoding fixtures are session-scoped so the toy-task pipeline runs once.
"""

import contextlib
import io
import math
import subprocess
import sys
import time
from types import SimpleNamespace

import numpy as np
import pytest

from hatkit.decoder import (DecodeConfig, LexiconTrie, WerCounts,
                            beam_decode_fused, beam_decode_hat,
                            exhaustive_decode, exhaustive_decode_fused, wer)
from hatkit.ilm import (factorization_residual, ilm_local_logprobs,
                        ilm_scores, ilm_sequence)
from hatkit.lattice import alphabet00, min_ctc_frames
from hatkit.loss import (brute_force_loss, ctc_loss,
                         finite_difference_gradients, hat_loss,
                         max_relative_error, rnnt_loss, sequence_gradients,
                         sequence_loss_value)
from hatkit.network import (ModelDims, activations, decode_trace, init_params)
from hatkit.ngram import EOS, load_arpa, perplexity, save_arpa
from hatkit.posterior import (CTC, HAT, RNNT, ctc_grid, edge_posterior_sums,
                              hat_grid, rnnt_grid)
from hatkit.selftest import run_selftest
from hatkit.synthetic import (SyntheticTaskSpec, generate, load_alphabet,
                              load_corpus, load_dataset, load_lexicon)
from hatkit.training import train_model
from support import (label_lm, random_features, random_labels, random_model,
                     tiny_dims)

DIMS = ModelDims(d_in=16, embed=8, enc_hidden=32, dec_hidden=32, joint=32)


@pytest.fixture(scope="session")
def timings():
    return {}


@pytest.fixture(scope="session")
def task(tmp_path_factory, timings):
    out = tmp_path_factory.mktemp("task47")
    t0 = time.perf_counter()
    arts = generate(SyntheticTaskSpec(), out)
    timings["generate"] = time.perf_counter() - t0
    alphabet = load_alphabet(arts["alphabet"])
    lexicon = load_lexicon(arts["lexicon"], alphabet)
    return SimpleNamespace(
        arts=arts,
        alphabet=alphabet,
        lexicon=lexicon,
        train=load_dataset(arts["train"], lexicon),
        test=load_dataset(arts["test"], lexicon),
        word_lm=load_arpa(arts["lm"].read_text(encoding="ascii")),
        trie=LexiconTrie(lexicon, alphabet),
    )


def fit(task, *, kind=HAT, context=None, lr, mtl_weight=0.0, epochs=10):
    params = init_params(task.alphabet, DIMS, seed=47, context_size=context)
    return train_model(task.train, params, kind, epochs=epochs, lr=lr,
                       clip=5.0, batch_size=8, seed=47, mtl_weight=mtl_weight)


@pytest.fixture(scope="session")
def hat_mtl(task, timings):
    t0 = time.perf_counter()
    result = fit(task, lr=0.15, mtl_weight=0.1)
    timings["train_mtl"] = time.perf_counter() - t0
    return result


@pytest.fixture(scope="session")
def context_runs(task):
    return {ctx: fit(task, context=ctx, lr=0.1) for ctx in (0, 2, None)}


@pytest.fixture(scope="session")
def rnnt_run(task):
    return fit(task, kind=RNNT, lr=0.1)


def test_01_marginalization_matches_brute_force(criterion):
    t0 = time.perf_counter()
    rng = np.random.Generator(np.random.PCG64(1001))
    worst = 0.0
    for kind in (HAT, RNNT):
        for _ in range(200):
            V = int(rng.integers(2, 5))
            T = int(rng.integers(1, 6))
            U = int(rng.integers(0, 4))
            params = random_model(rng, V)
            labels = random_labels(rng, V, U)
            acts = activations(random_features(rng, T), labels, params)
            grid = hat_grid(acts, params) if kind == HAT else rnnt_grid(acts, params)
            fn = hat_loss if kind == HAT else rnnt_loss
            err = abs(fn(grid, labels).neg_log_posterior
                      - brute_force_loss(grid, labels))
            worst = max(worst, err)
    for _ in range(200):
        V = int(rng.integers(2, 5))
        T = int(rng.integers(1, 9))
        U = int(rng.integers(0, 4))
        params = random_model(rng, V)
        labels = random_labels(rng, V, U)
        while min_ctc_frames(labels) > T:
            U -= 1
            labels = random_labels(rng, V, U)
        grid = ctc_grid(activations(random_features(rng, T), labels,
                                    params).enc, params)
        err = abs(ctc_loss(grid, labels).neg_log_posterior
                  - brute_force_loss(grid, labels))
        worst = max(worst, err)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and dt < 30.0
    criterion(f"[{'PASS' if ok else 'FAIL'}] marginalization oracle: "
              f"max |dp - brute force| = {worst:.2e} (tol 1e-08) over 600 "
              f"models in {dt:.1f}s (budget 30s)")
    assert worst <= 1e-8
    assert dt < 30.0


def test_02_gradients_match_finite_differences(criterion):
    t0 = time.perf_counter()
    params = init_params(alphabet00(3), tiny_dims(), seed=47)
    rng = np.random.Generator(np.random.PCG64(47))
    feats = rng.uniform(-1.0, 1.0, size=(4, 4))
    labels = (2, 1)
    worst = 0.0
    for mu in (0.0, 0.1):
        _, analytic = sequence_gradients(HAT, feats, labels, params, mu)
        numeric = finite_difference_gradients(
            lambda: sequence_loss_value(HAT, feats, labels, params, mu),
            params, eps=1e-5)
        worst = max(worst, max_relative_error(analytic, numeric))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-4 and dt < 60.0
    criterion(f"[{'PASS' if ok else 'FAIL'}] gradient check: max relative "
              f"error {worst:.2e} (tol 1e-04) with and without the prior "
              f"term in {dt:.1f}s (budget 60s)")
    assert worst <= 1e-4
    assert dt < 60.0


def test_03_edge_posteriors_are_locally_normalized(criterion):
    rng = np.random.Generator(np.random.PCG64(1003))
    worst = 0.0
    for _ in range(50):
        V = int(rng.integers(2, 5))
        params = random_model(rng, V)
        T = int(rng.integers(1, 6))
        labels = random_labels(rng, V, int(rng.integers(0, 4)))
        grid = hat_grid(activations(random_features(rng, T), labels, params),
                        params)
        worst = max(worst, float(np.max(np.abs(edge_posterior_sums(grid)
                                               - 1.0))))
    ok = worst <= 1e-12
    criterion(f"[{'PASS' if ok else 'FAIL'}] local normalization: max "
              f"|sum - 1| = {worst:.2e} (tol 1e-12) over 50 models, every "
              f"lattice cell")
    assert worst <= 1e-12


def test_04_internal_lm_identities(criterion):
    import copy
    rng = np.random.Generator(np.random.PCG64(1004))
    worst_shift, worst_spread, worst_resid = 0.0, 0.0, 0.0
    for _ in range(20):
        V = int(rng.integers(2, 5))
        params = random_model(rng, V)
        labels = random_labels(rng, V, 3)
        rows = decode_trace(labels, params).dec
        shifted = copy.deepcopy(params)
        shifted.joint_bias = shifted.joint_bias + float(rng.uniform(-2, 2))
        worst_shift = max(worst_shift, float(np.max(np.abs(
            ilm_local_logprobs(rows, params)
            - ilm_local_logprobs(rows, shifted)))))
        diff = ilm_scores(rows, params) - ilm_local_logprobs(rows, params)
        worst_spread = max(worst_spread, float(np.max(
            diff.max(axis=-1) - diff.min(axis=-1))))
    for _ in range(20):
        V = int(rng.integers(2, 5))
        params = random_model(rng, V, joint_nonlinearity="identity")
        labels = random_labels(rng, V, int(rng.integers(0, 4)))
        acts = activations(random_features(rng, int(rng.integers(1, 5))),
                           labels, params)
        worst_resid = max(worst_resid, factorization_residual(acts, params))
    ok = worst_shift <= 1e-12 and worst_spread <= 1e-9 and worst_resid <= 1e-9
    criterion(f"[{'PASS' if ok else 'FAIL'}] internal LM identities: shift "
              f"invariance {worst_shift:.2e} (tol 1e-12), constant-difference "
              f"recovery {worst_spread:.2e} (tol 1e-09), linear-joint "
              f"residual {worst_resid:.2e} (tol 1e-09), 20 models each")
    assert worst_shift <= 1e-12
    assert worst_spread <= 1e-9
    assert worst_resid <= 1e-9


def test_05_beam_search_matches_exhaustive_oracles(criterion):
    rng = np.random.Generator(np.random.PCG64(1005))
    hat_bad = fused_bad = 0
    for i in range(100):
        params = random_model(rng, 3)
        feats = random_features(rng, int(rng.integers(1, 5)))
        lm = label_lm(params.alphabet) if i % 2 else None
        cfg = DecodeConfig(lambda1=float(rng.uniform(0.5, 3.0)),
                           lambda2=(0.0, 0.6, 0.95)[i % 3],
                           beam_width=256, max_labels_total=3, nbest=1)
        beam = beam_decode_hat(feats, params, lm, cfg)[0]
        oracle = exhaustive_decode(feats, params, lm, cfg)[0]
        hat_bad += beam.labels != oracle.labels
    for i in range(100):
        kind = CTC if i % 2 else RNNT
        params = random_model(rng, int(rng.integers(2, 4)))
        feats = random_features(rng, int(rng.integers(1, 5)))
        lm = label_lm(params.alphabet) if i % 3 else None
        cfg = DecodeConfig(lambda1=(1.0, 1.3)[i % 2], lambda2=0.0,
                           beam_width=512, max_labels_total=3, nbest=1,
                           blank_scale=(1.0, 1.7)[(i // 2) % 2],
                           coverage=(0.0, 0.3)[(i // 4) % 2])
        top = beam_decode_fused(kind, feats, params, lm, cfg)[0]
        labels, _ = exhaustive_decode_fused(kind, feats, params, lm, cfg)
        fused_bad += top.labels != labels
    ok = hat_bad == 0 and fused_bad == 0
    criterion(f"[{'PASS' if ok else 'FAIL'}] decoder oracle equivalence: "
              f"{100 - hat_bad}/100 factorized and {100 - fused_bad}/100 "
              f"fused instances match the exhaustive argmax exactly")
    assert hat_bad == 0
    assert fused_bad == 0


def corpus_wer_at(task, params, lam2):
    cfg = DecodeConfig(lambda1=2.5, lambda2=lam2, beam_width=8, nbest=1,
                       mode="word_lm")
    total = WerCounts()
    for utt in task.test:
        top = beam_decode_hat(utt.features, params, task.word_lm, cfg,
                              lexicon=task.trie)[0]
        total.add(wer(utt.words, top.words))
    return total.rate


def test_06_prior_subtraction_improves_fused_wer(criterion, task, hat_mtl,
                                                 timings):
    t0 = time.perf_counter()
    rates = {lam2: corpus_wer_at(task, hat_mtl.params, lam2)
             for lam2 in (0.0, 0.75, 0.95, 1.1)}
    sweep_dt = time.perf_counter() - t0
    pipeline_dt = timings["generate"] + timings["train_mtl"] + sweep_dt
    directional = all(rates[lam] <= rates[0.0] for lam in (0.75, 0.95, 1.1))
    ok = directional and pipeline_dt < 600.0
    shown = " ".join(f"{lam:g}:{rates[lam]:.2%}" for lam in sorted(rates))
    criterion(f"[{'PASS' if ok else 'FAIL'}] prior-subtraction sweep: WER "
              f"{shown}; every subtracted point <= the 0.0 baseline; "
              f"pipeline {pipeline_dt:.0f}s (budget 600s)")
    assert directional
    assert pipeline_dt < 600.0


def test_07_decoder_context_size_shapes_the_fit(criterion, context_runs):
    c0 = context_runs[0].final_loss
    c2 = context_runs[2].final_loss
    cinf = context_runs[None].final_loss
    rel = abs(c2 - cinf) / cinf
    ok = c0 > c2 and rel < 0.15
    criterion(f"[{'PASS' if ok else 'FAIL'}] label-context capacity: final "
              f"loss {c0:.3f} (no history) > {c2:.3f} (2 labels); vs "
              f"{cinf:.3f} (unbounded) relative gap {rel:.3f} (< 0.15)")
    assert c0 > c2
    assert rel < 0.15


def test_08_prior_cost_is_instrumented(criterion, context_runs, hat_mtl,
                                       rnnt_run):
    runs = {"plain": context_runs[None], "regularized": hat_mtl,
            "single-softmax": rnnt_run}
    complete = all(
        len(r.epoch_rows) == 10
        and all(math.isfinite(row.prior_cost) for row in r.epoch_rows)
        for r in runs.values())
    first = hat_mtl.epoch_rows[0].prior_cost
    last = hat_mtl.epoch_rows[-1].prior_cost
    ok = complete and last < first
    criterion(f"[{'PASS' if ok else 'FAIL'}] prior-cost instrumentation: "
              f"logged every epoch for all three label models; regularized "
              f"run moves {first:.2f} -> {last:.2f} nats/sequence")
    assert complete
    assert last < first


def test_09_ngram_lm_is_normalized_and_round_trips(criterion, task):
    lm = task.word_lm
    worst_sum = 0.0
    for ctx in lm.entries:
        if ctx and ctx[-1] == EOS:
            continue
        total = math.fsum(math.exp(lm.score(ctx, w)[0])
                          for w in lm.predictable())
        worst_sum = max(worst_sum, abs(total - 1.0))
    clone = load_arpa(save_arpa(lm))
    worst_rt = 0.0
    for ctx, probs in lm.entries.items():
        for w, logp in probs.items():
            worst_rt = max(worst_rt, abs(clone.entries[ctx][w] - logp))
    corpus = load_corpus(task.arts["corpus"])
    total, n = 0.0, 0
    for sent in corpus:
        state = lm.initial_state()
        for tok in sent + [EOS]:
            lp, state = lm.score(state, tok)
            total += lp
            n += 1
    ppl_err = abs(perplexity(lm, corpus) - math.exp(-total / n))
    ok = worst_sum <= 1e-6 and worst_rt <= 1e-6 and ppl_err <= 1e-9
    criterion(f"[{'PASS' if ok else 'FAIL'}] external LM: context sums "
              f"within {worst_sum:.2e} of 1 (tol 1e-06), file round trip "
              f"within {worst_rt:.2e} (tol 1e-06), perplexity vs direct "
              f"computation within {ppl_err:.2e} (tol 1e-09)")
    assert worst_sum <= 1e-6
    assert worst_rt <= 1e-6
    assert ppl_err <= 1e-9


TINY = ["task.labels=5", "task.words=8", "task.pron_min=1", "task.pron_max=2",
        "task.duration_min=1", "task.duration_max=2", "task.d_in=6",
        "task.sent_min=2", "task.sent_max=3", "task.train=16", "task.test=6",
        "task.lm_sentences=80", "task.seed=11",
        "model.d_in=6", "model.embed=4", "model.enc_hidden=8",
        "model.dec_hidden=8", "model.joint=8", "train.epochs=2",
        "decode.beam=4", "decode.nbest=2", "decode.max_labels_per_frame=2"]


def _pipeline(root):
    def cli(*argv):
        res = subprocess.run([sys.executable, "-m", "hatkit.cli", *argv],
                             capture_output=True, text=True)
        assert res.returncode == 0, res.stderr
        return res

    flags = []
    for kv in TINY:
        flags += ["--set", kv]
    data, run, dec = root / "data", root / "run", root / "dec"
    cli("generate", "--out", str(data), *flags)
    cli("train", "--data", str(data), "--out", str(run), *flags)
    cli("decode", "--data", str(data), "--out", str(dec),
        "--checkpoint", str(run / "checkpoint.bin"), *flags)
    tree = {}
    for base in (data, run, dec):
        for p in sorted(base.rglob("*")):
            if p.is_file():
                tree[str(p.relative_to(root))] = p.read_bytes()
    return tree


def test_10_selftest_and_pipeline_are_deterministic(criterion, tmp_path):
    outputs = []
    for _ in range(2):
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            failures = run_selftest()
        assert not failures
        outputs.append(buf.getvalue())
    selftest_same = outputs[0] == outputs[1]

    first = _pipeline(tmp_path / "one")
    second = _pipeline(tmp_path / "two")
    pipeline_same = first == second
    n_files = len(first)
    ok = selftest_same and pipeline_same
    criterion(f"[{'PASS' if ok else 'FAIL'}] determinism: selftest output "
              f"byte-identical across runs; generate/train/decode pipeline "
              f"reproduced all {n_files} artifacts byte-for-byte")
    assert selftest_same
    assert pipeline_same
    assert n_files > 30
