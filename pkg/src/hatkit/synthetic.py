"""Seeded synthetic task: a word-bigram grammar renders label prototypes to
noisy feature frames.

The task is deliberately biased: training transcripts come from one bigram
grammar while the text corpus and the test transcripts come from a second,
independently drawn grammar.  An acoustic model fit on the training half
therefore internalizes the wrong prior, which is exactly the situation
internal-LM subtraction plus external fusion is meant to repair.

Dataset layout: a directory per split with manifest.tsv (utt_id, frame
count, transcript) and one binary file per utterance (int32 header T, D_in;
row-major float64 body).  Write-then-read round-trips features exactly.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, VocabularyError
from .lattice import Alphabet
from .ngram import save_arpa, train_ngram


@dataclass(frozen=True)
class Utterance:
    utt_id: str
    features: np.ndarray
    words: tuple
    labels: tuple


@dataclass(frozen=True)
class WordGrammar:
    """Markov bigram over words with a fixed sentence-length distribution."""

    words: tuple
    init: np.ndarray           # (W,)
    trans: np.ndarray          # (W, W), row-stochastic
    min_len: int = 2
    max_len: int = 5

    def sample(self, rng):
        length = int(rng.integers(self.min_len, self.max_len + 1))
        idx = int(rng.choice(len(self.words), p=self.init))
        out = [idx]
        for _ in range(length - 1):
            idx = int(rng.choice(len(self.words), p=self.trans[idx]))
            out.append(idx)
        return [self.words[i] for i in out]

    def expected_word_frequencies(self):
        """Expected per-token word distribution under the sampler."""
        lengths = np.arange(self.min_len, self.max_len + 1)
        p_len = np.full(len(lengths), 1.0 / len(lengths))
        counts = np.zeros(len(self.words))
        pos = self.init.copy()
        for i in range(1, self.max_len + 1):
            counts += pos * float(p_len[lengths >= i].sum())
            pos = pos @ self.trans
        return counts / counts.sum()


def random_grammar(words, rng, concentration=0.25, min_len=2, max_len=5):
    """Draw a peaked bigram grammar (low Dirichlet concentration)."""
    W = len(words)
    init = rng.dirichlet(np.full(W, concentration))
    trans = np.stack([rng.dirichlet(np.full(W, concentration)) for _ in range(W)])
    return WordGrammar(tuple(words), init, trans, min_len, max_len)


def expected_label_frequencies(grammar, lexicon, alphabet):
    """Push word marginals through pronunciation label counts."""
    wfreq = grammar.expected_word_frequencies()
    counts = np.zeros(alphabet.size)
    for w, p in zip(grammar.words, wfreq):
        for y in lexicon[w]:
            counts[y - 1] += p
    return counts / counts.sum()


@dataclass(frozen=True)
class SyntheticTaskSpec:
    n_labels: int = 6
    n_words: int = 20
    pron_len: tuple = (2, 4)
    duration: tuple = (2, 4)
    d_in: int = 16
    noise_std: float = 0.3
    sent_len: tuple = (2, 5)
    n_train: int = 500
    n_test: int = 100
    lm_sentences: int = 2000
    concentration: float = 0.25
    lm_order: int = 2
    lm_k: float = 0.1
    seed: int = 47

    def validate(self):
        if self.n_labels < 1 or self.n_words < 1:
            raise ConfigError("need at least one label and one word")
        if self.pron_len[0] < 1 or self.pron_len[0] > self.pron_len[1]:
            raise ConfigError("bad pronunciation length range")
        if self.duration[0] < 1 or self.duration[0] > self.duration[1]:
            raise ConfigError("duration range min must be >= 1 and ordered")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if self.sent_len[0] < 1 or self.sent_len[0] > self.sent_len[1]:
            raise ConfigError("bad sentence length range")
        n_prons = sum(self.n_labels ** L
                      for L in range(self.pron_len[0], self.pron_len[1] + 1))
        if self.n_words > n_prons:
            raise ConfigError("alphabet too small for that many unique words")
        return self


def task_alphabet(spec):
    return Alphabet(tuple(f"p{i:02d}" for i in range(spec.n_labels)))


def _sample_lexicon(spec, alphabet, rng):
    lexicon = {}
    used = set()
    for i in range(spec.n_words):
        while True:
            L = int(rng.integers(spec.pron_len[0], spec.pron_len[1] + 1))
            pron = tuple(int(y) for y in rng.integers(1, alphabet.size + 1, size=L))
            if pron not in used:
                used.add(pron)
                lexicon[f"w{i:02d}"] = pron
                break
    return lexicon


def words_to_labels(words, lexicon):
    out = []
    for w in words:
        if w not in lexicon:
            raise ConfigError(f"word {w!r} missing from the lexicon")
        out.extend(lexicon[w])
    return tuple(out)


def render_features(labels, prototypes, spec, rng):
    """Stack each label's prototype for a sampled duration, plus noise."""
    rows = []
    for y in labels:
        dur = int(rng.integers(spec.duration[0], spec.duration[1] + 1))
        block = np.tile(prototypes[y - 1], (dur, 1))
        rows.append(block)
    feats = np.concatenate(rows, axis=0)
    if spec.noise_std > 0:
        feats = feats + rng.normal(0.0, spec.noise_std, size=feats.shape)
    return feats


# --- serialization --------------------------------------------------------------

def save_features(path, feats):
    feats = np.asarray(feats, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<ii", feats.shape[0], feats.shape[1]))
        fh.write(feats.astype("<f8").tobytes(order="C"))


def load_features(path):
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) != 8:
            raise ParseError(f"{path}: truncated feature header")
        T, D = struct.unpack("<ii", head)
        if T < 1 or D < 1:
            raise ParseError(f"{path}: bad feature dims ({T}, {D})")
        body = fh.read()
    if len(body) != T * D * 8:
        raise ParseError(f"{path}: expected {T * D * 8} payload bytes, got {len(body)}")
    return np.frombuffer(body, dtype="<f8").reshape(T, D).copy()


def save_alphabet(path, alphabet):
    Path(path).write_text("".join(f"{n}\n" for n in alphabet.names), encoding="ascii")


def load_alphabet(path):
    names = [ln.strip() for ln in Path(path).read_text(encoding="ascii").splitlines()
             if ln.strip()]
    if not names:
        raise ParseError(f"{path}: no label names")
    return Alphabet(tuple(names))


def save_lexicon(path, lexicon, alphabet):
    with open(path, "w", encoding="ascii") as fh:
        for w in sorted(lexicon):
            names = " ".join(alphabet.name_of(y) for y in lexicon[w])
            fh.write(f"{w}\t{names}\n")


def load_lexicon(path, alphabet):
    lexicon = {}
    for i, ln in enumerate(Path(path).read_text(encoding="ascii").splitlines(), 1):
        if not ln.strip():
            continue
        parts = ln.split("\t")
        if len(parts) != 2:
            raise ParseError(f"{path}:{i}: expected 'word<TAB>labels'", line=i)
        word, names = parts
        try:
            lexicon[word] = tuple(alphabet.id_of(n) for n in names.split())
        except VocabularyError as exc:
            raise ParseError(f"{path}:{i}: {exc}", line=i)
    return lexicon


def save_dataset(dir_path, utts):
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "manifest.tsv", "w", encoding="ascii") as fh:
        for u in utts:
            fh.write(f"{u.utt_id}\t{u.features.shape[0]}\t{' '.join(u.words)}\n")
            save_features(d / f"{u.utt_id}.bin", u.features)


def load_dataset(dir_path, lexicon):
    d = Path(dir_path)
    manifest = d / "manifest.tsv"
    if not manifest.exists():
        raise ParseError(f"{manifest}: missing manifest")
    utts = []
    for i, ln in enumerate(manifest.read_text(encoding="ascii").splitlines(), 1):
        if not ln.strip():
            continue
        parts = ln.split("\t")
        if len(parts) != 3:
            raise ParseError(f"{manifest}:{i}: expected 3 tab-separated fields", line=i)
        utt_id, t_str, transcript = parts
        feats = load_features(d / f"{utt_id}.bin")
        if feats.shape[0] != int(t_str):
            raise ParseError(f"{manifest}:{i}: frame count mismatch", line=i)
        words = tuple(transcript.split())
        utts.append(Utterance(utt_id, feats, words, words_to_labels(words, lexicon)))
    return utts


def _write_corpus(path, sentences):
    Path(path).write_text("".join(" ".join(s) + "\n" for s in sentences),
                          encoding="ascii")


def load_corpus(path):
    return [ln.split() for ln in Path(path).read_text(encoding="ascii").splitlines()
            if ln.strip()]


def generate(spec, out_dir):
    """Render the full task to out_dir; returns the artifact paths.

    One seeded generator drives every draw in a fixed order, so equal specs
    give byte-identical artifact trees.  Per-utterance rendering is
    independent of ordering effects beyond that stream.
    """
    spec = spec.validate()
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    alphabet = task_alphabet(spec)
    words = [f"w{i:02d}" for i in range(spec.n_words)]
    train_grammar = random_grammar(words, rng, spec.concentration, *spec.sent_len)
    text_grammar = random_grammar(words, rng, spec.concentration, *spec.sent_len)
    prototypes = rng.uniform(-1.0, 1.0, size=(spec.n_labels, spec.d_in))
    lexicon = _sample_lexicon(spec, alphabet, rng)

    def make_split(grammar, n, prefix):
        utts = []
        for i in range(n):
            sent = grammar.sample(rng)
            labels = words_to_labels(sent, lexicon)
            feats = render_features(labels, prototypes, spec, rng)
            utts.append(Utterance(f"{prefix}{i:05d}", feats, tuple(sent), labels))
        return utts

    train = make_split(train_grammar, spec.n_train, "tr")
    test = make_split(text_grammar, spec.n_test, "te")
    corpus = [text_grammar.sample(rng) for _ in range(spec.lm_sentences)]
    label_corpus = [[alphabet.name_of(y) for y in words_to_labels(s, lexicon)]
                    for s in corpus]

    save_alphabet(out / "labels.txt", alphabet)
    save_lexicon(out / "lexicon.tsv", lexicon, alphabet)
    save_dataset(out / "train", train)
    save_dataset(out / "test", test)
    _write_corpus(out / "lm_corpus.txt", corpus)
    _write_corpus(out / "lm_corpus_labels.txt", label_corpus)
    (out / "lm.arpa").write_text(
        save_arpa(train_ngram(corpus, spec.lm_order, spec.lm_k)), encoding="ascii")
    (out / "lm_labels.arpa").write_text(
        save_arpa(train_ngram(label_corpus, spec.lm_order, spec.lm_k)),
        encoding="ascii")
    cfg_lines = [
        f"task.labels={spec.n_labels}",
        f"task.words={spec.n_words}",
        f"task.pron_min={spec.pron_len[0]}",
        f"task.pron_max={spec.pron_len[1]}",
        f"task.duration_min={spec.duration[0]}",
        f"task.duration_max={spec.duration[1]}",
        f"task.d_in={spec.d_in}",
        f"task.noise_std={spec.noise_std}",
        f"task.sent_min={spec.sent_len[0]}",
        f"task.sent_max={spec.sent_len[1]}",
        f"task.train={spec.n_train}",
        f"task.test={spec.n_test}",
        f"task.lm_sentences={spec.lm_sentences}",
        f"task.concentration={spec.concentration}",
        f"task.lm_order={spec.lm_order}",
        f"task.lm_k={spec.lm_k}",
        f"task.seed={spec.seed}",
    ]
    (out / "task.cfg").write_text("".join(f"{ln}\n" for ln in cfg_lines),
                                  encoding="ascii")
    return {
        "alphabet": out / "labels.txt",
        "lexicon": out / "lexicon.tsv",
        "train": out / "train",
        "test": out / "test",
        "lm": out / "lm.arpa",
        "lm_labels": out / "lm_labels.arpa",
        "corpus": out / "lm_corpus.txt",
        "config": out / "task.cfg",
        "grammars": (train_grammar, text_grammar),
        "prototypes": prototypes,
    }
