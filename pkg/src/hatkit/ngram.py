"""Backoff n-gram language model with add-k smoothing and ARPA file I/O.

Each order stores add-k probabilities for the n-grams actually observed;
the leftover mass of every context is routed through a backoff weight to
the next shorter context, so the distribution over the predictable
vocabulary (corpus tokens, the end marker and the unknown token; the
start marker is context-only) sums to one exactly.  Files hold log10
values, scoring returns natural logs.
"""

import math
from collections import Counter
from dataclasses import dataclass, field

from .errors import ConfigError, ParseError

BOS, EOS, UNK = "<s>", "</s>", "<unk>"
LN10 = math.log(10.0)
MISSING_LOG10 = -99.0


@dataclass
class NGramModel:
    order: int
    entries: dict = field(default_factory=dict)   # context tuple -> {token: log10 p}
    backoffs: dict = field(default_factory=dict)  # ngram tuple -> log10 weight

    @property
    def vocab(self):
        return set(self.entries.get((), {}))

    def predictable(self):
        return sorted(self.vocab - {BOS})

    def initial_state(self):
        return (BOS,)[: self.order - 1] if self.order > 1 else ()

    def map_token(self, token):
        return token if token in self.vocab else UNK

    def score(self, state, token):
        """Natural-log probability of token after state, plus the next state.

        Unknown tokens map to the unknown marker; contexts without an
        explicit entry fall back with their stored weight (default 1).
        """
        w = self.map_token(token)
        ctx = tuple(state)[-(self.order - 1):] if self.order > 1 else ()
        bo = 0.0
        while True:
            probs = self.entries.get(ctx)
            if probs is not None and w in probs:
                logp = probs[w] + bo
                break
            bo += self.backoffs.get(ctx, 0.0)
            if not ctx:
                logp = MISSING_LOG10 + bo
                break
            ctx = ctx[1:]
        next_state = (tuple(state) + (w,))[-(self.order - 1):] if self.order > 1 else ()
        return logp * LN10, next_state

    def sequence_logprob(self, tokens, include_eos=True):
        """Natural-log probability of one sentence (EOS term included by default)."""
        state = self.initial_state()
        total = 0.0
        seq = list(tokens) + ([EOS] if include_eos else [])
        for tok in seq:
            lp, state = self.score(state, tok)
            total += lp
        return total, len(seq)


def _sentences(corpus):
    for line in corpus:
        yield line.split() if isinstance(line, str) else list(line)


def train_ngram(corpus, order, k=0.1):
    """Fit an add-k backoff model of the given order on a token corpus.

    corpus is an iterable of sentences (strings or token lists).
    Deterministic: same corpus, same model, bit for bit.
    """
    if order < 1:
        raise ConfigError("ngram order must be >= 1")
    if not k > 0.0:
        raise ConfigError("add-k constant must be > 0")
    sentences = list(_sentences(corpus))
    if not any(sentences):
        raise ConfigError("ngram training corpus is empty")

    counts = {}   # context tuple -> Counter of following tokens
    tokens_seen = set()
    for sent in sentences:
        for w in sent:
            if w in (BOS, EOS, UNK):
                raise ConfigError(f"reserved token {w!r} in corpus")
        hist = [BOS]
        for w in sent + [EOS]:
            for n in range(order):
                ctx = tuple(hist[-n:]) if n else ()
                counts.setdefault(ctx, Counter())[w] += 1
            hist.append(w)
        tokens_seen.update(sent)

    predictable = sorted(tokens_seen | {EOS, UNK})
    v = len(predictable)
    model = NGramModel(order=order)

    # unigrams cover the whole predictable vocabulary; BOS rides along as a
    # context-only entry so files can carry its backoff weight
    uni = counts.get((), Counter())
    total = sum(uni.values())
    model.entries[()] = {w: math.log10((uni.get(w, 0) + k) / (total + k * v))
                         for w in predictable}
    model.entries[()][BOS] = MISSING_LOG10

    for ctx_len in range(1, order):
        contexts = sorted(c for c in counts if len(c) == ctx_len)
        for ctx in contexts:
            ctr = counts[ctx]
            ctx_total = sum(ctr.values())
            probs = {w: math.log10((c + k) / (ctx_total + k * v))
                     for w, c in sorted(ctr.items())}
            model.entries[ctx] = probs
            explicit = math.fsum(10.0 ** p for p in probs.values())
            shorter = math.fsum(
                math.exp(model.score(ctx[1:], w)[0]) for w in sorted(ctr))
            denom = 1.0 - shorter
            if denom <= 1e-12:
                model.backoffs[ctx] = 0.0
            else:
                model.backoffs[ctx] = math.log10((1.0 - explicit) / denom)
    return model


def perplexity(model, corpus):
    """exp(-mean natural log prob) over all scored tokens (EOS included)."""
    total = 0.0
    n = 0
    for sent in _sentences(corpus):
        lp, m = model.sequence_logprob(sent)
        total += lp
        n += m
    if n == 0:
        raise ConfigError("perplexity needs a non-empty corpus")
    return math.exp(-total / n)


# --- ARPA text format ---------------------------------------------------------

def save_arpa(model):
    """Render the model as ARPA text (log10, sections per order, sorted)."""
    grams = {n: [] for n in range(1, model.order + 1)}
    for ctx in sorted(model.entries, key=lambda c: (len(c), c)):
        for w in sorted(model.entries[ctx]):
            grams[len(ctx) + 1].append(ctx + (w,))
    lines = ["\\data\\"]
    for n in range(1, model.order + 1):
        lines.append(f"ngram {n}={len(grams[n])}")
    lines.append("")
    for n in range(1, model.order + 1):
        lines.append(f"\\{n}-grams:")
        for gram in sorted(grams[n]):
            logp = model.entries[gram[:-1]][gram[-1]]
            row = f"{logp:.7f}\t{' '.join(gram)}"
            if n < model.order and gram in model.backoffs:
                row += f"\t{model.backoffs[gram]:.7f}"
            lines.append(row)
        lines.append("")
    lines.append("\\end\\")
    return "\n".join(lines) + "\n"


def load_arpa(text):
    """Parse ARPA text into a model; malformed input raises with a line number."""
    lines = text.splitlines()
    declared = {}
    i = 0
    while i < len(lines) and lines[i].strip() != "\\data\\":
        if lines[i].strip():
            raise ParseError("expected \\data\\ header", i + 1)
        i += 1
    if i == len(lines):
        raise ParseError("missing \\data\\ header")
    i += 1
    while i < len(lines) and lines[i].strip():
        row = lines[i].strip()
        if not row.startswith("ngram "):
            raise ParseError(f"bad count line {row!r}", i + 1)
        try:
            n, cnt = row[len("ngram "):].split("=")
            declared[int(n)] = int(cnt)
        except ValueError:
            raise ParseError(f"bad count line {row!r}", i + 1) from None
        i += 1
    if not declared or sorted(declared) != list(range(1, max(declared) + 1)):
        raise ParseError("ngram counts must cover orders 1..n")
    model = NGramModel(order=max(declared))
    seen = Counter()
    current = None
    for lineno in range(i, len(lines)):
        row = lines[lineno].strip()
        if not row:
            continue
        if row == "\\end\\":
            current = "end"
            continue
        if row.startswith("\\") and row.endswith("-grams:"):
            try:
                current = int(row[1:-len("-grams:")])
            except ValueError:
                raise ParseError(f"bad section {row!r}", lineno + 1) from None
            if current not in declared:
                raise ParseError(f"section order {current} not declared", lineno + 1)
            continue
        if current == "end":
            raise ParseError("content after \\end\\", lineno + 1)
        if current is None:
            raise ParseError(f"entry outside any section: {row!r}", lineno + 1)
        fields = row.split()
        if len(fields) not in (current + 1, current + 2):
            raise ParseError(f"expected {current}-gram entry, got {row!r}", lineno + 1)
        try:
            logp = float(fields[0])
            backoff = float(fields[current + 1]) if len(fields) == current + 2 else None
        except ValueError:
            raise ParseError(f"bad number in {row!r}", lineno + 1) from None
        gram = tuple(fields[1:current + 1])
        model.entries.setdefault(gram[:-1], {})[gram[-1]] = logp
        if backoff is not None:
            model.backoffs[gram] = backoff
        seen[current] += 1
    if current != "end":
        raise ParseError("missing \\end\\ terminator")
    for n, cnt in declared.items():
        if seen[n] != cnt:
            raise ParseError(f"declared {cnt} {n}-grams, found {seen[n]}")
    return model
