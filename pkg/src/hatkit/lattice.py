"""Alignment lattice: alphabets, paths, the collapse map and path enumeration.

An alignment path for T frames and U output labels is a sequence of
T + U - 1 edge symbols over V plus blank: exactly T - 1 blanks (advance
one frame) interleaved with the U labels (emit without advancing).  A
prefix with b blanks and v labels sits at lattice node (t, u) =
(1 + b, v); complete paths run from (1, 0) to (T, U).

CTC uses a different path space: length-T frame label sequences whose
collapse (merge consecutive repeats, then drop blanks) equals the target.
"""

from dataclasses import dataclass
from itertools import combinations
from math import comb

from .errors import EnumerationCapError, ShapeError, VocabularyError

BLANK_ID = 0

PATH_ENUM_CAP = 24   # max edges for transducer path enumeration
CTC_ENUM_CAP = 12    # max frames for CTC path enumeration


@dataclass(frozen=True)
class Alphabet:
    """Dense label identifiers: blank = 0, labels 1..V, start symbol V + 1."""

    names: tuple

    def __post_init__(self):
        if len(self.names) == 0:
            raise VocabularyError("alphabet needs at least one label")
        if len(set(self.names)) != len(self.names):
            raise VocabularyError("duplicate label names")
        for n in self.names:
            if not n or any(c.isspace() for c in n):
                raise VocabularyError(f"bad label name {n!r}")

    @property
    def size(self):
        return len(self.names)

    @property
    def blank_id(self):
        return BLANK_ID

    @property
    def start_id(self):
        return len(self.names) + 1

    def label_ids(self):
        return range(1, len(self.names) + 1)

    def name_of(self, ident):
        if ident == BLANK_ID:
            return "<b>"
        if ident == self.start_id:
            return "<s>"
        if 1 <= ident <= len(self.names):
            return self.names[ident - 1]
        raise VocabularyError(f"identifier {ident} outside alphabet")

    def id_of(self, name):
        try:
            return self.names.index(name) + 1
        except ValueError:
            raise VocabularyError(f"unknown label name {name!r}") from None

    def check_labels(self, labels):
        for y in labels:
            if not 1 <= y <= len(self.names):
                raise VocabularyError(f"label id {y} outside 1..{len(self.names)}")
        return tuple(labels)


def alphabet00(size):
    """Convenience alphabet with synthetic names p00, p01, ..."""
    return Alphabet(tuple(f"p{i:02d}" for i in range(size)))


@dataclass(frozen=True)
class LatticeDims:
    frames: int
    label_len: int

    def __post_init__(self):
        if self.frames < 1:
            raise ShapeError("frames must be >= 1")
        if self.label_len < 0:
            raise ShapeError("label_len must be >= 0")

    @property
    def n_edges(self):
        return self.frames + self.label_len - 1


def collapse(path):
    """Drop blank edges, keeping label order (transducer collapse map)."""
    return tuple(e for e in path if e != BLANK_ID)


def ctc_collapse(path):
    """CTC collapse: merge consecutive repeats first, then drop blanks."""
    out = []
    prev = None
    for e in path:
        if e != prev:
            out.append(e)
        prev = e
    return tuple(e for e in out if e != BLANK_ID)


def position(prefix):
    """Lattice node (t, u) reached after consuming a path prefix."""
    blanks = sum(1 for e in prefix if e == BLANK_ID)
    return (1 + blanks, len(prefix) - blanks)


def path_count(dims):
    return comb(dims.n_edges, dims.label_len)


def enumerate_paths(dims, labels, cap=PATH_ENUM_CAP):
    """All alignment paths for the given frames/labels, as a list of tuples.

    Deterministic order (label slots chosen lexicographically).  Raises
    EnumerationCapError when the path length exceeds the cap.
    """
    labels = tuple(labels)
    if len(labels) != dims.label_len:
        raise ShapeError("labels do not match dims.label_len")
    n = dims.n_edges
    if n > cap:
        raise EnumerationCapError(f"path length {n} exceeds enumeration cap {cap}")
    if n == 0:
        return [()]
    paths = []
    for slots in combinations(range(n), dims.label_len):
        path = [BLANK_ID] * n
        for lab, pos in zip(labels, slots):
            path[pos] = lab
        paths.append(tuple(path))
    return paths


def min_ctc_frames(labels):
    """Fewest frames that can carry the labels under CTC collapse."""
    labels = tuple(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def enumerate_ctc_paths(frames, labels, n_labels=None, cap=CTC_ENUM_CAP):
    """All length-`frames` symbol sequences that CTC-collapse to `labels`.

    Enumerates walks through the blank-interleaved state sequence
    (blank, y1, blank, ..., yU, blank) instead of filtering every raw
    sequence, so the cap is on the frame count only.  `n_labels` is
    unused for enumeration but kept so callers can assert vocabulary
    size; paths may only mention blank and the target labels anyway.
    """
    labels = tuple(labels)
    if frames > cap:
        raise EnumerationCapError(f"{frames} frames exceeds CTC enumeration cap {cap}")
    if frames < 1:
        raise ShapeError("frames must be >= 1")
    # augmented state symbols: blank at even positions, labels at odd
    aug = [BLANK_ID]
    for y in labels:
        aug.extend((y, BLANK_ID))
    n_states = len(aug)

    def successors(s):
        yield s
        if s + 1 < n_states:
            yield s + 1
        if s + 2 < n_states and aug[s + 2] != BLANK_ID and aug[s + 2] != aug[s]:
            yield s + 2

    finals = {n_states - 1, n_states - 2} if labels else {0}
    paths = []

    def walk(state, step, acc):
        if step == frames:
            if state in finals:
                paths.append(tuple(acc))
            return
        # prune states that cannot reach a final in the remaining steps
        remaining = frames - step
        for nxt in successors(state) if step else (0, 1) if labels else (0,):
            if (n_states - 2) - nxt <= 2 * (remaining - 1) + 1:
                acc.append(aug[nxt])
                walk(nxt, step + 1, acc)
                acc.pop()

    # first frame starts at state 0 or 1 by convention, handled above via step==0
    walk(-1, 0, [])
    return paths
