"""Alphabet, collapse maps and path enumeration."""

from itertools import product
from math import comb

import pytest
from hypothesis import given, settings, strategies as st

from hatkit.errors import EnumerationCapError, ShapeError, VocabularyError
from hatkit.lattice import (BLANK_ID, Alphabet, LatticeDims, alphabet00,
                            collapse, ctc_collapse, enumerate_ctc_paths,
                            enumerate_paths, min_ctc_frames, path_count,
                            position)


def test_alphabet_ids_and_names():
    a = Alphabet(("x", "y", "z"))
    assert a.size == 3
    assert a.blank_id == 0 and a.start_id == 4
    assert list(a.label_ids()) == [1, 2, 3]
    assert a.name_of(0) == "<b>" and a.name_of(4) == "<s>"
    assert a.name_of(2) == "y" and a.id_of("y") == 2
    assert a.check_labels((1, 3)) == (1, 3)


def test_alphabet_rejects_bad_input():
    with pytest.raises(VocabularyError):
        Alphabet(())
    with pytest.raises(VocabularyError):
        Alphabet(("x", "x"))
    with pytest.raises(VocabularyError):
        Alphabet(("a b",))
    a = alphabet00(2)
    with pytest.raises(VocabularyError):
        a.name_of(5)
    with pytest.raises(VocabularyError):
        a.id_of("nope")
    with pytest.raises(VocabularyError):
        a.check_labels((0,))
    with pytest.raises(VocabularyError):
        a.check_labels((3,))


def test_alphabet00_names():
    assert alphabet00(3).names == ("p00", "p01", "p02")


def test_collapse_maps():
    assert collapse((0, 1, 0, 2, 0)) == (1, 2)
    assert collapse(()) == ()
    assert ctc_collapse((1, 1, 0, 1, 2, 2)) == (1, 1, 2)
    assert ctc_collapse((0, 0)) == ()
    assert ctc_collapse((2,)) == (2,)


def test_position_counts_blanks_and_labels():
    assert position(()) == (1, 0)
    assert position((0,)) == (2, 0)
    assert position((1,)) == (1, 1)
    assert position((0, 3, 0)) == (3, 1)


def test_lattice_dims_validation():
    assert LatticeDims(3, 2).n_edges == 4
    with pytest.raises(ShapeError):
        LatticeDims(0, 1)
    with pytest.raises(ShapeError):
        LatticeDims(2, -1)


def test_enumerate_paths_complete_and_distinct():
    dims = LatticeDims(3, 2)
    paths = enumerate_paths(dims, (1, 2))
    assert len(paths) == comb(4, 2) == path_count(dims)
    assert len(set(paths)) == len(paths)
    for p in paths:
        assert len(p) == dims.n_edges
        assert collapse(p) == (1, 2)
        assert sum(1 for e in p if e == BLANK_ID) == 2


def test_enumerate_paths_edge_cases():
    assert enumerate_paths(LatticeDims(1, 0), ()) == [()]
    assert enumerate_paths(LatticeDims(3, 0), ()) == [(0, 0)]
    with pytest.raises(ShapeError):
        enumerate_paths(LatticeDims(3, 2), (1,))
    with pytest.raises(EnumerationCapError):
        enumerate_paths(LatticeDims(20, 6), (1,) * 6)


def test_min_ctc_frames():
    assert min_ctc_frames(()) == 0
    assert min_ctc_frames((1,)) == 1
    assert min_ctc_frames((1, 2)) == 2
    assert min_ctc_frames((1, 1)) == 3
    assert min_ctc_frames((1, 1, 1)) == 5
    assert min_ctc_frames((1, 2, 2)) == 4


@pytest.mark.parametrize("frames", [1, 2, 3, 4])
@pytest.mark.parametrize("labels", [(), (1,), (2,), (1, 1), (1, 2), (2, 1, 2)])
def test_enumerate_ctc_paths_matches_literal_filter(frames, labels):
    got = sorted(enumerate_ctc_paths(frames, labels))
    want = sorted(p for p in product(range(3), repeat=frames)
                  if ctc_collapse(p) == labels)
    assert got == want


def test_enumerate_ctc_paths_infeasible_is_empty():
    assert enumerate_ctc_paths(2, (1, 1)) == []


def test_enumerate_ctc_paths_cap():
    with pytest.raises(EnumerationCapError):
        enumerate_ctc_paths(13, (1,))


@settings(deadline=None, max_examples=200)
@given(st.lists(st.integers(min_value=0, max_value=3), max_size=12))
def test_ctc_collapse_matches_reference(path):
    # independent reference: strip repeats with an explicit scan, drop blanks
    dedup = [path[i] for i in range(len(path))
             if i == 0 or path[i] != path[i - 1]]
    assert ctc_collapse(path) == tuple(e for e in dedup if e != BLANK_ID)
    assert collapse(path) == tuple(e for e in path if e != BLANK_ID)


@settings(deadline=None, max_examples=200)
@given(st.lists(st.integers(min_value=0, max_value=3), max_size=12))
def test_position_of_full_path(path):
    blanks = path.count(BLANK_ID)
    assert position(path) == (1 + blanks, len(path) - blanks)
