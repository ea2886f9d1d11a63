"""Local posterior grids: factorization, normalization, column sharing."""

import numpy as np
import pytest

from hatkit.errors import ShapeError
from hatkit.network import activations, blank_logit, joint_scores
from hatkit.numerics import log_softmax
from hatkit.posterior import (cell_parts, check_normalization, ctc_grid,
                              dump_grid, edge_posterior_sums, hat_grid,
                              rnnt_grid)
from support import random_features, random_labels, random_model, zero_params


def build(rng, T=4, U=2, V=3):
    params = random_model(rng, V)
    feats = random_features(rng, T)
    labels = random_labels(rng, V, U)
    return params, activations(feats, labels, params), labels


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def test_hat_edges_match_direct_formula():
    rng = np.random.Generator(np.random.PCG64(10))
    params, acts, _ = build(rng)
    grid = hat_grid(acts, params)
    for t in range(acts.enc.shape[0]):
        for u in range(acts.dec.shape[0]):
            f, g = acts.enc[t], acts.dec[u]
            b = sigmoid(blank_logit(f, g, params))
            p = np.exp(log_softmax(joint_scores(f, g, params)))
            assert abs(np.exp(grid.log_edge_blank(t, u)) - b) <= 1e-12
            for y in params.alphabet.label_ids():
                want = (1.0 - b) * p[y - 1]
                assert abs(np.exp(grid.log_edge_label(t, u, y)) - want) <= 1e-12


def test_zero_model_is_exactly_uniform():
    rng = np.random.Generator(np.random.PCG64(11))
    params, _, _ = build(rng, V=4)
    zero_params(params)
    acts = activations(np.zeros((3, 4)), (1, 2), params)
    hat = hat_grid(acts, params)
    assert np.max(np.abs(np.exp(hat.log_blank) - 0.5)) == 0.0
    assert np.max(np.abs(np.exp(hat.log_label) - 0.25)) <= 1e-15
    rnnt = rnnt_grid(acts, params)
    assert np.max(np.abs(np.exp(rnnt.log_blank) - 0.2)) <= 1e-15
    ctc = ctc_grid(acts.enc, params)
    assert np.max(np.abs(np.exp(ctc.log_label) - 0.2)) <= 1e-15


@pytest.mark.parametrize("kind", ["hat", "rnnt", "ctc"])
def test_edge_posteriors_sum_to_one(kind):
    rng = np.random.Generator(np.random.PCG64(12))
    for _ in range(10):
        params, acts, _ = build(rng, T=3, U=2)
        if kind == "hat":
            grid = hat_grid(acts, params)
        elif kind == "rnnt":
            grid = rnnt_grid(acts, params)
        else:
            grid = ctc_grid(acts.enc, params)
        sums = edge_posterior_sums(grid)
        assert np.max(np.abs(sums - 1.0)) <= 1e-12
        assert check_normalization(grid)


def test_check_normalization_catches_damage():
    rng = np.random.Generator(np.random.PCG64(13))
    params, acts, _ = build(rng)
    grid = hat_grid(acts, params)
    grid.log_blank = grid.log_blank + 0.05
    assert not check_normalization(grid)


def test_ctc_grid_is_one_shared_column():
    rng = np.random.Generator(np.random.PCG64(14))
    params, acts, _ = build(rng)
    grid = ctc_grid(acts.enc, params)
    assert grid.cols == 1
    assert grid.log_edge_blank(1, 0) == grid.log_edge_blank(1, 7)
    assert grid.log_edge_label(0, 0, 2) == grid.log_edge_label(0, 5, 2)


def test_edge_logprobs_match_cell_queries():
    rng = np.random.Generator(np.random.PCG64(15))
    params, acts, labels = build(rng, T=3, U=2)
    grid = hat_grid(acts, params)
    horiz, vert = grid.edge_logprobs(labels)
    assert horiz.shape == (3, 3) and vert.shape == (3, 2)
    for t in range(3):
        for u in range(3):
            assert abs(horiz[t, u] - grid.log_edge_blank(t, u)) <= 1e-15
        for u, y in enumerate(labels):
            assert abs(vert[t, u] - grid.log_edge_label(t, u, y)) <= 1e-15
    horiz0, vert0 = grid.edge_logprobs(())
    assert vert0.shape == (3, 0) and horiz0.shape == (3, 1)


def test_dump_grid_is_parseable_and_exact():
    rng = np.random.Generator(np.random.PCG64(16))
    params, acts, _ = build(rng, T=2, U=1)
    grid = hat_grid(acts, params)
    text = dump_grid(grid, params.alphabet)
    lines = text.splitlines()
    assert lines[0] == "t\tu\t<b>\tp00\tp01\tp02"
    assert len(lines) == 1 + grid.frames * grid.cols
    t, u, blank = lines[1].split("\t")[:3]
    assert (t, u) == ("1", "0")
    assert abs(float(blank) - grid.log_edge_blank(0, 0)) <= 1e-9


def test_cell_parts_checks_shapes():
    rng = np.random.Generator(np.random.PCG64(17))
    params, acts, _ = build(rng)
    with pytest.raises(ShapeError):
        cell_parts(acts.enc, acts.dec[:, :-1], params)
    with pytest.raises(ShapeError):
        cell_parts(acts.enc[0], acts.dec, params)
