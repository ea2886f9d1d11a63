"""Trunks, decoders, heads and the checkpoint format."""

import numpy as np
import pytest

from hatkit.errors import NumericError, ParseError, ShapeError, VocabularyError
from hatkit.lattice import Alphabet, alphabet00
from hatkit.network import (ModelDims, blank_logit, context_keys,
                            decode_labels_finite, decode_trace, decoder_advance,
                            decoder_start, embedding_row, encode, init_params,
                            joint_scores, load_checkpoint, save_checkpoint)
from support import random_features, tiny_dims


def small_params(seed=3, n_labels=3, **kw):
    return init_params(alphabet00(n_labels), tiny_dims(), seed, **kw)


def test_init_is_seed_deterministic():
    a = small_params(seed=5)
    b = small_params(seed=5)
    c = small_params(seed=6)
    for name, t in a.tensors().items():
        assert np.array_equal(t, b.tensors()[name])
    assert any(not np.array_equal(t, c.tensors()[name])
               for name, t in a.tensors().items())
    assert np.all(np.abs(a.encoder_wx) <= 0.1)


def test_encoder_matches_direct_recurrence():
    params = small_params()
    rng = np.random.Generator(np.random.PCG64(0))
    x = random_features(rng, 5)
    trace = encode(x, params)
    h = np.zeros(params.dims.enc_hidden)
    for t in range(5):
        h = np.tanh(x[t] @ params.encoder_wx + h @ params.encoder_wh
                    + params.encoder_bias)
        assert np.max(np.abs(trace.hidden[t] - h)) <= 1e-14
        assert np.max(np.abs(trace.enc[t] - h @ params.enc_proj)) <= 1e-14


def test_encoder_shape_and_finite_checks():
    params = small_params()
    with pytest.raises(ShapeError):
        encode(np.zeros((3, 2)), params)
    with pytest.raises(ShapeError):
        encode(np.zeros((0, 4)), params)
    with pytest.raises(ShapeError):
        encode(np.zeros(4), params)
    bad = np.zeros((2, 4))
    bad[1, 0] = np.nan
    with pytest.raises(NumericError):
        encode(bad, params)


def test_decoder_row_depends_only_on_prefix():
    params = small_params()
    full = decode_trace((1, 3, 2), params)
    for u in range(4):
        part = decode_trace((1, 3, 2)[:u], params)
        assert np.max(np.abs(full.dec[: u + 1] - part.dec)) <= 1e-14


def test_decoder_advance_matches_trace():
    for ctx in (None, 0, 2):
        params = small_params(context_size=ctx)
        labels = (2, 1, 1)
        trace = decode_trace(labels, params)
        state = decoder_start(params)
        assert np.max(np.abs(state.g - trace.dec[0])) <= 1e-15
        for u, y in enumerate(labels, 1):
            state = decoder_advance(params, state, y)
            assert np.max(np.abs(state.g - trace.dec[u])) <= 1e-15


def test_context_keys_are_start_padded_and_complete():
    a = alphabet00(3)
    keys = context_keys(a, 2)
    assert len(keys) == 1 + 3 + 9
    assert keys[0] == (a.start_id, a.start_id)
    assert len(set(keys)) == len(keys)
    assert all(len(k) == 2 for k in keys)


def test_finite_table_key_padding_and_rows():
    params = small_params(context_size=2)
    table = params.decoder
    start = params.alphabet.start_id
    assert table.key_of((), start) == (start, start)
    assert table.key_of((3,), start) == (start, 3)
    assert table.key_of((1, 2, 3), start) == (2, 3)
    labels = (1, 2, 3, 3)
    trace = decode_trace(labels, params)
    direct = decode_labels_finite(labels, table, params.alphabet)
    assert np.array_equal(trace.dec, direct)
    # rows with the same trailing context share a table entry exactly
    g1 = decode_trace((1, 2, 3), params).dec[-1]
    g2 = decode_trace((2, 2, 3), params).dec[-1]
    assert np.array_equal(g1, g2)


def test_zero_context_table_ignores_history():
    params = small_params(context_size=0)
    assert np.array_equal(decode_trace((1, 2), params).dec[0],
                          decode_trace((1, 2), params).dec[2])


def test_embedding_rows():
    params = small_params()
    emb = params.decoder.label_embedding
    assert np.array_equal(embedding_row(params, 1), emb[0])
    assert np.array_equal(embedding_row(params, params.alphabet.start_id),
                          emb[params.alphabet.size])
    with pytest.raises(VocabularyError):
        embedding_row(params, 0)


def test_joint_and_blank_heads():
    params = small_params()
    rng = np.random.Generator(np.random.PCG64(1))
    f = rng.normal(size=params.dims.joint)
    g = rng.normal(size=params.dims.joint)
    want = np.tanh(f + g) @ params.joint_out + params.joint_bias
    assert np.max(np.abs(joint_scores(f, g, params) - want)) <= 1e-14
    # the blank path has no nonlinearity, so it is additive in its inputs
    z = np.zeros_like(f)
    got = blank_logit(f, g, params)
    assert abs(got - ((f + g) @ params.blank_w + params.blank_bias[0])) <= 1e-14
    assert abs(got - (blank_logit(f, z, params) + blank_logit(z, g, params)
                      - blank_logit(z, z, params))) <= 1e-12


def test_identity_joint_switch():
    params = small_params(joint_nonlinearity="identity")
    f = np.ones(params.dims.joint)
    g = np.ones(params.dims.joint)
    want = (f + g) @ params.joint_out + params.joint_bias
    assert np.max(np.abs(joint_scores(f, g, params) - want)) <= 1e-14
    with pytest.raises(Exception):
        small_params(joint_nonlinearity="relu")


@pytest.mark.parametrize("ctx,nl", [(None, "tanh"), (None, "identity"),
                                    (0, "tanh"), (2, "tanh")])
def test_checkpoint_round_trip(tmp_path, ctx, nl):
    params = small_params(seed=9, context_size=ctx, joint_nonlinearity=nl)
    path = tmp_path / "model.bin"
    save_checkpoint(params, path)
    loaded = load_checkpoint(path, params.alphabet)
    assert loaded.context_size == params.context_size
    assert loaded.joint_nonlinearity == nl
    for name, t in params.tensors().items():
        assert np.array_equal(t, loaded.tensors()[name])
    save_checkpoint(loaded, tmp_path / "again.bin")
    assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_corruption(tmp_path):
    params = small_params()
    path = tmp_path / "model.bin"
    save_checkpoint(params, path)
    raw = path.read_bytes()
    with pytest.raises(ParseError):
        load_checkpoint(path, alphabet00(4))    # vocabulary mismatch
    (tmp_path / "trunc.bin").write_bytes(raw[:-16])
    with pytest.raises(ParseError):
        load_checkpoint(tmp_path / "trunc.bin", params.alphabet)
    (tmp_path / "nosep.bin").write_bytes(raw.split(b"\n\n")[0])
    with pytest.raises(ParseError):
        load_checkpoint(tmp_path / "nosep.bin", params.alphabet)
    (tmp_path / "extra.bin").write_bytes(raw + b"\x00" * 8)
    with pytest.raises(ParseError):
        load_checkpoint(tmp_path / "extra.bin", params.alphabet)


def test_wide_configuration_is_reachable():
    alphabet = Alphabet(tuple(f"u{i:02d}" for i in range(42)))
    dims = ModelDims(d_in=16, embed=8, enc_hidden=32, dec_hidden=32, joint=768)
    params = init_params(alphabet, dims, seed=1)
    assert params.joint_out.shape == (768, 42)
    rng = np.random.Generator(np.random.PCG64(2))
    enc = encode(rng.normal(size=(3, 16)), params).enc
    assert enc.shape == (3, 768)
    assert joint_scores(enc[0], decode_trace((7,), params).dec[1],
                        params).shape == (42,)
