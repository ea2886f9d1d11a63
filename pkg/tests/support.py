"""Shared builders for the test suite: tiny random models, features and LMs."""

import numpy as np

from hatkit.lattice import alphabet00
from hatkit.network import ModelDims, init_params
from hatkit.ngram import train_ngram


def tiny_dims(d_in=4, embed=3, enc=5, dec=5, joint=6):
    return ModelDims(d_in=d_in, embed=embed, enc_hidden=enc,
                     dec_hidden=dec, joint=joint)


def random_model(rng, n_labels, d_in=4, context_size=None,
                 joint_nonlinearity="tanh"):
    seed = int(rng.integers(0, 2**31 - 1))
    return init_params(alphabet00(n_labels), tiny_dims(d_in=d_in), seed,
                       context_size=context_size,
                       joint_nonlinearity=joint_nonlinearity)


def random_features(rng, T, d_in=4):
    return rng.uniform(-1.0, 1.0, size=(T, d_in))


def random_labels(rng, n_labels, U):
    return tuple(int(y) for y in rng.integers(1, n_labels + 1, size=U))


def label_lm(alphabet, order=2, k=0.5):
    """Small deterministic n-gram over the alphabet's label names."""
    names = list(alphabet.names)
    corpus = []
    for i, name in enumerate(names):
        corpus.append([name, names[(i + 1) % len(names)]])
        corpus.append([name])
    return train_ngram(corpus, order, k)


def zero_params(params):
    """Zero every tensor in place; grids become exactly uniform."""
    for t in params.tensors().values():
        t[...] = 0.0
    return params
