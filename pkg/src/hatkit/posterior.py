"""Local posterior grids over lattice cells, stored in the log domain.

Three grid kinds share one container:

* hat  -- factorized: a Bernoulli blank posterior b_{t,u} plus a label
          distribution over V; the blank edge carries b, a label edge
          carries (1 - b) * P(y).
* rnnt -- one softmax over V + 1 per cell; blank is just symbol 0.
* ctc  -- like rnnt but computed from the encoder alone, so the grid is
          a single column shared by every u.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numerics import log_sigmoid, log_softmax, require_finite

HAT, RNNT, CTC = "hat", "rnnt", "ctc"


@dataclass
class LocalPosteriorGrid:
    kind: str
    log_blank: np.ndarray              # (T, cols)
    log_label: np.ndarray              # (T, cols, V)
    log_blank_comp: np.ndarray | None  # (T, cols) log(1 - b), hat only

    @property
    def frames(self):
        return self.log_blank.shape[0]

    @property
    def cols(self):
        return self.log_blank.shape[1]

    @property
    def n_labels(self):
        return self.log_label.shape[2]

    def col(self, u):
        """Grid column for lattice row u (ctc grids repeat one column)."""
        return 0 if self.kind == CTC else u

    def log_edge_blank(self, t, u):
        return float(self.log_blank[t, self.col(u)])

    def log_edge_label(self, t, u, y):
        c = self.col(u)
        if self.kind == HAT:
            return float(self.log_blank_comp[t, c] + self.log_label[t, c, y - 1])
        return float(self.log_label[t, c, y - 1])

    def edge_logprobs(self, labels):
        """(horizontal, vertical) edge weights for a target label sequence.

        horizontal is (T, U+1); vertical is (T, U) with column u holding the
        weight of emitting labels[u] from lattice row u.
        """
        T, U = self.frames, len(labels)
        cols = [self.col(u) for u in range(U + 1)]
        horiz = self.log_blank[:, cols]
        if U == 0:
            return horiz, np.zeros((T, 0))
        lab_cols = cols[:U]
        idx = np.array(labels, dtype=int) - 1
        vert = self.log_label[:, lab_cols, :][:, np.arange(U), idx]
        if self.kind == HAT:
            vert = vert + self.log_blank_comp[:, lab_cols]
        return horiz, vert


def cell_parts(enc, dec, params):
    """z, activations, label scores and blank logits for all (t, u) cells."""
    enc = np.asarray(enc, dtype=float)
    dec = np.asarray(dec, dtype=float)
    if enc.ndim != 2 or dec.ndim != 2 or enc.shape[1] != dec.shape[1]:
        raise ShapeError("encoder/decoder activations must be (T, D) and (U+1, D)")
    z = enc[:, None, :] + dec[None, :, :]
    act = params.nl(z)
    scores = act @ params.joint_out + params.joint_bias
    blank = z @ params.blank_w + params.blank_bias[0]
    return z, act, scores, blank


def hat_grid(acts, params):
    """Factorized grid from activations (anything with .enc and .dec)."""
    _, _, scores, blank = cell_parts(acts.enc, acts.dec, params)
    grid = LocalPosteriorGrid(
        kind=HAT,
        log_blank=log_sigmoid(blank),
        log_label=log_softmax(scores, axis=-1),
        log_blank_comp=log_sigmoid(-blank),
    )
    require_finite("hat grid", grid.log_blank)
    require_finite("hat grid", grid.log_label)
    return grid


def rnnt_grid(acts, params):
    """Single-softmax grid: blank logit and label scores normalized together."""
    _, _, scores, blank = cell_parts(acts.enc, acts.dec, params)
    full = np.concatenate([blank[:, :, None], scores], axis=2)
    logp = log_softmax(full, axis=-1)
    return LocalPosteriorGrid(kind=RNNT, log_blank=logp[:, :, 0],
                              log_label=logp[:, :, 1:], log_blank_comp=None)


def ctc_grid(enc, params):
    """Per-frame softmax over V + 1 with no decoder dependence (g = 0)."""
    enc = np.asarray(enc, dtype=float)
    dec = np.zeros((1, enc.shape[1]))
    _, _, scores, blank = cell_parts(enc, dec, params)
    full = np.concatenate([blank[:, :, None], scores], axis=2)
    logp = log_softmax(full, axis=-1)
    return LocalPosteriorGrid(kind=CTC, log_blank=logp[:, :, 0],
                              log_label=logp[:, :, 1:], log_blank_comp=None)


def edge_posterior_sums(grid):
    """Per-cell sums of edge posteriors over V + blank (should all be 1)."""
    blank = np.exp(grid.log_blank)
    if grid.kind == HAT:
        labels = np.exp(grid.log_blank_comp)[:, :, None] * np.exp(grid.log_label)
    else:
        labels = np.exp(grid.log_label)
    return blank + labels.sum(axis=2)


def dump_grid(grid, alphabet):
    """Text dump: one line per (t, u) cell, tab-separated log edge posteriors."""
    names = ["t", "u", "<b>"] + [alphabet.name_of(y) for y in alphabet.label_ids()]
    lines = ["\t".join(names)]
    for t in range(grid.frames):
        for u in range(grid.cols):
            vals = [grid.log_edge_blank(t, u)]
            vals += [grid.log_edge_label(t, u, y) for y in alphabet.label_ids()]
            lines.append("\t".join([str(t + 1), str(u)] +
                                   [format(v, ".10g") for v in vals]))
    return "\n".join(lines) + "\n"


def check_normalization(grid, tol=1e-12):
    sums = edge_posterior_sums(grid)
    return float(np.max(np.abs(sums - 1.0))) <= tol
