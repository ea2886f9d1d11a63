"""Minimal neural core: Elman trunks, projections, joint and blank heads.

The encoder and decoder trunks are shared by the blank and label heads;
the joint is a tanh applied to f_t + g_u followed by one linear layer.
Everything is float64 numpy with hand-derived gradients (in the loss
module), so no autograd framework is involved.
"""

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import ConfigError, ParseError, ShapeError, VocabularyError
from .lattice import Alphabet
from .numerics import require_finite


@dataclass(frozen=True)
class ModelDims:
    d_in: int = 16
    embed: int = 8
    enc_hidden: int = 32
    dec_hidden: int = 32
    joint: int = 32


@dataclass
class RecurrentDecoder:
    """Label-side Elman trunk; row u depends only on y_1..y_u."""

    label_embedding: np.ndarray   # (V+1, E), last row is the start symbol
    wx: np.ndarray                # (E, H_d)
    wh: np.ndarray                # (H_d, H_d)
    bias: np.ndarray              # (H_d,)
    proj: np.ndarray              # (H_d, D)

    def tensors(self):
        return {
            "label_embedding": self.label_embedding,
            "decoder_wx": self.wx,
            "decoder_wh": self.wh,
            "decoder_bias": self.bias,
            "dec_proj": self.proj,
        }


def context_keys(alphabet, context_size):
    """All reachable start-padded label c-tuples, in a fixed order."""
    keys = []
    start = alphabet.start_id
    for pad in range(context_size, -1, -1):
        for tail in product(alphabet.label_ids(), repeat=context_size - pad):
            keys.append((start,) * pad + tail)
    return keys


@dataclass
class FiniteContextTable:
    """Drop-in decoder that maps the last c labels straight to a g vector."""

    context_size: int
    keys: list
    table: np.ndarray             # (len(keys), D)
    index: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {k: i for i, k in enumerate(self.keys)}

    def key_of(self, history, start_id):
        c = self.context_size
        tail = tuple(history[-c:]) if c else ()
        return (start_id,) * (c - len(tail)) + tail

    def row_of(self, history, start_id):
        return self.index[self.key_of(history, start_id)]

    def tensors(self):
        return {"context_table": self.table}


@dataclass
class ModelParams:
    alphabet: Alphabet
    dims: ModelDims
    encoder_wx: np.ndarray        # (D_in, H_e)
    encoder_wh: np.ndarray        # (H_e, H_e)
    encoder_bias: np.ndarray      # (H_e,)
    enc_proj: np.ndarray          # (H_e, D)
    joint_out: np.ndarray         # (D, V)
    joint_bias: np.ndarray        # (V,)
    blank_w: np.ndarray           # (D,)
    blank_bias: np.ndarray        # (1,)
    decoder: object               # RecurrentDecoder | FiniteContextTable
    joint_nonlinearity: str = "tanh"

    def tensors(self):
        out = {
            "encoder_wx": self.encoder_wx,
            "encoder_wh": self.encoder_wh,
            "encoder_bias": self.encoder_bias,
            "enc_proj": self.enc_proj,
            "joint_out": self.joint_out,
            "joint_bias": self.joint_bias,
            "blank_w": self.blank_w,
            "blank_bias": self.blank_bias,
        }
        out.update(self.decoder.tensors())
        return out

    @property
    def context_size(self):
        if isinstance(self.decoder, FiniteContextTable):
            return self.decoder.context_size
        return None

    def nl(self, z):
        return np.tanh(z) if self.joint_nonlinearity == "tanh" else np.asarray(z, dtype=float)

    def nl_deriv_from_act(self, a):
        """d nl(z)/dz expressed through the activation a = nl(z)."""
        if self.joint_nonlinearity == "tanh":
            return 1.0 - a * a
        return np.ones_like(a)


def init_params(alphabet, dims, seed, context_size=None, joint_nonlinearity="tanh"):
    """Uniform [-0.1, 0.1] init from a seeded generator, fixed draw order."""
    if joint_nonlinearity not in ("tanh", "identity"):
        raise ConfigError(f"bad joint nonlinearity {joint_nonlinearity!r}")
    rng = np.random.Generator(np.random.PCG64(seed))
    u = lambda *shape: rng.uniform(-0.1, 0.1, shape)
    v = alphabet.size
    core = dict(
        encoder_wx=u(dims.d_in, dims.enc_hidden),
        encoder_wh=u(dims.enc_hidden, dims.enc_hidden),
        encoder_bias=u(dims.enc_hidden),
        enc_proj=u(dims.enc_hidden, dims.joint),
        joint_out=u(dims.joint, v),
        joint_bias=u(v),
        blank_w=u(dims.joint),
        blank_bias=u(1),
    )
    if context_size is None:
        decoder = RecurrentDecoder(
            label_embedding=u(v + 1, dims.embed),
            wx=u(dims.embed, dims.dec_hidden),
            wh=u(dims.dec_hidden, dims.dec_hidden),
            bias=u(dims.dec_hidden),
            proj=u(dims.dec_hidden, dims.joint),
        )
    else:
        if context_size < 0:
            raise ConfigError("context size must be >= 0")
        keys = context_keys(alphabet, context_size)
        decoder = FiniteContextTable(context_size, keys, u(len(keys), dims.joint))
    return ModelParams(alphabet, dims, decoder=decoder,
                       joint_nonlinearity=joint_nonlinearity, **core)


def elman_step(x, h, wx, wh, bias):
    return np.tanh(x @ wx + h @ wh + bias)


@dataclass
class EncoderTrace:
    x: np.ndarray        # (T, D_in)
    hidden: np.ndarray   # (T, H_e)
    enc: np.ndarray      # (T, D)


def encode(features, params):
    """Run the encoder trunk; returns the full trace for backprop."""
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[1] != params.dims.d_in:
        raise ShapeError(f"features must be (T, {params.dims.d_in})")
    if x.shape[0] < 1:
        raise ShapeError("need at least one frame")
    require_finite("features", x)
    T = x.shape[0]
    hidden = np.zeros((T, params.dims.enc_hidden))
    h = np.zeros(params.dims.enc_hidden)
    for t in range(T):
        h = elman_step(x[t], h, params.encoder_wx, params.encoder_wh, params.encoder_bias)
        hidden[t] = h
    enc = hidden @ params.enc_proj
    require_finite("encoder activations", enc)
    return EncoderTrace(x=x, hidden=hidden, enc=enc)


def embedding_row(params, ident):
    emb = params.decoder.label_embedding
    v = params.alphabet.size
    if ident == params.alphabet.start_id:
        return emb[v]
    if 1 <= ident <= v:
        return emb[ident - 1]
    raise VocabularyError(f"identifier {ident} has no embedding row")


@dataclass
class DecState:
    """Decoder state after consuming some label history; g is the output row."""

    g: np.ndarray
    hidden: np.ndarray | None = None   # recurrent decoder
    context: tuple | None = None       # finite-context decoder
    row: int | None = None


def decoder_start(params):
    dec = params.decoder
    if isinstance(dec, FiniteContextTable):
        key = dec.key_of((), params.alphabet.start_id)
        r = dec.index[key]
        return DecState(g=dec.table[r], context=(), row=r)
    h = elman_step(embedding_row(params, params.alphabet.start_id),
                   np.zeros(params.dims.dec_hidden), dec.wx, dec.wh, dec.bias)
    return DecState(g=h @ dec.proj, hidden=h)


def decoder_advance(params, state, label):
    params.alphabet.check_labels((label,))
    dec = params.decoder
    if isinstance(dec, FiniteContextTable):
        ctx = state.context + (label,)
        key = dec.key_of(ctx, params.alphabet.start_id)
        r = dec.index[key]
        return DecState(g=dec.table[r], context=ctx, row=r)
    h = elman_step(embedding_row(params, label), state.hidden, dec.wx, dec.wh, dec.bias)
    return DecState(g=h @ dec.proj, hidden=h)


@dataclass
class DecoderTrace:
    inputs: np.ndarray | None    # (U+1, E) embedded inputs (recurrent only)
    input_ids: tuple             # start symbol then the labels
    hidden: np.ndarray | None    # (U+1, H_d) (recurrent only)
    rows: tuple | None           # table row per u (finite only)
    dec: np.ndarray              # (U+1, D)


def decode_trace(history, params):
    """Label-side rows g_0..g_U for a history, with everything backprop needs."""
    labels = params.alphabet.check_labels(history)
    dec = params.decoder
    ids = (params.alphabet.start_id,) + labels
    U = len(labels)
    if isinstance(dec, FiniteContextTable):
        rows = []
        for u in range(U + 1):
            rows.append(dec.row_of(labels[:u], params.alphabet.start_id))
        g = dec.table[np.array(rows, dtype=int)]
        require_finite("decoder activations", g)
        return DecoderTrace(inputs=None, input_ids=ids, hidden=None, rows=tuple(rows), dec=g)
    inputs = np.stack([embedding_row(params, i) for i in ids])
    hidden = np.zeros((U + 1, params.dims.dec_hidden))
    h = np.zeros(params.dims.dec_hidden)
    for u in range(U + 1):
        h = elman_step(inputs[u], h, dec.wx, dec.wh, dec.bias)
        hidden[u] = h
    g = hidden @ dec.proj
    require_finite("decoder activations", g)
    return DecoderTrace(inputs=inputs, input_ids=ids, hidden=hidden, rows=None, dec=g)


def decode_labels(history, params):
    """Decoder rows for a history under the recurrent trunk."""
    if isinstance(params.decoder, FiniteContextTable):
        raise ConfigError("decode_labels needs the recurrent decoder")
    return decode_trace(history, params).dec


def decode_labels_finite(history, table, alphabet):
    """Decoder rows for a history under a finite-context table."""
    labels = alphabet.check_labels(history)
    rows = [table.row_of(labels[:u], alphabet.start_id) for u in range(len(labels) + 1)]
    return table.table[np.array(rows, dtype=int)]


@dataclass
class Activations:
    enc: np.ndarray   # (T, D)
    dec: np.ndarray   # (U+1, D)


def activations(features, history, params):
    return Activations(enc=encode(features, params).enc,
                       dec=decode_trace(history, params).dec)


def joint_scores(f, g, params):
    """Label scores J(f + g): nonlinearity then one linear layer."""
    a = params.nl(np.asarray(f, dtype=float) + np.asarray(g, dtype=float))
    return a @ params.joint_out + params.joint_bias


def blank_logit(f, g, params):
    """Scalar blank score w . (f + g) + bias (no nonlinearity on this path)."""
    z = np.asarray(f, dtype=float) + np.asarray(g, dtype=float)
    return float(z @ params.blank_w + params.blank_bias[0])


# --- checkpoint file format -------------------------------------------------
#
# Textual header, one line per tensor ("name dim0 dim1 ..."), then a blank
# line, then the raw little-endian float64 data in header order.  Scalar
# model facts ride along as 1-element meta tensors.

_META_CONTEXT = "meta_context_size"     # -1 for the recurrent decoder
_META_IDENTITY = "meta_joint_identity"  # 1 when the joint nonlinearity is identity


def save_checkpoint(params, path):
    ctx = params.context_size
    meta = {
        _META_CONTEXT: np.array([float(-1 if ctx is None else ctx)]),
        _META_IDENTITY: np.array([1.0 if params.joint_nonlinearity == "identity" else 0.0]),
    }
    entries = list(meta.items()) + list(params.tensors().items())
    with open(path, "wb") as fh:
        for name, arr in entries:
            dims = " ".join(str(d) for d in arr.shape)
            fh.write(f"{name} {dims}\n".encode("ascii"))
        fh.write(b"\n")
        for _, arr in entries:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path, alphabet):
    with open(path, "rb") as fh:
        raw = fh.read()
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise ParseError("checkpoint has no header/data separator")
    header, data = raw[:sep].decode("ascii"), raw[sep + 2:]
    entries = []
    for lineno, line in enumerate(header.splitlines(), start=1):
        parts = line.split()
        if not parts:
            raise ParseError("empty header line", lineno)
        try:
            shape = tuple(int(p) for p in parts[1:])
        except ValueError:
            raise ParseError(f"bad shape in {line!r}", lineno) from None
        entries.append((parts[0], shape))
    tensors = {}
    off = 0
    for name, shape in entries:
        n = int(np.prod(shape)) if shape else 1
        chunk = data[off:off + 8 * n]
        if len(chunk) != 8 * n:
            raise ParseError(f"checkpoint truncated at tensor {name}")
        tensors[name] = np.frombuffer(chunk, dtype="<f8").astype(float).reshape(shape)
        off += 8 * n
    if off != len(data):
        raise ParseError("checkpoint has trailing bytes after declared tensors")

    def take(name):
        if name not in tensors:
            raise ParseError(f"checkpoint is missing tensor {name}")
        return tensors[name]

    ctx = int(take(_META_CONTEXT)[0])
    identity = bool(take(_META_IDENTITY)[0])
    joint_out = take("joint_out")
    if joint_out.shape[1] != alphabet.size:
        raise ParseError(f"checkpoint vocabulary {joint_out.shape[1]} "
                         f"does not match alphabet size {alphabet.size}")
    d_in, enc_hidden = take("encoder_wx").shape
    joint_dim = take("enc_proj").shape[1]
    if ctx < 0:
        emb = take("label_embedding")
        dims = ModelDims(d_in=d_in, embed=emb.shape[1], enc_hidden=enc_hidden,
                         dec_hidden=take("decoder_wh").shape[0], joint=joint_dim)
        decoder = RecurrentDecoder(label_embedding=emb, wx=take("decoder_wx"),
                                   wh=take("decoder_wh"), bias=take("decoder_bias"),
                                   proj=take("dec_proj"))
    else:
        dims = ModelDims(d_in=d_in, embed=0, enc_hidden=enc_hidden,
                         dec_hidden=0, joint=joint_dim)
        keys = context_keys(alphabet, ctx)
        table = take("context_table")
        if table.shape[0] != len(keys):
            raise ParseError("context table size does not match alphabet/context")
        decoder = FiniteContextTable(ctx, keys, table)
    return ModelParams(
        alphabet=alphabet, dims=dims,
        encoder_wx=take("encoder_wx"), encoder_wh=take("encoder_wh"),
        encoder_bias=take("encoder_bias"), enc_proj=take("enc_proj"),
        joint_out=joint_out, joint_bias=take("joint_bias"),
        blank_w=take("blank_w"), blank_bias=take("blank_bias"),
        decoder=decoder,
        joint_nonlinearity="identity" if identity else "tanh",
    )
