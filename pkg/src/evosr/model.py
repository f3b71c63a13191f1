"""Data-to-equation network: point-set encoder feeding a causal transformer.

The encoder stacks (x, y) pairs as a 2-channel point set, applies k=1
convolutions with gelu, max-pools over the set axis (the order-invariance
source), and projects to d_model. The decoder is GPT-style but with every
normalization layer removed; the data embedding is injected as a prefix
pseudo-token, so logits row i is conditioned on the embedding plus target
tokens < i. Genomes expose weight layers by name for layer-wise evolution;
bias terms are carried along but never evolved.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import expressions as ex

CHECKPOINT_MAGIC = b"EVSRCKPT"
CHECKPOINT_VERSION = 1
INIT_RANGE = 0.08
_MASK_FILL = -1e9


class UnknownLayer(KeyError):
    pass


class SequenceTooLong(ValueError):
    pass


class NonFiniteActivation(ArithmeticError):
    """A forward pass left the finite range (extreme inputs or weights)."""


class ConfigMismatch(ValueError):
    """Two genomes are not layer-aligned."""


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_blocks: int = 2
    n_heads: int = 2
    d_model: int = 32
    d_ff: int = 64
    max_seq: int = 32
    vocab: int = ex.VOCAB_SIZE
    dropout_p: float = 0.1
    encoder_channels: tuple[int, ...] = (16, 32, 32)

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(self.encoder_channels))
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.max_seq < ex.MAX_PRIMITIVES + 2:
            raise ValueError(f"max_seq must be >= {ex.MAX_PRIMITIVES + 2}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        if min((self.n_blocks, self.n_heads, self.d_model, self.d_ff, self.vocab),
               default=0) < 1 or not self.encoder_channels:
            raise ValueError("all dimensions must be positive")

    def to_dict(self) -> dict:
        return {
            "n_blocks": self.n_blocks,
            "n_heads": self.n_heads,
            "d_model": self.d_model,
            "d_ff": self.d_ff,
            "max_seq": self.max_seq,
            "vocab": self.vocab,
            "dropout_p": self.dropout_p,
            "encoder_channels": list(self.encoder_channels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class LayerSpec:
    name: str
    w_shape: tuple[int, ...]
    b_shape: tuple[int, ...] | None


def layer_specs(cfg: ModelConfig) -> tuple[LayerSpec, ...]:
    """Deterministic layer order; fully determined by config."""
    specs = []
    c_prev = 2  # (x, y) channels
    for i, c in enumerate(cfg.encoder_channels):
        specs.append(LayerSpec(f"enc{i}", (c, c_prev, 1), (c,)))
        c_prev = c
    specs.append(LayerSpec("enc_fc", (c_prev, cfg.d_model), (cfg.d_model,)))
    specs.append(LayerSpec("tok_embed", (cfg.vocab, cfg.d_model), None))
    specs.append(LayerSpec("pos_embed", (cfg.max_seq + 1, cfg.d_model), None))
    for b in range(cfg.n_blocks):
        for proj in ("attn_q", "attn_k", "attn_v", "attn_out"):
            specs.append(LayerSpec(f"block{b}.{proj}",
                                   (cfg.d_model, cfg.d_model), (cfg.d_model,)))
        specs.append(LayerSpec(f"block{b}.mlp_fc1", (cfg.d_model, cfg.d_ff), (cfg.d_ff,)))
        specs.append(LayerSpec(f"block{b}.mlp_fc2", (cfg.d_ff, cfg.d_model), (cfg.d_model,)))
    specs.append(LayerSpec("head", (cfg.d_model, cfg.vocab), (cfg.vocab,)))
    return tuple(specs)


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class NetworkGenome:
    """Ordered named weight/bias arrays; arrays are read-only."""

    config: ModelConfig
    names: tuple[str, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray | None, ...]

    def __eq__(self, other):
        if not isinstance(other, NetworkGenome):
            return NotImplemented
        return (self.config == other.config
                and self.names == other.names
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
                and all((a is None) == (b is None) and (a is None or np.array_equal(a, b))
                        for a, b in zip(self.biases, other.biases)))

    __hash__ = None

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownLayer(name) from None


@dataclass(frozen=True)
class Embedding:
    vector: np.ndarray


def init_genome(cfg: ModelConfig, rng: np.random.Generator) -> NetworkGenome:
    """Uniform [-0.08, 0.08] weights, zero biases; draw order = layer order."""
    names, weights, biases = [], [], []
    for spec in layer_specs(cfg):
        names.append(spec.name)
        weights.append(_frozen(rng.uniform(-INIT_RANGE, INIT_RANGE, size=spec.w_shape)))
        biases.append(None if spec.b_shape is None else _frozen(np.zeros(spec.b_shape)))
    return NetworkGenome(config=cfg, names=tuple(names),
                         weights=tuple(weights), biases=tuple(biases))


def layer_names(g: NetworkGenome) -> tuple[str, ...]:
    return g.names


def get_layer(g: NetworkGenome, name: str) -> np.ndarray:
    return g.weights[g.index_of(name)]


def get_bias(g: NetworkGenome, name: str) -> np.ndarray | None:
    return g.biases[g.index_of(name)]


def set_layer(g: NetworkGenome, name: str, w: np.ndarray) -> NetworkGenome:
    """New genome with one weight layer replaced; everything else shared."""
    i = g.index_of(name)
    if tuple(w.shape) != g.weights[i].shape:
        raise ad.ShapeMismatch(f"layer {name}: {w.shape} != {g.weights[i].shape}")
    weights = list(g.weights)
    weights[i] = _frozen(w)
    return NetworkGenome(config=g.config, names=g.names,
                         weights=tuple(weights), biases=g.biases)


def tensorize(g: NetworkGenome, requires_grad: bool = False) -> dict:
    """name -> (weight Tensor, bias Tensor or None), for forward passes."""
    out = {}
    for name, w, b in zip(g.names, g.weights, g.biases):
        out[name] = (ad.Tensor(w, requires_grad=requires_grad),
                     None if b is None else ad.Tensor(b, requires_grad=requires_grad))
    return out


def genome_from_params(cfg: ModelConfig, params: dict) -> NetworkGenome:
    names, weights, biases = [], [], []
    for spec in layer_specs(cfg):
        w, b = params[spec.name]
        names.append(spec.name)
        weights.append(_frozen(w.data))
        biases.append(None if b is None else _frozen(b.data))
    return NetworkGenome(config=cfg, names=tuple(names),
                         weights=tuple(weights), biases=tuple(biases))


def _linear(params: dict, name: str, x: ad.Tensor) -> ad.Tensor:
    w, b = params[name]
    return ad.add(ad.matmul(x, w), b)


def encode_params(params: dict, cfg: ModelConfig, xs: Sequence[float],
                  ys: Sequence[float]) -> ad.Tensor:
    """(1, d_model) embedding of one XY set."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.size == 0:
        raise ad.ShapeMismatch(f"encode needs equal-length 1-D xs/ys, got {xs.shape}/{ys.shape}")
    h = ad.Tensor(np.stack([xs, ys]))
    for i in range(len(cfg.encoder_channels)):
        w, b = params[f"enc{i}"]
        h = ad.gelu(ad.conv1d(h, w, b))
    pooled = ad.reshape(ad.max_over_set(h), (1, cfg.encoder_channels[-1]))
    return _linear(params, "enc_fc", pooled)


def _causal_mask(rows: int) -> ad.Tensor:
    m = np.triu(np.full((rows, rows), _MASK_FILL), k=1)
    return ad.Tensor(m)


def _attention(params: dict, cfg: ModelConfig, blk: int, h: ad.Tensor,
               training: bool, rng) -> ad.Tensor:
    rows = h.shape[0]
    d_k = cfg.d_model // cfg.n_heads
    q = _linear(params, f"block{blk}.attn_q", h)
    k = _linear(params, f"block{blk}.attn_k", h)
    v = _linear(params, f"block{blk}.attn_v", h)
    mask = _causal_mask(rows)
    heads = []
    for i in range(cfg.n_heads):
        lo, hi = i * d_k, (i + 1) * d_k
        qh = ad.slice_tensor(q, 1, lo, hi)
        kh = ad.slice_tensor(k, 1, lo, hi)
        vh = ad.slice_tensor(v, 1, lo, hi)
        scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), 1.0 / np.sqrt(d_k))
        attn = ad.softmax(ad.add(scores, mask), axis=-1)
        attn = ad.dropout(attn, cfg.dropout_p, training, rng)
        heads.append(ad.matmul(attn, vh))
    out = _linear(params, f"block{blk}.attn_out", ad.concat(heads, axis=1))
    return ad.dropout(out, cfg.dropout_p, training, rng)


def _mlp(params: dict, cfg: ModelConfig, blk: int, h: ad.Tensor,
         training: bool, rng) -> ad.Tensor:
    h = ad.gelu(_linear(params, f"block{blk}.mlp_fc1", h))
    h = _linear(params, f"block{blk}.mlp_fc2", h)
    return ad.dropout(h, cfg.dropout_p, training, rng)


def forward_logits_params(params: dict, cfg: ModelConfig, xs, ys,
                          tokens: Sequence[int], training: bool = False,
                          rng: np.random.Generator | None = None) -> ad.Tensor:
    """Teacher-forced next-token logits, shape (len(tokens), vocab).

    Row i is conditioned on the data embedding and tokens[:i]; row 0 sees the
    embedding alone. No normalization layers anywhere.
    """
    tokens = list(tokens)
    if len(tokens) > cfg.max_seq:
        raise SequenceTooLong(f"{len(tokens)} tokens > max_seq {cfg.max_seq}")
    if not tokens:
        raise ValueError("empty token sequence")
    emb = encode_params(params, cfg, xs, ys)
    return _decoder_logits(params, cfg, emb, tokens[:-1], training, rng)


def _decoder_logits(params: dict, cfg: ModelConfig, emb: ad.Tensor,
                    prefix: Sequence[int], training: bool, rng) -> ad.Tensor:
    if prefix:
        tok = ad.take_rows(params["tok_embed"][0], prefix)
        h = ad.concat([emb, tok], axis=0)
    else:
        h = emb
    rows = h.shape[0]
    pos = ad.take_rows(params["pos_embed"][0], range(rows))
    h = ad.dropout(ad.add(h, pos), cfg.dropout_p, training, rng)
    for blk in range(cfg.n_blocks):
        h = ad.add(h, _attention(params, cfg, blk, h, training, rng))
        h = ad.add(h, _mlp(params, cfg, blk, h, training, rng))
    return _linear(params, "head", h)


def encode(g: NetworkGenome, xs, ys) -> Embedding:
    """Inference-mode embedding; permutation-invariant over points."""
    with ad.no_grad():
        try:
            emb = encode_params(tensorize(g), g.config, xs, ys)
        except ad.NonFiniteValue as e:
            raise NonFiniteActivation(str(e)) from e
    return Embedding(vector=_frozen(emb.data[0]))


def forward_logits(g: NetworkGenome, xs, ys, target: ex.TokenSequence) -> ad.Tensor:
    """Inference-mode teacher forcing over the full target sequence."""
    with ad.no_grad():
        try:
            return forward_logits_params(tensorize(g), g.config, xs, ys,
                                         target.tokens, training=False)
        except ad.NonFiniteValue as e:
            raise NonFiniteActivation(str(e)) from e


def decode_greedy(g: NetworkGenome, xs, ys,
                  max_steps: int = ex.MAX_PRIMITIVES + 1) -> ex.TokenSequence:
    """Argmax decoding from START until END or max_steps emitted tokens.

    Ties resolve to the lowest token id. Output includes the leading START
    (and END when emitted); validity is judged downstream by detokenize.
    """
    cfg = g.config
    if not 1 <= max_steps <= cfg.max_seq:
        raise ValueError(f"max_steps must be in [1, {cfg.max_seq}]")
    with ad.no_grad():
        try:
            params = tensorize(g)
            emb = encode_params(params, cfg, xs, ys)
            seq = [ex.START]
            for _ in range(max_steps):
                logits = _decoder_logits(params, cfg, emb, seq, False, None)
                nxt = int(np.argmax(logits.data[-1]))
                seq.append(nxt)
                if nxt == ex.END:
                    break
        except ad.NonFiniteValue as e:
            raise NonFiniteActivation(str(e)) from e
    return ex.TokenSequence(tokens=tuple(seq))


def save_genome(g: NetworkGenome, path: str | Path, sidecar: dict | None = None) -> None:
    """Binary checkpoint (header JSON + raw little-endian float64 layers).

    Writes a JSON sidecar at <path>.json; contents must stay deterministic so
    checkpoints are bitwise-reproducible.
    """
    path = Path(path)
    header = json.dumps({"format_version": CHECKPOINT_VERSION,
                         "config": g.config.to_dict()}, sort_keys=True).encode()
    buf = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
           struct.pack("<I", len(header)), header,
           struct.pack("<I", len(g.names))]
    for name, w, b in zip(g.names, g.weights, g.biases):
        nb = name.encode()
        buf.append(struct.pack("<H", len(nb)))
        buf.append(nb)
        buf.append(struct.pack("<B", 0 if b is None else 1))
        for arr in (w,) if b is None else (w, b):
            buf.append(struct.pack("<B", arr.ndim))
            buf.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.append(arr.astype("<f8").tobytes(order="C"))
    path.write_bytes(b"".join(buf))
    side = {"format_version": CHECKPOINT_VERSION}
    side.update(sidecar or {})
    Path(str(path) + ".json").write_text(json.dumps(side, sort_keys=True) + "\n")


def load_genome(path: str | Path) -> NetworkGenome:
    """Bitwise-exact inverse of save_genome; validates layout against config."""
    raw = Path(path).read_bytes()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(raw):
            raise CheckpointError(f"{path}: truncated")
        out = raw[off:off + n]
        off += n
        return out

    if take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (hlen,) = struct.unpack("<I", take(4))
    header = json.loads(take(hlen))
    cfg = ModelConfig.from_dict(header["config"])
    specs = layer_specs(cfg)
    (n_layers,) = struct.unpack("<I", take(4))
    if n_layers != len(specs):
        raise CheckpointError(f"{path}: layer count {n_layers} != {len(specs)}")
    names, weights, biases = [], [], []

    def read_array(expect_shape):
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        if tuple(shape) != tuple(expect_shape):
            raise CheckpointError(f"{path}: shape {shape} != {expect_shape}")
        n = int(np.prod(shape)) if shape else 1
        return _frozen(np.frombuffer(take(8 * n), dtype="<f8").reshape(shape))

    for spec in specs:
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        if name != spec.name:
            raise CheckpointError(f"{path}: layer {name!r} != {spec.name!r}")
        (has_bias,) = struct.unpack("<B", take(1))
        if bool(has_bias) != (spec.b_shape is not None):
            raise CheckpointError(f"{path}: bias presence mismatch at {name}")
        names.append(name)
        weights.append(read_array(spec.w_shape))
        biases.append(read_array(spec.b_shape) if has_bias else None)
    if off != len(raw):
        raise CheckpointError(f"{path}: trailing bytes")
    return NetworkGenome(config=cfg, names=tuple(names),
                         weights=tuple(weights), biases=tuple(biases))


def load_sidecar(path: str | Path) -> dict:
    return json.loads(Path(str(path) + ".json").read_text())
