"""Token tagger: a pluggable contextual encoder plus a scheme-bound softmax head.

The reference encoder is a word-embedding layer feeding one bidirectional
Elman RNN layer. Forward and backward passes are written out by hand so the
whole model is plain numpy; :mod:`wsner._accel` holds the inner loops.
"""
from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _accel
from .core import Corpus, EntitySpan, Sentence, TagScheme, ValidationError, decode_bio_indices

PAD, UNK = "<pad>", "<unk>"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    embedding_dim: int = 64
    hidden_dim: int = 128
    o_bias: float = 3.0
    dtype: str = "float32"
    min_freq: int = 1
    lowercase: bool = False

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ValidationError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.embedding_dim < 1 or self.hidden_dim < 1 or self.min_freq < 1:
            raise ValidationError("embedding_dim, hidden_dim and min_freq must be >= 1")


class Vocab:
    """Token index with ``<pad>`` at 0 and ``<unk>`` at 1."""

    def __init__(self, tokens: Sequence[str], lowercase: bool = False):
        tokens = list(tokens)
        if tokens[:2] != [PAD, UNK]:
            raise ValidationError("vocabulary must start with <pad>, <unk>")
        self.tokens = tokens
        self.lowercase = lowercase
        self._index = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens and self.lowercase == other.lowercase

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        norm = (t.lower() for t in tokens) if self.lowercase else tokens
        return np.fromiter((self._index.get(t, 1) for t in norm), dtype=np.int64, count=len(tokens))


def build_vocab(corpora: Iterable[Corpus], min_freq: int = 1, lowercase: bool = False) -> Vocab:
    """Vocabulary over every token of ``corpora``, in first-seen order."""
    freq: Counter = Counter()
    order: dict = {}
    for corpus in corpora:
        for s in corpus:
            for t in s.tokens:
                t = t.lower() if lowercase else t
                freq[t] += 1
                order.setdefault(t, None)
    return Vocab([PAD, UNK, *(t for t in order if freq[t] >= min_freq)], lowercase)


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------

def _orthogonal(rng, n, dtype):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return (q * np.sign(np.diag(r))).astype(dtype)


class BiRNNEncoder:
    """Embeddings -> forward and backward tanh RNNs, concatenated.

    Any object with the same attributes (``kind``, ``vocab``, ``params``,
    ``output_dim``, ``forward``, ``backward``, ``copy``) can stand in, e.g.
    a wrapper around a pretrained contextual encoder.
    """

    kind = "birnn"

    def __init__(self, vocab: Vocab, params: dict):
        self.vocab = vocab
        self.params = params

    @classmethod
    def initialize(cls, vocab: Vocab, embedding_dim: int, hidden_dim: int, rng, dtype="float32"):
        E, H = embedding_dim, hidden_dim
        lim = np.sqrt(6.0 / (E + H))
        p = {"emb": (rng.standard_normal((len(vocab), E)) * 0.1).astype(dtype)}
        p["emb"][0] = 0.0
        for d in ("f", "b"):
            p[f"W_{d}"] = rng.uniform(-lim, lim, (E, H)).astype(dtype)
            p[f"U_{d}"] = _orthogonal(rng, H, dtype)
            p[f"b_{d}"] = np.zeros(H, dtype=dtype)
        return cls(vocab, p)

    @property
    def hidden_dim(self) -> int:
        return self.params["U_f"].shape[0]

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden_dim

    def copy(self) -> "BiRNNEncoder":
        return BiRNNEncoder(self.vocab, {k: v.copy() for k, v in self.params.items()})

    def forward(self, ids: np.ndarray, lengths: np.ndarray):
        """ids (B, T) padded at the end -> states (B, T, 2H) and a backward cache."""
        p = self.params
        B, T = ids.shape
        rev = _reverse_index(lengths, T)
        rows = np.arange(B)[:, None]
        x = p["emb"][ids]
        xr = x[rows, rev]
        hf = _accel.rnn_forward(np.ascontiguousarray((x @ p["W_f"] + p["b_f"]).transpose(1, 0, 2)), p["U_f"])
        hb = _accel.rnn_forward(np.ascontiguousarray((xr @ p["W_b"] + p["b_b"]).transpose(1, 0, 2)), p["U_b"])
        hf_bt = hf.transpose(1, 0, 2)
        hb_bt = hb.transpose(1, 0, 2)[rows, rev]
        states = np.concatenate([hf_bt, hb_bt], axis=-1)
        return states, (ids, rev, x, xr, hf, hb)

    def backward(self, cache, dstates: np.ndarray) -> dict:
        p = self.params
        ids, rev, x, xr, hf, hb = cache
        B, T = ids.shape
        H = self.hidden_dim
        rows = np.arange(B)[:, None]
        dhf = np.ascontiguousarray(dstates[..., :H].transpose(1, 0, 2))
        dhb = np.ascontiguousarray(dstates[..., H:][rows, rev].transpose(1, 0, 2))
        g = {}
        dxf, g["U_f"] = _accel.rnn_backward(hf, p["U_f"], dhf)
        dxb, g["U_b"] = _accel.rnn_backward(hb, p["U_b"], dhb)
        dxf = dxf.transpose(1, 0, 2)
        dxb = dxb.transpose(1, 0, 2)
        E = x.shape[-1]
        g["W_f"] = x.reshape(-1, E).T @ dxf.reshape(-1, H)
        g["b_f"] = dxf.sum(axis=(0, 1))
        g["W_b"] = xr.reshape(-1, E).T @ dxb.reshape(-1, H)
        g["b_b"] = dxb.sum(axis=(0, 1))
        dx = dxf @ p["W_f"].T + (dxb @ p["W_b"].T)[rows, rev]
        demb = np.zeros_like(p["emb"])
        _accel.scatter_add_rows(demb, ids.reshape(-1), np.ascontiguousarray(dx.reshape(-1, E)))
        g["emb"] = demb
        return g


def _reverse_index(lengths: np.ndarray, T: int) -> np.ndarray:
    """rev[b, t] = L_b - 1 - t inside the sentence and t on padding (an involution)."""
    t = np.arange(T)[None, :]
    L = lengths[:, None]
    return np.where(t < L, L - 1 - t, t)


ENCODERS = {BiRNNEncoder.kind: BiRNNEncoder}


# ---------------------------------------------------------------------------
# tagger
# ---------------------------------------------------------------------------

@dataclass
class TaggerParams:
    encoder: BiRNNEncoder
    head: dict
    scheme: TagScheme

    def __post_init__(self):
        if self.head["W"].shape[1] != self.scheme.label_count:
            raise ValidationError(
                f"head outputs {self.head['W'].shape[1]} labels, scheme needs {self.scheme.label_count}")

    @property
    def vocab(self) -> Vocab:
        return self.encoder.vocab

    @property
    def dtype(self):
        return self.head["W"].dtype

    def copy(self) -> "TaggerParams":
        return TaggerParams(self.encoder.copy(), {k: v.copy() for k, v in self.head.items()}, self.scheme)

    def arrays(self) -> dict:
        """Flat name -> array view of every trainable parameter."""
        out = {f"encoder/{k}": v for k, v in self.encoder.params.items()}
        out.update({f"head/{k}": v for k, v in self.head.items()})
        return out


def _init_head(in_dim: int, scheme: TagScheme, rng, dtype, o_bias: float) -> dict:
    W = (rng.standard_normal((in_dim, scheme.label_count)) * 0.01).astype(dtype)
    b = np.zeros(scheme.label_count, dtype=dtype)
    b[0] = o_bias
    return {"W": W, "b": b}


def init_params(vocab: Vocab, scheme: TagScheme, config: ModelConfig = ModelConfig(), seed: int = 0) -> TaggerParams:
    rng = np.random.default_rng(seed)
    enc = BiRNNEncoder.initialize(vocab, config.embedding_dim, config.hidden_dim, rng, config.dtype)
    return TaggerParams(enc, _init_head(enc.output_dim, scheme, rng, config.dtype, config.o_bias), scheme)


def reinit_head(params: TaggerParams, new_scheme: TagScheme, seed: int = 0, o_bias: float = 3.0) -> TaggerParams:
    """Copy of ``params`` with the encoder untouched and a fresh head for ``new_scheme``."""
    rng = np.random.default_rng(seed)
    head = _init_head(params.encoder.output_dim, new_scheme, rng, params.dtype, o_bias)
    return TaggerParams(params.encoder.copy(), head, new_scheme)


def encoder_digest(params: TaggerParams) -> str:
    h = hashlib.sha256()
    for k in sorted(params.encoder.params):
        a = params.encoder.params[k]
        h.update(k.encode())
        h.update(str(a.dtype).encode() + str(a.shape).encode())
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def params_digest(params: TaggerParams) -> str:
    h = hashlib.sha256(encoder_digest(params).encode())
    for k in sorted(params.head):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params.head[k]).tobytes())
    h.update(json.dumps(params.scheme.types).encode())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _tokens_of(sentences) -> list:
    out = []
    for s in sentences:
        toks = s.tokens if isinstance(s, Sentence) else tuple(s)
        if not toks:
            raise ValidationError("cannot tag an empty sentence")
        out.append(toks)
    return out


def batch_ids(vocab: Vocab, token_lists: Sequence, rng=None, unk_rate: float = 0.0):
    """Padded (B, T) id matrix and lengths; with ``rng``, ids are replaced by UNK at ``unk_rate``."""
    lengths = np.array([len(t) for t in token_lists], dtype=np.int64)
    ids = np.zeros((len(token_lists), int(lengths.max())), dtype=np.int64)
    for i, toks in enumerate(token_lists):
        ids[i, :len(toks)] = vocab.encode(toks)
    if rng is not None and unk_rate > 0:
        drop = rng.random(ids.shape) < unk_rate
        ids[drop & (ids > 0)] = 1
    return ids, lengths


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward_batch(params: TaggerParams, ids: np.ndarray, lengths: np.ndarray):
    """Probabilities (B, T, C) plus the cache :func:`backward_batch` needs."""
    states, enc_cache = params.encoder.forward(ids, lengths)
    logits = states @ params.head["W"] + params.head["b"]
    return softmax(logits), (states, enc_cache)


def backward_batch(params: TaggerParams, cache, dlogits: np.ndarray) -> dict:
    """Gradients for every entry of ``params.arrays()`` given dL/dlogits (B, T, C)."""
    states, enc_cache = cache
    C = dlogits.shape[-1]
    D = states.shape[-1]
    grads = {
        "head/W": states.reshape(-1, D).T @ dlogits.reshape(-1, C),
        "head/b": dlogits.sum(axis=(0, 1)),
    }
    dstates = dlogits @ params.head["W"].T
    for k, v in params.encoder.backward(enc_cache, dstates).items():
        grads[f"encoder/{k}"] = v
    return grads


def forward(params: TaggerParams, sentences, batch_size: int = 64) -> list[np.ndarray]:
    """Per-sentence (L, label_count) probability matrices, in evaluation mode."""
    token_lists = _tokens_of(sentences)
    out = []
    for i in range(0, len(token_lists), batch_size):
        chunk = token_lists[i:i + batch_size]
        ids, lengths = batch_ids(params.vocab, chunk)
        probs, _ = forward_batch(params, ids, lengths)
        out.extend(probs[b, :lengths[b]] for b in range(len(chunk)))
    return out


def tags_from_probs(probs: np.ndarray, scheme: TagScheme) -> list[EntitySpan]:
    return decode_bio_indices(probs.argmax(axis=-1), scheme)


def predict_tags(params: TaggerParams, corpus, batch_size: int = 64) -> Corpus:
    """Argmax-decoded predictions stored as the weak spans of a copy of ``corpus``."""
    if not isinstance(corpus, Corpus):
        corpus = Corpus(tuple(s if isinstance(s, Sentence) else Sentence(tuple(s)) for s in corpus),
                        params.scheme, "unlabeled")
    probs = forward(params, corpus.sentences, batch_size)
    sents = [s.with_spans("weak", tags_from_probs(p, params.scheme)) for s, p in zip(corpus, probs)]
    gold_ok = corpus.scheme == params.scheme
    if not gold_ok:
        sents = [s.with_spans("gold", None) for s in sents]
    return Corpus(tuple(sents), params.scheme, "weak", f"{corpus.domain_tag}:predicted")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_params(params: TaggerParams, path) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "encoder": params.encoder.kind,
        "scheme": list(params.scheme.types),
        "scheme_name": params.scheme.name,
        "vocab": params.vocab.tokens,
        "lowercase": params.vocab.lowercase,
    }
    arrays = {k: v for k, v in params.arrays().items()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    tmp.replace(path)


def load_params(path) -> TaggerParams:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(z["__meta__"].tobytes().decode())
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    cls = ENCODERS.get(meta["encoder"])
    if cls is None:
        raise ValidationError(f"{path}: unknown encoder kind {meta['encoder']!r}")
    vocab = Vocab(meta["vocab"], meta["lowercase"])
    enc = cls(vocab, {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("encoder/")})
    head = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("head/")}
    return TaggerParams(enc, head, TagScheme(tuple(meta["scheme"]), name=meta.get("scheme_name", "")))
