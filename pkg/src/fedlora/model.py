"""Word-level tokenizer and a tiny transformer encoder classifier.

The encoder is deliberately small (defaults: d_model=32, 2 layers, 2 heads)
and randomly initialized; it exercises the same architecture class that the
federated LoRA pipeline targets, at desk scale.

Trainable-parameter enumeration order is fixed and load-bearing (the
federation layer exchanges flattened vectors): token embedding, positional
embedding, then per layer [wq, wk, wv, wo, ln1_gamma, ln1_beta, ff1, ff2,
ln2_gamma, ln2_beta], then classifier head weight and bias.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import rng
from .autodiff import Tensor
from .errors import ConfigError, DataError

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
N_RESERVED = 3

LN_EPS = 1e-5
MASK_BIAS = -1e9

_TOKEN_RE = re.compile(r"[a-z0-9']+")

LAYER_MATRIX_NAMES = ("wq", "wk", "wv", "wo", "ff1", "ff2")


@dataclass
class Vocab:
    token_to_id: dict
    id_to_token: list

    @property
    def size(self) -> int:
        return N_RESERVED + len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)


def word_tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def build_vocab(corpus, max_size: int) -> Vocab:
    """Frequency-ranked word vocabulary; ties broken lexicographically."""
    if max_size < N_RESERVED:
        raise ConfigError(f"vocab max_size must be >= {N_RESERVED}, got {max_size}")
    counts: dict[str, int] = {}
    n_docs = 0
    for item in corpus:
        text = item.text if hasattr(item, "text") else item
        n_docs += 1
        for tok in word_tokens(text):
            counts[tok] = counts.get(tok, 0) + 1
    if n_docs == 0:
        raise DataError("cannot build vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: max_size - N_RESERVED]]
    token_to_id = {tok: N_RESERVED + i for i, tok in enumerate(kept)}
    return Vocab(token_to_id=token_to_id, id_to_token=kept)


def tokenize(text: str, vocab: Vocab, max_len: int) -> tuple[list[int], list[int]]:
    """[CLS] + word ids, truncated to max_len, right-padded; mask marks real tokens."""
    ids = [CLS_ID] + [vocab.lookup(t) for t in word_tokens(text)]
    ids = ids[:max_len]
    mask = [1] * len(ids)
    pad = max_len - len(ids)
    return ids + [PAD_ID] * pad, mask + [0] * pad


def vocab_coverage(vocab: Vocab, corpus) -> float:
    """Fraction of corpus tokens that map to a non-UNK id."""
    total = known = 0
    for item in corpus:
        text = item.text if hasattr(item, "text") else item
        for tok in word_tokens(text):
            total += 1
            known += tok in vocab.token_to_id
    return known / total if total else 1.0


# ---------------------------------------------------------------------------
# encoder


@dataclass
class ModelConfig:
    vocab_size: int = 8000
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    ff_dim: int = 64
    max_seq_len: int = 32
    n_classes: int = 2
    seed: int = 0

    def validate(self):
        for name in ("vocab_size", "d_model", "n_heads", "n_layers", "ff_dim", "max_seq_len", "n_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"model.d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.n_classes != 2:
            raise ConfigError(f"model.n_classes must be 2 for the stress task, got {self.n_classes}")


def _xavier(seed: int, fan_in: int, fan_out: int) -> np.ndarray:
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform_array(seed, fan_in * fan_out, -s, s).reshape(fan_in, fan_out)


@dataclass
class EncoderModel:
    cfg: ModelConfig
    tok_emb: Tensor
    pos_emb: Tensor
    layers: list[dict]
    head_w: Tensor
    head_b: Tensor
    _merged_from_adapters: bool = field(default=False, repr=False)

    def linear(self, x: Tensor, layer_idx: int, name: str) -> Tensor:
        return ad.matmul(x, self.layers[layer_idx][name])

    def base_matrix(self, layer_idx: int, name: str) -> Tensor:
        return self.layers[layer_idx][name]

    def parameters(self) -> list[Tensor]:
        """All parameters in the fixed enumeration order."""
        out = [self.tok_emb, self.pos_emb]
        for layer in self.layers:
            out.extend(layer[n] for n in LAYER_MATRIX_NAMES[:4])
            out.extend([layer["ln1_gamma"], layer["ln1_beta"]])
            out.extend([layer["ff1"], layer["ff2"]])
            out.extend([layer["ln2_gamma"], layer["ln2_beta"]])
        out.extend([self.head_w, self.head_b])
        return out

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def head_parameters(self) -> list[Tensor]:
        return [self.head_w, self.head_b]


def init_model(cfg: ModelConfig) -> EncoderModel:
    """Seeded Xavier-uniform init; bit-reproducible per seed."""
    cfg.validate()
    d, ff = cfg.d_model, cfg.ff_dim

    def mat(tag, fan_in, fan_out):
        return Tensor(_xavier(rng.derive(cfg.seed, tag), fan_in, fan_out))

    def emb(tag, n_rows):
        # embedding tables are lookups, not matmuls: scale by d on both fans
        # so token content is not drowned out by positional embeddings
        s = math.sqrt(6.0 / (d + d))
        return Tensor(rng.uniform_array(rng.derive(cfg.seed, tag), n_rows * d, -s, s).reshape(n_rows, d))

    layers = []
    for li in range(cfg.n_layers):
        layers.append({
            "wq": mat(f"layer{li}.wq", d, d),
            "wk": mat(f"layer{li}.wk", d, d),
            "wv": mat(f"layer{li}.wv", d, d),
            "wo": mat(f"layer{li}.wo", d, d),
            "ln1_gamma": Tensor(np.ones((1, d))),
            "ln1_beta": Tensor(np.zeros((1, d))),
            "ff1": mat(f"layer{li}.ff1", d, ff),
            "ff2": mat(f"layer{li}.ff2", ff, d),
            "ln2_gamma": Tensor(np.ones((1, d))),
            "ln2_beta": Tensor(np.zeros((1, d))),
        })
    return EncoderModel(
        cfg=cfg,
        tok_emb=emb("tok_emb", cfg.vocab_size),
        pos_emb=emb("pos_emb", cfg.max_seq_len),
        layers=layers,
        head_w=mat("head_w", d, cfg.n_classes),
        head_b=Tensor(np.zeros((1, cfg.n_classes))),
    )


def forward(model, ids_batch, mask_batch, attn_trace: list | None = None) -> Tensor:
    """Logits [batch x n_classes] for padded id sequences with attention masks.

    `model` is an EncoderModel or anything exposing the same surface (the
    LoRA-adapted wrapper routes targeted matrices through its adapters).
    Masked key positions get a -1e9 pre-softmax bias, which underflows to
    exactly zero attention weight in double precision, so logits are exactly
    independent of padding content.
    """
    cfg = model.cfg
    d, n_heads = cfg.d_model, cfg.n_heads
    dh = d // n_heads
    inv_sqrt_dh = 1.0 / math.sqrt(dh)

    rows = []
    for ids, mask in zip(ids_batch, mask_batch):
        seq_len = len(ids)
        if seq_len > cfg.max_seq_len:
            raise DataError(f"sequence length {seq_len} exceeds max_seq_len {cfg.max_seq_len}")
        key_bias = Tensor(np.where(np.asarray(mask, dtype=bool), 0.0, MASK_BIAS).reshape(1, -1))

        x = ad.add(ad.gather_rows(model.tok_emb, ids), ad.slice_rows(model.pos_emb, 0, seq_len))
        for li in range(cfg.n_layers):
            layer = model.layers[li]
            q = model.linear(x, li, "wq")
            k = model.linear(x, li, "wk")
            v = model.linear(x, li, "wv")
            ctx_heads = []
            for h in range(n_heads):
                lo, hi = h * dh, (h + 1) * dh
                qh = ad.slice_cols(q, lo, hi)
                kh = ad.slice_cols(k, lo, hi)
                vh = ad.slice_cols(v, lo, hi)
                scores = ad.add(ad.scale(ad.matmul(qh, ad.transpose(kh)), inv_sqrt_dh), key_bias)
                attn = ad.softmax_rows(scores)
                if attn_trace is not None:
                    attn_trace.append((attn.data.copy(), list(mask)))
                ctx_heads.append(ad.matmul(attn, vh))
            attn_out = model.linear(ad.concat_cols(ctx_heads), li, "wo")
            x = ad.layer_norm(ad.add(x, attn_out), layer["ln1_gamma"], layer["ln1_beta"], LN_EPS)
            ff = model.linear(ad.relu(model.linear(x, li, "ff1")), li, "ff2")
            x = ad.layer_norm(ad.add(x, ff), layer["ln2_gamma"], layer["ln2_beta"], LN_EPS)
        cls = ad.slice_rows(x, 0, 1)
        rows.append(ad.add(ad.matmul(cls, model.head_w), model.head_b))
    return ad.concat_rows(rows)
