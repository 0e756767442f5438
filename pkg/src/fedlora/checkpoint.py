"""Binary checkpoint formats (little-endian).

Model file:   magic b"FLMC", u32 version, 8 x i64 config fields
              (vocab_size, d_model, n_heads, n_layers, ff_dim, max_seq_len,
              n_classes, seed), then every parameter array as <f8 in the
              model's fixed enumeration order.
Adapter file: magic b"FLLA", u32 version, i64 rank, f8 alpha, i64 seed,
              u32 target-name blob length + utf-8 comma-joined names, then
              A and B arrays (<f8) per adapter in enumeration order, then
              the classifier head weight and bias (the head is part of the
              trainable set, so it ships with the adapters).
Vocab file:   one token per line, utf-8; id = line number - 1 + 3 (ids 0-2
              are reserved for PAD/UNK/CLS).
"""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import Tensor
from .errors import SchemaError
from .lora import AdaptedModel, LoraConfig, attach_adapters
from .model import EncoderModel, ModelConfig, Vocab, init_model

MODEL_MAGIC = b"FLMC"
ADAPTER_MAGIC = b"FLLA"
VERSION = 1


def _write_array(fh, arr: np.ndarray):
    fh.write(arr.astype("<f8").tobytes())


def _read_array(fh, shape) -> np.ndarray:
    n = int(np.prod(shape))
    buf = fh.read(n * 8)
    if len(buf) != n * 8:
        raise SchemaError("checkpoint truncated while reading parameter array")
    return np.frombuffer(buf, dtype="<f8").reshape(shape).copy()


def save_model(path, m: EncoderModel):
    cfg = m.cfg
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<8q", cfg.vocab_size, cfg.d_model, cfg.n_heads,
                             cfg.n_layers, cfg.ff_dim, cfg.max_seq_len,
                             cfg.n_classes, cfg.seed))
        for p in m.parameters():
            _write_array(fh, p.data)


def load_model(path) -> EncoderModel:
    with open(path, "rb") as fh:
        if fh.read(4) != MODEL_MAGIC:
            raise SchemaError(f"{path} is not a model checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise SchemaError(f"unsupported model checkpoint version {version}")
        fields = struct.unpack("<8q", fh.read(64))
        cfg = ModelConfig(*fields)
        m = init_model(cfg)  # establishes shapes; data overwritten below
        for p in m.parameters():
            p.data = _read_array(fh, p.data.shape)
    return m


def save_adapters(path, am: AdaptedModel):
    cfg = am.lora_cfg
    names = ",".join(f"{li}:{name}" for li, name in am.adapters)
    blob = names.encode("utf-8")
    alpha = cfg.rank if cfg.alpha is None else cfg.alpha
    with open(path, "wb") as fh:
        fh.write(ADAPTER_MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<qdq", cfg.rank, alpha, cfg.seed))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for adapter in am.adapters.values():
            _write_array(fh, adapter.a.data)
            _write_array(fh, adapter.b.data)
        _write_array(fh, am.head_w.data)
        _write_array(fh, am.head_b.data)


def load_adapters(path, base: EncoderModel) -> AdaptedModel:
    with open(path, "rb") as fh:
        if fh.read(4) != ADAPTER_MAGIC:
            raise SchemaError(f"{path} is not an adapter checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise SchemaError(f"unsupported adapter checkpoint version {version}")
        rank, alpha, seed = struct.unpack("<qdq", fh.read(24))
        (blob_len,) = struct.unpack("<I", fh.read(4))
        keys = []
        for entry in fh.read(blob_len).decode("utf-8").split(","):
            li, name = entry.split(":")
            keys.append((int(li), name))
        targets = tuple(dict.fromkeys(name for _, name in keys))
        cfg = LoraConfig(rank=rank, alpha=alpha, targets=targets, seed=seed)
        am = attach_adapters(base, cfg)
        if list(am.adapters) != keys:
            raise SchemaError("adapter checkpoint layout does not match the base model")
        for adapter in am.adapters.values():
            adapter.a.data = _read_array(fh, adapter.a.data.shape)
            adapter.b.data = _read_array(fh, adapter.b.data.shape)
        am.head_w.data = _read_array(fh, am.head_w.data.shape)
        am.head_b.data = _read_array(fh, am.head_b.data.shape)
    return am


def save_vocab(path, vocab: Vocab):
    with open(path, "w", encoding="utf-8") as fh:
        for token in vocab.id_to_token:
            fh.write(token + "\n")


def load_vocab(path) -> Vocab:
    with open(path, encoding="utf-8") as fh:
        tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
    return Vocab(token_to_id={t: i + 3 for i, t in enumerate(tokens)}, id_to_token=tokens)
