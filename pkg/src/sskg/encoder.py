"""Frozen structure-aware encoder over serialized Levi nodes.

Self-attention scores carry an additive bias looked up from the relative
position matrix, one scalar per bucket in -(k+1)..+(k+1), shared by all
layers.  Blocks are pre-norm with residuals and a final parameter-free
layer norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .levi import DEFAULT_WINDOW, PositionMatrix
from .numerics import Rng, gelu, layer_norm, softmax_rows

UNK = "<unk>"
INIT_STD = 0.02
DEFAULT_DIM = 64
DEFAULT_LAYERS = 2
_LAYER_KEYS = ("wq", "wk", "wv", "wo", "w1", "w2")


@dataclass
class EncoderParams:
    vocab: list[str]
    embedding: np.ndarray
    layers: list[dict[str, np.ndarray]]
    rel_bias: np.ndarray
    k: int
    seed: int = 0
    frozen: bool = field(default=True, init=False)

    def __post_init__(self) -> None:
        self.token_ids = {tok: i for i, tok in enumerate(self.vocab)}

    @property
    def dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def lookup(self, labels: Sequence[str]) -> np.ndarray:
        unk = self.token_ids[UNK]
        return np.array([self.token_ids.get(lab, unk) for lab in labels], dtype=np.int64)

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"embedding": self.embedding, "rel_bias": self.rel_bias}
        for i, layer in enumerate(self.layers):
            for key in _LAYER_KEYS:
                out[f"layer{i}.{key}"] = layer[key]
        return out

    def meta(self) -> dict:
        return {"kind": "encoder", "vocab": self.vocab, "k": self.k, "seed": self.seed,
                "dim": self.dim, "n_layers": self.n_layers}

    def save(self, path: str | Path) -> Path:
        return save_checkpoint(path, self.tensors(), self.meta())

    @classmethod
    def load(cls, path: str | Path) -> "EncoderParams":
        tensors, meta = load_checkpoint(path)
        layers = [{key: tensors[f"layer{i}.{key}"] for key in _LAYER_KEYS} for i in range(meta["n_layers"])]
        return cls(meta["vocab"], tensors["embedding"], layers, tensors["rel_bias"], meta["k"], meta["seed"])


def build_vocab(labels: Sequence[str]) -> list[str]:
    return [UNK] + sorted(set(labels) - {UNK})


def init_encoder(
    seed: int,
    d_g: int = DEFAULT_DIM,
    n_layers: int = DEFAULT_LAYERS,
    k: int = DEFAULT_WINDOW,
    vocab: Sequence[str] = (),
) -> EncoderParams:
    """Gaussian(0, 0.02) initialisation drawn from ``Rng(seed)`` in a fixed order."""
    if d_g < 1 or n_layers < 1 or k < 1:
        raise ValueError("d_g, n_layers and k must be >= 1")
    vocab = build_vocab(vocab)
    rng = Rng(seed)
    emb = rng.normal((len(vocab), d_g), INIT_STD)
    layers = []
    for _ in range(n_layers):
        layer = {key: rng.normal((d_g, d_g), INIT_STD) for key in ("wq", "wk", "wv", "wo")}
        layer["w1"] = rng.normal((d_g, 4 * d_g), INIT_STD)
        layer["w2"] = rng.normal((4 * d_g, d_g), INIT_STD)
        layers.append(layer)
    bias = rng.normal(2 * k + 3, INIT_STD)
    return EncoderParams(vocab, emb, layers, bias, k, seed)


def _encode(labels, P, params, trace):
    n = len(labels)
    d = params.dim
    if isinstance(P, PositionMatrix):
        if P.k != params.k:
            raise ValueError(f"position window k={P.k} does not match encoder k={params.k}")
        P = P.values
    P = np.asarray(P, dtype=np.int64).reshape(n, n) if n else np.zeros((0, 0), dtype=np.int64)
    if P.shape != (n, n):
        raise ValueError(f"{n} labels but position matrix is {P.shape}")
    if n == 0:
        return np.zeros((0, d))
    if np.any(np.abs(P) > params.k + 1):
        raise ValueError("position matrix holds values outside the bias table")

    bias = params.rel_bias[P + params.k + 1]
    x = params.embedding[params.lookup(labels)]
    scale = 1.0 / math.sqrt(d)
    for layer in params.layers:
        h, _ = layer_norm(x)
        q, kk, v = h @ layer["wq"], h @ layer["wk"], h @ layer["wv"]
        attn = softmax_rows(q @ kk.T * scale + bias)
        if trace is not None:
            trace.append(attn)
        x = x + (attn @ v) @ layer["wo"]
        h, _ = layer_norm(x)
        x = x + gelu(h @ layer["w1"]) @ layer["w2"]
    out, _ = layer_norm(x)
    return out


def encode(labels: Sequence[str], P: PositionMatrix | np.ndarray, params: EncoderParams) -> np.ndarray:
    """One output row per Levi node, width ``d_g``."""
    return _encode(list(labels), P, params, None)


def encode_with_attention(labels, P, params) -> tuple[np.ndarray, list[np.ndarray]]:
    trace: list[np.ndarray] = []
    return _encode(list(labels), P, params, trace), trace
