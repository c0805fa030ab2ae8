"""Fusion of graph rows with prompt embeddings and a frozen toy decoder
fine-tuned through low-rank deltas on its query and value projections.

Only the adapter and the LoRA factors are ever updated; the decoder weights
(and the graph encoder upstream) stay byte-for-byte unchanged.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .adapter import AdapterParams, adapter_vjp
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .numerics import (
    AdamWState,
    Rng,
    adamw_step,
    cross_entropy,
    gelu,
    gelu_backward,
    layer_norm,
    layer_norm_backward,
    softmax_rows,
    softmax_rows_backward,
    warmup_lr,
)

logger = logging.getLogger(__name__)

UNK = "<unk>"
EOS = "<eos>"
LORA_TARGETS = ("q", "v")
LORA_INIT_STD = 0.02
EMBED_STD = 0.5
HEAD_STD = 0.06  # keeps initial loss near ln V while leaving room to overfit at lr 1e-4
_LAYER_KEYS = ("wq", "wk", "wv", "wo", "w1", "w2")


class TrainingDivergedError(FloatingPointError):
    pass


# -- parameters -------------------------------------------------------------

@dataclass
class DecoderParams:
    vocab: list[str]
    embedding: np.ndarray  # (V, H)
    layers: list[dict[str, np.ndarray]]
    head: np.ndarray  # (H, V)
    seed: int = 0
    frozen: bool = field(default=True, init=False)

    def __post_init__(self) -> None:
        self.token_ids = {tok: i for i, tok in enumerate(self.vocab)}

    @property
    def h_size(self) -> int:
        return self.embedding.shape[1]

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def eos_id(self) -> int:
        return self.token_ids[EOS]

    def ids(self, tokens: Sequence[str]) -> list[int]:
        unk = self.token_ids[UNK]
        return [self.token_ids.get(t, unk) for t in tokens]

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"embedding": self.embedding, "head": self.head}
        for i, layer in enumerate(self.layers):
            for key in _LAYER_KEYS:
                out[f"layer{i}.{key}"] = layer[key]
        return out

    def save(self, path: str | Path) -> Path:
        meta = {"kind": "decoder", "vocab": self.vocab, "seed": self.seed, "n_layers": len(self.layers)}
        return save_checkpoint(path, self.tensors(), meta)

    @classmethod
    def load(cls, path: str | Path) -> "DecoderParams":
        tensors, meta = load_checkpoint(path)
        layers = [{key: tensors[f"layer{i}.{key}"] for key in _LAYER_KEYS} for i in range(meta["n_layers"])]
        return cls(meta["vocab"], tensors["embedding"], layers, tensors["head"], meta["seed"])


@dataclass
class LoraDelta:
    """Factors per decoder layer and target: ``A`` (r, H) Gaussian, ``B`` (H, r) zeros.

    The projection ``h @ W`` becomes ``h @ W + (alpha / r) * (h @ A.T) @ B.T``.
    """

    factors: dict[str, np.ndarray]  # "layer{i}.{q|v}.A" / ".B"
    rank: int
    alpha: float = 16.0
    seed: int = 0
    trainable = True

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def pair(self, layer: int, target: str) -> tuple[np.ndarray, np.ndarray]:
        return self.factors[f"layer{layer}.{target}.A"], self.factors[f"layer{layer}.{target}.B"]

    def tensors(self) -> dict[str, np.ndarray]:
        return dict(self.factors)

    def num_params(self) -> int:
        return sum(t.size for t in self.factors.values())

    def save(self, path: str | Path) -> Path:
        meta = {"kind": "lora", "rank": self.rank, "alpha": self.alpha, "seed": self.seed}
        return save_checkpoint(path, self.factors, meta)

    @classmethod
    def load(cls, path: str | Path) -> "LoraDelta":
        tensors, meta = load_checkpoint(path)
        return cls(tensors, meta["rank"], meta["alpha"], meta["seed"])


def build_text_vocab(texts: Sequence[Sequence[str]]) -> list[str]:
    toks = {t for seq in texts for t in seq} - {UNK, EOS}
    return [UNK, EOS] + sorted(toks)


def init_decoder(seed: int, vocab: Sequence[str], h_size: int = 64, n_layers: int = 2) -> DecoderParams:
    """Random frozen decoder; weights use std 1/sqrt(fan_in) so activations keep unit scale."""
    vocab = list(vocab)
    if vocab[:2] != [UNK, EOS]:
        vocab = build_text_vocab([vocab])
    rng = Rng(seed)
    emb = rng.normal((len(vocab), h_size), EMBED_STD)
    std = 1.0 / math.sqrt(h_size)
    layers = []
    for _ in range(n_layers):
        layer = {key: rng.normal((h_size, h_size), std) for key in ("wq", "wk", "wv", "wo")}
        layer["w1"] = rng.normal((h_size, 4 * h_size), std)
        layer["w2"] = rng.normal((4 * h_size, h_size), 1.0 / math.sqrt(4 * h_size))
        layers.append(layer)
    head = rng.normal((h_size, len(vocab)), HEAD_STD)
    return DecoderParams(vocab, emb, layers, head, seed)


def init_lora(seed: int, h_size: int, n_layers: int, rank: int = 16, alpha: float = 16.0) -> LoraDelta:
    rng = Rng(seed)
    factors = {}
    for i in range(n_layers):
        for target in LORA_TARGETS:
            factors[f"layer{i}.{target}.A"] = rng.normal((rank, h_size), LORA_INIT_STD)
            factors[f"layer{i}.{target}.B"] = np.zeros((h_size, rank))
    return LoraDelta(factors, rank, alpha, seed)


# -- fused input ------------------------------------------------------------

@dataclass
class FusedSequence:
    matrix: np.ndarray  # (n_kg + n_q, H)
    boundary: int
    loss_mask: Optional[np.ndarray] = None  # bool per row; True rows are scored

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]


def embed_text(tokens: Sequence[str], decoder: DecoderParams) -> np.ndarray:
    return decoder.embedding[np.asarray(decoder.ids(tokens), dtype=np.int64).reshape(-1)]


def fuse(kg_e: np.ndarray, q_e: np.ndarray) -> FusedSequence:
    """Graph rows first, then text rows."""
    if kg_e.ndim != 2 or q_e.ndim != 2 or kg_e.shape[1] != q_e.shape[1]:
        raise ValueError(f"width mismatch: graph {kg_e.shape} vs text {q_e.shape}")
    return FusedSequence(np.concatenate([kg_e, q_e], axis=0), kg_e.shape[0])


# -- decoder forward / backward ---------------------------------------------------

def _proj(h, w, pair, scale):
    y = h @ w
    if pair is None:
        return y, None
    a, b = pair
    z = h @ a.T
    return y + scale * (z @ b.T), z


def _proj_backward(h, w, pair, scale, z, dy):
    dh = dy @ w.T
    if pair is None:
        return dh, None, None
    a, b = pair
    dB = scale * (dy.T @ z)
    dz = scale * (dy @ b)
    dA = dz.T @ h
    return dh + dz @ a, dA, dB


def decode_vjp(x: np.ndarray, decoder: DecoderParams, lora: Optional[LoraDelta] = None):
    """Causal forward over the whole fused sequence.

    Returns ``(logits, backward)``; ``backward(dlogits)`` gives the gradient
    w.r.t. ``x`` and a dict of LoRA factor gradients.
    """
    T, H = x.shape
    if T == 0:
        raise ValueError("decoder input must have at least one row")
    if H != decoder.h_size:
        raise ValueError(f"decoder width {decoder.h_size} != input width {H}")
    scale = 1.0 / math.sqrt(H)
    lscale = lora.scale if lora is not None else 0.0
    causal = np.tril(np.ones((T, T), dtype=bool))
    caches = []
    for i, layer in enumerate(decoder.layers):
        pq = lora.pair(i, "q") if lora is not None else None
        pv = lora.pair(i, "v") if lora is not None else None
        h1, c1 = layer_norm(x)
        q, zq = _proj(h1, layer["wq"], pq, lscale)
        k = h1 @ layer["wk"]
        v, zv = _proj(h1, layer["wv"], pv, lscale)
        attn = softmax_rows(np.where(causal, q @ k.T * scale, -np.inf))
        ctx = attn @ v
        x = x + ctx @ layer["wo"]
        h2, c2 = layer_norm(x)
        u = h2 @ layer["w1"]
        x = x + gelu(u) @ layer["w2"]
        caches.append((h1, c1, q, zq, k, v, zv, attn, ctx, h2, c2, u, pq, pv))
    logits = x @ decoder.head

    def backward(dlogits: np.ndarray):
        grads: dict[str, np.ndarray] = {}
        dx = dlogits @ decoder.head.T
        for i in reversed(range(len(decoder.layers))):
            layer = decoder.layers[i]
            h1, c1, q, zq, k, v, zv, attn, ctx, h2, c2, u, pq, pv = caches[i]
            # feed-forward branch
            dg = dx @ layer["w2"].T
            dh2 = gelu_backward(u, dg) @ layer["w1"].T
            dx = dx + layer_norm_backward(c2, dh2)
            # attention branch
            dctx = dx @ layer["wo"].T
            dattn = dctx @ v.T
            dv = attn.T @ dctx
            ds = softmax_rows_backward(attn, dattn) * scale
            dq = ds @ k
            dk = ds.T @ q
            dh1 = dk @ layer["wk"].T
            g, dA, dB = _proj_backward(h1, layer["wq"], pq, lscale, zq, dq)
            dh1 = dh1 + g
            if dA is not None:
                grads[f"layer{i}.q.A"], grads[f"layer{i}.q.B"] = dA, dB
            g, dA, dB = _proj_backward(h1, layer["wv"], pv, lscale, zv, dv)
            dh1 = dh1 + g
            if dA is not None:
                grads[f"layer{i}.v.A"], grads[f"layer{i}.v.B"] = dA, dB
            dx = dx + layer_norm_backward(c1, dh1)
        return dx, grads

    return logits, backward


def decode_forward(fused: FusedSequence | np.ndarray, decoder: DecoderParams, lora: Optional[LoraDelta] = None) -> np.ndarray:
    """Logits for every row of the fused sequence, shape (rows, V)."""
    x = fused.matrix if isinstance(fused, FusedSequence) else fused
    return decode_vjp(x, decoder, lora)[0]


# -- training ---------------------------------------------------------------------

@dataclass
class TrainExample:
    """Everything one example contributes to a step.

    ``kg_origin`` is the frozen encoder output (rows x d_g, possibly zero rows);
    ``answer_ids`` ends with the end-of-sequence id.
    """

    kg_origin: np.ndarray
    prompt_ids: list[int]
    answer_ids: list[int]
    key: str = ""


def prompt_embedding(example: TrainExample, decoder: DecoderParams) -> np.ndarray:
    return decoder.embedding[np.asarray(example.prompt_ids, dtype=np.int64)]


def graph_rows_vjp(example: TrainExample, q_e: np.ndarray, adapter: AdapterParams):
    if example.kg_origin.shape[0] == 0:
        return np.zeros((0, adapter.h_size)), None
    return adapter_vjp(example.kg_origin, q_e, adapter)


def training_sequence(example: TrainExample, kg_e: np.ndarray, decoder: DecoderParams) -> FusedSequence:
    """Graph rows, prompt and teacher-forced answer (minus its last token).

    The mask marks rows whose next-token prediction is an answer token.
    """
    text_ids = example.prompt_ids + example.answer_ids[:-1]
    fused = fuse(kg_e, decoder.embedding[np.asarray(text_ids, dtype=np.int64)])
    mask = np.zeros(fused.n_rows, dtype=bool)
    first = fused.boundary + len(example.prompt_ids) - 1
    mask[first:first + len(example.answer_ids)] = True
    fused.loss_mask = mask
    return fused


def example_loss_and_grads(
    example: TrainExample,
    decoder: DecoderParams,
    adapter: AdapterParams,
    lora: Optional[LoraDelta],
    weight: float = 1.0,
) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Answer-token cross entropy and gradients (adapter keys prefixed ``adapter.``, LoRA ``lora.``).

    Also returns the gradient w.r.t. the logits, for mask checks.
    """
    if not example.prompt_ids:
        raise ValueError("example has an empty prompt")
    q_e = prompt_embedding(example, decoder)
    kg_e, ad_back = graph_rows_vjp(example, q_e, adapter)
    fused = training_sequence(example, kg_e, decoder)
    logits, dec_back = decode_vjp(fused.matrix, decoder, lora)
    loss, dsel = cross_entropy(logits[fused.loss_mask], example.answer_ids)
    dlogits = np.zeros_like(logits)
    dlogits[fused.loss_mask] = dsel * weight
    dx, lora_g = dec_back(dlogits)
    grads = {f"lora.{k}": v for k, v in lora_g.items()}
    if ad_back is not None:
        ad_g = ad_back(dx[: fused.boundary])
    else:
        ad_g = {k: np.zeros_like(v) for k, v in adapter.tensors().items()}
    grads.update({f"adapter.{k}": v for k, v in ad_g.items()})
    return loss, grads, dlogits


def trainable_tensors(adapter: AdapterParams, lora: LoraDelta) -> dict[str, np.ndarray]:
    out = {f"adapter.{k}": v for k, v in adapter.tensors().items()}
    out.update({f"lora.{k}": v for k, v in lora.tensors().items()})
    return out


def batch_loss_and_grads(batch, decoder, adapter, lora):
    params = trainable_tensors(adapter, lora)
    total = {k: np.zeros_like(v) for k, v in params.items()}
    loss = 0.0
    w = 1.0 / len(batch)
    for ex in batch:
        l, g, _ = example_loss_and_grads(ex, decoder, adapter, lora, weight=w)
        loss += l * w
        for k, v in g.items():
            total[k] += v
    return loss, total


def train_step(
    batch: Sequence[TrainExample],
    decoder: DecoderParams,
    adapter: AdapterParams,
    lora: LoraDelta,
    state: AdamWState,
    config: TrainConfig,
) -> float:
    """One AdamW update of the adapter and LoRA factors on the batch-mean loss.

    Returns the loss measured before the update.
    """
    if not batch:
        raise ValueError("empty batch")
    loss, grads = batch_loss_and_grads(batch, decoder, adapter, lora)
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if not math.isfinite(loss) or bad:
        raise TrainingDivergedError(
            f"non-finite training state at step {state.step + 1}: loss={loss!r}, "
            f"non-finite grads in {bad[:5]}"
        )
    lr = warmup_lr(config.lr, state.step + 1, config.warmup_steps)
    adamw_step(trainable_tensors(adapter, lora), grads, state, lr, weight_decay=config.weight_decay)
    return loss


def dataset_loss(examples: Sequence[TrainExample], decoder, adapter, lora) -> float:
    total = 0.0
    for ex in examples:
        q_e = prompt_embedding(ex, decoder)
        kg_e, _ = graph_rows_vjp(ex, q_e, adapter)
        fused = training_sequence(ex, kg_e, decoder)
        logits = decode_forward(fused, decoder, lora)
        total += cross_entropy(logits[fused.loss_mask], ex.answer_ids)[0]
    return total / len(examples)


# -- generation ---------------------------------------------------------------------

def generate(
    fused: FusedSequence | np.ndarray,
    decoder: DecoderParams,
    lora: Optional[LoraDelta] = None,
    max_new_tokens: int = 8,
) -> list[str]:
    """Greedy continuation; stops after emitting the end token (kept in the output) or at the budget."""
    if max_new_tokens < 1:
        raise ValueError("max_new_tokens must be >= 1")
    x = fused.matrix if isinstance(fused, FusedSequence) else fused
    out: list[str] = []
    for _ in range(max_new_tokens):
        logits = decode_forward(x, decoder, lora)
        tok = int(np.argmax(logits[-1]))
        out.append(decoder.vocab[tok])
        if tok == decoder.eos_id:
            break
        x = np.concatenate([x, decoder.embedding[tok][None, :]], axis=0)
    return out


def strip_eos(tokens: Sequence[str]) -> list[str]:
    return [t for t in tokens if t != EOS]
