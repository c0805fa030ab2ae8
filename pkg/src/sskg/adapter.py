"""Graph-to-LLM adapter: a linear width alignment followed by single-head
cross-attention in which graph rows query the prompt embedding.

Every forward has a ``*_vjp`` twin returning the output together with a
closure that maps the output gradient to parameter gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .numerics import Rng, softmax_rows, softmax_rows_backward

PARAM_NAMES = ("w_align", "b_align", "wq", "wk", "wv", "wo")


class EmptyQueryError(ValueError):
    pass


@dataclass
class AdapterParams:
    w_align: np.ndarray  # (d_g, H)
    b_align: np.ndarray  # (H,)
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    seed: int = 0
    trainable = True

    @property
    def d_g(self) -> int:
        return self.w_align.shape[0]

    @property
    def h_size(self) -> int:
        return self.w_align.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def num_params(self) -> int:
        return sum(t.size for t in self.tensors().values())

    def save(self, path: str | Path) -> Path:
        return save_checkpoint(path, self.tensors(), {"kind": "adapter", "seed": self.seed})

    @classmethod
    def load(cls, path: str | Path) -> "AdapterParams":
        tensors, meta = load_checkpoint(path)
        return cls(**{n: tensors[n] for n in PARAM_NAMES}, seed=meta.get("seed", 0))


def init_adapter(seed: int, d_g: int, h_size: int) -> AdapterParams:
    """Scale-preserving Gaussian init: std 1/sqrt(fan_in); zero alignment bias."""
    rng = Rng(seed)
    w_align = rng.normal((d_g, h_size), 1.0 / math.sqrt(d_g))
    std = 1.0 / math.sqrt(h_size)
    wq, wk, wv, wo = (rng.normal((h_size, h_size), std) for _ in range(4))
    return AdapterParams(w_align, np.zeros(h_size), wq, wk, wv, wo, seed)


def _check_width(x: np.ndarray, width: int, what: str) -> None:
    if x.ndim != 2 or x.shape[1] != width:
        raise ValueError(f"{what} must have {width} columns, got shape {x.shape}")


def align(kg_origin: np.ndarray, params: AdapterParams) -> np.ndarray:
    _check_width(kg_origin, params.d_g, "graph embedding")
    return kg_origin @ params.w_align + params.b_align


def cross_attend_vjp(kg0: np.ndarray, q_e: np.ndarray, params: AdapterParams):
    H = params.h_size
    _check_width(kg0, H, "aligned graph embedding")
    _check_width(q_e, H, "query embedding")
    if q_e.shape[0] == 0:
        raise EmptyQueryError("empty query context")
    scale = 1.0 / math.sqrt(H)
    q = kg0 @ params.wq
    k = q_e @ params.wk
    v = q_e @ params.wv
    attn = softmax_rows(q @ k.T * scale)
    ctx = attn @ v
    out = kg0 + ctx @ params.wo

    def backward(dout: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
        g = {"wo": ctx.T @ dout}
        dctx = dout @ params.wo.T
        dattn = dctx @ v.T
        dv = attn.T @ dctx
        ds = softmax_rows_backward(attn, dattn) * scale
        dq = ds @ k
        dk = ds.T @ q
        g["wq"] = kg0.T @ dq
        g["wk"] = q_e.T @ dk
        g["wv"] = q_e.T @ dv
        dkg0 = dout + dq @ params.wq.T
        return g, dkg0

    backward.attention = attn
    return out, backward


def cross_attend(kg0: np.ndarray, q_e: np.ndarray, params: AdapterParams) -> np.ndarray:
    return cross_attend_vjp(kg0, q_e, params)[0]


def adapter_vjp(
    kg_origin: np.ndarray, q_e: np.ndarray, params: AdapterParams
) -> tuple[np.ndarray, Callable[[np.ndarray], dict[str, np.ndarray]]]:
    """Forward through align + cross-attention; the closure returns grads for every adapter param."""
    kg0 = align(kg_origin, params)
    out, ca_back = cross_attend_vjp(kg0, q_e, params)

    def backward(dout: np.ndarray) -> dict[str, np.ndarray]:
        grads, dkg0 = ca_back(dout)
        grads["w_align"] = kg_origin.T @ dkg0
        grads["b_align"] = dkg0.sum(axis=0)
        return grads

    return out, backward


def adapter_forward(kg_origin: np.ndarray, q_e: np.ndarray, params: AdapterParams) -> np.ndarray:
    return adapter_vjp(kg_origin, q_e, params)[0]
