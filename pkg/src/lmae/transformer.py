"""Joint spatio-temporal transformer encoder.

All tokens (every patch of every frame) attend to each other in one
sequence; positional information enters only through the embeddings added
upstream, so the forward map itself is permutation-equivariant. Blocks are
pre-norm with residuals:

    z' = MSA(LN(z)) + z
    z  = MLP(LN(z')) + z'

followed by a final layernorm over all tokens. No dropout anywhere; the
forward pass is deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .params import ParamStore, xavier_uniform
from .tensor import Tensor


@dataclass(frozen=True)
class TransformerConfig:
    depth: int
    heads: int
    d_model: int
    mlp_dim: int

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.depth < 0:
            raise ValueError(f"depth must be nonnegative, got {self.depth}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads


def add_linear_params(store: ParamStore, name: str, d_in: int, d_out: int,
                      rng: np.random.Generator):
    store.add(f"{name}.weight", xavier_uniform(rng, (d_in, d_out)))
    store.add(f"{name}.bias", np.zeros(d_out))


def add_norm_params(store: ParamStore, name: str, dim: int):
    store.add(f"{name}.gain", np.ones(dim))
    store.add(f"{name}.bias", np.zeros(dim))


def add_transformer_params(store: ParamStore, prefix: str, cfg: TransformerConfig,
                           rng: np.random.Generator):
    d = cfg.d_model
    for layer in range(cfg.depth):
        base = f"{prefix}.layer{layer}"
        add_norm_params(store, f"{base}.ln1", d)
        for proj in ("wq", "wk", "wv", "wo"):
            add_linear_params(store, f"{base}.attn.{proj}", d, d, rng)
        add_norm_params(store, f"{base}.ln2", d)
        add_linear_params(store, f"{base}.mlp.fc1", d, cfg.mlp_dim, rng)
        add_linear_params(store, f"{base}.mlp.fc2", cfg.mlp_dim, d, rng)
    add_norm_params(store, f"{prefix}.final_norm", d)


def linear(store: ParamStore, name: str, x: Tensor) -> Tensor:
    w = store[f"{name}.weight"].tensor
    b = store[f"{name}.bias"].tensor
    out = T.matmul(x, w)
    bias = T.broadcast_to(T.reshape(b, (1,) * (out.data.ndim - 1) + b.shape), out.shape)
    return T.add(out, bias)


def norm(store: ParamStore, name: str, x: Tensor) -> Tensor:
    return T.layernorm(x, store[f"{name}.gain"].tensor, store[f"{name}.bias"].tensor)


def msa(store: ParamStore, base: str, x: Tensor, cfg: TransformerConfig) -> Tensor:
    """Multi-head self-attention over (n, D) or (B, n, D) tokens."""
    squeeze = x.data.ndim == 2
    if squeeze:
        x = T.reshape(x, (1,) + x.shape)
    bsz, n, d = x.shape
    h, hd = cfg.heads, cfg.head_dim

    def split_heads(t: Tensor) -> Tensor:
        return T.transpose(T.reshape(t, (bsz, n, h, hd)), (0, 2, 1, 3))

    q = split_heads(linear(store, f"{base}.wq", x))
    k = split_heads(linear(store, f"{base}.wk", x))
    v = split_heads(linear(store, f"{base}.wv", x))
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    weights = T.softmax(scores, axis=-1)
    ctx = T.matmul(weights, v)
    merged = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (bsz, n, d))
    out = linear(store, f"{base}.wo", merged)
    if squeeze:
        out = T.reshape(out, (n, d))
    return out


def mlp(store: ParamStore, base: str, x: Tensor) -> Tensor:
    return linear(store, f"{base}.fc2", T.gelu(linear(store, f"{base}.fc1", x)))


def encoder_forward(store: ParamStore, prefix: str, x: Tensor, cfg: TransformerConfig) -> Tensor:
    """Run the full block stack plus final layernorm on (n, D) or (B, n, D)."""
    if x.data.shape[-1] != cfg.d_model:
        raise ValueError(f"token width {x.data.shape[-1]} does not match d_model {cfg.d_model}")
    z = x
    for layer in range(cfg.depth):
        base = f"{prefix}.layer{layer}"
        z = T.add(msa(store, f"{base}.attn", norm(store, f"{base}.ln1", z), cfg), z)
        z = T.add(mlp(store, f"{base}.mlp", norm(store, f"{base}.ln2", z)), z)
    return norm(store, f"{prefix}.final_norm", z)
