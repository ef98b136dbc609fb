"""Next-visit severity classifier fine-tuned from the pretrained encoder.

The classifier reuses the patch embedding, temporal embedding, and encoder;
an InitPolicy chooses which of those three groups to copy from a pretraining
checkpoint (bit-exactly) and which to re-initialize. Tokens are mean-pooled
after the encoder; an MLP head with one hidden layer emits 5 grade logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rng_mod
from . import tensor as T
from .embeddings import (add_time_aware_params, patchify, sinusoidal_table,
                         standardize_pixels, validate_times, TEMPORAL_VARIANTS)
from .optim import AdamW, DivergenceError
from .params import ParamStore
from .tensor import DEFAULT_DTYPE, Tensor, backward
from .transformer import (TransformerConfig, add_linear_params,
                          add_transformer_params, encoder_forward, linear)

N_GRADES = 5

# parameter-name prefixes a pretraining checkpoint shares with the classifier
TRANSFER_GROUPS = {
    "use_embedding_layer": "patch_embed.",
    "use_temporal_embedding": "temporal.",
    "use_encoder_weights": "encoder.",
}


@dataclass(frozen=True)
class InitPolicy:
    """Which pretrained groups seed the classifier; the rest start fresh."""

    use_embedding_layer: bool = True
    use_temporal_embedding: bool = True
    use_encoder_weights: bool = True

    @classmethod
    def all_true(cls) -> "InitPolicy":
        return cls(True, True, True)

    @classmethod
    def all_false(cls) -> "InitPolicy":
        return cls(False, False, False)

    def selected_prefixes(self) -> list[str]:
        return [prefix for field, prefix in TRANSFER_GROUPS.items() if getattr(self, field)]


@dataclass(frozen=True)
class ClassifierConfig:
    image_size: int = 32
    patch_size: int = 8
    channels: int = 1
    temporal_variant: str = "time_aware"
    d_model: int = 64
    depth: int = 4
    heads: int = 4
    n_classes: int = N_GRADES

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError(f"image size {self.image_size} not divisible by patch size {self.patch_size}")
        if self.temporal_variant not in TEMPORAL_VARIANTS:
            raise ValueError(f"unknown temporal variant {self.temporal_variant!r}")

    @property
    def grid_side(self) -> int:
        return self.image_size // self.patch_size

    @property
    def tokens_per_frame(self) -> int:
        return self.grid_side ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size ** 2 * self.channels

    @property
    def enc_cfg(self) -> TransformerConfig:
        return TransformerConfig(self.depth, self.heads, self.d_model, 4 * self.d_model)


class SeverityClassifier:
    def __init__(self, cfg: ClassifierConfig, seed: int = 0, dtype=DEFAULT_DTYPE):
        self.cfg = cfg
        self.store = ParamStore(dtype=dtype)
        rng = rng_mod.substream(seed, rng_mod.INIT, "classifier")
        add_linear_params(self.store, "patch_embed", cfg.patch_dim, cfg.d_model, rng)
        if cfg.temporal_variant == "time_aware":
            add_time_aware_params(self.store, "temporal", cfg.d_model)
        add_transformer_params(self.store, "encoder", cfg.enc_cfg, rng)
        add_linear_params(self.store, "classifier.fc1", cfg.d_model, cfg.d_model, rng)
        add_linear_params(self.store, "classifier.fc2", cfg.d_model, cfg.n_classes, rng)
        self.spatial = sinusoidal_table(cfg.tokens_per_frame, cfg.d_model).astype(dtype)

    def _batch_patches(self, frames: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        if frames.ndim != 5 or frames.shape[2:] != (cfg.image_size, cfg.image_size, cfg.channels):
            raise ValueError(
                f"expected frames of shape (B, T, {cfg.image_size}, {cfg.image_size}, {cfg.channels}), "
                f"got {frames.shape}")
        b, t = frames.shape[:2]
        pats = np.stack([np.stack([patchify(f, cfg.patch_size) for f in seq]) for seq in frames])
        pats = standardize_pixels(pats.reshape(b, t * cfg.tokens_per_frame, cfg.patch_dim))
        return pats.astype(self.store.dtype)

    def _temporal_batch(self, times: np.ndarray, b: int, t: int) -> Tensor | None:
        """(B, T*N, d) temporal addend shared by all patches of a frame."""
        cfg = self.cfg
        n, d = cfg.tokens_per_frame, cfg.d_model
        if cfg.temporal_variant == "empty":
            return None
        if cfg.temporal_variant == "base":
            rows = np.repeat(sinusoidal_table(t, d), n, axis=0).astype(self.store.dtype)
            return T.broadcast_to(T.constant(rows[None]), (b, t * n, d))
        deltas = (times - times[:, :1]).astype(self.store.dtype)
        dt = T.broadcast_to(T.constant(deltas[:, :, None]), (b, t, d))
        omega = T.broadcast_to(T.reshape(self.store["temporal.omega"].tensor, (1, 1, d)), (b, t, d))
        tau = T.broadcast_to(T.reshape(self.store["temporal.tau"].tensor, (1, 1, d)), (b, t, d))
        rows = T.cos(T.add(T.mul(dt, omega), tau))
        return T.reshape(
            T.broadcast_to(T.reshape(rows, (b, t, 1, d)), (b, t, n, d)), (b, t * n, d))

    def logits(self, frames: np.ndarray, times: np.ndarray) -> Tensor:
        """(B, T, H, W, C) frames + (B, T) times -> (B, n_classes) logits."""
        cfg = self.cfg
        if frames.shape[0] == 0 or frames.shape[1] == 0:
            raise ValueError("empty context; need at least one sequence with one frame")
        b, t = frames.shape[:2]
        times = np.asarray(times, dtype=np.float64)
        if times.shape != (b, t):
            raise ValueError(f"expected times of shape {(b, t)}, got {times.shape}")
        for row in times:
            validate_times(row, t)
        tokens = linear(self.store, "patch_embed", T.constant(self._batch_patches(frames)))
        spatial = np.tile(self.spatial, (t, 1))[None]
        tokens = T.add(tokens, T.broadcast_to(T.constant(spatial), tokens.shape))
        temporal = self._temporal_batch(times, b, t)
        if temporal is not None:
            tokens = T.add(tokens, temporal)
        encoded = encoder_forward(self.store, "encoder", tokens, cfg.enc_cfg)
        pooled = T.reduce_mean(encoded, axis=1)
        hidden = T.gelu(linear(self.store, "classifier.fc1", pooled))
        return linear(self.store, "classifier.fc2", hidden)

    def predict_proba(self, frames: np.ndarray, times: np.ndarray) -> np.ndarray:
        """Single-context convenience: (T, H, W, C) -> probability vector."""
        with T.no_grad():
            out = T.softmax(self.logits(frames[None], np.asarray(times, dtype=np.float64)[None]))
        return out.data[0].astype(np.float64)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax logits."""
    targets = np.asarray(targets)
    if targets.ndim != 1 or targets.shape[0] != logits.data.shape[0]:
        raise ValueError(f"targets shape {targets.shape} does not match logits {logits.data.shape}")
    if targets.min() < 0 or targets.max() >= logits.data.shape[1]:
        raise ValueError(f"targets must lie in 0..{logits.data.shape[1] - 1}")
    picked = T.take_per_row(T.log_softmax(logits, axis=-1), targets)
    return T.neg(T.reduce_mean(picked))


def load_pretrained(arrays: dict[str, np.ndarray], policy: InitPolicy,
                    cfg: ClassifierConfig, seed: int = 0,
                    dtype=DEFAULT_DTYPE) -> SeverityClassifier:
    """Build a classifier, copying the policy-selected groups bit-exactly
    from pretraining-checkpoint arrays; everything else keeps fresh init."""
    model = SeverityClassifier(cfg, seed=seed, dtype=dtype)
    for prefix in policy.selected_prefixes():
        group = [p for p in model.store if p.name.startswith(prefix)]
        if not group:
            continue  # variant without temporal parameters: nothing to transfer
        for p in group:
            if p.name not in arrays:
                raise KeyError(f"checkpoint is missing {p.name!r} required by the init policy")
            src = arrays[p.name]
            if src.shape != p.value.shape:
                raise ValueError(f"checkpoint {p.name!r} has shape {src.shape}, model needs {p.value.shape}")
            p.value = src
    return model


def finetune_step(model: SeverityClassifier,
                  batch: tuple[np.ndarray, np.ndarray, np.ndarray],
                  optimizer: AdamW, lr: float | None = None) -> float:
    """One cross-entropy step on (frames, times, targets). Returns the loss."""
    frames, times, targets = batch
    loss = cross_entropy(model.logits(frames, times), targets)
    value = float(loss.data)
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite fine-tuning loss {value}")
    model.store.zero_grads()
    backward(loss)
    optimizer.step(lr)
    return value
