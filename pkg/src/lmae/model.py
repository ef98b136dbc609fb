"""Longitudinal masked autoencoder.

The encoder sees only the visible tokens of a visit sequence (patch
projection + spatial PE + temporal term), so its cost scales with the
visible count. The decoder receives the full token set: projected encoder
outputs at visible positions and one shared learned mask token everywhere
else, plus its own spatial PE and temporal embeddings, and predicts the
standardized pixels of each token. The loss covers masked tokens only.

Parameter groups live under fixed name prefixes (patch_embed, temporal,
encoder, enc_to_dec, mask_token, dec_temporal, decoder, pixel_head); the
fine-tuning init policy selects groups by these prefixes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rng_mod
from . import tensor as T
from .embeddings import (patchify, sinusoidal_table, standardize_pixels,
                         temporal_encoding_rows, add_time_aware_params,
                         validate_times, TEMPORAL_VARIANTS)
from .optim import AdamW, DivergenceError
from .params import ParamStore, trunc_normal
from .tensor import DEFAULT_DTYPE, Tensor, backward
from .transformer import (TransformerConfig, add_linear_params,
                          add_transformer_params, encoder_forward, linear)


@dataclass(frozen=True)
class LMAEConfig:
    image_size: int = 32
    patch_size: int = 8
    channels: int = 1
    temporal_variant: str = "time_aware"
    d_enc: int = 64
    enc_depth: int = 4
    enc_heads: int = 4
    d_dec: int = 32
    dec_depth: int = 2
    dec_heads: int = 4

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError(f"image size {self.image_size} not divisible by patch size {self.patch_size}")
        if self.temporal_variant not in TEMPORAL_VARIANTS:
            raise ValueError(f"unknown temporal variant {self.temporal_variant!r}")
        if self.d_enc % 2 or self.d_dec % 2:
            raise ValueError("encoder and decoder widths must be even for sinusoidal tables")

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
        return TransformerConfig(self.enc_depth, self.enc_heads, self.d_enc, 4 * self.d_enc)

    @property
    def dec_cfg(self) -> TransformerConfig:
        return TransformerConfig(self.dec_depth, self.dec_heads, self.d_dec, 4 * self.d_dec)


class LongitudinalMAE:
    def __init__(self, cfg: LMAEConfig, seed: int = 0, dtype=DEFAULT_DTYPE):
        self.cfg = cfg
        self.store = ParamStore(dtype=dtype)
        rng = rng_mod.substream(seed, rng_mod.INIT, "lmae")
        add_linear_params(self.store, "patch_embed", cfg.patch_dim, cfg.d_enc, rng)
        if cfg.temporal_variant == "time_aware":
            add_time_aware_params(self.store, "temporal", cfg.d_enc)
        add_transformer_params(self.store, "encoder", cfg.enc_cfg, rng)
        add_linear_params(self.store, "enc_to_dec", cfg.d_enc, cfg.d_dec, rng)
        self.store.add("mask_token", trunc_normal(rng, (cfg.d_dec,)))
        if cfg.temporal_variant == "time_aware":
            add_time_aware_params(self.store, "dec_temporal", cfg.d_dec)
        add_transformer_params(self.store, "decoder", cfg.dec_cfg, rng)
        add_linear_params(self.store, "pixel_head", cfg.d_dec, cfg.patch_dim, rng)
        self.enc_spatial = sinusoidal_table(cfg.tokens_per_frame, cfg.d_enc).astype(dtype)
        self.dec_spatial = sinusoidal_table(cfg.tokens_per_frame, cfg.d_dec).astype(dtype)
        n_dec = (self.store.count_values("decoder.") + self.store.count_values("dec_temporal.")
                 + self.store.count_values("mask_token") + self.store.count_values("pixel_head"))
        n_enc = self.store.count_values("encoder.") + self.store.count_values("patch_embed")
        if n_dec >= n_enc:
            raise ValueError(f"decoder must be more compact than the encoder ({n_dec} vs {n_enc} values)")

    # -- embedding ---------------------------------------------------------

    def _frames_to_patches(self, frames: np.ndarray) -> np.ndarray:
        """Standardized patch rows; both the encoder input and the
        reconstruction target live on this scale."""
        cfg = self.cfg
        if frames.ndim != 4 or frames.shape[1:] != (cfg.image_size, cfg.image_size, cfg.channels):
            raise ValueError(
                f"expected frames of shape (T, {cfg.image_size}, {cfg.image_size}, {cfg.channels}), got {frames.shape}")
        pats = np.stack([patchify(f, cfg.patch_size) for f in frames])
        return standardize_pixels(pats.reshape(-1, cfg.patch_dim)).astype(self.store.dtype)

    def embed_sequence(self, frames: np.ndarray, times: np.ndarray) -> Tensor:
        """(T, H, W, C) frames + visit times -> (T*N, d_enc) tokens."""
        cfg = self.cfg
        n_frames = frames.shape[0]
        times = validate_times(times, n_frames)
        n = cfg.tokens_per_frame
        tokens = linear(self.store, "patch_embed", T.constant(self._frames_to_patches(frames)))
        spatial = T.constant(np.tile(self.enc_spatial, (n_frames, 1)))
        tokens = T.add(tokens, spatial)
        rows = temporal_encoding_rows(self.store, "temporal", cfg.temporal_variant, times, cfg.d_enc)
        if rows is None:
            return tokens
        if isinstance(rows, np.ndarray):
            temporal = T.constant(np.repeat(rows, n, axis=0).astype(self.store.dtype))
        else:
            temporal = T.reshape(
                T.broadcast_to(T.reshape(rows, (n_frames, 1, cfg.d_enc)), (n_frames, n, cfg.d_enc)),
                (n_frames * n, cfg.d_enc))
        return T.add(tokens, temporal)

    # -- autoencoder passes ------------------------------------------------

    def encode_visible(self, frames: np.ndarray, times: np.ndarray,
                       visible: np.ndarray) -> tuple[Tensor, np.ndarray]:
        """Embed, drop masked tokens, encode. Returns (encoded, visible flat
        indices); encoded row count equals the visible-token count exactly."""
        cfg = self.cfg
        flat = self._flat_visible(visible, frames.shape[0])
        vis_idx = np.flatnonzero(flat)
        if vis_idx.size == 0:
            raise ValueError("mask leaves no visible tokens; nothing to encode")
        tokens = self.embed_sequence(frames, times)
        visible_tokens = T.gather_rows(tokens, vis_idx)
        encoded = encoder_forward(self.store, "encoder", visible_tokens, cfg.enc_cfg)
        return encoded, vis_idx

    def _flat_visible(self, visible: np.ndarray, n_frames: int) -> np.ndarray:
        q = self.cfg.grid_side
        visible = np.asarray(visible, dtype=bool)
        if visible.shape != (n_frames, q, q):
            raise ValueError(f"expected mask of shape {(n_frames, q, q)}, got {visible.shape}")
        return visible.reshape(-1)

    def decode_full(self, encoded: Tensor, vis_idx: np.ndarray, times: np.ndarray,
                    n_frames: int) -> Tensor:
        """Assemble the full token set (projected encodings at visible
        positions, the shared mask token elsewhere), add decoder PE and
        temporal embeddings to all of it, decode, and predict pixels."""
        cfg = self.cfg
        n = cfg.tokens_per_frame
        total = n_frames * n
        if encoded.data.shape[0] != vis_idx.size:
            raise ValueError(f"encoded count {encoded.data.shape[0]} != visible count {vis_idx.size}")
        projected = linear(self.store, "enc_to_dec", encoded)
        n_masked = total - vis_idx.size
        order = np.empty(total, dtype=np.intp)
        order[vis_idx] = np.arange(vis_idx.size)
        masked_idx = np.setdiff1d(np.arange(total), vis_idx, assume_unique=False)
        order[masked_idx] = vis_idx.size + np.arange(n_masked)
        mask_tok = self.store["mask_token"].tensor
        if n_masked:
            fill = T.broadcast_to(T.reshape(mask_tok, (1, cfg.d_dec)), (n_masked, cfg.d_dec))
            full = T.gather_rows(T.concat([projected, fill], axis=0), order)
        else:
            full = T.gather_rows(projected, order)
        full = T.add(full, T.constant(np.tile(self.dec_spatial, (n_frames, 1))))
        times = validate_times(times, n_frames)
        rows = temporal_encoding_rows(self.store, "dec_temporal", cfg.temporal_variant, times, cfg.d_dec)
        if rows is not None:
            if isinstance(rows, np.ndarray):
                full = T.add(full, T.constant(np.repeat(rows, n, axis=0).astype(self.store.dtype)))
            else:
                full = T.add(full, T.reshape(
                    T.broadcast_to(T.reshape(rows, (n_frames, 1, cfg.d_dec)), (n_frames, n, cfg.d_dec)),
                    (total, cfg.d_dec)))
        decoded = encoder_forward(self.store, "decoder", full, cfg.dec_cfg)
        return linear(self.store, "pixel_head", decoded)

    def reconstruction_loss(self, predicted: Tensor, frames: np.ndarray,
                            visible: np.ndarray) -> Tensor:
        """Mean squared pixel error over masked tokens only."""
        flat = self._flat_visible(visible, frames.shape[0])
        masked_idx = np.flatnonzero(~flat)
        if masked_idx.size == 0:
            raise ValueError("mask hides no tokens; reconstruction loss undefined")
        target = self._frames_to_patches(frames)[masked_idx]
        diff = T.sub(T.gather_rows(predicted, masked_idx), T.constant(target))
        return T.reduce_mean(T.mul(diff, diff))

    def forward_loss(self, frames: np.ndarray, times: np.ndarray,
                     visible: np.ndarray) -> Tensor:
        encoded, vis_idx = self.encode_visible(frames, times, visible)
        predicted = self.decode_full(encoded, vis_idx, times, frames.shape[0])
        return self.reconstruction_loss(predicted, frames, visible)


def pretrain_step(model: LongitudinalMAE, batch: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
                  optimizer: AdamW, lr: float | None = None) -> float:
    """One optimization step on a batch of (frames, times, visible) triples.
    Returns the batch-mean loss."""
    if not batch:
        raise ValueError("pretrain_step: empty batch")
    losses = [model.forward_loss(frames, times, visible) for frames, times, visible in batch]
    total = losses[0] if len(losses) == 1 else T.reduce_mean(T.stack(losses))
    value = float(total.data)
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite pretraining loss {value}")
    model.store.zero_grads()
    backward(total)
    optimizer.step(lr)
    return value
