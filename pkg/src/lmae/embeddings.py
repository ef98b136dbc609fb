"""Patch extraction and positional encodings.

Spatial positions use the fixed sinusoidal table. Temporal positions come in
three variants:

  "empty"      no temporal signal at all
  "base"       fixed sinusoidal encoding of the visit index 0..T-1
  "time_aware" learnable cos(omega * (t - t0) + tau) of the time since the
               first visit, in years

The time-aware variant depends on visit times only through differences, so
shifting every time in a sequence by the same offset leaves it unchanged.
"""

from __future__ import annotations

import logging

import numpy as np

from . import tensor as T
from .params import ParamStore
from .tensor import Tensor

logger = logging.getLogger("lmae")

TEMPORAL_VARIANTS = ("empty", "base", "time_aware")

PIXEL_CENTER = 0.5
PIXEL_SCALE = 4.0


def standardize_pixels(values: np.ndarray) -> np.ndarray:
    """Affine map of [0, 1] pixels to roughly unit scale, (x - 0.5) * 4.

    Token content then has magnitude comparable to the positional tables,
    which keeps attention from keying on position alone early in training.
    """
    return (np.asarray(values, dtype=np.float64) - PIXEL_CENTER) * PIXEL_SCALE


def patchify(frame: np.ndarray, patch_size: int) -> np.ndarray:
    """(H, W, C) -> (N, P*P*C) with patches in row-major grid order and
    row-major pixel order inside each patch."""
    if frame.ndim != 3:
        raise ValueError(f"expected frame of shape (H, W, C), got {frame.shape}")
    h, w, c = frame.shape
    p = patch_size
    if h != w:
        raise ValueError(f"frames must be square, got {h}x{w}")
    if h % p != 0:
        raise ValueError(f"image size {h} not divisible by patch size {p}")
    q = h // p
    return frame.reshape(q, p, q, p, c).transpose(0, 2, 1, 3, 4).reshape(q * q, p * p * c)


def unpatchify(tokens: np.ndarray, image_size: int, patch_size: int, channels: int) -> np.ndarray:
    """Inverse of patchify: (N, P*P*C) -> (H, W, C)."""
    p = patch_size
    q = image_size // patch_size
    if tokens.shape != (q * q, p * p * channels):
        raise ValueError(f"expected tokens of shape {(q * q, p * p * channels)}, got {tokens.shape}")
    return tokens.reshape(q, q, p, p, channels).transpose(0, 2, 1, 3, 4).reshape(
        image_size, image_size, channels)


def sinusoidal_encoding(position: int | float, dim: int) -> np.ndarray:
    """Fixed sine/cosine encoding: component 2l is sin(w_l k), 2l+1 is
    cos(w_l k) with w_l = 10000^(-2l/dim)."""
    if dim % 2 != 0:
        raise ValueError(f"encoding dimension must be even, got {dim}")
    if dim <= 0:
        raise ValueError(f"encoding dimension must be positive, got {dim}")
    ell = np.arange(dim // 2, dtype=np.float64)
    omega = 10000.0 ** (-2.0 * ell / dim)
    out = np.empty(dim, dtype=np.float64)
    out[0::2] = np.sin(omega * position)
    out[1::2] = np.cos(omega * position)
    return out


def sinusoidal_table(n_positions: int, dim: int) -> np.ndarray:
    """(n_positions, dim) table of sinusoidal_encoding(k, dim) for k = 0..n-1."""
    if n_positions < 1:
        raise ValueError(f"need at least one position, got {n_positions}")
    return np.stack([sinusoidal_encoding(k, dim) for k in range(n_positions)])


def time_aware_init(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Initial (omega, tau) for the learnable temporal encoding.

    Frequencies follow the sinusoidal ladder in interleaved pairs; phases
    start at pi/2 on even components and 0 on odd ones, so the initial
    encoding is a pure cosine ladder with a quarter-turn offset on the
    sine slots.
    """
    if dim % 2 != 0:
        raise ValueError(f"encoding dimension must be even, got {dim}")
    ell = np.repeat(np.arange(dim // 2, dtype=np.float64), 2)
    omega = 10000.0 ** (-2.0 * ell / dim)
    tau = np.zeros(dim, dtype=np.float64)
    tau[0::2] = np.pi / 2.0
    return omega, tau


def add_time_aware_params(store: ParamStore, prefix: str, dim: int):
    omega, tau = time_aware_init(dim)
    store.add(f"{prefix}.omega", omega)
    store.add(f"{prefix}.tau", tau)


def validate_times(times: np.ndarray, n_frames: int) -> np.ndarray:
    times = np.asarray(times, dtype=np.float64)
    if times.shape != (n_frames,):
        raise ValueError(f"expected {n_frames} visit times, got shape {times.shape}")
    if np.any(np.diff(times) < 0):
        raise ValueError(f"visit times must be nondecreasing, got {times.tolist()}")
    return times


def temporal_encoding_rows(store: ParamStore, prefix: str, variant: str,
                           times: np.ndarray, dim: int) -> Tensor | np.ndarray | None:
    """Per-frame temporal encodings, one row per visit.

    Returns None (empty), a constant (T, dim) array (base), or a Tensor of
    shape (T, dim) wired to the omega/tau parameters (time_aware).
    """
    if variant not in TEMPORAL_VARIANTS:
        raise ValueError(f"unknown temporal variant {variant!r}; expected one of {TEMPORAL_VARIANTS}")
    n = len(times)
    if variant == "empty":
        return None
    if variant == "base":
        return sinusoidal_table(n, dim)
    deltas = times - times[0]
    if np.any(deltas < 0):
        logger.warning("negative time offsets %s; check visit ordering", deltas.tolist())
    omega = store[f"{prefix}.omega"].tensor
    tau = store[f"{prefix}.tau"].tensor
    rows = []
    for dt in deltas:
        rows.append(T.cos(T.add(T.scale(omega, float(dt)), tau)))
    return T.stack(rows, axis=0)
