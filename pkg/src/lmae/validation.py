"""Input validation shared by the estimator API and the CLI."""

from __future__ import annotations

import numpy as np

from .data import SequenceRecord, Window


def check_sequence_records(X) -> list[SequenceRecord]:
    records = list(X)
    if not records:
        raise ValueError("expected a nonempty list of SequenceRecord")
    for rec in records:
        if not isinstance(rec, SequenceRecord):
            raise TypeError(f"expected SequenceRecord items, got {type(rec).__name__}")
        if not rec.visits:
            raise ValueError(f"patient {rec.patient_id!r} has no visits")
        times = rec.times()
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"patient {rec.patient_id!r}: visit times must be strictly increasing")
    return records


def check_windows(X) -> list[Window]:
    windows = list(X)
    if not windows:
        raise ValueError("expected a nonempty list of Window")
    shapes = set()
    for w in windows:
        if not isinstance(w, Window):
            raise TypeError(f"expected Window items, got {type(w).__name__}")
        if not 0 <= w.target_grade <= 4:
            raise ValueError(f"window target grade {w.target_grade} outside 0..4")
        shapes.add(w.frames.shape)
    if len(shapes) != 1:
        raise ValueError(f"all windows must share one frame shape, got {sorted(shapes)}")
    return windows


def check_frames(frames: np.ndarray, image_size: int, channels: int = 1) -> np.ndarray:
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[1:] != (image_size, image_size, channels):
        raise ValueError(f"expected frames (T, {image_size}, {image_size}, {channels}), got {frames.shape}")
    if frames.min() < 0.0 or frames.max() > 1.0:
        raise ValueError("frame pixels must lie in [0, 1]")
    return frames.astype(np.float32)
