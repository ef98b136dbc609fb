"""Threshold-AUC evaluation of next-visit grade predictions.

Each 5-way prediction is reduced to three binary scores by cumulative tail
probability: P(grade >= 1) (Mild+), P(grade >= 2) (Moderate+) and
P(grade >= 3) (Severe+), compared against the matching binarized targets
with the Mann-Whitney AUC. A task with a single class present reports None.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import tensor as T
from .data import Window

TASKS = (("mild_plus", 1), ("moderate_plus", 2), ("severe_plus", 3))

_PAIRWISE_LIMIT = 10_000


def auc(scores, labels) -> float | None:
    """P(score+ > score-) + 0.5 * P(tie), or None when only one class is
    present. Exact pair counting up to 10k samples, midrank formula beyond."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be matching 1-D arrays")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        return None
    if scores.size <= _PAIRWISE_LIMIT:
        greater = (pos[:, None] > neg[None, :]).sum(dtype=np.float64)
        ties = (pos[:, None] == neg[None, :]).sum(dtype=np.float64)
        return float((greater + 0.5 * ties) / (pos.size * neg.size))
    ranks = rankdata(scores, method="average")
    rank_sum = ranks[labels == 1].sum(dtype=np.float64)
    u = rank_sum - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def threshold_scores(probs: np.ndarray, g: int) -> np.ndarray:
    """Cumulative tail probability sum_{c >= g} probs[..., c]."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[-1] != 5:
        raise ValueError(f"expected 5-way distributions, got trailing dimension {probs.shape[-1]}")
    if not 1 <= g <= 4:
        raise ValueError(f"threshold grade must be in 1..4, got {g}")
    if (probs < -1e-9).any() or np.abs(probs.sum(axis=-1) - 1.0).max() > 1e-5:
        raise ValueError("probs rows must be valid distributions")
    return probs[..., g:].sum(axis=-1)


@dataclass
class EvalReport:
    auc_mild_plus: float | None
    auc_moderate_plus: float | None
    auc_severe_plus: float | None
    n_windows: int
    n_positive: dict[str, int]
    config_fingerprint: str

    def to_json(self) -> str:
        payload = {
            "auc_mild_plus": self.auc_mild_plus,
            "auc_moderate_plus": self.auc_moderate_plus,
            "auc_severe_plus": self.auc_severe_plus,
            "n_windows": self.n_windows,
            "n_positive": self.n_positive,
            "config_fingerprint": self.config_fingerprint,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_fingerprint(config_items: dict) -> str:
    canon = json.dumps(config_items, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def predict_probs(model, windows: list[Window], batch_size: int = 16) -> np.ndarray:
    """(n_windows, 5) softmax predictions, batched for throughput."""
    if not windows:
        raise ValueError("no evaluation windows")
    rows = []
    with T.no_grad():
        for start in range(0, len(windows), batch_size):
            chunk = windows[start:start + batch_size]
            frames = np.stack([w.frames for w in chunk])
            times = np.stack([w.times for w in chunk])
            logits = model.logits(frames, times)
            rows.append(T.softmax(logits, axis=-1).data.astype(np.float64))
    return np.concatenate(rows, axis=0)


def evaluate_windows(model, windows: list[Window], fingerprint: str = "") -> EvalReport:
    probs = predict_probs(model, windows)
    targets = np.array([w.target_grade for w in windows])
    aucs: dict[str, float | None] = {}
    n_pos: dict[str, int] = {}
    for name, g in TASKS:
        labels = (targets >= g).astype(np.int64)
        aucs[name] = auc(threshold_scores(probs, g), labels)
        n_pos[name] = int(labels.sum())
    return EvalReport(
        auc_mild_plus=aucs["mild_plus"],
        auc_moderate_plus=aucs["moderate_plus"],
        auc_severe_plus=aucs["severe_plus"],
        n_windows=len(windows),
        n_positive=n_pos,
        config_fingerprint=fingerprint,
    )
