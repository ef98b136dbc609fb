"""Training loops for pretraining and fine-tuning.

`fit` owns epoch iteration, per-epoch shuffling from a named substream,
validation-loss tracking with best-snapshot retention, and the loss log.
Divergence aborts the loop but keeps the best checkpoint seen so far.
Shuffle and mask substreams are keyed by (epoch, item index), not by draw
order, so a resumed run consumes exactly the streams the uninterrupted run
would have.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as rng_mod
from . import tensor as T
from .config import RunConfig
from .data import PretrainSequence, SequenceRecord, Window, dataset_windows, pretrain_sequences
from .evaluation import TASKS, auc, predict_probs, threshold_scores
from .finetune import (ClassifierConfig, InitPolicy, SeverityClassifier,
                       cross_entropy, finetune_step, load_pretrained)
from .masking import MaskConfig, make_mask
from .model import LMAEConfig, LongitudinalMAE, pretrain_step
from .optim import AdamW, DivergenceError, onecycle_lr
from .params import ParamStore


@dataclass
class FitResult:
    best_state: dict[str, np.ndarray]
    best_val_loss: float
    best_epoch: int
    history: list[dict] = field(default_factory=list)
    diverged: bool = False
    steps_done: int = 0


def fit(store: ParamStore, n_items: int, train_step, val_loss,
        epochs: int, batch_size: int, seed: int,
        max_lr: float | None = None,
        start_epoch: int = 0,
        initial_best: tuple[dict[str, np.ndarray], float, int] | None = None,
        steps_done: int = 0) -> FitResult:
    """Generic loop: train_step(epoch, indices, lr) -> float runs one batch;
    val_loss() -> float scores the validation split.

    With max_lr set, steps follow the one-cycle schedule over the full
    planned budget; otherwise train_step receives lr=None (optimizer
    default). Retains the parameter snapshot with minimum validation loss,
    starting from the pre-training state.
    """
    if n_items < 1:
        raise ValueError("fit: empty training split")
    batches_per_epoch = (n_items + batch_size - 1) // batch_size
    total_steps = max(1, epochs * batches_per_epoch)
    history: list[dict] = []
    if initial_best is not None:
        best_state, best_val, best_epoch = initial_best
    else:
        best_val = val_loss()
        best_state = store.state_arrays()
        best_epoch = start_epoch
        history.append({"step": steps_done, "epoch": start_epoch, "split": "val",
                        "loss": best_val, "lr": None})
    step = steps_done
    diverged = False
    for epoch in range(start_epoch, epochs):
        perm = rng_mod.substream(seed, rng_mod.SHUFFLE, "epoch", epoch).permutation(n_items)
        for start in range(0, n_items, batch_size):
            indices = perm[start:start + batch_size].tolist()
            lr = onecycle_lr(step, total_steps, max_lr) if max_lr is not None else None
            try:
                loss = train_step(epoch, indices, lr)
            except DivergenceError as exc:
                history.append({"step": step, "epoch": epoch, "split": "train",
                                "loss": None, "lr": lr, "error": str(exc)})
                diverged = True
                break
            step += 1
            history.append({"step": step, "epoch": epoch, "split": "train",
                            "loss": loss, "lr": lr})
        if diverged:
            break
        vloss = val_loss()
        history.append({"step": step, "epoch": epoch + 1, "split": "val",
                        "loss": vloss, "lr": None})
        if vloss < best_val:
            best_val = vloss
            best_state = store.state_arrays()
            best_epoch = epoch + 1
    return FitResult(best_state=best_state, best_val_loss=best_val,
                     best_epoch=best_epoch, history=history,
                     diverged=diverged, steps_done=step)


# -- pretraining --------------------------------------------------------------


def _lmae_config(cfg: RunConfig) -> LMAEConfig:
    return LMAEConfig(
        image_size=cfg.image_size, patch_size=cfg.patch_size, channels=1,
        temporal_variant=cfg.temporal_variant,
        d_enc=cfg.d_enc, enc_depth=cfg.enc_depth, enc_heads=cfg.enc_heads,
        d_dec=cfg.d_dec, dec_depth=cfg.dec_depth, dec_heads=cfg.dec_heads)


def _mask_config(cfg: RunConfig) -> MaskConfig:
    return MaskConfig(strategy=cfg.mask_strategy, ratio=cfg.mask_param,
                      r=cfg.mask_param if cfg.mask_strategy.startswith("prog_aware") else 0.75,
                      kernel_variant=cfg.kernel_variant)


def _sequence_batch(seqs: list[PretrainSequence], indices: list[int],
                    mask_cfg: MaskConfig, q: int, seed: int, epoch_key) -> list:
    batch = []
    for idx in indices:
        seq = seqs[idx]
        rng = rng_mod.substream(seed, rng_mod.MASK, *epoch_key, idx)
        visible = make_mask(mask_cfg, q, seq.grades, rng)
        if not visible.any():
            visible = visible.copy()
            visible.reshape(-1)[0] = True  # keep at least one token visible
        batch.append((seq.frames, seq.times, visible))
    return batch


def pretrain_run(train_records: list[SequenceRecord], val_records: list[SequenceRecord],
                 cfg: RunConfig, resume: dict | None = None
                 ) -> tuple[LongitudinalMAE, FitResult, AdamW]:
    """Pretrain on all t_ctx-length visit runs of the train patients,
    validating with fixed masks on the val patients."""
    model = LongitudinalMAE(_lmae_config(cfg), seed=cfg.seed)
    optimizer = AdamW(list(model.store), lr=cfg.pretrain_lr,
                      weight_decay=cfg.pretrain_weight_decay)
    train_seqs = pretrain_sequences(train_records, cfg.t_ctx)
    val_seqs = pretrain_sequences(val_records, cfg.t_ctx)
    mask_cfg = _mask_config(cfg)
    q = model.cfg.grid_side

    def train_step(epoch: int, indices: list[int], lr: float | None) -> float:
        batch = _sequence_batch(train_seqs, indices, mask_cfg, q, cfg.seed, ("train", epoch))
        return pretrain_step(model, batch, optimizer, lr)

    def val_loss() -> float:
        if not val_seqs:
            return float("inf")
        batch = _sequence_batch(val_seqs, list(range(len(val_seqs))), mask_cfg, q,
                                cfg.seed, ("val",))
        with T.no_grad():
            losses = [model.forward_loss(f, t, v).item() for f, t, v in batch]
        return float(np.mean(losses))

    start_epoch, steps_done, initial_best = 0, 0, None
    if resume is not None:
        model.store.load_state_arrays(resume["last"])
        optimizer.load_state_dict(resume["opt"])
        start_epoch = resume["epochs_done"]
        steps_done = optimizer.step_count
        initial_best = (resume["best"], resume["best_val_loss"], resume["best_epoch"])
    result = fit(model.store, len(train_seqs), train_step, val_loss,
                 epochs=cfg.pretrain_epochs, batch_size=cfg.batch_size, seed=cfg.seed,
                 max_lr=cfg.pretrain_lr if cfg.onecycle else None,
                 start_epoch=start_epoch, initial_best=initial_best, steps_done=steps_done)
    return model, result, optimizer


# -- fine-tuning ---------------------------------------------------------------


def _classifier_config(cfg: RunConfig) -> ClassifierConfig:
    return ClassifierConfig(
        image_size=cfg.image_size, patch_size=cfg.patch_size, channels=1,
        temporal_variant=cfg.temporal_variant,
        d_model=cfg.d_enc, depth=cfg.enc_depth, heads=cfg.enc_heads)


def _policy(cfg: RunConfig) -> InitPolicy:
    return InitPolicy(use_embedding_layer=cfg.init_embedding,
                      use_temporal_embedding=cfg.init_temporal,
                      use_encoder_weights=cfg.init_encoder)


def dihedral(frames: np.ndarray, k: int) -> np.ndarray:
    """Apply one of the eight square symmetries to (T, H, W, C) frames.

    k % 4 counts quarter turns, k >= 4 adds a horizontal flip. Lesion
    placement is rotationally exchangeable, so every transform preserves the
    grade while breaking per-eye layout memorization during fine-tuning."""
    if not 0 <= k < 8:
        raise ValueError(f"dihedral index must be in 0..7, got {k}")
    out = np.rot90(frames, k % 4, axes=(1, 2))
    if k >= 4:
        out = np.flip(out, axis=2)
    return np.ascontiguousarray(out)


def _window_batch(windows: list[Window], indices: list[int], aug_key=None, seed: int = 0):
    chunk = [windows[i] for i in indices]
    if aug_key is None:
        frames = np.stack([w.frames for w in chunk])
    else:
        frames = np.stack([
            dihedral(w.frames, int(rng_mod.substream(seed, rng_mod.AUG, *aug_key, i).integers(8)))
            for i, w in zip(indices, chunk)])
    times = np.stack([w.times for w in chunk])
    targets = np.array([w.target_grade for w in chunk], dtype=np.int64)
    return frames, times, targets


def finetune_run(train_windows: list[Window], val_windows: list[Window],
                 pretrained: dict[str, np.ndarray] | None, cfg: RunConfig
                 ) -> tuple[SeverityClassifier, FitResult]:
    policy = _policy(cfg) if pretrained is not None else InitPolicy.all_false()
    model = load_pretrained(pretrained or {}, policy, _classifier_config(cfg), seed=cfg.seed)
    optimizer = AdamW(list(model.store), lr=cfg.finetune_lr,
                      weight_decay=cfg.finetune_weight_decay)

    def train_step(epoch: int, indices: list[int], lr: float | None) -> float:
        aug_key = ("train", epoch) if cfg.augment else None
        batch = _window_batch(train_windows, indices, aug_key=aug_key, seed=cfg.seed)
        return finetune_step(model, batch, optimizer, lr)

    def val_loss() -> float:
        """1 - mean threshold AUC on the validation windows, so snapshot
        selection tracks the ranking quality that evaluation reports. Falls
        back to cross-entropy when every threshold is single-class."""
        if not val_windows:
            return float("inf")
        probs = predict_probs(model, val_windows, batch_size=cfg.batch_size)
        targets = np.array([w.target_grade for w in val_windows])
        aucs = [value for _, g in TASKS
                if (value := auc(threshold_scores(probs, g), (targets >= g).astype(np.int64)))
                is not None]
        if aucs:
            return 1.0 - float(np.mean(aucs))
        total, count = 0.0, 0
        with T.no_grad():
            for start in range(0, len(val_windows), cfg.batch_size):
                idx = list(range(start, min(start + cfg.batch_size, len(val_windows))))
                frames, times, targets_b = _window_batch(val_windows, idx)
                total += cross_entropy(model.logits(frames, times), targets_b).item() * len(idx)
                count += len(idx)
        return total / count

    result = fit(model.store, len(train_windows), train_step, val_loss,
                 epochs=cfg.finetune_epochs, batch_size=cfg.batch_size, seed=cfg.seed,
                 max_lr=cfg.finetune_lr if cfg.onecycle else None)
    return model, result


def restore_best(store: ParamStore, result: FitResult):
    """Put the retained snapshot back into the live parameters."""
    store.load_state_arrays(result.best_state)


def split_windows(records_split: tuple[list[SequenceRecord], ...], cfg: RunConfig):
    train, val, test = records_split
    return (dataset_windows(train, cfg.t_ctx, cfg.horizon_years),
            dataset_windows(val, cfg.t_ctx, cfg.horizon_years),
            dataset_windows(test, cfg.t_ctx, cfg.horizon_years))
