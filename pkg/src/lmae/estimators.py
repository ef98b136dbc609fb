"""Estimator-style wrappers over the pretraining and fine-tuning pipelines.

Both follow the scikit-learn parameter conventions (constructor arguments
stored verbatim, fitted state in trailing-underscore attributes, fit returns
self) so they compose with clone/get_params-based tooling.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator

from . import tensor as T
from .config import RunConfig, validate_config
from .data import SequenceRecord, dataset_windows, pretrain_sequences
from .evaluation import predict_probs
from .train import finetune_run, pretrain_run, restore_best
from .transformer import encoder_forward
from .validation import check_sequence_records, check_windows


class LongitudinalMAEPretrainer(BaseEstimator):
    """Masked-autoencoder pretraining as a transformer-style estimator.

    fit(X) pretrains on sequence records; transform(X) returns one pooled
    encoder embedding per record (all tokens visible, mean over tokens).
    """

    def __init__(self, image_size=32, patch_size=8, temporal_variant="time_aware",
                 mask_strategy="prog_aware", mask_param=0.75, kernel_variant="isotropic",
                 d_enc=64, enc_depth=4, enc_heads=4, d_dec=32, dec_depth=2, dec_heads=2,
                 lr=5e-3, weight_decay=1e-5, epochs=4, batch_size=8, t_ctx=3, seed=0):
        self.image_size = image_size
        self.patch_size = patch_size
        self.temporal_variant = temporal_variant
        self.mask_strategy = mask_strategy
        self.mask_param = mask_param
        self.kernel_variant = kernel_variant
        self.d_enc = d_enc
        self.enc_depth = enc_depth
        self.enc_heads = enc_heads
        self.d_dec = d_dec
        self.dec_depth = dec_depth
        self.dec_heads = dec_heads
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.t_ctx = t_ctx
        self.seed = seed

    def _run_config(self) -> RunConfig:
        cfg = RunConfig(
            image_size=self.image_size, patch_size=self.patch_size,
            temporal_variant=self.temporal_variant, mask_strategy=self.mask_strategy,
            mask_param=self.mask_param, kernel_variant=self.kernel_variant,
            d_enc=self.d_enc, enc_depth=self.enc_depth, enc_heads=self.enc_heads,
            d_dec=self.d_dec, dec_depth=self.dec_depth, dec_heads=self.dec_heads,
            pretrain_lr=self.lr, pretrain_weight_decay=self.weight_decay,
            pretrain_epochs=self.epochs, batch_size=self.batch_size,
            t_ctx=self.t_ctx, seed=self.seed)
        validate_config(cfg)
        return cfg

    def fit(self, X, y=None, validation=None):
        records = check_sequence_records(X)
        val = check_sequence_records(validation) if validation is not None else []
        cfg = self._run_config()
        model, result, _optimizer = pretrain_run(records, val, cfg)
        restore_best(model.store, result)
        self.model_ = model
        self.history_ = result.history
        self.best_val_loss_ = result.best_val_loss
        self.state_arrays_ = model.store.state_arrays()
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise RuntimeError("this pretrainer is not fitted yet; call fit first")
        records = check_sequence_records(X)
        model = self.model_
        out = []
        with T.no_grad():
            for rec in records:
                runs = pretrain_sequences([rec], min(self.t_ctx, len(rec.visits)))
                seq = runs[-1]  # most recent visits
                tokens = model.embed_sequence(seq.frames, seq.times)
                encoded = encoder_forward(model.store, "encoder", tokens, model.cfg.enc_cfg)
                out.append(encoded.data.mean(axis=0))
        return np.stack(out)

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y, **fit_params).transform(X)


class NextVisitSeverityClassifier(BaseEstimator):
    """Fine-tuned next-visit grade predictor over context windows.

    X is a list of Window records (targets travel inside the windows, so y
    is optional and only checked for consistency when given).
    """

    def __init__(self, pretrained=None, init_embedding=True, init_temporal=True,
                 init_encoder=True, image_size=32, patch_size=8,
                 temporal_variant="time_aware", d_model=64, depth=4, heads=4,
                 lr=1e-3, weight_decay=1e-4, epochs=15, batch_size=8, seed=0):
        self.pretrained = pretrained
        self.init_embedding = init_embedding
        self.init_temporal = init_temporal
        self.init_encoder = init_encoder
        self.image_size = image_size
        self.patch_size = patch_size
        self.temporal_variant = temporal_variant
        self.d_model = d_model
        self.depth = depth
        self.heads = heads
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def _run_config(self) -> RunConfig:
        cfg = RunConfig(
            image_size=self.image_size, patch_size=self.patch_size,
            temporal_variant=self.temporal_variant,
            d_enc=self.d_model, enc_depth=self.depth, enc_heads=self.heads,
            finetune_lr=self.lr, finetune_weight_decay=self.weight_decay,
            finetune_epochs=self.epochs, batch_size=self.batch_size, seed=self.seed,
            init_embedding=self.init_embedding, init_temporal=self.init_temporal,
            init_encoder=self.init_encoder)
        validate_config(cfg)
        return cfg

    def fit(self, X, y=None, validation=None):
        windows = check_windows(X)
        if y is not None:
            y = np.asarray(y)
            targets = np.array([w.target_grade for w in windows])
            if y.shape != targets.shape or (y != targets).any():
                raise ValueError("y disagrees with the targets carried by the windows")
        val = check_windows(validation) if validation is not None else []
        cfg = self._run_config()
        model, result = finetune_run(windows, val, self.pretrained, cfg)
        restore_best(model.store, result)
        self.model_ = model
        self.history_ = result.history
        self.best_val_loss_ = result.best_val_loss
        self.classes_ = np.arange(5)
        return self

    def predict_proba(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise RuntimeError("this classifier is not fitted yet; call fit first")
        return predict_probs(self.model_, check_windows(X))

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)


def windows_from_records(records: list[SequenceRecord], t_ctx: int = 3,
                         horizon_years: float = 3.0):
    """Convenience bridge from raw records to classifier inputs."""
    return dataset_windows(check_sequence_records(records), t_ctx, horizon_years)
