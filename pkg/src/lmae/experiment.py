"""Ablation grids: pretrain, fine-tune, and evaluate one cell per config.

A cell overrides (mask_strategy, mask_param, temporal_variant, init policy)
on a base RunConfig. Failed cells are recorded with their error and the grid
continues. Results land in a line-delimited file plus a fixed-width text
table mirroring the usual strategy x embedding x AUC layout.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .checkpoint import save_checkpoint
from .config import RunConfig, config_items, dump_config
from .data import SequenceRecord, split_patients
from .evaluation import EvalReport, config_fingerprint, evaluate_windows
from .train import finetune_run, pretrain_run, restore_best, split_windows

TEMPORAL_VARIANTS = ("empty", "base", "time_aware")

# (strategy, parameter) axis: the full strategy set
STRATEGY_CELLS = (
    ("random", 0.25), ("random", 0.5), ("random", 0.75),
    ("visit", 0.75),
    ("prog_aware", 0.25), ("prog_aware", 0.5), ("prog_aware", 0.75),
    ("prog_aware_random", 0.75),
)

# the 18-row masking x temporal-embedding comparison
TABLE2_CELLS = tuple(
    (strategy, param)
    for strategy in ("random", "prog_aware")
    for param in (0.25, 0.5, 0.75)
)


def strategy_temporal_grid(cells=STRATEGY_CELLS, variants=TEMPORAL_VARIANTS) -> list[dict]:
    return [
        {"mask_strategy": strategy, "mask_param": param, "temporal_variant": variant}
        for strategy, param in cells
        for variant in variants
    ]


def init_policy_grid() -> list[dict]:
    """All 8 combinations of the three transfer toggles at the default cell."""
    out = []
    for emb in (False, True):
        for temp in (False, True):
            for enc in (False, True):
                out.append({"init_embedding": emb, "init_temporal": temp, "init_encoder": enc})
    return out


GRIDS = {
    "strategies": strategy_temporal_grid(),
    "table2": strategy_temporal_grid(cells=TABLE2_CELLS),
    "init_policies": init_policy_grid(),
}

_CELL_KEYS = ("mask_strategy", "mask_param", "temporal_variant",
              "init_embedding", "init_temporal", "init_encoder", "seed")


def run_cell(records: list[SequenceRecord], cfg: RunConfig,
             checkpoint_dir: Path | None = None, cell_id: str = "") -> EvalReport:
    """Pretrain, fine-tune, and evaluate one configuration end to end."""
    splits = split_patients(records, seed=cfg.split_seed)
    train_w, val_w, test_w = split_windows(splits, cfg)
    model, pre_result, _optimizer = pretrain_run(splits[0], splits[1], cfg)
    restore_best(model.store, pre_result)
    pretrained = model.store.state_arrays()
    clf, fit_result = finetune_run(train_w, val_w, pretrained, cfg)
    restore_best(clf.store, fit_result)
    if checkpoint_dir is not None:
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(checkpoint_dir / f"{cell_id}.ckpt", clf.store.state_arrays(),
                        {"kind": "classifier", "config": dump_config(cfg)})
    return evaluate_windows(clf, test_w, fingerprint=config_fingerprint(config_items(cfg)))


def run_experiment(records: list[SequenceRecord], base_cfg: RunConfig,
                   cells: list[dict], out_dir: str | Path,
                   keep_checkpoints: bool = False) -> list[dict]:
    """Run every cell, recording failures without stopping the grid."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for index, cell in enumerate(cells):
        cfg = dataclasses.replace(base_cfg, **cell)
        row = {"cell": index}
        for key in _CELL_KEYS:
            row[key] = getattr(cfg, key)
        try:
            report = run_cell(records, cfg,
                              checkpoint_dir=out_dir / "checkpoints" if keep_checkpoints else None,
                              cell_id=f"cell{index:03d}")
            row.update({
                "status": "ok",
                "auc_mild_plus": report.auc_mild_plus,
                "auc_moderate_plus": report.auc_moderate_plus,
                "auc_severe_plus": report.auc_severe_plus,
                "n_windows": report.n_windows,
            })
        except Exception as exc:  # record and continue: one bad cell must not kill the grid
            row.update({"status": "failed", "error": f"{type(exc).__name__}: {exc}"})
        rows.append(row)
    (out_dir / "results.jsonl").write_text(
        "\n".join(json.dumps(r, sort_keys=True, separators=(",", ":")) for r in rows) + "\n",
        encoding="utf-8")
    (out_dir / "table.txt").write_text(render_table(rows), encoding="utf-8")
    return rows


def _fmt_auc(value) -> str:
    return f"{value:.3f}" if isinstance(value, float) else "-"


def render_table(rows: list[dict]) -> str:
    header = (f"{'strategy':<18} {'param':>5} {'temporal':<10} "
              f"{'policy':<6} {'Mild+':>6} {'Moder+':>6} {'Severe+':>7}  status")
    lines = [header, "-" * len(header)]
    for row in rows:
        policy = "".join(letter if flag else "-"
                         for letter, flag in zip("ETW", (row.get("init_embedding", True),
                                                         row.get("init_temporal", True),
                                                         row.get("init_encoder", True))))
        lines.append(
            f"{row.get('mask_strategy', '?'):<18} "
            f"{row.get('mask_param', 0):>5.2f} "
            f"{row.get('temporal_variant', '?'):<10} "
            f"{policy:<6} "
            f"{_fmt_auc(row.get('auc_mild_plus')):>6} "
            f"{_fmt_auc(row.get('auc_moderate_plus')):>6} "
            f"{_fmt_auc(row.get('auc_severe_plus')):>7}  "
            f"{row.get('status', '?')}")
    return "\n".join(lines) + "\n"
