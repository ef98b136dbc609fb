"""Experiment grids: cell enumeration, failure recording, output files."""

import json
import os
import tempfile

import numpy as np

from lmae.config import RunConfig
from lmae.data import SyntheticGenConfig, generate_synthetic
from lmae.experiment import (GRIDS, STRATEGY_CELLS, init_policy_grid, render_table,
                             run_cell, run_experiment, strategy_temporal_grid)

TOY = SyntheticGenConfig(n_patients=10, image_size=16, seed=8, min_visits=4, max_visits=5)
TOY_RUN = dict(image_size=16, patch_size=8, d_enc=12, enc_depth=1, enc_heads=2,
               d_dec=8, dec_depth=1, dec_heads=2, t_ctx=2,
               pretrain_epochs=1, finetune_epochs=1, batch_size=4)


def test_grid_enumeration():
    grid = strategy_temporal_grid()
    assert len(grid) == len(STRATEGY_CELLS) * 3
    assert {"mask_strategy": "random", "mask_param": 0.25, "temporal_variant": "empty"} in grid
    policies = init_policy_grid()
    assert len(policies) == 8
    assert len({tuple(sorted(p.items())) for p in policies}) == 8
    assert set(GRIDS) == {"strategies", "table2", "init_policies"}
    assert len(GRIDS["table2"]) == 18


def test_run_cell_smoke():
    records = generate_synthetic(TOY)
    cfg = RunConfig(seed=1, **TOY_RUN)
    report = run_cell(records, cfg)
    assert report.n_windows > 0
    assert report.config_fingerprint


def test_run_experiment_writes_outputs_and_survives_failure():
    records = generate_synthetic(TOY)
    base = RunConfig(seed=1, **TOY_RUN)
    cells = [
        {"temporal_variant": "base"},
        # t_ctx larger than any patient's visit count leaves no sequences
        {"t_ctx": 40},
    ]
    with tempfile.TemporaryDirectory() as tmp:
        rows = run_experiment(records, base, cells, tmp)
        assert [r["status"] for r in rows] == ["ok", "failed"]
        assert "error" in rows[1]
        lines = open(os.path.join(tmp, "results.jsonl"), encoding="utf-8").read().splitlines()
        assert len(lines) == 2
        parsed = [json.loads(line) for line in lines]
        assert parsed[0]["cell"] == 0
        assert parsed[0]["auc_severe_plus"] is None or isinstance(
            parsed[0]["auc_severe_plus"], float)
        table = open(os.path.join(tmp, "table.txt"), encoding="utf-8").read()
        assert "strategy" in table and "failed" in table


def test_run_experiment_checkpoints_optional():
    records = generate_synthetic(TOY)
    base = RunConfig(seed=1, **TOY_RUN)
    with tempfile.TemporaryDirectory() as tmp:
        run_experiment(records, base, [{}], tmp, keep_checkpoints=True)
        assert os.path.exists(os.path.join(tmp, "checkpoints", "cell000.ckpt"))
    with tempfile.TemporaryDirectory() as tmp:
        run_experiment(records, base, [{}], tmp)
        assert not os.path.exists(os.path.join(tmp, "checkpoints"))


def test_render_table_policy_letters():
    rows = [
        {"mask_strategy": "prog_aware", "mask_param": 0.75, "temporal_variant": "time_aware",
         "init_embedding": True, "init_temporal": False, "init_encoder": True,
         "auc_mild_plus": 0.91234, "auc_moderate_plus": None, "auc_severe_plus": 0.5,
         "status": "ok"},
        {"status": "failed"},
    ]
    text = render_table(rows)
    lines = text.splitlines()
    assert "E-W" in lines[2]
    assert "0.912" in lines[2]
    assert " - " in lines[2]  # None renders as a dash
    assert lines[3].endswith("failed")
