"""End-to-end CLI smoke tests: every subcommand at tiny scale, exit codes,
and artifact layout."""

import contextlib
import io
import json
import os
import tempfile

import numpy as np

from lmae.checkpoint import load_checkpoint
from lmae.cli import main

SMALL = ["--set", "n_patients=8", "--set", "image_size=16", "--set", "patch_size=8",
         "--set", "d_enc=12", "--set", "enc_depth=1", "--set", "enc_heads=2",
         "--set", "d_dec=8", "--set", "dec_depth=1", "--set", "dec_heads=2",
         "--set", "t_ctx=2", "--set", "pretrain_epochs=1", "--set", "finetune_epochs=1",
         "--set", "batch_size=4"]


def _run(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


def _gen(tmp):
    data = os.path.join(tmp, "data")
    code, out, err = _run(["generate-data", "--set", f"data_dir={data}"] + SMALL)
    assert code == 0, err
    return data


def test_generate_data_writes_manifest():
    with tempfile.TemporaryDirectory() as tmp:
        data = _gen(tmp)
        manifest = os.path.join(data, "manifest.jsonl")
        assert os.path.exists(manifest)
        lines = open(manifest, encoding="utf-8").read().splitlines()
        assert len(lines) == 8
        rec = json.loads(lines[0])
        for visit in rec["visits"]:
            assert os.path.exists(os.path.join(data, visit["image"]))


def test_pretrain_finetune_evaluate_chain():
    with tempfile.TemporaryDirectory() as tmp:
        data = _gen(tmp)
        run = os.path.join(tmp, "run")
        common = ["--set", f"data_dir={data}", "--out", run] + SMALL
        code, out, err = _run(["pretrain"] + common)
        assert code == 0, err
        ckpt = os.path.join(run, "pretrain.ckpt")
        assert os.path.exists(ckpt)
        assert os.path.exists(os.path.join(run, "pretrain_log.jsonl"))
        arrays, meta = load_checkpoint(ckpt)
        assert meta["kind"] == "pretrain"
        assert any(k.startswith("last.") for k in arrays)

        code, out, err = _run(["finetune", "--pretrained", ckpt] + common)
        assert code == 0, err
        clf = os.path.join(run, "classifier.ckpt")
        assert os.path.exists(clf)

        code, out, err = _run(["evaluate", clf] + common)
        assert code == 0, err
        payload = json.loads(out.strip().splitlines()[-1])
        assert payload["n_windows"] > 0
        assert os.path.exists(os.path.join(run, "eval.json"))


def test_pretrain_resume_roundtrip():
    with tempfile.TemporaryDirectory() as tmp:
        data = _gen(tmp)
        run = os.path.join(tmp, "run")
        common = ["--set", f"data_dir={data}", "--out", run] + SMALL
        code, _, err = _run(["pretrain"] + common)
        assert code == 0, err
        ckpt = os.path.join(run, "pretrain.ckpt")
        # resuming a finished run is a no-op that still rewrites artifacts
        code, _, err = _run(["pretrain", "--resume", ckpt] + common)
        assert code == 0, err
        # wrong-kind checkpoint is a validation error
        code, _, err = _run(["finetune"] + common)
        assert code == 0, err
        code, _, err = _run(["pretrain", "--resume", os.path.join(run, "classifier.ckpt")] + common)
        assert code == 1
        assert "not a pretraining checkpoint" in err


def test_evaluate_rejects_wrong_checkpoint_kind():
    with tempfile.TemporaryDirectory() as tmp:
        data = _gen(tmp)
        run = os.path.join(tmp, "run")
        common = ["--set", f"data_dir={data}", "--out", run] + SMALL
        assert _run(["pretrain"] + common)[0] == 0
        code, _, err = _run(["evaluate", os.path.join(run, "pretrain.ckpt")] + common)
        assert code == 1
        assert "not a classifier checkpoint" in err


def test_mask_preview_writes_five_grades():
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "masks")
        code, stdout, err = _run(["mask-preview", "--out", out,
                                  "--set", "image_size=32", "--set", "patch_size=8"])
        assert code == 0, err
        for grade in range(5):
            path = os.path.join(out, f"mask_s{grade}.pbm")
            assert os.path.exists(path)
            assert open(path, "rb").read(2) == b"P1"
        assert len(stdout.strip().splitlines()) == 5


def test_config_command_roundtrip():
    code, out, err = _run(["config", "--preset", "smoke", "--set", "seed=9"])
    assert code == 0, err
    assert "seed = 9" in out
    assert "n_patients = 12" in out
    code, _, err = _run(["config", "--set", "bogus_key=1"])
    assert code == 1
    assert "error" in err


def test_config_env_override(monkeypatch=None):
    env_before = os.environ.get("LMAE_DATA_DIR")
    os.environ["LMAE_DATA_DIR"] = "/env/data"
    try:
        code, out, _ = _run(["config"])
        assert code == 0
        assert "data_dir = /env/data" in out
    finally:
        if env_before is None:
            del os.environ["LMAE_DATA_DIR"]
        else:
            os.environ["LMAE_DATA_DIR"] = env_before


def test_experiment_small_grid():
    with tempfile.TemporaryDirectory() as tmp:
        data = _gen(tmp)
        run = os.path.join(tmp, "grid")
        code, out, err = _run(["experiment", "--grid", "init_policies",
                               "--set", f"data_dir={data}", "--out", run] + SMALL)
        assert code == 0, err
        rows = [json.loads(line) for line in
                open(os.path.join(run, "results.jsonl"), encoding="utf-8")]
        assert len(rows) == 8
        assert {r["status"] for r in rows} == {"ok"}
        assert "strategy" in out
        code, _, err = _run(["experiment", "--grid", "nonsense",
                             "--set", f"data_dir={data}", "--out", run] + SMALL)
        assert code == 1
        assert "unknown grid" in err


def test_missing_manifest_is_validation_error():
    with tempfile.TemporaryDirectory() as tmp:
        code, _, err = _run(["pretrain", "--set", f"data_dir={tmp}/nope",
                             "--out", f"{tmp}/run"] + SMALL)
        assert code == 1
        assert "error" in err


def test_gradcheck_command_passes():
    code, out, err = _run(["gradcheck"])
    assert code == 0, err
    assert "overall max relative error" in out
