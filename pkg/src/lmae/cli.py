"""Command-line entry points.

    lmae generate-data   synthesize a dataset (manifest + PGM images)
    lmae pretrain        masked-autoencoder pretraining -> checkpoint
    lmae finetune        next-visit classifier from a pretrain checkpoint
    lmae evaluate        threshold AUCs of a classifier on the test split
    lmae mask-preview    render masks per severity grade as PBM images
    lmae gradcheck       finite-difference check of every gradient path
    lmae config          print the fully resolved configuration
    lmae experiment      run an ablation grid

Exit codes: 0 success, 1 validation error (bad flags, config, or inputs),
2 runtime failure. Every command takes --config/--preset/--seed/--out plus
repeatable --set key=value overrides mirroring the config keys.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import experiment as experiment_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (ConfigError, RunConfig, config_from_dump, config_items,
                     dump_config, load_config)
from .data import (ManifestError, SyntheticGenConfig, generate_synthetic,
                   load_manifest, split_patients, write_dataset)
from .evaluation import config_fingerprint, evaluate_windows
from .finetune import load_pretrained
from .gradcheck import REL_TOL, format_report, full_suite
from .masking import MaskConfig, make_mask, mask_to_pbm
from .model import LMAEConfig, LongitudinalMAE
from .optim import DivergenceError
from .train import (_classifier_config, _lmae_config, finetune_run,
                    pretrain_run, restore_best, split_windows)
from . import rng as rng_mod


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; bad flags are a validation error
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(p: _Parser):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--preset", help="named preset (smoke, overfit, desk, full)")
    p.add_argument("--seed", type=int, help="root seed override")
    p.add_argument("--out", help="output directory override")
    p.add_argument("--set", dest="sets", action="append", default=[],
                   metavar="KEY=VALUE", help="config override, repeatable")


def _resolve_config(args) -> RunConfig:
    overrides: dict[str, str] = {}
    for item in args.sets:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out_dir"] = args.out
    return load_config(path=args.config, preset=args.preset, overrides=overrides)


def _write_history(path: Path, history: list[dict]):
    path.write_text("\n".join(json.dumps(h, sort_keys=True, separators=(",", ":"))
                              for h in history) + "\n", encoding="utf-8")


def _load_split_data(cfg: RunConfig):
    manifest = Path(cfg.data_dir) / "manifest.jsonl"
    records = load_manifest(manifest)
    return split_patients(records, seed=cfg.split_seed)


# -- commands -----------------------------------------------------------------


def cmd_generate_data(args) -> int:
    cfg = _resolve_config(args)
    gen = SyntheticGenConfig(n_patients=cfg.n_patients, image_size=cfg.image_size,
                             seed=cfg.seed, noise=cfg.noise)
    records = generate_synthetic(gen)
    manifest = write_dataset(records, cfg.data_dir)
    n_visits = sum(len(r.visits) for r in records)
    print(f"wrote {len(records)} patients / {n_visits} visits -> {manifest}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, val, _test = _load_split_data(cfg)
    resume = None
    if args.resume:
        arrays, meta = load_checkpoint(args.resume)
        if meta.get("kind") != "pretrain":
            raise ConfigError(f"{args.resume} is not a pretraining checkpoint")
        if meta["config"] != dump_config(cfg):
            raise ConfigError("resume config differs from the checkpoint's config")
        resume = {
            "best": {k: v for k, v in arrays.items() if not k.startswith(("last.", "opt."))},
            "last": {k[len("last."):]: v for k, v in arrays.items() if k.startswith("last.")},
            "opt": {k[len("opt."):]: v for k, v in arrays.items() if k.startswith("opt.")},
            "epochs_done": int(meta["epochs_done"]),
            "best_epoch": int(meta["best_epoch"]),
            "best_val_loss": float(meta["best_val_loss"]),
        }
    model, result, optimizer = pretrain_run(train, val, cfg, resume=resume)
    arrays = dict(result.best_state)
    for name, value in model.store.state_arrays().items():
        arrays[f"last.{name}"] = value
    for name, value in optimizer.state_dict().items():
        arrays[f"opt.{name}"] = value
    meta = {
        "kind": "pretrain",
        "config": dump_config(cfg),
        "epochs_done": str(cfg.pretrain_epochs if not result.diverged else result.history[-1]["epoch"]),
        "best_epoch": str(result.best_epoch),
        "best_val_loss": repr(result.best_val_loss),
        "steps_done": str(result.steps_done),
    }
    ckpt = out / "pretrain.ckpt"
    save_checkpoint(ckpt, arrays, meta)
    _write_history(out / "pretrain_log.jsonl", result.history)
    status = "diverged; best earlier snapshot kept" if result.diverged else "ok"
    print(f"pretrain {status}: best val loss {result.best_val_loss:.6f} "
          f"(epoch {result.best_epoch}) -> {ckpt}")
    return 0 if not result.diverged else 2


def cmd_finetune(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits = _load_split_data(cfg)
    train_w, val_w, _test_w = split_windows(splits, cfg)
    pretrained = None
    if args.pretrained:
        arrays, meta = load_checkpoint(args.pretrained)
        if meta.get("kind") != "pretrain":
            raise ConfigError(f"{args.pretrained} is not a pretraining checkpoint")
        pretrained = {k: v for k, v in arrays.items() if not k.startswith(("last.", "opt."))}
    model, result = finetune_run(train_w, val_w, pretrained, cfg)
    restore_best(model.store, result)
    ckpt = out / "classifier.ckpt"
    save_checkpoint(ckpt, model.store.state_arrays(),
                    {"kind": "classifier", "config": dump_config(cfg)})
    _write_history(out / "finetune_log.jsonl", result.history)
    print(f"finetune {'diverged' if result.diverged else 'ok'}: "
          f"best val loss {result.best_val_loss:.6f} (epoch {result.best_epoch}) -> {ckpt}")
    return 0 if not result.diverged else 2


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    arrays, meta = load_checkpoint(args.checkpoint)
    if meta.get("kind") != "classifier":
        raise ConfigError(f"{args.checkpoint} is not a classifier checkpoint")
    ckpt_cfg = config_from_dump(meta["config"])
    ckpt_cfg = dataclasses.replace(ckpt_cfg, data_dir=cfg.data_dir)
    model = load_pretrained(arrays, _policy_all(), _classifier_config(ckpt_cfg), seed=ckpt_cfg.seed)
    _train, _val, test = _load_split_data(ckpt_cfg)
    _tw, _vw, test_w = split_windows((_train, _val, test), ckpt_cfg)
    if not test_w:
        raise ConfigError("test split yields no evaluation windows")
    report = evaluate_windows(model, test_w,
                              fingerprint=config_fingerprint(config_items(ckpt_cfg)))
    line = report.to_json()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(line + "\n", encoding="utf-8")
    print(line)
    return 0


def _policy_all():
    from .finetune import InitPolicy
    return InitPolicy.all_true()


def cmd_mask_preview(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    q = cfg.image_size // cfg.patch_size
    mask_cfg = MaskConfig(strategy=cfg.mask_strategy, ratio=cfg.mask_param,
                          r=cfg.mask_param, kernel_variant=cfg.kernel_variant)
    written = []
    for grade in range(5):
        rng = rng_mod.substream(cfg.seed, rng_mod.MASK, "preview", grade)
        visible = make_mask(mask_cfg, q, [grade], rng)
        path = out / f"mask_s{grade}.pbm"
        path.write_bytes(mask_to_pbm(visible[0]))
        written.append(path)
    print("\n".join(str(p) for p in written))
    return 0


def cmd_gradcheck(args) -> int:
    reports, passed = full_suite()
    print(format_report(reports, tol=REL_TOL))
    return 0 if passed else 2


def cmd_config(args) -> int:
    cfg = _resolve_config(args)
    sys.stdout.write(dump_config(cfg))
    return 0


def cmd_experiment(args) -> int:
    cfg = _resolve_config(args)
    if args.grid not in experiment_mod.GRIDS:
        raise ConfigError(f"unknown grid {args.grid!r}; available: "
                          f"{', '.join(sorted(experiment_mod.GRIDS))}")
    manifest = Path(cfg.data_dir) / "manifest.jsonl"
    records = load_manifest(manifest)
    rows = experiment_mod.run_experiment(records, cfg, experiment_mod.GRIDS[args.grid],
                                         cfg.out_dir, keep_checkpoints=args.keep_checkpoints)
    print((Path(cfg.out_dir) / "table.txt").read_text(encoding="utf-8"), end="")
    failed = [r for r in rows if r["status"] != "ok"]
    if failed:
        print(f"{len(failed)} of {len(rows)} cells failed", file=sys.stderr)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="lmae", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="synthesize a longitudinal dataset")
    _add_common(p)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("pretrain", help="masked-autoencoder pretraining")
    _add_common(p)
    p.add_argument("--resume", help="continue from an earlier pretrain checkpoint")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="train the next-visit classifier")
    _add_common(p)
    p.add_argument("--pretrained", help="pretrain checkpoint to transfer from")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="threshold AUCs on the test split")
    _add_common(p)
    p.add_argument("checkpoint", help="classifier checkpoint")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("mask-preview", help="render masks per grade as PBM")
    _add_common(p)
    p.set_defaults(func=cmd_mask_preview)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("config", help="print the resolved configuration")
    _add_common(p)
    p.set_defaults(func=cmd_config)

    p = sub.add_parser("experiment", help="run an ablation grid")
    _add_common(p)
    p.add_argument("--grid", default="strategies",
                   help="grid name: strategies, table2, init_policies")
    p.add_argument("--keep-checkpoints", action="store_true",
                   help="save each cell's classifier checkpoint")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ManifestError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # unexpected runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
