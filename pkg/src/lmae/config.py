"""Run configuration: one flat namespace of typed keys.

Sources are merged in a fixed order: dataclass defaults, then a named
preset, then a config file, then environment path overrides (LMAE_DATA_DIR,
LMAE_OUT_DIR), then command-line overrides. Unknown keys are rejected
everywhere. The file format is plain `key = value` lines; `#` starts a
comment.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    data_dir: str = "data"
    out_dir: str = "runs/default"
    n_patients: int = 200
    image_size: int = 32
    patch_size: int = 8
    t_ctx: int = 3
    horizon_years: float = 3.0
    noise: bool = True
    split_seed: int = 0
    # masking
    mask_strategy: str = "prog_aware"
    mask_param: float = 0.75
    kernel_variant: str = "isotropic"
    # model
    temporal_variant: str = "time_aware"
    d_enc: int = 64
    enc_depth: int = 4
    enc_heads: int = 4
    d_dec: int = 32
    dec_depth: int = 2
    dec_heads: int = 4
    # pretraining
    pretrain_lr: float = 5e-3
    pretrain_weight_decay: float = 1e-5
    pretrain_epochs: int = 10
    onecycle: bool = True
    # fine-tuning
    finetune_lr: float = 1e-3
    finetune_weight_decay: float = 3e-3
    finetune_epochs: int = 80
    augment: bool = True
    # init policy
    init_embedding: bool = True
    init_temporal: bool = True
    init_encoder: bool = True
    # shared
    batch_size: int = 8
    seed: int = 0


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}

# path-valued keys that honor environment overrides
_ENV_PATHS = {"LMAE_DATA_DIR": "data_dir", "LMAE_OUT_DIR": "out_dir"}

PRESETS: dict[str, dict] = {
    # tiny end-to-end sanity run, well under two minutes
    "smoke": {
        "n_patients": 12,
        "d_enc": 32,
        "enc_depth": 2,
        "enc_heads": 2,
        "d_dec": 16,
        "dec_depth": 1,
        "dec_heads": 2,
        "pretrain_epochs": 2,
        "finetune_epochs": 2,
    },
    # memorize a handful of sequences; the loss should collapse
    "overfit": {
        "n_patients": 2,
        "pretrain_epochs": 400,
        "pretrain_lr": 2e-3,
        "pretrain_weight_decay": 0.0,
        "batch_size": 4,
    },
    # the desk-scale trend configuration
    "desk": {},
    # the source protocol's scale; far beyond desk hardware, config only
    "full": {
        "image_size": 224,
        "patch_size": 16,
        "d_enc": 768,
        "enc_depth": 12,
        "enc_heads": 12,
        "d_dec": 384,
        "dec_depth": 6,
        "dec_heads": 12,
        "pretrain_epochs": 400,
        "finetune_epochs": 200,
        "n_patients": 7244,
    },
}


def _coerce(key: str, raw: str):
    field = _FIELDS[key]
    text = raw.strip()
    if field.type in ("bool", bool):
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"key {key!r}: cannot parse {text!r} as a boolean")
    try:
        if field.type in ("int", int):
            return int(text)
        if field.type in ("float", float):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: cannot parse {text!r} as {field.type}") from exc
    return text


def _apply(cfg: RunConfig, updates: dict, source: str):
    for key, value in updates.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r} (from {source}); "
                              f"known keys: {', '.join(sorted(_FIELDS))}")
        if isinstance(value, str):
            value = _coerce(key, value)
        setattr(cfg, key, value)


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out


def parse_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), origin=str(path))


def config_from_dump(text: str) -> RunConfig:
    """Rebuild a RunConfig from dump_config output (checkpoint metadata)."""
    cfg = RunConfig()
    _apply(cfg, parse_config_text(text, origin="<checkpoint config>"), "checkpoint")
    validate_config(cfg)
    return cfg


def load_config(path: str | Path | None = None,
                preset: str | None = None,
                overrides: dict[str, str] | None = None,
                env: dict[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {', '.join(sorted(PRESETS))}")
        _apply(cfg, PRESETS[preset], f"preset {preset!r}")
    if path is not None:
        _apply(cfg, parse_config_file(path), str(path))
    env = os.environ if env is None else env
    for var, key in _ENV_PATHS.items():
        if var in env:
            setattr(cfg, key, env[var])
    if overrides:
        _apply(cfg, overrides, "command line")
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig):
    if cfg.image_size % cfg.patch_size != 0:
        raise ConfigError(f"image_size {cfg.image_size} not divisible by patch_size {cfg.patch_size}")
    if cfg.mask_strategy not in ("random", "visit", "prog_aware", "prog_aware_random"):
        raise ConfigError(f"unknown mask_strategy {cfg.mask_strategy!r}")
    if cfg.temporal_variant not in ("empty", "base", "time_aware"):
        raise ConfigError(f"unknown temporal_variant {cfg.temporal_variant!r}")
    if cfg.kernel_variant not in ("isotropic", "as_printed"):
        raise ConfigError(f"unknown kernel_variant {cfg.kernel_variant!r}")
    if not 0.0 <= cfg.mask_param <= 1.0:
        raise ConfigError(f"mask_param must be in [0, 1], got {cfg.mask_param}")
    if cfg.t_ctx < 1:
        raise ConfigError(f"t_ctx must be at least 1, got {cfg.t_ctx}")
    if cfg.batch_size < 1:
        raise ConfigError(f"batch_size must be at least 1, got {cfg.batch_size}")


def dump_config(cfg: RunConfig) -> str:
    """Every key with its resolved value, one per line, in declaration order."""
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def config_items(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
