"""Flat ``key = value`` experiment configuration files.

Lines hold one dotted key each (``train.keep_ratio = 0.5``); ``#`` starts a
comment.  Keys may be abbreviated to their last segment when unambiguous
(``keep_ratio`` resolves to ``train.keep_ratio``).  The same grammar drives
``--set key=value`` command-line overrides.
"""

from __future__ import annotations

from dataclasses import fields

from .errors import ConfigError
from .experiment import DataConfig, ExperimentConfig
from .network import ModelConfig
from .training import TrainConfig


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_tuple(text: str) -> tuple:
    return tuple(int(v.strip()) for v in text.split(",") if v.strip())


_CASTERS = {
    "dataset.kind": str,
    "dataset.classes": int,
    "dataset.train_per_class": int,
    "dataset.test_per_class": int,
    "dataset.image_size": int,
    "dataset.noise": float,
    "dataset.seed": int,
    "dataset.train_images": str,
    "dataset.train_labels": str,
    "dataset.test_images": str,
    "dataset.test_labels": str,
    "model.stage_channels": _parse_int_tuple,
    "model.blocks_per_stage": _parse_int_tuple,
    "model.input_shape": _parse_int_tuple,
    "model.feature_dim": int,
    "model.s": int,
    "train.initial_epochs": int,
    "train.incremental_epochs": int,
    "train.prune_at_epoch": int,
    "train.keep_ratio": float,
    "train.lr_initial": float,
    "train.lr_incremental": float,
    "train.lr_decay_every": int,
    "train.lr_decay": float,
    "train.batch_size": int,
    "train.distill_weight": float,
    "train.proto_weight": float,
    "train.augment": str,
    "train.score_window": int,
    "train.seed": int,
    "experiment.phases": int,
    "experiment.initial_classes": int,
    "experiment.seed": int,
    "experiment.out_dir": str,
    "experiment.timing": str,
}

_SECTION_FIELD = {"dataset": "data", "model": "model", "train": "train"}


def valid_keys() -> list[str]:
    return sorted(_CASTERS)


def resolve_key(key: str) -> str:
    """Resolve a possibly-abbreviated key to its canonical dotted form."""
    key = key.strip()
    if key in _CASTERS:
        return key
    matches = [full for full in _CASTERS if full.split(".", 1)[1] == key]
    if len(matches) == 1:
        return matches[0]
    if len(matches) > 1:
        raise ConfigError(f"ambiguous key {key!r}: could be {' or '.join(sorted(matches))}")
    raise ConfigError(f"unknown key {key!r}; valid keys: {', '.join(valid_keys())}")


def apply_setting(cfg: ExperimentConfig, key: str, raw_value: str):
    full = resolve_key(key)
    caster = _CASTERS[full]
    try:
        value = caster(raw_value.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {full}: {raw_value!r} ({exc})") from exc
    section, name = full.split(".", 1)
    if section == "experiment":
        setattr(cfg, name, value)
    elif section == "model":
        # ModelConfig is frozen; rebuild it with the updated field
        current = {f.name: getattr(cfg.model, f.name) for f in fields(ModelConfig)}
        current[name] = value
        cfg.model = ModelConfig(**current)
    else:
        setattr(getattr(cfg, _SECTION_FIELD[section]), name, value)


def parse_config_text(text: str, cfg: ExperimentConfig | None = None,
                      source: str = "<config>") -> ExperimentConfig:
    cfg = cfg or default_experiment_config()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        apply_setting(cfg, key, value)
    return cfg


def load_config_file(path, cfg: ExperimentConfig | None = None) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        from .errors import DataError

        raise DataError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, cfg, source=str(path))


def default_experiment_config() -> ExperimentConfig:
    """Desk-scale defaults: minutes on one CPU core, no files required."""
    return ExperimentConfig(
        data=DataConfig(kind="synthetic", classes=10, train_per_class=60,
                        test_per_class=50, image_size=16, noise=0.08, seed=7),
        model=ModelConfig(stage_channels=(16, 32, 64), blocks_per_stage=(2, 2, 2),
                          input_shape=(3, 16, 16), feature_dim=64, s=2),
        train=TrainConfig(initial_epochs=20, incremental_epochs=10, prune_at_epoch=4,
                          keep_ratio=0.5, lr_initial=0.01, lr_incremental=0.002,
                          lr_decay_every=45, batch_size=16, distill_weight=2.0,
                          proto_weight=2.0, augment="single", seed=0),
        phases=5, initial_classes=0, seed=42, out_dir="", timing="wall")
