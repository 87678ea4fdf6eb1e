"""Key-value config files for the CLI.

Format: one `key = value` per line; blank lines and `#` comments (full-line
or trailing) are ignored. Unknown keys are rejected so typos fail loudly.
CLI flags override config keys.
"""

from __future__ import annotations

from .data import DatasetConfig


class ConfigError(ValueError):
    """A config file failed to parse or validate."""


def parse_config_text(text: str) -> dict:
    """Raw key -> string-value mapping; values are coerced by the builders."""
    out: dict = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {line_no}: empty key")
        if key in out:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        out[key] = value
    return out


def read_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_config_text(f.read())
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None


def _coerce_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"key {key!r}: expected integer, got {value!r}") from None


def _coerce_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"key {key!r}: expected number, got {value!r}") from None


def _coerce_bool(key: str, value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"key {key!r}: expected boolean, got {value!r}")


def _coerce_mix(key: str, value: str) -> dict:
    # syntax: count:0.4,presence:0.6
    mix = {}
    for part in value.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise ConfigError(f"key {key!r}: expected 'category:fraction' "
                              f"entries, got {part!r}")
        cat, frac = part.split(":", 1)
        mix[cat.strip()] = _coerce_float(key, frac.strip())
    if not mix:
        raise ConfigError(f"key {key!r}: empty category mix")
    return mix


DATASET_KEYS = {
    "n_samples": _coerce_int,
    "grid_size": _coerce_int,
    "t_max": _coerce_int,
    "k_max": _coerce_int,
    "seed": _coerce_int,
    "variant": lambda k, v: v,
    "min_objects": _coerce_int,
    "max_objects": _coerce_int,
    "urban_threshold": _coerce_int,
    "train_fraction": _coerce_float,
    "test_fraction": _coerce_float,
    "test2_fraction": _coerce_float,
    "category_mix": _coerce_mix,
}

TRAIN_KEYS = {
    "epochs": _coerce_int,
    "batch_size": _coerce_int,
    "learning_rate": _coerce_float,
    "lam": _coerce_float,
    "seed": _coerce_int,
    "enable_cross_attention": _coerce_bool,
    "enable_infomax": _coerce_bool,
}

MODEL_WIDTH_KEYS = {
    "d_h": _coerce_int,
    "d_q": _coerce_int,
    "d_ff": _coerce_int,
    "d_p": _coerce_int,
    "d_f": _coerce_int,
    "d_mlp": _coerce_int,
    "d_z": _coerce_int,
}


def _coerce_known(kv: dict, known: dict, context: str) -> dict:
    out = {}
    for key, value in kv.items():
        if key not in known:
            raise ConfigError(f"unknown {context} key {key!r} "
                              f"(known: {', '.join(sorted(known))})")
        out[key] = known[key](key, value)
    return out


def build_dataset_config(kv: dict, overrides: dict | None = None) -> DatasetConfig:
    """DatasetConfig from raw config keys plus CLI overrides (already typed)."""
    fields = _coerce_known(kv, DATASET_KEYS, "dataset config")
    if overrides:
        fields.update(overrides)
    try:
        return DatasetConfig(**fields)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def build_train_setup(kv: dict, overrides: dict | None = None) -> tuple:
    """(train-config fields, model width overrides) from one config file.

    Train keys and model width keys share the file; the caller assembles the
    final TrainConfig/ModelConfig because width defaults depend on the dataset.
    """
    known = {**TRAIN_KEYS, **MODEL_WIDTH_KEYS}
    fields = _coerce_known(kv, known, "train config")
    widths = {k: v for k, v in fields.items() if k in MODEL_WIDTH_KEYS}
    train_fields = {k: v for k, v in fields.items() if k in TRAIN_KEYS}
    if overrides:
        train_fields.update(overrides)
    return train_fields, widths
