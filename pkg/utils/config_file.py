"""TOML config files plus dotted-key overrides, resolved into an ExperimentConfig.

    [data]          source, path, test_path, label_names, feature_dim, n_labeled, ...
    [model]         variant, paradigm, hidden_dim, bottleneck_dim, prefix_length, ...
    [uncertainty]   alpha, mc_samples, dropout_rate
    [loss]          kind, tau, lam, n_negatives, g_temperature, contrastive_form
    [selftrain]     iterations, selection, select_fraction, subset_size, lr, ...
    [run]           seeds, output_dir, save_checkpoint
"""
from __future__ import annotations

import copy

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from pydantic import ValidationError

from framework.errors import ConfigurationError
from models.config import ExperimentConfig

SECTIONS = ("data", "model", "uncertainty", "loss", "selftrain", "run")


def read_toml(path: str | Path) -> Dict[str, Any]:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}", path=str(path)) from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid TOML: {exc}", path=str(path)) from exc


def apply_overrides(document: Mapping[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Set `section.key` values on a copy of `document`; None values are skipped."""
    merged = copy.deepcopy(dict(document))
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        if section not in SECTIONS or not key:
            raise ConfigurationError(f"unknown config key {dotted!r}")
        merged.setdefault(section, {})[key] = value
    return merged


def resolve(document: Mapping[str, Any]) -> ExperimentConfig:
    unknown = sorted(set(document) - set(SECTIONS))
    if unknown:
        raise ConfigurationError(f"unknown config sections {unknown}", sections=unknown)
    try:
        return ExperimentConfig.model_validate(document)
    except ValidationError as exc:
        errors = [
            {"loc": ".".join(str(p) for p in e["loc"]), "msg": e["msg"]} for e in exc.errors(include_url=False)
        ]
        raise ConfigurationError("invalid configuration", errors=errors) from exc


def load_config(path: Optional[str | Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    document = read_toml(path) if path else {}
    return resolve(apply_overrides(document, overrides or {}))


def with_overrides(config: ExperimentConfig, overrides: Mapping[str, Any]) -> ExperimentConfig:
    return resolve(apply_overrides(config.model_dump(), overrides))
