from __future__ import annotations

import functools
import json
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import click

from framework.errors import ConfigurationError, SelfTrainError
from models.example import DatasetSpec
from utils.config_file import load_config
from utils.log_setup import configure_logging

port = int(os.environ.get("FASTAPIPORT", 8000))

# -----------------------------------------------------------------------------
# Flag -> config key table. Every flag has exactly one config-file equivalent.
# -----------------------------------------------------------------------------
FLAG_KEYS = {
    "source": "data.source",
    "data_path": "data.path",
    "test_path": "data.test_path",
    "label_names": "data.label_names",
    "feature_dim": "data.feature_dim",
    "n_labeled": "data.n_labeled",
    "classes": "data.classes",
    "sep": "data.sep",
    "variant": "model.variant",
    "paradigm": "model.paradigm",
    "hidden_dim": "model.hidden_dim",
    "bottleneck_dim": "model.bottleneck_dim",
    "alpha": "uncertainty.alpha",
    "mc_samples": "uncertainty.mc_samples",
    "loss": "loss.kind",
    "tau": "loss.tau",
    "lam": "loss.lam",
    "iterations": "selftrain.iterations",
    "selection": "selftrain.selection",
    "select_fraction": "selftrain.select_fraction",
    "subset_size": "selftrain.subset_size",
    "pseudo_label_noise": "selftrain.pseudo_label_noise",
    "workers": "selftrain.workers",
    "seeds": "run.seeds",
    "output_dir": "run.output_dir",
}


def _csv_list(value: Optional[str], cast=str) -> Optional[List[Any]]:
    if value is None:
        return None
    try:
        return [cast(v.strip()) for v in value.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse list {value!r}: {exc}") from exc


def collect_overrides(options: Dict[str, Any]) -> Dict[str, Any]:
    """Translate CLI options into dotted config overrides; unset flags leave the file value alone."""
    values = dict(options)
    values["seeds"] = _csv_list(values.get("seeds"), int)
    values["label_names"] = _csv_list(values.get("label_names"))
    overrides = {key: values.get(name) for name, key in FLAG_KEYS.items()}
    # ablation switches
    if values.get("no_selection"):
        overrides["selftrain.selection"] = "all"
    if values.get("no_certainty"):
        overrides["uncertainty.alpha"] = 1.0
    if values.get("no_confidence"):
        overrides["uncertainty.alpha"] = 0.0
    if values.get("no_contrastive"):
        overrides["loss.lam"] = 0.0
    if values.get("no_early_stop"):
        overrides["selftrain.early_stop"] = False
    if values.get("no_checkpoint"):
        overrides["run.save_checkpoint"] = False
    if values.get("no_certainty") and values.get("no_confidence"):
        raise ConfigurationError("--no-certainty and --no-confidence are mutually exclusive")
    return overrides


def _emit_error(payload: Dict[str, Any], exit_code: int) -> None:
    click.echo(json.dumps(payload, default=str), err=True)
    sys.exit(exit_code)


def reports_errors(fn):
    """SelfTrainError -> JSON on stderr, exit 2; anything else -> JSON on stderr, exit 1."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SelfTrainError as exc:
            _emit_error(exc.to_dict(), 2)
        except click.exceptions.Exit:
            raise
        except Exception as exc:  # noqa: BLE001
            _emit_error({"error": "internal_error", "message": str(exc), "type": type(exc).__name__}, 1)

    return wrapper


def experiment_options(fn):
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="TOML config file."),
        click.option("--source", type=click.Choice(["synthetic", "jsonl", "csv"]), help="data.source"),
        click.option("--data-path", help="data.path"),
        click.option("--test-path", help="data.test_path"),
        click.option("--label-names", help="data.label_names, comma separated."),
        click.option("--feature-dim", type=int, help="data.feature_dim"),
        click.option("--n-labeled", type=int, help="data.n_labeled (per class)."),
        click.option("--classes", type=int, help="data.classes (synthetic)."),
        click.option("--sep", type=float, help="data.sep (synthetic)."),
        click.option("--variant", type=click.Choice(["full", "adapter", "prefix", "ptuning"]), help="model.variant"),
        click.option("--paradigm", type=click.Choice(["head", "prompt"]), help="model.paradigm"),
        click.option("--hidden-dim", type=int, help="model.hidden_dim"),
        click.option("--bottleneck-dim", type=int, help="model.bottleneck_dim"),
        click.option("--alpha", type=float, help="uncertainty.alpha"),
        click.option("--mc-samples", type=int, help="uncertainty.mc_samples"),
        click.option("--loss", type=click.Choice(["ce", "phce"]), help="loss.kind"),
        click.option("--tau", type=float, help="loss.tau"),
        click.option("--lam", type=float, help="loss.lam"),
        click.option("--iterations", type=int, help="selftrain.iterations"),
        click.option("--selection", type=click.Choice(["uncertainty", "random", "all"]), help="selftrain.selection"),
        click.option("--select-fraction", type=float, help="selftrain.select_fraction"),
        click.option("--subset-size", type=int, help="selftrain.subset_size"),
        click.option("--pseudo-label-noise", type=float, help="selftrain.pseudo_label_noise"),
        click.option("--workers", type=int, help="selftrain.workers (scoring pass only)."),
        click.option("--seeds", help="run.seeds, comma separated."),
        click.option("--output-dir", help="run.output_dir"),
        click.option("--no-selection", is_flag=True, help="Train on every pseudo-labeled example."),
        click.option("--no-certainty", is_flag=True, help="alpha = 1."),
        click.option("--no-confidence", is_flag=True, help="alpha = 0."),
        click.option("--no-contrastive", is_flag=True, help="lam = 0."),
        click.option("--no-early-stop", is_flag=True, help="selftrain.early_stop = false"),
        click.option("--no-checkpoint", is_flag=True, help="run.save_checkpoint = false"),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _parse_grid(entries: tuple[str, ...]) -> Dict[str, List[Any]]:
    grid: Dict[str, List[Any]] = {}
    for entry in entries:
        key, sep, raw = entry.partition("=")
        if not sep or not raw:
            raise ConfigurationError(f"grid entries look like key=v1,v2; got {entry!r}")
        values = []
        for item in raw.split(","):
            try:
                values.append(json.loads(item))
            except json.JSONDecodeError:
                values.append(item)
        grid[key.strip()] = values
    return grid


# -----------------------------------------------------------------------------
# Commands
# -----------------------------------------------------------------------------
@click.group()
@click.option("--log-level", default=None, help="Overrides SELFTRAIN_LOG_LEVEL.")
def cli(log_level: Optional[str]) -> None:
    """Uncertainty-aware parameter-efficient self-training."""
    configure_logging(log_level.upper() if log_level else None)


@cli.command()
@experiment_options
@reports_errors
def train(config_path: Optional[str], **options: Any) -> None:
    """Run self-training for every seed and write metrics, checkpoints and summary.csv."""
    from services.experiment import run_experiment

    config = load_config(config_path, collect_overrides(options))
    result = run_experiment(config)
    click.echo(result.summary.to_csv(index=False), nl=False)


@cli.command()
@experiment_options
@click.option("--grid", "grid_entries", multiple=True, required=True, help="key=v1,v2 (repeatable), e.g. uncertainty.alpha=0,0.5,1")
@reports_errors
def sweep(config_path: Optional[str], grid_entries: tuple[str, ...], **options: Any) -> None:
    """Run one experiment per point of the Cartesian grid and write sweep.csv."""
    from services.experiment import sweep as run_sweep

    config = load_config(config_path, collect_overrides(options))
    frame = run_sweep(config, _parse_grid(grid_entries))
    click.echo(frame.to_csv(index=False), nl=False)


@cli.command(name="eval")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(dir_okay=False))
@click.option("--data", "data_path", required=True, type=click.Path(dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), default="jsonl", show_default=True)
@reports_errors
def evaluate(checkpoint_path: str, data_path: str, fmt: str) -> None:
    """Print accuracy and macro-F1 of a checkpoint on a labeled file as JSON."""
    from services import checkpoint, data, selftrain

    params, label_names = checkpoint.load(checkpoint_path)
    names = label_names or [f"c{c}" for c in range(params.dims.classes)]
    spec = DatasetSpec(classes=params.dims.classes, label_names=names, feature_dim=params.dims.features, source=fmt)
    metrics = selftrain.evaluate(params, data.load(data_path, fmt, spec))
    click.echo(metrics.model_dump_json())


@cli.command(name="synth-gen")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--classes", type=int, default=4, show_default=True)
@click.option("--per-class-n", type=int, default=650, show_default=True)
@click.option("--gen-dim", type=int, default=16, show_default=True)
@click.option("--sep", type=float, default=3.0, show_default=True)
@click.option("--noise-rate", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@reports_errors
def synth_gen(out_dir: str, classes: int, per_class_n: int, gen_dim: int, sep: float, noise_rate: float, seed: int) -> None:
    """Write train.jsonl, test.jsonl and dataset.json for a synthetic Gaussian task."""
    from services import data

    synthetic = data.synth(classes, per_class_n, gen_dim, sep, noise_rate, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data.write_jsonl(synthetic.noisy_pool, out / "train.jsonl", synthetic.spec)
    data.write_jsonl(synthetic.test, out / "test.jsonl", synthetic.spec)
    (out / "dataset.json").write_text(synthetic.spec.model_dump_json(indent=2), encoding="utf-8")
    click.echo(json.dumps({"train": len(synthetic.pool), "test": len(synthetic.test), "out": str(out)}))


@cli.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(dir_okay=False))
@click.option("--host", default="0.0.0.0", show_default=True)
@click.option("--port", "serve_port", type=int, default=port, show_default=True, help="Defaults to FASTAPIPORT.")
@reports_errors
def serve(checkpoint_path: str, host: str, serve_port: int) -> None:
    """Serve a checkpoint over HTTP."""
    import uvicorn

    from resources.api import create_app

    uvicorn.run(create_app(checkpoint_path), host=host, port=serve_port)


# -----------------------------------------------------------------------------
# Entrypoint for `python main.py`
# -----------------------------------------------------------------------------
if __name__ == "__main__":
    cli()
