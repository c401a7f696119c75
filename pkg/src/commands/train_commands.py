"""``train``, ``eval`` and ``predict``."""

import json
from pathlib import Path
from typing import List, Optional, Tuple

import click
from loguru import logger
from rich.table import Table

from src.commands.base import (
    common_options,
    console,
    handle_errors,
    key_value_table,
    prepare_run,
    progress_enabled,
)
from src.commands.render import difference_map, overlay, write_pgm, write_rgb
from src.config.run_config import NetConfig, RunConfig, write_resolved_config
from src.data.dataset import PhantomDataset, open_dataset
from src.errors import ConfigurationError, UsageError
from src.metrics.report import MetricReport, format_value
from src.network.checkpoint import load_checkpoint
from src.tensor import wtf1
from src.training.trainer import Trainer, cross_validate, evaluate, evaluate_graph, predict_case


def _open_data(config: RunConfig) -> PhantomDataset:
    if config.data is None:
        raise UsageError("no dataset: pass --data or set 'data' in the config file")
    return open_dataset(config.data)


def reconcile_net(config: RunConfig, dataset: PhantomDataset) -> NetConfig:
    """Take class count and input size from the dataset unless set explicitly."""
    derived = {"num_classes": dataset.num_classes, "input_size": dataset.size}
    values = config.net.model_dump()
    for key, value in derived.items():
        if key in config.net.model_fields_set and values[key] != value:
            raise ConfigurationError(f"net.{key}={values[key]} but dataset {dataset.directory} has {key}={value}")
        values[key] = value
    return NetConfig.model_validate(values)


def report_table(report: MetricReport, title: str) -> Table:
    table = Table(title=title)
    table.add_column("class", style="cyan")
    table.add_column("DSC", justify="right")
    table.add_column("HD95 (mm)", justify="right")
    table.add_column("MSD (mm)", justify="right")
    table.add_column("valid", justify="right")
    for row in report.rows:
        table.add_row(
            row.class_name,
            format_value(row.dsc_mean, row.dsc_std),
            format_value(row.hd95_mean, row.hd95_std),
            format_value(row.msd_mean, row.msd_std),
            f"{row.n_valid}/{row.n_valid + row.n_undefined}",
            style="yellow" if row.flagged else None,
        )
    return table


@click.command("train")
@common_options
@click.option("--data", type=click.Path(file_okay=False), default=None, help="Dataset directory written by gen.")
@click.option("--steps", type=click.IntRange(min=1), default=None, help="Total optimizer steps.")
@click.option("--lr", type=click.FloatRange(min=0.0, min_open=True), default=None, help="Initial learning rate.")
@click.option("--batch-size", type=click.IntRange(min=1), default=None)
@click.option("--precision", type=click.Choice(["float32", "float64"]), default=None)
@click.option("--clip-norm", type=click.FloatRange(min=0.0, min_open=True), default=None, help="Gradient max-norm.")
@click.option("--eval-every", type=click.IntRange(min=0), default=None, help="Steps between validation reports.")
@click.option("--no-attention", is_flag=True, default=False, help="Build the attention-free graph.")
@click.option("--freeze-attention", is_flag=True, default=False, help="Keep attention at its initial values.")
@click.option("--folds", type=click.IntRange(min=2), default=None, help="Run k-fold cross-validation instead.")
@click.option("--resume", type=click.Path(file_okay=False), default=None, help="Checkpoint directory to resume from.")
@handle_errors
def train(
    config_path: Optional[str],
    seed: Optional[int],
    out: Optional[str],
    force: bool,
    data: Optional[str],
    steps: Optional[int],
    lr: Optional[float],
    batch_size: Optional[int],
    precision: Optional[str],
    clip_norm: Optional[float],
    eval_every: Optional[int],
    no_attention: bool,
    freeze_attention: bool,
    folds: Optional[int],
    resume: Optional[str],
):
    """Train a WAU-net on a phantom dataset."""
    config = prepare_run(
        "train",
        config_path,
        seed,
        out,
        force,
        overrides={
            "data": data,
            "net": {"precision": precision, "use_attention": False if no_attention else None},
            "train": {
                "seed": seed,
                "total_steps": steps,
                "lr0": lr,
                "batch_size": batch_size,
                "clip_norm": clip_norm,
                "eval_every": eval_every,
                "freeze_attention": True if freeze_attention else None,
                "folds": folds,
                "cross_validation": True if folds else None,
                "resume_from": resume,
            },
        },
    )
    dataset = _open_data(config)
    net = reconcile_net(config, dataset)
    train_config = config.train
    if "seed" not in train_config.model_fields_set:
        train_config = train_config.model_copy(update={"seed": config.seed})
    config = config.model_copy(update={"net": net, "train": train_config})
    write_resolved_config(config, config.out)
    out_dir = Path(config.out)

    if config.train.cross_validation:
        result = cross_validate(net, dataset, config.train, k=config.train.folds, out_dir=out_dir, progress=progress_enabled())
        (out_dir / "cv_report.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n")
        result.pooled.to_csv(out_dir / "cv_metrics.csv")
        console.print(report_table(result.pooled, f"{config.train.folds}-fold cross-validation (pooled)"))
        return

    trainer = Trainer(net, dataset, config.train, out_dir, progress=progress_enabled())
    result = trainer.run(resume_from=config.train.resume_from)
    (out_dir / "train_result.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n")

    report, _, _ = evaluate_graph(trainer.graph, dataset, trainer.case_ids)
    summary = {
        "status": result.status.value,
        "steps": result.steps,
        "final loss": f"{result.final_loss:.4f}" if result.final_loss is not None else "n/a",
        "training-set mean DSC": f"{report.mean_foreground_dsc():.4f}",
        "duration": f"{result.duration:.1f}s",
        "checkpoint": result.checkpoint_dir,
    }
    console.print(key_value_table("Training", summary))


def _checkpoint_option(func):
    return click.option(
        "--checkpoint",
        type=click.Path(file_okay=False),
        default=None,
        help="Checkpoint directory written by train.",
    )(func)


def _eval_overrides(data, checkpoint, split, **extra):
    return {"data": data, "eval": {"checkpoint": checkpoint, "split": split, **extra}}


def _checkpoint_path(config: RunConfig) -> str:
    if config.eval.checkpoint is None:
        raise UsageError("no checkpoint: pass --checkpoint or set eval.checkpoint")
    return config.eval.checkpoint


@click.command("eval")
@common_options
@click.option("--data", type=click.Path(file_okay=False), default=None)
@_checkpoint_option
@click.option("--split", type=click.Choice(["train", "val", "test", "all"]), default=None)
@handle_errors
def eval_command(
    config_path: Optional[str],
    seed: Optional[int],
    out: Optional[str],
    force: bool,
    data: Optional[str],
    checkpoint: Optional[str],
    split: Optional[str],
):
    """Write the per-class DSC/HD95/MSD report of a checkpoint on one split."""
    config = prepare_run("eval", config_path, seed, out, force, overrides=_eval_overrides(data, checkpoint, split))
    dataset = _open_data(config)
    report = evaluate(_checkpoint_path(config), dataset, config.eval.split)
    out_dir = Path(config.out)
    report.to_csv(out_dir / "metrics.csv")
    report.to_json(out_dir / "metrics.json")
    console.print(report_table(report, f"{config.eval.split} split, {report.n_cases} cases"))
    console.print(f"mean foreground DSC: {report.mean_foreground_dsc():.4f}")


def _case_ids(config: RunConfig, dataset: PhantomDataset) -> List[int]:
    if config.eval.cases:
        missing = sorted(set(config.eval.cases) - set(dataset.case_ids))
        if missing:
            raise UsageError(f"cases {missing} not in dataset {dataset.directory}")
        return list(config.eval.cases)
    return dataset.split(config.eval.split)


def predict_files(case_id: int, fmt: str) -> Tuple[str, str, str, str]:
    stem = f"case_{case_id:04d}"
    return f"{stem}_pred.wtf1", f"{stem}_input.pgm", f"{stem}_overlay.{fmt}", f"{stem}_diff.{fmt}"


@click.command("predict")
@common_options
@click.option("--data", type=click.Path(file_okay=False), default=None)
@_checkpoint_option
@click.option("--split", type=click.Choice(["train", "val", "test", "all"]), default=None)
@click.option("--case", "cases", type=click.IntRange(min=0), multiple=True, help="Case id; repeatable.")
@click.option("--format", "overlay_format", type=click.Choice(["png", "ppm"]), default=None)
@handle_errors
def predict(
    config_path: Optional[str],
    seed: Optional[int],
    out: Optional[str],
    force: bool,
    data: Optional[str],
    checkpoint: Optional[str],
    split: Optional[str],
    cases: Tuple[int, ...],
    overlay_format: Optional[str],
):
    """Write predicted label maps plus input, overlay and difference images."""
    config = prepare_run(
        "predict",
        config_path,
        seed,
        out,
        force,
        overrides=_eval_overrides(
            data, checkpoint, split, cases=list(cases) or None, overlay_format=overlay_format
        ),
    )
    dataset = _open_data(config)
    graph = load_checkpoint(_checkpoint_path(config)).graph
    out_dir = Path(config.out)
    fmt = config.eval.overlay_format

    table = Table(title=f"Predictions ({fmt})")
    table.add_column("case", justify="right")
    table.add_column("pixel agreement", justify="right")
    table.add_column("files")
    for case_id in _case_ids(config, dataset):
        image, truth = dataset.load_case(case_id)
        _, pred = predict_case(graph, image, truth.spacing)
        pred_file, input_file, overlay_file, diff_file = predict_files(case_id, fmt)
        wtf1.save(out_dir / pred_file, pred.classes.astype("uint8"))
        write_pgm(out_dir / input_file, image.numpy())
        write_rgb(out_dir / overlay_file, overlay(image.numpy(), truth, pred))
        write_rgb(out_dir / diff_file, difference_map(truth, pred))
        agreement = float((truth.classes == pred.classes).mean())
        logger.debug(f"case {case_id}: pixel agreement {agreement:.4f}")
        table.add_row(str(case_id), f"{agreement:.4f}", f"{pred_file}, {overlay_file}, {diff_file}")
    console.print(table)
