"""Command-line interface: curate, split, pairs, eval, report, analyze-loss, run."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import yaml

from . import __version__
from .corpus import (
    CuratedDataset,
    build_pools,
    builtin_recipes,
    compose_dataset,
    load_metadata,
    load_records,
    split_tvt,
    write_records,
    write_splits,
)
from .errors import AbsbenchError
from .harness import (
    RunConfig,
    load_config,
    materialize_dataset,
    recipe_from_mapping,
    run_eval,
)
from .metrics import detect_loss_steps, load_loss_curve
from .protocol import make_prompt_pair, write_prompt_pairs
from .report import FORMATS, emit_report, load_report, plot_loss_curve


@click.group()
@click.version_option(version=__version__)
def main():
    """Curate abstract corpora and benchmark completion models on them."""


def _fail(exc: AbsbenchError) -> "click.ClickException":
    return click.ClickException(str(exc))


def _resolve_recipe(recipe: str, recipe_file: str | None, pools, seed: int):
    if recipe_file:
        with open(recipe_file, "r", encoding="utf-8") as handle:
            return recipe_from_mapping(yaml.safe_load(handle), seed)
    available = builtin_recipes({cat: len(p) for cat, p in pools.items()}, seed)
    if recipe not in available:
        raise click.ClickException(
            f"recipe {recipe!r} not materializable from pools {sorted(pools)} "
            f"(available here: {sorted(available)})"
        )
    return available[recipe]


@main.command()
@click.option("--metadata", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--recipe", default="s1", show_default=True, help="Built-in recipe name.")
@click.option("--recipe-file", type=click.Path(exists=True, dir_okay=False),
              help="YAML/JSON recipe definition (overrides --recipe).")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--substring-withdrawn", is_flag=True,
              help="Match 'withdrawn' as a substring instead of a whole word.")
def curate(metadata, recipe, recipe_file, seed, out, substring_withdrawn):
    """Clean raw metadata and materialize one dataset recipe."""
    try:
        pools, rejected = build_pools(
            load_metadata(metadata), whole_word=not substring_withdrawn
        )
        resolved = _resolve_recipe(recipe, recipe_file, pools, seed)
        dataset = compose_dataset(resolved, pools)
    except AbsbenchError as exc:
        raise _fail(exc)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_records(out_dir / "dataset.jsonl", dataset.records)
    summary = {
        "name": dataset.name,
        "records": len(dataset.records),
        "shuffle_seed": dataset.shuffle_seed,
        "pools": {cat: len(p) for cat, p in sorted(pools.items())},
        "rejected": {
            reason: sum(1 for r in rejected if r.reason == reason)
            for reason in ("withdrawn", "empty")
        },
    }
    with open(out_dir / "curation_summary.json", "w", encoding="utf-8") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
        handle.write("\n")
    click.echo(f"{dataset.name}: {len(dataset.records)} records -> {out_dir / 'dataset.jsonl'}")


@main.command()
@click.option("--records", "records_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--name", default=None, help="Dataset name for the manifest.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(file_okay=False))
def split(records_path, name, seed, out):
    """Assign a materialized dataset to train/validation/test files."""
    try:
        records = load_records(records_path)
        dataset = CuratedDataset(
            name=name or Path(records_path).stem, records=records
        )
        manifest = write_splits(split_tvt(dataset, seed), out)
    except AbsbenchError as exc:
        raise _fail(exc)
    click.echo(
        f"{manifest['name']}: " + ", ".join(
            f"{k}={v}" for k, v in manifest["counts"].items()
        ) + f" -> {out}"
    )


@main.command()
@click.option("--records", "records_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--strict-uppercase", is_flag=True,
              help="Require an uppercase letter after a sentence boundary.")
def pairs(records_path, out, strict_uppercase):
    """Dump prompt / ground-truth pairs for a record file."""
    try:
        records = load_records(records_path)
        built = [
            make_prompt_pair(r, require_uppercase=strict_uppercase) for r in records
        ]
        write_prompt_pairs(out, built)
    except AbsbenchError as exc:
        raise _fail(exc)
    click.echo(f"{len(built)} prompt pairs -> {out}")


def _apply_overrides(config: RunConfig, seed, backend, metrics, out, resamples,
                     concurrency) -> RunConfig:
    if seed is not None:
        config.dataset.split_seed = seed
    for entry in backend:
        name, _, url = entry.partition("=")
        if not url:
            raise click.ClickException(f"--backend expects name=url, got {entry!r}")
        for spec in config.backends:
            if spec.name == name:
                spec.url = url
                spec.logprob_dump = None
                break
        else:
            from .harness import BackendSpec

            config.backends.append(BackendSpec(name=name, model=name, url=url))
    if metrics:
        wanted = {m.strip() for m in metrics.split(",") if m.strip()}
        unknown = wanted - {"perplexity", "entropy", "similarity"}
        if unknown:
            raise click.ClickException(f"unknown metrics: {sorted(unknown)}")
        config.metrics.entropy = "entropy" in wanted
        config.metrics.similarity = "similarity" in wanted
    if out is not None:
        config.output_dir = out
    if resamples is not None:
        config.metrics.resamples = resamples
    if concurrency is not None:
        config.concurrency = concurrency
    config.validate()
    return config


_eval_options = [
    click.option("--config", "config_path", required=True,
                 type=click.Path(exists=True, dir_okay=False)),
    click.option("--seed", default=None, type=int, help="Override the split seed."),
    click.option("--backend", multiple=True, metavar="NAME=URL",
                 help="Override or add a backend endpoint."),
    click.option("--metrics", default=None,
                 help="Comma-separated metric list (perplexity,entropy,similarity)."),
    click.option("--out", default=None, type=click.Path(file_okay=False)),
    click.option("--resamples", default=None, type=int),
    click.option("--concurrency", default=None, type=int),
]


def _with_eval_options(fn):
    for option in reversed(_eval_options):
        fn = option(fn)
    return fn


@main.command("eval")
@_with_eval_options
def eval_cmd(config_path, seed, backend, metrics, out, resamples, concurrency):
    """Run the evaluation described by a config and emit its report."""
    try:
        config = load_config(config_path)
        config = _apply_overrides(config, seed, backend, metrics, out, resamples,
                                  concurrency)
        report = run_eval(config)
        written = emit_report(report, config.output_dir)
    except AbsbenchError as exc:
        raise _fail(exc)
    for path in written:
        click.echo(f"wrote {path}")


@main.command()
@click.option("--report", "report_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="A structured report.json produced by eval/run.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--formats", default=",".join(FORMATS), show_default=True)
def report(report_path, out, formats):
    """Re-emit report files from a structured report dump."""
    try:
        loaded = load_report(report_path)
        written = emit_report(loaded, out, formats=[
            f.strip() for f in formats.split(",") if f.strip()
        ])
    except AbsbenchError as exc:
        raise _fail(exc)
    for path in written:
        click.echo(f"wrote {path}")


@main.command("analyze-loss")
@click.option("--log", "log_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--boundaries", default=None,
              help="Comma-separated epoch boundary steps (else taken from "
                   "'epoch' fields in the log).")
@click.option("--plateau-tolerance", required=True, type=float)
@click.option("--min-drop", required=True, type=float)
@click.option("--out", default=None, type=click.Path(file_okay=False),
              help="Also write loss_steps.csv and loss_curve.png here.")
def analyze_loss(log_path, boundaries, plateau_tolerance, min_drop, out):
    """Detect step-wise plateau drops in a training-loss log."""
    try:
        parsed = (
            [int(b) for b in boundaries.split(",")] if boundaries else None
        )
        curve = load_loss_curve(log_path, parsed)
        detections = detect_loss_steps(curve, plateau_tolerance, min_drop)
    except AbsbenchError as exc:
        raise _fail(exc)
    if not detections:
        click.echo("no step drops detected")
    for boundary, drop in detections:
        click.echo(f"step {boundary}: drop {drop:.6g}")
    if out:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "loss_steps.csv", "w", encoding="utf-8", newline="") as f:
            f.write("boundary_step,drop\n")
            for boundary, drop in detections:
                f.write(f"{boundary},{drop!r}\n")
        plot_loss_curve(curve.points, detections, out_dir / "loss_curve.png")
        click.echo(f"wrote {out_dir / 'loss_steps.csv'} and {out_dir / 'loss_curve.png'}")


@main.command()
@_with_eval_options
def run(config_path, seed, backend, metrics, out, resamples, concurrency):
    """Chain curate -> split -> pairs -> eval -> report from one config."""
    try:
        config = load_config(config_path)
        config = _apply_overrides(config, seed, backend, metrics, out, resamples,
                                  concurrency)
        out_dir = Path(config.output_dir)
        if config.dataset.metadata and config.dataset.recipe:
            dataset = split_tvt(materialize_dataset(config), config.dataset.split_seed)
            manifest = write_splits(dataset, out_dir / "dataset")
            click.echo(
                f"dataset {manifest['name']}: " + ", ".join(
                    f"{k}={v}" for k, v in manifest["counts"].items()
                )
            )
            config.dataset.splits_dir = str(out_dir / "dataset")
        test_records = load_records(Path(config.dataset.splits_dir) / "test.jsonl")
        if config.dataset.limit is not None:
            test_records = test_records[: config.dataset.limit]
        built = []
        for record in test_records:
            try:
                built.append(make_prompt_pair(record))
            except AbsbenchError:
                continue
        out_dir.mkdir(parents=True, exist_ok=True)
        write_prompt_pairs(out_dir / "pairs.jsonl", built)
        click.echo(f"{len(built)} prompt pairs -> {out_dir / 'pairs.jsonl'}")
        report_obj = run_eval(config)
        written = emit_report(report_obj, out_dir)
    except AbsbenchError as exc:
        raise _fail(exc)
    for path in written:
        click.echo(f"wrote {path}")


if __name__ == "__main__":
    sys.exit(main())
