"""Render an EvalReport to files: tables, structured dump, plot data, figures.

Tables use fixed two-decimal formatting; the structured dump keeps full
precision. Plot-data CSVs carry the series behind the figures (perplexity
per model with bootstrap error bars, exponentiated entropy against
completion length, detected loss steps), and each series is also rendered
to a PNG next to it. All outputs are written deterministically: same
report, same bytes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import IoError
from .harness import EvalReport, ModelReport

FORMATS = ("table", "structured", "plot-data")


def emit_report(
    report: EvalReport,
    out_dir: str | Path,
    formats: Iterable[str] = FORMATS,
) -> list[Path]:
    """Write the requested formats into ``out_dir``; returns written paths."""
    requested = set(formats)
    unknown = requested - set(FORMATS)
    if unknown:
        raise ValueError(f"unknown report formats: {sorted(unknown)}")
    out_dir = Path(out_dir)
    written: list[Path] = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if "table" in requested:
            written.extend(_emit_tables(report, out_dir))
        if "structured" in requested:
            written.append(_emit_structured(report, out_dir))
        if "plot-data" in requested:
            written.extend(_emit_plot_data(report, out_dir))
    except OSError as exc:
        raise IoError(f"cannot write report to {out_dir}: {exc}") from exc
    return written


def _ordered_models(report: EvalReport) -> list[ModelReport]:
    """Baseline first (mirroring the published tables), then config order."""
    if report.baseline is None:
        return list(report.models)
    baseline = [m for m in report.models if m.name == report.baseline]
    rest = [m for m in report.models if m.name != report.baseline]
    return baseline + rest


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.2f}"


def _emit_tables(report: EvalReport, out_dir: Path) -> list[Path]:
    models = _ordered_models(report)
    header = ["model", "arithmetic", "geometric", "bootstrap_mean", "bootstrap_std"]
    rows = []
    for m in models:
        p = m.perplexity
        rows.append(
            [
                m.name,
                _fmt(p.arithmetic_mean if p else None),
                _fmt(p.geometric_mean if p else None),
                _fmt(p.bootstrap_mean if p else None),
                _fmt(p.bootstrap_std if p else None),
            ]
        )
    csv_path = out_dir / "perplexity_summary.csv"
    _write_csv(csv_path, header, rows)

    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(header)),
        "  ".join("-" * w for w in widths),
    ]
    for r in rows:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(len(header))))
    txt_path = out_dir / "report_table.txt"
    txt_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    written = [csv_path, txt_path]
    if any(m.similarity is not None for m in models):
        sim_path = out_dir / "similarity_summary.csv"
        _write_csv(
            sim_path,
            ["model", "mean", "std", "min", "count"],
            [
                [
                    m.name,
                    _fmt(m.similarity.mean if m.similarity else None),
                    _fmt(m.similarity.std if m.similarity else None),
                    _fmt(m.similarity.minimum if m.similarity else None),
                    str(m.similarity.count) if m.similarity else "",
                ]
                for m in models
            ],
        )
        written.append(sim_path)
    return written


def _emit_structured(report: EvalReport, out_dir: Path) -> Path:
    path = out_dir / "report.json"
    with open(path, "w", encoding="utf-8", newline="\n") as out:
        json.dump(report.to_dict(), out, indent=2, sort_keys=True, ensure_ascii=False)
        out.write("\n")
    return path


def _emit_plot_data(report: EvalReport, out_dir: Path) -> list[Path]:
    written = []
    models = _ordered_models(report)

    with_perplexity = [m for m in models if m.perplexity is not None]
    if with_perplexity:
        path = out_dir / "perplexity_vs_model.csv"
        _write_csv(
            path,
            ["model", "bootstrap_mean", "bootstrap_std"],
            [
                [m.name, repr(m.perplexity.bootstrap_mean), repr(m.perplexity.bootstrap_std)]
                for m in with_perplexity
            ],
        )
        written.append(path)
        written.append(_plot_perplexity(with_perplexity, report.baseline, out_dir))

    entropy_rows = [
        ["ground_truth", str(p.length_words), repr(p.exp_entropy)]
        for p in report.ground_truth_entropy
    ]
    for m in models:
        entropy_rows.extend(
            [m.name, str(p.length_words), repr(p.exp_entropy)] for p in m.entropy
        )
    if entropy_rows:
        path = out_dir / "entropy_vs_length.csv"
        _write_csv(path, ["source", "length_words", "exp_entropy"], entropy_rows)
        written.append(path)
        written.append(_plot_entropy(report, models, out_dir))

    if report.loss_steps:
        path = out_dir / "loss_steps.csv"
        rows = [
            [name, str(boundary), repr(drop)]
            for name, steps in sorted(report.loss_steps.items())
            for boundary, drop in steps
        ]
        _write_csv(path, ["curve", "boundary_step", "drop"], rows)
        written.append(path)
    return written


def _plot_perplexity(
    models: Sequence[ModelReport], baseline: str | None, out_dir: Path
) -> Path:
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(models)), 4.0))
    xs = range(len(models))
    means = [m.perplexity.bootstrap_mean for m in models]
    errs = [m.perplexity.bootstrap_std for m in models]
    colors = ["tab:gray" if m.name == baseline else "tab:blue" for m in models]
    ax.bar(xs, means, yerr=errs, capsize=4, color=colors)
    ax.set_xticks(list(xs))
    ax.set_xticklabels([m.name for m in models], rotation=30, ha="right")
    ax.set_ylabel("perplexity (bootstrap mean ± std)")
    ax.set_title("Perplexity by model")
    fig.tight_layout()
    path = out_dir / "perplexity_vs_model.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _plot_entropy(
    report: EvalReport, models: Sequence[ModelReport], out_dir: Path
) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    series: list[tuple[str, list]] = [("ground_truth", report.ground_truth_entropy)]
    series.extend((m.name, m.entropy) for m in models if m.entropy)
    for label, points in series:
        ax.scatter(
            [p.length_words for p in points],
            [p.exp_entropy for p in points],
            s=12,
            alpha=0.7,
            label=label,
        )
    ax.set_xlabel("completion length (words)")
    ax.set_ylabel("exp(word entropy)")
    ax.set_title("Lexical variety vs completion length")
    ax.legend()
    fig.tight_layout()
    path = out_dir / "entropy_vs_length.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_loss_curve(
    points: Sequence[tuple[int, float]],
    detections: Sequence[tuple[int, float]],
    path: str | Path,
) -> Path:
    """Render a loss trace with detected step boundaries marked."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot([s for s, _ in points], [l for _, l in points], lw=1.2)
    for boundary, drop in detections:
        ax.axvline(boundary, color="tab:red", ls="--", lw=1.0)
        ax.annotate(
            f"-{drop:.3g}",
            xy=(boundary, max(l for _, l in points)),
            ha="center",
            fontsize=8,
            color="tab:red",
        )
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title("Training loss")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _write_csv(path: Path, header: list[str], rows: Iterable[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as out:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def load_report(path: str | Path) -> EvalReport:
    """Read a structured report dump back into an EvalReport."""
    with open(path, "r", encoding="utf-8") as handle:
        return EvalReport.from_dict(json.load(handle))
