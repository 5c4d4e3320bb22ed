"""Published evaluation numbers shipped as reference data.

These are the reported mean perplexities of the base 8B model and the
s1-s10 fine-tuned variants on the hep-th test split, and the reported
semantic-similarity statistics. Reproducing them requires the actual
models behind a compatible serving endpoint; see the README for the
regeneration procedure. They are bundled so reports can render the
published baseline next to fresh results.
"""

from __future__ import annotations

import csv
from importlib import resources


def published_perplexity() -> dict[str, dict[str, float]]:
    """Reported mean perplexity per model: {model: {lora_all, lora_qkv}}."""
    table = {}
    path = resources.files("absbench").joinpath("data/published_perplexity.csv")
    with path.open("r", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            table[row["model"]] = {
                "lora_all": float(row["lora_all"]),
                "lora_qkv": float(row["lora_qkv"]),
            }
    return table


def published_similarity() -> dict[str, dict[str, float]]:
    """Reported cosine-similarity mean/std per model family."""
    table = {}
    path = resources.files("absbench").joinpath("data/published_similarity.csv")
    with path.open("r", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            table[row["model_family"]] = {
                "mean": float(row["mean"]),
                "std": float(row["std"]),
            }
    return table
