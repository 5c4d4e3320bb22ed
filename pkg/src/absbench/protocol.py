"""Turn cleaned abstracts into prompt / ground-truth completion pairs.

An abstract is segmented into sentences; the first half (rounded up) is the
prompt, the rest is the ground truth. Single-sentence abstracts fall back
to splitting on words with the same half-way rule.

Segmentation is deliberately naive: a boundary is terminal punctuation
(. ! ?) followed by whitespace, with no abbreviation dictionary, so
"written with S. Chaudhuri" splits after "S.". An optional stricter mode
additionally requires the next sentence to start with an uppercase letter.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .corpus import AbstractRecord
from .errors import FormatError, ProtocolError

_BOUNDARY = re.compile(r"(?<=[.!?])\s+")
_BOUNDARY_STRICT = re.compile(r"(?<=[.!?])\s+(?=[A-Z])")


@dataclass(frozen=True)
class PromptPair:
    """Prompt and ground-truth halves of one abstract.

    ``n_units`` counts sentences, or words when ``unit_kind == "word"``
    (the single-sentence fallback); ``split_index`` is ceil(n_units / 2),
    the number of units that went into the prompt.
    """

    arxiv_id: str
    prompt: str
    ground_truth: str
    n_units: int
    unit_kind: str
    split_index: int


def normalize_whitespace(text: str) -> str:
    """Collapse every whitespace run to a single space and strip ends."""
    return " ".join(text.split())


def segment_sentences(text: str, require_uppercase: bool = False) -> list[str]:
    """Split cleaned text at terminal punctuation followed by whitespace.

    Joining the segments with single spaces reproduces the input up to
    whitespace normalization.
    """
    if not text or text.isspace():
        raise ProtocolError("cannot segment empty text")
    boundary = _BOUNDARY_STRICT if require_uppercase else _BOUNDARY
    return [segment for segment in boundary.split(text) if segment]


def make_prompt_pair(
    record: AbstractRecord, require_uppercase: bool = False
) -> PromptPair:
    """Split one abstract into its prompt and ground-truth completion."""
    units = segment_sentences(record.abstract, require_uppercase=require_uppercase)
    unit_kind = "sentence"
    if len(units) == 1:
        units = record.abstract.split()
        unit_kind = "word"
        if len(units) < 2:
            raise ProtocolError(
                f"{record.arxiv_id}: single-word abstract has no completion half"
            )
    n_units = len(units)
    split_index = (n_units + 1) // 2
    return PromptPair(
        arxiv_id=record.arxiv_id,
        prompt=" ".join(units[:split_index]),
        ground_truth=" ".join(units[split_index:]),
        n_units=n_units,
        unit_kind=unit_kind,
        split_index=split_index,
    )


def write_prompt_pairs(path: str | Path, pairs: Iterable[PromptPair]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as out:
        for pair in pairs:
            out.write(
                json.dumps(
                    {
                        "arxiv_id": pair.arxiv_id,
                        "prompt": pair.prompt,
                        "ground_truth": pair.ground_truth,
                        "n_units": pair.n_units,
                        "unit_kind": pair.unit_kind,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )


def load_prompt_pairs(path: str | Path) -> list[PromptPair]:
    pairs = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                n_units = int(obj["n_units"])
                pairs.append(
                    PromptPair(
                        arxiv_id=obj["arxiv_id"],
                        prompt=obj["prompt"],
                        ground_truth=obj["ground_truth"],
                        n_units=n_units,
                        unit_kind=obj["unit_kind"],
                        split_index=(n_units + 1) // 2,
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"bad prompt pair: {exc}", line=lineno) from exc
    return pairs
