"""arXiv-style abstract corpus: cleaning, recipe mixing, and seeded splits.

Raw metadata comes in as newline-delimited JSON (fields ``id``,
``categories`` as a space-separated string, ``abstract``, ``comments``),
optionally gzip-compressed. Cleaning drops withdrawn papers, flattens
linebreaks, and strips the abstract. Cleaned records are pooled by primary
category; a :class:`DatasetRecipe` mixes pools into one shuffled dataset,
which :func:`split_tvt` partitions 70/15/15.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Union

from .errors import FormatError, RecipeError, SplitError
from .rng import derive_seed, permutation, sample_without_replacement

SPLIT_NAMES = ("train", "validation", "test")

# A linebreak and everything whitespace immediately after it collapse to
# one space; \s also eats follow-on linebreaks, so blank lines collapse too.
_LINEBREAK_RUN = re.compile(r"[\r\n\v\f\x85  ]\s*")
_WITHDRAWN_WORD = re.compile(r"\bwithdrawn\b", re.IGNORECASE)
_WITHDRAWN_SUBSTRING = re.compile(r"withdrawn", re.IGNORECASE)


@dataclass(frozen=True)
class RawRecord:
    """One metadata entry as found in the snapshot, before cleaning."""

    arxiv_id: str
    primary_category: str
    categories: tuple[str, ...]
    abstract: str
    comments: str = ""


@dataclass(frozen=True)
class AbstractRecord:
    """A cleaned abstract attributed to its primary category."""

    arxiv_id: str
    primary_category: str
    abstract: str


@dataclass(frozen=True)
class Rejected:
    """Marker for a record dropped during cleaning; ``reason`` is
    ``withdrawn`` or ``empty``."""

    arxiv_id: str
    reason: str


# selection for one recipe component: "all", a fraction of the pool in
# (0, 1], or an absolute record count
Selection = Union[str, float, int]


@dataclass(frozen=True)
class DatasetRecipe:
    """Declarative mixing rule: which pools, how much of each, which seed."""

    name: str
    components: tuple[tuple[str, Selection], ...]
    shuffle_seed: int
    target_size: int | None = None


@dataclass
class CuratedDataset:
    """A materialized recipe: ordered records plus (optionally) the split.

    ``split_assignment`` maps record index to a name in ``SPLIT_NAMES``;
    it is ``None`` until :func:`split_tvt` runs.
    """

    name: str
    records: list[AbstractRecord]
    split_assignment: list[str] | None = None
    shuffle_seed: int | None = None
    split_seed: int | None = None

    def split_records(self, split: str) -> list[AbstractRecord]:
        if self.split_assignment is None:
            raise SplitError(f"dataset {self.name!r} has not been split")
        if split not in SPLIT_NAMES:
            raise ValueError(f"unknown split {split!r}")
        return [r for r, s in zip(self.records, self.split_assignment) if s == split]

    def split_counts(self) -> dict[str, int]:
        if self.split_assignment is None:
            raise SplitError(f"dataset {self.name!r} has not been split")
        return {name: self.split_assignment.count(name) for name in SPLIT_NAMES}


def clean_text(text: str) -> str:
    """Apply the abstract-cleaning rule: flatten linebreak runs, strip ends."""
    return _LINEBREAK_RUN.sub(" ", text).strip()


def clean_record(raw: RawRecord, whole_word: bool = True) -> AbstractRecord | Rejected:
    """Clean one raw record or reject it.

    Records mentioning "withdrawn" in the comments or abstract are dropped;
    ``whole_word=False`` switches to plain substring matching (so e.g.
    "withdrawnness" would also match).
    """
    pattern = _WITHDRAWN_WORD if whole_word else _WITHDRAWN_SUBSTRING
    if pattern.search(raw.comments) or pattern.search(raw.abstract):
        return Rejected(raw.arxiv_id, "withdrawn")
    abstract = clean_text(raw.abstract)
    if not abstract:
        return Rejected(raw.arxiv_id, "empty")
    return AbstractRecord(raw.arxiv_id, raw.primary_category, abstract)


def build_pools(
    records: Iterable[RawRecord], whole_word: bool = True
) -> tuple[dict[str, list[AbstractRecord]], list[Rejected]]:
    """Clean records and group the survivors by primary category."""
    pools: dict[str, list[AbstractRecord]] = {}
    rejected: list[Rejected] = []
    for raw in records:
        cleaned = clean_record(raw, whole_word=whole_word)
        if isinstance(cleaned, Rejected):
            rejected.append(cleaned)
        else:
            pools.setdefault(cleaned.primary_category, []).append(cleaned)
    return pools, rejected


def round_half_up(x: float) -> int:
    """Round to nearest integer with ties going up (0.5 -> 1)."""
    return math.floor(x + 0.5)


def _component_size(selection: Selection, pool_size: int, category: str) -> int:
    if selection == "all":
        return pool_size
    if isinstance(selection, bool):
        raise RecipeError(f"component {category!r}: bool is not a valid selection")
    if isinstance(selection, float):
        if not 0.0 < selection <= 1.0:
            raise RecipeError(
                f"component {category!r}: fraction {selection} outside (0, 1]"
            )
        count = round_half_up(selection * pool_size)
        if count == 0:
            raise RecipeError(
                f"component {category!r}: fraction {selection} of {pool_size} "
                "records selects nothing"
            )
        return count
    if isinstance(selection, int):
        if selection <= 0:
            raise RecipeError(f"component {category!r}: count must be positive")
        if selection > pool_size:
            raise RecipeError(
                f"component {category!r}: requested {selection} records from a "
                f"pool of {pool_size}"
            )
        return selection
    raise RecipeError(f"component {category!r}: bad selection {selection!r}")


def compose_dataset(
    recipe: DatasetRecipe, pools: Mapping[str, list[AbstractRecord]]
) -> CuratedDataset:
    """Materialize a recipe over category pools.

    Each component samples without replacement from its pool (seeded per
    component from the recipe seed); the selections are concatenated and
    shuffled with the recipe seed. With ``target_size`` set the shuffled
    result is truncated to that size exactly; a shortfall is an error.
    """
    if not recipe.components:
        raise RecipeError(f"recipe {recipe.name!r} has no components")
    selected: list[AbstractRecord] = []
    for index, (category, selection) in enumerate(recipe.components):
        if category not in pools:
            raise RecipeError(f"recipe {recipe.name!r}: no pool for {category!r}")
        pool = pools[category]
        count = _component_size(selection, len(pool), category)
        if count == len(pool):
            selected.extend(pool)
        else:
            # component sub-seed: stream output `index + 1` of the recipe seed
            # (0 is reserved for the final shuffle's own stream)
            sub_seed = derive_seed(recipe.shuffle_seed, index + 1)
            selected.extend(sample_without_replacement(pool, count, sub_seed))
    records = [selected[i] for i in permutation(len(selected), recipe.shuffle_seed)]
    if recipe.target_size is not None:
        if len(records) < recipe.target_size:
            raise RecipeError(
                f"recipe {recipe.name!r}: components yield {len(records)} records, "
                f"short of target_size {recipe.target_size}"
            )
        records = records[: recipe.target_size]
    return CuratedDataset(
        name=recipe.name, records=records, shuffle_seed=recipe.shuffle_seed
    )


def split_sizes(n: int) -> tuple[int, int, int]:
    """70/15/15 sizes for ``n`` records: floor, floor, remainder.

    Integer arithmetic so the rule is exact for any n.
    """
    train = (70 * n) // 100
    validation = (15 * n) // 100
    return train, validation, n - train - validation


def split_tvt(dataset: CuratedDataset, seed: int) -> CuratedDataset:
    """Shuffle with ``seed`` and assign 70/15/15 train/validation/test."""
    n = len(dataset.records)
    if n == 0:
        raise SplitError(f"dataset {dataset.name!r} is empty")
    train, validation, test = split_sizes(n)
    if min(train, validation, test) == 0:
        raise SplitError(
            f"dataset {dataset.name!r}: n={n} leaves an empty split "
            f"(sizes {train}/{validation}/{test})"
        )
    order = permutation(n, seed)
    records = [dataset.records[i] for i in order]
    assignment = (
        ["train"] * train + ["validation"] * validation + ["test"] * test
    )
    return CuratedDataset(
        name=dataset.name,
        records=records,
        split_assignment=assignment,
        shuffle_seed=dataset.shuffle_seed,
        split_seed=seed,
    )


# --- newline-delimited I/O -------------------------------------------------


def _open_maybe_gzip(path: Path) -> IO[bytes]:
    handle = open(path, "rb")
    magic = handle.read(2)
    handle.seek(0)
    if magic == b"\x1f\x8b":
        return gzip.open(handle, "rb")  # type: ignore[return-value]
    return handle


def load_metadata(path: str | Path) -> Iterator[RawRecord]:
    """Stream raw records from an arXiv metadata snapshot (.jsonl or .jsonl.gz)."""
    path = Path(path)
    with _open_maybe_gzip(path) as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            arxiv_id = str(obj.get("id") or "").strip()
            if not arxiv_id:
                raise FormatError("record has no id", line=lineno)
            categories = tuple(str(obj.get("categories") or "").split())
            if not categories:
                raise FormatError(f"record {arxiv_id} has no categories", line=lineno)
            yield RawRecord(
                arxiv_id=arxiv_id,
                primary_category=categories[0],
                categories=categories,
                abstract=str(obj.get("abstract") or ""),
                comments=str(obj.get("comments") or ""),
            )


def write_records(path: str | Path, records: Iterable[AbstractRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as out:
        for record in records:
            out.write(
                json.dumps(
                    {
                        "arxiv_id": record.arxiv_id,
                        "primary_category": record.primary_category,
                        "abstract": record.abstract,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )


def load_records(path: str | Path) -> list[AbstractRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                records.append(
                    AbstractRecord(
                        arxiv_id=obj["arxiv_id"],
                        primary_category=obj["primary_category"],
                        abstract=obj["abstract"],
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"bad record: {exc}", line=lineno) from exc
    return records


def write_splits(dataset: CuratedDataset, out_dir: str | Path) -> dict:
    """Write one file per split plus ``manifest.json``; returns the manifest.

    The content digest is sha256 over the bytes of the three split files in
    train/validation/test order, so identical datasets produce identical
    manifests.
    """
    if dataset.split_assignment is None:
        raise SplitError(f"dataset {dataset.name!r} has not been split")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = hashlib.sha256()
    counts = {}
    for split in SPLIT_NAMES:
        records = dataset.split_records(split)
        counts[split] = len(records)
        split_path = out_dir / f"{split}.jsonl"
        write_records(split_path, records)
        digest.update(split_path.read_bytes())
    manifest = {
        "name": dataset.name,
        "shuffle_seed": dataset.shuffle_seed,
        "split_seed": dataset.split_seed,
        "counts": counts,
        "content_digest": digest.hexdigest(),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8", newline="\n") as out:
        json.dump(manifest, out, indent=2, sort_keys=True)
        out.write("\n")
    return manifest


# --- the published dataset family -------------------------------------------

HEP_TH = "hep-th"
HEP_PH = "hep-ph"
GR_QC = "gr-qc"
Q_BIO = "q-bio"
CS = "cs"


def builtin_recipes(
    pool_sizes: Mapping[str, int], base_seed: int
) -> dict[str, DatasetRecipe]:
    """The s1-s10 dataset family, parameterized by actual pool sizes.

    s1-s3, s7, s8 concatenate whole pools. s4-s6 mix to the size of the
    hep-th pool with fixed composition (70/15/15 and 85/15), so their
    component counts are fractions of |hep-th| rounded half-up and the
    result is truncated to |hep-th| exactly. s9 takes the fraction
    |hep-th| / (|hep-ph| + |gr-qc|) of each of those two pools. s10 pads
    hep-th + q-bio with enough cs records to match s3's size.

    Recipes whose source categories are missing from ``pool_sizes`` are
    omitted.
    """

    def seed_for(index: int) -> int:
        return derive_seed(base_seed, index)

    recipes: dict[str, DatasetRecipe] = {}

    def add(index: int, name: str, components: list[tuple[str, Selection]],
            target_size: int | None = None) -> None:
        if any(cat not in pool_sizes for cat, _ in components):
            return
        recipes[name] = DatasetRecipe(
            name=name,
            components=tuple(components),
            shuffle_seed=seed_for(index),
            target_size=target_size,
        )

    add(1, "s1", [(HEP_TH, "all")])
    add(2, "s2", [(HEP_PH, "all"), (GR_QC, "all")])
    add(3, "s3", [(HEP_TH, "all"), (HEP_PH, "all"), (GR_QC, "all")])

    if HEP_TH in pool_sizes:
        h = pool_sizes[HEP_TH]
        add(
            4,
            "s4",
            [
                (HEP_TH, round_half_up(0.70 * h)),
                (HEP_PH, round_half_up(0.15 * h)),
                (GR_QC, round_half_up(0.15 * h)),
            ],
            target_size=h,
        )
        add(
            5,
            "s5",
            [(HEP_TH, round_half_up(0.85 * h)), (GR_QC, round_half_up(0.15 * h))],
            target_size=h,
        )
        add(
            6,
            "s6",
            [(HEP_TH, round_half_up(0.85 * h)), (HEP_PH, round_half_up(0.15 * h))],
            target_size=h,
        )

    add(7, "s7", [(HEP_TH, "all"), (GR_QC, "all")])
    add(8, "s8", [(HEP_TH, "all"), (HEP_PH, "all")])

    if all(cat in pool_sizes for cat in (HEP_TH, HEP_PH, GR_QC)):
        ratio = pool_sizes[HEP_TH] / (pool_sizes[HEP_PH] + pool_sizes[GR_QC])
        if 0.0 < ratio <= 1.0:
            add(9, "s9", [(HEP_PH, ratio), (GR_QC, ratio)])

    if all(cat in pool_sizes for cat in (HEP_TH, HEP_PH, GR_QC, Q_BIO, CS)):
        s3_size = pool_sizes[HEP_TH] + pool_sizes[HEP_PH] + pool_sizes[GR_QC]
        padding = s3_size - pool_sizes[HEP_TH] - pool_sizes[Q_BIO]
        if 0 < padding <= pool_sizes[CS]:
            add(10, "s10", [(HEP_TH, "all"), (Q_BIO, "all"), (CS, padding)])

    return recipes
