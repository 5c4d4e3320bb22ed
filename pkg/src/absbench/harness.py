"""End-to-end orchestration: curate, split, pair, score, measure, report.

A run is described by one configuration (YAML or JSON). For every abstract
in the test split it builds a prompt pair, scores the ground truth as a
continuation of the prompt (continuation text is " " + ground truth, so
prompt + continuation is the whole abstract), optionally samples a
completion for entropy and embedding similarity, and aggregates everything
into an :class:`EvalReport`. Per-item failures are recorded, not fatal,
unless the run-level failure rate crosses the configured threshold.

Reports regenerate byte-identically from the same inputs: provenance
carries a digest of the evaluation-relevant settings (endpoints, local
paths, and timestamps are excluded; a wall-clock stamp is opt-in).
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from . import __version__
from .backend import CompletionClient, GenerationParams, load_logprob_dump
from .corpus import (
    AbstractRecord,
    DatasetRecipe,
    Selection,
    build_pools,
    builtin_recipes,
    compose_dataset,
    load_metadata,
    load_records,
    split_tvt,
)
from .errors import ConfigError, ProtocolError, RunError
from .metrics import (
    EntropyPoint,
    PerplexitySummary,
    ScoredSequence,
    cosine_similarity,
    detect_loss_steps,
    exp_word_entropy,
    load_loss_curve,
    sequence_perplexity,
    summarize_perplexities,
)
from .protocol import PromptPair, make_prompt_pair

METRIC_NAMES = ("perplexity", "entropy", "similarity")


@dataclass
class BackendSpec:
    """One evaluated model: a live endpoint or an offline logprob dump."""

    name: str
    model: str = ""
    url: str | None = None
    logprob_dump: str | None = None
    api_key_env: str | None = None


@dataclass
class EmbeddingSpec:
    url: str
    model: str = ""
    dimension: int = 768
    api_key_env: str | None = None


@dataclass
class MetricSettings:
    aggregation: str = "arithmetic"
    resamples: int = 10_000
    bootstrap_seed: int = 0
    batch_size: int | None = None
    entropy: bool = True
    similarity: bool = False


@dataclass
class DatasetSettings:
    """Either a pre-split directory or metadata + recipe to materialize."""

    splits_dir: str | None = None
    metadata: str | None = None
    recipe: str | Mapping[str, Any] | None = None
    recipe_seed: int = 0
    split_seed: int = 0
    limit: int | None = None
    withdrawn_whole_word: bool = True


@dataclass
class LossCurveSpec:
    name: str
    path: str
    plateau_tolerance: float
    min_drop: float
    boundaries: tuple[int, ...] | None = None


@dataclass
class RunConfig:
    dataset: DatasetSettings
    backends: list[BackendSpec]
    generation: GenerationParams = field(default_factory=GenerationParams)
    metrics: MetricSettings = field(default_factory=MetricSettings)
    embedding: EmbeddingSpec | None = None
    loss_curves: list[LossCurveSpec] = field(default_factory=list)
    output_dir: str = "out"
    concurrency: int = 1
    failure_threshold: float = 0.10
    baseline: str | None = None
    stamp: bool = False
    request_timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 0.5

    def validate(self) -> None:
        if not self.backends:
            raise ConfigError("at least one backend is required")
        names = [b.name for b in self.backends]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate backend names: {names}")
        for spec in self.backends:
            if not spec.url and not spec.logprob_dump:
                raise ConfigError(f"backend {spec.name!r} has neither url nor logprob_dump")
        if self.baseline is not None and self.baseline not in names:
            raise ConfigError(f"baseline {self.baseline!r} is not a configured backend")
        if self.metrics.aggregation not in ("arithmetic", "geometric"):
            raise ConfigError(f"unknown aggregation {self.metrics.aggregation!r}")
        if self.metrics.similarity and self.embedding is None:
            raise ConfigError("similarity metric requires an embedding section")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be at least 1")
        if not (self.dataset.splits_dir or (self.dataset.metadata and self.dataset.recipe)):
            raise ConfigError("dataset needs either splits_dir or metadata + recipe")

    def digest(self) -> str:
        """Digest of the evaluation-relevant settings.

        Endpoints and filesystem locations are deliberately left out so the
        same evaluation yields the same digest wherever it runs.
        """
        semantic = {
            "dataset": {
                "recipe": _recipe_key(self.dataset.recipe),
                "recipe_seed": self.dataset.recipe_seed,
                "split_seed": self.dataset.split_seed,
                "limit": self.dataset.limit,
                "withdrawn_whole_word": self.dataset.withdrawn_whole_word,
            },
            "backends": [{"name": b.name, "model": b.model} for b in self.backends],
            "generation": {
                "temperature": self.generation.temperature,
                "max_new_tokens": self.generation.max_new_tokens,
            },
            "metrics": {
                "aggregation": self.metrics.aggregation,
                "resamples": self.metrics.resamples,
                "bootstrap_seed": self.metrics.bootstrap_seed,
                "batch_size": self.metrics.batch_size,
                "entropy": self.metrics.entropy,
                "similarity": self.metrics.similarity,
            },
            "embedding_model": self.embedding.model if self.embedding else None,
            "baseline": self.baseline,
        }
        canonical = json.dumps(semantic, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _recipe_key(recipe: str | Mapping[str, Any] | None) -> Any:
    if recipe is None or isinstance(recipe, str):
        return recipe
    return json.loads(json.dumps(recipe, sort_keys=True))


def _parse_selection(component: Mapping[str, Any]) -> Selection:
    keys = [k for k in ("fraction", "count") if component.get(k) is not None]
    if len(keys) > 1:
        raise ConfigError(f"component {component} sets both fraction and count")
    if not keys:
        return "all"
    if keys[0] == "fraction":
        return float(component["fraction"])
    return int(component["count"])


def recipe_from_mapping(obj: Mapping[str, Any], default_seed: int) -> DatasetRecipe:
    try:
        components = tuple(
            (str(c["category"]), _parse_selection(c)) for c in obj["components"]
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad recipe components: {exc!r}") from exc
    if not components:
        raise ConfigError("recipe has no components")
    target = obj.get("target_size")
    return DatasetRecipe(
        name=str(obj.get("name", "custom")),
        components=components,
        shuffle_seed=int(obj.get("seed", default_seed)),
        target_size=int(target) if target is not None else None,
    )


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a YAML/JSON run configuration."""
    with open(path, "r", encoding="utf-8") as handle:
        raw = yaml.safe_load(handle)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: configuration must be a mapping")
    config = config_from_dict(raw)
    config.validate()
    return config


def config_from_dict(raw: Mapping[str, Any]) -> RunConfig:
    def section(name: str) -> dict:
        value = raw.get(name) or {}
        if not isinstance(value, Mapping):
            raise ConfigError(f"section {name!r} must be a mapping")
        return dict(value)

    dataset_raw = section("dataset")
    dataset = DatasetSettings(
        splits_dir=dataset_raw.get("splits_dir"),
        metadata=dataset_raw.get("metadata"),
        recipe=dataset_raw.get("recipe"),
        recipe_seed=int(dataset_raw.get("recipe_seed", 0)),
        split_seed=int(dataset_raw.get("split_seed", 0)),
        limit=int(dataset_raw["limit"]) if dataset_raw.get("limit") is not None else None,
        withdrawn_whole_word=bool(dataset_raw.get("withdrawn_whole_word", True)),
    )

    backends_raw = raw.get("backends") or []
    if not isinstance(backends_raw, list):
        raise ConfigError("backends must be a list")
    backends = []
    for entry in backends_raw:
        if not isinstance(entry, Mapping) or "name" not in entry:
            raise ConfigError(f"bad backend entry: {entry!r}")
        backends.append(
            BackendSpec(
                name=str(entry["name"]),
                model=str(entry.get("model", entry["name"])),
                url=entry.get("url"),
                logprob_dump=entry.get("logprob_dump"),
                api_key_env=entry.get("api_key_env"),
            )
        )

    generation_raw = section("generation")
    generation = GenerationParams(
        temperature=float(generation_raw.get("temperature", 0.8)),
        max_new_tokens=int(generation_raw.get("max_new_tokens", 1024)),
    )

    metrics_raw = section("metrics")
    metrics = MetricSettings(
        aggregation=str(metrics_raw.get("aggregation", "arithmetic")),
        resamples=int(metrics_raw.get("resamples", 10_000)),
        bootstrap_seed=int(metrics_raw.get("bootstrap_seed", 0)),
        batch_size=(
            int(metrics_raw["batch_size"])
            if metrics_raw.get("batch_size") is not None
            else None
        ),
        entropy=bool(metrics_raw.get("entropy", True)),
        similarity=bool(metrics_raw.get("similarity", False)),
    )

    embedding = None
    if raw.get("embedding"):
        emb = section("embedding")
        if "url" not in emb:
            raise ConfigError("embedding section needs a url")
        embedding = EmbeddingSpec(
            url=str(emb["url"]),
            model=str(emb.get("model", "")),
            dimension=int(emb.get("dimension", 768)),
            api_key_env=emb.get("api_key_env"),
        )

    curves = []
    for entry in raw.get("loss_curves") or []:
        if not isinstance(entry, Mapping):
            raise ConfigError(f"bad loss_curves entry: {entry!r}")
        try:
            curves.append(
                LossCurveSpec(
                    name=str(entry["name"]),
                    path=str(entry["path"]),
                    plateau_tolerance=float(entry["plateau_tolerance"]),
                    min_drop=float(entry["min_drop"]),
                    boundaries=(
                        tuple(int(b) for b in entry["boundaries"])
                        if entry.get("boundaries") is not None
                        else None
                    ),
                )
            )
        except KeyError as exc:
            raise ConfigError(f"loss curve entry missing {exc}") from exc

    return RunConfig(
        dataset=dataset,
        backends=backends,
        generation=generation,
        metrics=metrics,
        embedding=embedding,
        loss_curves=curves,
        output_dir=str(raw.get("output_dir", "out")),
        concurrency=int(raw.get("concurrency", 1)),
        failure_threshold=float(raw.get("failure_threshold", 0.10)),
        baseline=raw.get("baseline"),
        stamp=bool(raw.get("stamp", False)),
        request_timeout=float(raw.get("request_timeout", 60.0)),
        max_retries=int(raw.get("max_retries", 3)),
        backoff_base=float(raw.get("backoff_base", 0.5)),
    )


# --- report model ------------------------------------------------------------


@dataclass(frozen=True)
class SimilarityStats:
    mean: float
    std: float
    minimum: float
    count: int


@dataclass(frozen=True)
class ItemResult:
    """Outcome for one test-split abstract under one model."""

    arxiv_id: str
    status: str  # "ok" | "failed"
    perplexity: float | None = None
    similarity: float | None = None
    entropy_length: int | None = None
    entropy_value: float | None = None
    error: str | None = None


@dataclass
class ModelReport:
    name: str
    model_id: str
    items: list[ItemResult]
    perplexity: PerplexitySummary | None = None
    similarity: SimilarityStats | None = None
    entropy: list[EntropyPoint] = field(default_factory=list)


@dataclass
class EvalReport:
    models: list[ModelReport]
    ground_truth_entropy: list[EntropyPoint]
    loss_steps: dict[str, list[tuple[int, float]]]
    aggregation: str
    baseline: str | None
    provenance: dict

    def to_dict(self) -> dict:
        return {
            "aggregation": self.aggregation,
            "baseline": self.baseline,
            "models": [
                {
                    "name": m.name,
                    "model_id": m.model_id,
                    "perplexity": (
                        None
                        if m.perplexity is None
                        else {
                            "per_sequence": list(m.perplexity.per_sequence),
                            "arithmetic_mean": m.perplexity.arithmetic_mean,
                            "geometric_mean": m.perplexity.geometric_mean,
                            "bootstrap_mean": m.perplexity.bootstrap_mean,
                            "bootstrap_std": m.perplexity.bootstrap_std,
                            "n_resamples": m.perplexity.n_resamples,
                            "seed": m.perplexity.seed,
                        }
                    ),
                    "similarity": (
                        None
                        if m.similarity is None
                        else {
                            "mean": m.similarity.mean,
                            "std": m.similarity.std,
                            "min": m.similarity.minimum,
                            "count": m.similarity.count,
                        }
                    ),
                    "entropy": [
                        {"length_words": p.length_words, "exp_entropy": p.exp_entropy}
                        for p in m.entropy
                    ],
                    "items": [
                        {
                            "arxiv_id": item.arxiv_id,
                            "status": item.status,
                            "perplexity": item.perplexity,
                            "similarity": item.similarity,
                            "entropy_length": item.entropy_length,
                            "entropy_value": item.entropy_value,
                            "error": item.error,
                        }
                        for item in m.items
                    ],
                }
                for m in self.models
            ],
            "ground_truth_entropy": [
                {"length_words": p.length_words, "exp_entropy": p.exp_entropy}
                for p in self.ground_truth_entropy
            ],
            "loss_steps": {
                name: [{"boundary_step": b, "drop": d} for b, d in steps]
                for name, steps in sorted(self.loss_steps.items())
            },
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "EvalReport":
        models = []
        for m in obj["models"]:
            perplexity = None
            if m.get("perplexity") is not None:
                p = m["perplexity"]
                perplexity = PerplexitySummary(
                    per_sequence=tuple(p["per_sequence"]),
                    arithmetic_mean=p["arithmetic_mean"],
                    geometric_mean=p["geometric_mean"],
                    bootstrap_mean=p["bootstrap_mean"],
                    bootstrap_std=p["bootstrap_std"],
                    n_resamples=p["n_resamples"],
                    seed=p["seed"],
                )
            similarity = None
            if m.get("similarity") is not None:
                s = m["similarity"]
                similarity = SimilarityStats(
                    mean=s["mean"], std=s["std"], minimum=s["min"], count=s["count"]
                )
            models.append(
                ModelReport(
                    name=m["name"],
                    model_id=m["model_id"],
                    items=[
                        ItemResult(
                            arxiv_id=i["arxiv_id"],
                            status=i["status"],
                            perplexity=i.get("perplexity"),
                            similarity=i.get("similarity"),
                            entropy_length=i.get("entropy_length"),
                            entropy_value=i.get("entropy_value"),
                            error=i.get("error"),
                        )
                        for i in m["items"]
                    ],
                    perplexity=perplexity,
                    similarity=similarity,
                    entropy=[
                        EntropyPoint(p["length_words"], p["exp_entropy"])
                        for p in m["entropy"]
                    ],
                )
            )
        return cls(
            models=models,
            ground_truth_entropy=[
                EntropyPoint(p["length_words"], p["exp_entropy"])
                for p in obj["ground_truth_entropy"]
            ],
            loss_steps={
                name: [(s["boundary_step"], s["drop"]) for s in steps]
                for name, steps in obj["loss_steps"].items()
            },
            aggregation=obj["aggregation"],
            baseline=obj.get("baseline"),
            provenance=dict(obj["provenance"]),
        )


# --- run orchestration -------------------------------------------------------


def resolve_test_records(config: RunConfig) -> list[AbstractRecord]:
    """Materialize the test split the run evaluates on."""
    ds = config.dataset
    if ds.splits_dir:
        records = load_records(Path(ds.splits_dir) / "test.jsonl")
    else:
        dataset = materialize_dataset(config)
        records = split_tvt(dataset, ds.split_seed).split_records("test")
    if ds.limit is not None:
        records = records[: ds.limit]
    return records


def materialize_dataset(config: RunConfig):
    """Curate the configured recipe from raw metadata (unsplit)."""
    ds = config.dataset
    if not (ds.metadata and ds.recipe):
        raise ConfigError("dataset is not metadata-based")
    pools, _ = build_pools(
        load_metadata(ds.metadata), whole_word=ds.withdrawn_whole_word
    )
    if isinstance(ds.recipe, str):
        available = builtin_recipes(
            {cat: len(pool) for cat, pool in pools.items()}, ds.recipe_seed
        )
        if ds.recipe not in available:
            raise ConfigError(
                f"recipe {ds.recipe!r} not materializable from pools "
                f"{sorted(pools)} (available: {sorted(available)})"
            )
        recipe = available[ds.recipe]
    else:
        recipe = recipe_from_mapping(ds.recipe, ds.recipe_seed)
    return compose_dataset(recipe, pools)


@dataclass
class _ItemOutcome:
    scored: ScoredSequence | None = None
    completion: str | None = None
    similarity: float | None = None
    error: str | None = None


def _evaluate_item(
    pair: PromptPair,
    client: CompletionClient | None,
    dump: Mapping[str, ScoredSequence] | None,
    embed_client: CompletionClient | None,
    config: RunConfig,
    model_id: str,
) -> _ItemOutcome:
    outcome = _ItemOutcome()
    try:
        if dump is not None:
            scored = dump.get(pair.arxiv_id)
            if scored is None:
                raise RunError(f"{pair.arxiv_id} not present in logprob dump")
            outcome.scored = scored
        else:
            assert client is not None
            outcome.scored = client.score_logprobs(
                pair.prompt,
                " " + pair.ground_truth,
                model_id=model_id,
                sequence_id=pair.arxiv_id,
            )
            wants_completion = config.metrics.entropy or config.metrics.similarity
            if wants_completion:
                params = replace(config.generation, model_id=model_id)
                record = client.complete(pair.prompt, params, arxiv_id=pair.arxiv_id)
                outcome.completion = record.completion
            if config.metrics.similarity and embed_client is not None:
                emb_model = config.embedding.model if config.embedding else ""
                completion_vec = embed_client.embed(outcome.completion or "", emb_model)
                truth_vec = embed_client.embed(pair.ground_truth, emb_model)
                outcome.similarity = cosine_similarity(
                    completion_vec.values, truth_vec.values
                )
    except Exception as exc:  # recorded per item, surfaced via failure policy
        outcome.error = f"{type(exc).__name__}: {exc}"
    return outcome


def run_eval(config: RunConfig) -> EvalReport:
    """Execute one full evaluation run and return the aggregated report."""
    config.validate()
    records = resolve_test_records(config)
    if not records:
        raise RunError("test split is empty")

    pairs: list[PromptPair | None] = []
    pair_errors: list[str | None] = []
    for record in records:
        try:
            pairs.append(make_prompt_pair(record))
            pair_errors.append(None)
        except ProtocolError as exc:
            pairs.append(None)
            pair_errors.append(f"ProtocolError: {exc}")

    embed_client = None
    if config.metrics.similarity and config.embedding is not None:
        embed_client = CompletionClient(
            config.embedding.url,
            api_key=_api_key(config.embedding.api_key_env),
            timeout=config.request_timeout,
            max_retries=config.max_retries,
            backoff_base=config.backoff_base,
            embedding_dimension=config.embedding.dimension,
        )

    model_reports: list[ModelReport] = []
    total_attempts = 0
    total_failures = 0
    for spec in config.backends:
        dump = None
        client = None
        if spec.logprob_dump:
            dump = {
                seq.sequence_id: seq
                for seq in load_logprob_dump(spec.logprob_dump)
                if seq.sequence_id is not None
            }
        else:
            client = CompletionClient(
                spec.url or "",
                api_key=_api_key(spec.api_key_env),
                timeout=config.request_timeout,
                max_retries=config.max_retries,
                backoff_base=config.backoff_base,
            )

        def evaluate(indexed: tuple[int, PromptPair | None]) -> _ItemOutcome:
            index, pair = indexed
            if pair is None:
                return _ItemOutcome(error=pair_errors[index])
            return _evaluate_item(pair, client, dump, embed_client, config, spec.model)

        if config.concurrency > 1:
            with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
                outcomes = list(pool.map(evaluate, enumerate(pairs)))
        else:
            outcomes = [evaluate(entry) for entry in enumerate(pairs)]

        items: list[ItemResult] = []
        scored_sequences: list[ScoredSequence] = []
        similarities: list[float] = []
        entropy_points: list[EntropyPoint] = []
        for record, outcome in zip(records, outcomes):
            total_attempts += 1
            if outcome.error is not None or outcome.scored is None:
                total_failures += 1
                items.append(
                    ItemResult(
                        arxiv_id=record.arxiv_id,
                        status="failed",
                        error=outcome.error or "no scored sequence",
                    )
                )
                continue
            scored_sequences.append(outcome.scored)
            entropy_point = None
            if config.metrics.entropy and outcome.completion is not None:
                entropy_point = exp_word_entropy(outcome.completion)
                entropy_points.append(entropy_point)
            if outcome.similarity is not None:
                similarities.append(outcome.similarity)
            items.append(
                ItemResult(
                    arxiv_id=record.arxiv_id,
                    status="ok",
                    perplexity=sequence_perplexity(outcome.scored),
                    similarity=outcome.similarity,
                    entropy_length=entropy_point.length_words if entropy_point else None,
                    entropy_value=entropy_point.exp_entropy if entropy_point else None,
                )
            )

        summary = None
        if scored_sequences:
            summary = summarize_perplexities(
                scored_sequences,
                n_resamples=config.metrics.resamples,
                seed=config.metrics.bootstrap_seed,
                batch_size=config.metrics.batch_size,
            )
        similarity_stats = None
        if similarities:
            arr = np.asarray(similarities)
            similarity_stats = SimilarityStats(
                mean=float(arr.mean()),
                std=float(arr.std()),
                minimum=float(arr.min()),
                count=len(similarities),
            )
        model_reports.append(
            ModelReport(
                name=spec.name,
                model_id=spec.model,
                items=items,
                perplexity=summary,
                similarity=similarity_stats,
                entropy=entropy_points,
            )
        )

    successes = total_attempts - total_failures
    if successes == 0:
        raise RunError(f"all {total_attempts} evaluations failed")
    failure_rate = total_failures / total_attempts
    if failure_rate > config.failure_threshold:
        raise RunError(
            f"failure rate {failure_rate:.2%} exceeds threshold "
            f"{config.failure_threshold:.2%} ({total_failures}/{total_attempts})"
        )

    ground_truth_entropy = [
        exp_word_entropy(pair.ground_truth) for pair in pairs if pair is not None
    ]

    loss_steps: dict[str, list[tuple[int, float]]] = {}
    for curve_spec in config.loss_curves:
        curve = load_loss_curve(curve_spec.path, curve_spec.boundaries)
        loss_steps[curve_spec.name] = detect_loss_steps(
            curve, curve_spec.plateau_tolerance, curve_spec.min_drop
        )

    provenance = {
        "config_digest": config.digest(),
        "split_seed": config.dataset.split_seed,
        "recipe_seed": config.dataset.recipe_seed,
        "bootstrap_seed": config.metrics.bootstrap_seed,
        "n_items": len(records),
        "version": __version__,
        "generated_at": _now_iso() if config.stamp else None,
    }
    return EvalReport(
        models=model_reports,
        ground_truth_entropy=ground_truth_entropy,
        loss_steps=loss_steps,
        aggregation=config.metrics.aggregation,
        baseline=config.baseline,
        provenance=provenance,
    )


def _api_key(env_name: str | None) -> str | None:
    return os.environ.get(env_name) if env_name else None


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()
