"""Corpus curation and abstract-completion evaluation for language models."""

__version__ = "0.1.0"

from .corpus import (
    AbstractRecord,
    CuratedDataset,
    DatasetRecipe,
    RawRecord,
    Rejected,
    clean_record,
    compose_dataset,
    split_tvt,
)
from .errors import (
    AbsbenchError,
    BackendError,
    ConfigError,
    FormatError,
    IoError,
    MetricError,
    ProtocolError,
    RecipeError,
    RunError,
    SplitError,
)
from .metrics import (
    EntropyPoint,
    LossCurve,
    PerplexitySummary,
    ScoredSequence,
    aggregate_perplexity,
    bootstrap_mean_std,
    cosine_similarity,
    detect_loss_steps,
    exp_word_entropy,
    sequence_cross_entropy,
    sequence_perplexity,
)
from .protocol import PromptPair, make_prompt_pair, segment_sentences

__all__ = [
    "AbsbenchError",
    "AbstractRecord",
    "BackendError",
    "ConfigError",
    "CuratedDataset",
    "DatasetRecipe",
    "EntropyPoint",
    "FormatError",
    "IoError",
    "LossCurve",
    "MetricError",
    "PerplexitySummary",
    "PromptPair",
    "ProtocolError",
    "RawRecord",
    "RecipeError",
    "Rejected",
    "RunError",
    "ScoredSequence",
    "SplitError",
    "aggregate_perplexity",
    "bootstrap_mean_std",
    "clean_record",
    "compose_dataset",
    "cosine_similarity",
    "detect_loss_steps",
    "exp_word_entropy",
    "make_prompt_pair",
    "segment_sentences",
    "sequence_cross_entropy",
    "sequence_perplexity",
    "split_tvt",
]
