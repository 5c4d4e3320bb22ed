"""Evaluation numerics: perplexity, bootstrap, entropy, similarity, loss steps.

Per-sequence perplexity is exp of the length-normalized negative
log-likelihood, equivalently (prod 1/p_t)^(1/T). Natural log throughout.
Dataset-level perplexity is aggregated two ways: the arithmetic mean of
per-sequence perplexities (the default reported here) and the geometric
mean, which is what exponentiating a whole-dataset loss yields. The two
coincide only when all sequences score identically, and arithmetic >=
geometric always (AM-GM).
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, MetricError
from .rng import index_block

_BOOTSTRAP_BLOCK = 4_000_000  # max index draws per vectorized chunk


@dataclass(frozen=True)
class ScoredSequence:
    """Natural-log probabilities of each scored token of one text.

    ``norm_length`` is the T used for length normalization; it defaults to
    the number of scored tokens. (An explicit override exists because some
    conventions count an unscored leading token in T.)
    """

    token_logprobs: tuple[float, ...]
    norm_length: int | None = None
    sequence_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "token_logprobs", tuple(self.token_logprobs))
        for lp in self.token_logprobs:
            if lp > 0.0 or math.isnan(lp):
                raise MetricError(f"log-probability {lp} is not <= 0")
        if self.norm_length is not None and self.norm_length < 1:
            raise MetricError(f"norm_length {self.norm_length} is not positive")

    @property
    def t(self) -> int:
        """Effective normalization length."""
        return self.norm_length if self.norm_length is not None else len(self.token_logprobs)


@dataclass(frozen=True)
class PerplexitySummary:
    """Dataset-level perplexity bundle for one model."""

    per_sequence: tuple[float, ...]
    arithmetic_mean: float
    geometric_mean: float
    bootstrap_mean: float
    bootstrap_std: float
    n_resamples: int
    seed: int


@dataclass(frozen=True)
class EntropyPoint:
    """Exponentiated word entropy of one text against its length in words."""

    length_words: int
    exp_entropy: float


@dataclass(frozen=True)
class LossCurve:
    """A training-loss trace with the steps at which new epochs begin."""

    points: tuple[tuple[int, float], ...]
    epoch_boundaries: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple((int(s), float(l)) for s, l in self.points))
        object.__setattr__(self, "epoch_boundaries", tuple(int(b) for b in self.epoch_boundaries))
        steps = [s for s, _ in self.points]
        if any(b >= a for a, b in zip(steps[1:], steps)):
            raise MetricError("loss-curve steps must be strictly increasing")
        bounds = self.epoch_boundaries
        if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
            raise MetricError("epoch boundaries must be strictly increasing")


def sequence_cross_entropy(seq: ScoredSequence) -> float:
    """Length-normalized negative log-likelihood of one sequence."""
    if not seq.token_logprobs:
        raise MetricError("cannot score an empty sequence")
    return -sum(seq.token_logprobs) / seq.t


def sequence_perplexity(seq: ScoredSequence) -> float:
    """exp of the cross entropy; the sequence's average branching factor."""
    return math.exp(sequence_cross_entropy(seq))


def aggregate_perplexity(values: Sequence[float], mode: str = "arithmetic") -> float:
    """Combine per-sequence perplexities into one dataset number."""
    if len(values) == 0:
        raise MetricError("cannot aggregate an empty list")
    if mode == "arithmetic":
        return sum(values) / len(values)
    if mode == "geometric":
        return math.exp(sum(math.log(v) for v in values) / len(values))
    raise ValueError(f"unknown aggregation mode {mode!r}")


def corpus_perplexity(sequences: Iterable[ScoredSequence]) -> float:
    """Token-weighted variant: exp of the whole-corpus loss.

    Equals the geometric mean of per-sequence perplexities only when all
    sequences have the same normalization length.
    """
    total_nll = 0.0
    total_t = 0
    for seq in sequences:
        if not seq.token_logprobs:
            raise MetricError("cannot score an empty sequence")
        total_nll -= sum(seq.token_logprobs)
        total_t += seq.t
    if total_t == 0:
        raise MetricError("cannot aggregate an empty corpus")
    return math.exp(total_nll / total_t)


def _batch_means(values: Sequence[float], batch_size: int) -> list[float]:
    if batch_size < 1:
        raise MetricError("batch_size must be positive")
    return [
        sum(values[i : i + batch_size]) / len(values[i : i + batch_size])
        for i in range(0, len(values), batch_size)
    ]


def bootstrap_mean_std(
    values: Sequence[float],
    n_resamples: int = 10_000,
    seed: int = 0,
    method: str = "montecarlo",
    batch_size: int | None = None,
) -> tuple[float, float]:
    """Mean and population std of bootstrap resample means.

    Each resample draws len(values) items with replacement; its statistic
    is the arithmetic mean. Draws are counter-based on (seed, resample
    index, position), so results do not depend on how the resample index
    space is partitioned across workers.

    ``method="exhaustive"`` enumerates all n^n equally likely resamples
    instead (only for n <= 4); ``batch_size`` first groups consecutive
    values into batch means and bootstraps those.
    """
    if len(values) == 0:
        raise MetricError("cannot bootstrap an empty list")
    if batch_size is not None:
        values = _batch_means(values, batch_size)
    data = np.asarray(values, dtype=np.float64)
    n = data.size
    if method == "exhaustive":
        if n > 4:
            raise MetricError(f"exhaustive enumeration infeasible for n={n}")
        means = np.array(
            [data[list(idx)].mean() for idx in itertools.product(range(n), repeat=n)]
        )
        return float(means.mean()), float(means.std())
    if method != "montecarlo":
        raise ValueError(f"unknown bootstrap method {method!r}")
    if n_resamples < 1:
        raise MetricError("n_resamples must be positive")
    resamples_per_block = max(1, _BOOTSTRAP_BLOCK // n)
    means = np.empty(n_resamples, dtype=np.float64)
    start = 0
    while start < n_resamples:
        count = min(resamples_per_block, n_resamples - start)
        idx = index_block(seed, start * n, count * n, n).reshape(count, n)
        means[start : start + count] = data[idx].mean(axis=1)
        start += count
    return float(means.mean()), float(means.std())


def summarize_perplexities(
    sequences: Sequence[ScoredSequence],
    n_resamples: int = 10_000,
    seed: int = 0,
    batch_size: int | None = None,
) -> PerplexitySummary:
    """Per-sequence perplexities plus both aggregates and bootstrap stats."""
    if len(sequences) == 0:
        raise MetricError("cannot summarize an empty collection")
    per_sequence = tuple(sequence_perplexity(seq) for seq in sequences)
    boot_mean, boot_std = bootstrap_mean_std(
        per_sequence, n_resamples=n_resamples, seed=seed, batch_size=batch_size
    )
    return PerplexitySummary(
        per_sequence=per_sequence,
        arithmetic_mean=aggregate_perplexity(per_sequence, "arithmetic"),
        geometric_mean=aggregate_perplexity(per_sequence, "geometric"),
        bootstrap_mean=boot_mean,
        bootstrap_std=boot_std,
        n_resamples=n_resamples,
        seed=seed,
    )


def exp_word_entropy(text: str) -> EntropyPoint:
    """Exponentiated Shannon entropy of the word-frequency distribution.

    1 means total repetition; the distinct-word count means every word is
    equally frequent. Tokenization is a plain whitespace split, no case
    folding, punctuation left attached. Empty text maps to (0, 1).
    """
    words = text.split()
    if not words:
        return EntropyPoint(0, 1.0)
    total = len(words)
    entropy = 0.0
    for count in Counter(words).values():
        f = count / total
        entropy -= f * math.log(f)
    return EntropyPoint(total, math.exp(entropy))


def cosine_similarity(u: Sequence[float], v: Sequence[float]) -> float:
    """Cosine of the angle between two vectors, in [-1, 1]."""
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricError(f"dimension mismatch: {a.shape} vs {b.shape}")
    aa = float(np.dot(a, a))
    bb = float(np.dot(b, b))
    if aa == 0.0 or bb == 0.0:
        raise MetricError("cosine similarity undefined for a zero vector")
    # sqrt(aa * bb) rather than |a| * |b|: exact for (anti)parallel vectors
    return max(-1.0, min(1.0, float(np.dot(a, b)) / math.sqrt(aa * bb)))


def detect_loss_steps(
    curve: LossCurve, plateau_tolerance: float, min_drop: float
) -> list[tuple[int, float]]:
    """Find epoch boundaries where a flat loss plateau drops to a lower one.

    A boundary at step b separates the points with step < b from those with
    step >= b (up to the next boundary). It is reported when both adjacent
    segments are plateaus (max - min <= plateau_tolerance) and the mean
    loss decreases by at least min_drop across it. Boundaries with an empty
    adjacent segment are skipped.
    """
    steps = [s for s, _ in curve.points]
    losses = [l for _, l in curve.points]
    cuts = [0]
    for b in curve.epoch_boundaries:
        lo = 0
        while lo < len(steps) and steps[lo] < b:
            lo += 1
        cuts.append(lo)
    cuts.append(len(steps))
    segments = [losses[a:b] for a, b in zip(cuts, cuts[1:])]
    detections = []
    for k, boundary in enumerate(curve.epoch_boundaries):
        before, after = segments[k], segments[k + 1]
        if not before or not after:
            continue
        if max(before) - min(before) > plateau_tolerance:
            continue
        if max(after) - min(after) > plateau_tolerance:
            continue
        drop = sum(before) / len(before) - sum(after) / len(after)
        if drop >= min_drop:
            detections.append((boundary, drop))
    return detections


def load_loss_curve(
    path: str | Path, epoch_boundaries: Sequence[int] | None = None
) -> LossCurve:
    """Read a loss log of newline-delimited {"step", "loss"[, "epoch"]} records.

    When ``epoch_boundaries`` is not given, records must carry an "epoch"
    field and a boundary is placed at the first step of each new epoch.
    """
    points: list[tuple[int, float]] = []
    derived: list[int] = []
    last_epoch = None
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                step = int(obj["step"])
                loss = float(obj["loss"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"bad loss record: {exc}", line=lineno) from exc
            points.append((step, loss))
            epoch = obj.get("epoch")
            if epoch is not None:
                if last_epoch is not None and epoch != last_epoch:
                    derived.append(step)
                last_epoch = epoch
    if epoch_boundaries is None:
        if not derived and last_epoch is None:
            raise FormatError(
                "no epoch fields in log and no explicit boundaries given"
            )
        epoch_boundaries = derived
    return LossCurve(points=tuple(points), epoch_boundaries=tuple(epoch_boundaries))
