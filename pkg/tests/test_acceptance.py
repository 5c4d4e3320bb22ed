"""Acceptance suite: one test per criterion, at the stated tolerances.

The terminal summary hook in conftest prints one PASS/FAIL line per
criterion at the end of the run:

    pytest tests/test_acceptance.py -v
"""

import itertools
import json
import math
import time
from pathlib import Path

import numpy as np

import golden_fixture as golden
from absbench.corpus import (
    AbstractRecord,
    CuratedDataset,
    DatasetRecipe,
    compose_dataset,
    split_sizes,
    split_tvt,
)
from absbench.harness import config_from_dict, run_eval
from absbench.metrics import (
    LossCurve,
    ScoredSequence,
    aggregate_perplexity,
    bootstrap_mean_std,
    detect_loss_steps,
    exp_word_entropy,
    sequence_perplexity,
)
from absbench.protocol import make_prompt_pair, normalize_whitespace
from absbench.reference import published_perplexity, published_similarity
from absbench.report import emit_report
from absbench.rng import uniform_block

README = Path(__file__).parent.parent / "README.md"
GOLDEN_REPORT = Path(__file__).parent / "data" / "golden_report.json"


def test_c01_toy_perplexities_exact():
    """Single-sequence and aggregated toy perplexities, 1e-9 relative."""
    rel = 1e-9
    # context-1: every sequence scores probabilities (2/3, 1/2) over T=3
    context1 = ScoredSequence((math.log(2 / 3), math.log(1 / 2)), norm_length=3)
    assert math.isclose(sequence_perplexity(context1), 3 ** (1 / 3), rel_tol=rel)
    # context-2: per-sequence values {2^(1/3), 2^(1/3), 1}
    context2 = [
        ScoredSequence((math.log(1 / 2),), norm_length=3),
        ScoredSequence((math.log(1 / 2),), norm_length=3),
        ScoredSequence((0.0,), norm_length=3),
    ]
    values = [sequence_perplexity(s) for s in context2]
    for got, want in zip(values, (2 ** (1 / 3), 2 ** (1 / 3), 1.0)):
        assert math.isclose(got, want, rel_tol=rel)
    assert math.isclose(
        aggregate_perplexity(values, "geometric"), 2 ** (2 / 9), rel_tol=rel
    )
    assert math.isclose(
        aggregate_perplexity(values, "arithmetic"),
        (2 * 2 ** (1 / 3) + 1) / 3,
        rel_tol=rel,
    )


def test_c02_entropy_footnote_exact():
    """exp-entropy of 'cat cat cat' is 1 and of 'cat dog horse' is 3, 1e-12."""
    assert abs(exp_word_entropy("cat cat cat").exp_entropy - 1.0) <= 1e-12
    assert abs(exp_word_entropy("cat dog horse").exp_entropy - 3.0) <= 1e-12


def test_c03_am_gm_fuzz():
    """Arithmetic >= geometric over 1e5 random lists, equality iff constant."""
    started = time.monotonic()
    n_lists = 100_000
    u = uniform_block(31337, 0, n_lists * 9).tolist()
    cursor = 0
    for index in range(n_lists):
        length = 1 + int(u[cursor] * 8)
        cursor += 1
        if index % 20 == 0:  # sprinkle constant lists to hit the equality branch
            values = [1.0 + 9.0 * u[cursor]] * length
            cursor += 1
        else:
            values = [1.0 + 9.0 * u[cursor + i] for i in range(length)]
            cursor += length
        am = sum(values) / length
        gm = math.exp(sum(map(math.log, values)) / length)
        assert am >= gm - 1e-12
        if max(values) - min(values) <= 1e-15:
            assert abs(am - gm) <= 1e-12 * max(am, 1.0)
        elif max(values) - min(values) > 1e-6:
            assert am > gm
    assert time.monotonic() - started < 10.0


def test_c04_bootstrap_matches_enumeration_oracle():
    """Monte-Carlo bootstrap vs exhaustive enumeration, within 0.01/0.01."""
    started = time.monotonic()
    grid = (1.0, 2.0, 3.0)
    checked = 0
    for size in (1, 2, 3, 4):
        for values in itertools.combinations_with_replacement(grid, size):
            # independent oracle: enumerate all size^size equally likely
            # resamples directly
            data = np.asarray(values)
            resample_means = [
                data[list(idx)].mean()
                for idx in itertools.product(range(size), repeat=size)
            ]
            oracle_mean = float(np.mean(resample_means))
            oracle_std = float(np.std(resample_means))
            mc_mean, mc_std = bootstrap_mean_std(
                values, n_resamples=100_000, seed=2025
            )
            assert abs(mc_mean - oracle_mean) < 0.01, values
            assert abs(mc_std - oracle_std) < 0.01, values
            checked += 1
    assert checked == 34
    assert time.monotonic() - started < 60.0


def _synthetic_pool(category: str, size: int) -> list[AbstractRecord]:
    return [
        AbstractRecord(f"{category}/{i:07d}", category, f"Entry {i}. Tail.")
        for i in range(size)
    ]


def test_c05_curation_determinism_and_s9_fraction():
    """Exact target sizes, exact seeded ordering, and the published fraction."""
    # the published ratio |hep-th| / (|hep-ph| + |gr-qc|) with the snapshot
    # pool sizes that produce it
    fraction = 0.5379232194539302
    hep_th_size = 105_384
    pools = {
        "hep-ph": _synthetic_pool("hep-ph", 132_396),
        "gr-qc": _synthetic_pool("gr-qc", 63_513),
    }
    recipe = DatasetRecipe(
        "s9", (("hep-ph", fraction), ("gr-qc", fraction)), shuffle_seed=99
    )
    dataset = compose_dataset(recipe, pools)
    assert abs(len(dataset.records) - hep_th_size) <= 2  # ±1 per component
    again = compose_dataset(recipe, pools)
    assert [r.arxiv_id for r in again.records] == [r.arxiv_id for r in dataset.records]

    # exact target size with count components
    small = {
        "hep-ph": _synthetic_pool("hep-ph", 400),
        "gr-qc": _synthetic_pool("gr-qc", 200),
    }
    sized = DatasetRecipe(
        "sized", (("hep-ph", 300), ("gr-qc", 150)), shuffle_seed=4, target_size=420
    )
    assert len(compose_dataset(sized, small).records) == 420


def test_c06_split_rule_exactness():
    """n = 105,384 splits into (73768, 15807, 15809)."""
    assert split_sizes(105_384) == (73_768, 15_807, 15_809)
    dataset = CuratedDataset("s1", _synthetic_pool("hep-th", 105_384))
    result = split_tvt(dataset, 7)
    assert result.split_counts() == {
        "train": 73_768,
        "validation": 15_807,
        "test": 15_809,
    }


def test_c07_protocol_reconstruction_1000_abstracts():
    """Every pair reconstructs its abstract; boundary checked by oracle."""
    started = time.monotonic()
    words = ["flux", "brane", "dual", "Gauge2", "q", "modulus"]
    u = uniform_block(424242, 0, 70_000).tolist()
    cursor = 0
    for case in range(1000):
        n_sentences = 1 + int(u[cursor] * 7)
        cursor += 1
        sentences = []
        for _ in range(n_sentences):
            n_words = 2 + int(u[cursor] * 6)
            cursor += 1
            sentence = " ".join(
                words[int(u[cursor + i] * len(words))] for i in range(n_words)
            )
            cursor += n_words
            sentences.append(sentence + ".")
        abstract = " ".join(sentences)
        record = AbstractRecord(f"syn/{case}", "hep-th", abstract)
        pair = make_prompt_pair(record)
        rebuilt = normalize_whitespace(pair.prompt + " " + pair.ground_truth)
        assert rebuilt == normalize_whitespace(abstract)
        # oracle: count terminal-punctuation boundaries by character scan
        oracle_sentences = 1 + sum(
            1
            for i, ch in enumerate(abstract)
            if ch in ".!?" and i + 1 < len(abstract) and abstract[i + 1].isspace()
        )
        expected_units = oracle_sentences
        if oracle_sentences == 1:
            expected_units = len(abstract.split())
        assert pair.n_units == expected_units
        assert pair.split_index == math.ceil(pair.n_units / 2)
    assert time.monotonic() - started < 5.0


def test_c08_end_to_end_golden_run(mock_server, tmp_path):
    """Byte-identical reports across runs and concurrency 1, 4, 16."""
    started = time.monotonic()
    splits = golden.write_test_split(tmp_path / "splits")
    golden.script_server(mock_server)

    outputs = []
    for index, concurrency in enumerate((1, 1, 4, 16)):
        config = config_from_dict(
            golden.config_dict(splits, mock_server.url, concurrency=concurrency)
        )
        report = run_eval(config)
        out_dir = tmp_path / f"run{index}"
        emit_report(report, out_dir)
        outputs.append({p.name: p.read_bytes() for p in sorted(out_dir.iterdir())})
    for other in outputs[1:]:
        assert other == outputs[0]

    # matches the frozen golden report computed once from the scripted
    # logprobs and verified against the metric oracles
    produced = (tmp_path / "run0" / "report.json").read_bytes()
    assert produced == GOLDEN_REPORT.read_bytes()

    # oracle cross-checks on the produced numbers
    report = json.loads(produced)
    for model_entry, model_id in zip(report["models"], ("base-8b", "tuned-8b")):
        expected = golden.expected_perplexities(model_id)
        got = model_entry["perplexity"]["per_sequence"]
        for g, w in zip(got, expected):
            assert math.isclose(g, w, rel_tol=1e-12)
        # bootstrap against the enumeration oracle (27 equally likely
        # resamples of the three per-sequence values)
        data = np.asarray(expected)
        means = [
            data[list(idx)].mean() for idx in itertools.product(range(3), repeat=3)
        ]
        assert abs(model_entry["perplexity"]["bootstrap_mean"] - np.mean(means)) < 0.02
        assert abs(model_entry["perplexity"]["bootstrap_std"] - np.std(means)) < 0.02
    assert time.monotonic() - started < 10.0


def test_c09_published_numbers_shipped_not_reproduced():
    """Table-3 values and similarity stats ship as reference data only.

    Reproducing them needs the actual 8B models on a live endpoint, so the
    criterion is that the data and the regeneration procedure are present.
    """
    table = published_perplexity()
    assert table["Llama"] == {"lora_all": 11.20, "lora_qkv": 11.20}
    assert table["s3"]["lora_all"] == 9.83
    assert table["s9"]["lora_all"] == 12.16
    assert len(table) == 11
    similarity = published_similarity()
    assert similarity["base"] == {"mean": 0.88, "std": 0.08}
    assert similarity["fine_tuned"] == {"mean": 0.90, "std": 0.07}
    readme = README.read_text(encoding="utf-8")
    assert "Reproducing the published numbers" in readme


def test_c10_loss_step_detection():
    """Two 0.2-drops on the three-plateau curve; none on smooth decay."""
    points = []
    boundaries = []
    step = 0
    for epoch, level in enumerate((1.0, 0.8, 0.6)):
        if epoch:
            boundaries.append(step)
        for _ in range(12):
            points.append((step, level))
            step += 1
    curve = LossCurve(points=tuple(points), epoch_boundaries=tuple(boundaries))
    detections = detect_loss_steps(curve, plateau_tolerance=1e-9, min_drop=0.1)
    assert [b for b, _ in detections] == boundaries
    for _, drop in detections:
        assert abs(drop - 0.2) <= 1e-12

    smooth = LossCurve(
        points=tuple((i, 1.5 * math.exp(-i / 9.0)) for i in range(36)),
        epoch_boundaries=(12, 24),
    )
    # within-epoch range of the decay exceeds the plateau tolerance
    assert detect_loss_steps(smooth, plateau_tolerance=0.05, min_drop=0.01) == []
