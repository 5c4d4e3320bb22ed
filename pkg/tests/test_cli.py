import json
from pathlib import Path

from click.testing import CliRunner

import golden_fixture as golden
from absbench.cli import main

GOLDEN_REPORT = Path(__file__).parent / "data" / "golden_report.json"

# identical abstracts so every prompt is the same and one script covers all
ABSTRACT = "Alpha beta gamma. Delta epsilon zeta. Eta theta iota."
PROMPT = "Alpha beta gamma. Delta epsilon zeta."
TRUTH = "Eta theta iota."


def write_metadata(path: Path, n_hep_th=30, n_gr_qc=10):
    rows = []
    for i in range(n_hep_th):
        rows.append({"id": f"th.{i:05d}", "categories": "hep-th", "abstract": ABSTRACT})
    for i in range(n_gr_qc):
        rows.append({"id": f"gr.{i:05d}", "categories": "gr-qc", "abstract": ABSTRACT})
    rows.append(
        {
            "id": "bad.00001",
            "categories": "hep-th",
            "abstract": ABSTRACT,
            "comments": "withdrawn by the authors",
        }
    )
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")


def invoke(*args):
    runner = CliRunner()
    return runner.invoke(main, [str(a) for a in args], catch_exceptions=False)


class TestCurateSplitPairs:
    def test_chain(self, tmp_path):
        metadata = tmp_path / "metadata.jsonl"
        write_metadata(metadata)
        curated = tmp_path / "curated"
        result = invoke("curate", "--metadata", metadata, "--recipe", "s1",
                        "--seed", 5, "--out", curated)
        assert result.exit_code == 0, result.output
        summary = json.loads((curated / "curation_summary.json").read_text())
        assert summary["records"] == 30
        assert summary["rejected"]["withdrawn"] == 1

        splits = tmp_path / "splits"
        result = invoke("split", "--records", curated / "dataset.jsonl",
                        "--name", "s1", "--seed", 3, "--out", splits)
        assert result.exit_code == 0, result.output
        manifest = json.loads((splits / "manifest.json").read_text())
        assert manifest["counts"] == {"train": 21, "validation": 4, "test": 5}

        pairs_path = tmp_path / "pairs.jsonl"
        result = invoke("pairs", "--records", splits / "test.jsonl", "--out", pairs_path)
        assert result.exit_code == 0, result.output
        lines = pairs_path.read_text().splitlines()
        assert len(lines) == 5
        first = json.loads(lines[0])
        assert first["prompt"] == PROMPT
        assert first["ground_truth"] == TRUTH

    def test_curate_recipe_file(self, tmp_path):
        metadata = tmp_path / "metadata.jsonl"
        write_metadata(metadata)
        recipe = tmp_path / "recipe.yaml"
        recipe.write_text(
            "name: mix\ncomponents:\n"
            "  - category: hep-th\n    count: 8\n"
            "  - category: gr-qc\n    fraction: 0.5\n"
        )
        out = tmp_path / "curated"
        result = invoke("curate", "--metadata", metadata, "--recipe-file", recipe,
                        "--seed", 1, "--out", out)
        assert result.exit_code == 0, result.output
        records = (out / "dataset.jsonl").read_text().splitlines()
        assert len(records) == 13  # 8 + round_half_up(0.5 * 10)

    def test_unknown_recipe_fails_cleanly(self, tmp_path):
        metadata = tmp_path / "metadata.jsonl"
        write_metadata(metadata, n_gr_qc=0)
        result = CliRunner().invoke(
            main,
            ["curate", "--metadata", str(metadata), "--recipe", "s2",
             "--seed", "1", "--out", str(tmp_path / "x")],
        )
        assert result.exit_code != 0
        assert "s2" in result.output


class TestEvalAndRun:
    def write_config(self, tmp_path, server, extra=None):
        splits = golden.write_test_split(tmp_path / "splits")
        golden.script_server(server)
        raw = golden.config_dict(splits, server.url)
        raw["output_dir"] = str(tmp_path / "out")
        raw.update(extra or {})
        path = tmp_path / "run.json"
        path.write_text(json.dumps(raw))
        return path

    def test_eval_writes_report(self, tmp_path, mock_server):
        config = self.write_config(tmp_path, mock_server)
        result = invoke("eval", "--config", config, "--resamples", 100,
                        "--concurrency", 2)
        assert result.exit_code == 0, result.output
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert [m["name"] for m in report["models"]] == ["base", "tuned"]
        assert report["models"][0]["perplexity"]["n_resamples"] == 100

    def test_eval_metrics_override(self, tmp_path, mock_server):
        config = self.write_config(tmp_path, mock_server)
        result = invoke("eval", "--config", config, "--metrics", "perplexity",
                        "--out", tmp_path / "only_ppl")
        assert result.exit_code == 0, result.output
        report = json.loads((tmp_path / "only_ppl" / "report.json").read_text())
        assert report["models"][0]["entropy"] == []
        assert report["models"][0]["similarity"] is None

    def test_eval_backend_override(self, tmp_path, mock_server):
        config = self.write_config(
            tmp_path, mock_server,
            extra={"backends": [
                {"name": "base", "model": "base-8b", "url": "http://127.0.0.1:9/v1"},
                {"name": "tuned", "model": "tuned-8b", "url": "http://127.0.0.1:9/v1"},
            ]},
        )
        result = invoke("eval", "--config", config,
                        "--backend", f"base={mock_server.url}",
                        "--backend", f"tuned={mock_server.url}")
        assert result.exit_code == 0, result.output

    def test_run_chains_curation_to_report(self, tmp_path, mock_server):
        metadata = tmp_path / "metadata.jsonl"
        write_metadata(metadata)
        mock_server.script_scoring(PROMPT, " " + TRUTH, [-0.1, -0.2, -0.3])
        mock_server.script_completion(PROMPT, "some fresh words")
        raw = {
            "dataset": {
                "metadata": str(metadata),
                "recipe": "s1",
                "recipe_seed": 5,
                "split_seed": 3,
            },
            "backends": [{"name": "m", "model": "m-8b", "url": mock_server.url}],
            "metrics": {"resamples": 50, "entropy": True, "similarity": False},
            "output_dir": str(tmp_path / "out"),
        }
        config = tmp_path / "run.yaml"
        config.write_text(json.dumps(raw))
        result = invoke("run", "--config", config)
        assert result.exit_code == 0, result.output
        out = tmp_path / "out"
        assert (out / "dataset" / "manifest.json").exists()
        assert (out / "pairs.jsonl").exists()
        report = json.loads((out / "report.json").read_text())
        assert report["provenance"]["n_items"] == 5
        statuses = {i["status"] for i in report["models"][0]["items"]}
        assert statuses == {"ok"}


class TestReportCommand:
    def test_reemit_from_frozen_report(self, tmp_path):
        out = tmp_path / "emitted"
        result = invoke("report", "--report", GOLDEN_REPORT, "--out", out)
        assert result.exit_code == 0, result.output
        assert (out / "report_table.txt").exists()
        assert (out / "perplexity_vs_model.png").exists()
        # structured re-emission reproduces the input bytes
        assert (out / "report.json").read_bytes() == GOLDEN_REPORT.read_bytes()

    def test_formats_flag(self, tmp_path):
        out = tmp_path / "emitted"
        result = invoke("report", "--report", GOLDEN_REPORT, "--out", out,
                        "--formats", "table")
        assert result.exit_code == 0, result.output
        assert (out / "report_table.txt").exists()
        assert not (out / "report.json").exists()


class TestAnalyzeLoss:
    def test_detections_and_artifacts(self, tmp_path):
        log = tmp_path / "loss.jsonl"
        rows = [
            {"step": i, "loss": 1.0 if i < 4 else 0.7, "epoch": int(i >= 4)}
            for i in range(8)
        ]
        log.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        out = tmp_path / "analysis"
        result = invoke("analyze-loss", "--log", log, "--plateau-tolerance", 1e-9,
                        "--min-drop", 0.1, "--out", out)
        assert result.exit_code == 0, result.output
        assert "step 4" in result.output
        assert (out / "loss_steps.csv").exists()
        assert (out / "loss_curve.png").exists()

    def test_explicit_boundaries(self, tmp_path):
        log = tmp_path / "loss.jsonl"
        rows = [{"step": i, "loss": 0.9} for i in range(6)]
        log.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        result = invoke("analyze-loss", "--log", log, "--boundaries", "3",
                        "--plateau-tolerance", 1e-9, "--min-drop", 0.1)
        assert result.exit_code == 0, result.output
        assert "no step drops" in result.output


def test_version_flag():
    result = invoke("--version")
    assert result.exit_code == 0
