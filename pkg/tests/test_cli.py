"""End-to-end CLI tests against the in-process mock endpoints.

One module-scoped fixture runs the whole pipeline once — generate, index,
answer under every grounding, then the analysis commands — and individual
tests assert on the artifacts it produced.  Error-path tests drive ``main``
directly to verify the exit-code and stderr contract.
"""

import json
import sys
import urllib.request
from pathlib import Path
from types import SimpleNamespace

import pytest
from click.testing import CliRunner

from ctxgenie.cli import cli, main
from ctxgenie.corpus import save_benchmark, synthetic_benchmark
from ctxgenie.mockserver import MockEndpointServer

pytestmark = pytest.mark.usefixtures("_no_ambient_endpoints")


def invoke(*args, expect=0):
    result = CliRunner().invoke(cli, list(args), catch_exceptions=False)
    assert result.exit_code == expect, f"ctxgenie {' '.join(args)}\n{result.output}"
    return result


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run every pipeline command once against mock endpoints."""
    tmp = tmp_path_factory.mktemp("cli")
    records = synthetic_benchmark(8, seed=0)
    bench = tmp / "bench.jsonl"
    save_benchmark(records, bench)

    corpus_dir = tmp / "corpus"
    corpus_dir.mkdir()
    for i in range(3):
        (corpus_dir / f"doc{i}.txt").write_text(
            (f"Paragraph {i} about ligand uptake and perfusion gradients. ") * 40
            + "\n\n"
            + "Second block on assay baselines and cohort relapse markers. " * 40,
            encoding="utf-8",
        )

    roles = {
        "generation": {"kind": "hash-text", "marker": "ctx", "leak_mod": 3},
        "reader": {"kind": "gold-letter", "records_path": str(bench)},
        "embedding": {"kind": "hash", "dim": 32},
        "rerank": {"kind": "marker", "marker": "ctx"},
        "judge": {"kind": "all-yes"},
    }
    server = MockEndpointServer(roles)
    server.start()

    config = {
        "data": {"dataset": str(bench), "tag": "canonical"},
        "endpoints": {
            role: {"url": server.url_for(role), "model": f"mock-{role}", "api": "chat"}
            for role in roles
        },
        "prompts": {"family": "zephyr"},
        "bundle": {"n_focused": 3, "n_free": 2},
        "reader": {"k_contexts": 5},
        "retrieval": {"chunk_size": 300, "chunk_overlap": 50, "k_retrieve": 10, "k_keep": 5},
        "seeds": {"base": 0, "shuffle": [4, 11]},
    }
    cfg = tmp / "config.json"
    cfg.write_text(json.dumps(config, indent=2), encoding="utf-8")

    bundles = tmp / "bundles.jsonl"
    cache = tmp / "cache"
    first = invoke(
        "generate-contexts", "--config", str(cfg), "--benchmark", str(bench),
        "--output", str(bundles), "--cache-dir", str(cache),
    )
    calls_after_first = server.call_stats()["by_role"]["generation"]
    invoke(
        "generate-contexts", "--config", str(cfg), "--benchmark", str(bench),
        "--output", str(bundles), "--cache-dir", str(cache),
    )
    calls_after_rerun = server.call_stats()["by_role"]["generation"]

    invoke(
        "bundle-stats", "--bundles", str(bundles), "--bin-width", "20",
        "--csv", str(tmp / "hist.csv"),
    )
    invoke("export-contexts", "--bundles", str(bundles), "--output", str(tmp / "flat.jsonl"))

    index_dir = tmp / "index"
    invoke("index", "--config", str(cfg), "--corpus", str(corpus_dir),
           "--output-dir", str(index_dir))
    index_mixed = tmp / "index-mixed"
    invoke("index", "--config", str(cfg), "--corpus", str(corpus_dir),
           "--scope", "kb+test-contexts", "--test-bundles", str(bundles),
           "--output-dir", str(index_mixed))

    answers = tmp / "answers"
    invoke("answer", "--config", str(cfg), "--benchmark", str(bench),
           "--grounding", "generated", "--bundles", str(bundles),
           "--output-dir", str(answers))
    for grounding, extra in [
        ("mixed", ["--bundles", str(bundles), "--index-dir", str(index_dir)]),
        ("retrieved", ["--index-dir", str(index_dir)]),
        ("none", []),
    ]:
        invoke("answer", "--config", str(cfg), "--benchmark", str(bench),
               "--grounding", grounding, *extra,
               "--output-dir", str(tmp / f"answers-{grounding}"))
    invoke("answer", "--config", str(cfg), "--benchmark", str(bench),
           "--grounding", "generated", "--bundles", str(bundles),
           "--output-dir", str(tmp / "answers2"))

    preds = answers / "predictions.jsonl"
    invoke("evaluate", "--predictions", str(preds), "--benchmark", str(bench),
           "--output", str(tmp / "eval.json"))
    invoke("rerank-recall", "--config", str(cfg), "--benchmark", str(bench),
           "--bundles", str(bundles), "--index-dir", str(index_dir),
           "--output", str(tmp / "recall.json"))
    invoke("shuffle-eval", "--config", str(cfg), "--benchmark", str(bench),
           "--grounding", "none", "--output-dir", str(tmp / "shuffle"))
    invoke("context-sweep", "--config", str(cfg), "--benchmark", str(bench),
           "--bundles", str(bundles), "--ks", "0,1,3,5",
           "--output", str(tmp / "sweep.json"))
    invoke("ragas", "--config", str(cfg), "--benchmark", str(bench),
           "--predictions", str(preds), "--bundles", str(bundles),
           "--n-correct", "4", "--n-wrong", "2", "--output-dir", str(tmp / "ragas"))

    pairs = tmp / "pairs.jsonl"
    bundle_objs = [json.loads(line) for line in bundles.read_text().splitlines()]
    with pairs.open("w", encoding="utf-8") as fh:
        for rec, bobj in zip(records, bundle_objs):
            fh.write(json.dumps({
                "record_id": rec.id,
                "question": rec.question,
                "context": bobj["contexts"][0]["text"],
                "correct": True,
            }) + "\n")
    invoke("cluster-prompt", "--config", str(cfg), "--pairs", str(pairs),
           "--k", "2", "--per-cluster", "2",
           "--support-out", str(tmp / "support.jsonl"),
           "--output", str(tmp / "demos.json"))

    yield SimpleNamespace(
        tmp=tmp,
        records=records,
        bench=bench,
        cfg=cfg,
        server=server,
        bundles=bundles,
        index_dir=index_dir,
        answers=answers,
        preds=preds,
        pairs=pairs,
        generate_output=first.output,
        calls_after_first=calls_after_first,
        calls_after_rerun=calls_after_rerun,
    )
    server.stop()


class TestGenerateContexts:
    def test_bundles_cover_every_record(self, pipeline):
        lines = pipeline.bundles.read_text(encoding="utf-8").splitlines()
        assert len(lines) == len(pipeline.records)
        ids = [json.loads(line)["record_id"] for line in lines]
        assert ids == [r.id for r in pipeline.records]

    def test_each_bundle_has_configured_shape(self, pipeline):
        bundle = json.loads(pipeline.bundles.read_text().splitlines()[0])
        views = [c["view"] for c in bundle["contexts"]]
        assert views == ["option-focused"] * 3 + ["option-free"] * 2

    def test_summary_line_reports_counts(self, pipeline):
        assert "bundles=8" in pipeline.generate_output
        assert "generation_calls=" in pipeline.generate_output

    def test_cache_rerun_makes_zero_generation_calls(self, pipeline):
        assert pipeline.calls_after_rerun == pipeline.calls_after_first

    def test_manifest_hashes_inputs_and_outputs(self, pipeline):
        manifest = json.loads(
            pipeline.bundles.with_suffix(".manifest.json").read_text(encoding="utf-8")
        )
        assert manifest["command"] == "generate-contexts"
        assert set(manifest["inputs"]) == {"benchmark"}
        assert set(manifest["outputs"]) == {"bundles"}
        assert len(manifest["inputs"]["benchmark"]) == 64
        assert manifest["parameters"]["n_records"] == 8


class TestBundleArtifacts:
    def test_histogram_csv_layout(self, pipeline):
        lines = (pipeline.tmp / "hist.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "view,lo,hi,count"
        sections = {line.split(",")[0] for line in lines[1:]}
        assert sections == {"all", "option_focused", "option_free"}

    def test_export_rows_carry_ids_and_text(self, pipeline):
        rows = [
            json.loads(line)
            for line in (pipeline.tmp / "flat.jsonl").read_text().splitlines()
        ]
        assert len(rows) == 8 * 5
        assert set(rows[0]) == {"id", "view", "ordinal", "text"}
        assert rows[0]["id"] == pipeline.records[0].id


class TestIndex:
    def test_index_files_written(self, pipeline):
        assert (pipeline.index_dir / "vectors.bin").exists()
        assert (pipeline.index_dir / "chunks.jsonl").exists()

    def test_manifest_hashes_each_corpus_file(self, pipeline):
        manifest = json.loads((pipeline.index_dir / "manifest.json").read_text())
        assert set(manifest["inputs"]) == {"corpus/doc0.txt", "corpus/doc1.txt", "corpus/doc2.txt"}
        assert set(manifest["outputs"]) == {"chunks", "vectors"}
        assert manifest["parameters"]["retrieval"]["chunk_size"] == 300

    def test_mixed_scope_appends_generated_chunks(self, pipeline):
        kb_only = json.loads((pipeline.index_dir / "manifest.json").read_text())
        mixed = json.loads((pipeline.tmp / "index-mixed" / "manifest.json").read_text())
        assert kb_only["parameters"]["generated"] == 0
        assert mixed["parameters"]["generated"] > 0
        assert mixed["parameters"]["total"] > kb_only["parameters"]["total"]
        assert mixed["inputs"]["test_bundles"] == json.loads(
            pipeline.bundles.with_suffix(".manifest.json").read_text()
        )["outputs"]["bundles"]


class TestAnswer:
    def test_gold_letter_mock_scores_perfectly(self, pipeline):
        report = json.loads((pipeline.answers / "report.json").read_text())
        assert report["accuracy"] == 1.0
        assert report["n"] == 8
        assert report["parse_failures"] == 0
        assert report["grounding"] == "generated"
        assert report["k_contexts"] == 5
        assert report["family"] == "zephyr"

    def test_report_embeds_config_snapshot(self, pipeline):
        report = json.loads((pipeline.answers / "report.json").read_text())
        assert report["config"]["retrieval"]["chunk_size"] == 300
        assert report["config"]["seeds"]["shuffle"] == [4, 11]
        assert report["extras"]["shot_pair"]

    def test_predictions_log_is_canonical(self, pipeline):
        rows = [json.loads(line) for line in pipeline.preds.read_text().splitlines()]
        assert len(rows) == 8
        for row in rows:
            assert "latency" not in row
            assert row["grounding"] == "generated"
            assert row["extracted_letter"] is not None

    def test_timings_sidecar_rows(self, pipeline):
        rows = [
            json.loads(line)
            for line in (pipeline.answers / "timings.jsonl").read_text().splitlines()
        ]
        assert [r["record_id"] for r in rows] == [r.id for r in pipeline.records]
        assert all(r["seconds"] > 0 for r in rows)

    def test_dual_runs_are_byte_identical(self, pipeline):
        again = pipeline.tmp / "answers2"
        assert pipeline.preds.read_bytes() == (again / "predictions.jsonl").read_bytes()
        assert (pipeline.answers / "report.json").read_bytes() == (
            again / "report.json"
        ).read_bytes()

    def test_every_grounding_mode_reports_itself(self, pipeline):
        for grounding in ("mixed", "retrieved", "none"):
            report = json.loads(
                (pipeline.tmp / f"answers-{grounding}" / "report.json").read_text()
            )
            assert report["grounding"] == grounding
            assert report["n"] == 8
        none_report = json.loads((pipeline.tmp / "answers-none" / "report.json").read_text())
        assert none_report["k_contexts"] == 0

    def test_report_csv_matches_report(self, pipeline):
        lines = (pipeline.answers / "report.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "section,n,n_correct,accuracy,parse_failures"
        all_row = lines[1].split(",")
        assert all_row[0] == "all"
        assert all_row[1] == "8"
        assert float(all_row[3]) == 1.0

    def test_manifest_names_all_artifacts(self, pipeline):
        manifest = json.loads((pipeline.answers / "manifest.json").read_text())
        assert manifest["command"] == "answer"
        assert set(manifest["inputs"]) == {"benchmark", "bundles"}
        assert set(manifest["outputs"]) == {"predictions", "report", "report_csv"}
        assert manifest["parameters"]["grounding"] == "generated"
        assert manifest["parameters"]["k_contexts"] == 5


class TestEvaluate:
    def test_offline_report_matches_online(self, pipeline):
        offline = json.loads((pipeline.tmp / "eval.json").read_text())
        online = json.loads((pipeline.answers / "report.json").read_text())
        assert offline["accuracy"] == online["accuracy"]
        assert offline["n"] == online["n"]
        assert offline["per_subject"] == online["per_subject"]
        assert (pipeline.tmp / "eval.csv").exists()


class TestRerankRecall:
    def test_payload_has_curves_for_both_subsets(self, pipeline):
        payload = json.loads((pipeline.tmp / "recall.json").read_text())
        assert payload["n_trials"] == 8
        assert payload["ks"] == [1, 3, 5, 8]
        assert set(payload["recall"]) == {"generated", "option-free"}
        for curve in payload["recall"].values():
            assert set(curve) == {"1", "3", "5", "8"}
            assert all(0.0 <= v <= 100.0 for v in curve.values())

    def test_marker_reranker_favours_generated(self, pipeline):
        payload = json.loads((pipeline.tmp / "recall.json").read_text())
        assert payload["recall"]["generated"]["5"] == 100.0

    def test_csv_and_manifest_written(self, pipeline):
        lines = (pipeline.tmp / "recall.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "subset,k,recall_pct"
        assert len(lines) == 1 + 2 * 4
        manifest = json.loads((pipeline.tmp / "recall.manifest.json").read_text())
        assert manifest["command"] == "rerank-recall"


class TestShuffleEval:
    def test_rows_cover_base_and_seeds(self, pipeline):
        rows = [
            json.loads(line)
            for line in (pipeline.tmp / "shuffle" / "shuffle_rows.jsonl").read_text().splitlines()
        ]
        assert [r["seed"] for r in rows] == [None, 4, 11]
        assert all(r["accuracy"] == 1.0 for r in rows)

    def test_summary_aggregates(self, pipeline):
        summary = json.loads((pipeline.tmp / "shuffle" / "shuffle_summary.json").read_text())
        assert summary["n_variants"] == 3
        assert summary["mean_accuracy"] == 1.0

    def test_table_csv_header(self, pipeline):
        lines = (pipeline.tmp / "shuffle" / "shuffle_table.csv").read_text().splitlines()
        assert lines[0] == "variant,accuracy,parse_failures,chi2,p"
        assert lines[1].startswith("base,")


class TestContextSweep:
    def test_rows_follow_requested_ks(self, pipeline):
        payload = json.loads((pipeline.tmp / "sweep.json").read_text())
        assert [row["k"] for row in payload] == [0, 1, 3, 5]
        assert all(row["n"] == 8 for row in payload)
        grounded = [row["accuracy"] for row in payload if row["k"] > 0]
        assert all(a == 1.0 for a in grounded)

    def test_csv_layout(self, pipeline):
        lines = (pipeline.tmp / "sweep.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "k,n,accuracy,parse_failures"
        assert len(lines) == 5


class TestRagas:
    def test_quality_summary(self, pipeline):
        payload = json.loads((pipeline.tmp / "ragas" / "grounding_quality.json").read_text())
        assert payload["n_samples"] == 4  # only 4 correct predictions exist to sample
        assert payload["context_recall"] == 1.0
        assert payload["context_precision"] == 1.0

    def test_judgment_rows_persist_prompts(self, pipeline):
        rows = [
            json.loads(line)
            for line in (pipeline.tmp / "ragas" / "judgments.jsonl").read_text().splitlines()
        ]
        assert len(rows) == 4
        assert all("prompts" in row for row in rows)


class TestClusterPrompt:
    def test_payload_layout(self, pipeline):
        payload = json.loads((pipeline.tmp / "demos.json").read_text())
        assert payload["n_pairs"] == 8
        assert payload["n_support"] == 8
        assert payload["kept_ratio"] == 1.0
        assert len(payload["clusters"]) == 2
        for cluster in payload["clusters"]:
            assert len(cluster["members"]) <= 2
            assert set(cluster["members"][0]) == {"record_id", "question", "context"}

    def test_support_set_persisted(self, pipeline):
        rows = [
            json.loads(line)
            for line in (pipeline.tmp / "support.jsonl").read_text().splitlines()
        ]
        assert len(rows) == 8
        assert all(row["correct"] for row in rows)

    def test_too_few_correct_pairs_is_a_data_error(self, pipeline):
        thin = pipeline.tmp / "thin_pairs.jsonl"
        rows = [json.loads(line) for line in pipeline.pairs.read_text().splitlines()]
        for row in rows[2:]:
            row["correct"] = False
        thin.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
        result = CliRunner().invoke(
            cli,
            ["cluster-prompt", "--config", str(pipeline.cfg), "--pairs", str(thin),
             "--k", "5", "--per-cluster", "2", "--output", str(pipeline.tmp / "nope.json")],
        )
        assert result.exit_code != 0
        assert isinstance(result.exception, Exception)


class TestDataCommands:
    def test_make_synthetic_then_stats(self, tmp_path):
        out = tmp_path / "synth.jsonl"
        invoke("make-synthetic", "--n", "6", "--seed", "3", "--output", str(out))
        assert len(out.read_text().splitlines()) == 6
        result = invoke("stats", "--benchmark", str(out))
        assert "records" in result.output
        assert "6" in result.output

    def test_ingest_canonical_round_trip(self, tmp_path):
        src = tmp_path / "src.jsonl"
        save_benchmark(synthetic_benchmark(4, seed=1), src)
        out = tmp_path / "converted.jsonl"
        invoke("ingest", "--input", str(src), "--format", "canonical",
               "--limit", "3", "--output", str(out))
        assert len(out.read_text().splitlines()) == 3


def run_main(monkeypatch, capsys, args):
    monkeypatch.setattr(sys, "argv", ["ctxgenie", *args])
    with pytest.raises(SystemExit) as excinfo:
        main()
    return excinfo.value.code, capsys.readouterr().err


class TestExitCodes:
    def test_config_error_exits_1_with_json(self, pipeline, monkeypatch, capsys, tmp_path):
        code, err = run_main(
            monkeypatch, capsys,
            ["bundle-stats", "--bundles", str(pipeline.bundles),
             "--csv", str(tmp_path / "x.csv")],
        )
        assert code == 1
        payload = json.loads(err)
        assert payload["error"]["kind"] == "config"
        assert "--bin-width" in payload["error"]["message"]

    def test_endpoint_error_exits_2(self, pipeline, monkeypatch, capsys, tmp_path):
        config = json.loads(pipeline.cfg.read_text())
        for spec in config["endpoints"].values():
            spec["url"] = "http://127.0.0.1:9/v1"  # nothing listens on port 9
            spec["retries"] = 0
        bad_cfg = tmp_path / "bad.json"
        bad_cfg.write_text(json.dumps(config), encoding="utf-8")
        code, err = run_main(
            monkeypatch, capsys,
            ["answer", "--config", str(bad_cfg), "--benchmark", str(pipeline.bench),
             "--grounding", "none", "--output-dir", str(tmp_path / "out")],
        )
        assert code == 2
        assert json.loads(err)["error"]["kind"] == "endpoint"

    def test_data_error_exits_3(self, pipeline, monkeypatch, capsys, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("", encoding="utf-8")
        code, err = run_main(
            monkeypatch, capsys,
            ["answer", "--config", str(pipeline.cfg), "--benchmark", str(empty),
             "--grounding", "none", "--output-dir", str(tmp_path / "out")],
        )
        assert code == 3
        assert json.loads(err)["error"]["kind"] == "data"

    def test_missing_bundles_flag_is_config_error(self, pipeline, monkeypatch, capsys, tmp_path):
        code, err = run_main(
            monkeypatch, capsys,
            ["answer", "--config", str(pipeline.cfg), "--benchmark", str(pipeline.bench),
             "--grounding", "generated", "--output-dir", str(tmp_path / "out")],
        )
        assert code == 1
        assert "--bundles" in json.loads(err)["error"]["message"]


class TestAdminEndpoint:
    def test_admin_calls_counts_all_roles(self, pipeline):
        with urllib.request.urlopen(pipeline.server.base_url + "/admin/calls") as resp:
            admin = json.loads(resp.read())
        assert admin["total"] > 0
        for role in ("generation", "reader", "embedding", "rerank", "judge"):
            assert admin["by_role"][role] > 0
