"""Command-line entry points.

Every command is a thin shell over the library: load inputs, run one
pipeline stage, write deterministic outputs (prediction logs, reports,
manifests), print a short status line.  Pipeline errors exit with a stable
code per error class — config 1, endpoint 2, data 3 — and emit a one-line
JSON object on stderr so wrapping scripts can branch on the failure kind.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence

import click
import numpy as np

from . import __version__
from .clustering import (
    SupportPair,
    cluster_support_set,
    pair_text,
    sample_demonstrations,
    save_support_set,
)
from .config import RunConfig, build_gateway, load_config, write_manifest
from .contexts import (
    ContextBundle,
    ContextCache,
    ContextGenerator,
    bundle_length_stats,
    export_contexts,
    load_bundles,
    save_bundles,
)
from .corpus import (
    BenchmarkRecord,
    load_benchmark,
    save_benchmark,
    summarize,
    synthetic_benchmark,
)
from .errors import ConfigError, CtxgenieError, DataError
from .evalsuite import (
    EvalReport,
    RerankTrial,
    accuracy,
    recall_curve,
    render_text_table,
    write_report,
)
from .evalsuite.metrics import SOURCE_RETRIEVED, TrialPassage
from .evalsuite.ragas import RagasSample, ragas_run
from .evalsuite.report import report_csv_rows, write_csv
from .evalsuite.sweeps import context_count_sweep, shuffle_summary, shuffle_sweep
from .gateway import LlmGateway
from .mockserver import MockEndpointServer
from .prompts import default_pair, load_shots, shots_directory
from .reader import (
    Reader,
    load_predictions,
    mixed_selection,
    write_predictions,
    write_timings,
)
from .retrieval import (
    CORPUS_SCOPES,
    SCOPE_KB_ONLY,
    VectorIndex,
    mixed_corpus,
    retrieve_with_rerank,
    split_documents,
)


@click.group(name="ctxgenie")
@click.version_option(version=__version__, prog_name="ctxgenie")
def cli() -> None:
    """Generate-then-read grounding for multiple-choice QA."""


def main() -> None:
    try:
        cli(standalone_mode=False)
    except CtxgenieError as exc:
        click.echo(
            json.dumps({"error": {"kind": exc.kind, "message": str(exc)}}),
            err=True,
        )
        raise SystemExit(exc.exit_code)
    except click.exceptions.Abort:
        raise SystemExit(130)
    except click.ClickException as exc:
        exc.show()
        raise SystemExit(exc.exit_code)


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _config(path: Optional[str]) -> RunConfig:
    return load_config(path) if path else RunConfig()


def _records(path: str, limit: Optional[int]) -> list[BenchmarkRecord]:
    records = load_benchmark(path)
    if limit is not None:
        records = records[:limit]
    if not records:
        raise DataError(f"benchmark {path} has no records")
    return records


def _reader_shots(config: RunConfig, records: Sequence[BenchmarkRecord], family: str, pair: Optional[str]):
    tag = records[0].dataset_tag
    pair_id = pair or config.prompts.shot_pair or default_pair(tag, family)
    return load_shots(shots_directory(tag), pair_id)


def _bundle_map(path: str, records: Sequence[BenchmarkRecord]) -> dict[str, ContextBundle]:
    bundles = {b.record_id: b for b in load_bundles(path)}
    missing = [r.id for r in records if r.id not in bundles]
    if missing:
        raise DataError(
            f"{len(missing)} records have no context bundle (first: {missing[0]!r}); "
            "run generate-contexts first"
        )
    return bundles


def _retrieved_passages(
    index: VectorIndex,
    gateway: LlmGateway,
    record: BenchmarkRecord,
    k_retrieve: int,
    k_keep: int,
) -> list[TrialPassage]:
    query_vector = gateway.embed([record.question])[0]
    result = retrieve_with_rerank(
        index,
        record.question,
        query_vector,
        gateway.rerank_score,
        k_retrieve=k_retrieve,
        k_keep=k_keep,
    )
    return result.passages()


def _grounding_map(
    grounding: str,
    config: RunConfig,
    gateway: LlmGateway,
    records: Sequence[BenchmarkRecord],
    bundles_path: Optional[str],
    index_dir: Optional[str],
) -> Optional[dict[str, list[TrialPassage]]]:
    if grounding == "none":
        return None
    mapping: dict[str, list[TrialPassage]] = {}
    if grounding in ("generated", "mixed"):
        if not bundles_path:
            raise ConfigError(f"--bundles is required for --grounding {grounding}")
        bundles = _bundle_map(bundles_path, records)
    if grounding in ("retrieved", "mixed"):
        if not index_dir:
            raise ConfigError(f"--index-dir is required for --grounding {grounding}")
        index = VectorIndex.load(index_dir)
    retrieval = config.retrieval
    for record in records:
        if grounding == "generated":
            mapping[record.id] = bundles[record.id].passages()
        elif grounding == "retrieved":
            mapping[record.id] = _retrieved_passages(
                index, gateway, record, retrieval.k_retrieve, retrieval.k_keep
            )
        else:  # mixed
            generated = bundles[record.id].passages()
            query_vector = gateway.embed([record.question])[0]
            result = retrieve_with_rerank(
                index,
                record.question,
                query_vector,
                gateway.rerank_score,
                k_retrieve=retrieval.k_retrieve,
                k_keep=retrieval.k_retrieve,  # keep the full candidate list
            )
            mapping[record.id] = mixed_selection(
                generated,
                result.passages(),
                gateway.rerank_score,
                record.question,
                k_keep=retrieval.k_keep,
            )
    return mapping


# ---------------------------------------------------------------------------
# Data commands
# ---------------------------------------------------------------------------


@cli.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--format",
    "fmt",
    type=click.Choice(["canonical", "medqa", "medmcqa", "mmlu"]),
    default="canonical",
    show_default=True,
)
@click.option("--dataset-tag", default=None, help="Tag stored on every record (defaults to the format name).")
@click.option("--subject", default=None, help="Subject label for formats that lack one.")
@click.option("--limit", type=int, default=None)
@click.option("--output", required=True, type=click.Path(dir_okay=False))
def ingest(input_path: str, fmt: str, dataset_tag: Optional[str], subject: Optional[str], limit: Optional[int], output: str) -> None:
    """Convert a source dataset into the canonical benchmark JSONL."""
    records = load_benchmark(input_path, fmt=fmt, dataset_tag=dataset_tag, subject=subject)
    if limit is not None:
        records = records[:limit]
    save_benchmark(records, output)
    click.echo(f"ingested {len(records)} records -> {output}")


@cli.command("make-synthetic")
@click.option("--n", type=int, default=32, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--dataset-tag", default="synthetic", show_default=True)
@click.option("--output", required=True, type=click.Path(dir_okay=False))
def make_synthetic(n: int, seed: int, dataset_tag: str, output: str) -> None:
    """Write a deterministic synthetic benchmark (for demos and smoke runs)."""
    records = synthetic_benchmark(n, seed=seed, dataset_tag=dataset_tag)
    save_benchmark(records, output)
    click.echo(f"wrote {len(records)} synthetic records -> {output}")


@cli.command()
@click.option("--benchmark", required=True, type=click.Path(exists=True, dir_okay=False))
def stats(benchmark: str) -> None:
    """Print dataset statistics for a canonical benchmark file."""
    records = load_benchmark(benchmark)
    summary = summarize(records)
    rows = [
        ["records", summary.n_records],
        ["mean question words", f"{summary.mean_question_words:.1f}"],
        ["max question words", summary.max_question_words],
    ]
    for arity, count in sorted(summary.arity_counts.items()):
        rows.append([f"{arity}-option records", count])
    click.echo(render_text_table(["statistic", "value"], rows))
    if summary.subject_counts:
        subject_rows = [[s, c] for s, c in sorted(summary.subject_counts.items())]
        click.echo("")
        click.echo(render_text_table(["subject", "records"], subject_rows))


# ---------------------------------------------------------------------------
# Pipeline commands
# ---------------------------------------------------------------------------


@cli.command("generate-contexts")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--benchmark", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--output", required=True, type=click.Path(dir_okay=False))
@click.option("--cache-dir", type=click.Path(file_okay=False), default=None)
@click.option("--limit", type=int, default=None)
def generate_contexts(config_path: Optional[str], benchmark: str, output: str, cache_dir: Optional[str], limit: Optional[int]) -> None:
    """Sample, scrub and persist context bundles for every record."""
    config = _config(config_path)
    records = _records(benchmark, limit)
    gateway = build_gateway(config)
    cache = ContextCache(cache_dir) if cache_dir else None
    generator = ContextGenerator(
        gateway,
        params=config.bundle.params(),
        n_focused=config.bundle.n_focused,
        n_free=config.bundle.n_free,
        cache=cache,
    )
    results = generator.generate_all(records)
    save_bundles([r.bundle for r in results], output)
    hits = sum(1 for r in results if r.from_cache)
    dropped = sum(r.scrub_dropped for r in results)
    regenerated = sum(r.regenerated for r in results)
    calls = gateway.metrics.get("generation")
    write_manifest(
        Path(output).with_suffix(".manifest.json"),
        command="generate-contexts",
        parameters={
            "bundle": config.to_dict()["bundle"],
            "n_records": len(records),
        },
        inputs={"benchmark": benchmark},
        outputs={"bundles": output},
    )
    click.echo(
        f"bundles={len(results)} cache_hits={hits} generation_calls={calls.calls if calls else 0} "
        f"scrubbed_sentences={dropped} regenerated={regenerated} -> {output}"
    )


@cli.command("bundle-stats")
@click.option("--bundles", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--bin-width", type=int, default=None, help="Histogram bin width in words.")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None)
def bundle_stats(bundles: str, bin_width: Optional[int], csv_path: Optional[str]) -> None:
    """Word-count statistics of stored context bundles."""
    stats_dict = bundle_length_stats(load_bundles(bundles), bin_width=bin_width)
    rows = [
        [view, s["n"], f"{s['mean_words']:.1f}", s["max_words"]]
        for view, s in stats_dict.items()
    ]
    click.echo(render_text_table(["view", "contexts", "mean words", "max words"], rows))
    if csv_path is not None:
        if bin_width is None:
            raise ConfigError("--csv requires --bin-width to produce histogram rows")
        hist_rows = [
            [view, bucket["lo"], bucket["hi"], bucket["count"]]
            for view, s in stats_dict.items()
            for bucket in s["histogram"]
        ]
        write_csv(["view", "lo", "hi", "count"], hist_rows, csv_path)
        click.echo(f"length histogram -> {csv_path}")


@cli.command("export-contexts")
@click.option("--bundles", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--output", required=True, type=click.Path(dir_okay=False))
def export_contexts_cmd(bundles: str, output: str) -> None:
    """Flatten stored bundles into one JSON line per generated context."""
    count = export_contexts(load_bundles(bundles), output)
    click.echo(f"exported {count} contexts -> {output}")


def _load_corpus_documents(path: Path) -> list[tuple[str, str]]:
    if path.is_dir():
        files = sorted(p for p in path.glob("*.txt") if p.is_file())
        if not files:
            raise DataError(f"corpus directory {path} contains no .txt files")
        return [(p.name, p.read_text(encoding="utf-8")) for p in files]
    if path.suffix == ".jsonl":
        documents = []
        with path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    documents.append((str(obj["id"]), str(obj["text"])))
                except (json.JSONDecodeError, KeyError) as exc:
                    raise DataError(f"{path}:{lineno}: corrupt document line ({exc})")
        if not documents:
            raise DataError(f"corpus file {path} has no documents")
        return documents
    return [(path.name, path.read_text(encoding="utf-8"))]


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option(
    "--scope",
    type=click.Choice(sorted(CORPUS_SCOPES)),
    default=SCOPE_KB_ONLY,
    show_default=True,
    help="Which generated contexts to merge into the knowledge-base corpus.",
)
@click.option("--test-bundles", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--train-bundles", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--output-dir", required=True, type=click.Path(file_okay=False))
def index(
    config_path: Optional[str],
    corpus: str,
    scope: str,
    test_bundles: Optional[str],
    train_bundles: Optional[str],
    output_dir: str,
) -> None:
    """Chunk a text corpus, embed the chunks and persist the vector index."""
    config = _config(config_path)
    gateway = build_gateway(config)
    documents = _load_corpus_documents(Path(corpus))
    kb_chunks = split_documents(
        documents,
        chunk_size=config.retrieval.chunk_size,
        chunk_overlap=config.retrieval.chunk_overlap,
    )
    corpus_set = mixed_corpus(
        kb_chunks,
        test_bundles=load_bundles(test_bundles) if test_bundles else (),
        train_bundles=load_bundles(train_bundles) if train_bundles else (),
        scope=scope,
        chunk_size=config.retrieval.chunk_size,
        chunk_overlap=config.retrieval.chunk_overlap,
    )
    if not corpus_set.chunks:
        raise DataError("corpus produced zero chunks")
    built = VectorIndex.build(
        corpus_set.chunks, gateway.embed, batch_size=config.retrieval.embed_batch_size
    )
    built.save(output_dir)
    corpus_path = Path(corpus)
    if corpus_path.is_dir():
        inputs = {
            f"corpus/{p.name}": p
            for p in sorted(corpus_path.glob("*.txt"))
            if p.is_file()
        }
    else:
        inputs = {"corpus": corpus_path}
    if test_bundles:
        inputs["test_bundles"] = Path(test_bundles)
    if train_bundles:
        inputs["train_bundles"] = Path(train_bundles)
    write_manifest(
        Path(output_dir) / "manifest.json",
        command="index",
        parameters={"retrieval": config.to_dict()["retrieval"], **corpus_set.counts()},
        inputs=inputs,
        outputs={
            "chunks": str(Path(output_dir) / VectorIndex.CHUNKS_FILE),
            "vectors": str(Path(output_dir) / VectorIndex.VECTORS_FILE),
        },
    )
    counts = corpus_set.counts()
    click.echo(
        f"indexed {len(documents)} documents as {counts['total']} chunks "
        f"(scope={scope} kb={counts['kb']} generated={counts['generated']} "
        f"dim={built.dim}) -> {output_dir}"
    )


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--benchmark", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--grounding",
    type=click.Choice(["none", "generated", "retrieved", "mixed"]),
    default="generated",
    show_default=True,
)
@click.option("--bundles", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--index-dir", type=click.Path(file_okay=False), default=None)
@click.option("--family", default=None, help="Prompt family override.")
@click.option("--shot-pair", default=None, help="Shot-pair override.")
@click.option("--k", "k_override", type=int, default=None, help="Context count override.")
@click.option("--limit", type=int, default=None)
@click.option("--output-dir", required=True, type=click.Path(file_okay=False))
def answer(
    config_path: Optional[str],
    benchmark: str,
    grounding: str,
    bundles: Optional[str],
    index_dir: Optional[str],
    family: Optional[str],
    shot_pair: Optional[str],
    k_override: Optional[int],
    limit: Optional[int],
    output_dir: str,
) -> None:
    """Answer a benchmark with the reader under the chosen grounding."""
    config = _config(config_path)
    records = _records(benchmark, limit)
    gateway = build_gateway(config)
    chosen_family = family or config.prompts.family
    shots = _reader_shots(config, records, chosen_family, shot_pair)
    if k_override is not None:
        k = k_override
    elif grounding == "none":
        k = 0
    else:
        k = config.reader.k_contexts
    grounding_map = _grounding_map(grounding, config, gateway, records, bundles, index_dir)
    reader = Reader(
        gateway,
        family=chosen_family,
        shots=shots.shots,
        k_contexts=k,
        max_new_tokens=config.reader.max_new_tokens,
        context_separator=config.prompts.context_separator,
    )
    predictions, timings = reader.answer_all(
        records, grounding_map, k, grounding_label=grounding
    )

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    predictions_path = out / "predictions.jsonl"
    report_path = out / "report.json"
    csv_path = out / "report.csv"
    write_predictions(predictions, predictions_path)
    write_timings([p.record_id for p in predictions], timings, out / "timings.jsonl")
    report = EvalReport.from_accuracy(
        benchmark=records[0].dataset_tag,
        family=chosen_family,
        grounding=grounding,
        k_contexts=k,
        report=accuracy(predictions, subjects={r.id: r.subject for r in records}),
        overflow_retries=sum(1 for p in predictions if p.overflow_retried),
        config=config.to_dict(),
        extras={"shot_pair": shots.pair_id},
    )
    write_report(report, report_path)
    headers, rows = report_csv_rows(report)
    write_csv(headers, rows, csv_path)
    inputs = {"benchmark": benchmark}
    if bundles:
        inputs["bundles"] = bundles
    write_manifest(
        out / "manifest.json",
        command="answer",
        parameters={
            "family": chosen_family,
            "grounding": grounding,
            "k_contexts": k,
            "shot_pair": shots.pair_id,
            "n_records": len(records),
        },
        inputs=inputs,
        outputs={
            "predictions": predictions_path,
            "report": report_path,
            "report_csv": csv_path,
        },
    )
    click.echo(
        f"answered {report.n} records: accuracy={report.accuracy:.4f} "
        f"parse_failures={report.parse_failures} overflow_retries={report.overflow_retries} "
        f"-> {predictions_path}"
    )


@cli.command()
@click.option("--predictions", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--benchmark", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--family", default="unknown")
@click.option("--grounding", default="unknown")
@click.option("--output", type=click.Path(dir_okay=False), default=None)
def evaluate(predictions: str, benchmark: Optional[str], family: str, grounding: str, output: Optional[str]) -> None:
    """Grade a stored prediction log offline."""
    preds = load_predictions(predictions)
    if not preds:
        raise DataError(f"prediction log {predictions} is empty")
    subjects = None
    tag = "unknown"
    if benchmark:
        records = load_benchmark(benchmark)
        subjects = {r.id: r.subject for r in records}
        tag = records[0].dataset_tag if records else "unknown"
    report = EvalReport.from_accuracy(
        benchmark=tag,
        family=family,
        grounding=grounding,
        k_contexts=max((p.k_contexts for p in preds), default=0),
        report=accuracy(preds, subjects=subjects),
        overflow_retries=sum(1 for p in preds if p.overflow_retried),
    )
    if output:
        write_report(report, output)
        headers, csv_rows = report_csv_rows(report)
        write_csv(headers, csv_rows, Path(output).with_suffix(".csv"))
    rows = [
        ["records", report.n],
        ["correct", report.n_correct],
        ["accuracy", f"{report.accuracy:.4f}"],
        ["parse failures", report.parse_failures],
        ["overflow retries", report.overflow_retries],
    ]
    click.echo(render_text_table(["metric", "value"], rows))
    if report.per_subject:
        click.echo("")
        subject_rows = [
            [subject, cell["n"], f"{cell['accuracy']:.4f}"]
            for subject, cell in sorted(report.per_subject.items())
        ]
        click.echo(render_text_table(["subject", "n", "accuracy"], subject_rows))


# ---------------------------------------------------------------------------
# Analysis commands
# ---------------------------------------------------------------------------


def _parse_int_list(raw: str, what: str) -> list[int]:
    try:
        values = [int(part) for part in raw.replace(" ", "").split(",") if part]
    except ValueError as exc:
        raise ConfigError(f"{what} must be a comma-separated list of integers: {raw!r}") from exc
    if not values:
        raise ConfigError(f"{what} must not be empty")
    return values


@cli.command("rerank-recall")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--benchmark", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--bundles", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--index-dir", required=True, type=click.Path(file_okay=False))
@click.option("--ks", default="1,3,5,8", show_default=True)
@click.option("--limit", type=int, default=None)
@click.option("--output", type=click.Path(dir_okay=False), default=None)
def rerank_recall(
    config_path: Optional[str],
    benchmark: str,
    bundles: str,
    index_dir: str,
    ks: str,
    limit: Optional[int],
    output: Optional[str],
) -> None:
    """How much of the reranked top-K is generated rather than retrieved."""
    config = _config(config_path)
    records = _records(benchmark, limit)
    gateway = build_gateway(config)
    bundle_map = _bundle_map(bundles, records)
    vector_index = VectorIndex.load(index_dir)
    k_values = _parse_int_list(ks, "--ks")
    trials = []
    for record in records:
        generated = bundle_map[record.id].passages()
        query_vector = gateway.embed([record.question])[0]
        hits = vector_index.search(query_vector, config.retrieval.k_retrieve)
        retrieved = [
            TrialPassage(
                text=vector_index.chunk(h.chunk_id).text,
                source=SOURCE_RETRIEVED,
                view=None,
            )
            for h in hits
        ]
        pool = generated + retrieved
        scores = gateway.rerank_score(record.question, [p.text for p in pool])
        trials.append(
            RerankTrial(
                record_id=record.id, passages=tuple(pool), scores=tuple(scores)
            )
        )
    curves = recall_curve(trials, ks=k_values)
    rows = [
        [k, f"{curves['generated'][k]:.2f}", f"{curves['option-free'][k]:.2f}"]
        for k in k_values
    ]
    click.echo(
        render_text_table(["K", "generated recall %", "option-free recall %"], rows)
    )
    if output:
        payload = {
            "n_trials": len(trials),
            "ks": k_values,
            "recall": {
                subset: {str(k): v for k, v in curve.items()}
                for subset, curve in curves.items()
            },
        }
        Path(output).write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        csv_path = Path(output).with_suffix(".csv")
        write_csv(
            ["subset", "k", "recall_pct"],
            [
                [subset, k, curves[subset][k]]
                for subset in sorted(curves)
                for k in k_values
            ],
            csv_path,
        )
        write_manifest(
            Path(output).with_suffix(".manifest.json"),
            command="rerank-recall",
            parameters={"ks": k_values, "n_trials": len(trials)},
            inputs={"benchmark": benchmark, "bundles": bundles},
            outputs={"recall": output, "recall_csv": csv_path},
        )
        click.echo(f"wrote {output} and {csv_path}")


@cli.command("shuffle-eval")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--benchmark", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--grounding",
    type=click.Choice(["none", "generated", "retrieved", "mixed"]),
    default="none",
    show_default=True,
)
@click.option("--bundles", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--index-dir", type=click.Path(file_okay=False), default=None)
@click.option("--seeds", default=None, help="Comma-separated shuffle seeds (defaults to the built-in set).")
@click.option("--family", default=None)
@click.option("--shot-pair", default=None)
@click.option("--limit", type=int, default=None)
@click.option("--output-dir", required=True, type=click.Path(file_okay=False))
def shuffle_eval(
    config_path: Optional[str],
    benchmark: str,
    grounding: str,
    bundles: Optional[str],
    index_dir: Optional[str],
    seeds: Optional[str],
    family: Optional[str],
    shot_pair: Optional[str],
    limit: Optional[int],
    output_dir: str,
) -> None:
    """Re-answer under option-order shuffles and test for position bias."""
    config = _config(config_path)
    records = _records(benchmark, limit)
    gateway = build_gateway(config)
    chosen_family = family or config.prompts.family
    shots = _reader_shots(config, records, chosen_family, shot_pair)
    k = 0 if grounding == "none" else config.reader.k_contexts
    grounding_map = _grounding_map(grounding, config, gateway, records, bundles, index_dir)
    reader = Reader(
        gateway,
        family=chosen_family,
        shots=shots.shots,
        k_contexts=k,
        max_new_tokens=config.reader.max_new_tokens,
        context_separator=config.prompts.context_separator,
    )

    def run_variant(variant: Sequence[BenchmarkRecord]):
        predictions, _ = reader.answer_all(
            variant, grounding_map, k, grounding_label=grounding
        )
        return predictions

    seed_values = (
        _parse_int_list(seeds, "--seeds") if seeds else list(config.seeds.shuffle)
    )
    rows = shuffle_sweep(run_variant, records, seeds=seed_values)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows_path = out / "shuffle_rows.jsonl"
    with rows_path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
    summary = shuffle_summary(rows)
    (out / "shuffle_summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    table_rows = []
    for row in rows:
        label = "base" if row.seed is None else str(row.seed)
        if row.bias is None:
            stat, p_display = "-", "-"
        else:
            stat = f"{row.bias.statistic:.3f}"
            p_display = row.bias.p_display
        table_rows.append([label, f"{row.accuracy:.4f}", row.parse_failures, stat, p_display])
    click.echo(
        render_text_table(
            ["variant", "accuracy", "parse failures", "chi2", "p"], table_rows
        )
    )
    csv_path = out / "shuffle_table.csv"
    write_csv(
        ["variant", "accuracy", "parse_failures", "chi2", "p"], table_rows, csv_path
    )
    write_manifest(
        out / "manifest.json",
        command="shuffle-eval",
        parameters={
            "family": chosen_family,
            "grounding": grounding,
            "k_contexts": k,
            "seeds": seed_values,
            "n_records": len(records),
        },
        inputs={"benchmark": benchmark},
        outputs={
            "rows": rows_path,
            "summary": out / "shuffle_summary.json",
            "table_csv": csv_path,
        },
    )
    click.echo(
        f"variants={summary['n_variants']} mean_accuracy={summary['mean_accuracy']:.4f} "
        f"-> {rows_path}"
    )


@cli.command("context-sweep")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--benchmark", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--bundles", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--ks", default="0,1,2,3,4,5", show_default=True)
@click.option("--family", default=None)
@click.option("--shot-pair", default=None)
@click.option("--limit", type=int, default=None)
@click.option("--output", type=click.Path(dir_okay=False), default=None)
def context_sweep(
    config_path: Optional[str],
    benchmark: str,
    bundles: str,
    ks: str,
    family: Optional[str],
    shot_pair: Optional[str],
    limit: Optional[int],
    output: Optional[str],
) -> None:
    """Accuracy as a function of how many generated contexts ground the reader."""
    config = _config(config_path)
    records = _records(benchmark, limit)
    gateway = build_gateway(config)
    chosen_family = family or config.prompts.family
    shots = _reader_shots(config, records, chosen_family, shot_pair)
    bundle_map = _bundle_map(bundles, records)
    grounding_map = {r.id: bundle_map[r.id].passages() for r in records}
    k_values = _parse_int_list(ks, "--ks")

    def run_at(k: int):
        reader = Reader(
            gateway,
            family=chosen_family,
            shots=shots.shots,
            k_contexts=k,
            max_new_tokens=config.reader.max_new_tokens,
            context_separator=config.prompts.context_separator,
        )
        predictions, _ = reader.answer_all(records, grounding_map if k > 0 else None, k)
        return accuracy(predictions)

    rows = context_count_sweep(run_at, ks=k_values)
    click.echo(
        render_text_table(
            ["k", "n", "accuracy", "parse failures"],
            [[r.k, r.n, f"{r.accuracy:.4f}", r.parse_failures] for r in rows],
        )
    )
    if output:
        payload = [r.to_dict() for r in rows]
        Path(output).write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        csv_path = Path(output).with_suffix(".csv")
        write_csv(
            ["k", "n", "accuracy", "parse_failures"],
            [[r.k, r.n, r.accuracy, r.parse_failures] for r in rows],
            csv_path,
        )
        write_manifest(
            Path(output).with_suffix(".manifest.json"),
            command="context-sweep",
            parameters={
                "family": chosen_family,
                "ks": k_values,
                "shot_pair": shots.pair_id,
                "n_records": len(records),
            },
            inputs={"benchmark": benchmark, "bundles": bundles},
            outputs={"sweep": output, "sweep_csv": csv_path},
        )
        click.echo(f"wrote {output} and {csv_path}")


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--benchmark", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--predictions", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--bundles", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--n-correct", type=int, default=150, show_default=True)
@click.option("--n-wrong", type=int, default=50, show_default=True)
@click.option("--seed", type=int, default=None, help="Sampling seed (defaults to seeds.base).")
@click.option("--output-dir", required=True, type=click.Path(file_okay=False))
def ragas(
    config_path: Optional[str],
    benchmark: str,
    predictions: str,
    bundles: str,
    n_correct: int,
    n_wrong: int,
    seed: Optional[int],
    output_dir: str,
) -> None:
    """Judge grounding quality on a sample of correct and wrong predictions."""
    config = _config(config_path)
    records = {r.id: r for r in _records(benchmark, None)}
    preds = load_predictions(predictions)
    bundle_map = {b.record_id: b for b in load_bundles(bundles)}
    gateway = build_gateway(config)
    usable = [p for p in preds if p.record_id in records and p.record_id in bundle_map]
    correct_preds = [p for p in usable if p.correct]
    wrong_preds = [p for p in usable if not p.correct]
    rng = np.random.Generator(
        np.random.PCG64(config.seeds.base if seed is None else seed)
    )

    def sample(pool: list, size: int) -> list:
        if size >= len(pool):
            return list(pool)
        picks = rng.choice(len(pool), size=size, replace=False)
        return [pool[i] for i in sorted(int(i) for i in picks)]

    chosen = sample(correct_preds, n_correct) + sample(wrong_preds, n_wrong)
    if not chosen:
        raise DataError("no predictions with matching records and bundles to judge")
    samples = []
    for prediction in chosen:
        record = records[prediction.record_id]
        bundle = bundle_map[prediction.record_id]
        samples.append(
            RagasSample(
                record_id=record.id,
                question=record.question,
                reference_answer=record.gold_text,
                model_answer=prediction.reply_text,
                contexts=tuple(p.text for p in bundle.passages()),
            )
        )
    result, judgments = ragas_run(gateway, samples)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "judgments.jsonl").open("w", encoding="utf-8") as fh:
        for judgment in judgments:
            fh.write(json.dumps(judgment.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
    (out / "grounding_quality.json").write_text(
        json.dumps(result.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    write_manifest(
        out / "manifest.json",
        command="ragas",
        parameters={
            "n_correct": n_correct,
            "n_wrong": n_wrong,
            "seed": config.seeds.base if seed is None else seed,
            "n_samples": result.n_samples,
        },
        inputs={"benchmark": benchmark, "predictions": predictions, "bundles": bundles},
        outputs={
            "judgments": out / "judgments.jsonl",
            "grounding_quality": out / "grounding_quality.json",
        },
    )
    faith = "n/a" if result.faithfulness is None else f"{result.faithfulness:.4f}"
    click.echo(
        f"judged {result.n_samples} samples: context_recall={result.context_recall:.4f} "
        f"context_precision={result.context_precision:.4f} faithfulness={faith} "
        f"zero_claim_excluded={result.n_zero_claim_excluded} -> {out}"
    )


@cli.command("cluster-prompt")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--pairs", required=True, type=click.Path(exists=True, dir_okay=False), help="JSONL of question/context pairs with a correct flag.")
@click.option("--k", type=int, default=5, show_default=True)
@click.option("--per-cluster", type=int, default=3, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--support-out", type=click.Path(dir_okay=False), default=None, help="Also persist the embedded support set as JSONL.")
@click.option("--output", required=True, type=click.Path(dir_okay=False))
def cluster_prompt(
    config_path: Optional[str],
    pairs: str,
    k: int,
    per_cluster: int,
    seed: Optional[int],
    support_out: Optional[str],
    output: str,
) -> None:
    """Cluster correct question-context pairs and pick demonstration sets."""
    config = _config(config_path)
    gateway = build_gateway(config)
    entries = []
    with Path(pairs).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                entries.append(
                    {
                        "record_id": str(obj["record_id"]),
                        "question": str(obj["question"]),
                        "context": str(obj["context"]),
                        "correct": bool(obj["correct"]),
                    }
                )
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataError(f"{pairs}:{lineno}: corrupt pair line ({exc})")
    kept = [e for e in entries if e["correct"]]
    if len(kept) < k:
        raise DataError(
            f"support set has {len(kept)} correct pairs; need at least k={k}"
        )
    texts = [pair_text(e["question"], e["context"]) for e in kept]
    batch = config.retrieval.embed_batch_size
    embeddings: list[Sequence[float]] = []
    for start in range(0, len(texts), batch):
        embeddings.extend(gateway.embed(texts[start : start + batch]))
    support = [
        SupportPair(
            question_id=entry["record_id"],
            question=entry["question"],
            context=entry["context"],
            embedding=tuple(float(x) for x in vector),
            correct=True,
        )
        for entry, vector in zip(kept, embeddings)
    ]
    if support_out:
        save_support_set(support, support_out)
    seed_value = config.seeds.base if seed is None else seed
    result, clusters = cluster_support_set(support, k=k, seed=seed_value)
    demos = sample_demonstrations(clusters, n=per_cluster, seed=seed_value)
    payload = {
        "n_pairs": len(entries),
        "n_support": len(support),
        "kept_ratio": len(support) / len(entries),
        "inertia": result.inertia,
        "n_iters": result.n_iters,
        "clusters": [
            {
                "cluster": demo.cluster,
                "short": demo.short,
                "members": [
                    {
                        "record_id": pair.question_id,
                        "question": pair.question,
                        "context": pair.context,
                    }
                    for pair in demo.pairs
                ],
            }
            for demo in demos
        ],
    }
    Path(output).write_text(
        json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    outputs: dict[str, str] = {"demonstrations": output}
    if support_out:
        outputs["support_set"] = support_out
    write_manifest(
        Path(output).with_suffix(".manifest.json"),
        command="cluster-prompt",
        parameters={"k": k, "per_cluster": per_cluster, "seed": seed_value},
        inputs={"pairs": pairs},
        outputs=outputs,
    )
    sizes = ",".join(str(len(demo.pairs)) for demo in demos)
    click.echo(
        f"clustered {len(support)} support pairs into {k} clusters "
        f"(picked {sizes}) -> {output}"
    )


@cli.command("mock-serve")
@click.option("--fixture", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=0, help="0 picks a free port.")
def mock_serve(fixture: str, host: str, port: int) -> None:
    """Serve deterministic mock endpoints described by a fixture file."""
    import yaml

    try:
        roles = yaml.safe_load(Path(fixture).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{fixture}: invalid fixture ({exc})") from exc
    if not isinstance(roles, dict) or not roles:
        raise ConfigError(f"{fixture}: fixture must map role names to policies")
    server = MockEndpointServer(roles, host=host, port=port)
    base = server.start()
    click.echo(f"mock endpoints at {base}")
    for role in sorted(roles):
        click.echo(f"  {role}: {server.url_for(role)}")
    click.echo("press Ctrl+C to stop")
    try:
        import time as _time

        while True:
            _time.sleep(3600)
    except KeyboardInterrupt:
        server.stop()


if __name__ == "__main__":
    main()
