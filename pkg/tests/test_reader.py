"""Reply parsing, the reader loop, grounding selection, and prediction logs."""

import json
import random
import string

import pytest
from hypothesis import given, strategies as st

from conftest import profiles_for
from ctxgenie.contexts import GeneratedContext
from ctxgenie.errors import ContextWindowExceeded, DataError
from ctxgenie.evalsuite.metrics import TrialPassage
from ctxgenie.gateway import LlmGateway
from ctxgenie.prompts import load_shots
from ctxgenie.reader import (
    GROUNDING_MODES,
    Prediction,
    Reader,
    extract_choice,
    load_predictions,
    mixed_selection,
    write_predictions,
    write_timings,
)


class TestExtractChoice:
    @pytest.mark.parametrize(
        "reply,expected",
        [
            ("The answer is (B).", "B"),
            ("The answer is B", "B"),
            ("the answer is: C, clearly.", "C"),
            ("I think the answer is (D) because...", "D"),
            ("(A) Aortic dissection", "A"),
            ("B. Aortic dissection", "B"),
            ("C) something", "C"),
            ("  (E) leading spaces count", "E"),
            ("Option B seems right", "B"),
            ("A", "A"),
            ("It could be B or maybe not", "B"),
        ],
    )
    def test_parses_five_option_replies(self, reply, expected):
        assert extract_choice(reply, 5) == expected

    def test_verdict_rule_wins_over_leading_marker(self):
        assert extract_choice("(A) ... but the answer is (C).", 5) == "C"

    def test_verdict_out_of_range_is_final(self):
        # rule 1 matched E; with 4 options that verdict is unparseable,
        # and the in-range (A) marker must NOT rescue it.
        assert extract_choice("The answer is (E). (A) alt", 4) is None

    def test_leading_marker_out_of_range_is_final(self):
        assert extract_choice("E) too far\nA is fine", 4) is None

    def test_standalone_scan_skips_out_of_range_letters(self):
        # rule 3 only: E is out of range for 4 options, B is in range
        assert extract_choice("Either E or B fits", 4) == "B"

    def test_standalone_scan_limited_to_first_line(self):
        assert extract_choice("no verdict here\nB", 4) is None

    def test_lowercase_letters_do_not_match(self):
        assert extract_choice("the option b looks right", 4) is None

    def test_embedded_capitals_do_not_match(self):
        assert extract_choice("CT and MRI findings", 4) is None

    def test_empty_and_garbage(self):
        assert extract_choice("", 4) is None
        assert extract_choice("no letters at all", 4) is None

    def test_n_options_validation(self):
        with pytest.raises(DataError):
            extract_choice("A", 0)
        with pytest.raises(DataError):
            extract_choice("A", 6)

    def test_total_on_random_strings(self):
        rng = random.Random(0)
        alphabet = string.ascii_letters + string.digits + " ()[].\n"
        for _ in range(10_000):
            reply = "".join(
                rng.choice(alphabet) for _ in range(rng.randrange(0, 60))
            )
            letter = extract_choice(reply, 4)
            assert letter in (None, "A", "B", "C", "D")

    @given(st.text(max_size=200), st.integers(min_value=1, max_value=5))
    def test_total_on_arbitrary_text(self, reply, n_options):
        letter = extract_choice(reply, n_options)
        assert letter is None or "ABCDE".index(letter) < n_options


def grounding_contexts(n_focused=3, n_free=2):
    contexts = [
        GeneratedContext(
            text=f"relevant fact number {i}", view="option-focused", ordinal=i,
            model="m", fingerprint=f"ff{i}",
        )
        for i in range(n_focused)
    ]
    contexts += [
        GeneratedContext(
            text=f"background note {i}", view="option-free", ordinal=i,
            model="m", fingerprint=f"fo{i}",
        )
        for i in range(n_free)
    ]
    return tuple(contexts)


@pytest.fixture
def reader(standard_server):
    gateway = LlmGateway(profiles_for(standard_server, ("reader",)))
    return Reader(
        gateway, family="zephyr", shots=load_shots("medqa", "H").shots, k_contexts=5
    )


class TestReader:
    def test_grounded_answer_is_graded_correct(self, reader, records):
        record = records[0]
        prediction = reader.answer(record, grounding_contexts(), k_contexts=3)
        assert prediction.correct is True
        assert prediction.extracted_letter == record.gold_letter
        assert prediction.grounding == "generated"
        assert prediction.k_contexts == 3
        assert not prediction.overflow_retried
        assert prediction.record_id == record.id
        assert len(prediction.prompt_fingerprint) == 64
        assert prediction.latency > 0.0

    def test_ungrounded_answer_defaults_to_none_label(self, reader, records):
        prediction = reader.answer(records[1], (), k_contexts=0)
        assert prediction.grounding == "none"
        assert prediction.k_contexts == 0

    def test_explicit_grounding_label_kept(self, reader, records):
        prediction = reader.answer(
            records[2], grounding_contexts(), k_contexts=2,
            grounding_label="retrieved",
        )
        assert prediction.grounding == "retrieved"

    def test_unknown_grounding_label_rejected(self, reader, records):
        with pytest.raises(DataError, match="grounding label"):
            reader.answer(records[0], (), k_contexts=0, grounding_label="vibes")

    def test_grounding_modes_exported(self):
        assert GROUNDING_MODES == ("none", "generated", "retrieved", "mixed")

    def test_overflow_retries_with_one_fewer_context(
        self, make_server, bench_path, records
    ):
        from ctxgenie.prompts import render_reader_prompt

        # Size the mock's prompt cap between the k=3 and k=2 prompt lengths.
        shots = load_shots("medqa", "H").shots
        record = records[0]
        contexts = grounding_contexts()
        k3 = len(render_reader_prompt(record, contexts, family="zephyr",
                                      shots=shots, k_contexts=3).text)
        k2 = len(render_reader_prompt(record, contexts, family="zephyr",
                                      shots=shots, k_contexts=2).text)
        assert k2 < k3
        capped_server = make_server({
            "reader": {
                "kind": "gold-letter",
                "records_path": str(bench_path),
                "max_prompt_chars": (k2 + k3) // 2,
            }
        })
        capped_gateway = LlmGateway(profiles_for(capped_server, ("reader",)))
        capped = Reader(capped_gateway, family="zephyr", shots=shots)
        prediction = capped.answer(record, contexts, k_contexts=3)
        assert prediction.overflow_retried
        assert prediction.k_contexts == 2
        assert prediction.correct is True
        assert capped_server.call_stats()["by_role"]["reader"] == 2

    def test_overflow_at_k_zero_propagates(self, make_server, bench_path, records):
        server = make_server({
            "reader": {
                "kind": "gold-letter",
                "records_path": str(bench_path),
                "max_prompt_chars": 10,
            }
        })
        gateway = LlmGateway(profiles_for(server, ("reader",)))
        reader = Reader(gateway, family="zephyr",
                        shots=load_shots("medqa", "H").shots)
        with pytest.raises(ContextWindowExceeded):
            reader.answer(records[0], (), k_contexts=0)

    def test_unparseable_reply_counts_as_none(self, make_server, records):
        server = make_server({"reader": {"kind": "fixed", "text": "no idea!"}})
        gateway = LlmGateway(profiles_for(server, ("reader",)))
        reader = Reader(gateway, family="zephyr",
                        shots=load_shots("medqa", "H").shots)
        prediction = reader.answer(records[0], (), k_contexts=0)
        assert prediction.extracted_letter is None
        assert prediction.predicted_index is None
        assert prediction.correct is None

    def test_answer_all_requires_grounding_for_every_record(self, reader, records):
        grounding = {records[0].id: grounding_contexts()}
        with pytest.raises(DataError, match="no grounding contexts"):
            reader.answer_all(records[:2], grounding, k_contexts=2)

    def test_answer_all_orders_and_times(self, reader, records):
        subset = records[:3]
        grounding = {r.id: grounding_contexts() for r in subset}
        predictions, latencies = reader.answer_all(subset, grounding, k_contexts=2)
        assert [p.record_id for p in predictions] == [r.id for r in subset]
        assert len(latencies) == 3
        assert all(t > 0 for t in latencies)
        assert all(p.correct for p in predictions)

    def test_ungrounded_answer_all_needs_no_map(self, reader, records):
        predictions, _ = reader.answer_all(records[:2], None, k_contexts=0)
        assert all(p.grounding == "none" for p in predictions)


class TestMixedSelection:
    def passages(self):
        generated = [
            TrialPassage(text="needle gen focused", source="generated",
                         view="option-focused"),
            TrialPassage(text="plain gen free", source="generated",
                         view="option-free"),
        ]
        retrieved = [
            TrialPassage(text="needle kb one", source="retrieved", view=None),
            TrialPassage(text="plain kb two", source="retrieved", view=None),
        ]
        return generated, retrieved

    def rerank_fn(self, query, texts):
        return [10.0 if "needle" in t else 1.0 for t in texts]

    def test_keeps_top_k_in_canonical_view_order(self):
        generated, retrieved = self.passages()
        kept = mixed_selection(generated, retrieved, self.rerank_fn, "q", k_keep=3)
        assert [p.text for p in kept] == [
            "needle gen focused",  # option-focused first
            "plain gen free",      # then option-free (kept due over kb plain by tie order)
            "needle kb one",       # retrieved last
        ]

    def test_pool_order_breaks_ties(self):
        generated, retrieved = self.passages()
        kept = mixed_selection(
            generated, retrieved, lambda q, t: [1.0] * len(t), "q", k_keep=2
        )
        # all tied: pool order (generated first) decides what survives
        assert [p.text for p in kept] == ["needle gen focused", "plain gen free"]

    def test_empty_pool_rejected(self):
        with pytest.raises(DataError):
            mixed_selection([], [], self.rerank_fn, "q")

    def test_score_count_mismatch_rejected(self):
        generated, retrieved = self.passages()
        with pytest.raises(DataError, match="reranker returned"):
            mixed_selection(generated, retrieved, lambda q, t: [1.0], "q")


def make_prediction(record_id="r", correct=True, letter="A"):
    return Prediction(
        record_id=record_id,
        extracted_letter=letter,
        predicted_index=0 if letter else None,
        gold_index=0,
        gold_letter="A",
        correct=correct,
        grounding="generated",
        k_contexts=5,
        overflow_retried=False,
        reply_text="The answer is (A).",
        prompt_fingerprint="ab" * 32,
        latency=1.25,
    )


class TestPredictionLog:
    def test_roundtrip_drops_latency(self, tmp_path):
        path = tmp_path / "predictions.jsonl"
        original = [
            make_prediction("r1"),
            make_prediction("r2", correct=None, letter=None),
        ]
        write_predictions(original, path)
        loaded = load_predictions(path)
        assert loaded[0].record_id == "r1"
        assert loaded[0].latency == 0.0  # sidecar-only field
        assert loaded[1].correct is None
        assert loaded[1].extracted_letter is None
        rows = [json.loads(l) for l in path.read_text().splitlines()]
        assert all("latency" not in row for row in rows)

    def test_log_bytes_are_run_stable(self, tmp_path):
        one, two = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_predictions([make_prediction()], one)
        write_predictions([make_prediction()], two)
        assert one.read_bytes() == two.read_bytes()

    def test_load_missing(self, tmp_path):
        with pytest.raises(DataError):
            load_predictions(tmp_path / "missing.jsonl")

    def test_load_corrupt_line(self, tmp_path):
        path = tmp_path / "p.jsonl"
        write_predictions([make_prediction()], path)
        path.write_text(path.read_text() + "oops\n", encoding="utf-8")
        with pytest.raises(DataError, match=r"p\.jsonl:2"):
            load_predictions(path)

    def test_timings_sidecar(self, tmp_path):
        path = tmp_path / "timings.jsonl"
        write_timings(["r1", "r2"], [0.5, 1.5], path)
        rows = [json.loads(l) for l in path.read_text().splitlines()]
        assert rows == [
            {"record_id": "r1", "seconds": 0.5},
            {"record_id": "r2", "seconds": 1.5},
        ]
        with pytest.raises(DataError):
            write_timings(["r1"], [0.5, 1.5], path)
