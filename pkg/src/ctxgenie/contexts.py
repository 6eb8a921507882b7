"""Artificial-context generation: sampling, leak scrubbing and caching.

For every benchmark record the generator samples a bundle of contexts from
the generation endpoint: ``n_focused`` (default 3) conditioned on the
question *and* its option set, and ``n_free`` (default 2) conditioned on the
question alone.  Each view is produced by a single call using the sampling
parameters below (one call with ``n=n_focused``, one with ``n=n_free``).
Degenerate bundles (for example one focused context and no free ones) are
fully supported.

Raw samples are scrubbed sentence-by-sentence: any sentence that names the
answer directly (for example "The answer is (B).") is dropped so the reader
has to reason from content rather than copy a verdict.  A context left empty
by scrubbing is regenerated once; a second empty result is an error.

Every context carries a content fingerprint of everything that determines
the bytes sent to the endpoint (template identity, shot-set identity, record
id, sampling parameters, sample ordinal).  The on-disk cache stores one
context per JSON line plus a lightweight index sidecar keyed by fingerprint,
so reruns with an unchanged setup perform zero generation calls and edited
prompts invalidate cleanly.  Cache writes are all-or-nothing at bundle
granularity: a crash mid-record never leaves partial bundles behind.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from importlib import resources

from .corpus import BenchmarkRecord
from .errors import DataError
from .evalsuite.metrics import (
    SOURCE_GENERATED,
    VIEW_OPTION_FOCUSED,
    VIEW_OPTION_FREE,
    TrialPassage,
)
from .gateway import GenerationRequest, LlmGateway
from .prompts import (
    PromptTemplate,
    ShotSet,
    load_shots,
    load_template,
    render_option_focused,
    render_option_free,
)

#: Sampling defaults for context generation.
DEFAULT_TEMPERATURE = 0.9
DEFAULT_FREQUENCY_PENALTY = 1.95
DEFAULT_MAX_NEW_TOKENS = 512

DEFAULT_N_FOCUSED = 3
DEFAULT_N_FREE = 2

_SENTENCE_DELIMS = ".?!\n"


@dataclass(frozen=True)
class GenerationParams:
    """Sampling parameters for context generation calls."""

    temperature: float = DEFAULT_TEMPERATURE
    frequency_penalty: float = DEFAULT_FREQUENCY_PENALTY
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "frequency_penalty": self.frequency_penalty,
            "max_new_tokens": self.max_new_tokens,
        }


# ---------------------------------------------------------------------------
# Leak scrubbing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScrubRules:
    """Sentence-drop triggers: literal phrases and regex patterns.

    Both are matched case-insensitively against the sentence body.  The
    default rule set ships as an editable JSON asset.
    """

    phrases: tuple[str, ...]
    patterns: tuple[re.Pattern, ...]

    @classmethod
    def from_dict(cls, obj: dict) -> "ScrubRules":
        phrases = tuple(str(p).lower() for p in obj.get("phrases", ()))
        patterns = tuple(
            re.compile(p, re.IGNORECASE) for p in obj.get("patterns", ())
        )
        return cls(phrases=phrases, patterns=patterns)

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None) -> "ScrubRules":
        if path is None:
            root = resources.files("ctxgenie") / "assets" / "scrub_rules.json"
            text = root.read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"scrub rules are not valid JSON: {exc.msg}") from exc
        return cls.from_dict(obj)

    def matches(self, body: str) -> bool:
        lowered = body.lower()
        if any(phrase in lowered for phrase in self.phrases):
            return True
        return any(pattern.search(body) for pattern in self.patterns)


def split_sentences(text: str) -> list[tuple[str, str]]:
    """Split into (body, delimiter) pairs; delimiters are ``.?!`` or newline.

    The final fragment may carry an empty delimiter.  Joining every
    ``body + delimiter`` reproduces the input exactly.
    """
    pairs: list[tuple[str, str]] = []
    body_start = 0
    for i, ch in enumerate(text):
        if ch in _SENTENCE_DELIMS:
            pairs.append((text[body_start:i], ch))
            body_start = i + 1
    if body_start < len(text):
        pairs.append((text[body_start:], ""))
    return pairs


@dataclass(frozen=True)
class ScrubResult:
    text: str
    dropped: int


def scrub_context(text: str, rules: ScrubRules) -> ScrubResult:
    """Drop every sentence whose body matches a trigger.

    The matched body is removed together with its trailing delimiter;
    untouched sentences keep their exact bytes (no global whitespace
    normalisation), which makes the operation idempotent.
    """
    kept: list[str] = []
    dropped = 0
    for body, delim in split_sentences(text):
        if body.strip() and rules.matches(body):
            dropped += 1
        else:
            kept.append(body + delim)
    return ScrubResult(text="".join(kept), dropped=dropped)


# ---------------------------------------------------------------------------
# Generated contexts and bundles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeneratedContext:
    """One scrubbed context sample and the identity of the call that made it.

    ``ordinal`` is the sample's position within its view (0-based), ``model``
    names the generation endpoint's model, and ``fingerprint`` hashes every
    input that determined the request bytes (see :func:`context_fingerprint`).
    """

    text: str
    view: str
    ordinal: int
    model: str
    fingerprint: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise DataError("a generated context must be non-empty after scrubbing")
        if self.view not in (VIEW_OPTION_FOCUSED, VIEW_OPTION_FREE):
            raise DataError(f"unknown context view {self.view!r}")
        if self.ordinal < 0:
            raise DataError("context ordinal must be >= 0")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "view": self.view,
            "ordinal": self.ordinal,
            "model": self.model,
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GeneratedContext":
        return cls(
            text=str(obj["text"]),
            view=str(obj["view"]),
            ordinal=int(obj["ordinal"]),
            model=str(obj.get("model", "")),
            fingerprint=str(obj["fingerprint"]),
        )


@dataclass(frozen=True)
class ContextBundle:
    """Scrubbed contexts for one record, option-focused ones first.

    Invariants enforced on construction: every text is non-empty, all
    option-focused contexts precede option-free ones, and each view's
    ordinals run 0..n-1 in order.
    """

    record_id: str
    contexts: tuple[GeneratedContext, ...]

    def __post_init__(self) -> None:
        seen_free = False
        counts = {VIEW_OPTION_FOCUSED: 0, VIEW_OPTION_FREE: 0}
        for context in self.contexts:
            if context.view == VIEW_OPTION_FREE:
                seen_free = True
            elif seen_free:
                raise DataError(
                    f"bundle {self.record_id!r}: option-focused context after an "
                    "option-free one"
                )
            if context.ordinal != counts[context.view]:
                raise DataError(
                    f"bundle {self.record_id!r}: {context.view} ordinals must be "
                    f"dense and ordered (got {context.ordinal}, "
                    f"expected {counts[context.view]})"
                )
            counts[context.view] += 1

    @property
    def n_focused(self) -> int:
        return sum(1 for c in self.contexts if c.view == VIEW_OPTION_FOCUSED)

    @property
    def n_free(self) -> int:
        return sum(1 for c in self.contexts if c.view == VIEW_OPTION_FREE)

    @property
    def focused(self) -> tuple[str, ...]:
        return tuple(c.text for c in self.contexts if c.view == VIEW_OPTION_FOCUSED)

    @property
    def free(self) -> tuple[str, ...]:
        return tuple(c.text for c in self.contexts if c.view == VIEW_OPTION_FREE)

    def passages(self) -> list[TrialPassage]:
        """All contexts in grounding order, tagged with source and view."""
        return [
            TrialPassage(text=c.text, source=SOURCE_GENERATED, view=c.view)
            for c in self.contexts
        ]

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "contexts": [c.to_dict() for c in self.contexts],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ContextBundle":
        return cls(
            record_id=str(obj["record_id"]),
            contexts=tuple(GeneratedContext.from_dict(c) for c in obj["contexts"]),
        )


def _sha(obj: object) -> str:
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True, ensure_ascii=False).encode("utf-8")
    ).hexdigest()


def template_identity(template: PromptTemplate) -> str:
    return _sha({"id": template.template_id, "text": template.text})


def shots_identity(shots: ShotSet) -> str:
    return _sha(
        {
            "pair_id": shots.pair_id,
            "benchmark": shots.benchmark,
            "shots": [
                {
                    "question": s.question,
                    "options": list(s.options) if s.options is not None else None,
                    "context": s.context,
                    "answer_index": s.answer_index,
                }
                for s in shots.shots
            ],
        }
    )


def context_fingerprint(
    template_id: str,
    shots_id: str,
    record_id: str,
    params: GenerationParams,
    ordinal: int,
) -> str:
    """Identity of one sampled context: everything that determines the call."""
    return _sha(
        {
            "template": template_id,
            "shots": shots_id,
            "record": record_id,
            "params": params.to_dict(),
            "ordinal": ordinal,
        }
    )


# ---------------------------------------------------------------------------
# The fingerprint cache
# ---------------------------------------------------------------------------


class ContextCache:
    """Append-only store: one generated context per JSON line plus an index.

    ``contexts.jsonl`` holds the full records; ``contexts.index.jsonl`` is a
    sidecar listing (fingerprint, view, ordinal) per line so a reader can
    enumerate cache keys without parsing context texts.  Writes
    happen at bundle granularity and only once every context of the bundle
    exists and survived scrubbing, so a crash mid-record never leaves
    partial bundles.  Re-putting an existing fingerprint is a no-op.
    """

    DATA_FILE = "contexts.jsonl"
    INDEX_FILE = "contexts.index.jsonl"

    def __init__(self, directory: Union[str, Path]) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.data_path = self.directory / self.DATA_FILE
        self.index_path = self.directory / self.INDEX_FILE
        self._entries: dict[str, GeneratedContext] = {}
        if self.data_path.exists():
            with self.data_path.open("r", encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        obj = json.loads(line)
                        context = GeneratedContext.from_dict(obj)
                    except (json.JSONDecodeError, KeyError, ValueError) as exc:
                        raise DataError(
                            f"{self.data_path}:{lineno}: corrupt cache line ({exc})"
                        ) from exc
                    self._entries[context.fingerprint] = context
        if not self.index_path.exists() and self._entries:
            self._rebuild_index()

    def _rebuild_index(self) -> None:
        with self.index_path.open("w", encoding="utf-8") as fh:
            for context in self._entries.values():
                fh.write(self._index_line(context))

    @staticmethod
    def _index_line(context: GeneratedContext) -> str:
        entry = {
            "fingerprint": context.fingerprint,
            "view": context.view,
            "ordinal": context.ordinal,
        }
        return json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n"

    def __len__(self) -> int:
        return len(self._entries)

    def fingerprints(self) -> set[str]:
        return set(self._entries)

    def get(self, fingerprint: str) -> Optional[GeneratedContext]:
        return self._entries.get(fingerprint)

    def has_all(self, fingerprints: Sequence[str]) -> bool:
        return all(fp in self._entries for fp in fingerprints)

    def put_bundle(self, contexts: Sequence[GeneratedContext]) -> int:
        """Persist a finished bundle's contexts; returns how many were new.

        All new lines are written in one append per file so the bundle is
        either fully present or fully absent.
        """
        new = [c for c in contexts if c.fingerprint not in self._entries]
        if not new:
            return 0
        data_lines = "".join(
            json.dumps(c.to_dict(), sort_keys=True, ensure_ascii=False) + "\n"
            for c in new
        )
        index_lines = "".join(self._index_line(c) for c in new)
        with self.data_path.open("a", encoding="utf-8") as fh:
            fh.write(data_lines)
            fh.flush()
        with self.index_path.open("a", encoding="utf-8") as fh:
            fh.write(index_lines)
            fh.flush()
        for context in new:
            self._entries[context.fingerprint] = context
        return len(new)


@dataclass(frozen=True)
class BundleResult:
    bundle: ContextBundle
    from_cache: bool
    scrub_dropped: int = 0
    regenerated: int = 0


class ContextGenerator:
    """Samples, scrubs and caches context bundles for benchmark records."""

    def __init__(
        self,
        gateway: LlmGateway,
        params: GenerationParams | None = None,
        n_focused: int = DEFAULT_N_FOCUSED,
        n_free: int = DEFAULT_N_FREE,
        scrub_rules: ScrubRules | None = None,
        cache: ContextCache | None = None,
        assets_dir: Optional[Union[str, Path]] = None,
    ) -> None:
        if n_focused < 0 or n_free < 0 or n_focused + n_free < 1:
            raise DataError("bundle sizes must be non-negative and sum to >= 1")
        self.gateway = gateway
        self.params = params or GenerationParams()
        self.n_focused = n_focused
        self.n_free = n_free
        self.rules = scrub_rules or ScrubRules.load()
        self.cache = cache
        self.focused_template = load_template("plain", "option_focused", assets_dir)
        self.free_template = load_template("plain", "option_free", assets_dir)
        self.focused_shots = load_shots("generation", "option_focused", assets_dir)
        self.free_shots = load_shots("generation", "option_free", assets_dir)
        self._focused_tid = template_identity(self.focused_template)
        self._free_tid = template_identity(self.free_template)
        self._focused_sid = shots_identity(self.focused_shots)
        self._free_sid = shots_identity(self.free_shots)

    # -- cache identity -------------------------------------------------------

    def _view_fingerprints(self, record: BenchmarkRecord, view: str) -> list[str]:
        if view == VIEW_OPTION_FOCUSED:
            tid, sid, n = self._focused_tid, self._focused_sid, self.n_focused
        else:
            tid, sid, n = self._free_tid, self._free_sid, self.n_free
        return [
            context_fingerprint(tid, sid, record.id, self.params, i) for i in range(n)
        ]

    def bundle_fingerprints(self, record: BenchmarkRecord) -> list[str]:
        """Fingerprints of every context in the bundle, in bundle order."""
        return self._view_fingerprints(record, VIEW_OPTION_FOCUSED) + self._view_fingerprints(
            record, VIEW_OPTION_FREE
        )

    # -- sampling ---------------------------------------------------------------

    def _request(self, prompt: str, n: int) -> GenerationRequest:
        return GenerationRequest(
            prompt=prompt,
            temperature=self.params.temperature,
            frequency_penalty=self.params.frequency_penalty,
            max_new_tokens=self.params.max_new_tokens,
            n=n,
        )

    def _model_name(self) -> str:
        return self.gateway.profile("generation").model

    def _sample_view(
        self, record: BenchmarkRecord, view: str
    ) -> tuple[list[GeneratedContext], int, int]:
        """One generation call for a view; returns (contexts, dropped, regenerated)."""
        fingerprints = self._view_fingerprints(record, view)
        if not fingerprints:
            return [], 0, 0
        if view == VIEW_OPTION_FOCUSED:
            prompt = render_option_focused(record, self.focused_shots.shots, self.focused_template)
        else:
            prompt = render_option_free(record, self.free_shots.shots, self.free_template)
        model = self._model_name()
        completions = self.gateway.complete(
            self._request(prompt, len(fingerprints)), role="generation"
        )
        contexts: list[GeneratedContext] = []
        dropped = 0
        regenerated = 0
        for i, completion in enumerate(completions):
            result = scrub_context(completion.text, self.rules)
            dropped += result.dropped
            text = result.text
            if not text.strip():
                # Scrubbing removed everything: resample this ordinal once.
                regenerated += 1
                retry = self.gateway.complete(self._request(prompt, 1), role="generation")
                retried = scrub_context(retry[0].text, self.rules)
                dropped += retried.dropped
                text = retried.text
                if not text.strip():
                    raise DataError(
                        f"record {record.id!r}: {view} context {i} is empty after "
                        "scrubbing twice; the generator keeps revealing the answer"
                    )
            contexts.append(
                GeneratedContext(
                    text=text,
                    view=view,
                    ordinal=i,
                    model=model,
                    fingerprint=fingerprints[i],
                )
            )
        return contexts, dropped, regenerated

    def generate(self, record: BenchmarkRecord) -> BundleResult:
        fingerprints = self.bundle_fingerprints(record)
        if self.cache is not None and self.cache.has_all(fingerprints):
            contexts = tuple(self.cache.get(fp) for fp in fingerprints)
            return BundleResult(
                bundle=ContextBundle(record_id=record.id, contexts=contexts),
                from_cache=True,
            )
        focused, dropped_f, regen_f = self._sample_view(record, VIEW_OPTION_FOCUSED)
        free, dropped_o, regen_o = self._sample_view(record, VIEW_OPTION_FREE)
        bundle = ContextBundle(record_id=record.id, contexts=tuple(focused + free))
        if self.cache is not None:
            self.cache.put_bundle(bundle.contexts)
        return BundleResult(
            bundle=bundle,
            from_cache=False,
            scrub_dropped=dropped_f + dropped_o,
            regenerated=regen_f + regen_o,
        )

    def generate_all(self, records: Sequence[BenchmarkRecord]) -> list[BundleResult]:
        """Generate bundles in record order (deterministic output order)."""
        return [self.generate(record) for record in records]


# ---------------------------------------------------------------------------
# Persistence, export and statistics
# ---------------------------------------------------------------------------


def save_bundles(bundles: Iterable[ContextBundle], path: Union[str, Path]) -> int:
    """Write bundles as JSONL in input order; returns the count written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for bundle in bundles:
            fh.write(json.dumps(bundle.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
            count += 1
    return count


def load_bundles(path: Union[str, Path]) -> list[ContextBundle]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"context bundle file not found: {path}")
    bundles = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                bundles.append(ContextBundle.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataError(f"{path}:{lineno}: corrupt bundle line ({exc})") from exc
    return bundles


def export_contexts(bundles: Iterable[ContextBundle], path: Union[str, Path]) -> int:
    """Write the release format: one ``{id, view, ordinal, text}`` per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for bundle in bundles:
            for context in bundle.contexts:
                fh.write(
                    json.dumps(
                        {
                            "id": bundle.record_id,
                            "view": context.view,
                            "ordinal": context.ordinal,
                            "text": context.text,
                        },
                        sort_keys=True,
                        ensure_ascii=False,
                    )
                    + "\n"
                )
                count += 1
    return count


def _histogram(counts: Sequence[int], bin_width: int) -> list[dict]:
    """Fixed-width word-count bins ``[lo, hi)`` covering every observation."""
    if bin_width < 1:
        raise DataError("histogram bin width must be >= 1")
    if not counts:
        return []
    n_bins = max(c // bin_width for c in counts) + 1
    bins = [0] * n_bins
    for c in counts:
        bins[c // bin_width] += 1
    return [
        {"lo": i * bin_width, "hi": (i + 1) * bin_width, "count": bins[i]}
        for i in range(n_bins)
    ]


def bundle_length_stats(
    bundles: Sequence[ContextBundle], bin_width: Optional[int] = None
) -> dict:
    """Word-count statistics per view (whitespace tokenisation).

    With ``bin_width`` set, each view also carries a fixed-width histogram of
    context lengths in words.
    """

    def stats(counts: list[int]) -> dict:
        if not counts:
            out = {"n": 0, "mean_words": 0.0, "max_words": 0}
        else:
            out = {
                "n": len(counts),
                "mean_words": sum(counts) / len(counts),
                "max_words": max(counts),
            }
        if bin_width is not None:
            out["histogram"] = _histogram(counts, bin_width)
        return out

    focused = [len(t.split()) for b in bundles for t in b.focused]
    free = [len(t.split()) for b in bundles for t in b.free]
    return {
        "option_focused": stats(focused),
        "option_free": stats(free),
        "all": stats(focused + free),
    }
