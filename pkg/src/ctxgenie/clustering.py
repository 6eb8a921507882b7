"""Clustering-based demonstration selection for topic-guided generation.

The pipeline: generate one context per training question, keep the
question–context pairs the reader answered correctly (the support set),
embed each pair, cluster the embeddings with seeded k-means++, and sample
``n`` pairs per cluster as the shot block of one generation prompt — one
prompt per cluster, yielding ``k`` topic-guided contexts per test question.

Everything is deterministic given the seed: initialisation and sampling draw
from PCG64 streams, Lloyd iterations use the shared assignment kernel, and
ties break toward the lower index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from . import kernels
from .corpus import BenchmarkRecord
from .errors import DataError
from .prompts import ShotExample

DEFAULT_K = 5
DEFAULT_PER_CLUSTER = 3
DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-6

#: Unit-norm tolerance for support-pair embeddings (matches the gateway's).
_NORM_TOL = 1e-6


def pair_text(question: str, context: str) -> str:
    """Canonical text embedded for one question–context pair."""
    return f"{question} \n {context}"


# ---------------------------------------------------------------------------
# Support set
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SupportPair:
    """One question–context pair with its embedding and reader verdict."""

    question_id: str
    question: str
    context: str
    embedding: tuple[float, ...]
    correct: bool

    def __post_init__(self) -> None:
        norm = float(np.linalg.norm(np.asarray(self.embedding, dtype=np.float64)))
        if abs(norm - 1.0) > _NORM_TOL:
            raise DataError(
                f"pair {self.question_id!r}: embedding norm {norm:.8f} is not 1"
            )

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "question": self.question,
            "context": self.context,
            "embedding": list(self.embedding),
            "correct": self.correct,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SupportPair":
        return cls(
            question_id=str(obj["question_id"]),
            question=str(obj["question"]),
            context=str(obj["context"]),
            embedding=tuple(float(x) for x in obj["embedding"]),
            correct=bool(obj["correct"]),
        )


@dataclass(frozen=True)
class SupportSetResult:
    """Kept pairs plus bookkeeping on how much the correctness filter cut."""

    pairs: tuple[SupportPair, ...]
    n_total: int
    n_kept: int

    @property
    def kept_ratio(self) -> float:
        return self.n_kept / self.n_total if self.n_total else 0.0


def build_support_set(
    records: Sequence[BenchmarkRecord],
    generator,
    reader,
    embed_fn: Callable[[Sequence[str]], np.ndarray],
    batch_size: int = 64,
) -> SupportSetResult:
    """Generate one context per record, keep pairs the reader answers right.

    The context is the first one in each record's bundle, so a generator
    configured for a single context per record is the canonical setup.  Kept
    pairs are embedded (batched) as ``question \\n context`` and returned in
    record order with ``correct=True``; incorrect or unparseable answers are
    dropped.
    """
    if not records:
        raise DataError("build_support_set needs at least one record")
    kept: list[tuple[BenchmarkRecord, str]] = []
    for record in records:
        bundle = generator.generate(record).bundle
        context = bundle.contexts[0].text
        prediction = reader.answer(record, [context], k_contexts=1)
        if prediction.correct is True:
            kept.append((record, context))
    pairs: list[SupportPair] = []
    texts = [pair_text(record.question, context) for record, context in kept]
    for start in range(0, len(texts), batch_size):
        batch = embed_fn(texts[start : start + batch_size])
        vectors = np.asarray(batch, dtype=np.float64)
        for row, (record, context) in zip(vectors, kept[start : start + batch_size]):
            pairs.append(
                SupportPair(
                    question_id=record.id,
                    question=record.question,
                    context=context,
                    embedding=tuple(float(x) for x in row),
                    correct=True,
                )
            )
    return SupportSetResult(pairs=tuple(pairs), n_total=len(records), n_kept=len(pairs))


def save_support_set(pairs: Iterable[SupportPair], path: Union[str, Path]) -> int:
    """JSONL persistence, one pair per line with its correctness flag."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
            count += 1
    return count


def load_support_set(path: Union[str, Path]) -> list[SupportPair]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"support set not found: {path}")
    pairs = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                pairs.append(SupportPair.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: corrupt support pair ({exc})") from exc
    return pairs


# ---------------------------------------------------------------------------
# K-means
# ---------------------------------------------------------------------------


def _plus_plus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centroids by squared distance."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(0, n))
    centroids[0] = points[first]
    closest_sq = np.sum((points - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = float(closest_sq.sum())
        if total == 0.0:
            # All remaining points coincide with a centroid; pick uniformly.
            choice = int(rng.integers(0, n))
        else:
            r = float(rng.random()) * total
            choice = int(np.searchsorted(np.cumsum(closest_sq), r, side="right"))
            choice = min(choice, n - 1)
        centroids[i] = points[choice]
        dist_sq = np.sum((points - centroids[i]) ** 2, axis=1)
        closest_sq = np.minimum(closest_sq, dist_sq)
    return centroids


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iters: int
    inertia_history: tuple[float, ...]


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Iterates until no centroid moves more than ``tol`` (Euclidean) or
    ``max_iters`` is reached.  A cluster left empty by an assignment step is
    reseeded with the point farthest from its current centroid, so exactly
    ``k`` clusters always survive.  ``inertia_history`` records the total
    squared distance after every assignment step (final assignment included)
    and is checked non-increasing as Lloyd guarantees.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise DataError("points must be a 2-D array")
    n = points.shape[0]
    if k < 1:
        raise DataError("k must be >= 1")
    if n < k:
        raise DataError(f"cannot form {k} clusters from {n} points")
    rng = np.random.Generator(np.random.PCG64(seed))
    centroids = _plus_plus_init(points, k, rng)
    labels = np.zeros(n, dtype=np.int64)
    history: list[float] = []
    n_iters = 0
    for n_iters in range(1, max_iters + 1):
        labels, sq_dists = kernels.assign_clusters(points, centroids)
        _record_inertia(history, float(sq_dists.sum()))
        new_centroids = centroids.copy()
        for j in range(k):
            members = points[labels == j]
            if len(members) == 0:
                # Reseed an empty cluster from the worst-fitting point.
                farthest = int(np.argmax(sq_dists))
                new_centroids[j] = points[farthest]
                sq_dists[farthest] = 0.0
            else:
                new_centroids[j] = members.mean(axis=0)
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if shift <= tol:
            break
    labels, sq_dists = kernels.assign_clusters(points, centroids)
    _record_inertia(history, float(sq_dists.sum()))
    return KMeansResult(
        centroids=centroids,
        labels=labels,
        inertia=history[-1],
        n_iters=n_iters,
        inertia_history=tuple(history),
    )


def _record_inertia(history: list[float], value: float) -> None:
    if history and value > history[-1] + 1e-9 * max(1.0, abs(history[-1])):
        raise AssertionError(
            f"k-means inertia increased: {history[-1]!r} -> {value!r}"
        )
    history.append(value)


# ---------------------------------------------------------------------------
# Clustering the support set and sampling demonstrations
# ---------------------------------------------------------------------------


def cluster_support_set(
    pairs: Sequence[SupportPair],
    k: int = DEFAULT_K,
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> tuple[KMeansResult, list[list[SupportPair]]]:
    """Cluster pair embeddings; returns the k-means result and, per cluster
    label in order, its member pairs (input order preserved)."""
    if not pairs:
        raise DataError("cannot cluster an empty support set")
    points = np.asarray([p.embedding for p in pairs], dtype=np.float64)
    result = kmeans(points, k=k, seed=seed, max_iters=max_iters, tol=tol)
    clusters: list[list[SupportPair]] = [[] for _ in range(k)]
    for pair, label in zip(pairs, result.labels):
        clusters[int(label)].append(pair)
    return result, clusters


@dataclass(frozen=True)
class DemonstrationSet:
    """The sampled shot block for one cluster's generation prompt.

    ``short`` flags clusters that had fewer than the requested ``n`` members
    and therefore contributed everything they had.
    """

    cluster: int
    pairs: tuple[SupportPair, ...]
    short: bool


def sample_demonstrations(
    clusters: Sequence[Sequence[SupportPair]],
    n: int = DEFAULT_PER_CLUSTER,
    seed: int = 0,
) -> list[DemonstrationSet]:
    """Uniformly sample ``n`` pairs per cluster without replacement.

    Sampling order comes from one PCG64 stream over clusters in label order,
    so results are reproducible from (clusters, seed).  A cluster with at
    most ``n`` members is taken verbatim and flagged ``short`` when smaller.
    """
    if n < 1:
        raise DataError("demonstrations per cluster must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    out: list[DemonstrationSet] = []
    for index, members in enumerate(clusters):
        members = list(members)
        if len(members) <= n:
            chosen = tuple(members)
            short = len(members) < n
        else:
            picks = rng.choice(len(members), size=n, replace=False)
            chosen = tuple(members[int(i)] for i in picks)
            short = False
        out.append(DemonstrationSet(cluster=index, pairs=chosen, short=short))
    return out


def demonstration_shots(demo: DemonstrationSet) -> list[ShotExample]:
    """Turn one cluster's sampled pairs into generation-prompt shots."""
    return [
        ShotExample(question=pair.question, context=pair.context) for pair in demo.pairs
    ]
