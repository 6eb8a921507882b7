"""HTTP client layer for model endpoints.

All remote model access goes through :class:`LlmGateway`, which speaks the
OpenAI-compatible wire protocols (``/v1/chat/completions``,
``/v1/completions``, ``/v1/embeddings``) plus a minimal ``/rerank`` contract,
and adds the operational behaviour the rest of the package relies on:

* retries with exponential backoff on transport errors and 5xx responses,
  at most ``retries + 1`` attempts per call;
* per-endpoint bounded parallelism via a semaphore sized ``max_parallel``;
* L2 normalization of returned embeddings;
* balanced-brace JSON extraction for judge replies, with a single bounded
  re-ask when a reply cannot be parsed.

Endpoint roles are ``generation``, ``reader``, ``embedding``, ``rerank`` and
``judge``.  The ``reader`` role speaks the generation wire protocol but is a
separate endpoint so readers and context generators can be different models.
"""

from __future__ import annotations

import json
import os
import random
import threading
import time
from dataclasses import dataclass, replace
from typing import Any, Mapping, Sequence

import numpy as np
import requests

from .errors import ConfigError, ContextWindowExceeded, EndpointError

ROLES = ("generation", "reader", "embedding", "rerank", "judge")

ENV_PREFIX = "CTXGENIE"

#: Default request timeout (seconds) per role.  Generation-style calls get a
#: generous budget; embedding, rerank and judge calls are short.
DEFAULT_TIMEOUTS = {
    "generation": 120.0,
    "reader": 120.0,
    "embedding": 30.0,
    "rerank": 30.0,
    "judge": 30.0,
}

_EMBED_NORM_TOL = 1e-6


@dataclass(frozen=True)
class EndpointProfile:
    """Connection settings for one model endpoint."""

    role: str
    url: str
    model: str = ""
    token: str | None = None
    api: str = "chat"  # "chat" | "completions"
    timeout: float = 30.0
    retries: int = 2
    max_parallel: int = 4
    backoff_base: float = 0.25

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ConfigError(f"unknown endpoint role {self.role!r}; expected one of {ROLES}")
        if not self.url:
            raise ConfigError(f"endpoint role {self.role!r} has no URL")
        if self.api not in ("chat", "completions"):
            raise ConfigError(f"endpoint api must be 'chat' or 'completions', got {self.api!r}")
        if self.retries < 0:
            raise ConfigError("retries must be >= 0")
        if self.max_parallel < 1:
            raise ConfigError("max_parallel must be >= 1")


def profile_from_env(role: str, **overrides: Any) -> EndpointProfile:
    """Build a profile for ``role`` from ``CTXGENIE_<ROLE>_URL`` / ``_TOKEN``."""
    if role not in ROLES:
        raise ConfigError(f"unknown endpoint role {role!r}; expected one of {ROLES}")
    url_var = f"{ENV_PREFIX}_{role.upper()}_URL"
    token_var = f"{ENV_PREFIX}_{role.upper()}_TOKEN"
    url = overrides.pop("url", None) or os.environ.get(url_var)
    if not url:
        raise ConfigError(f"no URL configured for endpoint role {role!r}: set {url_var}")
    token = overrides.pop("token", None)
    if token is None:
        token = os.environ.get(token_var)
    timeout = overrides.pop("timeout", None)
    if timeout is None:
        timeout = DEFAULT_TIMEOUTS[role]
    return EndpointProfile(role=role, url=url, token=token, timeout=timeout, **overrides)


@dataclass(frozen=True)
class GenerationRequest:
    """Sampling parameters for one generation-style call."""

    prompt: str
    temperature: float = 0.0
    max_new_tokens: int = 512
    n: int = 1
    frequency_penalty: float = 0.0
    stop: tuple[str, ...] = ()
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0.0:
            raise ConfigError("temperature must be >= 0")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.max_new_tokens < 1:
            raise ConfigError("max_new_tokens must be >= 1")

    @property
    def greedy(self) -> bool:
        """A request is greedy exactly when temperature is 0 and n is 1."""
        return self.temperature == 0.0 and self.n == 1

    def to_params(self) -> dict[str, Any]:
        params: dict[str, Any] = {
            "temperature": self.temperature,
            "max_tokens": self.max_new_tokens,
            "n": self.n,
        }
        if self.frequency_penalty:
            params["frequency_penalty"] = self.frequency_penalty
        if self.stop:
            params["stop"] = list(self.stop)
        if self.seed is not None:
            params["seed"] = self.seed
        return params


@dataclass(frozen=True)
class Completion:
    """One generated text."""

    text: str
    index: int = 0
    finish_reason: str | None = None


@dataclass
class RoleMetrics:
    calls: int = 0
    retries: int = 0
    failures: int = 0


_JSON_DECODER = json.JSONDecoder()


def extract_json_object(text: str) -> dict[str, Any] | None:
    """Return the first balanced-brace JSON object embedded in ``text``.

    Scans for ``{`` and tracks brace depth with string/escape awareness, so
    braces inside JSON strings do not confuse the match.  Candidates that do
    not parse as JSON objects are skipped and the scan continues from the
    next opening brace.  Returns ``None`` when no parseable object exists.
    """
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for pos in range(start, len(text)):
            ch = text[pos]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    candidate = text[start : pos + 1]
                    try:
                        parsed = json.loads(candidate)
                    except json.JSONDecodeError:
                        break
                    if isinstance(parsed, dict):
                        return parsed
                    break
        start = text.find("{", start + 1)
    return None


def _retry_delay(url: str, attempt: int, base: float) -> float:
    """Exponential backoff with deterministic jitter.

    The jitter stream is seeded from the endpoint URL and attempt number so
    repeated runs behave identically; jitter only affects timing, never
    output bytes.
    """
    rng = random.Random(f"{url}#{attempt}")
    return base * (2**attempt) + rng.uniform(0.0, base)


class LlmGateway:
    """Typed access to the configured model endpoints.

    Profiles may be passed explicitly or resolved lazily from environment
    variables on first use of a role.  A shared :class:`requests.Session`
    provides connection pooling; per-profile semaphores cap concurrent
    in-flight requests at ``max_parallel``.
    """

    def __init__(
        self,
        profiles: Mapping[str, EndpointProfile] | None = None,
        session: requests.Session | None = None,
    ) -> None:
        self._profiles: dict[str, EndpointProfile] = dict(profiles or {})
        self._session = session or requests.Session()
        self._semaphores: dict[tuple[str, str], threading.Semaphore] = {}
        self._lock = threading.Lock()
        self.metrics: dict[str, RoleMetrics] = {}

    # -- profile plumbing ---------------------------------------------------

    def profile(self, role: str) -> EndpointProfile:
        if role not in self._profiles:
            self._profiles[role] = profile_from_env(role)
        return self._profiles[role]

    def _semaphore(self, profile: EndpointProfile) -> threading.Semaphore:
        key = (profile.role, profile.url)
        with self._lock:
            if key not in self._semaphores:
                self._semaphores[key] = threading.Semaphore(profile.max_parallel)
            return self._semaphores[key]

    def _metrics(self, role: str) -> RoleMetrics:
        with self._lock:
            if role not in self.metrics:
                self.metrics[role] = RoleMetrics()
            return self.metrics[role]

    # -- transport ----------------------------------------------------------

    def _post(self, profile: EndpointProfile, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        """POST JSON with bounded retries; returns the decoded response body.

        Transport errors, timeouts, 429 and 5xx responses are retried with
        exponential backoff up to ``profile.retries`` times (``retries + 1``
        attempts in total).  A 400 response whose error code marks a context
        window overflow raises :class:`ContextWindowExceeded` immediately;
        other 4xx responses are not retried.
        """
        url = profile.url.rstrip("/") + path
        headers = {"Content-Type": "application/json"}
        if profile.token:
            headers["Authorization"] = f"Bearer {profile.token}"
        metrics = self._metrics(profile.role)
        semaphore = self._semaphore(profile)
        attempts = profile.retries + 1
        last_error: str = "unknown error"
        for attempt in range(attempts):
            if attempt > 0:
                metrics.retries += 1
                time.sleep(_retry_delay(profile.url, attempt - 1, profile.backoff_base))
            metrics.calls += 1
            try:
                with semaphore:
                    response = self._session.post(
                        url, json=payload, headers=headers, timeout=profile.timeout
                    )
            except requests.RequestException as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                continue
            if response.status_code == 200:
                try:
                    body = response.json()
                except ValueError as exc:
                    raise EndpointError(
                        f"{profile.role} endpoint returned non-JSON body: {exc}"
                    ) from exc
                if not isinstance(body, dict):
                    raise EndpointError(f"{profile.role} endpoint returned non-object JSON")
                return body
            if response.status_code == 400 and _is_context_overflow(response):
                raise ContextWindowExceeded(
                    f"{profile.role} endpoint rejected the request: context window exceeded"
                )
            last_error = f"HTTP {response.status_code}: {response.text[:200]}"
            if response.status_code != 429 and 400 <= response.status_code < 500:
                metrics.failures += 1
                raise EndpointError(f"{profile.role} endpoint error ({last_error})")
        metrics.failures += 1
        raise EndpointError(
            f"{profile.role} endpoint failed after {attempts} attempts ({last_error})"
        )

    # -- operations ----------------------------------------------------------

    def complete(
        self,
        request: GenerationRequest,
        role: str = "generation",
        profile: EndpointProfile | None = None,
    ) -> list[Completion]:
        """Run one generation call; returns ``request.n`` completions."""
        profile = profile or self.profile(role)
        params = request.to_params()
        if profile.api == "chat":
            payload = {
                "model": profile.model,
                "messages": [{"role": "user", "content": request.prompt}],
                **params,
            }
            body = self._post(profile, "/v1/chat/completions", payload)
        else:
            payload = {"model": profile.model, "prompt": request.prompt, **params}
            body = self._post(profile, "/v1/completions", payload)
        choices = body.get("choices")
        if not isinstance(choices, list) or not choices:
            raise EndpointError(f"{profile.role} endpoint returned no choices")
        completions: list[Completion] = []
        for i, choice in enumerate(choices):
            if profile.api == "chat":
                message = choice.get("message") or {}
                text = message.get("content")
            else:
                text = choice.get("text")
            if not isinstance(text, str):
                raise EndpointError(f"{profile.role} endpoint choice {i} has no text")
            completions.append(
                Completion(text=text, index=i, finish_reason=choice.get("finish_reason"))
            )
        if len(completions) != request.n:
            raise EndpointError(
                f"{profile.role} endpoint returned {len(completions)} choices, expected {request.n}"
            )
        return completions

    def embed(
        self,
        texts: Sequence[str],
        role: str = "embedding",
        profile: EndpointProfile | None = None,
    ) -> np.ndarray:
        """Embed ``texts``; returns a float64 array of unit-norm rows."""
        if not texts:
            raise ConfigError("embed() requires at least one text")
        profile = profile or self.profile(role)
        payload = {"model": profile.model, "input": list(texts)}
        body = self._post(profile, "/v1/embeddings", payload)
        data = body.get("data")
        if not isinstance(data, list) or len(data) != len(texts):
            raise EndpointError(
                f"embedding endpoint returned {0 if not isinstance(data, list) else len(data)} "
                f"vectors, expected {len(texts)}"
            )
        rows = []
        for i, item in enumerate(data):
            vector = item.get("embedding")
            if not isinstance(vector, list) or not vector:
                raise EndpointError(f"embedding endpoint item {i} has no embedding")
            rows.append(np.asarray(vector, dtype=np.float64))
        matrix = np.vstack(rows)
        norms = np.linalg.norm(matrix, axis=1)
        if np.any(norms == 0.0):
            raise EndpointError("embedding endpoint returned a zero vector")
        matrix = matrix / norms[:, None]
        assert np.all(np.abs(np.linalg.norm(matrix, axis=1) - 1.0) < _EMBED_NORM_TOL)
        return matrix

    def rerank_score(
        self,
        query: str,
        passages: Sequence[str],
        role: str = "rerank",
        profile: EndpointProfile | None = None,
    ) -> list[float]:
        """Score ``passages`` against ``query``; higher means more relevant."""
        if not passages:
            return []
        profile = profile or self.profile(role)
        payload = {"query": query, "passages": list(passages)}
        body = self._post(profile, "/rerank", payload)
        scores = body.get("scores")
        if not isinstance(scores, list) or len(scores) != len(passages):
            raise EndpointError(
                f"rerank endpoint returned {0 if not isinstance(scores, list) else len(scores)} "
                f"scores, expected {len(passages)}"
            )
        return [float(s) for s in scores]

    def judge(
        self,
        prompt: str,
        expect_key: str | None = None,
        role: str = "judge",
        profile: EndpointProfile | None = None,
    ) -> dict[str, Any]:
        """Run a judge call and parse its JSON verdict.

        The reply is scanned for the first balanced-brace JSON object.  When
        parsing fails (or ``expect_key`` is missing), the prompt is re-asked
        once with a format reminder appended; a second failure raises
        :class:`EndpointError`.
        """
        profile = profile or self.profile(role)
        request = GenerationRequest(prompt=prompt, temperature=0.0, n=1, max_new_tokens=512)
        attempts_prompts = [prompt]
        reminder = '\n\nYour previous reply could not be parsed. Return only a valid JSON object'
        if expect_key:
            reminder += f' with the key "{expect_key}"'
        reminder += ", with no surrounding text."
        attempts_prompts.append(prompt + reminder)
        last_text = ""
        for attempt_prompt in attempts_prompts:
            completions = self.complete(
                replace(request, prompt=attempt_prompt), role=role, profile=profile
            )
            last_text = completions[0].text
            parsed = extract_json_object(last_text)
            if parsed is not None and (expect_key is None or expect_key in parsed):
                return parsed
        raise EndpointError(
            f"judge endpoint reply could not be parsed as JSON after re-ask: {last_text[:200]!r}"
        )


def _is_context_overflow(response: requests.Response) -> bool:
    try:
        body = response.json()
    except ValueError:
        return False
    error = body.get("error") if isinstance(body, dict) else None
    if not isinstance(error, dict):
        return False
    code = str(error.get("code", ""))
    message = str(error.get("message", ""))
    return "context_length_exceeded" in code or "context window" in message.lower()
