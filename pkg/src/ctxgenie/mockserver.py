"""Deterministic in-process mock for the model endpoints.

The mock serves every wire protocol the gateway speaks, namespaced by role
so one server can back several endpoint profiles at once::

    http://127.0.0.1:<port>/<role>/v1/chat/completions
    http://127.0.0.1:<port>/<role>/v1/completions
    http://127.0.0.1:<port>/<role>/v1/embeddings
    http://127.0.0.1:<port>/<role>/rerank

Each role is configured with a policy dict.  Policies are pure functions of
the request content (plus a per-role call counter for failure injection), so
repeated runs produce byte-identical behaviour.

Generation-style policy kinds
    ``echo``         reply with the prompt itself
    ``fixed``        reply with ``text``
    ``letter``       reply "The answer is (X)." with the configured letter
    ``hash-text``    deterministic synthetic passages derived from a hash of
                     the prompt (``marker`` prefixes each passage;
                     ``leak_mod`` plants an answer-revealing sentence in a
                     content-determined subset)
    ``gold-letter``  parse the final question block and option lines from the
                     prompt, look the question up in ``records``, and answer
                     with the option whose text matches the gold answer
    ``all-yes`` / ``all-no``  judge verdicts (1s or 0s); both decompose
                     answers into sentence claims for claim prompts
    ``contains-judge``  verdict 1 exactly when the numbered item contains
                     ``needle``
    ``flaky-judge``  first reply per call-pair is unparseable prose, the
                     re-ask succeeds (wraps ``all-yes``)
    ``scripted-judge``  replies from a fixed list of JSON objects, in call
                     order

Embedding policy: ``hash`` — a unit vector drawn from a PRNG seeded with the
SHA-256 of the text, so identical texts embed identically.

Rerank policies: ``marker`` (passages containing ``marker`` score high, minus
a small rank-stabilising step), ``reverse`` (reverses input order), and
``constant`` (all ties).

Failure injection on any role: ``fail_times`` makes the first N calls return
HTTP 500; ``max_prompt_chars`` returns an OpenAI-style context-window error
when the prompt is longer; ``delay`` sleeps before responding.

Admin endpoints: ``GET /admin/calls`` returns ``{"total", "by_role",
"max_in_flight"}``; ``POST /admin/reset`` zeroes counters and policy state;
``GET /health`` returns 200.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError

_WS = re.compile(r"\s+")

#: Template control tokens stripped from prompt lines before option parsing.
_CONTROL_TOKENS = (
    "[/INST]",
    "</s>",
    "<|eot_id|>",
    "<|end|>",
    "<|assistant|>",
    "<|user|>",
    "<s>",
)

_OPTION_LINE = re.compile(r"^(?:\(([A-E])\)|([A-E])[.)])\s+(.*)$")
_NUMBERED_ITEM = re.compile(r"^\d+\.\s+(.*)$")
_N_ITEMS = re.compile(r"exactly (\d+) integers")

_WORDS = (
    "ligand", "perfusion", "cohort", "assay", "lesion", "titration",
    "baseline", "relapse", "marker", "gradient", "uptake", "stenosis",
    "sequela", "occlusion", "clearance", "biopsy",
)


def _norm(text: str) -> str:
    return _WS.sub(" ", text).strip()


def _digest(*parts: str) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.digest()


def _hash_passage(prompt: str, ordinal: int, marker: str, leak_mod: int) -> str:
    """Deterministic multi-sentence passage derived from the prompt hash."""
    digest = _digest("hash-text", prompt, str(ordinal))
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "little")))
    n_sentences = 2 + int(rng.integers(0, 3))
    sentences = []
    for _ in range(n_sentences):
        picks = rng.choice(len(_WORDS), size=4, replace=True)
        a, b, c, d = (_WORDS[int(p)] for p in picks)
        code = int(rng.integers(100, 999))
        sentences.append(
            f"Study {code} linked the {a} {b} profile with {c} changes during {d} follow-up."
        )
    text = " ".join(sentences)
    if marker:
        text = f"{marker} {text}"
    if leak_mod > 0 and digest[-1] % leak_mod == 0:
        text += (
            " Therefore, the answer is evident to most reviewers."
            " Independent panels still debate the mechanism."
        )
    return text


def _strip_control(line: str) -> str:
    for token in _CONTROL_TOKENS:
        line = line.replace(token, "")
    return line.strip()


def _parse_final_question(prompt: str) -> tuple[str, list[str]]:
    """Extract the last question text and its option texts from a prompt."""
    idx = prompt.rfind("Question:")
    if idx == -1:
        raise ValueError("no question block found in prompt")
    tail = prompt[idx + len("Question:") :]
    question_lines: list[str] = []
    options: list[str] = []
    for raw_line in tail.splitlines():
        line = _strip_control(raw_line)
        if not line:
            if options:
                break
            continue
        match = _OPTION_LINE.match(line)
        if match:
            options.append(match.group(3).strip())
        elif not options:
            question_lines.append(line)
        else:
            break
    question = _norm(" ".join(question_lines))
    if not question or not options:
        raise ValueError(
            f"could not parse question/options from prompt tail: {tail[:160]!r}"
        )
    return question, options


class _RoleState:
    """Mutable per-role counters used by failure injection and scripts."""

    def __init__(self) -> None:
        self.calls = 0
        self.fail_served = 0
        self.script_index = 0
        self.flaky_pending = True


class MockEndpointServer:
    """Threaded HTTP server emulating every endpoint role."""

    def __init__(
        self,
        roles: dict[str, dict[str, Any]],
        host: str = "127.0.0.1",
        port: int = 0,
    ) -> None:
        self.roles = {name: dict(cfg) for name, cfg in roles.items()}
        self._records: dict[str, dict[str, Any]] = {}
        for name, cfg in self.roles.items():
            if cfg.get("records_path"):
                cfg["records"] = _load_records(Path(cfg["records_path"]))
        self._host = host
        self._port = port
        self._httpd: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None
        self._lock = threading.Lock()
        self._states: dict[str, _RoleState] = {name: _RoleState() for name in self.roles}
        self.calls_total = 0
        self.in_flight = 0
        self.max_in_flight = 0

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> str:
        if self._httpd is not None:
            return self.base_url
        server = ThreadingHTTPServer((self._host, self._port), _Handler)
        server.daemon_threads = True
        server.mock = self  # type: ignore[attr-defined]
        self._httpd = server
        self._thread = threading.Thread(target=server.serve_forever, daemon=True)
        self._thread.start()
        return self.base_url

    def stop(self) -> None:
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._httpd = None
            self._thread = None

    def __enter__(self) -> "MockEndpointServer":
        self.start()
        return self

    def __exit__(self, *exc_info: Any) -> None:
        self.stop()

    @property
    def base_url(self) -> str:
        assert self._httpd is not None, "server not started"
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def url_for(self, role: str) -> str:
        if role not in self.roles:
            raise ConfigError(f"mock server has no role {role!r}")
        return f"{self.base_url}/{role}"

    # -- bookkeeping ----------------------------------------------------------

    def call_stats(self) -> dict[str, Any]:
        with self._lock:
            return {
                "total": self.calls_total,
                "by_role": {name: state.calls for name, state in self._states.items()},
                "max_in_flight": self.max_in_flight,
            }

    def reset(self) -> None:
        with self._lock:
            self.calls_total = 0
            self.max_in_flight = 0
            for state in self._states.values():
                state.calls = 0
                state.fail_served = 0
                state.script_index = 0
                state.flaky_pending = True

    def _enter_call(self, role: str) -> _RoleState:
        with self._lock:
            state = self._states[role]
            state.calls += 1
            self.calls_total += 1
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
            return state

    def _exit_call(self) -> None:
        with self._lock:
            self.in_flight -= 1

    # -- policy evaluation -----------------------------------------------------

    def handle_model_call(
        self, role: str, wire_path: str, payload: dict[str, Any]
    ) -> tuple[int, dict[str, Any]]:
        cfg = self.roles[role]
        state = self._enter_call(role)
        try:
            delay = float(cfg.get("delay", 0.0))
            if delay:
                time.sleep(delay)
            fail_times = int(cfg.get("fail_times", 0))
            with self._lock:
                if state.fail_served < fail_times:
                    state.fail_served += 1
                    return 500, {"error": {"message": "injected failure"}}
            if wire_path == "/v1/embeddings":
                return self._embeddings(cfg, payload)
            if wire_path == "/rerank":
                return self._rerank(cfg, payload)
            if wire_path in ("/v1/chat/completions", "/v1/completions"):
                return self._completion(cfg, state, wire_path, payload)
            return 404, {"error": {"message": f"unknown path {wire_path!r}"}}
        finally:
            self._exit_call()

    def _completion(
        self,
        cfg: dict[str, Any],
        state: _RoleState,
        wire_path: str,
        payload: dict[str, Any],
    ) -> tuple[int, dict[str, Any]]:
        if wire_path == "/v1/chat/completions":
            messages = payload.get("messages") or []
            prompt = "\n".join(
                str(m.get("content", "")) for m in messages if isinstance(m, dict)
            )
        else:
            prompt = str(payload.get("prompt", ""))
        limit = int(cfg.get("max_prompt_chars", 0))
        if limit and len(prompt) > limit:
            return 400, {
                "error": {
                    "code": "context_length_exceeded",
                    "message": f"prompt is {len(prompt)} chars, limit {limit}",
                }
            }
        n = int(payload.get("n", 1))
        try:
            texts = [self._completion_text(cfg, state, prompt, i) for i in range(n)]
        except ValueError as exc:
            return 500, {"error": {"message": str(exc)}}
        choices = []
        for i, text in enumerate(texts):
            if wire_path == "/v1/chat/completions":
                choices.append(
                    {
                        "index": i,
                        "message": {"role": "assistant", "content": text},
                        "finish_reason": "stop",
                    }
                )
            else:
                choices.append({"index": i, "text": text, "finish_reason": "stop"})
        kind = "chat.completion" if wire_path == "/v1/chat/completions" else "text_completion"
        return 200, {"object": kind, "model": payload.get("model", "mock"), "choices": choices}

    def _completion_text(
        self, cfg: dict[str, Any], state: _RoleState, prompt: str, ordinal: int
    ) -> str:
        kind = cfg.get("kind", "echo")
        if kind == "echo":
            return prompt
        if kind == "fixed":
            return str(cfg.get("text", ""))
        if kind == "letter":
            return f"The answer is ({cfg.get('letter', 'A')})."
        if kind == "hash-text":
            return _hash_passage(
                prompt,
                ordinal,
                str(cfg.get("marker", "")),
                int(cfg.get("leak_mod", 0)),
            )
        if kind == "gold-letter":
            return self._gold_letter(cfg, prompt)
        if kind in ("all-yes", "all-no", "contains-judge"):
            return self._judge_text(cfg, kind, prompt)
        if kind == "flaky-judge":
            with self._lock:
                pending = state.flaky_pending
                state.flaky_pending = not pending
            if pending:
                return "I believe most of these look plausible, broadly speaking."
            return self._judge_text(cfg, "all-yes", prompt)
        if kind == "scripted-judge":
            responses = cfg.get("responses") or []
            with self._lock:
                idx = state.script_index
                state.script_index += 1
            if idx >= len(responses):
                raise ValueError(f"scripted-judge exhausted after {len(responses)} replies")
            return json.dumps(responses[idx])
        raise ValueError(f"unknown generation policy kind {kind!r}")

    def _gold_letter(self, cfg: dict[str, Any], prompt: str) -> str:
        records = cfg.get("records") or []
        if not records:
            raise ValueError("gold-letter policy has no records")
        question, options = _parse_final_question(prompt)
        by_question = {_norm(r["question"]): r for r in records}
        record = by_question.get(question)
        if record is None:
            by_options = {
                frozenset(_norm(o) for o in r["options"]): r for r in records
            }
            record = by_options.get(frozenset(_norm(o) for o in options))
        if record is None:
            raise ValueError(f"no record matches parsed question {question[:80]!r}")
        gold_text = _norm(record["options"][record["gold"]])
        for i, option in enumerate(options):
            if _norm(option) == gold_text:
                letter = "ABCDE"[i]
                return f"The answer is ({letter}) {options[i]}."
        raise ValueError(
            f"gold text {gold_text[:60]!r} not among parsed options {options!r}"
        )

    def _judge_text(self, cfg: dict[str, Any], kind: str, prompt: str) -> str:
        if '"claims"' in prompt:
            answer = _extract_section(prompt, "### Answer:")
            claims = [s for s in re.split(r"(?<=[.!?])\s+", answer) if s.strip()]
            if not claims:
                claims = [answer] if answer else []
            return json.dumps({"claims": claims})
        match = _N_ITEMS.search(prompt)
        if match:
            n_items = int(match.group(1))
        else:
            n_items = len([l for l in prompt.splitlines() if _NUMBERED_ITEM.match(l)])
        if n_items <= 0:
            raise ValueError("judge prompt has no countable items")
        if kind == "all-yes":
            verdicts = [1] * n_items
        elif kind == "all-no":
            verdicts = [0] * n_items
        else:  # contains-judge
            needle = str(cfg.get("needle", ""))
            items = [
                m.group(1)
                for l in prompt.splitlines()
                if (m := _NUMBERED_ITEM.match(l))
            ]
            if len(items) != n_items:
                raise ValueError(
                    f"judge prompt lists {len(items)} items but asks for {n_items}"
                )
            verdicts = [1 if needle and needle in item else 0 for item in items]
        return json.dumps({"verdicts": verdicts})

    def _embeddings(
        self, cfg: dict[str, Any], payload: dict[str, Any]
    ) -> tuple[int, dict[str, Any]]:
        kind = cfg.get("kind", "hash")
        if kind != "hash":
            return 500, {"error": {"message": f"unknown embedding policy kind {kind!r}"}}
        texts = payload.get("input")
        if isinstance(texts, str):
            texts = [texts]
        if not isinstance(texts, list) or not texts:
            return 400, {"error": {"message": "input must be a non-empty list"}}
        dim = int(cfg.get("dim", 32))
        data = []
        for i, text in enumerate(texts):
            vector = hash_embedding(str(text), dim)
            data.append({"index": i, "object": "embedding", "embedding": vector.tolist()})
        return 200, {"object": "list", "data": data}

    def _rerank(
        self, cfg: dict[str, Any], payload: dict[str, Any]
    ) -> tuple[int, dict[str, Any]]:
        passages = payload.get("passages")
        if not isinstance(passages, list):
            return 400, {"error": {"message": "passages must be a list"}}
        kind = cfg.get("kind", "constant")
        if kind == "marker":
            marker = str(cfg.get("marker", ""))
            hit = float(cfg.get("hit", 10.0))
            miss = float(cfg.get("miss", 1.0))
            scores = [
                (hit if marker and marker in str(p) else miss) - i * 1e-3
                for i, p in enumerate(passages)
            ]
        elif kind == "reverse":
            scores = [float(i) for i in range(len(passages))]
        elif kind == "constant":
            scores = [float(cfg.get("score", 0.0))] * len(passages)
        else:
            return 500, {"error": {"message": f"unknown rerank policy kind {kind!r}"}}
        return 200, {"scores": scores}


def hash_embedding(text: str, dim: int) -> np.ndarray:
    """Unit-norm vector deterministically derived from the text content."""
    digest = _digest("embed", text)
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "little")))
    vector = rng.standard_normal(dim)
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:  # pragma: no cover - measure-zero under a continuous draw
        vector[0] = 1.0
        norm = 1.0
    return vector / norm


def _extract_section(prompt: str, heading: str) -> str:
    idx = prompt.rfind(heading)
    if idx == -1:
        return ""
    tail = prompt[idx + len(heading) :]
    end = tail.find("\n\nReturn")
    if end != -1:
        tail = tail[:end]
    return tail.strip()


def _load_records(path: Path) -> list[dict[str, Any]]:
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    @property
    def mock(self) -> MockEndpointServer:
        return self.server.mock  # type: ignore[attr-defined]

    def log_message(self, *args: Any) -> None:  # noqa: D102 - silence stdlib logging
        pass

    def _send_json(self, status: int, body: dict[str, Any]) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self) -> None:  # noqa: N802 - stdlib naming
        if self.path == "/health":
            self._send_json(200, {"status": "ok"})
        elif self.path == "/admin/calls":
            self._send_json(200, self.mock.call_stats())
        else:
            self._send_json(404, {"error": {"message": f"unknown path {self.path!r}"}})

    def do_POST(self) -> None:  # noqa: N802 - stdlib naming
        if self.path == "/admin/reset":
            self.mock.reset()
            self._send_json(200, {"status": "reset"})
            return
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length) if length else b"{}"
        try:
            payload = json.loads(raw.decode("utf-8"))
        except json.JSONDecodeError:
            self._send_json(400, {"error": {"message": "request body is not JSON"}})
            return
        parts = self.path.lstrip("/").split("/", 1)
        if len(parts) != 2 or parts[0] not in self.mock.roles:
            self._send_json(404, {"error": {"message": f"unknown role path {self.path!r}"}})
            return
        role, rest = parts
        status, body = self.mock.handle_model_call(role, "/" + rest, payload)
        self._send_json(status, body)
