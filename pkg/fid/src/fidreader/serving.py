"""HTTP serving endpoint speaking the harness's generation wire protocol.

The server accepts ``POST /v1/chat/completions`` and ``POST /v1/completions``
with the standard request bodies, extracts the prompt, parses the final
question block out of the rendered reader prompt, assembles the fusion input
(parsed contexts become the independent pairs, option-focused ones already
lead in the prompt's ordering), and answers with one constrained greedy
decode — the reply body's text is exactly the chosen option letter.
Malformed requests (bad JSON, missing fields, prompts without a recognizable
question block) get a 400 with an ``{"error": ...}`` body.

One model instance serves all requests: the listener is threaded, but every
forward pass runs under a lock, so concurrent requests queue for the model
rather than racing it.

Prompt layout: the parser anchors on the *last* ``### Question:`` marker —
few-shot demonstrations earlier in the prompt have their own blocks — takes
an immediately preceding ``### Context:`` block when one belongs to that
final question, and reads lettered option lines in either ``A. text`` or
``(A) text`` form.  Chat-family wrappers around the blocks are ignored.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any

from .errors import InputError
from .inputs import BUDGET_LONG, MAX_PAIRS, build_input
from .model import FidModel
from .tokenizer import OPTION_LETTERS, HashTokenizer
from .training import load_checkpoint

QUESTION_MARKER = "### Question:"
CONTEXT_MARKER = "### Context:"
ANSWER_MARKER = "### Answer:"

_OPTION_LINE = re.compile(r"^\s*\(?([A-E])[.)]\s+(.*?)\s*$")
_CHAT_TAG = re.compile(r"</?s>|<\|[a-z]+\|>")


class PromptFormatError(InputError):
    """Raised when a prompt holds no recognizable question block."""


@dataclass(frozen=True)
class ParsedPrompt:
    """The final question block recovered from a rendered reader prompt."""

    question: str
    options: tuple[str, ...]
    contexts: tuple[str, ...]


def parse_reader_prompt(prompt: str) -> ParsedPrompt:
    """Recover (question, options, contexts) from a rendered reader prompt."""
    q = prompt.rfind(QUESTION_MARKER)
    if q == -1:
        raise PromptFormatError(f"prompt has no {QUESTION_MARKER!r} block")
    c = prompt.rfind(CONTEXT_MARKER, 0, q)
    contexts: tuple[str, ...] = ()
    if c != -1 and prompt.find(QUESTION_MARKER, c) == q:
        block = prompt[c + len(CONTEXT_MARKER) : q]
        contexts = tuple(
            line.strip() for line in _CHAT_TAG.sub("", block).splitlines() if line.strip()
        )
    tail = prompt[q + len(QUESTION_MARKER) :]
    answer_at = tail.find(ANSWER_MARKER)
    if answer_at != -1:
        tail = tail[:answer_at]
    question_lines: list[str] = []
    letters: list[str] = []
    options: list[str] = []
    for raw_line in tail.splitlines():
        line = _CHAT_TAG.sub("", raw_line).strip()
        if not line:
            continue
        match = _OPTION_LINE.match(line)
        if match:
            letters.append(match.group(1))
            options.append(match.group(2))
        elif options:
            break  # prose after the option list is not part of the question
        else:
            question_lines.append(line)
    question = "\n".join(question_lines).strip()
    if not question:
        raise PromptFormatError("prompt question block is empty")
    if not options:
        raise PromptFormatError("prompt has no option lines")
    if letters != list(OPTION_LETTERS[: len(letters)]):
        raise PromptFormatError(f"option letters {letters} are not consecutive from 'A'")
    return ParsedPrompt(question=question, options=tuple(options), contexts=contexts)


class _Handler(BaseHTTPRequestHandler):
    server: "_Server"

    def log_message(self, format: str, *args: Any) -> None:  # noqa: A002 - stdlib signature
        pass

    def _send_json(self, status: int, payload: dict[str, Any]) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error(self, status: int, message: str) -> None:
        self._send_json(status, {"error": {"message": message, "type": "invalid_request_error"}})

    def do_GET(self) -> None:  # noqa: N802 - stdlib handler name
        if self.path == "/health":
            self._send_json(200, {"status": "ok", "model": self.server.owner.model_name})
        else:
            self._send_error(404, f"no such path: {self.path}")

    def do_POST(self) -> None:  # noqa: N802 - stdlib handler name
        if self.path not in ("/v1/chat/completions", "/v1/completions"):
            self._send_error(404, f"no such path: {self.path}")
            return
        try:
            length = int(self.headers.get("Content-Length", ""))
        except ValueError:
            self._send_error(400, "missing or invalid Content-Length")
            return
        try:
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            self._send_error(400, f"request body is not valid JSON: {exc}")
            return
        if not isinstance(payload, dict):
            self._send_error(400, "request body must be a JSON object")
            return
        try:
            prompt = _extract_prompt(payload, chat=self.path.endswith("chat/completions"))
            letter = self.server.owner.answer(prompt)
        except (PromptFormatError, InputError) as exc:
            self._send_error(400, str(exc))
            return
        n = payload.get("n", 1)
        n = n if isinstance(n, int) and n >= 1 else 1
        if self.path.endswith("chat/completions"):
            choices = [
                {
                    "index": i,
                    "message": {"role": "assistant", "content": letter},
                    "finish_reason": "stop",
                }
                for i in range(n)
            ]
            body = {"object": "chat.completion", "model": self.server.owner.model_name, "choices": choices}
        else:
            choices = [{"index": i, "text": letter, "finish_reason": "stop"} for i in range(n)]
            body = {"object": "text_completion", "model": self.server.owner.model_name, "choices": choices}
        self._send_json(200, body)


def _extract_prompt(payload: dict[str, Any], *, chat: bool) -> str:
    if chat:
        messages = payload.get("messages")
        if not isinstance(messages, list) or not messages:
            raise PromptFormatError("chat request needs a non-empty 'messages' list")
        last = messages[-1]
        content = last.get("content") if isinstance(last, dict) else None
        if not isinstance(content, str):
            raise PromptFormatError("last chat message has no string 'content'")
        return content
    prompt = payload.get("prompt")
    if not isinstance(prompt, str):
        raise PromptFormatError("completions request needs a string 'prompt'")
    return prompt


class FidServer:
    """Serve one model instance over the generation wire protocol."""

    def __init__(
        self,
        model: FidModel,
        tokenizer: HashTokenizer,
        *,
        budget: int = BUDGET_LONG,
        host: str = "127.0.0.1",
        port: int = 0,
        model_name: str = "fidreader",
    ) -> None:
        self.model = model.eval()
        self.tokenizer = tokenizer
        self.budget = budget
        self.model_name = model_name
        self._model_lock = threading.Lock()
        self._httpd = _Server((host, port), _Handler, self)
        self._thread: threading.Thread | None = None

    @classmethod
    def from_checkpoint(cls, directory: str | Path, **kwargs: Any) -> "FidServer":
        loaded = load_checkpoint(directory)
        return cls(loaded.model, loaded.tokenizer, budget=loaded.budget, **kwargs)

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def answer(self, prompt: str) -> str:
        """Parse ``prompt`` and greedily decode the answer letter."""
        parsed = parse_reader_prompt(prompt)
        fid_input = build_input(
            parsed.question,
            parsed.options,
            parsed.contexts[:MAX_PAIRS],
            tokenizer=self.tokenizer,
            budget=self.budget,
        )
        with self._model_lock:
            return self.model.greedy_letter(fid_input)

    def start(self) -> None:
        """Serve in a daemon thread; returns once the socket is listening."""
        if self._thread is not None:
            return
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    def serve_forever(self) -> None:
        """Serve on the calling thread (blocks until ``stop``)."""
        self._httpd.serve_forever()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None


class _Server(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], handler: type, owner: FidServer) -> None:
        super().__init__(address, handler)
        #: Handlers reach the owning FidServer as ``self.server.owner``.
        self.owner = owner
