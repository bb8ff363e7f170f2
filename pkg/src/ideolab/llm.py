"""Chat-completion gateway: HTTP client, deterministic mocks, label parsing.

Every failure mode of a single classification is encoded in the
prediction record's ``parse_status`` rather than raised, so a batch never
dies on one bad response. Record order is fixed by query id, independent
of request completion order.
"""

from __future__ import annotations

import logging
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .corpus import IDEOLOGIES, Ideology
from .prompting import ANSWER_MARKER, RenderedPrompt

logger = logging.getLogger(__name__)

CLARIFICATION = "Respond with exactly one word: liberal, neutral, or conservative."

PARSE_OK = "ok"
PARSE_AMBIGUOUS = "ambiguous"
PARSE_EMPTY = "empty"
PARSE_TRANSPORT_ERROR = "transport_error"

# llm callables take (messages, query_id) and return the response text
LLMCallable = Callable[[list[dict], Optional[str]], str]


class TransportError(RuntimeError):
    """A request-level failure; ``retryable`` says whether retrying can help."""

    def __init__(self, message: str, retryable: bool = True, retry_after: Optional[float] = None):
        super().__init__(message)
        self.retryable = retryable
        self.retry_after = retry_after


class PromptTooLargeError(ValueError):
    """Prompt exceeds the character budget even with descriptions removed."""


@dataclass
class LLMConfig:
    model_name: str = "gpt-4o"
    base_url: str = ""
    api_key: Optional[str] = None
    temperature: float = 0.0
    max_in_flight: int = 4
    max_retries: int = 3
    timeout: float = 30.0
    char_budget: int = 120_000
    chat_turns: bool = False
    backoff_base: float = 1.0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be nonnegative")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")

    def resolved_base_url(self) -> str:
        return self.base_url or os.environ.get("LLM_BASE_URL", "https://api.openai.com")

    def resolved_api_key(self) -> Optional[str]:
        return self.api_key or os.environ.get("LLM_API_KEY")


@dataclass
class PredictionRecord:
    query_id: str
    gold: Optional[Ideology]
    pred: Optional[Ideology]
    raw_response: str
    parse_status: str
    attempts: int
    config_hash: str

    def to_json_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "gold": self.gold.wire if self.gold is not None else None,
            "pred": self.pred.wire if self.pred is not None else None,
            "raw_response": self.raw_response,
            "parse_status": self.parse_status,
            "attempts": self.attempts,
            "config_hash": self.config_hash,
        }

    @classmethod
    def from_json_dict(cls, record: dict) -> "PredictionRecord":
        return cls(
            query_id=record["query_id"],
            gold=Ideology.from_string(record["gold"]) if record.get("gold") else None,
            pred=Ideology.from_string(record["pred"]) if record.get("pred") else None,
            raw_response=record.get("raw_response", ""),
            parse_status=record["parse_status"],
            attempts=int(record.get("attempts", 0)),
            config_hash=record.get("config_hash", ""),
        )


_LABEL_RE = re.compile(r"\b(liberal|neutral|conservative)\b", re.IGNORECASE)


def parse_label(text: str, cot: bool = False) -> tuple[Optional[Ideology], str]:
    """Find the answered label by case-insensitive word-boundary search.

    Exactly one distinct label mentioned -> that label; none -> empty;
    two or more distinct -> ambiguous. For CoT responses only the text
    after the last "Answer:" marker is searched (whole text if the model
    never emitted the marker).
    """
    scope = text
    if cot:
        pos = text.rfind(ANSWER_MARKER)
        if pos >= 0:
            scope = text[pos + len(ANSWER_MARKER) :]
    found = {match.group(1).lower() for match in _LABEL_RE.finditer(scope)}
    if len(found) == 1:
        return Ideology.from_string(found.pop()), PARSE_OK
    if not found:
        return None, PARSE_EMPTY
    return None, PARSE_AMBIGUOUS


_IDEOLOGY_LINE_RE = re.compile(r"^Ideology: (Liberal|Neutral|Conservative)$", re.MULTILINE)


def _demo_labels(messages: Sequence[dict]) -> list[Ideology]:
    text = "\n".join(m.get("content", "") for m in messages)
    return [Ideology.from_string(m) for m in _IDEOLOGY_LINE_RE.findall(text)]


def mock_llm(
    kind: str,
    label: Optional[str] = None,
    responses: Optional[Mapping[str, str]] = None,
) -> LLMCallable:
    """Deterministic stand-ins for a real endpoint.

    - ``echo_majority``: majority gold label among the prompt's demo
      blocks, ties (including zero demos) resolve to neutral
    - ``nearest_demo``: label of the first demo block (neutral if none)
    - ``fixed``: a constant label, e.g. mock_llm("fixed", label="liberal")
    - ``scripted``: per-query responses; unknown ids get an empty response
    """
    if kind == "echo_majority":

        def majority(messages, query_id=None):
            demo_labels = _demo_labels(messages)
            counts = {lab: demo_labels.count(lab) for lab in IDEOLOGIES}
            top = max(counts.values()) if demo_labels else 0
            winners = [lab for lab in IDEOLOGIES if counts[lab] == top and top > 0]
            if len(winners) != 1:
                return Ideology.NEUTRAL.wire
            return winners[0].wire

        return majority
    if kind == "nearest_demo":

        def nearest(messages, query_id=None):
            demo_labels = _demo_labels(messages)
            return demo_labels[0].wire if demo_labels else Ideology.NEUTRAL.wire

        return nearest
    if kind == "fixed":
        if label is None:
            raise ValueError("fixed mock needs a label")
        constant = Ideology.from_string(label).wire

        def fixed(messages, query_id=None):
            return constant

        return fixed
    if kind == "scripted":
        table = dict(responses or {})

        def scripted(messages, query_id=None):
            return table.get(query_id, "")

        return scripted
    raise ValueError(f"unknown mock kind: {kind!r}")


def mock_from_spec(spec: str) -> LLMCallable:
    """Parse a CLI mock spec: echo_majority | nearest_demo | fixed:<label>."""
    if spec.startswith("fixed:"):
        return mock_llm("fixed", label=spec.split(":", 1)[1])
    return mock_llm(spec)


class ChatCompletionsClient:
    """OpenAI-compatible chat-completions client (single attempt per call;
    the retry policy lives in :func:`classify`)."""

    def __init__(self, cfg: LLMConfig):
        import requests

        self.cfg = cfg
        self._session = requests.Session()
        self._request_count = 0
        self._lock = threading.Lock()

    @property
    def request_count(self) -> int:
        with self._lock:
            return self._request_count

    def __call__(self, messages: list[dict], query_id: Optional[str] = None) -> str:
        import requests

        with self._lock:
            self._request_count += 1
        url = self.cfg.resolved_base_url().rstrip("/") + "/v1/chat/completions"
        headers = {}
        key = self.cfg.resolved_api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": self.cfg.model_name,
            "messages": messages,
            "temperature": self.cfg.temperature,
        }
        try:
            resp = self._session.post(url, json=payload, headers=headers, timeout=self.cfg.timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransportError(f"request failed: {exc}") from exc
        if resp.status_code == 429:
            retry_after = None
            header = resp.headers.get("Retry-After")
            if header is not None:
                try:
                    retry_after = float(header)
                except ValueError:
                    retry_after = None
            raise TransportError("rate limited (HTTP 429)", retry_after=retry_after)
        if resp.status_code >= 500:
            raise TransportError(f"server error (HTTP {resp.status_code})")
        if resp.status_code >= 400:
            raise TransportError(f"request rejected (HTTP {resp.status_code})", retryable=False)
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed response body: {exc}") from exc


def fit_to_budget(prompt: RenderedPrompt, char_budget: int) -> RenderedPrompt:
    """Shrink an oversize prompt by trimming Description lines only.

    Trim order: last demo block first, then earlier demos, the query's
    description last. A description trimmed to nothing drops its line
    entirely. If the prompt still exceeds the budget with every
    description removed, raise: no other field may be silently cut.
    """
    if len(prompt.text) <= char_budget:
        return prompt

    def strip_description(block: str, excess: int) -> tuple[str, int]:
        lines = block.split("\n")
        for i, line in enumerate(lines):
            if line.startswith("Description: "):
                content = line[len("Description: ") :]
                keep = max(0, len(content) - excess)
                saved = len(content) - keep
                if keep == 0:
                    saved = len(line) + 1  # the line and its newline go away
                    del lines[i]
                else:
                    lines[i] = "Description: " + content[:keep]
                return "\n".join(lines), saved
        return block, 0

    blocks = list(prompt.demo_blocks) + [prompt.query_block]
    excess = len(prompt.text) - char_budget
    for idx in list(range(len(blocks) - 2, -1, -1)) + [len(blocks) - 1]:
        if excess <= 0:
            break
        blocks[idx], saved = strip_description(blocks[idx], excess)
        excess -= saved
    fitted = replace(prompt, demo_blocks=tuple(blocks[:-1]), query_block=blocks[-1])
    if len(fitted.text) > char_budget:
        raise PromptTooLargeError(
            f"prompt is {len(fitted.text)} chars with all descriptions removed, "
            f"budget is {char_budget}"
        )
    return fitted


def classify(
    prompt: RenderedPrompt,
    cfg: LLMConfig,
    llm: LLMCallable,
    *,
    query_id: str,
    gold: Optional[Ideology] = None,
    config_hash: str = "",
    sleep: Callable[[float], None] = time.sleep,
) -> PredictionRecord:
    """Send one prompt and parse the label out of the response.

    Transport errors retry with exponential backoff (base 1s, doubled,
    jittered), honoring a server-provided wait on rate limits. An
    ambiguous parse triggers exactly one clarification reprompt. Nothing
    raises; the terminal state lands in ``parse_status``.
    """

    def record(pred, raw, status, attempts):
        return PredictionRecord(
            query_id=query_id,
            gold=gold,
            pred=pred,
            raw_response=raw,
            parse_status=status,
            attempts=attempts,
            config_hash=config_hash,
        )

    try:
        fitted = fit_to_budget(prompt, cfg.char_budget)
    except PromptTooLargeError as exc:
        return record(None, f"[error] {exc}", PARSE_TRANSPORT_ERROR, 0)
    messages = fitted.as_messages(cfg.chat_turns)

    def call_with_retries(msgs, attempts_so_far):
        attempts = attempts_so_far
        for attempt in range(cfg.max_retries + 1):
            attempts += 1
            try:
                return llm(msgs, query_id), attempts, None
            except TransportError as exc:
                if not exc.retryable or attempt >= cfg.max_retries:
                    return None, attempts, exc
                delay = exc.retry_after
                if delay is None:
                    delay = cfg.backoff_base * (2.0**attempt) * (1.0 + 0.25 * random.random())
                logger.debug("query %s: transport error, retrying in %.1fs", query_id, delay)
                sleep(delay)
        return None, attempts, TransportError("retries exhausted")  # pragma: no cover

    text, attempts, error = call_with_retries(messages, 0)
    if error is not None:
        return record(None, f"[error] {error}", PARSE_TRANSPORT_ERROR, attempts)

    pred, status = parse_label(text, cot=prompt.cot)
    if status == PARSE_AMBIGUOUS:
        clarified = [dict(m) for m in messages]
        clarified[-1]["content"] += "\n\n" + CLARIFICATION
        text2, attempts, error = call_with_retries(clarified, attempts)
        if error is None:
            pred2, status2 = parse_label(text2, cot=prompt.cot)
            if status2 == PARSE_OK:
                return record(pred2, text2, PARSE_OK, attempts)
        return record(None, text, PARSE_AMBIGUOUS, attempts)
    return record(pred, text, status, attempts)


def classify_batch(
    tasks: Iterable[tuple[str, Optional[Ideology], RenderedPrompt]],
    cfg: LLMConfig,
    llm: LLMCallable,
    config_hash: str = "",
    sleep: Callable[[float], None] = time.sleep,
) -> list[PredictionRecord]:
    """Classify (query_id, gold, prompt) tasks with bounded concurrency.

    Output is sorted by query id, so results do not depend on completion
    order.
    """
    tasks = list(tasks)
    records: list[PredictionRecord] = []
    if not tasks:
        return records
    if cfg.max_in_flight == 1 or len(tasks) == 1:
        for query_id, gold, prompt in tasks:
            records.append(
                classify(prompt, cfg, llm, query_id=query_id, gold=gold, config_hash=config_hash, sleep=sleep)
            )
    else:
        with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
            futures = [
                pool.submit(
                    classify, prompt, cfg, llm, query_id=query_id, gold=gold, config_hash=config_hash, sleep=sleep
                )
                for query_id, gold, prompt in tasks
            ]
            records = [f.result() for f in futures]
    records.sort(key=lambda r: r.query_id)
    return records
