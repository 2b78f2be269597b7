"""Client for the generative answer model.

Two modes. `http` POSTs the prompt plus embedding payload to an inference
endpoint and expects `{"text": ...}` back; transient failures are retried
with exponential backoff and surface as TransportError once attempts are
exhausted. `mock` answers locally from a key->answer mapping and/or a
constant string, which is what the tests and the offline pipeline use.
"""
import json
import time
from dataclasses import dataclass, field

import requests

from ..data import Vocab
from ..errors import ConfigError, TransportError
from ..retrieval import Query

MAX_ATTEMPTS = 3


@dataclass
class LlmRequest:
    prompt: str
    embeddings: dict[str, list[float]] = field(default_factory=dict)
    max_tokens: int = 16
    temperature: float = 0.0

    def payload(self) -> dict:
        return {"prompt": self.prompt, "embeddings": self.embeddings,
                "max_tokens": self.max_tokens, "temperature": self.temperature}


@dataclass
class LlmResponse:
    text: str
    latency_s: float


def query_key(query: Query, vocab: Vocab) -> str:
    """Stable identifier for a query: direction|entity label|relation label."""
    return "|".join((query.direction, vocab.id_to_entity[query.entity],
                     vocab.id_to_relation[query.relation]))


def load_mock_oracle(path: str) -> dict[str, str]:
    """Read a jsonl file of {"query_key": ..., "answer": ...} rows."""
    answers: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            if "query_key" not in row or "answer" not in row:
                raise ConfigError(f"{path} line {lineno}: need query_key and answer")
            answers[row["query_key"]] = row["answer"]
    return answers


class LlmClient:
    def __init__(self, mode: str, endpoint: str | None = None,
                 answers: dict[str, str] | None = None,
                 constant: str | None = None,
                 timeout: float = 30.0, backoff: float = 1.0):
        if mode not in ("http", "mock"):
            raise ConfigError(f"unknown client mode '{mode}'")
        if mode == "http" and not endpoint:
            raise ConfigError("http mode needs an endpoint url")
        if mode == "mock" and answers is None and constant is None:
            raise ConfigError("mock mode needs an answer mapping or a constant")
        self.mode = mode
        self.endpoint = endpoint
        self.answers = answers
        self.constant = constant
        self.timeout = timeout
        self.backoff = backoff

    def query(self, request: LlmRequest, key: str | None = None) -> LlmResponse:
        start = time.monotonic()
        if self.mode == "mock":
            text = self._mock_answer(key)
        else:
            text = self._http_answer(request)
        return LlmResponse(text=text, latency_s=time.monotonic() - start)

    def _mock_answer(self, key: str | None) -> str:
        if self.answers is not None and key is not None and key in self.answers:
            return self.answers[key]
        if self.constant is not None:
            return self.constant
        raise TransportError(f"mock oracle has no answer for key {key!r}")

    def _http_answer(self, request: LlmRequest) -> str:
        last_error: Exception | None = None
        for attempt in range(MAX_ATTEMPTS):
            if attempt > 0:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = requests.post(self.endpoint, json=request.payload(),
                                     timeout=self.timeout)
                resp.raise_for_status()
                body = resp.json()
                if "text" not in body:
                    raise TransportError(
                        f"endpoint response missing 'text' field: {body!r}")
                return body["text"]
            except TransportError:
                raise
            except (requests.RequestException, ValueError) as exc:
                last_error = exc
        raise TransportError(
            f"endpoint {self.endpoint} failed after {MAX_ATTEMPTS} attempts: "
            f"{last_error}")
