"""Completion-service clients for ABC continuation: an HTTP client and a memorising offline mock."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence

from quartet.notation import FinetuneRecord

log = logging.getLogger(__name__)

TOKEN_LIMIT = 1000
FINETUNE_EPOCHS = 5
BASE_URL_ENV = "QUARTET_LLM_BASE_URL"
API_KEY_ENV = "QUARTET_LLM_API_KEY"


class LlmError(RuntimeError):
    pass


class TokenLimitError(LlmError, ValueError):
    pass


class ServiceError(LlmError):
    def __init__(self, status: int | None, message: str, body: str = ""):
        super().__init__(f"service error {status}: {message}")
        self.status = status
        self.body = body


def estimate_tokens(text: str) -> int:
    """Conservative token estimate: one token per four characters, rounded up."""
    return math.ceil(len(text) / 4)


@dataclass
class LlmJob:
    records: list[FinetuneRecord]
    epochs: int = FINETUNE_EPOCHS
    model: str = "curie"
    token_limit: int = TOKEN_LIMIT

    def over_limit(self) -> list[int]:
        return [i for i, r in enumerate(self.records) if estimate_tokens(r.prompt) > self.token_limit]

    def validate(self) -> None:
        if not self.records:
            raise ValueError("fine-tune job has no records")
        bad = self.over_limit()
        if bad:
            raise TokenLimitError(
                f"{len(bad)} record(s) exceed the {self.token_limit}-token prompt limit (first index {bad[0]})")

    def jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)


@dataclass(frozen=True)
class JobHandle:
    job_id: str
    model: str
    status: str = "succeeded"


class LlmClient(Protocol):
    def finetune(self, job: LlmJob) -> JobHandle: ...

    def complete(self, prompt: str, model: str | None = None, temperature: float = 0.0,
                 max_tokens: int = 1000, seed: int | None = None) -> str: ...


def _common_prefix(a: str, b: str) -> int:
    n = min(len(a), len(b))
    i = 0
    while i < n and a[i] == b[i]:
        i += 1
    return i


@dataclass
class MockLlmClient:
    """Memorises fine-tune records; completes a prompt with the record sharing its longest prefix."""

    records: list[FinetuneRecord] = field(default_factory=list)
    model: str | None = None

    def finetune(self, job: LlmJob) -> JobHandle:
        job.validate()
        self.records = list(job.records)
        digest = hashlib.sha256(job.jsonl().encode("utf-8")).hexdigest()[:12]
        self.model = f"{job.model}:mock-{digest}"
        return JobHandle(f"ft-mock-{digest}", self.model)

    def complete(self, prompt: str, model: str | None = None, temperature: float = 0.0,
                 max_tokens: int = 1000, seed: int | None = None) -> str:
        if estimate_tokens(prompt) > TOKEN_LIMIT:
            raise TokenLimitError("prompt exceeds the token limit")
        if not self.records:
            raise LlmError("mock client has not been fine-tuned")
        best = max(range(len(self.records)), key=lambda i: (_common_prefix(self.records[i].prompt, prompt), -i))
        return self.records[best].completion


class HttpLlmClient:
    """Client for an OpenAI-style completion service.

    Base URL and bearer token come from ``QUARTET_LLM_BASE_URL`` and
    ``QUARTET_LLM_API_KEY`` unless given explicitly.
    """

    def __init__(self, base_url: str | None = None, api_key: str | None = None, *, retries: int = 3,
                 backoff: float = 0.5, timeout: float = 30.0, session=None):
        import requests

        self.base_url = (base_url or os.environ.get(BASE_URL_ENV, "")).rstrip("/")
        if not self.base_url:
            raise LlmError(f"no service URL; set {BASE_URL_ENV}")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._requests = requests
        self.session = session or requests.Session()
        self.model: str | None = None

    def _headers(self):
        h = {"Content-Type": "application/json"}
        if self.api_key:
            h["Authorization"] = f"Bearer {self.api_key}"
        return h

    def _post(self, path: str, payload: dict) -> dict:
        url = f"{self.base_url}{path}"
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            log.debug("POST %s attempt %d payload keys=%s", url, attempt + 1, sorted(payload))
            try:
                resp = self.session.post(url, data=json.dumps(payload), headers=self._headers(), timeout=self.timeout)
            except self._requests.RequestException as exc:
                last = ServiceError(None, str(exc))
                continue
            log.debug("POST %s -> %d", url, resp.status_code)
            if resp.status_code == 429 or resp.status_code >= 500:
                last = ServiceError(resp.status_code, "retryable failure", resp.text)
                continue
            if not 200 <= resp.status_code < 300:
                raise ServiceError(resp.status_code, "request rejected", resp.text)
            try:
                return resp.json()
            except ValueError:
                raise ServiceError(resp.status_code, "response is not JSON", resp.text) from None
        assert last is not None
        raise last

    def finetune(self, job: LlmJob) -> JobHandle:
        job.validate()
        out = self._post("/v1/fine-tunes", {"model": job.model, "n_epochs": job.epochs,
                                            "training_records": [{"prompt": r.prompt, "completion": r.completion}
                                                                 for r in job.records]})
        try:
            handle = JobHandle(str(out["id"]), str(out.get("fine_tuned_model") or job.model), str(out.get("status", "")))
        except KeyError:
            raise ServiceError(200, "fine-tune response lacks an id", json.dumps(out)) from None
        self.model = handle.model
        return handle

    def complete(self, prompt: str, model: str | None = None, temperature: float = 0.0,
                 max_tokens: int = 1000, seed: int | None = None) -> str:
        if estimate_tokens(prompt) > TOKEN_LIMIT:
            raise TokenLimitError("prompt exceeds the token limit")
        payload = {"model": model or self.model, "prompt": prompt, "temperature": temperature,
                   "max_tokens": max_tokens}
        if seed is not None:
            payload["seed"] = seed
        out = self._post("/v1/completions", payload)
        try:
            return str(out["choices"][0]["text"])
        except (KeyError, IndexError, TypeError):
            raise ServiceError(200, "malformed completion response", json.dumps(out)) from None


def llm_finetune(job: LlmJob, client: LlmClient) -> JobHandle:
    job.validate()
    return client.finetune(job)


def llm_complete(prompt: str, client: LlmClient, **kw) -> str:
    return client.complete(prompt, **kw)


def make_job(records: Sequence[FinetuneRecord], **kw) -> LlmJob:
    return LlmJob(list(records), **kw)
