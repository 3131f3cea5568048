"""Chat-completion access to summarizer and judge models.

Three kinds of backend sit behind :meth:`Gateway.complete`:

* ``http_chat`` posts an OpenAI-compatible chat-completions request;
* ``mock_perfect``, ``mock_lossy`` and ``mock_hallucinating`` build a summary
  straight from the form's ground truth, for testing the metrics offline.

HTTP replies are cached on disk, one file per request key, so an interrupted
run can resume without repeating paid calls.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import httpx

from .cohort import GroundTruth, PatientForm
from .prompt_builder import PromptMessages
from .question_bank import QuestionBank

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.7
DEFAULT_MAX_TOKENS = 200
DEFAULT_JUDGE_TEMPERATURE = 0.0
DEFAULT_CONCURRENCY = 4


class GatewayError(RuntimeError):
    pass


class BackendError(GatewayError):
    """The backend kept failing after every retry."""

    def __init__(self, model_id: str, attempts: int, cause: str):
        super().__init__(f"model {model_id!r} failed after {attempts} attempt(s): {cause}")
        self.model_id = model_id
        self.attempts = attempts


class ProtocolError(GatewayError):
    """The backend answered with a body that is not a chat completion."""


class Backend(str, enum.Enum):
    HTTP_CHAT = "http_chat"
    MOCK_PERFECT = "mock_perfect"
    MOCK_LOSSY = "mock_lossy"
    MOCK_HALLUCINATING = "mock_hallucinating"

    @property
    def is_mock(self) -> bool:
        return self is not Backend.HTTP_CHAT


@dataclass(frozen=True)
class MockParams:
    drop_count: int = 0
    add_count: int = 0
    mock_seed: int = 0


@dataclass(frozen=True)
class ModelConfig:
    model_id: str
    backend: Backend = Backend.HTTP_CHAT
    endpoint_url: str | None = None
    api_key_env: str | None = None
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    timeout: float = 60.0
    max_retries: int = 3
    mock_params: MockParams = field(default_factory=MockParams)

    def __post_init__(self) -> None:
        object.__setattr__(self, "backend", Backend(self.backend))
        if isinstance(self.mock_params, dict):
            object.__setattr__(self, "mock_params", MockParams(**self.mock_params))
        if not self.model_id:
            raise ValueError("model_id is required")
        if self.backend is Backend.HTTP_CHAT and not self.endpoint_url:
            raise ValueError(f"model {self.model_id!r}: http_chat requires endpoint_url")
        if self.temperature < 0:
            raise ValueError(f"model {self.model_id!r}: temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError(f"model {self.model_id!r}: max_tokens must be > 0")
        if self.max_retries < 0:
            raise ValueError(f"model {self.model_id!r}: max_retries must be >= 0")

    @classmethod
    def from_dict(cls, data: dict, *, judge: bool = False) -> ModelConfig:
        data = dict(data)
        if judge:
            data.setdefault("temperature", DEFAULT_JUDGE_TEMPERATURE)
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "backend": self.backend.value,
            "endpoint_url": self.endpoint_url,
            "api_key_env": self.api_key_env,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "timeout": self.timeout,
            "max_retries": self.max_retries,
            "mock_params": vars(self.mock_params).copy(),
        }

    @property
    def chat_url(self) -> str:
        url = (self.endpoint_url or "").rstrip("/")
        return url if url.endswith("/chat/completions") else url + "/chat/completions"


@dataclass(frozen=True)
class CompletionResult:
    text: str
    latency: float
    attempts: int
    from_cache: bool


@dataclass(frozen=True)
class MockContext:
    """What a mock backend needs to write its summary."""

    bank: QuestionBank
    form: PatientForm
    truth: GroundTruth


# -- mock oracles -----------------------------------------------------------


def _join(names: list[str]) -> str:
    if len(names) == 1:
        return names[0]
    return ", ".join(names[:-1]) + " and " + names[-1]


def _ordered(bank: QuestionBank, group_ids) -> list[str]:
    wanted = set(group_ids)
    return [g for g in bank.group_ids if g in wanted]


def _oracle_text(bank: QuestionBank, form: PatientForm, reported: list[str]) -> str:
    opening = f"This patient, after {form.treatments} radiation treatments, reports"
    if reported:
        names = [bank.group(g).display_name for g in reported]
        text = f"{opening} severe symptoms including {_join(names)}."
    else:
        text = f"{opening} no severe symptoms."
    if form.free_text:
        text += f" The patient also mentioned {form.free_text} as an additional symptom."
    return text


def _oracle_rng(mock_seed: int, form: PatientForm, kind: str) -> random.Random:
    digest = hashlib.sha256(f"{kind}:{mock_seed}:{form.form_id}".encode()).digest()
    return random.Random(int.from_bytes(digest[:16], "big"))


def perfect_oracle(bank: QuestionBank, form: PatientForm, truth: GroundTruth) -> str:
    return _oracle_text(bank, form, _ordered(bank, truth.severe_groups))


def lossy_oracle(
    bank: QuestionBank,
    form: PatientForm,
    truth: GroundTruth,
    drop_count: int,
    mock_seed: int = 0,
) -> str:
    severe = _ordered(bank, truth.severe_groups)
    if not 0 <= drop_count <= len(severe):
        raise ValueError(f"drop_count {drop_count} outside [0, {len(severe)}]")
    dropped = set(_oracle_rng(mock_seed, form, "drop").sample(severe, drop_count))
    return _oracle_text(bank, form, [g for g in severe if g not in dropped])


def hallucinating_oracle(
    bank: QuestionBank,
    form: PatientForm,
    truth: GroundTruth,
    add_count: int,
    mock_seed: int = 0,
) -> str:
    pool = [g for g in bank.group_ids if g not in truth.severe_groups]
    if not 0 <= add_count <= len(pool):
        raise ValueError(f"add_count {add_count} outside [0, {len(pool)}]")
    added = _oracle_rng(mock_seed, form, "add").sample(pool, add_count)
    return _oracle_text(bank, form, _ordered(bank, set(truth.severe_groups) | set(added)))


def mock_reply(config: ModelConfig, context: MockContext) -> str:
    bank, form, truth = context.bank, context.form, context.truth
    params = config.mock_params
    if config.backend is Backend.MOCK_PERFECT:
        return perfect_oracle(bank, form, truth)
    if config.backend is Backend.MOCK_LOSSY:
        # Forms with fewer severe groups than drop_count lose all of them.
        drop = min(params.drop_count, len(truth.severe_groups))
        return lossy_oracle(bank, form, truth, drop, params.mock_seed)
    if config.backend is Backend.MOCK_HALLUCINATING:
        room = len(bank.groups) - len(truth.severe_groups)
        return hallucinating_oracle(bank, form, truth, min(params.add_count, room), params.mock_seed)
    raise ValueError(f"{config.backend.value} is not a mock backend")


# -- cache ------------------------------------------------------------------


def cache_key(config: ModelConfig, prompt: PromptMessages) -> str:
    payload = json.dumps(
        [config.model_id, prompt.to_wire(), config.temperature, config.max_tokens],
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


class ResponseCache:
    """Reply cache; on disk when given a directory, otherwise in memory.

    Each file holds one JSON metadata line followed by the verbatim reply.
    """

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory is not None else None
        self._memory: dict[str, str] = {}

    def _path(self, key: str) -> Path:
        assert self.directory is not None
        return self.directory / f"{key}.reply"

    def get(self, key: str) -> str | None:
        if self.directory is None:
            return self._memory.get(key)
        path = self._path(key)
        if not path.exists():
            return None
        raw = path.read_text(encoding="utf-8")
        _, _, reply = raw.partition("\n")
        return reply

    def put(self, key: str, reply: str, model_id: str) -> None:
        if self.directory is None:
            self._memory[key] = reply
            return
        meta = json.dumps({"key": key, "model_id": model_id, "created": time.time()})
        atomic_write(self._path(key), meta + "\n" + reply)


# -- gateway ----------------------------------------------------------------


class Gateway:
    """Thread-safe completion front end with caching, retries and per-endpoint limits."""

    def __init__(
        self,
        cache: ResponseCache | None = None,
        *,
        client: httpx.Client | None = None,
        max_concurrency: int = DEFAULT_CONCURRENCY,
        backoff_initial: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
        seed: int | None = None,
    ):
        if max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        self.cache = cache or ResponseCache()
        self.client = client or httpx.Client()
        self.max_concurrency = max_concurrency
        self.backoff_initial = backoff_initial
        self.sleep = sleep
        self.network_calls = 0
        self._jitter = random.Random(seed)
        self._lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}
        self._endpoint_slots: dict[str, threading.BoundedSemaphore] = {}

    def close(self) -> None:
        self.client.close()

    def __enter__(self) -> Gateway:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _key_lock(self, key: str) -> threading.Lock:
        with self._lock:
            return self._key_locks.setdefault(key, threading.Lock())

    def _slots(self, url: str) -> threading.BoundedSemaphore:
        with self._lock:
            if url not in self._endpoint_slots:
                self._endpoint_slots[url] = threading.BoundedSemaphore(self.max_concurrency)
            return self._endpoint_slots[url]

    def complete(
        self,
        config: ModelConfig,
        prompt: PromptMessages,
        *,
        context: MockContext | None = None,
        refresh: bool = False,
    ) -> CompletionResult:
        """Return the model's reply to ``prompt``.

        ``refresh`` skips the cache lookup (the new reply still replaces the
        cached one); the judge uses it to re-ask after an unusable reply.
        """
        start = time.monotonic()
        if config.backend.is_mock:
            if context is None:
                raise ValueError(f"mock backend {config.backend.value} needs a MockContext")
            text = mock_reply(config, context)
            return CompletionResult(text, time.monotonic() - start, 1, False)

        key = cache_key(config, prompt)
        # Holding the per-key lock collapses concurrent identical requests into one call.
        with self._key_lock(key):
            if not refresh:
                cached = self.cache.get(key)
                if cached is not None:
                    return CompletionResult(cached, time.monotonic() - start, 0, True)
            text, attempts = self._post_with_retries(config, prompt)
            self.cache.put(key, text, config.model_id)
        return CompletionResult(text, time.monotonic() - start, attempts, False)

    def _headers(self, config: ModelConfig) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if config.api_key_env:
            key = os.environ.get(config.api_key_env)
            if not key:
                raise GatewayError(
                    f"model {config.model_id!r}: environment variable {config.api_key_env} is not set"
                )
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def backoff(self, attempt: int) -> float:
        base = self.backoff_initial * 2 ** (attempt - 1)
        return base * self._jitter.uniform(0.8, 1.2)

    def _post_with_retries(self, config: ModelConfig, prompt: PromptMessages) -> tuple[str, int]:
        body = {
            "model": config.model_id,
            "messages": prompt.to_wire(),
            "temperature": config.temperature,
            "max_tokens": config.max_tokens,
        }
        headers = self._headers(config)
        url = config.chat_url
        total = config.max_retries + 1
        cause = ""
        for attempt in range(1, total + 1):
            try:
                with self._slots(url):
                    with self._lock:
                        self.network_calls += 1
                    response = self.client.post(
                        url, json=body, headers=headers, timeout=config.timeout
                    )
            except httpx.HTTPError as exc:
                cause = f"{type(exc).__name__}: {exc}"
            else:
                if response.is_success:
                    return parse_chat_reply(response, config.model_id), attempt
                cause = f"HTTP {response.status_code}"
            log.warning("%s attempt %d/%d failed: %s", config.model_id, attempt, total, cause)
            if attempt < total:
                self.sleep(self.backoff(attempt))
        raise BackendError(config.model_id, total, cause)


def parse_chat_reply(response: httpx.Response, model_id: str) -> str:
    try:
        content = response.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"model {model_id!r}: malformed chat-completion body") from exc
    if not isinstance(content, str):
        raise ProtocolError(f"model {model_id!r}: reply content is not text")
    return content


def complete(
    config: ModelConfig,
    prompt: PromptMessages,
    *,
    gateway: Gateway | None = None,
    context: MockContext | None = None,
) -> CompletionResult:
    if gateway is not None:
        return gateway.complete(config, prompt, context=context)
    with Gateway() as gw:
        return gw.complete(config, prompt, context=context)
