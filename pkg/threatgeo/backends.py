"""
Generative backends: send prompt text, get response body text back.

GeminiBackend talks to the hosted model over HTTPS; the API key comes from
the environment only. MockBackend answers from a table keyed by description
and records the start time of every call, which is what the rate-contract
tests assert on.
"""

import json
import logging
import os
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import requests

from .errors import BackendError
from .schema import description_from_prompt

logger = logging.getLogger(__name__)

GEMINI_ENDPOINT = "https://generativelanguage.googleapis.com/v1beta/models/{model}:generateContent"
DEFAULT_MODEL_ID = "gemini-1.5-flash-latest"
JSON_MIME = "application/json"


@dataclass(frozen=True)
class BackendConfig:
    model_id: str = DEFAULT_MODEL_ID
    temperature: float = 0.1
    response_format: str = JSON_MIME
    inter_call_delay: float = 7.0
    max_retries: int = 2

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError("temperature must be within [0, 1]")
        if self.inter_call_delay < 0:
            raise ValueError("inter_call_delay must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.response_format != JSON_MIME:
            raise ValueError(f"response_format must be {JSON_MIME}")


class Backend(ABC):
    model_id: str = "unknown"
    deterministic: bool = False

    @abstractmethod
    def generate(self, prompt: str, config: BackendConfig) -> str:
        """Return the raw response body; raise BackendError on transport/quota failure."""

    def answering_model(self, config: BackendConfig) -> str:
        """Model id recorded in provenance for calls made with `config`."""
        return config.model_id


class GeminiBackend(Backend):
    def __init__(
        self,
        api_key_env: str = "GEMINI_API_KEY",
        timeout: float = 60.0,
        session: Optional[requests.Session] = None,
    ):
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.session = session or requests.Session()
        self.model_id = DEFAULT_MODEL_ID

    def generate(self, prompt: str, config: BackendConfig) -> str:
        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise BackendError(f"{self.api_key_env} is not set")
        payload = {
            "contents": [{"role": "user", "parts": [{"text": prompt}]}],
            "generationConfig": {
                "temperature": config.temperature,
                "responseMimeType": config.response_format,
            },
        }
        try:
            resp = self.session.post(
                GEMINI_ENDPOINT.format(model=config.model_id),
                headers={"x-goog-api-key": api_key, "Content-Type": JSON_MIME},
                json=payload,
                timeout=self.timeout,
            )
        except requests.RequestException as e:
            raise BackendError(f"transport error: {e}") from e
        if resp.status_code == 429:
            raise BackendError("quota exceeded (HTTP 429)")
        if resp.status_code != 200:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
        except ValueError as e:
            raise BackendError(f"non-JSON envelope: {e}") from e
        candidates = data.get("candidates") or []
        if not candidates:
            # blocked or empty generation; surfaces as a parse error downstream
            logger.debug("no candidates in response: %s", data.get("promptFeedback"))
            return ""
        parts = (candidates[0].get("content") or {}).get("parts") or []
        return "".join(p.get("text", "") for p in parts)


class MockBackend(Backend):
    """Table-driven backend; the key `*` is the fallback response."""

    deterministic = True

    def __init__(
        self,
        table: Dict[str, str],
        failures: int = 0,
        clock: Callable[[], float] = time.monotonic,
        model_id: str = "mock",
    ):
        self.table = dict(table)
        self.failures_left = failures
        self.clock = clock
        self.model_id = model_id
        self.call_times: List[float] = []

    def answering_model(self, config: BackendConfig) -> str:
        return self.model_id

    @property
    def calls(self) -> int:
        return len(self.call_times)

    @classmethod
    def from_file(cls, path: str, **kwargs) -> "MockBackend":
        """Load `{"description": ..., "response": ...}` lines or one JSON object
        mapping description to response. Non-string responses are serialized."""
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
        table: Dict[str, str] = {}
        try:
            doc = json.loads(text)
            if isinstance(doc, dict) and set(doc) == {"description", "response"}:
                entries = [(doc["description"], doc["response"])]
            elif isinstance(doc, dict):
                entries = list(doc.items())
            else:
                entries = [(e["description"], e["response"]) for e in doc]
        except json.JSONDecodeError:
            entries = []
            for line in text.splitlines():
                if line.strip():
                    obj = json.loads(line)
                    entries.append((obj["description"], obj["response"]))
        for description, response in entries:
            table[description] = response if isinstance(response, str) else json.dumps(response)
        return cls(table, **kwargs)

    def generate(self, prompt: str, config: BackendConfig) -> str:
        self.call_times.append(self.clock())
        if self.failures_left > 0:
            self.failures_left -= 1
            raise BackendError("simulated transport failure")
        description = description_from_prompt(prompt)
        if description in self.table:
            return self.table[description]
        if "*" in self.table:
            return self.table["*"]
        raise BackendError("no mock response for description")
