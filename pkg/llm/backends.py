"""
LLM backends: a remote chat-completion endpoint and a scripted fixture backend.
"""

import hashlib
import json
import logging
import os
import threading
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

import requests

from llm.skills import SkillRequest
from shared.errors import BackendError, ConfigurationError

logger = logging.getLogger(__name__)

Responder = Callable[[SkillRequest, str], Optional[str]]


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class LLMBackend:
    """Backend contract: (system text, user text) -> reply text"""

    def __init__(self):
        self.invocations = 0
        self._count_lock = threading.Lock()

    def _count(self) -> None:
        with self._count_lock:
            self.invocations += 1

    def generate(self, request: SkillRequest, system: str, prompt: str, *,
                 temperature: float = 0.0, max_tokens: int = 256,
                 timeout: float = 60.0) -> str:
        raise NotImplementedError


class ScriptedBackend(LLMBackend):
    """
    Deterministic backend for tests and offline runs.

    Lookup order: responder callable, request key, prompt SHA-256, default.
    A table entry may be a list of replies consumed in order; the last one
    repeats once the list is exhausted.
    """

    def __init__(self, table: Optional[Dict[str, Union[str, List[str]]]] = None,
                 responder: Optional[Responder] = None, default: Optional[str] = None):
        super().__init__()
        self.table = {key: (value if isinstance(value, list) else [value])
                      for key, value in (table or {}).items()}
        self.responder = responder
        self.default = default
        self._cursor: Dict[str, int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ScriptedBackend":
        """Fixture file: JSON object of key -> reply (or list of replies)"""
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"cannot read scripted fixture {path}: {e}") from e
        table = data.get("responses", data)
        default = data.get("default") if "responses" in data else None
        return cls(table=table, default=default)

    def generate(self, request: SkillRequest, system: str, prompt: str, *,
                 temperature: float = 0.0, max_tokens: int = 256,
                 timeout: float = 60.0) -> str:
        self._count()
        if self.responder is not None:
            reply = self.responder(request, prompt)
            if reply is not None:
                return reply
        for key in (request.key(), prompt_hash(prompt)):
            with self._lock:
                replies = self.table.get(key)
                if replies is None:
                    continue
                position = self._cursor.get(key, 0)
                self._cursor[key] = position + 1
            return replies[min(position, len(replies) - 1)]
        if self.default is not None:
            return self.default
        raise BackendError(f"no scripted response for {request.key()!r}", retryable=False)


class RemoteChatBackend(LLMBackend):
    """JSON-over-HTTP chat completion; auth token read from the environment"""

    def __init__(self, endpoint: str, model: str = "gpt-3.5-turbo",
                 api_key_env: str = "HOPLINK_LLM_API_KEY",
                 session: Optional[requests.Session] = None):
        super().__init__()
        if not endpoint:
            raise ConfigurationError("remote backend needs an endpoint URL")
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.session = session or requests.Session()

    def generate(self, request: SkillRequest, system: str, prompt: str, *,
                 temperature: float = 0.0, max_tokens: int = 256,
                 timeout: float = 60.0) -> str:
        self._count()
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": prompt},
            ],
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        try:
            response = self.session.post(self.endpoint, json=payload, headers=headers, timeout=timeout)
        except requests.Timeout as e:
            raise BackendError(f"chat request timed out: {e}", retryable=True) from e
        except requests.RequestException as e:
            raise BackendError(f"chat request failed: {e}", retryable=True) from e

        if response.status_code == 429 or response.status_code >= 500:
            raise BackendError(f"chat endpoint returned {response.status_code}: {response.text[:200]}",
                               retryable=True)
        if response.status_code >= 400:
            raise BackendError(f"chat endpoint returned {response.status_code}: {response.text[:200]}",
                               retryable=False)
        try:
            choices = response.json().get("choices") or []
            content = choices[0].get("message", {}).get("content")
        except (ValueError, AttributeError, IndexError) as e:
            raise BackendError(f"unreadable chat response: {e}", retryable=True) from e
        if not isinstance(content, str):
            raise BackendError("chat response carries no text", retryable=True)
        return content
