"""Pluggable model endpoints: chat, embedding, and ASR.

Every remote model is reached through a tiny wire format (JSON over HTTP)
and can be swapped for a scripted or callable stand-in. A shared on-disk
cache makes repeated runs deterministic and cheap; a shared retry helper
gives every call the same failure policy.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, wav_bytes
from .errors import TransportError, ValidationError

DEFAULT_ATTEMPTS = 3
DEFAULT_BACKOFF_S = 1.0


def call_with_retry(fn, attempts: int = DEFAULT_ATTEMPTS, base_delay: float = DEFAULT_BACKOFF_S, sleep=time.sleep):
    """Run fn() with exponential backoff; raises TransportError when exhausted."""
    last = None
    for attempt in range(attempts):
        try:
            return fn()
        except Exception as exc:  # noqa: BLE001 - endpoint errors vary by transport
            last = exc
            if attempt + 1 < attempts:
                sleep(base_delay * (2**attempt))
    raise TransportError(f"endpoint call failed after {attempts} attempts: {last}") from last


def _digest(*parts: str) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


class ResponseCache:
    """Append-only JSONL cache; concurrent readers, single locked writer."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, object] = {}
        if self.path.exists():
            for line in self.path.read_text().splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                self._entries[rec["key"]] = rec["value"]

    def get(self, key: str):
        return self._entries.get(key)

    def put(self, key: str, value) -> None:
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = value
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a") as fh:
                fh.write(json.dumps({"key": key, "value": value}, sort_keys=True) + "\n")

    def __len__(self) -> int:
        return len(self._entries)


# ---------------------------------------------------------------------------
# Chat endpoints.

class HttpChatEndpoint:
    """POST {system, messages:[{role, text, image_b64?}]} -> {text}."""

    def __init__(self, name: str, url: str, api_key: str | None = None, timeout: float = 120.0):
        self.name = name
        self.url = url
        self.api_key = api_key
        self.timeout = timeout

    def complete(self, system_prompt: str, user_content: str, images=None) -> str:
        import requests

        message = {"role": "user", "text": user_content}
        if images:
            message["image_b64"] = list(images)
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = requests.post(
                self.url,
                json={"system": system_prompt, "messages": [message]},
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"chat endpoint {self.name} unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"chat endpoint {self.name} returned HTTP {resp.status_code}")
        return resp.json()["text"]


class ScriptedChatEndpoint:
    """Replies scripted in a file, for tests and offline runs.

    The script is JSONL. Lines with {"contains": ..., "text": ...} act as
    content rules (first match wins, checked against the user content);
    lines with only {"text": ...} are consumed in order as a fallback queue.
    """

    def __init__(self, name: str, rules=None, queue=None):
        self.name = name
        self.rules = list(rules or [])
        self.queue = list(queue or [])
        self._lock = threading.Lock()
        self.calls = 0

    @classmethod
    def from_file(cls, name: str, path) -> "ScriptedChatEndpoint":
        rules, queue = [], []
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if "contains" in rec:
                rules.append((rec["contains"], rec["text"]))
            else:
                queue.append(rec["text"])
        return cls(name, rules, queue)

    def complete(self, system_prompt: str, user_content: str, images=None) -> str:
        with self._lock:
            self.calls += 1
            for needle, text in self.rules:
                if needle in user_content:
                    return text
            if self.queue:
                return self.queue.pop(0)
        raise TransportError(f"scripted endpoint {self.name} has no reply for this input")


class CallableChatEndpoint:
    """Adapter turning a plain function into a chat endpoint."""

    def __init__(self, name: str, fn):
        self.name = name
        self.fn = fn

    def complete(self, system_prompt: str, user_content: str, images=None) -> str:
        return self.fn(system_prompt, user_content)


class CachedChatEndpoint:
    """Deterministic replay wrapper around any chat endpoint."""

    def __init__(self, inner, cache: ResponseCache):
        self.inner = inner
        self.cache = cache

    @property
    def name(self) -> str:
        return self.inner.name

    def complete(self, system_prompt: str, user_content: str, images=None) -> str:
        image_part = "" if not images else _digest(*images)
        key = _digest("chat", self.inner.name, system_prompt, user_content, image_part)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        text = self.inner.complete(system_prompt, user_content, images=images)
        self.cache.put(key, text)
        return text


# ---------------------------------------------------------------------------
# Embedding endpoints.

class HttpEmbeddingEndpoint:
    """POST {text} -> {vector: [floats]}."""

    def __init__(self, name: str, url: str, api_key: str | None = None, timeout: float = 60.0):
        self.name = name
        self.url = url
        self.api_key = api_key
        self.timeout = timeout

    def embed(self, text: str) -> np.ndarray:
        import requests

        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = requests.post(self.url, json={"text": text}, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"embedding endpoint {self.name} unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"embedding endpoint {self.name} returned HTTP {resp.status_code}")
        vec = np.asarray(resp.json()["vector"], dtype=np.float64)
        if vec.ndim != 1 or not np.all(np.isfinite(vec)):
            raise TransportError(f"embedding endpoint {self.name} returned an invalid vector")
        return vec


class HashEmbeddingEndpoint:
    """Deterministic local pseudo-embeddings; useful for plumbing tests.

    Equal texts map to equal vectors, different texts to nearly orthogonal
    ones, so exact-match similarity structure survives.
    """

    def __init__(self, dim: int = 64, name: str = "hash"):
        self.name = name
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)


class CallableEmbeddingEndpoint:
    def __init__(self, name: str, fn):
        self.name = name
        self.fn = fn

    def embed(self, text: str) -> np.ndarray:
        return np.asarray(self.fn(text), dtype=np.float64)


class CachedEmbeddingEndpoint:
    def __init__(self, inner, cache: ResponseCache):
        self.inner = inner
        self.cache = cache

    @property
    def name(self) -> str:
        return self.inner.name

    def embed(self, text: str) -> np.ndarray:
        key = _digest("embed", self.inner.name, text)
        hit = self.cache.get(key)
        if hit is not None:
            return np.asarray(hit, dtype=np.float64)
        vec = self.inner.embed(text)
        self.cache.put(key, [float(v) for v in vec])
        return vec


# ---------------------------------------------------------------------------
# ASR endpoints.

class HttpAsrEndpoint:
    """POST WAV bytes -> {text}."""

    def __init__(self, name: str, url: str, api_key: str | None = None, timeout: float = 300.0):
        self.name = name
        self.url = url
        self.api_key = api_key
        self.timeout = timeout

    def transcribe(self, buffer: AudioBuffer, utterance_id: str | None = None) -> str:
        import requests

        data, _ = wav_bytes(buffer, "float32")
        headers = {"Content-Type": "audio/wav"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(self.url, data=data, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"asr endpoint {self.name} unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"asr endpoint {self.name} returned HTTP {resp.status_code}")
        return resp.json()["text"]


class MockAsrEndpoint:
    """Returns canned transcripts keyed by utterance id (or one fixed text)."""

    def __init__(self, transcripts=None, fixed_text: str = "", name: str = "mock-asr"):
        self.name = name
        self.transcripts = dict(transcripts or {})
        self.fixed_text = fixed_text

    def transcribe(self, buffer: AudioBuffer, utterance_id: str | None = None) -> str:
        if utterance_id is not None and utterance_id in self.transcripts:
            return self.transcripts[utterance_id]
        return self.fixed_text


class FileReplayAsrEndpoint(MockAsrEndpoint):
    """Replay transcripts from a TSV of (utterance id, text) rows."""

    def __init__(self, path, name: str = "replay-asr"):
        transcripts = {}
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            utt, _, text = line.partition("\t")
            transcripts[utt] = text
        super().__init__(transcripts=transcripts, name=name)

    def transcribe(self, buffer: AudioBuffer, utterance_id: str | None = None) -> str:
        if utterance_id not in self.transcripts:
            raise ValidationError(f"no replay transcript for utterance {utterance_id!r}")
        return self.transcripts[utterance_id]
