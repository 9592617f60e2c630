"""Chat-completion client with transcript recording and deterministic replay.

Talks to any OpenAI-compatible endpoint (POST {base_url}/chat/completions).
Every exchange is appended to a transcript; a replay client serves recorded
replies back in order so whole optimization runs can be re-executed offline
and bit-compared. The API key is read from the environment at request time
and never written anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import os
import time

import requests

from .errors import (
    ExhaustedRetries,
    HashMismatch,
    HttpStatus,
    RequestTimeout,
    TranscriptExhausted,
    Unreachable,
)
from .prompting import PromptDocument

DEFAULT_TEMPERATURE = 0.2
_BACKOFF_SCHEDULE = (1.0, 4.0)  # seconds before retry 1, retry 2, ...


@dataclass(frozen=True)
class LlmEndpointConfig:
    base_url: str
    model_name: str
    api_key_env: str | None = None
    temperature: float = DEFAULT_TEMPERATURE
    timeout: float = 120.0
    max_retries: int = 2
    max_tokens: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass
class TranscriptEntry:
    prompt_hash: str
    prompt_text: str
    raw_reply: str
    latency: float
    timestamp: float

    def to_json_dict(self) -> dict:
        return {
            "prompt_hash": self.prompt_hash,
            "prompt_text": self.prompt_text,
            "raw_reply": self.raw_reply,
            "latency": self.latency,
            "timestamp": self.timestamp,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "TranscriptEntry":
        return TranscriptEntry(
            prompt_hash=doc["prompt_hash"],
            prompt_text=doc["prompt_text"],
            raw_reply=doc["raw_reply"],
            latency=doc["latency"],
            timestamp=doc.get("timestamp", 0.0),
        )


@dataclass
class Transcript:
    """Append-only record of (prompt, reply, latency) exchanges."""

    entries: list[TranscriptEntry] = field(default_factory=list)

    def append(self, entry: TranscriptEntry) -> None:
        self.entries.append(entry)

    def __len__(self) -> int:
        return len(self.entries)

    def save_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.entries:
                fh.write(json.dumps(entry.to_json_dict()) + "\n")

    @staticmethod
    def load_jsonl(path) -> "Transcript":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    entries.append(TranscriptEntry.from_json_dict(json.loads(line)))
        return Transcript(entries)

    @staticmethod
    def from_replies(replies: list[str], latency: float = 0.0) -> "Transcript":
        """Scripted transcript for tests and offline runs; hashes are blank."""
        return Transcript(
            [TranscriptEntry("", "", reply, latency, 0.0) for reply in replies]
        )


class HttpLlmClient:
    """Live client; records every exchange into its transcript."""

    def __init__(self, endpoint: LlmEndpointConfig, transcript: Transcript | None = None,
                 sleeper=time.sleep):
        self.endpoint = endpoint
        self.transcript = transcript if transcript is not None else Transcript()
        self._sleeper = sleeper

    def complete(self, prompt: PromptDocument) -> tuple[str, float]:
        endpoint = self.endpoint
        headers = {"Content-Type": "application/json"}
        if endpoint.api_key_env:
            key = os.environ.get(endpoint.api_key_env)
            if not key:
                raise Unreachable(
                    f"API key environment variable {endpoint.api_key_env!r} is not set"
                )
            headers["Authorization"] = f"Bearer {key}"
        body = {
            "model": endpoint.model_name,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text},
            ],
            "temperature": endpoint.temperature,
        }
        if endpoint.max_tokens is not None:
            body["max_tokens"] = endpoint.max_tokens
        url = endpoint.base_url.rstrip("/") + "/chat/completions"

        last_error: Exception | None = None
        for attempt in range(endpoint.max_retries + 1):
            if attempt > 0:
                delay = _BACKOFF_SCHEDULE[min(attempt - 1, len(_BACKOFF_SCHEDULE) - 1)]
                self._sleeper(delay)
            t0 = time.monotonic()
            try:
                resp = requests.post(url, json=body, headers=headers,
                                     timeout=endpoint.timeout)
            except requests.Timeout:
                last_error = RequestTimeout(f"no reply within {endpoint.timeout}s")
                continue
            except requests.RequestException as exc:
                last_error = Unreachable(str(exc))
                continue
            latency = time.monotonic() - t0
            if resp.status_code >= 500:
                last_error = HttpStatus(resp.status_code, resp.text[:200])
                continue
            if resp.status_code != 200:
                raise HttpStatus(resp.status_code, resp.text[:200])
            try:
                text = resp.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, ValueError) as exc:
                raise HttpStatus(resp.status_code, f"malformed completion body: {exc}")
            self.transcript.append(
                TranscriptEntry(
                    prompt_hash=prompt.hash_key(),
                    prompt_text=prompt.system_text + "\n\n" + prompt.user_text,
                    raw_reply=text,
                    latency=latency,
                    timestamp=time.time(),
                )
            )
            return text, latency
        raise ExhaustedRetries(
            f"gave up after {endpoint.max_retries + 1} attempts: {last_error}"
        )


class ReplayLlmClient:
    """Serves a recorded transcript back, entry by entry.

    Strict mode insists each consumed entry was recorded for the same prompt
    (hash match); lenient mode replays in order regardless, which is what
    scripted transcripts need.
    """

    def __init__(self, transcript: Transcript, strict: bool = False):
        self.transcript = transcript
        self.strict = strict
        self._cursor = 0

    def complete(self, prompt: PromptDocument) -> tuple[str, float]:
        if self._cursor >= len(self.transcript.entries):
            raise TranscriptExhausted(
                f"transcript has only {len(self.transcript.entries)} entries"
            )
        entry = self.transcript.entries[self._cursor]
        if self.strict and entry.prompt_hash != prompt.hash_key():
            raise HashMismatch(
                f"entry {self._cursor} was recorded for a different prompt"
            )
        self._cursor += 1
        return entry.raw_reply, entry.latency
