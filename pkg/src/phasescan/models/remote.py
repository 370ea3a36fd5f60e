"""HTTP client for a model bridge serving generation and scoring.

The bridge speaks a small JSON protocol (all log-probabilities in nats):

* ``GET /info`` -> ``{model_id, revision, vocab_size, tokenizer_fingerprint}``
* ``POST /load {model_id, revision}`` -> ``{ok}``
* ``POST /generate {prompt, temperature, n_samples, n_tokens, seed}``
  -> ``{samples: [{tokens: [int], logprobs: [float]}]}``
* ``POST /score {prompt, tokens, temperature}`` -> ``{logprobs: [float]}``

Non-2xx responses carry ``{error: text}``.  Unknown response fields are
ignored.  Generation and scoring results are memoized on disk so that reruns
of a scan only pay for new work.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import os
import tempfile
import threading
import time
from dataclasses import dataclass

import numpy as np
import requests

from .base import AutoregressiveModel, AxisKind, AxisPoint, ModelError, TokenSequence

__all__ = ["ModelEndpoint", "RemoteModel"]

_RETRIABLE_STATUS = {429, 500, 502, 503, 504}


@dataclass(frozen=True)
class ModelEndpoint:
    """Where a bridge lives and which checkpoint it should serve."""

    base_url: str
    model_id: str
    revision: str = "main"
    request_timeout: float = 120.0
    max_in_flight: int = 1

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        object.__setattr__(self, "base_url", self.base_url.rstrip("/"))


class RemoteModel(AutoregressiveModel):
    """Scored generation through a bridge endpoint.

    The prompt sent with each request comes from the axis point on prompt
    scans and from ``base_prompt`` otherwise.  Checkpoint points switch the
    served revision through ``/load`` using ``revision_template``; the client
    refuses to mix checkpoints whose tokenizer fingerprints differ, since
    token ids would not be comparable.
    """

    def __init__(
        self,
        endpoint: ModelEndpoint,
        base_prompt: str = "",
        revision_template: str = "step{value}",
        cache_dir: str | None = None,
        default_temperature: float = 1.0,
        max_retries: int = 3,
    ):
        self.endpoint = endpoint
        self.base_prompt = base_prompt
        self.revision_template = revision_template
        self.cache_dir = cache_dir
        self.default_temperature = float(default_temperature)
        self.max_retries = int(max_retries)
        self.max_in_flight = endpoint.max_in_flight
        self._local = threading.local()
        self._load_lock = threading.Lock()
        self._revision_affinity = threading.Lock()
        self._loaded_revision: str | None = None
        self._fingerprint: str | None = None
        if cache_dir:
            os.makedirs(cache_dir, exist_ok=True)

    # -- request plumbing ----------------------------------------------------

    def _session(self) -> requests.Session:
        sess = getattr(self._local, "session", None)
        if sess is None:
            sess = requests.Session()
            self._local.session = sess
        return sess

    def _request(self, method: str, path: str, payload=None):
        url = self.endpoint.base_url + path
        last_error = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._session().request(
                    method, url, json=payload, timeout=self.endpoint.request_timeout
                )
            except requests.RequestException as exc:
                last_error = f"{type(exc).__name__}: {exc}"
            else:
                if resp.ok:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise ModelError(f"{url}: invalid JSON response: {exc}") from exc
                detail = _error_text(resp)
                if resp.status_code not in _RETRIABLE_STATUS:
                    raise ModelError(f"{url}: HTTP {resp.status_code}: {detail}")
                last_error = f"HTTP {resp.status_code}: {detail}"
            if attempt < self.max_retries:
                time.sleep(0.2 * 2**attempt)
        raise ModelError(f"{url}: giving up after {self.max_retries + 1} attempts: {last_error}")

    # -- axis-point translation ------------------------------------------------

    def _prompt_for(self, point: AxisPoint) -> str:
        if point.kind is AxisKind.PROMPT_SLOT:
            if point.rendered_prompt is None:
                raise ModelError(f"prompt-slot point {point.value} has no rendered prompt")
            return point.rendered_prompt
        return self.base_prompt

    def _temperature_for(self, point: AxisPoint) -> float:
        if point.kind is AxisKind.TEMPERATURE:
            return float(point.value)
        return self.default_temperature

    def _revision_for(self, point: AxisPoint) -> str:
        if point.kind is AxisKind.CHECKPOINT:
            return self.revision_template.format(value=point.value)
        return self.endpoint.revision

    def _ensure_revision(self, point: AxisPoint) -> str:
        revision = self._revision_for(point)
        with self._load_lock:
            if revision != self._loaded_revision:
                self._request(
                    "POST",
                    "/load",
                    {"model_id": self.endpoint.model_id, "revision": revision},
                )
                self._loaded_revision = revision
                info = self._request("GET", "/info")
                fp = info.get("tokenizer_fingerprint")
                if self._fingerprint is None:
                    self._fingerprint = fp
                elif fp != self._fingerprint:
                    raise ModelError(
                        f"tokenizer fingerprint changed at revision {revision!r} "
                        f"({fp!r} != {self._fingerprint!r}); refusing to mix "
                        "incompatible checkpoints in one scan"
                    )
        return revision

    @contextlib.contextmanager
    def _revision_bound(self, point: AxisPoint):
        """Keep the served revision fixed for the duration of a request.

        Checkpoint scans switch revisions, and the bridge serves one at a
        time, so those requests are serialized; other axes never switch and
        run freely in parallel.
        """
        if point.kind is AxisKind.CHECKPOINT:
            with self._revision_affinity:
                self._ensure_revision(point)
                yield
        else:
            self._ensure_revision(point)
            yield

    def info(self) -> dict:
        return self._request("GET", "/info")

    # -- disk cache -------------------------------------------------------------

    def _cache_path(self, kind: str, key: dict) -> str | None:
        if not self.cache_dir:
            return None
        blob = json.dumps(key, sort_keys=True, separators=(",", ":"))
        digest = hashlib.sha256(blob.encode("utf-8")).hexdigest()
        return os.path.join(self.cache_dir, f"{kind}-{digest}.json")

    @staticmethod
    def _cache_read(path):
        if path is None or not os.path.exists(path):
            return None
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)

    @staticmethod
    def _cache_write(path, doc) -> None:
        if path is None:
            return
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(doc, fh)
            os.replace(tmp, path)  # atomic; concurrent writers race harmlessly
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    # -- AutoregressiveModel -------------------------------------------------------

    def generate_batch(self, point, n_samples, n_tokens, seed):
        key = {
            "model_id": self.endpoint.model_id,
            "revision": self._revision_for(point),
            "prompt": self._prompt_for(point),
            "temperature": self._temperature_for(point),
            "n_samples": int(n_samples),
            "n_tokens": int(n_tokens),
            "seed": int(seed),
        }
        path = self._cache_path("gen", key)
        doc = self._cache_read(path)
        if doc is None:
            payload = dict(key)
            payload.pop("model_id")
            payload.pop("revision")
            try:
                with self._revision_bound(point):
                    doc = self._request("POST", "/generate", payload)
            except ModelError as exc:
                raise ModelError(f"generate at {point}: {exc}") from exc
            self._cache_write(path, {"samples": doc["samples"]})
        samples = doc["samples"]
        if len(samples) != n_samples:
            raise ModelError(
                f"bridge returned {len(samples)} samples, expected {n_samples}"
            )
        tokens = np.array([s["tokens"] for s in samples], dtype=np.int64)
        logps = np.array([s["logprobs"] for s in samples], dtype=np.float64)
        if tokens.shape != (n_samples, n_tokens) or logps.shape != tokens.shape:
            raise ModelError("bridge returned malformed sample shapes")
        return tokens, logps

    def score_batch(self, point, tokens):
        tokens = np.asarray(tokens, dtype=np.int64)
        return np.array([self._score_one(point, row) for row in tokens])

    def _score_one(self, point, row) -> float:
        key = {
            "model_id": self.endpoint.model_id,
            "revision": self._revision_for(point),
            "prompt": self._prompt_for(point),
            "temperature": self._temperature_for(point),
            "tokens": [int(t) for t in row],
        }
        path = self._cache_path("score", key)
        doc = self._cache_read(path)
        if doc is None:
            payload = dict(key)
            payload.pop("model_id")
            payload.pop("revision")
            try:
                with self._revision_bound(point):
                    doc = self._request("POST", "/score", payload)
            except ModelError as exc:
                raise ModelError(f"score at {point}: {exc}") from exc
            self._cache_write(path, {"logprobs": doc["logprobs"]})
        logprobs = doc["logprobs"]
        if len(logprobs) != len(key["tokens"]):
            raise ModelError("bridge returned wrong number of token log-probabilities")
        return float(np.sum(logprobs))

    def argmax_sample(self, point, n_tokens):
        payload = {
            "prompt": self._prompt_for(point),
            "temperature": self._temperature_for(point),
            "n_samples": 1,
            "n_tokens": int(n_tokens),
            "seed": 0,
            "greedy": True,
        }
        key = dict(payload, model_id=self.endpoint.model_id, revision=self._revision_for(point))
        path = self._cache_path("greedy", key)
        doc = self._cache_read(path)
        if doc is None:
            with self._revision_bound(point):
                doc = self._request("POST", "/generate", payload)
            self._cache_write(path, {"samples": doc["samples"]})
        sample = doc["samples"][0]
        return TokenSequence(tuple(sample["tokens"]), tuple(sample["logprobs"]))


def _error_text(resp) -> str:
    try:
        return resp.json().get("error", resp.text)
    except ValueError:
        return resp.text[:500]
