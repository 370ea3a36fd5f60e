"""A loaded checkpoint plus the sampling and scoring primitives the wire
protocol exposes.

All log-probabilities are natural-log values of the post-softmax probability
at the requested temperature, computed from the full logit vector (no top-k or
nucleus truncation: truncated sampling would change the sequence distribution
the scan estimator accounts for).
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass

import torch
from transformers import AutoModelForCausalLM, AutoTokenizer

__all__ = ["BridgeError", "NoModelLoaded", "BridgeSession", "tokenizer_fingerprint"]


class BridgeError(ValueError):
    """Bad request content (unknown revision, empty tokens, bad temperature)."""


class NoModelLoaded(RuntimeError):
    """An inference endpoint was hit before any checkpoint was loaded."""


def tokenizer_fingerprint(tokenizer) -> str:
    """Stable hash of the tokenizer's vocabulary mapping.

    Two checkpoints are comparable in one scan only if token ids mean the same
    strings; the fingerprint is a sha256 over the sorted (token, id) pairs, so
    it is stable across process restarts.
    """
    vocab = tokenizer.get_vocab()
    blob = json.dumps(sorted(vocab.items()), separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _resolve_source(model_id: str, revision: str | None) -> tuple[str, str | None]:
    """Map (model_id, revision) onto a from_pretrained source.

    Hub ids pass the revision through.  For a local directory, a subdirectory
    named after the revision is used when present, which is how checkpoint
    series are laid out on disk for offline runs.
    """
    if os.path.isdir(model_id) and revision:
        candidate = os.path.join(model_id, revision)
        if os.path.isdir(candidate):
            return candidate, None
    return model_id, revision


@dataclass
class LoadedModel:
    model_id: str
    revision: str
    model: object
    tokenizer: object
    fingerprint: str


class BridgeSession:
    """One served checkpoint at a time; requests are handled serially."""

    def __init__(self, device: str = "cpu"):
        self.device = device
        self.lock = threading.Lock()
        self._loaded: LoadedModel | None = None

    # -- lifecycle -----------------------------------------------------------

    def load(self, model_id: str, revision: str | None = None) -> LoadedModel:
        revision = revision or "main"
        source, hub_revision = _resolve_source(model_id, revision)
        try:
            tokenizer = AutoTokenizer.from_pretrained(source, revision=hub_revision)
            model = AutoModelForCausalLM.from_pretrained(source, revision=hub_revision)
        except (OSError, ValueError, EnvironmentError) as exc:
            raise BridgeError(f"cannot load {model_id!r} at revision {revision!r}: {exc}") from exc
        model.to(self.device)
        model.eval()
        self._loaded = LoadedModel(
            model_id=model_id,
            revision=revision,
            model=model,
            tokenizer=tokenizer,
            fingerprint=tokenizer_fingerprint(tokenizer),
        )
        return self._loaded

    @property
    def loaded(self) -> LoadedModel:
        if self._loaded is None:
            raise NoModelLoaded("no model loaded; POST /load first")
        return self._loaded

    def info(self) -> dict:
        loaded = self.loaded
        return {
            "model_id": loaded.model_id,
            "revision": loaded.revision,
            "vocab_size": int(loaded.model.config.vocab_size),
            "tokenizer_fingerprint": loaded.fingerprint,
        }

    # -- tokenization ---------------------------------------------------------

    def _prompt_ids(self, prompt: str) -> list[int]:
        """Prompt token ids; an empty prompt falls back to the BOS token.

        Models differ on whether an empty context is meaningful; when the
        tokenizer defines a BOS token it is inserted, otherwise the request is
        rejected rather than silently conditioning on nothing.
        """
        tokenizer = self.loaded.tokenizer
        ids = tokenizer.encode(prompt, add_special_tokens=False)
        if not ids:
            if tokenizer.bos_token_id is not None:
                return [int(tokenizer.bos_token_id)]
            raise BridgeError("empty prompt and the tokenizer defines no BOS token")
        return [int(t) for t in ids]

    # -- inference -------------------------------------------------------------

    @torch.no_grad()
    def generate(
        self,
        prompt: str,
        temperature: float,
        n_samples: int,
        n_tokens: int,
        seed: int,
        greedy: bool = False,
    ) -> list[dict]:
        """Sample continuations; each token drawn from the full softmax at T.

        Greedy decoding picks the most likely token (lowest id on ties); with
        a non-positive temperature its log-probabilities are reported as the
        zero-temperature limit 0.0, otherwise at the given temperature.
        """
        if n_samples < 1 or n_tokens < 1:
            raise BridgeError("n_samples and n_tokens must be >= 1")
        if not greedy and temperature <= 0.0:
            raise BridgeError("temperature must be positive unless greedy is set")
        loaded = self.loaded
        prompt_ids = self._prompt_ids(prompt)
        generator = torch.Generator(device="cpu")
        generator.manual_seed(int(seed) & 0x7FFFFFFFFFFFFFFF)
        batch = 1 if greedy else n_samples
        current = torch.tensor([prompt_ids] * batch, dtype=torch.long, device=self.device)
        past = None
        tokens = torch.empty((batch, n_tokens), dtype=torch.long)
        logprobs = torch.empty((batch, n_tokens), dtype=torch.float64)
        for step in range(n_tokens):
            out = loaded.model(input_ids=current, past_key_values=past, use_cache=True)
            past = out.past_key_values
            logits = out.logits[:, -1, :].double()
            if greedy:
                chosen = torch.argmax(logits, dim=-1)
                if temperature > 0.0:
                    logdist = torch.log_softmax(logits / temperature, dim=-1)
                    logprobs[:, step] = logdist.gather(1, chosen[:, None])[:, 0]
                else:
                    logprobs[:, step] = 0.0
            else:
                logdist = torch.log_softmax(logits / temperature, dim=-1)
                chosen = torch.multinomial(
                    logdist.exp(), num_samples=1, generator=generator
                )[:, 0]
                logprobs[:, step] = logdist.gather(1, chosen[:, None])[:, 0]
            tokens[:, step] = chosen
            current = chosen[:, None].to(self.device)
        samples = [
            {
                "tokens": [int(t) for t in tokens[i]],
                "logprobs": [float(v) for v in logprobs[i]],
            }
            for i in range(batch)
        ]
        if greedy and n_samples > 1:
            samples = samples * n_samples
        return samples

    @torch.no_grad()
    def score(self, prompt: str, tokens: list[int], temperature: float) -> list[float]:
        """Teacher-forced per-token log-probabilities of ``tokens`` after ``prompt``."""
        if not tokens:
            raise BridgeError("tokens must be a non-empty list")
        if temperature <= 0.0:
            raise BridgeError("temperature must be positive")
        loaded = self.loaded
        vocab = int(loaded.model.config.vocab_size)
        if any(not 0 <= int(t) < vocab for t in tokens):
            raise BridgeError("token id out of vocabulary")
        prompt_ids = self._prompt_ids(prompt)
        ids = torch.tensor([prompt_ids + [int(t) for t in tokens]], device=self.device)
        logits = loaded.model(input_ids=ids).logits[0].double()
        # position len(prompt_ids)-1+i predicts continuation token i
        start = len(prompt_ids) - 1
        out = []
        for i, token in enumerate(tokens):
            logdist = torch.log_softmax(logits[start + i] / temperature, dim=-1)
            out.append(float(logdist[int(token)]))
        return out
