"""Scored-generation interface shared by toy models and the remote client.

A model can draw token sequences at a point on a control axis and report the
exact log-probability of any token sequence at any point.  Everything
downstream (dissimilarity scans, thermal analysis) is built on those two
capabilities.
"""

from __future__ import annotations

import enum
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

__all__ = [
    "AxisKind",
    "AxisPoint",
    "TokenSequence",
    "AutoregressiveModel",
    "ModelError",
    "softmax_temperature",
]

_LOGPROB_TOL = 1e-9


class ModelError(RuntimeError):
    """Generation or scoring failed (bad request, remote failure, ...)."""


class AxisKind(enum.Enum):
    PROMPT_SLOT = "prompt_slot"
    TEMPERATURE = "temperature"
    CHECKPOINT = "checkpoint"


@dataclass(frozen=True)
class AxisPoint:
    """One value of the scanned control parameter.

    Prompt-slot and checkpoint points carry integer values; temperature points
    carry a positive real.  ``rendered_prompt`` is the fully substituted prompt
    text and only meaningful on the prompt axis.
    """

    kind: AxisKind
    value: float | int
    rendered_prompt: str | None = None

    def __post_init__(self):
        if self.kind is AxisKind.TEMPERATURE:
            if not (float(self.value) > 0.0 and np.isfinite(self.value)):
                raise ValueError(
                    f"temperature must be positive and finite, got {self.value!r}"
                    " (use argmax_sample for the zero-temperature limit)"
                )
        else:
            if float(self.value) != int(self.value):
                raise ValueError(f"{self.kind.value} value must be an integer")
            object.__setattr__(self, "value", int(self.value))

    @property
    def temperature(self) -> float:
        """Sampling temperature in effect at this point (1 off the T axis)."""
        return float(self.value) if self.kind is AxisKind.TEMPERATURE else 1.0


@dataclass(frozen=True)
class TokenSequence:
    """A generated sequence with the log-probability of each sampled token."""

    tokens: tuple[int, ...]
    per_token_logprob: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        object.__setattr__(
            self, "per_token_logprob", tuple(float(v) for v in self.per_token_logprob)
        )
        if len(self.tokens) != len(self.per_token_logprob):
            raise ValueError("tokens and per_token_logprob must have equal length")
        if any(t < 0 for t in self.tokens):
            raise ValueError("token ids must be non-negative")
        if any(lp > _LOGPROB_TOL for lp in self.per_token_logprob):
            raise ValueError("per-token log-probabilities must be <= 0")

    @property
    def total_logprob(self) -> float:
        return float(sum(self.per_token_logprob))

    def __len__(self):
        return len(self.tokens)


def softmax_temperature(logits, temperature: float) -> np.ndarray:
    """Temperature-scaled softmax, computed with a max shift for stability.

    ``p_i = exp(z_i / T) / sum_j exp(z_j / T)`` for T > 0.  Callers wanting the
    T = 0 limit must take the argmax instead of dividing.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("logits must be a non-empty 1-D vector")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    t = float(temperature)
    if not (t > 0.0 and np.isfinite(t)):
        raise ValueError(f"temperature must be positive and finite, got {t!r}")
    scaled = z / t
    scaled -= scaled.max()
    e = np.exp(scaled)
    return e / e.sum()


class AutoregressiveModel(ABC):
    """Anything that can sample token sequences and score them exactly.

    ``max_in_flight`` advertises how many concurrent requests the model
    tolerates; in-process models are pure and unbounded, network clients
    bound it.
    """

    max_in_flight: int = 1

    @abstractmethod
    def generate_batch(
        self, point: AxisPoint, n_samples: int, n_tokens: int, seed: int
    ) -> tuple[np.ndarray, np.ndarray]:
        """Sample ``n_samples`` sequences of ``n_tokens`` tokens at ``point``.

        Returns an int token array and a float log-probability array, both of
        shape (n_samples, n_tokens); entry [i, t] is the log-probability the
        sampled token had under the step distribution it was drawn from.
        Deterministic for a fixed seed.
        """

    @abstractmethod
    def score_batch(self, point: AxisPoint, tokens: np.ndarray) -> np.ndarray:
        """Total log-probability of each row of ``tokens`` at ``point``."""

    @abstractmethod
    def argmax_sample(self, point: AxisPoint, n_tokens: int) -> TokenSequence:
        """Greedy decode (the zero-temperature limit); ties take the lowest id."""

    def generate(
        self, point: AxisPoint, n_samples: int, n_tokens: int, seed: int
    ) -> list[TokenSequence]:
        """Like :meth:`generate_batch` but as a list of TokenSequence."""
        if n_samples < 1 or n_tokens < 1:
            raise ValueError("n_samples and n_tokens must be >= 1")
        toks, logps = self.generate_batch(point, n_samples, n_tokens, seed)
        return [
            TokenSequence(tuple(toks[i]), tuple(logps[i])) for i in range(n_samples)
        ]

    def score(self, point: AxisPoint, tokens) -> float:
        """Total log-probability (nats) of one token sequence at ``point``."""
        arr = np.asarray(list(tokens), dtype=np.int64).reshape(1, -1)
        if arr.shape[1] < 1:
            raise ValueError("cannot score an empty token sequence")
        return float(self.score_batch(point, arr)[0])
