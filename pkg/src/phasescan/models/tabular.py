"""Tabular toy models: small vocabularies, explicit logits, exact enumeration.

These models make every downstream estimate verifiable, because the full
sequence distribution can be enumerated and compared against sampling.
"""

from __future__ import annotations

import json
from typing import Callable, Mapping

import numpy as np

from ..divergence import FiniteDistribution
from .base import (
    AutoregressiveModel,
    AxisKind,
    AxisPoint,
    ModelError,
    TokenSequence,
    softmax_temperature,
)

__all__ = ["TabularModel"]

Prefix = tuple[int, ...]

_EXACT_STATE_LIMIT = 10**6


class TabularModel(AutoregressiveModel):
    """An autoregressive model defined by a logit table or function.

    ``logits_fn(prefix, point)`` must return a length-V logit vector for every
    context shorter than ``max_len``.  On the temperature axis, the point's
    value is applied as the softmax temperature; on integer axes the logits
    themselves may depend on ``point.value`` and tokens are drawn at
    temperature 1.
    """

    def __init__(
        self,
        vocab_size: int,
        max_len: int,
        logits_fn: Callable[[Prefix, AxisPoint], np.ndarray],
    ):
        if vocab_size < 1 or max_len < 1:
            raise ValueError("vocab_size and max_len must be >= 1")
        self.vocab_size = int(vocab_size)
        self.max_len = int(max_len)
        self._logits_fn = logits_fn

    # -- construction -----------------------------------------------------

    @classmethod
    def from_table(
        cls, vocab_size: int, max_len: int, table: Mapping
    ) -> "TabularModel":
        """Build from ``{(prefix, axis_value_or_None): logits}``.

        A ``None`` axis value is the fallback row shared by all points, which
        is the natural shape for temperature scans where the logits are fixed.
        """
        rows = {}
        for (prefix, value), z in table.items():
            arr = np.asarray(z, dtype=np.float64)
            if arr.shape != (vocab_size,) or not np.all(np.isfinite(arr)):
                raise ValueError(f"bad logit row for context {prefix!r}")
            rows[(tuple(int(t) for t in prefix), value)] = arr

        def logits_fn(prefix: Prefix, point: AxisPoint) -> np.ndarray:
            key = None if point.kind is AxisKind.TEMPERATURE else point.value
            row = rows.get((prefix, key))
            if row is None:
                row = rows.get((prefix, None))
            if row is None:
                raise ModelError(f"no logit row for context {prefix!r} at {point!r}")
            return row

        return cls(vocab_size, max_len, logits_fn)

    @classmethod
    def from_json(cls, path) -> "TabularModel":
        """Load the on-disk JSON form written by :meth:`to_json`."""
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("version") != 1:
            raise ValueError(f"unsupported tabular model version {doc.get('version')!r}")
        table = {}
        for prefix_str, z in doc.get("default", {}).items():
            table[(_parse_prefix(prefix_str), None)] = z
        for value_str, rows in doc.get("per_value", {}).items():
            for prefix_str, z in rows.items():
                table[(_parse_prefix(prefix_str), int(value_str))] = z
        return cls.from_table(int(doc["vocab_size"]), int(doc["max_len"]), table)

    def to_json(self, path, table: Mapping) -> None:
        """Write a table-backed model definition to disk."""
        default = {}
        per_value: dict[str, dict[str, list]] = {}
        for (prefix, value), z in table.items():
            row = list(np.asarray(z, dtype=np.float64))
            key = ",".join(str(int(t)) for t in prefix)
            if value is None:
                default[key] = row
            else:
                per_value.setdefault(str(int(value)), {})[key] = row
        doc = {
            "version": 1,
            "vocab_size": self.vocab_size,
            "max_len": self.max_len,
            "default": default,
            "per_value": per_value,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)

    # -- per-step machinery ------------------------------------------------

    def logits(self, prefix: Prefix, point: AxisPoint) -> np.ndarray:
        z = np.asarray(self._logits_fn(tuple(prefix), point), dtype=np.float64)
        if z.shape != (self.vocab_size,):
            raise ModelError(
                f"logit row for context {prefix!r} has shape {z.shape}, "
                f"expected ({self.vocab_size},)"
            )
        if not np.all(np.isfinite(z)):
            raise ModelError(f"non-finite logits for context {prefix!r}")
        return z

    def step_distribution(self, prefix: Prefix, point: AxisPoint) -> np.ndarray:
        """Next-token probabilities after ``prefix`` at ``point``."""
        return softmax_temperature(self.logits(prefix, point), point.temperature)

    # -- AutoregressiveModel -----------------------------------------------

    def generate_batch(self, point, n_samples, n_tokens, seed):
        if n_tokens > self.max_len:
            raise ValueError(f"n_tokens {n_tokens} exceeds max_len {self.max_len}")
        rng = np.random.default_rng(seed)
        tokens = np.zeros((n_samples, n_tokens), dtype=np.int64)
        logps = np.zeros((n_samples, n_tokens), dtype=np.float64)
        # samples sharing a prefix share a step distribution; draw them together
        groups: dict[Prefix, np.ndarray] = {(): np.arange(n_samples)}
        for step in range(n_tokens):
            next_groups: dict[Prefix, np.ndarray] = {}
            for prefix in sorted(groups):
                idx = groups[prefix]
                probs = self.step_distribution(prefix, point)
                draws = rng.choice(self.vocab_size, size=idx.size, p=probs)
                tokens[idx, step] = draws
                logps[idx, step] = np.log(probs[draws])
                for v in np.unique(draws):
                    next_groups[prefix + (int(v),)] = idx[draws == v]
            groups = next_groups
        return tokens, logps

    def score_batch(self, point, tokens):
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 2:
            raise ValueError("tokens must be a 2-D array of sequences")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.vocab_size):
            raise ModelError("token id out of vocabulary")
        log_dist_cache: dict[Prefix, np.ndarray] = {}
        totals = np.zeros(tokens.shape[0], dtype=np.float64)
        for i, row in enumerate(tokens):
            total = 0.0
            for step in range(tokens.shape[1]):
                prefix = tuple(int(t) for t in row[:step])
                logd = log_dist_cache.get(prefix)
                if logd is None:
                    with np.errstate(divide="ignore"):
                        logd = np.log(self.step_distribution(prefix, point))
                    log_dist_cache[prefix] = logd
                total += logd[row[step]]
            totals[i] = total
        return totals

    def argmax_sample(self, point, n_tokens):
        prefix: Prefix = ()
        logps = []
        for _ in range(n_tokens):
            probs = self.step_distribution(prefix, point)
            tok = int(np.argmax(probs))  # first max wins: lowest token id
            logps.append(float(np.log(probs[tok])))
            prefix = prefix + (tok,)
        return TokenSequence(prefix, tuple(logps))

    # -- exact enumeration ---------------------------------------------------

    def exact_distribution(self, point: AxisPoint, n_tokens: int | None = None):
        """Probability of every length-N sequence, in lexicographic token order.

        Sequence ``(t_0, ..., t_{N-1})`` sits at index ``sum t_k V^(N-1-k)``.
        """
        n = self.max_len if n_tokens is None else int(n_tokens)
        if n < 1 or n > self.max_len:
            raise ValueError(f"n_tokens must be in [1, {self.max_len}]")
        size = self.vocab_size**n
        if size > _EXACT_STATE_LIMIT:
            raise ValueError(
                f"state space {self.vocab_size}^{n} exceeds {_EXACT_STATE_LIMIT}"
            )
        probs = np.array([1.0])
        prefixes: list[Prefix] = [()]
        for step_idx in range(n):
            step = np.stack([self.step_distribution(p, point) for p in prefixes])
            probs = (probs[:, None] * step).reshape(-1)
            if step_idx + 1 < n:
                prefixes = [
                    p + (v,) for p in prefixes for v in range(self.vocab_size)
                ]
        return FiniteDistribution(probs / probs.sum())


def _parse_prefix(prefix_str: str) -> Prefix:
    if prefix_str == "":
        return ()
    return tuple(int(t) for t in prefix_str.split(","))
