"""Checkpoint weight-distribution analysis.

Flat weight dumps per (layer, epoch) are binned into fixed-range histograms;
dissimilarity curves over a checkpoint series are then computed exactly from
the bin probabilities, with no sampling and therefore no standard error.
Abrupt movement of a layer's weight distribution shows up as a curve peak at
the corresponding epoch boundary.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .divergence import FiniteDistribution, GSpec, exact_g_dissimilarity
from .models import AxisKind, AxisPoint
from .scan import DissimilarityCurve, ParameterGrid

__all__ = [
    "WeightHistogram",
    "CheckpointSeries",
    "histogram_weights",
    "series_dissimilarity",
    "write_weight_dump",
    "read_weight_dump",
    "load_manifest",
    "series_from_manifest",
    "DumpFormatError",
]

DUMP_MAGIC = b"WTSDUMP1"

DEFAULT_BIN_COUNT = 10_000
DEFAULT_RANGE = (-3.0, 3.0)


class DumpFormatError(ValueError):
    """A weight-dump file does not follow the expected binary layout."""


@dataclass(frozen=True)
class WeightHistogram:
    """Counts of weight values over uniform bins spanning [lo, hi).

    Values outside the range are clamped into the boundary bins so no mass is
    dropped.  ``normalized`` is the histogram as a probability vector.
    """

    bin_count: int
    lo: float
    hi: float
    counts: np.ndarray
    normalized: FiniteDistribution

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def same_binning(self, other: "WeightHistogram") -> bool:
        return (
            self.bin_count == other.bin_count
            and self.lo == other.lo
            and self.hi == other.hi
        )


def histogram_weights(
    values,
    bin_count: int = DEFAULT_BIN_COUNT,
    lo: float = DEFAULT_RANGE[0],
    hi: float = DEFAULT_RANGE[1],
) -> WeightHistogram:
    """Bin a flat list of weights into a WeightHistogram."""
    if bin_count < 1:
        raise ValueError("bin_count must be >= 1")
    lo, hi = float(lo), float(hi)
    if not lo < hi:
        raise ValueError(f"bad histogram range [{lo}, {hi})")
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("cannot histogram an empty weight list")
    if not np.all(np.isfinite(arr)):
        raise ValueError("weight values must be finite")
    width = (hi - lo) / bin_count
    idx = np.floor((arr - lo) / width).astype(np.int64)
    np.clip(idx, 0, bin_count - 1, out=idx)
    counts = np.bincount(idx, minlength=bin_count)
    counts.flags.writeable = False
    return WeightHistogram(
        bin_count=bin_count,
        lo=lo,
        hi=hi,
        counts=counts,
        normalized=FiniteDistribution(counts / counts.sum()),
    )


@dataclass(frozen=True)
class CheckpointSeries:
    """One histogram per training epoch for a single layer."""

    layer_label: str
    epochs: tuple[int, ...]
    histograms: tuple[WeightHistogram, ...]

    def __post_init__(self):
        if len(self.epochs) != len(self.histograms):
            raise ValueError("one histogram per epoch required")
        if len(self.epochs) < 2:
            raise ValueError("a series needs at least two epochs")
        if any(b <= a for a, b in zip(self.epochs, self.epochs[1:])):
            raise ValueError("epochs must be strictly increasing")
        first = self.histograms[0]
        if any(not h.same_binning(first) for h in self.histograms):
            raise ValueError("all histograms in a series must share one bin configuration")


def series_dissimilarity(
    series: CheckpointSeries, g: GSpec, L: int
) -> DissimilarityCurve:
    """Exact dissimilarity curve over a checkpoint series.

    Bin probabilities are known exactly, so each trial point compares the
    plain averages of the L histograms on either side; the standard error
    column is identically zero.
    """
    if len(series.epochs) < 2 * L + 1:
        raise ValueError(f"{len(series.epochs)} epochs cannot support L={L}")
    points = tuple(AxisPoint(AxisKind.CHECKPOINT, e) for e in series.epochs)
    grid = ParameterGrid(AxisKind.CHECKPOINT, points, L)
    probs = np.stack([h.normalized.probs for h in series.histograms])
    estimates = []
    for ti in grid.trial_indices:
        left, right = grid.segment_indices(ti)
        mix_l = FiniteDistribution.from_weights(probs[left].mean(axis=0))
        mix_r = FiniteDistribution.from_weights(probs[right].mean(axis=0))
        estimates.append(exact_g_dissimilarity(g, mix_l, mix_r))
    return DissimilarityCurve(
        axis_kind=AxisKind.CHECKPOINT,
        g_label=g.label,
        L=L,
        trial_values=grid.trial_values,
        estimates=tuple(estimates),
        stderr=tuple(0.0 for _ in estimates),
        n_batches=1,
    )


# -- on-disk formats ---------------------------------------------------------

# dump layout: 8-byte magic, little-endian uint64 element count, then that
# many little-endian float32 values.


def write_weight_dump(path, values) -> None:
    arr = np.asarray(values, dtype="<f4").ravel()
    with open(path, "wb") as fh:
        fh.write(DUMP_MAGIC)
        fh.write(struct.pack("<Q", arr.size))
        fh.write(arr.tobytes())


def read_weight_dump(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != DUMP_MAGIC:
            raise DumpFormatError(f"{path}: bad magic {magic!r}")
        raw_count = fh.read(8)
        if len(raw_count) != 8:
            raise DumpFormatError(f"{path}: truncated header")
        (count,) = struct.unpack("<Q", raw_count)
        data = fh.read()
    if len(data) != 4 * count:
        raise DumpFormatError(
            f"{path}: expected {count} float32 values, found {len(data)} bytes"
        )
    return np.frombuffer(data, dtype="<f4").astype(np.float64)


def load_manifest(path) -> tuple[str, list[tuple[int, str]]]:
    """Read a layer manifest: ``{layer, epochs: [{epoch, file}, ...]}``.

    Relative dump paths resolve against the manifest's directory.  Epochs must
    be strictly ascending.
    """
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        layer = str(doc["layer"])
        entries = [(int(e["epoch"]), str(e["file"])) for e in doc["epochs"]]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed manifest: {exc}") from exc
    if len(entries) < 2:
        raise ValueError(f"{path}: a series needs at least two epochs")
    if any(b <= a for (a, _), (b, _) in zip(entries, entries[1:])):
        raise ValueError(f"{path}: epochs must be strictly increasing")
    base = os.path.dirname(os.path.abspath(path))
    resolved = [
        (epoch, f if os.path.isabs(f) else os.path.join(base, f))
        for epoch, f in entries
    ]
    return layer, resolved


def series_from_manifest(
    path,
    bin_count: int = DEFAULT_BIN_COUNT,
    lo: float = DEFAULT_RANGE[0],
    hi: float = DEFAULT_RANGE[1],
) -> CheckpointSeries:
    """Load every dump a manifest references and histogram it."""
    layer, entries = load_manifest(path)
    epochs = tuple(e for e, _ in entries)
    histograms = tuple(
        histogram_weights(read_weight_dump(f), bin_count, lo, hi) for _, f in entries
    )
    return CheckpointSeries(layer_label=layer, epochs=epochs, histograms=histograms)
