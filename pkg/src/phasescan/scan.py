"""Dissimilarity scans over a one-dimensional control-parameter grid.

The detection engine works in two stages.  Stage 1 draws an equal number of
token sequences at every grid point.  Stage 2 evaluates, for each trial point
halfway between grid points, how distinguishable the sample mixtures of the L
grid points to its left and right are: every nearby sample is scored under all
2L points, converted into a posterior for its side, and averaged through a
g-function.  Local maxima of the resulting curve mark parameter values where
the model's output distribution changes abruptly.
"""

from __future__ import annotations

import csv
import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .divergence import GSpec, SegmentPosterior, posterior_from_logs
from .models import AutoregressiveModel, AxisKind, AxisPoint, ModelError, TokenSequence
from .models.tabular import TabularModel

__all__ = [
    "ParameterGrid",
    "build_grid",
    "SampleStore",
    "stage1_generate",
    "segment_posterior",
    "Estimate",
    "stage2_estimate",
    "run_scan",
    "exact_estimate",
    "exact_curve",
    "DissimilarityCurve",
    "Peak",
    "PeakReport",
    "detect_peaks",
    "annotate_outliers",
    "flanking_dissimilarity",
    "exact_flanking_dissimilarity",
]

_REL_TOL = 1e-9


@dataclass(frozen=True)
class ParameterGrid:
    """A uniform grid of axis points plus the trial points between them.

    ``L`` is the segment half-width: each trial point is compared through the
    L grid points on either side, so trial points need L points of margin to
    the grid borders.
    """

    axis_kind: AxisKind
    points: tuple[AxisPoint, ...]
    L: int

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if self.L < 1:
            raise ValueError("L must be >= 1")
        n = len(self.points)
        if n < 2 * self.L + 1:
            raise ValueError(
                f"{n} grid points cannot support L={self.L}; need at least {2 * self.L + 1}"
            )
        if any(p.kind is not self.axis_kind for p in self.points):
            raise ValueError("all grid points must live on the grid's axis")
        values = np.array([float(p.value) for p in self.points])
        diffs = np.diff(values)
        if np.any(diffs <= 0):
            raise ValueError("grid values must be strictly increasing")
        spacing = (values[-1] - values[0]) / (n - 1)
        if self.axis_kind is AxisKind.TEMPERATURE:
            if np.any(np.abs(diffs - spacing) > _REL_TOL * abs(spacing)):
                raise ValueError("grid is not uniform; refusing a non-uniform scan")
        else:
            if len(set(np.diff([int(p.value) for p in self.points]))) != 1:
                raise ValueError("integer grid is not uniformly spaced")

    @property
    def values(self) -> np.ndarray:
        return np.array([float(p.value) for p in self.points])

    @property
    def spacing(self) -> float:
        v = self.values
        return float((v[-1] - v[0]) / (len(v) - 1))

    @property
    def trial_indices(self) -> range:
        """Left grid index of each trial point (trial i sits between i and i+1)."""
        return range(self.L - 1, len(self.points) - self.L)

    @property
    def trial_values(self) -> tuple[float, ...]:
        v = self.values
        return tuple(float(0.5 * (v[i] + v[i + 1])) for i in self.trial_indices)

    def trial_index_for(self, trial_value: float) -> int:
        tol = _REL_TOL * max(1.0, abs(self.spacing))
        for i, tv in zip(self.trial_indices, self.trial_values):
            if abs(tv - float(trial_value)) <= tol:
                return i
        raise ValueError(f"{trial_value!r} is not a trial point of this grid")

    def segment_indices(self, trial_index: int) -> tuple[list[int], list[int]]:
        """Grid indices of the left and right segments around a trial point."""
        if trial_index not in self.trial_indices:
            raise ValueError(f"trial index {trial_index} out of range")
        left = list(range(trial_index - self.L + 1, trial_index + 1))
        right = list(range(trial_index + 1, trial_index + self.L + 1))
        return left, right

    def with_l(self, L: int) -> "ParameterGrid":
        """The same grid points viewed with a different segment half-width."""
        return ParameterGrid(self.axis_kind, self.points, L)


def build_grid(
    axis_kind: AxisKind,
    start,
    stop,
    n_points: int,
    L: int,
    prompt_template: str | None = None,
) -> ParameterGrid:
    """Uniform grid from ``start`` to ``stop`` inclusive.

    Integer axes require an integer spacing.  On the prompt axis,
    ``prompt_template`` is rendered once per grid value through its ``{T}``
    placeholder.
    """
    if n_points < 2 * L + 1:
        raise ValueError(f"n_points={n_points} is too small for L={L}")
    if axis_kind is AxisKind.TEMPERATURE:
        values: Sequence = np.linspace(float(start), float(stop), n_points)
    else:
        start, stop = int(start), int(stop)
        if n_points > 1 and (stop - start) % (n_points - 1) != 0:
            raise ValueError(
                f"integer axis cannot place {n_points} uniform points on [{start}, {stop}]"
            )
        step = (stop - start) // (n_points - 1)
        values = [start + step * k for k in range(n_points)]
    points = []
    for v in values:
        rendered = None
        if axis_kind is AxisKind.PROMPT_SLOT and prompt_template is not None:
            rendered = prompt_template.format(T=v)
        points.append(AxisPoint(axis_kind, v, rendered))
    return ParameterGrid(axis_kind, tuple(points), L)


class SampleStore:
    """Samples generated at each grid point plus a memoized score table.

    Every point must hold the same number of samples; estimates silently
    weighted by unequal set sizes would not match the averaging the estimator
    assumes, so unequal stores are rejected.  Reads are lock-free; writers are
    serialized per key and last-write-wins (scores for a key are identical).
    """

    def __init__(self, model: AutoregressiveModel, n_samples: int, n_tokens: int):
        if n_samples < 1 or n_tokens < 1:
            raise ValueError("n_samples and n_tokens must be >= 1")
        self.model = model
        self.n_samples = int(n_samples)
        self.n_tokens = int(n_tokens)
        self.seeds: dict[AxisPoint, int] = {}
        self._samples: dict[AxisPoint, tuple[np.ndarray, np.ndarray]] = {}
        self._scores: dict[tuple[AxisPoint, bytes], float] = {}
        self._lock = threading.Lock()

    def add(self, point: AxisPoint, seed: int, tokens: np.ndarray, logps: np.ndarray):
        tokens = np.ascontiguousarray(tokens, dtype=np.int64)
        logps = np.asarray(logps, dtype=np.float64)
        if tokens.shape != (self.n_samples, self.n_tokens) or logps.shape != tokens.shape:
            raise ValueError(
                f"sample block for {point} has shape {tokens.shape}, "
                f"expected ({self.n_samples}, {self.n_tokens})"
            )
        with self._lock:
            self._samples[point] = (tokens, logps)
            self.seeds[point] = int(seed)

    def has(self, point: AxisPoint) -> bool:
        return point in self._samples

    def points(self) -> list[AxisPoint]:
        return list(self._samples)

    def tokens(self, point: AxisPoint) -> np.ndarray:
        return self._samples[point][0]

    def generation_logprobs(self, point: AxisPoint) -> np.ndarray:
        return self._samples[point][1]

    def sequences(self, point: AxisPoint) -> list[TokenSequence]:
        tokens, logps = self._samples[point]
        return [TokenSequence(tuple(t), tuple(lp)) for t, lp in zip(tokens, logps)]

    def log_probs(self, point: AxisPoint, rows: np.ndarray) -> np.ndarray:
        """Total log-probability of each row at ``point``, cache-first.

        Missing scores are fetched in chunks, in parallel up to the model's
        ``max_in_flight``; in-process models score everything in one call.
        """
        rows = np.ascontiguousarray(rows, dtype=np.int64)
        out = np.empty(rows.shape[0])
        keys = [rows[i].tobytes() for i in range(rows.shape[0])]
        missing = []
        for i, k in enumerate(keys):
            v = self._scores.get((point, k))
            if v is None:
                missing.append(i)
            else:
                out[i] = v
        if missing:
            workers = min(getattr(self.model, "max_in_flight", 1), len(missing))
            if workers > 1:
                chunks = np.array_split(np.asarray(missing), workers)
                results: dict[int, np.ndarray] = {}

                def score_chunk(ci):
                    results[ci] = self.model.score_batch(point, rows[chunks[ci]])

                _parallel_each(score_chunk, range(len(chunks)), workers)
                scored = np.concatenate([results[ci] for ci in range(len(chunks))])
            else:
                scored = self.model.score_batch(point, rows[missing])
            with self._lock:
                for i, s in zip(missing, scored):
                    self._scores[(point, keys[i])] = float(s)
                    out[i] = float(s)
        return out


def _parallel_each(fn, items, max_workers: int):
    if max_workers <= 1 or len(items) <= 1:
        for it in items:
            fn(it)
        return
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        for fut in [pool.submit(fn, it) for it in items]:
            fut.result()


def stage1_generate(
    model: AutoregressiveModel,
    grid: ParameterGrid,
    n_samples: int,
    n_tokens: int,
    seed: int,
) -> SampleStore:
    """Draw ``n_samples`` sequences at every grid point (stage 1 of a scan).

    Point ``i`` uses seed ``seed + i``, recorded in the store, so a scan is
    reproducible from its master seed alone.
    """
    store = SampleStore(model, n_samples, n_tokens)

    def one(item):
        idx, point = item
        point_seed = int(seed) + idx
        try:
            tokens, logps = model.generate_batch(point, n_samples, n_tokens, point_seed)
        except ModelError:
            raise
        except Exception as exc:
            raise ModelError(f"generation failed at grid point {point}: {exc}") from exc
        store.add(point, point_seed, tokens, logps)

    _parallel_each(one, list(enumerate(grid.points)), getattr(model, "max_in_flight", 1))
    return store


def segment_posterior(log_p_under: Sequence[float]) -> SegmentPosterior:
    """Posterior that a sequence came from the left segment.

    ``log_p_under`` holds the sequence's log-probability under each of the 2L
    segment parameters, left block first.  Each segment's mixture probability
    is the mean of its members, formed with a log-sum-exp.
    """
    logs = np.asarray(log_p_under, dtype=np.float64)
    if logs.ndim != 1 or logs.size < 2 or logs.size % 2 != 0:
        raise ValueError("expected an even-length vector of 2L log-probabilities")
    if not np.all(np.isfinite(logs)):
        raise ValueError("log-probabilities must be finite")
    half = logs.size // 2
    log_l = float(logsumexp(logs[:half]) - math.log(half))
    log_r = float(logsumexp(logs[half:]) - math.log(half))
    return posterior_from_logs(log_l, log_r)


@dataclass(frozen=True)
class Estimate:
    estimate: float
    stderr: float


def _segment_tables(store: SampleStore, grid: ParameterGrid, trial_index: int):
    """Unique sample rows around a trial point and their log-odds.

    Returns (per-point inverse index slices, union row count, delta) where
    ``delta[u]`` is the posterior log-odds of the left segment for unique row
    u.  The log L normalizations cancel in the difference of the two
    log-sum-exps.
    """
    left, right = grid.segment_indices(trial_index)
    seg_points = [grid.points[j] for j in left + right]
    blocks = [store.tokens(p) for p in seg_points]
    all_rows = np.concatenate(blocks, axis=0)
    uniq, inverse = np.unique(all_rows, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    logp = np.stack([store.log_probs(p, uniq) for p in seg_points], axis=1)
    half = len(left)
    delta = logsumexp(logp[:, :half], axis=1) - logsumexp(logp[:, half:], axis=1)
    n = store.n_samples
    slices = [inverse[k * n : (k + 1) * n] for k in range(len(seg_points))]
    return slices, len(uniq), delta


def stage2_estimate(
    store: SampleStore,
    grid: ParameterGrid,
    g: GSpec,
    trial_point: float,
    n_batches: int = 4,
) -> Estimate:
    """Monte Carlo dissimilarity estimate at one trial point (stage 2).

    Every sample from the 2L surrounding sets is scored under all 2L points
    (cache-first), turned into the posterior for its own side and passed
    through g; the estimate averages the two sides.  The standard error is the
    sample standard error over ``n_batches`` contiguous generation-order
    batches, each batch drawing from every grid point.
    """
    if n_batches < 1:
        raise ValueError("n_batches must be >= 1")
    if store.n_samples % n_batches != 0:
        raise ValueError(
            f"n_batches={n_batches} must divide the {store.n_samples} samples per point"
        )
    ti = grid.trial_index_for(trial_point)
    slices, n_uniq, delta = _segment_tables(store, grid, ti)
    g_left = np.asarray(g.on_logit(delta), dtype=np.float64)
    g_right = np.asarray(g.on_logit(-delta), dtype=np.float64)
    # a row can only diverge (e.g. g -> -inf at posterior 0) on the side it was
    # never sampled from, where its count is zero; keep 0 * inf out of the dot
    g_left = np.where(np.isfinite(g_left), g_left, 0.0)
    g_right = np.where(np.isfinite(g_right), g_right, 0.0)
    L = grid.L
    bs = store.n_samples // n_batches
    batch_vals = np.empty(n_batches)
    for b in range(n_batches):
        j_left = 0.0
        j_right = 0.0
        for k, inv in enumerate(slices):
            counts = np.bincount(inv[b * bs : (b + 1) * bs], minlength=n_uniq)
            side = g_left if k < L else g_right
            mean_g = float(counts @ side) / bs
            if k < L:
                j_left += mean_g
            else:
                j_right += mean_g
        batch_vals[b] = 0.5 * (j_left / L + j_right / L)
    estimate = float(batch_vals.mean())
    stderr = (
        float(batch_vals.std(ddof=1) / math.sqrt(n_batches)) if n_batches > 1 else 0.0
    )
    return Estimate(estimate, stderr)


@dataclass(frozen=True)
class DissimilarityCurve:
    """Dissimilarity estimates over all trial points of one (g, L) scan."""

    axis_kind: AxisKind
    g_label: str
    L: int
    trial_values: tuple[float, ...]
    estimates: tuple[float, ...]
    stderr: tuple[float, ...]
    n_batches: int

    def __post_init__(self):
        if not (len(self.trial_values) == len(self.estimates) == len(self.stderr)):
            raise ValueError("curve columns must have equal length")
        if any(s < 0 for s in self.stderr):
            raise ValueError("standard errors must be non-negative")

    def __len__(self):
        return len(self.trial_values)

    # CSV layout: trial_value,estimate,stderr,g,L,axis with 17-significant-digit
    # floats in ascending trial order, so reruns are byte-identical.
    CSV_HEADER = ("trial_value", "estimate", "stderr", "g", "L", "axis")

    def to_csv_text(self) -> str:
        lines = [",".join(self.CSV_HEADER)]
        for tv, est, se in zip(self.trial_values, self.estimates, self.stderr):
            lines.append(
                f"{_fmt(tv)},{_fmt(est)},{_fmt(se)},{self.g_label},{self.L},"
                f"{self.axis_kind.value}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv_text())

    @classmethod
    def read_csv(cls, path) -> "DissimilarityCurve":
        with open(path, "r", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
        if not rows:
            raise ValueError(f"{path}: empty curve file")
        missing = set(cls.CSV_HEADER) - set(rows[0])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return cls(
            axis_kind=AxisKind(rows[0]["axis"]),
            g_label=rows[0]["g"],
            L=int(rows[0]["L"]),
            trial_values=tuple(float(r["trial_value"]) for r in rows),
            estimates=tuple(float(r["estimate"]) for r in rows),
            stderr=tuple(float(r["stderr"]) for r in rows),
            n_batches=0,
        )

    def to_json_doc(self) -> dict:
        return {
            "axis": self.axis_kind.value,
            "g": self.g_label,
            "L": self.L,
            "n_batches": self.n_batches,
            "trial_values": list(self.trial_values),
            "estimates": list(self.estimates),
            "stderr": list(self.stderr),
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_doc(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(x: float) -> str:
    return "%.17g" % float(x)


def run_scan(
    model: AutoregressiveModel,
    grid: ParameterGrid,
    g: GSpec,
    n_samples: int,
    n_tokens: int,
    seed: int,
    n_batches: int = 4,
    store: SampleStore | None = None,
) -> DissimilarityCurve:
    """Full two-stage scan: generate everywhere, estimate at every trial point.

    Pass an existing ``store`` to reuse stage-1 samples across several g or L
    choices on the same grid points.
    """
    if store is None:
        store = stage1_generate(model, grid, n_samples, n_tokens, seed)
    estimates = []
    errors = []
    for tv in grid.trial_values:
        res = stage2_estimate(store, grid, g, tv, n_batches)
        estimates.append(res.estimate)
        errors.append(res.stderr)
    return DissimilarityCurve(
        axis_kind=grid.axis_kind,
        g_label=g.label,
        L=grid.L,
        trial_values=grid.trial_values,
        estimates=tuple(estimates),
        stderr=tuple(errors),
        n_batches=n_batches,
    )


# -- exact (enumeration) route -------------------------------------------------


def _exact_distributions(model: TabularModel, points, n_tokens=None):
    return np.stack([model.exact_distribution(p, n_tokens).probs for p in points])


def exact_estimate(
    model: TabularModel,
    grid: ParameterGrid,
    g: GSpec,
    trial_point: float,
    n_tokens: int | None = None,
) -> float:
    """Stage-2 value with sampling replaced by exact sequence weights.

    Follows the estimator structure (per-point expectations of g applied to
    the side posterior) so it can serve as an independent check of both the
    Monte Carlo path and the closed-form mixture divergence.
    """
    ti = grid.trial_index_for(trial_point)
    left, right = grid.segment_indices(ti)
    probs = _exact_distributions(model, [grid.points[j] for j in left + right], n_tokens)
    L = grid.L
    mix_l = probs[:L].mean(axis=0)
    mix_r = probs[L:].mean(axis=0)
    with np.errstate(divide="ignore"):
        log_l = np.log(mix_l)
        log_r = np.log(mix_r)
    total = 0.0
    mask_l = mix_l > 0.0
    if np.any(mask_l):
        gl = np.asarray(g.on_logit(log_l[mask_l] - log_r[mask_l]))
        for k in range(L):
            total += 0.5 / L * float(probs[k][mask_l] @ gl)
    mask_r = mix_r > 0.0
    if np.any(mask_r):
        gr = np.asarray(g.on_logit(log_r[mask_r] - log_l[mask_r]))
        for k in range(L, 2 * L):
            total += 0.5 / L * float(probs[k][mask_r] @ gr)
    return total


def exact_curve(
    model: TabularModel,
    grid: ParameterGrid,
    g: GSpec,
    n_tokens: int | None = None,
) -> DissimilarityCurve:
    """Exact dissimilarity at every trial point of a tabular-model grid."""
    values = [exact_estimate(model, grid, g, tv, n_tokens) for tv in grid.trial_values]
    return DissimilarityCurve(
        axis_kind=grid.axis_kind,
        g_label=g.label,
        L=grid.L,
        trial_values=grid.trial_values,
        estimates=tuple(values),
        stderr=tuple(0.0 for _ in values),
        n_batches=1,
    )


# -- peaks and outliers -----------------------------------------------------------


@dataclass(frozen=True)
class Peak:
    trial_value: float
    estimate: float
    prominence: float
    is_outlier_suspect: bool = False
    flanking_dissimilarity: float = math.nan


@dataclass(frozen=True)
class PeakReport:
    g_label: str
    L: int
    axis_kind: AxisKind
    baseline: float
    min_prominence_sigmas: float
    peaks: tuple[Peak, ...]

    def to_json_doc(self) -> dict:
        return {
            "g": self.g_label,
            "L": self.L,
            "axis": self.axis_kind.value,
            "baseline": self.baseline,
            "min_prominence_sigmas": self.min_prominence_sigmas,
            "peaks": [
                {
                    "trial_value": p.trial_value,
                    "estimate": p.estimate,
                    "prominence": p.prominence,
                    "is_outlier_suspect": p.is_outlier_suspect,
                    "flanking_dissimilarity": p.flanking_dissimilarity,
                }
                for p in self.peaks
            ],
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_doc(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def detect_peaks(
    curve: DissimilarityCurve, min_prominence_sigmas: float = 5.0
) -> PeakReport:
    """Local maxima of a curve that clear the noise floor.

    A trial point is a peak when it strictly exceeds both neighbors (the
    leftmost point of an interior plateau stands for the plateau) and when its
    excess over the curve's median is at least ``min_prominence_sigmas`` times
    its own standard error.
    """
    n = len(curve)
    if n < 3:
        raise ValueError("peak detection needs a curve with at least 3 points")
    est = np.asarray(curve.estimates)
    baseline = float(np.median(est))
    peaks = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and est[j + 1] == est[i]:
            j += 1
        # plateau [i, j]; interior and strictly above both flanks?
        if i > 0 and j < n - 1 and est[i] > est[i - 1] and est[i] > est[j + 1]:
            prominence = float(est[i] - baseline)
            threshold = min_prominence_sigmas * curve.stderr[i]
            if prominence > 0 and prominence >= threshold:
                peaks.append(
                    Peak(
                        trial_value=curve.trial_values[i],
                        estimate=float(est[i]),
                        prominence=prominence,
                    )
                )
        i = j + 1
    return PeakReport(
        g_label=curve.g_label,
        L=curve.L,
        axis_kind=curve.axis_kind,
        baseline=baseline,
        min_prominence_sigmas=float(min_prominence_sigmas),
        peaks=tuple(peaks),
    )


def flanking_dissimilarity(
    store: SampleStore, grid: ParameterGrid, g: GSpec, grid_index: int
) -> float:
    """Dissimilarity between the two neighbors of a grid point, skipping it.

    A spike in the scan curve whose flanking dissimilarity stays near the
    curve's baseline is a single-point outlier, not a boundary between two
    phases: the distributions on either side of the suspect point agree.
    """
    if not 1 <= grid_index <= len(grid.points) - 2:
        raise ValueError(f"grid index {grid_index} has no two-sided neighborhood")
    p_left = grid.points[grid_index - 1]
    p_right = grid.points[grid_index + 1]
    sides = []
    for own, other in ((p_left, p_right), (p_right, p_left)):
        rows, counts = np.unique(store.tokens(own), axis=0, return_counts=True)
        delta = store.log_probs(own, rows) - store.log_probs(other, rows)
        g_vals = np.asarray(g.on_logit(delta), dtype=np.float64)
        sides.append(float(counts @ g_vals) / store.n_samples)
    return 0.5 * (sides[0] + sides[1])


def exact_flanking_dissimilarity(
    model: TabularModel,
    grid: ParameterGrid,
    g: GSpec,
    grid_index: int,
    n_tokens: int | None = None,
) -> float:
    """Exact-enumeration version of :func:`flanking_dissimilarity`."""
    from .divergence import exact_g_dissimilarity

    if not 1 <= grid_index <= len(grid.points) - 2:
        raise ValueError(f"grid index {grid_index} has no two-sided neighborhood")
    d_left = model.exact_distribution(grid.points[grid_index - 1], n_tokens)
    d_right = model.exact_distribution(grid.points[grid_index + 1], n_tokens)
    return exact_g_dissimilarity(g, d_left, d_right)


def annotate_outliers(
    report: PeakReport,
    store: SampleStore,
    grid: ParameterGrid,
    g: GSpec,
    flank_ratio: float = 2.0,
) -> PeakReport:
    """Attach the outlier diagnostic to each detected peak.

    For a peak between grid points i and i+1, the candidate outlier is either
    of the two; the reported flanking dissimilarity is the smaller of the two
    skip-one-point dissimilarities.  A peak is flagged as an outlier suspect
    when that value stays below ``flank_ratio`` times the curve baseline (or,
    for an exactly zero baseline, a small fraction of the peak itself).
    """
    annotated = []
    for peak in report.peaks:
        ti = grid.trial_index_for(peak.trial_value)
        flanks = [
            flanking_dissimilarity(store, grid, g, k)
            for k in (ti, ti + 1)
            if 1 <= k <= len(grid.points) - 2
        ]
        flank = min(flanks) if flanks else math.nan
        if math.isnan(flank):
            suspect = False
        elif report.baseline > 0:
            suspect = flank < flank_ratio * report.baseline
        else:
            suspect = flank < 0.1 * peak.estimate
        annotated.append(
            replace(peak, is_outlier_suspect=suspect, flanking_dissimilarity=flank)
        )
    return replace(report, peaks=tuple(annotated))
