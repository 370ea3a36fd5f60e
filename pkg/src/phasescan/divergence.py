"""Statistical distances between finite distributions.

Two equivalent views of the same family of distances are implemented:

* f-divergences: ``sum_x q(x) f(p(x)/q(x))`` for convex ``f`` with ``f(1) = 0``.
* g-dissimilarities: expectations of a function ``g`` applied to the posterior
  probability that a sample came from the left rather than the right
  distribution.  Any g-dissimilarity is an f-divergence with
  ``f(x) = (x/2) g(x/(1+x)) + (1/2) g(1/(1+x))``.

The g form is what the sampling estimator in :mod:`phasescan.scan` evaluates;
the f form is the exact-summation oracle.  Built-in g choices cover the linear
dissimilarity (optimal-classifier advantage), the Jensen-Shannon divergence and
the total variation distance.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "FiniteDistribution",
    "GKind",
    "GSpec",
    "SegmentPosterior",
    "BUILTIN_G",
    "f_divergence",
    "tv_distance",
    "js_divergence",
    "f_from_g",
    "g_shift",
    "flattening_shift",
    "exact_g_dissimilarity",
    "posterior_from_logs",
]

LOG2 = math.log(2.0)

_NORMALIZATION_TOL = 1e-12


class FiniteDistribution:
    """Probability vector over a finite support.

    Entries must be non-negative and sum to 1 within 1e-12.  Instances are
    immutable; the underlying array is copied and write-locked.
    """

    __slots__ = ("probs",)

    def __init__(self, probs):
        arr = np.asarray(probs, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("distribution must be a non-empty 1-D vector")
        if not np.all(np.isfinite(arr)):
            raise ValueError("distribution entries must be finite")
        if np.any(arr < 0.0):
            raise ValueError("distribution entries must be non-negative")
        total = float(arr.sum())
        if abs(total - 1.0) > _NORMALIZATION_TOL:
            raise ValueError(f"distribution sums to {total!r}, not 1")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "probs", arr)

    def __setattr__(self, name, value):
        raise AttributeError("FiniteDistribution is immutable")

    def __len__(self):
        return self.probs.size

    def __repr__(self):
        return f"FiniteDistribution({self.probs.tolist()!r})"

    @classmethod
    def from_weights(cls, weights) -> "FiniteDistribution":
        """Normalize a vector of non-negative weights into a distribution."""
        arr = np.asarray(weights, dtype=np.float64)
        total = arr.sum()
        if total <= 0:
            raise ValueError("weights must have positive total mass")
        return cls(arr / total)


def _as_probs(p) -> np.ndarray:
    if isinstance(p, FiniteDistribution):
        return p.probs
    return FiniteDistribution(p).probs


def _check_pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    pa, qa = _as_probs(p), _as_probs(q)
    if pa.size != qa.size:
        raise ValueError(f"support mismatch: {pa.size} vs {qa.size}")
    return pa, qa


class GKind(enum.Enum):
    LINEAR = "linear"
    JENSEN_SHANNON = "js"
    TOTAL_VARIATION = "tv"
    CUSTOM = "custom"


def _g_linear(x):
    return 2.0 * np.asarray(x, dtype=np.float64) - 1.0


def _g_js(x):
    return np.log(np.asarray(x, dtype=np.float64)) + LOG2


def _g_tv(x):
    x = np.asarray(x, dtype=np.float64)
    return 1.0 - 2.0 * np.minimum(x, 1.0 - x)


# Stable evaluation of g(expit(delta)) straight from the posterior log-odds,
# so sequence-probability ratios far outside float range stay finite.
def _g_linear_logit(delta):
    return np.tanh(np.asarray(delta, dtype=np.float64) / 2.0)


def _g_js_logit(delta):
    # log(expit(delta)) = -softplus(-delta)
    return LOG2 - np.logaddexp(0.0, -np.asarray(delta, dtype=np.float64))


def _g_tv_logit(delta):
    return 1.0 - 2.0 * expit(-np.abs(np.asarray(delta, dtype=np.float64)))


@dataclass(frozen=True)
class GSpec:
    """A g-function together with the metadata derived from it.

    ``fn`` maps posterior probabilities in [0, 1] to reals and must vanish at
    1/2.  ``logit_fn`` evaluates ``fn(expit(delta))`` from the posterior
    log-odds without forming the probability, which keeps extreme
    sequence-probability ratios finite.  ``fisher_coefficient`` is the constant
    kappa such that the dissimilarity of two distributions separated by a small
    parameter step d behaves as kappa * F * d**2 (F the Fisher information);
    it is None when the derived f-function has a kink at 1.
    """

    kind: GKind
    label: str
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    logit_fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    fisher_coefficient: float | None = None

    def __call__(self, x):
        return self.fn(x)

    def on_logit(self, delta):
        return self.logit_fn(delta)

    @staticmethod
    def linear() -> "GSpec":
        return GSpec(GKind.LINEAR, "linear", _g_linear, _g_linear_logit, 0.25)

    @staticmethod
    def jensen_shannon() -> "GSpec":
        return GSpec(GKind.JENSEN_SHANNON, "js", _g_js, _g_js_logit, 0.125)

    @staticmethod
    def total_variation() -> "GSpec":
        return GSpec(GKind.TOTAL_VARIATION, "tv", _g_tv, _g_tv_logit, None)

    @staticmethod
    def custom(fn, label="custom", validate=True) -> "GSpec":
        """Wrap a user-supplied g-function, checking it is admissible.

        Validation requires g(1/2) = 0 and a convex derived f on a log-spaced
        probe grid; both are needed for the result to be a statistical
        distance.
        """
        fn = _vectorized(fn)

        def logit_fn(delta):
            return fn(expit(np.asarray(delta, dtype=np.float64)))

        spec = GSpec(GKind.CUSTOM, label, fn, logit_fn, None)
        if validate:
            _validate_custom_g(spec)
        kappa = _fisher_coefficient(spec)
        return GSpec(GKind.CUSTOM, label, fn, logit_fn, kappa)


def _vectorized(fn):
    try:
        out = fn(np.array([0.25, 0.5, 0.75]))
        if np.asarray(out).shape == (3,):
            return fn
    except Exception:
        pass
    return np.vectorize(fn, otypes=[np.float64])


def _validate_custom_g(g: GSpec, tol: float = 1e-9) -> None:
    at_half = float(np.asarray(g.fn(0.5)))
    if not math.isfinite(at_half) or abs(at_half) > tol:
        raise ValueError(f"g({0.5}) = {at_half!r}; a g-function must vanish at 1/2")
    xs = np.logspace(-4, 4, 257)
    fs = np.array([f_from_g(g, x) for x in xs])
    if not np.all(np.isfinite(fs)):
        raise ValueError("derived f is not finite on (0, inf); rejecting g")
    # midpoint convexity on consecutive triples of the probe grid
    lam = (xs[2:] - xs[1:-1]) / (xs[2:] - xs[:-2])
    chord = lam * fs[:-2] + (1.0 - lam) * fs[2:]
    slack = 1e-9 * np.maximum(1.0, np.abs(chord))
    bad = fs[1:-1] > chord + slack
    if np.any(bad):
        i = int(np.argmax(bad)) + 1
        raise ValueError(
            f"derived f is not convex near x={xs[i]:.6g} "
            f"(f={fs[i]:.6g} above chord {chord[i - 1]:.6g}); rejecting g"
        )


def _fisher_coefficient(g: GSpec, h: float = 1e-4) -> float | None:
    """Half the second derivative of the derived f at 1, or None on a kink."""
    f1 = f_from_g(g, 1.0)
    second = (f_from_g(g, 1.0 + h) - 2.0 * f1 + f_from_g(g, 1.0 - h)) / (h * h)
    second_coarse = (
        f_from_g(g, 1.0 + 2 * h) - 2.0 * f1 + f_from_g(g, 1.0 - 2 * h)
    ) / (4 * h * h)
    if not (math.isfinite(second) and math.isfinite(second_coarse)):
        return None
    # a kink shows up as strong step-size dependence of the difference quotient
    if abs(second - second_coarse) > 1e-3 * max(1.0, abs(second)):
        return None
    return 0.5 * second


BUILTIN_G = {
    "linear": GSpec.linear,
    "js": GSpec.jensen_shannon,
    "tv": GSpec.total_variation,
}


def resolve_g(name_or_spec) -> GSpec:
    """Accept a GSpec or one of the built-in names 'linear', 'js', 'tv'."""
    if isinstance(name_or_spec, GSpec):
        return name_or_spec
    try:
        return BUILTIN_G[str(name_or_spec)]()
    except KeyError:
        raise ValueError(
            f"unknown g {name_or_spec!r}; expected one of {sorted(BUILTIN_G)}"
        ) from None


def f_divergence(f, p, q, *, f_at_zero=None, f_slope_at_inf=None) -> float:
    """Exact f-divergence ``sum_x q(x) f(p(x)/q(x))`` over a finite support.

    ``f`` must be convex with f(1) = 0.  Entries where both p and q vanish
    contribute nothing.  Entries where exactly one side vanishes use the
    standard limits: ``q f(0)`` and ``p * lim f(t)/t``.  The limits are
    evaluated numerically unless supplied.
    """
    pa, qa = _check_pair(p, q)
    both = (pa > 0.0) & (qa > 0.0)
    total = 0.0
    if np.any(both):
        ratios = pa[both] / qa[both]
        vals = np.array([float(f(r)) for r in ratios])
        total += float(np.dot(qa[both], vals))
    q_only = (qa > 0.0) & (pa == 0.0)
    if np.any(q_only):
        if f_at_zero is None:
            f_at_zero = float(f(0.0)) if _finite_at_zero(f) else float(f(1e-300))
        total += float(qa[q_only].sum()) * f_at_zero
    p_only = (pa > 0.0) & (qa == 0.0)
    if np.any(p_only):
        if f_slope_at_inf is None:
            big = 1e12
            f_slope_at_inf = float(f(big)) / big
        total += float(pa[p_only].sum()) * f_slope_at_inf
    return total


def _finite_at_zero(f) -> bool:
    try:
        with np.errstate(divide="ignore", invalid="ignore"):
            return math.isfinite(float(f(0.0)))
    except (ValueError, ZeroDivisionError, FloatingPointError):
        return False


def tv_distance(p, q) -> float:
    """Total variation distance, half the L1 difference; in [0, 1]."""
    pa, qa = _check_pair(p, q)
    return 0.5 * float(np.abs(pa - qa).sum())


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence in nats; in [0, log 2]."""
    pa, qa = _check_pair(p, q)
    m = 0.5 * (pa + qa)

    def half_kl(a):
        mask = a > 0.0
        return 0.5 * float(np.dot(a[mask], np.log(a[mask] / m[mask])))

    return half_kl(pa) + half_kl(qa)


def f_from_g(g: GSpec, x) -> float:
    """The f-function value induced by a g-function at ratio ``x >= 0``.

    ``f(x) = (x/2) g(x/(1+x)) + (1/2) g(1/(1+x))``; f(1) = g(1/2) = 0.
    """
    x = float(x)
    if x < 0.0:
        raise ValueError("f is only defined for non-negative ratios")
    second = 0.5 * float(np.asarray(g.fn(1.0 / (1.0 + x))))
    if x == 0.0:
        return second
    first = (x / 2.0) * float(np.asarray(g.fn(x / (1.0 + x))))
    return first + second


def f_divergence_from_g(g: GSpec, p, q) -> float:
    """f-divergence route to the g-dissimilarity, with exact zero-mass limits.

    Both boundary limits of the induced f equal g(1)/2 whenever g is bounded
    at 1 and grows slower than 1/x at 0, which holds for all built-ins.
    """
    g_at_one = float(np.asarray(g.fn(1.0)))
    return f_divergence(
        lambda x: f_from_g(g, x),
        p,
        q,
        f_at_zero=0.5 * g_at_one,
        f_slope_at_inf=0.5 * g_at_one,
    )


def g_shift(g: GSpec, c: float) -> GSpec:
    """Shift a g-function by ``c (1/x - 2)`` without changing its dissimilarity.

    The added term has expectation zero under the two-segment mixture, so the
    shifted g induces the identical distance; the derived f is unchanged
    term-by-term.
    """
    c = float(c)
    if c == 0.0:
        return g
    base_fn, base_logit = g.fn, g.logit_fn

    def fn(x):
        x = np.asarray(x, dtype=np.float64)
        return base_fn(x) + c * (1.0 / x - 2.0)

    def logit_fn(delta):
        delta = np.asarray(delta, dtype=np.float64)
        # 1/expit(delta) = 1 + exp(-delta)
        return base_logit(delta) + c * (np.exp(-delta) - 1.0)

    label = f"{g.label}{c:+g}*(1/x-2)"
    return GSpec(GKind.CUSTOM, label, fn, logit_fn, g.fisher_coefficient)


def flattening_shift(g: GSpec, h: float = 1e-6) -> float:
    """Shift constant that makes the shifted g have zero slope at 1/2.

    Differentiating g(x) + c(1/x - 2) at x = 1/2 gives g'(1/2) - 4c, so
    c = g'(1/2) / 4; the slope is estimated by a central difference.
    """
    slope = (float(np.asarray(g.fn(0.5 + h))) - float(np.asarray(g.fn(0.5 - h)))) / (
        2.0 * h
    )
    return slope / 4.0


@dataclass(frozen=True)
class SegmentPosterior:
    """Probability that a sample came from the left of two candidate sources."""

    p_left: float

    def __post_init__(self):
        if not (0.0 <= self.p_left <= 1.0):
            raise ValueError(f"posterior {self.p_left!r} outside [0, 1]")

    @property
    def p_right(self) -> float:
        return 1.0 - self.p_left


def posterior_from_logs(log_left: float, log_right: float) -> SegmentPosterior:
    """Posterior for the left source from the two log-probabilities."""
    if not (math.isfinite(log_left) and math.isfinite(log_right)):
        raise ValueError("log-probabilities must be finite")
    return SegmentPosterior(float(expit(log_left - log_right)))


def exact_g_dissimilarity(g: GSpec, p_left, p_right) -> float:
    """Exact g-dissimilarity between two finite distributions.

    Computes ``(E_left[g(P(left|x))] + E_right[g(P(right|x))]) / 2`` by direct
    summation, with the posterior taken as a logistic of the log-probability
    difference.  Equals ``f_divergence_from_g(g, p_left, p_right)``.
    """
    pa, qa = _check_pair(p_left, p_right)
    total = 0.0
    with np.errstate(divide="ignore"):
        lp = np.log(pa)
        lq = np.log(qa)
    p_pos = pa > 0.0
    q_pos = qa > 0.0
    both = p_pos & q_pos
    if np.any(both):
        delta = lp[both] - lq[both]
        total += 0.5 * float(np.dot(pa[both], np.asarray(g.logit_fn(delta))))
        total += 0.5 * float(np.dot(qa[both], np.asarray(g.logit_fn(-delta))))
    g_at_one = float(np.asarray(g.fn(1.0)))
    p_only = p_pos & ~q_pos
    if np.any(p_only):
        total += 0.5 * float(pa[p_only].sum()) * g_at_one
    q_only = q_pos & ~p_pos
    if np.any(q_only):
        total += 0.5 * float(qa[q_only].sum()) * g_at_one
    return total
