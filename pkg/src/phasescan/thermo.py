"""Energy-based analysis of temperature scans.

A sequence's energy is the negative log-probability the model assigns it at
unit temperature, defined up to an additive constant that cancels in every
derivative.  The mean energy as a function of sampling temperature and its
temperature derivative (the heat capacity) give a second, dissimilarity-free
view of where the output distribution reorganizes.  Because tokens are drawn
step by step rather than from a whole-sequence Boltzmann distribution, the
heat capacity of an autoregressive model is not sign-constrained.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .models import AutoregressiveModel, AxisKind, AxisPoint, TokenSequence
from .models.tabular import TabularModel
from .scan import ParameterGrid, SampleStore, stage1_generate

__all__ = [
    "EnergyRecord",
    "ThermalCurve",
    "energy",
    "mean_energy_curve",
    "heat_capacity",
    "exact_mean_energy",
]

UNIT_TEMPERATURE = AxisPoint(AxisKind.TEMPERATURE, 1.0)


@dataclass(frozen=True)
class EnergyRecord:
    """A sequence and its energy, ``-log P(sequence | T=1)`` in nats."""

    sequence: TokenSequence
    energy: float


def energy(model: AutoregressiveModel, sequence: TokenSequence | tuple) -> float:
    """Energy of one sequence: minus its total log-probability at T = 1."""
    tokens = sequence.tokens if isinstance(sequence, TokenSequence) else tuple(sequence)
    return -model.score(UNIT_TEMPERATURE, tokens)


@dataclass(frozen=True)
class ThermalCurve:
    """Mean energy per temperature, optionally with its finite-difference slope.

    ``heat_capacity`` has two fewer entries than ``temperatures``: central
    differences only exist at interior grid points.
    """

    temperatures: tuple[float, ...]
    mean_energy: tuple[float, ...]
    me_stderr: tuple[float, ...]
    heat_capacity: tuple[float, ...] | None = None
    hc_stderr: tuple[float, ...] | None = None

    def __post_init__(self):
        n = len(self.temperatures)
        if not (len(self.mean_energy) == len(self.me_stderr) == n):
            raise ValueError("thermal curve columns must have equal length")
        if (self.heat_capacity is None) != (self.hc_stderr is None):
            raise ValueError("heat capacity and its stderr must come together")
        if self.heat_capacity is not None and len(self.heat_capacity) != n - 2:
            raise ValueError("heat capacity exists only at interior points")

    def __len__(self):
        return len(self.temperatures)

    CSV_HEADER = ("temperature", "mean_energy", "me_stderr", "heat_capacity", "hc_stderr")

    def to_csv_text(self) -> str:
        lines = [",".join(self.CSV_HEADER)]
        for i, t in enumerate(self.temperatures):
            if self.heat_capacity is not None and 1 <= i <= len(self) - 2:
                hc = "%.17g" % self.heat_capacity[i - 1]
                hse = "%.17g" % self.hc_stderr[i - 1]
            else:
                hc = hse = ""
            lines.append(
                "%.17g,%.17g,%.17g,%s,%s"
                % (t, self.mean_energy[i], self.me_stderr[i], hc, hse)
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv_text())

    def write_json(self, path) -> None:
        doc = {
            "temperatures": list(self.temperatures),
            "mean_energy": list(self.mean_energy),
            "me_stderr": list(self.me_stderr),
            "heat_capacity": None
            if self.heat_capacity is None
            else list(self.heat_capacity),
            "hc_stderr": None if self.hc_stderr is None else list(self.hc_stderr),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def mean_energy_curve(
    model: AutoregressiveModel,
    grid: ParameterGrid,
    n_samples: int,
    n_tokens: int,
    seed: int,
    n_batches: int = 4,
    store: SampleStore | None = None,
) -> ThermalCurve:
    """Sample mean of the energy at every temperature grid point.

    Reuses an existing scan store when one is passed (the samples are the
    same ones a dissimilarity scan consumes); energies are unit-temperature
    scores pulled through the store's cache.  The standard error comes from
    the same contiguous batching as the scan estimator.
    """
    if grid.axis_kind is not AxisKind.TEMPERATURE:
        raise ValueError("thermal analysis runs on a temperature grid")
    if store is None:
        store = stage1_generate(model, grid, n_samples, n_tokens, seed)
    if n_batches < 1 or store.n_samples % n_batches != 0:
        raise ValueError(f"n_batches={n_batches} must evenly divide the sample count")
    bs = store.n_samples // n_batches
    means, errs = [], []
    for point in grid.points:
        rows, inverse = np.unique(
            store.tokens(point), axis=0, return_inverse=True
        )
        inverse = inverse.reshape(-1)
        energies = -store.log_probs(UNIT_TEMPERATURE, rows)
        batch_means = np.array(
            [
                energies[inverse[b * bs : (b + 1) * bs]].mean()
                for b in range(n_batches)
            ]
        )
        means.append(float(batch_means.mean()))
        errs.append(
            float(batch_means.std(ddof=1) / math.sqrt(n_batches))
            if n_batches > 1
            else 0.0
        )
    return ThermalCurve(
        temperatures=tuple(float(v) for v in grid.values),
        mean_energy=tuple(means),
        me_stderr=tuple(errs),
    )


def heat_capacity(curve: ThermalCurve) -> ThermalCurve:
    """Fill in the central-difference temperature derivative of the mean energy.

    ``C(T_i) = (U(T_{i+1}) - U(T_{i-1})) / (T_{i+1} - T_{i-1})`` with the two
    contributing standard errors propagated in quadrature.
    """
    n = len(curve)
    if n < 3:
        raise ValueError("heat capacity needs at least 3 temperature points")
    t = np.asarray(curve.temperatures)
    u = np.asarray(curve.mean_energy)
    se = np.asarray(curve.me_stderr)
    dt = t[2:] - t[:-2]
    hc = (u[2:] - u[:-2]) / dt
    hc_se = np.sqrt(se[2:] ** 2 + se[:-2] ** 2) / dt
    return replace(
        curve,
        heat_capacity=tuple(float(x) for x in hc),
        hc_stderr=tuple(float(x) for x in hc_se),
    )


def exact_mean_energy(model: TabularModel, point: AxisPoint, n_tokens: int | None = None) -> float:
    """Exact ``E[energy]`` at a temperature point, by full enumeration."""
    dist_t = model.exact_distribution(point, n_tokens)
    dist_1 = model.exact_distribution(UNIT_TEMPERATURE, n_tokens)
    probs_t = dist_t.probs
    with np.errstate(divide="ignore"):
        energies = -np.log(dist_1.probs)
    mask = probs_t > 0.0
    if np.any(~np.isfinite(energies[mask])):
        raise ValueError("a sequence reachable at this point has zero unit-temperature probability")
    return float(probs_t[mask] @ energies[mask])
