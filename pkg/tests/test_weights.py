import json
import math

import numpy as np
import pytest
from scipy.stats import norm

from phasescan.divergence import GSpec, exact_g_dissimilarity, FiniteDistribution
from phasescan.weights import (
    CheckpointSeries,
    DumpFormatError,
    histogram_weights,
    load_manifest,
    read_weight_dump,
    series_dissimilarity,
    series_from_manifest,
    write_weight_dump,
)


def gaussian_series(rng, sigmas, n=50_000, bins=200, lo=-3.0, hi=3.0):
    hists = tuple(
        histogram_weights(rng.normal(0.0, s, size=n), bins, lo, hi) for s in sigmas
    )
    return CheckpointSeries("test-layer", tuple(range(len(sigmas))), hists)


class TestHistogram:
    def test_all_zero_values_land_in_one_bin(self):
        h = histogram_weights(np.zeros(500), 10_000, -3.0, 3.0)
        assert h.total == 500
        assert h.counts.max() == 500
        center_bin = int(np.floor((0.0 - (-3.0)) / (6.0 / 10_000)))
        assert h.counts[center_bin] == 500

    def test_out_of_range_clamps_to_edge_bins(self):
        h = histogram_weights([-5.0, 5.0], 10_000, -3.0, 3.0)
        assert h.counts[0] == 1 and h.counts[-1] == 1
        assert h.total == 2

    def test_counts_sum_to_input_size(self, rng):
        values = rng.normal(0, 1.4, size=10_000)  # tails fall outside the range
        h = histogram_weights(values, 1000, -3.0, 3.0)
        assert h.total == 10_000
        assert float(h.normalized.probs.sum()) == pytest.approx(1.0, abs=1e-12)

    def test_gaussian_draws_match_bin_integrals(self, rng):
        # each bin count is binomial around the normal-cdf mass of the bin
        n, bins = 1_000_000, 100
        values = rng.normal(0.0, 1.0, size=n)
        h = histogram_weights(values, bins, -3.0, 3.0)
        edges = np.linspace(-3.0, 3.0, bins + 1)
        mass = np.diff(norm.cdf(edges))
        mass[0] += norm.cdf(-3.0)
        mass[-1] += norm.sf(3.0)
        sigma = np.sqrt(mass * (1 - mass) / n)
        observed = h.normalized.probs
        assert np.all(np.abs(observed - mass) <= 4.0 * sigma + 1e-9)

    def test_permutation_invariance(self, rng):
        values = rng.normal(0, 1, size=2000)
        a = histogram_weights(values, 50, -3, 3)
        b = histogram_weights(values[::-1], 50, -3, 3)
        assert np.array_equal(a.counts, b.counts)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            histogram_weights([], 10, -1, 1)

    def test_bad_range_rejected(self):
        with pytest.raises(ValueError):
            histogram_weights([0.0], 10, 2.0, -2.0)


class TestSeriesDissimilarity:
    def test_identical_histograms_give_flat_zero(self, rng):
        values = rng.normal(0, 1, size=5000)
        h = histogram_weights(values, 100, -3, 3)
        series = CheckpointSeries("layer", tuple(range(6)), (h,) * 6)
        curve = series_dissimilarity(series, GSpec.linear(), 1)
        assert all(v == 0.0 for v in curve.estimates)
        assert all(s == 0.0 for s in curve.stderr)

    def test_abrupt_change_peaks_at_boundary(self, rng):
        series = gaussian_series(rng, [1.0] * 5 + [1.5] * 5)
        curve = series_dissimilarity(series, GSpec.linear(), 1)
        peak_tv = curve.trial_values[int(np.argmax(curve.estimates))]
        assert peak_tv == 4.5

    def test_slow_interpolation_stays_below_abrupt_peak(self, rng):
        abrupt = gaussian_series(rng, [1.0] * 5 + [1.5] * 5)
        gradual = gaussian_series(rng, list(np.linspace(1.0, 1.5, 10)))
        g = GSpec.linear()
        peak_abrupt = max(series_dissimilarity(abrupt, g, 1).estimates)
        peak_gradual = max(series_dissimilarity(gradual, g, 1).estimates)
        assert peak_gradual < peak_abrupt

    def test_matches_explicit_mixture_average(self, rng):
        series = gaussian_series(rng, [1.0, 1.1, 1.3, 1.35, 1.2, 1.05], n=20_000, bins=50)
        g = GSpec.jensen_shannon()
        L = 2
        curve = series_dissimilarity(series, g, L)
        probs = np.stack([h.normalized.probs for h in series.histograms])
        for k, tv in enumerate(curve.trial_values):
            i = k + L - 1
            mix_l = FiniteDistribution.from_weights(probs[i - L + 1 : i + 1].mean(axis=0))
            mix_r = FiniteDistribution.from_weights(probs[i + 1 : i + L + 1].mean(axis=0))
            assert curve.estimates[k] == pytest.approx(
                exact_g_dissimilarity(g, mix_l, mix_r), abs=1e-12
            )

    def test_too_few_epochs_rejected(self, rng):
        series = gaussian_series(rng, [1.0, 1.2])
        with pytest.raises(ValueError):
            series_dissimilarity(series, GSpec.linear(), 1)

    def test_mixed_bin_configs_rejected(self, rng):
        a = histogram_weights(rng.normal(size=100), 50, -3, 3)
        b = histogram_weights(rng.normal(size=100), 60, -3, 3)
        with pytest.raises(ValueError):
            CheckpointSeries("layer", (0, 1), (a, b))


class TestDumpFormat:
    def test_round_trip(self, tmp_path, rng):
        values = rng.normal(0, 1, size=1234).astype(np.float32)
        path = tmp_path / "layer.wts"
        write_weight_dump(path, values)
        back = read_weight_dump(path)
        assert back.shape == (1234,)
        assert np.allclose(back, values.astype(np.float64))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.wts"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(DumpFormatError, match="magic"):
            read_weight_dump(path)

    def test_truncated_payload_rejected(self, tmp_path):
        import struct

        path = tmp_path / "short.wts"
        path.write_bytes(b"WTSDUMP1" + struct.pack("<Q", 10) + b"\x00" * 8)
        with pytest.raises(DumpFormatError, match="expected 10"):
            read_weight_dump(path)


class TestManifest:
    def make_manifest(self, tmp_path, rng, epochs=(0, 1000, 2000), sigma=1.0):
        entries = []
        for e in epochs:
            name = f"layer-{e}.wts"
            write_weight_dump(tmp_path / name, rng.normal(0, sigma, size=4000))
            entries.append({"epoch": e, "file": name})
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps({"layer": "qkv-3", "epochs": entries}))
        return path

    def test_load_and_build_series(self, tmp_path, rng):
        path = self.make_manifest(tmp_path, rng)
        layer, entries = load_manifest(path)
        assert layer == "qkv-3"
        assert [e for e, _ in entries] == [0, 1000, 2000]
        series = series_from_manifest(path, bin_count=100)
        assert series.epochs == (0, 1000, 2000)
        assert series.histograms[0].bin_count == 100

    def test_unsorted_epochs_rejected(self, tmp_path, rng):
        path = self.make_manifest(tmp_path, rng)
        doc = json.loads(path.read_text())
        doc["epochs"].reverse()
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="increasing"):
            load_manifest(path)

    def test_single_epoch_rejected(self, tmp_path, rng):
        path = self.make_manifest(tmp_path, rng, epochs=(5,))
        with pytest.raises(ValueError, match="two epochs"):
            load_manifest(path)
