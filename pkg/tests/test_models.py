import math

import numpy as np
import pytest

from phasescan.models import (
    AxisKind,
    AxisPoint,
    ModelError,
    TabularModel,
    TokenSequence,
    softmax_temperature,
)

from conftest import step_model

PROMPT = AxisKind.PROMPT_SLOT
TEMP = AxisKind.TEMPERATURE


def one_hot_model(chain=(2, 0, 1), vocab_size=3, big=50.0):
    """Deterministic model: each step puts all mass on the chain's next token."""

    def logits(prefix, point):
        z = np.zeros(vocab_size)
        z[chain[len(prefix)]] = big
        return z

    return TabularModel(vocab_size, len(chain), logits)


class TestAxisPoint:
    def test_temperature_must_be_positive(self):
        with pytest.raises(ValueError):
            AxisPoint(TEMP, 0.0)
        with pytest.raises(ValueError):
            AxisPoint(TEMP, -1.0)

    def test_integer_axes_coerce(self):
        p = AxisPoint(PROMPT, 7.0)
        assert p.value == 7 and isinstance(p.value, int)
        with pytest.raises(ValueError):
            AxisPoint(AxisKind.CHECKPOINT, 2.5)

    def test_effective_temperature(self):
        assert AxisPoint(TEMP, 0.25).temperature == 0.25
        assert AxisPoint(PROMPT, 3).temperature == 1.0


class TestTokenSequence:
    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            TokenSequence((1, 2), (-0.5,))

    def test_positive_logprob_rejected(self):
        with pytest.raises(ValueError):
            TokenSequence((1,), (0.1,))

    def test_total(self):
        seq = TokenSequence((0, 1), (-0.5, -1.5))
        assert seq.total_logprob == pytest.approx(-2.0)


class TestSoftmaxTemperature:
    def test_hand_value(self):
        p = softmax_temperature(np.array([0.0, math.log(3.0)]), 1.0)
        assert p == pytest.approx([0.25, 0.75], abs=1e-12)

    def test_high_temperature_is_uniform(self):
        p = softmax_temperature(np.array([3.0, -1.0, 0.5]), 1e6)
        assert np.max(np.abs(p - 1.0 / 3.0)) < 1e-4

    def test_low_temperature_is_argmax(self):
        p = softmax_temperature(np.array([5.0, 1.0, 1.0]), 0.01)
        assert p[0] == pytest.approx(1.0, abs=1e-9)
        assert p[1] == pytest.approx(0.0, abs=1e-9)

    def test_zero_temperature_rejected(self):
        with pytest.raises(ValueError):
            softmax_temperature(np.array([1.0, 2.0]), 0.0)

    def test_nonfinite_logits_rejected(self):
        with pytest.raises(ValueError):
            softmax_temperature(np.array([np.inf, 0.0]), 1.0)

    def test_extreme_logits_stable(self):
        p = softmax_temperature(np.array([1000.0, 0.0]), 1.0)
        assert p[0] == pytest.approx(1.0)


class TestGenerate:
    def test_one_hot_model_is_deterministic_with_zero_logprobs(self):
        m = one_hot_model(big=500.0)
        point = AxisPoint(PROMPT, 0)
        seqs = m.generate(point, 5, 3, seed=1)
        for s in seqs:
            assert s.tokens == (2, 0, 1)
            assert s.total_logprob == pytest.approx(0.0, abs=1e-9)

    def test_empirical_frequency_within_binomial_error(self):
        def logits(prefix, point):
            return np.array([0.0, math.log(3.0)])  # p = (0.25, 0.75)

        m = TabularModel(2, 1, logits)
        n = 1000
        seqs = m.generate(AxisPoint(PROMPT, 0), n, 1, seed=11)
        freq = sum(s.tokens[0] for s in seqs) / n
        band = 3.0 * math.sqrt(0.75 * 0.25 / n)
        assert abs(freq - 0.75) <= band

    def test_same_seed_same_samples(self):
        m = step_model()
        point = AxisPoint(PROMPT, 2)
        a = m.generate_batch(point, 64, 3, seed=9)
        b = m.generate_batch(point, 64, 3, seed=9)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        c = m.generate_batch(point, 64, 3, seed=10)
        assert not np.array_equal(a[0], c[0])

    def test_bad_sizes_rejected(self):
        m = step_model()
        with pytest.raises(ValueError):
            m.generate(AxisPoint(PROMPT, 0), 0, 1, seed=0)
        with pytest.raises(ValueError):
            m.generate(AxisPoint(PROMPT, 0), 1, 99, seed=0)


class TestScore:
    def test_one_hot_scores_its_own_output_as_certain(self):
        m = one_hot_model(big=500.0)
        assert m.score(AxisPoint(PROMPT, 0), (2, 0, 1)) == pytest.approx(0.0, abs=1e-9)

    def test_single_step_hand_value(self):
        def logits(prefix, point):
            return np.array([0.0, math.log(3.0)])

        m = TabularModel(2, 1, logits)
        assert m.score(AxisPoint(PROMPT, 0), [1]) == pytest.approx(
            math.log(0.75), abs=1e-12
        )

    def test_generation_logprobs_match_score(self):
        m = step_model(max_len=4)
        point = AxisPoint(PROMPT, 7)
        for seq in m.generate(point, 32, 4, seed=5):
            assert m.score(point, seq.tokens) == pytest.approx(
                seq.total_logprob, abs=1e-6
            )

    def test_cross_point_scoring_is_finite(self):
        # a sequence generated at one prompt value stays scorable at another
        m = step_model()
        seqs = m.generate(AxisPoint(PROMPT, 9), 16, 3, seed=2)
        for seq in seqs:
            assert math.isfinite(m.score(AxisPoint(PROMPT, 0), seq.tokens))

    def test_out_of_vocabulary_rejected(self):
        m = step_model()
        with pytest.raises(ModelError):
            m.score(AxisPoint(PROMPT, 0), [0, 5, 0])

    def test_empty_sequence_rejected(self):
        m = step_model()
        with pytest.raises(ValueError):
            m.score(AxisPoint(PROMPT, 0), [])

    def test_temperature_rescaling_consistency(self):
        def logits(prefix, point):
            return np.array([0.1, -0.7, 1.3]) * (1.0 + 0.1 * len(prefix))

        m = TabularModel(3, 3, logits)
        point = AxisPoint(TEMP, 0.37)
        tokens = (2, 0, 1)
        expected = 0.0
        for i in range(3):
            probs = softmax_temperature(logits(tokens[:i], point), 0.37)
            expected += math.log(probs[tokens[i]])
        assert m.score(point, tokens) == pytest.approx(expected, abs=1e-9)


class TestExactDistribution:
    def test_single_step_uniform(self):
        m = TabularModel(2, 1, lambda prefix, point: np.zeros(2))
        d = m.exact_distribution(AxisPoint(PROMPT, 0))
        assert d.probs == pytest.approx([0.5, 0.5], abs=1e-15)

    def test_two_step_uniform(self):
        m = TabularModel(2, 2, lambda prefix, point: np.zeros(2))
        d = m.exact_distribution(AxisPoint(PROMPT, 0))
        assert d.probs == pytest.approx([0.25] * 4, abs=1e-15)

    def test_sums_to_one(self):
        m = step_model(vocab_size=3, max_len=4)
        d = m.exact_distribution(AxisPoint(PROMPT, 8))
        assert float(d.probs.sum()) == pytest.approx(1.0, abs=1e-10)

    def test_marginalizing_last_token_recovers_shorter_distribution(self):
        m = step_model(vocab_size=3, max_len=3)
        point = AxisPoint(PROMPT, 1)
        full = m.exact_distribution(point, 3).probs.reshape(-1, 3)
        shorter = m.exact_distribution(point, 2).probs
        assert full.sum(axis=1) == pytest.approx(shorter, abs=1e-12)

    def test_monte_carlo_frequencies_converge(self):
        m = step_model(vocab_size=2, max_len=2)
        point = AxisPoint(PROMPT, 0)
        exact = m.exact_distribution(point).probs
        n = 20000
        tokens, _ = m.generate_batch(point, n, 2, seed=3)
        idx = tokens[:, 0] * 2 + tokens[:, 1]
        freq = np.bincount(idx, minlength=4) / n
        sigma = np.sqrt(exact * (1 - exact) / n)
        assert np.all(np.abs(freq - exact) <= 3 * sigma + 1e-12)

    def test_state_space_limit(self):
        m = TabularModel(16, 6, lambda prefix, point: np.zeros(16))
        with pytest.raises(ValueError):
            m.exact_distribution(AxisPoint(PROMPT, 0))


class TestArgmaxSample:
    def test_one_hot_chain(self):
        m = one_hot_model()
        seq = m.argmax_sample(AxisPoint(PROMPT, 0), 3)
        assert seq.tokens == (2, 0, 1)

    def test_ties_take_lowest_id(self):
        m = TabularModel(3, 2, lambda prefix, point: np.zeros(3))
        seq = m.argmax_sample(AxisPoint(PROMPT, 0), 2)
        assert seq.tokens == (0, 0)

    def test_matches_low_temperature_generation(self):
        def logits(prefix, point):
            return np.array([0.3, 1.1, -0.4]) + 0.2 * len(prefix)

        m = TabularModel(3, 3, logits)
        greedy = m.argmax_sample(AxisPoint(TEMP, 1.0), 3)
        cold = m.generate(AxisPoint(TEMP, 1e-6), 4, 3, seed=0)
        for seq in cold:
            assert seq.tokens == greedy.tokens

    def test_known_chain_from_table(self):
        table = {
            ((), None): [0.0, 2.0],
            ((1,), None): [3.0, 0.0],
            ((1, 0), None): [0.0, 1.0],
        }
        m = TabularModel.from_table(2, 3, table)
        assert m.argmax_sample(AxisPoint(TEMP, 1.0), 3).tokens == (1, 0, 1)


class TestTableConstruction:
    def test_missing_row_raises(self):
        m = TabularModel.from_table(2, 2, {((), None): [0.0, 0.0]})
        with pytest.raises(ModelError):
            m.generate(AxisPoint(PROMPT, 0), 4, 2, seed=0)

    def test_per_value_rows_override_default(self):
        table = {
            ((), None): [0.0, 0.0],
            ((), 3): [50.0, 0.0],
        }
        m = TabularModel.from_table(2, 1, table)
        d3 = m.exact_distribution(AxisPoint(PROMPT, 3))
        d4 = m.exact_distribution(AxisPoint(PROMPT, 4))
        assert d3.probs[0] == pytest.approx(1.0)
        assert d4.probs[0] == pytest.approx(0.5)

    def test_json_round_trip(self, tmp_path):
        table = {
            ((), None): [0.0, 1.0],
            ((0,), None): [0.5, -0.5],
            ((1,), None): [-1.0, 2.0],
            ((), 2): [4.0, 0.0],
        }
        m = TabularModel.from_table(2, 2, table)
        path = tmp_path / "model.json"
        m.to_json(path, table)
        loaded = TabularModel.from_json(path)
        for value in (0, 2):
            point = AxisPoint(PROMPT, value)
            assert loaded.exact_distribution(point).probs == pytest.approx(
                m.exact_distribution(point).probs, abs=1e-15
            )
