import numpy as np
import pytest

from phasescan.models import AxisKind, TabularModel


def random_distribution_pair(rng, dim):
    """A pair of full-support distributions on a shared dim-point support."""
    p = rng.dirichlet(np.ones(dim))
    q = rng.dirichlet(np.ones(dim))
    # dirichlet can underflow to exact zeros; nudge and renormalize
    p = (p + 1e-12) / (p + 1e-12).sum()
    q = (q + 1e-12) / (q + 1e-12).sum()
    return p, q


def step_model(vocab_size=2, max_len=3, change_at=5, p_lo=0.2, p_hi=0.8):
    """Prompt-axis model whose token-1 rate jumps when T reaches change_at."""

    def logits(prefix, point):
        p1 = p_lo if point.value < change_at else p_hi
        z = np.zeros(vocab_size)
        z[1] = np.log(p1 / (1.0 - p1))
        return z

    return TabularModel(vocab_size, max_len, logits)


def smooth_step_model(center, width, p_lo=0.15, p_hi=0.85, vocab_size=2, max_len=4):
    """Prompt-axis model with a logistic crossover of the token-1 rate."""
    from scipy.special import expit

    def logits(prefix, point):
        p1 = p_lo + (p_hi - p_lo) * expit((point.value - center) / width)
        z = np.zeros(vocab_size)
        z[1] = np.log(p1 / (1.0 - p1))
        return z

    return TabularModel(vocab_size, max_len, logits)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
