import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20260816)


def random_lattice_walk(rng, n, d=2, p_forward=0.4):
    """Nearest-neighbour walk array for oracle tests, start at 0.

    Biased toward +e_1 so regenerations and cut points actually occur.
    """
    rest = (1.0 - p_forward) / (2 * d - 1)
    probs = np.full(2 * d, rest)
    probs[0] = p_forward
    ks = rng.choice(2 * d, size=n, p=probs)
    steps = np.zeros((n + 1, d), dtype=np.int64)
    moves = np.zeros((n, d), dtype=np.int64)
    axes = ks // 2
    signs = 1 - 2 * (ks % 2)
    moves[np.arange(n), axes] = signs
    steps[1:] = np.cumsum(moves, axis=0)
    return steps
