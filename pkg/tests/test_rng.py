import numpy as np
from hypothesis import given, strategies as st

from dtasep import rng

ints = st.integers(-(2 ** 40), 2 ** 40)


@given(ints, ints, ints, ints)
def test_uniform_is_pure_and_in_open_unit_interval(seed, a, b, c):
    u = rng.uniform(seed, a, b, c)
    assert 0.0 < u < 1.0
    assert u == rng.uniform(seed, a, b, c)


@given(ints, ints, ints)
def test_exponential_positive(seed, a, b):
    assert rng.std_exponential(seed, a, b, 0) > 0


def test_key_words_are_not_interchangeable():
    assert rng.hash4(1, 2, 3, 4) != rng.hash4(1, 3, 2, 4)
    assert rng.hash4(1, 2, 3, 4) != rng.hash4(2, 2, 3, 4)


def test_exponential_moments():
    i = np.arange(200_000)
    e = rng.exponentials(9, i, np.zeros_like(i), 0)
    assert abs(e.mean() - 1) < 0.01
    assert abs(e.var() - 1) < 0.03


def test_derive_seed_distinct():
    seeds = {rng.derive_seed(5, r) for r in range(1000)}
    assert len(seeds) == 1000
