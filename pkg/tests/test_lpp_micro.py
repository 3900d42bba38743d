import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dtasep import lpp_micro as lm
from dtasep import speed_field as sf


def brute_force(w):
    """Max over all up-right paths, enumerated by the positions of the right steps."""
    nx, ny = w.shape
    best = -np.inf
    steps = nx - 1 + ny - 1
    for rights in itertools.combinations(range(steps), nx - 1):
        i = j = 0
        tot = w[0, 0]
        rs = set(rights)
        for s in range(steps):
            if s in rs:
                i += 1
            else:
                j += 1
            tot += w[i, j]
        best = max(best, tot)
    return best


def test_small_example():
    w = np.array([[1.0, 3.0], [2.0, 1.0]])
    assert lm.lpp_from_weights(w)[-1, -1] == 5.0


def test_matches_brute_force():
    rng = np.random.default_rng(0)
    for k in range(200):
        nx = int(rng.integers(1, 9))
        ny = int(rng.integers(1, 13 - nx + 1))
        w = rng.exponential(size=(nx, ny))
        assert np.isclose(lm.lpp_from_weights(w)[-1, -1], brute_force(w), rtol=0, atol=1e-12)


def test_environment_grid_matches_brute_force():
    env = lm.Environment(sf.xstep(1.0, 3.0, 0.0).shear_inverse(), 4, 17)
    g = lm.passage_rect(env, (-3, -2), (5, 5))
    ii, jj = np.meshgrid(np.arange(-3, 3), np.arange(-2, 4), indexing="ij")
    assert np.isclose(g.values[-1, -1], brute_force(env.weights(ii, jj)), atol=1e-12)


def test_rolling_rows_equal_full_grid():
    env = lm.Environment(sf.bump(2.0, 0.7), 10, 5)
    g = lm.passage_rect(env, (3, -4), (37, 22))
    assert lm.passage_time(env, (3, -4), (40, 18)) == g.values[-1, -1]


def test_values_nondecreasing():
    env = lm.Environment(sf.rect_checker(1, 4), 8, 2)
    v = lm.passage_rect(env, (0, 0), (30, 30)).values
    assert np.all(np.diff(v, axis=0) > 0) and np.all(np.diff(v, axis=1) > 0)


@given(st.integers(0, 10), st.integers(0, 10), st.floats(0.1, 5.0))
def test_raising_one_weight_never_lowers_downstream(i, j, bump):
    rng = np.random.default_rng(i * 31 + j)
    w = rng.exponential(size=(11, 11))
    base = lm.lpp_from_weights(w)
    w2 = w.copy()
    w2[i, j] += bump
    new = lm.lpp_from_weights(w2)
    assert np.all(new >= base)
    assert np.array_equal(new[:i, :], base[:i, :]) and np.array_equal(new[:, :j], base[:, :j])


def test_doubling_speed_halves_weights():
    a = lm.Environment(sf.constant(1.0), 5, 9)
    b = lm.Environment(sf.constant(2.0), 5, 9)
    assert np.allclose(lm.passage_rect(b, (0, 0), (9, 9)).values,
                       lm.passage_rect(a, (0, 0), (9, 9)).values / 2, rtol=1e-15)


def test_deterministic_across_threads():
    f = sf.xstep(1.0, 2.0).shear_inverse()
    r1 = lm.lln_estimate(f, (1.0, 0.5), [50, 80], replicas=4, seed=3, threads=1)
    r4 = lm.lln_estimate(f, (1.0, 0.5), [50, 80], replicas=4, seed=3, threads=4)
    assert r1 == r4


def test_wedge_boundary_and_interior():
    env = lm.Environment(sf.constant(1.0), 10, 4)
    k, h = 2, -1
    W = lm.passage_wedge(env, (k, h), (6, 6))
    assert W.wedge_value(-3, 3) == 0.0 and W.wedge_value(4, 0) == 0.0
    # the first interior site on each side uses a single weight
    shifted = env.shifted(k + h, h)
    assert W.wedge_value(1, 1) == pytest.approx(lm.sample_weight(shifted, (1, 0)) + lm.sample_weight(shifted, (0, 0)))
    with pytest.raises(ValueError):
        W.wedge_value(-3, 2)


def test_memory_cap():
    env = lm.Environment(sf.constant(1.0), 10, 0)
    with pytest.raises(lm.MemoryBudgetError):
        lm.passage_rect(env, (0, 0), (5000, 5000), mem_cap_mb=1)


def test_bad_arguments():
    with pytest.raises(ValueError):
        lm.Environment(sf.constant(1.0), 0, 0)
    env = lm.Environment(sf.constant(1.0), 10, 0)
    with pytest.raises(ValueError):
        lm.passage_time(env, (3, 3), (2, 5))
    with pytest.raises(OverflowError):
        lm.passage_rect(env, (2 ** 62, 0), (1, 1))
