import numpy as np
import pytest
from hypothesis import given, strategies as st

from dtasep import macro_shape as ms
from dtasep import speed_field as sf


def test_closed_form_values():
    assert ms.gamma(1.0, 1.0) == 4.0
    assert ms.gamma(4.0, 0.0) == 4.0
    assert ms.psi(0.0) == 0.25 and ms.psi(-2.0) == 2.0 and ms.psi(3.0) == 0.0
    with pytest.raises(ValueError):
        ms.gamma(-1.0, 1.0)


@given(st.floats(-1, 1))
def test_psi_is_the_unit_level_set(x):
    p = float(ms.psi(x))
    a = x + p
    # x + p cancels near x = -1; sqrt(a) then amplifies its rounding by 1/sqrt(a)
    cond = 4e-16 / np.sqrt(max(a, 1e-300))
    assert abs(float(ms.gamma(a, p)) - 1.0) <= 1e-12 + cond


@given(st.floats(-3, 3), st.floats(0.1, 3), st.floats(0.2, 5))
def test_homogeneous_level_scaling(r, t, c0):
    g = float(ms.homogeneous_level(r, t, c0))
    assert g >= float(ms.beta(r)) - 1e-15
    if g > ms.beta(r) + 1e-9:
        assert np.isclose(float(ms.gamma(r + g, g)) / c0, t, rtol=1e-12)


def test_move_set_primitive():
    mv = ms.move_set(3)
    assert (1, 0) in map(tuple, mv) and (2, 2) not in map(tuple, mv)
    assert ms.auto_moves(1 / 64) % 2 == 1


@pytest.mark.parametrize("c0", [0.5, 2.0])
def test_homogeneous_grid(c0):
    g = ms.shape_grid(sf.constant(c0), (3.0, -1.0), (1.0, 1.5), 1 / 64)
    assert abs(g.at(1.0, 1.5) - float(ms.gamma(1.0, 1.5)) / c0) / (float(ms.gamma(1.0, 1.5)) / c0) < 0.01
    assert np.all(np.diff(g.values, axis=0) >= 0) and np.all(np.diff(g.values, axis=1) >= 0)


def test_level_curve_examples():
    xs = np.array([0.0, 2.0, -2.0])
    lc = ms.level_curve(sf.constant(1.0), 0.0, 0.0, 1.0, xs)
    assert np.allclose(lc.g, [0.25, 0.0, 2.0], atol=5e-3)


def test_two_phase_shape_beats_slow_and_trails_fast():
    f = sf.xstep(1.0, 3.0, 0.0).shear_inverse()
    v = ms.shape_value(f, (0.0, 0.0), (1.0, 0.5), 1 / 64)
    assert float(ms.gamma(1.0, 0.5)) / 3 <= v <= float(ms.gamma(1.0, 0.5))


def test_shape_superadditive_on_grid():
    f = sf.rect_checker(1.0, 3.0, 0.5)
    h = 1 / 32
    rng = np.random.default_rng(3)
    g = ms.shape_grid(f, (0.0, 0.0), (1.5, 1.5), h)
    for _ in range(20):
        v = rng.integers(0, 25, 2)
        w = v + rng.integers(0, 48 - v, 2)
        tail = ms.shape_grid(f, tuple(v * h), tuple((w - v) * h), h) if np.any(w > v) else None
        rest = tail.values[-1, -1] if tail is not None else 0.0
        assert g.values[w[0], w[1]] >= g.values[v[0], v[1]] + rest - 0.02


def test_level_curve_subadditivity_and_validation():
    f = sf.xstep(1.0, 3.0, 0.0).shear_inverse()
    zero = lambda q: 0.0 * q
    rep = ms.level_curve_subadditivity_check(f, zero, -0.3, 0.2, 0.5, 1.0, 0.3)
    assert rep.ok
    with pytest.raises(ValueError):
        ms.level_curve_subadditivity_check(f, zero, 0.0, 0.2, 0.5, 1.0, 1.0)


def test_grid_argument_checks():
    with pytest.raises(ValueError):
        ms.shape_grid(sf.constant(1.0), (0, 0), (1, 1), 0.0)
    g = ms.shape_grid(sf.constant(1.0), (0, 0), (1, 1), 1 / 16)
    with pytest.raises(ValueError):
        g.at(2.0, 0.0)
    with pytest.raises(ValueError):
        ms.level_curve(sf.constant(1.0), 0.0, 0.0, 0.0, [0.0])
