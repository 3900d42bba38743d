import numpy as np
import pytest
from hypothesis import given, strategies as st

from dtasep import speed_field as sf

coords = st.floats(-5, 5, allow_nan=False)


def test_min_rule_on_curve():
    f = sf.xstep(1.0, 3.0, 0.5)
    assert f.eval((0.5, 2.0)) == 1.0
    assert f.eval((0.4, 2.0)) == 1.0
    assert f.eval((0.6, 2.0)) == 3.0
    lo, hi = f.envelopes(np.array([0.5]), np.array([0.0]))
    assert (lo[0], hi[0]) == (1.0, 3.0)


def test_checker_corner_takes_minimum():
    f = sf.rect_checker(2.0, 5.0)
    assert f.eval((1.0, 1.0)) == 2.0
    assert f.eval((1.5, 0.5)) == 5.0


@given(coords, coords)
def test_shear_roundtrip(x, y):
    f = sf.oblique_step(0.7, 0.2, 1.0, 2.0)
    g = f.shear().shear_inverse()
    assert g(x, y) == f(x, y)
    assert f.shear()(x, y) == f(x + y, y)


@given(coords, coords, st.floats(-3, 3), st.floats(-3, 3))
def test_shift(x, y, a, b):
    f = sf.bump(2.0, 0.5)
    assert np.isclose(f.shift(a, b)(x, y), f(x + a, y + b), rtol=0, atol=1e-12)


def test_lsc_along_sheared_curve():
    # the x-step in the particle frame becomes the line u = y in the LPP frame
    lpp = sf.xstep(1.0, 3.0, 0.0).shear_inverse()
    assert lpp.eval((2.0, 2.0)) == 1.0
    assert lpp.eval((2.1, 2.0)) == 3.0


def test_bounds_and_kind():
    f = sf.xstep(1.0, 3.0)
    assert f.bounds_on((-1, 1, -1, 1)) == (1.0, 3.0)
    assert f.kind == "spatial_only"
    assert f.shear_inverse().shear().kind == "spatial_only"
    assert f.looks_spatial_only(np.linspace(-2, 2, 9))


def test_assumption_flags():
    assert sf.xstep(1, 3).shear_inverse().assumption_issues("lpp") == []
    assert sf.xstep(1, 3).assumption_issues("lpp")
    assert sf.oblique_step(-1.0, 0.0, 1, 2).assumption_issues("particle")


def test_tabulated_requires_monotone():
    with pytest.raises(sf.SpeedFieldError):
        sf.tabulated([0, 1, 2], [0, 1, 0], 1, 2)
    f = sf.tabulated([0, 1, 2], [0, 1, 3], 1, 2)
    assert f.eval((1.0, 0.5)) == 1 and f.eval((1.0, 1.5)) == 2


def test_parse_speed_text_frames():
    spec = sf.parse_speed_text("family = xstep\nframe = particle\nleft = 1\nright = 3  # fast side\n")
    assert spec.particle.eval((0.5, 7.0)) == 3.0
    assert spec.lpp.eval((7.5, 7.0)) == 3.0
    spec = sf.parse_speed_text("family = constant\nvalue = 2")
    assert spec.frame == "lpp" and spec.lpp.eval((1, 1)) == 2.0


@pytest.mark.parametrize("text", [
    "value = 1",
    "family = nope",
    "family = constant",
    "family = constant\nvalue = -1",
    "family = constant\nvalue = abc",
    "family = constant\nvalue = 1\nextra = 2",
    "family = xstep\nleft = 1\nright = 2\nframe = sideways",
    "family = bump\nbase = 1\namp = 2",
    "not a key value line",
])
def test_parse_errors(text):
    with pytest.raises(sf.SpeedFieldError):
        sf.parse_speed_text(text)


def test_missing_file(tmp_path):
    with pytest.raises(sf.SpeedFieldError):
        sf.load_speed_file(tmp_path / "absent.speed")
