import numpy as np
import pytest

from dtasep import hydro_limit as hl
from dtasep import speed_field as sf
from dtasep import tasep_sim as ts

STEP = ts.step_profile()


def test_step_fan_centre():
    P = hl.current(sf.constant(1.0), STEP.v0, [-0.05, 0.0, 0.05], 1.0)
    assert P.v[1] == pytest.approx(-0.25, abs=2e-3)
    assert P.rho[1] == pytest.approx(0.5, abs=1e-2)


def test_fan_against_closed_form_and_dense_search():
    xs = np.linspace(-1.4, 1.4, 15)
    P = hl.current(sf.constant(1.0), STEP.v0, xs, 1.0)
    assert np.max(np.abs(P.v - hl.step_fan_current(xs, 1.0))) < 5e-3
    for x in (-0.6, 0.3):
        assert hl.homogeneous_current(STEP.v0, x, 1.0) == pytest.approx(float(hl.step_fan_current(x, 1.0)), abs=1e-6)


def test_flat_density_is_stationary():
    prof = ts.flat_profile(0.3)
    P = hl.current(sf.constant(2.0), prof.v0, np.linspace(-0.5, 0.5, 5), 0.7)
    assert np.allclose(P.v, 0.3 * P.x - 0.7 * 2.0 * 0.3 * 0.7, atol=5e-3)


def test_fenchel_identity():
    assert hl.fenchel_gap(np.linspace(0, 1, 11), (0.5, 1.0, 3.0)) <= 1e-6


def test_lax_oleinik_is_a_nested_lower_bound():
    f = sf.xstep(1.0, 3.0, 0.0).shear_inverse()
    res = hl.lax_oleinik_value(f, STEP.v0, 0.6, 0.8, path_family_size=4, detail=True)
    vals = [v for _, v in res.history]
    assert vals == sorted(vals)
    env = hl.current(f, STEP.v0, [0.6], 0.8).v[0]
    assert res.value <= env + 5e-3
    assert env - res.value < 0.02
    assert res.durations.sum() == pytest.approx(0.8) and res.nodes[-1] == 0.6


def test_lax_oleinik_waits_on_the_slow_side():
    # the best path parks on the interface before entering the fast region
    f = sf.xstep(1.0, 3.0, 0.0).shear_inverse()
    lo = hl.lax_oleinik_value(f, STEP.v0, 0.9154, 0.5282)
    env = hl.current(f, STEP.v0, [0.9154], 0.5282).v[0]
    assert abs(env - lo) < 5e-3


def test_maximizer_diagnostics():
    f = sf.xstep(1.0, 3.0, 0.0).shear_inverse()
    P = hl.current(f, STEP.v0, np.linspace(-1, 2, 7), 1.0)
    checks = hl.maximizer_diagnostics(P, f, STEP.v0)
    assert all(c.ok for c in checks)
    assert {c.case for c in checks} <= {"interior", "contact0", "contact1"}


def test_solver_time_zero_and_errors():
    S = hl.CurrentSolver(sf.constant(1.0), STEP.v0)
    assert np.array_equal(S([-1.0, 1.0], 0), [-1.0, 0.0])
    with pytest.raises(ValueError):
        hl.current(sf.constant(1.0), STEP.v0, [0.0], 0.0)
    with pytest.raises(ValueError):
        hl.lax_oleinik_value(sf.constant(1.0), STEP.v0, 0.0, -1.0)
