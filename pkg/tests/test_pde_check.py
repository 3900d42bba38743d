import numpy as np
import pytest
from hypothesis import given, strategies as st

from dtasep import hydro_limit as hl
from dtasep import pde_check as pc
from dtasep import speed_field as sf
from dtasep import tasep_sim as ts

unit = st.floats(0, 1)
speed = st.floats(0.1, 5)


@given(unit, speed)
def test_flux_consistency(r, c):
    assert pc.interface_flux(r, c, r, c) == pytest.approx(c * r * (1 - r), abs=1e-15)
    assert pc.demand(0.0, c) == 0.0 and pc.supply(1.0, c) == 0.0


@given(unit, unit, speed, speed)
def test_interface_flux_bounded(rl, rr, cl, cr):
    F = pc.interface_flux(rl, cl, rr, cr)
    assert 0 <= F <= 0.25 * min(cl, cr) + 1e-15


def test_conservation_and_range():
    tr = pc.godunov_run(sf.xstep(2.0, 1.0, 0.3), ts.riemann_profile(0.9, 0.1).rho0, 0.5,
                        (-3, 3, 1 / 200))
    assert tr.max_mass_defect <= 1e-12 and tr.max_principle_ok and tr.cfl <= 0.5 + 1e-12


def test_standing_shock():
    # equal fluxes on both sides and f'(left) > 0 > f'(right): the jump stays put
    prof = ts.riemann_profile(0.2, 0.8)
    tr = pc.godunov_run(sf.constant(1.0), prof.rho0, 1.0, (-2, 2, 1 / 200))
    xc = tr.centers
    far = np.abs(xc) > 0.05
    assert np.allclose(tr.rho[-1][far], prof.rho0(xc[far]), atol=1e-9)


def test_weak_form_and_nonconservative_control():
    step = ts.step_profile()
    tests = [pc.BumpTest(x0, 0.5, 0.8) for x0 in (-0.5, 0.0, 0.4)]
    good = pc.godunov_run(sf.constant(1.0), step.rho0, 1.0, (-3, 3, 1 / 400))
    bad = pc.godunov_run(sf.constant(1.0), step.rho0, 1.0, (-3, 3, 1 / 400), conservative=False)
    assert pc.weak_form_check(good, tests).max_defect < 1e-3
    assert pc.weak_form_check(bad, tests).max_defect > 0.05
    assert bad.max_mass_defect > 1e-4


def test_godunov_rejects_bad_input():
    with pytest.raises(ValueError):
        pc.godunov_run(sf.ystep(1.0, 2.0, 0.5), ts.step_profile().rho0, 1.0)
    with pytest.raises(ValueError):
        pc.godunov_run(sf.constant(1.0), lambda x: 2.0 + 0 * x, 1.0)


def test_maximal_current_on_fan():
    step = ts.step_profile()
    tr = pc.godunov_run(sf.constant(1.0), step.rho0, 1.0, (-3, 3, 1 / 400))
    xs = np.linspace(-1.2, 1.2, 25)
    rep = pc.maximal_current_check(tr, hl.step_fan_current(xs, 1.0), step.v0(xs), xs)
    assert rep.ok and rep.near_equality.mean() > 0.9
    with pytest.raises(ValueError):
        pc.maximal_current_check(tr, np.zeros(3), np.zeros(3), xs)


def test_residual_excludes_kinks_and_jumps():
    fan = lambda xs, t: hl.step_fan_current(xs, t)
    rep = pc.hj_residual(fan, sf.constant(1.0), np.array([(0.3, 1.0), (1.0, 1.0), (-0.5, 0.8)]))
    assert rep.status == ["ok", "ok", "ok"]
    assert np.max(np.abs(rep.residual)) < 1e-6
    # standing shock between densities 0.2 and 0.8: v_x jumps at x = 0
    shock = lambda xs, t: np.where(np.asarray(xs) < 0, 0.2, 0.8) * np.asarray(xs) - 0.16 * t
    rep = pc.hj_residual(shock, sf.constant(1.0), np.array([(0.0, 1.0), (0.4, 1.0)]))
    assert rep.status == ["nondiff", "ok"]
    flat = lambda xs, t: 0.5 * np.asarray(xs) - 0.25 * t * 1.0
    rep = pc.hj_residual(flat, sf.xstep(1.0, 3.0, 0.0), np.array([(0.0, 1.0), (0.5, 1.0)]))
    assert rep.status == ["coef_jump", "ok"]


def test_viscosity_on_fan():
    fan = lambda xs, t: hl.step_fan_current(xs, t)
    pts = np.array([(x, 1.0) for x in (-1.0, -0.5, 0.0, 0.5, 1.0)])
    rep = pc.viscosity_spot_check(fan, sf.constant(1.0), pts, radius=1e-2)
    assert rep.ok and not rep.inconclusive.any()
    # a downward kink cannot be a viscosity solution of this equation
    wrong = lambda xs, t: np.minimum(np.asarray(xs, float), 0.0) - 0.0 * t
    assert not pc.viscosity_spot_check(wrong, sf.constant(1.0), np.array([(0.0, 1.0)]), radius=1e-2).ok
