import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtasep import lpp_micro as lm
from dtasep import speed_field as sf
from dtasep import tasep_sim as ts


def two_phase(native_kind=None):
    f = sf.xstep(1.0, 3.0, 0.0)
    if native_kind:
        f = dataclasses.replace(f, native_kind=native_kind)
    return f.shear_inverse()


def test_step_initial_occupations():
    tr = ts.init_heights(ts.step_profile(), 10, (-5, 5))
    assert tr.occupations().tolist() == [1, 1, 1, 1, 1, 0, 0, 0, 0, 0]
    assert tr.z0[5] == 0


def test_parse_init(tmp_path):
    assert ts.parse_init("step").label == "step"
    assert ts.parse_init("flat:0.5").rho0(np.array([3.0])) == 0.5
    assert ts.parse_init("bernoulli:0.3").random
    p = tmp_path / "rho.csv"
    p.write_text("x,rho\n-1,0.8\n1,0.2\n")
    prof = ts.parse_init(f"file:{p}")
    assert prof.v0(np.array(0.0)) == 0.0
    for bad in ("wave", "flat:x", "riemann:0.1", f"file:{tmp_path / 'none.csv'}"):
        with pytest.raises(ValueError):
            ts.parse_init(bad)


def test_bernoulli_heights_window_independent():
    prof = ts.bernoulli_profile(0.4)
    a = ts.initial_heights(prof, 20, np.arange(-30, 31), seed=4)
    b = ts.initial_heights(prof, 20, np.arange(-10, 41), seed=4)
    assert np.array_equal(a[20:], b[:41])


def test_poisson_engine_matches_event_queue():
    env = lm.Environment(two_phase(), 10, 42)
    sites = np.arange(-12, 13)
    J0 = -ts.initial_heights(ts.bernoulli_profile(0.5), 10, sites, 3)
    run = ts.run_levels(env, J0, sites, 0, 6.0, [6.0], "poisson", False, True)
    ref = ts.simulate_events(env, J0, sites, 0, 6.0)
    assert len(ref) > 20
    assert np.array_equal(run.events, ref[np.lexsort((ref[:, 1], ref[:, 0]))])


def test_timer_engine_is_wedge_lpp():
    env = lm.Environment(two_phase(), 10, 42)
    k, zk = 2, -1
    aux = ts.evolve_aux(env, k, zk, 8.0, (-12, 12), [8.0], "timer", True)
    times = ts.xi_passage_times(aux)
    W = lm.passage_wedge(env, (k, -zk), (12, 20))
    assert len(times) > 30
    for (i, j), t in times.items():
        assert W.wedge_value(i, j) == t


def test_site_only_rates_bit_identical():
    sites = np.arange(-15, 16)
    J0 = -ts.initial_heights(ts.bernoulli_profile(0.5), 10, sites, 1)
    fast = ts.run_levels(lm.Environment(two_phase(), 10, 8), J0, sites, 0, 9.0, [3.0, 9.0], "poisson", trace=True)
    slow = ts.run_levels(lm.Environment(two_phase("general"), 10, 8), J0, sites, 0, 9.0, [3.0, 9.0], "poisson",
                         trace=True)
    assert np.array_equal(fast.J, slow.J) and np.array_equal(fast.events, slow.events)


@settings(max_examples=25)
@given(st.floats(0.05, 0.95), st.integers(0, 2 ** 31), st.sampled_from(ts.ENGINES))
def test_exclusion_invariants(p, seed, engine):
    env = lm.Environment(sf.rect_checker(1.0, 2.5, 0.5), 10, seed)
    tr = ts.init_heights(ts.bernoulli_profile(p), 10, (-20, 20), env, seed=seed + 1)
    out = ts.evolve(tr, 6.0, [2.0, 4.0, 6.0], engine)
    prev = out.z0
    for z in out.heights:
        occ = np.diff(z)
        assert set(np.unique(occ)) <= {0, 1}
        assert np.all(z <= prev)
        prev = z
    # heights only drop: each jump across a bond lowers the height there by one
    assert np.all(out.heights[-1] <= out.z0)


def test_buffer_overrun_detected():
    env = lm.Environment(sf.constant(1.0), 20, 0)
    tr = ts.init_heights(ts.step_profile(), 20, (-5, 5), env)
    with pytest.raises(ts.BufferOverrun):
        ts.evolve(tr, 30.0, pad=1)
    ts.evolve(tr, 30.0)  # default padding is certified


def test_envelope_identity_holds_and_detects_decoupling():
    env = lm.Environment(two_phase(), 10, 7)
    prof = ts.bernoulli_profile(0.5)
    rep = ts.check_envelope(env, prof, (-15, 15), 12.0, init_seed=2)
    assert rep.ok and not rep.inconclusive and rep.checked_pairs > 100
    bad = ts.check_envelope(env, prof, (-15, 15), 12.0, aux_seed=99, init_seed=2)
    assert bad.violations


def test_replicas_reproducible():
    a = ts.run_replicas(sf.constant(1.0), ts.step_profile(), 50, 0.5, (-30, 30), 3, seed=5)
    b = ts.run_replicas(sf.constant(1.0), ts.step_profile(), 50, 0.5, (-30, 30), 3, seed=5, threads=3)
    for x, y in zip(a, b):
        assert np.array_equal(x.heights[-1], y.heights[-1])
    assert not np.array_equal(a[0].heights[-1], a[1].heights[-1])


def test_bad_runs():
    env = lm.Environment(sf.constant(1.0), 10, 0)
    with pytest.raises(ValueError):
        ts.run_levels(env, np.array([0, 1, 0]), np.arange(3), 0, 1.0, [1.0])
    with pytest.raises(ValueError):
        ts.run_levels(env, np.array([0, 0, 0]), np.arange(3), 0, 1.0, [1.0], engine="gillespie")
    tr = ts.init_heights(ts.step_profile(), 10, (-5, 5), env)
    with pytest.raises(ValueError):
        ts.evolve(tr, 1.0, [2.0])
