import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rankdecomp.grid_paths import CadlagPath, TimeGrid, pointwise
from rankdecomp.localtime import (
    PreconditionError,
    crossing_local_time,
    difference_local_time,
    indicator_local_time,
    occupation_local_time,
    sgn,
    tanaka_local_time,
)
from rankdecomp.rank import EXACT, EpsilonPolicy
from rankdecomp.simulate import ModelSpec, SeedPolicy, fixture, simulate

from conftest import brownian_values, jump_ensemble, path


def test_sign_convention():
    np.testing.assert_array_equal(sgn(np.array([-1.0, 0.0, 2.0])), [-1, -1, 1])


def test_zero_path():
    lt = tanaka_local_time(path(np.zeros(9)))
    assert np.all(lt.L == 0) and np.all(lt.scriptL == 0)
    assert np.all(indicator_local_time(path(np.zeros(9))).scriptL == 0)
    assert np.all(occupation_local_time(path(np.zeros(9)), 0.1).L == 0)


@pytest.mark.parametrize("m", [16, 64, 256])
def test_sawtooth_single_upward_step_from_zero(m):
    # the only nonzero contribution is the upward step leaving 0 at 3T/4:
    # with sgn(0) = -1 it adds twice the step size 4/m
    lt = tanaka_local_time(fixture("sawtooth_cross", TimeGrid(1.0, m)).path(0))
    assert lt.L[-1] == 2 * 4.0 / m
    steps = np.flatnonzero(np.diff(lt.L))
    np.testing.assert_array_equal(steps, [3 * m // 4])


def test_jump_from_zero_hand_values():
    X = fixture("jump_from_zero", TimeGrid(1.0, 16)).path(0)
    lt = tanaka_local_time(X)
    assert lt.L[-1] == 0.0 and lt.scriptL[-1] == 1.0
    ind = indicator_local_time(X)
    np.testing.assert_array_equal(ind.scriptL, lt.scriptL)


def test_full_formula_matches_reduced():
    rng = np.random.default_rng(7)
    for e in (jump_ensemble(rng, 4, 64, p=0.2),):
        X = e.stacked
        v, lft, J = X.values, X.left, X.jumps
        vp = v[:, :-1]
        full = (
            np.abs(v[:, 1:]) - np.abs(vp) - sgn(vp) * X.cont_increments - sgn(lft[:, 1:]) * J[:, 1:]
            - (np.abs(v[:, 1:]) - np.abs(lft[:, 1:]) - sgn(lft[:, 1:]) * J[:, 1:])
        )
        lt = tanaka_local_time(X)
        np.testing.assert_allclose(np.diff(lt.L), full, atol=1e-12)


def test_script_l_adds_jumps_from_zero_only():
    g = TimeGrid(1.0, 8)
    v = np.array([0.0, 0.0, 2.0, 2.0, 0.5, 0.5, 0.0, -1.0, -1.0])
    J = np.array([0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0])
    lt = tanaka_local_time(CadlagPath(g, v, J))
    # jump at 2 leaves 0 (counted), jump at 7 leaves 0 too
    np.testing.assert_allclose(lt.scriptL - 0.5 * lt.L, np.cumsum([0, 0, 2, 0, 0, 0, 0, -1, 0]))


def test_indicator_negative_reports_index():
    with pytest.raises(PreconditionError, match=r"index \(3,\)"):
        indicator_local_time(path([0.0, 0.1, 0.0, -0.5, 0.0]))
    # within band tolerance is fine
    indicator_local_time(path([0.0, 0.1, 0.0, -0.01, 0.0], T=4e-3), EpsilonPolicy("band", 1.0))


def test_occupation_examples():
    assert np.all(occupation_local_time(path(np.full(9, 5.0)), 0.1).L == 0)
    with pytest.raises(ValueError):
        occupation_local_time(path(np.zeros(9)), 0.0)


def test_crossing_examples():
    h = 0.25
    assert crossing_local_time(path([0, h, 0, -h, 0])).L[-1] == 2 * h
    assert crossing_local_time(path([h, 2 * h, h, 2 * h])).L[-1] == 0.0
    assert crossing_local_time(path(np.zeros(17)), h).L[-1] == h * 16
    with pytest.raises(PreconditionError):
        crossing_local_time(path([0, 0.3, 0.5]))
    with pytest.raises(PreconditionError):
        crossing_local_time(path(np.zeros(5)))


def test_lattice_tanaka_vs_crossing():
    m = 1024
    h = np.sqrt(1.0 / m)
    e = simulate(ModelSpec("lattice_walk", h=h), TimeGrid(1.0, m), 2000, SeedPolicy(3))
    X = e.stacked
    tan = tanaka_local_time(X).L[:, -1]
    cro = crossing_local_time(X, h).L[:, -1]
    # pathwise: Tanaka charges 2h per up-step leaving 0, crossing h per visit
    v = X.values
    at0 = np.abs(v[:, :-1]) < 1e-9 * h
    ups = (at0 & (np.diff(v, axis=1) > 0)).sum(axis=1)
    np.testing.assert_allclose(tan, 2 * h * ups, atol=1e-9)
    np.testing.assert_allclose(cro, h * at0.sum(axis=1), atol=1e-9)
    se = np.std(tan - cro, ddof=1) / np.sqrt(len(tan))
    assert abs(tan.mean() - cro.mean()) < 3 * se


def test_difference_local_time_examples():
    rng = np.random.default_rng(1)
    X = CadlagPath(TimeGrid(1.0, 64), brownian_values(rng, 1, 64)[0])
    for which in ("plain", "pos", "neg"):
        lt = difference_local_time(X, X, which)
        assert np.all(lt.L == 0) and np.all(lt.scriptL == 0)
    Y = pointwise("scale", X, c=1.0)
    far = CadlagPath(X.grid, X.values + 2.0)
    band = EpsilonPolicy("band", 1.0)  # eps = 1/8 < 2
    for which in ("plain", "pos", "neg"):
        assert np.all(difference_local_time(far, Y, which, band).scriptL == 0)
    with pytest.raises(ValueError):
        difference_local_time(X, X, "both")


@pytest.mark.parametrize("m", [16, 64, 256])
def test_difference_triple_point_concentrated(m):
    e = fixture("triple_point", TimeGrid(1.0, m))
    lt = difference_local_time(e.path(0), e.path(2), "plain")
    inc = np.flatnonzero(np.diff(lt.scriptL))
    assert lt.scriptL[-1] > 0
    assert np.all(np.abs(inc - m // 2) <= 1)
    # D = (t - 1/2)/2 has one step of size 1/(2m) leaving 0 upward
    assert lt.L[-1] == pytest.approx(1.0 / m)


def test_positive_part_halves_grid_tanaka():
    # grid points essentially never hit 0, so the grid Tanaka sum tracks the
    # symmetric local time; for Z+ that is half of L(Z)
    rng = np.random.default_rng(5)
    m = 1024
    X = CadlagPath(TimeGrid(1.0, m), brownian_values(rng, 4000, m))
    a = tanaka_local_time(X).L[:, -1]
    b = tanaka_local_time(pointwise("pos_part", X)).L[:, -1]
    ratio = b.mean() / a.mean()
    assert abs(ratio - 0.5) < 0.05


def test_tanaka_vs_occupation_brownian():
    rng = np.random.default_rng(6)
    m = 1024
    X = CadlagPath(TimeGrid(1.0, m), brownian_values(rng, 4000, m))
    tan = tanaka_local_time(X).L[:, -1].mean()
    occ = occupation_local_time(X, np.sqrt(X.grid.dt)).L[:, -1].mean()
    assert abs(tan - occ) <= 0.05 * tan


@settings(max_examples=60, deadline=None)
@given(st.integers(-3, 3), st.integers(0, 10_000))
def test_scaling_equivariance(p, seed):
    c = 2.0**p
    e = jump_ensemble(np.random.default_rng(seed), 2, 32, p=0.2)
    X = e.stacked
    a = tanaka_local_time(X, EpsilonPolicy("band", 0.5))
    b = tanaka_local_time(X.scaled(c), EpsilonPolicy("band", 0.5 * c))
    np.testing.assert_array_equal(b.L, c * a.L)
    np.testing.assert_array_equal(b.scriptL, c * a.scriptL)
