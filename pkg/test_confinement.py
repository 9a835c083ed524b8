import math
from types import SimpleNamespace

import numpy as np
import pytest

from confinement import (
    ConfinedProblem,
    build_mesh,
    distance_to_limit,
    f_of,
    fibering_tau,
    mass_exponent,
    mass_law,
    mesh_refinement,
    multiplier_law,
    normalized_from_confined,
    r_of_t,
    solve_confined,
    solve_w_infty,
    state_distance,
    stiffness,
    symmetrize,
    uniqueness_onset,
)
from models import (
    BoundaryContaminationError,
    ConfinedState,
    ParameterError,
    ReductionBracketError,
)

SMALL = {'n_s': 60, 'n_z': 121, 'extent': 12.0, 'tol': 1e-6}


@pytest.fixture(scope="module")
def confined():
    return solve_confined(10.0, 4.0, settings=SMALL)


def test_mesh_volume():
    mesh = build_mesh(4.0, n_s=20, n_z=41, extent=8.0)
    assert mesh.s_max == pytest.approx(8.0)
    assert mesh.z_max == pytest.approx(8.0)
    assert mesh.z[mesh.z.size // 2] == pytest.approx(0.0, abs=1e-14)
    total = math.pi * (mesh.s_max - mesh.hs / 2.0) ** 2 * mesh.z.size * mesh.hz
    assert mesh.volumes.sum() == pytest.approx(total, rel=1e-12)


def test_mesh_shrinks_with_small_t():
    assert build_mesh(0.25, n_s=20, n_z=41, extent=8.0).s_max == pytest.approx(4.0)


def test_mesh_needs_odd_axial_count():
    with pytest.raises(ParameterError):
        build_mesh(1.0, n_s=20, n_z=40)


def test_stiffness_symmetric_positive():
    mesh = build_mesh(1.0, n_s=12, n_z=25, extent=4.0)
    K = stiffness(mesh)
    assert abs(K - K.T).max() < 1e-12
    w = np.random.default_rng(1).uniform(0.1, 1.0, K.shape[0])
    assert w @ (K @ w) > 0


def test_discrete_norms_of_gaussian():
    mesh = build_mesh(1.0, n_s=200, n_z=401, extent=6.0)
    problem = ConfinedProblem(mesh, 1.0, 4.0)
    ss, zz = np.meshgrid(mesh.s, mesh.z, indexing='ij')
    w = np.exp(-(ss ** 2 + zz ** 2))
    q = problem.quantities(w)
    assert q['mass'] == pytest.approx((math.pi / 2.0) ** 1.5, rel=1e-2)
    assert q['grad'] == pytest.approx(3.0 * (math.pi / 2.0) ** 1.5, rel=1e-2)


def test_symmetrize():
    w = np.random.default_rng(2).normal(size=(9, 11))
    out = symmetrize(w)
    assert np.all(out >= 0)
    np.testing.assert_array_equal(out, out[:, ::-1])
    assert np.all(np.diff(out, axis=0) <= 0)
    assert np.all(np.diff(out[:, 5:], axis=1) <= 0)
    np.testing.assert_array_equal(symmetrize(out), out)


def test_fibering_tau_derivatives():
    solution = SimpleNamespace(grad=2.0, potential=0.5, lp=3.0, p=4.0)
    h = 1e-5
    for tau in (0.5, 1.0, 1.7):
        value, first, second = fibering_tau(solution, tau)
        plus, minus = fibering_tau(solution, tau + h), fibering_tau(solution, tau - h)
        assert first == pytest.approx((plus[0] - minus[0]) / (2.0 * h), rel=1e-6)
        assert second == pytest.approx((plus[1] - minus[1]) / (2.0 * h), rel=1e-6)
    assert fibering_tau(solution, 1e-3)[0] > 1e5
    with pytest.raises(ParameterError):
        fibering_tau(solution, 0.0)


def _fake_state(t, lp, potential, p=4.0):
    mesh = build_mesh(1.0, n_s=10, n_z=11, extent=2.0)
    return ConfinedState(mesh=mesh, w=np.zeros(mesh.shape), t=t, p=p, mass=1.0, grad=1.0, lp=lp,
                         potential=potential, energy=0.0)


def test_reduction_root():
    state = _fake_state(100.0, 8.0, 1.0)
    r = r_of_t(state)
    assert r ** 2 == pytest.approx(100.0 ** mass_exponent(4.0) * (2.0 - 2e-4), rel=1e-12)
    assert f_of(r, 100.0, state) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ParameterError):
        f_of(r, 50.0, state)


def test_reduction_bracket_failure():
    with pytest.raises(ReductionBracketError):
        r_of_t(_fake_state(1.0, 1e-3, 10.0))


def test_confined_ground_state(confined):
    assert confined.residual < 1e-6
    assert all(b <= a + 1e-13 * abs(a) for a, b in zip(confined.history, confined.history[1:]))
    np.testing.assert_array_equal(confined.w, confined.w[:, ::-1])
    assert np.all(confined.w >= 0)
    assert confined.energy > 0
    quadratic = confined.grad + confined.mass + confined.potential / confined.t ** 2
    assert quadratic == pytest.approx(confined.lp, rel=1e-10)


def test_normalized_confined_solution(confined):
    solution = normalized_from_confined(confined)
    assert solution.lam == confined.t
    assert solution.mass == pytest.approx(confined.t ** mass_exponent(4.0) * confined.mass, rel=1e-12)
    assert abs(solution.pohozaev_res) < 0.1
    _, first, second = fibering_tau(solution, 1.0)
    assert abs(first) < 0.1 * solution.grad
    assert second < 0


def test_warm_start_agrees_with_cold(confined):
    warm = solve_confined(8.0, 4.0, settings=SMALL, initial=confined)
    cold = solve_confined(8.0, 4.0, settings=SMALL)
    assert state_distance(warm, cold) < 1e-4


def test_boundary_contamination():
    with pytest.raises(BoundaryContaminationError):
        solve_confined(10.0, 4.0, settings={'n_s': 15, 'n_z': 31, 'extent': 3.0, 'tol': 1e-6})


def test_limit_profile():
    record = solve_w_infty(4.0)
    assert record.height == pytest.approx(4.3374, abs=1e-3)
    assert record.certificate.accepted
    with pytest.raises(ParameterError):
        solve_w_infty(6.0)


def test_multiplier_law_needs_mass_supercritical_exponent():
    with pytest.raises(ParameterError):
        multiplier_law(3.0, [10.0, 20.0, 40.0], settings=SMALL)


@pytest.mark.slow
def test_approach_to_limit_profile():
    settings = {'n_s': 96, 'n_z': 193, 'extent': 16.0}
    distances = [distance_to_limit(solve_confined(t, 4.0, settings=settings)) for t in (10.0, 100.0, 1000.0)]
    assert distances[0] > distances[1] > distances[2]


@pytest.mark.slow
def test_multiplier_law_slope():
    settings = {'n_s': 96, 'n_z': 193, 'extent': 16.0}
    law = multiplier_law(4.0, np.geomspace(1e3, 1e5, 5), settings=settings)
    assert law['fit'].exponent == pytest.approx(law['expected'], rel=0.1)
    rows = law['rows']
    rs = [r for _, r in sorted(rows)]
    assert all(b < a for a, b in zip(rs, rs[1:]))


@pytest.mark.slow
def test_uniqueness_at_large_t():
    settings = {'n_s': 96, 'n_z': 193, 'extent': 16.0, 'tol': 1e-7}
    report = uniqueness_onset([100.0, 300.0, 1000.0], 4.0, settings=settings)
    assert report['t_onset'] == 100.0


@pytest.mark.slow
def test_small_t_mass_law():
    settings = {'n_s': 96, 'n_z': 193, 'extent': 16.0}
    law = mass_law(4.0, np.geomspace(0.01, 0.1, 4), settings=settings)
    assert law['fit'].exponent == pytest.approx(law['expected'], abs=0.15)


def test_mesh_refinement_reduces_fibering_slope(confined):
    report = mesh_refinement(10.0, 4.0, settings=SMALL, state=confined)
    assert report['coarse'] is confined
    assert report['fine'].mesh.shape == (120, 243)
    assert report['fine'].mesh.hs == pytest.approx(confined.mesh.hs / 2.0)
    assert report['energy_change'] < 0.05
    assert abs(report['tau1_fine']) < abs(report['tau1_coarse'])
    assert report['tau2'] < 0


@pytest.mark.slow
@pytest.mark.parametrize("t", np.geomspace(1e3, 1e5, 5)[-3:])
def test_fibering_slope_vanishes_at_small_mass(t):
    settings = {'n_s': 193, 'n_z': 385, 'extent': 12.0}
    report = mesh_refinement(t, 4.0, settings=settings)
    assert report['energy_change'] < 0.01
    assert abs(report['tau1']) < 1e-3
    assert report['tau2'] < 0
