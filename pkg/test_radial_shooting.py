import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.integrate import cumulative_trapezoid

from functionals import aubin_talenti, bubble_profile
from models import (
    BracketError,
    ParameterError,
    ProblemParams,
    RadialProfile,
    ShotKind,
    SolutionKind,
    SolutionRecord,
    TailFitError,
    sphere_area,
)
from radial_shooting import (
    RadialShooter,
    default_d_max,
    extend_tail,
    find_positive_solutions,
    integrate_radial,
    label_records,
    quadrature_crosscheck,
    shoot_ground_state,
    well_bottom,
)

SOLITON_HEIGHT = 4.3374


def test_gamma_limits():
    assert ProblemParams(N=3, q=2.0 + 1e-9).gamma_q == pytest.approx(0.0, abs=1e-8)
    assert ProblemParams(N=3, q=6.0 - 1e-9, crit_on=False).gamma_q == pytest.approx(1.0, abs=1e-8)
    assert ProblemParams(N=3, q=4.0).gamma_q == pytest.approx(0.75)


@pytest.mark.parametrize("changes", [
    {'N': 2},
    {'q': 2.0},
    {'q': 6.0},
    {'t': -1.0},
    {'lam': -0.5},
    {'p': 6.5},
])
def test_invalid_parameters(changes):
    with pytest.raises(ParameterError):
        ProblemParams(**changes).validate()


def test_supercritical_allowed_without_critical_term():
    ProblemParams(N=3, q=7.0, crit_on=False).validate()


def test_bubble_shot_reproduces_bubble():
    params = ProblemParams(N=3, q=4.0, t=0.0, lam=0.0, crit_on=True)
    outcome = integrate_radial(params, 3 ** 0.25, r_max=50.0)
    assert outcome.kind == ShotKind.DECAYS
    profile = outcome.profile
    exact = aubin_talenti(3, 1.0, profile.r)
    assert np.max(np.abs(profile.u - exact) / exact) < 1e-6


def test_classification_on_either_side_of_the_soliton(cubic_params):
    assert integrate_radial(cubic_params, 0.1).kind == ShotKind.BLOWS_UP
    assert integrate_radial(cubic_params, 10.0).kind == ShotKind.CROSSES_ZERO
    assert integrate_radial(cubic_params, 10.0, tol=1e-10).kind == ShotKind.CROSSES_ZERO


def test_shot_below_well_blows_up_immediately(cubic_params):
    shooter = RadialShooter(cubic_params)
    assert shooter.curvature(0.5) > 0
    outcome = shooter.integrate(0.5)
    assert outcome.kind == ShotKind.BLOWS_UP
    assert outcome.profile.height == 0.5


def test_shot_needs_positive_height(cubic_params):
    with pytest.raises(ParameterError):
        integrate_radial(cubic_params, 0.0)


def test_soliton(soliton):
    assert soliton.height == pytest.approx(SOLITON_HEIGHT, abs=1e-3)
    cert = soliton.certificate
    assert cert.accepted
    assert cert.rel_nehari < 1e-5
    assert cert.rel_pohozaev < 1e-5
    assert cert.rel_energy_identity < 1e-5
    assert abs(cert.mass_res) < 1e-5 * cert.mass
    assert soliton.profile.tail.kappa == pytest.approx(1.0, rel=0.05)
    assert soliton.profile.tail.mass < 1e-4 * cert.mass


def test_soliton_quadrature_crosscheck(soliton):
    gaps = quadrature_crosscheck(soliton.profile)
    assert max(gaps.values()) < 1e-6


def test_no_ground_state_without_subcritical_term():
    params = ProblemParams(N=3, q=3.0, t=0.0, lam=1.0, crit_on=True)
    with pytest.raises(BracketError):
        shoot_ground_state(params, (0.5, 1e3))


def test_bracket_of_one_kind_is_rejected(cubic_params):
    with pytest.raises(BracketError):
        shoot_ground_state(cubic_params, (5.0, 50.0))


def _exponential_tail_profile(params):
    r = np.linspace(1.0, 20.0, 4000)
    u = np.exp(-r) / r
    du = -np.exp(-r) * (1.0 / r + 1.0 / r ** 2)
    weight = sphere_area(params.N) * r ** (params.N - 1)
    cum = [cumulative_trapezoid(weight * f, r, initial=0.0)
           for f in (u ** 2, du ** 2, u ** params.q, u ** params.crit_exp)]
    return RadialProfile(r, u, du, params, *cum)


def test_extend_tail_recovers_exact_far_field(cubic_params):
    profile = extend_tail(_exponential_tail_profile(cubic_params))
    tail = profile.tail
    assert tail.amplitude == pytest.approx(1.0, rel=1e-8)
    assert tail.kappa == pytest.approx(1.0, rel=1e-8)
    assert tail.mass == pytest.approx(4.0 * math.pi * math.exp(-40.0) / 2.0, rel=1e-7)
    assert tail.residual < 1e-10


def test_extend_tail_rejects_algebraic_decay():
    with pytest.raises(TailFitError):
        extend_tail(bubble_profile(3, r_max=50.0))


def test_extend_tail_rejects_nonlinear_end(cubic_params):
    profile = _exponential_tail_profile(cubic_params).truncated(1.5)
    with pytest.raises(TailFitError):
        extend_tail(profile.with_params(cubic_params.with_(t=1e12)))


def test_well_bottom(cubic_params):
    assert well_bottom(cubic_params) == pytest.approx(1.0, rel=1e-12)
    params = ProblemParams(N=3, q=3.0, t=2.0, lam=1.0, crit_on=False)
    assert well_bottom(params) == pytest.approx(0.5, rel=1e-12)


def test_default_d_max_follows_second_branch_scale():
    params = ProblemParams(N=3, q=3.5, t=100.0, lam=1.0)
    assert default_d_max(params) == pytest.approx(1e3 * 100.0 ** 2)
    assert default_d_max(params.with_(q=4.5)) == 1e6


def test_scan_needs_enough_heights(cubic_params):
    with pytest.raises(ParameterError):
        find_positive_solutions(cubic_params, n_scan=50)


def test_scan_finds_single_soliton(cubic_params):
    records = find_positive_solutions(cubic_params, d_max=1e2, n_scan=100)
    assert len(records) == 1
    assert records[0].kind == SolutionKind.GROUND_STATE
    assert records[0].height == pytest.approx(SOLITON_HEIGHT, abs=1e-3)


def _fake_record(height, energy, error=0.0):
    return SolutionRecord(height=height, profile=None, certificate=SimpleNamespace(energy=energy),
                          error_estimate=error)


def test_label_records_marks_highest_remaining_height():
    labelled = label_records([_fake_record(100.0, 3.0), _fake_record(1.0, 5.0)])
    assert [rec.height for rec in labelled] == [1.0, 100.0]
    assert [rec.kind for rec in labelled] == [SolutionKind.BLOW_UP_BRANCH, SolutionKind.GROUND_STATE]

    labelled = label_records([_fake_record(1.0, 5.0), _fake_record(10.0, 3.0), _fake_record(100.0, 4.0)])
    assert [rec.kind for rec in labelled] == [
        SolutionKind.EXCITED, SolutionKind.GROUND_STATE, SolutionKind.BLOW_UP_BRANCH]
    assert [rec.kind for rec in label_records([_fake_record(2.0, 1.0)])] == [SolutionKind.GROUND_STATE]


def test_label_records_merges_within_error_estimates():
    records = [_fake_record(1.0, 2.0, error=1e-7), _fake_record(1.0 + 1.5e-7, 2.0, error=1e-7),
               _fake_record(3.0, 1.0, error=1e-7)]
    assert [rec.height for rec in label_records(records)] == [1.0, 3.0]


@pytest.mark.parametrize("d", [3e4, 1e5, 1e6])
def test_bubble_core_is_not_taken_for_decay(d):
    params = ProblemParams(N=3, q=3.0, t=1e3, lam=1.0)
    assert integrate_radial(params, d).kind != ShotKind.DECAYS


def test_decay_needs_linear_regime_and_bessel_slope():
    params = ProblemParams(N=3, q=3.0, t=1e3, lam=1.0)
    shooter = RadialShooter(params)
    decay = shooter._events(1.0)[-1]
    r = 30.0
    u = 1e-12
    on_mode = [u, -u * (1.0 + 1.0 / r), 0.0, 0.0, 0.0, 0.0]
    assert decay(r, on_mode) < 0
    # slope off the decaying mode by 1% of κ
    assert decay(r, [u, -u * (0.99 + 1.0 / r), 0.0, 0.0, 0.0, 0.0]) > 0
    # same slope, still inside the nonlinear core
    assert decay(r, [1e-4, -1e-4 * (1.0 + 1.0 / r), 0.0, 0.0, 0.0, 0.0]) > 0
    assert len(RadialShooter(params.with_(lam=0.0))._events(1.0)) == 3


def test_height_is_stable_under_tolerance_refinement(cubic_params, soliton):
    fine = shoot_ground_state(cubic_params, (1.0, 1e4), settings={'rtol': 5e-9, 'atol': 5e-11})
    assert abs(fine.height - soliton.height) < 10.0 * soliton.error_estimate
    assert fine.certificate.energy == pytest.approx(soliton.certificate.energy, rel=1e-6)


def test_decaying_scan_mark_is_recorded(cubic_params, soliton, monkeypatch):
    shooter = RadialShooter(cubic_params)
    heights = [2.0, soliton.height, 20.0]
    kinds = [ShotKind.BLOWS_UP, ShotKind.DECAYS, ShotKind.CROSSES_ZERO]
    monkeypatch.setattr(shooter, "scan", lambda *args, **kwargs: kinds)
    decaying = shooter.trajectory(soliton.height)._replace(kind=ShotKind.DECAYS, r_event=soliton.profile.r_end)
    real = shooter.trajectory
    monkeypatch.setattr(shooter, "trajectory",
                        lambda d, r_max=None: decaying if d == soliton.height else real(d, r_max))
    monkeypatch.setattr(shooter, "bisect", lambda lo, hi: pytest.fail("flip across a decaying mark bisected"))
    records = shooter.solutions_on(heights)
    assert len(records) == 1
    assert records[0].height == soliton.height


@pytest.mark.slow
@pytest.mark.parametrize("q", [2.5, 3.0, 3.5])
@pytest.mark.parametrize("t", [1e3, 1e4])
def test_blow_up_branch_found_at_large_coupling(q, t):
    records = find_positive_solutions(ProblemParams(N=3, q=q, t=t, lam=1.0))
    assert len(records) >= 2
    heights = [rec.height for rec in records]
    assert all(a < b for a, b in zip(heights, heights[1:]))
    kinds = [rec.kind for rec in records]
    assert kinds.count(SolutionKind.BLOW_UP_BRANCH) == 1
    assert kinds.count(SolutionKind.GROUND_STATE) == 1
    assert records[-1].height > 1e2 * records[0].height


@pytest.mark.slow
def test_two_positive_solutions_at_large_coupling():
    params = ProblemParams(N=3, q=3.0, t=100.0, lam=1.0)
    records = find_positive_solutions(params)
    assert len(records) >= 2
    heights = [rec.height for rec in records]
    assert heights == sorted(heights)
    assert records[-1].kind == SolutionKind.BLOW_UP_BRANCH
    ground = [rec for rec in records if rec.kind == SolutionKind.GROUND_STATE]
    assert len(ground) == 1
    assert ground[0].certificate.level_gap < 0


@pytest.mark.slow
def test_single_solution_above_quartic():
    params = ProblemParams(N=3, q=5.0, t=1.0, lam=1.0)
    records = find_positive_solutions(params)
    assert len(records) == 1
    assert records[0].certificate.accepted


@pytest.mark.slow
def test_no_sub_bubble_ground_state_at_small_coupling():
    params = ProblemParams(N=3, q=3.0, t=0.01, lam=1.0)
    records = find_positive_solutions(params)
    assert all(rec.certificate.level_gap >= 0 for rec in records)


@pytest.mark.slow
def test_ground_state_height_scale():
    t = 50.0
    params = ProblemParams(N=3, q=3.0, t=t, lam=1.0)
    records = find_positive_solutions(params)
    ground = min(records, key=lambda rec: rec.certificate.energy)
    assert ground.certificate.energy < 4.27
    assert 0.1 / t < ground.height < 10.0 / t
