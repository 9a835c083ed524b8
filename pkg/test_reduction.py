import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import optimize

import reduction
from functionals import energy
from models import CurveResolutionError, NormalizedSolution, ParameterError, ProblemParams, ReductionCurve
from reduction import (
    action,
    check_exponent,
    find_mu_roots,
    from_unit_frequency,
    frequency_of,
    mu_of_t,
    normalized_from_record,
    reduction_point,
    reduction_residual,
    rescale_unit_coefficient,
    sample_curve,
    solve_normalized,
    sup_mu,
    to_unit_frequency,
    unit_coupling,
)


def test_coupling_and_frequency_are_inverse():
    for q in (2.5, 3.0, 4.0, 5.0):
        for lam in (0.3, 1.0, 7.0):
            t = unit_coupling(lam, 0.8, q, 3)
            assert frequency_of(t, 0.8, q, 3) == pytest.approx(lam, rel=1e-12)


def test_quartic_coupling_scales_like_inverse_root():
    assert unit_coupling(4.0, 1.0, 4.0, 3) == pytest.approx(0.5)
    assert unit_coupling(1.0, 0.7, 3.0, 3) == pytest.approx(0.7)


@pytest.mark.parametrize("lam", [0.5, 1.0, 4.0])
def test_round_trip(soliton, lam):
    profile = soliton.profile.with_params(soliton.profile.params.with_(lam=lam))
    v, t = to_unit_frequency(profile, lam, 1.0)
    back, lam_back = from_unit_frequency(v, t, 1.0)
    assert lam_back == pytest.approx(lam, rel=1e-12)
    np.testing.assert_allclose(back.r, profile.r, rtol=1e-12)
    np.testing.assert_allclose(back.u, profile.u, rtol=1e-12)
    np.testing.assert_allclose(back.norms(), profile.norms(), rtol=1e-12)


@pytest.mark.parametrize("mu", [0.5, 2.0])
def test_back_transformed_solution_satisfies_identities(soliton, mu):
    u, lam = from_unit_frequency(soliton.profile, 1.0, mu)
    assert lam == pytest.approx(mu ** 2, rel=1e-12)
    cert = energy(u)
    assert cert.rel_nehari < 1e-5
    assert cert.rel_pohozaev < 1e-5
    gamma = u.params.gamma_q
    assert abs(lam * cert.mass - (1.0 - gamma) * mu * cert.lq) < 1e-5 * lam * cert.mass


def test_energy_bookkeeping(soliton):
    mu = 1.7
    u, _ = from_unit_frequency(soliton.profile, 1.0, mu)
    a = math.sqrt(u.norms()[0])
    sol = normalized_from_record(soliton, 1.0, mu, a)
    assert abs(sol.bookkeeping_res) < 1e-10 * abs(soliton.certificate.energy)
    assert sol.action == pytest.approx(action(u, mu), rel=1e-12)
    assert abs(sol.mass_error) < 1e-12
    assert sol.point.lam == pytest.approx(frequency_of(1.0, mu, 4.0, 3), rel=1e-13)


def test_mu_of_t_solves_reduction_equation():
    for q in (2.5, 3.0, 4.5):
        e = 2.0 / (q * ProblemParams(N=3, q=q).gamma_q - q)
        for t in (0.3, 2.0, 40.0):
            mu = mu_of_t(t, 1.3, 0.8, q, 3)
            assert abs(reduction_residual(t, mu, 1.3, 0.8, q, 3)) < 1e-12 * t ** (e - 1.0)


def test_mu_of_t_closed_form_and_mass_scaling():
    t, vq = 3.0, 0.4
    assert mu_of_t(t, vq, 1.0, 3.0, 3) == pytest.approx((0.5 * vq * t ** (7.0 / 3.0)) ** 0.75, rel=1e-13)
    assert mu_of_t(t, vq, 2.0, 3.0, 3) == pytest.approx(2.0 ** -1.5 * mu_of_t(t, vq, 1.0, 3.0, 3), rel=1e-13)


def test_mu_of_t_gives_target_mass(soliton):
    a = 1.3
    mu = mu_of_t(1.0, soliton.certificate.lq, a, 4.0, 3)
    u, _ = from_unit_frequency(soliton.profile, 1.0, mu)
    assert u.norms()[0] == pytest.approx(a ** 2, rel=2e-5)


def test_mu_of_t_rejects_nonpositive_input():
    with pytest.raises(ParameterError):
        mu_of_t(1.0, 0.0, 1.0, 3.0, 3)


def test_reduction_point_vanishes_on_the_curve():
    t, vq, a = 2.0, 1.3, 0.8
    mu = mu_of_t(t, vq, a, 4.0, 3)
    point = reduction_point(t, mu, vq, a, 4.0, 3)
    assert point.lam == pytest.approx((t / mu) ** -2, rel=1e-13)
    assert abs(point.F) < 1e-12 * t ** -3
    assert reduction_point(t, 2.0 * mu, vq, a, 4.0, 3).F > 0


def test_find_mu_roots_on_synthetic_curve():
    ts = np.linspace(0.01, 6.0, 200)
    mus = ts * np.exp(-ts)

    def mu_fn(t):
        return t * math.exp(-t)

    roots = find_mu_roots(ts, mus, 0.2, mu_fn)
    oracle = [optimize.brentq(lambda x: mu_fn(x) - 0.2, lo, hi, xtol=1e-15) for lo, hi in ((0.01, 1.0), (1.0, 6.0))]
    assert len(roots) == 2
    assert roots == pytest.approx(oracle, rel=1e-9)
    assert roots == pytest.approx([0.2592, 2.5426], abs=1e-3)
    assert find_mu_roots(ts, mus, 0.5, mu_fn) == []


def test_find_mu_roots_detects_unresolved_bracket():
    with pytest.raises(CurveResolutionError):
        find_mu_roots([1.0, 2.0], [0.0, 1.0], 0.5, lambda t: 1.0)


def test_sup_mu_on_sampled_curve():
    ts = np.linspace(0.2, 5.0, 25)
    curve = ReductionCurve(N=3, q=2.5, a=1.0, ts=ts, vqs=np.ones_like(ts), mus=ts * np.exp(-ts),
                           energies=np.ones_like(ts), heights=np.ones_like(ts))
    sup = sup_mu(curve, mu_fn=lambda t: t * math.exp(-t))
    assert sup['unimodal']
    assert sup['t_sup'] == pytest.approx(1.0, abs=2e-3)
    assert sup['mu_sup'] == pytest.approx(math.exp(-1.0), rel=1e-6)
    assert sup['error'] >= 0.0


def test_no_normalized_solution_above_sup():
    ts = np.geomspace(1.0, 10.0, 10)
    curve = ReductionCurve(N=3, q=2.5, a=1.0, ts=ts, vqs=np.ones_like(ts), mus=1.0 / ts,
                           energies=np.ones_like(ts), heights=np.ones_like(ts))
    base = ProblemParams(N=3, q=2.5, lam=1.0)
    assert solve_normalized(5.0, 1.0, base, curve) == []


def test_rescale_unit_coefficient(soliton):
    v = soliton.profile.scaled(alpha=0.5, params=soliton.profile.params.with_(t=4.0))
    assert energy(v).rel_nehari < 1e-5
    w = rescale_unit_coefficient(v)
    assert w.params.t == 1.0
    assert w.height == pytest.approx(2.0 * v.height, rel=1e-14)
    np.testing.assert_allclose(w.u, soliton.profile.u, rtol=1e-13)
    assert energy(w).rel_nehari < 1e-5


def test_rescale_shrinks_critical_coefficient(gaussian_profile):
    params = ProblemParams(N=3, q=3.0, t=100.0, lam=1.0)
    w = rescale_unit_coefficient(gaussian_profile(params, amplitude=0.01))
    assert w.params.t == 1.0
    assert w.params.crit_coef == pytest.approx(100.0 ** -4, rel=1e-12)
    assert w.height == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("q", [2.0005, 5.9995])
def test_degenerate_exponents_rejected(q):
    with pytest.raises(ParameterError):
        check_exponent(3, q)


@pytest.mark.slow
def test_normalized_solutions_below_sup():
    base = ProblemParams(N=3, q=2.5, lam=1.0)
    curve = sample_curve(base, 1.0, np.geomspace(0.5, 1e3, 30))
    assert curve.valid.any()
    sup = sup_mu(curve)
    assert 0 < sup['mu_sup'] < math.inf
    solutions = solve_normalized(0.1 * sup['mu_sup'], 1.0, base, curve)
    assert solutions
    assert sum(sol.ground_state for sol in solutions) == 1
    for sol in solutions:
        assert abs(sol.mass_res) < 1e-5
        assert abs(sol.mass_error) < 1e-4
    assert solve_normalized(2.0 * sup['mu_sup'], 1.0, base, curve) == []


def test_find_mu_roots_counts_exact_hits_once():
    assert find_mu_roots([1.0, 2.0, 3.0], [0.5, 1.0, 0.5], 1.0) == [2.0]
    assert find_mu_roots([1.0, 2.0, 3.0], [0.5, 0.7, 1.0], 1.0) == [3.0]
    assert find_mu_roots([1.0, 2.0, 3.0], [1.0, 0.5, 1.5], 1.0) == pytest.approx([1.0, 2.5])


def test_solve_normalized_compares_against_rescaled_curve(monkeypatch):
    # μ_t(1) = t e^{-t}; at a = 1/2 the curve scales by 2^{1.75} and its sup passes 0.5
    q, N, a = 2.5, 3, 0.5
    gamma = N * (q - 2.0) / (2.0 * q)
    k = q - q * gamma
    ts = np.linspace(0.01, 6.0, 200)
    curve = ReductionCurve(N=N, q=q, a=1.0, ts=ts, vqs=np.ones_like(ts), mus=ts * np.exp(-ts),
                           energies=np.ones_like(ts), heights=np.ones_like(ts))

    def fake_ground_state(params, d_guess, settings=None):
        t = params.t
        vq = (t * math.exp(-t)) ** (2.0 / k) / ((1.0 - gamma) * t ** ((k + 2.0) / k))
        return SimpleNamespace(certificate=SimpleNamespace(lq=vq, energy=1.0))

    def fake_normalized(record, t, mu, a):
        return NormalizedSolution(profile=None, lam=1.0, mu=mu, a=a, t=t, action=-t,
                                  mass_res=0.0, mass_error=0.0, bookkeeping_res=0.0)

    monkeypatch.setattr(reduction, "ground_state_near", fake_ground_state)
    monkeypatch.setattr(reduction, "normalized_from_record", fake_normalized)
    base = ProblemParams(N=N, q=q, lam=1.0)
    assert mu_of_t(2.0, fake_ground_state(base.with_(t=2.0), 1.0).certificate.lq, a, q, N) == \
        pytest.approx(a ** (q * gamma - q) * 2.0 * math.exp(-2.0), rel=1e-12)

    solutions = solve_normalized(0.5, a, base, curve)
    assert len(solutions) == 2
    assert [sol.ground_state for sol in solutions] == [False, True]
    target = 0.5 * a ** (q - q * gamma)
    for sol in solutions:
        assert sol.t * math.exp(-sol.t) == pytest.approx(target, rel=1e-8)
    assert solve_normalized(0.5, 1.0, base, curve) == []
