"""
Scaling dictionary between normalized solutions

    -Δu + λu = μ|u|^{q-2}u + |u|^{2*-2}u,   ‖u‖₂² = a²,

and fixed-frequency solutions v of -Δv + v = t|v|^{q-2}v + |v|^{2*-2}v.
"""
import logging
import math
from dataclasses import replace

import numpy as np
from scipy import optimize
from tqdm import tqdm

from functionals import energy
from models import (
    CurveResolutionError,
    NLSError,
    NormalizedSolution,
    ParameterError,
    ReductionCurve,
    ReductionPoint,
)
from radial_shooting import find_positive_solutions, ground_state_near

logger = logging.getLogger(__name__)

# --- Constants ---
DEFAULT_SETTINGS = {
    'root_rtol': 1e-10,
    'sup_xatol': 1e-3,
    'n_scan': 200,
    'edge_margin': 1e-3,
}


def _gamma(N, q):
    return N * (q - 2.0) / (2.0 * q)


def check_exponent(N, q):
    """Reject the degenerate q→2 and q→2* limits."""
    crit_exp = 2.0 * N / (N - 2)
    if not 2.0 + DEFAULT_SETTINGS['edge_margin'] < q < crit_exp - DEFAULT_SETTINGS['edge_margin']:
        raise ParameterError(f"q={q} too close to the degenerate limits 2 and 2*={crit_exp:g}")


def unit_coupling(lam, mu, q, N):
    """t = μ λ^{(qγ_q - q)/2}."""
    return mu * lam ** ((q * _gamma(N, q) - q) / 2.0)


def frequency_of(t, mu, q, N):
    """λ_μ = (t/μ)^{2/(qγ_q - q)}."""
    return (t / mu) ** (2.0 / (q * _gamma(N, q) - q))


def to_unit_frequency(profile_u, lam, mu, q=None):
    """
    v(x) = λ^{-(N-2)/4} u(λ^{-1/2} x) and t = μ λ^{(qγ_q-q)/2}.

    Returns:
        tuple: (RadialProfile v, t)
    """
    if not lam > 0:
        raise ParameterError(f"frequency must be positive, got {lam}")
    P = profile_u.params
    q = q or P.q
    N = P.N
    t = unit_coupling(lam, mu, q, N)
    params_v = P.with_(t=t, lam=1.0, mu=None)
    v = profile_u.scaled(alpha=lam ** (-(N - 2) / 4.0), beta=lam ** -0.5, params=params_v)
    return v, t


def from_unit_frequency(profile_v, t, mu, q=None, a=None):
    """
    λ_μ = (t/μ)^{2/(qγ_q-q)} and u(x) = λ^{(N-2)/4} v(λ^{1/2} x).

    Returns:
        tuple: (RadialProfile u, λ_μ)
    """
    if not (t > 0 and mu > 0):
        raise ParameterError(f"t and mu must be positive, got t={t}, mu={mu}")
    P = profile_v.params
    q = q or P.q
    N = P.N
    lam = frequency_of(t, mu, q, N)
    params_u = P.with_(t=mu, lam=lam, mu=mu, a=a)
    u = profile_v.scaled(alpha=lam ** ((N - 2) / 4.0), beta=lam ** 0.5, params=params_u)
    return u, lam


def mu_of_t(t, vq, a, q, N):
    """
    μ_t = a^{qγ-q} [(1-γ) ‖v_t‖_q^q t^{(q-qγ+2)/(q-qγ)}]^{(q-qγ)/2}, the unique
    μ with F(t, μ) = 0.
    """
    if not (t > 0 and vq > 0 and a > 0):
        raise ParameterError(f"mu_of_t needs t, vq, a > 0 (t={t}, vq={vq}, a={a})")
    gamma = _gamma(N, q)
    k = q - q * gamma
    return a ** (q * gamma - q) * ((1.0 - gamma) * vq * t ** ((k + 2.0) / k)) ** (k / 2.0)


def reduction_residual(t, mu, vq, a, q, N):
    """F(t, μ) = t^{2/(qγ-q)-1} - (1-γ)‖v_t‖_q^q / (a² μ^{2/(q-qγ)})."""
    gamma = _gamma(N, q)
    e = 2.0 / (q * gamma - q)
    return t ** (e - 1.0) - (1.0 - gamma) * vq * mu ** e / a ** 2


def reduction_point(t, mu, vq, a, q, N):
    """Frequency λ_μ and residual F(t, μ) for one pair; F = 0 exactly at μ = μ_t."""
    return ReductionPoint(t=t, lam=frequency_of(t, mu, q, N), mu=mu, a=a, vq=vq,
                          F=reduction_residual(t, mu, vq, a, q, N))


def rescale_unit_coefficient(profile_v, t=None, q=None):
    """
    w = t^{1/(q-2)} v, which solves -Δw + w = |w|^{q-2}w + t^{-(2*-2)/(q-2)}|w|^{2*-2}w.
    """
    P = profile_v.params
    t = P.t if t is None else t
    q = q or P.q
    if not t > 0:
        raise ParameterError(f"coupling must be positive, got {t}")
    alpha = t ** (1.0 / (q - 2.0))
    params_w = P.with_(t=1.0, crit_coef=P.crit_coef * t ** (-(P.crit_exp - 2.0) / (q - 2.0)))
    return profile_v.scaled(alpha=alpha, params=params_w)


def action(profile_u, mu, q=None):
    """𝒜_μ(u) = ½‖∇u‖₂² - μ/q ‖u‖_q^q - 1/2* ‖u‖_{2*}^{2*}."""
    P = profile_u.params
    q = q or P.q
    _, grad, lq, crit = profile_u.norms()
    return 0.5 * grad - mu * lq / q - P.c * crit / P.crit_exp


# --- Curves ---

def _ground_state(params, d_guess=None, settings=None, n_scan=200):
    if d_guess is not None:
        return ground_state_near(params, d_guess, settings=settings)
    records = find_positive_solutions(params, n_scan=n_scan, settings=settings)
    below = [rec for rec in records if rec.certificate.level_gap < 0]
    if not below:
        return None
    return min(below, key=lambda rec: rec.certificate.energy)


def sample_curve(base, a, t_grid, settings=None, progress=False):
    """
    Sample t ↦ (‖v_t‖_q^q, μ_t, m(t)) from fixed-frequency ground states.

    Args:
        base: ProblemParams carrying N, q (λ is forced to 1)
        a: mass target
        t_grid: couplings to sample
        settings: shooting settings (optional)

    Returns:
        ReductionCurve; points with no ground state below the bubble level are NaN
    """
    check_exponent(base.N, base.q)
    s = DEFAULT_SETTINGS.copy()
    n_scan = (settings or {}).get('n_scan', s['n_scan'])
    ts = np.sort(np.asarray(t_grid, dtype=float))
    vqs, mus, energies, heights = (np.full(ts.size, np.nan) for _ in range(4))
    for i, t in enumerate(tqdm(ts, disable=not progress, desc="mu_t", leave=False)):
        params = base.with_(t=float(t), lam=1.0)
        try:
            rec = _ground_state(params, settings=settings, n_scan=n_scan)
        except NLSError as e:
            logger.warning("ground state at t=%.6g failed: %s", t, e)
            continue
        if rec is None:
            continue
        vqs[i] = rec.certificate.lq
        mus[i] = mu_of_t(float(t), rec.certificate.lq, a, base.q, base.N)
        energies[i] = rec.certificate.energy
        heights[i] = rec.height
    return ReductionCurve(N=base.N, q=base.q, a=a, ts=ts, vqs=vqs, mus=mus, energies=energies, heights=heights)


def find_mu_roots(ts, mus, mu, mu_fn=None, rtol=1e-10):
    """
    All t with μ_t = μ: bracket sign changes of μ_t - μ on the samples, then
    refine each bracket with `mu_fn` (fresh evaluations) or linear interpolation.

    Raises:
        CurveResolutionError: a sampled bracket does not hold up under refinement
    """
    ts = np.asarray(ts, dtype=float)
    gaps = np.asarray(mus, dtype=float) - mu
    # exact hits are roots once each; only strict sign changes are refined
    roots = [float(t) for t, g in zip(ts, gaps) if g == 0.0]
    for i in range(ts.size - 1):
        g0, g1 = gaps[i], gaps[i + 1]
        if not (np.isfinite(g0) and np.isfinite(g1)) or g0 * g1 >= 0:
            continue
        t0, t1 = float(ts[i]), float(ts[i + 1])
        if mu_fn is None:
            roots.append(t0 + (t1 - t0) * g0 / (g0 - g1))
            continue
        try:
            root = optimize.brentq(lambda x: mu_fn(x) - mu, t0, t1, rtol=rtol, xtol=1e-300)
        except ValueError as e:
            raise CurveResolutionError(f"bracket [{t0:.6g}, {t1:.6g}] lost its sign change: {e}") from e
        roots.append(float(root))
    return sorted(roots)


def sup_mu(curve, settings=None, mu_fn=None):
    """
    Supremum of the sampled μ_t with its attaining t.

    Returns:
        dict: t_sup, mu_sup, error (refined minus best sample), unimodal flag
    """
    valid = curve.valid
    if not valid.any():
        return {'t_sup': math.nan, 'mu_sup': math.nan, 'error': math.nan, 'unimodal': False}
    ts, mus = curve.ts[valid], curve.mus[valid]
    i = int(np.argmax(mus))
    steps = np.sign(np.diff(mus))
    steps = steps[steps != 0]
    unimodal = bool(np.sum(steps[1:] != steps[:-1]) <= 1)
    best_t, best_mu = float(ts[i]), float(mus[i])
    if mu_fn is None or i in (0, ts.size - 1):
        return {'t_sup': best_t, 'mu_sup': best_mu, 'error': math.nan, 'unimodal': unimodal}
    s = DEFAULT_SETTINGS.copy()
    s.update(settings or {})
    lo, hi = math.log(ts[i - 1]), math.log(ts[i + 1])
    res = optimize.minimize_scalar(lambda x: -mu_fn(math.exp(x)), bounds=(lo, hi), method='bounded',
                                   options={'xatol': s['sup_xatol']})
    refined_t, refined_mu = math.exp(res.x), -res.fun
    if refined_mu < best_mu:
        refined_t, refined_mu = best_t, best_mu
    return {'t_sup': refined_t, 'mu_sup': refined_mu, 'error': refined_mu - best_mu, 'unimodal': unimodal}


def curve_mu_fn(curve, base, settings=None):
    """μ_t by a fresh ground-state solve, warm-started from the nearest sample height."""
    valid = curve.valid
    ts, heights = curve.ts[valid], curve.heights[valid]

    def mu_fn(t):
        j = int(np.argmin(np.abs(np.log(ts / t))))
        guess = heights[j]
        if base.N == 3 and base.q < 4:
            guess *= (ts[j] / t) ** (1.0 / (base.q - 2.0))
        rec = ground_state_near(base.with_(t=float(t), lam=1.0), guess, settings=settings)
        return mu_of_t(float(t), rec.certificate.lq, curve.a, curve.q, curve.N)

    return mu_fn


def solve_normalized(mu, a, base, curve, settings=None):
    """
    Normalized solutions at coupling μ and mass a² generated by the
    fixed-frequency ground states on the sampled curve.

    Returns:
        list of NormalizedSolution ordered by t; empty when μ > sup μ_t
    """
    if not (mu > 0 and a > 0):
        raise ParameterError(f"mu and a must be positive, got mu={mu}, a={a}")
    if curve.a != a:
        # μ_t(a) = a^{qγ-q} μ_t(1)
        gamma = _gamma(curve.N, curve.q)
        factor = (a / curve.a) ** (curve.q * gamma - curve.q)
        curve = ReductionCurve(curve.N, curve.q, a, curve.ts, curve.vqs, curve.mus * factor,
                               curve.energies, curve.heights)
    valid = curve.valid
    if not valid.any() or mu > np.nanmax(curve.mus):
        logger.info("mu=%.6g above sup of sampled mu_t at a=%.6g; no normalized solutions", mu, a)
        return []

    ts, mus, heights = curve.ts[valid], curve.mus[valid], curve.heights[valid]
    s = DEFAULT_SETTINGS.copy()
    s.update(settings or {})
    solved = {}

    def mu_fn(t):
        j = int(np.argmin(np.abs(np.log(ts / t))))
        rec = ground_state_near(base.with_(t=float(t), lam=1.0), heights[j], settings=settings)
        solved[t] = rec
        return mu_of_t(float(t), rec.certificate.lq, a, curve.q, curve.N)

    roots = find_mu_roots(ts, mus, mu, mu_fn, rtol=s['root_rtol'])
    solutions = []
    for t in roots:
        rec = solved.get(t) or ground_state_near(base.with_(t=t, lam=1.0),
                                                 heights[int(np.argmin(np.abs(np.log(ts / t))))],
                                                 settings=settings)
        solutions.append(normalized_from_record(rec, t, mu, a))
    if solutions:
        best = min(range(len(solutions)), key=lambda k: solutions[k].action)
        solutions[best] = replace(solutions[best], ground_state=True)
    return solutions


def normalized_from_record(record, t, mu, a):
    """Back-transform a fixed-frequency solution and book-keep its residuals."""
    q = record.profile.params.q
    u, lam = from_unit_frequency(record.profile, t, mu, q, a=a)
    cert = energy(u)
    gamma = u.params.gamma_q
    value = action(u, mu, q)
    mass_res = (lam * a ** 2 - (1.0 - gamma) * mu * cert.lq) / (lam * a ** 2)
    bookkeeping = value + lam * a ** 2 / 2.0 - record.certificate.energy
    return NormalizedSolution(
        profile=u,
        lam=lam,
        mu=mu,
        a=a,
        t=t,
        action=value,
        mass_res=mass_res,
        mass_error=(cert.mass - a ** 2) / a ** 2,
        bookkeeping_res=bookkeeping,
        point=reduction_point(t, mu, record.certificate.lq, a, q, u.params.N),
    )
