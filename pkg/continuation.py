"""
Continuation in the coupling t: least energy m(t), the threshold t_q*,
asymptotic exponent fits and the derivative identity m'(t) = -‖v_t‖_q^q/q.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy import optimize, stats
from tqdm import tqdm

from functionals import DEFAULT_CERT_TOL, bubble_level
from models import (
    FitResult,
    NLSError,
    ParameterError,
    SweepResult,
    SweepSample,
    ThresholdBracketError,
    ThresholdReport,
)
from radial_shooting import find_positive_solutions

logger = logging.getLogger(__name__)

# --- Constants ---
DEFAULT_SETTINGS = {
    'n_scan': 200,
    'cert_tol': DEFAULT_CERT_TOL,
    'monotone_tol': 1e-4,
    'scaled_monotone_tol': 0.02,
    'min_fit_samples': 6,
    'ratio_bound': 10.0,
    'bracket_xtol': 1e-2,
    'two_solution_t': 1e3,
    'one_solution_t': 1e-2,
    'offsets': (0.3, 1e-3),
    'n_offsets': 8,
}


def expected_rates(N, q):
    """
    Large-t exponents: m(t) ~ t^{-N/(qγ)}, ‖v_t‖_q^q ~ t^{-N/(qγ)-1}, the
    first branch ‖u‖_∞ ~ t^{-1/(q-2)} and, for N=3 with q<4, the second
    branch rate (q=3 is t ln t and carries no pure exponent).
    """
    gamma = N * (q - 2.0) / (2.0 * q)
    rates = {
        'm': -N / (q * gamma),
        'vq_norm': -N / (q * gamma) - 1.0,
        'sup_norm_1': -1.0 / (q - 2.0),
    }
    if N == 3 and q < 4.0:
        if abs(q - 3.0) < 1e-12:
            rates['sup_norm_2'] = None
        elif q > 3.0:
            rates['sup_norm_2'] = 1.0 / (4.0 - q)
        else:
            rates['sup_norm_2'] = 1.0 / (q - 2.0)
    return rates


# --- Sweep ---

def sweep_point(job):
    """One sweep node; returns a SweepSample, recording failures instead of raising."""
    params, t, settings = job
    s = DEFAULT_SETTINGS.copy()
    s.update(settings or {})
    ceiling = bubble_level(params.N)
    try:
        records = find_positive_solutions(params.with_(t=float(t)), n_scan=s['n_scan'], settings=settings)
    except NLSError as e:
        logger.warning("sweep point t=%.6g failed: %s", t, e)
        return SweepSample(t=float(t), m=math.nan, vq=math.nan, sup_norm_1=math.nan, sup_norm_2=math.nan,
                           n_solutions=0, valid=False, error=str(e))
    below = [rec for rec in records if rec.certificate.energy < ceiling]
    sup_1 = records[0].height if records else math.nan
    sup_2 = records[-1].height if len(records) >= 2 else math.nan
    if below:
        ground = min(below, key=lambda rec: rec.certificate.energy)
        return SweepSample(t=float(t), m=ground.certificate.energy, vq=ground.certificate.lq,
                           sup_norm_1=sup_1, sup_norm_2=sup_2, n_solutions=len(records))
    # no ground state below the bubble level: m(t) sits at the ceiling
    return SweepSample(t=float(t), m=ceiling, vq=0.0, sup_norm_1=sup_1, sup_norm_2=sup_2,
                       n_solutions=len(records), at_ceiling=True)


def sweep(params, t_grid, settings=None, workers=1, progress=False):
    """
    Sweep the coupling over t_grid and assemble m(t) with its threshold bracket.

    Args:
        params: ProblemParams carrying N, q, λ and the critical switch
        t_grid: couplings (sorted internally)
        settings: shooting and sweep settings (optional)
        workers: size of the process pool; 1 runs in-process

    Returns:
        SweepResult with invariant violations listed (never raised)
    """
    s = DEFAULT_SETTINGS.copy()
    s.update(settings or {})
    ts = sorted(float(t) for t in t_grid)
    if len(ts) < 2:
        raise ParameterError("a sweep needs at least two couplings")
    jobs = [(params, t, settings) for t in ts]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            samples = list(tqdm(pool.map(sweep_point, jobs), total=len(jobs),
                                disable=not progress, desc="sweep"))
    else:
        samples = [sweep_point(job) for job in tqdm(jobs, disable=not progress, desc="sweep")]

    result = SweepResult(N=params.N, q=params.q, samples=samples)
    result.t_star_estimate = estimate_threshold(samples, params.N, s['cert_tol'])
    result.two_solution_t = two_solution_onset(samples)
    result.violations = check_sweep_invariants(result, s)
    for message in result.violations:
        logger.warning("sweep invariant: %s", message)
    return result


def estimate_threshold(samples, N, cert_tol=DEFAULT_CERT_TOL):
    """
    Bracket t_q* between the largest t still at the bubble level and the
    first t whose least energy is strictly below S^{N/2}/N (1 - 3 tol).

    Returns:
        tuple (t_lo, t_hi) or None when no sample drops below the level
    """
    level = bubble_level(N) * (1.0 - 3.0 * cert_tol)
    valid = sorted((s for s in samples if s.valid), key=lambda s: s.t)
    previous = 0.0
    for sample in valid:
        if sample.m < level:
            return (previous, sample.t)
        previous = sample.t
    return None


def two_solution_onset(samples):
    """Smallest valid sampled t with at least two positive solutions, or None."""
    ts = [x.t for x in samples if x.valid and x.n_solutions >= 2]
    return min(ts) if ts else None


def check_sweep_invariants(result, settings=None):
    """
    Monotonicity, the bubble ceiling, large-t scaled monotonicity and, for
    N=3 with 2<q<4, two solutions at the top of the grid and at most one at
    the bottom (checked past two_solution_t and below one_solution_t).
    """
    s = DEFAULT_SETTINGS.copy()
    s.update(settings or {})
    ceiling = bubble_level(result.N)
    valid = sorted(result.valid_samples, key=lambda x: x.t)
    messages = []
    for a, b in zip(valid, valid[1:]):
        if b.m > a.m + s['monotone_tol'] * abs(a.m):
            messages.append(f"m increases from {a.m:.17g} at t={a.t:.6g} to {b.m:.17g} at t={b.t:.6g}")
    for x in valid:
        if x.m > ceiling * (1.0 + s['cert_tol']):
            messages.append(f"m={x.m:.17g} exceeds the bubble level {ceiling:.17g} at t={x.t:.6g}")

    below = [x for x in valid if not x.at_ceiling]
    if len(below) >= 4:
        gamma = result.N * (result.q - 2.0) / (2.0 * result.q)
        power = result.N / (result.q * gamma)
        window = below[len(below) // 2:]
        scaled = [x.m * x.t ** power for x in window]
        for (a, sa), (b, sb) in zip(zip(window, scaled), zip(window[1:], scaled[1:])):
            if sb < sa * (1.0 - s['scaled_monotone_tol']):
                messages.append(f"m t^(N/(q gamma)) decreases between t={a.t:.6g} and t={b.t:.6g}")

    if valid and result.N == 3 and 2.0 < result.q < 4.0:
        top, bottom = valid[-1], valid[0]
        if top.t >= s['two_solution_t'] and top.n_solutions < 2:
            messages.append(f"only {top.n_solutions} positive solution(s) at the largest t={top.t:.6g}")
        if bottom.t <= s['one_solution_t'] and bottom.n_solutions > 1:
            messages.append(f"{bottom.n_solutions} positive solutions at the smallest t={bottom.t:.6g}")
    return messages


# --- Fits ---

def _window(ts, ys, window):
    ts = np.asarray(ts, dtype=float)
    ys = np.asarray(ys, dtype=float)
    keep = np.isfinite(ts) & np.isfinite(ys)
    if window is not None:
        keep &= (ts >= window[0]) & (ts <= window[1])
    return ts[keep], ys[keep]


def fit_exponent(ts, ys, window=None, quantity="y", min_samples=None):
    """
    Least-squares slope of log y against log t.

    Returns:
        FitResult with exponent, standard error, prefactor and rms log residual
    """
    min_samples = min_samples or DEFAULT_SETTINGS['min_fit_samples']
    ts, ys = _window(ts, ys, window)
    if ts.size < min_samples:
        raise ParameterError(f"fit needs at least {min_samples} samples in the window, got {ts.size}")
    if np.any(ys <= 0):
        raise ParameterError("fit window contains nonpositive values")
    x, y = np.log(ts), np.log(ys)
    fit = stats.linregress(x, y)
    residual = float(np.sqrt(np.mean((y - fit.intercept - fit.slope * x) ** 2)))
    return FitResult(quantity=quantity, exponent=float(fit.slope), stderr=float(fit.stderr),
                     prefactor=float(math.exp(fit.intercept)), residual=residual,
                     window=(float(ts.min()), float(ts.max())), model="power", intercept=float(fit.intercept))


def fit_log_model(ts, ys, window=None, quantity="y", min_samples=None):
    """
    y = t (a + C ln t), fitted by regressing y/t against ln t.

    The residual is the rms of log y minus log of the model, comparable with
    the power fit.
    """
    min_samples = min_samples or DEFAULT_SETTINGS['min_fit_samples']
    ts, ys = _window(ts, ys, window)
    if ts.size < min_samples:
        raise ParameterError(f"fit needs at least {min_samples} samples in the window, got {ts.size}")
    if np.any(ys <= 0):
        raise ParameterError("fit window contains nonpositive values")
    fit = stats.linregress(np.log(ts), ys / ts)
    model = ts * (fit.intercept + fit.slope * np.log(ts))
    if np.any(model <= 0):
        residual = math.inf
    else:
        residual = float(np.sqrt(np.mean((np.log(ys) - np.log(model)) ** 2)))
    return FitResult(quantity=quantity, exponent=1.0, stderr=float(fit.stderr), prefactor=float(fit.slope),
                     residual=residual, window=(float(ts.min()), float(ts.max())), model="t log t",
                     intercept=float(fit.intercept))


def compare_models(ts, ys, window=None, quantity="y"):
    power = fit_exponent(ts, ys, window, quantity)
    logarithmic = fit_log_model(ts, ys, window, quantity)
    preferred = "t log t" if logarithmic.residual < power.residual else "power"
    return {'power': power, 'log': logarithmic, 'preferred': preferred}


def large_t_window(result):
    """Fit window: everything above half a decade past the threshold."""
    valid = result.valid_samples
    if not valid:
        return None
    t_max = max(x.t for x in valid)
    start = min(x.t for x in valid)
    if result.t_star_estimate is not None:
        start = max(start, result.t_star_estimate[1] * math.sqrt(10.0))
    return (start, t_max)


def fit_sweep(result, window=None):
    """Fit every asymptotic exponent the sweep supports and store the fits."""
    window = window or large_t_window(result)
    below = [x for x in result.valid_samples if not x.at_ceiling]
    ts = np.array([x.t for x in below])
    fits = []
    for name, values in (
        ('m', [x.m for x in below]),
        ('vq_norm', [x.vq for x in below]),
        ('sup_norm_1', [x.sup_norm_1 for x in below]),
        ('sup_norm_2', [x.sup_norm_2 for x in below]),
    ):
        try:
            if name == 'sup_norm_2' and abs(result.q - 3.0) < 1e-12 and result.N == 3:
                fits.append(compare_models(ts, values, window, name)['log'])
            else:
                fits.append(fit_exponent(ts, values, window, name))
        except ParameterError as e:
            logger.info("fit of %s skipped: %s", name, e)
    result.fits = fits
    return fits


# --- Identities near and above the threshold ---

def derivative_identity_check(result):
    """
    Max relative violation of m'(t) = -‖v_t‖_q^q/q over interior nodes whose
    neighbours lie on the same side of the threshold.
    """
    valid = sorted(result.valid_samples, key=lambda x: x.t)
    if len(valid) < 3:
        raise ParameterError("derivative check needs at least three valid samples")
    worst = 0.0
    for a, b, c in zip(valid, valid[1:], valid[2:]):
        if not (a.at_ceiling == b.at_ceiling == c.at_ceiling):
            continue
        h0, h1 = b.t - a.t, c.t - b.t
        slope = (h0 ** 2 * c.m - h1 ** 2 * a.m + (h1 ** 2 - h0 ** 2) * b.m) / (h0 * h1 * (h0 + h1))
        target = -b.vq / result.q
        scale = max(abs(slope), abs(target))
        if scale < 1e-300:
            continue
        worst = max(worst, abs(slope - target) / scale)
    return worst


def near_threshold_norms(params, t_star_estimate, vq_of_t=None, gap_of_t=None, settings=None):
    """
    ‖v_t‖_q^q on t_k = t* (1 + δ_k), δ_k geometric over the offsets window.

    The sweep bracket is first narrowed to t* by root-finding on the level
    gap m(t) - S^{N/2}/N (1 - 3 tol), to well below the smallest offset.

    Args:
        params: ProblemParams (N=3 and 2<q<4 apply)
        t_star_estimate: bracket (t_lo, t_hi) from the sweep
        vq_of_t: callable returning ‖v_t‖_q^q; defaults to a ground-state solve
        gap_of_t: callable returning the level gap; positive at the ceiling

    Returns:
        ThresholdReport; `bounded` is False when max/min exceeds the ratio bound
    """
    s = DEFAULT_SETTINGS.copy()
    s.update(settings or {})
    if not (params.N == 3 and 2.0 < params.q < 4.0):
        return ThresholdReport(applicable=False,
                               message=f"no positive threshold of this type for N={params.N}, q={params.q}")
    if t_star_estimate is None:
        raise ThresholdBracketError("no threshold bracket available")
    t_lo, t_hi = t_star_estimate
    if not (0.0 < t_lo < t_hi):
        raise ThresholdBracketError(f"threshold bracket [{t_lo:.6g}, {t_hi:.6g}] has no sample at the ceiling")

    if gap_of_t is None:
        level = bubble_level(params.N) * (1.0 - 3.0 * s['cert_tol'])

        def gap_of_t(t):
            sample = sweep_point((params, t, settings))
            return sample.m - level if sample.valid else math.nan
    if vq_of_t is None:
        def vq_of_t(t):
            sample = sweep_point((params, t, settings))
            return sample.vq if sample.valid and not sample.at_ceiling else math.nan

    def gap(t):
        value = float(gap_of_t(float(t)))
        if not math.isfinite(value):
            raise ThresholdBracketError(f"level gap undefined at t={t:.6g}")
        return value

    big, small = s['offsets']
    if not (gap(t_lo) > 0 > gap(t_hi)):
        raise ThresholdBracketError(f"level gap does not change sign on [{t_lo:.6g}, {t_hi:.6g}]")
    t_star = float(optimize.brentq(gap, t_lo, t_hi, xtol=s['bracket_xtol'] * small * t_lo))
    logger.info("threshold refined to t*=%.9g from [%.6g, %.6g]", t_star, t_lo, t_hi)

    offsets = np.geomspace(big, small, s['n_offsets'])
    ts = t_star * (1.0 + offsets)
    values = np.array([vq_of_t(float(t)) for t in ts], dtype=float)
    finite = values[np.isfinite(values) & (values > 0)]
    if finite.size < 2:
        return ThresholdReport(applicable=True, ts=tuple(ts), values=tuple(values), bounded=False,
                               t_star=t_star, message="too few ground states above the threshold")
    ratio = float(finite.max() / finite.min())
    return ThresholdReport(applicable=True, ts=tuple(float(t) for t in ts), values=tuple(float(v) for v in values),
                           ratio=ratio, bounded=ratio <= s['ratio_bound'], t_star=t_star)
