"""
Radial shooting for positive solutions of

    u'' + (N-1)/r u' = λu - t u^{q-1} - c u^{2*-1},   u(0) = d, u'(0) = 0.

A shot from height d is classified by how the trajectory leaves the decaying
separatrix: it overshoots (crosses zero), undershoots (turns back up), or
decays. Heights where the classification flips are bisected to the
decaying solutions.
"""
import logging
import math
from collections import namedtuple

import numpy as np
from scipy import integrate, optimize, stats
from tqdm import tqdm

from functionals import DEFAULT_CERT_TOL, energy
from models import (
    BisectionStallError,
    BracketError,
    IntegrationError,
    ParameterError,
    RadialProfile,
    ShotKind,
    ShotOutcome,
    SolutionKind,
    SolutionRecord,
    TailFitError,
    TailModel,
    sphere_area,
)

logger = logging.getLogger(__name__)

# --- Constants ---
DEFAULT_SETTINGS = {
    'rtol': 1e-8,
    'atol': 1e-10,
    'r0': 1e-6,
    'r_max': None,
    'growth_factor': 10.0,
    'decay_ratio': 1e-8,
    'slope_window': 1e-3,
    'bisect_rtol': 1e-12,
    'max_bisect': 200,
    'divergence_tol': 1e-6,
    'divergence_max': 1e-2,
    'points_per_decade': 2000,
    'outer_step': 1e-3,
    'tail_fit_tol': 1e-2,
    'kappa_tol': 0.05,
    'linear_regime': 0.01,
    'cert_tol': DEFAULT_CERT_TOL,
    'dedup_rtol': 1e-8,
}

MIN_SCAN = 100
TAYLOR_TOL = 1e-6

_Trajectory = namedtuple('_Trajectory', ['d', 'kind', 'r_event', 'sol', 'r0'])


class RadialShooter:
    """
    Shooting solver bound to one ProblemParams.

    Args:
        params: ProblemParams of the fixed-frequency equation
        settings: overrides for DEFAULT_SETTINGS (optional)
    """

    total_shots = 0

    def __init__(self, params, settings=None):
        self.params = params.validate()
        self.settings = DEFAULT_SETTINGS.copy()
        if settings:
            self.settings.update({k: v for k, v in settings.items() if v is not None})
        self.shots = 0

        P = self.params
        self._N = P.N
        self._area = sphere_area(P.N)
        self._crit_exp = P.crit_exp
        self._kappa = math.sqrt(P.lam)

    # --- ODE ---

    def curvature(self, d):
        """u''(0)·N, i.e. λd - t d^{q-1} - c d^{2*-1}."""
        P = self.params
        return P.lam * d - P.t * d ** (P.q - 1) - P.c * d ** (self._crit_exp - 1)

    def start_radius(self, d):
        c0 = self.curvature(d)
        r0 = self.settings['r0']
        if c0 != 0:
            r0 = min(r0, math.sqrt(2.0 * self._N * TAYLOR_TOL * d / abs(c0)))
        return r0

    def _initial_state(self, d, r0):
        N, area = self._N, self._area
        c0 = self.curvature(d)
        u0 = d + c0 * r0 ** 2 / (2.0 * N)
        du0 = c0 * r0 / N
        ball = area * r0 ** N / N
        return np.array([
            u0,
            du0,
            ball * d ** 2,
            area * (c0 / N) ** 2 * r0 ** (N + 2) / (N + 2),
            ball * d ** self.params.q,
            ball * d ** self._crit_exp,
        ])

    def _rhs(self, r, y):
        P = self.params
        u, du = y[0], y[1]
        up = u if u > 0.0 else 0.0
        force = P.lam * u - P.t * up ** (P.q - 1) - P.c * up ** (self._crit_exp - 1)
        weight = self._area * r ** (self._N - 1)
        au = abs(u)
        return [
            du,
            force - (self._N - 1) / r * du,
            weight * u * u,
            weight * du * du,
            weight * au ** P.q,
            weight * au ** self._crit_exp,
        ]

    def _events(self, d):
        s = self.settings
        kappa = self._kappa

        def crossing(r, y):
            return y[0]
        crossing.terminal = True
        crossing.direction = -1

        def turning(r, y):
            return y[1]
        turning.terminal = True
        turning.direction = 1

        def growth(r, y):
            return y[0] - s['growth_factor'] * d
        growth.terminal = True
        growth.direction = 1

        events = [crossing, turning, growth]
        if kappa <= 0:
            return events

        P, N, ce = self.params, self._N, self._crit_exp
        bessel = (N - 1) * (N - 3) / (8.0 * kappa)

        def decay(r, y):
            # small, linear, and on the decaying Bessel mode w'/w = -κ - (N-1)(N-3)/(8κr²)
            u = y[0]
            if u <= 0.0:
                return u - s['decay_ratio'] * d
            nonlinear = (P.t * u ** (P.q - 2) + P.c * u ** (ce - 2)) / P.lam
            slope = y[1] / u + 0.5 * (N - 1) / r + kappa + bessel / (r * r)
            return max(u - s['decay_ratio'] * d,
                       nonlinear - s['linear_regime'],
                       abs(slope) - s['slope_window'] * kappa)
        decay.terminal = True
        decay.direction = -1

        return events + [decay]

    def default_r_max(self):
        if self.settings['r_max']:
            return float(self.settings['r_max'])
        return 60.0 / self._kappa if self._kappa > 0 else 1e3

    # --- Shots ---

    def trajectory(self, d, r_max=None):
        """Integrate one shot from height d and classify it."""
        if not d > 0:
            raise ParameterError(f"shooting height must be positive, got {d}")
        r_max = r_max or self.default_r_max()
        self.shots += 1
        RadialShooter.total_shots += 1
        r0 = self.start_radius(d)

        if self.curvature(d) >= 0:
            # at or below the bottom of the potential well: u'' >= 0 at the centre
            return _Trajectory(d, ShotKind.BLOWS_UP, r0, None, r0)

        s = self.settings
        atol = s['atol'] * min(d, 1.0 / d)
        sol = integrate.solve_ivp(
            self._rhs, (r0, r_max), self._initial_state(d, r0),
            method='DOP853', rtol=s['rtol'], atol=atol,
            events=self._events(d), dense_output=True,
        )
        if sol.status == -1:
            raise IntegrationError(f"integration failed from d={d:.17g}: {sol.message}")
        if not np.all(np.isfinite(sol.y)):
            raise IntegrationError(f"non-finite state from d={d:.17g}; negative values leaked into powers")

        if sol.status == 1:
            fired = [(ev[0], i) for i, ev in enumerate(sol.t_events) if len(ev)]
            r_event, which = min(fired)
            kind = (ShotKind.CROSSES_ZERO, ShotKind.BLOWS_UP, ShotKind.BLOWS_UP, ShotKind.DECAYS)[which]
        else:
            r_event = float(sol.t[-1])
            u_end, du_end = sol.y[0, -1], sol.y[1, -1]
            if u_end <= 0:
                kind = ShotKind.CROSSES_ZERO
            elif du_end > 0:
                kind = ShotKind.BLOWS_UP
            else:
                kind = ShotKind.DECAYS
        logger.debug("shot d=%.17g -> %s at r=%.6g", d, kind.value, r_event)
        return _Trajectory(d, kind, float(r_event), sol.sol, r0)

    def classify(self, d):
        return self.trajectory(d).kind

    def profile_grid(self, r0, r_end):
        s = self.settings
        top = min(1.0, r_end)
        n_core = max(int(math.ceil(math.log10(top / r0) * s['points_per_decade'])), 2) if top > r0 else 0
        pieces = [[0.0]]
        if n_core:
            pieces.append(np.geomspace(r0, top, n_core))
        if r_end > top:
            pieces.append(np.arange(top, r_end, s['outer_step']))
        pieces.append([r_end])
        return np.unique(np.concatenate(pieces))

    def profile_from(self, traj, r_end):
        """Sample a trajectory on the stored grid up to r_end (no tail)."""
        d = traj.d
        if traj.sol is None:
            r = np.array([0.0, traj.r0])
            zeros = np.zeros(2)
            return RadialProfile(r=r, u=np.full(2, d), du=zeros, params=self.params,
                                 cum_mass=zeros, cum_grad=zeros, cum_lq=zeros, cum_crit=zeros)
        grid = self.profile_grid(traj.r0, r_end)
        states = traj.sol(grid[1:])
        states = np.concatenate((np.array([[d], [0.0], [0.0], [0.0], [0.0], [0.0]]), states), axis=1)
        return RadialProfile(
            r=grid,
            u=states[0],
            du=states[1],
            params=self.params,
            cum_mass=states[2],
            cum_grad=states[3],
            cum_lq=states[4],
            cum_crit=states[5],
        )

    def integrate(self, d, r_max=None):
        traj = self.trajectory(d, r_max)
        return ShotOutcome(kind=traj.kind, r_event=traj.r_event,
                           profile=self.profile_from(traj, traj.r_event), height=d)

    # --- Thresholds ---

    def bisect(self, lo, hi):
        """
        Bisect between two trajectories of different kinds.

        Returns:
            tuple: the final (lo, hi) trajectory pair; both entries are the
            same trajectory when a midpoint decays outright.
        """
        s = self.settings
        for _ in range(s['max_bisect']):
            d_lo, d_hi = lo.d, hi.d
            if abs(d_hi - d_lo) <= s['bisect_rtol'] * max(d_lo, d_hi):
                return lo, hi
            ratio = max(d_lo, d_hi) / min(d_lo, d_hi)
            mid = math.sqrt(d_lo * d_hi) if ratio > 2.0 else 0.5 * (d_lo + d_hi)
            if mid == d_lo or mid == d_hi:
                raise BisectionStallError(f"bisection stalled at d={mid:.17g}")
            traj = self.trajectory(mid)
            if traj.kind == ShotKind.DECAYS:
                return traj, traj
            if traj.kind == lo.kind:
                lo = traj
            else:
                hi = traj
        raise BisectionStallError(f"no convergence after {s['max_bisect']} bisection steps")

    def split_radius(self, lo, hi):
        """
        Radius where a converged bracket stops agreeing.

        The relative tolerance is loosened by decades up to divergence_max
        until the cut lands in the linear regime; otherwise the last cut is
        returned and the tail fit rejects it.
        """
        s, P = self.settings, self.params
        r0 = max(lo.r0, hi.r0)
        r_common = min(lo.r_event, hi.r_event)
        grid = self.profile_grid(r0, r_common)[1:]
        u_lo, u_hi = lo.sol(grid)[0], hi.sol(grid)[0]
        gap = np.abs(u_lo - u_hi) / np.maximum(np.abs(u_lo), np.abs(u_hi))
        tol = s['divergence_tol']
        while True:
            apart = gap > tol
            i = int(np.argmax(apart)) if apart.any() else grid.size - 1
            u_cut = u_lo[i]
            if u_cut > 0 and (P.t * u_cut ** (P.q - 2) + P.c * u_cut ** (self._crit_exp - 2)) \
                    <= s['linear_regime'] * P.lam:
                return float(grid[i])
            if tol >= s['divergence_max'] or not apart.any():
                return float(grid[i])
            tol = min(10.0 * tol, s['divergence_max'])

    def record_from_pair(self, lo, hi):
        """Build the certified solution record from a converged bracket."""
        s = self.settings
        r_cut = lo.r_event if lo is hi else self.split_radius(lo, hi)
        profile = self.profile_from(lo, r_cut)
        profile = extend_tail(profile, s)
        certificate = energy(profile, self.params, s['cert_tol'])
        if not certificate.accepted:
            logger.warning("certificate above tolerance at d=%.17g (nehari %.3g, pohozaev %.3g)",
                           lo.d, certificate.rel_nehari, certificate.rel_pohozaev)
        error = abs(hi.d - lo.d) + 10.0 * s['rtol'] * lo.d
        return SolutionRecord(height=lo.d, profile=profile, certificate=certificate, error_estimate=error)

    def ground_state(self, d_bracket):
        d_a, d_b = sorted(float(x) for x in d_bracket)
        lo, hi = self.trajectory(d_a), self.trajectory(d_b)
        if lo.kind == hi.kind:
            raise BracketError(
                f"heights {d_a:.6g} and {d_b:.6g} both classify as {lo.kind.value}; no threshold in between")
        lo, hi = self.bisect(lo, hi)
        return self.record_from_pair(lo, hi)

    # --- Scans ---

    def scan(self, heights, executor=None, progress=False):
        """Classify each height; returns the list of ShotKind in order."""
        if executor is not None:
            jobs = [(self.params, self.settings, float(d)) for d in heights]
            kinds = list(tqdm(executor.map(_classify_height, jobs), total=len(jobs),
                              disable=not progress, desc="scan", leave=False))
            self.shots += len(jobs)
            RadialShooter.total_shots += len(jobs)
            return kinds
        return [self.classify(float(d)) for d in tqdm(heights, disable=not progress, desc="scan", leave=False)]

    def solutions_on(self, heights, executor=None, progress=False):
        """
        Certified solutions on a height grid.

        A height that decays outright is a solution on its own; otherwise
        neighbouring heights of different kinds are bisected. A decaying
        height between two marks stands in for the flip across it.
        """
        kinds = self.scan(heights, executor, progress)
        marks = [(float(d), k) for d, k in zip(heights, kinds)]
        records = []
        for d, k in marks:
            if k != ShotKind.DECAYS:
                continue
            try:
                traj = self.trajectory(d)
                records.append(self.record_from_pair(traj, traj))
            except (TailFitError, IntegrationError) as e:
                logger.warning("decaying shot at %.6g skipped: %s", d, e)
        for (d_a, k_a), (d_b, k_b) in zip(marks, marks[1:]):
            if k_a == k_b or ShotKind.DECAYS in (k_a, k_b):
                continue
            try:
                lo, hi = self.bisect(self.trajectory(d_a), self.trajectory(d_b))
                records.append(self.record_from_pair(lo, hi))
            except (TailFitError, BisectionStallError, IntegrationError) as e:
                logger.warning("flip in [%.6g, %.6g] skipped: %s", d_a, d_b, e)
        return label_records(records, self.settings['dedup_rtol'])

    def positive_solutions(self, d_max=None, n_scan=200, d_min=None, executor=None, progress=False):
        if n_scan < MIN_SCAN:
            raise ParameterError(f"n_scan must be at least {MIN_SCAN}, got {n_scan}")
        d_min = d_min or well_bottom(self.params)
        d_max = d_max or default_d_max(self.params)
        if not d_max > d_min:
            raise ParameterError(f"height ceiling {d_max:.6g} lies below the scan start {d_min:.6g}")
        heights = np.geomspace(d_min, d_max, n_scan)
        records = self.solutions_on(heights, executor, progress)
        if not records:
            logger.info("no classification flips in [%.6g, %.6g] for %s", d_min, d_max, self.params)
        return records


def _classify_height(job):
    params, settings, d = job
    return RadialShooter(params, settings).classify(d)


# --- Helpers ---

def label_records(records, dedup_rtol=1e-8):
    """Order by height, drop duplicates and mark ground state / blow-up branch."""
    records = sorted(records, key=lambda rec: rec.height)
    unique = []
    for rec in records:
        if unique:
            prev = unique[-1]
            window = max(dedup_rtol * rec.height, rec.error_estimate + prev.error_estimate)
            if abs(rec.height - prev.height) <= window:
                continue
        unique.append(rec)
    if not unique:
        return []
    ground = min(range(len(unique)), key=lambda i: unique[i].certificate.energy)
    # highest remaining height; the ground state itself may sit on top
    branch = max((i for i in range(len(unique)) if i != ground), default=None)
    labelled = []
    for i, rec in enumerate(unique):
        if i == ground:
            kind = SolutionKind.GROUND_STATE
        elif i == branch:
            kind = SolutionKind.BLOW_UP_BRANCH
        else:
            kind = SolutionKind.EXCITED
        labelled.append(SolutionRecord(rec.height, rec.profile, rec.certificate, kind, rec.error_estimate))
    return labelled


def well_bottom(params):
    """Height u_w > 0 where λ = t u^{q-2} + c u^{2*-2}; shots below it undershoot."""
    P = params
    if P.lam <= 0 or (P.t <= 0 and P.c <= 0):
        raise ParameterError("the potential has no well for these parameters; pass d_min explicitly")

    def g(d):
        return P.lam - P.t * d ** (P.q - 2) - P.c * d ** (P.crit_exp - 2)

    hi = 1.0
    while g(hi) > 0:
        hi *= 2.0
    lo = hi
    while g(lo) < 0:
        lo /= 2.0
    if lo == hi:
        return hi
    return float(optimize.brentq(g, lo, hi, xtol=1e-300, rtol=1e-15))


def default_d_max(params):
    """
    Scan ceiling: 10³ times the blow-up scale of the second branch
    (t^{1/(4-q)}, t ln t or t^{1/(q-2)}) for N=3, q<4; 10⁶ otherwise.
    """
    P = params
    if P.N == 3 and P.crit_on and P.q < 4.0 and P.t > 0:
        if abs(P.q - 3.0) < 1e-12:
            scale = P.t * math.log(P.t) if P.t > math.e else 1.0
        elif P.q > 3.0:
            scale = P.t ** (1.0 / (4.0 - P.q))
        else:
            scale = P.t ** (1.0 / (P.q - 2.0))
        return 1e3 * max(scale, 1.0)
    return 1e6


def extend_tail(profile, settings=None):
    """
    Attach the far field A r^{-(N-1)/2} e^{-κr} fitted on the last decade.

    Args:
        profile: decaying RadialProfile whose last point is in the linear regime
        settings: dict with tail_fit_tol, kappa_tol, linear_regime (optional)

    Returns:
        RadialProfile with tail and analytic tail integrals
    """
    s = DEFAULT_SETTINGS.copy()
    if settings:
        s.update(settings)
    P = profile.params
    N = P.N
    if P.lam <= 0:
        raise TailFitError("no exponential far field when lambda <= 0; fit residual undefined")
    r, u = profile.r, profile.u
    u_end = float(u[-1])
    if not u_end > 0:
        raise TailFitError("profile does not end positive")
    nonlinear = (P.t * u_end ** (P.q - 2) + P.c * u_end ** (P.crit_exp - 2)) / P.lam
    if nonlinear > s['linear_regime']:
        raise TailFitError(f"last grid point not in the linear regime (ratio {nonlinear:.3g}); increase r_max")

    window = (u <= 10.0 * u_end) & (r > 0)
    if window.sum() < 8:
        raise TailFitError("too few grid points in the last decade of the profile")
    x = r[window]
    y = np.log(u[window]) + 0.5 * (N - 1) * np.log(x)
    fit = stats.linregress(x, y)
    residual = float(np.max(np.abs(y - (fit.intercept + fit.slope * x))))
    kappa = -fit.slope
    root_lam = math.sqrt(P.lam)
    if residual > s['tail_fit_tol']:
        raise TailFitError(f"tail fit residual {residual:.3g} too large; profile not yet asymptotic")
    if abs(kappa - root_lam) > s['kappa_tol'] * root_lam:
        raise TailFitError(f"fitted decay rate {kappa:.6g} differs from sqrt(lambda)={root_lam:.6g}")
    amplitude = math.exp(fit.intercept)

    area = sphere_area(N)
    r_end = profile.r_end

    def tail_quad(f):
        value, _ = integrate.quad(f, r_end, np.inf, epsabs=0.0, epsrel=1e-10, limit=200)
        return value

    mass = area * amplitude ** 2 * math.exp(-2.0 * kappa * r_end) / (2.0 * kappa)
    grad = tail_quad(lambda x: area * amplitude ** 2 * math.exp(-2.0 * kappa * x)
                     * (kappa + 0.5 * (N - 1) / x) ** 2)

    def power_tail(power):
        return tail_quad(lambda x: area * amplitude ** power * x ** ((N - 1) * (1.0 - 0.5 * power))
                         * math.exp(-power * kappa * x))

    tail = TailModel(
        amplitude=amplitude,
        kappa=kappa,
        r_start=r_end,
        mass=mass,
        grad=grad,
        lq=power_tail(P.q),
        crit=power_tail(P.crit_exp),
        residual=residual,
    )
    return RadialProfile(profile.r, profile.u, profile.du, P, profile.cum_mass,
                         profile.cum_grad, profile.cum_lq, profile.cum_crit, tail)


def quadrature_crosscheck(profile):
    """
    Relative gaps between the co-integrated norms and trapezoid quadrature
    of the stored samples (grid part only).
    """
    P = profile.params
    weight = sphere_area(P.N) * profile.r ** (P.N - 1)
    au = np.abs(profile.u)
    pairs = {
        'mass': (profile.cum_mass[-1], weight * au ** 2),
        'grad': (profile.cum_grad[-1], weight * profile.du ** 2),
        'lq': (profile.cum_lq[-1], weight * au ** P.q),
        'crit': (profile.cum_crit[-1], weight * au ** P.crit_exp),
    }
    return {name: abs(float(co) - float(np.trapezoid(dens, profile.r))) / abs(float(co))
            for name, (co, dens) in pairs.items() if co != 0}


# --- Module API ---

def integrate_radial(params, d, r_max=None, tol=None, settings=None):
    """
    Shoot once from height d.

    Args:
        params: ProblemParams
        d: shooting height u(0)
        r_max: outer radius (optional)
        tol: relative step tolerance; absolute tolerance follows at tol/100

    Returns:
        ShotOutcome with the partial profile up to the classification radius
    """
    settings = dict(settings or {})
    if tol is not None:
        settings.update(rtol=tol, atol=tol * 1e-2)
    return RadialShooter(params, settings).integrate(d, r_max)


def shoot_ground_state(params, d_bracket, settings=None):
    return RadialShooter(params, settings).ground_state(d_bracket)


def find_positive_solutions(params, d_max=None, n_scan=200, d_min=None, settings=None,
                            executor=None, progress=False):
    """
    All decaying positive radial solutions found on a log scan of heights.

    An empty list is a valid outcome (no classification flips).
    """
    shooter = RadialShooter(params, settings)
    return shooter.positive_solutions(d_max, n_scan, d_min, executor, progress)


def ground_state_near(params, d_guess, spread=2.0, n=12, settings=None):
    """
    Least-energy solution with height within a factor `spread` of d_guess.

    Used to follow a branch when the coupling moves a little; falls back to
    the full scan when the local window misses the flip.
    """
    shooter = RadialShooter(params, settings)
    d_min = well_bottom(params)
    lo = max(d_guess / spread, d_min)
    heights = np.geomspace(lo, max(d_guess * spread, lo * spread), n)
    records = shooter.solutions_on(heights)
    if not records:
        logger.debug("local window around d=%.6g missed the flip; full scan", d_guess)
        records = shooter.positive_solutions()
    if not records:
        raise BracketError(f"no positive solution found for {params}")
    return min(records, key=lambda rec: rec.certificate.energy)
