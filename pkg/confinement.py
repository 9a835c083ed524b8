"""
Partially confined ground states: minimizers of

    𝒥_t(w) = ½(‖∇w‖₂² + ‖w‖₂² + t⁻²∫V w²) - 1/p ‖w‖_p^p,   V = x₁² + x₂²,

on the Nehari manifold, computed on an axisymmetric (s, z) mesh, and the
reduction to normalized solutions with mass r² and multiplier λ = t.
"""
import logging
import math
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import splu
from tqdm import tqdm

from continuation import fit_exponent
from models import (
    BoundaryContaminationError,
    ConfinedMesh,
    ConfinedState,
    ConvergenceError,
    NormalizedConfined,
    ParameterError,
    ProblemParams,
    ReductionBracketError,
)
from radial_shooting import shoot_ground_state

logger = logging.getLogger(__name__)

# --- Constants ---
DEFAULT_SETTINGS = {
    'n_s': 257,
    'n_z': 513,
    'extent': 16.0,
    'dtau': 2.0,
    'dtau_min': 1e-6,
    'tol': 1e-8,
    'max_iter': 5000,
    'boundary_tol': 1e-6,
    'shell': 0.1,
    'agree_tol': 1e-4,
}

W_INFTY_BRACKET = (1.0, 1e4)


def _settings(settings):
    s = DEFAULT_SETTINGS.copy()
    if settings:
        s.update({k: v for k, v in settings.items() if v is not None})
    return s


def _check_p(p):
    if not 2.0 < p < 6.0:
        raise ParameterError(f"exponent p must lie in (2, 6), got {p}")


# --- Limit profile ---

@lru_cache(maxsize=None)
def _w_infty(p):
    params = ProblemParams(N=3, q=p, t=1.0, lam=1.0, crit_on=False, p=p)
    return shoot_ground_state(params, W_INFTY_BRACKET)


def solve_w_infty(p, settings=None):
    """
    Unique positive radial solution of -Δw + w = w^{p-1} in R³.

    Returns:
        SolutionRecord (profile plus certificate)
    """
    _check_p(p)
    if settings:
        params = ProblemParams(N=3, q=p, t=1.0, lam=1.0, crit_on=False, p=p)
        return shoot_ground_state(params, W_INFTY_BRACKET, settings)
    return _w_infty(float(p))


# --- Mesh and discrete operators ---

def build_mesh(t, n_s=None, n_z=None, extent=None):
    """
    Mesh on [0, L) x (-L, L) with L = extent·min(1, √t).

    Small t shrinks the box with the √t width of the confined profile.
    """
    s = _settings({'n_s': n_s, 'n_z': n_z, 'extent': extent})
    if s['n_z'] % 2 == 0:
        raise ParameterError("n_z must be odd so that z = 0 is a node")
    length = s['extent'] * min(1.0, math.sqrt(t))
    hs = length / s['n_s']
    hz = 2.0 * length / (s['n_z'] + 1)
    return ConfinedMesh(
        s=np.arange(s['n_s']) * hs,
        z=-length + (np.arange(s['n_z']) + 1) * hz,
        hs=hs,
        hz=hz,
    )


def stiffness(mesh):
    """
    Finite-volume Dirichlet form: wᵀKw ≈ ∫|∇w|², with the axis as a
    natural (Neumann) boundary and w = 0 on the outer walls.
    """
    n_s, n_z = mesh.shape
    hs, hz = mesh.hs, mesh.hz
    face_s = 2.0 * np.pi * (mesh.s + 0.5 * hs) * hz / hs
    d_s = sparse.diags([-np.ones(n_s), np.ones(n_s - 1)], [0, 1], shape=(n_s, n_s))
    d_z = sparse.diags([np.ones(n_z), -np.ones(n_z)], [0, -1], shape=(n_z + 1, n_z))
    k_s = d_s.T @ sparse.diags(face_s) @ d_s
    k_z = d_z.T @ d_z
    return (sparse.kron(k_s, sparse.identity(n_z))
            + sparse.kron(sparse.diags(mesh.ring_areas / hz), k_z)).tocsc()


class ConfinedProblem:
    """
    Discrete 𝒥_t on one mesh.

    Args:
        mesh: ConfinedMesh
        t: confinement scale
        p: exponent
    """

    def __init__(self, mesh, t, p):
        _check_p(p)
        if not t > 0:
            raise ParameterError(f"confinement scale must be positive, got {t}")
        self.mesh = mesh
        self.t = float(t)
        self.p = float(p)
        self.K = stiffness(mesh)
        self.vol = mesh.volumes.ravel()
        self.V = mesh.potential.ravel()
        self.weight = self.vol * (1.0 + self.V / self.t ** 2)

    def quantities(self, w):
        flat = w.ravel()
        grad = float(flat @ (self.K @ flat))
        mass = float(np.sum(self.vol * flat ** 2))
        potential = float(np.sum(self.vol * self.V * flat ** 2))
        lp = float(np.sum(self.vol * np.abs(flat) ** self.p))
        value = 0.5 * (grad + mass + potential / self.t ** 2) - lp / self.p
        return {'grad': grad, 'mass': mass, 'potential': potential, 'lp': lp, 'energy': value}

    def residual(self, w):
        """Relative L² size of the discrete Euler-Lagrange residual."""
        flat = w.ravel()
        force = self.vol * np.abs(flat) ** (self.p - 1)
        g = self.K @ flat + self.weight * flat - force
        return float(math.sqrt(np.sum(g ** 2 / self.vol) / np.sum(force ** 2 / self.vol)))

    def nehari(self, w):
        q = self.quantities(w)
        quadratic = q['grad'] + q['mass'] + q['potential'] / self.t ** 2
        if not q['lp'] > 0:
            raise ConvergenceError("iterate vanished")
        return w * (quadratic / q['lp']) ** (1.0 / (self.p - 2.0))

    def factor(self, dtau):
        matrix = sparse.diags(self.vol) + dtau * (self.K + sparse.diags(self.weight))
        return splu(matrix.tocsc())

    def flow_step(self, lu, w, dtau):
        rhs = self.vol * (w.ravel() + dtau * np.abs(w.ravel()) ** (self.p - 1))
        return lu.solve(rhs).reshape(w.shape)

    def boundary_fraction(self, w):
        mesh = self.mesh
        s_edge = mesh.s >= (1.0 - DEFAULT_SETTINGS['shell']) * mesh.s_max
        z_edge = np.abs(mesh.z) >= (1.0 - DEFAULT_SETTINGS['shell']) * mesh.z_max
        shell = s_edge[:, None] | z_edge[None, :]
        density = mesh.volumes * w ** 2
        return float(density[shell].sum() / density.sum())


def symmetrize(w):
    """Project onto nonnegative, z-even, s- and |z|-nonincreasing grids."""
    w = np.maximum(w, 0.0)
    w = 0.5 * (w + w[:, ::-1])
    w = np.minimum.accumulate(w, axis=0)
    centre = w.shape[1] // 2
    right = np.minimum.accumulate(w[:, centre:], axis=1)
    return np.concatenate((right[:, :0:-1], right), axis=1)


def initial_guess(mesh, t, p, initial=None):
    ss, zz = np.meshgrid(mesh.s, mesh.z, indexing='ij')
    if initial is not None:
        interp = RegularGridInterpolator((initial.mesh.s, initial.mesh.z), initial.w,
                                         bounds_error=False, fill_value=0.0)
        return interp(np.stack((ss, zz), axis=-1))
    if t >= 1.0:
        return solve_w_infty(p).profile.value_at(np.hypot(ss, zz))
    return t ** (-1.0 / (p - 2.0)) * np.exp(-(ss ** 2 + zz ** 2) / (2.0 * t))


def solve_confined(t, p, mesh=None, settings=None, initial=None):
    """
    Nehari-projected implicit gradient flow for the confined ground state.

    Args:
        t: confinement scale (> 0)
        p: exponent in (2, 6)
        mesh: ConfinedMesh (defaults to build_mesh(t) with the settings' sizes)
        settings: overrides for DEFAULT_SETTINGS
        initial: ConfinedState to warm-start from (optional)

    Returns:
        ConfinedState
    """
    s = _settings(settings)
    mesh = mesh or build_mesh(t, s['n_s'], s['n_z'], s['extent'])
    problem = ConfinedProblem(mesh, t, p)

    w = problem.nehari(symmetrize(initial_guess(mesh, t, p, initial)))
    current = problem.quantities(w)['energy']
    history = [current]
    dtau = s['dtau']
    lu = problem.factor(dtau)
    residual = problem.residual(w)
    iterations = 0
    while residual >= s['tol']:
        if iterations >= s['max_iter']:
            raise ConvergenceError(f"no convergence at t={t:.6g} after {iterations} steps (residual {residual:.3g})")
        iterations += 1
        candidate = problem.nehari(symmetrize(problem.flow_step(lu, w, dtau)))
        value = problem.quantities(candidate)['energy']
        if value <= current + 1e-13 * abs(current):
            w, current = candidate, value
            history.append(current)
            residual = problem.residual(w)
            continue
        dtau *= 0.5
        if dtau < s['dtau_min']:
            raise ConvergenceError(f"step size collapsed at t={t:.6g} (residual {residual:.3g})")
        logger.debug("energy rose at t=%.6g; halving step to %.3g", t, dtau)
        lu = problem.factor(dtau)

    fraction = problem.boundary_fraction(w)
    if fraction > s['boundary_tol']:
        raise BoundaryContaminationError(
            f"{fraction:.3g} of the mass sits next to the walls at t={t:.6g}; enlarge the mesh")
    q = problem.quantities(w)
    logger.debug("confined t=%.6g converged in %d steps, energy %.17g", t, iterations, q['energy'])
    return ConfinedState(mesh=mesh, w=w, t=float(t), p=float(p), mass=q['mass'], grad=q['grad'],
                         lp=q['lp'], potential=q['potential'], energy=q['energy'],
                         residual=residual, iterations=iterations, history=tuple(history))


def state_distance(a, b):
    """Relative discrete H¹ distance between two states on the same mesh."""
    problem = ConfinedProblem(a.mesh, a.t, a.p)
    diff = (a.w - b.w).ravel()
    ref = b.w.ravel()
    num = diff @ (problem.K @ diff) + np.sum(problem.vol * diff ** 2)
    den = ref @ (problem.K @ ref) + np.sum(problem.vol * ref ** 2)
    return float(math.sqrt(num / den))


def distance_to_limit(state):
    """Relative discrete H¹ distance between w_t and w_∞ sampled on the mesh."""
    mesh = state.mesh
    ss, zz = np.meshgrid(mesh.s, mesh.z, indexing='ij')
    limit = solve_w_infty(state.p).profile.value_at(np.hypot(ss, zz))
    proxy = ConfinedState(mesh, limit, state.t, state.p, 0.0, 0.0, 0.0, 0.0, 0.0)
    return state_distance(state, proxy)


# --- Reduction to normalized solutions ---

def mass_exponent(p):
    """(10 - 3p) / (2(p - 2)), the power of t in r_t²."""
    return (10.0 - 3.0 * p) / (2.0 * (p - 2.0))


def _bracket(state):
    p = state.p
    return (6.0 - p) / (2.0 * p) * state.lp - 2.0 * state.potential / state.t ** 2


def f_of(r, t, state):
    """f(r, t) = r² - t^{(10-3p)/(2(p-2))} ((6-p)/(2p)‖w_t‖_p^p - 2t⁻²∫V w_t²)."""
    if abs(state.t - t) > 1e-12 * t:
        raise ParameterError(f"state was solved at t={state.t}, not t={t}")
    return r ** 2 - t ** mass_exponent(state.p) * _bracket(state)


def r_of_t(state):
    """The unique r_t > 0 with f(r_t, t) = 0."""
    bracket = _bracket(state)
    if not bracket > 0:
        raise ReductionBracketError(f"bracket {bracket:.6g} is not positive at t={state.t:.6g}")
    return math.sqrt(state.t ** mass_exponent(state.p) * bracket)


def normalized_from_confined(state):
    """
    u(x) = t^{1/(p-2)} w(t^{1/2} x) with multiplier λ = t.

    Returns:
        NormalizedConfined; `pohozaev_res` is the relative residual of
        λr² - (6-p)/(2p)‖u‖_p^p + 2∫V u² and `mass_mismatch` compares
        ‖u‖₂² with r_t².
    """
    t, p = state.t, state.p
    r_t = r_of_t(state)
    mesh = state.mesh.scaled(t ** -0.5)
    u = t ** (1.0 / (p - 2.0)) * state.w
    q = ConfinedProblem(mesh, 1.0, p).quantities(u)
    mass = q['mass']
    r = math.sqrt(mass)
    pohozaev = (t * mass - (6.0 - p) / (2.0 * p) * q['lp'] + 2.0 * q['potential']) / (t * mass)
    return NormalizedConfined(mesh=mesh, u=u, lam=t, p=p, r=r, r_t=r_t, mass=mass, grad=q['grad'],
                              lp=q['lp'], potential=q['potential'], pohozaev_res=pohozaev,
                              mass_mismatch=(mass - r_t ** 2) / r_t ** 2)


def fibering_tau(solution, tau):
    """
    Mass-preserving fibering 𝒯(τ) = τ²/2 ‖∇u‖₂² + 1/(2τ²)∫V u² - τ^{pγ_p}/p ‖u‖_p^p.

    Returns:
        tuple: (𝒯, 𝒯', 𝒯'')
    """
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    p = solution.p
    gamma = ProblemParams(N=3, p=p).gamma_p
    k = p * gamma
    G, P, L = solution.grad, solution.potential, solution.lp
    value = 0.5 * tau ** 2 * G + P / (2.0 * tau ** 2) - tau ** k * L / p
    first = tau * G - P / tau ** 3 - gamma * tau ** (k - 1.0) * L
    second = G + 3.0 * P / tau ** 4 - gamma * (k - 1.0) * tau ** (k - 2.0) * L
    return value, first, second


def mesh_refinement(t, p, settings=None, state=None):
    """
    Re-solve at t with both spacings halved.

    The fibering slope 𝒯'(1)/‖∇u‖₂² vanishes for the exact solution and is
    O(h²) on a mesh, so the two meshes give a Richardson estimate.

    Args:
        t: confinement scale
        p: exponent
        settings: mesh and flow settings of the coarse solve
        state: coarse ConfinedState already solved with `settings` (optional)

    Returns:
        dict with 'coarse', 'fine', 'energy_change' (relative), 'tau1_coarse',
        'tau1_fine', 'tau1' (extrapolated) and 'tau2' (on the fine mesh)
    """
    s = _settings(settings)
    coarse = state if state is not None else solve_confined(t, p, settings=s)
    fine = solve_confined(t, p, settings={**s, 'n_s': 2 * s['n_s'], 'n_z': 2 * s['n_z'] + 1}, initial=coarse)
    slopes = []
    for current in (coarse, fine):
        solution = normalized_from_confined(current)
        _, first, second = fibering_tau(solution, 1.0)
        slopes.append(first / solution.grad)
    change = abs(fine.energy - coarse.energy) / abs(fine.energy)
    logger.info("mesh refinement at t=%.6g: energy change %.3g, slope %.3g -> %.3g",
                t, change, slopes[0], slopes[1])
    return {'coarse': coarse, 'fine': fine, 'energy_change': change, 'tau1_coarse': slopes[0],
            'tau1_fine': slopes[1], 'tau1': (4.0 * slopes[1] - slopes[0]) / 3.0, 'tau2': second}


# --- Families in t ---

def solve_family(ts, p, settings=None, warm=True, progress=False):
    """
    Solve along t from the largest value down, warm-starting each solve.

    Returns:
        list of ConfinedState in descending t
    """
    states = []
    previous = None
    for t in tqdm(sorted((float(x) for x in ts), reverse=True), disable=not progress, desc="confine"):
        state = solve_confined(t, p, settings=settings, initial=previous if warm else None)
        states.append(state)
        previous = state
    return states


def uniqueness_onset(ts, p, settings=None, progress=False):
    """
    Compare warm- and cold-started solves; report the smallest t from which
    every larger sampled t agrees.

    Returns:
        dict: 'rows' of (t, distance, agree) and 't_onset' (None if the top disagrees)
    """
    s = _settings(settings)
    warm = solve_family(ts, p, settings, warm=True, progress=progress)
    rows = []
    for state in warm:
        cold = solve_confined(state.t, p, settings=settings)
        distance = state_distance(state, cold)
        rows.append((state.t, distance, distance < s['agree_tol']))
    onset = None
    for t, _, agree in rows:
        if not agree:
            break
        onset = t
    return {'rows': rows, 't_onset': onset}


def multiplier_law(p, ts, settings=None, progress=False):
    """
    Multiplier λ = t against r_t; the fitted slope of log λ over log r
    approaches -4(p-2)/(3p-10) as r → 0.
    """
    if not p > 10.0 / 3.0:
        raise ParameterError(f"the multiplier law needs p > 10/3, got {p}")
    states = solve_family(ts, p, settings, progress=progress)
    rows = [(state.t, r_of_t(state)) for state in states]
    rs = np.array([r for _, r in rows])
    lams = np.array([t for t, _ in rows])
    fit = fit_exponent(rs, lams, quantity='lambda', min_samples=3)
    return {'rows': rows, 'fit': fit, 'expected': -4.0 * (p - 2.0) / (3.0 * p - 10.0), 'states': states}


def mass_law(p, ts, settings=None, progress=False):
    """Small-t law ‖w_t‖₂² ~ t^{(3p-10)/(2(p-2))}."""
    states = solve_family(ts, p, settings, progress=progress)
    ts_arr = np.array([state.t for state in states])
    masses = np.array([state.mass for state in states])
    fit = fit_exponent(ts_arr, masses, quantity='mass', min_samples=3)
    return {'fit': fit, 'expected': (3.0 * p - 10.0) / (2.0 * (p - 2.0)), 'states': states}
