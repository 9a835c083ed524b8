"""
Energy functional, fibering map, Nehari/Pohozaev certificates and the
Aubin-Talenti bubbles used as the energy ceiling.
"""
import logging
import math
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize
from scipy.special import gamma as gamma_fn

from models import (
    Certificate,
    CertificateError,
    ParameterError,
    ProblemParams,
    RadialProfile,
    TailModel,
    sphere_area,
)

logger = logging.getLogger(__name__)

# --- Constants ---
DEFAULT_CERT_TOL = 1e-5
GAUSS_NODES = 8


# --- Bubbles and the Sobolev constant ---

def aubin_talenti(N, eps, r):
    """
    Aubin-Talenti bubble U_ε(r) = [N(N-2)]^{(N-2)/4} (ε/(ε²+r²))^{(N-2)/2}.

    Args:
        N: dimension
        eps: concentration scale (> 0)
        r: radius or array of radii

    Returns:
        float or np.ndarray
    """
    if eps <= 0:
        raise ParameterError(f"bubble scale must be positive, got {eps}")
    r = np.asarray(r, dtype=float)
    value = (N * (N - 2.0)) ** ((N - 2.0) / 4.0) * (eps / (eps ** 2 + r ** 2)) ** ((N - 2.0) / 2.0)
    return float(value) if value.ndim == 0 else value


def aubin_talenti_slope(N, eps, r):
    r = np.asarray(r, dtype=float)
    return -(N - 2.0) * r / (eps ** 2 + r ** 2) * aubin_talenti(N, eps, r)


@lru_cache(maxsize=None)
def sobolev_constant(N):
    """
    Best Sobolev constant S, from quadrature of the bubble U_1.

    U_1 solves -ΔU = U^{2*-1}, so ‖∇U_1‖₂² = ‖U_1‖_{2*}^{2*} = S^{N/2}; S is
    returned as ‖∇U_1‖₂² / ‖U_1‖_{2*}².
    """
    if N < 3:
        raise ParameterError(f"Sobolev constant needs N >= 3, got {N}")
    area = sphere_area(N)
    crit_exp = 2.0 * N / (N - 2)

    def grad_density(r):
        return area * r ** (N - 1) * aubin_talenti_slope(N, 1.0, r) ** 2

    def crit_density(r):
        return area * r ** (N - 1) * aubin_talenti(N, 1.0, r) ** crit_exp

    grad = _half_line_quad(grad_density)
    crit = _half_line_quad(crit_density)
    value = grad / crit ** (2.0 / crit_exp)
    logger.debug("Sobolev constant N=%d: %.15g", N, value)
    return value


def sobolev_constant_closed_form(N):
    """S = πN(N-2)(Γ(N/2)/Γ(N))^{2/N}."""
    return math.pi * N * (N - 2) * (gamma_fn(N / 2.0) / gamma_fn(N)) ** (2.0 / N)


def bubble_level(N):
    """Ground-state energy ceiling S^{N/2}/N."""
    return sobolev_constant(N) ** (N / 2.0) / N


def _half_line_quad(density):
    # the substitution r = x/(1-x) handles the algebraic tail cleanly
    def mapped(x):
        r = x / (1.0 - x)
        return density(r) / (1.0 - x) ** 2

    total = 0.0
    for lo, hi in ((0.0, 0.5), (0.5, 0.9), (0.9, 0.99), (0.99, 1.0)):
        piece, _ = integrate.quad(mapped, lo, hi, epsabs=0.0, epsrel=1e-13, limit=200)
        total += piece
    return total


def _cumulative_gauss(density, r):
    """Cumulative ∫_0^{r_i} density by Gauss-Legendre on each grid cell."""
    nodes, weights = np.polynomial.legendre.leggauss(GAUSS_NODES)
    left, right = r[:-1], r[1:]
    half = 0.5 * (right - left)
    mid = 0.5 * (right + left)
    points = mid[:, None] + half[:, None] * nodes[None, :]
    cells = (density(points) * weights[None, :]).sum(axis=1) * half
    return np.concatenate(([0.0], np.cumsum(cells)))


def bubble_profile(N=3, eps=1.0, r_max=200.0, points_per_decade=400, outer_step=0.01, params=None):
    """
    Exact RadialProfile of the bubble U_ε with its algebraic far field.

    The default params describe -ΔU = U^{2*-1} (t=0, λ=0, critical term on).
    """
    params = params or ProblemParams(N=N, q=min(4.0, 2.0 * N / (N - 2) - 0.5), t=0.0, lam=0.0, crit_on=True)
    inner = np.geomspace(1e-6 * eps, min(eps, r_max), int(6 * points_per_decade))
    outer = np.geomspace(min(eps, r_max), r_max, max(int(np.log10(r_max / min(eps, r_max)) * points_per_decade), 2))
    r = np.unique(np.concatenate(([0.0], inner, outer, np.arange(outer_step, r_max, outer_step), [r_max])))
    area = sphere_area(N)
    crit_exp = params.crit_exp
    q = params.q

    densities = {
        "mass": lambda x: area * x ** (N - 1) * aubin_talenti(N, eps, x) ** 2,
        "grad": lambda x: area * x ** (N - 1) * aubin_talenti_slope(N, eps, x) ** 2,
        "lq": lambda x: area * x ** (N - 1) * aubin_talenti(N, eps, x) ** q,
        "crit": lambda x: area * x ** (N - 1) * aubin_talenti(N, eps, x) ** crit_exp,
    }
    cumulative = {name: _cumulative_gauss(f, r) for name, f in densities.items()}

    def tail_integral(f):
        if N < 5 and f is densities["mass"]:
            return math.inf
        value, _ = integrate.quad(f, r_max, np.inf, epsabs=0.0, epsrel=1e-12, limit=200)
        return value

    tail = TailModel(
        amplitude=float(aubin_talenti(N, eps, r_max) * r_max ** (N - 2)),
        kappa=math.sqrt(params.lam),
        r_start=r_max,
        mass=tail_integral(densities["mass"]),
        grad=tail_integral(densities["grad"]),
        lq=tail_integral(densities["lq"]),
        crit=tail_integral(densities["crit"]),
        kind="algebraic",
    )
    return RadialProfile(
        r=r,
        u=aubin_talenti(N, eps, r),
        du=aubin_talenti_slope(N, eps, r),
        params=params,
        cum_mass=cumulative["mass"],
        cum_grad=cumulative["grad"],
        cum_lq=cumulative["lq"],
        cum_crit=cumulative["crit"],
        tail=tail,
    )


# --- Energy and certificates ---

def energy(profile, params=None, tol=DEFAULT_CERT_TOL):
    """
    Energy ℰ and the Nehari / Pohozaev certificate of a complete profile.

    Args:
        profile: RadialProfile with its far-field tail attached
        params: ProblemParams (defaults to the profile's own)
        tol: relative acceptance tolerance

    Returns:
        Certificate
    """
    params = params or profile.params
    if not profile.is_complete:
        raise CertificateError("profile has no tail model; quadrature is incomplete")
    mass, grad, lq, crit = profile.norms()
    lam, t, c, q, N = params.lam, params.t, params.c, params.q, params.N
    crit_exp = params.crit_exp

    # bubbles in N <= 4 have infinite mass; the mass term only enters when λ > 0
    lam_mass = lam * mass if lam != 0 else 0.0

    value = 0.5 * (grad + lam_mass) - t * lq / q - c * crit / crit_exp
    nehari = grad + lam_mass - t * lq - c * crit
    pohozaev = grad - params.gamma_q * t * lq - c * crit
    mass_res = lam_mass - (1.0 - params.gamma_q) * t * lq
    identity = grad - N * value

    return Certificate(
        energy=value,
        nehari_res=nehari,
        pohozaev_res=pohozaev,
        mass=mass,
        grad=grad,
        lq=lq,
        crit=crit,
        level_gap=value - bubble_level(N),
        mass_res=mass_res,
        energy_identity_res=identity,
        tolerance=tol,
    )


# --- Fibering map ---

def _fibering_coefficients(profile, params):
    mass, grad, lq, crit = profile.norms()
    lam_mass = params.lam * mass if params.lam != 0 else 0.0
    return grad + lam_mass, params.t * lq, params.c * crit


def fibering_map(profile, params=None, s=1.0):
    """
    E(s) = s²/2 A - s^q/q B - s^{2*}/2* C with A = ‖∇v‖₂²+λ‖v‖₂²,
    B = t‖v‖_q^q and C = c‖v‖_{2*}^{2*}.

    Returns:
        tuple: (E(s), E'(s), E''(s))
    """
    params = params or profile.params
    A, B, C = _fibering_coefficients(profile, params)
    q, ce = params.q, params.crit_exp
    s = float(s)
    value = 0.5 * A * s ** 2 - B * s ** q / q - C * s ** ce / ce
    first = A * s - B * s ** (q - 1) - C * s ** (ce - 1)
    second = A - (q - 1) * B * s ** (q - 2) - (ce - 1) * C * s ** (ce - 2)
    return value, first, second


def fibering_max(profile, params=None):
    """
    Unique s₀ > 0 with E'(s₀) = 0.

    Solves A - B s^{q-2} - C s^{2*-2} = 0 by Newton, falling back to
    bracketed bisection when Newton leaves the positive axis or stalls.
    """
    params = params or profile.params
    A, B, C = _fibering_coefficients(profile, params)
    q, ce = params.q, params.crit_exp
    if A <= 0 or (B <= 0 and C <= 0):
        raise ParameterError("fibering map has no interior maximum for this profile")

    def h(s):
        return A - B * s ** (q - 2) - C * s ** (ce - 2)

    def dh(s):
        return -(q - 2) * B * s ** (q - 3) - (ce - 2) * C * s ** (ce - 3)

    try:
        root = optimize.newton(h, 1.0, fprime=dh, tol=1e-14, maxiter=100)
        if root > 0 and abs(h(root)) <= 1e-10 * A:
            return float(root)
    except (RuntimeError, OverflowError, ZeroDivisionError):
        pass
    logger.debug("Newton failed on the fibering map; bisecting")
    lo, hi = 1.0, 1.0
    while h(lo) <= 0:
        lo /= 2.0
    while h(hi) >= 0:
        hi *= 2.0
    return float(optimize.brentq(h, lo, hi, xtol=1e-15, rtol=1e-14))


def nehari_project(profile, params=None):
    """Scale a profile onto the Nehari manifold, s₀ v."""
    s0 = fibering_max(profile, params)
    return profile.scaled(alpha=s0)
