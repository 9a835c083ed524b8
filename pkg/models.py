import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd


# --- Errors ---

class NLSError(Exception):
    """Base class for every failure raised by the solvers."""


class ParameterError(NLSError, ValueError):
    pass


class IntegrationError(NLSError):
    pass


class TailFitError(NLSError):
    pass


class BracketError(NLSError):
    pass


class BisectionStallError(NLSError):
    pass


class CertificateError(NLSError):
    pass


class CurveResolutionError(NLSError):
    pass


class ThresholdBracketError(NLSError):
    pass


class ConvergenceError(NLSError):
    pass


class BoundaryContaminationError(NLSError):
    pass


class ReductionBracketError(NLSError):
    pass


# --- Parameters ---

@dataclass(frozen=True)
class ProblemParams:
    """
    Parameters of -Δu + λu = t|u|^{q-2}u + c|u|^{2*-2}u on R^N.

    Args:
        N: dimension (>= 3)
        q: subcritical exponent
        t: coupling of the q-term
        lam: frequency λ
        crit_on: enables the critical term
        crit_coef: coefficient c of the critical term (1 unless rescaled)
        p: exponent of the partially confined problem
        a: mass target for normalized solutions
        mu: coupling of the normalized problem
    """
    N: int = 3
    q: float = 4.0
    t: float = 1.0
    lam: float = 1.0
    crit_on: bool = True
    crit_coef: float = 1.0
    p: Optional[float] = None
    a: Optional[float] = None
    mu: Optional[float] = None

    @property
    def crit_exp(self):
        return 2.0 * self.N / (self.N - 2)

    @property
    def gamma_q(self):
        return self.N * (self.q - 2.0) / (2.0 * self.q)

    @property
    def gamma_p(self):
        if self.p is None:
            raise ParameterError("gamma_p needs the confinement exponent p")
        return 3.0 * (self.p - 2.0) / (2.0 * self.p)

    @property
    def c(self):
        """Effective critical coefficient (0 when the critical term is off)."""
        return self.crit_coef if self.crit_on else 0.0

    def with_(self, **changes):
        return replace(self, **changes)

    def validate(self):
        if int(self.N) != self.N or self.N < 3:
            raise ParameterError(f"dimension N must be an integer >= 3, got {self.N}")
        if not self.q > 2.0:
            raise ParameterError(f"exponent q must exceed 2, got {self.q}")
        if self.crit_on and not self.q < self.crit_exp:
            raise ParameterError(
                f"q must lie below 2*={self.crit_exp:g} when the critical term is on, got {self.q}")
        if self.t < 0:
            raise ParameterError(f"coupling t must be >= 0, got {self.t}")
        if self.lam < 0:
            raise ParameterError(f"frequency lambda must be >= 0, got {self.lam}")
        if self.crit_coef < 0:
            raise ParameterError(f"critical coefficient must be >= 0, got {self.crit_coef}")
        if self.p is not None and not 2.0 < self.p < 6.0:
            raise ParameterError(f"confinement exponent p must lie in (2, 6), got {self.p}")
        if self.a is not None and not self.a > 0:
            raise ParameterError(f"mass target a must be positive, got {self.a}")
        if self.mu is not None and not self.mu > 0:
            raise ParameterError(f"coupling mu must be positive, got {self.mu}")
        return self

    def to_dict(self):
        return asdict(self)


def sphere_area(N):
    """Surface area of the unit sphere in R^N."""
    return 2.0 * math.pi ** (N / 2.0) / math.gamma(N / 2.0)


# --- Radial profiles ---

@dataclass(frozen=True)
class TailModel:
    """
    Far field beyond the last grid radius.

    kind 'exponential': u ≈ A r^{-(N-1)/2} e^{-κ r}
    kind 'algebraic':   closed-form far field (bubbles), integrals precomputed
    """
    amplitude: float
    kappa: float
    r_start: float
    mass: float
    grad: float
    lq: float
    crit: float
    kind: str = "exponential"
    residual: float = 0.0

    def scaled(self, alpha, beta, N, q, crit_exp):
        return replace(
            self,
            amplitude=alpha * self.amplitude * beta ** (-(N - 1) / 2.0),
            kappa=self.kappa * beta,
            r_start=self.r_start / beta,
            mass=self.mass * alpha ** 2 * beta ** (-N),
            grad=self.grad * alpha ** 2 * beta ** (2 - N),
            lq=self.lq * alpha ** q * beta ** (-N),
            crit=self.crit * alpha ** crit_exp * beta ** (-N),
        )


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """
    Radial function on a strictly increasing grid starting at r=0.

    The cumulative arrays hold ∫_{|x|<r_i} of u², |∇u|², |u|^q and |u|^{2*}
    (sphere area included), so their last entries are the grid part of the
    norms; `tail` carries the rest.
    """
    r: np.ndarray
    u: np.ndarray
    du: np.ndarray
    params: ProblemParams
    cum_mass: np.ndarray
    cum_grad: np.ndarray
    cum_lq: np.ndarray
    cum_crit: np.ndarray
    tail: Optional[TailModel] = None

    @property
    def height(self):
        return float(self.u[0])

    @property
    def r_end(self):
        return float(self.r[-1])

    @property
    def is_complete(self):
        return self.tail is not None

    def norms(self):
        """Return (‖u‖₂², ‖∇u‖₂², ‖u‖_q^q, ‖u‖_{2*}^{2*}) including the tail."""
        extra = (0.0, 0.0, 0.0, 0.0)
        if self.tail is not None:
            extra = (self.tail.mass, self.tail.grad, self.tail.lq, self.tail.crit)
        return (
            float(self.cum_mass[-1]) + extra[0],
            float(self.cum_grad[-1]) + extra[1],
            float(self.cum_lq[-1]) + extra[2],
            float(self.cum_crit[-1]) + extra[3],
        )

    def value_at(self, radius):
        """Evaluate u at arbitrary radii, using the tail model past the grid."""
        radius = np.asarray(radius, dtype=float)
        inside = np.interp(radius, self.r, self.u)
        if self.tail is None or self.tail.kind != "exponential":
            return np.where(radius <= self.r_end, inside, 0.0)
        N = self.params.N
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            outside = self.tail.amplitude * np.maximum(radius, self.r_end) ** (-(N - 1) / 2.0) \
                * np.exp(-self.tail.kappa * np.maximum(radius, self.r_end))
        return np.where(radius <= self.r_end, inside, outside)

    def scaled(self, alpha=1.0, beta=1.0, params=None):
        """
        Profile of v(x) = α u(β x).

        Norms transform as ‖v‖_s^s = α^s β^{-N} ‖u‖_s^s and
        ‖∇v‖₂² = α² β^{2-N} ‖∇u‖₂².
        """
        params = params or self.params
        N, q, ce = self.params.N, self.params.q, self.params.crit_exp
        tail = None
        if self.tail is not None:
            tail = self.tail.scaled(alpha, beta, N, q, ce)
        return RadialProfile(
            r=self.r / beta,
            u=alpha * self.u,
            du=alpha * beta * self.du,
            params=params,
            cum_mass=self.cum_mass * alpha ** 2 * beta ** (-N),
            cum_grad=self.cum_grad * alpha ** 2 * beta ** (2 - N),
            cum_lq=self.cum_lq * alpha ** q * beta ** (-N),
            cum_crit=self.cum_crit * alpha ** ce * beta ** (-N),
            tail=tail,
        )

    def truncated(self, r_cut):
        keep = self.r <= r_cut
        return replace(
            self,
            r=self.r[keep], u=self.u[keep], du=self.du[keep],
            cum_mass=self.cum_mass[keep], cum_grad=self.cum_grad[keep],
            cum_lq=self.cum_lq[keep], cum_crit=self.cum_crit[keep],
            tail=None,
        )

    def with_params(self, params):
        return replace(self, params=params)


class ShotKind(str, Enum):
    CROSSES_ZERO = "CROSSES_ZERO"
    BLOWS_UP = "BLOWS_UP"
    DECAYS = "DECAYS"


@dataclass(frozen=True)
class ShotOutcome:
    kind: ShotKind
    r_event: float
    profile: RadialProfile
    height: float


# --- Certificates and solutions ---

@dataclass(frozen=True)
class Certificate:
    energy: float
    nehari_res: float
    pohozaev_res: float
    mass: float
    grad: float
    lq: float
    crit: float
    level_gap: float
    mass_res: float
    energy_identity_res: float
    tolerance: float

    @property
    def norms(self):
        return (self.mass, self.grad, self.lq, self.crit)

    @property
    def rel_nehari(self):
        return abs(self.nehari_res) / self.grad if self.grad > 0 else math.inf

    @property
    def rel_pohozaev(self):
        return abs(self.pohozaev_res) / self.grad if self.grad > 0 else math.inf

    @property
    def rel_energy_identity(self):
        return abs(self.energy_identity_res) / self.grad if self.grad > 0 else math.inf

    @property
    def accepted(self):
        return self.rel_nehari < self.tolerance and self.rel_pohozaev < self.tolerance


class SolutionKind(str, Enum):
    GROUND_STATE = "GROUND_STATE"
    EXCITED = "EXCITED"
    BLOW_UP_BRANCH = "BLOW_UP_BRANCH"


@dataclass(frozen=True)
class SolutionRecord:
    height: float
    profile: RadialProfile
    certificate: Certificate
    kind: SolutionKind = SolutionKind.GROUND_STATE
    error_estimate: float = 0.0

    def to_row(self):
        cert = self.certificate
        return {
            "height": self.height,
            "energy": cert.energy,
            "vq_norm": cert.lq,
            "grad_norm": cert.grad,
            "mass": cert.mass,
            "crit_norm": cert.crit,
            "nehari_res": cert.nehari_res,
            "pohozaev_res": cert.pohozaev_res,
            "kind": self.kind.value,
        }


# --- Normalized solutions ---

@dataclass(frozen=True)
class ReductionPoint:
    """One (t, μ) pair of the scalar reduction, with its frequency and residual F(t, μ)."""
    t: float
    lam: float
    mu: float
    a: float
    vq: float
    F: float


@dataclass(frozen=True, eq=False)
class ReductionCurve:
    """Sampled map t -> (‖v_t‖_q^q, μ_t, λ, m(t)) at fixed (N, q, a)."""
    N: int
    q: float
    a: float
    ts: np.ndarray
    vqs: np.ndarray
    mus: np.ndarray
    energies: np.ndarray
    heights: np.ndarray

    @property
    def valid(self):
        return np.isfinite(self.mus)

    def lam_at(self, mu):
        gamma = self.N * (self.q - 2.0) / (2.0 * self.q)
        return (self.ts / mu) ** (2.0 / (self.q * gamma - self.q))

    def to_frame(self):
        return pd.DataFrame({
            "t": self.ts,
            "vq_norm": self.vqs,
            "mu": self.mus,
            "lambda": np.ones_like(self.ts),
            "m": self.energies,
        })


@dataclass(frozen=True)
class NormalizedSolution:
    profile: RadialProfile
    lam: float
    mu: float
    a: float
    t: float
    action: float
    mass_res: float
    mass_error: float
    bookkeeping_res: float
    ground_state: bool = False
    point: Optional[ReductionPoint] = None

    def to_row(self):
        return {
            "t": self.t,
            "lambda": self.lam,
            "mu": self.mu,
            "a": self.a,
            "action": self.action,
            "mass_res": self.mass_res,
            "F": self.point.F if self.point is not None else math.nan,
            "ground_state": self.ground_state,
        }


# --- Continuation ---

@dataclass(frozen=True)
class SweepSample:
    t: float
    m: float
    vq: float
    sup_norm_1: float
    sup_norm_2: float
    n_solutions: int
    at_ceiling: bool = False
    valid: bool = True
    error: Optional[str] = None


@dataclass(frozen=True)
class FitResult:
    quantity: str
    exponent: float
    stderr: float
    prefactor: float
    residual: float
    window: tuple
    model: str = "power"
    intercept: float = 0.0


@dataclass
class SweepResult:
    N: int
    q: float
    samples: list
    t_star_estimate: Optional[tuple] = None
    two_solution_t: Optional[float] = None
    fits: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    @property
    def valid_samples(self):
        return [s for s in self.samples if s.valid]

    def column(self, name):
        return np.array([getattr(s, name) for s in self.valid_samples], dtype=float)

    def to_frame(self):
        rows = [{
            "t": s.t,
            "m": s.m,
            "vq_norm": s.vq,
            "n_solutions": s.n_solutions,
            "sup_norm_1": s.sup_norm_1,
            "sup_norm_2": s.sup_norm_2,
        } for s in self.samples]
        return pd.DataFrame(rows, columns=["t", "m", "vq_norm", "n_solutions", "sup_norm_1", "sup_norm_2"])


@dataclass(frozen=True)
class ThresholdReport:
    applicable: bool
    ts: tuple = ()
    values: tuple = ()
    ratio: float = math.nan
    t_star: float = math.nan
    bounded: bool = True
    message: str = ""


# --- Partial confinement ---

@dataclass(frozen=True, eq=False)
class ConfinedMesh:
    """
    Cell-centred axisymmetric mesh on [0, S_max) x (-Z_max, Z_max).

    Nodes s_i = i h_s (i < n_s) and z_j = -Z_max + (j+1) h_z (j < n_z); the
    Dirichlet boundary sits at s = n_s h_s and z = ±Z_max.
    """
    s: np.ndarray
    z: np.ndarray
    hs: float
    hz: float

    @property
    def shape(self):
        return (self.s.size, self.z.size)

    @property
    def s_max(self):
        return self.s.size * self.hs

    @property
    def z_max(self):
        return (self.z.size + 1) * self.hz / 2.0

    @property
    def ring_areas(self):
        """Area of each annular cell cross-section in the (x1, x2) plane."""
        areas = 2.0 * np.pi * self.s * self.hs
        areas[0] = np.pi * self.hs ** 2 / 4.0
        return areas

    @property
    def volumes(self):
        return np.outer(self.ring_areas * self.hz, np.ones(self.z.size))

    @property
    def potential(self):
        return np.outer(self.s ** 2, np.ones(self.z.size))

    def scaled(self, factor):
        return ConfinedMesh(s=self.s * factor, z=self.z * factor, hs=self.hs * factor, hz=self.hz * factor)


@dataclass(frozen=True, eq=False)
class ConfinedState:
    mesh: ConfinedMesh
    w: np.ndarray
    t: float
    p: float
    mass: float
    grad: float
    lp: float
    potential: float
    energy: float
    residual: float = math.nan
    iterations: int = 0
    history: tuple = ()

    @property
    def norms(self):
        return (self.mass, self.grad, self.lp, self.potential)


@dataclass(frozen=True, eq=False)
class NormalizedConfined:
    mesh: ConfinedMesh
    u: np.ndarray
    lam: float
    p: float
    r: float
    r_t: float
    mass: float
    grad: float
    lp: float
    potential: float
    pohozaev_res: float
    mass_mismatch: float
