import math

import numpy as np
import pytest
from scipy.integrate import cumulative_trapezoid

from models import ProblemParams, RadialProfile, TailModel, sphere_area
from radial_shooting import shoot_ground_state


def make_gaussian_profile(params, amplitude=1.0, width=1.0, r_max=8.0, n=2001):
    """Complete RadialProfile of amplitude·exp(-(r/width)²) with an empty tail."""
    r = np.linspace(0.0, r_max, n)
    u = amplitude * np.exp(-(r / width) ** 2)
    du = -2.0 * r / width ** 2 * u
    weight = sphere_area(params.N) * r ** (params.N - 1)

    def cumulative(density):
        return cumulative_trapezoid(weight * density, r, initial=0.0)

    tail = TailModel(amplitude=0.0, kappa=math.sqrt(max(params.lam, 1.0)), r_start=r_max,
                     mass=0.0, grad=0.0, lq=0.0, crit=0.0)
    return RadialProfile(r=r, u=u, du=du, params=params,
                         cum_mass=cumulative(u ** 2), cum_grad=cumulative(du ** 2),
                         cum_lq=cumulative(u ** params.q), cum_crit=cumulative(u ** params.crit_exp),
                         tail=tail)


@pytest.fixture
def gaussian_profile():
    return make_gaussian_profile


@pytest.fixture(scope="session")
def cubic_params():
    return ProblemParams(N=3, q=4.0, t=1.0, lam=1.0, crit_on=False)


@pytest.fixture(scope="session")
def soliton(cubic_params):
    """Cubic ground state of -Δw + w = w³ in R³."""
    return shoot_ground_state(cubic_params, (1.0, 1e4))
