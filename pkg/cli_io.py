"""
Run configuration, result envelopes, the profile cache and the pipelines
behind each CLI command.
"""
import hashlib
import json
import logging
import math
import os
import time
import zipfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, model_validator

import app
import confinement
import continuation
import reduction
from functionals import (
    bubble_level,
    bubble_profile,
    energy,
    fibering_map,
    fibering_max,
    sobolev_constant,
    sobolev_constant_closed_form,
)
from models import (
    BracketError,
    NLSError,
    ProblemParams,
    RadialProfile,
    TailModel,
)
from radial_shooting import RadialShooter, find_positive_solutions, shoot_ground_state

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FLOAT_FORMAT = "%.17g"

SOLUTION_COLUMNS = ["height", "energy", "vq_norm", "grad_norm", "mass", "crit_norm",
                    "nehari_res", "pohozaev_res", "kind"]
CONFINED_COLUMNS = ["t", "mass", "grad", "lp_norm", "potential", "energy", "r", "lambda", "tau1", "tau2"]
NORMALIZED_COLUMNS = ["t", "lambda", "mu", "a", "action", "mass_res", "F", "ground_state"]

Command = Literal['ground-state', 'scan', 'sweep', 'reduce', 'confine', 'verify']
Analysis = Literal['multiplier', 'mass', 'uniqueness', 'refinement']

# keys that do not change results and stay out of the input hash
VOLATILE_KEYS = {'out_dir', 'cache_dir', 'quiet', 'workers'}


def fmt(value):
    """17 significant digits for console output."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), '.17g')
    return str(value)


# --- Configuration ---

class RunConfig(BaseModel):
    """Validated configuration of one CLI run."""
    model_config = ConfigDict(extra='forbid')

    command: Command
    N: int = Field(3, ge=3)
    q: Optional[float] = None
    p: Optional[float] = None
    t: Optional[float] = Field(None, ge=0)
    lam: float = Field(1.0, gt=0)
    crit: bool = True
    a: float = Field(1.0, gt=0)
    mu: Optional[float] = Field(None, gt=0)
    t_min: Optional[float] = Field(None, gt=0)
    t_max: Optional[float] = Field(None, gt=0)
    points: int = Field(40, ge=2)
    d_low: Optional[float] = Field(None, gt=0)
    d_high: Optional[float] = Field(None, gt=0)
    d_min: Optional[float] = Field(None, gt=0)
    d_max: Optional[float] = Field(None, gt=0)
    n_scan: int = Field(200, ge=100)
    n_s: int = Field(257, ge=9)
    n_z: int = Field(513, ge=9)
    extent: float = Field(16.0, gt=0)
    rtol: float = Field(1e-8, gt=0, le=1e-3)
    atol: float = Field(1e-10, gt=0, le=1e-3)
    cert_tol: float = Field(1e-5, gt=0, lt=1)
    flow_tol: float = Field(1e-8, gt=0, lt=1)
    near_threshold: bool = False
    analysis: Analysis = 'multiplier'
    workers: int = Field(1, ge=1)
    out_dir: Path = Path("results")
    cache_dir: Optional[Path] = None
    quiet: bool = False

    @model_validator(mode='after')
    def _check_command(self):
        cmd = self.command
        if cmd in ('ground-state', 'scan', 'sweep', 'reduce') and self.q is None:
            raise ValueError(f"'{cmd}' needs the exponent q")
        if cmd in ('ground-state', 'scan') and self.t is None:
            raise ValueError(f"'{cmd}' needs the coupling t")
        if cmd == 'reduce' and self.mu is None:
            raise ValueError("'reduce' needs the coupling mu")
        if cmd in ('sweep', 'reduce'):
            self.t_min = self.t_min or 0.1
            self.t_max = self.t_max or 1e4
        if cmd == 'confine':
            if self.p is None:
                raise ValueError("'confine' needs the exponent p")
            if not 10.0 / 3.0 < self.p < 6.0:
                raise ValueError(f"p must lie in (10/3, 6), got {self.p}")
            if self.n_z % 2 == 0:
                raise ValueError("n_z must be odd")
            self.t_min = self.t_min or 10.0
            self.t_max = self.t_max or 1e5
        if self.t_min is not None and self.t_max is not None and not self.t_min < self.t_max:
            raise ValueError(f"t_min={self.t_min} must be below t_max={self.t_max}")
        if self.d_low is not None and self.d_high is not None and not self.d_low < self.d_high:
            raise ValueError("d_low must be below d_high")
        if self.q is not None:
            self.problem_params().validate()
            if cmd == 'reduce':
                reduction.check_exponent(self.N, self.q)
        return self

    def problem_params(self, **changes):
        params = ProblemParams(N=self.N, q=self.q, t=self.t if self.t is not None else 1.0,
                               lam=self.lam, crit_on=self.crit, a=self.a, mu=self.mu, p=self.p)
        return params.with_(**changes) if changes else params

    def shooting_settings(self):
        return {'rtol': self.rtol, 'atol': self.atol, 'cert_tol': self.cert_tol}

    def t_grid(self):
        return np.geomspace(self.t_min, self.t_max, self.points)

    def input_hash(self):
        payload = self.model_dump(mode='json', exclude=VOLATILE_KEYS)
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


KEY_ALIASES = {'lambda': 'lam', 'n': 'N', 'config': None}


def build_config(command, config_file=None, flags=None):
    """
    Merge a flat key=value config file with CLI flags (flags win).

    Raises:
        pydantic.ValidationError: on any invalid field
    """
    values = {}
    if config_file:
        for key, value in dotenv_values(config_file).items():
            name = key.strip().lower().replace('-', '_')
            name = KEY_ALIASES.get(name, name)
            if name and value not in (None, ""):
                values[name] = value
    for key, value in (flags or {}).items():
        if value is not None:
            values[KEY_ALIASES.get(key, key) or key] = value
    return RunConfig(command=command, **values)


# --- Envelope ---

class ResultEnvelope(BaseModel):
    schema_version: int = SCHEMA_VERSION
    command: str
    config: dict
    input_hash: str
    success: bool = True
    records: list = Field(default_factory=list)
    errors: list = Field(default_factory=list)
    stats: dict = Field(default_factory=dict)

    def to_json(self):
        return json.dumps(self.model_dump(), sort_keys=True, indent=2, default=str) + "\n"

    def write(self, path):
        Path(path).write_text(self.to_json())


def _clean(row):
    out = {}
    for key, value in row.items():
        if isinstance(value, (np.floating, float)):
            out[key] = float(value)
        elif isinstance(value, (np.integer,)):
            out[key] = int(value)
        elif isinstance(value, np.bool_):
            out[key] = bool(value)
        else:
            out[key] = value
    return out


# --- Cache ---

class ProfileCache:
    """
    Content-addressed store of converged profiles under
    <root>/<key[:2]>/<key>.npz; entries from another schema are ignored.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(params, settings):
        payload = {'params': params.to_dict(), 'settings': settings}
        return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()

    def path(self, key):
        return self.root / key[:2] / f"{key}.npz"

    def lookup(self, key):
        """Return (profile, extra) or None."""
        path = self.path(key)
        if not path.exists():
            self.misses += 1
            return None
        try:
            with np.load(path, allow_pickle=False) as data:
                meta = json.loads(str(data['meta']))
                if meta.get('schema_version') != SCHEMA_VERSION:
                    logger.warning("cache entry %s has schema %s (expected %s); ignored",
                                   path.name, meta.get('schema_version'), SCHEMA_VERSION)
                    self.misses += 1
                    return None
                if meta.get('key') != key:
                    raise ValueError("key mismatch")
                tail = TailModel(**meta['tail']) if meta.get('tail') else None
                profile = RadialProfile(
                    r=data['r'], u=data['u'], du=data['du'],
                    params=ProblemParams(**meta['params']),
                    cum_mass=data['cum_mass'], cum_grad=data['cum_grad'],
                    cum_lq=data['cum_lq'], cum_crit=data['cum_crit'],
                    tail=tail,
                )
        except (OSError, ValueError, KeyError, TypeError, zipfile.BadZipFile) as e:
            logger.warning("corrupt cache entry %s ignored: %s", path.name, e)
            self.misses += 1
            return None
        self.hits += 1
        return profile, meta.get('extra', {})

    def store(self, key, profile, extra=None):
        path = self.path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            'schema_version': SCHEMA_VERSION,
            'key': key,
            'params': profile.params.to_dict(),
            'tail': profile.tail.__dict__ if profile.tail else None,
            'extra': extra or {},
        }
        tmp = path.with_suffix('.tmp')
        with open(tmp, 'wb') as fh:
            np.savez(fh, r=profile.r, u=profile.u, du=profile.du, cum_mass=profile.cum_mass,
                     cum_grad=profile.cum_grad, cum_lq=profile.cum_lq, cum_crit=profile.cum_crit,
                     meta=np.array(json.dumps(meta, sort_keys=True)))
        os.replace(tmp, path)


def cache_lookup(cache, key):
    return cache.lookup(key)


def cache_store(cache, key, profile, extra=None):
    cache.store(key, profile, extra)


# --- Pipelines ---

class Outcome:
    """Records, CSV tables and console lines produced by one pipeline."""

    def __init__(self):
        self.records = []
        self.errors = []
        self.tables = {}
        self.lines = []
        self.failed = False

    def add(self, row, line=None):
        row = _clean(row)
        self.records.append(row)
        if line is not None:
            self.lines.append(line)

    def error(self, where, exc):
        self.errors.append({'where': where, 'error': str(exc), 'type': type(exc).__name__})
        self.lines.append(f"ERROR {where}: {exc}")
        self.failed = True


def _solution_line(row):
    return " ".join(f"{key}={fmt(row[key])}" for key in SOLUTION_COLUMNS)


def _executor(config):
    return ProcessPoolExecutor(max_workers=config.workers) if config.workers > 1 else None


def ground_state_key(config):
    """Cache key over everything that selects the ground-state profile."""
    return ProfileCache.key(config.problem_params(), {
        **config.shooting_settings(),
        'd_low': config.d_low, 'd_high': config.d_high,
        'd_min': config.d_min, 'd_max': config.d_max, 'n_scan': config.n_scan,
    })


def run_ground_state(config, cache, outcome):
    params = config.problem_params()
    settings = config.shooting_settings()
    key = ground_state_key(config)
    hit = cache_lookup(cache, key)
    if hit is not None:
        profile, extra = hit
        cert = energy(profile, params, config.cert_tol)
        row = {'height': profile.height, 'energy': cert.energy, 'vq_norm': cert.lq, 'grad_norm': cert.grad,
               'mass': cert.mass, 'crit_norm': cert.crit, 'nehari_res': cert.nehari_res,
               'pohozaev_res': cert.pohozaev_res, 'kind': extra.get('kind', 'GROUND_STATE')}
    else:
        if config.d_low is not None and config.d_high is not None:
            record = shoot_ground_state(params, (config.d_low, config.d_high), settings)
        else:
            records = find_positive_solutions(params, d_max=config.d_max, n_scan=config.n_scan,
                                              d_min=config.d_min, settings=settings)
            if not records:
                raise BracketError("no positive radial solution found on the height scan")
            record = min(records, key=lambda rec: rec.certificate.energy)
        row = record.to_row()
        cache_store(cache, key, record.profile, {'kind': record.kind.value})
    outcome.add(row, _solution_line(row))
    outcome.tables['solutions.csv'] = pd.DataFrame([row], columns=SOLUTION_COLUMNS)


def run_scan(config, cache, outcome):
    params = config.problem_params()
    executor = _executor(config)
    try:
        records = find_positive_solutions(params, d_max=config.d_max, n_scan=config.n_scan, d_min=config.d_min,
                                          settings=config.shooting_settings(), executor=executor,
                                          progress=not config.quiet)
    finally:
        if executor is not None:
            executor.shutdown()
    rows = [record.to_row() for record in records]
    for row in rows:
        outcome.add(row, _solution_line(row))
    if not rows:
        outcome.lines.append("no positive radial solutions found")
    outcome.tables['solutions.csv'] = pd.DataFrame(rows, columns=SOLUTION_COLUMNS)


def run_sweep(config, cache, outcome):
    params = config.problem_params()
    settings = {**config.shooting_settings(), 'n_scan': config.n_scan}
    result = continuation.sweep(params, config.t_grid(), settings, workers=config.workers,
                                progress=not config.quiet)
    continuation.fit_sweep(result)
    frame = result.to_frame()
    for row in frame.to_dict('records'):
        outcome.add({'record': 'sample', **row},
                    " ".join(f"{k}={fmt(row[k])}" for k in frame.columns))
    for sample in result.samples:
        if not sample.valid:
            outcome.error(f"t={fmt(sample.t)}", sample.error)
    if result.t_star_estimate is not None:
        lo, hi = result.t_star_estimate
        outcome.add({'record': 't_star', 't_lo': lo, 't_hi': hi}, f"t_star in [{fmt(lo)}, {fmt(hi)}]")
    else:
        outcome.lines.append("no sample below the bubble level; t_star not bracketed")
    if result.two_solution_t is not None:
        outcome.add({'record': 'two_solution_onset', 't': result.two_solution_t},
                    f"two positive solutions from t={fmt(result.two_solution_t)}")
    if config.near_threshold:
        try:
            report = continuation.near_threshold_norms(params, result.t_star_estimate, settings=settings)
        except NLSError as e:
            outcome.error("near_threshold", e)
        else:
            if report.applicable:
                outcome.add({'record': 'near_threshold', 't_star': report.t_star, 'ratio': report.ratio,
                             'bounded': report.bounded, 'message': report.message},
                            f"near t_star={fmt(report.t_star)}: vq max/min={fmt(report.ratio)} "
                            f"bounded {report.bounded}")
                outcome.tables['near_threshold.csv'] = pd.DataFrame(
                    {'t': report.ts, 'vq_norm': report.values}, columns=['t', 'vq_norm'])
            else:
                outcome.lines.append(f"near-threshold check skipped: {report.message}")
    for fit in result.fits:
        outcome.add({'record': 'fit', 'quantity': fit.quantity, 'model': fit.model, 'exponent': fit.exponent,
                     'stderr': fit.stderr, 'prefactor': fit.prefactor, 'residual': fit.residual,
                     't_lo': fit.window[0], 't_hi': fit.window[1]},
                    f"fit {fit.quantity} ({fit.model}): exponent={fmt(fit.exponent)} stderr={fmt(fit.stderr)}")
    try:
        violation = continuation.derivative_identity_check(result)
        outcome.add({'record': 'derivative_identity', 'max_violation': violation},
                    f"derivative identity max violation={fmt(violation)}")
    except NLSError as e:
        outcome.lines.append(f"derivative identity skipped: {e}")
    for message in result.violations:
        outcome.add({'record': 'violation', 'message': message}, f"VIOLATION {message}")
    outcome.tables['m_of_t.csv'] = frame


def run_reduce(config, cache, outcome):
    base = config.problem_params(lam=1.0)
    settings = {**config.shooting_settings(), 'n_scan': config.n_scan}
    curve = reduction.sample_curve(base, config.a, config.t_grid(), settings, progress=not config.quiet)
    sup = reduction.sup_mu(curve, mu_fn=reduction.curve_mu_fn(curve, base, settings))
    outcome.add({'record': 'sup_mu', 't_sup': sup['t_sup'], 'mu_sup': sup['mu_sup'], 'error': sup['error'],
                 'unimodal': sup['unimodal']},
                f"sup mu_t = {fmt(sup['mu_sup'])} at t = {fmt(sup['t_sup'])} (error {fmt(sup['error'])}, "
                f"unimodal {sup['unimodal']})")
    frame = curve.to_frame()
    frame['lambda'] = curve.lam_at(config.mu)
    outcome.tables['mu_of_t.csv'] = frame

    solutions = reduction.solve_normalized(config.mu, config.a, base, curve, settings)
    rows = [sol.to_row() for sol in solutions]
    for row in rows:
        outcome.add({'record': 'normalized', **row},
                    " ".join(f"{k}={fmt(row[k])}" for k in NORMALIZED_COLUMNS))
    if not rows:
        if math.isfinite(sup['mu_sup']) and config.mu > sup['mu_sup']:
            outcome.lines.append(f"nonexistence at this mu (mu > sup mu_t = {fmt(sup['mu_sup'])})")
        else:
            outcome.lines.append("no normalized solutions on the sampled curve")
    outcome.tables['normalized.csv'] = pd.DataFrame(rows, columns=NORMALIZED_COLUMNS)


def _confine_multiplier(config, settings, outcome):
    p = config.p
    states = confinement.solve_family(config.t_grid(), p, settings, progress=not config.quiet)
    rows, pairs = [], []
    for state in states:
        try:
            normalized = confinement.normalized_from_confined(state)
        except NLSError as e:
            outcome.error(f"t={fmt(state.t)}", e)
            continue
        _, tau1, tau2 = confinement.fibering_tau(normalized, 1.0)
        row = {'t': state.t, 'mass': state.mass, 'grad': state.grad, 'lp_norm': state.lp,
               'potential': state.potential, 'energy': state.energy, 'r': normalized.r_t,
               'lambda': normalized.lam, 'tau1': tau1 / normalized.grad, 'tau2': tau2}
        rows.append(row)
        pairs.append({'r': normalized.r_t, 'lambda': normalized.lam})
        outcome.add({'record': 'confined', **row}, " ".join(f"{k}={fmt(row[k])}" for k in CONFINED_COLUMNS))
    if len(pairs) >= 3:
        fit = continuation.fit_exponent([x['r'] for x in pairs], [x['lambda'] for x in pairs],
                                        quantity='lambda', min_samples=3)
        expected = -4.0 * (p - 2.0) / (3.0 * p - 10.0)
        outcome.add({'record': 'multiplier_law', 'slope': fit.exponent, 'stderr': fit.stderr,
                     'expected': expected},
                    f"lambda vs r slope={fmt(fit.exponent)} (expected {fmt(expected)})")
    if states:
        top = states[0]
        distance = confinement.distance_to_limit(top)
        outcome.add({'record': 'limit_distance', 't': top.t, 'distance': distance},
                    f"distance to w_infinity at t={fmt(top.t)}: {fmt(distance)}")
    outcome.tables['confined.csv'] = pd.DataFrame(rows, columns=CONFINED_COLUMNS)
    outcome.tables['lambda_of_r.csv'] = pd.DataFrame(pairs, columns=['r', 'lambda'])


def _confine_mass(config, settings, outcome):
    law = confinement.mass_law(config.p, config.t_grid(), settings, progress=not config.quiet)
    fit = law['fit']
    outcome.add({'record': 'mass_law', 'slope': fit.exponent, 'stderr': fit.stderr, 'expected': law['expected']},
                f"mass vs t slope={fmt(fit.exponent)} (expected {fmt(law['expected'])})")
    outcome.tables['mass_of_t.csv'] = pd.DataFrame(
        [{'t': state.t, 'mass': state.mass} for state in law['states']], columns=['t', 'mass'])


def _confine_uniqueness(config, settings, outcome):
    report = confinement.uniqueness_onset(config.t_grid(), config.p, settings, progress=not config.quiet)
    rows = [{'t': t, 'distance': distance, 'agree': agree} for t, distance, agree in report['rows']]
    for row in rows:
        outcome.add({'record': 'warm_cold', **row},
                    f"t={fmt(row['t'])} warm/cold distance={fmt(row['distance'])} agree {row['agree']}")
    onset = report['t_onset']
    outcome.add({'record': 'uniqueness_onset', 't': onset},
                f"warm and cold solves agree from t={fmt(onset)}" if onset is not None
                else "warm and cold solves disagree at the largest t")
    outcome.tables['uniqueness.csv'] = pd.DataFrame(rows, columns=['t', 'distance', 'agree'])


def _confine_refinement(config, settings, outcome):
    rows = []
    # three smallest masses r_t, i.e. the three largest t
    for t in sorted(config.t_grid())[-3:]:
        report = confinement.mesh_refinement(float(t), config.p, settings)
        row = {'t': float(t), 'energy_change': report['energy_change'], 'tau1_coarse': report['tau1_coarse'],
               'tau1_fine': report['tau1_fine'], 'tau1': report['tau1'], 'tau2': report['tau2']}
        rows.append(row)
        outcome.add({'record': 'refinement', **row},
                    f"t={fmt(row['t'])} energy change={fmt(row['energy_change'])} tau1={fmt(row['tau1'])} "
                    f"tau2={fmt(row['tau2'])}")
    outcome.tables['refinement.csv'] = pd.DataFrame(
        rows, columns=['t', 'energy_change', 'tau1_coarse', 'tau1_fine', 'tau1', 'tau2'])


CONFINE_ANALYSES = {
    'multiplier': _confine_multiplier,
    'mass': _confine_mass,
    'uniqueness': _confine_uniqueness,
    'refinement': _confine_refinement,
}


def run_confine(config, cache, outcome):
    settings = {'n_s': config.n_s, 'n_z': config.n_z, 'extent': config.extent, 'tol': config.flow_tol}
    CONFINE_ANALYSES[config.analysis](config, settings, outcome)


def verification_checks():
    """Fixed certificate suite: (name, value, threshold) with pass meaning value < threshold."""
    checks = []
    N = 3
    bubble = bubble_profile(N)
    cert = energy(bubble)
    level = bubble_level(N)
    checks.append(("bubble nehari", cert.rel_nehari, 1e-8))
    checks.append(("bubble pohozaev", cert.rel_pohozaev, 1e-8))
    checks.append(("bubble energy level", abs(cert.energy - level) / level, 1e-8))
    S = sobolev_constant(N)
    closed = sobolev_constant_closed_form(N)
    checks.append(("sobolev constant", abs(S - closed) / closed, 1e-6))

    soliton = confinement.solve_w_infty(4.0)
    checks.append(("soliton height", abs(soliton.height - 4.3374) / 4.3374, 1e-4))
    checks.append(("soliton nehari", soliton.certificate.rel_nehari, 1e-5))
    checks.append(("soliton pohozaev", soliton.certificate.rel_pohozaev, 1e-5))
    checks.append(("soliton energy identity", soliton.certificate.rel_energy_identity, 1e-5))

    profile = soliton.profile
    value, first, _ = fibering_map(profile, s=1.0)
    checks.append(("fibering derivative equals nehari", abs(first - soliton.certificate.nehari_res)
                   / soliton.certificate.grad, 1e-12))
    s0 = fibering_max(profile)
    grid = np.linspace(s0 / 50.0, 10.0 * s0, 400)
    signs = np.sign([fibering_map(profile, s=x)[1] for x in grid])
    checks.append(("fibering unimodal", abs(int(np.sum(signs[1:] != signs[:-1])) - 1), 0.5))

    for lam in (0.5, 1.0, 4.0):
        u, t = reduction.to_unit_frequency(profile.with_params(profile.params.with_(lam=lam)), lam, 1.0)
        back, lam_back = reduction.from_unit_frequency(u, t, 1.0)
        gap = max(abs(x - y) / abs(y) for x, y in zip(back.norms(), profile.norms()))
        checks.append((f"round trip lambda={fmt(lam)}", max(gap, abs(lam_back - lam) / lam), 1e-10))

    mu_t = reduction.mu_of_t(2.0, soliton.certificate.lq, 1.0, 4.0, N)
    residual = reduction.reduction_residual(2.0, mu_t, soliton.certificate.lq, 1.0, 4.0, N)
    checks.append(("mu_t residual", abs(residual) / 2.0 ** (2.0 / (4.0 * 0.75 - 4.0) - 1.0), 1e-12))
    return checks


def run_verify(config, cache, outcome):
    rows = []
    for name, value, threshold in verification_checks():
        passed = bool(value < threshold)
        row = {'check': name, 'passed': passed, 'value': value, 'threshold': threshold}
        rows.append(row)
        outcome.add(row, f"{'PASS' if passed else 'FAIL'} {name} value={fmt(value)} threshold={fmt(threshold)}")
        if not passed:
            outcome.failed = True
    outcome.tables['verify.csv'] = pd.DataFrame(rows, columns=['check', 'passed', 'value', 'threshold'])


PIPELINES = {
    'ground-state': run_ground_state,
    'scan': run_scan,
    'sweep': run_sweep,
    'reduce': run_reduce,
    'confine': run_confine,
    'verify': run_verify,
}


def run(config):
    """
    Execute one command and write its envelope and CSV tables.

    Returns:
        tuple: (exit status, ResultEnvelope, console lines); status 3 marks a
        solver failure, with partial data still written
    """
    started = time.perf_counter()
    cache = ProfileCache(config.cache_dir or app.cache_dir())
    outcome = Outcome()
    shots_before = RadialShooter.total_shots
    try:
        PIPELINES[config.command](config, cache, outcome)
    except NLSError as e:
        logger.error("%s failed: %s", config.command, e)
        outcome.error(config.command, e)
    except Exception as e:
        logger.exception("%s crashed", config.command)
        outcome.error(config.command, e)

    envelope = ResultEnvelope(
        command=config.command,
        config=config.model_dump(mode='json'),
        input_hash=config.input_hash(),
        success=not outcome.failed,
        records=outcome.records,
        errors=outcome.errors,
        stats={
            'wall_clock_s': time.perf_counter() - started,
            'shots': RadialShooter.total_shots - shots_before,
            'cache_hits': cache.hits,
            'cache_misses': cache.misses,
        },
    )
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    envelope.write(out_dir / f"{config.command}.json")
    for name, frame in outcome.tables.items():
        frame.to_csv(out_dir / name, index=False, float_format=FLOAT_FORMAT)
    return (3 if outcome.failed else 0), envelope, outcome.lines
