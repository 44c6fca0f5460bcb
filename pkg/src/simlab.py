# data generators and Monte Carlo experiment runners:
# angle study (estimation accuracy versus the f_y basis), dimension selection study, and
# level studies of the predictor, structure and dimension tests

import json
import logging
import pathlib
from dataclasses import dataclass, field, replace, asdict
from functools import lru_cache
from multiprocessing import Pool

import numpy as np
import pandas as pd

import matrixkit
import design
import inference
import structured
import evaluate
from decorators import timer
from exceptions import InvalidInput, PfcError

logger = logging.getLogger(__name__)

SCHEMA = 'pfcred/1'
DEFAULT_MASTER_SEED = 20090101

# spawn_key tags of the independent random streams derived from the master seed
REPLICATION_STREAM = 1
DELTA_STREAM = 2
BASELINE_STREAM = 3

GENERATORS = ['fig1_exp_nu', 'sec5_twodim', 'sec6_nulltest', 'sec8_diagdelta', 'custom']
LEVEL_KINDS = ['predictor', 'structure', 'lrt_dim']

FIG1_BASES = ['poly:1', 'poly:2', 'poly:3', 'poly:4', 'poly:5', 'poly:6', 'exp']


########################################################################################################################
# generators

@dataclass(frozen=True, eq=False)
class Truth:
    subspace: matrixkit.Subspace
    d: int
    gamma: np.ndarray
    delta: np.ndarray


@dataclass(frozen=True, eq=False)
class Generator:
    name: str
    n: int
    p: int
    sigma_y: float = 1.0
    seed: int = 0
    master_seed: int = DEFAULT_MASTER_SEED
    r_fit: int = 1
    p1: int = 7
    cell: int = 0
    gamma: np.ndarray = field(default=None, repr=False)   # custom only
    delta: np.ndarray = field(default=None, repr=False)   # custom only

    def __post_init__(self):
        if self.name not in GENERATORS:
            raise InvalidInput(f'unknown generator {self.name!r}; expected one of {GENERATORS}')
        if self.n < 2 or self.p < 1:
            raise InvalidInput(f'invalid generator size n={self.n}, p={self.p}')
        if self.sigma_y <= 0:
            raise InvalidInput(f'sigma_y must be positive, got {self.sigma_y}')
        if self.name == 'sec5_twodim' and self.p < 5:
            raise InvalidInput('sec5_twodim needs p >= 5 for its two Gamma columns')
        if self.name == 'sec6_nulltest' and not (1 <= self.p1 < self.p):
            raise InvalidInput(f'sec6_nulltest needs 1 <= p1 < p, got p1={self.p1}, p={self.p}')
        if self.name == 'custom':
            if self.gamma is None:
                raise InvalidInput('custom generator needs a p x d gamma matrix')
            gamma = np.asarray(self.gamma, dtype=float).reshape(self.p, -1)
            object.__setattr__(self, 'gamma', gamma)
            if self.delta is not None:
                delta = np.asarray(self.delta, dtype=float)
                if delta.shape != (self.p, self.p):
                    raise InvalidInput(f'custom delta must be {self.p} x {self.p}')
                object.__setattr__(self, 'delta', delta)

    def params(self):
        out = {k: v for k, v in asdict(self).items() if k not in ('gamma', 'delta')}
        return out


def make_generator(name, **params):
    """Generator with the study defaults of each design filled in."""
    defaults = {
        'fig1_exp_nu': {'n': 200, 'p': 20},
        'sec5_twodim': {'n': 200, 'p': 5, 'sigma_y': 2.0},
        'sec6_nulltest': {'n': 20, 'p': 10, 'p1': 7},
        'sec8_diagdelta': {'n': 200, 'p': 6, 'r_fit': 1},
        'custom': {'n': 200},
    }
    if name not in defaults:
        raise InvalidInput(f'unknown generator {name!r}; expected one of {GENERATORS}')
    merged = dict(defaults[name])
    merged.update({k: v for k, v in params.items() if v is not None})
    if name == 'custom' and 'p' not in merged and merged.get('gamma') is not None:
        merged['p'] = np.asarray(merged['gamma']).shape[0]
    return Generator(name=name, **merged)


def stream(master_seed, *key):
    """Independent random stream identified by (master seed, key); counter-based, order-free."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key)))


@lru_cache(maxsize=32)
def _fixed_factor(p, master_seed):
    return stream(master_seed, DELTA_STREAM, p).standard_normal((p, p))


def fixed_delta(p, master_seed=DEFAULT_MASTER_SEED):
    """Delta = A^T A drawn once per (p, master seed) and shared by every replication; returns (A, Delta)."""
    A = _fixed_factor(p, master_seed).copy()
    return A, A.T @ A


def _truth(gamma, delta):
    gamma = np.asarray(gamma, dtype=float).reshape(delta.shape[0], -1)
    eta = np.linalg.solve(delta, gamma)
    d = gamma.shape[1]
    return Truth(subspace=matrixkit.Subspace(dim=d, basis=matrixkit.orthonormalize(eta)), d=d,
                 gamma=gamma, delta=delta)


def sec6_gamma(delta, p1):
    """Gamma = c (Gamma_1, Gamma_2) with Gamma_1 = ones and Gamma_2 = -(Delta^22)^{-1} Delta^21 Gamma_1, ||Gamma|| = 1."""
    dinv = np.linalg.inv(delta)
    g1 = np.ones(p1)
    g2 = -np.linalg.solve(dinv[p1:, p1:], dinv[p1:, :p1] @ g1)
    gamma = np.concatenate([g1, g2])
    return gamma / np.linalg.norm(gamma)


def generate(gen):
    """Draw one data set; the same generator (seed included) always gives the same data."""
    rng = stream(gen.master_seed, REPLICATION_STREAM, gen.cell, gen.seed)
    n, p = gen.n, gen.p

    if gen.name == 'fig1_exp_nu':
        y = rng.uniform(0.0, 4.0, n)
        gamma = np.ones(p) / np.sqrt(p)
        delta = np.eye(p)
        X = np.outer(np.exp(y), gamma) + rng.standard_normal((n, p))

    elif gen.name == 'sec5_twodim':
        A, delta = fixed_delta(p, gen.master_seed)
        gamma = np.zeros((p, 2))
        gamma[:4, 0] = np.array([1.0, 1.0, -1.0, -1.0]) / 2
        gamma[[0, 2, 4], 1] = 1 / np.sqrt(3)
        y = rng.normal(0.0, gen.sigma_y, n)
        f = np.column_stack([y, np.abs(y)])
        X = f @ gamma.T + rng.standard_normal((n, p)) @ A

    elif gen.name == 'sec6_nulltest':
        A, delta = fixed_delta(p, gen.master_seed)
        gamma = sec6_gamma(delta, gen.p1)
        y = rng.normal(0.0, gen.sigma_y, n)
        X = np.outer(y, gamma) + rng.standard_normal((n, p)) @ A

    elif gen.name == 'sec8_diagdelta':
        scales = 10.0 ** np.arange(p)
        delta = np.diag(scales)
        gamma = np.ones(p) / np.sqrt(p)
        y = rng.normal(0.0, gen.sigma_y, n)
        X = np.outer(y, gamma) + rng.standard_normal((n, p)) * np.sqrt(scales)

    else:
        gamma = gen.gamma
        delta = np.eye(p) if gen.delta is None else gen.delta
        y = rng.normal(0.0, gen.sigma_y, n)
        f = np.column_stack([y ** j for j in range(1, gamma.shape[1] + 1)])
        X = f @ gamma.T + rng.standard_normal((n, p)) @ np.linalg.cholesky(delta).T

    return design.Dataset(X=X, y=y), _truth(gamma, delta)


def fitting_basis(name, y):
    """BasisSpec from a name: any design.parse_basis string, 'exp' or 'absmix:k' = (y, |y|, y^3, .., y^k)."""
    name = str(name).strip().lower()
    if name == 'exp':
        return design.BasisSpec.custom(np.exp(y)[:, np.newaxis])
    if name.startswith('absmix:'):
        try:
            k = int(name.split(':')[1])
        except ValueError:
            raise InvalidInput(f'cannot parse basis {name!r}')
        if k < 3:
            raise InvalidInput('absmix:k needs k >= 3')
        F = np.column_stack([y, np.abs(y)] + [y ** j for j in range(3, k + 1)])
        # column scaling leaves the projection onto span(F) unchanged
        return design.BasisSpec.custom(F / F.std(axis=0))
    return design.parse_basis(name)


########################################################################################################################
# results

@dataclass(frozen=True, eq=False)
class ExperimentResult:
    name: str
    records: pd.DataFrame
    aggregates: pd.DataFrame
    metadata: dict

    @property
    def n_failed(self):
        return int(self.records['error'].astype(bool).sum()) if 'error' in self.records else 0

    @property
    def failure_fraction(self):
        return self.n_failed / max(len(self.records), 1)

    def summary(self):
        return {'schema': SCHEMA, 'experiment': self.name, 'metadata': _jsonable(self.metadata),
                'records': len(self.records), 'excluded': self.n_failed,
                'aggregates': _jsonable(self.aggregates.to_dict(orient='records'))}

    def write(self, outdir):
        outdir = pathlib.Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        stem = f"{self.name}_{self.metadata.get('seed')}"
        csv_file = outdir / f'{stem}.csv'
        json_file = outdir / f'{stem}.json'
        self.records.to_csv(csv_file, index=False, float_format='%.17g')
        with open(json_file, 'w') as f:
            json.dump(self.summary(), f, indent=2)
            f.write('\n')
        logger.info(f'Results written to {csv_file} and {json_file}')
        return csv_file, json_file


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if np.isnan(obj) else float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


########################################################################################################################
# parallel replication machinery

def init_worker(gen, options):
    # Using a dictionary is not strictly necessary. You can also use global variables.
    global mppool_ini_dict
    mppool_ini_dict = {}
    mppool_ini_dict['gen'] = gen
    mppool_ini_dict['options'] = options


def run_replications(task, items, gen, options, num_processes=1):
    """Run task(*item) for every item; results come back in item order whatever the worker count."""
    if num_processes <= 1 or len(items) <= 1:
        init_worker(gen, options)
        return [task(*item) for item in items]
    with Pool(processes=num_processes, initializer=init_worker, initargs=(gen, options)) as pool:
        return pool.starmap(task, items)


def _angle_replication(rep):
    gen = replace(mppool_ini_dict['gen'], seed=rep)
    options = mppool_ini_dict['options']
    data, truth = generate(gen)
    records = []
    for basis in options['bases']:
        try:
            dm = design.build_design(data, fitting_basis(basis, data.y))
            # S_d(Sigma, Sigma_fit), equal to the PFC reduction subspace
            estimate = matrixkit.sd_subspace(dm.Sigma, dm.SigmaFit, truth.d)
            angle, error = matrixkit.largest_angle_deg(estimate, truth.subspace), ''
        except PfcError as e:
            angle, error = np.nan, f'{type(e).__name__}: {e}'
        records.append({'rep': rep, 'basis': basis, 'draw': 0, 'angle_deg': angle, 'error': error})

    rng = stream(gen.master_seed, BASELINE_STREAM, gen.cell, rep)
    for draw in range(options['baseline_draws']):
        random_span = matrixkit.Subspace(dim=truth.d, basis=matrixkit.orthonormalize(rng.standard_normal((gen.p, truth.d))))
        records.append({'rep': rep, 'basis': 'random', 'draw': draw,
                        'angle_deg': matrixkit.largest_angle_deg(random_span, truth.subspace), 'error': ''})
    return records


def _dim_replication(cell, param, value, rep):
    gen = replace(mppool_ini_dict['gen'], **{param: value}, cell=cell, seed=rep)
    options = mppool_ini_dict['options']
    records = []
    try:
        data, _ = generate(gen)
        dm = design.build_design(data, fitting_basis(options['basis'], data.y))
        chosen = {m: (inference.select_d(dm, m, options['alpha']).chosen_d, '') for m in options['methods']}
    except PfcError as e:
        chosen = {m: (np.nan, f'{type(e).__name__}: {e}') for m in options['methods']}
    for method in options['methods']:
        records.append({'cell': cell, 'param': param, 'value': value, 'rep': rep, 'method': method,
                        'chosen_d': chosen[method][0], 'error': chosen[method][1]})
    return records


def _level_replication(cell, n, r, rep):
    gen = replace(mppool_ini_dict['gen'], n=n, cell=cell, seed=rep)
    options = mppool_ini_dict['options']
    kind, alpha = options['kind'], options['alpha']
    try:
        data, _ = generate(gen)
        if kind == 'predictor':
            dm = design.build_design(data, design.BasisSpec.polynomial(1))
            report, _ = inference.test_predictors(dm, 1, range(gen.p1))
        elif kind == 'structure':
            dm = design.build_design(data, design.BasisSpec.polynomial(r))
            report = structured.test_structure(dm, structured.DeltaStructure.diagonal(gen.p), w=r)
        else:
            dm = design.build_design(data, fitting_basis(options['basis'], data.y))
            report = inference.lrt_dim_test(dm, options['w'])
        row = {'reject': float(report.p_value <= alpha), 'statistic': report.statistic,
               'p_value': report.p_value, 'error': ''}
    except PfcError as e:
        row = {'reject': np.nan, 'statistic': np.nan, 'p_value': np.nan, 'error': f'{type(e).__name__}: {e}'}
    return [dict({'cell': cell, 'n': n, 'r': r, 'rep': rep}, **row)]


def _flatten(results):
    return [record for chunk in results for record in chunk]


def _metadata(gen, reps, **extra):
    meta = {'generator': gen.params(), 'reps': int(reps), 'seed': int(gen.master_seed)}
    meta.update(extra)
    return meta


########################################################################################################################
# experiments

@timer
def run_angle_study(gen, bases=FIG1_BASES, reps=100, master_seed=None, num_processes=1,
                    baseline_draws=10, name='fig1'):
    """Largest principal angle (degrees) between S_d(Sigma, Sigma_fit) and the true reduction, per basis."""
    if master_seed is not None:
        gen = replace(gen, master_seed=int(master_seed))
    if reps < 1:
        raise InvalidInput(f'reps must be >= 1, got {reps}')
    bases = list(bases)
    logger.info(f'Angle study: {gen.name}, n={gen.n}, p={gen.p}, {reps} replications, bases {bases}')
    options = {'bases': bases, 'baseline_draws': int(baseline_draws)}
    results = run_replications(_angle_replication, [(rep,) for rep in range(reps)], gen, options, num_processes)
    records = pd.DataFrame(_flatten(results), columns=['rep', 'basis', 'draw', 'angle_deg', 'error'])
    return ExperimentResult(name=name, records=records, aggregates=evaluate.summarize_angles(records),
                            metadata=_metadata(gen, reps, bases=bases, baseline_draws=baseline_draws,
                                               metric='largest principal angle (degrees)'))


@timer
def run_dim_study(gen, methods=('lrt', 'aic', 'bic'), n_grid=None, p_grid=None, reps=500,
                  basis='absmix:3', alpha=inference.DEFAULT_ALPHA, master_seed=None, num_processes=1,
                  name='dim-study'):
    """Fractions F(2), F(2,3), F(2,3,4) of the chosen dimension per method over an n grid or a p grid."""
    if master_seed is not None:
        gen = replace(gen, master_seed=int(master_seed))
    if (n_grid is None) == (p_grid is None):
        raise InvalidInput('give exactly one of n_grid and p_grid')
    param, grid = ('n', list(n_grid)) if n_grid is not None else ('p', list(p_grid))
    methods = [m.lower() for m in methods]
    for m in methods:
        if m not in ('lrt', 'aic', 'bic'):
            raise InvalidInput(f'unknown selection method {m!r}')
    logger.info(f'Dimension study: {gen.name}, {param} grid {grid}, {reps} replications, basis {basis}')
    options = {'methods': methods, 'basis': basis, 'alpha': alpha}
    items = [(cell, param, value, rep) for cell, value in enumerate(grid) for rep in range(reps)]
    results = run_replications(_dim_replication, items, gen, options, num_processes)
    records = pd.DataFrame(_flatten(results), columns=['cell', 'param', 'value', 'rep', 'method', 'chosen_d', 'error'])
    return ExperimentResult(name=name, records=records, aggregates=evaluate.summarize_dims(records),
                            metadata=_metadata(gen, reps, methods=methods, basis=basis, alpha=alpha,
                                               grid={param: grid}))


@timer
def run_level_study(kind, gen, n_grid, reps=500, alpha=inference.DEFAULT_ALPHA, r_grid=None,
                    basis='absmix:3', w=2, master_seed=None, num_processes=1, name=None):
    """Empirical rejection rate (with binomial standard error) of a nominal alpha test per sample size.

    predictor: Y independent of the last p - p1 predictors given the first p1 (fit d = r = 1, f_y = y)
    structure: diagonal Delta with w = r and f_y = (y, .., y^r), one cell per (n, r)
    lrt_dim:   Lambda_w for the true dimension w
    """
    if kind not in LEVEL_KINDS:
        raise InvalidInput(f'unknown level study {kind!r}; expected one of {LEVEL_KINDS}')
    if master_seed is not None:
        gen = replace(gen, master_seed=int(master_seed))
    r_grid = list(r_grid) if r_grid is not None else [gen.r_fit if kind == 'structure' else 1]
    cells = [(n, r) for r in r_grid for n in n_grid]
    logger.info(f'Level study ({kind}): {gen.name}, cells (n, r) {cells}, {reps} replications')
    options = {'kind': kind, 'alpha': alpha, 'basis': basis, 'w': w}
    items = [(cell, n, r, rep) for cell, (n, r) in enumerate(cells) for rep in range(reps)]
    results = run_replications(_level_replication, items, gen, options, num_processes)
    records = pd.DataFrame(_flatten(results), columns=['cell', 'n', 'r', 'rep', 'reject', 'statistic', 'p_value', 'error'])
    name = name or f"{kind.replace('_', '-')}-levels"
    return ExperimentResult(name=name, records=records, aggregates=evaluate.summarize_levels(records),
                            metadata=_metadata(gen, reps, kind=kind, alpha=alpha, n_grid=list(n_grid),
                                               r_grid=r_grid))
