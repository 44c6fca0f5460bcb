import read_config
import design
import pfc_core
import inference
import structured
import simlab

import argparse
import json
import logging
import sys
import time

import pandas as pd

from exceptions import InputError, NumericalError, SchemaError, InvalidInput

logger = logging.getLogger('pfcred')

EXPERIMENTS = ['fig1', 'dim-study', 'predictor-levels', 'structure-levels', 'lrt-levels']
MODELS = {'pfc': 'pfc_full', 'isotonic': 'isotonic_pfc', 'pc': 'pc'}
MAX_FAILURE_FRACTION = 0.05


########################################################################################################################
# argument parsing

def _csv_list(text, cast=str):
    return [cast(v.strip()) for v in str(text).split(',') if v.strip() != '']


def build_parser():
    parser = argparse.ArgumentParser(prog='pfcred', description='Principal fitted components: sufficient '
                                     'dimension reduction by inverse regression')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='TOML run configuration (see config_templates/)')
    common.add_argument('--out', help='output file (default: stdout)')
    common.add_argument('--format', choices=['json', 'csv'], help='output format')
    common.add_argument('-v', '--verbose', action='store_true', help='debug diagnostics on stderr')
    common.add_argument('-q', '--quiet', action='store_true', help='only warnings and errors on stderr')

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument('--data', help='headered CSV file')
    data.add_argument('--response', help='response column')
    data.add_argument('--predictors', help='comma-separated predictor columns (default: all others)')
    data.add_argument('--categorical', action='store_true', default=None, help='treat the response as labels')
    data.add_argument('--basis', help='f_y basis: poly:k, slices:h, categorical or pwpoly:h:k (default poly:1)')

    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('fit', parents=[common, data], help='fit a PFC model and report the reduction')
    p.add_argument('--d', type=int, help='dimension of the reduction')
    p.add_argument('--model', choices=list(MODELS), help='pfc (default), isotonic or pc')
    p.add_argument('--delta', help='structured Delta: diag, equicorr, groups=<labels> or custom=<path>')
    p.add_argument('--tol', type=float)
    p.add_argument('--max-iter', type=int, dest='max_iter')

    p = sub.add_parser('reduce', parents=[common, data], help='sufficient reduction of new observations')
    p.add_argument('--d', type=int)
    p.add_argument('--model', choices=list(MODELS))
    p.add_argument('--newdata', help='CSV with the predictor columns (default: the training data)')

    p = sub.add_parser('select-d', parents=[common, data], help='choose the dimension of the reduction')
    p.add_argument('--method', choices=['lrt', 'aic', 'bic', 'all'], help='default lrt')
    p.add_argument('--alpha', type=float)

    p = sub.add_parser('test-predictors', parents=[common, data],
                       help='test that Y is independent of some predictors given the others')
    p.add_argument('--d', type=int)
    p.add_argument('--active', help='comma-separated predictors kept under the hypothesis')
    p.add_argument('--maxw', action='store_true', help='use the working dimension min(r, p1)')
    p.add_argument('--each', action='store_true', help='test each predictor separately (raw p-values)')
    p.add_argument('--backward', type=float, metavar='ALPHA', help='backward elimination at level ALPHA')

    p = sub.add_parser('test-structure', parents=[common, data], help='test a linear structure for Delta')
    p.add_argument('--delta', help='diag, equicorr, groups=<labels> or custom=<path>')
    p.add_argument('--w', type=int, help='working dimension (default min(r, p))')
    p.add_argument('--tol', type=float)
    p.add_argument('--max-iter', type=int, dest='max_iter')

    p = sub.add_parser('simulate', parents=[common], help='run a Monte Carlo experiment')
    p.add_argument('--experiment', choices=EXPERIMENTS)
    p.add_argument('--reps', type=int)
    p.add_argument('--seed', type=int, help='master seed')
    p.add_argument('--outdir', help='directory for <experiment>_<seed>.csv/.json (default: .)')
    p.add_argument('--processes', type=int, dest='num_processes', help='worker processes (capped by PFCRED_THREADS)')
    p.add_argument('--n', type=int)
    p.add_argument('--p', type=int)
    p.add_argument('--sigma-y', type=float, dest='sigma_y')
    p.add_argument('--n-grid', dest='n_grid', help='comma-separated sample sizes')
    p.add_argument('--p-grid', dest='p_grid', help='comma-separated predictor counts (dim-study)')
    p.add_argument('--r-grid', dest='r_grid', help='comma-separated basis degrees (structure-levels)')
    p.add_argument('--basis', help='fitting basis for dim-study and lrt-levels (default absmix:3)')
    p.add_argument('--alpha', type=float)
    return parser


def resolve_config(args):
    # defaults < configuration file < command line flags
    config = read_config.read_config(args.config) if args.config else read_config.default_settings()
    for k, v in vars(args).items():
        if v is not None and k != 'config':
            config[k] = v
    if 'data_file' in config and 'data' not in config:
        config['data'] = config['data_file']
    if 'newdata_file' in config and 'newdata' not in config:
        config['newdata'] = config['newdata_file']
    if 'outpath' in config and 'outdir' not in config:
        config['outdir'] = config['outpath']
    return config


########################################################################################################################
# output

def to_jsonable(obj):
    return simlab._jsonable(obj)


def emit(config, payload=None, table=None):
    """Write a JSON payload or a table (csv) to --out or stdout."""
    if table is not None and config.get('format', 'csv') == 'csv':
        text = table.to_csv(index=False, float_format='%.17g')
    else:
        if table is not None:
            payload = {'schema': simlab.SCHEMA, 'rows': table.to_dict(orient='records')}
        text = json.dumps(to_jsonable(payload), indent=2) + '\n'
    if config.get('out'):
        with open(config['out'], 'w') as f:
            f.write(text)
        logger.info(f"Output written to {config['out']}")
    else:
        sys.stdout.write(text)


def fit_to_dict(fit, design_matrices):
    out = {'schema': simlab.SCHEMA, 'kind': 'fit', 'model_kind': fit.model_kind, 'd': fit.d,
           'n': design_matrices.n, 'p': design_matrices.p, 'r': design_matrices.r,
           'predictors': list(design_matrices.predictor_names),
           'mu_hat': fit.mu_hat, 'lambda_hat': fit.lambda_hat, 'loglik': fit.loglik,
           'reduction': fit.reduction.T.ravel(), 'delta_hat': fit.delta_hat.ravel(),
           'beta_hat': fit.beta_hat.ravel(), 'warnings': list(fit.warnings)}
    return out


def structured_fit_to_dict(fit, design_matrices):
    return {'schema': simlab.SCHEMA, 'kind': 'structured_fit', 'structure': fit.structure.kind, 'd': fit.d,
            'n': design_matrices.n, 'p': design_matrices.p, 'r': design_matrices.r,
            'predictors': list(design_matrices.predictor_names),
            'mu_hat': design_matrices.x_mean, 'delta_coeffs': fit.delta_coeffs, 'loglik': fit.loglik,
            'reduction': fit.subspace.basis.T.ravel(), 'delta_hat': fit.delta_tilde.ravel(),
            'iterations': fit.iterations, 'converged': fit.converged, 'gradient_norm': fit.gradient_norm,
            'warnings': list(fit.warnings)}


########################################################################################################################
# commands

def load_design(config):
    if not config.get('data') or not config.get('response'):
        raise InvalidInput('--data and --response are required')
    predictors = _csv_list(config['predictors']) if config.get('predictors') else None
    data = design.load_csv(config['data'], config['response'], predictors, config.get('categorical'))
    spec = design.parse_basis(config.get('basis', 'poly:1'))
    return data, design.build_design(data, spec)


def _require_d(config):
    if config.get('d') is None:
        raise InvalidInput('--d is required; use select-d to choose the dimension')
    return config['d']


def cmd_fit(config):
    _, dm = load_design(config)
    d = _require_d(config)
    if config.get('delta'):
        structure = structured.parse_structure(config['delta'], dm.p)
        fit = structured.fit_structured(dm, d, structure, tol=config['tol'], max_iter=config['max_iter'])
        emit(config, structured_fit_to_dict(fit, dm))
    else:
        fit = pfc_core.fit_model(dm, d, MODELS[config.get('model', 'pfc')])
        emit(config, fit_to_dict(fit, dm))
    return 0


def cmd_reduce(config):
    data, dm = load_design(config)
    fit = pfc_core.fit_model(dm, _require_d(config), MODELS[config.get('model', 'pfc')])
    Xnew = design.load_predictors(config['newdata'], data.predictor_names) if config.get('newdata') else data.X
    coords = pfc_core.reduce(fit, Xnew)
    table = pd.DataFrame(coords, columns=[f'R{j + 1}' for j in range(fit.d)])
    emit(config, table=table)
    return 0


def cmd_select_d(config):
    _, dm = load_design(config)
    method = config.get('method', 'lrt')
    methods = ['lrt', 'aic', 'bic'] if method == 'all' else [method]
    # one design, every method
    reports = [inference.select_d(dm, m, config['alpha']).to_dict() for m in methods]
    for rep in reports:
        rep['schema'] = simlab.SCHEMA
    emit(config, reports[0] if len(reports) == 1 else {'schema': simlab.SCHEMA, 'selections': reports})
    return 0


def _resolve_predictors(names, dm):
    indices = []
    for name in names:
        if name in dm.predictor_names:
            indices.append(dm.predictor_names.index(name))
        elif name.isdigit() and int(name) < dm.p:
            indices.append(int(name))
        else:
            raise SchemaError(f'unknown predictor {name!r}; known predictors: {list(dm.predictor_names)}')
    return indices


def cmd_test_predictors(config):
    _, dm = load_design(config)
    if config.get('each'):
        table = inference.screen_predictors(dm, _require_d(config))
        if config.get('format') == 'csv':
            emit(config, table=table)
        else:
            emit(config, {'schema': simlab.SCHEMA, 'kind': 'predictor_screen', 'rows': table.to_dict(orient='records')})
        return 0
    if config.get('backward') is not None:
        history = inference.backward_eliminate(dm, _require_d(config), config['backward'])
        emit(config, {'schema': simlab.SCHEMA, 'kind': 'backward_elimination', 'alpha': config['backward'],
                      'rounds': history.to_dict(orient='records')})
        return 0
    if not config.get('active'):
        raise InvalidInput('--active is required (or use --each / --backward)')
    active = _resolve_predictors(_csv_list(config['active']), dm)
    if config.get('maxw'):
        report = inference.test_predictors_maxw(dm, active)
    else:
        report, _ = inference.test_predictors(dm, _require_d(config), active)
    out = report.to_dict()
    out['schema'] = simlab.SCHEMA
    emit(config, out)
    return 0


def cmd_test_structure(config):
    _, dm = load_design(config)
    if not config.get('delta'):
        raise InvalidInput('--delta is required')
    structure = structured.parse_structure(config['delta'], dm.p)
    report = structured.test_structure(dm, structure, config.get('w'), tol=config['tol'], max_iter=config['max_iter'])
    out = report.to_dict()
    out['schema'] = simlab.SCHEMA
    emit(config, out)
    return 0


def _grid(config, key, default):
    value = config.get(key)
    if value is None:
        return default
    return value if isinstance(value, list) else _csv_list(value, int)


def cmd_simulate(config):
    experiment = config.get('experiment')
    if experiment not in EXPERIMENTS:
        raise InvalidInput(f'unknown experiment {experiment!r}; expected one of {EXPERIMENTS}')
    reps = int(config.get('reps', 100))
    seed = int(config['master_seed'] if config.get('seed') is None else config['seed'])
    num_processes = read_config.resolve_num_processes(config.get('num_processes', 1))
    alpha = config['alpha']
    size = {'n': config.get('n'), 'p': config.get('p'), 'sigma_y': config.get('sigma_y'), 'master_seed': seed}

    if experiment == 'fig1':
        gen = simlab.make_generator('fig1_exp_nu', **size)
        result = simlab.run_angle_study(gen, reps=reps, num_processes=num_processes, name=experiment)
    elif experiment == 'dim-study':
        gen = simlab.make_generator('sec5_twodim', **size)
        p_grid = _grid(config, 'p_grid', None)
        n_grid = None if p_grid is not None else _grid(config, 'n_grid', [100, 200, 400, 800])
        result = simlab.run_dim_study(gen, n_grid=n_grid, p_grid=p_grid, reps=reps, alpha=alpha,
                                      basis=config.get('basis', 'absmix:3'), num_processes=num_processes,
                                      name=experiment)
    elif experiment == 'predictor-levels':
        gen = simlab.make_generator('sec6_nulltest', **size)
        result = simlab.run_level_study('predictor', gen, _grid(config, 'n_grid', [20, 40, 100, 120]), reps=reps,
                                        alpha=alpha, num_processes=num_processes, name=experiment)
    elif experiment == 'structure-levels':
        gen = simlab.make_generator('sec8_diagdelta', **size)
        result = simlab.run_level_study('structure', gen, _grid(config, 'n_grid', [50, 100, 200, 400, 800, 1600]),
                                        reps=reps, alpha=alpha, r_grid=_grid(config, 'r_grid', [1, 2, 3]),
                                        num_processes=num_processes, name=experiment)
    else:
        gen = simlab.make_generator('sec5_twodim', **size)
        result = simlab.run_level_study('lrt_dim', gen, _grid(config, 'n_grid', [500]), reps=reps, alpha=alpha,
                                        basis=config.get('basis', 'absmix:3'), w=2,
                                        num_processes=num_processes, name=experiment)

    result.write(config.get('outdir', '.'))
    emit(config, result.summary())
    if result.failure_fraction > MAX_FAILURE_FRACTION:
        logger.error(f'Error! {result.n_failed} of {len(result.records)} replication records failed')
        return 3
    return 0


COMMANDS = {'fit': cmd_fit, 'reduce': cmd_reduce, 'select-d': cmd_select_d,
            'test-predictors': cmd_test_predictors, 'test-structure': cmd_test_structure,
            'simulate': cmd_simulate}


def setup_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level, format='%(message)s', force=True)


def main(argv=None):
    t1 = time.time()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    setup_logging(args)

    try:
        config = resolve_config(args)
        logger.info('#' * 50)
        logger.info(f'pfcred {args.command}')
        logger.info('#' * 50)
        code = COMMANDS[args.command](config)
    except (InputError, FileNotFoundError) as e:
        logger.error(f'Error! {type(e).__name__}: {e}')
        return 2
    except NumericalError as e:
        logger.error(f'Error! {type(e).__name__}: {e}')
        return 3

    t2 = time.time()
    logger.info(f'Total time cost (s): {t2 - t1:.3f}')
    return code


if __name__ == '__main__':
    sys.exit(main())
