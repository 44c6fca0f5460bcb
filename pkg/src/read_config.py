# read run configurations

import os, toml, pathlib, json, logging

from exceptions import InvalidInput

logger = logging.getLogger(__name__)

THREADS_ENV = 'PFCRED_THREADS'

# used when no configuration file is given
DEFAULT_SETTINGS = {
    'master_seed': 20090101,
    'num_processes': 1,
    'alpha': 0.05,
    'tol': 1e-9,
    'max_iter': 500,
    'print_config': False,
}

PATH_KEYS = ['outpath', 'data_file', 'newdata_file', 'structure_file']


def default_settings():
    return dict(DEFAULT_SETTINGS)


def read_config(config_file):

    if not os.path.isfile(config_file):
        raise FileNotFoundError(f'configuration file {config_file} does not exist')

    # read main config file
    try:
        config = toml.load(config_file)
    except toml.TomlDecodeError as e:
        raise InvalidInput(f'{config_file}: {e}')

    # load model settings
    settings = default_settings()
    if 'modelsettings_file' in config:
        settings_file = str(pathlib.Path(config_file).parent / config['modelsettings_file'])
        settings.update(toml.load(settings_file))

    for k in ['flags', 'numerics']:
        if k in settings:
            v = settings.pop(k)
            settings.update(v)
        if k in config:
            v = config.pop(k)
            config.update(v)

    settings.update(config)
    config = settings

    # paths are relative to the configuration file
    pathconfig = str(pathlib.Path(os.path.abspath(config_file)).parent)
    for p in PATH_KEYS:
        if p in config and not os.path.isabs(config[p]):
            config[p] = pathconfig + '/' + config[p]

    logger.info('#' * 50)
    logger.info(f'Configuration file: {config_file}')
    if config.get('print_config', False):
        logger.info(json.dumps(config, sort_keys=True, indent=4, default=str))
    logger.info('#' * 50)

    return config


def resolve_num_processes(requested):
    # the PFCRED_THREADS environment variable caps the number of workers
    requested = int(requested)
    if requested < 1:
        raise InvalidInput(f'num_processes must be >= 1, got {requested}')
    cap = os.environ.get(THREADS_ENV)
    if cap is not None and cap.strip() != '':
        try:
            cap = int(cap)
        except ValueError:
            raise InvalidInput(f'{THREADS_ENV} must be a positive integer, got {cap!r}')
        if cap < 1:
            raise InvalidInput(f'{THREADS_ENV} must be a positive integer, got {cap}')
        requested = min(requested, cap)
    return max(1, min(requested, os.cpu_count() or 1))
