import io
import json

import numpy as np
import pandas as pd
import pytest
from sklearn.linear_model import LinearRegression

import main
import matrixkit
import simlab


@pytest.fixture
def data_csv(tmp_path):
    data, _ = simlab.generate(simlab.make_generator('sec5_twodim', n=120))
    frame = pd.DataFrame(data.X, columns=[f'x{j + 1}' for j in range(data.p)])
    frame.insert(0, 'y', data.y)
    path = tmp_path / 'data.csv'
    frame.to_csv(path, index=False)
    return str(path)


def run(argv, capsys):
    code = main.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_fit_linear_basis_is_ols(data_csv, capsys):
    code, out, _ = run(['fit', '--data', data_csv, '--response', 'y', '--basis', 'poly:1', '--d', '1'], capsys)
    assert code == 0
    report = json.loads(out)
    assert report['schema'] == 'pfcred/1' and report['model_kind'] == 'pfc_full'
    frame = pd.read_csv(data_csv)
    ols = LinearRegression().fit(frame.drop(columns='y').to_numpy(), frame['y'].to_numpy()).coef_
    S1 = matrixkit.Subspace(dim=1, basis=matrixkit.orthonormalize(np.array(report['reduction'])))
    S2 = matrixkit.Subspace(dim=1, basis=matrixkit.orthonormalize(ols))
    assert matrixkit.principal_angles(S1, S2)[0] < 1e-8
    assert len(report['delta_hat']) == 25


def test_fit_other_models(data_csv, capsys):
    code, out, _ = run(['fit', '--data', data_csv, '--response', 'y', '--basis', 'poly:2', '--d', '1',
                        '--model', 'isotonic'], capsys)
    assert code == 0 and json.loads(out)['model_kind'] == 'isotonic_pfc'
    code, out, _ = run(['fit', '--data', data_csv, '--response', 'y', '--basis', 'poly:2', '--d', '1',
                        '--delta', 'diag'], capsys)
    report = json.loads(out)
    assert code == 0 and report['kind'] == 'structured_fit' and len(report['delta_coeffs']) == 5


def test_fit_is_idempotent(data_csv, capsys):
    argv = ['fit', '--data', data_csv, '--response', 'y', '--basis', 'slices:4', '--d', '2']
    _, first, _ = run(argv, capsys)
    _, second, _ = run(argv, capsys)
    assert first == second


def test_missing_file(tmp_path, capsys):
    code, out, err = run(['fit', '--data', str(tmp_path / 'nope.csv'), '--response', 'y', '--d', '1'], capsys)
    assert code == 2
    assert out == ''
    assert 'Error!' in err


def test_d_zero_points_at_select_d(data_csv, capsys):
    code, _, err = run(['fit', '--data', data_csv, '--response', 'y', '--d', '0'], capsys)
    assert code == 2
    assert 'select-d' in err


def test_d_required(data_csv, capsys):
    code, _, err = run(['fit', '--data', data_csv, '--response', 'y'], capsys)
    assert code == 2 and 'select-d' in err


def test_unknown_response_column(data_csv, capsys):
    code, _, err = run(['fit', '--data', data_csv, '--response', 'z', '--d', '1'], capsys)
    assert code == 2 and 'SchemaError' in err


def test_numerical_failure_exit_code(tmp_path, capsys):
    path = tmp_path / 'flat.csv'
    pd.DataFrame({'y': np.arange(10.0), 'x1': np.sin(np.arange(10.0)), 'x2': np.ones(10)}).to_csv(path, index=False)
    code, _, err = run(['fit', '--data', str(path), '--response', 'y', '--d', '1'], capsys)
    assert code == 3 and 'ResidualCovSingular' in err


def test_select_d_all_methods(data_csv, capsys):
    argv = ['select-d', '--data', data_csv, '--response', 'y', '--basis', 'poly:3', '--method', 'all']
    code, out, _ = run(argv, capsys)
    assert code == 0
    selections = json.loads(out)['selections']
    assert [s['method'] for s in selections] == ['lrt', 'aic', 'bic']
    assert all(len(s['per_w']) == 4 for s in selections)
    _, again, _ = run(argv, capsys)
    assert again == out


def test_select_d_defaults_to_lrt(data_csv, capsys):
    code, out, _ = run(['select-d', '--data', data_csv, '--response', 'y', '--basis', 'poly:3'], capsys)
    report = json.loads(out)
    assert code == 0 and report['method'] == 'lrt' and report['alpha'] == 0.05


def test_test_predictors(data_csv, capsys):
    code, out, _ = run(['test-predictors', '--data', data_csv, '--response', 'y', '--d', '1',
                        '--active', 'x1,x2,x3'], capsys)
    report = json.loads(out)
    assert code == 0 and report['kind'] == 'predictor'
    assert report['df'] == 2 and report['tested'] == [3, 4]
    assert 0 <= report['p_value'] <= 1


def test_test_predictors_modes(data_csv, capsys):
    base = ['test-predictors', '--data', data_csv, '--response', 'y', '--basis', 'poly:2']
    code, out, _ = run(base + ['--active', 'x1,x2', '--maxw'], capsys)
    assert code == 0 and json.loads(out)['method'] == 'maxw'
    code, out, _ = run(base + ['--d', '1', '--each', '--format', 'csv'], capsys)
    assert code == 0
    assert list(pd.read_csv(io.StringIO(out))['predictor']) == ['x1', 'x2', 'x3', 'x4', 'x5']
    code, out, _ = run(base + ['--d', '1', '--backward', '0.05'], capsys)
    assert code == 0 and json.loads(out)['kind'] == 'backward_elimination'
    code, _, err = run(base + ['--d', '1', '--active', 'x1,x9'], capsys)
    assert code == 2 and 'x9' in err


def test_test_structure(data_csv, capsys):
    code, out, _ = run(['test-structure', '--data', data_csv, '--response', 'y', '--basis', 'poly:2',
                        '--delta', 'diag'], capsys)
    report = json.loads(out)
    assert code == 0 and report['kind'] == 'structure' and report['df'] == 10
    code, _, _ = run(['test-structure', '--data', data_csv, '--response', 'y'], capsys)
    assert code == 2


def test_reduce(data_csv, tmp_path, capsys):
    code, out, _ = run(['reduce', '--data', data_csv, '--response', 'y', '--basis', 'poly:2', '--d', '2'], capsys)
    coords = pd.read_csv(io.StringIO(out))
    assert code == 0 and coords.shape == (120, 2) and list(coords.columns) == ['R1', 'R2']

    newdata = tmp_path / 'new.csv'
    pd.read_csv(data_csv).drop(columns='y').head(3).to_csv(newdata, index=False)
    code, out, _ = run(['reduce', '--data', data_csv, '--response', 'y', '--basis', 'poly:2', '--d', '2',
                        '--newdata', str(newdata), '--out', str(tmp_path / 'r.csv')], capsys)
    assert code == 0 and out == ''
    np.testing.assert_allclose(pd.read_csv(tmp_path / 'r.csv').to_numpy(), coords.head(3).to_numpy(),
                               rtol=1e-12, atol=1e-9)


def test_simulate_is_reproducible(tmp_path, capsys):
    for name in ('a', 'b'):
        code, out, _ = run(['simulate', '--experiment', 'fig1', '--reps', '3', '--seed', '7',
                            '--outdir', str(tmp_path / name)], capsys)
        assert code == 0
    assert json.loads(out)['experiment'] == 'fig1'
    for suffix in ('csv', 'json'):
        first = (tmp_path / 'a' / f'fig1_7.{suffix}').read_bytes()
        assert first == (tmp_path / 'b' / f'fig1_7.{suffix}').read_bytes()


def test_simulate_unknown_experiment(capsys):
    code, _, _ = run(['simulate', '--experiment', 'fig9'], capsys)
    assert code == 2


def test_simulate_too_many_failures(tmp_path, capsys):
    code, out, err = run(['simulate', '--experiment', 'dim-study', '--reps', '2', '--n-grid', '6',
                          '--outdir', str(tmp_path)], capsys)
    assert code == 3
    assert json.loads(out)['excluded'] == 6
    assert (tmp_path / 'dim-study_20090101.csv').exists()


def test_simulate_bad_thread_cap(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv('PFCRED_THREADS', 'many')
    code, _, err = run(['simulate', '--experiment', 'fig1', '--reps', '1', '--outdir', str(tmp_path)], capsys)
    assert code == 2 and 'PFCRED_THREADS' in err


def test_config_file(data_csv, tmp_path, capsys):
    (tmp_path / 'model.settings.toml').write_text('[numerics]\nalpha = 0.01\n')
    config = tmp_path / 'run.toml'
    config.write_text(f"modelsettings_file = 'model.settings.toml'\ndata_file = 'data.csv'\n"
                      f"response = 'y'\nbasis = 'poly:3'\n")
    code, out, _ = run(['select-d', '--config', str(config)], capsys)
    assert code == 0 and json.loads(out)['alpha'] == 0.01
    code, out, _ = run(['select-d', '--config', str(config), '--alpha', '0.2'], capsys)
    assert json.loads(out)['alpha'] == 0.2
