import numpy as np
import pandas as pd
import pytest

import evaluate


def test_metrics_skip_failed_replications():
    values = [1.0, np.nan, 3.0, 2.0]
    assert evaluate.cal_median(values) == 2.0
    assert evaluate.cal_mean(values) == 2.0
    assert evaluate.cal_quartiles(values) == (1.5, 2.5)
    assert np.isnan(evaluate.cal_median([np.nan]))


def test_cal_fraction():
    chosen = [2, 2, 3, 1, 4, np.nan]
    assert evaluate.cal_fraction(chosen, [2]) == pytest.approx(0.4)
    assert evaluate.cal_fraction(chosen, [2, 3, 4]) == pytest.approx(0.8)


def test_cal_rate():
    rate, se = evaluate.cal_rate([1, 0, 0, 0, np.nan])
    assert rate == 0.25
    assert se == pytest.approx(np.sqrt(0.25 * 0.75 / 4))


def test_summarize_dims():
    records = pd.DataFrame({'cell': 0, 'value': 200, 'method': 'bic', 'chosen_d': [2, 2, 1, 3, np.nan]})
    row = evaluate.summarize_dims(records).iloc[0]
    assert row['F(2)'] == 0.5 and row['F(2,3)'] == 0.75
    assert row['below'] == 0.25 and row['above'] == 0.25
    assert row['n_ok'] == 4 and row['n_failed'] == 1


def test_summarize_levels():
    records = pd.DataFrame({'cell': [0, 0, 1, 1], 'n': [20, 20, 40, 40], 'r': 1, 'reject': [1.0, 0.0, 0.0, 0.0]})
    table = evaluate.summarize_levels(records)
    assert list(table['rejection_rate']) == [0.5, 0.0]
    assert list(table['non_rejection_rate']) == [0.5, 1.0]
