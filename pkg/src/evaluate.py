# summarize Monte Carlo records using some common metrics
# every aggregate written by simlab is produced here, so tests can recompute it from the records

import numpy as np
import pandas as pd


def data_preprocess(values):
    # failed replications are stored as NaN and excluded from the metric (they are counted separately)
    values = np.asarray(values, dtype=float)
    return values[~np.isnan(values)]


def cal_median(values, preprocess=True):
    if preprocess:
        values = data_preprocess(values)
    return float(np.median(values)) if len(values) > 0 else np.nan


def cal_quartiles(values, preprocess=True):
    if preprocess:
        values = data_preprocess(values)
    if len(values) == 0:
        return np.nan, np.nan
    q1, q3 = np.percentile(values, [25, 75])
    return float(q1), float(q3)


def cal_mean(values, preprocess=True):
    if preprocess:
        values = data_preprocess(values)
    return float(np.mean(values)) if len(values) > 0 else np.nan


def cal_fraction(values, targets, preprocess=True):
    # fraction of replications whose value lies in targets, e.g. F(2,3) = cal_fraction(d, [2, 3])
    if preprocess:
        values = data_preprocess(values)
    if len(values) == 0:
        return np.nan
    return float(np.mean(np.isin(values, targets)))


def cal_rate(flags, preprocess=True):
    # empirical rate of a 0/1 outcome and its binomial standard error
    if preprocess:
        flags = data_preprocess(flags)
    k = len(flags)
    if k == 0:
        return np.nan, np.nan
    rate = float(np.mean(flags))
    return rate, float(np.sqrt(rate * (1 - rate) / k))


def summarize_angles(records):
    # records: rep, basis, angle_deg (NaN for failed fits)
    rows = []
    for basis, group in records.groupby('basis', sort=False):
        angles = group['angle_deg'].to_numpy(dtype=float)
        q1, q3 = cal_quartiles(angles)
        rows.append({'basis': basis, 'median_deg': cal_median(angles), 'q1_deg': q1, 'q3_deg': q3,
                     'mean_deg': cal_mean(angles), 'n_ok': int(np.sum(~np.isnan(angles))),
                     'n_failed': int(np.sum(np.isnan(angles)))})
    return pd.DataFrame(rows)


def summarize_dims(records, true_d=2):
    # records: cell, value, rep, method, chosen_d (NaN for failed fits)
    rows = []
    for (cell, method), group in records.groupby(['cell', 'method'], sort=False):
        chosen = group['chosen_d'].to_numpy(dtype=float)
        ok = data_preprocess(chosen)
        rows.append({'cell': cell, 'value': group['value'].iloc[0], 'method': method,
                     'F(2)': cal_fraction(chosen, [true_d]),
                     'F(2,3)': cal_fraction(chosen, [true_d, true_d + 1]),
                     'F(2,3,4)': cal_fraction(chosen, [true_d, true_d + 1, true_d + 2]),
                     'below': float(np.mean(ok < true_d)) if len(ok) else np.nan,
                     'above': float(np.mean(ok > true_d)) if len(ok) else np.nan,
                     'n_ok': len(ok), 'n_failed': int(np.sum(np.isnan(chosen)))})
    return pd.DataFrame(rows)


def summarize_levels(records):
    # records: cell, n, r, rep, reject (NaN for failed fits)
    rows = []
    for cell, group in records.groupby('cell', sort=False):
        flags = group['reject'].to_numpy(dtype=float)
        rate, se = cal_rate(flags)
        rows.append({'cell': cell, 'n': int(group['n'].iloc[0]), 'r': int(group['r'].iloc[0]),
                     'rejection_rate': rate, 'non_rejection_rate': 1 - rate if not np.isnan(rate) else np.nan,
                     'se': se, 'n_ok': int(np.sum(~np.isnan(flags))), 'n_failed': int(np.sum(np.isnan(flags)))})
    return pd.DataFrame(rows)
