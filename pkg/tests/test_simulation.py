import math

import numpy as np
import hypothesis.strategies as st

from hypothesis import given, settings
from pytest import approx, fixture, raises

from models.density import prior_density
from models.dp import PolicyTable, solve
from models.market import ModelParams, irra_utilities
from models.simulation import (QUANTITIES, aggregate, estimate, fixed_policy_rollout, period_label,
                               records_to_frame, rollout, summarize)
from utils.errors import AdmissibilityError

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def constant_policy(grids, T, c_fraction, pi_fraction):
    shape = (T, len(grids.x_grid), grids.q_set.size)
    return PolicyTable(np.full(shape, c_fraction), np.full(shape, pi_fraction))


@fixture
def solved_policy(small_grids, short_params, utilities, coarse_kernels):
    return solve(small_grids, short_params, utilities, coarse_kernels)[1]


@fixture
def result(solved_policy, small_grids, short_params, utilities, coarse_kernels, coarse_grid):
    return rollout(solved_policy, small_grids, short_params, utilities, coarse_kernels,
                   prior_density(coarse_grid), n_paths=50, seed=9)


def test_rollout_is_reproducible(solved_policy, small_grids, short_params, utilities,
                                 coarse_kernels, coarse_grid, result):
    again = rollout(solved_policy, small_grids, short_params, utilities, coarse_kernels,
                    prior_density(coarse_grid), n_paths=50, seed=9)
    assert all(np.array_equal(a.wealth, b.wealth) for a, b in zip(result.records, again.records))
    assert np.array_equal(result.utilities, again.utilities)


def test_early_consumption_is_stable_in_the_path_count(solved_policy, small_grids, short_params,
                                                       utilities, coarse_kernels, coarse_grid):
    def early_consumption(n):
        out = rollout(solved_policy, small_grids, short_params, utilities, coarse_kernels,
                      prior_density(coarse_grid), n_paths=n, seed=31)
        return np.mean([r.consumption[:2].sum() for r in out.records])

    few, many = early_consumption(500), early_consumption(1000)
    assert many > 0
    assert abs(few - many) / many < 0.05


def test_zero_noise_paths_coincide(solved_policy, small_grids, short_params, utilities,
                                   coarse_kernels, coarse_grid):
    out = rollout(solved_policy, small_grids, short_params, utilities, coarse_kernels,
                  prior_density(coarse_grid), n_paths=3, seed=1, zero_noise=True)
    assert np.allclose(out.records[0].r_log, 0.05)
    assert np.array_equal(out.records[0].wealth, out.records[2].wealth)


def test_wealth_accounting_identity(result, short_params):
    for r in result.records:
        assert np.allclose(r.consumption + r.risky + r.riskfree, r.wealth[:-1], atol=1e-12)
        grown = r.risky * np.exp(r.r_log) + r.riskfree * (1.0 + short_params.r)
        assert np.allclose(grown, r.wealth[1:], atol=1e-12)


def test_holdings_are_feasible(result):
    for r in result.records:
        assert np.all(r.consumption >= 0) and np.all(r.risky >= 0)
        assert np.all(r.riskfree >= -1e-12)
        assert np.all(r.wealth >= 0)


def test_histograms_conserve_paths(result):
    hist = aggregate(result.records, bins=64)
    for name in QUANTITIES:
        assert all(c.sum() == len(result.records) for c in hist.counts[name])
    assert len(hist.counts['wealth']) == 4
    assert len(hist.counts['consumption']) == 3


def test_single_path_histogram(result):
    hist = aggregate(result.records[:1], bins=8)
    assert all(c.sum() == 1 for c in hist.counts['consumption'])
    frame = hist.to_frame()
    assert set(frame['label']) == {'T', 'T-1', 'T-2', 'T-3'}


def test_period_labels():
    assert period_label(10, 10) == 'T'
    assert period_label(8, 10) == 'T-2'
    assert period_label(0, 10) == 'T-10'


def test_records_frame(result):
    frame = records_to_frame(result.records)
    assert len(frame) == len(result.records) * 4
    assert (frame.loc[frame['t'] == 3, 'codebook_index'] == -1).all()


def test_constant_policy_matches_the_fixed_rule(small_grids, short_params, utilities,
                                                coarse_kernels, coarse_grid):
    policy = constant_policy(small_grids, 3, 0.25, 0.5)
    out = rollout(policy, small_grids, short_params, utilities, coarse_kernels,
                  prior_density(coarse_grid), n_paths=10, seed=4)
    fixed = fixed_policy_rollout(0.25, 0.5, short_params, utilities, n_paths=10, seed=4)
    assert np.allclose(out.utilities, fixed.values, atol=1e-12)


def test_consume_everything_at_once(utilities):
    p = ModelParams()
    est = fixed_policy_rollout(lambda t: 1.0 if t == 0 else 0.0, 0.0, p, utilities, n_paths=5, seed=0)
    assert np.all(est.terminal_wealth == 0.0)
    assert est.mean == approx(0.25 * math.sqrt(6.0 / 8.0))
    assert est.se == 0.0


def test_all_bank_compounds_at_the_riskless_rate(utilities):
    p = ModelParams()
    est = fixed_policy_rollout(0.0, 0.0, p, utilities, n_paths=5, seed=3)
    assert np.allclose(est.terminal_wealth, 6.0 * 1.03 ** p.T, rtol=1e-12)


def test_infeasible_rule_is_rejected(utilities):
    with raises(AdmissibilityError):
        fixed_policy_rollout(0.7, 0.5, ModelParams(), utilities, n_paths=1, seed=0)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_fixed_rules_keep_wealth_nonnegative(seed):
    est = fixed_policy_rollout(0.2, 0.8, ModelParams(T=4), irra_utilities(), n_paths=3, seed=seed)
    assert np.all(est.terminal_wealth >= 0)


def test_estimate_standard_error():
    est = estimate([1.0, 2.0, 3.0, 4.0])
    assert est.mean == 2.5
    assert est.se == approx(np.std([1, 2, 3, 4], ddof=1) / 2.0)
    assert est.upper() == approx(2.5 + 3 * est.se)


def test_summary_fields(result, short_params):
    summary = summarize(result, short_params)
    assert summary['paths'] + summary['collapsed_paths'] == 50
    assert set(summary['median_consumption']) == {'T-3', 'T-2', 'T-1'}
    assert set(summary['terminal_wealth_quantiles']) == {'5%', '25%', '50%', '75%', '95%'}
    assert summary['median_first_two_fraction'] == approx(summary['median_first_two_consumption'] / 6.0)
