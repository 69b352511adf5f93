import numpy as np
import hypothesis.strategies as st

from hypothesis import given, settings
from pytest import approx, fixture, raises

from models.density import FactorGrid, GriddedDensity, Kernels, normalize, prior_density
from models.dp import (StateGrids, bellman_backup, bellman_operand, build_transitions,
                       control_fractions, evaluate_policy_step, solve, tables_from_frame,
                       tables_to_frame, terminal_value, wealth_grid)
from models.market import ModelParams, Utilities, irra_utilities
from models.quantizer import (DEFAULT_MEANS, ReturnNodeSet, build_initial_codebook, project,
                              propagate_density)
from utils.errors import ConfigValidationError

wealth = st.floats(min_value=0.0, max_value=12.0)


@fixture
def solved(small_grids, short_params, utilities, coarse_kernels):
    return solve(small_grids, short_params, utilities, coarse_kernels)


def test_default_grids():
    assert len(wealth_grid()) == 41
    assert len(control_fractions()) == 21


def test_control_pairs_are_feasible_and_ordered(return_nodes, small_codebook):
    grids = StateGrids(wealth_grid(), small_codebook, return_nodes)
    assert len(grids.pairs) == 231
    assert tuple(grids.pairs[0]) == (0.0, 0.0)
    assert tuple(grids.pairs[1]) == (0.0, 0.05)
    assert tuple(grids.pairs[-1]) == (1.0, 0.0)
    assert np.all(grids.pairs.sum(axis=1) <= 1.0 + 1e-12)


def test_state_count_is_wealth_nodes_times_rows(grid, return_nodes):
    q = build_initial_codebook(DEFAULT_MEANS[::3], [0.1, 0.3, 0.5, 0.7, 0.9], grid)
    assert q.size == 25
    assert StateGrids(wealth_grid(), q, return_nodes).n_states == 1025


def test_fractions_outside_the_unit_interval_are_rejected(small_codebook, return_nodes):
    with raises(ConfigValidationError):
        StateGrids(wealth_grid(), small_codebook, return_nodes, [0.0, 1.5], [0.0, 1.0])


def test_terminal_value_of_a_narrow_density(grid, utilities):
    values = np.zeros(grid.size)
    values[-1] = 1.0 / grid.weights[-1]
    rho = GriddedDensity(grid, values)
    assert rho.mass == approx(1.0)
    assert terminal_value(6.0, rho, utilities.u_T) == approx(0.8533, abs=1e-4)


def test_constant_terminal_utility_gives_the_mass(prior):
    rho = prior.scaled(2.5)
    assert terminal_value(3.0, rho, lambda y, x: np.ones_like(y)) == approx(rho.mass)
    assert terminal_value(3.0, rho, lambda y, x: np.ones_like(y), normalize=True) == approx(1.0)


def test_terminal_value_is_linear_in_the_density(prior, utilities):
    assert terminal_value(4.0, prior.scaled(3.0), utilities.u_T) == approx(
        3.0 * terminal_value(4.0, prior, utilities.u_T))


def test_terminal_table_matches_terminal_value(solved, small_grids, utilities):
    values, _ = solved
    q = small_grids.q_set
    for i in (0, 3, 8):
        for k in range(q.size):
            assert values(values.T, i, k) == approx(
                terminal_value(small_grids.x_grid[i], q.row(k), utilities.u_T, normalize=True),
                rel=1e-12)


def test_unnormalized_terminal_table_keeps_the_row_mass(small_grids, short_params, utilities,
                                                       coarse_kernels):
    q = small_grids.q_set.copy()
    q.codebook[1] *= 3.0
    grids = StateGrids(small_grids.x_grid, q, small_grids.return_nodes,
                       small_grids.c_fractions, small_grids.pi_fractions)
    values, _ = solve(grids, short_params, utilities, coarse_kernels, belief_state='unnormalized')
    assert values(values.T, 4, 1) == approx(
        terminal_value(grids.x_grid[4], q.row(1), utilities.u_T), rel=1e-12)


def test_dead_rows_keep_a_finite_terminal_value(small_grids, short_params, utilities,
                                               coarse_kernels):
    q = small_grids.q_set.copy()
    q.codebook[2] = 0.0
    q.dead = frozenset({2})
    grids = StateGrids(small_grids.x_grid, q, small_grids.return_nodes,
                       small_grids.c_fractions, small_grids.pi_fractions)
    values, _ = solve(grids, short_params, utilities, coarse_kernels)
    assert np.all(values.values[values.T, :, 2] == 0.0)
    assert np.all(np.isfinite(values.values))


def test_myopic_investor_consumes_everything(small_grids, utilities, coarse_kernels):
    values, policy = solve(small_grids, ModelParams(T=3, delta=0.0), utilities, coarse_kernels)
    x = small_grids.x_grid
    for t in range(3):
        assert np.allclose(values.values[t], utilities.u(x)[:, None])
        assert np.all(policy.c_fraction[t, 1:, :] == 1.0)


def test_value_is_nondecreasing_in_wealth(solved):
    values, _ = solved
    assert np.all(np.diff(values.values, axis=1) >= -1e-12)


def test_value_is_bounded_by_the_utilities(solved):
    values, _ = solved
    assert np.all(values.values >= 0)
    # three running utilities below 0.25 and a terminal utility below 1 per unit of belief
    assert values.values[0].max() <= 3 * 0.25 + 1.0


def test_policy_attains_the_backed_up_value(solved, small_grids, short_params, utilities,
                                            coarse_kernels):
    values, policy = solved
    transitions = build_transitions(small_grids.q_set, small_grids.return_nodes, coarse_kernels)
    pairs = {tuple(p): n for n, p in enumerate(small_grids.pairs)}
    for t in range(values.T):
        for i in range(len(small_grids.x_grid)):
            for k in range(small_grids.q_set.size):
                pair = pairs[(policy.c_fraction[t, i, k], policy.pi_fraction[t, i, k])]
                operand = bellman_operand(t, i, k, pair, small_grids, values.values[t + 1],
                                          short_params, utilities, transitions)
                assert abs(operand - values(t, i, k)) <= 1e-10


def test_scalar_backup_matches_the_vectorised_solve(solved, small_grids, short_params, utilities,
                                                    coarse_kernels):
    values, _ = solved
    t = values.T - 1
    for i in (1, 4, 8):
        for k in range(small_grids.q_set.size):
            best, pair = bellman_backup(t, i, k, small_grids, values.values[t + 1], short_params,
                                        utilities, kernels=coarse_kernels)
            assert best == approx(values(t, i, k), abs=1e-10)
            assert sum(pair) <= 1.0 + 1e-12


def test_transition_cache_matches_fresh_projection(small_codebook, return_nodes, coarse_kernels):
    cache = build_transitions(small_codebook, return_nodes, coarse_kernels)
    for k in range(small_codebook.size):
        for j, r in enumerate(return_nodes.nodes):
            fresh, _ = project(normalize(propagate_density(small_codebook.row(k), r, coarse_kernels)),
                               small_codebook)
            assert cache.next_rows[k, j] == fresh


def test_node_weights_follow_the_predictive_density(small_codebook, return_nodes, coarse_kernels):
    cache = build_transitions(small_codebook, return_nodes, coarse_kernels)
    assert np.allclose(cache.weights.sum(axis=1), 1.0)
    for k in (0, 3):
        masses = np.array([propagate_density(small_codebook.row(k), r, coarse_kernels).mass
                           for r in return_nodes.nodes])
        expected = return_nodes.weights * masses
        assert np.allclose(cache.weights[k], expected / expected.sum(), rtol=1e-10)
    # predictive returns centre on mu0 = 0.05, far from the outer nodes
    centre = int(np.argmin(np.abs(return_nodes.nodes - 0.05)))
    assert np.all(cache.weights[:, centre] > cache.weights[:, 0])


def test_unnormalized_states_keep_the_node_weights(small_codebook, return_nodes, coarse_kernels):
    cache = build_transitions(small_codebook, return_nodes, coarse_kernels,
                              belief_state='unnormalized')
    assert np.allclose(cache.weights, return_nodes.weights[None, :])
    k, j = 2, 7
    fresh, _ = project(propagate_density(small_codebook.row(k), return_nodes.nodes[j],
                                         coarse_kernels), small_codebook)
    assert cache.next_rows[k, j] == fresh


def test_unknown_belief_state_is_rejected(small_codebook, return_nodes, coarse_kernels):
    with raises(ConfigValidationError):
        build_transitions(small_codebook, return_nodes, coarse_kernels, belief_state='raw')


def test_coarser_controls_never_do_better(small_grids, short_params, utilities, coarse_kernels):
    fine, _ = solve(small_grids, short_params, utilities, coarse_kernels)
    halves = control_fractions(0.5)
    coarse_grids = StateGrids(small_grids.x_grid, small_grids.q_set, small_grids.return_nodes,
                              halves, halves)
    coarse, _ = solve(coarse_grids, short_params, utilities, coarse_kernels)
    assert np.all(coarse.values <= fine.values + 1e-12)


@settings(max_examples=40, deadline=None)
@given(wealth, st.integers(min_value=0, max_value=2))
def test_evaluated_controls_are_feasible(x, t):
    p = ModelParams(T=3)
    grid = FactorGrid.uniform(-1.5, 1.5, 0.1)
    q = build_initial_codebook([-0.5, 0.5], [0.3], grid)
    fractions = control_fractions(0.25)
    grids = StateGrids(wealth_grid(0.0, 8.0, 1.0), q, ReturnNodeSet.equispaced(p.phi, 5),
                       fractions, fractions)
    _, policy = solve(grids, p, irra_utilities(), Kernels(p, grid))
    c, pi = evaluate_policy_step(t, x, normalize(prior_density(grid)), policy, grids)
    assert c >= 0 and pi >= 0
    assert c + pi <= x * (1 + 1e-12) + 1e-12


def test_zero_wealth_means_zero_controls(solved, small_grids, coarse_grid):
    _, policy = solved
    assert evaluate_policy_step(0, 0.0, normalize(prior_density(coarse_grid)), policy,
                                small_grids) == (0.0, 0.0)


def test_saturation_is_counted(small_codebook, return_nodes, short_params, utilities,
                               coarse_kernels):
    fractions = control_fractions(0.5)
    grids = StateGrids(wealth_grid(0.0, 2.0, 1.0), small_codebook, return_nodes,
                       fractions, fractions)
    values, _ = solve(grids, short_params, utilities, coarse_kernels)
    assert values.saturated > 0
    assert 0.0 <= values.exit_share <= 1.0


def test_wealth_past_the_top_node_is_extrapolated(small_codebook, return_nodes, coarse_kernels):
    """Linear terminal utility makes the linear extension exact: 2 * 1.03, not the clamped 2"""
    p = ModelParams(T=1, delta=1.0)
    utilities = Utilities(u=lambda c: 0.0 * np.asarray(c), u_T=lambda y, x: 0.0 * y + x)
    grids = StateGrids(np.array([0.0, 1.0, 2.0]), small_codebook, return_nodes, [0.0], [0.0])
    values, _ = solve(grids, p, utilities, coarse_kernels)
    assert np.allclose(values.values[0, 2, :], 2.0 * (1.0 + p.r), rtol=1e-12)
    assert values.exit_share == approx(1.0 / 3.0)


def test_terminal_wealth_investor_never_consumes(small_codebook, return_nodes, coarse_kernels):
    """Risk-neutral terminal wealth with no running utility is maximised by compounding"""
    p = ModelParams(T=2, delta=1.0)
    utilities = Utilities(u=lambda c: 0.0 * np.asarray(c), u_T=lambda y, x: 0.0 * y + x)
    x = np.arange(0.0, 20.0, 0.5)
    fractions = control_fractions(1.0)
    grids = StateGrids(x, small_codebook, return_nodes, fractions, fractions)
    values, policy = solve(grids, p, utilities, coarse_kernels)
    assert np.all(policy.c_fraction == 0.0)
    assert np.all(values.values[0, 0, :] == 0.0)
    assert np.all(values.values[0, 1:, :] > 0.0)


def test_tables_frame_round_trip(solved, small_grids):
    values, policy = solved
    frame = tables_to_frame(values, policy, small_grids)
    assert frame.loc[frame['t'] == values.T, 'c_fraction'].isna().all()
    back_values, back_policy = tables_from_frame(frame)
    assert np.array_equal(back_values.values, values.values)
    assert np.array_equal(back_policy.c_fraction, policy.c_fraction)
