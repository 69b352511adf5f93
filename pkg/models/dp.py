"""Backward dynamic programming on (wealth node, codebook row) states.

Controls are fractions of current wealth, so the risky and risk-free holdings of a
pair (c_frac, pi_frac) grow by the factor G = pi_frac * e^R + (1 - pi_frac - c_frac)(1 + r)
and the next wealth is x * G. Expectations over R use a fixed ReturnNodeSet.
"""
from dataclasses import dataclass, field
import logging
import time

import numpy as np
import pandas as pd

from models.market import wealth_transition
from models.quantizer import nearest_rows, project
from utils.errors import ConfigValidationError, InvariantViolation, NumericalError
from utils.numerics import nearest_node, top_excess

logger = logging.getLogger(__name__)

TIE_BREAK = 'smaller c_fraction first, then smaller pi_fraction'
BELIEF_STATES = ('normalized', 'unnormalized')


def wealth_grid(lo=0.0, hi=10.0, step=0.25):
    return np.linspace(lo, hi, int(round((hi - lo) / step)) + 1)


def control_fractions(step=0.05):
    return np.round(np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1), 12)


@dataclass(eq=False)
class StateGrids:
    x_grid: np.ndarray
    q_set: object
    return_nodes: object
    c_fractions: np.ndarray = field(default_factory=control_fractions)
    pi_fractions: np.ndarray = field(default_factory=control_fractions)

    def __post_init__(self):
        self.x_grid = np.asarray(self.x_grid, dtype=float)
        self.c_fractions = np.asarray(self.c_fractions, dtype=float)
        self.pi_fractions = np.asarray(self.pi_fractions, dtype=float)
        errors = []
        if np.any(self.x_grid < 0) or not np.all(np.diff(self.x_grid) > 0):
            errors.append('grids.wealth: nodes must be nonnegative and increasing')
        for name, fr in (('consumption', self.c_fractions), ('investment', self.pi_fractions)):
            if np.any(fr < 0) or np.any(fr > 1):
                errors.append(f'grids.{name}_fractions: must lie in [0, 1]')
        if errors:
            raise ConfigValidationError(errors)
        # lexicographic order: c ascending, then pi ascending
        pairs = [(c, p) for c in self.c_fractions for p in self.pi_fractions if c + p <= 1.0 + 1e-12]
        self.pairs = np.array(pairs, dtype=float).reshape(-1, 2)

    @property
    def n_states(self):
        return len(self.x_grid) * self.q_set.size


@dataclass
class ValueTable:
    values: np.ndarray
    saturated: int = 0
    exit_share: float = 0.0

    @property
    def T(self):
        return self.values.shape[0] - 1

    def __call__(self, t, i, k):
        return self.values[t, i, k]


@dataclass
class PolicyTable:
    c_fraction: np.ndarray
    pi_fraction: np.ndarray
    tie_break: str = TIE_BREAK

    def control(self, t, i, k, x):
        """Stored fractions applied to the actual wealth x"""
        return self.c_fraction[t, i, k] * x, self.pi_fraction[t, i, k] * x


@dataclass
class Transitions:
    """Control-independent cache: codebook row k at return node j moves to row
    next_rows[k, j] with probability weights[k, j]"""
    next_rows: np.ndarray
    weights: np.ndarray
    norm: str = 'sup'
    belief_state: str = 'normalized'


def _row_transitions(values, k, return_nodes, kernels, q, norm, belief_state):
    """Next rows and node weights for one density given by its grid values"""
    predicted = kernels.predict(values)
    J = len(return_nodes)
    propagated = np.stack([kernels.likelihood_ratio(r) * predicted for r in return_nodes.nodes])
    if belief_state == 'unnormalized':
        return nearest_rows(propagated, q, norm), return_nodes.weights.copy()
    masses = propagated @ q.grid.weights
    ok = np.isfinite(masses) & (masses > 0)
    rows = np.full(J, k, dtype=int)
    if ok.any():
        rows[ok] = nearest_rows(propagated[ok] / masses[ok, None], q, norm)
    # mass of rho_bar(r) is the predictive density of r over phi(r)
    weights = return_nodes.weights * np.where(ok, masses, 0.0)
    total = weights.sum()
    if not total > 0:
        raise NumericalError(f'row {k} carries no predictive mass on the return nodes')
    return rows, weights / total


def build_transitions(q, return_nodes, kernels, norm='sup', belief_state='normalized'):
    if belief_state not in BELIEF_STATES:
        raise ConfigValidationError([f'dp.belief_state: one of {BELIEF_STATES}'])
    next_rows = np.empty((q.size, len(return_nodes)), dtype=int)
    weights = np.empty((q.size, len(return_nodes)))
    for k in range(q.size):
        if k in q.dead:
            next_rows[k], weights[k] = k, return_nodes.weights
            continue
        next_rows[k], weights[k] = _row_transitions(q.codebook[k], k, return_nodes, kernels,
                                                    q, norm, belief_state)
    return Transitions(next_rows=next_rows, weights=weights, norm=norm, belief_state=belief_state)


def terminal_value(x, rho, u_T, normalize=False):
    """Integral of u_T(z, x) rho(z) dz on the grid; rho unnormalized unless asked"""
    value = float(rho.grid.weights @ (u_T(rho.grid.points, x) * rho.values))
    if normalize:
        value /= rho.mass
    return value


def _terminal_table(grids, utilities, normalize):
    q = grids.q_set
    z = q.grid.points
    payoff = np.broadcast_to(np.asarray(utilities.u_T(z[None, :], grids.x_grid[:, None]), dtype=float),
                             (len(grids.x_grid), len(z)))
    table = payoff @ (q.codebook * q.grid.weights[None, :]).T
    if normalize:
        # dead rows have zero mass and keep a zero terminal value
        masses = q.masses
        table = np.divide(table, masses[None, :], out=np.zeros_like(table),
                          where=masses[None, :] > 0)
    return table


def _growth(grids, p):
    c, pi = grids.pairs[:, 0], grids.pairs[:, 1]
    risky = np.exp(grids.return_nodes.nodes)
    return pi[:, None] * risky[None, :] + ((1.0 - pi - c) * (1.0 + p.r))[:, None]


def _next_value(next_values, x_grid, x_next, k_next):
    """V(t+1) at the nearest wealth node, extended linearly past the top node"""
    xi, _ = nearest_node(x_grid, x_next)
    value = next_values[int(xi), k_next]
    excess = float(top_excess(x_grid, x_next))
    if excess > 0:
        value += excess * (next_values[-1, k_next] - next_values[-2, k_next])
    return value


def bellman_operand(t, i, k, pair, grids, next_values, p, utilities, transitions=None, kernels=None,
                    belief_state='normalized'):
    """u(c) + delta * sum_j w_kj V(t+1, Proj x', Proj rho') for one state and control pair.

    With `transitions` the next codebook rows and node weights come from the cache,
    otherwise each propagated density is projected afresh (needs `kernels`).
    """
    x = grids.x_grid[i]
    c_frac, pi_frac = grids.pairs[pair]
    c, pi = c_frac * x, pi_frac * x
    q = grids.q_set
    if transitions is not None:
        rows, weights = transitions.next_rows[k], transitions.weights[k]
    else:
        rows, weights = _row_transitions(q.codebook[k], k, grids.return_nodes, kernels, q,
                                         'sup', belief_state)
    expectation = 0.0
    for j, r in enumerate(grids.return_nodes.nodes):
        x_next = wealth_transition(t, x, c, [pi], r, p)
        expectation += weights[j] * _next_value(next_values, grids.x_grid, x_next, int(rows[j]))
    return p.consumption_weight(t) * float(utilities.u(c)) + p.delta * expectation


def bellman_backup(t, i, k, grids, next_values, p, utilities, transitions=None, kernels=None,
                   belief_state='normalized'):
    """Best (value, (c_fraction, pi_fraction)) by enumerating every feasible pair"""
    best, best_pair = -np.inf, None
    for pair in range(len(grids.pairs)):
        value = bellman_operand(t, i, k, pair, grids, next_values, p, utilities,
                                transitions, kernels, belief_state)
        if value > best:
            best, best_pair = value, pair
    if best_pair is None:
        raise InvariantViolation(f'no feasible control at t={t}, x={grids.x_grid[i]}, k={k}')
    return best, tuple(grids.pairs[best_pair])


def solve(grids, p, utilities, kernels, belief_state='normalized', normalize_terminal=False,
          transitions=None):
    """Fill V(T, ., .) from the terminal utility, then back up t = T-1, ..., 0.

    Normalized belief states use mass-one rows and weight return node j for row k by
    the predictive probability of that return; unnormalized states keep the node
    weights and the raw row masses. Next wealth past the top node is extrapolated
    linearly from the last two nodes.
    """
    T = int(p.T)
    x = grids.x_grid
    q = grids.q_set
    I, K, P = len(x), q.size, len(grids.pairs)
    transitions = transitions or build_transitions(q, grids.return_nodes, kernels,
                                                   belief_state=belief_state)
    J = len(grids.return_nodes)

    G = _growth(grids, p)
    x_next = x[:, None, None] * G[None, :, :]
    xidx, sat = nearest_node(x, x_next)
    excess = top_excess(x, x_next)
    saturated_per_period = int(sat.sum()) * K
    if saturated_per_period:
        logger.info('%d (state, control, node) triples per period pass the top wealth node '
                    'and are extrapolated', saturated_per_period)
    consumption = grids.pairs[:, 0][None, :] * x[:, None]
    u_now = np.asarray(utilities.u(consumption), dtype=float)

    values = np.empty((T + 1, I, K))
    c_frac = np.empty((T, I, K))
    pi_frac = np.empty((T, I, K))
    values[T] = _terminal_table(grids, utilities, normalize_terminal or belief_state == 'normalized')
    _check_finite(values[T], T, x)
    logger.info('solving %d periods over %d states (%d control pairs, %d return nodes, %s beliefs)',
                T, I * K, P, J, belief_state)

    exiting = 0.0
    rows_idx = np.arange(I)
    for t in range(T - 1, -1, -1):
        started = time.perf_counter()
        nxt = values[t + 1]
        running = p.consumption_weight(t) * u_now
        for k in range(K):
            rows = transitions.next_rows[k]
            weights = transitions.weights[k]
            gathered = nxt[xidx, rows[None, None, :]]
            if I > 1:
                gathered = gathered + excess * (nxt[-1, rows] - nxt[-2, rows])[None, None, :]
            operand = running + p.delta * np.einsum('ipj,j->ip', gathered, weights)
            best = np.argmax(operand, axis=1)
            values[t, :, k] = operand[rows_idx, best]
            c_frac[t, :, k] = grids.pairs[best, 0]
            pi_frac[t, :, k] = grids.pairs[best, 1]
            exiting += float((sat[rows_idx, best] * weights[None, :]).sum())
        _check_finite(values[t], t, x)
        logger.debug('period %d backed up in %.3fs', t, time.perf_counter() - started)

    exit_share = exiting / (T * I * K) if T * I * K else 0.0
    if exit_share > 0.01:
        logger.warning('%.2f%% of next-period probability mass leaves the wealth grid under the '
                       'optimal policy', 100 * exit_share)
    return (ValueTable(values, saturated=saturated_per_period * T, exit_share=exit_share),
            PolicyTable(c_frac, pi_frac))


def _check_finite(table, t, x):
    bad = np.argwhere(~np.isfinite(table))
    if len(bad):
        i, k = bad[0]
        raise NumericalError(f'non-finite value at t={t}, x={x[i]}, k={k}')


def locate_state(x, rho, grids, norm='sup'):
    """(wealth node index, codebook row index) of a belief state"""
    i, _ = nearest_node(grids.x_grid, x)
    k, _ = project(rho, grids.q_set, norm)
    return int(i), k


def evaluate_policy_step(t, x, rho, policy, grids):
    """Control (c, pi) for the actual wealth x and belief rho"""
    i, k = locate_state(x, rho, grids)
    return policy.control(t, i, k, x)


def tables_to_frame(values, policy, grids):
    T = values.T
    I, K = values.values.shape[1:]
    t_idx, i_idx, k_idx = np.meshgrid(np.arange(T + 1), np.arange(I), np.arange(K), indexing='ij')
    c = np.full((T + 1, I, K), np.nan)
    pi = np.full((T + 1, I, K), np.nan)
    c[:T], pi[:T] = policy.c_fraction, policy.pi_fraction
    return pd.DataFrame({
        't': t_idx.ravel(),
        'x': grids.x_grid[i_idx.ravel()],
        'codebook_index': k_idx.ravel(),
        'value': values.values.ravel(),
        'c_fraction': c.ravel(),
        'pi_fraction': pi.ravel(),
    })


def tables_from_frame(frame):
    T = int(frame['t'].max())
    I = frame['x'].nunique()
    K = int(frame['codebook_index'].max()) + 1
    frame = frame.sort_values(['t', 'x', 'codebook_index'])
    values = frame['value'].to_numpy().reshape(T + 1, I, K)
    c = frame['c_fraction'].to_numpy().reshape(T + 1, I, K)[:T]
    pi = frame['pi_fraction'].to_numpy().reshape(T + 1, I, K)[:T]
    return ValueTable(values), PolicyTable(c, pi)
