"""Monte-Carlo evaluation of policies on physical-measure paths."""
from dataclasses import dataclass, field
import logging

import numpy as np
import pandas as pd

from models.density import filter_step, normalize
from models.dp import locate_state
from models.market import realized_utility, simulate_path, wealth_transition
from utils.errors import AdmissibilityError, DegenerateObservationError, FilterCollapseError

logger = logging.getLogger(__name__)

QUANTITIES = ('consumption', 'risky', 'riskfree', 'wealth')


@dataclass
class RolloutRecord:
    path: int
    wealth: np.ndarray
    consumption: np.ndarray
    risky: np.ndarray
    riskfree: np.ndarray
    r_log: np.ndarray
    codebook_index: np.ndarray
    y: np.ndarray
    utility: float = float('nan')

    @property
    def periods(self):
        return len(self.consumption)


@dataclass
class RolloutResult:
    records: list
    collapsed: list = field(default_factory=list)

    @property
    def utilities(self):
        return np.array([r.utility for r in self.records])


def rollout(policy, grids, p, utilities, kernels, prior, n_paths, seed,
            renormalize_filter=True, zero_noise=False):
    """Run the solved policy along `n_paths` physical paths with the filter updated online"""
    if n_paths < 1:
        raise ValueError('n_paths must be >= 1')
    T = int(p.T)
    records, collapsed = [], []
    start = normalize(prior) if renormalize_filter else prior
    for index in range(n_paths):
        path = simulate_path(p, seed, index=index, zero_noise=zero_noise)
        x, rho = p.x0, start
        wealth = np.empty(T + 1)
        c_path, risky, riskfree, kidx = (np.empty(T) for _ in range(4))
        wealth[0] = x
        try:
            for t in range(T):
                i, k = locate_state(x, rho, grids)
                c, pi = policy.control(t, i, k, x)
                r = path.r_log[t]
                c_path[t], risky[t], riskfree[t], kidx[t] = c, pi, x - c - pi, k
                x = wealth_transition(t, x, c, [pi], r, p)
                wealth[t + 1] = x
                rho = filter_step(rho, r, kernels)
                if renormalize_filter:
                    rho = normalize(rho)
        except (FilterCollapseError, DegenerateObservationError) as e:
            logger.warning('path %d excluded: %s', index, e)
            collapsed.append(index)
            continue
        record = RolloutRecord(path=index, wealth=wealth, consumption=c_path, risky=risky,
                               riskfree=riskfree, r_log=path.r_log.copy(),
                               codebook_index=kidx.astype(int), y=path.y)
        record.utility = realized_utility(c_path, path.y[T], wealth[T], p, utilities)
        records.append(record)
    logger.info('rollout: %d paths kept, %d collapsed', len(records), len(collapsed))
    return RolloutResult(records=records, collapsed=collapsed)


def period_label(t, T):
    n = T - t
    return 'T' if n == 0 else f'T-{n}'


@dataclass
class HistogramSet:
    T: int
    counts: dict
    edges: dict

    def to_frame(self):
        rows = []
        for name in QUANTITIES:
            for t, (counts, edges) in enumerate(zip(self.counts[name], self.edges[name])):
                for b, count in enumerate(counts):
                    rows.append({'quantity': name, 't': t, 'label': period_label(t, self.T),
                                 'bin_lo': edges[b], 'bin_hi': edges[b + 1], 'count': int(count)})
        return pd.DataFrame(rows)


def _series(records, name):
    return np.stack([getattr(r, name) for r in records])


def aggregate(records, bins=32):
    """Per-period histograms over [0, max observed] of each quantity (wider if rounding
    leaves a holding a hair below zero)"""
    if not records:
        raise ValueError('aggregate needs at least one record')
    T = records[0].periods
    counts, edges = {}, {}
    for name in QUANTITIES:
        data = _series(records, name)
        counts[name], edges[name] = [], []
        for column in data.T:
            lo = min(0.0, column.min())
            hi = column.max() if column.max() > lo else lo + 1.0
            c, e = np.histogram(column, bins=bins, range=(lo, hi))
            counts[name].append(c)
            edges[name].append(e)
    return HistogramSet(T=T, counts=counts, edges=edges)


def records_to_frame(records):
    rows = []
    for r in records:
        for t in range(r.periods + 1):
            last = t == r.periods
            rows.append({
                'path': r.path, 't': t, 'wealth': r.wealth[t],
                'consumption': np.nan if last else r.consumption[t],
                'risky': np.nan if last else r.risky[t],
                'riskfree': np.nan if last else r.riskfree[t],
                'r_log': np.nan if last else r.r_log[t],
                'codebook_index': -1 if last else int(r.codebook_index[t]),
            })
    return pd.DataFrame(rows)


@dataclass
class UtilityEstimate:
    mean: float
    se: float
    values: np.ndarray
    terminal_wealth: np.ndarray = None

    def upper(self, k=3.0):
        return self.mean + k * self.se


def estimate(values):
    values = np.asarray(values, dtype=float)
    se = values.std(ddof=1) / np.sqrt(len(values)) if len(values) > 1 else 0.0
    return UtilityEstimate(mean=float(values.mean()), se=float(se), values=values)


def _fraction(rule, t):
    return float(rule(t) if callable(rule) else rule)


def fixed_policy_rollout(c_rule, pi_rule, p, utilities, n_paths, seed, zero_noise=False):
    """Mean discounted utility of a rule consuming c_rule(t) and investing pi_rule(t) of wealth.

    Rules are constant fractions or callables of t.
    """
    T = int(p.T)
    for t in range(T):
        c, pi = _fraction(c_rule, t), _fraction(pi_rule, t)
        if c < 0 or pi < 0 or c + pi > 1.0 + 1e-12:
            raise AdmissibilityError(f't={t}: fractions c={c}, pi={pi} are not feasible')
    values, terminal = [], []
    for index in range(n_paths):
        path = simulate_path(p, seed, index=index, zero_noise=zero_noise)
        x = p.x0
        consumption = np.empty(T)
        for t in range(T):
            c, pi = _fraction(c_rule, t) * x, _fraction(pi_rule, t) * x
            consumption[t] = c
            x = wealth_transition(t, x, c, [pi], path.r_log[t], p)
        values.append(realized_utility(consumption, path.y[T], x, p, utilities))
        terminal.append(x)
    result = estimate(values)
    result.terminal_wealth = np.array(terminal)
    return result


def summarize(result, p):
    """Headline statistics of a rollout"""
    records = result.records
    summary = {'paths': len(records), 'collapsed_paths': len(result.collapsed)}
    if not records:
        return summary
    consumption = _series(records, 'consumption')
    wealth = _series(records, 'wealth')
    first_two = consumption[:, :2].sum(axis=1)
    utility = estimate(result.utilities)
    summary.update({
        'median_consumption': {period_label(t, p.T): float(np.median(consumption[:, t]))
                               for t in range(consumption.shape[1])},
        'median_first_two_consumption': float(np.median(first_two)),
        'median_first_two_fraction': float(np.median(first_two) / p.x0),
        'terminal_wealth_quantiles': {f'{int(q * 100)}%': float(np.quantile(wealth[:, -1], q))
                                      for q in (0.05, 0.25, 0.5, 0.75, 0.95)},
        'mean_utility': utility.mean,
        'utility_se': utility.se,
    })
    return summary
