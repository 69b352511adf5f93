"""Density quantization sets: codebooks of grid densities, their training and pruning.

A codebook is a matrix with one row per density evaluated on the factor grid.
Training is competitive learning: each sample moves only its projection winner
(or every row, under the literal matrix reading of the update). Rows left idle for a
whole window are reseeded from recent samples, as k-means relocates empty clusters.
"""
from dataclasses import dataclass, field
import logging
import math

import numpy as np
import pandas as pd
from scipy import integrate, stats

from models.density import FactorGrid, GriddedDensity, filter_step, normalize
from models.market import simulate_path
from utils.errors import (BoundUnavailableError, ConfigValidationError, DimensionError,
                          FilterCollapseError, NumericalError, PruningError)
from utils.numerics import substream

logger = logging.getLogger(__name__)

DEFAULT_MEANS = tuple(np.round(np.arange(-1.5, 1.5 + 1e-9, 0.25), 2))
DEFAULT_STDS = (0.1, 0.3, 0.5, 0.7, 0.9)
UPDATE_RULES = ('clvq', 'gradient', 'matrix')
PROJECTION_NORMS = ('sup', 'l2')


@dataclass(eq=False)
class QuantizationSet:
    grid: object
    codebook: np.ndarray
    dead: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        codebook = np.atleast_2d(np.asarray(self.codebook, dtype=float))
        if codebook.shape[1] != self.grid.size:
            raise DimensionError(
                f'codebook has {codebook.shape[1]} columns for a grid of {self.grid.size} points')
        if np.any(codebook < 0) or not np.all(np.isfinite(codebook)):
            raise NumericalError('codebook entries must be finite and nonnegative')
        self.codebook = codebook
        self.dead = frozenset(self.dead)

    @property
    def size(self):
        return self.codebook.shape[0]

    @property
    def alive(self):
        return np.array([k for k in range(self.size) if k not in self.dead], dtype=int)

    @property
    def values(self):
        """The multiset G_n of every codebook value"""
        return self.codebook.ravel()

    @property
    def masses(self):
        return self.codebook @ self.grid.weights

    def row(self, k):
        return GriddedDensity(self.grid, self.codebook[k])

    def copy(self):
        return QuantizationSet(self.grid, self.codebook.copy(), self.dead)


@dataclass(frozen=True)
class TrainingSchedule:
    """Step sizes beta_i = a / (b + i), i = 1..iterations"""
    a: float = 1.0
    b: float = 10.0
    iterations: int = 500
    seed: int = 0

    def beta(self, i):
        return self.a / (self.b + i)

    def validate(self, prefix='quantizer.schedule'):
        errors = []
        if not self.a > 0:
            errors.append(f'{prefix}.a: must be > 0')
        if not self.b >= 0:
            errors.append(f'{prefix}.b: must be >= 0')
        if int(self.iterations) != self.iterations or self.iterations < 1:
            errors.append(f'{prefix}.iterations: must be an integer >= 1')
        if errors:
            raise ConfigValidationError(errors)
        return self


@dataclass(frozen=True, eq=False)
class ReturnNodeSet:
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.shape != weights.shape or nodes.ndim != 1:
            raise DimensionError('return nodes and weights must be 1-d arrays of equal length')
        if len(nodes) > 1 and not np.all(np.diff(nodes) > 0):
            raise ConfigValidationError(['grids.return_nodes: nodes must be strictly increasing'])
        if np.any(weights < 0) or not math.isclose(weights.sum(), 1.0, abs_tol=1e-12):
            raise ConfigValidationError(['grids.return_nodes: weights must be >= 0 and sum to 1'])
        object.__setattr__(self, 'nodes', nodes)
        object.__setattr__(self, 'weights', weights)

    @classmethod
    def equispaced(cls, phi, count=41, half_width=1.0):
        """Equispaced nodes on [-half_width, half_width], weights phi(r_j) renormalized"""
        nodes = np.linspace(-half_width, half_width, count) if count > 1 else np.zeros(1)
        weights = np.asarray(phi.pdf(nodes), dtype=float)
        return cls(nodes, weights / weights.sum())

    def __len__(self):
        return len(self.nodes)


def _check_grid(rho, q):
    if not rho.grid.same_as(q.grid):
        raise DimensionError('density grid differs from the codebook grid')


def row_distances(values, q, norm='sup'):
    """Distance from grid values (shape (..., m)) to every codebook row; dead rows are inf"""
    diff = np.asarray(values, dtype=float)[..., None, :] - q.codebook
    if norm == 'sup':
        dist = np.abs(diff).max(axis=-1)
    elif norm == 'l2':
        dist = np.sqrt((diff * diff) @ q.grid.weights)
    else:
        raise ValueError(f'unknown projection norm {norm!r}')
    if q.dead:
        dist[..., sorted(q.dead)] = np.inf
    return dist


def nearest_rows(values, q, norm='sup'):
    """Projection indices for a stack of grid functions; ties to the lowest index"""
    return np.argmin(row_distances(values, q, norm), axis=-1)


def project(rho, q, norm='sup'):
    _check_grid(rho, q)
    k = int(nearest_rows(rho.values, q, norm))
    return k, q.row(k)


def propagate_density(rho, r, kernels):
    """rho_bar(., r): the filter step applied to a codebook density at a return node"""
    return filter_step(rho, r, kernels)


def training_target(rho_source, r_hat, kernels, normalized=False):
    """rho_bar(., r_hat), rescaled to unit mass when training on normalized beliefs"""
    rho_bar = propagate_density(rho_source, r_hat, kernels)
    return normalize(rho_bar) if normalized else rho_bar


def propagated_derivative(rho_source, r_hat, kernels, h=1e-4, normalized=False):
    """d rho_bar(z, r) / dr at r_hat by central differences"""
    up = training_target(rho_source, r_hat + h, kernels, normalized).values
    down = training_target(rho_source, r_hat - h, kernels, normalized).values
    return (up - down) / (2.0 * h)


def incremental_H(q, winner, r_hat, rho_source, kernels, rule='gradient', h=1e-4,
                  normalized=False):
    """Update for the winning row: (d rho_bar / dr) * (rho_bar - q[winner]) under the
    gradient rule, the plain difference rho_bar - q[winner] under the clvq rule"""
    rho_bar = training_target(rho_source, r_hat, kernels, normalized).values
    diff = rho_bar - q.codebook[winner]
    if rule == 'clvq':
        return diff
    if rule == 'gradient':
        return propagated_derivative(rho_source, r_hat, kernels, h, normalized) * diff
    raise ValueError(f'incremental_H has no winner-only form for rule {rule!r}')


def incremental_H_matrix(q, r_hat, rho_source, kernels, h=1e-4, normalized=False):
    """Full-matrix reading: every row k moves by (d rho_bar / dr) * (rho_bar - q[k])"""
    rho_bar = training_target(rho_source, r_hat, kernels, normalized).values
    deriv = propagated_derivative(rho_source, r_hat, kernels, h, normalized)
    return deriv[None, :] * (rho_bar[None, :] - q.codebook)


class FilterPathSampler:
    """Training pairs (normalized rho_{t-1}, R(t)) along fresh physical-measure paths"""

    def __init__(self, params, kernels, prior, seed):
        self.params = params
        self.kernels = kernels
        self.prior = normalize(prior)
        self.seed = seed
        self.paths_used = 0

    def __iter__(self):
        index = 0
        while True:
            path = simulate_path(self.params, self.seed, index=index)
            index += 1
            self.paths_used = index
            rho = self.prior
            for r in path.r_log:
                yield rho, float(r)
                try:
                    rho = normalize(filter_step(rho, r, self.kernels))
                except FilterCollapseError:
                    logger.warning('training path %d collapsed, drawing a new one', index - 1)
                    break


@dataclass
class TrainingResult:
    quantizer: QuantizationSet
    distortion_sup: np.ndarray
    distortion_l2: np.ndarray
    wins: np.ndarray
    dead: list
    reseeded: int = 0
    retired: list = field(default_factory=list)

    def trace_frame(self):
        return pd.DataFrame({
            'iteration': np.arange(1, len(self.distortion_sup) + 1),
            'distortion_sup': self.distortion_sup,
            'distortion_l2': self.distortion_l2,
        })


def _retire_rows(q, rows):
    q.codebook[rows] = 0.0
    q.dead = q.dead | set(int(k) for k in rows)
    if len(q.dead) == q.size:
        raise NumericalError('every codebook row vanished during training')


def train(q0, schedule, source, kernels, update_rule='clvq', projection_norm='sup', h=1e-4,
          normalize_targets=False, reseed_window=0):
    """Stochastic-gradient training of a codebook; rows are clamped at zero after each step.

    With reseed_window > 0, every live row that won no sample during the last window is
    replaced by one of that window's targets, and rows still without a win since their
    last seeding are retired when training ends. Reseeding never happens after the final
    window, so the retired rows are exactly the empty cells.
    """
    if update_rule not in UPDATE_RULES:
        raise ConfigValidationError([f'quantizer.update_rule: one of {UPDATE_RULES}'])
    if int(reseed_window) != reseed_window or reseed_window < 0:
        raise ConfigValidationError(['quantizer.reseed_window: must be an integer >= 0'])
    q = q0.copy()
    weights = q.grid.weights
    samples = iter(source)
    rng = substream(schedule.seed, 1)
    dist_sup = np.empty(schedule.iterations)
    dist_l2 = np.empty(schedule.iterations)
    wins = np.zeros(q.size, dtype=int)
    wins_since_seed = np.zeros(q.size, dtype=int)
    window_targets, window_winners = [], set()
    reseeded = 0
    logger.info('training %d rows for %d iterations (%s rule, %s targets)', q.size,
                schedule.iterations, update_rule, 'normalized' if normalize_targets else 'raw')

    for i in range(1, schedule.iterations + 1):
        rho_src, r_hat = next(samples)
        rho_bar = training_target(rho_src, r_hat, kernels, normalize_targets)
        winner, row = project(rho_bar, q, projection_norm)
        diff = rho_bar.values - row.values
        dist_sup[i - 1] = np.abs(diff).max() ** 2
        dist_l2[i - 1] = float((diff * diff) @ weights)
        wins[winner] += 1
        wins_since_seed[winner] += 1

        beta = schedule.beta(i)
        if update_rule == 'matrix':
            step = incremental_H_matrix(q, r_hat, rho_src, kernels, h, normalize_targets)
            q.codebook = np.maximum(q.codebook + beta * step, 0.0)
        else:
            step = incremental_H(q, winner, r_hat, rho_src, kernels, update_rule, h,
                                 normalize_targets)
            q.codebook[winner] = np.maximum(q.codebook[winner] + beta * step, 0.0)

        newly_dead = [k for k in range(q.size)
                      if k not in q.dead and not np.any(q.codebook[k] > 0)]
        if newly_dead:
            logger.warning('iteration %d: rows %s vanished after clamping', i, newly_dead)
            _retire_rows(q, newly_dead)

        if reseed_window:
            window_targets.append(rho_bar.values)
            window_winners.add(winner)
            if i % reseed_window == 0 and i < schedule.iterations:
                idle = [k for k in q.alive if k not in window_winners]
                for k in idle:
                    q.codebook[k] = window_targets[int(rng.integers(len(window_targets)))]
                    wins_since_seed[k] = 0
                reseeded += len(idle)
                if idle:
                    logger.debug('iteration %d: reseeded %d idle rows', i, len(idle))
                window_targets, window_winners = [], set()
        if i % 50 == 0:
            logger.debug('iteration %d: distortion %.4g', i, dist_sup[:i].mean())

    retired = []
    if reseed_window:
        retired = [int(k) for k in q.alive if wins_since_seed[k] == 0]
        if retired:
            logger.info('retiring %d rows that won no sample since their last seeding', len(retired))
            _retire_rows(q, retired)
    logger.info('training done, %d rows reseeded, %d dead rows', reseeded, len(q.dead))
    return TrainingResult(quantizer=q, distortion_sup=dist_sup, distortion_l2=dist_l2,
                          wins=wins, dead=sorted(q.dead), reseeded=reseeded, retired=retired)


@dataclass
class PruneResult:
    quantizer: QuantizationSet
    kept: np.ndarray
    removals: list

    def log_frame(self):
        return removal_log_to_frame(self.removals)


def prune(q, eps=0.1, trials=5000, seed=0):
    """Randomly compare ordered pairs of rows and drop the second when it lies within
    relative L1 distance eps of the first. Indices in the log refer to the input codebook."""
    if eps < 0:
        raise ConfigValidationError(['quantizer.prune_eps: must be >= 0'])
    rng = substream(seed)
    survivors = list(q.alive)
    removals = []
    for trial in range(trials):
        if len(survivors) < 2:
            break
        a, b = rng.choice(len(survivors), size=2, replace=False)
        k1, k2 = survivors[a], survivors[b]
        q1, q2 = q.codebook[k1], q.codebook[k2]
        denom = np.abs(q1).sum()
        if denom == 0:
            continue
        rel = float(np.abs(q1 - q2).sum() / denom)
        if rel < eps:
            survivors.remove(k2)
            removals.append({'trial': trial, 'removed': int(k2),
                             'survivor': int(k1), 'distance': rel})
    if not survivors:
        raise PruningError(f'pruning with eps={eps} left no rows')
    kept = np.array(survivors, dtype=int)
    logger.info('pruning kept %d of %d rows', len(kept), q.size)
    return PruneResult(QuantizationSet(q.grid, q.codebook[kept]), kept, removals)


def build_initial_codebook(means, stds, grid):
    """One Gaussian density per (mean, std) pair, means varying slowest"""
    means, stds = list(means), list(stds)
    if not means or not stds:
        raise ConfigValidationError(['quantizer.means/stds: must be nonempty'])
    if any(s <= 0 for s in stds):
        raise ConfigValidationError(['quantizer.stds: must be > 0'])
    rows = [stats.norm.pdf(grid.points, loc=m, scale=s) for m in means for s in stds]
    return QuantizationSet(grid, np.array(rows))


def empirical_distortion(q, samples, metric='sup'):
    """Mean squared distance from each sample to its projection (sup norm on the grid, or L2)"""
    if not samples:
        raise ValueError('empirical_distortion needs at least one sample')
    values = np.stack([s.values for s in samples])
    for s in samples:
        _check_grid(s, q)
    dist = row_distances(values, q, metric).min(axis=-1)
    return float(np.mean(dist ** 2))


def essential_support(q, threshold=0.01):
    """Smallest grid interval outside which each live row is below threshold * its own max"""
    codebook = q.codebook[q.alive]
    mask = np.any(codebook >= threshold * codebook.max(axis=1, keepdims=True), axis=0)
    idx = np.flatnonzero(mask)
    return float(q.grid.points[idx[0]]), float(q.grid.points[idx[-1]])


def zador_constant(n, kind='exact'):
    """Quantization constant J_n: exact values for n = 1, 2 or the n / (2 pi e) asymptote"""
    if kind == 'asymptotic':
        return n / (2.0 * math.pi * math.e)
    if kind != 'exact':
        raise ValueError(f'unknown constant kind {kind!r}')
    if n == 1:
        return 1.0 / 12.0
    if n == 2:
        # hexagonal lattice, summed over both coordinates
        return 2.0 * 5.0 / (18.0 * math.sqrt(3.0))
    raise BoundUnavailableError('J_n', f'no exact constant for n={n}')


def zador_bound(n_dim, K, f, half_width=10.0, kind='exact'):
    """K^(-2/n) J_n (integral of f^(n/(n+2)))^((n+2)/n) with the integral truncated to
    [-half_width, half_width]^n"""
    if K < 1:
        raise ValueError('codebook size must be >= 1')
    power = n_dim / (n_dim + 2.0)
    if n_dim == 1:
        value, _ = integrate.quad(lambda x: f(x) ** power, -half_width, half_width, limit=200)
    elif n_dim == 2:
        value, _ = integrate.dblquad(lambda y, x: f(x, y) ** power,
                                     -half_width, half_width, -half_width, half_width)
    else:
        raise BoundUnavailableError('zador', f'quadrature for n={n_dim} not supported')
    if not np.isfinite(value):
        raise BoundUnavailableError('zador', 'integral is not finite')
    return K ** (-2.0 / n_dim) * zador_constant(n_dim, kind) * value ** (1.0 / power)


def train_scalar_quantizer(sampler, K, schedule, init=None):
    """CLVQ on the real line; sampler(rng, size) draws the source.

    Starts from the companding points sqrt(3) Phi^-1((i + 1/2) / K), which suit a
    standard normal source.
    """
    if init is None:
        points = math.sqrt(3.0) * stats.norm.ppf((np.arange(K) + 0.5) / K)
    else:
        points = np.array(init, dtype=float)
    rng = substream(schedule.seed)
    draws = sampler(rng, schedule.iterations)
    for i, x in enumerate(draws, start=1):
        w = int(np.argmin(np.abs(points - x)))
        points[w] += schedule.beta(i) * (x - points[w])
    return np.sort(points)


def scalar_distortion(points, samples):
    samples = np.asarray(samples, dtype=float)
    dist = np.abs(samples[:, None] - np.asarray(points)[None, :]).min(axis=1)
    return float(np.mean(dist ** 2))


def codebook_to_frame(q):
    columns = [repr(float(z)) for z in q.grid.points]
    return pd.DataFrame(q.codebook, columns=columns)


def codebook_from_frame(frame, grid=None):
    """Codebook from its CSV table; all-zero rows come back marked dead"""
    grid = grid or FactorGrid(np.array([float(c) for c in frame.columns]))
    codebook = frame.to_numpy(dtype=float)
    dead = {k for k in range(len(codebook)) if not np.any(codebook[k] > 0)}
    return QuantizationSet(grid, codebook, dead)


def removal_log_to_frame(removals):
    return pd.DataFrame(removals, columns=['trial', 'removed', 'survivor', 'distance'])
