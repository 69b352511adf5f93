"""Unnormalized filter densities of the hidden factor on a fixed grid.

All integrals are composite trapezoid sums on the grid, so one filter step is a
matrix-vector product with the precomputed transition matrix.
"""
from dataclasses import dataclass
from functools import cached_property
import logging

import numpy as np
import pandas as pd
from scipy import stats

from models.market import step_factor
from utils.errors import DegenerateObservationError, DimensionError, FilterCollapseError
from utils.numerics import trapezoid_weights

logger = logging.getLogger(__name__)

PHI_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class FactorGrid:
    points: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim != 1 or len(points) < 2:
            raise DimensionError('factor grid needs at least two points')
        if not np.all(np.isfinite(points)) or not np.all(np.diff(points) > 0):
            raise DimensionError('factor grid must be finite and strictly increasing')
        object.__setattr__(self, 'points', points)

    @classmethod
    def uniform(cls, lo, hi, step):
        count = int(round((hi - lo) / step)) + 1
        return cls(np.linspace(lo, hi, count))

    @property
    def spacing(self):
        return np.diff(self.points)

    @cached_property
    def weights(self):
        return trapezoid_weights(self.points)

    @property
    def size(self):
        return len(self.points)

    @property
    def span(self):
        return self.points[-1] - self.points[0]

    def refine(self, factor=2, widen=0.0):
        """Finer grid (spacing / factor), optionally widened by `widen` on both sides"""
        lo, hi = self.points[0] - widen, self.points[-1] + widen
        step = self.spacing.max() / factor
        return FactorGrid.uniform(lo, hi, step)

    def same_as(self, other):
        return self is other or (
            self.size == other.size and np.array_equal(self.points, other.points))


@dataclass(frozen=True, eq=False)
class GriddedDensity:
    grid: FactorGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.size,):
            raise DimensionError(f'{values.shape} values for a grid of {self.grid.size} points')
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise FilterCollapseError('density values must be finite and nonnegative')
        object.__setattr__(self, 'values', values)

    @property
    def mass(self):
        return float(self.grid.weights @ self.values)

    def scaled(self, a):
        return GriddedDensity(self.grid, a * self.values)


class Kernels:
    """Observation kernel Phi(z, r) and transition kernel Psi(z, y) of the filter"""

    def __init__(self, params, grid):
        self.params = params
        self.grid = grid
        self.phi = params.phi
        z = grid.points
        # transition[i, j] = Psi(z_i, y_j) * w_j, so prediction is one matvec
        self.psi_matrix = self.Psi(z[:, None], z[None, :])
        self.transition = self.psi_matrix * grid.weights[None, :]

    def log_Phi(self, z, r):
        p = self.params
        sig = p.sigma(z)
        return self.phi.logpdf((r - p.mu(z)) / sig) - np.log(sig)

    def Phi(self, z, r):
        p = self.params
        sig = p.sigma(z)
        return self.phi.pdf((r - p.mu(z)) / sig) / sig

    def log_Psi(self, z, y):
        p = self.params
        return p.psi.logpdf((z - y - p.alpha * (p.y_bar - y)) / p.sigma_Y) - np.log(p.sigma_Y)

    def Psi(self, z, y):
        p = self.params
        return p.psi.pdf((z - y - p.alpha * (p.y_bar - y)) / p.sigma_Y) / p.sigma_Y

    def likelihood_ratio(self, r):
        """Phi(z, r) / phi(r) on the grid"""
        phi_r = float(self.phi.pdf(r))
        if not phi_r >= PHI_FLOOR:
            raise DegenerateObservationError(f'phi({r}) = {phi_r} below floor {PHI_FLOOR}')
        return self.Phi(self.grid.points, r) / phi_r

    def predict(self, values):
        return self.transition @ values


def _check_grid(rho, kernels):
    if not rho.grid.same_as(kernels.grid):
        raise DimensionError('density grid differs from the kernel grid')


def filter_step(rho_prev, r_log, kernels):
    """One step of the unnormalized filter recursion"""
    _check_grid(rho_prev, kernels)
    values = kernels.likelihood_ratio(r_log) * kernels.predict(rho_prev.values)
    return GriddedDensity(rho_prev.grid, np.maximum(values, 0.0))


def normalize(rho):
    mass = rho.mass
    if not (mass > 0 and np.isfinite(mass)):
        raise FilterCollapseError(f'cannot normalize a density of mass {mass}')
    return GriddedDensity(rho.grid, rho.values / mass)


def conditional_expectation(rho, f):
    """E[f(Y) | returns] from an unnormalized density; f is a callable or grid values"""
    values = f(rho.grid.points) if callable(f) else np.asarray(f, dtype=float)
    mass = rho.mass
    if not (mass > 0 and np.isfinite(mass)):
        raise FilterCollapseError(f'conditional expectation of a density of mass {mass}')
    return float(rho.grid.weights @ (values * rho.values)) / mass


def lambda_inverse_expectation_check(kernels, params, y_prev, half_width=8.0, points=801):
    """E[lambda_t^-1 | Y(t-1) = y_prev] under the physical measure; should equal 1.

    The expectation is taken over the shocks (eps, xi) ~ phi x psi that drive the
    simulator: Y = step_factor(y_prev, xi), R = mu(Y) + sigma(Y) eps, and
    lambda^-1 = phi(R) psi(Y) / (Phi(Y, R) Psi(Y, y_prev)) comes from the kernels.
    The shock box is sized so (Y, R) covers [-half_width, half_width]^2.
    """
    phi, psi = params.phi, params.psi
    # Y = (1 - alpha) y_prev + alpha y_bar + sigma_Y xi
    centre = (1.0 - params.alpha) * y_prev + params.alpha * params.y_bar
    xi = np.linspace((-half_width - centre) / params.sigma_Y,
                     (half_width - centre) / params.sigma_Y, points)
    eps_edge = (half_width + abs(params.mu0)) / params.sigma_min
    eps = np.linspace(-eps_edge, eps_edge, points)
    E, X = np.meshgrid(eps, xi, indexing='ij')
    Y = step_factor(y_prev, X, params)
    R = params.mu(Y) + params.sigma(Y) * E
    log_shocks = phi.logpdf(E) + psi.logpdf(X)
    log_lambda_inv = (phi.logpdf(R) + psi.logpdf(Y)
                      - kernels.log_Phi(Y, R) - kernels.log_Psi(Y, y_prev))
    integrand = np.exp(log_shocks + log_lambda_inv)
    return float(trapezoid_weights(eps) @ integrand @ trapezoid_weights(xi))


def prior_density(grid, kind='gaussian', mean=0.1, std=0.2, params=None):
    if kind == 'gaussian':
        values = stats.norm.pdf(grid.points, loc=mean, scale=std)
    elif kind == 'psi':
        values = params.psi.pdf(grid.points)
    else:
        raise ValueError(f'unknown prior kind {kind!r}')
    return GriddedDensity(grid, values)


def run_filter(prior, returns, kernels, normalize_each_step=False):
    """Belief evolution rho_0..rho_T along observed log-returns"""
    beliefs = [prior]
    rho = prior
    for r in returns:
        rho = filter_step(rho, r, kernels)
        if normalize_each_step:
            rho = normalize(rho)
        beliefs.append(rho)
    logger.debug('filter ran %d steps, final mass %.4g', len(returns), rho.mass)
    return beliefs


def density_to_frame(rho):
    return pd.DataFrame({'z': rho.grid.points, 'value': rho.values})


def density_from_frame(frame, grid=None):
    grid = grid or FactorGrid(frame['z'].to_numpy())
    return GriddedDensity(grid, frame['value'].to_numpy())
