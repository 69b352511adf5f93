"""Market dynamics: hidden factor, risky price, wealth recursion, path simulation.

Single risky asset and one factor (N = K = 1); control vectors are still passed as
arrays so the wealth recursion reads the same for more assets.
"""
from dataclasses import dataclass, field
import math

import numpy as np
import pandas as pd
from scipy import stats

from utils.errors import AdmissibilityError, ConfigValidationError, NumericalError
from utils.numerics import substream

CONSUMPTION_RANGES = ('from_zero', 'from_one')


@dataclass(frozen=True)
class ShockDensity:
    """Strictly positive unit-variance shock density (normal or Student-t)"""
    name: str = 'normal'
    df: float = 5.0

    @property
    def dist(self):
        if self.name == 'normal':
            return stats.norm()
        if self.name == 'student_t':
            return stats.t(self.df, scale=math.sqrt((self.df - 2.0) / self.df))
        raise ConfigValidationError([f'unknown shock density {self.name!r}'])

    def pdf(self, x):
        return self.dist.pdf(x)

    def logpdf(self, x):
        return self.dist.logpdf(x)

    def cdf(self, x):
        return self.dist.cdf(x)

    def rvs(self, rng, size):
        return self.dist.rvs(size=size, random_state=rng)


@dataclass(frozen=True)
class ModelParams:
    """Market, factor and preference parameters; defaults are the worked example"""
    r: float = 0.03
    mu0: float = 0.05
    vol_level: float = 0.25
    vol_depth: float = 0.75
    alpha: float = 0.2
    y_bar: float = 0.0
    sigma_Y: float = 0.2
    phi: ShockDensity = field(default_factory=ShockDensity)
    psi: ShockDensity = field(default_factory=ShockDensity)
    delta: float = 0.75
    T: int = 10
    y0: float = 1.5
    s0: float = 6.0
    x0: float = 6.0
    consumption_range: str = 'from_zero'

    def mu(self, y):
        return np.full_like(np.asarray(y, dtype=float), self.mu0)

    def sigma(self, y):
        y = np.asarray(y, dtype=float)
        return self.vol_level * (1.0 - self.vol_depth * np.exp(-y * y))

    @property
    def sigma_min(self):
        return self.vol_level * (1.0 - max(self.vol_depth, 0.0))

    def validate(self):
        errors = []
        if not self.sigma_min > 0:
            errors.append('model.vol_depth: sigma(y) must stay bounded away from 0')
        if not self.sigma_Y > 0:
            errors.append('model.sigma_Y: must be > 0')
        if not 0 < self.delta <= 1:
            errors.append('model.delta: must lie in (0, 1]')
        if int(self.T) != self.T or self.T < 1:
            errors.append('model.T: must be an integer >= 1')
        if self.x0 < 0:
            errors.append('model.x0: must be >= 0')
        if not self.s0 > 0:
            errors.append('model.s0: must be > 0')
        if self.consumption_range not in CONSUMPTION_RANGES:
            errors.append(f'model.consumption_range: one of {CONSUMPTION_RANGES}')
        for name, density in (('phi', self.phi), ('psi', self.psi)):
            if density.name not in ('normal', 'student_t'):
                errors.append(f'model.{name}.name: normal or student_t')
            elif density.name == 'student_t' and not density.df > 2:
                errors.append(f'model.{name}.df: must be > 2')
        if errors:
            raise ConfigValidationError(errors)
        return self

    def consumption_weight(self, t):
        """Whether u(c(t)) enters the objective under the configured summation range"""
        if self.consumption_range == 'from_one' and t == 0:
            return 0.0
        return 1.0


@dataclass
class Utilities:
    """Running utility u(c) and terminal utility u_T(y, x), both vectorised"""
    u: object
    u_T: object
    L_u: float = None
    L_u_b: float = None


def irra_utilities(consumption_scale=0.25, consumption_shift=2.0, terminal_scale=2.0, exponent=0.5):
    """Bounded increasing-relative-risk-aversion utilities"""
    def u(c):
        c = np.maximum(np.asarray(c, dtype=float), 0.0)
        return consumption_scale * (c / (consumption_shift + c)) ** exponent

    def u_T(y, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        a = terminal_scale * np.exp(-np.asarray(y, dtype=float)) * x
        return (a / (1.0 + a)) ** exponent

    return Utilities(u=u, u_T=u_T)


@dataclass
class PathSample:
    """One trajectory; r_log[t - 1] is the log-return realised at time t"""
    y: np.ndarray
    r_log: np.ndarray
    s: np.ndarray
    eps: np.ndarray = None


def step_factor(y, xi, p):
    return y + p.alpha * (p.y_bar - y) + p.sigma_Y * xi


def step_price(s, y_next, eps, p):
    """Advance the risky price; returns (new price, log-return)"""
    r_log = float(p.mu(y_next) + p.sigma(y_next) * eps)
    s_next = s * math.exp(r_log) if math.isfinite(r_log) else float('nan')
    if not (math.isfinite(r_log) and math.isfinite(s_next)):
        raise NumericalError(f'non-finite price step from s={s}, y={y_next}, eps={eps}')
    return s_next, r_log


def wealth_transition(t, x, c, pi, r_log, p, tol=1e-12):
    """Wealth after one period: risky holdings grow by e^R, the rest earns 1 + r"""
    pi = np.atleast_1d(np.asarray(pi, dtype=float))
    r_log = np.atleast_1d(np.asarray(r_log, dtype=float))
    if c < 0 or c > x * (1 + tol) + tol:
        raise AdmissibilityError(f't={t}: consumption {c} outside [0, {x}]')
    if np.any(pi < 0):
        raise AdmissibilityError(f't={t}: negative risky allocation {pi}')
    if c + pi.sum() > x * (1 + tol) + tol:
        raise AdmissibilityError(f't={t}: c + sum(pi) = {c + pi.sum()} exceeds wealth {x}')
    return float(np.sum(pi * np.exp(r_log)) + (x - pi.sum() - c) * (1.0 + p.r))


def simulate_path(p, seed, measure='physical', zero_noise=False, index=0):
    """Draw one trajectory of (Y, R^l, S); deterministic in (seed, index)"""
    rng = substream(seed, index)
    T = int(p.T)
    xi = p.psi.rvs(rng, T)
    eps = p.phi.rvs(rng, T)
    if zero_noise:
        xi = np.zeros(T)
        eps = np.zeros(T)
    y = np.empty(T + 1)
    s = np.empty(T + 1)
    r_log = np.empty(T)
    y[0], s[0] = p.y0, p.s0
    for t in range(T):
        if measure == 'physical':
            y[t + 1] = step_factor(y[t], xi[t], p)
            s[t + 1], r_log[t] = step_price(s[t], y[t + 1], eps[t], p)
        elif measure == 'reference':
            # returns ~ phi and factor ~ psi, independent of each other and of the past
            y[t + 1] = xi[t]
            r_log[t] = eps[t]
            s[t + 1] = s[t] * math.exp(r_log[t])
        else:
            raise ConfigValidationError([f'unknown measure {measure!r}'])
    return PathSample(y=y, r_log=r_log, s=s, eps=eps)


def simulate_paths(p, n_paths, seed, measure='physical'):
    return [simulate_path(p, seed, measure=measure, index=i) for i in range(n_paths)]


def standardized_returns(path, p):
    y = path.y[1:]
    return (path.r_log - p.mu(y)) / p.sigma(y)


def paths_to_frame(paths):
    rows = []
    for i, path in enumerate(paths):
        for t in range(len(path.y)):
            rows.append({
                'path': i,
                't': t,
                'Y': path.y[t],
                'R_log': path.r_log[t - 1] if t > 0 else np.nan,
                'S': path.s[t],
            })
    return pd.DataFrame(rows, columns=['path', 't', 'Y', 'R_log', 'S'])


def realized_utility(consumption, y_T, x_T, p, utilities):
    """Discounted utility of one consumption path plus the terminal utility"""
    total = 0.0
    for t, c in enumerate(consumption):
        total += p.consumption_weight(t) * p.delta ** t * float(utilities.u(c))
    return total + p.delta ** p.T * float(utilities.u_T(y_T, x_T))
