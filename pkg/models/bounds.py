"""Constants and error bounds for the quantized dynamic program.

Every Lipschitz and sup constant is a numerical estimate over the truncated
working domain; reports carry the inputs next to the composed bound.
"""
from dataclasses import asdict, dataclass, field
import logging
import math

import numpy as np
from scipy import integrate, special

from models.density import normalize
from models.dp import StateGrids, solve
from models.quantizer import zador_constant
from utils.errors import BoundUnavailableError, DivergentTailError, DomainTooWideError
from utils.numerics import substream

logger = logging.getLogger(__name__)

RETURN_DIM = 1   # N: dimension of the return vector
FACTOR_DIM = 1   # K: dimension of the hidden factor
REFERENCE_BOUND = 0.81


def double_factorial(n):
    return math.prod(range(n, 0, -2))


def compute_In(n):
    """Integral of cos^n over [-pi/2, pi/2] (I_n = (n-1)/n I_{n-2}, I_0 = pi, I_1 = 2)"""
    if n < 0:
        raise ValueError('n must be >= 0')
    ratio = double_factorial(n - 1) / double_factorial(n)
    return math.pi * ratio if n % 2 == 0 else 2.0 * ratio


def printed_In(n):
    """The closed form n!!/(n+1)!! (times pi or 2); differs from compute_In for n >= 1"""
    if n < 0:
        raise ValueError('n must be >= 0')
    ratio = double_factorial(n) / double_factorial(n + 1)
    return math.pi * ratio if n % 2 == 0 else 2.0 * ratio


def sphere_area(N):
    """Surface area of the unit sphere in R^N (2 for N = 1)"""
    return 2.0 * math.pi ** (N / 2.0) / special.gamma(N / 2.0)


@dataclass
class VNReport:
    N: int
    p: float
    closed_form: float
    sign_anomaly: bool
    sphere_tail: float
    used: float


def compute_vN(N, p, M0=1.0):
    """Tail constant v_N: the closed form with its (N - p) denominator, and the positive
    constant Area(S^(N-1)) (p - 1) / (p - N) that makes the tail term equal the
    full-sphere bound Area(S^(N-1)) M0^(N-p) / (p - N)."""
    if not p > N:
        raise DivergentTailError(f'tail integral diverges for p={p} <= N={N}')
    if N % 2 == 0:
        numerator = (2.0 * math.pi) ** (N / 2.0)
    else:
        numerator = 2.0 ** ((N - 1) / 2.0) * math.pi ** ((N - 1) / 2.0)
    closed = numerator / ((N - p) * double_factorial(N - 2))
    area = sphere_area(N)
    tail = area * math.exp((N - p) * math.log(M0)) / (p - N)
    report = VNReport(N=N, p=p, closed_form=closed, sign_anomaly=closed < 0,
                      sphere_tail=tail, used=area * (p - 1.0) / (p - N))
    if report.sign_anomaly:
        logger.warning('v_N closed form is negative for N=%d, p=%g', N, p)
    return report


def orthant_tail(N, p, M0, method='exact'):
    """Integral of |x|^-p over [M0, inf)^N.

    `exact`: closed form for N = 1, angle quadrature of r0(theta)^(2-p) / (p - 2) with
    r0(theta) = M0 / min(cos theta, sin theta) for N = 2. `dblquad`: direct 2-D
    quadrature. `sphere`: the full-sphere upper bound.
    """
    if not p > N:
        raise DivergentTailError(f'tail integral diverges for p={p} <= N={N}')
    if method == 'sphere':
        return sphere_area(N) * M0 ** (N - p) / (p - N)
    if method == 'exact':
        if N == 1:
            return M0 ** (1.0 - p) / (p - 1.0)
        if N == 2:
            def radial(theta):
                m = min(math.cos(theta), math.sin(theta))
                return (m / M0) ** (p - 2.0) / (p - 2.0) if m > 0 else 0.0
            value, _ = integrate.quad(radial, 0.0, math.pi / 2.0, points=[math.pi / 4.0])
            return value
    if method == 'dblquad' and N == 2:
        value, _ = integrate.dblquad(lambda y, x: (x * x + y * y) ** (-p / 2.0),
                                     M0, np.inf, M0, np.inf)
        return value
    raise BoundUnavailableError('orthant_tail', f'method {method!r} for N={N}')


@dataclass
class LipschitzEstimates:
    L_Phi: float
    L_Psi: float
    L_R: float
    L_u: float
    L_u_b: float
    a_z: float
    p: float
    M0: float

    def check(self):
        for name, value in asdict(self).items():
            if not np.isfinite(value):
                raise DomainTooWideError(f'{name} = {value} on the working domain')
        return self


def _max_slope(values, points, axis):
    slopes = np.abs(np.diff(values, axis=axis)) / np.expand_dims(
        np.diff(points), tuple(i for i in range(values.ndim) if i != axis % values.ndim))
    return float(slopes.max())


def estimate_lipschitz(params, kernels, q, return_nodes, utilities, x_grid, M0=None,
                       refine=4, tail_cut=1.0):
    """Finite-difference and quadrature estimates of the bound's model constants"""
    grid = kernels.grid
    z = grid.points
    fine = grid.refine(refine).points

    ratios = np.stack([kernels.likelihood_ratio(r) for r in return_nodes.nodes])
    L_Phi = math.sqrt(float((ratios ** 2 @ grid.weights).max()))

    psi_fine = kernels.Psi(fine[:, None], fine[None, :])
    L_Psi = _max_slope(psi_fine, fine, axis=1)

    predicted = kernels.predict(q.codebook.T)
    propagated = ratios[:, :, None] * predicted[None, :, :]
    L_R = _max_slope(propagated, z, axis=1)

    x_fine = np.linspace(x_grid[0], x_grid[-1], refine * (len(x_grid) - 1) + 1)
    terminal = np.asarray(utilities.u_T(z[:, None], x_fine[None, :]), dtype=float)
    terminal = np.broadcast_to(terminal, (len(z), len(x_fine)))
    L_u = _max_slope(terminal, x_fine, axis=1)
    L_u_b = float(np.abs(terminal).max())

    envelope = propagated.max(axis=(1, 2))
    tail = (np.abs(return_nodes.nodes) >= tail_cut) & (envelope > 0)
    if tail.sum() < 2:
        raise DomainTooWideError('not enough tail nodes to fit the decay of rho_bar')
    log_r = np.log(np.abs(return_nodes.nodes[tail]))
    slope, _ = np.polyfit(log_r, np.log(envelope[tail]), 1)
    p = float(-slope)
    a_z = float(np.max(envelope[tail] * np.abs(return_nodes.nodes[tail]) ** p))

    est = LipschitzEstimates(L_Phi=L_Phi, L_Psi=L_Psi, L_R=L_R, L_u=L_u, L_u_b=L_u_b,
                             a_z=a_z, p=p, M0=float(M0 if M0 is not None else grid.span))
    logger.info('Lipschitz estimates: %s', est)
    return est.check()


def fx_integral(pi, phi, half_width=40.0):
    """(integral of f_X^(1/3))^3 for X = pi e^R, R ~ phi; equals
    pi^2 (integral of phi(r)^(1/3) e^(2r/3) dr)^3 and grows with pi"""
    def integrand(r):
        return math.exp(float(phi.logpdf(r)) / 3.0 + 2.0 * r / 3.0)
    value, _ = integrate.quad(integrand, -half_width, half_width, limit=400)
    edge = integrand(half_width)
    if not np.isfinite(value) or edge > 1e-10 * value:
        raise BoundUnavailableError('f_X', 'integral does not converge for this shock density')
    return pi ** 2 * value ** 3


def fmax_integral(kernels, rho, samples=20000, seed=0, bins=64):
    """max over grid points z_k of (integral of f^(1/3))^3, f the density of rho_bar(R)(z_k)
    with R ~ phi, estimated from a histogram of Monte-Carlo draws"""
    rng = substream(seed)
    draws = kernels.phi.rvs(rng, samples)
    predicted = kernels.predict(rho.values)
    z = kernels.grid.points
    ratios = kernels.Phi(z[None, :], draws[:, None]) / kernels.phi.pdf(draws)[:, None]
    values = ratios * predicted[None, :]
    best = 0.0
    for column in values.T:
        if np.ptp(column) == 0:
            continue
        density, edges = np.histogram(column, bins=bins, density=True)
        best = max(best, float(np.sum(density ** (1.0 / 3.0) * np.diff(edges)) ** 3))
    return best


@dataclass
class BoundReport:
    C: float
    terms: dict
    L_T_1: float
    L_T_2: float
    factor: float
    dx2: float
    drho2: float
    total: float
    estimates: dict = field(default_factory=dict)
    anomalies: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def compute_C(n, M0, est, fx, fmax, N=RETURN_DIM, K=FACTOR_DIM):
    """Per-period constant: wealth quantization, factor-cell diameter, density quantization
    and return-tail terms. Returns (C, terms, v_N report)."""
    vn = compute_vN(N, est.p, M0)
    log_tail = math.log(est.a_z) + math.log(vn.used) + (N - est.p) * math.log(M0) - math.log(est.p - 1.0)
    terms = {
        'wealth_quantization': est.L_u * n ** -2.0 * zador_constant(1) * fx,
        'factor_cells': 2.0 * est.L_u_b * est.L_R ** 2 * math.sqrt(K) * (M0 / n) ** (K + 1),
        'density_quantization': 4.0 * est.L_u_b * M0 ** K * n ** (-2.0 / N) * zador_constant(N) * fmax,
        'return_tail': 2.0 * est.L_u_b * math.exp(log_tail),
    }
    for name, value in terms.items():
        if not (np.isfinite(value) and value >= 0):
            raise BoundUnavailableError(name, f'= {value}')
    return sum(terms.values()), terms, vn


def compose_total_bound(T, delta, est, C, dx2, drho2, r=0.0, terms=None):
    """delta (1 - delta^T) / (1 - delta) C + L_T^(1) |x - x_hat|^2 + L_T^(2) int |rho - rho_hat|^2"""
    factor = float(T) if delta == 1 else delta * (1.0 - delta ** T) / (1.0 - delta)
    log_common = (T + 1) * math.log(2.0) + T * math.log(delta)
    try:
        L1 = math.exp(log_common + 2.0 * math.log(est.L_u) + T * math.log1p(r)) if est.L_u > 0 else 0.0
        L2 = math.exp(log_common + 2.0 * math.log(est.L_u_b)
                      + 2.0 * T * (math.log(est.L_Phi) + math.log(est.L_Psi))) if est.L_u_b > 0 else 0.0
    except OverflowError as e:
        raise BoundUnavailableError('L_T', str(e))
    total = factor * C + L1 * dx2 + L2 * drho2
    return BoundReport(C=C, terms=dict(terms or {}), L_T_1=L1, L_T_2=L2, factor=factor,
                       dx2=dx2, drho2=drho2, total=total, estimates=asdict(est))


@dataclass
class TerminalLipschitzCheck:
    lhs: float
    rhs_printed: float
    rhs_rigorous: float

    @property
    def holds(self):
        return self.lhs <= self.rhs_rigorous


def terminal_lipschitz_check(x1, rho1, x2, rho2, utilities, L1, L2):
    """Both sides of |V(T, x1, rho1) - V(T, x2, rho2)|^2 <= ... with L1 a bound on |u_T|
    and L2 its Lipschitz constant in x. The rigorous side carries the domain length and
    the mass of rho2 from the Cauchy-Schwarz step."""
    w = rho1.grid.weights
    z = rho1.grid.points
    v1 = float(w @ (utilities.u_T(z, x1) * rho1.values))
    v2 = float(w @ (utilities.u_T(z, x2) * rho2.values))
    gap = float(w @ (rho1.values - rho2.values) ** 2)
    dx2 = (x1 - x2) ** 2
    return TerminalLipschitzCheck(
        lhs=(v1 - v2) ** 2,
        rhs_printed=2 * L1 ** 2 * gap + 2 * L2 ** 2 * dx2,
        rhs_rigorous=2 * L1 ** 2 * rho1.grid.span * gap + 2 * L2 ** 2 * dx2 * rho2.mass ** 2,
    )


@dataclass
class EmpiricalBoundCheck:
    gaps: np.ndarray
    bound: BoundReport

    @property
    def max_gap(self):
        return float(self.gaps.max())

    @property
    def holds(self):
        return self.max_gap <= self.bound.total


def bound_inputs(params, utilities, kernels, q, return_nodes, x_grid, pi_fractions, prior,
                 M0=None, seed=0, samples=20000):
    """Lipschitz estimates plus the two quantization integrals for a configured model"""
    est = estimate_lipschitz(params, kernels, q, return_nodes, utilities, x_grid, M0)
    fx = fx_integral(float(x_grid[-1] * np.max(pi_fractions)), params.phi)
    fmax = fmax_integral(kernels, normalize(prior), samples=samples, seed=seed)
    return est, fx, fmax


def model_bound(params, est, fx, fmax, n, dx2=0.0, drho2=0.0):
    C, terms, vn = compute_C(n, est.M0, est, fx, fmax)
    report = compose_total_bound(params.T, params.delta, est, C, dx2, drho2, params.r, terms)
    report.anomalies = {'v_N_closed_form': vn.closed_form, 'v_N_sign_anomaly': vn.sign_anomaly,
                        'v_N_used': vn.used}
    return report


def empirical_bound_check(params, utilities, kernels, q, return_nodes, x_grid, c_fractions,
                          pi_fractions, prior, refine=4, seed=0):
    """Squared gap between a coarse solve and a solve on nested grids `refine` times finer
    in wealth and controls (same codebook and return nodes), against the composed bound"""
    coarse = StateGrids(x_grid, q, return_nodes, c_fractions, pi_fractions)
    x_fine = np.linspace(x_grid[0], x_grid[-1], refine * (len(x_grid) - 1) + 1)
    step = (c_fractions[1] - c_fractions[0]) / refine
    fine_fractions = np.round(np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1), 12)
    fine = StateGrids(x_fine, q, return_nodes, fine_fractions, fine_fractions)

    v_coarse, _ = solve(coarse, params, utilities, kernels)
    v_fine, _ = solve(fine, params, utilities, kernels)
    gaps = (v_fine.values[0, ::refine, :] - v_coarse.values[0]) ** 2

    est, fx, fmax = bound_inputs(params, utilities, kernels, q, return_nodes, x_grid,
                                 pi_fractions, prior, seed=seed)
    report = model_bound(params, est, fx, fmax, n=min(len(x_grid), q.size))
    logger.info('largest squared gap %.4g against bound %.4g', gaps.max(), report.total)
    return EmpiricalBoundCheck(gaps=gaps, bound=report)


def appendix_table(n_max=10, dims=(2, 3, 4), p=None, M0=1.0):
    """I_n, the printed closed form and v_N for a range of dimensions"""
    rows = {'I_n': [], 'v_N': []}
    for n in range(n_max + 1):
        exact = compute_In(n)
        quad, _ = integrate.quad(lambda t: math.cos(t) ** n, -math.pi / 2, math.pi / 2)
        rows['I_n'].append({'n': n, 'value': exact, 'printed': printed_In(n), 'quadrature': quad})
    for N in dims:
        rows['v_N'].append(asdict(compute_vN(N, p if p is not None else N + 1.0, M0)))
    return rows
