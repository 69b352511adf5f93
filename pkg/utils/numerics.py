"""Small numerical helpers shared by the model modules."""
import numpy as np


def trapezoid_weights(points):
    """Composite trapezoid weights on an increasing grid"""
    points = np.asarray(points, dtype=float)
    h = np.diff(points)
    w = np.zeros_like(points)
    w[:-1] += h / 2.0
    w[1:] += h / 2.0
    return w


def nearest_node(grid, values):
    """Index of the nearest grid node, ties to the lower node, clamped at the ends.

    Returns (indices, saturated) where `saturated` flags values above the top node.
    """
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    hi = np.searchsorted(grid, values, side='left')
    hi = np.clip(hi, 1, len(grid) - 1)
    lo = hi - 1
    pick_lo = (values - grid[lo]) <= (grid[hi] - values)
    idx = np.where(pick_lo, lo, hi)
    idx = np.where(values <= grid[0], 0, idx)
    saturated = values > grid[-1]
    idx = np.where(saturated, len(grid) - 1, idx)
    return idx, saturated


def top_excess(grid, values):
    """How far values lie above the top node, in units of the last grid spacing (0 below it)"""
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(grid) < 2:
        return np.zeros_like(values)
    return np.maximum(values - grid[-1], 0.0) / (grid[-1] - grid[-2])


def substream(seed, index=0):
    """Independent generator for (seed, index); parallel runs stay reproducible"""
    return np.random.default_rng([int(seed), int(index)])
