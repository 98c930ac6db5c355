"""Distance computations: total variation, path metric, bounded transport cost.

Total variation here follows the signed-measure convention (supremum over
test functions bounded by 1), so densities p, q are at distance
``integral |p - q|`` and the maximum distance is 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import ndtr

_MAX_PATH_STEP = 1.0 / 64.0


def tv_density(p_density, q_density, grid) -> float:
    """L1 distance of two densities integrated on the given grid.

    Parameters
    ----------
    p_density, q_density : array_like or callable
        Density values on the grid, or callables evaluated on it.
    grid : array_like
        Strictly increasing integration grid.  Each density must integrate
        to 1 on it within 1e-6 (trapezoid rule), otherwise the input is
        rejected.

    Returns
    -------
    float in [0, 2]
    """
    grid = np.asarray(grid, float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0.0):
        raise ValueError("grid must be a strictly increasing 1-d array")
    p = np.asarray(p_density(grid) if callable(p_density) else p_density, float)
    q = np.asarray(q_density(grid) if callable(q_density) else q_density, float)
    if p.shape != grid.shape or q.shape != grid.shape:
        raise ValueError("density values must match the grid shape")
    if np.any(p < 0.0) or np.any(q < 0.0):
        raise ValueError("densities must be nonnegative")
    for name, vals in (("p", p), ("q", q)):
        mass = np.trapezoid(vals, grid)
        if abs(mass - 1.0) > 1e-6:
            raise ValueError(f"{name} integrates to {mass:.8f}, not 1 within 1e-6")
    return float(min(np.trapezoid(np.abs(p - q), grid), 2.0))


def _phi(z: float) -> float:
    return float(ndtr(z))


def tv_gaussian(m1: float, v1: float, m2: float, v2: float) -> float:
    """Exact total variation between two (possibly degenerate) Gaussians.

    Equal variances use the closed form 2(2*Phi(|m1-m2|/(2 sigma)) - 1);
    unequal variances integrate |p - q| exactly between the two analytic
    crossing points of the densities.  A point mass against anything else
    (or two distinct point masses) is at the maximal distance 2.
    """
    if v1 < 0.0 or v2 < 0.0:
        raise ValueError("variances must be nonnegative")
    if v1 == 0.0 and v2 == 0.0:
        return 0.0 if m1 == m2 else 2.0
    if v1 == 0.0 or v2 == 0.0:
        return 2.0
    if v1 == v2:
        if m1 == m2:
            return 0.0
        s = np.sqrt(v1)
        return 2.0 * (2.0 * _phi(abs(m1 - m2) / (2.0 * s)) - 1.0)
    # Narrower density exceeds the wider one exactly between the crossings.
    if v1 > v2:
        m1, v1, m2, v2 = m2, v2, m1, v1
    a = 1.0 / v2 - 1.0 / v1
    b = 2.0 * (m1 / v1 - m2 / v2)
    c = m2 * m2 / v2 - m1 * m1 / v1 - np.log(v1 / v2)
    disc = b * b - 4.0 * a * c
    # Two real crossings always exist for distinct variances.
    disc = max(disc, 0.0)
    r = np.sqrt(disc)
    z_lo, z_hi = sorted(((-b - r) / (2.0 * a), (-b + r) / (2.0 * a)))
    s1, s2 = np.sqrt(v1), np.sqrt(v2)
    mass1 = _phi((z_hi - m1) / s1) - _phi((z_lo - m1) / s1)
    mass2 = _phi((z_hi - m2) / s2) - _phi((z_lo - m2) / s2)
    return float(min(2.0 * (mass1 - mass2), 2.0))


def tv_empirical(samples1, samples2, bins: int | None = None) -> float:
    """Histogram L1 distance on common equal-width bins.

    The estimator carries an upward bias of order sqrt(bins / N); the
    default bin count ceil(min(N1, N2) ** (1/3)) keeps it modest.
    """
    s1 = np.asarray(samples1, float).ravel()
    s2 = np.asarray(samples2, float).ravel()
    if s1.size == 0 or s2.size == 0:
        raise ValueError("both sample sets must be nonempty")
    if bins is None:
        bins = int(np.ceil(min(s1.size, s2.size) ** (1.0 / 3.0)))
    lo = min(s1.min(), s2.min())
    hi = max(s1.max(), s2.max())
    if lo == hi:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    h1, _ = np.histogram(s1, bins=edges)
    h2, _ = np.histogram(s2, bins=edges)
    p1 = h1 / s1.size
    p2 = h2 / s2.size
    return float(np.abs(p1 - p2).sum())


def tv_empirical_se(samples1, samples2, bins: int | None = None) -> float:
    """Delta-method bound on the standard error of ``tv_empirical``.

    Treats the two histograms as independent multinomials; with shared
    randomness across the sample sets this overstates the error, which is
    the safe direction for the monotonicity checks it backs.
    """
    s1 = np.asarray(samples1, float).ravel()
    s2 = np.asarray(samples2, float).ravel()
    if bins is None:
        bins = int(np.ceil(min(s1.size, s2.size) ** (1.0 / 3.0)))
    lo = min(s1.min(), s2.min())
    hi = max(s1.max(), s2.max())
    if lo == hi:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    h1, _ = np.histogram(s1, bins=edges)
    h2, _ = np.histogram(s2, bins=edges)
    p1 = h1 / s1.size
    p2 = h2 / s2.size
    var = (p1 * (1.0 - p1) / s1.size + p2 * (1.0 - p2) / s2.size).sum()
    return float(np.sqrt(var))


@dataclass(frozen=True)
class PathWindow:
    """Values of a trajectory on a uniform grid over [-half_width, half_width].

    The interval supremum in the path metric is taken over grid points only;
    the grid step must not exceed 1/64 so each unit interval holds at least
    64 sample points.
    """

    values: np.ndarray
    half_width: float

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, float)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("values must be a 1-d array with at least 2 points")
        if not np.all(np.isfinite(vals)):
            raise ValueError("values must be finite")
        if self.half_width <= 0.0:
            raise ValueError("half_width must be positive")
        if self.step > _MAX_PATH_STEP + 1e-12:
            raise ValueError(f"grid step {self.step} exceeds 1/64")

    @property
    def step(self) -> float:
        return 2.0 * self.half_width / (self.values.size - 1)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.values.size)


def constant_window(level: float, half_width: float, step: float = 1.0 / 64.0) -> PathWindow:
    """Flat window at the given level, convenient for tests and flat tuples."""
    npts = int(round(2.0 * half_width / step)) + 1
    return PathWindow(np.full(npts, float(level)), half_width)


def path_metric_d(f: PathWindow, g: PathWindow) -> float:
    """Weighted sum over unit intervals of the clamped sup distance.

    Computes ``sum_i 2^{-|i|} min(1, sup_{[i, i+1]} |f - g|)`` over the
    integer intervals contained in the shared window.
    """
    if f.values.size != g.values.size or f.half_width != g.half_width:
        raise ValueError("windows must share their grid")
    diff = np.abs(f.values - g.values)
    grid = f.grid
    total = 0.0
    i_lo = int(np.ceil(-f.half_width - 1e-12))
    i_hi = int(np.floor(f.half_width + 1e-12))
    for i in range(i_lo, i_hi):
        sel = (grid >= i - 1e-12) & (grid <= i + 1.0 + 1e-12)
        if not sel.any():
            continue
        total += 2.0 ** (-abs(i)) * min(1.0, float(diff[sel].max()))
    return total


def _pairwise_path_d(windows1, windows2) -> np.ndarray:
    """Matrix of path distances between two equal-grid window collections."""
    n1, n2 = len(windows1), len(windows2)
    out = np.empty((n1, n2))
    for i, w in enumerate(windows1):
        for j, v in enumerate(windows2):
            out[i, j] = path_metric_d(w, v)
    return out


def bounded_wasserstein(samples1, samples2, max_pairs: int = 512) -> float:
    """Average matched cost of the exact assignment between two sample sets.

    Each sample is a tuple ``(state, vol_window, corr_window)``; the pairwise
    cost is ``min(1, |x1 - x2|) + d(v1, v2) + d(r1, r2)`` with ``d`` the path
    metric.  The assignment problem is solved exactly (cubic time), and the
    average matched cost upper-bounds the transport distance between the two
    empirical laws.
    """
    if len(samples1) != len(samples2):
        raise ValueError("sample sets must have equal size")
    n = len(samples1)
    if n == 0:
        raise ValueError("sample sets must be nonempty")
    if n > max_pairs:
        raise ValueError(f"sample size {n} exceeds max_pairs={max_pairs}")
    x1 = np.array([float(s[0]) for s in samples1])
    x2 = np.array([float(s[0]) for s in samples2])
    cost = np.minimum(1.0, np.abs(x1[:, None] - x2[None, :]))
    cost = cost + _pairwise_path_d([s[1] for s in samples1], [s[1] for s in samples2])
    cost = cost + _pairwise_path_d([s[2] for s in samples1], [s[2] for s in samples2])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())
