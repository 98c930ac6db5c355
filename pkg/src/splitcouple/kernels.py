"""Minorized transition kernels and their split random-mapping realization.

A one-step kernel ``Q(x, .)`` that dominates ``alpha_n * nu`` on each small
set ``X_n = [-b_n, b_n]`` (with ``nu`` uniform on [-1, 1]) can be written as
a deterministic map of a pair of uniforms: with probability ``alpha_n`` the
map regenerates from ``nu`` and is constant in ``x`` on the small set,
otherwise it inverts the residual law ``(Q - alpha_n * nu) / (1 - alpha_n)``.
Off the small set the full conditional CDF is inverted and the first uniform
is ignored.  All branches are driven by the same ``(u1, u2)`` pair, so two
states sharing the pair coalesce exactly when the regeneration branch fires.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import CertificationError

_BISECT_MAX_ITER = 200
_BRACKET_MAX_EXPAND = 60


@dataclass(frozen=True)
class SmallSetLadder:
    """Growing family of symmetric small sets with their minorization weights.

    Parameters
    ----------
    radii : tuple of float
        ``radii[n]`` is the half-width b_n of the n-th set [-b_n, b_n].
        Nondecreasing.
    alphas : tuple of float
        Minorization weight on each set, in (0, 1], nonincreasing in n.
    nu : str
        Description of the shared minorizing measure.  Only the uniform law
        on [-1, 1] is supported.
    """

    radii: tuple[float, ...]
    alphas: tuple[float, ...]
    nu: str = "uniform on [-1, 1]"

    def __post_init__(self) -> None:
        if len(self.radii) != len(self.alphas) or not self.radii:
            raise ValueError("ladder needs matching, nonempty radii and alphas")
        r = np.asarray(self.radii, float)
        a = np.asarray(self.alphas, float)
        if np.any(r < 0.0) or np.any(np.diff(r) < 0.0):
            raise ValueError("radii must be nonnegative and nondecreasing")
        if np.any(a <= 0.0) or np.any(a > 1.0):
            raise ValueError("alphas must lie in (0, 1]")
        if np.any(np.diff(a) > 0.0):
            raise ValueError("alphas must be nonincreasing")

    def __len__(self) -> int:
        return len(self.radii)

    def check_index(self, n: int) -> int:
        n = int(n)
        if not 0 <= n < len(self.radii):
            raise ValueError(f"ladder index {n} outside 0..{len(self.radii) - 1}")
        return n


@dataclass(frozen=True)
class SplitKernel:
    """One-step transition law packaged with its small-set ladder.

    ``density`` and ``cdf`` map broadcastable arrays ``(x, z)`` to the
    conditional density / CDF of the next state at ``z`` given the current
    state ``x``.  ``mean`` and ``stdev`` give a location/scale hint used to
    bracket CDF inversions; they need not be exact moments, only finite and
    positive.
    """

    density: Callable[[np.ndarray, np.ndarray], np.ndarray]
    cdf: Callable[[np.ndarray, np.ndarray], np.ndarray]
    ladder: SmallSetLadder
    mean: Callable[[np.ndarray], np.ndarray]
    stdev: Callable[[np.ndarray], np.ndarray]
    bisect_tol: float = 1e-12


@dataclass(frozen=True)
class UniformPair:
    """The (u1, u2) randomness unit driving one split-mapping application."""

    u1: float
    u2: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.u1 <= 1.0 and 0.0 <= self.u2 <= 1.0):
            raise ValueError("uniform pair components must lie in [0, 1]")


def nu_cdf(z):
    """CDF of the uniform law on [-1, 1], vectorized."""
    return np.clip((np.asarray(z, float) + 1.0) * 0.5, 0.0, 1.0)


def nu_inverse_cdf(u):
    """Inverse CDF of the uniform law on [-1, 1]: u -> 2u - 1."""
    u = np.asarray(u, float)
    if np.any((u < 0.0) | (u > 1.0)):
        raise ValueError("u must lie in [0, 1]")
    out = 2.0 * u - 1.0
    return float(out) if out.ndim == 0 else out


def _bracket_bisect(g, u, lo, hi, tol):
    """Solve g(z) = u elementwise for nondecreasing g by bracket + bisection.

    Brackets are widened geometrically when they fail; a bracket that cannot
    be established signals a broken (non-CDF) residual, i.e. a violated
    minorization.
    """
    lo = np.array(lo, float, copy=True)
    hi = np.array(hi, float, copy=True)
    glo = g(lo)
    ghi = g(hi)
    for _ in range(_BRACKET_MAX_EXPAND):
        bad_lo = glo > u
        bad_hi = ghi < u
        if not (bad_lo.any() or bad_hi.any()):
            break
        width = hi - lo
        lo = np.where(bad_lo, lo - width, lo)
        hi = np.where(bad_hi, hi + width, hi)
        if bad_lo.any():
            glo = np.where(bad_lo, g(lo), glo)
        if bad_hi.any():
            ghi = np.where(bad_hi, g(hi), ghi)
    else:
        raise CertificationError(
            "could not bracket a CDF inversion; the residual law is not a "
            "valid distribution (minorization violated?)"
        )
    # Elements stop refining individually, so a value is independent of what
    # else shares the batch (scalar and batched calls agree bit for bit).
    for _ in range(_BISECT_MAX_ITER):
        active = (hi - lo) > tol
        if not active.any():
            break
        mid = 0.5 * (lo + hi)
        below = g(mid) < u
        lo = np.where(active & below, mid, lo)
        hi = np.where(active & ~below, mid, hi)
    return 0.5 * (lo + hi)


def _split_inverse(kernel: SplitKernel, x, u, a_eff):
    """Invert z -> (cdf(x,z) - a*nuCDF(z)) / (1-a) at u, elementwise in x."""
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("u must lie strictly inside (0, 1) for CDF inversion")
    a = np.asarray(a_eff, float)
    # a == 1 rows never reach this branch in split_apply; make them inert.
    a = np.where(a >= 1.0, 0.0, a)
    m = np.asarray(kernel.mean(x), float)
    s = np.asarray(kernel.stdev(x), float)

    def g(z):
        return (kernel.cdf(x, z) - a * nu_cdf(z)) / (1.0 - a)

    return _bracket_bisect(g, u, m - 12.0 * s, m + 12.0 * s, kernel.bisect_tol)


def residual_inverse_cdf(kernel: SplitKernel, n: int, x: float, u: float) -> float:
    """Quantile of the residual law (Q(x,.) - alpha_n nu) / (1 - alpha_n).

    Parameters
    ----------
    kernel : SplitKernel
    n : int
        Ladder index supplying alpha_n.
    x : float
        Current state (need not lie in the small set; the residual is only
        guaranteed to be a distribution when it does).
    u : float
        Target probability, strictly inside (0, 1).

    Returns
    -------
    float
        The z with residual CDF equal to u, to absolute tolerance 1e-12.
    """
    n = kernel.ladder.check_index(n)
    a = kernel.ladder.alphas[n]
    if a >= 1.0:
        raise ValueError("residual law is undefined when alpha_n = 1")
    out = _split_inverse(kernel, np.array([x], float), np.array([u], float), np.array([a]))
    return float(out[0])


def kernel_inverse_cdf(kernel: SplitKernel, x: float, u: float) -> float:
    """Quantile of the full conditional law Q(x, .)."""
    out = _split_inverse(kernel, np.array([x], float), np.array([u], float), np.array([0.0]))
    return float(out[0])


def split_apply_batch(
    kernel: SplitKernel,
    n: int,
    x: np.ndarray,
    u1: np.ndarray,
    u2: np.ndarray,
    in_set: np.ndarray | None = None,
) -> np.ndarray:
    """Apply the split mapping elementwise over states sharing a ladder index.

    ``in_set`` overrides the membership test ``|x| <= b_n``; models with an
    extra environment coordinate pass the joint membership of (state, env)
    so that regeneration only fires where the minorization actually holds.
    """
    n = kernel.ladder.check_index(n)
    x = np.asarray(x, float)
    u1 = np.asarray(u1, float)
    u2 = np.asarray(u2, float)
    if np.any((u1 < 0.0) | (u1 > 1.0)) or np.any((u2 < 0.0) | (u2 > 1.0)):
        raise ValueError("uniform pair components must lie in [0, 1]")
    b = kernel.ladder.radii[n]
    a = kernel.ladder.alphas[n]
    if in_set is None:
        in_set = np.abs(x) <= b
    else:
        in_set = np.asarray(in_set, bool)
    regen = in_set & (u1 <= a)
    if regen.all():
        return 2.0 * u2 - 1.0
    a_eff = np.where(in_set, a, 0.0)
    # regenerating elements take the closed form below; feed the inversion a
    # harmless interior value so only the branch that uses u2 constrains it
    z = _split_inverse(kernel, x, np.where(regen, 0.5, u2), a_eff)
    return np.where(regen, 2.0 * u2 - 1.0, z)


def split_apply(kernel: SplitKernel, n: int, x: float, u: UniformPair) -> float:
    """One application of the split random mapping at state ``x``.

    On the small set the mapping regenerates from the minorizing measure when
    ``u1 <= alpha_n`` (and is then constant in ``x``), otherwise it inverts
    the residual CDF at ``u2``.  Off the set it inverts the full conditional
    CDF at ``u2`` and ignores ``u1``.  In every case the output over a
    uniform pair is distributed exactly as Q(x, .).
    """
    out = split_apply_batch(
        kernel, n, np.array([x], float), np.array([u.u1]), np.array([u.u2])
    )
    return float(out[0])


def validate_minorization(
    kernel: SplitKernel, n: int, x_grid: np.ndarray, z_grid: np.ndarray
) -> float:
    """Smallest slack of ``q(x, z) >= alpha_n / 2`` over the given grids.

    Nonnegative return certifies the minorization on the grid; a negative
    value is a result, not an error.
    """
    n = kernel.ladder.check_index(n)
    x_grid = np.asarray(x_grid, float)
    z_grid = np.asarray(z_grid, float)
    if x_grid.size == 0 or z_grid.size == 0:
        raise ValueError("grids must be nonempty")
    b = kernel.ladder.radii[n]
    if np.any(np.abs(x_grid) > b):
        raise ValueError(f"x_grid must lie inside the small set [-{b}, {b}]")
    if np.any(np.abs(z_grid) > 1.0):
        raise ValueError("z_grid must lie inside [-1, 1]")
    q = kernel.density(x_grid[:, None], z_grid[None, :])
    return float(np.min(q) - 0.5 * kernel.ladder.alphas[n])
