"""Discrete-time log-volatility chain driven by a moving-average environment.

The state follows
``X_{t+1} = gamma X_t + rho e^{Z_t} eta_{t+1} + sqrt(1-rho^2) e^{Z_t} eps_{t+1}``
where ``Z_t = sum_k a_k eta_{t-k}`` is a causal Gaussian moving average
(truncated at a finite lag) and the environment seen by the chain at time t
is the pair ``(Z_t, eta_{t+1})``.  Conditionally on the environment the step
is a location-scale family in the innovation ``eps``, which yields explicit
small-set minorization constants and a uniform second-moment bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import ndtr

from .coupling import EnvironmentWindow
from .errors import CertificationError
from .kernels import SmallSetLadder, SplitKernel
from .streams import replica_rng

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

DEFAULT_MA_LAG = 512


@dataclass(frozen=True)
class InnovationLaw:
    """Density, CDF and sampler of the price innovation ``eps``.

    ``pdf`` and ``cdf`` must be numpy-vectorized.  The minorization formula
    requires a symmetric unimodal density; laws without that property can
    still be simulated but cannot produce ladder weights.
    """

    name: str
    pdf: Callable[[np.ndarray], np.ndarray]
    cdf: Callable[[np.ndarray], np.ndarray]
    sample: Callable[[np.random.Generator, tuple], np.ndarray]
    second_moment: float
    symmetric_unimodal: bool = True


def std_normal_innovations() -> InnovationLaw:
    return InnovationLaw(
        name="std_normal",
        pdf=lambda x: np.exp(-0.5 * np.asarray(x, float) ** 2) * _INV_SQRT_2PI,
        cdf=lambda x: ndtr(np.asarray(x, float)),
        sample=lambda rng, size: rng.standard_normal(size),
        second_moment=1.0,
    )


def geometric_ma(ratio: float, lag: int = DEFAULT_MA_LAG) -> tuple[float, ...]:
    """Coefficients a_k = ratio^k, k = 0..lag."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError("ratio must lie in [0, 1)")
    return tuple(ratio**k for k in range(lag + 1))


def fractional_ma(h: float, lag: int = DEFAULT_MA_LAG, scale: float = 1.0) -> tuple[float, ...]:
    """Power-law coefficients a_k = scale * (k + 1)^(h - 3/2), k = 0..lag."""
    if not 0.0 < h < 1.0:
        raise ValueError("h must lie in (0, 1)")
    return tuple(scale * (k + 1.0) ** (h - 1.5) for k in range(lag + 1))


@dataclass(frozen=True)
class LogvolParams:
    gamma: float
    rho: float
    ma_coeffs: tuple[float, ...]
    eps: InnovationLaw = field(default_factory=std_normal_innovations)
    x0: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not -1.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (-1, 1)")
        if len(self.ma_coeffs) == 0:
            raise ValueError("ma_coeffs must be nonempty")
        if not all(math.isfinite(a) for a in self.ma_coeffs):
            raise ValueError("ma_coeffs must be finite")

    @property
    def lag(self) -> int:
        return len(self.ma_coeffs) - 1

    @property
    def env_variance(self) -> float:
        """Variance of the truncated moving average Z_t."""
        return float(sum(a * a for a in self.ma_coeffs))


@dataclass(frozen=True)
class EnvState:
    """One environment draw: log-volatility Z_t and the upcoming eta_{t+1}."""

    z: float
    eta_next: float


def _scale_root(rho: float) -> float:
    return math.sqrt(1.0 - rho * rho)


def ma_env_values(p: LogvolParams, eta: np.ndarray) -> np.ndarray:
    """Environment rows (Z_t, eta_{t+1}) from raw normals eta_{-lag..h+1}.

    ``eta`` has shape (replicas, lag + horizon + 2); the result has shape
    (replicas, horizon + 1, 2) covering t = 0..horizon.
    """
    a = np.asarray(p.ma_coeffs, float)
    if eta.ndim != 2 or eta.shape[1] < a.size + 1:
        raise ValueError("eta must cover lag + horizon + 2 draws per replica")
    z = fftconvolve(eta, a[None, :], mode="valid", axes=1)  # Z_t for t = 0..h+1
    horizon = eta.shape[1] - a.size - 1
    out = np.empty((eta.shape[0], horizon + 1, 2))
    out[:, :, 0] = z[:, : horizon + 1]
    out[:, :, 1] = eta[:, a.size : a.size + horizon + 1]
    return out


def ma_env_paths(
    p: LogvolParams, horizon: int, replicas: int, master_seed: int
) -> np.ndarray:
    """Batch of stationary environment windows, one replica stream per row.

    Each replica's stream draws its raw normals first, so windows are
    reproducible regardless of what an experiment draws afterwards.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    n_draws = p.lag + horizon + 2
    eta = np.empty((replicas, n_draws))
    for k in range(replicas):
        eta[k] = replica_rng(master_seed, k).standard_normal(n_draws)
    return ma_env_values(p, eta)


def ma_env_path(p: LogvolParams, horizon: int, seed: int) -> EnvironmentWindow:
    """Single stationary environment window over t = 0..horizon."""
    vals = ma_env_paths(p, horizon, 1, seed)[0]
    return EnvironmentWindow(values=vals, columns=("z", "eta_next"))


def logvol_step(p: LogvolParams, x: float, env: EnvState, eps: float) -> float:
    """One step of the chain given the environment pair and an innovation."""
    vol = math.exp(env.z)
    return p.gamma * x + p.rho * vol * env.eta_next + _scale_root(p.rho) * vol * eps


def logvol_dn(p: LogvolParams, n: int) -> float:
    """Reach of the innovation needed to land in [-1, 1] from the n-th sets.

    Rearranging the recursion for eps and maximizing over states in [-n, n],
    |eta| <= n and e^Z in [e^-n, e^n] gives
    ``d(n) = ((1 + gamma n) e^n + |rho| n) / sqrt(1 - rho^2)``.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    return ((1.0 + p.gamma * n) * math.exp(n) + abs(p.rho) * n) / _scale_root(p.rho)


def logvol_alpha(p: LogvolParams, n: int) -> float:
    """Minorization weight 2 f(d(n)) / (sqrt(1 - rho^2) e^n) on the n-th sets.

    The transition density at a target w is f(eps*) divided by the local
    scale sqrt(1 - rho^2) e^Z; bounding the scale by its supremum over the
    environment set gives a provably valid constant for symmetric unimodal f.
    """
    if not p.eps.symmetric_unimodal:
        raise ValueError("minorization weight needs a symmetric unimodal innovation density")
    d = logvol_dn(p, n)
    f = float(p.eps.pdf(np.asarray(d)))
    return min(2.0 * f / (_scale_root(p.rho) * math.exp(n)), 1.0)


def logvol_certify_minorization(
    p: LogvolParams, n: int, n_xze: int = 21, n_w: int = 201
) -> float:
    """Grid slack of ``q(x, env, w) >= alpha_n / 2`` over the n-th sets.

    Grids span (x, z, eta) in [-n, n]^3 and targets w in [-1, 1]; endpoints
    are on the grid, so the binding corners are evaluated exactly.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    root = _scale_root(p.rho)
    xg = np.linspace(-n, n, n_xze)[:, None, None, None]
    zg = np.linspace(-n, n, n_xze)[None, :, None, None]
    hg = np.linspace(-n, n, n_xze)[None, None, :, None]
    wg = np.linspace(-1.0, 1.0, n_w)[None, None, None, :]
    s = root * np.exp(zg)
    arg = (wg - p.gamma * xg - p.rho * np.exp(zg) * hg) / s
    q = p.eps.pdf(arg) / s
    half_alpha = float(p.eps.pdf(np.asarray(logvol_dn(p, n)))) / (root * math.exp(n))
    return float(q.min() - half_alpha)


def logvol_certified_alpha(p: LogvolParams, n: int, **grid_kwargs) -> float:
    """``logvol_alpha`` with a grid certificate; raises if the grid refutes it."""
    margin = logvol_certify_minorization(p, n, **grid_kwargs)
    if margin < 0.0:
        raise CertificationError(
            f"minorization weight for n={n} fails grid certification (margin {margin:.3e})"
        )
    return logvol_alpha(p, n)


def logvol_moment_bound(p: LogvolParams) -> float:
    """Time-uniform bound on E[X_t^2].

    ``K = E[e^{2 Z_0}] (rho^2 + (1 - rho^2) E[eps^2]) / (1 - gamma^2) + x0^2``
    with the log-normal moment taken at the truncated MA variance.
    """
    e2z = math.exp(2.0 * p.env_variance)
    mix = p.rho**2 + (1.0 - p.rho**2) * p.eps.second_moment
    return e2z * mix / (1.0 - p.gamma**2) + p.x0**2


def logvol_tail(p: LogvolParams, n: int) -> float:
    """Schedule input: state tail K/n^2 plus exact Gaussian environment tails."""
    if n < 1:
        raise ValueError("n must be at least 1")
    k_bound = logvol_moment_bound(p)
    sigma_z = math.sqrt(p.env_variance)
    z_tail = 0.0 if sigma_z == 0.0 else 2.0 * float(ndtr(-n / sigma_z))
    eta_tail = 2.0 * float(ndtr(-float(n)))
    return min(k_bound / (n * n) + z_tail + eta_tail, 1.0)


def logvol_kernel(p: LogvolParams, z, eta_next, n_max: int = 2) -> SplitKernel:
    """Split kernel of the chain with the environment frozen at (z, eta_next).

    ``z`` and ``eta_next`` may be scalars or arrays aligned with the state
    vectors the kernel will be applied to.
    """
    z = np.asarray(z, float)
    eta_next = np.asarray(eta_next, float)
    root = _scale_root(p.rho)
    shift = p.rho * np.exp(z) * eta_next
    scale = root * np.exp(z)
    ladder = logvol_ladder(p, n_max)

    def density(x, w):
        arg = (np.asarray(w, float) - p.gamma * np.asarray(x, float) - shift) / scale
        return p.eps.pdf(arg) / scale

    def cdf(x, w):
        arg = (np.asarray(w, float) - p.gamma * np.asarray(x, float) - shift) / scale
        return p.eps.cdf(arg)

    def mean(x):
        return p.gamma * np.asarray(x, float) + shift

    def stdev(x):
        return np.broadcast_to(scale, np.asarray(x, float).shape).astype(float)

    return SplitKernel(density=density, cdf=cdf, ladder=ladder, mean=mean, stdev=stdev)


def logvol_ladder(p: LogvolParams, n_max: int) -> SmallSetLadder:
    return SmallSetLadder(
        radii=tuple(float(n) for n in range(n_max + 1)),
        alphas=tuple(logvol_alpha(p, n) for n in range(n_max + 1)),
    )


@dataclass(frozen=True)
class LogvolMcreModel:
    """Environment-dependent split kernel adapter for the coupling engine."""

    params: LogvolParams
    n_max: int = 2
    ladder: SmallSetLadder = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "ladder", logvol_ladder(self.params, self.n_max))

    def kernel(self, env_values: np.ndarray) -> SplitKernel:
        env_values = np.asarray(env_values, float)
        return logvol_kernel(
            self.params, env_values[..., 0], env_values[..., 1], n_max=self.n_max
        )

    def env_in_small_set(self, env_values: np.ndarray, n: int) -> np.ndarray:
        env_values = np.asarray(env_values, float)
        radius = self.ladder.radii[self.ladder.check_index(n)]
        return (np.abs(env_values[..., 0]) <= radius) & (
            np.abs(env_values[..., 1]) <= radius
        )


def simulate_logvol_batch(
    p: LogvolParams,
    horizon: int,
    replicas: int,
    master_seed: int,
    checkpoints: tuple[int, ...],
) -> dict[int, np.ndarray]:
    """Forward-simulate the chain; returns X_t samples at each checkpoint.

    Replica stream layout: raw environment normals first, then the horizon's
    innovations.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    bad = [t for t in checkpoints if not 0 <= t <= horizon]
    if bad:
        raise ValueError(f"checkpoints outside [0, horizon]: {bad}")
    n_env = p.lag + horizon + 2
    eta = np.empty((replicas, n_env))
    eps = np.empty((replicas, horizon))
    for k in range(replicas):
        rng = replica_rng(master_seed, k)
        eta[k] = rng.standard_normal(n_env)
        eps[k] = p.eps.sample(rng, (horizon,))
    env = ma_env_values(p, eta)
    root = _scale_root(p.rho)
    x = np.full(replicas, p.x0)
    out: dict[int, np.ndarray] = {}
    if 0 in checkpoints:
        out[0] = x.copy()
    for t in range(horizon):
        vol = np.exp(env[:, t, 0])
        x = p.gamma * x + vol * (p.rho * env[:, t, 1] + root * eps[:, t])
        if t + 1 in checkpoints:
            out[t + 1] = x.copy()
    return out
