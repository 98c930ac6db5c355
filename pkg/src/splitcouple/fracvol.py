"""Euler simulation of a log-price SDE with stationary log-Gaussian volatility.

The log-price solves
``dL = (zeta(L) - V^2/2) dt + rho V dB + sqrt(1 - rho^2) V dW``
with ``V = exp(J)`` and ``J`` a moving average of the increments of the same
Brownian motion B against a square-integrable kernel.  Stationarity of the
volatility is approximated by a finite-history convolution over a burn-in
window; dissipativity of the drift is certified on a grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.signal import fftconvolve

from .errors import RunError
from .streams import replica_rng

RESOURCE_CAP = 2_000_000_000  # replica-steps per ensemble call
_DEFAULT_CHUNK = 512


@dataclass(frozen=True)
class VolatilityKernel:
    """Convolution kernel for the log-volatility moving average.

    ``exponential`` kernels decay as exp(-lam u); ``fractional`` kernels are
    sqrt(2 h) u^(h - 1/2) cut off at a finite memory (an uncut power kernel
    is not square integrable over the half line).  ``memory`` of None defers
    to the path generator: the full burn-in window for exponential kernels,
    a tenth of it for fractional ones.
    """

    kind: str
    lam: float = 0.0
    h: float = 0.0
    scale: float = 1.0
    memory: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("exponential", "fractional"):
            raise ValueError("kind must be 'exponential' or 'fractional'")
        if self.kind == "exponential" and self.lam <= 0.0:
            raise ValueError("exponential kernel needs lam > 0")
        if self.kind == "fractional" and not 0.0 < self.h < 1.0:
            raise ValueError("fractional kernel needs h in (0, 1)")
        if self.scale < 0.0:
            raise ValueError("scale must be nonnegative (zero disables the volatility)")
        if self.memory is not None and self.memory <= 0.0:
            raise ValueError("memory must be positive")

    def resolved_memory(self, burn_in: float) -> float:
        if self.memory is not None:
            return min(self.memory, burn_in)
        return burn_in if self.kind == "exponential" else burn_in / 10.0

    def memory_scale(self, burn_in: float) -> float:
        """Characteristic time after which the kernel's energy is spent."""
        if self.kind == "exponential":
            return 1.0 / self.lam
        return 0.99 ** (1.0 / (2.0 * self.h)) * self.resolved_memory(burn_in)

    def values(self, u: np.ndarray, burn_in: float) -> np.ndarray:
        u = np.asarray(u, float)
        mem = self.resolved_memory(burn_in)
        if self.kind == "exponential":
            out = self.scale * np.exp(-self.lam * u)
        else:
            out = np.zeros_like(u)
            pos = u > 0.0
            out[pos] = self.scale * math.sqrt(2.0 * self.h) * u[pos] ** (self.h - 0.5)
        return np.where(u <= mem, out, 0.0)

    def k2_integral(self, t: float, burn_in: float) -> float:
        """Analytic integral of K^2 over [0, t] (kernel cut at its memory)."""
        mem = self.resolved_memory(burn_in)
        t_eff = min(t, mem)
        if t_eff <= 0.0:
            return 0.0
        if self.kind == "exponential":
            return self.scale**2 * (1.0 - math.exp(-2.0 * self.lam * t_eff)) / (2.0 * self.lam)
        return self.scale**2 * t_eff ** (2.0 * self.h)


@dataclass(frozen=True)
class RhoProcess:
    """Smooth bounded correlation path tanh(c * J') with its own kernel."""

    c: float
    kernel: VolatilityKernel


@dataclass(frozen=True)
class DriftSpec:
    """Drift callable with its declared growth and dissipativity constants.

    ``growth_k`` must satisfy zeta(x)^2 <= growth_k (x^2 + 1); ``diss_alpha``
    and ``diss_beta`` must satisfy x zeta(x) <= -diss_alpha x^2 + diss_beta.
    Both declarations are grid-certified when the parameters are built.
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    growth_k: float
    diss_alpha: float
    diss_beta: float


def linear_drift(kappa: float = 1.0) -> DriftSpec:
    if kappa <= 0.0:
        raise ValueError("kappa must be positive")
    return DriftSpec(
        name=f"linear({kappa:g})",
        fn=lambda x: -kappa * np.asarray(x, float),
        growth_k=kappa**2,
        diss_alpha=kappa,
        diss_beta=1e-6,
    )


def saturating_drift(kappa: float = 1.0, a: float = 1.0) -> DriftSpec:
    if kappa <= 0.0 or a < 0.0:
        raise ValueError("need kappa > 0 and a >= 0")
    return DriftSpec(
        name=f"saturating({kappa:g},{a:g})",
        fn=lambda x: -kappa * np.asarray(x, float) + a * np.sin(np.asarray(x, float)),
        growth_k=2.0 * max(kappa**2, a**2),
        diss_alpha=kappa / 2.0,
        diss_beta=a**2 / (2.0 * kappa) if a > 0.0 else 1e-6,
    )


def dissipativity_check(zeta, alpha: float, beta: float, grid) -> float:
    """Grid slack of x zeta(x) <= -alpha x^2 + beta; nonnegative certifies."""
    x = np.asarray(grid, float)
    if x.size == 0:
        raise ValueError("grid must be nonempty")
    return float(np.min(-alpha * x * x + beta - x * zeta(x)))


@dataclass(frozen=True)
class SdeParams:
    zeta: DriftSpec
    kernel: VolatilityKernel
    rho: float | RhoProcess = 0.0
    dt: float = 1.0 / 256.0
    horizon: float = 20.0
    burn_in: float = 10.0
    diss_grid_halfwidth: float = 50.0

    def __post_init__(self) -> None:
        if self.dt <= 0.0 or self.horizon < self.dt or self.burn_in <= 0.0:
            raise ValueError("need dt > 0, horizon >= dt, burn_in > 0")
        if isinstance(self.rho, float | int) and not -1.0 < float(self.rho) < 1.0:
            raise ValueError("constant rho must lie in (-1, 1)")
        scale_time = self.kernel.memory_scale(self.burn_in)
        if self.burn_in < 10.0 * scale_time - 1e-9:
            raise ValueError(
                f"burn_in {self.burn_in} shorter than 10x kernel memory scale {scale_time}"
            )
        grid = np.linspace(-self.diss_grid_halfwidth, self.diss_grid_halfwidth, 2001)
        margin = dissipativity_check(
            self.zeta.fn, self.zeta.diss_alpha, self.zeta.diss_beta, grid
        )
        if margin < 0.0:
            raise ValueError(f"declared dissipativity fails on the grid (margin {margin:.3e})")
        growth = np.max(self.zeta.fn(grid) ** 2 - self.zeta.growth_k * (grid**2 + 1.0))
        if growth > 0.0:
            raise ValueError("declared growth constant fails on the grid")

    @property
    def horizon_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def burn_steps(self) -> int:
        return int(round(self.burn_in / self.dt))


def _kernel_taps(kernel: VolatilityKernel, dt: float, burn_in: float) -> np.ndarray:
    m = int(round(burn_in / dt))
    return kernel.values(dt * np.arange(1, m + 1), burn_in)


def discrete_log_vol_variance(p: SdeParams) -> float:
    """Exact variance of the discrete moving average J (Ito isometry)."""
    taps = _kernel_taps(p.kernel, p.dt, p.burn_in)
    return float(np.sum(taps * taps) * p.dt)


def volatility_path(kernel: VolatilityKernel, db: np.ndarray, dt: float, burn_in: float) -> np.ndarray:
    """Volatility exp(J) on the grid points after the burn-in window.

    ``db`` holds Brownian increments over burn_in + horizon; J at a grid
    point is the left-point convolution of the kernel with the increments in
    the preceding burn-in window, so the output has
    ``len(db) - burn_steps + 1`` entries.
    """
    db = np.asarray(db, float)
    m = int(round(burn_in / dt))
    if db.ndim != 1 or db.size < m:
        raise ValueError("increment sequence must cover the burn-in window")
    taps = _kernel_taps(kernel, dt, burn_in)
    j = np.convolve(db, taps, mode="valid")
    return np.exp(j)


def _volatility_paths(kernel, db: np.ndarray, dt: float, burn_in: float) -> np.ndarray:
    taps = _kernel_taps(kernel, dt, burn_in)
    j = fftconvolve(db, taps[None, :], mode="valid", axes=1)
    return np.exp(j)


def euler_step(p: SdeParams, L, V, rho, dB, dW):
    """One explicit Euler step with left-point coefficients."""
    drift = (p.zeta.fn(L) - np.square(V) / 2.0) * p.dt
    return L + drift + rho * V * dB + np.sqrt(1.0 - np.square(rho)) * V * dW


@dataclass(frozen=True)
class EnsembleResult:
    l0_values: tuple[float, ...]
    checkpoint_times: tuple[float, ...]
    samples: np.ndarray  # (n_states, n_checkpoints, replicas)
    log_vol_variance: float

    def at(self, state_idx: int, time: float) -> np.ndarray:
        for i, t in enumerate(self.checkpoint_times):
            if abs(t - time) < 1e-9:
                return self.samples[state_idx, i]
        raise KeyError(f"no checkpoint at t = {time}")


def simulate_ensemble(
    p: SdeParams,
    l0_list,
    replicas: int,
    checkpoints,
    seed: int,
    share_noise: bool = True,
    chunk: int = _DEFAULT_CHUNK,
) -> EnsembleResult:
    """Replica paths from each initial state, recorded at the checkpoints.

    Replicas own independent noise histories (stream layout per replica:
    volatility/price increments dB, then orthogonal increments dW, then the
    correlation kernel's increments when rho is a process).  With
    ``share_noise`` the same histories drive every initial state, which
    sharpens ensemble comparisons; otherwise each state uses a disjoint
    replica range.
    """
    l0_list = [float(v) for v in l0_list]
    n_states = len(l0_list)
    if n_states == 0 or replicas < 1:
        raise ValueError("need at least one initial state and one replica")
    h_steps = p.horizon_steps
    b_steps = p.burn_steps
    n_inc = b_steps + h_steps
    streams = replicas if share_noise else replicas * n_states
    if streams * n_inc > RESOURCE_CAP:
        raise RunError(
            f"ensemble needs {streams * n_inc:.3g} replica-steps, over the cap {RESOURCE_CAP:.3g}"
        )
    cp_idx = []
    for t in checkpoints:
        idx = int(round(float(t) / p.dt))
        if not 0 <= idx <= h_steps:
            raise ValueError(f"checkpoint {t} outside [0, horizon]")
        cp_idx.append(idx)
    cp_times = tuple(i * p.dt for i in cp_idx)

    rho_is_process = isinstance(p.rho, RhoProcess)
    sqrt_dt = math.sqrt(p.dt)
    out = np.empty((n_states, len(cp_idx), replicas))

    for state_i, l0 in enumerate(l0_list):
        offset = 0 if share_noise else state_i * replicas
        for lo in range(0, replicas, chunk):
            hi = min(lo + chunk, replicas)
            rows = hi - lo
            db = np.empty((rows, n_inc))
            dw = np.empty((rows, h_steps))
            db2 = np.empty((rows, n_inc)) if rho_is_process else None
            for r in range(rows):
                rng = replica_rng(seed, offset + lo + r)
                db[r] = rng.standard_normal(n_inc) * sqrt_dt
                dw[r] = rng.standard_normal(h_steps) * sqrt_dt
                if rho_is_process:
                    db2[r] = rng.standard_normal(n_inc) * sqrt_dt
            vol = _volatility_paths(p.kernel, db, p.dt, p.burn_in)
            if rho_is_process:
                j2 = np.log(_volatility_paths(p.rho.kernel, db2, p.dt, p.burn_in))
                rho_path = np.tanh(p.rho.c * j2)
            l = np.full(rows, l0)
            for i, idx in enumerate(cp_idx):
                if idx == 0:
                    out[state_i, i, lo:hi] = l
            for step in range(h_steps):
                v = vol[:, step]
                r_t = rho_path[:, step] if rho_is_process else float(p.rho)
                l = euler_step(p, l, v, r_t, db[:, b_steps + step], dw[:, step])
                for i, idx in enumerate(cp_idx):
                    if idx == step + 1:
                        out[state_i, i, lo:hi] = l
    return EnsembleResult(
        l0_values=tuple(l0_list),
        checkpoint_times=cp_times,
        samples=out,
        log_vol_variance=discrete_log_vol_variance(p),
    )


@dataclass(frozen=True)
class IncrementConstants:
    growth_k: float
    l_tilde: float
    ev2: float
    ev4: float


def increment_constants(p: SdeParams, l_tilde: float) -> IncrementConstants:
    """Bound constants from the drift declaration and the log-normal moments."""
    s2 = discrete_log_vol_variance(p)
    return IncrementConstants(
        growth_k=p.zeta.growth_k,
        l_tilde=float(l_tilde),
        ev2=math.exp(2.0 * s2),
        ev4=math.exp(8.0 * s2),
    )


@dataclass(frozen=True)
class IncrementCheck:
    passed: bool
    empirical: float
    bound: float
    se: float


def increment_moment_check(
    samples_t: np.ndarray, samples_th: np.ndarray, h: float, constants: IncrementConstants
) -> IncrementCheck:
    """Second-moment test of the increment over a lag h against
    ``6 h^2 (K L~ + K + E[V^4]/4) + 6 h E[V^2]`` plus four standard errors.

    Both sample vectors must come from the same paths.
    """
    a = np.asarray(samples_t, float)
    b = np.asarray(samples_th, float)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise ValueError("need paired nonempty sample vectors")
    if h < 0.0:
        raise ValueError("h must be nonnegative")
    sq = (b - a) ** 2
    emp = float(sq.mean())
    se = float(sq.std(ddof=1) / math.sqrt(sq.size)) if sq.size > 1 else 0.0
    k = constants.growth_k
    bound = 6.0 * h * h * (k * constants.l_tilde + k + constants.ev4 / 4.0)
    bound += 6.0 * h * constants.ev2
    return IncrementCheck(passed=emp <= bound + 4.0 * se, empirical=emp, bound=bound, se=se)
