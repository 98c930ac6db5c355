"""Backward-composition couplings, coupling bounds, and block schedules.

Orbits of different depths share one table of uniform pairs: entry ``i`` of
a sequence drives the step at backward time ``-i``, so the depth-t and
depth-s compositions consume identical randomness on their common suffix
and coalesce exactly when the split mapping's regeneration branch fires
while both orbits sit inside the active small set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import ScheduleError
from .kernels import SmallSetLadder, SplitKernel, UniformPair, split_apply_batch

_EVENT_CHARS = np.array(["A", "B", "C"])
_LN2 = math.log(2.0)


@dataclass(frozen=True)
class CouplingTrace:
    """Per-step record of one coupled backward experiment.

    ``events`` holds one character per recorded step, in chronological order
    (deepest shared step first): A = orbits equal, B = unequal but both in
    the active small set (and the environment in its small set, where one
    exists), C = otherwise.  ``couple_step`` is the position of the first A,
    or None if the orbits never coalesced.
    """

    events: str
    couple_step: int | None
    final_states: tuple[float, float]

    def __post_init__(self) -> None:
        first_a = self.events.find("A")
        if first_a >= 0 and set(self.events[first_a:]) != {"A"}:
            raise ValueError("coalescence must be absorbing: A followed by non-A")
        if (first_a >= 0) != (self.couple_step is not None):
            raise ValueError("couple_step inconsistent with events")
        if first_a >= 0 and self.couple_step != first_a:
            raise ValueError("couple_step inconsistent with events")

    @property
    def coupled(self) -> bool:
        return self.couple_step is not None


@dataclass(frozen=True)
class EnvironmentWindow:
    """Contiguous per-step environment values for one replica.

    ``values[i]`` is the environment entering forward step ``i + 1`` of a
    depth-t experiment (the step consuming the uniform at backward index
    ``t - 1 - i``); the final row is the environment one step past the
    window, used only to tag the terminal event.
    """

    values: np.ndarray
    columns: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, float)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 2:
            raise ValueError("environment values must be a (steps, components) array")

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class BlockSchedule:
    """Ladder indices and block lengths guaranteeing per-block failure 2^-m.

    Block m (1-based) runs the split mapping at ladder index ``n_of_m[m-1]``
    for ``N_of_m[m-1]`` steps; ``M_of_m[m]`` is the cumulative boundary with
    ``M_of_m[0] = 0``.
    """

    n_of_m: tuple[int, ...]
    N_of_m: tuple[int, ...]
    M_of_m: tuple[int, ...]
    alphas: tuple[float, ...]
    tails: tuple[float, ...]

    def __post_init__(self) -> None:
        m_max = len(self.n_of_m)
        if not (len(self.N_of_m) == len(self.alphas) == len(self.tails) == m_max):
            raise ValueError("schedule fields must have one entry per block")
        if len(self.M_of_m) != m_max + 1 or self.M_of_m[0] != 0:
            raise ValueError("M_of_m must start at 0 and have m_max+1 entries")
        for m in range(1, m_max + 1):
            if self.M_of_m[m] != self.M_of_m[m - 1] + self.N_of_m[m - 1]:
                raise ValueError("M_of_m must accumulate the block lengths")
            target = -m * _LN2
            a = self.alphas[m - 1]
            if self.tails[m - 1] > 2.0 ** -m:
                raise ValueError(f"block {m}: tail exceeds 2^-{m}")
            if a < 1.0 and self.N_of_m[m - 1] * math.log1p(-a) > target * (1.0 - 1e-12):
                raise ValueError(f"block {m}: (1-alpha)^N exceeds 2^-{m}")

    @property
    def m_max(self) -> int:
        return len(self.n_of_m)

    @property
    def total_steps(self) -> int:
        return self.M_of_m[-1]

    def block_of_uniform_index(self, j: int) -> int:
        """1-based block of the uniform at backward index j (0 <= j < M_max)."""
        if not 0 <= j < self.M_of_m[-1]:
            raise ValueError(f"uniform index {j} outside the schedule")
        lo, hi = 0, self.m_max  # invariant: M[lo] <= j, j < M[hi]
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self.M_of_m[mid] <= j:
                lo = mid
            else:
                hi = mid
        return hi


class McreSplitModel(Protocol):
    """Environment-dependent split kernel, as supplied by a model module."""

    ladder: SmallSetLadder

    def kernel(self, env_values: np.ndarray) -> SplitKernel: ...

    def env_in_small_set(self, env_values: np.ndarray, n: int) -> np.ndarray: ...


def _as_uniform_table(u_seq, need: int) -> np.ndarray:
    u = np.asarray(u_seq, float)
    if u.ndim == 2:
        u = u[None, :, :]
    if u.ndim != 3 or u.shape[2] != 2:
        raise ValueError("uniform sequence must have shape (steps, 2) or (replicas, steps, 2)")
    if u.shape[1] < need:
        raise ValueError(f"uniform sequence too short: {u.shape[1]} < {need}")
    return u


def backward_orbit_batch(kernel: SplitKernel, n: int, x0, u_table: np.ndarray, t: int):
    """Depth-t backward composition, one row of ``u_table`` per replica."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    u = _as_uniform_table(u_table, t)
    x = np.broadcast_to(np.asarray(x0, float), (u.shape[0],)).copy()
    for i in range(t - 1, -1, -1):
        x = split_apply_batch(kernel, n, x, u[:, i, 0], u[:, i, 1])
    return x


def backward_orbit(kernel: SplitKernel, n: int, x0: float, u_seq, t: int) -> float:
    """Compose the split mapping backward over ``u_seq[t-1], ..., u_seq[0]``.

    The output is distributed as the forward t-step law started at ``x0``;
    orbits of different depths built from the same sequence share the
    uniforms with matching indices.
    """
    return float(backward_orbit_batch(kernel, n, x0, u_seq, t)[0])


def _classify(v, w, radius, env_ok=None) -> np.ndarray:
    eq = v == w
    in_set = (np.abs(v) <= radius) & (np.abs(w) <= radius)
    if env_ok is not None:
        in_set &= env_ok
    return np.where(eq, 0, np.where(in_set, 1, 2)).astype(np.int8)


def _traces_from_codes(codes: np.ndarray, v: np.ndarray, w: np.ndarray) -> list[CouplingTrace]:
    traces = []
    for r in range(codes.shape[0]):
        ev = "".join(_EVENT_CHARS[codes[r]])
        first_a = ev.find("A")
        traces.append(
            CouplingTrace(
                events=ev,
                couple_step=None if first_a < 0 else first_a,
                final_states=(float(v[r]), float(w[r])),
            )
        )
    return traces


def coupled_pair_batch(
    kernel: SplitKernel, n: int, x0: float, s: int, t: int, u_table: np.ndarray
) -> list[CouplingTrace]:
    """Vectorized ``coupled_pair`` over replicas (rows of ``u_table``)."""
    if not 1 <= s <= t:
        raise ValueError("need 1 <= s <= t")
    n = kernel.ladder.check_index(n)
    u = _as_uniform_table(u_table, t)
    reps = u.shape[0]
    radius = kernel.ladder.radii[n]

    v = np.full(reps, float(x0))
    for i in range(t - 1, s - 1, -1):
        v = split_apply_batch(kernel, n, v, u[:, i, 0], u[:, i, 1])
    w = np.full(reps, float(x0))

    codes = np.empty((reps, s + 1), np.int8)
    for k, j in enumerate(range(s, 0, -1)):
        codes[:, k] = _classify(v, w, radius)
        vw = np.concatenate([v, w])
        u1 = np.tile(u[:, j - 1, 0], 2)
        u2 = np.tile(u[:, j - 1, 1], 2)
        out = split_apply_batch(kernel, n, vw, u1, u2)
        v, w = out[:reps], out[reps:]
    codes[:, s] = _classify(v, w, radius)
    return _traces_from_codes(codes, v, w)


def coupled_pair(
    kernel: SplitKernel, n: int, x0: float, s: int, t: int, u_seq
) -> CouplingTrace:
    """Couple the depth-t and depth-s backward orbits on shared uniforms.

    Steps are classified chronologically from the deepest shared index down
    to the present; once the orbits coalesce they stay equal bit-for-bit,
    because every later step applies the identical deterministic map.
    ``s == t`` is allowed for testing and coalesces immediately.
    """
    return coupled_pair_batch(kernel, n, x0, s, t, u_seq)[0]


def coupling_lower_bound(alpha: float, s: int, eps: float) -> float:
    """Analytic lower bound (1 - 2 eps)(1 - (1 - alpha)^s) on coalescence.

    ``eps`` must upper-bound the worst-case probability of leaving the small
    set; it is supplied by the caller (e.g. from a Markov/Chebyshev tail
    bound) so the bound stays one-sided.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    if not 0.0 <= eps <= 0.5:
        raise ValueError("eps must lie in [0, 1/2]")
    if s < 1:
        raise ValueError("s must be at least 1")
    return max((1.0 - 2.0 * eps) * (1.0 - (1.0 - alpha) ** s), 0.0)


def tv_upper_from_coupling(traces: Sequence[CouplingTrace]) -> tuple[float, float]:
    """Total-variation upper bound 2 P(no coalescence) with a 3-sigma half width."""
    if len(traces) == 0:
        raise ValueError("need at least one trace")
    reps = len(traces)
    fails = sum(1 for tr in traces if not tr.coupled)
    frac = fails / reps
    se = math.sqrt(frac * (1.0 - frac) / reps)
    return 2.0 * frac, 2.0 * 3.0 * se


def _smallest_n(tail: Callable[[int], float], target: float, n_min: int, n_cap: int) -> int:
    if tail(n_min) <= target:
        return n_min
    lo = max(n_min, 1)
    hi = max(2 * lo, 2)
    while tail(hi) > target:
        lo = hi
        hi *= 2
        if hi > n_cap:
            raise ScheduleError(f"tail never reaches {target} below n = {n_cap}")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if tail(mid) <= target:
            hi = mid
        else:
            lo = mid
    return hi


def _smallest_block_length(alpha: float, m: int) -> int:
    if alpha >= 1.0:
        return 1
    rate = -math.log1p(-alpha)
    if rate <= 0.0:
        raise ScheduleError(f"alpha = {alpha} too small to define a block length")
    raw = m * _LN2 / rate
    if not math.isfinite(raw):
        raise ScheduleError(f"block length for alpha = {alpha} overflows")
    n_steps = int(math.ceil(raw))
    if n_steps < 2**52:  # adjust ceil rounding only where float arithmetic is exact enough
        while n_steps > 1 and (n_steps - 1) * rate >= m * _LN2:
            n_steps -= 1
        while n_steps * rate < m * _LN2:
            n_steps += 1
    return max(n_steps, 1)


def block_schedule(
    tail: Callable[[int], float],
    alpha: Callable[[int], float],
    m_max: int,
    *,
    n_min: int = 1,
    n_cap: int = 2**20,
) -> BlockSchedule:
    """Derive the block schedule from a tail bound and minorization weights.

    For each block m, ``n_of_m`` is the smallest index with
    ``tail(n) <= 2^-m`` and ``N_of_m`` the smallest length with
    ``(1 - alpha(n))^N <= 2^-m``.  ``tail`` must be nonincreasing with limit
    0 and ``alpha`` must return values in (0, 1].
    """
    if m_max < 0:
        raise ValueError("m_max must be nonnegative")
    n_list: list[int] = []
    len_list: list[int] = []
    m_bounds = [0]
    a_list: list[float] = []
    t_list: list[float] = []
    for m in range(1, m_max + 1):
        target = 2.0 ** -m
        n = _smallest_n(tail, target, n_min, n_cap)
        a = float(alpha(n))
        if not 0.0 < a <= 1.0:
            raise ScheduleError(
                f"alpha({n}) = {a!r} is outside (0, 1]; no finite block length exists"
            )
        n_steps = _smallest_block_length(a, m)
        n_list.append(n)
        len_list.append(n_steps)
        m_bounds.append(m_bounds[-1] + n_steps)
        a_list.append(a)
        t_list.append(float(tail(n)))
    return BlockSchedule(
        n_of_m=tuple(n_list),
        N_of_m=tuple(len_list),
        M_of_m=tuple(m_bounds),
        alphas=tuple(a_list),
        tails=tuple(t_list),
    )


def _mcre_step_state(
    model: McreSplitModel, n: int, env_row: np.ndarray, x: np.ndarray, u1, u2
) -> np.ndarray:
    kern = model.kernel(env_row)
    radius = model.ladder.radii[n]
    in_set = (np.abs(x) <= radius) & model.env_in_small_set(env_row, n)
    return split_apply_batch(kern, n, x, u1, u2, in_set=in_set)


def _mcre_coupled_batch(
    model: McreSplitModel,
    env_batch: np.ndarray,
    x_v0: float,
    x_w0: float,
    depth_w: int,
    t: int,
    u_table: np.ndarray,
    schedule: BlockSchedule,
) -> list[CouplingTrace]:
    """Core stepping shared by the depth-pair and two-chain experiments.

    ``env_batch`` has shape (replicas, t+1, components); row ``k-1`` enters
    forward step k and the final row tags the terminal event.
    """
    if t < 1:
        raise ValueError("t must be at least 1")
    if t > schedule.total_steps:
        raise ValueError(f"t = {t} exceeds the schedule's {schedule.total_steps} steps")
    u = _as_uniform_table(u_table, t)
    reps = u.shape[0]
    env_batch = np.asarray(env_batch, float)
    if env_batch.ndim != 3 or env_batch.shape[0] != reps or env_batch.shape[1] < t + 1:
        raise ValueError("environment batch must cover (replicas, t+1, components)")

    v = np.full(reps, float(x_v0))
    w = np.full(reps, float(x_w0))
    codes = np.empty((reps, depth_w + 1), np.int8)
    for k in range(1, t + 1):
        jprime = t - k  # backward index of the uniform consumed by this step
        m = schedule.block_of_uniform_index(jprime)
        n = schedule.n_of_m[m - 1]
        env_row = env_batch[:, k - 1]
        j = jprime + 1
        w_active = j <= depth_w
        if w_active:
            radius = model.ladder.radii[model.ladder.check_index(n)]
            env_ok = model.env_in_small_set(env_row, n)
            codes[:, depth_w - j] = _classify(v, w, radius, env_ok)
            env2 = np.concatenate([env_row, env_row], axis=0)
            kern = model.kernel(env2)
            vw = np.concatenate([v, w])
            in_set = (np.abs(vw) <= radius) & np.tile(env_ok, 2)
            out = split_apply_batch(
                kern, n, vw, np.tile(u[:, jprime, 0], 2), np.tile(u[:, jprime, 1], 2),
                in_set=in_set,
            )
            v, w = out[:reps], out[reps:]
        else:
            v = _mcre_step_state(model, n, env_row, v, u[:, jprime, 0], u[:, jprime, 1])
    n0 = schedule.n_of_m[schedule.block_of_uniform_index(0) - 1]
    radius0 = model.ladder.radii[n0]
    env_ok0 = model.env_in_small_set(env_batch[:, t], n0)
    codes[:, depth_w] = _classify(v, w, radius0, env_ok0)
    return _traces_from_codes(codes, v, w)


def mcre_coupled_pair(
    model: McreSplitModel,
    env: EnvironmentWindow,
    x0: float,
    schedule: BlockSchedule,
    t: int,
    u_seq,
) -> CouplingTrace:
    """Couple the depth-t orbit with the orbit at the last block boundary.

    The partner depth is the largest schedule boundary strictly below ``t``.
    Each step uses the ladder index of its block, and the B tag additionally
    requires the step's environment value inside its small set.  The
    environment row consumed by a step is the same row whose small-set
    membership licenses the preceding B tag; this pairing is what makes the
    regeneration branch fire with the full block weight.
    """
    m = schedule.block_of_uniform_index(t - 1)
    s = schedule.M_of_m[m - 1]
    return _mcre_coupled_batch(
        model, env.values[None, :, :], x0, x0, s, t, u_seq, schedule
    )[0]


def mcre_coupled_pair_batch(
    model: McreSplitModel,
    env_batch: np.ndarray,
    x0: float,
    schedule: BlockSchedule,
    t: int,
    u_table: np.ndarray,
) -> list[CouplingTrace]:
    m = schedule.block_of_uniform_index(t - 1)
    s = schedule.M_of_m[m - 1]
    return _mcre_coupled_batch(model, env_batch, x0, x0, s, t, u_table, schedule)


def mcre_coupled_chains(
    model: McreSplitModel,
    env: EnvironmentWindow,
    x0_pair: tuple[float, float],
    schedule: BlockSchedule,
    t: int,
    u_seq,
) -> CouplingTrace:
    """Couple two depth-t chains from distinct starts in one environment."""
    return _mcre_coupled_batch(
        model, env.values[None, :, :], x0_pair[0], x0_pair[1], t, t, u_seq, schedule
    )[0]


def mcre_coupled_chains_batch(
    model: McreSplitModel,
    env_batch: np.ndarray,
    x0_pair: tuple[float, float],
    schedule: BlockSchedule,
    t: int,
    u_table: np.ndarray,
) -> list[CouplingTrace]:
    return _mcre_coupled_batch(
        model, env_batch, x0_pair[0], x0_pair[1], t, t, u_table, schedule
    )
