import re
from dataclasses import dataclass

import numpy as np
import pytest
from scipy.stats import ks_2samp

from splitcouple.ar1 import Ar1Params, ar1_alpha, ar1_marginal, ar1_simulate_batch, ar1_split_kernel
from splitcouple.coupling import (
    BlockSchedule,
    CouplingTrace,
    EnvironmentWindow,
    backward_orbit,
    backward_orbit_batch,
    block_schedule,
    coupled_pair,
    coupled_pair_batch,
    coupling_lower_bound,
    mcre_coupled_chains_batch,
    mcre_coupled_pair,
    tv_upper_from_coupling,
)
from splitcouple.errors import ScheduleError
from splitcouple.kernels import SmallSetLadder, UniformPair, split_apply
from splitcouple.streams import replica_uniform_pairs

GAMMA = 0.5


@pytest.fixture(scope="module")
def kernel():
    return ar1_split_kernel(GAMMA, n_max=6)


@dataclass
class ConstEnvModel:
    """AR(1) kernel dressed as an environment-dependent model; the
    environment is ignored and always counts as inside its small set."""

    base: object

    @property
    def ladder(self) -> SmallSetLadder:
        return self.base.ladder

    def kernel(self, env_values):
        return self.base

    def env_in_small_set(self, env_values, n):
        env_values = np.asarray(env_values)
        return np.ones(env_values.shape[:-1], bool)


def test_backward_orbit_depth_zero_and_one(kernel):
    u = np.array([[0.3, 0.8], [0.6, 0.1]])
    assert backward_orbit(kernel, 2, 1.5, u, 0) == 1.5
    one = backward_orbit(kernel, 2, 1.5, u, 1)
    assert one == split_apply(kernel, 2, 1.5, UniformPair(0.3, 0.8))


def test_backward_orbit_needs_enough_uniforms(kernel):
    with pytest.raises(ValueError):
        backward_orbit(kernel, 2, 0.0, np.zeros((3, 2)) + 0.5, 4)


def test_backward_orbit_marginal_moments(kernel):
    t, reps = 20, 100_000
    u = replica_uniform_pairs(321, reps, t)
    out = backward_orbit_batch(kernel, 3, 1.0, u, t)
    mean, var = ar1_marginal(Ar1Params(GAMMA, 0.2, x0=1.0), t)
    se_mean = np.sqrt(var / reps)
    se_var = var * np.sqrt(2.0 / reps)
    assert abs(out.mean() - mean) < 4 * se_mean
    assert abs(out.var() - var) < 4 * se_var


def test_backward_orbit_matches_forward_law(kernel):
    t, reps = 12, 100_000
    u = replica_uniform_pairs(99, reps, t)
    backward = backward_orbit_batch(kernel, 3, 1.0, u, t)
    forward = ar1_simulate_batch(
        Ar1Params(GAMMA, 0.2, x0=1.0), t, np.random.default_rng(1234), reps
    )
    assert ks_2samp(backward, forward).pvalue >= 0.01


def test_coupled_pair_degenerate_equal_depths(kernel):
    u = np.random.default_rng(0).random((5, 2))
    trace = coupled_pair(kernel, 2, 0.5, 5, 5, u)
    assert trace.events[0] == "A"
    assert trace.couple_step == 0
    assert trace.final_states[0] == trace.final_states[1]


def test_coupled_pair_regeneration_forces_coalescence(kernel):
    # u1 = 0 on the last shared step: if the orbits sit in the set, they meet
    rng = np.random.default_rng(8)
    u = rng.random((6, 2))
    u[:, 0] = np.minimum(u[:, 0], 0.9)  # keep brackets sane
    u[0] = (0.0, 0.7)  # backward index 0 is the final step
    trace = coupled_pair(kernel, 4, 0.5, 3, 6, u)
    if trace.events[-2] in "AB":  # in the set (or already met) before the last step
        assert trace.events[-1] == "A"
        assert trace.final_states[0] == trace.final_states[1] == 2.0 * 0.7 - 1.0


def test_traces_absorbing_pattern(kernel):
    u = replica_uniform_pairs(17, 300, 40)
    traces = coupled_pair_batch(kernel, 3, 1.0, 20, 40, u)
    for tr in traces:
        assert re.fullmatch(r"[BC]*A*", tr.events)
        assert len(tr.events) == 21
        if tr.coupled:
            assert tr.final_states[0] == tr.final_states[1]
        else:
            assert tr.final_states[0] != tr.final_states[1]


def test_coupling_trace_validation():
    with pytest.raises(ValueError):
        CouplingTrace(events="BAC", couple_step=1, final_states=(0.0, 0.0))
    with pytest.raises(ValueError):
        CouplingTrace(events="BBA", couple_step=None, final_states=(0.0, 0.0))


def test_coupling_lower_bound_values():
    assert coupling_lower_bound(1.0, 1, 0.0) == 1.0
    assert coupling_lower_bound(0.5, 2, 0.0) == 0.75
    assert coupling_lower_bound(0.3, 7, 0.5) == 0.0
    with pytest.raises(ValueError):
        coupling_lower_bound(0.0, 1, 0.0)
    with pytest.raises(ValueError):
        coupling_lower_bound(0.5, 0, 0.0)
    with pytest.raises(ValueError):
        coupling_lower_bound(0.5, 1, 0.7)


def test_empirical_coupling_beats_lower_bound(kernel):
    s, t, reps = 50, 100, 4000
    u = replica_uniform_pairs(2718, reps, t)
    traces = coupled_pair_batch(kernel, 3, 1.0, s, t, u)
    frac = np.mean([tr.coupled for tr in traces])
    se = np.sqrt(frac * (1 - frac) / reps)
    eps_hat = (4.0 / 3.0) / 9.0  # Chebyshev with the exact second-moment supremum
    assert frac >= coupling_lower_bound(ar1_alpha(GAMMA, 3), s, eps_hat) - 3 * se


def test_tv_upper_from_coupling_edges():
    all_coupled = [CouplingTrace("A", 0, (1.0, 1.0))] * 10
    assert tv_upper_from_coupling(all_coupled) == (0.0, 0.0)
    none_coupled = [CouplingTrace("C", None, (0.0, 1.0))] * 10
    assert tv_upper_from_coupling(none_coupled) == (2.0, 0.0)
    with pytest.raises(ValueError):
        tv_upper_from_coupling([])


def test_block_schedule_synthetic_example():
    sched = block_schedule(lambda n: 4.0 / n**2, lambda n: 0.5, 3)
    assert sched.n_of_m == (3, 4, 6)  # ceil(2 * 2^(m/2))
    assert sched.N_of_m == (1, 2, 3)
    assert sched.M_of_m == (0, 1, 3, 6)
    assert sched.total_steps == 6


def test_block_schedule_certain_regeneration():
    sched = block_schedule(lambda n: 4.0 / n**2, lambda n: 1.0, 3)
    assert sched.N_of_m == (1, 1, 1)


def test_block_schedule_empty():
    sched = block_schedule(lambda n: 4.0 / n**2, lambda n: 0.5, 0)
    assert sched.n_of_m == ()
    assert sched.M_of_m == (0,)


def test_block_schedule_errors():
    with pytest.raises(ScheduleError):
        block_schedule(lambda n: 0.3, lambda n: 0.5, 2, n_cap=1024)
    with pytest.raises(ScheduleError):
        block_schedule(lambda n: 4.0 / n**2, lambda n: 0.0, 1)


def test_block_schedule_invariants_enforced():
    with pytest.raises(ValueError):
        BlockSchedule(n_of_m=(3,), N_of_m=(1,), M_of_m=(0, 2), alphas=(0.5,), tails=(0.4,))
    with pytest.raises(ValueError):
        # one step at alpha 0.1 leaves more than half the mass uncoupled
        BlockSchedule(n_of_m=(3,), N_of_m=(1,), M_of_m=(0, 1), alphas=(0.1,), tails=(0.4,))
    with pytest.raises(ValueError):
        BlockSchedule(n_of_m=(3,), N_of_m=(1,), M_of_m=(0, 1), alphas=(0.5,), tails=(0.6,))


def test_block_of_uniform_index():
    sched = block_schedule(lambda n: 4.0 / n**2, lambda n: 0.5, 3)
    assert [sched.block_of_uniform_index(j) for j in range(6)] == [1, 2, 2, 3, 3, 3]
    with pytest.raises(ValueError):
        sched.block_of_uniform_index(6)


def test_mcre_constant_env_reduces_to_coupled_pair(kernel):
    model = ConstEnvModel(base=kernel)
    a1 = kernel.ladder.alphas[1]
    sched = BlockSchedule(
        n_of_m=(1, 1), N_of_m=(5, 10), M_of_m=(0, 5, 15),
        alphas=(a1, a1), tails=(0.4, 0.2),
    )
    rng = np.random.default_rng(42)
    s, t = 5, 12
    u = rng.random((t, 2))
    env = EnvironmentWindow(values=np.zeros((t + 1, 1)))
    tr_mcre = mcre_coupled_pair(model, env, 1.0, sched, t, u)
    tr_plain = coupled_pair(kernel, 1, 1.0, s, t, u)
    assert tr_mcre.events == tr_plain.events
    assert tr_mcre.final_states == tr_plain.final_states


def test_mcre_regeneration_on_b_step(kernel):
    # both chains in the set with u1 = 0 on the final step: next event is A
    model = ConstEnvModel(base=kernel)
    a4 = kernel.ladder.alphas[4]
    sched = BlockSchedule(
        n_of_m=(4,), N_of_m=(80,), M_of_m=(0, 80), alphas=(a4,), tails=(0.4,),
    )
    u = np.full((1, 3, 2), 0.5)
    u[0, 0] = (0.0, 0.25)
    env = np.zeros((1, 4, 1))
    trace = mcre_coupled_chains_batch(model, env, (1.0, -1.0), sched, 3, u)[0]
    assert trace.events[-2] == "B"
    assert trace.events[-1] == "A"
    assert trace.final_states == (-0.5, -0.5)


def test_mcre_two_chains_couple_by_third_boundary(kernel):
    model = ConstEnvModel(base=kernel)
    sched = block_schedule(lambda n: min(1.0, (4.0 / 3.0) / n**2),
                           lambda n: ar1_alpha(GAMMA, n), 3)
    t = sched.total_steps
    reps = 400
    u = replica_uniform_pairs(1000, reps, t)
    env = np.zeros((reps, t + 1, 1))
    traces = mcre_coupled_chains_batch(model, env, (1.0, -1.0), sched, t, u)
    frac = np.mean([tr.coupled for tr in traces])
    assert frac >= 0.5  # block failure mass gives at least 1/2 in theory
    for tr in traces[:40]:
        assert re.fullmatch(r"[BC]*A*", tr.events)


def test_mcre_preconditions(kernel):
    model = ConstEnvModel(base=kernel)
    sched = BlockSchedule(
        n_of_m=(1,), N_of_m=(5,), M_of_m=(0, 5),
        alphas=(kernel.ladder.alphas[1],), tails=(0.4,),
    )
    u = np.zeros((8, 2)) + 0.5
    with pytest.raises(ValueError):
        mcre_coupled_pair(model, EnvironmentWindow(np.zeros((9, 1))), 0.0, sched, 8, u)
    with pytest.raises(ValueError):
        mcre_coupled_pair(model, EnvironmentWindow(np.zeros((3, 1))), 0.0, sched, 5, u)


def test_environment_window_validation():
    with pytest.raises(ValueError):
        EnvironmentWindow(values=np.zeros(5))
