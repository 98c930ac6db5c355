"""Split-kernel couplings, convergence-rate bounds, and their verification.

The package realizes minorized transition kernels as deterministic maps of
uniform pairs, couples backward compositions of those maps (for plain chains
and for chains in a random environment), evaluates explicit total-variation
rate bounds, and checks everything against exact oracles and Monte Carlo on
three concrete models: a stable AR(1) chain, a discrete log-volatility chain
in a moving-average Gaussian environment, and an Euler-discretized
stochastic-volatility SDE.
"""

from .ar1 import (
    Ar1Params,
    ar1_alpha,
    ar1_bound_curve,
    ar1_lyapunov_constant,
    ar1_marginal,
    ar1_n_schedule,
    ar1_rate_fit,
    ar1_split_kernel,
    ar1_stationary,
    ar1_step,
)
from .coupling import (
    BlockSchedule,
    CouplingTrace,
    EnvironmentWindow,
    backward_orbit,
    block_schedule,
    coupled_pair,
    coupling_lower_bound,
    mcre_coupled_chains,
    mcre_coupled_pair,
    tv_upper_from_coupling,
)
from .errors import CertificationError, ConfigError, RunError, ScheduleError
from .fracvol import (
    DriftSpec,
    SdeParams,
    VolatilityKernel,
    dissipativity_check,
    euler_step,
    increment_moment_check,
    linear_drift,
    saturating_drift,
    simulate_ensemble,
    volatility_path,
)
from .kernels import (
    SmallSetLadder,
    SplitKernel,
    UniformPair,
    nu_inverse_cdf,
    residual_inverse_cdf,
    split_apply,
    validate_minorization,
)
from .logvol import (
    EnvState,
    InnovationLaw,
    LogvolParams,
    geometric_ma,
    fractional_ma,
    logvol_alpha,
    logvol_dn,
    logvol_moment_bound,
    logvol_step,
    logvol_tail,
    ma_env_path,
)
from .metrics import (
    PathWindow,
    bounded_wasserstein,
    path_metric_d,
    tv_empirical,
    tv_gaussian,
    tv_density,
)

__version__ = "0.1.0"
