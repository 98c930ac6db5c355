import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import ndtr

from splitcouple.ar1 import ar1_alpha, ar1_split_kernel
from splitcouple.errors import CertificationError
from splitcouple.kernels import (
    SmallSetLadder,
    SplitKernel,
    UniformPair,
    kernel_inverse_cdf,
    nu_inverse_cdf,
    residual_inverse_cdf,
    split_apply,
    split_apply_batch,
    validate_minorization,
)

GAMMA = 0.5


@pytest.fixture(scope="module")
def kernel():
    return ar1_split_kernel(GAMMA, n_max=8)


def test_nu_inverse_cdf_values():
    assert nu_inverse_cdf(0.5) == 0.0
    assert nu_inverse_cdf(0.0) == -1.0
    assert nu_inverse_cdf(0.75) == 0.5


def test_nu_inverse_cdf_domain():
    with pytest.raises(ValueError):
        nu_inverse_cdf(1.2)
    with pytest.raises(ValueError):
        nu_inverse_cdf(-0.1)


def test_uniform_pair_validation():
    UniformPair(0.0, 1.0)
    with pytest.raises(ValueError):
        UniformPair(1.5, 0.2)


def test_ladder_invariants():
    with pytest.raises(ValueError):
        SmallSetLadder(radii=(1.0, 0.5), alphas=(0.5, 0.4))  # radii decreasing
    with pytest.raises(ValueError):
        SmallSetLadder(radii=(0.5, 1.0), alphas=(0.4, 0.5))  # alphas increasing
    with pytest.raises(ValueError):
        SmallSetLadder(radii=(0.5,), alphas=(0.0,))  # alpha outside (0, 1]


def test_regeneration_branch_is_constant_in_x(kernel):
    # u1 below alpha_n forces the nu branch, identical for every x in the set.
    rng = np.random.default_rng(101)
    for _ in range(200):
        n = rng.integers(1, 6)
        a = kernel.ladder.alphas[n]
        u = UniformPair(float(rng.random() * a), float(rng.random()))
        x1, x2 = rng.uniform(-n, n, size=2)
        y1 = split_apply(kernel, int(n), float(x1), u)
        y2 = split_apply(kernel, int(n), float(x2), u)
        assert y1 == y2 == 2.0 * u.u2 - 1.0


def test_split_apply_example_values(kernel):
    # regeneration branch: u2 = 0.75 lands on nu quantile 0.5 for any x in the set
    for x in (-2.0, 0.3, 2.0):
        assert split_apply(kernel, 2, x, UniformPair(0.0, 0.75)) == 0.5


def test_split_apply_law_moments(kernel):
    rng = np.random.default_rng(7)
    n_samples = 200_000
    for x in (0.0, 2.5):
        draws = split_apply_batch(
            kernel, 3, np.full(n_samples, x), rng.random(n_samples), rng.random(n_samples)
        )
        se_mean = 1.0 / np.sqrt(n_samples)
        se_var = np.sqrt(2.0 / n_samples)
        assert abs(draws.mean() - GAMMA * x) < 4 * se_mean
        assert abs(draws.var() - 1.0) < 4 * se_var


def test_residual_inverse_cdf_against_quadrature_oracle(kernel):
    # Oracle: integrate the residual density directly and invert with brentq.
    alpha2 = kernel.ladder.alphas[2]

    def resid_cdf(x, z):
        def dens(s):
            q = np.exp(-0.5 * (s - GAMMA * x) ** 2) / np.sqrt(2 * np.pi)
            nu = 0.5 if -1.0 <= s <= 1.0 else 0.0
            return (q - alpha2 * nu) / (1.0 - alpha2)

        pts = [p for p in (-1.0, 1.0) if -40.0 < p < z]
        return quad(
            dens, -40.0, z, limit=800, points=pts or None, epsabs=1e-13, epsrel=1e-13
        )[0]

    # frozen oracle outputs (quad split at the nu kinks + brentq, xtol 1e-14)
    assert abs(residual_inverse_cdf(kernel, 2, 0.0, 0.5) - 0.0) < 1e-9
    frozen = -0.13343948222192434
    got = residual_inverse_cdf(kernel, 2, 0.7, 0.3)
    assert abs(got - frozen) < 1e-9
    live = brentq(lambda z: resid_cdf(0.7, z) - 0.3, -10, 10, xtol=1e-14)
    assert abs(got - live) < 1e-9


def test_residual_median_approaches_kernel_median(kernel):
    # alpha_8 ~ 3e-6: the residual law is essentially Q(0, .), median 0.
    assert abs(residual_inverse_cdf(kernel, 8, 0.0, 0.5)) < 1e-4


def test_residual_tail_diverges(kernel):
    z = residual_inverse_cdf(kernel, 2, 0.0, 1e-12)
    assert z < -6.0


def test_residual_u_domain(kernel):
    with pytest.raises(ValueError):
        residual_inverse_cdf(kernel, 2, 0.0, 0.0)
    with pytest.raises(ValueError):
        residual_inverse_cdf(kernel, 2, 0.0, 1.0)


def test_split_apply_off_set_ignores_u1(kernel):
    # x outside the set: only u2 matters and the full kernel CDF is inverted.
    x = 10.0
    out1 = split_apply(kernel, 3, x, UniformPair(0.0, 0.42))
    out2 = split_apply(kernel, 3, x, UniformPair(0.99, 0.42))
    assert out1 == out2
    assert abs(float(kernel.cdf(x, out1)) - 0.42) < 1e-9


def test_inverse_consistency(kernel):
    for x in (-3.0, 0.0, 1.7):
        for u in np.arange(0.01, 1.0, 0.01):
            z = kernel_inverse_cdf(kernel, x, float(u))
            assert abs(float(kernel.cdf(x, z)) - u) <= 1e-9


def test_residual_monotone_where_certified(kernel):
    n = 2
    assert validate_minorization(kernel, n, np.linspace(-2, 2, 201), np.linspace(-1, 1, 201)) >= 0
    a = kernel.ladder.alphas[n]
    z = np.linspace(-8, 8, 4001)
    for x in (-2.0, 0.0, 1.3):
        resid = (kernel.cdf(x, z) - a * np.clip((z + 1) / 2, 0, 1)) / (1 - a)
        assert np.all(np.diff(resid) >= -1e-15)


@pytest.mark.parametrize("n", range(6))
def test_validate_minorization_margins(kernel, n):
    radius = kernel.ladder.radii[n]
    x_grid = np.linspace(-radius, radius, 201)
    z_grid = np.linspace(-1.0, 1.0, 201)
    assert validate_minorization(kernel, n, x_grid, z_grid) >= 0.0


def test_validate_minorization_detects_violation():
    # doubling every alpha makes the certificate fail on the grid boundary
    base = ar1_split_kernel(GAMMA, n_max=4)
    bad_ladder = SmallSetLadder(
        radii=base.ladder.radii,
        alphas=tuple(min(2 * a, 1.0) for a in base.ladder.alphas),
    )
    bad = SplitKernel(
        density=base.density, cdf=base.cdf, ladder=bad_ladder,
        mean=base.mean, stdev=base.stdev,
    )
    n = 2
    x_grid = np.linspace(-2, 2, 201)
    z_grid = np.linspace(-1, 1, 201)
    assert validate_minorization(bad, n, x_grid, z_grid) < 0.0


def test_validate_minorization_vanishing_alpha_limit():
    base = ar1_split_kernel(GAMMA, n_max=2)
    tiny = SmallSetLadder(radii=base.ladder.radii, alphas=(1e-300,) * 3)
    kern = SplitKernel(
        density=base.density, cdf=base.cdf, ladder=tiny,
        mean=base.mean, stdev=base.stdev,
    )
    x_grid = np.linspace(-2, 2, 101)
    z_grid = np.linspace(-1, 1, 101)
    margin = validate_minorization(kern, 2, x_grid, z_grid)
    min_density = float(np.min(base.density(x_grid[:, None], z_grid[None, :])))
    assert margin == pytest.approx(min_density, abs=1e-12)
    assert margin >= 0.0


def test_validate_minorization_grid_preconditions(kernel):
    with pytest.raises(ValueError):
        validate_minorization(kernel, 2, np.array([3.0]), np.array([0.0]))
    with pytest.raises(ValueError):
        validate_minorization(kernel, 2, np.array([0.0]), np.array([1.5]))
    with pytest.raises(ValueError):
        validate_minorization(kernel, 2, np.array([]), np.array([0.0]))


def test_bad_ladder_index(kernel):
    with pytest.raises(ValueError):
        split_apply(kernel, 99, 0.0, UniformPair(0.5, 0.5))


def test_unbracketable_inversion_raises():
    # a defective "CDF" capped at 1/2 can never reach u = 0.9
    ladder = SmallSetLadder(radii=(1.0,), alphas=(0.1,))
    broken = SplitKernel(
        density=lambda x, z: 0.5 * np.exp(-0.5 * np.asarray(z) ** 2) / np.sqrt(2 * np.pi),
        cdf=lambda x, z: 0.5 * ndtr(np.asarray(z, float)),
        ladder=ladder,
        mean=lambda x: np.zeros_like(np.asarray(x, float)),
        stdev=lambda x: np.ones_like(np.asarray(x, float)),
    )
    with pytest.raises(CertificationError):
        kernel_inverse_cdf(broken, 0.0, 0.9)


def test_scalar_matches_batch(kernel):
    rng = np.random.default_rng(3)
    x = rng.uniform(-4, 4, 50)
    u1 = rng.random(50)
    u2 = rng.random(50)
    batch = split_apply_batch(kernel, 3, x, u1, u2)
    singles = np.array([
        split_apply(kernel, 3, float(xi), UniformPair(float(a), float(b)))
        for xi, a, b in zip(x, u1, u2)
    ])
    assert np.array_equal(batch, singles)


def test_ar1_alpha_ladder_matches_closed_form(kernel):
    for n in range(9):
        assert kernel.ladder.alphas[n] == ar1_alpha(GAMMA, n)
