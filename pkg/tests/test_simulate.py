import numpy as np
import pytest

from hypodiff.bumps import SmoothBump, SpaceTimeFunction
from hypodiff.errors import (
    BadGrid,
    DimensionMismatch,
    HorizonExceeded,
    NonPSDDiffusion,
)
from hypodiff.group import GroupPoint, kolmogorov_matrix
from hypodiff.kernel import CovarianceProfile, TransitionKernel
from hypodiff.simulate import (
    CoefficientField,
    Ensemble,
    RadiusFunction,
    Trajectory,
    chain_structure,
    euler_residual,
    euler_simulate,
    exact_sample,
    field_example_chain,
    field_example_sum_drift,
    field_example_two_block,
    green_functional,
    growth_audit,
    law_distance,
    linear_field,
    localization_times,
    martingale_residual,
    modulus_of_continuity,
)

SM = kolmogorov_matrix()
KERN = TransitionKernel(SM, CovarianceProfile.constant(np.eye(1)))

BUMP = SmoothBump(center=[0.6, 0.0], widths=[1.0, 1.5],
                  t_center=0.5, t_width=0.5)


def test_exact_sample_degenerate_grid():
    ens = exact_sample(KERN, GroupPoint(0.0, [1.0, 2.0]), [0.0], seed=1, n_paths=7)
    assert ens.states.shape == (7, 1, 2)
    assert np.all(ens.states[:, 0, :] == [1.0, 2.0])


def test_exact_sample_grid_validation():
    start = GroupPoint(0.0, [0.0, 0.0])
    with pytest.raises(BadGrid):
        exact_sample(KERN, start, [0.5, 1.0], seed=1, n_paths=2)
    with pytest.raises(BadGrid):
        exact_sample(KERN, start, [0.0, 1.0, 0.5], seed=1, n_paths=2)


def test_exact_sample_moments():
    start = GroupPoint(0.0, [1.0, -0.5])
    grid = np.linspace(0.0, 1.0, 11)
    ens = exact_sample(KERN, start, grid, seed=42, n_paths=20000)
    final = ens.states_at(1.0)
    mean_expected = SM.matrix_exp(1.0) @ start.x
    se = final.std(axis=0, ddof=1) / np.sqrt(ens.n_paths)
    assert np.all(np.abs(final.mean(axis=0) - mean_expected) <= 4.0 * se)
    cov_expected = KERN.covariance(0.0, 1.0)
    cov_sample = np.cov(final.T)
    assert np.max(np.abs(cov_sample - cov_expected) / np.abs(cov_expected)) <= 0.05


def test_exact_sample_deterministic_across_workers():
    start = GroupPoint(0.0, [0.0, 0.0])
    grid = np.linspace(0.0, 0.5, 6)
    a = exact_sample(KERN, start, grid, seed=9, n_paths=64, workers=1)
    b = exact_sample(KERN, start, grid, seed=9, n_paths=64, workers=4)
    assert np.array_equal(a.states, b.states)


def test_euler_constant_paths():
    field = CoefficientField(
        a=lambda t, X: np.zeros((1, 1)),
        b=lambda t, X: np.zeros_like(X),
        d=2, d0=1, growth_constant=1.0, a_state_independent=True,
    )
    ens = euler_simulate(field, GroupPoint(0.0, [0.3, -0.7]), mesh=0.1,
                         horizon=1.0, seed=3, n_paths=5)
    assert np.all(ens.states == ens.states[:, :1, :])


def test_euler_drift_only_matches_matrix_exponential():
    sm3 = kolmogorov_matrix(d0=1, n_blocks=3)
    field = CoefficientField(
        a=lambda t, X: np.zeros((1, 1)),
        b=lambda t, X: X @ sm3.matrix.T,
        d=3, d0=1, growth_constant=2.0, a_state_independent=True,
    )
    x0 = np.array([1.0, 0.5, -0.2])
    ens = euler_simulate(field, GroupPoint(0.0, x0), mesh=1e-4,
                         horizon=1.0, seed=0, n_paths=1)
    exact = sm3.matrix_exp(1.0) @ x0
    rel = np.max(np.abs(ens.states[0, -1] - exact) / np.abs(exact))
    assert rel <= 1e-3


def test_euler_degeneracy_exact():
    # components beyond d0 move by drift * mesh exactly, no noise
    field = linear_field(KERN)
    ens = euler_simulate(field, GroupPoint(0.0, [0.4, 0.1]), mesh=0.05,
                         horizon=1.0, seed=11, n_paths=200)
    states = ens.states
    update = states[:, :-1, :] + 0.05 * (states[:, :-1, :] @ SM.matrix.T)
    assert np.array_equal(states[:, 1:, 1], update[:, :, 1])


def test_euler_moments_match_recursion():
    # sampled moments agree with the deterministic Euler moment recursion,
    # and the recursion converges to the exact moments at first order
    start = np.array([1.0, -0.5])
    field = linear_field(KERN)
    B = SM.matrix

    def recursed(mesh):
        n = int(round(1.0 / mesh))
        m = start.copy()
        V = np.zeros((2, 2))
        step = np.eye(2) + mesh * B
        abar = np.zeros((2, 2))
        abar[0, 0] = 1.0
        for _ in range(n):
            m = step @ m
            V = step @ V @ step.T + mesh * abar
        return m, V

    ens = euler_simulate(field, GroupPoint(0.0, start), mesh=0.02,
                         horizon=1.0, seed=5, n_paths=20000)
    final = ens.states_at(1.0)
    m_rec, v_rec = recursed(0.02)
    se = final.std(axis=0, ddof=1) / np.sqrt(ens.n_paths)
    assert np.all(np.abs(final.mean(axis=0) - m_rec) <= 4.0 * se)
    cov_se = np.sqrt(
        (np.outer(np.diag(v_rec), np.diag(v_rec)) + v_rec ** 2) / ens.n_paths
    )
    assert np.all(np.abs(np.cov(final.T) - v_rec) <= 4.0 * cov_se)

    exact_cov = KERN.covariance(0.0, 1.0)
    err = [np.max(np.abs(recursed(m)[1] - exact_cov)) for m in (0.02, 0.01)]
    assert err[1] <= 0.6 * err[0]


def test_euler_rejects_non_psd_diffusion():
    field = CoefficientField(
        a=lambda t, X: np.full((X.shape[0], 1, 1), -1.0),
        b=lambda t, X: np.zeros_like(X),
        d=2, d0=1, growth_constant=2.0,
    )
    with pytest.raises(NonPSDDiffusion):
        euler_simulate(field, GroupPoint(0.0, [0.0, 0.0]), mesh=0.1,
                       horizon=0.5, seed=1, n_paths=3)


def test_euler_residual_zero_on_own_output():
    field = linear_field(KERN)
    ens, noise = euler_simulate(field, GroupPoint(0.0, [0.2, 0.3]), mesh=0.05,
                                horizon=0.5, seed=21, n_paths=50,
                                return_noise=True)
    assert euler_residual(ens, field, noise) <= 1e-13


def test_chain_field():
    field = field_example_chain(
        1, 2, bhat=lambda t, X: np.zeros((X.shape[0], 1)),
        sigmahat=lambda t, X: np.eye(1),
    )
    X = np.array([[0.5, 2.0], [1.0, -1.0]])
    b = field.b_at(0.0, X)
    assert np.array_equal(b, np.array([[0.0, 0.5], [0.0, 1.0]]))
    assert np.array_equal(chain_structure(1, 2).matrix, SM.matrix)
    a = field.a_at(0.0, X)
    assert a.shape == (2, 1, 1) and np.all(a == 1.0)
    with pytest.raises(DimensionMismatch):
        bad = field_example_chain(
            1, 2, bhat=lambda t, X: np.zeros((X.shape[0], 2)),
            sigmahat=lambda t, X: np.eye(1),
        )
        bad.b_at(0.0, X)


def test_two_block_field_rank_and_growth():
    rng = np.random.default_rng(2)
    a1 = np.array([[1.0, 0.4]])

    def bsecond(t, X):
        return X[:, :2] @ a1.T + 0.1 * np.tanh(X[:, 2:3])

    field = field_example_two_block(
        2, 1,
        bprime=lambda t, X: np.zeros((X.shape[0], 2)),
        bsecond=bsecond,
        sigmatilde=lambda t, X: np.eye(2),
        growth_constant=5.0,
    )
    # Jacobian of b'' in the diffusive variables keeps rank d1 = 1
    h = 1e-6
    for _ in range(100):
        x = rng.standard_normal(3)
        jac = np.zeros((1, 2))
        for i in range(2):
            e = np.zeros(3)
            e[i] = h
            jac[:, i] = (
                bsecond(0.0, (x + e)[None, :]) - bsecond(0.0, (x - e)[None, :])
            )[0] / (2 * h)
        assert np.linalg.svd(jac, compute_uv=False)[-1] > 0.5
    ens = euler_simulate(field, GroupPoint(0.0, [0.1, -0.2, 0.3]), mesh=0.05,
                         horizon=0.5, seed=7, n_paths=100)
    assert growth_audit(ens, field) <= field.growth_constant


def test_martingale_residual_constant_function():
    ens = exact_sample(KERN, GroupPoint(0.0, [0.0, 0.0]),
                       np.linspace(0.0, 1.0, 21), seed=13, n_paths=500)
    const = SpaceTimeFunction(fn=lambda t, x: np.full(np.shape(x)[:-1], 2.5))

    class ConstWithDerivs:
        value = staticmethod(lambda t, x: np.full(np.shape(x)[:-1], 2.5))
        dt = staticmethod(lambda t, x: np.zeros(np.shape(x)[:-1]))
        gradient = staticmethod(lambda t, x: np.zeros_like(np.asarray(x)))
        hessian = staticmethod(
            lambda t, x: np.zeros(np.shape(x)[:-1] + (np.shape(x)[-1],) * 2)
        )
        support_time = (-np.inf, np.inf)

    est, se = martingale_residual(ens, ConstWithDerivs(), linear_field(KERN), 0.0, 1.0)
    assert est == 0.0


def test_martingale_residual_true_and_tampered():
    ens = exact_sample(KERN, GroupPoint(0.0, [0.0, 0.0]),
                       np.linspace(0.0, 1.0, 51), seed=17, n_paths=20000)
    field = linear_field(KERN)
    est, se = martingale_residual(ens, BUMP, field, 0.0, 1.0)
    assert abs(est) <= 3.0 * se
    tampered = CoefficientField(
        a=field.a, b=lambda t, X: field.b(t, X) + np.array([1.0, 0.0]),
        d=2, d0=1, growth_constant=field.growth_constant,
        a_state_independent=True,
    )
    est2, se2 = martingale_residual(ens, BUMP, tampered, 0.0, 1.0)
    assert abs(est2) > 5.0 * se2
    with pytest.raises(HorizonExceeded):
        martingale_residual(ens, BUMP, field, 0.0, 2.0)


def test_green_functional_zero():
    ens = exact_sample(KERN, GroupPoint(0.0, [0.0, 0.0]),
                       np.linspace(0.0, 1.0, 11), seed=19, n_paths=100)
    zero = SpaceTimeFunction(fn=lambda t, x: np.zeros(np.shape(x)[:-1]))
    est, se = green_functional(ens, zero, 1.0)
    assert est == 0.0 and se == 0.0
    with pytest.raises(HorizonExceeded):
        green_functional(ens, zero, 2.0)


def test_localization_times():
    times = np.arange(0.0, 3.01, 0.25)
    const = Trajectory(times, np.tile([1.0, 2.0], (times.size, 1)))
    rho_one = RadiusFunction(fn=lambda t, r: 1.0)
    assert localization_times(const, rho_one, max_n=5) == [0.0, 1.0, 2.0, 3.0]

    short = Trajectory(np.arange(0.0, 0.51, 0.25), np.zeros((3, 2)))
    assert localization_times(short, rho_one, max_n=5) == [0.0]

    rho_half = RadiusFunction(fn=lambda t, r: 0.5)
    n_full = len(localization_times(const, rho_one, max_n=50))
    n_half = len(localization_times(const, rho_half, max_n=50))
    assert n_half >= n_full


def test_radius_function_validation():
    with pytest.raises(ValueError):
        RadiusFunction(fn=lambda t, r: -1.0)
    with pytest.raises(ValueError):
        RadiusFunction(fn=lambda t, r: 0.1 + 0.1 * t)
    rho = RadiusFunction(fn=lambda t, r: 5.0 / (1.0 + t + r))
    assert rho(0.0, 0.0) == 1.0  # capped


def test_modulus_of_continuity():
    times = np.linspace(0.0, 2.0, 21)
    const = Trajectory(times, np.zeros((21, 2)))
    assert modulus_of_continuity(const, 0.3, 2.0) == 0.0
    v = np.array([1.0, -2.0])
    linear = Trajectory(times, times[:, None] * v)
    assert modulus_of_continuity(linear, 0.5, 2.0) == pytest.approx(
        0.5 * np.linalg.norm(v)
    )
    m1 = modulus_of_continuity(linear, 0.3, 1.0)
    m2 = modulus_of_continuity(linear, 0.6, 1.0)
    m3 = modulus_of_continuity(linear, 0.6, 2.0)
    assert m1 <= m2 <= m3


def test_law_distance_split_halves():
    grid = np.linspace(0.0, 1.0, 11)
    rejected = 0
    for seed in range(20):
        ens = exact_sample(KERN, GroupPoint(0.0, [0.0, 0.0]), grid,
                           seed=seed, n_paths=400)
        half_a = Ensemble(ens.times, ens.states[:200])
        half_b = Ensemble(ens.times, ens.states[200:])
        report = law_distance(half_a, half_b, [0.5, 1.0],
                              n_permutations=200, seed=seed)
        rejected += report.rejected(0.01)
    assert rejected <= 1


def test_law_distance_power():
    grid = np.linspace(0.0, 1.0, 101)
    exact = exact_sample(KERN, GroupPoint(0.0, [0.0, 0.0]),
                         grid, seed=101, n_paths=800)
    field = linear_field(KERN)
    tampered = CoefficientField(
        a=field.a, b=lambda t, X: field.b(t, X) + np.array([0.5, 0.0]),
        d=2, d0=1, growth_constant=field.growth_constant,
        a_state_independent=True,
    )
    bad = euler_simulate(tampered, GroupPoint(0.0, [0.0, 0.0]), mesh=0.01,
                         horizon=1.0, seed=102, n_paths=800)
    report = law_distance(exact, bad, [1.0], n_permutations=200, seed=103)
    assert report.rejected(0.01)


def test_sum_drift_field():
    field = field_example_sum_drift(lambda t, x, y: np.eye(1), d0=1)
    X = np.array([[1.0, 2.0]])
    assert np.array_equal(field.b_at(0.0, X), np.array([[0.0, 3.0]]))
    assert field.structure["shape"] == "sum-drift"


def test_exact_sampler_marginal_ks():
    # a fixed linear functional of the exact marginal is the implied
    # 1-d Gaussian; 1% KS rejections happen for at most 1 of 20 seeds
    from scipy.stats import kstest

    v = np.array([0.7, -1.3])
    grid = np.array([0.0, 0.6, 1.0])
    start = GroupPoint(0.0, [0.4, -0.2])
    mean = v @ (SM.matrix_exp(1.0) @ start.x)
    sd = np.sqrt(v @ KERN.covariance(0.0, 1.0) @ v)
    rejections = 0
    for seed in range(20):
        ens = exact_sample(KERN, start, grid, seed=1000 + seed, n_paths=10000)
        proj = ens.states_at(1.0) @ v
        stat = kstest(proj, "norm", args=(mean, sd)).statistic
        critical = 1.628 / np.sqrt(len(proj))  # 1% one-sample KS level
        rejections += stat > critical
    assert rejections <= 1


def test_law_distance_empty_ensemble():
    from hypodiff.errors import EmptyEnsemble

    grid = np.linspace(0.0, 1.0, 3)
    ens = exact_sample(KERN, GroupPoint(0.0, [0.0, 0.0]), grid, seed=1, n_paths=4)
    empty = Ensemble(grid, np.empty((0, 3, 2)))
    with pytest.raises(EmptyEnsemble):
        law_distance(ens, empty, [1.0])
