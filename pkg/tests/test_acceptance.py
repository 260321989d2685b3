"""Acceptance suite: one test per release criterion.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS line per
criterion.  Tolerances are pinned here and match the module contracts.
"""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from hypodiff.bumps import SmoothBump
from hypodiff.cli import main as cli_main
from hypodiff.green import (
    KernelTuple,
    apply_truncated,
    green_apply,
    green_second_derivative,
    lp_ratio_profile,
)
from hypodiff.group import GroupPoint, kolmogorov_matrix
from hypodiff.kernel import CovarianceProfile, TransitionKernel
from hypodiff.quadrature import QuadratureSpec
from hypodiff.simulate import (
    CoefficientField,
    euler_simulate,
    exact_sample,
    green_functional,
    law_distance,
    linear_field,
    martingale_residual,
)
from hypodiff.transform import (
    ScalarField,
    bsecond_catalog,
    make_transform,
    pad_dimensions,
    pad_field,
    smooth_cutoff,
    zy_map_states,
    zy_reduce,
)
from hypodiff import harness

SM = kolmogorov_matrix()
UNIT = TransitionKernel(SM, CovarianceProfile.constant(np.eye(1)))
PIECEWISE = CovarianceProfile(
    breakpoints=(0.4, 1.1),
    values=(np.array([[1.3]]), np.array([[0.8]]), np.array([[1.0]])),
    mu=2.0,
)

LP_BUMPS = [
    SmoothBump(center=[0.3, 0.1], widths=[0.6, 0.7], t_center=0.9, t_width=0.25),
    SmoothBump(center=[-0.4, 0.5], widths=[0.8, 0.5], t_center=0.6, t_width=0.3),
    SmoothBump(center=[0.0, 0.0], widths=[1.0, 1.0], t_center=1.0, t_width=0.35),
    SmoothBump(center=[0.5, -0.3], widths=[0.5, 0.9], t_center=0.7, t_width=0.2),
    SmoothBump(center=[-0.2, -0.6], widths=[0.7, 0.6], t_center=1.2, t_width=0.3),
]

QUAD = QuadratureSpec(radii=(2.0, 4.0, 4.0), nodes=24, scheme="hermite")
NORM_QUAD = QuadratureSpec(radii=(1.5, 3.0, 3.0), nodes=10, scheme="legendre")


@pytest.fixture(scope="module")
def exact_big():
    """10^5 exact paths on [0, 2], shared by the sampler and Green criteria."""
    grid = np.arange(0.0, 2.0 + 1e-12, 0.02)
    return exact_sample(UNIT, GroupPoint(0.0, [1.0, -0.5]), grid,
                        seed=20240809, n_paths=100000)


def _report(k, text):
    print(f"ACCEPTANCE {k}: PASS - {text}")


def test_criterion_1_group_suite(tmp_path):
    cfg = harness.load_config(overrides={"checks": {"cases": 1000}, "seed": 1})
    results, passed = harness.run_group_check(cfg, tmp_path, make_figures=False)
    assert passed, results
    assert results["cases"] == 1000
    for name, check in results["checks"].items():
        assert check["pass"], (name, check)
        assert check["tolerance"] <= 1e-10 or name == "norm_comparison"
    _report(1, "group axioms, dilations, and gauge-norm laws at 1000 cases")


def test_criterion_2_kernel_closed_forms():
    for t in (0.25, 1.0, 4.0):
        expected = np.array([[t, t ** 2 / 2], [t ** 2 / 2, t ** 3 / 3]])
        assert np.max(np.abs(UNIT.covariance(0.0, t) - expected)) <= 1e-12
    dens = UNIT.density(GroupPoint(0.0, [0.0, 0.0]), GroupPoint(1.0, [0.0, 0.0]))
    assert abs(dens - np.sqrt(3.0) / np.pi) <= 1e-12
    from hypodiff.kernel import reference_covariance

    dl = SM.spatial_dilation_matrix(2.0)
    chat = reference_covariance(SM, 1.0)
    assert np.max(np.abs(reference_covariance(SM, 4.0) - dl @ chat @ dl)) <= 1e-12
    _report(2, "closed-form covariance, density value, and dilation identity")


def test_criterion_3_analytic_derivatives():
    kern = TransitionKernel(SM, PIECEWISE)
    p = GroupPoint(0.1, [0.3, -0.2])
    q = GroupPoint(1.0, [0.5, 0.4])
    b = kern.derivative_bundle(p, q)
    dens = kern.density(p, q)
    h = 1e-5
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (kern.density(GroupPoint(p.s, p.x + e), q)
              - kern.density(GroupPoint(p.s, p.x - e), q)) / (2 * h)
        assert abs(b.f1[i] * dens - fd) <= 1e-5 * abs(fd)
    hess = (np.outer(b.f1, b.f1) - b.g11) * dens
    for i in range(2):
        for j in range(2):
            fd = _richardson_hessian(kern, p, q, i, j)
            assert abs(hess[i, j] - fd) <= 1e-5 * abs(fd)
    rng = np.random.default_rng(3)
    for _ in range(20):
        pp = GroupPoint(rng.uniform(-0.5, 0.5), rng.standard_normal(2))
        qq = GroupPoint(pp.s + rng.uniform(0.5, 2.0), rng.standard_normal(2))
        assert abs(UNIT.backward_residual(pp, qq)) <= 1e-9 * UNIT.density(pp, qq)
    over_x, over_y = UNIT.cancellation_check(0, 0, 0.0, 1.0, box_radius=12.0,
                                             quad_order=64)
    assert abs(over_x) <= 1e-6 and abs(over_y) <= 1e-6
    _report(3, "gradient/Hessian FD checks, backward residual, cancellation")


def _richardson_hessian(kern, p, q, i, j, h=2e-4):
    def stencil(step):
        def at(dx):
            return kern.density(GroupPoint(p.s, p.x + dx), q)

        ei, ej = np.zeros(2), np.zeros(2)
        ei[i] = step
        ej[j] = step
        if i == j:
            return (at(ei) - 2 * at(np.zeros(2)) + at(-ei)) / step ** 2
        return (at(ei + ej) - at(ei - ej) - at(-ei + ej) + at(-ei - ej)) / (
            4 * step ** 2
        )

    return (4 * stencil(h / 2) - stencil(h)) / 3.0


def test_criterion_4_normalization_and_semigroup():
    start = GroupPoint(0.0, [0.2, -0.1])
    for gap in (0.25, 1.0, 4.0):
        assert abs(UNIT.normalization_residual(start, gap)) <= 1e-6
    rng = np.random.default_rng(4)
    for gap in (0.25, 1.0, 4.0):
        p = GroupPoint(0.0, rng.standard_normal(2))
        # terminal states drawn from the reachable bulk of the transition law
        factor = np.linalg.cholesky(UNIT.covariance(0.0, gap))
        y = SM.matrix_exp(gap) @ p.x + 2.0 * factor @ rng.standard_normal(2)
        q = GroupPoint(gap, y)
        conv, direct = UNIT.chapman_kolmogorov(p, q, gap / 2.0)
        assert abs(conv - direct) <= 1e-5 * direct
    _report(4, "normalization and semigroup identity at gaps 0.25, 1, 4")


def test_criterion_5_scaling_laws():
    kern = TransitionKernel(SM, PIECEWISE)
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        lam = rng.uniform(0.5, 2.0)
        z = GroupPoint(rng.uniform(-1.0, 1.0), rng.standard_normal(2))
        p = GroupPoint(rng.uniform(-0.3, 0.3), rng.standard_normal(2))
        q = GroupPoint(p.s + rng.uniform(0.3, 1.5), rng.standard_normal(2))
        shifted = TransitionKernel(SM, PIECEWISE.shifted(z.s))
        dlog = kern.density(SM.compose(z, p), SM.compose(z, q), log_scale=True) \
            - shifted.density(p, q, log_scale=True)
        worst = max(worst, abs(np.expm1(dlog)))
        scaled = TransitionKernel(SM, PIECEWISE.time_scaled(lam ** 2))
        dlog = kern.density(SM.dilate(lam, p), SM.dilate(lam, q), log_scale=True) \
            - (2 - SM.dbar) * np.log(lam) - scaled.density(p, q, log_scale=True)
        worst = max(worst, abs(np.expm1(dlog)))
        cl = kern.covariance(lam ** 2 * p.s, lam ** 2 * q.s)
        dl = SM.spatial_dilation_matrix(lam)
        cr = dl @ scaled.covariance(p.s, q.s) @ dl
        worst = max(worst, float(np.max(np.abs(cl - cr)) / np.max(np.abs(cr))))
    assert worst <= 1e-10
    _report(5, f"translation/dilation/covariance scaling, worst rel {worst:.2e}")


def test_criterion_6_lp_shadow():
    alpha = KernelTuple(CovarianceProfile.constant(np.eye(1)), 0, 0, 0)
    assert SM.dbar / 2 == 3 and 4.0 > SM.dbar / 2
    max_ratio = 0.0
    for bump in LP_BUMPS:
        prof = lp_ratio_profile(SM, alpha, 8, bump, 4.0, QUAD, NORM_QUAD)
        ratios = prof["ratios"]
        assert ratios[8] - ratios[6] <= 0.05 * ratios[6], ratios
        max_ratio = max(max_ratio, ratios[8])
    # the desk-scale shadow of the uniform operator bound: one constant
    # covers every bump in the family
    assert max_ratio <= 5.0
    bump = LP_BUMPS[0]
    point = GroupPoint(0.0, [0.1, -0.2])
    T = bump.support_time[1]
    quad28 = QuadratureSpec(radii=QUAD.radii, nodes=28, scheme="hermite")
    kj = apply_truncated(SM, alpha, 8, bump, point, quad28)
    direct = green_second_derivative(UNIT, bump, point, T, 0, 0, quad28)
    h = 1e-3
    fd = (
        green_apply(UNIT, bump, GroupPoint(0.0, [0.1 + h, -0.2]), T, quad28)
        - 2 * green_apply(UNIT, bump, point, T, quad28)
        + green_apply(UNIT, bump, GroupPoint(0.0, [0.1 - h, -0.2]), T, quad28)
    ) / h ** 2
    assert abs(direct - fd) <= 1e-4 * abs(fd)
    assert abs(kj - direct) <= 5e-4 * abs(direct)
    assert abs(kj - fd) <= 5e-4 * abs(fd)
    _report(6, f"L^p ratios plateau at j=8 (max ratio {max_ratio:.4f}); "
               "operator, truncation, and FD oracles agree")


def test_criterion_7_samplers(exact_big):
    ens = exact_big
    final = ens.states_at(1.0)
    mean_expected = SM.matrix_exp(1.0) @ np.array([1.0, -0.5])
    se = final.std(axis=0, ddof=1) / np.sqrt(ens.n_paths)
    assert np.all(np.abs(final.mean(axis=0) - mean_expected) <= 4.0 * se)
    cov_expected = UNIT.covariance(0.0, 1.0)
    cov_rel = np.max(np.abs(np.cov(final.T) - cov_expected) / np.abs(cov_expected))
    assert cov_rel <= 0.02

    field = linear_field(UNIT)
    euler = euler_simulate(field, GroupPoint(0.0, [1.0, -0.5]), mesh=1e-3,
                           horizon=1.0, seed=7, n_paths=1500)
    from hypodiff.simulate import Ensemble

    sub = Ensemble(ens.times, ens.states[:1500])
    report = law_distance(sub, euler, [0.5, 1.0], n_permutations=200, seed=11)
    assert not report.rejected(0.01), report.to_json()

    tampered_field = CoefficientField(
        a=field.a, b=lambda t, X: field.b(t, X) + np.array([0.5, 0.0]),
        d=2, d0=1, growth_constant=field.growth_constant + 1.0,
        a_state_independent=True,
    )
    tampered = euler_simulate(tampered_field, GroupPoint(0.0, [1.0, -0.5]),
                              mesh=1e-3, horizon=1.0, seed=8, n_paths=1500)
    report_bad = law_distance(sub, tampered, [0.5, 1.0], n_permutations=200,
                              seed=12)
    assert report_bad.rejected(0.01)

    bump = SmoothBump(center=[1.6, 0.0], widths=[1.0, 1.5],
                      t_center=0.5, t_width=0.5)
    est, se_mg = martingale_residual(ens, bump, field, 0.0, 1.0)
    assert abs(est) <= 3.0 * se_mg
    est2, se2 = martingale_residual(ens, bump, tampered_field, 0.0, 1.0)
    assert abs(est2) > 5.0 * se2
    _report(7, "exact-sampler moments, Euler law agreement and power, "
               "martingale residuals")


def test_criterion_8_green_functional(exact_big):
    ens = exact_big
    bump = SmoothBump(center=[1.2, 0.2], widths=[0.9, 0.9],
                      t_center=0.6, t_width=0.3)
    from hypodiff.bumps import lp_norm

    rows = []
    start = GroupPoint(0.0, np.array([1.0, -0.5]))
    for T in (0.5, 1.0, 2.0):
        mc, se = green_functional(ens, bump, T)
        quad_val = green_apply(UNIT, bump, start, T, QUAD)
        assert abs(mc - quad_val) <= 3.0 * se, (T, mc, quad_val, se)
        norm = lp_norm(bump, 4.0, (0.0, T), QUAD.spatial_radii)
        scaled = T ** (1.0 - SM.dbar / 8.0) * norm
        rows.append((T, mc, scaled, mc / scaled))
    fitted = max(r[3] for r in rows)
    assert all(r[3] <= fitted for r in rows)
    assert fitted / min(r[3] for r in rows) <= 10.0
    _report(8, f"MC Green's functionals match quadrature; Krylov table fitted "
               f"constant {fitted:.3f}")


def test_criterion_9_transform_suite():
    # round-trip inversion
    bs, a0, a1, a2 = bsecond_catalog("quadratic", 1, 1, amp=0.02)
    probes = np.random.default_rng(0).uniform(-3, 3, size=(200, 2))
    tr = make_transform(bs, a0, a1, a2, probe_points=probes)
    rng = np.random.default_rng(9)
    for _ in range(100):
        target = GroupPoint(rng.uniform(0, 2), rng.uniform(-2, 2, 2))
        back = tr.invert(target)
        assert np.max(np.abs(tr.forward(back).x - target.x)) <= 1e-10

    # sum-drift reduction: mapped law vs directly simulated reduced law
    from hypodiff.simulate import field_example_sum_drift, field_example_two_block

    field = field_example_sum_drift(
        lambda t, x, y: (1.0 + 0.3 * np.tanh(np.sum(x, axis=1)))[:, None, None],
        d0=1,
    )
    reduced = zy_reduce(field)
    start = GroupPoint(0.0, np.array([0.2, -0.1]))
    direct = euler_simulate(field, start, mesh=0.005, horizon=1.0, seed=21,
                            n_paths=1200)
    mapped = zy_map_states(direct, d0=1)
    start_zy = GroupPoint(0.0, np.array([0.1, -0.1]))
    other = euler_simulate(reduced, start_zy, mesh=0.005, horizon=1.0, seed=22,
                           n_paths=1200)
    rep = law_distance(mapped, other, [0.5, 1.0], n_permutations=200, seed=23)
    assert not rep.rejected(0.01), rep.to_json()

    # pushforward consistency: forward-mapped simulation vs pushforward field
    two_block = field_example_two_block(
        1, 1,
        bprime=lambda t, X: np.zeros((X.shape[0], 1)),
        bsecond=lambda t, X: bs.value(t, X),
        sigmatilde=lambda t, X: np.eye(1),
    )
    start2 = GroupPoint(0.0, np.array([0.1, -0.2]))
    orig = euler_simulate(two_block, start2, mesh=0.005, horizon=1.0, seed=24,
                          n_paths=1200)
    from hypodiff.simulate import Ensemble

    mapped_states = np.empty_like(orig.states)
    for k, t in enumerate(orig.times):
        mapped_states[:, k, :] = tr.forward_batch(t, orig.states[:, k, :])
    push = tr.pushforward(a=lambda t, X: np.eye(1))
    other2 = euler_simulate(push, tr.forward(start2), mesh=0.005, horizon=1.0,
                            seed=25, n_paths=1200)
    rep2 = law_distance(Ensemble(orig.times, mapped_states), other2, [0.5, 1.0],
                        n_permutations=200, seed=26)
    assert not rep2.rejected(0.01), rep2.to_json()

    # padding projection is exact on simulated arrays
    bs_thin, _, _ = _thin_bsecond()
    thin = make_transform(bs_thin, np.zeros((1, 1)), np.array([[1.0, 0.2]]),
                          np.array([[0.1]]))
    ext = np.array([[0.0, 1.0]])
    assert pad_dimensions(thin, ext).d1 == 2
    thin_field = field_example_two_block(
        2, 1,
        bprime=lambda t, X: np.zeros((X.shape[0], 2)),
        bsecond=lambda t, X: bs_thin.value(t, X),
        sigmatilde=lambda t, X: np.eye(2),
    )
    padded_field = pad_field(thin_field, thin, ext)
    base = euler_simulate(thin_field, GroupPoint(0.0, [0.1, -0.2, 0.3]),
                          mesh=0.02, horizon=0.5, seed=27, n_paths=200)
    lifted = euler_simulate(padded_field, GroupPoint(0.0, [0.1, -0.2, 0.3, 0.0]),
                            mesh=0.02, horizon=0.5, seed=27, n_paths=200)
    assert np.array_equal(lifted.states[:, :, :3], base.states)

    # smooth cutoff constraints on a probe grid
    fn = ScalarField(
        value=lambda x: float(np.sin(x[0]) * np.cos(0.5 * x[1])),
        gradient=lambda x: np.array([
            np.cos(x[0]) * np.cos(0.5 * x[1]),
            -0.5 * np.sin(x[0]) * np.sin(0.5 * x[1]),
        ]),
    )
    center = np.array([0.2, 0.4])
    eps = 0.05
    g = smooth_cutoff(fn, center, r=1.0, epsilon=eps)
    g_c = fn.gradient(center)
    grid = np.stack(np.meshgrid(np.linspace(-6, 6, 25), np.linspace(-6, 6, 25),
                                indexing="ij"), axis=-1).reshape(-1, 2)
    for x in grid:
        assert np.linalg.norm(g.gradient(x) - g_c) <= eps * (1 + 1e-6)
    for x in grid:
        if np.linalg.norm(x - center) <= g.radius:
            assert g.value(x) == pytest.approx(fn.value(x), abs=1e-14)
    _report(9, "inversion round trip, reduction and pushforward laws, exact "
               "padding projection, cutoff constraints")


def _thin_bsecond():
    a1 = np.array([[1.0, 0.4]])

    def value(t, X):
        X = np.atleast_2d(X)
        return X[:, :2] @ a1.T + 0.1 * np.tanh(X[:, 2:3])

    from hypodiff.transform import BsecondMap

    return BsecondMap.from_value(value, 2, 1), a1, None


def test_criterion_10_reproducibility(tmp_path):
    runner = CliRunner()
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        result = runner.invoke(cli_main, [
            "sample", "--out", str(out), "--seed", "31415",
            "--paths", "2000", "--grid", "0:0.05:1", "--no-figures",
        ], catch_exceptions=False)
        assert result.exit_code == 0, result.output
        outputs.append(out / "sample")
    assert (outputs[0] / "ensemble.bin").read_bytes() == \
        (outputs[1] / "ensemble.bin").read_bytes()
    assert (outputs[0] / "ensemble_summary.csv").read_bytes() == \
        (outputs[1] / "ensemble_summary.csv").read_bytes()
    reports = []
    for out in outputs:
        lines = (out / "report.json").read_text().splitlines()
        reports.append("\n".join(ln for ln in lines if "timestamp" not in ln))
        payload = json.loads((out / "report.json").read_text())
        assert "timestamp" in payload["meta"]
    assert reports[0] == reports[1]
    _report(10, "double run produces byte-identical CSV/JSON and binary "
                "(timestamp key excluded)")
