"""Green's operators and dyadically truncated singular integrals.

The singular kernel attached to a tuple (profile, k, l, m) is the second
spatial derivative of the transition density in the indices (k, l) of
the diffusive block, evaluated forward (m = 0) or with swapped slots
(m = 1).  Dyadic shells |t - s| in (4^i, 4^{i+1}] truncate it; summing
shell operators over i in [-j, j] approximates the second derivative of
the Green's operator.

Spatial inner integrals here are weighted by the exact Gaussian factor
of the kernel (Hermite rules): the shells near the singularity have
Gaussian width sqrt(gap), which no fixed box rule can resolve at sane
node counts.  What remains under the rule is polynomial-times-f, which
is what Hermite quadrature integrates well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_triangular

from .bumps import as_test_function, lp_norm
from .errors import (
    ExponentTooSmall,
    GridCoverage,
    OutOfWindow,
    ZeroDenominator,
)
from .group import GroupPoint, StructuralMatrix
from .kernel import CovarianceProfile, TransitionKernel
from .quadrature import QuadratureSpec, gauss_hermite, gl_nodes, tensor_grid


@dataclass(frozen=True)
class KernelTuple:
    """(covariance profile, row index, column index, slot flag)."""

    profile: CovarianceProfile
    k: int
    l: int
    m: int = 0

    def __post_init__(self):
        d0 = self.profile.d0
        if not (0 <= self.k < d0 and 0 <= self.l < d0):
            raise ValueError(
                f"derivative indices must lie in the diffusive block "
                f"[0, {d0}), got ({self.k}, {self.l})"
            )
        if self.m not in (0, 1):
            raise ValueError(f"slot flag must be 0 or 1, got {self.m}")

    def translated(self, u: float) -> "KernelTuple":
        """The tuple whose kernel absorbs a left translation by time u."""
        return KernelTuple(self.profile.shifted(u), self.k, self.l, self.m)

    def dilated(self, lam: float) -> "KernelTuple":
        """The tuple whose kernel absorbs a dilation by lam."""
        return KernelTuple(self.profile.time_scaled(lam ** 2), self.k, self.l, self.m)


def singular_kernel(sm: StructuralMatrix, alpha: KernelTuple,
                    p: GroupPoint, q: GroupPoint) -> float:
    """h_alpha(p; q); zero when the relevant time gap has the wrong sign."""
    kern = TransitionKernel(sm, alpha.profile)
    return _singular_kernel(kern, alpha, p, q)


def _singular_kernel(kern: TransitionKernel, alpha: KernelTuple,
                     p: GroupPoint, q: GroupPoint) -> float:
    if alpha.m == 0:
        if q.s <= p.s:
            return 0.0
        return float(kern.dxx_batch(alpha.k, alpha.l, p.s, p.x, q.s, q.x[None, :])[0])
    if p.s <= q.s:
        return 0.0
    return float(kern.dxx_batch_start(alpha.k, alpha.l, q.s, q.x[None, :], p.s, p.x)[0])


def shell_index(gap: float) -> int:
    """The unique i with 4^i < gap <= 4^{i+1}, for gap > 0."""
    if gap <= 0:
        raise ValueError(f"need a positive gap, got {gap}")
    i = math.floor(math.log(gap, 4.0))
    # float log can land on either side at the dyadic boundaries
    while gap <= 4.0 ** i:
        i -= 1
    while gap > 4.0 ** (i + 1):
        i += 1
    return i


def truncated_kernel(sm: StructuralMatrix, alpha: KernelTuple, i: int,
                     p: GroupPoint, q: GroupPoint) -> float:
    """h_alpha masked to the dyadic shell |t - s| / 4^i in (1, 4]."""
    gap = abs(q.s - p.s)
    if gap <= 4.0 ** i or gap > 4.0 ** (i + 1):
        return 0.0
    return singular_kernel(sm, alpha, p, q)


@lru_cache(maxsize=32)
def _gh_grid(d: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = gauss_hermite(n)
    mesh = np.meshgrid(*([x] * d), indexing="ij")
    xi = np.stack([m.ravel() for m in mesh], axis=-1)
    wts = np.ones(xi.shape[0])
    for i in range(d):
        shape = [1] * d
        shape[i] = -1
        wts = wts * np.broadcast_to(w.reshape(shape), [n] * d).ravel()
    xi.flags.writeable = False
    wts.flags.writeable = False
    return xi, wts


def _check_coverage(f, quad: QuadratureSpec) -> None:
    if quad.scheme != "legendre":
        return
    box = getattr(f, "support_box", None)
    if box is None:
        return
    lo, hi = box
    radii = np.asarray(quad.spatial_radii)
    if np.any(lo < -radii) or np.any(hi > radii):
        raise GridCoverage(
            f"test function support [{lo}, {hi}] is not covered by the "
            f"quadrature box of radii {radii}"
        )


def shell_values(sm: StructuralMatrix, alpha: KernelTuple, f, s: float,
                 X: np.ndarray, jmax: int, quad: QuadratureSpec) -> np.ndarray:
    """H^i_alpha f at the points (s, X_a) for every shell i in [-jmax, jmax].

    Returns an array of shape (len(X), 2 jmax + 1); column c holds shell
    i = c - jmax.  Summing columns gives K^j_alpha f for any j <= jmax.
    """
    kern = TransitionKernel(sm, alpha.profile)
    f = as_test_function(f)
    _check_coverage(f, quad)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = sm.d
    xi, gh_w = _gh_grid(d, quad.nodes)
    t_lo, t_hi = getattr(f, "support_time", (-np.inf, np.inf))
    out = np.zeros((X.shape[0], 2 * jmax + 1))
    for col, i in enumerate(range(-jmax, jmax + 1)):
        lo_gap, hi_gap = 4.0 ** i, 4.0 ** (i + 1)
        if alpha.m == 0:
            a, b = s + lo_gap, s + hi_gap
        else:
            a, b = s - hi_gap, s - lo_gap
        a, b = max(a, t_lo), min(b, t_hi)
        if b <= a:
            continue
        tn, tw = gl_nodes(a, b, quad.nodes)
        acc = np.zeros(X.shape[0])
        for t, w in zip(tn, tw):
            if alpha.m == 0:
                F = kern._factors(s, t)
                means = X @ F.expm.T
                spread = F.chol
            else:
                F = kern._factors(t, s)
                einv = sm.matrix_exp(t - s)  # inverse of F.expm, exactly
                means = X @ einv.T
                spread = einv @ F.chol
            A = solve_triangular(F.chol, F.expm, lower=True).T  # E^T L^{-T}
            V = xi @ A.T
            kvals = gh_w * (V[:, alpha.k] * V[:, alpha.l] - F.g11[alpha.k, alpha.l])
            ys = means[:, None, :] + xi @ spread.T
            fv = f.value(t, ys.reshape(-1, d)).reshape(X.shape[0], -1)
            acc += w * (fv @ kvals)
        out[:, col] = acc
    return out


def apply_truncated(sm: StructuralMatrix, alpha: KernelTuple, j: int, f,
                    point: GroupPoint, quad: QuadratureSpec) -> float:
    """K^j_alpha f(point) = sum of the shell operators for |i| <= j."""
    vals = shell_values(sm, alpha, f, point.s, point.x[None, :], j, quad)
    return float(np.sum(vals[0]))


# --- Green's operator and derivatives ---

def _inner(kern: TransitionKernel, f, s: float, x: np.ndarray, t: float,
           quad: QuadratureSpec, kind: tuple) -> float:
    """Spatial integral of p-weighted data at one time node."""
    F = kern._factors(s, t)
    mean = F.expm @ x
    if quad.scheme == "hermite":
        xi, w = _gh_grid(kern.sm.d, quad.nodes)
        ys = mean + xi @ F.chol.T
        if kind[0] == "value":
            kernel_part = w
        elif kind[0] == "grad":
            A = solve_triangular(F.chol, F.expm, lower=True).T
            kernel_part = w * (xi @ A.T)[:, kind[1]]
        else:
            A = solve_triangular(F.chol, F.expm, lower=True).T
            V = xi @ A.T
            kernel_part = w * (V[:, kind[1]] * V[:, kind[2]] - F.g11[kind[1], kind[2]])
        return float(f.value(t, ys) @ kernel_part)
    # box rule: center on the kernel mean, never wider than the declared
    # radii, never wider than ten kernel sigmas (the spike at small gaps
    # would otherwise fall between fixed nodes)
    sigmas = np.sqrt(np.diag(F.cov))
    pts, w = tensor_grid(
        [(m - min(r, 10.0 * sg), m + min(r, 10.0 * sg))
         for m, r, sg in zip(mean, quad.spatial_radii, sigmas)],
        quad.nodes,
    )
    if kind[0] == "value":
        vals = kern.density_batch(s, x, t, pts)
    elif kind[0] == "grad":
        vals = kern.gradient_batch(s, x, t, pts)[:, kind[1]]
    else:
        vals = kern.dxx_batch(kind[1], kind[2], s, x, t, pts)
    return float((vals * f.value(t, pts)) @ w)


def _time_segments(kern: TransitionKernel, f, lo: float, hi: float):
    t0, t1 = getattr(f, "support_time", (-np.inf, np.inf))
    lo, hi = max(lo, t0), min(hi, t1)
    if hi <= lo:
        return []
    cuts = [lo] + [b for b in kern.profile.breakpoints if lo < b < hi] + [hi]
    return list(zip(cuts[:-1], cuts[1:]))


def green_apply(kern: TransitionKernel, f, point: GroupPoint, T: float,
                quad: QuadratureSpec) -> float:
    """G^T f(point): the transition-kernel integral of f over (s, T]."""
    if point.s > T:
        raise OutOfWindow(f"evaluation time {point.s} is past the window end {T}")
    f = as_test_function(f)
    total = 0.0
    for a, b in _time_segments(kern, f, point.s, T):
        tn, tw = gl_nodes(a, b, quad.nodes)
        total += float(np.sum([
            w * _inner(kern, f, point.s, point.x, t, quad, ("value",))
            for t, w in zip(tn, tw)
        ]))
    return total


def green_first_derivative(kern: TransitionKernel, f, point: GroupPoint, T: float,
                           i: int, quad: QuadratureSpec, eps: float = 4.0 ** -8
                           ) -> float:
    """d/dx_i of G^T f by integrating the kernel gradient, eps-truncated."""
    if point.s > T:
        raise OutOfWindow(f"evaluation time {point.s} is past the window end {T}")
    f = as_test_function(f)
    total = 0.0
    for a, b in _time_segments(kern, f, point.s + eps, T):
        tn, tw = gl_nodes(a, b, quad.nodes)
        total += float(np.sum([
            w * _inner(kern, f, point.s, point.x, t, quad, ("grad", i))
            for t, w in zip(tn, tw)
        ]))
    return total


def green_second_derivative(kern: TransitionKernel, f, point: GroupPoint, T: float,
                            i: int, j: int, quad: QuadratureSpec,
                            eps: float = 4.0 ** -8) -> float:
    """d^2/dx_i dx_j of G^T f via the truncated kernel representation.

    The indices must lie in the diffusive block; the time integral starts
    at s + eps with eps tied to the dyadic truncation level.
    """
    if point.s > T:
        raise OutOfWindow(f"evaluation time {point.s} is past the window end {T}")
    d0 = kern.sm.d0
    if not (0 <= i < d0 and 0 <= j < d0):
        raise ValueError(f"second-derivative indices must lie in [0, {d0})")
    f = as_test_function(f)
    total = 0.0
    for a, b in _time_segments(kern, f, point.s + eps, T):
        tn, tw = gl_nodes(a, b, quad.nodes)
        total += float(np.sum([
            w * _inner(kern, f, point.s, point.x, t, quad, ("dxx", i, j))
            for t, w in zip(tn, tw)
        ]))
    return total


# --- empirical norm estimates ---

def lp_ratio_profile(sm: StructuralMatrix, alpha: KernelTuple, jmax: int, f,
                     p_exponent: float, quad: QuadratureSpec,
                     norm_quad: QuadratureSpec | None = None) -> dict:
    """||K^j f||_p / ||f||_p over the norm box for every j <= jmax.

    Returns {"ratios": {j: ratio}, "numerators": ..., "denominator": ...,
    "boundary_max": ...}; the boundary value is the largest |K^j f| seen
    on the outer ring of the spatial grid, exposing truncation of the
    reference box.
    """
    if p_exponent <= 1:
        raise ExponentTooSmall(f"need p > 1, got {p_exponent}")
    norm_quad = norm_quad or quad
    f = as_test_function(f)
    denom = lp_norm(f, p_exponent, (-norm_quad.time_radius, norm_quad.time_radius),
                    norm_quad.spatial_radii, nodes=max(32, norm_quad.nodes))
    if denom == 0.0:
        raise ZeroDenominator("the test function vanishes on the norm box")
    tn, tw = gl_nodes(-norm_quad.time_radius, norm_quad.time_radius, norm_quad.nodes)
    pts, wts = tensor_grid([(-r, r) for r in norm_quad.spatial_radii], norm_quad.nodes)
    outer_ring = np.max(np.abs(pts) / np.asarray(norm_quad.spatial_radii), axis=1) >= 0.9
    shells_by_s = [
        (w_s, shell_values(sm, alpha, f, s, pts, jmax, quad)) for s, w_s in zip(tn, tw)
    ]
    numerators = {}
    boundary = 0.0
    for j in range(jmax + 1):
        lo, hi = jmax - j, jmax + j + 1
        acc = 0.0
        boundary = 0.0
        for w_s, vals in shells_by_s:
            kj = np.sum(vals[:, lo:hi], axis=1)
            acc += w_s * float(np.abs(kj) ** p_exponent @ wts)
            boundary = max(boundary, float(np.max(np.abs(kj[outer_ring]), initial=0.0)))
        numerators[j] = acc ** (1.0 / p_exponent)
    return {
        "ratios": {j: numerators[j] / denom for j in numerators},
        "numerators": numerators,
        "denominator": denom,
        "boundary_max": boundary,
    }


def lp_ratio(sm: StructuralMatrix, alpha: KernelTuple, j: int, f,
             p_exponent: float, quad: QuadratureSpec,
             norm_quad: QuadratureSpec | None = None) -> float:
    """||K^j_alpha f||_{L^p} / ||f||_{L^p} over the reference box."""
    prof = lp_ratio_profile(sm, alpha, j, f, p_exponent, quad, norm_quad)
    return prof["ratios"][j]


def sup_bound_check(kern: TransitionKernel, f, T_list, p_exponent: float,
                    quad: QuadratureSpec, grid_nodes: int = 7) -> list[dict]:
    """Rows (T, sup estimate, T^{1 - dbar/2p} ||f||_p, ratio) per window.

    The sup is taken over a grid of (s, x) in [0, T] x the spatial box;
    the contract downstream is that the ratio column stays bounded by a
    single constant across the T list.
    """
    dbar = kern.sm.dbar
    if p_exponent <= dbar / 2.0:
        raise ExponentTooSmall(
            f"need p > dbar/2 = {dbar / 2}, got {p_exponent}"
        )
    f = as_test_function(f)
    rows = []
    for T in T_list:
        sup = 0.0
        s_grid = np.linspace(0.0, T, grid_nodes, endpoint=False)
        x_pts, _ = tensor_grid([(-r, r) for r in quad.spatial_radii], grid_nodes)
        for s in s_grid:
            for x in x_pts:
                sup = max(sup, abs(green_apply(kern, f, GroupPoint(s, x), T, quad)))
        norm = lp_norm(f, p_exponent, (0.0, T), quad.spatial_radii)
        scaled = T ** (1.0 - dbar / (2.0 * p_exponent)) * norm
        rows.append({
            "T": float(T),
            "sup": sup,
            "scaled_norm": scaled,
            "ratio": sup / scaled if scaled > 0 else np.inf,
        })
    return rows
