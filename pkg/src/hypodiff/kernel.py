"""Transition kernel of the linear-drift degenerate SDE.

For a piecewise-constant covariance profile c and a structural matrix B
the transition density is the explicit Gaussian

    p(s,x;t,y) = (2 pi)^{-d/2} det(C(s,t))^{-1/2}
                 exp{-1/2 <C(s,t)^{-1} r, r>},   r = y - e^{(t-s)B} x,

with C(s,t) the integrated, exponentially-twisted covariance.  Because B
is nilpotent the integrand entries are polynomials in (t-u), so C is
computed by exact per-interval antidifferentiation, never by quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import (
    BreakpointEvaluation,
    DegenerateInterval,
    DimensionMismatch,
    IllConditionedCovariance,
    NonPositiveTau,
)
from .group import GroupPoint, StructuralMatrix
from .quadrature import (
    gauss_hermite_points,
    gaussian_axis_rule,
    tensor_from_axes,
    tensor_grid,
)

SYMMETRY_TOL = 1e-14
BREAKPOINT_TOL = 1e-12
PIVOT_RATIO_LIMIT = 1e14


@dataclass(frozen=True)
class CovarianceProfile:
    """Piecewise-constant map t -> c(t) into symmetric d0 x d0 matrices.

    ``values[i]`` applies on [breakpoints[i-1], breakpoints[i]); the first
    and last values extend to -inf and +inf.  All eigenvalues must lie in
    [1/mu, mu].
    """

    breakpoints: tuple[float, ...]
    values: tuple[np.ndarray, ...]
    mu: float

    def __post_init__(self):
        bps = tuple(float(b) for b in self.breakpoints)
        vals = tuple(_frozen(np.atleast_2d(np.asarray(v, dtype=float))) for v in self.values)
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "mu", float(self.mu))
        if self.mu < 1.0:
            raise ValueError(f"ellipticity bound mu must be >= 1, got {self.mu}")
        if len(vals) != len(bps) + 1:
            raise ValueError(
                f"need one value per interval: {len(bps)} breakpoints require "
                f"{len(bps) + 1} values, got {len(vals)}"
            )
        if any(bps[i] >= bps[i + 1] for i in range(len(bps) - 1)):
            raise ValueError(f"breakpoints must be strictly increasing, got {bps}")
        d0 = vals[0].shape[0]
        for v in vals:
            if v.shape != (d0, d0):
                raise DimensionMismatch(f"profile values must all be {d0}x{d0}")
            if np.max(np.abs(v - v.T)) > SYMMETRY_TOL:
                raise ValueError("profile value is not symmetric")
            eig = np.linalg.eigvalsh(v)
            if eig[0] < 1.0 / self.mu - 1e-10 or eig[-1] > self.mu + 1e-10:
                raise ValueError(
                    f"profile eigenvalues {eig} leave [1/mu, mu] = "
                    f"[{1.0 / self.mu}, {self.mu}]"
                )

    @classmethod
    def constant(cls, value, mu: Optional[float] = None) -> "CovarianceProfile":
        value = np.atleast_2d(np.asarray(value, dtype=float))
        if mu is None:
            eig = np.linalg.eigvalsh(value)
            mu = max(1.0, eig[-1], 1.0 / eig[0])
        return cls(breakpoints=(), values=(value,), mu=mu)

    @property
    def d0(self) -> int:
        return self.values[0].shape[0]

    def piece_index(self, t: float) -> int:
        return int(np.searchsorted(self.breakpoints, t, side="right"))

    def __call__(self, t: float) -> np.ndarray:
        return self.values[self.piece_index(t)]

    def at_breakpoint(self, t: float, tol: float = BREAKPOINT_TOL) -> bool:
        return any(abs(t - b) <= tol for b in self.breakpoints)

    def shifted(self, u: float) -> "CovarianceProfile":
        """Profile tau -> c(u + tau)."""
        return CovarianceProfile(
            breakpoints=tuple(b - u for b in self.breakpoints),
            values=self.values,
            mu=self.mu,
        )

    def time_scaled(self, factor: float) -> "CovarianceProfile":
        """Profile tau -> c(factor * tau) for factor > 0."""
        if factor <= 0:
            raise ValueError("time scale factor must be positive")
        return CovarianceProfile(
            breakpoints=tuple(b / factor for b in self.breakpoints),
            values=self.values,
            mu=self.mu,
        )

    def to_json(self) -> dict:
        return {
            "breakpoints": list(self.breakpoints),
            "values": [v.tolist() for v in self.values],
            "mu": self.mu,
        }

    @staticmethod
    def from_json(obj: dict) -> "CovarianceProfile":
        return CovarianceProfile(
            breakpoints=tuple(obj.get("breakpoints", ())),
            values=tuple(np.asarray(v, dtype=float) for v in obj["values"]),
            mu=float(obj["mu"]),
        )


@dataclass(frozen=True)
class GaussianFactors:
    """Cached per-(s,t) quantities for density and derivative evaluation."""

    gap: float
    expm: np.ndarray            # e^{(t-s)B}
    cov: np.ndarray
    chol: np.ndarray            # lower Cholesky factor of cov
    logdet: float
    g11: np.ndarray             # e^{(t-s)B^T} C^{-1} e^{(t-s)B}

    def solve(self, r: np.ndarray) -> np.ndarray:
        """C^{-1} r for r of shape (d,) or (N, d); returns the same shape."""
        return cho_solve((self.chol, True), np.atleast_2d(r).T).T.reshape(np.shape(r))

    def log_density(self, r: np.ndarray) -> np.ndarray:
        """log p for residual(s) r = y - e^{(t-s)B}x, shape (d,) or (N, d)."""
        r2 = np.atleast_2d(r)
        z = solve_triangular(self.chol, r2.T, lower=True)
        quad = np.sum(z * z, axis=0)
        d = self.cov.shape[0]
        out = -0.5 * (d * math.log(2.0 * math.pi) + self.logdet + quad)
        return out.reshape(np.shape(r)[:-1])


@dataclass(frozen=True)
class DerivativeBundle:
    """Analytic first/second derivative data of the transition density.

    Gradients: D_y p = -f0 p and D_x p = f1 p; Hessian in x is
    (f1 f1^T - g11) p.  Time derivatives: dp/dt = h0 p, dp/ds = h1 p
    (present only when the profile is continuous at the evaluation
    times).
    """

    f0: np.ndarray
    f1: np.ndarray
    g00: np.ndarray
    g01: np.ndarray
    g10: np.ndarray
    g11: np.ndarray
    h0: Optional[float] = None
    h1: Optional[float] = None


class TransitionKernel:
    """Evaluates the transition density, covariance, and derivatives.

    Immutable after construction; all evaluations are pure.
    """

    def __init__(self, sm: StructuralMatrix, profile: CovarianceProfile):
        if profile.d0 != sm.d0:
            raise DimensionMismatch(
                f"profile is {profile.d0}x{profile.d0}, structural matrix has d0={sm.d0}"
            )
        self.sm = sm
        self.profile = profile
        self._moments: dict[int, list[np.ndarray]] = {}
        self._factor_cache: dict[tuple[float, float], GaussianFactors] = {}

    # --- covariance ---

    def _moment_matrices(self, piece: int) -> list[np.ndarray]:
        """Coefficients M_m with e^{tB} A e^{tB^T} = sum_m t^m M_m."""
        cached = self._moments.get(piece)
        if cached is not None:
            return cached
        sm = self.sm
        abar = np.zeros((sm.d, sm.d))
        abar[: sm.d0, : sm.d0] = self.profile.values[piece]
        terms = [p @ abar / math.factorial(k) for k, p in enumerate(sm.powers)]
        out = []
        for m in range(2 * sm.n + 1):
            M = np.zeros((sm.d, sm.d))
            for k in range(max(0, m - sm.n), min(m, sm.n) + 1):
                M += terms[k] @ sm.powers[m - k].T / math.factorial(m - k)
            out.append(M)
        self._moments[piece] = out
        return out

    def covariance(self, s: float, t: float) -> np.ndarray:
        """C(s,t), exactly integrated; the zero matrix when t <= s."""
        d = self.sm.d
        if t <= s:
            return np.zeros((d, d))
        cuts = [s] + [b for b in self.profile.breakpoints if s < b < t] + [t]
        C = np.zeros((d, d))
        for a, b in zip(cuts[:-1], cuts[1:]):
            piece = self.profile.piece_index(0.5 * (a + b))
            lo, hi = t - b, t - a
            power_lo, power_hi = lo, hi
            for m, M in enumerate(self._moment_matrices(piece)):
                C += M * (power_hi - power_lo) / (m + 1)
                power_lo *= lo
                power_hi *= hi
        return 0.5 * (C + C.T)

    def _factors(self, s: float, t: float) -> GaussianFactors:
        if t <= s:
            raise DegenerateInterval(f"need t > s, got s={s}, t={t}")
        key = (float(s), float(t))
        hit = self._factor_cache.get(key)
        if hit is not None:
            return hit
        C = self.covariance(s, t)
        try:
            L = np.linalg.cholesky(C)
        except np.linalg.LinAlgError as exc:
            raise IllConditionedCovariance(
                f"covariance not numerically positive definite at gap {t - s:g}"
            ) from exc
        diag = np.diag(L)
        if np.max(diag) / np.min(diag) > PIVOT_RATIO_LIMIT:
            raise IllConditionedCovariance(
                f"Cholesky pivot ratio {np.max(diag) / np.min(diag):.3e} exceeds "
                f"{PIVOT_RATIO_LIMIT:g} at gap {t - s:g}"
            )
        E = self.sm.matrix_exp(t - s)
        cinv_e = cho_solve((L, True), E)
        F = GaussianFactors(
            gap=t - s,
            expm=E,
            cov=C,
            chol=L,
            logdet=2.0 * float(np.sum(np.log(diag))),
            g11=E.T @ cinv_e,
        )
        if len(self._factor_cache) > 4096:
            self._factor_cache.clear()
        self._factor_cache[key] = F
        return F

    # --- density ---

    def density(self, p: GroupPoint, q: GroupPoint, log_scale: bool = False) -> float:
        """p(s,x;t,y); zero (or -inf in log scale) when t <= s."""
        if q.s <= p.s:
            return -np.inf if log_scale else 0.0
        F = self._factors(p.s, q.s)
        logp = float(F.log_density(q.x - F.expm @ p.x))
        return logp if log_scale else math.exp(logp)

    def density_batch(self, s: float, x: np.ndarray, t: float, ys: np.ndarray) -> np.ndarray:
        """p(s,x;t,y_k) for a batch of terminal states, t > s."""
        F = self._factors(s, t)
        return np.exp(F.log_density(ys - F.expm @ np.asarray(x, dtype=float)))

    def density_batch_start(self, s: float, xs: np.ndarray, t: float, y: np.ndarray) -> np.ndarray:
        """p(s,x_k;t,y) for a batch of initial states, t > s."""
        F = self._factors(s, t)
        return np.exp(F.log_density(np.asarray(y, dtype=float) - xs @ F.expm.T))

    def gradient_batch(self, s: float, x: np.ndarray, t: float, ys: np.ndarray) -> np.ndarray:
        """D_x p(s,x;t,y_k) as an (N, d) array."""
        F = self._factors(s, t)
        r = ys - F.expm @ np.asarray(x, dtype=float)
        f1 = F.solve(r) @ F.expm
        return f1 * np.exp(F.log_density(r))[..., None]

    def dxx_batch(self, i: int, j: int, s: float, x: np.ndarray, t: float,
                  ys: np.ndarray) -> np.ndarray:
        """d^2 p / dx_i dx_j at (s,x;t,y_k), batched over the terminal state."""
        F = self._factors(s, t)
        r = np.atleast_2d(ys) - F.expm @ np.asarray(x, dtype=float)
        return self._dxx_from_residual(F, i, j, r).reshape(np.shape(ys)[:-1])

    def dxx_batch_start(self, i: int, j: int, s: float, xs: np.ndarray, t: float,
                        y: np.ndarray) -> np.ndarray:
        """d^2 p / dx_i dx_j at (s,x_k;t,y), batched over the initial state."""
        F = self._factors(s, t)
        r = np.asarray(y, dtype=float) - np.atleast_2d(xs) @ F.expm.T
        return self._dxx_from_residual(F, i, j, r).reshape(np.shape(xs)[:-1])

    @staticmethod
    def _dxx_from_residual(F: GaussianFactors, i: int, j: int, r: np.ndarray) -> np.ndarray:
        f1 = F.solve(r) @ F.expm
        p = np.exp(F.log_density(r))
        return (f1[:, i] * f1[:, j] - F.g11[i, j]) * p

    # --- analytic derivative bundle ---

    def derivative_bundle(self, p: GroupPoint, q: GroupPoint,
                          with_time: bool = True) -> DerivativeBundle:
        """The vector/matrix/scalar derivative data at (p; q), q.s > p.s.

        ``with_time=False`` skips h0/h1 and the breakpoint-continuity
        requirement on the profile.
        """
        s, t = p.s, q.s
        if t <= s:
            raise DegenerateInterval(f"need t > s, got s={s}, t={t}")
        F = self._factors(s, t)
        r = q.x - F.expm @ p.x
        f0 = F.solve(r)
        f1 = F.expm.T @ f0
        cinv = F.solve(np.eye(self.sm.d))
        g01 = cinv @ F.expm
        h0 = h1 = None
        if with_time:
            if self.profile.at_breakpoint(t) or self.profile.at_breakpoint(s):
                raise BreakpointEvaluation(
                    "h0/h1 are undefined exactly at a profile breakpoint "
                    f"(s={s}, t={t}, breakpoints={self.profile.breakpoints})"
                )
            d0 = self.sm.d0
            B = self.sm.matrix
            ct, cs = self.profile(t), self.profile(s)
            h0 = 0.5 * float(
                np.sum(ct * (np.outer(f0[:d0], f0[:d0]) - cinv[:d0, :d0]))
            ) + float((B @ q.x) @ f0)
            h1 = 0.5 * float(
                np.sum(cs * (F.g11[:d0, :d0] - np.outer(f1[:d0], f1[:d0])))
            ) - float((B @ p.x) @ f1)
        return DerivativeBundle(
            f0=f0, f1=f1, g00=cinv, g01=g01, g10=g01.T, g11=F.g11, h0=h0, h1=h1
        )

    def backward_residual(self, p: GroupPoint, q: GroupPoint) -> float:
        """dp/ds + L p at (p; q) from the analytic bundle; zero in exact arithmetic.

        Contract: |residual| <= 1e-9 times the local density value.
        """
        b = self.derivative_bundle(p, q)
        d0 = self.sm.d0
        cs = self.profile(p.s)
        hess = np.outer(b.f1[:d0], b.f1[:d0]) - b.g11[:d0, :d0]
        gen = 0.5 * float(np.sum(cs * hess)) + float((self.sm.matrix @ p.x) @ b.f1)
        return (b.h1 + gen) * self.density(p, q)

    # --- integral checks ---

    def cancellation_check(self, i: int, j: int, s: float, t: float,
                           box_radius: float, quad_order: int,
                           x: Optional[np.ndarray] = None,
                           y: Optional[np.ndarray] = None) -> tuple[float, float]:
        """Quadrature estimates of int dxx_ij p dx and int dxx_ij p dy.

        Both integrals vanish analytically; the returned values measure
        quadrature plus truncation error over [-R, R]^d.
        """
        if t <= s:
            raise DegenerateInterval(f"need t > s, got s={s}, t={t}")
        d = self.sm.d
        x = np.zeros(d) if x is None else np.asarray(x, dtype=float)
        y = np.zeros(d) if y is None else np.asarray(y, dtype=float)
        F = self._factors(s, t)
        einv = self.sm.matrix_exp(s - t)
        # the integrand is Gaussian in the integration variable; spend the
        # nodes where its mass lives even when the box is much wider
        cov_x = einv @ F.cov @ einv.T
        mean_x = einv @ y
        axes = [
            gaussian_axis_rule(box_radius, mean_x[k], math.sqrt(cov_x[k, k]), quad_order)
            for k in range(d)
        ]
        pts, wts = tensor_from_axes(axes)
        over_x = float(self.dxx_batch_start(i, j, s, pts, t, y) @ wts)
        mean_y = F.expm @ x
        axes = [
            gaussian_axis_rule(box_radius, mean_y[k], math.sqrt(F.cov[k, k]), quad_order)
            for k in range(d)
        ]
        pts, wts = tensor_from_axes(axes)
        over_y = float(self.dxx_batch(i, j, s, x, t, pts) @ wts)
        return over_x, over_y

    def normalization_residual(self, p: GroupPoint, t: float,
                               quad_order: int = 64, z: float = 10.0) -> float:
        """int p(s,x;t,y) dy - 1 over a mean-centered box of z sigmas per axis."""
        F = self._factors(p.s, t)
        mean = F.expm @ p.x
        radii = z * np.sqrt(np.diag(F.cov))
        pts, wts = tensor_grid(
            [(m - r, m + r) for m, r in zip(mean, radii)], quad_order
        )
        return float(self.density_batch(p.s, p.x, t, pts) @ wts) - 1.0

    def chapman_kolmogorov(self, p: GroupPoint, q: GroupPoint, u: float,
                           quad_order: int = 72) -> tuple[float, float]:
        """(int p(s,x;u,z) p(u,z;t,y) dz, p(s,x;t,y)) for s < u < t.

        The convolution integral uses the exact Gaussian weight of the
        first factor (Hermite rule), so the comparison is an independent
        discretization of the semigroup property.
        """
        if not p.s < u < q.s:
            raise DegenerateInterval(f"need s < u < t, got s={p.s}, u={u}, t={q.s}")
        F1 = self._factors(p.s, u)
        pts, wts = gauss_hermite_points(F1.expm @ p.x, F1.chol, quad_order)
        conv = float(self.density_batch_start(u, pts, q.s, q.x) @ wts)
        return conv, self.density(p, q)

    def suggest_box_radii(self, s: float, x: np.ndarray, t: float,
                          target: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
        """Center and per-axis half-widths of a truncation box for y-integrals.

        The Gaussian mass outside the box stays below ``target``, with two
        extra sigmas of margin for polynomial derivative factors.
        """
        F = self._factors(s, t)
        z = math.sqrt(max(2.0 * math.log(1.0 / target), 1.0)) + 2.0
        return F.expm @ np.asarray(x, dtype=float), z * np.sqrt(np.diag(F.cov))


def reference_covariance(sm: StructuralMatrix, tau: float) -> np.ndarray:
    """The unit-profile covariance Chat(tau), strictly PD for tau > 0."""
    if tau <= 0:
        raise NonPositiveTau(f"need tau > 0, got {tau}")
    abar = np.zeros((sm.d, sm.d))
    abar[: sm.d0, : sm.d0] = np.eye(sm.d0)
    terms = [p @ abar / math.factorial(k) for k, p in enumerate(sm.powers)]
    C = np.zeros((sm.d, sm.d))
    for m in range(2 * sm.n + 1):
        M = np.zeros((sm.d, sm.d))
        for k in range(max(0, m - sm.n), min(m, sm.n) + 1):
            M += terms[k] @ sm.powers[m - k].T / math.factorial(m - k)
        C += M * tau ** (m + 1) / (m + 1)
    return 0.5 * (C + C.T)


@dataclass(frozen=True)
class GaussianEnvelope:
    """Constants of the uniform Gaussian domination bound on a gap window.

    p(s,x;t,y) <= prefactor * exp{cross |x||y| - decay (|x|^2 + |y|^2)}
    whenever t - s lies in [gap_lo, gap_hi].
    """

    prefactor: float
    cross: float
    decay: float
    gap_lo: float
    gap_hi: float

    def log_bound(self, x: np.ndarray, y: np.ndarray) -> float:
        nx, ny = np.linalg.norm(x), np.linalg.norm(y)
        return math.log(self.prefactor) + self.cross * nx * ny - self.decay * (
            nx ** 2 + ny ** 2
        )

    def bound(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.exp(self.log_bound(x, y)))


def envelope_constants(sm: StructuralMatrix, mu: float, gap_lo: float,
                       gap_hi: float, grid: int = 256) -> GaussianEnvelope:
    """Domination constants from the reference covariance.

    decay = lam1 (1 ^ delta^2) / (2 mu) with lam1 the smallest eigenvalue
    of Chat(gap_hi)^{-1} and delta the minimum singular value of e^{sB}
    over the window (evaluated on a grid; e^{sB} is polynomial in s).
    """
    if not 0 < gap_lo <= gap_hi:
        raise NonPositiveTau(f"need 0 < gap_lo <= gap_hi, got [{gap_lo}, {gap_hi}]")
    chat_hi = reference_covariance(sm, gap_hi)
    chat_lo = reference_covariance(sm, gap_lo)
    lam1 = 1.0 / float(np.linalg.eigvalsh(chat_hi)[-1])
    delta = min(
        float(np.linalg.svd(sm.matrix_exp(s), compute_uv=False)[-1])
        for s in np.linspace(gap_lo, gap_hi, grid)
    )
    norm_b = float(np.linalg.norm(sm.matrix, 2))
    inv_norm = float(np.linalg.norm(np.linalg.inv(chat_lo), 2))
    sign, logdet = np.linalg.slogdet(chat_lo)
    prefactor = (2.0 * mu * math.pi) ** (sm.d / 2.0) * math.exp(-0.5 * logdet)
    return GaussianEnvelope(
        prefactor=prefactor,
        cross=mu * inv_norm * math.exp((gap_hi - gap_lo) * norm_b),
        decay=lam1 * min(1.0, delta ** 2) / (2.0 * mu),
        gap_lo=gap_lo,
        gap_hi=gap_hi,
    )


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a
