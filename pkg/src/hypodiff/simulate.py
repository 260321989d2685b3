"""Path generation and Monte Carlo diagnostics.

Exact Gaussian transitions for the linear-drift equation, left-point
Euler-Maruyama for general coefficient fields with degenerate noise, the
example coefficient fields, localization stopping times, and law
comparison between ensembles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import trapezoid

from .bumps import as_test_function
from .errors import (
    BadGrid,
    DimensionMismatch,
    EmptyEnsemble,
    HorizonExceeded,
    IllConditionedCovariance,
    NonPSDDiffusion,
)
from .group import GroupPoint, StructuralMatrix, kolmogorov_matrix
from .kernel import TransitionKernel
from .rng import fill_normals
from .twosample import LawDistanceReport, compare_samples

TIME_MATCH_ATOL = 1e-9


@dataclass(frozen=True)
class Trajectory:
    """One path: a strictly increasing time grid and per-time states."""

    times: np.ndarray
    states: np.ndarray
    seed_info: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if np.any(np.diff(times) <= 0):
            raise BadGrid("time grid must be strictly increasing")
        if states.shape[0] != times.shape[0]:
            raise BadGrid(
                f"{states.shape[0]} states for {times.shape[0]} grid times"
            )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)


@dataclass(frozen=True)
class Ensemble:
    """A bundle of paths on a common grid; states has shape (P, T, d)."""

    times: np.ndarray
    states: np.ndarray
    seed_info: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def d(self) -> int:
        return self.states.shape[2]

    def trajectory(self, p: int) -> Trajectory:
        info = dict(self.seed_info)
        info["path_index"] = p
        return Trajectory(self.times, self.states[p], info)

    def time_index(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > TIME_MATCH_ATOL:
            raise HorizonExceeded(f"time {t} is not on the ensemble grid")
        return idx

    def states_at(self, t: float) -> np.ndarray:
        return self.states[:, self.time_index(t), :]


@dataclass(frozen=True)
class CoefficientField:
    """Vectorized coefficient pair: a(t, X) -> (P, d0, d0), b(t, X) -> (P, d).

    ``b`` is the full drift (any structural part included).  The growth
    constant is the declared N with ||a|| + |b|^2 <= N (1 + |x|^2).
    """

    a: Callable
    b: Callable
    d: int
    d0: int
    growth_constant: float
    a_state_independent: bool = False
    structure: dict = field(default_factory=dict)

    def a_at(self, t: float, states: np.ndarray) -> np.ndarray:
        out = np.asarray(self.a(t, states), dtype=float)
        if out.ndim == 2:
            out = np.broadcast_to(out, (states.shape[0],) + out.shape)
        if out.shape[-2:] != (self.d0, self.d0):
            raise DimensionMismatch(
                f"a must return {self.d0}x{self.d0} blocks, got {out.shape}"
            )
        return out

    def b_at(self, t: float, states: np.ndarray) -> np.ndarray:
        out = np.asarray(self.b(t, states), dtype=float)
        if out.shape != states.shape:
            raise DimensionMismatch(
                f"b must return shape {states.shape}, got {out.shape}"
            )
        return out


def linear_field(kern: TransitionKernel) -> CoefficientField:
    """The field (c(t), Bx) whose law the exact sampler draws from."""
    sm, prof = kern.sm, kern.profile
    norm_b = float(np.linalg.norm(sm.matrix, 2))
    return CoefficientField(
        a=lambda t, X: prof(t),
        b=lambda t, X: X @ sm.matrix.T,
        d=sm.d,
        d0=sm.d0,
        growth_constant=max(prof.mu, norm_b ** 2, 1.0),
        a_state_independent=True,
        structure={"shape": "linear"},
    )


def field_example_chain(d0: int, n_blocks: int, bhat, sigmahat,
                        growth_constant: float = 10.0) -> CoefficientField:
    """The chain SDE: d0 diffusive components, the rest integrate their
    predecessors (component i > d0 has drift x^{i - d0})."""
    if n_blocks < 2:
        raise DimensionMismatch("the chain needs at least two blocks")
    d = n_blocks * d0

    def a(t, X):
        s = np.asarray(sigmahat(t, X), dtype=float)
        if s.ndim == 2:
            return s @ s.T
        return np.einsum("pij,pkj->pik", s, s)

    def b(t, X):
        head = np.asarray(bhat(t, X), dtype=float)
        if head.shape != (X.shape[0], d0):
            raise DimensionMismatch(
                f"bhat must return shape {(X.shape[0], d0)}, got {head.shape}"
            )
        return np.concatenate([head, X[:, : d - d0]], axis=1)

    return CoefficientField(
        a=a, b=b, d=d, d0=d0, growth_constant=growth_constant,
        structure={"shape": "chain", "n_blocks": n_blocks},
    )


def chain_structure(d0: int, n_blocks: int) -> StructuralMatrix:
    """The structural matrix implied by the chain example."""
    return kolmogorov_matrix(d0=d0, n_blocks=n_blocks)


def field_example_two_block(d0: int, d1: int, bprime, bsecond, sigmatilde,
                            growth_constant: float = 10.0) -> CoefficientField:
    """(X', X'') dynamics: X' diffusive with drift b', X'' drifts by b''."""
    if d1 > d0:
        raise DimensionMismatch(f"need d1 <= d0, got d1={d1}, d0={d0}")
    d = d0 + d1

    def a(t, X):
        s = np.asarray(sigmatilde(t, X), dtype=float)
        if s.ndim == 2:
            return s @ s.T
        return np.einsum("pij,pkj->pik", s, s)

    def b(t, X):
        head = np.asarray(bprime(t, X), dtype=float)
        tail = np.asarray(bsecond(t, X), dtype=float)
        if head.shape != (X.shape[0], d0) or tail.shape != (X.shape[0], d1):
            raise DimensionMismatch(
                f"drift blocks must have shapes {(X.shape[0], d0)} and "
                f"{(X.shape[0], d1)}"
            )
        return np.concatenate([head, tail], axis=1)

    return CoefficientField(
        a=a, b=b, d=d, d0=d0, growth_constant=growth_constant,
        structure={"shape": "two-block", "d1": d1},
    )


def field_example_sum_drift(sigma, d0: int,
                            growth_constant: float = 10.0) -> CoefficientField:
    """The (X, Y) system dX = sigma(t, X, Y) dW, dY = (X + Y) dt."""
    d = 2 * d0

    def a(t, X):
        s = np.asarray(sigma(t, X[:, :d0], X[:, d0:]), dtype=float)
        if s.ndim == 2:
            return s @ s.T
        return np.einsum("pij,pkj->pik", s, s)

    def b(t, X):
        out = np.zeros_like(X)
        out[:, d0:] = X[:, :d0] + X[:, d0:]
        return out

    return CoefficientField(
        a=a, b=b, d=d, d0=d0, growth_constant=growth_constant,
        structure={"shape": "sum-drift", "sigma": sigma, "d0": d0},
    )


# --- samplers ---

def exact_sample(kern: TransitionKernel, start: GroupPoint, times,
                 seed: int, n_paths: int, workers: int = 1) -> Ensemble:
    """Sequential exact Gaussian transitions of the linear-drift SDE.

    Marginals match the transition density up to floating point: there is
    no discretization bias, only Monte Carlo error.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise BadGrid("need a one-dimensional, nonempty time grid")
    if abs(times[0] - start.s) > TIME_MATCH_ATOL:
        raise BadGrid(f"grid must start at s={start.s}, got {times[0]}")
    if times.size > 1 and np.any(np.diff(times) <= 0):
        raise BadGrid("time grid must be strictly increasing")
    d = kern.sm.d
    n_steps = times.size - 1
    states = np.empty((n_paths, times.size, d))
    states[:, 0, :] = start.x
    if n_steps:
        noise = np.empty((n_paths, n_steps, d))
        fill_normals(seed, noise, workers)
        for k in range(n_steps):
            expm = kern.sm.matrix_exp(times[k + 1] - times[k])
            factor = _transition_sqrt(kern.covariance(times[k], times[k + 1]))
            states[:, k + 1, :] = (
                states[:, k, :] @ expm.T + noise[:, k, :] @ factor.T
            )
    return Ensemble(times, states, {
        "seed": int(seed), "kind": "exact", "n_paths": int(n_paths),
    })


def euler_simulate(field: CoefficientField, start: GroupPoint, mesh: float,
                   horizon: float, seed: int, n_paths: int, workers: int = 1,
                   return_noise: bool = False):
    """Left-point Euler-Maruyama with noise on the first d0 components.

    The diffusion square root is the symmetric PSD root of a(t, x);
    components beyond d0 move by drift alone, exactly as in the
    degenerate block structure.
    """
    if mesh <= 0:
        raise BadGrid(f"mesh must be positive, got {mesh}")
    n_steps = int(round(horizon / mesh))
    if n_steps < 1 or abs(n_steps * mesh - horizon) > 1e-9 * max(1.0, abs(horizon)):
        raise BadGrid(f"horizon {horizon} is not a whole number of steps of {mesh}")
    d, d0 = field.d, field.d0
    if start.d != d:
        raise DimensionMismatch(f"start point has dimension {start.d}, field {d}")
    times = start.s + mesh * np.arange(n_steps + 1)
    states = np.empty((n_paths, n_steps + 1, d))
    states[:, 0, :] = start.x
    noise = np.empty((n_paths, n_steps, d0))
    fill_normals(seed, noise, workers)
    noise *= np.sqrt(mesh)
    for k in range(n_steps):
        x = states[:, k, :]
        drift = field.b_at(times[k], x)
        a_val = field.a_at(times[k], x)
        if field.a_state_independent:
            factor = _psd_sqrt(a_val[0])
            shock = noise[:, k, :] @ factor.T
        else:
            factors = _psd_sqrt_batch(a_val)
            shock = np.einsum("pij,pj->pi", factors, noise[:, k, :])
        states[:, k + 1, :] = x + drift * mesh
        states[:, k + 1, :d0] += shock
    ens = Ensemble(times, states, {
        "seed": int(seed), "kind": "euler", "n_paths": int(n_paths),
        "mesh": float(mesh),
    })
    if return_noise:
        return ens, noise
    return ens


def _transition_sqrt(mat: np.ndarray, rel: float = 1e-12) -> np.ndarray:
    """Symmetric square root with eigenvalues under rel*lam_max set to zero.

    The transition covariance is positive definite in exact arithmetic, so
    anything at rounding scale is clamped rather than rejected.
    """
    lam, vec = np.linalg.eigh(mat)
    floor = rel * max(lam[-1], 0.0)
    if lam[0] < -1e-8 * max(lam[-1], 1.0):
        raise IllConditionedCovariance(
            f"transition covariance has eigenvalue {lam[0]:.3e}"
        )
    lam = np.where(lam < floor, 0.0, lam)
    return (vec * np.sqrt(lam)) @ vec.T


def _psd_sqrt(mat: np.ndarray, tol: float = -1e-10) -> np.ndarray:
    lam, vec = np.linalg.eigh(mat)
    if lam[0] < tol:
        raise NonPSDDiffusion(f"matrix has eigenvalue {lam[0]:.3e} below {tol}")
    lam = np.clip(lam, 0.0, None)
    return (vec * np.sqrt(lam)) @ vec.T


def _psd_sqrt_batch(mats: np.ndarray, tol: float = -1e-10) -> np.ndarray:
    lam, vec = np.linalg.eigh(mats)
    if float(lam.min()) < tol:
        raise NonPSDDiffusion(
            f"diffusion matrix has eigenvalue {lam.min():.3e} below {tol} "
            "at a visited point"
        )
    lam = np.clip(lam, 0.0, None)
    return np.einsum("pij,pj,pkj->pik", vec, np.sqrt(lam), vec)


def euler_residual(ensemble: Ensemble, field: CoefficientField,
                   noise: np.ndarray) -> float:
    """Max |increment - drift dt - diffusion dW| over the whole ensemble.

    Zero (to rounding) exactly when the ensemble follows the field's
    Euler recursion with the given noise increments.
    """
    times, states = ensemble.times, ensemble.states
    d0 = field.d0
    worst = 0.0
    for k in range(times.size - 1):
        x = states[:, k, :]
        dt = times[k + 1] - times[k]
        pred = x + field.b_at(times[k], x) * dt
        a_val = field.a_at(times[k], x)
        if field.a_state_independent:
            shock = noise[:, k, :] @ _psd_sqrt(a_val[0]).T
        else:
            shock = np.einsum("pij,pj->pi", _psd_sqrt_batch(a_val), noise[:, k, :])
        pred[:, :d0] += shock
        worst = max(worst, float(np.max(np.abs(states[:, k + 1, :] - pred))))
    return worst


def growth_audit(ensemble: Ensemble, field: CoefficientField) -> float:
    """Max of (||a|| + |b|^2) / (1 + |x|^2) along the ensemble.

    Values above the declared growth constant flag a dishonest N.
    """
    worst = 0.0
    for k, t in enumerate(ensemble.times):
        x = ensemble.states[:, k, :]
        a_val = field.a_at(t, x)
        b_val = field.b_at(t, x)
        a_norm = np.linalg.norm(a_val, 2, axis=(1, 2))
        ratio = (a_norm + np.sum(b_val ** 2, axis=1)) / (1.0 + np.sum(x ** 2, axis=1))
        worst = max(worst, float(ratio.max()))
    return worst


# --- functionals ---

def martingale_residual(ensemble: Ensemble, f, field: CoefficientField,
                        s: float, t: float) -> tuple[float, float]:
    """Monte Carlo estimate (and standard error) of E[M_t - M_s].

    M is the compensated process f(t, X_t) minus the time integral of the
    generator applied to f (trapezoid rule on the ensemble grid); the
    estimate vanishes within noise when the field generates the law.
    """
    if t <= s:
        raise HorizonExceeded(f"need s < t, got s={s}, t={t}")
    f = as_test_function(f)
    i0, i1 = ensemble.time_index(s), ensemble.time_index(t)
    times = ensemble.times[i0:i1 + 1]
    d0 = field.d0
    gen_vals = np.empty((ensemble.n_paths, times.size))
    for k, u in enumerate(times):
        x = ensemble.states[:, i0 + k, :]
        a_val = field.a_at(u, x)
        b_val = field.b_at(u, x)
        hess = f.hessian(u, x)[:, :d0, :d0]
        gen_vals[:, k] = (
            f.dt(u, x)
            + 0.5 * np.einsum("pij,pij->p", a_val, hess)
            + np.einsum("pi,pi->p", b_val, f.gradient(u, x))
        )
    integral = trapezoid(gen_vals, times, axis=1)
    m = (
        f.value(t, ensemble.states[:, i1, :])
        - f.value(s, ensemble.states[:, i0, :])
        - integral
    )
    return float(m.mean()), float(m.std(ddof=1) / np.sqrt(len(m)))


def green_functional(ensemble: Ensemble, f, T: float) -> tuple[float, float]:
    """MC estimate (and SE) of E int_s^T f(t, X_t) dt on the ensemble grid."""
    f = as_test_function(f)
    if T > ensemble.times[-1] + TIME_MATCH_ATOL:
        raise HorizonExceeded(
            f"window end {T} exceeds the ensemble horizon {ensemble.times[-1]}"
        )
    i1 = ensemble.time_index(T)
    times = ensemble.times[: i1 + 1]
    vals = np.empty((ensemble.n_paths, times.size))
    for k, u in enumerate(times):
        vals[:, k] = f.value(u, ensemble.states[:, k, :])
    per_path = trapezoid(vals, times, axis=1)
    return float(per_path.mean()), float(per_path.std(ddof=1) / np.sqrt(len(per_path)))


# --- localization ---

@dataclass(frozen=True)
class RadiusFunction:
    """A localization radius rho(t, r), nonincreasing in each argument,
    capped at 1."""

    fn: Callable
    check_grid: tuple = ((0.0, 0.5, 1.0, 2.0, 5.0), (0.0, 0.5, 1.0, 2.0, 5.0))

    def __post_init__(self):
        ts, rs = self.check_grid
        vals = np.array([[min(1.0, float(self.fn(t, r))) for r in rs] for t in ts])
        if np.any(vals <= 0):
            raise ValueError("radius function must be positive")
        if np.any(np.diff(vals, axis=0) > 1e-12) or np.any(np.diff(vals, axis=1) > 1e-12):
            raise ValueError("radius function must be nonincreasing in each argument")

    def __call__(self, t: float, r: float) -> float:
        return min(1.0, float(self.fn(t, r)))


def localization_times(traj: Trajectory, rho: RadiusFunction,
                       max_n: int) -> list[float]:
    """Grid-resolved stopping times of the localization recursion.

    T_0 is the grid start; T_n is the first grid time with
    (t - T_{n-1}) + |X_t - X_{T_{n-1}}| >= rho(T_{n-1}, |X_{T_{n-1}}|).
    """
    times, states = traj.times, traj.states
    out = [float(times[0])]
    idx = 0
    while len(out) <= max_n:
        anchor_t = times[idx]
        anchor_x = states[idx]
        threshold = rho(anchor_t, float(np.linalg.norm(anchor_x)))
        drift = times[idx + 1:] - anchor_t
        move = np.linalg.norm(states[idx + 1:] - anchor_x, axis=1)
        hits = np.nonzero(drift + move >= threshold)[0]
        if hits.size == 0:
            break
        idx = idx + 1 + int(hits[0])
        out.append(float(times[idx]))
    return out


def modulus_of_continuity(traj: Trajectory, delta: float, t: float) -> float:
    """sup over grid pairs r <= u <= min(r + delta, t) of |X_u - X_r|."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    times, states = traj.times, traj.states
    mask = times <= t + TIME_MATCH_ATOL
    times, states = times[mask], states[mask]
    worst = 0.0
    for i in range(times.size):
        hi = np.searchsorted(times, times[i] + delta + TIME_MATCH_ATOL, side="right")
        if hi <= i + 1:
            continue
        diffs = np.linalg.norm(states[i + 1:hi] - states[i], axis=1)
        if diffs.size:
            worst = max(worst, float(diffs.max()))
    return worst


# --- law comparison ---

def law_distance(ensemble_a: Ensemble, ensemble_b: Ensemble, times,
                 projections=None, n_permutations: int = 200,
                 seed: int = 0) -> LawDistanceReport:
    """Energy-distance and marginal-KS comparison at common grid times."""
    if ensemble_a.n_paths == 0 or ensemble_b.n_paths == 0:
        raise EmptyEnsemble("both ensembles need at least one path")
    samples_a = [ensemble_a.states_at(t) for t in times]
    samples_b = [ensemble_b.states_at(t) for t in times]
    return compare_samples(samples_a, samples_b, times, projections,
                           n_permutations, seed)
