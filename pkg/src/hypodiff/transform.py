"""Change-of-variables constructions for drift nondegeneracy.

Covers the sum-drift reduction (replace X by Z = X + Y so the drift
becomes structural), the full-rank map f(s,x) = (s, b''(s,x), x'') with
its contraction-based inverse and Ito pushforward of coefficients,
dimension padding when the drift block is thinner than the diffusive
block, and the smooth cutoff that freezes a C^1 function's derivative
outside a ball.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (
    DerivativeBoundUnachievable,
    DimensionMismatch,
    MissingDerivatives,
    NoConvergence,
    ShapeMismatch,
    SingularExtension,
)
from .group import GroupPoint
from .simulate import CoefficientField, Ensemble

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class BsecondMap:
    """The drift block b'' with the derivatives the pushforward needs.

    All callables are vectorized over a batch of states: value(t, X) has
    shape (P, d1), jac_xprime (P, d1, d0), jac_xsecond (P, d1, d1),
    dt (P, d1), hess_xprime (P, d1, d0, d0).
    """

    value: Callable
    jac_xprime: Callable
    jac_xsecond: Callable
    dt: Callable
    hess_xprime: Callable
    d0: int
    d1: int

    @classmethod
    def from_value(cls, value, d0: int, d1: int, step: float = 1e-6,
                   hess_step: float = 5e-4) -> "BsecondMap":
        """Central finite-difference fallback for all derivatives."""
        d = d0 + d1

        def shift(X, i, h):
            out = np.array(X, dtype=float)
            out[:, i] += h
            return out

        def jac_block(t, X, lo, hi):
            cols = []
            for i in range(lo, hi):
                cols.append(
                    (value(t, shift(X, i, step)) - value(t, shift(X, i, -step)))
                    / (2 * step)
                )
            return np.stack(cols, axis=-1)

        def dt_fn(t, X):
            return (value(t + step, X) - value(t - step, X)) / (2 * step)

        def hess_fn(t, X):
            h = hess_step
            rows = []
            for i in range(d0):
                row = []
                for j in range(d0):
                    if i == j:
                        val = (
                            value(t, shift(X, i, h))
                            - 2 * value(t, X)
                            + value(t, shift(X, i, -h))
                        ) / h ** 2
                    else:
                        val = (
                            value(t, shift(shift(X, i, h), j, h))
                            - value(t, shift(shift(X, i, h), j, -h))
                            - value(t, shift(shift(X, i, -h), j, h))
                            + value(t, shift(shift(X, i, -h), j, -h))
                        ) / (4 * h ** 2)
                    row.append(val)
                rows.append(np.stack(row, axis=-1))
            return np.stack(rows, axis=-2)

        return cls(
            value=value,
            jac_xprime=lambda t, X: jac_block(t, X, 0, d0),
            jac_xsecond=lambda t, X: jac_block(t, X, d0, d),
            dt=dt_fn,
            hess_xprime=hess_fn,
            d0=d0,
            d1=d1,
        )


def cross_check_derivatives(analytic: BsecondMap, points, times) -> float:
    """Max deviation between analytic derivatives and the FD fallback."""
    fd = BsecondMap.from_value(analytic.value, analytic.d0, analytic.d1)
    worst = 0.0
    X = np.atleast_2d(points)
    for t in np.atleast_1d(times):
        for name in ("jac_xprime", "jac_xsecond", "dt"):
            a = getattr(analytic, name)(t, X)
            b = getattr(fd, name)(t, X)
            worst = max(worst, float(np.max(np.abs(a - b))))
    return worst


@dataclass(frozen=True)
class Transform:
    """The map f(s,x) = (s, b''(s,x), x'') with its reference matrix.

    Inversion and pushforward require the square case d1 == d0; thinner
    drift blocks go through :func:`pad_dimensions` first.
    """

    bsecond: BsecondMap
    a0: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    ahat: Optional[np.ndarray]
    ahat_inv: Optional[np.ndarray]
    contraction: Optional[float]
    probe_box: Optional[tuple]
    bsecond_spec: Optional[dict] = None

    def to_json(self) -> dict:
        """Serialize a catalog-backed transform (matrices plus dims)."""
        if self.bsecond_spec is None:
            raise ValueError(
                "only transforms built from the named drift-block catalog "
                "are serializable"
            )
        return {
            "bsecond": dict(self.bsecond_spec),
            "a0": self.a0.tolist(),
            "a1": self.a1.tolist(),
            "a2": self.a2.tolist(),
            "d0": self.d0,
            "d1": self.d1,
        }

    @staticmethod
    def from_json(obj: dict) -> "Transform":
        spec = obj["bsecond"]
        bs, _, _, _ = bsecond_catalog(
            spec["name"], int(obj["d0"]), int(obj["d1"]),
            a0=obj["a0"], a1=obj["a1"], a2=obj["a2"],
            amp=float(spec.get("amp", 0.02)),
        )
        return make_transform(bs, obj["a0"], obj["a1"], obj["a2"],
                              bsecond_spec=spec)

    @property
    def d0(self) -> int:
        return self.bsecond.d0

    @property
    def d1(self) -> int:
        return self.bsecond.d1

    @property
    def d(self) -> int:
        return self.d0 + self.d1

    def forward(self, p: GroupPoint) -> GroupPoint:
        """(s, x', x'') -> (s, b''(s, x), x'')."""
        self._require_square("forward")
        head = self.bsecond.value(p.s, p.x[None, :])[0]
        return GroupPoint(p.s, np.concatenate([head, p.x[self.d0:]]))

    def forward_batch(self, t: float, X: np.ndarray) -> np.ndarray:
        self._require_square("forward")
        X = np.atleast_2d(X)
        return np.concatenate([self.bsecond.value(t, X), X[:, self.d0:]], axis=1)

    def jacobian(self, t: float, X: np.ndarray) -> np.ndarray:
        """Df(s,x) on a batch, shape (P, 1+d, 1+d)."""
        X = np.atleast_2d(X)
        P = X.shape[0]
        d = self.d
        out = np.zeros((P, 1 + d, 1 + d))
        out[:, 0, 0] = 1.0
        out[:, 1:1 + self.d1, 0] = self.bsecond.dt(t, X)
        out[:, 1:1 + self.d1, 1:1 + self.d0] = self.bsecond.jac_xprime(t, X)
        out[:, 1:1 + self.d1, 1 + self.d0:] = self.bsecond.jac_xsecond(t, X)
        for i in range(d - self.d0):
            out[:, 1 + self.d1 + i, 1 + self.d0 + i] = 1.0
        return out

    def invert(self, target: GroupPoint, tol: float = 1e-12,
               max_iter: int = 200) -> GroupPoint:
        """Fixed-point inversion of f; geometric with ratio <= 1/2."""
        out = self.invert_batch(target.s, target.x[None, :], tol, max_iter)
        result = GroupPoint(target.s, out[0])
        image = self.forward(result)
        if np.max(np.abs(image.x - target.x)) > 10 * tol * max(
            1.0, float(np.max(np.abs(target.x)))
        ):
            raise NoConvergence(
                "fixed point does not map back to the target; the contraction "
                "bound is violated between probe points"
            )
        return result

    def invert_batch(self, t0: float, Y: np.ndarray, tol: float = 1e-12,
                     max_iter: int = 200) -> np.ndarray:
        self._require_square("invert")
        Y = np.atleast_2d(Y)
        targets = np.concatenate([np.full((Y.shape[0], 1), t0), Y], axis=1)
        z = targets @ self.ahat_inv.T
        for _ in range(max_iter):
            fz = np.concatenate([
                np.full((Y.shape[0], 1), t0),
                self.forward_batch(t0, z[:, 1:]),
            ], axis=1)
            z_next = z + (targets - fz) @ self.ahat_inv.T
            step = float(np.max(np.abs(z_next - z)))
            z = z_next
            if step < tol:
                return z[:, 1:]
        raise NoConvergence(
            f"no fixed point after {max_iter} iterations (last step {step:.3e}); "
            "the contraction bound is violated between probe points"
        )

    def pushforward(self, a: Callable, bprime: Optional[Callable] = None,
                    a_state_independent: bool = False,
                    growth_constant: float = 50.0) -> CoefficientField:
        """The coefficient field of Y = (b''(t, X), X'') under Ito's rule.

        ``a`` is the original diffusion block (t, X) -> (P, d0, d0); the
        drift correction uses the declared derivatives of b''.  The
        structural part of the new drift is the two-block shift.
        """
        self._require_square("pushforward")
        bs = self.bsecond
        d0, d = self.d0, self.d
        for name in ("jac_xprime", "jac_xsecond", "dt", "hess_xprime"):
            if getattr(bs, name) is None:
                raise MissingDerivatives(f"b'' lacks {name}")
        tr = self

        def pulled(t, Y):
            return tr.invert_batch(t, Y)

        def a_push(t, Y):
            X = pulled(t, Y)
            J = bs.jac_xprime(t, X)
            a_val = _as_batch(a(t, X), X.shape[0])
            return np.einsum("pij,pjk,plk->pil", J, a_val, J)

        def b_push(t, Y):
            Y = np.atleast_2d(Y)
            X = pulled(t, Y)
            a_val = _as_batch(a(t, X), X.shape[0])
            hess = bs.hess_xprime(t, X)
            correction = (
                bs.dt(t, X)
                + 0.5 * np.einsum("pijk,pjk->pi", hess, a_val)
                + np.einsum("pij,pj->pi", bs.jac_xsecond(t, X), bs.value(t, X))
            )
            if bprime is not None:
                correction = correction + np.einsum(
                    "pij,pj->pi", bs.jac_xprime(t, X), np.atleast_2d(bprime(t, X))
                )
            out = np.zeros_like(Y)
            out[:, :d0] = correction
            out[:, d0:] = Y[:, :d0]
            return out

        return CoefficientField(
            a=a_push, b=b_push, d=d, d0=d0,
            growth_constant=growth_constant,
            a_state_independent=False,
            structure={"shape": "pushforward"},
        )

    def muhat(self, mu: float) -> float:
        """Ellipticity bound for the pushforward diffusion block."""
        self._require_square("muhat")
        return 4.0 * (
            np.linalg.norm(self.a1, 2) ** 2 + np.linalg.norm(self.ahat_inv, 2) ** 2
        ) * mu

    def _require_square(self, op: str) -> None:
        if self.d1 != self.d0:
            raise ShapeMismatch(
                f"{op} needs d1 == d0; pad_dimensions first (d0={self.d0}, "
                f"d1={self.d1})"
            )


def make_transform(bsecond: BsecondMap, a0, a1, a2,
                   probe_points: Optional[np.ndarray] = None,
                   probe_times=(0.0,),
                   bsecond_spec: Optional[dict] = None) -> Transform:
    """Validate the reference matrices and assemble the block matrix.

    ``probe_points`` (N, d) spot-checks the contraction condition
    ||Df(s,x) - Ahat|| * ||Ahat^{-1}|| <= 1/2 on the given states; a
    global guarantee is the caller's analysis, so the probed region is
    recorded on the transform.
    """
    a0 = np.atleast_2d(np.asarray(a0, dtype=float)).reshape(bsecond.d1, 1)
    a1 = np.atleast_2d(np.asarray(a1, dtype=float))
    a2 = np.atleast_2d(np.asarray(a2, dtype=float))
    d0, d1 = bsecond.d0, bsecond.d1
    if a1.shape != (d1, d0) or a2.shape != (d1, d1):
        raise DimensionMismatch(
            f"reference blocks must be ({d1},{d0}) and ({d1},{d1}), got "
            f"{a1.shape} and {a2.shape}"
        )
    sv = np.linalg.svd(a1, compute_uv=False)
    if sv[-1] <= RANK_RTOL * sv[0] or sv[0] == 0.0:
        raise DimensionMismatch(f"A1 must have full row rank; singular values {sv}")

    ahat = ahat_inv = None
    contraction = None
    box = None
    if d1 == d0:
        d = d0 + d1
        ahat = np.zeros((1 + d, 1 + d))
        ahat[0, 0] = 1.0
        ahat[1:1 + d1, 0:1] = a0
        ahat[1:1 + d1, 1:1 + d0] = a1
        ahat[1:1 + d1, 1 + d0:] = a2
        ahat[1 + d1:, 1 + d0:] = np.eye(d1)
        ahat_inv = np.linalg.inv(ahat)
        tr = Transform(bsecond, a0, a1, a2, ahat, ahat_inv, None, None,
                       bsecond_spec)
        if probe_points is not None:
            probe_points = np.atleast_2d(probe_points)
            inv_norm = np.linalg.norm(ahat_inv, 2)
            worst = 0.0
            for t in np.atleast_1d(probe_times):
                jac = tr.jacobian(t, probe_points)
                for J in jac:
                    worst = max(worst, float(np.linalg.norm(J - ahat, 2)) * inv_norm)
            if worst > 0.5:
                raise ValueError(
                    f"contraction check failed: sup ||Df - Ahat|| ||Ahat^-1|| = "
                    f"{worst:.3f} > 1/2 on the probe set"
                )
            contraction = worst
            box = (
                tuple(np.min(probe_points, axis=0)),
                tuple(np.max(probe_points, axis=0)),
            )
    return Transform(bsecond, a0, a1, a2, ahat, ahat_inv, contraction, box,
                     bsecond_spec)


def _as_batch(a_val, n: int) -> np.ndarray:
    a_val = np.asarray(a_val, dtype=float)
    if a_val.ndim == 2:
        return np.broadcast_to(a_val, (n,) + a_val.shape)
    return a_val


# --- sum-drift reduction ---

def zy_reduce(field: CoefficientField) -> CoefficientField:
    """Rewrite dX = sigma dW, dY = (X+Y) dt in the variables (Z, Y), Z = X+Y.

    The reduced system has structural drift (Z, Z) and diffusion
    sigma(t, z - y, y) on the first block.
    """
    if field.structure.get("shape") != "sum-drift":
        raise ShapeMismatch(
            "zy_reduce expects the sum-drift field shape "
            "(X diffusive, Y drifting by X + Y)"
        )
    sigma = field.structure["sigma"]
    d0 = field.structure["d0"]

    def a(t, X):
        s = np.asarray(sigma(t, X[:, :d0] - X[:, d0:], X[:, d0:]), dtype=float)
        if s.ndim == 2:
            return s @ s.T
        return np.einsum("pij,pkj->pik", s, s)

    def b(t, X):
        out = np.empty_like(X)
        out[:, :d0] = X[:, :d0]
        out[:, d0:] = X[:, :d0]
        return out

    return CoefficientField(
        a=a, b=b, d=field.d, d0=d0,
        growth_constant=field.growth_constant + 2.0,
        structure={"shape": "sum-drift-reduced", "d0": d0},
    )


def zy_map_states(ensemble: Ensemble, d0: int) -> Ensemble:
    """Apply (x, y) -> (x + y, y) to every state of an ensemble."""
    states = ensemble.states.copy()
    states[:, :, :d0] += states[:, :, d0:]
    return Ensemble(ensemble.times, states, dict(ensemble.seed_info))


# --- dimension padding ---

def pad_dimensions(tr: Transform, a1_extension=None) -> Transform:
    """Lift a thin transform (d1 < d0) to a square one on R^{2 d0}.

    The appended components integrate the extension rows applied to x';
    stacking those rows under A1 must produce an invertible matrix.
    """
    d0, d1 = tr.d0, tr.d1
    if d1 == d0:
        return tr
    ext = np.atleast_2d(np.asarray(a1_extension, dtype=float))
    if ext.shape != (d0 - d1, d0):
        raise DimensionMismatch(
            f"extension must have shape {(d0 - d1, d0)}, got {ext.shape}"
        )
    a1_t = np.vstack([tr.a1, ext])
    sv = np.linalg.svd(a1_t, compute_uv=False)
    if sv[-1] <= RANK_RTOL * sv[0]:
        raise SingularExtension(
            f"stacked A1 is singular (singular values {sv})"
        )
    a0_t = np.vstack([tr.a0, np.zeros((d0 - d1, 1))])
    a2_t = np.zeros((d0, d0))
    a2_t[:d1, :d1] = tr.a2
    bs = tr.bsecond
    d = d0 + d1

    def value(t, X):
        X = np.atleast_2d(X)
        orig = bs.value(t, X[:, :d])
        extra = X[:, :d0] @ ext.T
        return np.concatenate([orig, extra], axis=1)

    def jac_xprime(t, X):
        X = np.atleast_2d(X)
        top = bs.jac_xprime(t, X[:, :d])
        bottom = np.broadcast_to(ext, (X.shape[0],) + ext.shape)
        return np.concatenate([top, bottom], axis=1)

    def jac_xsecond(t, X):
        X = np.atleast_2d(X)
        out = np.zeros((X.shape[0], d0, d0))
        out[:, :d1, :d1] = bs.jac_xsecond(t, X[:, :d])
        return out

    def dt(t, X):
        X = np.atleast_2d(X)
        out = np.zeros((X.shape[0], d0))
        out[:, :d1] = bs.dt(t, X[:, :d])
        return out

    def hess_xprime(t, X):
        X = np.atleast_2d(X)
        out = np.zeros((X.shape[0], d0, d0, d0))
        out[:, :d1] = bs.hess_xprime(t, X[:, :d])
        return out

    padded = BsecondMap(
        value=value, jac_xprime=jac_xprime, jac_xsecond=jac_xsecond,
        dt=dt, hess_xprime=hess_xprime, d0=d0, d1=d0,
    )
    return make_transform(padded, a0_t, a1_t, a2_t)


def pad_field(field: CoefficientField, tr: Transform, a1_extension) -> CoefficientField:
    """The coefficient field of the padded process on R^{2 d0}.

    The first d components keep the original dynamics; each appended
    component integrates an extension row applied to the diffusive block.
    """
    d0, d1 = tr.d0, tr.d1
    d = d0 + d1
    ext = np.atleast_2d(np.asarray(a1_extension, dtype=float))

    def a(t, X):
        return field.a(t, np.atleast_2d(X)[:, :d])

    def b(t, X):
        X = np.atleast_2d(X)
        base = field.b_at(t, X[:, :d])
        extra = X[:, :d0] @ ext.T
        return np.concatenate([base, extra], axis=1)

    return CoefficientField(
        a=a, b=b, d=2 * d0, d0=d0,
        growth_constant=field.growth_constant + float(np.linalg.norm(ext, 2) ** 2),
        a_state_independent=field.a_state_independent,
        structure={"shape": "padded", "original_d": d},
    )


# --- built-in b'' catalog ---

def bsecond_catalog(name: str, d0: int, d1: int, a0=None, a1=None, a2=None,
                    amp: float = 0.02) -> tuple[BsecondMap, np.ndarray,
                                                np.ndarray, np.ndarray]:
    """Named drift blocks for harness configs.

    "linear": b'' = a0 s + A1 x' + A2 x''.  "quadratic": the linear form
    plus amp * (x' . x') in each component.  Returns (map, A0, A1, A2).
    """
    a0 = np.zeros((d1, 1)) if a0 is None else np.asarray(a0, float).reshape(d1, 1)
    a1 = np.eye(d1, d0) if a1 is None else np.atleast_2d(np.asarray(a1, float))
    a2 = np.zeros((d1, d1)) if a2 is None else np.atleast_2d(np.asarray(a2, float))
    d = d0 + d1

    def linear_value(t, X):
        X = np.atleast_2d(X)
        return t * a0.T + X[:, :d0] @ a1.T + X[:, d0:] @ a2.T

    if name == "linear":
        def value(t, X):
            return linear_value(t, X)

        def hess(t, X):
            return np.zeros((np.atleast_2d(X).shape[0], d1, d0, d0))

        def jac_xp(t, X):
            return np.broadcast_to(a1, (np.atleast_2d(X).shape[0], d1, d0))
    elif name == "quadratic":
        def value(t, X):
            X = np.atleast_2d(X)
            quad = amp * np.sum(X[:, :d0] ** 2, axis=1, keepdims=True)
            return linear_value(t, X) + quad

        def hess(t, X):
            X = np.atleast_2d(X)
            out = np.zeros((X.shape[0], d1, d0, d0))
            out[:] = 2.0 * amp * np.eye(d0)
            return out

        def jac_xp(t, X):
            X = np.atleast_2d(X)
            base = np.broadcast_to(a1, (X.shape[0], d1, d0)).copy()
            return base + 2.0 * amp * X[:, None, :d0]
    else:
        raise KeyError(f"unknown drift-block catalog entry {name!r}")

    bs = BsecondMap(
        value=value,
        jac_xprime=jac_xp,
        jac_xsecond=lambda t, X: np.broadcast_to(
            a2, (np.atleast_2d(X).shape[0], d1, d1)
        ),
        dt=lambda t, X: np.broadcast_to(
            a0.T, (np.atleast_2d(X).shape[0], d1)
        ).copy(),
        hess_xprime=hess,
        d0=d0,
        d1=d1,
    )
    return bs, a0, a1, a2


# --- smooth cutoff ---

def _psi(t):
    out = np.zeros_like(np.asarray(t, dtype=float))
    pos = t > 0
    out[pos] = np.exp(-1.0 / np.asarray(t, dtype=float)[pos])
    return out


def smoothstep(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    a = _psi(t)
    return a / (a + _psi(1.0 - t))


def eta_bump(z):
    """Smooth plateau: 1 on [-1, 1], 0 outside [-3, 3], |eta'| <= 1."""
    return 1.0 - smoothstep((np.abs(np.asarray(z, dtype=float)) - 1.0) / 2.0)


def _eta_prime(z):
    h = 1e-6
    return (eta_bump(z + h) - eta_bump(z - h)) / (2 * h)


@dataclass(frozen=True)
class ScalarField:
    """A C^1 scalar function of x with its gradient."""

    value: Callable
    gradient: Callable

    @classmethod
    def from_callable(cls, fn, step: float = 1e-6) -> "ScalarField":
        def grad(x):
            x = np.asarray(x, dtype=float)
            out = np.zeros_like(x)
            for i in range(x.size):
                e = np.zeros_like(x)
                e[i] = step
                out[i] = (fn(x + e) - fn(x - e)) / (2 * step)
            return out

        return cls(value=fn, gradient=grad)


@dataclass(frozen=True)
class CutoffFunction:
    """g = eta(|x - c|^2 / r^2) (f - affine) + affine; equals f near c."""

    base: ScalarField
    center: np.ndarray
    radius: float
    f_center: float
    grad_center: np.ndarray

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        dx = x - self.center
        affine = self.f_center + float(self.grad_center @ dx)
        z = float(dx @ dx) / self.radius ** 2
        eta = float(eta_bump(z))
        if eta == 0.0:
            return affine
        return affine + eta * (self.base.value(x) - affine)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        dx = x - self.center
        z = float(dx @ dx) / self.radius ** 2
        eta = float(eta_bump(z))
        if eta == 0.0 and abs(z) > 9.5:
            return self.grad_center.copy()
        tilde = self.base.value(x) - self.f_center - float(self.grad_center @ dx)
        dtilde = self.base.gradient(x) - self.grad_center
        deta = float(_eta_prime(z)) * 2.0 * dx / self.radius ** 2
        return self.grad_center + deta * tilde + eta * dtilde


def smooth_cutoff(fn: ScalarField, center, r: float, epsilon: float,
                  probe: int = 400, seed: int = 0) -> CutoffFunction:
    """Freeze fn's derivative outside a ball while keeping it near center.

    Returns g with g = fn on the ball of radius ``r_used`` around center
    and ||Dg(y) - Dfn(center)|| <= epsilon everywhere.  The radius shrinks
    by halving (at most 20 times) until the local smallness conditions
    hold on a probe sample; beyond that the function is not C^1-flat
    enough at this center and the construction fails.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    d = center.size
    f_c = float(fn.value(center))
    g_c = np.asarray(fn.gradient(center), dtype=float)
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((probe, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii_frac = rng.uniform(0.05, 1.0, size=probe)

    r_used = float(r)
    for _ in range(21):
        ok = True
        for u, frac in zip(dirs, radii_frac):
            x = center + 4.0 * r_used * frac * u
            dx = x - center
            tilde = fn.value(x) - f_c - float(g_c @ dx)
            dtilde = np.asarray(fn.gradient(x)) - g_c
            dist = float(np.linalg.norm(dx))
            if abs(tilde) > dist * epsilon / (64.0 * math.sqrt(d)) or (
                np.linalg.norm(dtilde) > epsilon / (2.0 * math.sqrt(d))
            ):
                ok = False
                break
        if ok:
            return CutoffFunction(
                base=fn, center=center, radius=r_used,
                f_center=f_c, grad_center=g_c,
            )
        r_used /= 2.0
    raise DerivativeBoundUnachievable(
        f"no radius down to {r / 2.0 ** 20:.3e} satisfies the local flatness "
        f"bounds for epsilon={epsilon}"
    )
