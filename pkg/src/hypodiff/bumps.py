"""Smooth localized test functions with analytic derivatives.

These play the role of the compactly supported f in operator checks and
Monte Carlo functionals.  A hard zero beyond ``cutoff`` widths makes the
declared support exact; the seam value ~exp(-cutoff^2/2) is below double
rounding for the default cutoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quadrature import gl_nodes, tensor_from_axes


@dataclass(frozen=True)
class SmoothBump:
    """Separable Gaussian bump A exp(-(t-t0)^2/2wt^2 - sum (x-c)^2/2w^2)."""

    center: np.ndarray
    widths: np.ndarray
    t_center: float = 0.0
    t_width: float = np.inf
    amplitude: float = 1.0
    cutoff: float = 8.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, float)))
        object.__setattr__(self, "widths", np.atleast_1d(np.asarray(self.widths, float)))
        if self.widths.shape != self.center.shape or np.any(self.widths <= 0):
            raise ValueError("widths must be positive and match the center shape")

    @property
    def d(self) -> int:
        return self.center.shape[0]

    @property
    def support_time(self) -> tuple[float, float]:
        if not np.isfinite(self.t_width):
            return (-np.inf, np.inf)
        return (self.t_center - self.cutoff * self.t_width,
                self.t_center + self.cutoff * self.t_width)

    @property
    def support_box(self) -> tuple[np.ndarray, np.ndarray]:
        r = self.cutoff * self.widths
        return self.center - r, self.center + r

    def _mask(self, t: float, z: np.ndarray) -> np.ndarray:
        m = np.all(np.abs(z) <= self.cutoff, axis=-1)
        lo, hi = self.support_time
        if not lo <= t <= hi:
            return np.zeros_like(m, dtype=bool)
        return m

    def value(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = (x - self.center) / self.widths
        arg = -0.5 * np.sum(z * z, axis=-1)
        if np.isfinite(self.t_width):
            arg = arg - 0.5 * ((t - self.t_center) / self.t_width) ** 2
        return np.where(self._mask(t, z), self.amplitude * np.exp(arg), 0.0)

    def dt(self, t: float, x: np.ndarray) -> np.ndarray:
        if not np.isfinite(self.t_width):
            return np.zeros(np.shape(x)[:-1])
        return -(t - self.t_center) / self.t_width ** 2 * self.value(t, x)

    def gradient(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return -(x - self.center) / self.widths ** 2 * self.value(t, x)[..., None]

    def hessian(self, t: float, x: np.ndarray) -> np.ndarray:
        """Spatial Hessian, shape x.shape[:-1] + (d, d)."""
        x = np.asarray(x, dtype=float)
        u = (x - self.center) / self.widths ** 2
        outer = u[..., :, None] * u[..., None, :]
        diag = np.diag(1.0 / self.widths ** 2)
        return (outer - diag) * self.value(t, x)[..., None, None]

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.value(t, x)


@dataclass(frozen=True)
class SpaceTimeFunction:
    """Wrap a plain callable f(t, x_batch) -> values as a test function."""

    fn: object
    support_time: tuple[float, float] = (-np.inf, np.inf)
    support_box: object = None

    def value(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(t, x), dtype=float)

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.value(t, x)


def as_test_function(f):
    if hasattr(f, "value"):
        return f
    return SpaceTimeFunction(fn=f)


def lp_norm(f, p: float, time_interval: tuple[float, float],
            radii, nodes: int = 48) -> float:
    """||f||_{L^p} over [t0,t1] x prod [-r_i, r_i] by tensor Gauss-Legendre."""
    f = as_test_function(f)
    t0, t1 = time_interval
    lo, hi = f.support_time if hasattr(f, "support_time") else (-np.inf, np.inf)
    t0, t1 = max(t0, lo), min(t1, hi)
    if t1 <= t0:
        return 0.0
    tn, tw = gl_nodes(t0, t1, nodes)
    axes = [gl_nodes(-r, r, nodes) for r in np.atleast_1d(radii)]
    pts, wts = tensor_from_axes(axes)
    acc = 0.0
    for t, w in zip(tn, tw):
        acc += w * float(np.abs(f.value(t, pts)) ** p @ wts)
    return acc ** (1.0 / p)
