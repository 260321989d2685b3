"""Homogeneous group attached to a nilpotent block drift matrix.

The drift matrix B is zero except for full-rank blocks on the first
sub-diagonal block row.  It induces a group law on R x R^d,

    (s, x) o (t, y) = (s + t, e^{tB} x + y),

anisotropic dilations diag(lam^2, lam I, lam^3 I, ...), and the gauge
norm used by all singular-integral geometry downstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    NonIncreasingViolation,
    NonPositiveLambda,
    NonZeroOutsideBlocks,
    RankDeficientBlock,
)

ZERO_TOL = 1e-14
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class GroupPoint:
    """A point (s, x) of R x R^d: time plus spatial state."""

    s: float
    x: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if not (np.isfinite(self.s) and np.all(np.isfinite(x))):
            raise ValueError("group point must have finite entries")
        x.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "s", float(self.s))

    @property
    def d(self) -> int:
        return self.x.shape[0]

    def as_vector(self) -> np.ndarray:
        """The point as a (1+d,) array with time first."""
        return np.concatenate(([self.s], self.x))


@dataclass(frozen=True)
class StructuralMatrix:
    """A validated drift matrix with its block layout.

    Use :func:`validate_structure` to build one; the constructor does not
    re-check the invariants.
    """

    matrix: np.ndarray
    block_dims: tuple[int, ...]

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        """Number of sub-diagonal blocks (nilpotency degree is n + 1)."""
        return len(self.block_dims) - 1

    @property
    def d0(self) -> int:
        return self.block_dims[0]

    @property
    def dbar(self) -> int:
        """Homogeneous dimension: 2 + sum_i (2i+1) d_i."""
        return 2 + sum((2 * i + 1) * di for i, di in enumerate(self.block_dims))

    @cached_property
    def powers(self) -> tuple[np.ndarray, ...]:
        """Cached B^0 .. B^n (all higher powers vanish)."""
        out = [np.eye(self.d)]
        for _ in range(self.n):
            out.append(out[-1] @ self.matrix)
        for p in out:
            p.flags.writeable = False
        return tuple(out)

    @cached_property
    def weights(self) -> np.ndarray:
        """Dilation exponents on R^{1+d}: 2 for time, 2i+1 on block i."""
        w = [2.0]
        for i, di in enumerate(self.block_dims):
            w.extend([2.0 * i + 1.0] * di)
        w = np.array(w)
        w.flags.writeable = False
        return w

    def matrix_exp(self, t: float) -> np.ndarray:
        """e^{tB} by the terminating nilpotent series (exact up to rounding)."""
        out = np.zeros((self.d, self.d))
        coeff = 1.0
        for k, p in enumerate(self.powers):
            if k > 0:
                coeff *= t / k
            out += coeff * p
        return out

    def compose(self, p: GroupPoint, q: GroupPoint) -> GroupPoint:
        """(s,x) o (t,y) = (s+t, e^{tB} x + y)."""
        self._check_point(p)
        self._check_point(q)
        return GroupPoint(p.s + q.s, self.matrix_exp(q.s) @ p.x + q.x)

    def inverse(self, p: GroupPoint) -> GroupPoint:
        """(s,x)^{-1} = (-s, -e^{-sB} x)."""
        self._check_point(p)
        return GroupPoint(-p.s, -(self.matrix_exp(-p.s) @ p.x))

    def dilation_matrix(self, lam: float) -> np.ndarray:
        """diag(lam^2, lam I^{d_0}, lam^3 I^{d_1}, ...) on R^{1+d}."""
        if lam <= 0:
            raise NonPositiveLambda(f"dilation parameter must be positive, got {lam}")
        return np.diag(lam ** self.weights)

    def spatial_dilation_matrix(self, lam: float) -> np.ndarray:
        """The dilation with the time row and column removed (acts on R^d)."""
        if lam <= 0:
            raise NonPositiveLambda(f"dilation parameter must be positive, got {lam}")
        return np.diag(lam ** self.weights[1:])

    def dilate(self, lam: float, p: GroupPoint) -> GroupPoint:
        if lam <= 0:
            raise NonPositiveLambda(f"dilation parameter must be positive, got {lam}")
        self._check_point(p)
        return GroupPoint(lam ** 2 * p.s, (lam ** self.weights[1:]) * p.x)

    def homogeneous_norm(self, p: GroupPoint, tol: float = 1e-12) -> float:
        """The gauge inf{lam > 0 : |dilate(1/lam, p)| <= 1}.

        The map lam -> |dilate(1/lam, p)| is strictly decreasing, so the
        infimum is the unique root of |dilate(1/lam, p)| = 1, found by
        bisection to absolute tolerance ``tol``.  Returns 0 at the origin.
        """
        self._check_point(p)
        v = p.as_vector()
        if not np.any(v):
            return 0.0
        w = self.weights

        def gauge(lam: float) -> float:
            return float(np.linalg.norm(v / lam ** w))

        # Bracket from the single-coordinate solutions, then widen.
        lam = float(np.max(np.abs(v) ** (1.0 / w)))
        lam = max(lam, np.finfo(float).tiny)
        lo, hi = lam, lam
        while gauge(lo) < 1.0:
            lo /= 2.0
        while gauge(hi) > 1.0:
            hi *= 2.0
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if gauge(mid) > 1.0:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def _check_point(self, p: GroupPoint) -> None:
        if p.d != self.d:
            raise DimensionMismatch(
                f"point has dimension {p.d}, structural matrix expects {self.d}"
            )

    # --- serialization ---

    def to_json(self) -> dict:
        """JSON object {"dims": [...], "blocks": [...]} reconstructing B exactly."""
        blocks = []
        row = self.block_dims[0]
        col = 0
        for i in range(1, len(self.block_dims)):
            di, dprev = self.block_dims[i], self.block_dims[i - 1]
            blocks.append(self.matrix[row:row + di, col:col + dprev].tolist())
            row += di
            col += dprev
        return {"dims": list(self.block_dims), "blocks": blocks}

    @staticmethod
    def from_json(obj: dict) -> "StructuralMatrix":
        dims = [int(v) for v in obj["dims"]]
        d = sum(dims)
        B = np.zeros((d, d))
        row = dims[0]
        col = 0
        for i, blk in enumerate(obj["blocks"]):
            di, dprev = dims[i + 1], dims[i]
            B[row:row + di, col:col + dprev] = np.asarray(blk, dtype=float)
            row += di
            col += dprev
        return validate_structure(B, dims)


def validate_structure(B: np.ndarray, block_dims: Sequence[int]) -> StructuralMatrix:
    """Check the block layout of B and return the validated structure.

    Requirements: ``block_dims`` is a nonincreasing sequence of positive
    integers summing to the matrix dimension, B vanishes outside the first
    sub-diagonal block row, each block has full row rank, and B^{n+1} = 0.
    """
    B = np.asarray(B, dtype=float)
    dims = tuple(int(v) for v in block_dims)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {B.shape}")
    if not dims or any(v <= 0 for v in dims):
        raise DimensionMismatch(f"block dimensions must be positive, got {dims}")
    if sum(dims) != B.shape[0]:
        raise DimensionMismatch(
            f"block dimensions {dims} sum to {sum(dims)}, matrix has size {B.shape[0]}"
        )
    if any(dims[i + 1] > dims[i] for i in range(len(dims) - 1)):
        raise NonIncreasingViolation(f"block dimensions must be nonincreasing, got {dims}")

    offsets = np.concatenate(([0], np.cumsum(dims)))
    mask = np.zeros_like(B, dtype=bool)
    for i in range(1, len(dims)):
        mask[offsets[i]:offsets[i + 1], offsets[i - 1]:offsets[i]] = True
    stray = np.max(np.abs(np.where(mask, 0.0, B))) if B.size else 0.0
    if stray > ZERO_TOL:
        raise NonZeroOutsideBlocks(
            f"entries outside the sub-diagonal blocks reach {stray:.3e} (tol {ZERO_TOL})"
        )

    for i in range(1, len(dims)):
        blk = B[offsets[i]:offsets[i + 1], offsets[i - 1]:offsets[i]]
        sv = np.linalg.svd(blk, compute_uv=False)
        if sv[-1] <= RANK_RTOL * sv[0] or sv[0] == 0.0:
            raise RankDeficientBlock(
                f"block {i} has singular values {sv}; needs rank {dims[i]}"
            )

    sm = StructuralMatrix(matrix=_frozen(B), block_dims=dims)
    nilp = sm.powers[-1] @ B
    if np.max(np.abs(nilp)) > ZERO_TOL:
        raise NonZeroOutsideBlocks(
            f"B^{sm.n + 1} is not zero (max entry {np.max(np.abs(nilp)):.3e})"
        )
    return sm


def kolmogorov_matrix(d0: int = 1, n_blocks: int = 2) -> StructuralMatrix:
    """The chain structure with identity blocks: d = n_blocks * d0.

    ``n_blocks=2, d0=1`` gives the classical [[0,0],[1,0]] example.
    """
    d = n_blocks * d0
    B = np.zeros((d, d))
    for i in range(1, n_blocks):
        B[i * d0:(i + 1) * d0, (i - 1) * d0:i * d0] = np.eye(d0)
    return validate_structure(B, (d0,) * n_blocks)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a
