"""Chebyshev points, domain mapping and barycentric interpolation.

Points follow the extrema convention ``x_j = cos(j*pi/n)``, ``j = 0..n``, so
they are listed in decreasing order and include both interval endpoints.
Interpolants are evaluated in the second (true) barycentric form, which is
exact at the nodes and factors into one weight vector per dimension. That
factorisation is what lets :mod:`chebdim.tt` contract a tensor-train core by
core.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

#: Points closer than this (relative to the interval width) are clamped.
CLAMP_TOL = 1e-9


class DomainError(ValueError):
    """A coordinate falls outside an approximation domain."""

    def __init__(self, message: str, dim: int | None = None, value: float | None = None):
        super().__init__(message)
        self.dim = dim
        self.value = value


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError(f"interval bounds must be finite, got [{lo}, {hi}]")
        if not lo < hi:
            raise ValueError(f"interval needs lo < hi, got [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.hi - self.lo)

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class HyperRect:
    intervals: tuple[Interval, ...]

    def __post_init__(self):
        ivs = tuple(self.intervals)
        if len(ivs) < 1:
            raise ValueError("a hyper-rectangle needs at least one dimension")
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def from_bounds(cls, bounds: Sequence[Sequence[float]]) -> "HyperRect":
        return cls(tuple(Interval(lo, hi) for lo, hi in bounds))

    @property
    def ndim(self) -> int:
        return len(self.intervals)

    @property
    def lo(self) -> np.ndarray:
        return np.array([iv.lo for iv in self.intervals])

    @property
    def hi(self) -> np.ndarray:
        return np.array([iv.hi for iv in self.intervals])

    def bounds(self) -> list[list[float]]:
        return [[iv.lo, iv.hi] for iv in self.intervals]

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)


def cheb_points(n: int, iv: Interval = Interval(-1.0, 1.0)) -> np.ndarray:
    """Return the ``n + 1`` Chebyshev extrema mapped onto ``iv``.

    ``x[0] == iv.hi`` and ``x[n] == iv.lo`` exactly.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 Chebyshev intervals, got {n}")
    j = np.arange(n + 1)
    # sin form is symmetric about the midpoint, so x[n/2] is an exact zero.
    u = np.sin(np.pi * (n - 2 * j) / (2 * n))
    x = iv.mid + iv.half_width * u
    x[0], x[-1] = iv.hi, iv.lo
    return x


def _check_unit(u: np.ndarray, tol: float, dim: int | None) -> np.ndarray:
    bad = np.abs(u) > 1.0 + 2.0 * tol
    if np.any(bad):
        v = float(np.asarray(u)[bad].flat[0])
        raise DomainError(f"coordinate maps to {v:.12g} outside [-1, 1]"
                          + (f" in dimension {dim}" if dim is not None else ""), dim, v)
    return np.clip(u, -1.0, 1.0)


def to_unit(x, iv: Interval, tol: float = CLAMP_TOL, dim: int | None = None):
    """Affine map of ``iv`` onto ``[-1, 1]``; values within ``tol`` are clamped."""
    u = (np.asarray(x, dtype=float) - iv.mid) / iv.half_width
    out = _check_unit(u, tol, dim)
    return float(out) if np.ndim(out) == 0 else out


def from_unit(u, iv: Interval, tol: float = CLAMP_TOL):
    u = _check_unit(np.asarray(u, dtype=float), tol, None)
    x = iv.mid + iv.half_width * u
    x = np.where(u == 1.0, iv.hi, np.where(u == -1.0, iv.lo, x))
    return float(x) if np.ndim(x) == 0 else x


def bary_weights(n: int) -> np.ndarray:
    """Barycentric weights for the ``n + 1`` Chebyshev extrema."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    w = np.where(np.arange(n + 1) % 2 == 0, 1.0, -1.0)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def eval_bary_1d(values, points, weights, x) -> float:
    values = np.asarray(values, dtype=float)
    points = np.asarray(points, dtype=float)
    weights = np.asarray(weights, dtype=float)
    diff = x - points
    hit = np.flatnonzero(diff == 0.0)
    if hit.size:
        return float(values[hit[0]])
    with np.errstate(over="ignore"):
        c = weights / diff
    if not np.all(np.isfinite(c)):
        # subnormal distance to a node
        return float(values[np.argmin(np.abs(diff))])
    return float(c @ values / c.sum())


def bary_matrix(points: np.ndarray, weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Rows of barycentric basis values, one row per entry of ``x``.

    ``bary_matrix(...) @ values`` evaluates the interpolant at every ``x``.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    diff = x[:, None] - points[None, :]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        c = weights[None, :] / diff
        rows = c / c.sum(axis=1, keepdims=True)
    # exact hits and subnormal distances both snap to the nearest node
    on_node = ~np.all(np.isfinite(c), axis=1)
    if np.any(on_node):
        nearest = np.argmin(np.abs(diff[on_node]), axis=1)
        rows[on_node] = 0.0
        rows[np.flatnonzero(on_node), nearest] = 1.0
    return rows


@dataclass(frozen=True)
class ChebGrid:
    """Tensor-product Chebyshev grid; ``points_per_dim[i]`` counts nodes."""

    domain: HyperRect
    points_per_dim: tuple[int, ...]
    _nodes: tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)
    _weights: tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ppd = tuple(int(m) for m in self.points_per_dim)
        if len(ppd) != self.domain.ndim:
            raise ValueError(f"{len(ppd)} point counts for a {self.domain.ndim}-dim domain")
        if any(m < 2 for m in ppd):
            raise ValueError(f"every dimension needs at least 2 points, got {ppd}")
        object.__setattr__(self, "points_per_dim", ppd)
        object.__setattr__(self, "_nodes", tuple(
            cheb_points(m - 1, iv) for m, iv in zip(ppd, self.domain.intervals)))
        object.__setattr__(self, "_weights", tuple(bary_weights(m - 1) for m in ppd))

    @property
    def ndim(self) -> int:
        return len(self.points_per_dim)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points_per_dim

    @cached_property
    def size(self) -> int:
        return int(np.prod(self.points_per_dim, dtype=np.int64))

    def nodes(self, dim: int) -> np.ndarray:
        return self._nodes[dim]

    def weights(self, dim: int) -> np.ndarray:
        return self._weights[dim]

    def coords(self, idx) -> np.ndarray:
        """Model-space coordinates of integer multi-indices, shape (m, d)."""
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        return np.stack([self._nodes[k][idx[:, k]] for k in range(self.ndim)], axis=1)

    def clamp(self, x) -> np.ndarray:
        """Clamp points into the domain, rejecting anything beyond tolerance."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        for k, iv in enumerate(self.domain.intervals):
            u = to_unit(x[:, k], iv, dim=k)
            out[:, k] = np.where(u >= 1.0, iv.hi, np.where(u <= -1.0, iv.lo, x[:, k]))
        return out

    def weight_matrix(self, dim: int, x) -> np.ndarray:
        """Per-point contraction vectors for one dimension, shape (m, n_dim)."""
        iv = self.domain.intervals[dim]
        x = np.asarray(x, dtype=float).reshape(-1)
        u = np.atleast_1d(to_unit(x, iv, dim=dim))
        xc = np.where(u >= 1.0, iv.hi, np.where(u <= -1.0, iv.lo, x))
        return bary_matrix(self._nodes[dim], self._weights[dim], xc)


def weight_vector(grid: ChebGrid, dim: int, x_d: float) -> np.ndarray:
    return grid.weight_matrix(dim, [x_d])[0]


def interpolate_dense(values: np.ndarray, grid: ChebGrid, x) -> np.ndarray:
    """Tensor-product interpolant of a full value array at points ``x`` (m, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.empty(x.shape[0])
    for i, pt in enumerate(x):
        v = values
        for k in range(grid.ndim):
            v = np.tensordot(grid.weight_matrix(k, [pt[k]])[0], v, axes=(0, 0))
        out[i] = v
    return out
