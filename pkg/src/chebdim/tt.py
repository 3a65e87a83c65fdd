"""Tensor-train tensors on Chebyshev grids.

Core ``k`` is stored as an array of shape ``(n_k, r_{k-1}, r_k)``: entry
``core[j]`` is the matrix ``C_k(j)``, so an entry of the tensor is the chain
product ``C_1(i_1) @ ... @ C_d(i_d)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cheb import ChebGrid, HyperRect
from .container import read_container, write_container

FULL_CAP = 10**6


@dataclass(frozen=True)
class TTTensor:
    cores: tuple[np.ndarray, ...]

    def __post_init__(self):
        cores = tuple(np.asarray(c, dtype=float) for c in self.cores)
        if not cores:
            raise ValueError("a TT tensor needs at least one core")
        for k, c in enumerate(cores):
            if c.ndim != 3:
                raise ValueError(f"core {k} must be 3-index (n, r_prev, r_next), got shape {c.shape}")
            c.setflags(write=False)
        if cores[0].shape[1] != 1 or cores[-1].shape[2] != 1:
            raise ValueError("boundary ranks must be r_0 = r_d = 1")
        for k in range(1, len(cores)):
            if cores[k - 1].shape[2] != cores[k].shape[1]:
                raise ValueError(f"rank mismatch between cores {k - 1} and {k}")
        object.__setattr__(self, "cores", cores)

    @property
    def ndim(self) -> int:
        return len(self.cores)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c.shape[0] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return (1,) + tuple(c.shape[2] for c in self.cores)

    @property
    def storage(self) -> int:
        return sum(c.size for c in self.cores)


def tt_entry(t: TTTensor, idx: Sequence[int]) -> float:
    if len(idx) != t.ndim:
        raise IndexError(f"expected {t.ndim} indices, got {len(idx)}")
    v = np.ones((1,))
    for k, (c, i) in enumerate(zip(t.cores, idx)):
        if not 0 <= i < c.shape[0]:
            raise IndexError(f"index {i} out of range for mode {k} of size {c.shape[0]}")
        v = v @ c[i]
    return float(v[0])


def tt_entries(t: TTTensor, idx: np.ndarray) -> np.ndarray:
    """Vectorised ``tt_entry`` over rows of an (m, d) integer array."""
    idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
    v = np.ones((idx.shape[0], 1))
    for k, c in enumerate(t.cores):
        v = np.einsum("ma,mab->mb", v, c[idx[:, k]])
    return v[:, 0]


def tt_inner(t1: TTTensor, t2: TTTensor) -> float:
    if t1.shape != t2.shape:
        raise ValueError(f"mode sizes differ: {t1.shape} vs {t2.shape}")
    # running (r1, r2) matrix of partial contractions
    m = np.ones((1, 1))
    for a, b in zip(t1.cores, t2.cores):
        m = np.einsum("pq,jpr,jqs->rs", m, a, b)
    return float(m[0, 0])


def tt_full(t: TTTensor, cap: int = FULL_CAP) -> np.ndarray:
    size = int(np.prod(t.shape, dtype=np.int64))
    if size > cap:
        raise ValueError(f"full tensor has {size} entries, above the cap of {cap}")
    v = t.cores[0].reshape(t.shape[0], -1)
    for c in t.cores[1:]:
        n, r0, r1 = c.shape
        v = (v @ c.transpose(1, 0, 2).reshape(r0, n * r1)).reshape(-1, r1)
    return v.reshape(t.shape)


def tt_contract(t: TTTensor, weights: Sequence[np.ndarray]) -> np.ndarray:
    """Contract each mode with per-point weight rows.

    ``weights[k]`` has shape (m, n_k); the result is one value per point.
    Left to right, so the running state is an (m, r_k) block of row vectors.
    """
    v = None
    for w, c in zip(weights, t.cores):
        n, r0, r1 = c.shape
        if v is None:
            v = w @ c.reshape(n, r1)
        else:
            # sum_j w[m, j] * v[m, a] * c[j, a, b]
            tmp = (w @ c.reshape(n, r0 * r1)).reshape(-1, r0, r1)
            v = np.einsum("ma,mab->mb", v, tmp)
    return v[:, 0]


def tt_eval_cheb(t: TTTensor, grid: ChebGrid, x) -> np.ndarray | float:
    """Chebyshev interpolant of the TT values at point(s) ``x``."""
    if t.shape != grid.shape:
        raise ValueError(f"tensor shape {t.shape} does not match grid {grid.shape}")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != grid.ndim:
        raise ValueError(f"points have {x.shape[1]} coordinates, grid has {grid.ndim}")
    ws = [grid.weight_matrix(k, x[:, k]) for k in range(grid.ndim)]
    out = tt_contract(t, ws)
    return float(out[0]) if single else out


def tt_svd(values: np.ndarray, max_rank: int = 10**9, tol: float = 1e-12) -> TTTensor:
    """TT-SVD sweep with singular-value cutoff ``tol * sigma_max(first unfolding)``.

    Raises ``ValueError`` if the rank cap forces a relative Frobenius error
    above ``tol``.
    """
    a = np.asarray(values, dtype=float)
    shape = a.shape
    d = a.ndim
    cutoff = None
    cores = []
    r_prev = 1
    rest = a.reshape(shape[0], -1)
    for k in range(d - 1):
        rest = rest.reshape(r_prev * shape[k], -1)
        u, s, vt = np.linalg.svd(rest, full_matrices=False)
        if cutoff is None:
            cutoff = tol * (s[0] if s.size else 0.0)
        r = max(1, int(np.sum(s > cutoff)))
        r = min(r, max_rank)
        cores.append(u[:, :r].reshape(r_prev, shape[k], r).transpose(1, 0, 2))
        rest = s[:r, None] * vt[:r]
        r_prev = r
    cores.append(rest.reshape(r_prev, shape[-1], 1).transpose(1, 0, 2))
    t = TTTensor(tuple(cores))
    norm = np.linalg.norm(a)
    if norm > 0:
        err = np.linalg.norm(tt_full(t, cap=max(FULL_CAP, a.size)) - a) / norm
        if err > max(tol, 1e-14):
            raise ValueError(f"TT-SVD residual {err:.3e} exceeds tol {tol:.1e} at max_rank={max_rank}")
    return t


def save_tensor(path, t: TTTensor, grid: ChebGrid, extra: dict | None = None) -> None:
    meta = {
        "shape": list(t.shape),
        "ranks": list(t.ranks),
        "domain": grid.domain.bounds(),
        "points_per_dim": list(grid.points_per_dim),
    }
    if extra:
        meta["extra"] = extra
    write_container(path, "tt-tensor", meta, {f"core{k:03d}": c for k, c in enumerate(t.cores)})


def load_tensor(path) -> tuple[TTTensor, ChebGrid, dict]:
    meta, arrays = read_container(path, kind="tt-tensor")
    cores = tuple(arrays[f"core{k:03d}"] for k in range(len(meta["shape"])))
    grid = ChebGrid(HyperRect.from_bounds(meta["domain"]), tuple(meta["points_per_dim"]))
    return TTTensor(cores), grid, meta.get("extra", {})
