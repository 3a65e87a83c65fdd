"""Build TT Chebyshev tensors from a random subset of grid evaluations.

Three nested layers:

* :func:`complete_fixed_rank` fits a TT of fixed rank to training samples by
  alternating least squares over cores (left-right-left sweeps, QR moves
  between blocks) and stops on the held-out test error.
* :func:`rank_adaptive` reruns it with all internal ranks raised by one until
  the test target is met or ``max_rank`` is reached.
* :func:`sample_adaptive` grows the sample set when rank adaptation fails,
  never re-evaluating a grid point and never exceeding the evaluation budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .cheb import ChebGrid
from .tt import TTTensor, tt_entries


class CompletionError(RuntimeError):
    pass


class NonFiniteSampleError(CompletionError):
    def __init__(self, point, value):
        super().__init__(f"black-box returned {value!r} at grid point {list(map(float, point))}")
        self.point = np.asarray(point)
        self.value = value


@dataclass(frozen=True)
class CompletionConfig:
    initial_rank: int = 1
    max_rank: int = 6
    initial_train: int = 300
    initial_test: int = 50
    max_evaluations: int = 1000
    target_error: float = 5e-3
    max_sweeps: int = 60
    seed: int = 0
    stagnation_tol: float = 1e-4
    # "max": max relative error on the test set; "rms": relative l2 error
    error_metric: str = "max"
    growth: float = 1.5
    # "spectral": truncated TT-SVD of the mean-imputed sample tensor
    # (falls back to "random" on grids above SPECTRAL_MAX); "random": N(0,1)/sqrt(r)
    init: str = "spectral"
    # ranks beyond the first are only fitted once n_train >= oversampling * dof;
    # a smaller training set cannot pin them down and the test set may miss it
    oversampling: float = 1.0

    def __post_init__(self):
        if self.initial_rank < 1 or self.max_rank < self.initial_rank:
            raise ValueError("need 1 <= initial_rank <= max_rank")
        if self.initial_train < 1 or self.initial_test < 1:
            raise ValueError("need at least one training and one test sample")
        if self.initial_train + self.initial_test > self.max_evaluations:
            raise ValueError("initial_train + initial_test exceeds max_evaluations")
        if not self.target_error > 0:
            raise ValueError("target_error must be positive")
        if self.error_metric not in ("max", "rms"):
            raise ValueError(f"unknown error metric {self.error_metric!r}")
        if self.init not in ("spectral", "random"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.oversampling < 0:
            raise ValueError("oversampling must be nonnegative")
        if self.growth <= 1.0:
            raise ValueError("growth factor must exceed 1")


@dataclass
class SampleSet:
    train_idx: np.ndarray
    train_val: np.ndarray
    test_idx: np.ndarray
    test_val: np.ndarray

    @property
    def n_train(self) -> int:
        return len(self.train_val)

    @property
    def n_test(self) -> int:
        return len(self.test_val)

    @property
    def size(self) -> int:
        return self.n_train + self.n_test


@dataclass
class CompletionReport:
    tensor: TTTensor
    train_error: float
    test_error: float
    evaluations_used: int
    final_rank: tuple[int, ...]
    sweeps: int
    converged: bool
    history: list[float] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        return {
            "train_error": self.train_error,
            "test_error": self.test_error,
            "evaluations_used": self.evaluations_used,
            "final_rank": list(self.final_rank),
            "sweeps": self.sweeps,
            "converged": self.converged,
        }


def relative_error(pred: np.ndarray, truth: np.ndarray, scale: float, metric: str = "max") -> float:
    """Relative error with denominator ``max(|truth|, 1e-8 * scale)``.

    ``scale`` is the largest absolute training value. An all-zero scale falls
    back to absolute error.
    """
    if len(truth) == 0:
        return 0.0
    diff = np.abs(pred - truth)
    if metric == "rms":
        den = np.linalg.norm(truth)
        return float(np.linalg.norm(diff) / den) if den > 0 else float(np.linalg.norm(diff))
    floor = 1e-8 * scale
    den = np.maximum(np.abs(truth), floor) if floor > 0 else np.ones_like(truth)
    return float(np.max(diff / den))


class _IndexStream:
    """Deterministic stream of distinct flat grid indices."""

    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.rng = rng
        self.pos = 0
        if size <= 5_000_000:
            self.perm = rng.permutation(size)
            self.seen = None
        else:
            self.perm = None
            self.seen: set[int] = set()

    def take(self, k: int) -> np.ndarray:
        if k > self.size - self.pos:
            raise ValueError(f"only {self.size - self.pos} unused grid points remain, asked for {k}")
        if self.perm is not None:
            out = self.perm[self.pos:self.pos + k]
        else:
            out = []
            while len(out) < k:
                cand = int(self.rng.integers(self.size))
                if cand not in self.seen:
                    self.seen.add(cand)
                    out.append(cand)
            out = np.array(out, dtype=np.int64)
        self.pos += k
        return out


def _evaluate(f: Callable, grid: ChebGrid, flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    idx = np.stack(np.unravel_index(flat, grid.shape), axis=1).astype(np.int64)
    x = grid.coords(idx)
    vals = np.asarray(f(x), dtype=float).reshape(-1)
    if vals.shape[0] != len(flat):
        raise CompletionError(f"black-box returned {vals.shape[0]} values for {len(flat)} points")
    bad = ~np.isfinite(vals)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise NonFiniteSampleError(x[i], vals[i])
    return idx, vals


def sample_grid(grid: ChebGrid, f: Callable, n_train: int, n_test: int, seed: int) -> SampleSet:
    """Evaluate ``f`` on ``n_train + n_test`` distinct random grid nodes.

    ``f`` maps an (m, d) array of model-space points to m values.
    """
    if n_train + n_test > grid.size:
        raise ValueError(f"requested {n_train + n_test} samples from a grid of {grid.size}")
    stream = _IndexStream(grid.size, np.random.default_rng(seed))
    flat = stream.take(n_train + n_test)
    idx, vals = _evaluate(f, grid, flat)
    return SampleSet(idx[:n_train], vals[:n_train], idx[n_train:], vals[n_train:])


# ----------------------------------------------------------------------
# fixed-rank alternating least squares
# ----------------------------------------------------------------------

def feasible_ranks(shape: tuple[int, ...], rank: int) -> tuple[int, ...]:
    """Uniform internal rank ``rank`` clipped to what the mode sizes allow."""
    d = len(shape)
    out = [1]
    for k in range(1, d):
        left = math.prod(shape[:k])
        right = math.prod(shape[k:])
        out.append(min(rank, left, right))
    out.append(1)
    return tuple(out)


def tt_dof(shape, ranks) -> int:
    """Free parameters of a TT with these ranks (core entries minus gauge)."""
    cores = sum(n * ranks[k] * ranks[k + 1] for k, n in enumerate(shape))
    return cores - sum(r * r for r in ranks[1:-1])


def _check_ranks(shape, ranks):
    d = len(shape)
    if len(ranks) != d + 1 or ranks[0] != 1 or ranks[-1] != 1:
        raise ValueError(f"ranks {ranks} invalid for {d} modes")
    for k in range(1, d):
        if ranks[k] < 1 or ranks[k] > min(math.prod(shape[:k]), math.prod(shape[k:])):
            raise ValueError(f"rank r_{k} = {ranks[k]} is infeasible for mode sizes {shape}")
    for k in range(d):
        if ranks[k + 1] > shape[k] * ranks[k] or ranks[k] > shape[k] * ranks[k + 1]:
            raise ValueError(f"ranks {ranks} are inconsistent at mode {k} of size {shape[k]}")


def random_tt(shape, ranks, rng: np.random.Generator) -> TTTensor:
    cores = []
    for k, n in enumerate(shape):
        r0, r1 = ranks[k], ranks[k + 1]
        cores.append(rng.standard_normal((n, r0, r1)) / math.sqrt(max(r0, r1)))
    return TTTensor(tuple(cores))


SPECTRAL_MAX = 2_000_000


def _svd_to_ranks(full: np.ndarray, ranks) -> TTTensor:
    """Left-to-right TT-SVD truncated to the given ranks (no error check)."""
    shape = full.shape
    d = len(shape)
    cores = []
    r_prev = 1
    rest = full.reshape(1, -1)
    for k in range(d - 1):
        mat = rest.reshape(r_prev * shape[k], -1)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        r = min(ranks[k + 1], len(s))
        cores.append(u[:, :r].reshape(r_prev, shape[k], r).transpose(1, 0, 2))
        rest = s[:r, None] * vt[:r]
        r_prev = r
    cores.append(rest.reshape(r_prev, shape[-1], 1).transpose(1, 0, 2))
    return TTTensor(tuple(cores))


def spectral_tt(shape, ranks, idx: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> TTTensor:
    """Deterministic start: truncated TT-SVD of the mean-imputed sample tensor.

    Unsampled entries take the sample mean, so smooth functions start near
    their constant component even at sub-percent sampling density. Ranks the
    SVD cannot reach are padded with small random entries.
    """
    fill = np.full(shape, float(np.mean(y)))
    fill[tuple(idx.T)] = y
    t = _svd_to_ranks(fill, ranks)
    if t.ranks != tuple(ranks):
        t = _pad_tt(t, ranks, rng)
    return t


def _pad_tt(t: TTTensor, ranks, rng: np.random.Generator, eps: float = 1e-3) -> TTTensor:
    """Embed ``t`` into larger ranks; new entries are small random numbers."""
    cores = []
    for k, c in enumerate(t.cores):
        n, r0, r1 = c.shape
        R0, R1 = ranks[k], ranks[k + 1]
        scale = eps * (np.max(np.abs(c)) or 1.0)
        new = scale * rng.standard_normal((n, R0, R1))
        new[:, :r0, :r1] = c
        cores.append(new)
    return TTTensor(tuple(cores))


class _ALS:
    def __init__(self, cores: list[np.ndarray], idx: np.ndarray, y: np.ndarray):
        self.cores = [np.array(c) for c in cores]
        self.idx = idx
        self.y = y
        self.d = len(cores)
        self.masks = [[np.flatnonzero(idx[:, k] == j) for j in range(c.shape[0])]
                      for k, c in enumerate(self.cores)]

    def _right_stack(self) -> list[np.ndarray]:
        m = len(self.y)
        right = [None] * (self.d + 1)
        right[self.d] = np.ones((m, 1))
        for k in range(self.d - 1, 0, -1):
            right[k] = np.einsum("mab,mb->ma", self.cores[k][self.idx[:, k]], right[k + 1])
        return right

    def _solve_core(self, k: int, left: np.ndarray, right: np.ndarray) -> None:
        n, r0, r1 = self.cores[k].shape
        design = (left[:, :, None] * right[:, None, :]).reshape(len(self.y), r0 * r1)
        new = np.empty((n, r0 * r1))
        p = r0 * r1
        for j, rows in enumerate(self.masks[k]):
            a = design[rows]
            g = a.T @ a
            lam = 1e-10 * np.trace(g) / p
            if lam == 0.0:
                lam = 1e-300
            rhs = a.T @ self.y[rows]
            reg = g + lam * np.eye(p)
            try:
                x = np.linalg.solve(reg, rhs)
                # refinement removes the O(lam) shrinkage on well-posed blocks
                for _ in range(2):
                    x = x + np.linalg.solve(reg, rhs - g @ x)
            except np.linalg.LinAlgError:
                x = np.linalg.lstsq(reg, rhs, rcond=None)[0]
            new[j] = x
        self.cores[k] = new.reshape(n, r0, r1)

    def _qr_right(self, k: int) -> None:
        """Left-orthogonalise core k and push the R factor into core k+1."""
        n, r0, r1 = self.cores[k].shape
        q, r = np.linalg.qr(self.cores[k].reshape(n * r0, r1))
        rr = q.shape[1]
        self.cores[k] = q.reshape(n, r0, rr)
        self.cores[k + 1] = np.einsum("ab,jbc->jac", r, self.cores[k + 1])

    def _qr_left(self, k: int) -> None:
        """Right-orthogonalise core k and push the factor into core k-1."""
        n, r0, r1 = self.cores[k].shape
        mat = self.cores[k].transpose(1, 0, 2).reshape(r0, n * r1)
        q, r = np.linalg.qr(mat.T)
        rr = q.shape[1]
        self.cores[k] = q.T.reshape(rr, n, r1).transpose(1, 0, 2)
        self.cores[k - 1] = np.einsum("jab,cb->jac", self.cores[k - 1], r)

    def sweep(self) -> None:
        m = len(self.y)
        right = self._right_stack()
        left = np.ones((m, 1))
        for k in range(self.d):
            self._solve_core(k, left, right[k + 1])
            if k < self.d - 1:
                self._qr_right(k)
                left = np.einsum("ma,mab->mb", left, self.cores[k][self.idx[:, k]])
        if self.d == 1:
            return
        # back sweep; left stacks rebuilt from scratch
        lefts = [np.ones((m, 1))]
        for k in range(self.d - 1):
            lefts.append(np.einsum("ma,mab->mb", lefts[-1], self.cores[k][self.idx[:, k]]))
        rgt = np.ones((m, 1))
        for k in range(self.d - 1, -1, -1):
            # the last core was just solved by the forward pass
            if k < self.d - 1:
                self._solve_core(k, lefts[k], rgt)
            if k > 0:
                self._qr_left(k)
                rgt = np.einsum("mab,mb->ma", self.cores[k][self.idx[:, k]], rgt)

    def tensor(self) -> TTTensor:
        return TTTensor(tuple(self.cores))


def complete_fixed_rank(samples: SampleSet, grid: ChebGrid, rank, cfg: CompletionConfig,
                        init: TTTensor | None = None) -> CompletionReport:
    """Fit a TT of fixed rank to the training samples.

    ``rank`` is either an int (uniform internal rank) or the full rank tuple
    ``(1, r_1, ..., r_{d-1}, 1)``.
    """
    shape = grid.shape
    if isinstance(rank, (int, np.integer)):
        ranks = (1,) + (int(rank),) * (len(shape) - 1) + (1,)
    else:
        ranks = tuple(int(r) for r in rank)
    _check_ranks(shape, ranks)
    rng = np.random.default_rng(cfg.seed)
    if init is None:
        if cfg.init == "spectral" and grid.size <= SPECTRAL_MAX and samples.n_train:
            t0 = spectral_tt(shape, ranks, samples.train_idx, samples.train_val, rng)
        else:
            t0 = random_tt(shape, ranks, rng)
    elif init.ranks != ranks:
        t0 = _pad_tt(init, ranks, rng)
    else:
        t0 = init

    scale = float(np.max(np.abs(samples.train_val))) if samples.n_train else 0.0
    als = _ALS(list(t0.cores), samples.train_idx, samples.train_val)

    def errors(t):
        tr = relative_error(tt_entries(t, samples.train_idx), samples.train_val, scale, cfg.error_metric)
        te = relative_error(tt_entries(t, samples.test_idx), samples.test_val, scale, cfg.error_metric)
        return tr, te

    def objective(t):
        r = tt_entries(t, samples.train_idx) - samples.train_val
        return float(r @ r)

    history = []
    best = None
    prev_obj = None
    sweeps = 0
    for sweeps in range(1, cfg.max_sweeps + 1):
        als.sweep()
        t = als.tensor()
        tr, te = errors(t)
        obj = objective(t)
        history.append(obj)
        if best is None or te < best[2]:
            best = (t, tr, te)
        if te <= cfg.target_error:
            break
        if prev_obj is not None:
            ref = max(prev_obj, 1e-300)
            if (prev_obj - obj) / ref < cfg.stagnation_tol:
                break
        prev_obj = obj
    t, tr, te = best
    return CompletionReport(
        tensor=t, train_error=tr, test_error=te, evaluations_used=samples.size,
        final_rank=t.ranks, sweeps=sweeps, converged=te <= cfg.target_error, history=history,
    )


def rank_adaptive(samples: SampleSet, grid: ChebGrid, cfg: CompletionConfig,
                  init: TTTensor | None = None) -> CompletionReport:
    best = None
    rank = cfg.initial_rank
    prev_ranks = None
    warm = init
    while True:
        ranks = feasible_ranks(grid.shape, rank)
        if ranks == prev_ranks:
            break
        if prev_ranks is not None and samples.n_train < cfg.oversampling * tt_dof(grid.shape, ranks):
            break
        if warm is not None and any(a > b for a, b in zip(warm.ranks, ranks)):
            warm = None
        rep = complete_fixed_rank(samples, grid, ranks, replace(cfg, seed=cfg.seed + rank), init=warm)
        if best is None or rep.test_error < best.test_error:
            best = rep
        if rep.converged:
            return rep
        if rank >= cfg.max_rank:
            break
        prev_ranks = ranks
        warm = rep.tensor
        rank += 1
    return best


def sample_adaptive(f: Callable, grid: ChebGrid, cfg: CompletionConfig) -> CompletionReport:
    """Grow the sample set by ``cfg.growth`` until the target is met or the budget runs out."""
    if cfg.initial_train + cfg.initial_test > grid.size:
        raise ValueError(f"initial sample of {cfg.initial_train + cfg.initial_test} exceeds grid size {grid.size}")
    stream = _IndexStream(grid.size, np.random.default_rng(cfg.seed))
    n_train, n_test = cfg.initial_train, cfg.initial_test
    idx, vals = _evaluate(f, grid, stream.take(n_train + n_test))
    samples = SampleSet(idx[:n_train], vals[:n_train], idx[n_train:], vals[n_train:])
    ratio = cfg.initial_test / cfg.initial_train
    budget = min(cfg.max_evaluations, grid.size)

    warm = None
    best = None
    while True:
        rep = rank_adaptive(samples, grid, cfg, init=warm)
        rep.evaluations_used = samples.size
        if best is None or rep.converged or rep.test_error < best.test_error:
            best = rep
        if rep.converged:
            return rep
        remaining = budget - samples.size
        if remaining <= 0:
            break
        new_train = math.ceil(samples.n_train * cfg.growth)
        new_test = math.ceil(new_train * ratio)
        add_train = new_train - samples.n_train
        add_test = max(new_test - samples.n_test, 0)
        if add_train + add_test > remaining:
            add_train = max(1, round(remaining * add_train / (add_train + add_test)))
            add_test = remaining - add_train
        idx, vals = _evaluate(f, grid, stream.take(add_train + add_test))
        samples = SampleSet(
            np.concatenate([samples.train_idx, idx[:add_train]]),
            np.concatenate([samples.train_val, vals[:add_train]]),
            np.concatenate([samples.test_idx, idx[add_train:]]),
            np.concatenate([samples.test_val, vals[add_train:]]),
        )
        warm = rep.tensor
    best.evaluations_used = samples.size
    best.converged = False
    return best
