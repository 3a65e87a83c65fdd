"""Dynamic sensitivities from Chebyshev tensors, and the brute-force benchmark.

A *problem* ties a trade to a model stack: it turns model states at a time
point into benchmark sensitivities (``dV/ds`` per risk factor) and converts
those to SIMM units. ``phi`` composes the two maps for one risk factor, and a
tensor of ``phi`` over the scenario envelope replaces the pricer at every
simulation node.

Two tensor modes:

* ``per-time``: one tensor per (risk factor, time point), domain = state
  envelope at that time. Needed when cashflows make the sensitivity jump in t.
* ``time-in-domain``: one tensor per risk factor with time to maturity as the
  last coordinate, domain = envelope over all time points.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol, Sequence

import numpy as np

from .cheb import ChebGrid
from .completion import CompletionConfig, CompletionReport, sample_adaptive
from .container import read_container, write_container
from .pricers import (
    CallCounter, FxSwapTrade, SpreadModel, SpreadOptionTrade, fx_swap_sensitivities, spread_delta,
)
from .rfem import (
    GBMParams, HW1FParams, HestonParams, ISDA_LABELS, ISDA_TENORS, ModelStack, ScenarioCube,
    model_to_market, scenario_envelope,
)
from .simm import SimmConfig, margins, to_simm_units
from .tt import TTTensor

MODES = ("per-time", "time-in-domain")
HIST_EDGES = np.array([0, 0.05, 0.1, 0.25, 0.5, 0.75, 1, 1.5, 2, 3, 5, 7.5, 10, 15, 20, 30, 50, 100, np.inf])


class ConvergenceError(ArithmeticError):
    """A tensor missed its target error within the sample budget."""

    def __init__(self, factor: str, time_index: int | None, report: CompletionReport):
        where = "all time points" if time_index is None else f"time point {time_index}"
        super().__init__(f"tensor for {factor} at {where} did not converge: test error "
                         f"{report.test_error:.3g} after {report.evaluations_used} samples")
        self.factor = factor
        self.time_index = time_index
        self.report = report


# ----------------------------------------------------------------------
# problems
# ----------------------------------------------------------------------

class Problem(Protocol):
    stack: ModelStack
    factors: tuple[str, ...]
    maturity: float
    mode: str

    def sensitivities(self, states: np.ndarray, t, factors: Sequence[str], seed,
                      counter: CallCounter | None) -> np.ndarray: ...

    def simm_units(self, states: np.ndarray, factors: Sequence[str], values: np.ndarray) -> np.ndarray: ...

    def floors(self) -> dict[int, float]: ...


def _positive_dims(stack: ModelStack) -> dict[int, float]:
    """State dimensions that must stay >= 0 when the envelope is padded."""
    out = {}
    sl = stack.slices()
    for name, p in stack.components:
        s = sl[name]
        if isinstance(p, GBMParams):
            out[s.start] = 0.0
        elif isinstance(p, HestonParams):
            out[s.start] = 0.0
            out[s.start + 1] = 0.0
    return out


@dataclass
class FxSwapProblem:
    """Fixed-fixed cross-currency swap on a stack of curve factors and an FX rate."""

    trade: FxSwapTrade
    stack: ModelStack
    factors: tuple[str, ...]
    labels: tuple[str, ...] = ISDA_LABELS
    tenors: tuple[float, ...] = ISDA_TENORS
    mode: str = "per-time"

    @property
    def maturity(self) -> float:
        return self.trade.maturity

    def sensitivities(self, states, t, factors, seed=None, counter=None):
        states = np.atleast_2d(states)
        if np.ndim(t):
            # time-in-domain rows may sit at different times
            t = np.asarray(t, dtype=float)
            out = np.empty((len(states), len(factors)))
            for tv in np.unique(t):
                rows = t == tv
                out[rows] = self.sensitivities(states[rows], float(tv), factors, seed, counter)
            return out
        market = model_to_market(states, float(t), self.stack, self.tenors)
        return fx_swap_sensitivities(self.trade, market, float(t), factors, self.labels, counter).values

    def simm_units(self, states, factors, values):
        states = np.atleast_2d(states)
        sl = self.stack.slices()
        levels = {f: states[:, sl[f.split(".", 1)[1]].start] for f in factors if f.startswith("FX.")}
        return to_simm_units(factors, values, levels)

    def floors(self):
        return _positive_dims(self.stack)


@dataclass
class SpreadProblem:
    """Spread option on two Heston underlyings with a Hull-White short rate.

    Only the delta on the first underlying (``EQ.<name>``) is computed. The
    inner pricer takes ``seed`` as given: an int shares random numbers across
    states, an array gives each state its own stream.
    """

    trade: SpreadOptionTrade
    model: SpreadModel
    stack: ModelStack
    n_inner: int = 500
    mode: str = "time-in-domain"

    def __post_init__(self):
        sl = self.stack.slices()
        u1, u2 = self.trade.underlyings
        for name, kind in ((self.trade.rate, HW1FParams), (u1, HestonParams), (u2, HestonParams)):
            if not isinstance(self.stack.component(name), kind):
                raise ValueError(f"component {name!r} must be {kind.__name__}")
        self._cols = [sl[self.trade.rate].start, sl[u1].start, sl[u1].start + 1,
                      sl[u2].start, sl[u2].start + 1]

    @property
    def factors(self) -> tuple[str, ...]:
        return (f"EQ.{self.trade.underlyings[0]}",)

    @property
    def maturity(self) -> float:
        return self.trade.maturity

    def pricer_states(self, states, t) -> np.ndarray:
        states = np.atleast_2d(states)
        tau = self.maturity - np.broadcast_to(np.asarray(t, dtype=float), (len(states),))
        return np.column_stack([states[:, self._cols], tau])

    def sensitivities(self, states, t, factors, seed=0, counter=None):
        for f in factors:
            if f != self.factors[0]:
                raise KeyError(f"spread option only computes {self.factors[0]}, not {f}")
        if not factors:
            return np.zeros((len(np.atleast_2d(states)), 0))
        d = spread_delta(self.trade, self.model, self.pricer_states(states, t), self.n_inner,
                         seed, counter=counter)
        return d[:, None]

    def simm_units(self, states, factors, values):
        states = np.atleast_2d(states)
        return to_simm_units(factors, values, {self.factors[0]: states[:, self._cols[1]]})

    def floors(self):
        return _positive_dims(self.stack)


# ----------------------------------------------------------------------
# tensors
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class TensorPlan:
    factor: str
    mode: str = "per-time"
    points_per_dim: int = 4
    completion: CompletionConfig = CompletionConfig()
    pad: float = 0.01
    # seed passed to the pricer while sampling; an int gives common random
    # numbers across grid points, which keeps a Monte-Carlo phi smooth
    sample_seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown tensor mode {self.mode!r}")
        if self.points_per_dim < 2:
            raise ValueError("need at least 2 points per dimension")
        if self.pad < 0:
            raise ValueError("padding must be nonnegative")


def build_phi(problem: Problem, factor: str, time: float | None, fill: np.ndarray,
              active: np.ndarray, seed=0, counter: CallCounter | None = None) -> Callable:
    """phi(x) = sensitivity to ``factor`` at the state rebuilt from ``x``.

    ``x`` holds the active (non-collapsed) model coordinates, plus time to
    maturity as the last column when ``time`` is None.
    """
    if factor not in problem.factors:
        raise KeyError(f"{factor} is not a risk factor of this trade")
    fill = np.asarray(fill, dtype=float)
    k = problem.stack.ndim

    def phi(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s = np.tile(fill[:k], (len(x), 1))
        model_active = active[active < k]
        s[:, model_active] = x[:, :len(model_active)]
        if time is not None:
            t = time
        elif k in active:
            t = problem.maturity - x[:, -1]
        else:
            t = problem.maturity - fill[k]
        return problem.sensitivities(s, t, [factor], seed, counter)[:, 0]

    return phi


@dataclass
class BuiltTensor:
    factor: str
    time_index: int | None          # None for time-in-domain
    tensor: TTTensor
    grid: ChebGrid
    active: np.ndarray              # envelope dims kept
    fill: np.ndarray                # values used for collapsed dims
    report: CompletionReport
    calls: int
    seconds: float

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Interpolant at full envelope points (model dims [+ ttm])."""
        from .tt import tt_eval_cheb
        points = np.atleast_2d(points)
        return tt_eval_cheb(self.tensor, self.grid, points[:, self.active])

    def save(self, path, meta: dict | None = None) -> None:
        arrays = {f"core{i}": c for i, c in enumerate(self.tensor.cores)}
        arrays.update(active=self.active, fill=self.fill, lo=self.grid.domain.lo, hi=self.grid.domain.hi)
        m = {"factor": self.factor, "time_index": self.time_index, "n_cores": len(self.tensor.cores),
             "points_per_dim": list(self.grid.points_per_dim), "calls": self.calls,
             "completion": self.report.summary()}
        m.update(meta or {})
        write_container(path, "dim_tensor", m, arrays)

    @classmethod
    def load(cls, path) -> "BuiltTensor":
        from .cheb import HyperRect
        meta, a = read_container(path, "dim_tensor")
        cores = [a[f"core{i}"] for i in range(meta["n_cores"])]
        grid = ChebGrid(HyperRect.from_bounds(np.column_stack([a["lo"], a["hi"]])), tuple(meta["points_per_dim"]))
        c = meta["completion"]
        rep = CompletionReport(TTTensor(cores), c["train_error"], c["test_error"], c["evaluations_used"],
                               tuple(c["final_rank"]), c["sweeps"], c["converged"])
        return cls(meta["factor"], meta["time_index"], rep.tensor, grid, a["active"], a["fill"], rep,
                   meta["calls"], 0.0)


def tensor_domain(plan: TensorPlan, problem: Problem, cube: ScenarioCube, time_index: int | None):
    """Padded envelope grid, active dims and fill values for collapsed dims."""
    if plan.mode == "per-time":
        if time_index is None:
            raise ValueError("per-time tensors need a time index")
        env = scenario_envelope(cube, time_index)
    else:
        env = scenario_envelope(cube, None, maturity=problem.maturity)
    active = env.active
    if len(active) == 0:
        raise ValueError(f"envelope for {plan.factor} is degenerate in every dimension")
    rect = env.rect(plan.pad, problem.floors())
    grid = ChebGrid(rect, (plan.points_per_dim,) * rect.ndim)
    return grid, active, env.lo.copy()


def build_tensor(plan: TensorPlan, cube: ScenarioCube, problem: Problem,
                 time_index: int | None = None) -> BuiltTensor:
    """Sample-adaptive completion of phi over the padded scenario envelope.

    Raises :class:`ConvergenceError` if the target is missed within budget.
    """
    t0 = time.perf_counter()
    grid, active, fill = tensor_domain(plan, problem, cube, time_index)
    counter = CallCounter()
    t = None if time_index is None else float(cube.times[time_index])
    phi = build_phi(problem, plan.factor, t, fill, active, plan.sample_seed, counter)
    rep = sample_adaptive(phi, grid, plan.completion)
    if not rep.converged:
        raise ConvergenceError(plan.factor, time_index, rep)
    return BuiltTensor(plan.factor, time_index, rep.tensor, grid, active, fill, rep, counter.calls,
                       time.perf_counter() - t0)


def _plan_seed(plan: TensorPlan, j: int) -> TensorPlan:
    # distinct, reproducible completion streams per tensor
    c = plan.completion
    return replace(plan, completion=replace(c, seed=int(np.random.SeedSequence([c.seed, j]).generate_state(1)[0])))


def build_all(plans: Sequence[TensorPlan], cube: ScenarioCube, problem: Problem,
              threads: int = 1) -> list[BuiltTensor]:
    jobs = []
    for plan in plans:
        if plan.mode == "per-time":
            jobs += [(plan, k) for k in range(len(cube.times))]
        else:
            jobs.append((plan, None))
    work = lambda j: build_tensor(_plan_seed(jobs[j][0], j), cube, problem, jobs[j][1])
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(work, range(len(jobs))))
    return [work(j) for j in range(len(jobs))]


# ----------------------------------------------------------------------
# sensitivity cubes
# ----------------------------------------------------------------------

@dataclass
class SensitivityCube:
    values: np.ndarray                 # (paths, times, factors), dV/ds
    times: np.ndarray
    factors: tuple[str, ...]
    method: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        if self.values.shape[1:] != (len(self.times), len(self.factors)):
            raise ValueError("values must be (paths, times, factors)")
        if not np.all(np.isfinite(self.values)):
            raise ArithmeticError("non-finite sensitivity in cube")

    def save(self, path, meta: dict | None = None) -> None:
        m = {"factors": list(self.factors), "method": self.method}
        m.update(meta or {})
        write_container(path, "sensitivity_cube", m, {"values": self.values, "times": self.times})

    @classmethod
    def load(cls, path) -> "SensitivityCube":
        meta, a = read_container(path, "sensitivity_cube")
        return cls(a["values"], a["times"], tuple(meta["factors"]), meta["method"])


def _check_cube(problem: Problem, cube: ScenarioCube) -> None:
    if cube.labels != problem.stack.labels:
        raise ValueError(f"cube labels {cube.labels} do not match the model stack {problem.stack.labels}")


def evaluate_dynamic_sensitivities(tensors: Sequence[BuiltTensor], cube: ScenarioCube,
                                   factors: Sequence[str], maturity: float) -> SensitivityCube:
    """Tensor values at every simulation node; no pricer involved."""
    n, nt, _ = cube.states.shape
    out = np.full((n, nt, len(factors)), np.nan)
    col = {f: j for j, f in enumerate(factors)}
    for bt in tensors:
        j = col[bt.factor]
        ks = range(nt) if bt.time_index is None else [bt.time_index]
        for k in ks:
            pts = cube.states[:, k, :]
            if bt.time_index is None:
                pts = np.column_stack([pts, np.full(n, maturity - cube.times[k])])
            out[:, k, j] = bt.evaluate(pts)
    missing = np.isnan(out).any(axis=0)
    if missing.any():
        k, j = np.argwhere(missing)[0]
        raise ValueError(f"no tensor covers {factors[j]} at time point {k}")
    return SensitivityCube(out, cube.times, tuple(factors), "chebyshev")


def node_seeds(base: int, n_paths: int, n_times: int) -> np.ndarray:
    """One inner-pricer seed per (path, time) node, shape (n_paths, n_times)."""
    s = np.random.SeedSequence(base).generate_state(n_paths * n_times, dtype=np.uint64)
    return (s >> np.uint64(1)).astype(np.int64).reshape(n_paths, n_times)


def run_benchmark(problem: Problem, cube: ScenarioCube, factors: Sequence[str] | None = None,
                  seed: int = 0, counter: CallCounter | None = None, threads: int = 1) -> SensitivityCube:
    """Bump-and-reprice sensitivities at every node, one time point per task."""
    _check_cube(problem, cube)
    factors = tuple(problem.factors if factors is None else factors)
    counter = counter if counter is not None else CallCounter()
    seeds = node_seeds(seed, cube.n_paths, len(cube.times))
    work = lambda k: problem.sensitivities(cube.states[:, k, :], float(cube.times[k]), factors,
                                           seeds[:, k], counter)
    ks = range(len(cube.times))
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            cols = list(ex.map(work, ks))
    else:
        cols = [work(k) for k in ks]
    return SensitivityCube(np.stack(cols, axis=1), cube.times, factors, "benchmark")


def dynamic_margins(problem: Problem, sens: SensitivityCube, cube: ScenarioCube,
                    cfg: SimmConfig) -> np.ndarray:
    """Delta margin per (path, time) from a sensitivity cube."""
    out = np.empty(sens.values.shape[:2])
    for k in range(len(sens.times)):
        ws = problem.simm_units(cube.states[:, k, :], sens.factors, sens.values[:, k, :])
        out[:, k] = margins(sens.factors, ws, cfg)
    return out


# ----------------------------------------------------------------------
# comparison and savings
# ----------------------------------------------------------------------

def node_errors(cheb: np.ndarray, bench: np.ndarray, floor_frac: float = 1e-8) -> np.ndarray:
    """|c - b| / max(|b|, floor_frac * max|b|) along the path axis.

    Slices where the benchmark is identically zero fall back to absolute
    error.
    """
    scale = np.max(np.abs(bench), axis=0, keepdims=True)
    den = np.maximum(np.abs(bench), floor_frac * scale)
    den = np.where(scale > 0, den, 1.0)
    return np.abs(cheb - bench) / den


@dataclass
class Comparison:
    factors: tuple[str, ...]
    times: np.ndarray
    max_error: np.ndarray           # (times, factors)
    q95_error: np.ndarray
    hist_edges: np.ndarray          # percent
    hist_counts: np.ndarray         # pooled over slices with nonzero benchmark
    errors: np.ndarray = field(repr=False)

    @property
    def overall_max(self) -> float:
        return float(self.max_error.max()) if self.max_error.size else 0.0

    @property
    def overall_q95(self) -> float:
        return float(np.quantile(self.errors, 0.95)) if self.errors.size else 0.0

    def summary(self) -> dict:
        worst = np.unravel_index(np.argmax(self.max_error), self.max_error.shape) if self.max_error.size else (0, 0)
        return {"max_relative_error": self.overall_max, "q95_relative_error": self.overall_q95,
                "worst_factor": self.factors[worst[1]] if self.factors else None,
                "worst_time": float(self.times[worst[0]]) if len(self.times) else None,
                "per_factor_max": {f: float(self.max_error[:, j].max()) for j, f in enumerate(self.factors)}}


def compare(cheb: SensitivityCube, bench: SensitivityCube, edges: np.ndarray = HIST_EDGES) -> Comparison:
    if cheb.values.shape != bench.values.shape or cheb.factors != bench.factors:
        raise ValueError("sensitivity cubes differ in shape or factor list")
    if not np.allclose(cheb.times, bench.times):
        raise ValueError("sensitivity cubes live on different time grids")
    e = node_errors(cheb.values, bench.values)
    # slices where the trade has no exposure would swamp the first bin
    live = np.any(bench.values != 0, axis=0)
    counts, _ = np.histogram(np.minimum(100 * e[:, live], 1e300).ravel(), bins=edges)
    return Comparison(cheb.factors, cheb.times, e.max(axis=0), np.quantile(e, 0.95, axis=0),
                      edges, counts, e)


@dataclass
class SavingsReport:
    benchmark_calls: int
    chebyshev_calls: int
    build_seconds: float = 0.0
    eval_seconds: float = 0.0
    benchmark_seconds: float = 0.0

    @property
    def call_savings(self) -> float:
        return 1.0 - self.chebyshev_calls / self.benchmark_calls if self.benchmark_calls else 0.0

    @property
    def time_savings(self) -> float | None:
        if self.benchmark_seconds <= 0:
            return None
        return 1.0 - (self.build_seconds + self.eval_seconds) / self.benchmark_seconds

    def to_dict(self) -> dict:
        return {"benchmark_calls": self.benchmark_calls, "chebyshev_calls": self.chebyshev_calls,
                "call_savings": self.call_savings}

    def timing_dict(self) -> dict:
        return {"build_seconds": self.build_seconds, "eval_seconds": self.eval_seconds,
                "benchmark_seconds": self.benchmark_seconds, "time_savings": self.time_savings}


def savings(benchmark_calls: int, chebyshev_calls: int, **seconds) -> SavingsReport:
    if benchmark_calls < 0 or chebyshev_calls < 0:
        raise ValueError("call counts are nonnegative")
    return SavingsReport(int(benchmark_calls), int(chebyshev_calls), **seconds)
