"""Risk-factor evolution: model-space simulation and the map to market space.

Gaussian drivers (Hull-White / G2++ factors and log-normal levels) are sampled
with their exact joint transition, including the time integral of each short
rate factor so bank-account numeraires are available for martingale checks.
Heston components use full-truncation log-Euler with substeps.

States are stored as the variables the market map consumes: the short rate
for HW1F, the zero-mean factors ``x, y`` for G2++, the level for GBM, and
spot plus truncated variance for Heston.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .cheb import HyperRect, Interval
from .container import read_container, write_container

YEAR_DAYS = 365.0
ISDA_TENORS = (14 / YEAR_DAYS, 1 / 12, 0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 15.0, 20.0, 30.0)
ISDA_LABELS = ("2w", "1m", "3m", "6m", "1y", "2y", "3y", "5y", "10y", "15y", "20y", "30y")
HESTON_SUBSTEPS = 32
BLOCK_PATHS = 1024


class NumericalDomainError(ArithmeticError):
    pass


def _bfun(a, tau):
    """(1 - exp(-a tau)) / a, with the a -> 0 limit."""
    a = np.asarray(a, dtype=float)
    tau = np.asarray(tau, dtype=float)
    small = np.abs(a * tau) < 1e-8
    safe = np.where(small, 1.0, a)
    return np.where(small, tau * (1 - 0.5 * a * tau), -np.expm1(-safe * tau) / safe)


# ----------------------------------------------------------------------
# today's curves
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ZeroCurve:
    """Continuously compounded zero rates, linear in maturity, flat outside."""

    tenors: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        t = np.asarray(self.tenors, dtype=float)
        r = np.asarray(self.rates, dtype=float)
        if t.ndim != 1 or t.shape != r.shape or len(t) < 1:
            raise ValueError("curve needs matching, non-empty tenor and rate lists")
        if np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("curve tenors must be positive and strictly increasing")
        if not np.all(np.isfinite(r)):
            raise ValueError("curve rates must be finite")
        object.__setattr__(self, "tenors", tuple(map(float, t)))
        object.__setattr__(self, "rates", tuple(map(float, r)))

    @classmethod
    def flat(cls, rate: float) -> "ZeroCurve":
        return cls((1.0,), (rate,))

    def zero(self, T):
        return np.interp(T, self.tenors, self.rates)

    def discount(self, T):
        T = np.asarray(T, dtype=float)
        return np.exp(-self.zero(T) * T)

    def fwd(self, T):
        """Instantaneous forward d(zT)/dT, right-continuous at the knots."""
        T = np.asarray(T, dtype=float)
        t = np.asarray(self.tenors)
        r = np.asarray(self.rates)
        if len(t) == 1:
            return np.full_like(T, r[0])
        slope = np.diff(r) / np.diff(t)
        seg = np.searchsorted(t, T, side="right") - 1
        inside = (seg >= 0) & (seg < len(t) - 1)
        s = np.where(inside, slope[np.clip(seg, 0, len(slope) - 1)], 0.0)
        return self.zero(T) + T * s


@dataclass(frozen=True)
class VasicekCurve:
    """Curve implied by an unfitted Vasicek model (HW1F without a market curve)."""

    a: float
    b: float
    sigma: float
    r0: float

    def discount(self, T):
        T = np.asarray(T, dtype=float)
        B = _bfun(self.a, T)
        lnA = (self.b - self.sigma**2 / (2 * self.a**2)) * (B - T) - self.sigma**2 * B**2 / (4 * self.a)
        return np.exp(lnA - B * self.r0)

    def fwd(self, T):
        T = np.asarray(T, dtype=float)
        e = np.exp(-self.a * T)
        return self.r0 * e + self.b * (1 - e) - self.sigma**2 / (2 * self.a**2) * (1 - e) ** 2


Curve = Union[ZeroCurve, VasicekCurve]


# ----------------------------------------------------------------------
# model parameters
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class HW1FParams:
    """Hull-White one factor. Without ``curve`` it is Vasicek with level ``b``."""

    a: float
    b: float
    sigma: float
    r0: float
    curve: ZeroCurve | None = None

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("HW1F needs a > 0")
        if self.sigma < 0:
            raise ValueError("HW1F needs sigma >= 0")

    @property
    def today(self) -> Curve:
        if self.curve is not None:
            return self.curve
        return VasicekCurve(self.a, self.b, self.sigma, self.r0)

    def shift(self, t):
        """Deterministic part alpha(t) with r(t) = x(t) + alpha(t)."""
        t = np.asarray(t, dtype=float)
        return self.today.fwd(t) + self.sigma**2 / (2 * self.a**2) * (-np.expm1(-self.a * t)) ** 2

    def shift_integral(self, t):
        t = np.asarray(t, dtype=float)
        conv = self.sigma**2 / (2 * self.a**2) * (t - 2 * _bfun(self.a, t) + _bfun(2 * self.a, t))
        return -np.log(self.today.discount(t)) + conv


@dataclass(frozen=True)
class G2Params:
    """G2++ with the deterministic shift fitted to ``curve``."""

    a1: float
    a2: float
    sigma1: float
    sigma2: float
    rho: float
    curve: ZeroCurve

    def __post_init__(self):
        if not (self.a1 > 0 and self.a2 > 0):
            raise ValueError("G2 needs positive mean-reversion speeds")
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ValueError("G2 needs positive factor vols")
        if abs(self.rho) > 1:
            raise ValueError("G2 needs |rho| <= 1")


@dataclass(frozen=True)
class GBMParams:
    mu: float
    sigma: float
    x0: float

    def __post_init__(self):
        if not self.sigma > 0 or not self.x0 > 0:
            raise ValueError("GBM needs sigma > 0 and x0 > 0")


@dataclass(frozen=True)
class HestonParams:
    kappa: float
    theta_v: float
    xi: float
    rho_sv: float
    v0: float
    s0: float
    mu: float = 0.0

    def __post_init__(self):
        if min(self.kappa, self.theta_v, self.xi, self.v0, self.s0) <= 0:
            raise ValueError("Heston needs kappa, theta_v, xi, v0, s0 > 0")
        if abs(self.rho_sv) > 1:
            raise ValueError("Heston needs |rho_sv| <= 1")

    @property
    def feller_ratio(self) -> float:
        return 2 * self.kappa * self.theta_v / self.xi**2


ModelParams = Union[HW1FParams, G2Params, GBMParams, HestonParams]


@dataclass(frozen=True)
class ModelStack:
    """Named model components in state order.

    ``gauss_corr`` correlates the Brownian drivers of the Gaussian components
    (HW1F, G2 factors, GBM) in state order; G2's own ``rho`` must agree with
    it when both are given. ``spot_corr`` correlates Heston spot drivers.
    Gaussian and Heston blocks are independent of each other.
    """

    components: tuple[tuple[str, ModelParams], ...]
    gauss_corr: np.ndarray | None = field(default=None, compare=False)
    spot_corr: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "components", tuple((str(n), p) for n, p in self.components))
        names = [n for n, _ in self.components]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate component names in {names}")

    @property
    def labels(self) -> tuple[str, ...]:
        out = []
        for name, p in self.components:
            if isinstance(p, HW1FParams):
                out.append(f"{name}.r")
            elif isinstance(p, G2Params):
                out += [f"{name}.x", f"{name}.y"]
            elif isinstance(p, GBMParams):
                out.append(name)
            elif isinstance(p, HestonParams):
                out += [f"{name}.S", f"{name}.v"]
        return tuple(out)

    @property
    def ndim(self) -> int:
        return len(self.labels)

    def slices(self) -> dict[str, slice]:
        out = {}
        i = 0
        for name, p in self.components:
            w = 2 if isinstance(p, (G2Params, HestonParams)) else 1
            out[name] = slice(i, i + w)
            i += w
        return out

    def component(self, name: str) -> ModelParams:
        for n, p in self.components:
            if n == name:
                return p
        raise KeyError(name)

    def initial_state(self) -> np.ndarray:
        out = []
        for _, p in self.components:
            if isinstance(p, HW1FParams):
                out.append(p.r0 if p.curve is None else float(p.shift(0.0)))
            elif isinstance(p, G2Params):
                out += [0.0, 0.0]
            elif isinstance(p, GBMParams):
                out.append(p.x0)
            else:
                out += [p.s0, p.v0]
        return np.array(out)


# ----------------------------------------------------------------------
# scenario cube
# ----------------------------------------------------------------------

@dataclass
class ScenarioCube:
    states: np.ndarray            # (paths, times, dims)
    times: np.ndarray
    labels: tuple[str, ...]
    integrals: np.ndarray | None = None   # (paths, times, rate factors): int_0^t x ds
    integral_labels: tuple[str, ...] = ()

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        if self.states.ndim != 3 or self.states.shape[1] != len(self.times):
            raise ValueError("states must be (paths, times, dims) matching the time grid")
        if self.states.shape[2] != len(self.labels):
            raise ValueError("one label per model dimension required")
        if not np.all(np.isfinite(self.states)):
            raise NumericalDomainError("non-finite simulated state")

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    def save(self, path, meta: dict | None = None) -> None:
        arrays = {"states": self.states, "times": self.times}
        if self.integrals is not None:
            arrays["integrals"] = self.integrals
        m = {"labels": list(self.labels), "integral_labels": list(self.integral_labels)}
        m.update(meta or {})
        write_container(path, "scenario_cube", m, arrays)

    @classmethod
    def load(cls, path) -> "ScenarioCube":
        meta, arrays = read_container(path, "scenario_cube")
        return cls(arrays["states"], arrays["times"], tuple(meta["labels"]),
                   arrays.get("integrals"), tuple(meta.get("integral_labels", ())))


# ----------------------------------------------------------------------
# simulation
# ----------------------------------------------------------------------

@dataclass
class _GaussDriver:
    a: float          # 0 for Brownian (log-level) drivers
    sigma: float
    theta: float      # drift: dx = (theta - a x) dt + sigma dW
    x0: float
    integrate: bool


def _gauss_drivers(stack: ModelStack) -> tuple[list[_GaussDriver], list[tuple[str, int]]]:
    drivers = []
    owners = []
    for name, p in stack.components:
        if isinstance(p, HW1FParams):
            drivers.append(_GaussDriver(p.a, p.sigma, 0.0, 0.0, True))
            owners.append((name, 0))
        elif isinstance(p, G2Params):
            drivers.append(_GaussDriver(p.a1, p.sigma1, 0.0, 0.0, True))
            drivers.append(_GaussDriver(p.a2, p.sigma2, 0.0, 0.0, True))
            owners += [(name, 0), (name, 1)]
        elif isinstance(p, GBMParams):
            drivers.append(_GaussDriver(0.0, p.sigma, p.mu - 0.5 * p.sigma**2, math.log(p.x0), False))
            owners.append((name, 0))
    return drivers, owners


def _gauss_corr(stack: ModelStack, owners) -> np.ndarray:
    m = len(owners)
    if stack.gauss_corr is not None:
        c = np.asarray(stack.gauss_corr, dtype=float)
        if c.shape != (m, m):
            raise ValueError(f"gauss_corr must be {m}x{m} for drivers {owners}")
    else:
        c = np.eye(m)
    c = c.copy()
    for i, (name, k) in enumerate(owners):
        p = stack.component(name)
        if isinstance(p, G2Params) and k == 0:
            if stack.gauss_corr is not None and abs(c[i, i + 1] - p.rho) > 1e-12:
                raise ValueError(f"{name}: rho {p.rho} disagrees with gauss_corr {c[i, i + 1]}")
            c[i, i + 1] = c[i + 1, i] = p.rho
    if not np.allclose(c, c.T) or not np.allclose(np.diag(c), 1.0):
        raise ValueError("driver correlation must be symmetric with unit diagonal")
    if np.linalg.eigvalsh(c).min() < -1e-10:
        raise ValueError("driver correlation is not positive semidefinite")
    return c


def _sqrtm_psd(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0, None))


def _gauss_transition(drivers: list[_GaussDriver], corr: np.ndarray, dt: float):
    """Mean maps and covariance factor of (x_1..x_m, I_j for integrated j) over dt."""
    m = len(drivers)
    a = np.array([d.a for d in drivers])
    s = np.array([d.sigma for d in drivers])
    integ = [i for i, d in enumerate(drivers) if d.integrate]
    Bi = _bfun(a, dt)
    n = m + len(integ)
    cov = np.zeros((n, n))
    for i in range(m):
        for j in range(m):
            cov[i, j] = corr[i, j] * s[i] * s[j] * _bfun(a[i] + a[j], dt)
    for jj, j in enumerate(integ):
        for i in range(m):
            # Cov(x_i(dt), I_j) = rho s_i s_j / a_j (B_i - B_ij)
            v = corr[i, j] * s[i] * s[j] / a[j] * (Bi[i] - _bfun(a[i] + a[j], dt))
            cov[i, m + jj] = cov[m + jj, i] = v
        for kk, k in enumerate(integ):
            v = corr[j, k] * s[j] * s[k] / (a[j] * a[k]) * (dt - Bi[j] - Bi[k] + _bfun(a[j] + a[k], dt))
            cov[m + jj, m + kk] = v
    decay = np.exp(-a * dt)
    drift = np.array([d.theta for d in drivers]) * Bi
    return decay, drift, Bi[integ], integ, _sqrtm_psd(cov)


def _simulate_block(stack: ModelStack, times: np.ndarray, n: int, seed_seq: np.random.SeedSequence):
    rng = np.random.default_rng(seed_seq)
    drivers, owners = _gauss_drivers(stack)
    hestons = [(name, p) for name, p in stack.components if isinstance(p, HestonParams)]
    nt = len(times)
    m = len(drivers)
    gx = np.empty((n, nt, m))
    integ_idx = [i for i, d in enumerate(drivers) if d.integrate]
    gi = np.empty((n, nt, len(integ_idx)))
    if m:
        corr = _gauss_corr(stack, owners)
        x = np.tile([d.x0 for d in drivers], (n, 1))
        acc = np.zeros((n, len(integ_idx)))
        prev = 0.0
        for k, t in enumerate(times):
            decay, drift, bint, integ, L = _gauss_transition(drivers, corr, t - prev)
            z = rng.standard_normal((n, L.shape[0])) @ L.T
            acc = acc + x[:, integ] * bint + z[:, m:]
            x = x * decay + drift + z[:, :m]
            gx[:, k] = x
            gi[:, k] = acc
            prev = t
    hs = np.empty((n, nt, 2 * len(hestons)))
    if hestons:
        h = len(hestons)
        sc = np.eye(h) if stack.spot_corr is None else np.asarray(stack.spot_corr, dtype=float)
        if sc.shape != (h, h):
            raise ValueError(f"spot_corr must be {h}x{h}")
        Ls = _sqrtm_psd(sc)
        lnS = np.tile([math.log(p.s0) for _, p in hestons], (n, 1))
        v = np.tile([p.v0 for _, p in hestons], (n, 1))
        kappa = np.array([p.kappa for _, p in hestons])
        theta = np.array([p.theta_v for _, p in hestons])
        xi = np.array([p.xi for _, p in hestons])
        rho = np.array([p.rho_sv for _, p in hestons])
        mu = np.array([p.mu for _, p in hestons])
        prev = 0.0
        for k, t in enumerate(times):
            dt = (t - prev) / HESTON_SUBSTEPS
            for _ in range(HESTON_SUBSTEPS):
                zs = rng.standard_normal((n, h)) @ Ls.T
                zv = rho * zs + np.sqrt(1 - rho**2) * rng.standard_normal((n, h))
                vp = np.maximum(v, 0.0)
                sq = np.sqrt(vp * dt)
                lnS = lnS + (mu - 0.5 * vp) * dt + sq * zs
                v = v + kappa * (theta - vp) * dt + xi * sq * zv
            hs[:, k, 0::2] = np.exp(lnS)
            hs[:, k, 1::2] = np.maximum(v, 0.0)
            prev = t
    # assemble in stack order
    out = np.empty((n, nt, stack.ndim))
    col = 0
    gpos = 0
    hpos = 0
    for name, p in stack.components:
        if isinstance(p, HW1FParams):
            out[:, :, col] = gx[:, :, gpos] + p.shift(times)
            col += 1
            gpos += 1
        elif isinstance(p, G2Params):
            out[:, :, col:col + 2] = gx[:, :, gpos:gpos + 2]
            col += 2
            gpos += 2
        elif isinstance(p, GBMParams):
            out[:, :, col] = np.exp(gx[:, :, gpos])
            col += 1
            gpos += 1
        else:
            out[:, :, col:col + 2] = hs[:, :, 2 * hpos:2 * hpos + 2]
            col += 2
            hpos += 1
    return out, gi


def simulate(stack: ModelStack, n_paths: int, times: Sequence[float], seed: int,
             threads: int = 1) -> ScenarioCube:
    """Simulate ``n_paths`` model-space paths on ``times`` (all > 0, increasing).

    Paths are generated in fixed blocks with their own RNG substreams, so the
    cube does not depend on ``threads``.
    """
    times = np.asarray(times, dtype=float)
    if n_paths < 1:
        raise ValueError("need at least one path")
    if times.ndim != 1 or len(times) == 0 or times[0] <= 0 or np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be increasing and start after 0")
    n_blocks = -(-n_paths // BLOCK_PATHS)
    root = np.random.SeedSequence(seed)
    seqs = root.spawn(n_blocks)
    sizes = [min(BLOCK_PATHS, n_paths - b * BLOCK_PATHS) for b in range(n_blocks)]
    work = lambda b: _simulate_block(stack, times, sizes[b], seqs[b])
    if threads > 1 and n_blocks > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, range(n_blocks)))
    else:
        parts = [work(b) for b in range(n_blocks)]
    states = np.concatenate([p[0] for p in parts])
    integrals = np.concatenate([p[1] for p in parts])
    drivers, owners = _gauss_drivers(stack)
    ilabels = tuple(f"{n}.{k}" for (n, k), d in zip(owners, drivers) if d.integrate)
    return ScenarioCube(states, times, stack.labels, integrals, ilabels)


# ----------------------------------------------------------------------
# model space -> market space
# ----------------------------------------------------------------------

@dataclass
class MarketState:
    """Batch of market states; every array has a leading batch axis."""

    tenors: np.ndarray
    curves: dict[str, np.ndarray] = field(default_factory=dict)   # name -> (m, n_tenors) zero rates
    fx: dict[str, np.ndarray] = field(default_factory=dict)       # name -> (m,)
    spots: dict[str, np.ndarray] = field(default_factory=dict)
    vols: dict[str, np.ndarray] = field(default_factory=dict)
    short_rates: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.tenors = np.asarray(self.tenors, dtype=float)
        if np.any(np.diff(self.tenors) <= 0):
            raise ValueError("curve tenors must be strictly increasing")

    @property
    def size(self) -> int:
        for d in (self.curves, self.fx, self.spots, self.short_rates):
            for v in d.values():
                return len(v)
        return 0

    def take(self, rows) -> "MarketState":
        pick = lambda d: {k: v[rows] for k, v in d.items()}
        return MarketState(self.tenors, pick(self.curves), pick(self.fx), pick(self.spots),
                           pick(self.vols), pick(self.short_rates))

    def copy(self) -> "MarketState":
        return self.take(slice(None))


def _V1(a, s, tau):
    return s**2 / a**2 * (tau + 2 / a * np.exp(-a * tau) - 1 / (2 * a) * np.exp(-2 * a * tau) - 3 / (2 * a))


def hw1f_bond(p: HW1FParams, t, T, r):
    """P(t, T) given the short rate r(t), in the fitted affine form.

    Written with x = r - alpha(t); equivalent to A(t,T) exp(-B(t,T) r).
    """
    t = np.asarray(t, dtype=float)
    T = np.asarray(T, dtype=float)
    x = np.asarray(r, dtype=float) - p.shift(t)
    P0 = p.today.discount
    adj = 0.5 * (_V1(p.a, p.sigma, T - t) - _V1(p.a, p.sigma, T) + _V1(p.a, p.sigma, t))
    return P0(T) / P0(t) * np.exp(adj - _bfun(p.a, T - t) * x)


def _g2_V(a, b, s1, s2, rho, tau):
    cross = 2 * rho * s1 * s2 / (a * b) * (tau - _bfun(a, tau) - _bfun(b, tau) + _bfun(a + b, tau))
    return _V1(a, s1, tau) + _V1(b, s2, tau) + cross


def g2_bond(p: G2Params, t, T, x, y):
    t = np.asarray(t, dtype=float)
    T = np.asarray(T, dtype=float)
    V = lambda tau: _g2_V(p.a1, p.a2, p.sigma1, p.sigma2, p.rho, tau)
    adj = 0.5 * (V(T - t) - V(T) + V(t))
    P0 = p.curve.discount
    return P0(T) / P0(t) * np.exp(adj - _bfun(p.a1, T - t) * x - _bfun(p.a2, T - t) * y)


def _zero_from_bonds(P, tau):
    if np.any(~(P > 0)):
        raise NumericalDomainError("non-positive or non-finite bond price")
    return -np.log(P) / tau


def model_to_market(states, t: float, stack: ModelStack, tenors: Sequence[float] = ISDA_TENORS) -> MarketState:
    """Reconstruct market risk factors from model states at time ``t``.

    ``states`` is (m, k) or (k,). Curves become zero rates at ``tenors``
    (time to maturity); GBM levels become FX rates; Heston components give
    spot and volatility sqrt(v).
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[1] != stack.ndim:
        raise ValueError(f"state has {states.shape[1]} dims, stack expects {stack.ndim}")
    tau = np.asarray(tenors, dtype=float)
    out = MarketState(tau)
    sl = stack.slices()
    for name, p in stack.components:
        s = states[:, sl[name]]
        if isinstance(p, HW1FParams):
            P = hw1f_bond(p, t, t + tau[None, :], s[:, :1])
            out.curves[name] = _zero_from_bonds(P, tau)
            out.short_rates[name] = s[:, 0].copy()
        elif isinstance(p, G2Params):
            P = g2_bond(p, t, t + tau[None, :], s[:, :1], s[:, 1:2])
            out.curves[name] = _zero_from_bonds(P, tau)
        elif isinstance(p, GBMParams):
            out.fx[name] = s[:, 0].copy()
        else:
            out.spots[name] = s[:, 0].copy()
            out.vols[name] = np.sqrt(np.maximum(s[:, 1], 0.0))
    return out


# ----------------------------------------------------------------------
# envelopes
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class Envelope:
    lo: np.ndarray
    hi: np.ndarray
    labels: tuple[str, ...]

    @property
    def degenerate(self) -> np.ndarray:
        return ~(self.hi > self.lo)

    @property
    def active(self) -> np.ndarray:
        """Indices of the dimensions kept after collapsing degenerate ones."""
        return np.flatnonzero(~self.degenerate)

    def rect(self, pad: float = 0.0, floor: dict[int, float] | None = None) -> HyperRect:
        """Hyper-rectangle over the active dimensions, widened by ``pad * width`` per side.

        ``floor`` maps a dimension index to a lower bound the padding may not
        cross (zero for variances and spots).
        """
        ivs = []
        for i in self.active:
            lo, hi = float(self.lo[i]), float(self.hi[i])
            w = hi - lo
            lo, hi = lo - pad * w, hi + pad * w
            if floor and i in floor:
                lo = max(lo, floor[i])
            ivs.append(Interval(lo, hi))
        if not ivs:
            raise ValueError("every envelope dimension is degenerate")
        return HyperRect(tuple(ivs))


def scenario_envelope(cube: ScenarioCube, time_index: int | None = None,
                      maturity: float | None = None) -> Envelope:
    """Per-dimension [min, max] over paths at one time point.

    With ``time_index=None`` the envelope spans all time points and, when
    ``maturity`` is given, a final time-to-maturity dimension is appended.
    """
    if cube.n_paths < 1:
        raise ValueError("empty cube")
    if time_index is not None:
        s = cube.states[:, time_index, :]
        return Envelope(s.min(axis=0), s.max(axis=0), cube.labels)
    s = cube.states.reshape(-1, cube.states.shape[2])
    lo, hi = s.min(axis=0), s.max(axis=0)
    labels = cube.labels
    if maturity is not None:
        ttm = maturity - cube.times
        lo = np.append(lo, ttm.min())
        hi = np.append(hi, ttm.max())
        labels = labels + ("ttm",)
    return Envelope(lo, hi, labels)
