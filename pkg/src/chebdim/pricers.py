"""Reference pricers and brute-force (bump and reprice) sensitivities.

Both pricers work on batches: an FX swap is priced for every market state in
a :class:`~chebdim.rfem.MarketState`, a spread option for every row of an
(m, 6) array of ``(r, S1, v1, S2, v2, tau)``. One priced state counts as one
pricing-function call.

Sensitivities are partial derivatives ``dV/ds`` by central differences:
rate tenors are bumped by +-1bp absolute, FX rates and spots by +-1%
relative. Conversion to SIMM units happens in :mod:`chebdim.simm`.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .rfem import HestonParams, MarketState

RATE_BUMP = 1e-4
REL_BUMP = 0.01


class PricingError(ArithmeticError):
    pass


class CallCounter:
    """Thread-safe tally of pricing-function calls (one per priced state)."""

    def __init__(self):
        self._lock = threading.Lock()
        self.calls = 0

    def add(self, n: int) -> None:
        with self._lock:
            self.calls += int(n)


def _count(counter: CallCounter | None, n: int) -> None:
    if counter is not None:
        counter.add(n)


@dataclass
class SensitivityVector:
    """Sensitivities for a batch of states: ``values[m, j]`` is dV/ds_j."""

    factors: tuple[str, ...]
    values: np.ndarray
    bumps: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != len(self.factors):
            raise ValueError("one column per risk factor required")

    def column(self, factor: str) -> np.ndarray:
        return self.values[:, self.factors.index(factor)]


# ----------------------------------------------------------------------
# cross-currency fixed-fixed swap
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class FxSwapTrade:
    """Fixed-fixed cross-currency swap with notional exchange at maturity.

    ``direction=+1`` receives the domestic leg and pays the foreign leg.
    Payment times are year fractions from today (ACT/365F); accruals run from
    the previous payment (from 0 for the first).
    """

    notional_dom: float
    notional_for: float
    rate_dom: float
    rate_for: float
    pay_times: tuple[float, ...]
    dom_curve: str
    for_curve: str
    fx: str
    direction: int = 1

    def __post_init__(self):
        t = np.asarray(self.pay_times, dtype=float)
        if len(t) == 0 or t[0] <= 0 or np.any(np.diff(t) <= 0):
            raise ValueError("payment schedule must be positive and strictly increasing")
        if self.notional_dom < 0 or self.notional_for < 0:
            raise ValueError("notionals must be nonnegative")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        object.__setattr__(self, "pay_times", tuple(map(float, t)))

    @property
    def maturity(self) -> float:
        return self.pay_times[-1]

    @property
    def accruals(self) -> np.ndarray:
        t = np.asarray(self.pay_times)
        return np.diff(np.concatenate([[0.0], t]))

    def scaled(self, alpha: float) -> "FxSwapTrade":
        return FxSwapTrade(self.notional_dom * alpha, self.notional_for * alpha, self.rate_dom,
                           self.rate_for, self.pay_times, self.dom_curve, self.for_curve,
                           self.fx, self.direction)


def interp_weights(tenors: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Matrix W with ``W @ z`` the linearly interpolated zero rate at ``tau``.

    Flat beyond the first and last tenor.
    """
    tenors = np.asarray(tenors, dtype=float)
    tau = np.asarray(tau, dtype=float)
    W = np.zeros((len(tau), len(tenors)))
    for i, x in enumerate(tau):
        if x <= tenors[0]:
            W[i, 0] = 1.0
        elif x >= tenors[-1]:
            W[i, -1] = 1.0
        else:
            k = int(np.searchsorted(tenors, x, side="right")) - 1
            w = (x - tenors[k]) / (tenors[k + 1] - tenors[k])
            W[i, k] = 1 - w
            W[i, k + 1] = w
    return W


def _live_flows(trade: FxSwapTrade, t: float):
    """Times to payment and accruals of the flows strictly after ``t``."""
    pay = np.asarray(trade.pay_times)
    live = pay > t
    return pay[live] - t, trade.accruals[live]


def leg_unit_values(trade: FxSwapTrade, zeros: np.ndarray, tenors, t: float, rate: float) -> np.ndarray:
    """Per-unit-notional value of one fixed leg with final exchange, per state."""
    tau, acc = _live_flows(trade, t)
    if len(tau) == 0:
        return np.zeros(len(zeros))
    if tau[-1] > tenors[-1] + 1e-12:
        raise PricingError(f"schedule runs to {tau[-1]:.4g}y beyond curve horizon {tenors[-1]:.4g}y")
    W = interp_weights(tenors, tau)
    df = np.exp(-(zeros @ W.T) * tau)
    return rate * df @ acc + df[:, -1]


def fx_swap_pv(trade: FxSwapTrade, market: MarketState, t: float = 0.0,
               counter: CallCounter | None = None) -> np.ndarray:
    """Domestic-currency PV of the swap for every state in ``market``."""
    _count(counter, market.size)
    dom = leg_unit_values(trade, market.curves[trade.dom_curve], market.tenors, t, trade.rate_dom)
    fgn = leg_unit_values(trade, market.curves[trade.for_curve], market.tenors, t, trade.rate_for)
    pv = trade.notional_dom * dom - market.fx[trade.fx] * trade.notional_for * fgn
    return trade.direction * pv


def par_rate(market: MarketState, curve: str, pay_times: Sequence[float]) -> float:
    """Fixed rate that makes a unit leg with final exchange worth par today."""
    dummy = FxSwapTrade(1.0, 1.0, 0.0, 0.0, tuple(pay_times), curve, curve, "")
    tau, acc = _live_flows(dummy, 0.0)
    W = interp_weights(market.tenors, tau)
    df = np.exp(-(market.curves[curve][:1] @ W.T) * tau)[0]
    return float((1 - df[-1]) / (df @ acc))


def atm_fx_swap(market: MarketState, notional_for: float, pay_times, dom_curve: str,
                for_curve: str, fx: str, direction: int = 1) -> FxSwapTrade:
    """Both legs at par with notionals matched at today's FX rate: PV 0 today."""
    x0 = float(market.fx[fx][0])
    return FxSwapTrade(notional_for * x0, notional_for, par_rate(market, dom_curve, pay_times),
                       par_rate(market, for_curve, pay_times), tuple(pay_times), dom_curve,
                       for_curve, fx, direction)


def fx_swap_factors(trade: FxSwapTrade, market: MarketState, labels: Sequence[str]) -> tuple[str, ...]:
    """ISDA-style risk factor ids: every tenor of every curve, then the FX rate."""
    out = [f"IR.{c}.{lab}" for c in market.curves for lab in labels]
    out.append(f"FX.{trade.fx}")
    return tuple(out)


def bump_market(market: MarketState, factor: str, sign: int, rate_bump: float = RATE_BUMP,
                rel_bump: float = REL_BUMP, labels: Sequence[str] = ()) -> tuple[MarketState, np.ndarray]:
    """Copy of ``market`` with one risk factor bumped; returns it with the bump sizes."""
    out = market.copy()
    kind, rest = factor.split(".", 1)
    if kind == "IR":
        curve, lab = rest.rsplit(".", 1)
        k = list(labels).index(lab)
        z = out.curves[curve].copy()
        z[:, k] += sign * rate_bump
        out.curves[curve] = z
        return out, np.full(market.size, rate_bump)
    if kind == "FX":
        x = out.fx[rest]
        out.fx[rest] = x * (1 + sign * rel_bump)
        return out, rel_bump * x
    raise KeyError(f"unknown risk factor {factor!r}")


def fx_swap_sensitivities(trade: FxSwapTrade, market: MarketState, t: float, factors: Sequence[str],
                          labels: Sequence[str], counter: CallCounter | None = None,
                          rate_bump: float = RATE_BUMP, rel_bump: float = REL_BUMP) -> SensitivityVector:
    cols = []
    for f in factors:
        up, h = bump_market(market, f, +1, rate_bump, rel_bump, labels)
        dn, _ = bump_market(market, f, -1, rate_bump, rel_bump, labels)
        d = (fx_swap_pv(trade, up, t, counter) - fx_swap_pv(trade, dn, t, counter)) / (2 * h)
        if not np.all(np.isfinite(d)):
            raise PricingError(f"non-finite sensitivity for {f}")
        cols.append(d)
    return SensitivityVector(tuple(factors), np.column_stack(cols) if cols else np.zeros((market.size, 0)),
                             {"rate_bump": rate_bump, "rel_bump": rel_bump, "scheme": "central"})


# ----------------------------------------------------------------------
# spread option under two Heston underlyings
# ----------------------------------------------------------------------

INNER_STEPS = 32


@dataclass(frozen=True)
class SpreadOptionTrade:
    """European call on the spread: payoff max(S1 - S2 - K, 0) at ``maturity``."""

    strike: float
    maturity: float
    underlyings: tuple[str, str]
    rate: str

    def __post_init__(self):
        if not self.maturity > 0:
            raise ValueError("maturity must be positive")
        object.__setattr__(self, "underlyings", tuple(self.underlyings))


@dataclass(frozen=True)
class SpreadModel:
    """Inner dynamics: two Heston assets drifting at the current short rate."""

    h1: HestonParams
    h2: HestonParams
    spot_corr: float = 0.0

    def __post_init__(self):
        if abs(self.spot_corr) > 1:
            raise ValueError("spot_corr must be in [-1, 1]")


def _inner_normals(rng: np.random.Generator, n_base: int) -> np.ndarray:
    return rng.standard_normal((n_base, INNER_STEPS, 4))


def _normals_for(seeds, n_inner: int, antithetic: bool) -> np.ndarray:
    """(len(seeds), paths, steps, 4); antithetic halves are negated copies."""
    if n_inner < 2 or (antithetic and n_inner % 2):
        raise ValueError("n_inner must be >= 2, and even with antithetic variates")
    n_base = n_inner // 2 if antithetic else n_inner
    out = np.empty((len(seeds), n_inner, INNER_STEPS, 4))
    for i, s in enumerate(seeds):
        z = _inner_normals(np.random.default_rng(s), n_base)
        if antithetic:
            out[i, :n_base] = z
            out[i, n_base:] = -z
        else:
            out[i] = z
    return out


def spread_payoffs(trade: SpreadOptionTrade, model: SpreadModel, states: np.ndarray,
                   z: np.ndarray) -> np.ndarray:
    """Discounted payoffs, shape (m, paths), from states (m, 6) and normals.

    ``z`` is (m or 1, paths, steps, 4); full-truncation log-Euler with
    ``dt = tau / INNER_STEPS``.
    """
    states = np.atleast_2d(states)
    r, s1, v1, s2, v2, tau = (states[:, i:i + 1] for i in range(6))
    dt = tau / INNER_STEPS
    sdt = np.sqrt(dt)
    p1, p2 = model.h1, model.h2
    c = model.spot_corr
    cc = np.sqrt(1 - c**2)
    ra, rb = np.sqrt(1 - p1.rho_sv**2), np.sqrt(1 - p2.rho_sv**2)
    x1 = np.log(np.maximum(s1, 1e-300)) + np.zeros(z.shape[1])
    x2 = np.log(np.maximum(s2, 1e-300)) + np.zeros(z.shape[1])
    w1 = v1 + np.zeros(z.shape[1])
    w2 = v2 + np.zeros(z.shape[1])
    for k in range(INNER_STEPS):
        zk = z[:, :, k, :]
        e1 = zk[..., 0]
        e2 = c * zk[..., 0] + cc * zk[..., 1]
        f1 = p1.rho_sv * e1 + ra * zk[..., 2]
        f2 = p2.rho_sv * e2 + rb * zk[..., 3]
        q1 = np.maximum(w1, 0.0)
        q2 = np.maximum(w2, 0.0)
        x1 = x1 + (r - 0.5 * q1) * dt + np.sqrt(q1) * sdt * e1
        x2 = x2 + (r - 0.5 * q2) * dt + np.sqrt(q2) * sdt * e2
        w1 = w1 + p1.kappa * (p1.theta_v - q1) * dt + p1.xi * np.sqrt(q1) * sdt * f1
        w2 = w2 + p2.kappa * (p2.theta_v - q2) * dt + p2.xi * np.sqrt(q2) * sdt * f2
    pay = np.maximum(np.exp(x1) - np.where(s2 > 0, np.exp(x2), 0.0) - trade.strike, 0.0)
    return np.exp(-r * tau) * pay


def spread_option_pv(trade: SpreadOptionTrade, model: SpreadModel, states, n_inner: int, seed,
                     antithetic: bool = True, counter: CallCounter | None = None,
                     chunk: int = 64) -> np.ndarray:
    """Monte-Carlo price for each state row ``(r, S1, v1, S2, v2, tau)``.

    ``seed`` is either an int shared by every state (common random numbers
    across states) or an integer array with one seed per state.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    m = len(states)
    _count(counter, m)
    per_state = isinstance(seed, np.ndarray) and seed.ndim == 1
    if per_state and len(seed) != m:
        raise ValueError(f"{len(seed)} seeds for {m} states")
    out = np.empty(m)
    if not per_state:
        z = _normals_for([seed], n_inner, antithetic)
        for a in range(0, m, chunk):
            out[a:a + chunk] = spread_payoffs(trade, model, states[a:a + chunk], z).mean(axis=1)
    else:
        for a in range(0, m, chunk):
            z = _normals_for(seed[a:a + chunk], n_inner, antithetic)
            out[a:a + chunk] = spread_payoffs(trade, model, states[a:a + chunk], z).mean(axis=1)
    return out


def spread_delta(trade: SpreadOptionTrade, model: SpreadModel, states, n_inner: int, seed,
                 antithetic: bool = True, counter: CallCounter | None = None,
                 rel_bump: float = REL_BUMP, underlying: int = 0) -> np.ndarray:
    """dV/dS by +-1% relative spot bumps sharing the same random numbers."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    col = 1 if underlying == 0 else 3
    up = states.copy()
    dn = states.copy()
    up[:, col] *= 1 + rel_bump
    dn[:, col] *= 1 - rel_bump
    h = rel_bump * states[:, col]
    pu = spread_option_pv(trade, model, up, n_inner, seed, antithetic, counter)
    pd = spread_option_pv(trade, model, dn, n_inner, seed, antithetic, counter)
    d = (pu - pd) / (2 * h)
    if not np.all(np.isfinite(d)):
        raise PricingError(f"non-finite spread-option delta on underlying {underlying}")
    return d


# ----------------------------------------------------------------------
# generic helpers
# ----------------------------------------------------------------------

def central_difference(f: Callable[[np.ndarray], np.ndarray], s: np.ndarray, h: float) -> np.ndarray:
    return (f(s + h) - f(s - h)) / (2 * h)


def noise_quantile(sens: Callable[[int, int], float], n_inner: int, n_trials: int, q: float = 0.95,
                   ref_mult: int = 50, seed: int = 0, floor: float = 1e-12) -> float:
    """q-quantile of |s_i / s_ref - 1| across ``n_trials`` independent seeds.

    ``sens(n_inner, seed)`` returns one sensitivity. The reference uses
    ``ref_mult * n_inner`` paths on a seed disjoint from the trials.
    """
    if n_trials < 30:
        raise ValueError("noise_quantile needs at least 30 trials")
    seeds = np.random.SeedSequence(seed).generate_state(n_trials + 1)
    ref = float(sens(ref_mult * n_inner, int(seeds[0])))
    if abs(ref) < floor:
        raise PricingError(f"reference sensitivity {ref:.3g} below scale floor; relative noise undefined")
    dev = np.array([abs(float(sens(n_inner, int(s))) / ref - 1) for s in seeds[1:]])
    return float(np.quantile(dev, q))
