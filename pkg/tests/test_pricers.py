import math

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.stats import norm

from chebdim.pricers import (
    CallCounter, FxSwapTrade, SpreadModel, SpreadOptionTrade, atm_fx_swap, central_difference,
    fx_swap_factors, fx_swap_pv, fx_swap_sensitivities, interp_weights, noise_quantile,
    spread_delta, spread_option_pv, spread_payoffs, _normals_for,
)
from chebdim.rfem import ISDA_LABELS, ISDA_TENORS, HestonParams, MarketState

PAY = tuple(0.5 * np.arange(1, 11))


def flat_market(m=1, usd=0.03, eur=0.02, fx=1.1):
    z = lambda c: np.full((m, len(ISDA_TENORS)), c)
    return MarketState(np.array(ISDA_TENORS), {"USD.disc": z(usd), "EUR.disc": z(eur)},
                       {"EURUSD": np.full(m, fx)})


def sloped_market():
    tau = np.array(ISDA_TENORS)
    return MarketState(tau, {"USD.disc": (0.02 + 0.004 * np.sqrt(tau))[None, :],
                             "EUR.disc": (0.01 + 0.003 * np.log1p(tau))[None, :]},
                       {"EURUSD": np.array([1.12])})


def test_zero_notional():
    t = FxSwapTrade(0.0, 0.0, 0.03, 0.02, PAY, "USD.disc", "EUR.disc", "EURUSD")
    assert fx_swap_pv(t, flat_market())[0] == 0.0


def test_single_cashflow_flat_curve():
    t = FxSwapTrade(1e6, 0.0, 0.0, 0.0, (3.0,), "USD.disc", "EUR.disc", "EURUSD")
    assert fx_swap_pv(t, flat_market(usd=0.04))[0] == pytest.approx(1e6 * math.exp(-0.12), rel=1e-14)


def test_atm_by_root_finding():
    m = sloped_market()
    atm = atm_fx_swap(m, 1e7, PAY, "USD.disc", "EUR.disc", "EURUSD")
    # oracle: solve the domestic rate independently so the swap reprices to zero
    trade = lambda c: FxSwapTrade(atm.notional_dom, atm.notional_for, c, atm.rate_for, PAY,
                                  "USD.disc", "EUR.disc", "EURUSD")
    c = brentq(lambda c: fx_swap_pv(trade(c), m)[0], -0.1, 0.2, xtol=1e-15)
    assert c == pytest.approx(atm.rate_dom, abs=1e-12)
    assert abs(fx_swap_pv(atm, m)[0]) <= 1e-10 * atm.notional_dom


def test_linearity_in_notional():
    m = sloped_market()
    t = FxSwapTrade(1.1e7, 1e7, 0.031, 0.018, PAY, "USD.disc", "EUR.disc", "EURUSD")
    base = fx_swap_pv(t, m)[0]
    for a in (0.0, 0.5, 2.0, 7.25):
        assert fx_swap_pv(t.scaled(a), m)[0] == pytest.approx(a * base, rel=1e-14, abs=1e-9)


def test_fx_delta_analytic():
    m = sloped_market()
    t = FxSwapTrade(1.1e7, 1e7, 0.031, 0.018, PAY, "USD.disc", "EUR.disc", "EURUSD")
    sv = fx_swap_sensitivities(t, m, 0.0, ["FX.EURUSD"], ISDA_LABELS)
    tau = np.asarray(PAY)
    W = interp_weights(m.tenors, tau)
    df = np.exp(-(m.curves["EUR.disc"][0] @ W.T) * tau)
    want = -t.notional_for * (t.rate_for * df @ t.accruals + df[-1])
    assert sv.values[0, 0] == pytest.approx(want, rel=1e-6)


def analytic_rate_deltas(t, m, curve):
    tau = np.asarray(PAY)
    W = interp_weights(m.tenors, tau)
    df = np.exp(-(m.curves[curve][0] @ W.T) * tau)
    if curve == t.dom_curve:
        cf = t.notional_dom * (t.rate_dom * t.accruals + (tau == tau[-1]))
    else:
        cf = -m.fx[t.fx][0] * t.notional_for * (t.rate_for * t.accruals + (tau == tau[-1]))
    return (cf * df * -tau) @ W


def test_central_difference_second_order():
    m = sloped_market()
    t = FxSwapTrade(1.1e7, 1e7, 0.031, 0.018, PAY, "USD.disc", "EUR.disc", "EURUSD")
    factors = [f"IR.USD.disc.{lab}" for lab in ("6m", "1y", "2y", "3y", "5y")]
    exact = analytic_rate_deltas(t, m, "USD.disc")[[3, 4, 5, 6, 7]]
    e1 = np.abs(fx_swap_sensitivities(t, m, 0.0, factors, ISDA_LABELS, rate_bump=2e-3).values[0] - exact)
    e2 = np.abs(fx_swap_sensitivities(t, m, 0.0, factors, ISDA_LABELS, rate_bump=1e-3).values[0] - exact)
    ratio = e1 / e2
    assert np.all((ratio >= 3.5) & (ratio <= 4.5)), ratio
    # and the 1bp production bump agrees with the derivative
    sv = fx_swap_sensitivities(t, m, 0.0, factors, ISDA_LABELS)
    np.testing.assert_allclose(sv.values[0], exact, rtol=1e-6)


def test_factor_list_and_counting():
    m = flat_market(m=5)
    t = FxSwapTrade(1.1e7, 1e7, 0.03, 0.02, PAY, "USD.disc", "EUR.disc", "EURUSD")
    f = fx_swap_factors(t, m, ISDA_LABELS)
    assert len(f) == 25 and f[-1] == "FX.EURUSD"
    c = CallCounter()
    fx_swap_sensitivities(t, m, 0.0, f, ISDA_LABELS, counter=c)
    assert c.calls == 5 * 2 * 25


def test_flows_after_t_only():
    m = flat_market()
    t = FxSwapTrade(1.0, 0.0, 0.05, 0.0, (1.0, 2.0), "USD.disc", "EUR.disc", "EURUSD")
    assert fx_swap_pv(t, m, t=1.0)[0] == pytest.approx(1.05 * math.exp(-0.03))
    assert fx_swap_pv(t, m, t=2.0)[0] == 0.0


def test_central_difference_linear_exact():
    assert central_difference(lambda s: 3 * s, np.array([0.7]), 1e-2)[0] == pytest.approx(3.0, abs=1e-14)


# ----------------------------------------------------------------------
# spread option
# ----------------------------------------------------------------------

H = HestonParams(kappa=1.5, theta_v=0.04, xi=0.5, rho_sv=-0.6, v0=0.04, s0=100.0)
MODEL = SpreadModel(H, HestonParams(kappa=1.0, theta_v=0.05, xi=0.4, rho_sv=-0.5, v0=0.05, s0=90.0), 0.3)
TRADE = SpreadOptionTrade(strike=10.0, maturity=1.0, underlyings=("S1", "S2"), rate="r")
STATE = np.array([[0.02, 100.0, 0.04, 90.0, 0.05, 1.0]])


def test_spread_far_otm():
    far = SpreadOptionTrade(1e4, 1.0, ("S1", "S2"), "r")
    assert spread_option_pv(far, MODEL, STATE, 500, seed=1)[0] == 0.0


def test_spread_deterministic():
    a = spread_option_pv(TRADE, MODEL, STATE, 500, seed=3)
    b = spread_option_pv(TRADE, MODEL, STATE, 500, seed=3)
    assert a[0] == b[0]
    per = spread_option_pv(TRADE, MODEL, np.repeat(STATE, 3, 0), 500, seed=np.array([3, 4, 3]))
    assert per[0] == a[0] and per[2] == a[0] and per[1] != a[0]


def test_black_scholes_limit():
    sig = 0.25
    flat = HestonParams(kappa=1.0, theta_v=sig**2, xi=1e-10, rho_sv=0.0, v0=sig**2, s0=100.0)
    model = SpreadModel(flat, flat, 0.0)
    trade = SpreadOptionTrade(95.0, 1.0, ("S1", "S2"), "r")
    r, T, S = 0.03, 0.8, 100.0
    state = np.array([[r, S, sig**2, 0.0, sig**2, T]])
    z = _normals_for([7], 40_000, True)
    pay = spread_payoffs(trade, model, state, z)[0]
    half = len(pay) // 2
    pairs = 0.5 * (pay[:half] + pay[half:])
    price, se = pairs.mean(), pairs.std(ddof=1) / math.sqrt(half)
    d1 = (math.log(S / 95.0) + (r + 0.5 * sig**2) * T) / (sig * math.sqrt(T))
    bs = S * norm.cdf(d1) - 95.0 * math.exp(-r * T) * norm.cdf(d1 - sig * math.sqrt(T))
    # the Euler scheme is exact for log-normal dynamics, so only MC error remains
    assert abs(price - bs) < 3 * se


def test_monotone_in_strike():
    prices = [spread_option_pv(SpreadOptionTrade(k, 1.0, ("S1", "S2"), "r"), MODEL, STATE, 1000, seed=5)[0]
              for k in np.linspace(-20, 40, 13)]
    assert all(b <= a for a, b in zip(prices, prices[1:]))


def test_antithetic_reduces_variance():
    wins = 0
    states = np.repeat(STATE, 60, axis=0)
    for trial in range(50):
        seeds = np.random.SeedSequence(trial).generate_state(60).astype(np.int64)
        on = spread_option_pv(TRADE, MODEL, states, 200, seeds, antithetic=True)
        off = spread_option_pv(TRADE, MODEL, states, 200, seeds, antithetic=False)
        wins += np.var(on) <= np.var(off)
    assert wins >= 0.9 * 50


def test_delta_counts_two_calls_per_state():
    c = CallCounter()
    d = spread_delta(TRADE, MODEL, np.repeat(STATE, 4, 0), 100, seed=1, counter=c)
    assert c.calls == 8 and np.all((d > 0) & (d < 1.5))


def test_noise_quantile_zero_for_analytic():
    assert noise_quantile(lambda n, s: 2.5, 100, 30) == 0.0


def test_noise_quantile_sqrt_scaling():
    f = lambda n, s: spread_delta(TRADE, MODEL, STATE, n, seed=s)[0]
    q1 = noise_quantile(f, 500, 100, seed=1)
    q4 = noise_quantile(f, 2000, 100, seed=1)
    assert 0.5 * 0.6 <= q4 / q1 <= 0.5 * 1.4


def test_noise_quantile_rejects_tiny_reference():
    with pytest.raises(ArithmeticError):
        noise_quantile(lambda n, s: 0.0, 100, 30)
