from dataclasses import dataclass

import numpy as np
import pytest

from chebdim.completion import CompletionConfig
from chebdim.engine import (
    ConvergenceError, FxSwapProblem, SensitivityCube, SpreadProblem, TensorPlan, build_all, build_phi,
    build_tensor, compare, dynamic_margins, evaluate_dynamic_sensitivities, node_errors, run_benchmark,
    savings, tensor_domain,
)
from chebdim.pricers import CallCounter, SpreadModel, SpreadOptionTrade, atm_fx_swap, fx_swap_factors
from chebdim.rfem import (
    G2Params, GBMParams, HW1FParams, HestonParams, ISDA_LABELS, ModelStack, ScenarioCube, ZeroCurve,
    model_to_market, simulate,
)
from chebdim.simm import SimmConfig
from chebdim.tt import tt_entry

CURVE = ZeroCurve((0.5, 1, 2, 5, 10, 30), (0.02, 0.022, 0.025, 0.03, 0.032, 0.033))
EUR = ZeroCurve((0.5, 1, 2, 5, 10, 30), (0.01, 0.011, 0.013, 0.016, 0.018, 0.019))
TIMES = 0.45 * np.arange(1, 12)


def fx_setup(paths=200, seed=1):
    g = G2Params(0.05, 0.5, 0.01, 0.008, -0.6, CURVE)
    e = G2Params(0.04, 0.4, 0.009, 0.007, -0.5, EUR)
    stack = ModelStack((("USD.fwd", g), ("USD.disc", g), ("EUR.fwd", e), ("EUR.disc", e),
                        ("EURUSD", GBMParams(0.0, 0.1, 1.1))))
    today = model_to_market(stack.initial_state()[None, :], 0.0, stack)
    trade = atm_fx_swap(today, 1e7, tuple(0.5 * np.arange(1, 11)), "USD.disc", "EUR.disc", "EURUSD")
    prob = FxSwapProblem(trade, stack, fx_swap_factors(trade, today, ISDA_LABELS))
    return prob, simulate(stack, paths, TIMES, seed)


def spread_setup(n_inner=200):
    h1 = HestonParams(2.0, 0.04, 0.3, -0.7, 0.04, 100.0)
    h2 = HestonParams(1.5, 0.05, 0.3, -0.5, 0.05, 90.0)
    stack = ModelStack((("r", HW1FParams(0.1, 0.02, 0.01, 0.02)), ("S1", h1), ("S2", h2)),
                       spot_corr=np.array([[1, 0.3], [0.3, 1]]))
    trade = SpreadOptionTrade(10.0, 1.0, ("S1", "S2"), "r")
    return SpreadProblem(trade, SpreadModel(h1, h2, 0.3), stack, n_inner)


@dataclass
class LinearProblem:
    """Synthetic trade whose sensitivity is affine in state and time."""

    stack: ModelStack
    coef: np.ndarray
    maturity: float = 5.0
    mode: str = "per-time"
    calls: int = 0

    @property
    def factors(self):
        return ("X.a",)

    def sensitivities(self, states, t, factors, seed=None, counter=None):
        states = np.atleast_2d(states)
        self.calls += len(states)
        if counter is not None:
            counter.add(2 * len(states))
        return (states @ self.coef + 0.5 * np.asarray(t) + 1.0)[:, None]

    def simm_units(self, states, factors, values):
        return values

    def floors(self):
        return {}


def linear_setup(paths=300):
    stack = ModelStack((("a", GBMParams(0, 0.2, 1.0)), ("b", GBMParams(0, 0.3, 2.0)),
                        ("c", GBMParams(0, 0.1, 0.5))))
    cube = simulate(stack, paths, [0.5, 1.0, 2.0], seed=3)
    return LinearProblem(stack, np.array([0.3, -1.2, 2.0])), cube


LIN_CFG = CompletionConfig(initial_rank=2, max_rank=3, initial_train=150, initial_test=20,
                           max_evaluations=216, target_error=1e-6)


def test_phi_matches_benchmark_at_node():
    prob, cube = fx_setup(paths=50)
    k, i = 4, 17
    grid, active, fill = tensor_domain(TensorPlan("FX.EURUSD"), prob, cube, k)
    for j, f in enumerate(prob.factors[::7]):
        phi = build_phi(prob, f, float(cube.times[k]), fill, active)
        bench = prob.sensitivities(cube.states[i:i + 1, k, :], float(cube.times[k]), [f])[0, 0]
        assert phi(cube.states[i:i + 1, k, active])[0] == bench


def test_phi_dimensions():
    prob, cube = fx_setup(paths=50)
    grid, _, _ = tensor_domain(TensorPlan("FX.EURUSD", points_per_dim=4), prob, cube, 0)
    assert grid.ndim == 9 and grid.size == 262_144
    sp = spread_setup()
    scube = simulate(sp.stack, 50, np.arange(1, 12) / 12, seed=1)
    grid, _, _ = tensor_domain(TensorPlan("EQ.S1", "time-in-domain", 6), sp, scube, None)
    assert grid.ndim == 6 and grid.size == 46_656


def test_phi_rejects_unknown_factor():
    prob, cube = fx_setup(paths=20)
    with pytest.raises(KeyError):
        build_phi(prob, "IR.GBP.disc.1y", 1.0, np.zeros(9), np.arange(9))


def test_linear_phi_converges_with_initial_budget():
    prob, cube = linear_setup()
    bt = build_tensor(TensorPlan("X.a", points_per_dim=6, completion=LIN_CFG), cube, prob, 1)
    assert bt.report.converged and bt.report.test_error <= 1e-6
    assert bt.report.evaluations_used == LIN_CFG.initial_train + LIN_CFG.initial_test
    assert bt.calls == 2 * bt.report.evaluations_used


def test_time_in_domain_linear():
    prob, cube = linear_setup()
    bt = build_tensor(TensorPlan("X.a", "time-in-domain", 5, LIN_CFG), cube, prob, None)
    sens = evaluate_dynamic_sensitivities([bt], cube, prob.factors, prob.maturity)
    want = np.stack([prob.sensitivities(cube.states[:, k], t, ["X.a"])[:, 0] for k, t in enumerate(cube.times)], 1)
    np.testing.assert_allclose(sens.values[:, :, 0], want, rtol=0, atol=1e-5 * np.abs(want).max())


def test_evaluation_makes_no_pricing_calls():
    prob, cube = linear_setup()
    tensors = build_all([TensorPlan("X.a", points_per_dim=6, completion=LIN_CFG)], cube, prob)
    before = prob.calls
    sens = evaluate_dynamic_sensitivities(tensors, cube, prob.factors, prob.maturity)
    assert prob.calls == before
    assert sens.method == "chebyshev" and sens.values.shape == (300, 3, 1)


def test_grid_node_returns_stored_value():
    prob, cube = linear_setup()
    bt = build_tensor(TensorPlan("X.a", points_per_dim=6, completion=LIN_CFG), cube, prob, 0)
    idx = (1, 2, 0)
    x = bt.grid.coords([idx])
    assert bt.evaluate(x)[0] == pytest.approx(tt_entry(bt.tensor, idx), rel=1e-13)


def test_collapsed_dimension_uses_fill():
    prob, cube = linear_setup(paths=50)
    states = cube.states.copy()
    states[:, :, 2] = 0.7
    flat = ScenarioCube(states, cube.times, cube.labels)
    cfg = CompletionConfig(initial_rank=2, max_rank=2, initial_train=20, initial_test=8, target_error=1e-6)
    bt = build_tensor(TensorPlan("X.a", points_per_dim=6, completion=cfg), flat, prob, 0)
    assert list(bt.active) == [0, 1] and bt.grid.ndim == 2
    sens = evaluate_dynamic_sensitivities([bt], ScenarioCube(states[:, :1], cube.times[:1], cube.labels),
                                          prob.factors, prob.maturity)
    want = prob.sensitivities(states[:, 0], cube.times[0], ["X.a"])[:, 0]
    np.testing.assert_allclose(sens.values[:, 0, 0], want, rtol=0, atol=1e-5 * np.abs(want).max())


def test_non_convergence_is_a_hard_failure():
    prob, cube = fx_setup(paths=50)
    cfg = CompletionConfig(initial_train=20, initial_test=5, max_evaluations=25, target_error=1e-12, max_rank=1)
    with pytest.raises(ConvergenceError) as e:
        build_tensor(TensorPlan("FX.EURUSD", completion=cfg), cube, prob, 3)
    assert e.value.factor == "FX.EURUSD" and e.value.time_index == 3
    assert "FX.EURUSD" in str(e.value) and "time point 3" in str(e.value)


def test_benchmark_call_count_fx():
    prob, cube = fx_setup(paths=100)
    c = CallCounter()
    one = ScenarioCube(cube.states[:, :1], cube.times[:1], cube.labels)
    run_benchmark(prob, one, ["FX.EURUSD"], counter=c)
    assert c.calls == 2 * 100


def test_benchmark_call_count_spread():
    sp = spread_setup(n_inner=20)
    cube = simulate(sp.stack, 30, np.arange(1, 12) / 12, seed=1)
    c = CallCounter()
    s = run_benchmark(sp, cube, counter=c, threads=3)
    assert c.calls == 2 * 30 * 11 and s.values.shape == (30, 11, 1)


def test_zero_notional_benchmark_is_zero():
    prob, cube = fx_setup(paths=30)
    prob.trade = prob.trade.scaled(0.0)
    s = run_benchmark(prob, cube)
    assert s.method == "benchmark" and np.all(s.values == 0)


def test_benchmark_thread_independent():
    sp = spread_setup(n_inner=20)
    cube = simulate(sp.stack, 20, np.arange(1, 5) / 12, seed=2)
    a = run_benchmark(sp, cube, seed=5, threads=1)
    b = run_benchmark(sp, cube, seed=5, threads=4)
    assert a.values.tobytes() == b.values.tobytes()


def test_compare_identity_and_scaling():
    rng = np.random.default_rng(0)
    v = rng.uniform(0.5, 2.0, (40, 3, 2)) * rng.choice([-1, 1], (40, 3, 2))
    b = SensitivityCube(v, [1, 2, 3], ("a", "b"), "benchmark")
    assert compare(b, b).overall_max == 0.0
    c = SensitivityCube(1.001 * v, [1, 2, 3], ("a", "b"), "chebyshev")
    cmp = compare(c, b)
    np.testing.assert_allclose(cmp.errors, 1e-3, rtol=1e-9)
    assert cmp.hist_counts.sum() == v.size
    with pytest.raises(ValueError):
        compare(SensitivityCube(v[:, :, :1], [1, 2, 3], ("a",), "x"), b)


def test_node_errors_zero_slice_is_absolute():
    b = np.zeros((5, 1, 1))
    c = np.full((5, 1, 1), 0.25)
    np.testing.assert_array_equal(node_errors(c, b), 0.25)


def test_savings_examples():
    assert savings(20_000, 500).call_savings == pytest.approx(0.975)
    assert savings(20_000, 20_000).call_savings == 0.0
    assert savings(110_000, 12_000).call_savings == pytest.approx(0.891, abs=5e-4)


def test_dynamic_margins_fx_units():
    prob, cube = fx_setup(paths=20)
    sens = run_benchmark(prob, ScenarioCube(cube.states[:, :2], cube.times[:2], cube.labels))
    d = {"name": "t", "classes": {
        "IR": {"buckets": {"X": {"factors": [f for f in prob.factors if f.startswith("IR.")],
                                 "risk_weight": 1.0, "corr": 1.0}}},
        "FX": {"buckets": {"FX": {"factors": ["FX.EURUSD"], "risk_weight": 1.0}}}}}
    m = dynamic_margins(prob, sens, cube, SimmConfig.from_dict(d))
    k = 1
    ir = np.abs(sens.values[:, k, :-1].sum(axis=1) * 1e-4)
    fx = np.abs(sens.values[:, k, -1] * 0.01 * cube.states[:, k, -1])
    np.testing.assert_allclose(m[:, k], np.sqrt(ir**2 + fx**2), rtol=1e-12)


def test_cube_round_trip(tmp_path):
    s = SensitivityCube(np.arange(12.0).reshape(2, 3, 2), [1, 2, 3], ("a", "b"), "benchmark")
    s.save(tmp_path / "s.bin")
    back = SensitivityCube.load(tmp_path / "s.bin")
    assert back.factors == s.factors and back.method == "benchmark"
    np.testing.assert_array_equal(back.values, s.values)


def test_tensor_round_trip(tmp_path):
    from chebdim.engine import BuiltTensor
    prob, cube = linear_setup(paths=50)
    bt = build_tensor(TensorPlan("X.a", points_per_dim=6, completion=LIN_CFG), cube, prob, 2)
    bt.save(tmp_path / "t.bin")
    back = BuiltTensor.load(tmp_path / "t.bin")
    pts = cube.states[:, 2, :]
    np.testing.assert_array_equal(back.evaluate(pts), bt.evaluate(pts))


@pytest.mark.slow
def test_mode_equivalence_spread():
    # a short, smooth window: both modes are fitted to the same CRN phi
    sp = spread_setup(n_inner=200)
    times = np.array([0.05, 0.1, 0.15])
    cube = simulate(sp.stack, 200, times, seed=4)
    target = 0.02
    cfg = CompletionConfig(initial_rank=1, max_rank=5, initial_train=2500, initial_test=500,
                           max_evaluations=6000, target_error=target, error_metric="rms", seed=1)
    one = build_tensor(TensorPlan("EQ.S1", "time-in-domain", 5, cfg, sample_seed=9), cube, sp, None)
    per = [build_tensor(TensorPlan("EQ.S1", "per-time", 5, cfg, sample_seed=9), cube, sp, k) for k in range(3)]
    a = evaluate_dynamic_sensitivities([one], cube, sp.factors, sp.maturity).values[:, :, 0]
    b = evaluate_dynamic_sensitivities(per, cube, sp.factors, sp.maturity).values[:, :, 0]
    scale = np.abs(b).max()
    assert np.max(np.abs(a - b)) <= 2 * target * scale
