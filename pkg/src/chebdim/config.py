"""Run configuration: JSON schema, validation and object construction.

A run file looks like::

    {
      "name": "fxswap-demo",
      "kind": "fxswap",                       # or "spread"
      "seed": 1,                              # outer simulation seed
      "simulation": {"paths": 1000, "times": {"step": 0.45, "count": 11}},
      "curves": {"USD": {"tenors": [...], "zeros": [...]}},
      "model": {"components": [...], "gauss_corr": null, "spot_corr": 0.0},
      "trade": {...},
      "benchmark": {"seed": 7},
      "tensors": {"mode": "per-time", "points_per_dim": 4, "pad": 0.01,
                  "sample_seed": 11, "factors": "all", "completion": {...}},
      "simm": {"config": "simm_desk.json", "quantile": 0.95}
    }

Times and payment schedules are either explicit lists (year fractions,
ACT/365F) or ``{"step": h, "count": n}`` meaning ``h, 2h, ..., nh``.
Model components:

* ``{"name", "type": "G2", "a1", "a2", "sigma1", "sigma2", "rho", "curve"}``
* ``{"name", "type": "HW1F", "a", "b", "sigma", "r0", "curve"?}``
* ``{"name", "type": "GBM", "mu", "sigma", "x0"}``
* ``{"name", "type": "Heston", "kappa", "theta", "xi", "rho", "v0", "s0", "mu"?}``

Trades:

* ``{"type": "fxswap", "notional_for", "pay_times", "dom_curve", "for_curve",
  "fx", "direction"?, "atm": true}`` (or explicit ``rate_dom``, ``rate_for``,
  ``notional_dom`` with ``"atm": false``)
* ``{"type": "spread", "strike", "maturity", "underlyings": [a, b], "rate", "n_inner"}``

``tensors.factors`` is ``"all"`` or a list naming the risk factors to build
tensors for; the others are left out of the Chebyshev run.

The SIMM file path is resolved against the run file's folder first, then the
bundled ``configs`` folder.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .completion import CompletionConfig
from .engine import MODES, FxSwapProblem, SpreadProblem, TensorPlan
from .pricers import FxSwapTrade, SpreadModel, SpreadOptionTrade, atm_fx_swap, fx_swap_factors
from .rfem import (
    G2Params, GBMParams, HW1FParams, HestonParams, ISDA_LABELS, ISDA_TENORS, ModelStack, ZeroCurve,
    model_to_market,
)
from .simm import SimmConfig, SimmConfigError


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


_COMPONENT_KEYS = {
    "G2": ("a1", "a2", "sigma1", "sigma2", "rho", "curve"),
    "HW1F": ("a", "b", "sigma", "r0"),
    "GBM": ("mu", "sigma", "x0"),
    "Heston": ("kappa", "theta", "xi", "rho", "v0", "s0"),
}
_COMPLETION_KEYS = {f.name for f in fields(CompletionConfig)}


def bundled(name: str) -> Path:
    return Path(str(resources.files("chebdim") / "configs" / name))


def _grid(spec, what: str, errs: list[str]) -> list[float]:
    if isinstance(spec, dict):
        try:
            h, n = float(spec["step"]), int(spec["count"])
        except (KeyError, TypeError, ValueError):
            errs.append(f"{what}: expected a list or {{step, count}}")
            return []
        if h <= 0 or n < 1:
            errs.append(f"{what}: step must be positive and count >= 1")
            return []
        return [round(h * (i + 1), 12) for i in range(n)]
    if isinstance(spec, list) and spec and all(isinstance(x, (int, float)) for x in spec):
        out = [float(x) for x in spec]
        if out[0] <= 0 or any(b <= a for a, b in zip(out, out[1:])):
            errs.append(f"{what}: must be positive and strictly increasing")
        return out
    errs.append(f"{what}: expected a non-empty list or {{step, count}}")
    return []


def _num(d: dict, key: str, what: str, errs: list[str], lo=None, positive=False):
    if key not in d:
        errs.append(f"{what}: missing {key!r}")
        return None
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        errs.append(f"{what}.{key}: expected a finite number")
        return None
    if positive and not v > 0:
        errs.append(f"{what}.{key}: must be positive")
    if lo is not None and v < lo:
        errs.append(f"{what}.{key}: must be >= {lo}")
    return float(v)


def validate(raw: dict, base_dir: Path | None = None) -> list[str]:
    """Every problem with a run configuration, not just the first."""
    errs: list[str] = []
    if not isinstance(raw, dict):
        return ["configuration must be a JSON object"]
    kind = raw.get("kind")
    if kind not in ("fxswap", "spread"):
        errs.append("kind: must be 'fxswap' or 'spread'")
    if not isinstance(raw.get("seed"), int) or isinstance(raw.get("seed"), bool):
        errs.append("seed: an integer seed is required (no entropy defaults)")

    sim = raw.get("simulation", {})
    if not isinstance(sim.get("paths"), int) or sim.get("paths", 0) < 1:
        errs.append("simulation.paths: positive integer required")
    _grid(sim.get("times"), "simulation.times", errs)

    curves = raw.get("curves", {})
    for name, c in curves.items():
        try:
            ZeroCurve(c["tenors"], c["zeros"])
        except (KeyError, TypeError, ValueError) as e:
            errs.append(f"curves.{name}: {e}")

    names = []
    comps = raw.get("model", {}).get("components")
    if not isinstance(comps, list) or not comps:
        errs.append("model.components: non-empty list required")
        comps = []
    for i, c in enumerate(comps):
        what = f"model.components[{i}]"
        t = c.get("type")
        if t not in _COMPONENT_KEYS:
            errs.append(f"{what}.type: one of {sorted(_COMPONENT_KEYS)}")
            continue
        names.append(c.get("name"))
        for k in _COMPONENT_KEYS[t]:
            if k == "curve":
                if c.get("curve") not in curves:
                    errs.append(f"{what}.curve: unknown curve {c.get('curve')!r}")
            else:
                _num(c, k, what, errs)
        if t == "HW1F" and "curve" in c and c["curve"] not in curves:
            errs.append(f"{what}.curve: unknown curve {c['curve']!r}")
    if len(set(names)) != len(names):
        errs.append("model.components: duplicate names")
    sc = raw.get("model", {}).get("spot_corr", 0.0)
    if not isinstance(sc, (int, float)) or abs(sc) > 1:
        errs.append("model.spot_corr: number in [-1, 1] required")

    tr = raw.get("trade", {})
    if kind == "fxswap":
        _grid(tr.get("pay_times"), "trade.pay_times", errs)
        _num(tr, "notional_for", "trade", errs, positive=True)
        for k in ("dom_curve", "for_curve", "fx"):
            if tr.get(k) not in names:
                errs.append(f"trade.{k}: must name a model component, got {tr.get(k)!r}")
        if not tr.get("atm", True):
            for k in ("rate_dom", "rate_for", "notional_dom"):
                _num(tr, k, "trade", errs)
    elif kind == "spread":
        _num(tr, "strike", "trade", errs)
        _num(tr, "maturity", "trade", errs, positive=True)
        n = tr.get("n_inner")
        if not isinstance(n, int) or n < 2 or n % 2:
            errs.append("trade.n_inner: even integer >= 2 required (antithetic pairs)")
        u = tr.get("underlyings")
        if not (isinstance(u, list) and len(u) == 2 and all(x in names for x in u)):
            errs.append("trade.underlyings: two model component names required")
        if tr.get("rate") not in names:
            errs.append(f"trade.rate: must name a model component, got {tr.get('rate')!r}")

    b = raw.get("benchmark", {})
    if not isinstance(b.get("seed"), int):
        errs.append("benchmark.seed: integer required")

    tn = raw.get("tensors", {})
    if tn.get("mode") not in MODES:
        errs.append(f"tensors.mode: one of {list(MODES)}")
    if kind == "fxswap" and tn.get("mode") == "time-in-domain":
        errs.append("tensors.mode: FX swap cashflows need per-time tensors")
    p = tn.get("points_per_dim")
    if not isinstance(p, int) or p < 2:
        errs.append("tensors.points_per_dim: integer >= 2 required")
    if not isinstance(tn.get("sample_seed"), int):
        errs.append("tensors.sample_seed: integer required")
    comp = tn.get("completion", {})
    unknown = set(comp) - _COMPLETION_KEYS
    if unknown:
        errs.append(f"tensors.completion: unknown keys {sorted(unknown)}")
    else:
        try:
            CompletionConfig(**comp)
        except (TypeError, ValueError) as e:
            errs.append(f"tensors.completion: {e}")

    sm = raw.get("simm", {})
    q = sm.get("quantile", 0.95)
    if not isinstance(q, (int, float)) or not 0 < q < 1:
        errs.append("simm.quantile: number in (0, 1) required")
    try:
        resolve_simm(sm.get("config"), base_dir)
    except (OSError, ValueError) as e:
        errs.append(f"simm.config: {e}")
    return errs


def resolve_simm(name, base_dir: Path | None) -> Path:
    if not isinstance(name, str):
        raise ValueError("path to a SIMM parameter file required")
    cands = [Path(name)] if Path(name).is_absolute() else []
    if base_dir is not None:
        cands.append(base_dir / name)
    cands.append(bundled(name))
    for c in cands:
        if c.is_file():
            SimmConfig.load(c)
            return c
    raise FileNotFoundError(f"SIMM file {name!r} not found")


@dataclass
class RunConfig:
    raw: dict
    simm_path: Path
    base_dir: Path | None = None

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None, seed_override: int | None = None) -> "RunConfig":
        raw = copy.deepcopy(raw)
        if seed_override is not None:
            raw["seed"] = int(seed_override)
        errs = validate(raw, base_dir)
        if errs:
            raise ConfigError(errs)
        return cls(raw, resolve_simm(raw["simm"]["config"], base_dir), base_dir)

    @classmethod
    def load(cls, path, seed_override: int | None = None) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError([f"{path}: not valid JSON ({e})"]) from None
        return cls.from_dict(raw, path.parent, seed_override)

    # -- derived pieces ------------------------------------------------

    @property
    def kind(self) -> str:
        return self.raw["kind"]

    @property
    def name(self) -> str:
        return self.raw.get("name", self.kind)

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def paths(self) -> int:
        return self.raw["simulation"]["paths"]

    @property
    def times(self) -> np.ndarray:
        return np.array(_grid(self.raw["simulation"]["times"], "", []))

    @property
    def quantile(self) -> float:
        return float(self.raw["simm"].get("quantile", 0.95))

    @property
    def benchmark_seed(self) -> int:
        return self.raw["benchmark"]["seed"]

    def config_hash(self) -> str:
        """sha256 of the canonical run config plus the SIMM parameter file."""
        h = hashlib.sha256()
        h.update(json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode())
        h.update(self.simm_path.read_bytes())
        return h.hexdigest()

    def simm(self) -> SimmConfig:
        try:
            return SimmConfig.load(self.simm_path)
        except SimmConfigError as e:
            raise ConfigError([f"simm.config: {e}"]) from None

    def stack(self) -> ModelStack:
        curves = {k: ZeroCurve(v["tenors"], v["zeros"]) for k, v in self.raw.get("curves", {}).items()}
        comps = []
        for c in self.raw["model"]["components"]:
            t = c["type"]
            if t == "G2":
                p = G2Params(c["a1"], c["a2"], c["sigma1"], c["sigma2"], c["rho"], curves[c["curve"]])
            elif t == "HW1F":
                p = HW1FParams(c["a"], c["b"], c["sigma"], c["r0"], curves.get(c.get("curve")))
            elif t == "GBM":
                p = GBMParams(c["mu"], c["sigma"], c["x0"])
            else:
                p = HestonParams(c["kappa"], c["theta"], c["xi"], c["rho"], c["v0"], c["s0"], c.get("mu", 0.0))
            comps.append((c["name"], p))
        m = self.raw["model"]
        gc = m.get("gauss_corr")
        n_heston = sum(c["type"] == "Heston" for c in m["components"])
        sc = float(m.get("spot_corr", 0.0))
        spot = None
        if n_heston > 1:
            spot = np.full((n_heston, n_heston), sc)
            np.fill_diagonal(spot, 1.0)
        return ModelStack(tuple(comps), None if gc is None else np.asarray(gc, dtype=float), spot)

    def problem(self, stack: ModelStack | None = None):
        stack = stack or self.stack()
        tr = self.raw["trade"]
        if self.kind == "fxswap":
            pay = tuple(_grid(tr["pay_times"], "", []))
            today = model_to_market(stack.initial_state()[None, :], 0.0, stack, ISDA_TENORS)
            if tr.get("atm", True):
                trade = atm_fx_swap(today, tr["notional_for"], pay, tr["dom_curve"], tr["for_curve"],
                                    tr["fx"], tr.get("direction", 1))
            else:
                trade = FxSwapTrade(tr["notional_dom"], tr["notional_for"], tr["rate_dom"], tr["rate_for"],
                                    pay, tr["dom_curve"], tr["for_curve"], tr["fx"], tr.get("direction", 1))
            return FxSwapProblem(trade, stack, fx_swap_factors(trade, today, ISDA_LABELS))
        u1, u2 = tr["underlyings"]
        trade = SpreadOptionTrade(tr["strike"], tr["maturity"], (u1, u2), tr["rate"])
        model = SpreadModel(stack.component(u1), stack.component(u2), float(self.raw["model"].get("spot_corr", 0.0)))
        return SpreadProblem(trade, model, stack, tr["n_inner"])

    def plans(self, problem) -> list[TensorPlan]:
        tn = self.raw["tensors"]
        comp = CompletionConfig(**tn.get("completion", {}))
        factors = tn.get("factors", "all")
        factors = problem.factors if factors == "all" else tuple(factors)
        bad = [f for f in factors if f not in problem.factors]
        if bad:
            raise ConfigError([f"tensors.factors: {f} is not a risk factor of the trade" for f in bad])
        return [TensorPlan(f, tn["mode"], tn["points_per_dim"], comp, tn.get("pad", 0.01), tn["sample_seed"])
                for f in factors]
