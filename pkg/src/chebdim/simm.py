"""Reduced SIMM delta margin and dynamic margin profiles.

Per risk class, weighted sensitivities ``WS_k = RW_k s_k`` aggregate within a
bucket as ``K_b = sqrt(WS^T R_b WS)`` and across buckets as
``M^2 = sum_b K_b^2 + sum_{b != c} gamma_bc S_b S_c`` with ``S_b = sum WS_k``.
Classes combine as ``sqrt(M^T Psi M)``. ``S_b`` is left uncapped, so the class
margin is exactly the quadratic form of the block matrix built from ``R_b``
and ``gamma``. That block matrix is checked for positive semidefiniteness at
load, which keeps every margin real and nonnegative.

No concentration, curvature or vega terms. Parameters come from a JSON file;
the bundled one is a desk-scale illustration, not an ISDA calibration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

PSD_TOL = -1e-10
ERROR_FLOOR = 1e-6


class SimmConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Bucket:
    name: str
    factors: tuple[str, ...]
    weights: np.ndarray
    corr: np.ndarray


@dataclass(frozen=True)
class RiskClass:
    name: str
    buckets: tuple[Bucket, ...]
    gamma: np.ndarray

    @property
    def factors(self) -> tuple[str, ...]:
        return tuple(f for b in self.buckets for f in b.factors)

    def block_matrix(self) -> np.ndarray:
        """Correlation of WS across the whole class (intra blocks plus gamma)."""
        sizes = [len(b.factors) for b in self.buckets]
        n = sum(sizes)
        out = np.empty((n, n))
        offs = np.concatenate([[0], np.cumsum(sizes)])
        for i, bi in enumerate(self.buckets):
            for j, bj in enumerate(self.buckets):
                blk = bi.corr if i == j else np.full((sizes[i], sizes[j]), self.gamma[i, j])
                out[offs[i]:offs[i + 1], offs[j]:offs[j + 1]] = blk
        return out


def _check_corr(m: np.ndarray, what: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise SimmConfigError(f"{what}: correlation must be square")
    if not np.allclose(m, m.T, atol=1e-14):
        raise SimmConfigError(f"{what}: correlation must be symmetric")
    if not np.all(np.diag(m) == 1.0):
        raise SimmConfigError(f"{what}: correlation needs a unit diagonal")
    if np.any(np.abs(m) > 1):
        raise SimmConfigError(f"{what}: correlations must lie in [-1, 1]")
    lo = np.linalg.eigvalsh(m).min() if len(m) else 0.0
    if lo < PSD_TOL:
        raise SimmConfigError(f"{what}: not positive semidefinite (min eigenvalue {lo:.3g})")
    return m


def _corr_from(spec, n: int, what: str) -> np.ndarray:
    if np.ndim(spec) == 0:
        m = np.full((n, n), float(spec))
        np.fill_diagonal(m, 1.0)
    else:
        m = np.asarray(spec, dtype=float)
        if m.shape != (n, n):
            raise SimmConfigError(f"{what}: expected a {n}x{n} correlation matrix")
    return _check_corr(m, what)


@dataclass(frozen=True)
class SimmConfig:
    name: str
    classes: tuple[RiskClass, ...]
    psi: np.ndarray
    currency: str = "USD"
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        idx = {}
        for ci, rc in enumerate(self.classes):
            for bi, b in enumerate(rc.buckets):
                for k, f in enumerate(b.factors):
                    if f in idx:
                        raise SimmConfigError(f"risk factor {f!r} listed twice")
                    idx[f] = (ci, bi, k)
        object.__setattr__(self, "_index", idx)
        _check_corr(self.psi, "cross-class psi")
        if self.psi.shape[0] != len(self.classes):
            raise SimmConfigError("psi must have one row per risk class")
        for rc in self.classes:
            _check_corr(rc.block_matrix(), f"class {rc.name} (buckets with gamma)")

    @property
    def factors(self) -> tuple[str, ...]:
        return tuple(self._index)

    @classmethod
    def from_dict(cls, d: dict) -> "SimmConfig":
        try:
            classes = []
            for cname, cd in d["classes"].items():
                buckets = []
                for bname, bd in cd["buckets"].items():
                    factors = tuple(bd["factors"])
                    rw = np.broadcast_to(np.asarray(bd["risk_weight"], dtype=float), (len(factors),)).copy()
                    if np.any(rw < 0):
                        raise SimmConfigError(f"{cname}/{bname}: negative risk weight")
                    corr = _corr_from(bd.get("corr", 0.0), len(factors), f"{cname}/{bname}")
                    buckets.append(Bucket(bname, factors, rw, corr))
                nb = len(buckets)
                g = cd.get("gamma", 0.0)
                gamma = _corr_from(g, nb, f"{cname} gamma") if nb else np.zeros((0, 0))
                classes.append(RiskClass(cname, tuple(buckets), gamma))
            names = [c.name for c in classes]
            psi_spec = d.get("psi", 0.0)
            if isinstance(psi_spec, dict):
                psi = np.eye(len(names))
                for a, row in psi_spec.items():
                    for b, v in row.items():
                        i, j = names.index(a), names.index(b)
                        psi[i, j] = psi[j, i] = float(v)
            else:
                psi = _corr_from(psi_spec, len(names), "psi")
            return cls(d.get("name", "unnamed"), tuple(classes), psi, d.get("currency", "USD"))
        except KeyError as e:
            raise SimmConfigError(f"SIMM config is missing key {e}") from None

    @classmethod
    def load(cls, path) -> "SimmConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def delta_margin(sv, cfg: SimmConfig):
    """Delta margin of a sensitivity vector already in SIMM units.

    ``sv`` needs ``factors`` and ``values``; a single-row vector gives a float,
    a batch gives one margin per row.
    """
    out = margins(sv.factors, sv.values, cfg)
    return float(out[0]) if out.shape[0] == 1 else out


def margins(factors: Sequence[str], values, cfg: SimmConfig) -> np.ndarray:
    """Delta margin per row of ``values`` (m, n_factors), in SIMM units.

    Factors missing from the config are an error; config factors absent from
    ``factors`` count as zero sensitivity.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    factors = list(factors)
    if values.shape[1] != len(factors):
        raise ValueError("one column per factor required")
    missing = [f for f in factors if f not in cfg._index]
    if missing:
        raise SimmConfigError(f"no risk weight for {missing[0]!r}" +
                              (f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""))
    col = {f: i for i, f in enumerate(factors)}
    m = values.shape[0]
    class_margin = np.zeros((m, len(cfg.classes)))
    for ci, rc in enumerate(cfg.classes):
        K2 = np.zeros((m, len(rc.buckets)))
        S = np.zeros((m, len(rc.buckets)))
        for bi, b in enumerate(rc.buckets):
            ws = np.zeros((m, len(b.factors)))
            for k, f in enumerate(b.factors):
                if f in col:
                    ws[:, k] = b.weights[k] * values[:, col[f]]
            K2[:, bi] = np.einsum("mi,ij,mj->m", ws, b.corr, ws)
            S[:, bi] = ws.sum(axis=1)
        off = rc.gamma - np.diag(np.diag(rc.gamma))
        m2 = K2.sum(axis=1) + np.einsum("mb,bc,mc->m", S, off, S)
        class_margin[:, ci] = np.sqrt(np.maximum(m2, 0.0))
    tot = np.einsum("mr,rs,ms->m", class_margin, cfg.psi, class_margin)
    return np.sqrt(np.maximum(tot, 0.0))


def to_simm_units(factors: Sequence[str], values, levels: dict[str, np.ndarray] | None = None,
                  rate_unit: float = 1e-4, rel_unit: float = 0.01) -> np.ndarray:
    """Convert dV/ds columns to SIMM sensitivities.

    Rates: value change per 1bp (``dV/dz * 1e-4``). FX and equity: value
    change per 1% relative move (``dV/dX * 0.01 * X``); ``levels[f]`` gives X
    per row.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    out = np.empty_like(values)
    for j, f in enumerate(factors):
        kind = f.split(".", 1)[0]
        if kind == "IR":
            out[:, j] = values[:, j] * rate_unit
        elif kind in ("FX", "EQ"):
            if levels is None or f not in levels:
                raise ValueError(f"level needed to convert {f!r}")
            out[:, j] = values[:, j] * rel_unit * levels[f]
        else:
            raise ValueError(f"unknown risk class in factor id {f!r}")
    return out


@dataclass
class MarginProfile:
    times: np.ndarray
    eim: np.ndarray
    pfim: np.ndarray
    quantile: float
    method: str

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.eim = np.asarray(self.eim, dtype=float)
        self.pfim = np.asarray(self.pfim, dtype=float)
        if not (len(self.times) == len(self.eim) == len(self.pfim)):
            raise ValueError("profile arrays must match the time grid")
        if np.any(self.eim < 0) or np.any(self.pfim < 0):
            raise ValueError("margins are nonnegative")

    def rows(self) -> list[tuple]:
        return [(float(t), float(e), float(p), self.method) for t, e, p in zip(self.times, self.eim, self.pfim)]

    def to_dict(self) -> dict:
        return {"times": self.times.tolist(), "eim": self.eim.tolist(), "pfim": self.pfim.tolist(),
                "quantile": self.quantile, "method": self.method}


def margin_profile(margins, times, q: float = 0.95, method: str = "benchmark") -> MarginProfile:
    """EIM (mean over paths) and PFIM (q-quantile, linear interpolation) per time."""
    margins = np.asarray(margins, dtype=float)
    if not 0 < q < 1:
        raise ValueError("quantile level must be in (0, 1)")
    if margins.ndim != 2 or margins.shape[0] == 0:
        raise ValueError("margins must be a non-empty (paths, times) array")
    return MarginProfile(times, margins.mean(axis=0), np.quantile(margins, q, axis=0), q, method)


def relative_errors(a, b, floor_frac: float = ERROR_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """``|a - b| / max(|b|, floor)`` per point with ``floor = floor_frac * max|b|``.

    Also returns the mask of points at or above the floor, which are the only
    ones that count towards a maximum.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    floor = floor_frac * np.max(np.abs(b)) if b.size else 0.0
    denom = np.maximum(np.abs(b), floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.where(a == b, 0.0, np.abs(a - b) / denom)
    return err, (np.abs(b) >= floor) & (denom > 0)


def profile_error(a: MarginProfile, b: MarginProfile) -> dict:
    """Relative errors of ``a`` against the benchmark ``b`` for EIM and PFIM."""
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times):
        raise ValueError("profiles live on different time grids")
    e, me = relative_errors(a.eim, b.eim)
    p, mp = relative_errors(a.pfim, b.pfim)
    return {"eim": e, "pfim": p,
            "eim_max": float(e[me].max()) if me.any() else 0.0,
            "pfim_max": float(p[mp].max()) if mp.any() else 0.0}
