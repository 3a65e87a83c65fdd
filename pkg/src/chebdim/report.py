"""Delimited outputs and figures for the command line.

Every CSV starts with ``# config_sha256=<hash>``; every JSON object carries
a ``config_sha256`` key. Wall-clock figures go to ``timings.json`` only, so
all other files are reproducible byte for byte. Figures use the Agg
backend, imported on first use.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .engine import Comparison, SensitivityCube
from .simm import MarginProfile

SAMPLE_PATHS = 20


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], config_hash: str) -> None:
    buf = io.StringIO()
    buf.write(f"# config_sha256={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> tuple[str, list[dict]]:
    lines = Path(path).read_text().splitlines()
    h = lines[0].split("=", 1)[1] if lines and lines[0].startswith("# config_sha256=") else ""
    return h, list(csv.DictReader(lines[1:] if h else lines))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path, obj: dict, config_hash: str | None) -> None:
    out = {"config_sha256": config_hash} if config_hash is not None else {}
    out.update(_clean(obj))
    Path(path).write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")


def write_profile(out_dir: Path, p: MarginProfile, config_hash: str) -> None:
    write_csv(out_dir / "profiles.csv", ["time", "eim", "pfim", "method"], p.rows(), config_hash)
    write_json(out_dir / "profiles.json", p.to_dict(), config_hash)


def read_profile(out_dir: Path) -> MarginProfile:
    d = json.loads((Path(out_dir) / "profiles.json").read_text())
    return MarginProfile(d["times"], d["eim"], d["pfim"], d["quantile"], d["method"])


def write_sensitivity_sample(path, sens: SensitivityCube, config_hash: str, n_paths: int = SAMPLE_PATHS) -> None:
    rows = []
    for i in range(min(n_paths, sens.values.shape[0])):
        for k, t in enumerate(sens.times):
            for j, f in enumerate(sens.factors):
                rows.append((i, float(t), f, float(sens.values[i, k, j])))
    write_csv(path, ["path", "time", "factor", "value"], rows, config_hash)


def write_comparison(out_dir: Path, cmp: Comparison, config_hash: str) -> None:
    e = cmp.hist_edges
    write_csv(out_dir / "errors_hist.csv", ["bin_lo", "bin_hi", "count"],
              [(float(e[i]), float(e[i + 1]), int(c)) for i, c in enumerate(cmp.hist_counts)], config_hash)
    rows = [(f, float(t), float(cmp.max_error[k, j]), float(cmp.q95_error[k, j]))
            for j, f in enumerate(cmp.factors) for k, t in enumerate(cmp.times)]
    write_csv(out_dir / "errors_by_factor.csv", ["factor", "time", "max_rel_error", "q95_rel_error"], rows,
              config_hash)
    write_json(out_dir / "errors_summary.json", cmp.summary(), config_hash)


def write_profile_errors(out_dir: Path, a: MarginProfile, b: MarginProfile, err: dict, config_hash: str) -> None:
    rows = [(float(t), float(a.eim[k]), float(b.eim[k]), float(err["eim"][k]),
             float(a.pfim[k]), float(b.pfim[k]), float(err["pfim"][k])) for k, t in enumerate(a.times)]
    write_csv(out_dir / "profile_errors.csv",
              ["time", f"eim_{a.method}", f"eim_{b.method}", "eim_rel_error",
               f"pfim_{a.method}", f"pfim_{b.method}", "pfim_rel_error"], rows, config_hash)


# ----------------------------------------------------------------------
# figures
# ----------------------------------------------------------------------

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path, config_hash: str) -> None:
    # no Software/date chunks, so reruns are byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None, "Description": f"config_sha256={config_hash}"})


def plot_error_histogram(path, cmp: Comparison, config_hash: str, title: str = "") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    finite = np.isfinite(cmp.hist_edges[1:])
    labels = [f"{lo:g}-{hi:g}" if np.isfinite(hi) else f">{lo:g}"
              for lo, hi in zip(cmp.hist_edges[:-1], cmp.hist_edges[1:])]
    total = max(int(cmp.hist_counts.sum()), 1)
    ax.bar(range(len(labels)), 100 * cmp.hist_counts / total, color=np.where(finite, "tab:blue", "tab:red"))
    ax.set_xticks(range(len(labels)), labels, rotation=60, fontsize=7)
    ax.set_xlabel("relative error (%)")
    ax.set_ylabel("share of nodes (%)")
    ax.set_title(title or "Chebyshev vs benchmark sensitivities")
    fig.tight_layout()
    _save(fig, path, config_hash)
    plt.close(fig)


def plot_profiles(path, profiles: Sequence[MarginProfile], config_hash: str, title: str = "") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    styles = ["-", "--", ":"]
    for i, p in enumerate(profiles):
        ls = styles[i % len(styles)]
        ax.plot(p.times, p.eim, ls, color="tab:blue", marker="o", ms=3, label=f"EIM {p.method}")
        ax.plot(p.times, p.pfim, ls, color="tab:orange", marker="s", ms=3,
                label=f"PFIM {int(round(100 * p.quantile))}% {p.method}")
    ax.set_xlabel("time (years)")
    ax.set_ylabel("delta margin")
    ax.set_title(title or "Dynamic delta margin profiles")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path, config_hash)
    plt.close(fig)


def plot_error_by_time(path, cmp: Comparison, config_hash: str) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.semilogy(cmp.times, 100 * np.maximum(cmp.max_error.max(axis=1), 1e-12), "o-", label="max over factors")
    ax.semilogy(cmp.times, 100 * np.maximum(np.median(cmp.q95_error, axis=1), 1e-12), "s--",
                label="median of per-factor 95% quantile")
    ax.set_xlabel("time (years)")
    ax.set_ylabel("relative error (%)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path, config_hash)
    plt.close(fig)
