"""``chebdim`` command line.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure (for example a
tensor that did not converge), 4 I/O error. Failures print a JSON report on
stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .completion import CompletionError
from .config import ConfigError, RunConfig, bundled
from .container import ContainerError, write_container
from .engine import (
    ConvergenceError, SensitivityCube, build_all, compare, dynamic_margins,
    evaluate_dynamic_sensitivities, run_benchmark, savings,
)
from .pricers import CallCounter, PricingError
from .rfem import NumericalDomainError, simulate
from .simm import margin_profile, profile_error
from . import report

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _threads(n: int | None) -> int:
    return max(1, n if n else (os.cpu_count() or 1))


def _simulate_cube(cfg: RunConfig, threads: int):
    stack = cfg.stack()
    problem = cfg.problem(stack)
    cube = simulate(stack, cfg.paths, cfg.times, cfg.seed, threads)
    return problem, cube


def _finish_run(out: Path, cfg: RunConfig, problem, cube, sens: SensitivityCube, calls: int,
                timings: dict, extra: dict) -> dict:
    h = cfg.config_hash()
    simm = cfg.simm()
    t0 = time.perf_counter()
    m = dynamic_margins(problem, sens, cube, simm)
    prof = margin_profile(m, cube.times, cfg.quantile, sens.method)
    timings["margin_seconds"] = time.perf_counter() - t0
    cube.save(out / "scenario_cube.bin", {"config_sha256": h})
    sens.save(out / "sensitivities.bin", {"config_sha256": h})
    write_container(out / "margins.bin", "margin_cube", {"config_sha256": h, "method": sens.method},
                    {"margins": m, "times": cube.times})
    report.write_sensitivity_sample(out / "sensitivities_sample.csv", sens, h)
    report.write_profile(out, prof, h)
    run = {"name": cfg.name, "kind": cfg.kind, "method": sens.method, "paths": cfg.paths,
           "times": cube.times, "factors": list(sens.factors), "pricing_calls": calls,
           "seed": cfg.seed, "version": __version__}
    run.update(extra)
    report.write_json(out / "run.json", run, h)
    report.write_json(out / "timings.json", timings, None)
    report.plot_profiles(out / "profiles.png", [prof], h, f"{cfg.name}: {sens.method}")
    return run


def cmd_simulate(cfg: RunConfig, out: Path, threads: int) -> dict:
    """Scenario cube, benchmark sensitivities and margin profile."""
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    problem, cube = _simulate_cube(cfg, threads)
    t1 = time.perf_counter()
    counter = CallCounter()
    sens = run_benchmark(problem, cube, seed=cfg.benchmark_seed, counter=counter, threads=threads)
    t2 = time.perf_counter()
    return _finish_run(out, cfg, problem, cube, sens, counter.calls,
                       {"simulate_seconds": t1 - t0, "benchmark_seconds": t2 - t1}, {})


def cmd_cheb(cfg: RunConfig, out: Path, threads: int) -> dict:
    """Tensors, Chebyshev sensitivities and margin profile."""
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    problem, cube = _simulate_cube(cfg, threads)
    plans = cfg.plans(problem)
    t1 = time.perf_counter()
    tensors = build_all(plans, cube, problem, threads)
    t2 = time.perf_counter()
    sens = evaluate_dynamic_sensitivities(tensors, cube, problem.factors if len(plans) == len(problem.factors)
                                          else tuple(p.factor for p in plans), problem.maturity)
    t3 = time.perf_counter()
    h = cfg.config_hash()
    tdir = out / "tensors"
    tdir.mkdir(exist_ok=True)
    rows = []
    for i, bt in enumerate(tensors):
        bt.save(tdir / f"tensor_{i:04d}.bin", {"config_sha256": h})
        r = bt.report
        rows.append((i, bt.factor, "" if bt.time_index is None else bt.time_index, max(r.final_rank),
                     r.evaluations_used, bt.calls, r.train_error, r.test_error))
    report.write_csv(out / "tensors.csv", ["tensor", "factor", "time_index", "max_rank", "samples", "calls",
                                           "train_error", "test_error"], rows, h)
    calls = sum(bt.calls for bt in tensors)
    return _finish_run(out, cfg, problem, cube, sens, calls,
                       {"simulate_seconds": t1 - t0, "build_seconds": t2 - t1, "eval_seconds": t3 - t2},
                       {"n_tensors": len(tensors), "mode": plans[0].mode if plans else None})


def _select(s: SensitivityCube, factors: list[str]) -> SensitivityCube:
    j = [s.factors.index(f) for f in factors]
    return SensitivityCube(s.values[:, :, j], s.times, tuple(factors), s.method)


def cmd_compare(run_a: Path, run_b: Path, out: Path) -> dict:
    """Errors of run A against run B (the benchmark) and call savings."""
    out.mkdir(parents=True, exist_ok=True)
    ja = json.loads((run_a / "run.json").read_text())
    jb = json.loads((run_b / "run.json").read_text())
    ha, hb = ja["config_sha256"], jb["config_sha256"]
    h = ha if ha == hb else f"{ha}+{hb}"
    sa = SensitivityCube.load(run_a / "sensitivities.bin")
    sb = SensitivityCube.load(run_b / "sensitivities.bin")
    if sa.factors != sb.factors:
        # a run built for a subset of factors is compared on that subset
        common = [f for f in sa.factors if f in sb.factors]
        if not common:
            raise ConfigError([f"compare: runs {run_a} and {run_b} share no risk factors"])
        sa, sb = _select(sa, common), _select(sb, common)
    cmp = compare(sa, sb)
    pa, pb = report.read_profile(run_a), report.read_profile(run_b)
    perr = profile_error(pa, pb)
    ta = json.loads((run_a / "timings.json").read_text())
    tb = json.loads((run_b / "timings.json").read_text())
    sv = savings(jb["pricing_calls"], ja["pricing_calls"],
                 build_seconds=ta.get("build_seconds", ta.get("benchmark_seconds", 0.0)),
                 eval_seconds=ta.get("eval_seconds", 0.0),
                 benchmark_seconds=tb.get("benchmark_seconds", tb.get("build_seconds", 0.0)))
    report.write_comparison(out, cmp, h)
    report.write_profile_errors(out, pa, pb, perr, h)
    summary = {"run_a": ja["method"], "run_b": jb["method"],
               "max_relative_error": cmp.overall_max, "q95_relative_error": cmp.overall_q95,
               "eim_max_error": perr["eim_max"], "pfim_max_error": perr["pfim_max"]}
    summary.update(sv.to_dict())
    report.write_json(out / "savings.json", summary, h)
    report.write_json(out / "timings.json", sv.timing_dict(), None)
    report.plot_error_histogram(out / "errors_hist.png", cmp, h, f"{ja['name']}: {ja['method']} vs {jb['method']}")
    report.plot_error_by_time(out / "errors_by_time.png", cmp, h)
    report.plot_profiles(out / "profiles.png", [pa, pb], h, f"{ja['name']}: margin profiles")
    return summary


def cmd_demo(cfg: RunConfig, out: Path, threads: int) -> dict:
    cmd_simulate(cfg, out / "benchmark", threads)
    cmd_cheb(cfg, out / "chebyshev", threads)
    return cmd_compare(out / "chebyshev", out / "benchmark", out / "compare")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chebdim", description="Chebyshev tensor dynamic sensitivities and SIMM")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", type=Path, required=config_required, help="run configuration (JSON)")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
        sp.add_argument("--seed-override", type=int, default=None, help="replace the simulation seed")

    common(sub.add_parser("validate", help="check a run configuration"))
    common(sub.add_parser("simulate", help="simulate scenarios and run the benchmark"))
    common(sub.add_parser("cheb", help="build tensors and evaluate Chebyshev sensitivities"))
    c = sub.add_parser("compare", help="compare run A against benchmark run B")
    c.add_argument("run_a", type=Path)
    c.add_argument("run_b", type=Path)
    c.add_argument("--out", type=Path, required=True)
    common(sub.add_parser("demo-fxswap", help="FX swap end to end with the bundled config"), False)
    common(sub.add_parser("demo-spread", help="spread option end to end with the bundled config"), False)
    return p


def _fail(code: int, errors: list[str], **extra) -> int:
    rep = {"status": "error", "exit_code": code, "errors": errors}
    rep.update(extra)
    print(json.dumps(rep, indent=1), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.cmd == "compare":
            s = cmd_compare(args.run_a, args.run_b, args.out)
            print(json.dumps(s, indent=1))
            return EXIT_OK
        path = args.config
        if args.cmd in ("demo-fxswap", "demo-spread") and path is None:
            path = bundled("fxswap_demo.json" if args.cmd == "demo-fxswap" else "spread_demo.json")
        cfg = RunConfig.load(path, args.seed_override)
        if args.cmd == "validate":
            print(json.dumps({"status": "ok", "config_sha256": cfg.config_hash()}))
            return EXIT_OK
        out = args.out or Path(args.cmd if args.cmd.startswith("demo") else f"{cfg.name}-{args.cmd}")
        threads = _threads(args.threads)
        if args.cmd == "simulate":
            r = cmd_simulate(cfg, out, threads)
        elif args.cmd == "cheb":
            r = cmd_cheb(cfg, out, threads)
        else:
            r = cmd_demo(cfg, out, threads)
        print(json.dumps(report._clean(r), indent=1))
        return EXIT_OK
    except ConfigError as e:
        return _fail(EXIT_CONFIG, e.errors)
    except ConvergenceError as e:
        return _fail(EXIT_NUMERIC, [str(e)], factor=e.factor, time_index=e.time_index,
                     test_error=e.report.test_error)
    except (CompletionError, NumericalDomainError, PricingError, ArithmeticError) as e:
        return _fail(EXIT_NUMERIC, [f"{type(e).__name__}: {e}"])
    except (OSError, ContainerError, json.JSONDecodeError) as e:
        return _fail(EXIT_IO, [f"{type(e).__name__}: {e}"])
    except ValueError as e:
        # inconsistent inputs, e.g. comparing runs on different scenario grids
        return _fail(EXIT_CONFIG, [f"{type(e).__name__}: {e}"])


if __name__ == "__main__":
    sys.exit(main())
