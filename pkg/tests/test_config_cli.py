import copy
import json
from pathlib import Path

import pytest

from chebdim.cli import main
from chebdim.config import ConfigError, RunConfig, bundled, validate


def fx_raw(paths=12, factors=("FX.EURUSD", "IR.USD.disc.5y")):
    raw = json.loads(bundled("fxswap_demo.json").read_text())
    raw["simulation"]["paths"] = paths
    raw["tensors"]["factors"] = list(factors)
    return raw


def write(tmp_path, raw, name="run.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return p


def test_bundled_configs_validate():
    for name in ("fxswap_demo.json", "spread_demo.json"):
        raw = json.loads(bundled(name).read_text())
        assert validate(raw, bundled(name).parent) == []


def test_validate_lists_every_error():
    raw = fx_raw()
    raw["seed"] = "x"
    raw["simulation"]["paths"] = 0
    raw["tensors"]["mode"] = "sideways"
    raw["simm"]["quantile"] = 1.5
    raw["model"]["components"][0]["a1"] = "fast"
    errs = validate(raw, bundled("fxswap_demo.json").parent)
    keys = ["seed", "simulation.paths", "tensors.mode", "simm.quantile", "model.components[0]"]
    for k in keys:
        assert any(e.startswith(k) for e in errs), (k, errs)


def test_missing_seed_is_rejected():
    raw = fx_raw()
    del raw["seed"]
    with pytest.raises(ConfigError) as e:
        RunConfig.from_dict(raw, bundled("fxswap_demo.json").parent)
    assert any("seed" in m for m in e.value.errors)


def test_seed_override_changes_hash(tmp_path):
    p = write(tmp_path, fx_raw())
    (tmp_path / "simm_desk.json").write_text(bundled("simm_desk.json").read_text())
    a, b = RunConfig.load(p), RunConfig.load(p, seed_override=99)
    assert b.seed == 99 and a.config_hash() != b.config_hash()
    assert RunConfig.load(p).config_hash() == a.config_hash()


def test_unknown_tensor_factor(tmp_path):
    cfg = RunConfig.from_dict(fx_raw(factors=("IR.GBP.disc.1y",)), bundled("x").parent)
    with pytest.raises(ConfigError):
        cfg.plans(cfg.problem())


def test_exit_code_config(tmp_path, capsys):
    raw = fx_raw()
    raw["kind"] = "bond"
    assert main(["validate", "--config", str(write(tmp_path, raw))]) == 2
    rep = json.loads(capsys.readouterr().err)
    assert rep["exit_code"] == 2 and any("kind" in e for e in rep["errors"])


def test_exit_code_numerical(tmp_path, capsys):
    raw = fx_raw(factors=("FX.EURUSD",))
    raw["tensors"]["completion"].update(target_error=1e-14, max_rank=1, max_evaluations=40)
    code = main(["cheb", "--config", str(write(tmp_path, raw)), "--out", str(tmp_path / "o"), "--threads", "1"])
    assert code == 3
    rep = json.loads(capsys.readouterr().err)
    assert rep["factor"] == "FX.EURUSD" and rep["time_index"] == 0


def test_exit_code_io(tmp_path, capsys):
    assert main(["compare", str(tmp_path / "nope"), str(tmp_path / "nope2"), "--out", str(tmp_path / "c")]) == 4
    assert json.loads(capsys.readouterr().err)["exit_code"] == 4
    assert main(["validate", "--config", str(tmp_path / "missing.json")]) == 4


@pytest.fixture(scope="module")
def fx_runs(tmp_path_factory):
    d = tmp_path_factory.mktemp("fx")
    p = write(d, fx_raw())
    assert main(["simulate", "--config", str(p), "--out", str(d / "bench"), "--threads", "1"]) == 0
    assert main(["cheb", "--config", str(p), "--out", str(d / "cheb"), "--threads", "1"]) == 0
    assert main(["compare", str(d / "cheb"), str(d / "bench"), "--out", str(d / "cmp")]) == 0
    return d, p


def test_outputs_and_profile_rows(fx_runs):
    d, _ = fx_runs
    for run, method in (("bench", "benchmark"), ("cheb", "chebyshev")):
        lines = (d / run / "profiles.csv").read_text().splitlines()
        assert lines[0].startswith("# config_sha256=")
        rows = lines[2:]
        assert len(rows) == 11 and all(r.endswith("," + method) for r in rows)
        assert (d / run / "profiles.png").stat().st_size > 0
    for f in ("errors_hist.csv", "errors_by_factor.csv", "errors_summary.json", "profile_errors.csv",
              "savings.json", "timings.json", "errors_hist.png", "errors_by_time.png", "profiles.png"):
        assert (d / "cmp" / f).exists(), f
    s = json.loads((d / "cmp" / "savings.json").read_text())
    run = json.loads((d / "bench" / "run.json").read_text())
    assert s["config_sha256"] == run["config_sha256"]
    assert s["benchmark_calls"] == run["pricing_calls"] == 2 * 12 * 11 * 49


def test_compare_run_with_itself(fx_runs, tmp_path):
    d, _ = fx_runs
    assert main(["compare", str(d / "bench"), str(d / "bench"), "--out", str(tmp_path / "self")]) == 0
    s = json.loads((tmp_path / "self" / "savings.json").read_text())
    assert s["max_relative_error"] == 0.0 and s["eim_max_error"] == 0.0 and s["pfim_max_error"] == 0.0
    assert s["call_savings"] == 0.0


def test_rerun_is_bit_identical_across_threads(fx_runs, tmp_path):
    d, p = fx_runs
    assert main(["cheb", "--config", str(p), "--out", str(tmp_path / "cheb3"), "--threads", "3"]) == 0
    a, b = d / "cheb", tmp_path / "cheb3"
    files = sorted(x.relative_to(a) for x in a.rglob("*") if x.is_file() and x.name != "timings.json")
    assert files and files == sorted(x.relative_to(b) for x in b.rglob("*")
                                     if x.is_file() and x.name != "timings.json")
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_compare_mismatched_runs(fx_runs, tmp_path, capsys):
    d, _ = fx_runs
    raw = fx_raw(paths=5)
    p = write(tmp_path, raw)
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "small"), "--threads", "1"]) == 0
    assert main(["compare", str(tmp_path / "small"), str(d / "bench"), "--out", str(tmp_path / "c")]) == 2
