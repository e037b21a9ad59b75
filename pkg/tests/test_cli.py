import csv
import json

import pytest

from qlookback.cli import main
from qlookback.config import OUTPUT_ROOT_ENV, Config, ConfigError


def read_rows(path):
    return list(csv.reader(line for line in path.read_text().splitlines() if not line.startswith("#")))


def test_config_defaults_roundtrip():
    cfg = Config.defaults()
    again = Config.from_text(cfg.to_text())
    assert again == cfg and again.hash == cfg.hash


def test_config_overrides_change_hash():
    cfg = Config.defaults()
    other = cfg.with_overrides({"market.r": "0.03"})
    assert other["market.r"] == 0.03 and other.hash != cfg.hash


def test_config_unknown_key_has_line_number():
    with pytest.raises(ConfigError) as info:
        Config.from_text("[market]\nr = 0.05\n\n[pipeline]\nmethd = M1\n")
    assert info.value.line == 5
    with pytest.raises(ConfigError, match="unknown section"):
        Config.from_text("[service]\nport = 1\n")


def test_config_value_errors():
    with pytest.raises(ConfigError, match="pipeline.method"):
        Config.from_text("[pipeline]\nmethod = M3\n")
    with pytest.raises(ConfigError):
        Config.from_text("[grid]\nqubits = 5\n")
    with pytest.raises(ConfigError):
        Config.from_text("[mc]\nantithetic = maybe\n")
    with pytest.raises(ConfigError, match="line"):
        Config.from_text("[market\nr = 1\n")


def test_price_writes_artifacts(tmp_path):
    out = tmp_path / "a"
    assert main(["price", "-o", str(out), "--output.verbosity", "quiet"]) == 0
    rows = read_rows(out / "price.csv")
    assert rows[0] == ["z", "value", "stderr", "provenance"]
    assert len(rows) == 17
    cfg_text = (out / "config.ini").read_text()
    tag = cfg_text.splitlines()[0]
    assert tag.startswith("# config_hash=")
    assert (out / "price.csv").read_text().startswith(tag)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == tag.split("=")[1]
    assert Config.from_text(cfg_text).hash == manifest["config_hash"]


def test_price_is_byte_identical(tmp_path):
    args = ["price", "--pipeline.method", "M1", "--output.verbosity", "quiet"]
    assert main(args + ["-o", str(tmp_path / "a")]) == 0
    assert main(args + ["-o", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "price.csv").read_bytes() == (tmp_path / "b" / "price.csv").read_bytes()


def test_rerun_from_resolved_config(tmp_path):
    assert main(["price", "-o", str(tmp_path / "a"), "--market.r", "0.03", "--output.verbosity", "quiet"]) == 0
    cfg = tmp_path / "a" / "config.ini"
    assert main(["price", "-c", str(cfg), "-o", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "price.csv").read_bytes() == (tmp_path / "b" / "price.csv").read_bytes()


def test_invalid_method_exits_2(tmp_path, capsys):
    assert main(["price", "--pipeline.method", "M3", "-o", str(tmp_path)]) == 2
    assert "pipeline.method" in capsys.readouterr().err


def test_bad_config_file_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[market]\nr = 0.05\n[pipeline]\nmethd = M1\n")
    assert main(["price", "-c", str(bad), "-o", str(tmp_path)]) == 2
    assert "line 4" in capsys.readouterr().err
    assert main(["price", "-c", str(tmp_path / "missing.ini")]) == 2


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    assert main(["price", "-o", "sub", "--output.verbosity", "quiet"]) == 0
    assert (tmp_path / "sub" / "price.csv").exists()


def test_numerical_failure_exits_1(tmp_path, monkeypatch, capsys):
    from qlookback import cli
    from qlookback.pipeline import ExtractionError

    def boom(spec):
        raise ExtractionError("collapsed")

    monkeypatch.setattr(cli, "run", boom)
    assert main(["price", "-o", str(tmp_path), "--output.verbosity", "quiet"]) == 1
    assert "collapsed" in capsys.readouterr().err


def test_benchmark_columns_and_summary(tmp_path):
    out = tmp_path / "bench"
    assert main(["benchmark", "-o", str(out), "--mc.paths", "20000", "--output.verbosity", "quiet"]) == 0
    rows = read_rows(out / "benchmark_T2_q4.csv")
    assert rows[0] == ["z", "fd", "expm-m1", "expm-m2", "mc", "mc_stderr"]
    assert len(rows) == 1 + 13
    summary = json.loads((out / "benchmark_summary.json").read_text())
    assert set(summary["pair_max_abs_deviation"]) == {
        "fd|expm-m1", "fd|expm-m2", "fd|mc", "expm-m1|expm-m2", "expm-m1|mc", "expm-m2|mc",
    }
    assert set(summary["mc_band"]) == {"fd", "expm-m1", "expm-m2"}
    assert summary["mc_band"]["fd"]["verdict"] in ("PASS", "FAIL")


def test_pauli_audit(tmp_path, capsys):
    out = tmp_path / "audit"
    assert main(["pauli-audit", "-o", str(out), "--output.verbosity", "quiet"]) == 0
    rows = read_rows(out / "pauli_audit.csv")
    table = {r[0]: r for r in rows[1:]}
    assert table["HC"][1:3] == ["94", "208"]
    assert table["HJ"][1:3] == ["208", "192"]
    assert table["M2 mean T=2"][1:4] == ["456", "456", "0"]
    assert table["M2 mean T=4"][1:4] == ["2180", "2180", "0"]
    assert all(r[4] == "true" for r in rows[1:])
    text = capsys.readouterr().out
    assert "r/sigma^2=1" in text


def test_fit_ansatz(tmp_path):
    out = tmp_path / "fit"
    assert main(["fit-ansatz", "-o", str(out), "--pipeline.method", "M1", "--output.verbosity", "quiet"]) == 0
    fit = json.loads((out / "fit.json").read_text())
    assert fit["converged"] and fit["cost"] < 1e-6 and fit["q"] == 4
    assert len((out / "theta.csv").read_text().splitlines()) == 1 + 1 + 100
    assert (out / "ansatz.txt").read_text().count("\n") == 1 + 104
