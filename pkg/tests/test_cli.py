import csv
import json
import os

import pytest

from dtasep import cli, harness


@pytest.fixture
def speeds(tmp_path):
    hom = tmp_path / "hom.speed"
    hom.write_text("family = constant\nvalue = 1\n")
    two = tmp_path / "two.speed"
    two.write_text("family = xstep\nframe = particle\nleft = 1\nright = 3\n")
    return hom, two


@pytest.fixture(autouse=True)
def no_env_out_dir(monkeypatch):
    monkeypatch.delenv(harness.OUT_DIR_ENV, raising=False)


def header(path):
    with open(path) as fh:
        return next(csv.reader(fh))


def manifest(primary):
    return json.loads(harness.manifest_path(primary).read_text())


def test_lpp_lln_outputs_and_manifest(tmp_path, speeds):
    out = tmp_path / "out"
    code = cli.main(["lpp-lln", "--speed", str(speeds[0]), "--x", "1", "--y", "1", "--n", "100,200",
                     "--replicas", "3", "--expect", "4", "--rtol", "0.1", "--out-dir", str(out)])
    assert code == harness.EXIT_OK
    primary = out / "lln.csv"
    assert header(primary) == harness.COLUMNS["lpp_lln"]
    m = manifest(primary)
    assert m["status"] == "PASS" and m["checks"]
    assert m["outputs"]["lln.csv"] == harness.sha256(primary.read_bytes())
    assert m["config"]["n"] == [100, 200] and "out_dir" not in m["config"]


def test_rerun_is_byte_identical(tmp_path, speeds):
    args = ["tasep-sim", "--speed", str(speeds[1]), "--init", "bernoulli:0.5", "--n", "20", "--t", "0.5",
            "--window", "-10,10", "--replicas", "2", "--snapshots", "2", "--seed", "9"]
    assert cli.main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out-dir", str(tmp_path / "b"), "--threads", "2"]) == 0
    a, b = (tmp_path / d / "tasep.csv" for d in "ab")
    assert header(a) == harness.COLUMNS["tasep"]
    assert a.read_bytes() == b.read_bytes()
    assert manifest(a)["config"] == manifest(b)["config"]


def test_out_dir_precedence(tmp_path, speeds, monkeypatch):
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"[run]\nexperiment = shape\nout_dir = {tmp_path / 'file'}\n"
                   f"[model]\nspeed = {speeds[0]}\nextent = 0.25,0.25\nh = 0.0625\n")
    assert cli.main(["run", "--config", str(cfg)]) == 0
    assert (tmp_path / "file" / "shape.csv").is_file()
    monkeypatch.setenv(harness.OUT_DIR_ENV, str(tmp_path / "env"))
    assert cli.main(["run", "--config", str(cfg)]) == 0
    assert (tmp_path / "env" / "shape.csv").is_file()
    assert cli.main(["shape-grid", "--config", str(cfg), "--out-dir", str(tmp_path / "flag"), "--h", "0.125"]) == 0
    assert header(tmp_path / "flag" / "shape.csv") == harness.COLUMNS["shape"]
    assert manifest(tmp_path / "flag" / "shape.csv")["config"]["h"] == 0.125


@pytest.mark.parametrize("argv", [
    ["lpp-lln", "--x", "1", "--y", "1", "--n", "0,100"],
    ["lpp-lln", "--x", "1", "--n", "10"],
    ["lpp-lln", "--x", "1", "--y", "1", "--n", "10", "--speed", "missing.speed"],
    ["tasep-sim", "--n", "10", "--t", "1", "--window", "-5,5", "--init", "wave"],
    ["tasep-sim", "--n", "10", "--t", "1", "--window", "-5,5", "--engine", "gillespie"],
    ["pde-check", "--mode", "residual", "--in", "nowhere.csv"],
])
def test_config_errors_write_nothing(tmp_path, argv):
    out = tmp_path / "out"
    assert cli.main(argv + ["--out-dir", str(out)]) == harness.EXIT_CONFIG
    assert not out.exists()


def test_bad_speed_file_is_config_error(tmp_path):
    bad = tmp_path / "bad.speed"
    bad.write_text("family = constant\nvalue = -2\n")
    assert cli.main(["shape-grid", "--speed", str(bad), "--out-dir", str(tmp_path / "o")]) == harness.EXIT_CONFIG


def test_config_for_another_experiment(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nexperiment = hydro\n")
    assert cli.main(["godunov", "--config", str(cfg), "--t", "1"]) == harness.EXIT_CONFIG


def test_failed_check_exit_code(tmp_path, speeds):
    code = cli.main(["lpp-lln", "--speed", str(speeds[0]), "--x", "1", "--y", "1", "--n", "50",
                     "--expect", "10", "--out-dir", str(tmp_path)])
    assert code == harness.EXIT_FAIL
    assert manifest(tmp_path / "lln.csv")["status"] == "FAIL"


def test_godunov_then_pde_check(tmp_path, speeds):
    out = str(tmp_path)
    assert cli.main(["godunov", "--speed", str(speeds[1]), "--t", "1", "--dx", "0.01",
                     "--out-dir", out]) == 0
    assert header(tmp_path / "godunov.csv") == harness.COLUMNS["godunov"]
    assert cli.main(["pde-check", "--mode", "weak", "--in", str(tmp_path / "godunov.csv"), "--out-dir", out]) == 0
    rep = json.loads((tmp_path / "pde_check.json").read_text())
    assert rep["pass"] and rep["max_defect"] <= rep["tol"]


def test_atomic_write_replaces(tmp_path):
    p = tmp_path / "x.txt"
    harness.atomic_write(p, b"one")
    harness.atomic_write(p, b"two")
    assert p.read_bytes() == b"two"
    assert os.listdir(tmp_path) == ["x.txt"]


def test_read_config_conflicts(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[a]\nseed = 1\n[b]\nseed = 2\n")
    with pytest.raises(harness.ConfigError):
        harness.read_config_file(cfg)
