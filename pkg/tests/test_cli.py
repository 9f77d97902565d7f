import contextlib
import io
import os
import re

import numpy as np
import pytest

from carmadelay.acceptance import cli_outputs
from carmadelay.cli import main

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def cfg(name):
    return os.path.join(CONFIGS, name)


def run(*args):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(list(args))
    return code, out.getvalue(), err.getvalue()


def test_check_carma31_prints_coefficients():
    code, out, _ = run("check", cfg("carma31.ini"))
    assert code == 0
    assert "C_0 = 1\n" in out and "C_1 = 1\n" in out and "F_1 = 1\n" in out
    assert "all hypotheses hold" in out


def test_check_unstable_names_hypothesis():
    code, out, _ = run("check", cfg("unstable.ini"))
    assert code == 3
    assert "causality" in out.splitlines()[-1]


def test_check_q_zero_not_applicable():
    code, out, _ = run("check", cfg("ou.ini"))
    assert code == 0
    assert "invertibility: not applicable" in out


@pytest.mark.parametrize("override, key", [
    ("model.A3=1", "model.a3"),
    ("grid.dt=abc", "grid"),
    ("task.colour=red", "task.colour"),
    ("driver.rate=1", "driver.rate"),
    ("model.A1=1 2", "model.A1"),
])
def test_config_errors_name_the_key(override, key):
    code, _, err = run("check", cfg("ou.ini"), "--set", override)
    assert code == 2
    assert key in err


def test_unknown_section(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[model]\nn = 1\np = 1\nq = 0\nA1 = 1\n[extra]\nx = 1\n")
    code, _, err = run("check", str(p))
    assert code == 2 and "[extra]" in err


def test_missing_config_file():
    assert run("check", "no/such/file.ini")[0] == 2


def test_hypothesis_violation_exit_code(tmp_path):
    code, _, err = run("simulate", cfg("unstable.ini"), "--set", f"task.output={tmp_path}/x.csv")
    assert code == 3 and "causality" in err


def test_kernel_ou(tmp_path):
    code, out, _ = run("kernel", cfg("ou.ini"), "--set", f"task.output={tmp_path}/k")
    assert code == 0
    files = sorted(os.listdir(tmp_path / "k"))
    assert files == ["gtilde.csv", "gtilde_1.csv"]
    lines = [ln for ln in (tmp_path / "k" / "gtilde.csv").read_text().splitlines()
             if not ln.startswith("#")]
    assert lines[0] == "t,gtilde_11"
    rows = np.array([ln.split(",") for ln in lines[1:]], dtype=float)
    assert np.allclose(rows[:, 1], np.exp(-2 * rows[:, 0]), rtol=1e-12)
    assert float(re.search(r"FFT\| = (\S+)", out).group(1)) < 1e-4


def test_simulate_recover_predict(tmp_path):
    c = cfg("carma21.ini")
    path, drv = tmp_path / "x.csv", tmp_path / "dz.csv"
    common = ["--set", "grid.K=12800"]
    assert run("simulate", c, *common, "--set", f"task.output={path}",
               "--set", f"task.write_driver={drv}")[0] == 0
    code, out, _ = run("recover", c, *common, "--set", f"task.input={path}",
                       "--set", f"task.output={tmp_path}/z.csv", "--set", f"task.truth={drv}")
    assert code == 0
    nrmse = float(re.search(r"normalized RMSE = (\S+),", out).group(1))
    corr = float(re.search(r"correlation = (\S+)", out).group(1))
    assert nrmse < 0.1 and corr > 0.95
    code, out, _ = run("predict", c, *common, "--set", f"task.input={path}",
                       "--set", f"task.output={tmp_path}/p.csv")
    assert code == 0
    text = (tmp_path / "p.csv").read_text()
    assert "# [model]" in text and "# seed = 20240611" in text


def test_simulate_fractional(tmp_path):
    code, out, _ = run("simulate", cfg("fractional.ini"), "--set", f"task.output={tmp_path}/f.csv",
                       "--set", "grid.K=640")
    assert code == 0 and "(ma)" in out


def test_insufficient_history_is_numerical_failure(tmp_path):
    p = tmp_path / "short.csv"
    p.write_text("t,X_1\n0,0\n0.5,0\n1,0\n")
    code, _, err = run("predict", cfg("carma21.ini"), "--set", f"task.input={p}",
                       "--set", f"task.output={tmp_path}/p.csv")
    assert code == 4 and "engine" in err


def test_byte_stable(tmp_path):
    a = cli_outputs(str(tmp_path / "a"))
    b = cli_outputs(str(tmp_path / "b"))
    assert a == b
    assert all(a[k] == b"0" for k in a if k.endswith(":exit"))
    assert "path.csv" in a and "kernel/gtilde.csv" in a


@pytest.mark.slow
def test_selftest_exits_zero():
    code, out, _ = run("selftest")
    assert code == 0
    assert out.count("[PASS]") == 10
