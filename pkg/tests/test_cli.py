import json
import subprocess

import pytest

from zvonkin_em.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, main
from zvonkin_em.corrector import load_field

SMALL = """\
[problem]
preset = "ou_1d"

[experiment]
eta_grid = [0.5, 0.25, 0.125, 0.0625]
chains = 2
T_burn = 5.0
T_run = 100.0
n_boot = 10
probe_draws = 1000

[output]
dir = "out"
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "ou.toml"
    path.write_text(SMALL)
    return path


def test_list_problems(capsys):
    assert main(["list-problems"]) == EXIT_OK
    names = [line.split()[0] for line in capsys.readouterr().out.splitlines()]
    assert names == ["ou_1d", "bump_1d", "holder_sine_1d", "holder_sine_2d"]


def test_run_writes_artifacts(config, tmp_path):
    assert main(["run", "--config", str(config), "--seed", "3"]) == EXIT_OK
    out = tmp_path / "out"
    assert (out / "results.csv").exists() and (out / "w1_vs_eta.svg").exists()
    assert json.loads((out / "summary.json").read_text())["master_seed"] == 3


def test_run_out_override(config, tmp_path):
    assert main(["run", "--config", str(config), "--out", str(tmp_path / "elsewhere")]) == 0
    assert (tmp_path / "elsewhere" / "results.csv").exists()


def test_solve_corrector_cache(tmp_path, capsys):
    cfg = tmp_path / "bump.toml"
    cfg.write_text('[problem]\npreset = "bump_1d"\n[experiment]\ngrid_n = 1025\n')
    cache = tmp_path / "u.txt"
    assert main(["solve-corrector", "--config", str(cfg), "--cache", str(cache)]) == EXIT_OK
    fld = load_field(cache)
    assert fld.sup_grad_u <= 0.4 and fld.grid.n_per_axis == 1025
    assert "lambda=" in capsys.readouterr().out


def test_check_pass_and_fail(tmp_path, capsys):
    good = tmp_path / "good.toml"
    good.write_text('[problem]\npreset = "holder_sine_2d"\n')
    assert main(["check", "--config", str(good)]) == EXIT_OK
    assert capsys.readouterr().out.count("PASS") == 3
    bad = tmp_path / "bad.toml"
    bad.write_text('[problem]\npreset = "bump_1d"\ntheta1 = 2.0\n')
    assert main(["check", "--config", str(bad)]) == EXIT_VALIDATION
    assert "FAIL dissipativity" in capsys.readouterr().out


def test_validation_errors_exit_one(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == EXIT_VALIDATION
    asc = tmp_path / "asc.toml"
    asc.write_text('[problem]\npreset = "ou_1d"\n[experiment]\neta_grid = [0.1, 0.2]\n')
    assert main(["run", "--config", str(asc)]) == EXIT_VALIDATION
    unknown = tmp_path / "unknown.toml"
    unknown.write_text('[problem]\npreset = "nope"\n')
    assert main(["check", "--config", str(unknown)]) == EXIT_VALIDATION
    assert main(["frobnicate"]) == EXIT_VALIDATION
    assert "validation error" in capsys.readouterr().err


def test_runtime_failure_exits_two(tmp_path, capsys):
    cfg = tmp_path / "stiff.toml"
    cfg.write_text('[problem]\npreset = "ou_1d"\ntheta3 = 30.0\n'
                   'b2 = {kind = "Linear", matrix = -30.0}\n'
                   '[experiment]\neta_grid = [0.5]\nT_run = 50.0\nT_burn = 1.0\n')
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_RUNTIME
    assert "runtime failure" in capsys.readouterr().err


def test_bad_thread_env_is_validation_error(config, monkeypatch):
    monkeypatch.setenv("ZVONKIN_THREADS", "lots")
    assert main(["run", "--config", str(config)]) == EXIT_VALIDATION


def test_console_script(tmp_path):
    proc = subprocess.run(["zvonkin-em", "list-problems"], capture_output=True, text=True)
    assert proc.returncode == 0 and "bump_1d" in proc.stdout
    proc = subprocess.run(["zvonkin-em", "check", "--config", str(tmp_path / "none.toml")],
                          capture_output=True, text=True)
    assert proc.returncode == 1
