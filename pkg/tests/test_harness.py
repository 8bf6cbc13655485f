import json
import math
import xml.etree.ElementTree as ET
from dataclasses import replace

import numpy as np
import pytest

from zvonkin_em.errors import (DegenerateFit, InsufficientPoints, IoFailure, StageFailure,
                               ValidationError)
from zvonkin_em.harness import (CSV_HEADER, NAIVE, POWER_LOG, PURE_POWER, ExperimentConfig,
                                GibbsSpec, config_from_dict, emit_report, fit_rate, load_config,
                                read_csv, run_experiment)
from zvonkin_em.problems import preset

SVG = "{http://www.w3.org/2000/svg}"
ETAS = [2.0 ** -k for k in range(4, 10)]


def small_config(name="ou_1d", **kw):
    base = dict(problem_spec=preset(name), eta_grid=(0.25, 0.125, 0.0625, 0.03125), chains=4,
                T_burn=5.0, T_run=200.0, reference=GibbsSpec(), n_boot=20, probe_draws=1000)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def ou_result():
    cfg = small_config(eta_grid=(0.5, 0.25, 0.125, 0.0625), chains=8, T_run=8000.0)
    return run_experiment(cfg, n_threads=1)


def test_config_rejects_ascending_grid():
    with pytest.raises(ValidationError):
        small_config(eta_grid=(0.1, 0.2))
    with pytest.raises(ValidationError):
        small_config(eta_grid=(0.8, 0.1))
    with pytest.raises(ValidationError):
        small_config(T_burn=300.0)


def test_config_from_dict_resolves_presets(tmp_path):
    cfg = config_from_dict({"problem": {"preset": "bump_1d", "theta1": 0.9},
                            "experiment": {"chains": 3}, "output": {"dir": "out"}},
                           base_dir=tmp_path)
    assert cfg.problem.theta1 == 0.9 and cfg.chains == 3
    assert cfg.out_dir == str(tmp_path / "out")
    assert cfg.reference == GibbsSpec()
    with pytest.raises(ValidationError):
        config_from_dict({"problem": {"preset": "bump_1d"}, "experiment": {"chain": 3}})
    with pytest.raises(ValidationError):
        config_from_dict({"problem": {"preset": "bump_1d"}, "experiment": {"baseline": True}})
    cfg2 = config_from_dict({"problem": {"preset": "holder_sine_2d"}})
    assert cfg2.reference is None


def test_load_config_errors(tmp_path):
    with pytest.raises(ValidationError):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[problem\n")
    with pytest.raises(ValidationError):
        load_config(bad)


def test_fit_exact_power_law():
    fit = fit_rate([(e, e ** 0.5, 0.0) for e in ETAS], PURE_POWER)
    assert fit.exponent == pytest.approx(0.5, abs=1e-12) and fit.residual_rms <= 1e-12
    assert fit.ci[0] <= fit.exponent <= fit.ci[1]


def test_fit_power_log_recovers_exponent():
    fit = fit_rate([(e, e ** 0.5 * abs(math.log(e)), 0.0) for e in ETAS], POWER_LOG)
    assert fit.exponent == pytest.approx(0.5, abs=1e-10)


def test_fit_pinned_exponent():
    fit = fit_rate([(e, e ** 0.5, 0.0) for e in ETAS], PURE_POWER, pinned_exponent=0.125)
    assert fit.exponent == 0.125 and fit.pinned and fit.residual_rms > 0.1


def test_fit_noisy_calibration():
    hits = 0
    for seed in range(100):
        noise = np.random.default_rng(seed).standard_normal(len(ETAS))
        fit = fit_rate([(e, e ** 0.5 * (1 + 0.05 * z), 0.0) for e, z in zip(ETAS, noise)])
        hits += 0.45 <= fit.exponent <= 0.55 and fit.ci[0] <= 0.5 <= fit.ci[1]
    assert hits >= 90


def test_fit_drops_floor_dominated_points():
    pts = [(e, e ** 0.5, 0.01) for e in ETAS]
    pts[-1] = (ETAS[-1], 0.02, 0.01)  # exactly 2 x floor: dropped
    pts[-2] = (ETAS[-2], 0.0201, 0.01)
    fit = fit_rate(pts)
    assert fit.points_dropped == [pts[-1]]
    assert pts[-1] not in fit.points_used and len(fit.points_used) == 5


def test_fit_errors():
    with pytest.raises(InsufficientPoints):
        fit_rate([(e, e, 0.0) for e in ETAS[:3]])
    with pytest.raises(InsufficientPoints):
        fit_rate([(e, 1e-3, 1e-3) for e in ETAS])
    with pytest.raises(DegenerateFit):
        fit_rate([(0.1, 0.2 + i, 0.0) for i in range(4)])


def test_fit_bootstrap_ci_contains_estimate():
    rng = np.random.default_rng(0)
    pts = [(e, e ** 0.5, 0.0) for e in ETAS]
    reps = np.array(ETAS) ** 0.5 * (1 + 0.05 * rng.standard_normal((200, len(ETAS))))
    fit = fit_rate(pts, replicates=reps)
    assert fit.ci_method == "bootstrap" and fit.ci[0] <= 0.5 <= fit.ci[1]


def test_ou_run_structure(ou_result):
    rows = ou_result.rows
    assert [r.eta for r in rows] == [0.5, 0.25, 0.125, 0.0625]
    assert ou_result.lam > 0 and ou_result.sup_grad_u == 0.0
    assert all(r.w1 > 2 * r.floor for r in rows[:2])
    w1 = [r.w1 for r in rows]
    ci = [r.w1_ci for r in rows]
    assert all(w1[i + 1] <= w1[i] + ci[i] + ci[i + 1] for i in range(3))
    fit = ou_result.fits["transformed/PurePower"]
    assert fit is not None and fit.exponent > 0 and fit.ci[0] > 0
    assert len(ou_result.drift_reports) == 4
    assert all(d.passed for d in ou_result.drift_reports)


def test_emit_report_files(ou_result, tmp_path):
    paths = emit_report(ou_result, tmp_path)
    lines = paths["csv"].read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert lines[0] == "problem,case,eta,n_samples,w1,w1_ci,floor,moment2,moment6,lambda," \
                       "sup_grad_u,seed"
    assert len(lines) == 1 + 4
    back = read_csv(paths["csv"])
    assert back == ou_result.rows
    summary = json.loads(paths["summary"].read_text())
    assert summary["fits"]["transformed/PurePower"]["exponent"] > 0
    root = ET.parse(paths["plot"]).getroot()
    groups = {g.get("id"): g for g in root.iter(f"{SVG}g") if g.get("id")}
    assert len(list(groups["data-transformed"].iter(f"{SVG}use"))) == 4
    assert sum(1 for k in groups if k.startswith("fit-")) == 1


def test_emit_report_is_deterministic(ou_result, tmp_path):
    a = emit_report(ou_result, tmp_path / "a")
    b = emit_report(ou_result, tmp_path / "b")
    for k in ("csv", "plot", "summary"):
        assert a[k].read_bytes() == b[k].read_bytes()


def test_empty_grid(tmp_path):
    res = run_experiment(small_config(eta_grid=()), n_threads=1)
    paths = emit_report(res, tmp_path)
    assert paths["csv"].read_text() == ",".join(CSV_HEADER) + "\n"
    assert "plot" not in paths and not (tmp_path / "w1_vs_eta.svg").exists()
    assert any("empty eta grid" in w for w in json.loads(paths["summary"].read_text())["warnings"])


def test_emit_report_io_failure(ou_result, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IoFailure):
        emit_report(ou_result, blocker / "sub")


def test_case2_baseline_gives_two_fits():
    cfg = small_config("holder_sine_1d", eta_grid=(0.5, 0.25, 0.125, 0.0625), baseline=True)
    res = run_experiment(cfg, n_threads=1)
    assert sum(r.scheme == NAIVE for r in res.rows) == 4
    assert all(r.problem.endswith("[naive]") for r in res.rows if r.scheme == NAIVE)
    assert {"transformed/PurePower", "naive/PurePower"} <= set(res.fits)


def test_stage_failure_names_stage_and_eta():
    spec = dict(preset("ou_1d"), b2={"kind": "Linear", "matrix": -30.0}, theta3=30.0)
    cfg = small_config(problem_spec=spec, eta_grid=(0.5,), reference=None)
    with pytest.raises(StageFailure) as info:
        run_experiment(cfg, n_threads=1)
    assert info.value.stage == "sampling" and info.value.eta == 0.5


def test_no_reference_2d_run():
    cfg = small_config("holder_sine_2d", eta_grid=(0.125,), chains=2, T_run=50.0,
                       reference=None, grid_n=129)
    res = run_experiment(cfg, n_threads=1)
    assert math.isnan(res.rows[0].w1) and res.rows[0].floor > 0
    assert res.fits == {} and any("no exact reference" in w for w in res.warnings)
    assert replace(cfg, master_seed=1).master_seed == 1
