import json

import numpy as np
import pytest

from v2vdep import cli, harness
from v2vdep.analytic import QuadratureError
from v2vdep.harness import Experiment, ExperimentSpec, Sweep
from v2vdep.montecarlo import Mode
from v2vdep.scenario import PowerAllocation, highway_config


def _spec(experiment, **kw):
    kw.setdefault("trials", 2000)
    return ExperimentSpec(experiment=experiment, scenario=highway_config(0.01), **kw)


def test_spec_invariants():
    with pytest.raises(ValueError):
        _spec(Experiment.BETA_SWEEP, trials=999)
    with pytest.raises(ValueError):
        Sweep("not_a_field", (1.0,))
    with pytest.raises(ValueError):
        _spec(Experiment.VALIDATE_FH, seed=2 ** 64)
    with pytest.raises(ValueError):
        harness.run_beta_sweep(_spec(Experiment.BETA_SWEEP, sweep=Sweep("density", (0.01,))))


def test_validate_fh_zero_density():
    table = harness.run_validate_fh(_spec(Experiment.VALIDATE_FH, trials=20_000,
                                          sweep=Sweep("density", (0.0,))))
    assert len(table.rows) == 100
    s = table.summary["lambda=0"]
    assert s["max_abs_dev_F"] <= 0.01 and s["max_abs_dev_H"] <= 0.01
    assert table.passed
    F = table.column("F_analytic_link1")
    assert np.all(np.diff(F) >= 0)


def test_beta_sweep_rows_and_checks():
    spec = _spec(Experiment.BETA_SWEEP, sweep=Sweep("d12", (1.0, 3.0, 5.0)), lambdas=(0.03,))
    table = harness.run_beta_sweep(spec)
    assert [r["d12_m"] for r in table.rows] == [1.0, 3.0, 5.0]
    assert table.passed
    assert {"beta_analytic", "reliability_empirical", "power_w_link1", "power_dbm_link1",
            "tau_ms_link1"} <= set(table.columns)


def test_single_eval_zero_density_pgfl_exact():
    spec = ExperimentSpec(experiment=Experiment.SINGLE_EVAL, scenario=highway_config(0.0),
                          trials=2000)
    row = harness.run_single_eval(spec)
    assert row.extra["pgfl_link1"] == 1.0
    assert row.extra["pgfl_link2"] == 1.0
    assert row.extra["pgfl_joint"] == 1.0


def test_single_eval_sinr_not_better():
    cfg = highway_config(0.03)
    alloc = PowerAllocation((1e-4, 1e-4), cfg.p_max_watts)
    row = harness.run_single_eval(ExperimentSpec(Experiment.SINGLE_EVAL, cfg, trials=5000,
                                                 allocation=alloc))
    assert row.extra["reliability_empirical_sinr"] <= row.extra["reliability_empirical_sir"]
    assert row.extra["sinr_gap"] >= 0


def test_single_eval_regression():
    row = harness.run_single_eval(_spec(Experiment.SINGLE_EVAL, trials=5000))
    assert row.beta == pytest.approx(0.0545105, abs=1e-6)
    assert row.joint_reliability_analytic == pytest.approx(0.951467, abs=1e-6)
    assert abs(row.joint_reliability_empirical - row.joint_reliability_analytic) < 4 * row.joint_reliability_stderr


def test_depcontrol_small_sweep():
    spec = _spec(Experiment.DEPCONTROL_SWEEP, sweep=Sweep("density", (0.03,)), taus=(13.9e-3,),
                 baseline_draws=10, eta=0.05)
    table = harness.run_depcontrol_sweep(spec)
    (row,) = table.rows
    assert row["gain"] == pytest.approx(row["reliability_optimized"] - row["reliability_baseline_mean"])
    assert row["beta_dual"] >= row["beta_baseline_max"]
    assert abs(row["beta_dual"] - row["beta_direct"]) <= 0.05
    assert table.passed


def test_csv_bit_identical(tmp_path):
    spec = _spec(Experiment.BETA_SWEEP, sweep=Sweep("d12", (2.0, 4.0)), lambdas=(0.01, 0.03))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    harness.run(ExperimentSpec(**{**spec.__dict__, "output_path": str(a)}))
    harness.run(ExperimentSpec(**{**spec.__dict__, "output_path": str(b), "workers": 3}))
    assert a.read_bytes() == b.read_bytes()
    text = a.read_text()
    assert text.startswith("# v2vdep ")
    assert '"p_max_w"' in text and "# seed: 0" in text


def test_json_mirror(tmp_path):
    table = harness.single_eval_table(_spec(Experiment.SINGLE_EVAL))
    path = tmp_path / "r.json"
    table.write_json(path)
    doc = json.loads(path.read_text())
    assert doc["rows"][0]["beta"] == table.rows[0]["beta"]
    assert doc["header"]["mode"] == "sir"


# ---------------------------------------------------------------------------
# command line

def test_cli_eval(tmp_path, capsys):
    out = tmp_path / "e.csv"
    code = cli.main(["eval", "--trials", "2000", "--powers", "20 dBm", "--output", str(out),
                     "--lambda", "0.02"])
    assert code == 0
    assert out.exists()
    assert "power_dbm_link1" in out.read_text()


def test_cli_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["nonsense"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["eval", "--mode", "snr"])
    assert exc.value.code == 1
    assert cli.main(["eval", "--trials", "10"]) == 1
    assert cli.main(["beta-sweep", "--d12", "x"]) == 1
    assert cli.main(["eval", "--powers", "40 dBm"]) == 1


def test_cli_config_error(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[scenario]\nd11 = 0\n")
    assert cli.main(["eval", "--config", str(bad)]) == 1
    assert cli.main(["eval", "--config", str(tmp_path / "missing.toml")]) == 1


def test_cli_check_failure(monkeypatch, tmp_path):
    monkeypatch.setattr(harness, "FH_TOLERANCE", 0.0)
    code = cli.main(["validate-fh", "--trials", "1000", "--lambda", "0.01",
                     "--output", str(tmp_path / "f.csv")])
    assert code == 2


def test_cli_numerical_failure(monkeypatch):
    def boom(spec):
        raise QuadratureError("did not converge", 1.0)
    monkeypatch.setattr(cli, "run", boom)
    assert cli.main(["eval"]) == 3


def test_cli_spec_from_args():
    args = cli.build_parser().parse_args(
        ["depcontrol-sweep", "--lambda", "0.01,0.02", "0.05", "--tau", "13.9", "--seed", "0x10"])
    spec = cli.spec_from_args(args)
    assert spec.sweep.values == (0.01, 0.02, 0.05)
    assert spec.taus == pytest.approx((0.0139,))
    assert spec.seed == 16
    assert spec.mode is Mode.SIR
