"""Experiment runners: F/H validation, the d12 concordance sweep, the
dependence-control sweep over interferer density, and single evaluations.

Every runner returns a :class:`ResultTable` of flat rows whose column names
carry their units, plus a list of pass/fail checks. Tables are written as CSV
with a commented header holding the resolved configuration, seed and library
version, so a file can be regenerated from its own header.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence, TextIO

import numpy as np

from . import __version__
from . import analytic
from . import rng as rngmod
from .montecarlo import EmpiricalReport, Mode, empirical_cdf, empirical_joint_diagonal, simulate_delays
from .optimizer import OptimizationResult, direct_search, dual_ellipsoid_solve, random_baseline
from .scenario import PowerAllocation, ScenarioConfig, config_to_dict, watts_to_dbm

MIN_TRIALS = 1000
FH_GRID = (1e-6, 1e-1, 100)  # seconds, log-spaced
FH_TOLERANCE = 0.02
DEFAULT_LAMBDAS = (0.01, 0.03, 0.05)
DEFAULT_D12 = (1.0, 2.0, 3.0, 4.0, 5.0)
DEFAULT_SWEEP_LAMBDAS = (0.01, 0.03)
DEFAULT_DEP_LAMBDAS = (0.01, 0.02, 0.03, 0.04, 0.05)
DEFAULT_TAUS = (13.9e-3, 1e-3)
NOISE_SIGMAS = 3.0


class Experiment(str, enum.Enum):
    VALIDATE_FH = "validate_fh"
    BETA_SWEEP = "beta_sweep"
    DEPCONTROL_SWEEP = "depcontrol_sweep"
    SINGLE_EVAL = "single_eval"


SWEEP_PARAMETERS = ("density", "d12", "delay_target")


@dataclass(frozen=True)
class Sweep:
    parameter: str
    values: tuple[float, ...]

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ValueError(f"unknown sweep parameter {self.parameter!r}; "
                             f"expected one of {', '.join(SWEEP_PARAMETERS)}")
        if not self.values:
            raise ValueError("sweep needs at least one value")


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: Experiment
    scenario: ScenarioConfig
    sweep: Sweep | None = None
    trials: int = 20_000
    seed: int = 0
    mode: Mode = Mode.SIR
    output_path: str | None = None
    lambdas: tuple[float, ...] | None = None  # second axis of the d12 sweep
    taus: tuple[float, ...] | None = None  # delay targets (s) of the density sweep
    allocation: PowerAllocation | None = None
    baseline_draws: int = 100
    eta: float = 1e-3
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "experiment", Experiment(self.experiment))
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.trials < MIN_TRIALS:
            raise ValueError(f"trials must be >= {MIN_TRIALS}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        if self.baseline_draws < 1:
            raise ValueError("baseline_draws must be positive")
        if self.workers < 1:
            raise ValueError("workers must be positive")


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ResultRow:
    sweep_value: float
    beta: float
    joint_reliability_analytic: float
    joint_reliability_empirical: float
    joint_reliability_stderr: float
    allocation: tuple[float, ...]  # watts
    method: str
    analytic_F: tuple[float, ...] | None = None
    analytic_H: float | None = None
    extra: dict = field(default_factory=dict)

    def record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {"sweep_value": self.sweep_value, "method": self.method,
                               "beta": self.beta,
                               "reliability_analytic": self.joint_reliability_analytic,
                               "reliability_empirical": self.joint_reliability_empirical,
                               "reliability_stderr": self.joint_reliability_stderr}
        if self.analytic_F is not None:
            for i, f in enumerate(self.analytic_F):
                rec[f"F_analytic_link{i + 1}"] = f
        if self.analytic_H is not None:
            rec["H_analytic"] = self.analytic_H
        rec.update(_power_columns(self.allocation))
        rec.update(self.extra)
        return rec


@dataclass
class ResultTable:
    experiment: Experiment
    header: dict[str, Any]
    rows: list[dict[str, Any]] = field(default_factory=list)
    checks: list[Check] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def columns(self) -> list[str]:
        cols: list[str] = []
        for row in self.rows:
            cols.extend(k for k in row if k not in cols)
        return cols

    def column(self, name: str) -> np.ndarray:
        return np.array([row.get(name, np.nan) for row in self.rows])

    def where(self, **match) -> list[dict[str, Any]]:
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]

    def write_csv(self, target: str | Path | TextIO) -> None:
        if hasattr(target, "write"):
            self._write_csv(target)
            return
        with open(target, "w", newline="") as fh:
            self._write_csv(fh)

    def _write_csv(self, fh: TextIO) -> None:
        for line in self._header_lines():
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=self.columns, restval="", lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})

    def write_json(self, path: str | Path) -> None:
        doc = {"header": self.header, "summary": self.summary,
               "checks": [asdict(c) for c in self.checks], "rows": self.rows}
        with open(path, "w") as fh:
            json.dump(_jsonable(doc), fh, indent=1)
            fh.write("\n")

    def _header_lines(self):
        yield f"v2vdep {self.header['version']} experiment={self.experiment.value}"
        for key in ("seed", "trials", "mode"):
            yield f"{key}: {self.header[key]}"
        yield "config: " + json.dumps(_jsonable(self.header["config"]), sort_keys=True)
        for key, value in self.header.items():
            if key not in ("version", "seed", "trials", "mode", "config"):
                yield f"{key}: {json.dumps(_jsonable(value))}"
        yield "summary: " + json.dumps(_jsonable(self.summary), sort_keys=True)
        for c in self.checks:
            yield f"check {'PASS' if c.passed else 'FAIL'} {c.name} {c.detail}".rstrip()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, enum.Enum):
        return obj.value
    return obj


def _power_columns(powers: Sequence[float]) -> dict[str, float]:
    cols = {}
    for i, p in enumerate(powers):
        cols[f"power_w_link{i + 1}"] = float(p)
    for i, p in enumerate(powers):
        cols[f"power_dbm_link{i + 1}"] = watts_to_dbm(p) if p > 0 else -math.inf
    return cols


def _header(spec: ExperimentSpec, **extra) -> dict[str, Any]:
    head = {"version": __version__, "seed": spec.seed, "trials": spec.trials,
            "mode": spec.mode.value, "config": config_to_dict(spec.scenario)}
    if spec.sweep is not None:
        head["sweep"] = {"parameter": spec.sweep.parameter, "values": list(spec.sweep.values)}
    head.update(extra)
    return head


def _sweep_values(spec: ExperimentSpec, parameter: str, default: Sequence[float]) -> tuple[float, ...]:
    if spec.sweep is None:
        return tuple(default)
    if spec.sweep.parameter != parameter:
        raise ValueError(f"{spec.experiment.value} sweeps {parameter!r}, not {spec.sweep.parameter!r}")
    return spec.sweep.values


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    """Ordered map; sweep points may run on a thread pool."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _se(p, n):
    return np.sqrt(np.maximum(p * (1.0 - p), 0.0) / n)


def _nondecreasing(values, slack) -> tuple[bool, float]:
    """True if no step drops by more than its slack; also the worst drop."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return True, 0.0
    drops = values[:-1] - values[1:]
    slack = np.broadcast_to(np.asarray(slack, dtype=float), drops.shape)
    return bool(np.all(drops <= slack)), float(max(drops.max(), 0.0))


# ---------------------------------------------------------------------------
# F and H validation

def delay_grid() -> np.ndarray:
    lo, hi, n = FH_GRID
    return np.logspace(math.log10(lo), math.log10(hi), n)


def run_validate_fh(spec: ExperimentSpec) -> ResultTable:
    """Analytic marginal and diagonal-joint CDFs against Monte Carlo."""
    lambdas = _sweep_values(spec, "density", DEFAULT_LAMBDAS)
    grid = delay_grid()
    alloc = spec.allocation or spec.scenario.allocation()
    M = spec.scenario.M

    def point(lam):
        cfg = spec.scenario.with_density(lam)
        F = np.array([[analytic.marginal_cdf(i, v, alloc, cfg) for i in range(M)] for v in grid])
        H = np.array([analytic.joint_cdf([v] * M, alloc, cfg) for v in grid])
        delays = simulate_delays(cfg, alloc, spec.trials, spec.mode, spec.seed)
        F_emp = np.column_stack([empirical_cdf(delays[:, i], grid) for i in range(M)])
        H_emp = empirical_joint_diagonal(delays, grid)
        return lam, F, H, F_emp, H_emp

    table = ResultTable(Experiment.VALIDATE_FH, _header(spec, delay_grid_s=list(FH_GRID)))
    for lam, F, H, F_emp, H_emp in _map(point, lambdas, spec.workers):
        n = spec.trials
        for k, v in enumerate(grid):
            row = {"lambda_per_m": lam, "delay_s": float(v), "delay_ms": float(v) * 1e3}
            for i in range(M):
                row[f"F_analytic_link{i + 1}"] = F[k, i]
                row[f"F_empirical_link{i + 1}"] = F_emp[k, i]
                row[f"F_stderr_link{i + 1}"] = float(_se(F_emp[k, i], n))
            row["H_analytic"] = H[k]
            row["H_empirical"] = H_emp[k]
            row["H_stderr"] = float(_se(H_emp[k], n))
            table.rows.append(row)
        dev_F = float(np.abs(F - F_emp).max())
        dev_H = float(np.abs(H - H_emp).max())
        gap = float((H[:, None] - F).max())  # > 0 would break H <= min F
        table.summary[f"lambda={lam:g}"] = {"max_abs_dev_F": dev_F, "max_abs_dev_H": dev_H,
                                            "max_H_minus_F": gap}
        table.checks.append(Check(f"fh_deviation[lambda={lam:g}]",
                                  max(dev_F, dev_H) <= FH_TOLERANCE,
                                  f"F {dev_F:.4f}, H {dev_H:.4f} (limit {FH_TOLERANCE})"))
        table.checks.append(Check(f"F_above_H[lambda={lam:g}]", gap <= 0.0,
                                  f"max H - F = {gap:.3e}"))
    return table


# ---------------------------------------------------------------------------
# concordance sweep over d12

def run_beta_sweep(spec: ExperimentSpec) -> ResultTable:
    """Beta and joint reliability at full power as the links move apart."""
    d12s = _sweep_values(spec, "d12", DEFAULT_D12)
    lambdas = spec.lambdas or DEFAULT_SWEEP_LAMBDAS
    targets = spec.scenario.requirements.targets

    def point(args):
        lam, d12 = args
        cfg = spec.scenario.with_density(lam).with_d12(d12)
        alloc = spec.allocation or cfg.allocation()
        rep = analytic.blomqvist_beta(alloc, cfg)
        rel = analytic.joint_reliability(alloc, cfg)
        delays = simulate_delays(cfg, alloc, spec.trials, spec.mode, spec.seed)
        emp = EmpiricalReport.from_delays(delays, targets)
        row = {"lambda_per_m": lam, "d12_m": d12, "method": "fixed",
               "beta_analytic": rep.beta, "beta_empirical": emp.empirical_beta,
               "beta_stderr": emp.beta_stderr,
               "reliability_analytic": rel, "reliability_empirical": emp.joint_reliability,
               "reliability_stderr": emp.joint_stderr}
        for i, t in enumerate(targets):
            row[f"tau_ms_link{i + 1}"] = t * 1e3
        row.update(_power_columns(alloc.array))
        return row

    table = ResultTable(Experiment.BETA_SWEEP, _header(spec, lambdas_per_m=list(lambdas)))
    table.rows = _map(point, [(lam, d) for lam in lambdas for d in d12s], spec.workers)
    for lam in lambdas:
        rows = table.where(lambda_per_m=lam)
        for name in ("beta", "reliability"):
            ok, drop = _nondecreasing([r[f"{name}_analytic"] for r in rows], 1e-12)
            table.checks.append(Check(f"{name}_analytic_nondecreasing[lambda={lam:g}]", ok,
                                      f"worst drop {drop:.3e}"))
            emp = np.array([r[f"{name}_empirical"] for r in rows])
            se = np.array([r[f"{name}_stderr"] for r in rows])
            slack = NOISE_SIGMAS * np.hypot(se[:-1], se[1:])
            ok, drop = _nondecreasing(emp, slack)
            table.checks.append(Check(f"{name}_empirical_nondecreasing[lambda={lam:g}]", ok,
                                      f"worst drop {drop:.3e} ({NOISE_SIGMAS:g} sigma slack)"))
        table.summary[f"lambda={lam:g}"] = {
            "reliability_at_max_d12": rows[-1]["reliability_analytic"],
            "beta_at_max_d12": rows[-1]["beta_analytic"],
        }
    return table


# ---------------------------------------------------------------------------
# dependence control sweep over density

def _method_label(res: OptimizationResult) -> str:
    return res.method if res.converged else f"{res.method} (not converged)"


def run_depcontrol_sweep(spec: ExperimentSpec) -> ResultTable:
    """Beta-maximising allocation against random powers, per density and target.

    The optimised allocation does not depend on the delay target, so each
    density is solved once and then scored at every target. Baseline draws
    are shared across densities (stream purpose ``"baseline"``) so the
    comparison is paired.
    """
    lambdas = _sweep_values(spec, "density", DEFAULT_DEP_LAMBDAS)
    taus = spec.taus or DEFAULT_TAUS
    M = spec.scenario.M
    draws = [random_baseline(spec.scenario, rngmod.stream(spec.seed, b, "baseline"))
             for b in range(spec.baseline_draws)]
    base_P = np.array([d.array for d in draws])

    def point(lam):
        cfg = spec.scenario.with_density(lam)
        objective = analytic.BetaBatch(cfg)
        dual = dual_ellipsoid_solve(cfg, spec.eta, objective)
        direct = direct_search(cfg, objective)
        base_beta = objective(base_P)
        delays = simulate_delays(cfg, dual.best_allocation, spec.trials, spec.mode, spec.seed)
        rows = []
        for tau in taus:
            thr = [tau] * M
            emp = EmpiricalReport.from_delays(delays, thr)
            rel_opt = analytic.joint_cdf(thr, dual.best_allocation, cfg)
            rel_base = np.array([analytic.joint_cdf(thr, d, cfg) for d in draws])
            row = {"lambda_per_m": lam, "tau_s": tau, "tau_ms": tau * 1e3,
                   "method": _method_label(dual),
                   "dual_iterations": dual.dual_state.iteration,
                   "dual_evaluations": dual.evaluations,
                   "beta_dual": dual.best_beta, "beta_direct": direct.best_beta,
                   "beta_baseline_mean": float(base_beta.mean()),
                   "beta_baseline_max": float(base_beta.max()),
                   "reliability_optimized": rel_opt,
                   "reliability_optimized_empirical": emp.joint_reliability,
                   "reliability_optimized_stderr": emp.joint_stderr,
                   "reliability_direct": analytic.joint_cdf(thr, direct.best_allocation, cfg),
                   "reliability_baseline_mean": float(rel_base.mean()),
                   "reliability_baseline_std": float(rel_base.std(ddof=1)) if len(draws) > 1 else 0.0,
                   "reliability_baseline_min": float(rel_base.min()),
                   "reliability_baseline_max": float(rel_base.max()),
                   "gain": rel_opt - float(rel_base.mean()),
                   "reliability_full_power": analytic.joint_cdf(thr, cfg.full_power(), cfg)}
            row.update(_power_columns(dual.best_allocation.array))
            rows.append(row)
        return lam, dual, direct, base_beta, rows

    table = ResultTable(Experiment.DEPCONTROL_SWEEP,
                        _header(spec, taus_s=list(taus), baseline_draws=spec.baseline_draws,
                                eta=spec.eta))
    for lam, dual, direct, base_beta, rows in _map(point, lambdas, spec.workers):
        table.rows.extend(rows)
        diff = abs(dual.best_beta - direct.best_beta)
        table.checks.append(Check(f"dual_vs_direct[lambda={lam:g}]", diff <= 0.05,
                                  f"|beta_dual - beta_direct| = {diff:.3e}"))
        worst = float(base_beta.max())
        table.checks.append(Check(f"dominates_baseline[lambda={lam:g}]",
                                  dual.best_beta >= worst and direct.best_beta >= worst,
                                  f"dual {dual.best_beta:.6f}, direct {direct.best_beta:.6f}, "
                                  f"best draw {worst:.6f}"))
        table.summary[f"lambda={lam:g}"] = {"dual_converged": dual.converged,
                                            "dual_iterations": dual.dual_state.iteration,
                                            "beta_dual": dual.best_beta,
                                            "beta_direct": direct.best_beta}
    for tau in taus:
        gains = [r["gain"] for r in table.where(tau_s=tau)]
        table.summary[f"tau_ms={tau * 1e3:g}"] = {"max_gain": max(gains), "gains": gains}
    return table


# ---------------------------------------------------------------------------
# single evaluation

def run_single_eval(spec: ExperimentSpec) -> ResultRow:
    """Analytic and empirical report for one allocation."""
    cfg = spec.scenario
    alloc = spec.allocation or cfg.allocation()
    targets = cfg.requirements.targets
    M = cfg.M
    powers = alloc.array
    rx = cfg.geometry.rx_positions
    thetas = [analytic.sir_threshold(t, cfg.radio) for t in targets]

    rep = analytic.blomqvist_beta(alloc, cfg)
    F = tuple(analytic.marginal_cdf(i, targets[i], alloc, cfg) for i in range(M))
    H = analytic.joint_cdf(targets, alloc, cfg)
    coeffs = [analytic._field_coefficient(i, thetas[i], powers, cfg) for i in range(M)]
    pgfl_links = [analytic.pgfl_factor([coeffs[i]], [rx[i]], cfg) for i in range(M)]
    pgfl_joint = analytic.pgfl_factor(coeffs, rx, cfg)

    reports = {}
    for mode in (Mode.SIR, Mode.SINR):
        delays = simulate_delays(cfg, alloc, spec.trials, mode, spec.seed, spec.workers)
        reports[mode] = EmpiricalReport.from_delays(delays, targets)
    emp = reports[spec.mode]

    extra: dict[str, Any] = {"mode": spec.mode.value}
    for i in range(M):
        extra[f"tau_ms_link{i + 1}"] = targets[i] * 1e3
    for i in range(M):
        extra[f"median_s_link{i + 1}"] = rep.medians[i]
        extra[f"median_empirical_s_link{i + 1}"] = emp.empirical_medians[i]
    extra["C_at_medians"] = rep.joint_cdf_at_medians
    extra["survival_at_medians"] = rep.joint_survival_at_medians
    extra["survival_clamp"] = rep.survival_clamp
    extra["beta_empirical"] = emp.empirical_beta
    extra["beta_stderr"] = emp.beta_stderr
    for i in range(M):
        extra[f"F_empirical_link{i + 1}"] = emp.marginal_reliabilities[i]
        extra[f"F_stderr_link{i + 1}"] = emp.marginal_stderrs[i]
    for i in range(M):
        extra[f"pgfl_link{i + 1}"] = pgfl_links[i]
    extra["pgfl_joint"] = pgfl_joint
    extra["reliability_empirical_sir"] = reports[Mode.SIR].joint_reliability
    extra["reliability_empirical_sinr"] = reports[Mode.SINR].joint_reliability
    extra["sinr_gap"] = reports[Mode.SIR].joint_reliability - reports[Mode.SINR].joint_reliability

    return ResultRow(
        sweep_value=float("nan"),
        beta=rep.beta,
        joint_reliability_analytic=H,
        joint_reliability_empirical=emp.joint_reliability,
        joint_reliability_stderr=emp.joint_stderr,
        allocation=tuple(float(p) for p in powers),
        method="fixed",
        analytic_F=F,
        analytic_H=H,
        extra=extra,
    )


def single_eval_table(spec: ExperimentSpec, row: ResultRow | None = None) -> ResultTable:
    row = row or run_single_eval(spec)
    table = ResultTable(Experiment.SINGLE_EVAL, _header(spec), rows=[row.record()])
    table.summary = {"beta": row.beta, "reliability_analytic": row.joint_reliability_analytic,
                     "reliability_empirical": row.joint_reliability_empirical}
    return table


RUNNERS: dict[Experiment, Callable[[ExperimentSpec], ResultTable]] = {
    Experiment.VALIDATE_FH: run_validate_fh,
    Experiment.BETA_SWEEP: run_beta_sweep,
    Experiment.DEPCONTROL_SWEEP: run_depcontrol_sweep,
    Experiment.SINGLE_EVAL: single_eval_table,
}


def run(spec: ExperimentSpec) -> ResultTable:
    table = RUNNERS[spec.experiment](spec)
    if spec.output_path:
        table.write_csv(spec.output_path)
    return table
