"""Power allocation that maximises Blomqvist's beta over the box [0, P_max]^M.

Three solvers:

``dual_ellipsoid_solve``
    Lagrangian relaxation of the box constraints. The dual function
    ``D(theta, vartheta) = max_P L(P, theta, vartheta)`` is minimised over the
    non-negative multipliers with a central-cut ellipsoid method; each cut
    needs an inner maximisation of the Lagrangian.
``direct_search``
    Coordinate pattern search on the box, used as the reference solver.
``random_baseline``
    Uniform random powers, the "no dependence control" comparison point.

Beta is undefined when a link is silent, so every solver works on
``[eps, P_max]`` with ``eps = 1e-6 * P_max``.

Objectives are callables mapping an ``(K, M)`` array of allocations to ``K``
values; the default is :class:`v2vdep.analytic.BetaBatch`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .analytic import BetaBatch, blomqvist_beta
from .scenario import PowerAllocation, ScenarioConfig

Objective = Callable[[np.ndarray], np.ndarray]

EPS_FRACTION = 1e-6
FD_STEP_FRACTION = 1e-3
GRID_PER_DIM = 5
ARMIJO_SIGMA = 1e-4


def power_floor(config: ScenarioConfig) -> float:
    return EPS_FRACTION * config.p_max_watts


@dataclass
class DualState:
    theta: np.ndarray
    vartheta: np.ndarray
    ellipsoid_center: np.ndarray
    ellipsoid_shape: np.ndarray
    iteration: int
    eta: float


@dataclass(frozen=True)
class OptimizationResult:
    best_allocation: PowerAllocation
    best_beta: float
    method: str
    evaluations: int
    converged: bool
    diagnostics: list = field(default_factory=list)
    dual_state: DualState | None = None


class InnerSolution(NamedTuple):
    allocation: PowerAllocation
    value: float
    converged: bool


def _lex_better(value, x, best_value, best_x) -> bool:
    """Strictly larger value, or equal value and lexicographically larger x."""
    if best_x is None or value > best_value:
        return True
    return value == best_value and tuple(x) > tuple(best_x)


def _argbest(values: np.ndarray, X: np.ndarray) -> int:
    best = None
    for k in range(len(values)):
        if best is None or _lex_better(values[k], X[k], values[best], X[best]):
            best = k
    return best


def lagrangian(allocation: PowerAllocation, theta, vartheta, config: ScenarioConfig,
               objective: Objective | None = None) -> float:
    """beta(P) + sum theta_i P_i + sum vartheta_j (P_max - P_j)."""
    theta = np.asarray(theta, dtype=float)
    vartheta = np.asarray(vartheta, dtype=float)
    if np.any(theta < 0) or np.any(vartheta < 0):
        raise ValueError("multipliers must be non-negative")
    p = allocation.array
    if objective is None:
        beta = blomqvist_beta(allocation, config).beta
    else:
        beta = float(objective(p[None, :])[0])
    return beta + float(theta @ p) + float(vartheta @ (config.p_max_watts - p))


def subgradient(inner_optimum: PowerAllocation) -> tuple[np.ndarray, np.ndarray]:
    """Dual subgradient at the inner maximiser: (P*, P_max - P*)."""
    p = inner_optimum.array
    return p.copy(), inner_optimum.p_max_watts - p


def _start_grid(lo: float, hi: float, M: int) -> np.ndarray:
    axis = np.linspace(lo, hi, GRID_PER_DIM)
    return np.array(list(itertools.product(axis, repeat=M)))


def inner_maximize(theta, vartheta, config: ScenarioConfig, objective: Objective | None = None,
                   max_iter: int = 100) -> InnerSolution:
    """Multi-start projected gradient ascent of the Lagrangian over the box.

    Gradients are central finite differences (one-sided at the box faces) with
    step ``1e-3 * P_max``; steps use Armijo backtracking. All starts advance
    together so each iteration is a single batched objective call.
    """
    objective = objective or BetaBatch(config)
    theta = np.asarray(theta, dtype=float)
    vartheta = np.asarray(vartheta, dtype=float)
    M = config.M
    lo, hi = power_floor(config), config.p_max_watts
    w = theta - vartheta
    const = float(vartheta.sum()) * hi

    def L(X):
        return objective(X) + X @ w + const

    X = _start_grid(lo, hi, M)
    fX = L(X)
    grid_X, grid_f = X.copy(), fX.copy()
    h = FD_STEP_FRACTION * hi
    active = np.ones(len(X), dtype=bool)
    ever_moved = np.zeros(len(X), dtype=bool)
    flat = np.zeros(len(X), dtype=bool)
    eye = np.eye(M)

    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        plus = np.clip(X[idx, None, :] + h * eye, lo, hi)  # (n, M, M)
        minus = np.clip(X[idx, None, :] - h * eye, lo, hi)
        vals = L(np.concatenate([plus.reshape(-1, M), minus.reshape(-1, M)]))
        fp, fm = vals[: idx.size * M].reshape(-1, M), vals[idx.size * M:].reshape(-1, M)
        grad = (fp - fm) / np.einsum("nii->ni", plus - minus)

        # Armijo backtracking, batched over the starts still searching
        gmax = np.abs(grad).max(axis=1)
        flat[idx[gmax == 0]] = True
        t = (hi - lo) / np.where(gmax > 0, gmax, 1.0)
        pending = gmax > 0
        new_X = X[idx].copy()
        new_f = fX[idx].copy()
        moved = np.zeros(idx.size, dtype=bool)
        for _ls in range(40):
            if not pending.any():
                break
            k = np.flatnonzero(pending)
            cand = np.clip(X[idx[k]] + t[k, None] * grad[k], lo, hi)
            fc = L(cand)
            gain = np.einsum("ni,ni->n", grad[k], cand - X[idx[k]])
            ok = (fc >= fX[idx[k]] + ARMIJO_SIGMA * gain) & np.any(cand != X[idx[k]], axis=1)
            new_X[k[ok]] = cand[ok]
            new_f[k[ok]] = fc[ok]
            moved[k[ok]] = True
            pending[k[ok]] = False
            t[k[~ok]] *= 0.5
        step = np.abs(new_X - X[idx]).max(axis=1)
        X[idx] = new_X
        fX[idx] = new_f
        ever_moved[idx[moved]] = True
        active[idx[~moved | (step <= 1e-7 * hi)]] = False

    # a start that never found an ascent step from its grid point failed
    converged = bool(np.any(ever_moved | flat))
    pool_X = np.concatenate([X, grid_X])
    pool_f = np.concatenate([fX, grid_f])
    if not converged:
        pool_X, pool_f = grid_X, grid_f
    k = _argbest(pool_f, pool_X)
    return InnerSolution(PowerAllocation(tuple(pool_X[k]), hi), float(pool_f[k]), converged)


def _ellipsoid_step(center: np.ndarray, shape: np.ndarray, g: np.ndarray):
    n = center.size
    Ag = shape @ g
    gAg = float(g @ Ag)
    Ag_n = Ag / math.sqrt(gAg)
    center = center - Ag_n / (n + 1)
    shape = (n * n / (n * n - 1.0)) * (shape - (2.0 / (n + 1)) * np.outer(Ag_n, Ag_n))
    return center, 0.5 * (shape + shape.T)


def dual_ellipsoid_solve(config: ScenarioConfig, eta: float = 1e-3, objective: Objective | None = None,
                         radius: float = 1e3, max_iter: int | None = None) -> OptimizationResult:
    """Minimise the dual function over non-negative multipliers.

    Infeasible centres get a feasibility cut on their most negative
    coordinate. Feasible centres get the subgradient ``(P*, P_max - P*)`` of
    the inner maximiser. The run stops once ``sqrt(g' A g) <= eta`` (the
    ellipsoid bound on the dual suboptimality) or at the iteration cap. The
    answer is the inner maximiser with the largest beta seen.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    objective = objective or BetaBatch(config)
    M = config.M
    n = 2 * M
    cap = max_iter if max_iter is not None else max(500, math.ceil(49 * math.log(1.0 / eta)))
    center = np.ones(n)
    shape = radius ** 2 * np.eye(n)
    best_beta, best_p = -math.inf, None
    trace = []
    converged = False
    evals0 = getattr(objective, "evaluations", 0)
    k = 0
    for k in range(1, cap + 1):
        if np.any(center < 0):
            i = int(np.argmin(center))
            g = np.zeros(n)
            g[i] = -1.0
        else:
            theta, vartheta = center[:M], center[M:]
            sol = inner_maximize(theta, vartheta, config, objective)
            p = sol.allocation.array
            beta = float(objective(p[None, :])[0])
            if _lex_better(beta, p, best_beta, best_p):
                best_beta, best_p = beta, p
            dth, dvt = subgradient(sol.allocation)
            g = np.concatenate([dth, dvt])
            width = math.sqrt(float(g @ shape @ g))
            trace.append({"iteration": k, "beta": beta, "dual_value": sol.value, "width": width,
                          "theta": theta.tolist(), "vartheta": vartheta.tolist(),
                          "allocation": p.tolist(), "inner_converged": sol.converged})
            if width <= eta:
                converged = True
                break
        center, shape = _ellipsoid_step(center, shape, g)

    if best_p is None:
        # every iterate was infeasible; fall back to the full-power corner
        best_p = np.full(M, config.p_max_watts)
        best_beta = float(objective(best_p[None, :])[0])
    state = DualState(np.maximum(center[:M], 0.0), np.maximum(center[M:], 0.0),
                      center, shape, k, eta)
    return OptimizationResult(
        best_allocation=PowerAllocation(tuple(best_p), config.p_max_watts),
        best_beta=best_beta,
        method="dual_ellipsoid",
        evaluations=getattr(objective, "evaluations", 0) - evals0,
        converged=converged,
        diagnostics=trace,
        dual_state=state,
    )


def direct_search(config: ScenarioConfig, objective: Objective | None = None,
                  max_evaluations: int = 20_000) -> OptimizationResult:
    """Coordinate pattern search from the full-power corner.

    Polls every axis move of the current step (clamped to the box), takes the
    best strict improvement, and halves the step when none exists, from
    ``P_max / 4`` down to ``1e-4 * P_max``.
    """
    objective = objective or BetaBatch(config)
    M = config.M
    lo, hi = power_floor(config), config.p_max_watts
    x = np.full(M, hi)
    fx = float(objective(x[None, :])[0])
    evals = 1
    step = hi / 4.0
    trace = [{"step": step, "allocation": x.tolist(), "beta": fx}]
    while step >= 1e-4 * hi and evals < max_evaluations:
        cands = []
        for d in range(M):
            for sign in (1.0, -1.0):
                c = x.copy()
                c[d] = min(hi, max(lo, c[d] + sign * step))
                if c[d] != x[d]:
                    cands.append(c)
        if not cands:
            step /= 2.0
            continue
        cands = np.array(cands)
        vals = objective(cands)
        evals += len(cands)
        k = _argbest(vals, cands)
        if vals[k] > fx:
            x, fx = cands[k], float(vals[k])
            trace.append({"step": step, "allocation": x.tolist(), "beta": fx})
        else:
            step /= 2.0
    return OptimizationResult(
        best_allocation=PowerAllocation(tuple(x), hi),
        best_beta=fx,
        method="direct_search",
        evaluations=evals,
        converged=step < 1e-4 * hi,
        diagnostics=trace,
    )


def random_baseline(config: ScenarioConfig, rng: np.random.Generator) -> PowerAllocation:
    """Independent uniform powers on [0, P_max]."""
    return PowerAllocation(tuple(rng.uniform(0.0, config.p_max_watts, config.M)), config.p_max_watts)
