"""Monte Carlo ground truth for link delays.

Each trial scatters interferers as a Poisson process on the road window,
draws unit-mean exponential power gains for every link pair and every
interferer, and converts the resulting SIR (or SINR) into the delay
``S / R_i``. Trials are independent and reproducible one by one from
``(seed, trial_index)``; see :mod:`v2vdep.rng`.
"""

from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .analytic import beta_from_terms
from .scenario import InterfererField, PowerAllocation, ScenarioConfig

CHUNK = 2048


class Mode(str, enum.Enum):
    SIR = "sir"
    SINR = "sinr"


@dataclass(frozen=True)
class TrialSample:
    interferer_positions: np.ndarray  # (N,)
    cross_gains: np.ndarray  # (M, M); [j, i] is the gain from tx j to rx i
    interferer_gains: np.ndarray  # (N, M)
    delays: np.ndarray  # (M,) seconds, may be inf


@dataclass(frozen=True)
class EmpiricalReport:
    trials: int
    joint_reliability: float
    joint_stderr: float
    marginal_reliabilities: tuple[float, ...]
    marginal_stderrs: tuple[float, ...]
    empirical_beta: float
    beta_stderr: float
    empirical_medians: tuple[float, ...]

    @classmethod
    def from_delays(cls, delays: np.ndarray, targets: Sequence[float]) -> "EmpiricalReport":
        n, M = delays.shape
        met = delays <= np.asarray(targets)
        joint = met.all(axis=1).mean()
        marg = met.mean(axis=0)
        medians = np.median(delays, axis=0)
        below = (delays <= medians).all(axis=1)
        above = (delays > medians).all(axis=1)
        # the two events are disjoint, so their union is a single Bernoulli
        p = (below | above).mean()
        k = 2.0 ** (M - 1)
        return cls(
            trials=n,
            joint_reliability=float(joint),
            joint_stderr=_binomial_se(joint, n),
            marginal_reliabilities=tuple(float(m) for m in marg),
            marginal_stderrs=tuple(_binomial_se(m, n) for m in marg),
            empirical_beta=float(beta_from_terms(below.mean(), above.mean(), M)),
            beta_stderr=k / (k - 1.0) * _binomial_se(p, n),
            empirical_medians=tuple(float(m) for m in medians),
        )


def _binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def sample_interferers(field: InterfererField, rng: np.random.Generator) -> np.ndarray:
    """Poisson number of interferers, uniform on ``[-L/2, L/2]``."""
    L = field.road_length
    n = rng.poisson(field.density * L)
    return rng.uniform(-0.5 * L, 0.5 * L, size=n)


def _draw(config: ScenarioConfig, rng: np.random.Generator):
    x = sample_interferers(config.field, rng)
    M = config.M
    cross = rng.exponential(size=(M, M))
    gk = rng.exponential(size=(x.size, M))
    return x, cross, gk


def _delays(config, powers, mode, x, cross, gk, path, rx):
    alpha = config.radio.path_loss_exponent
    rx_power = powers[:, None] * cross * path  # [j, i]
    signal = np.diag(rx_power).copy()
    i_cross = rx_power.sum(axis=0) - signal
    if x.size:
        with np.errstate(divide="ignore"):
            i_field = config.field.interferer_power_watts * (gk * np.abs(x[:, None] - rx) ** -alpha).sum(axis=0)
    else:
        i_field = np.zeros_like(signal)
    denom = i_cross + i_field
    if mode is Mode.SINR:
        denom = denom + config.radio.bandwidth_hz * config.radio.noise_psd_watts_per_hz
    with np.errstate(divide="ignore", invalid="ignore"):
        sinr = signal / denom
        rate = config.radio.bandwidth_hz * np.log2(1.0 + sinr)
        t = config.radio.packet_bits / rate
    t = np.where(powers == 0.0, np.inf, t)
    return t


def simulate_trial(config: ScenarioConfig, allocation: PowerAllocation, mode: Mode | str,
                   rng: np.random.Generator) -> TrialSample:
    mode = Mode(mode)
    powers = allocation.array
    path = config.distances ** -config.radio.path_loss_exponent
    rx = np.asarray(config.geometry.rx_positions)
    x, cross, gk = _draw(config, rng)
    t = _delays(config, powers, mode, x, cross, gk, path, rx)
    return TrialSample(x, cross, gk, t)


def _chunk(config, powers, mode, seed, start, stop):
    path = config.distances ** -config.radio.path_loss_exponent
    rx = np.asarray(config.geometry.rx_positions)
    out = np.empty((stop - start, config.M))
    for k in range(start, stop):
        x, cross, gk = _draw(config, rngmod.stream(seed, k, "trial"))
        out[k - start] = _delays(config, powers, mode, x, cross, gk, path, rx)
    return out


def simulate_delays(config: ScenarioConfig, allocation: PowerAllocation, trials: int,
                    mode: Mode | str = Mode.SIR, seed: int = 0, workers: int = 1) -> np.ndarray:
    """Delays of ``trials`` independent trials, shape ``(trials, M)``.

    Row ``k`` depends only on ``(seed, k)``, so the result is identical for
    any ``workers``.
    """
    mode = Mode(mode)
    powers = allocation.array
    bounds = [(s, min(s + CHUNK, trials)) for s in range(0, trials, CHUNK)]
    if workers <= 1:
        parts = [_chunk(config, powers, mode, seed, a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ab: _chunk(config, powers, mode, seed, *ab), bounds))
    if not parts:
        return np.empty((0, config.M))
    return np.concatenate(parts)


def estimate(config: ScenarioConfig, allocation: PowerAllocation, requirements=None,
             trials: int = 100_000, mode: Mode | str = Mode.SIR, seed: int = 0,
             workers: int = 1) -> EmpiricalReport:
    if trials < 1000:
        raise ValueError("need at least 1000 trials")
    targets = (requirements or config.requirements).targets
    delays = simulate_delays(config, allocation, trials, mode, seed, workers)
    return EmpiricalReport.from_delays(delays, targets)


def empirical_cdf(samples: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Fraction of ``samples`` at or below each grid value."""
    s = np.sort(samples)
    return np.searchsorted(s, grid, side="right") / s.size


def empirical_joint_diagonal(delays: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Empirical H(v, ..., v): the CDF of the largest delay in each trial."""
    return empirical_cdf(delays.max(axis=1), grid)


def dump_trials(path: str | Path, config: ScenarioConfig, allocation: PowerAllocation,
                trials: int, mode: Mode | str = Mode.SIR, seed: int = 0) -> None:
    """Write one CSV row per trial (interferer count and per-link delays)."""
    mode = Mode(mode)
    M = config.M
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "interferers"] + [f"delay_s_link{i + 1}" for i in range(M)])
        for k in range(trials):
            s = simulate_trial(config, allocation, mode, rngmod.stream(seed, k, "trial"))
            w.writerow([k, s.interferer_positions.size] + [repr(float(t)) for t in s.delays])
