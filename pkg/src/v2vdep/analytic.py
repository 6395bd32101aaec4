"""Closed-form delay CDFs and Blomqvist's beta for interference-coupled links.

Under the SIR approximation with Rayleigh fading and a 1-D Poisson field of
interferers, link ``i`` meets a delay threshold ``v`` when its SIR exceeds
``theta(v) = 2**(S / (omega * v)) - 1``. Conditioned on the interferer
positions the links succeed independently, so

* the marginal CDF is a product of cross-link factors and one PGFL factor
  ``exp(-lambda * ppp_integral(...))``;
* the joint CDF is the product of all cross-link factors times a PGFL factor
  whose integrand couples every receiver.

Two evaluation routes are provided. The scalar functions (``marginal_cdf``,
``joint_cdf``, ``blomqvist_beta``...) integrate numerically everywhere and
find medians by bisection. :class:`BetaBatch` evaluates beta for many
allocations at once, using the exact single-receiver integral and vectorised
quadrature; the optimiser uses it.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate

from .scenario import PowerAllocation, RadioParams, ScenarioConfig

MEDIAN_BRACKET = (1e-8, 1e2)  # seconds
QUAD_EPSABS = 1e-11
QUAD_BUDGET = 1e-9  # accepted absolute error per piece before falling back
QUAD_RBUDGET = 1e-10  # ... plus this much relative error


class SilentLinkWarning(UserWarning):
    """A link with zero transmit power can never meet a finite delay target."""


class SilentLinkError(ValueError):
    pass


class DegenerateMedianWarning(UserWarning):
    """F already exceeds 1/2 at the bracket floor; the floor is returned."""


class MedianUnreachableError(ArithmeticError):
    pass


class QuadratureError(ArithmeticError):
    def __init__(self, message: str, error_estimate: float):
        super().__init__(f"{message} (error estimate {error_estimate:.3g})")
        self.error_estimate = error_estimate


# ---------------------------------------------------------------------------
# thresholds

def sir_threshold(v: float, radio: RadioParams) -> float:
    """SIR needed to deliver ``radio.packet_bits`` within ``v`` seconds.

    Returns ``inf`` once the exponent leaves the double range.
    """
    if not v > 0.0:
        raise ValueError(f"delay threshold must be positive, got {v}")
    if math.isinf(v):
        return 0.0
    exponent = radio.packet_bits / (radio.bandwidth_hz * v)
    if exponent > 1023.0:
        return math.inf
    return math.expm1(exponent * math.log(2.0))


def delay_for_threshold(theta: float, radio: RadioParams) -> float:
    """Inverse of :func:`sir_threshold`."""
    if theta <= 0.0:
        return math.inf
    if math.isinf(theta):
        return 0.0
    return radio.packet_bits / (radio.bandwidth_hz * math.log1p(theta) / math.log(2.0))


# ---------------------------------------------------------------------------
# PPP integrals

def ppp_integral_closed_form(c: float, alpha: float) -> float:
    """``∫ c / (|x|^alpha + c) dx`` over the real line."""
    return 2.0 * c ** (1.0 / alpha) * math.pi / (alpha * math.sin(math.pi / alpha))


def _line_integrand(coeffs, positions, alpha):
    def f(x):
        s = 0.0
        for c, r in zip(coeffs, positions):
            dist = abs(x - r)
            if dist == 0.0:
                return 1.0
            s += math.log1p(c * dist ** -alpha)
        return -math.expm1(-s)
    return f


def _line_integrand_array(coeffs, positions, alpha):
    coeffs = np.asarray(coeffs)
    positions = np.asarray(positions)

    def f(x):
        dist = np.abs(np.asarray(x)[..., None] - positions)
        with np.errstate(divide="ignore"):
            s = np.log1p(coeffs * dist ** -alpha).sum(axis=-1)
        return -np.expm1(-s)
    return f


def _pieces(positions: Sequence[float], scales: Sequence[float]):
    """Split the line at receivers; yield ``(origin, direction, scale, u_max)``.

    Each piece is parametrised as ``x = origin + direction * scale * tan(u)``
    for ``u`` in ``[0, u_max]``. Gaps between neighbouring receivers are cut at
    the midpoint so every piece touches exactly one receiver.
    """
    order = np.argsort(positions)
    pos = [positions[k] for k in order]
    sc = [scales[k] for k in order]
    yield pos[0], -1.0, sc[0], math.pi / 2
    for (a, sa), (b, sb) in zip(zip(pos, sc), zip(pos[1:], sc[1:])):
        half = 0.5 * (b - a)
        if half == 0.0:
            continue
        yield a, 1.0, sa, math.atan(half / sa)
        yield b, -1.0, sb, math.atan(half / sb)
    yield pos[-1], 1.0, sc[-1], math.pi / 2


def _simpson_piece(f_arr, origin, direction, scale, u_max, tol):
    def g(u):
        t = np.tan(u)
        return f_arr(origin + direction * scale * t) * scale * (1.0 + t * t)

    prev = None
    for k in range(10, 21):
        n = 2 ** k
        u = np.linspace(0.0, u_max, n + 1)
        if u_max == math.pi / 2:
            u = u[:-1]  # integrand vanishes at the far end for alpha > 1
            y = np.append(g(u), 0.0)
        else:
            y = g(u)
        val = (u_max / n / 3.0) * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())
        if prev is not None and abs(val - prev) <= max(tol, QUAD_RBUDGET * abs(val)):
            return val
        prev = val
    raise QuadratureError("composite Simpson refinement did not converge", abs(val - prev))


def _integrate_line(coeffs: Sequence[float], positions: Sequence[float], alpha: float) -> float:
    terms = [(float(c), float(r)) for c, r in zip(coeffs, positions) if c > 0.0]
    if not terms:
        return 0.0
    if any(math.isinf(c) for c, _ in terms):
        return math.inf
    cs, rs = zip(*terms)
    f = _line_integrand(cs, rs, alpha)
    scales = [c ** (1.0 / alpha) for c in cs]
    total = 0.0
    for origin, direction, scale, u_max in _pieces(rs, scales):
        def g(u, origin=origin, direction=direction, scale=scale):
            t = math.tan(u)
            return f(origin + direction * scale * t) * scale * (1.0 + t * t)

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, err = integrate.quad(g, 0.0, u_max, epsabs=QUAD_EPSABS, epsrel=1e-12, limit=200)
        budget = QUAD_BUDGET + QUAD_RBUDGET * abs(val)
        if not err <= budget:
            f_arr = _line_integrand_array(cs, rs, alpha)
            val = _simpson_piece(f_arr, origin, direction, scale, u_max, budget)
        total += val
    return total


def ppp_integral(c: float, rx_position: float = 0.0, *, alpha: float) -> float:
    """``∫ [1 - 1/(1 + c |x - x_r|^-alpha)] dx`` over the whole line.

    The caller applies ``exp(-lambda * result)``. Raises
    :class:`QuadratureError` if neither adaptive Gauss-Kronrod nor the Simpson
    fallback reaches the tolerance budget.
    """
    if c < 0.0:
        raise ValueError("coefficient must be >= 0")
    return _integrate_line([c], [rx_position], alpha)


def joint_ppp_integral(coeffs: Sequence[float], rx_positions: Sequence[float], *, alpha: float) -> float:
    """``∫ [1 - prod_i 1/(1 + c_i |x - x_i|^-alpha)] dx`` over the whole line."""
    if len(coeffs) != len(rx_positions):
        raise ValueError("need one coefficient per receiver")
    if any(c < 0.0 for c in coeffs):
        raise ValueError("coefficients must be >= 0")
    return _integrate_line(coeffs, rx_positions, alpha)


# ---------------------------------------------------------------------------
# CDFs

def _cross_factor(i: int, theta: float, powers: np.ndarray, config: ScenarioConfig) -> float:
    """Probability that cross-link interference alone leaves link ``i`` above theta."""
    alpha = config.radio.path_loss_exponent
    d = config.distances
    signal = powers[i] * d[i, i] ** -alpha
    out = 1.0
    for j in range(config.M):
        if j == i or powers[j] == 0.0 or theta == 0.0:
            continue
        out /= 1.0 + theta * powers[j] * d[j, i] ** -alpha / signal
    return out


def _field_coefficient(i: int, theta: float, powers: np.ndarray, config: ScenarioConfig) -> float:
    alpha = config.radio.path_loss_exponent
    signal = powers[i] * config.distances[i, i] ** -alpha
    if theta == 0.0:
        return 0.0
    return theta * config.field.interferer_power_watts / signal


def _subset_cdf(links: Sequence[int], thetas: Sequence[float], powers: np.ndarray,
                config: ScenarioConfig) -> float:
    """P(every link in ``links`` reaches its SIR threshold)."""
    if not links:
        return 1.0
    cross = 1.0
    coeffs = []
    for i, th in zip(links, thetas):
        if powers[i] == 0.0:
            return 0.0
        if math.isinf(th):
            return 0.0
        cross *= _cross_factor(i, th, powers, config)
        coeffs.append(_field_coefficient(i, th, powers, config))
    return float(cross * pgfl_factor(coeffs, [config.geometry.rx_positions[i] for i in links], config))


def pgfl_factor(coeffs: Sequence[float], rx_positions: Sequence[float], config: ScenarioConfig) -> float:
    """``exp(-lambda * joint_ppp_integral(...))``; exactly 1 for an empty field."""
    lam = config.field.density
    if lam == 0.0:
        return 1.0
    integral = joint_ppp_integral(coeffs, rx_positions, alpha=config.radio.path_loss_exponent)
    return math.exp(-lam * integral)


def _powers(allocation: PowerAllocation, config: ScenarioConfig) -> np.ndarray:
    p = allocation.array
    if p.shape != (config.M,):
        raise ValueError(f"allocation has {p.size} powers for {config.M} links")
    return p


def marginal_cdf(link: int, v: float, allocation: PowerAllocation, config: ScenarioConfig) -> float:
    """F_i(v) = P(t_i <= v) for link index ``link`` (0-based)."""
    if not v > 0.0:
        raise ValueError(f"delay threshold must be positive, got {v}")
    powers = _powers(allocation, config)
    if powers[link] == 0.0:
        warnings.warn(f"link {link} is silent (zero power); F = 0", SilentLinkWarning, stacklevel=2)
        return 0.0
    return _subset_cdf([link], [sir_threshold(v, config.radio)], powers, config)


def joint_cdf(thresholds: Sequence[float], allocation: PowerAllocation, config: ScenarioConfig) -> float:
    """H(u_1, ..., u_M) = P(t_1 <= u_1, ..., t_M <= u_M)."""
    if len(thresholds) != config.M:
        raise ValueError(f"need {config.M} thresholds")
    if any(not u > 0.0 for u in thresholds):
        raise ValueError("delay thresholds must be positive")
    powers = _powers(allocation, config)
    if np.any(powers == 0.0):
        warnings.warn("silent link in allocation; H = 0", SilentLinkWarning, stacklevel=2)
        return 0.0
    thetas = [sir_threshold(u, config.radio) for u in thresholds]
    return _subset_cdf(range(config.M), thetas, powers, config)


def _survival(thresholds: Sequence[float], powers: np.ndarray, config: ScenarioConfig,
              known: dict[tuple[int, ...], float] | None = None) -> tuple[float, float]:
    """Inclusion-exclusion for P(all t_i > s_i); returns (clamped, clamp size)."""
    thetas = [sir_threshold(s, config.radio) for s in thresholds]
    known = known or {}
    total = 0.0
    for k in range(config.M + 1):
        for subset in itertools.combinations(range(config.M), k):
            if subset in known:
                h = known[subset]
            else:
                h = _subset_cdf(subset, [thetas[i] for i in subset], powers, config)
            total += (-1) ** k * h
    clamped = min(1.0, max(0.0, float(total)))
    return clamped, abs(float(total) - clamped)


def joint_survival_at(thresholds: Sequence[float], allocation: PowerAllocation,
                      config: ScenarioConfig) -> float:
    """P(t_1 > s_1, ..., t_M > s_M), clamped to [0, 1]."""
    if len(thresholds) != config.M:
        raise ValueError(f"need {config.M} thresholds")
    return _survival(thresholds, _powers(allocation, config), config)[0]


def marginal_median(link: int, allocation: PowerAllocation, config: ScenarioConfig) -> float:
    """Median delay of ``link`` by geometric bisection on the delay axis."""
    powers = _powers(allocation, config)
    if powers[link] == 0.0:
        raise SilentLinkError(f"link {link} is silent; its median delay is infinite")

    def F(v):
        return _subset_cdf([link], [sir_threshold(v, config.radio)], powers, config)

    lo, hi = MEDIAN_BRACKET
    if F(lo) >= 0.5:
        warnings.warn(f"F_{link} >= 1/2 at the bracket floor {lo} s; returning the floor",
                      DegenerateMedianWarning, stacklevel=2)
        return lo
    while F(hi) < 0.5:
        hi *= 100.0
        if hi > 1e12:
            raise MedianUnreachableError(f"F_{link} stays below 1/2 up to {hi:g} s")
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if F(mid) < 0.5:
            lo = mid
        else:
            hi = mid
        if hi / lo - 1.0 <= 1e-14:
            break
    return math.sqrt(lo * hi)


# ---------------------------------------------------------------------------
# Blomqvist's beta

def beta_from_terms(joint_cdf_term: float, survival_term: float, M: int) -> float:
    """Multivariate Blomqvist beta from C(1/2,...) and the survival C-hat(1/2,...)."""
    if M < 2:
        raise ValueError("beta undefined for M = 1")
    k = 2.0 ** (M - 1)
    return (k * (joint_cdf_term + survival_term) - 1.0) / (k - 1.0)


@dataclass(frozen=True)
class BetaReport:
    beta: float
    medians: tuple[float, ...]
    joint_cdf_at_medians: float
    joint_survival_at_medians: float
    survival_clamp: float = 0.0


def blomqvist_beta(allocation: PowerAllocation, config: ScenarioConfig) -> BetaReport:
    powers = _powers(allocation, config)
    if np.any(powers <= 0.0):
        raise SilentLinkError("beta needs every link active (silent link in allocation)")
    medians = tuple(marginal_median(i, allocation, config) for i in range(config.M))
    thetas = [sir_threshold(m, config.radio) for m in medians]
    C = _subset_cdf(range(config.M), thetas, powers, config)
    survival, clamp = _survival(medians, powers, config, known={tuple(range(config.M)): C})
    return BetaReport(
        beta=float(beta_from_terms(C, survival, config.M)),
        medians=tuple(float(m) for m in medians),
        joint_cdf_at_medians=float(C),
        joint_survival_at_medians=float(survival),
        survival_clamp=float(clamp),
    )


# ---------------------------------------------------------------------------
# batched evaluation for the optimiser

def _composite_gauss_legendre(nodes: int, panels: int):
    """Nodes and weights of a composite Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(0.0, 1.0, panels + 1)
    h = np.diff(edges)[:, None]
    v = edges[:-1, None] + 0.5 * h * (x + 1.0)
    return v.ravel(), (0.5 * h * w).ravel()


_GL_COARSE = _composite_gauss_legendre(32, 4)
_GL_FINE = _composite_gauss_legendre(48, 6)


def _closed_form_constant(alpha: float) -> float:
    return 2.0 * math.pi / (alpha * math.sin(math.pi / alpha))


class BetaBatch:
    """Beta for many allocations at once, memoised per allocation.

    Marginals use the exact single-receiver integral so medians come from a
    vectorised bisection in ``log(theta)``. Joint terms are integrated over the
    same receiver-split pieces as the scalar route with two composite
    Gauss-Legendre rules; rows where the rules disagree beyond the quadrature
    budget are redone with :func:`scipy.integrate.quad_vec`. Call with an
    array of shape ``(K, M)``; returns ``(K,)``.
    """

    def __init__(self, config: ScenarioConfig):
        self.config = config
        alpha = config.radio.path_loss_exponent
        self._alpha = alpha
        self._k_alpha = _closed_form_constant(alpha)
        self._path = config.distances ** -alpha  # (j, i) -> d_{j,i}^-alpha
        self._rx = np.asarray(config.geometry.rx_positions)
        self._cache: dict[bytes, float] = {}
        self.evaluations = 0

    def __call__(self, powers: np.ndarray) -> np.ndarray:
        powers = np.atleast_2d(np.asarray(powers, dtype=float))
        keys = [row.tobytes() for row in powers]
        todo = [k for k, key in enumerate(keys) if key not in self._cache]
        if todo:
            # duplicates inside one batch are computed once
            uniq = {}
            for k in todo:
                uniq.setdefault(keys[k], k)
            rows = np.array([powers[k] for k in uniq.values()])
            vals = self._compute(rows)
            for key, val in zip(uniq.keys(), vals):
                self._cache[key] = float(val)
            self.evaluations += len(rows)
        return np.array([self._cache[key] for key in keys])

    # coefficient arrays, all (K, M)
    def _ratios(self, powers):
        signal = powers * np.diag(self._path)  # P_i d_ii^-alpha
        # a[k, j, i] = P_j d_{j,i}^-alpha / (P_i d_ii^-alpha)
        a = powers[:, :, None] * self._path[None, :, :] / signal[:, None, :]
        M = powers.shape[1]
        a[:, np.arange(M), np.arange(M)] = 0.0
        b = self.config.field.interferer_power_watts / signal
        return a, b

    def marginal(self, theta, a, b):
        """F_i at SIR threshold ``theta`` (K, M), closed form."""
        cross = np.prod(1.0 / (1.0 + theta[:, None, :] * a), axis=1)
        lam = self.config.field.density
        if lam == 0.0:
            return cross
        return cross * np.exp(-lam * self._k_alpha * (theta * b) ** (1.0 / self._alpha))

    def median_thresholds(self, powers):
        """SIR thresholds at which every F_i equals 1/2, shape (K, M)."""
        a, b = self._ratios(powers)
        lo = np.full(powers.shape, -80.0)  # log theta
        hi = np.full(powers.shape, 80.0)
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            above = self.marginal(np.exp(mid), a, b) >= 0.5
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
        return np.exp(0.5 * (lo + hi)), a, b

    def _joint_pgfl(self, coeffs, links):
        """exp(-lambda * joint integral) for receivers ``links``, coeffs (K, |links|)."""
        lam = self.config.field.density
        if lam == 0.0:
            return np.ones(coeffs.shape[0])
        rx = self._rx[list(links)]
        total, ok = self._joint_fixed(coeffs, rx)
        if not ok.all():
            bad = np.flatnonzero(~ok)
            total[bad] = self._joint_adaptive(coeffs[bad], rx)
        return np.exp(-lam * total)

    def _joint_fixed(self, coeffs, rx):
        """Two composite Gauss-Legendre rules per piece, vectorised over rows.

        Pieces use each row's own scale ``c^(1/alpha)``. Returns the finer
        estimate and a mask of rows where both rules agree within budget.
        """
        alpha = self._alpha
        scales = coeffs ** (1.0 / alpha)  # (K, L)
        order = np.argsort(rx)
        coarse = np.zeros(coeffs.shape[0])
        fine = np.zeros(coeffs.shape[0])
        for origin, direction, u_max, scale in self._row_pieces(rx, scales, order):
            for rule, acc in ((_GL_COARSE, coarse), (_GL_FINE, fine)):
                v, w = rule
                u = u_max[:, None] * v[None, :]  # (K, N)
                t = np.tan(u)
                x = origin + direction * scale[:, None] * t
                dist = np.abs(x[:, :, None] - rx)
                with np.errstate(divide="ignore"):
                    s = np.log1p(coeffs[:, None, :] * dist ** -alpha).sum(axis=2)
                g = -np.expm1(-s) * scale[:, None] * (1.0 + t * t)
                acc += u_max * (g @ w)
        ok = np.abs(fine - coarse) <= QUAD_BUDGET + QUAD_RBUDGET * np.abs(fine)
        return fine, ok

    @staticmethod
    def _row_pieces(rx, scales, order):
        first, last = order[0], order[-1]
        half_pi = np.full(scales.shape[0], math.pi / 2)
        yield rx[first], -1.0, half_pi, scales[:, first]
        for a, b in zip(order, order[1:]):
            half = 0.5 * (rx[b] - rx[a])
            if half == 0.0:
                continue
            yield rx[a], 1.0, np.arctan(half / scales[:, a]), scales[:, a]
            yield rx[b], -1.0, np.arctan(half / scales[:, b]), scales[:, b]
        yield rx[last], 1.0, half_pi, scales[:, last]

    def _joint_adaptive(self, coeffs, rx):
        alpha = self._alpha

        def f(x):
            dist = np.abs(x - rx)
            if np.any(dist == 0.0):
                return np.ones(coeffs.shape[0])
            s = np.log1p(coeffs * dist ** -alpha).sum(axis=1)
            return -np.expm1(-s)

        scales = np.median(coeffs, axis=0) ** (1.0 / alpha)
        total = np.zeros(coeffs.shape[0])
        for origin, direction, scale, u_max in _pieces(list(rx), list(scales)):
            def g(u, origin=origin, direction=direction, scale=scale):
                t = math.tan(u)
                return f(origin + direction * scale * t) * scale * (1.0 + t * t)
            val, err = integrate.quad_vec(g, 0.0, u_max, epsabs=QUAD_EPSABS, epsrel=1e-12,
                                          norm="max", limit=400)
            if not err <= QUAD_BUDGET + QUAD_RBUDGET * np.abs(val).max():
                raise QuadratureError("batched joint integral did not converge", err)
            total += val
        return total

    def _subset(self, links, theta, a, b):
        cross = np.prod(1.0 / (1.0 + theta[:, None, :] * a), axis=1)  # (K, M)
        links = list(links)
        coeffs = theta[:, links] * b[:, links]
        return np.prod(cross[:, links], axis=1) * self._joint_pgfl(coeffs, links)

    def _compute(self, powers):
        if np.any(powers <= 0.0):
            raise SilentLinkError("beta needs every link active (silent link in allocation)")
        M = powers.shape[1]
        theta, a, b = self.median_thresholds(powers)
        F = self.marginal(theta, a, b)
        C = self._subset(range(M), theta, a, b)
        survival = np.ones(powers.shape[0])
        for k in range(1, M + 1):
            for subset in itertools.combinations(range(M), k):
                if k == 1:
                    h = F[:, subset[0]]
                elif k == M:
                    h = C
                else:
                    h = self._subset(subset, theta, a, b)
                survival += (-1) ** k * h
        survival = np.clip(survival, 0.0, 1.0)
        kk = 2.0 ** (M - 1)
        return (kk * (C + survival) - 1.0) / (kk - 1.0)


def joint_reliability(allocation: PowerAllocation, config: ScenarioConfig) -> float:
    """Analytic P(t_i <= tau_i for all i) at the configured delay targets."""
    return joint_cdf(config.requirements.targets, allocation, config)
