import math
import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from v2vdep import analytic as A
from v2vdep.scenario import LinkGeometry, PowerAllocation, highway_config

from oracles import blomqvist_m2, joint_line_integral_simpson


def _alloc(cfg, *fractions):
    return PowerAllocation(tuple(f * cfg.p_max_watts for f in fractions), cfg.p_max_watts)


# ---------------------------------------------------------------------------
# thresholds and integrals

def test_sir_threshold_highway():
    cfg = highway_config()
    assert A.sir_threshold(13.9e-3, cfg.radio) == pytest.approx(0.0080107, rel=1e-4)
    assert A.sir_threshold(math.inf, cfg.radio) == 0.0
    assert A.sir_threshold(1e-12, cfg.radio) == math.inf


def test_threshold_inverse():
    radio = highway_config().radio
    for v in (1e-5, 1e-3, 0.1):
        assert A.delay_for_threshold(A.sir_threshold(v, radio), radio) == pytest.approx(v, rel=1e-12)


@pytest.mark.parametrize("alpha", [2.5, 3.0, 4.0])
@pytest.mark.parametrize("c", [0.1, 1.0, 10.0, 100.0])
def test_single_integral_closed_form(c, alpha):
    ref = A.ppp_integral_closed_form(c, alpha)
    assert A.ppp_integral(c, 3.7, alpha=alpha) == pytest.approx(ref, rel=1e-8)


def test_joint_integral_simpson_oracle():
    ref = joint_line_integral_simpson([1.0, 1.0], [0.0, 5.0], 3.0)
    assert A.joint_ppp_integral([1.0, 1.0], [0.0, 5.0], alpha=3.0) == pytest.approx(ref, abs=1e-6)


def test_joint_integral_uneven_oracle():
    ref = joint_line_integral_simpson([0.3, 40.0, 2.0], [-10.0, 0.0, 1.5], 3.5)
    got = A.joint_ppp_integral([0.3, 40.0, 2.0], [-10.0, 0.0, 1.5], alpha=3.5)
    assert got == pytest.approx(ref, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 50.0), st.floats(0.01, 50.0), st.floats(0.5, 200.0))
def test_joint_integral_between_max_and_sum(c1, c2, gap):
    """The union of two shadows is at least either one and at most both."""
    alpha = 3.0
    j = A.joint_ppp_integral([c1, c2], [0.0, gap], alpha=alpha)
    s1, s2 = A.ppp_integral_closed_form(c1, alpha), A.ppp_integral_closed_form(c2, alpha)
    assert max(s1, s2) - 1e-9 <= j <= s1 + s2 + 1e-9


def test_joint_integral_coincident_receivers_merge():
    ref = joint_line_integral_simpson([1.0, 2.0], [0.0, 0.0], 3.0)
    assert A.joint_ppp_integral([1.0, 2.0], [0.0, 0.0], alpha=3.0) == pytest.approx(ref, abs=1e-6)


def test_pgfl_exact_one_without_interferers():
    cfg = highway_config(0.0)
    assert A.pgfl_factor([1.0, 5.0], [0.0, -10.0], cfg) == 1.0


# ---------------------------------------------------------------------------
# CDFs

def test_marginal_matches_product_formula():
    """F_i written out with the single-receiver closed form."""
    cfg = highway_config(0.03)
    alloc = _alloc(cfg, 0.7, 0.2)
    p = alloc.array
    d = cfg.distances
    a = cfg.radio.path_loss_exponent
    v = 2e-4
    th = A.sir_threshold(v, cfg.radio)
    for i in range(2):
        j = 1 - i
        sig = p[i] * d[i, i] ** -a
        cross = 1.0 / (1.0 + th * p[j] * d[j, i] ** -a / sig)
        c = th * cfg.field.interferer_power_watts / sig
        ref = cross * math.exp(-cfg.field.density * A.ppp_integral_closed_form(c, a))
        assert A.marginal_cdf(i, v, alloc, cfg) == pytest.approx(ref, rel=1e-9)


def test_zero_density_factorises():
    """Without interferers the joint CDF is the product of cross factors."""
    cfg = highway_config(0.0)
    alloc = cfg.full_power()
    u = (1e-4, 3e-4)
    H = A.joint_cdf(u, alloc, cfg)
    F = [A.marginal_cdf(i, u[i], alloc, cfg) for i in range(2)]
    assert H == pytest.approx(F[0] * F[1], rel=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.floats(-5.5, -1.5), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_frechet_bounds(logv, f1, f2):
    cfg = highway_config(0.03)
    alloc = _alloc(cfg, f1, f2)
    v = 10.0 ** logv
    F = [A.marginal_cdf(i, v, alloc, cfg) for i in range(2)]
    H = A.joint_cdf([v, v], alloc, cfg)
    assert H <= min(F) + 1e-12
    assert H >= F[0] + F[1] - 1.0 - 1e-12
    # positive dependence through the shared field
    assert H >= F[0] * F[1] - 1e-12


@settings(max_examples=20, deadline=None)
@given(st.floats(-5.5, -1.5), st.floats(1.01, 3.0))
def test_cdfs_monotone(logv, factor):
    cfg = highway_config(0.03)
    alloc = cfg.full_power()
    v, w = 10.0 ** logv, 10.0 ** logv * factor
    for i in range(2):
        assert A.marginal_cdf(i, w, alloc, cfg) >= A.marginal_cdf(i, v, alloc, cfg)
    assert A.joint_cdf([w, w], alloc, cfg) >= A.joint_cdf([v, v], alloc, cfg)
    assert A.joint_cdf([v, w], alloc, cfg) >= A.joint_cdf([v, v], alloc, cfg)


def test_denser_field_lowers_reliability():
    vals = [A.joint_reliability(highway_config(lam).full_power(), highway_config(lam))
            for lam in (0.0, 0.01, 0.03, 0.05)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_silent_link():
    cfg = highway_config(0.01)
    alloc = _alloc(cfg, 0.0, 1.0)
    with pytest.warns(A.SilentLinkWarning):
        assert A.marginal_cdf(0, 1e-3, alloc, cfg) == 0.0
    with pytest.raises(A.SilentLinkError):
        A.blomqvist_beta(alloc, cfg)
    with pytest.raises(A.SilentLinkError):
        A.marginal_median(0, alloc, cfg)


def test_survival_inclusion_exclusion_m2():
    cfg = highway_config(0.03)
    alloc = cfg.full_power()
    s = (1e-4, 2e-4)
    F = [A.marginal_cdf(i, s[i], alloc, cfg) for i in range(2)]
    ref = 1.0 - F[0] - F[1] + A.joint_cdf(s, alloc, cfg)
    assert A.joint_survival_at(s, alloc, cfg) == pytest.approx(ref, abs=1e-14)


# ---------------------------------------------------------------------------
# medians and beta

def test_median_is_half():
    cfg = highway_config(0.03)
    alloc = _alloc(cfg, 0.4, 0.9)
    for i in range(2):
        m = A.marginal_median(i, alloc, cfg)
        assert A.marginal_cdf(i, m, alloc, cfg) == pytest.approx(0.5, abs=1e-12)


def test_symmetric_links_equal_medians():
    cfg = highway_config(0.03)
    # mirror image about x = 5: tx -5 -> rx 0 and tx 15 -> rx 10
    cfg = replace(cfg, geometry=LinkGeometry((-5.0, 15.0), (0.0, 10.0)))
    alloc = cfg.full_power()
    m0, m1 = A.marginal_median(0, alloc, cfg), A.marginal_median(1, alloc, cfg)
    assert m0 == pytest.approx(m1, rel=1e-12)


def test_beta_injection():
    assert A.beta_from_terms(0.5, 0.5, 2) == 1.0
    assert A.beta_from_terms(0.25, 0.25, 2) == 0.0
    for M in (3, 4, 6):
        assert A.beta_from_terms(0.5, 0.5, M) == 1.0
        assert A.beta_from_terms(0.5 ** M, 0.5 ** M, M) == 0.0
    with pytest.raises(ValueError):
        A.beta_from_terms(0.5, 0.5, 1)


@pytest.mark.parametrize("lam", [0.01, 0.03, 0.05])
def test_beta_m2_identity(lam):
    cfg = highway_config(lam)
    rep = A.blomqvist_beta(_alloc(cfg, 0.3, 1.0), cfg)
    assert rep.beta == pytest.approx(blomqvist_m2(rep.joint_cdf_at_medians), abs=1e-9)
    assert rep.joint_survival_at_medians == pytest.approx(rep.joint_cdf_at_medians, abs=1e-9)
    assert -1.0 <= rep.beta <= 1.0


def test_beta_zero_without_interferers():
    cfg = highway_config(0.0)
    assert abs(A.blomqvist_beta(cfg.full_power(), cfg).beta) < 1e-9


def test_beta_scale_invariance():
    cfg = highway_config(0.03)
    alloc = _alloc(cfg, 0.3, 0.8)
    b0 = A.blomqvist_beta(alloc, cfg).beta
    for k in (1e-3, 7.0, 1e4):
        scaled = cfg.scaled_powers(k)
        b = A.blomqvist_beta(PowerAllocation(tuple(k * alloc.array), scaled.p_max_watts), scaled).beta
        assert b == pytest.approx(b0, rel=1e-10)


def test_batch_matches_scalar():
    cfg = highway_config(0.03)
    batch = A.BetaBatch(cfg)
    P = np.array([[1.0, 1.0], [0.1, 0.3], [1e-6, 1e-6], [0.9, 0.02]]) * cfg.p_max_watts
    got = batch(P)
    for row, b in zip(P, got):
        ref = A.blomqvist_beta(PowerAllocation(tuple(row), cfg.p_max_watts), cfg).beta
        assert b == pytest.approx(ref, abs=1e-8)
    batch(P)
    assert batch.evaluations == len(P)  # second call served from the cache


def test_batch_three_links():
    cfg = highway_config(0.02)
    cfg = replace(cfg, geometry=LinkGeometry((-5.0, -15.0, -28.0), (0.0, -10.0, -22.0)),
                  requirements=replace(cfg.requirements, targets=(13.9e-3,) * 3))
    P = np.array([[1.0, 0.5, 0.8]]) * cfg.p_max_watts
    ref = A.blomqvist_beta(PowerAllocation(tuple(P[0]), cfg.p_max_watts), cfg).beta
    assert A.BetaBatch(cfg)(P)[0] == pytest.approx(ref, abs=1e-8)


def test_highway_pinned_values():
    # regression pins from the first verified run
    cfg = highway_config(0.03)
    rep = A.blomqvist_beta(cfg.full_power(), cfg)
    assert rep.beta == pytest.approx(0.0900016, abs=1e-6)
    assert A.joint_reliability(cfg.full_power(), cfg) == pytest.approx(0.875727, abs=1e-6)


def test_no_warnings_on_regular_config():
    cfg = highway_config(0.03)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        A.blomqvist_beta(cfg.full_power(), cfg)


def test_batch_fallback_when_rules_disagree(monkeypatch):
    cfg = highway_config(0.03)
    P = np.array([[1.0, 1.0], [0.1, 0.3]]) * cfg.p_max_watts
    fast = A.BetaBatch(cfg)(P)
    # a deliberately crude coarse rule forces every row onto the adaptive path
    monkeypatch.setattr(A, "_GL_COARSE", A._composite_gauss_legendre(2, 1))
    slow = A.BetaBatch(cfg)
    theta, a, b = slow.median_thresholds(P)
    _, ok = slow._joint_fixed(theta * b, slow._rx)
    assert not ok.any()
    assert np.allclose(slow(P), fast, atol=1e-12)


def test_batch_non_integer_alpha():
    cfg = highway_config(0.03)
    cfg = replace(cfg, radio=replace(cfg.radio, path_loss_exponent=2.5))
    P = np.array([[0.4, 0.9]]) * cfg.p_max_watts
    ref = A.blomqvist_beta(PowerAllocation(tuple(P[0]), cfg.p_max_watts), cfg).beta
    assert A.BetaBatch(cfg)(P)[0] == pytest.approx(ref, abs=1e-8)
