import logging
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

import stablekuma.kumaraswamy as ks
from stablekuma import oracle
from stablekuma.kumaraswamy import LogParams, UnitValue

GRID = (-5.0, -2.0, 0.0, 2.0, 5.0, 12.0)


# -- gradient checking ----------------------------------------------------


def test_report_uses_floored_denominator():
    rep = oracle.grad_check({"zero": (0.0, 1e-13), "big": (2.0, 2.0 + 2e-6)})
    assert_allclose(rep.rel_error["zero"], 0.1)
    assert_allclose(rep.rel_error["big"], 1e-6 / (1 + 1e-6), rtol=1e-6)
    assert rep.worst_overall == pytest.approx(0.1)
    assert not rep.passed(1e-5)


def test_report_flags_non_finite_as_failure():
    rep = oracle.grad_check({"bad": (np.nan, 1.0)})
    assert rep.rel_error["bad"] == np.inf


def test_fd_gradient_icdf_example():
    u = UnitValue.from_linear(0.5)
    fd = oracle.fd_gradient(lambda q: ks.icdf(u, q).value, LogParams(0.0, 0.0))
    assert_allclose(fd.d_log_b, 0.5 * math.log(0.5), rtol=1e-8)


@pytest.mark.parametrize("method", ["central", "ridders"])
def test_fd_gradient_entropy_example(method):
    p = LogParams.from_ab(2.0, 3.0)
    fd = oracle.fd_gradient(ks.entropy, p, method=method)
    g = ks.entropy_grads(p)
    assert_allclose([fd.d_log_a, fd.d_log_b], [g.d_log_a, g.d_log_b], rtol=1e-6)


def test_fd_gradient_constant_is_zero():
    fd = oracle.fd_gradient(lambda q: 3.0, LogParams(1.0, -2.0))
    assert fd.d_log_a == 0.0 and fd.d_log_b == 0.0


def test_fd_gradient_vectorized_over_grid():
    la, lb = np.meshgrid(np.linspace(-1, 1, 4), np.linspace(-1, 1, 3))
    fd = oracle.fd_gradient(lambda q: np.asarray(q.log_a) ** 2 * np.asarray(q.log_b), LogParams(la, lb))
    assert_allclose(fd.d_log_a, 2 * la * lb, rtol=1e-8, atol=1e-10)
    assert_allclose(fd.d_log_b, la ** 2, rtol=1e-8, atol=1e-10)


def test_fd_gradient_reports_non_finite_stencil(caplog):
    def f(q):
        return np.where(np.asarray(q.log_a) > 0, np.inf, 0.0)

    with caplog.at_level(logging.WARNING, logger="stablekuma.oracle"):
        fd = oracle.fd_gradient(f, LogParams(0.0, 0.0))
    assert not np.isfinite(fd.d_log_a)
    assert "non-finite" in caplog.text


def test_fd_gradient_unknown_method():
    with pytest.raises(ValueError):
        oracle.fd_gradient(ks.entropy, LogParams(0.0, 0.0), method="forward")


def test_ridders_resolves_large_magnitude_function():
    # |f| ~ 1e6 with derivative ~1: one central step loses ~1e-4 to roundoff
    def f(q):
        return 1e6 + np.sin(np.asarray(q.log_a)) + 0 * np.asarray(q.log_b)

    fd = oracle.fd_gradient(f, LogParams(0.3, 0.0), method="ridders")
    assert_allclose(fd.d_log_a, math.cos(0.3), rtol=1e-9)


def test_fd_derivative_step_stays_on_one_side_of_zero():
    fd = oracle.fd_derivative(lambda t: np.log(-t), np.array([-1e-6, -1.0, -30.0]), method="ridders")
    assert_allclose(fd, 1 / np.array([-1e-6, -1.0, -30.0]), rtol=1e-9)


# -- reference evaluators ------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=-1e-5, max_value=-1e-300))
def test_series_log1mexp_against_mpmath(x):
    with mpmath.workdps(60):
        ref = float(mpmath.log(-mpmath.expm1(x)))
    assert_allclose(oracle.series_log1mexp(x), ref, rtol=4.5e-16)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-745.0, max_value=-1e-300))
def test_reference_log1mexp_against_mpmath(x):
    with mpmath.workdps(120 + int(-x)):
        ref = float(mpmath.log(-mpmath.expm1(x)))
    assert_allclose(oracle.reference_log1mexp(x), ref, rtol=4e-16)


def test_reference_log_pdf_example():
    assert_allclose(oracle.reference_log_pdf(math.log(0.3), 2.0, 3.0), math.log(6 * 0.3 * 0.91 ** 2), rtol=1e-14)


def test_reference_log_quantile_inverts_survival():
    for a, b in [(0.5, 2.0), (2.0, 3.0), (7.0, 0.2)]:
        for q in (1e-12, 0.1, 0.5, 0.9):
            t, s = oracle.reference_log_quantile(math.log(q), a, b)
            assert_allclose(math.exp(s), -math.expm1(t), rtol=1e-12)
            sf = ks.sf(UnitValue(t), LogParams.from_ab(a, b))
            assert_allclose(sf, q, rtol=1e-9)


# -- quadrature ----------------------------------------------------------


def test_quadrature_examples():
    u = LogParams(0.0, 0.0)
    assert_allclose(oracle.quadrature_expectation(lambda x: 1.0, u), 1.0, atol=1e-10)
    assert_allclose(oracle.quadrature_expectation(lambda x: x.value, u), 0.5, atol=1e-10)
    p = LogParams.from_ab(1.0, 2.0)
    h = oracle.quadrature_expectation(lambda x: -oracle.reference_log_pdf(x.log_value, 1.0, 2.0, x.log1m), p)
    assert_allclose(h, 0.5 - math.log(2), atol=1e-10)


def test_quadrature_normalizes_on_grid():
    for la in GRID:
        for lb in GRID:
            total = oracle.check_normalization(LogParams(la, lb), tol=1e-8)
            assert abs(total - 1) <= 1e-8


def test_quadrature_reports_non_convergence():
    with pytest.raises(oracle.OracleError):
        oracle.quadrature_expectation(lambda x: math.sin(1 / x.value), LogParams(0.0, 0.0))


def test_check_normalization_rejects_bad_density(monkeypatch):
    good = oracle.reference_log_pdf
    monkeypatch.setattr(oracle, "reference_log_pdf", lambda *args: good(*args) + math.log(1.01))
    with pytest.raises(oracle.OracleError):
        oracle.check_normalization(LogParams(0.5, 0.5))


@pytest.mark.parametrize("la, lb", [(0.0, 0.0), (math.log(2), math.log(2)), (-5.0, 5.0), (-2.0, 12.0), (3.0, -2.0)])
def test_quadrature_moment_against_mpmath(la, lb):
    a, b = mpmath.e ** la, mpmath.e ** lb
    for n in (1, 2, 3):
        ref = float(b * mpmath.beta(1 + n / a, b))
        assert_allclose(oracle.quadrature_moment(n, LogParams(la, lb)), ref, rtol=1e-10)


def test_quadrature_moment_reaches_past_dropped_tail():
    # E[X] ~ 1e-89 here: the distribution-quantile rule misses it entirely
    p = LogParams(-5.0, 5.0)
    generic = oracle.quadrature_expectation(lambda x: math.exp(float(x.log_value)), p, tol=1e-12)
    assert generic < 1e-100 < oracle.quadrature_moment(1, p)


def test_quadrature_moment_rejects_bad_order():
    with pytest.raises(ValueError):
        oracle.quadrature_moment(1.5, LogParams(0.0, 0.0))


# -- Monte Carlo ----------------------------------------------------------


def test_mc_uniform_mean():
    est = oracle.mc_expectation(lambda x: x.value, LogParams(0.0, 0.0), 10**6, np.random.default_rng(0))
    assert est.within(0.5, 4)
    assert_allclose(est.standard_error, math.sqrt(1 / 12 / 10**6), rtol=0.01)


def test_mc_entropy_example():
    p = LogParams.from_ab(2.0, 2.0)
    est = oracle.mc_expectation(lambda x: -ks.log_pdf(x, p), p, 10**6, np.random.default_rng(1))
    assert est.within(ks.entropy(p), 3)


def test_mc_is_deterministic():
    p = LogParams(0.4, 0.9)
    a = oracle.mc_expectation(lambda x: x.log_value, p, 10**5, np.random.default_rng(5), chunk=4096)
    b = oracle.mc_expectation(lambda x: x.log_value, p, 10**5, np.random.default_rng(5), chunk=4096)
    assert a == b


def test_mc_needs_two_samples():
    with pytest.raises(ValueError):
        oracle.mc_expectation(lambda x: x.value, LogParams(0.0, 0.0), 1, np.random.default_rng(0))


def test_mc_standard_error_formula():
    p = LogParams(0.0, 0.0)
    rng = np.random.default_rng(9)
    est = oracle.mc_expectation(lambda x: x.value, p, 1000, rng, chunk=100)
    xs = ks.sample(p, np.random.default_rng(9), size=1000).value
    assert_allclose(est.mean, xs.mean(), rtol=1e-12)
    assert_allclose(est.standard_error, xs.std(ddof=1) / math.sqrt(1000), rtol=1e-9)
    assert_array_equal(est.n, 1000)
