import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

import stablekuma.kumaraswamy as ks
from stablekuma import oracle
from stablekuma.kumaraswamy import BetaParams, LogParams, UnitValue
from stablekuma.naive import NaiveParams, naive_icdf
from stablekuma.scalar import EULER_GAMMA, DomainError, digamma

GRID = (-5.0, -2.0, 0.0, 2.0, 5.0, 12.0)
POINTS = np.array([1e-6, 0.01, 0.5, 0.99, 1 - 1e-6])
LOG2 = math.log(2.0)


def unit(x, dtype=np.float64):
    return UnitValue.from_linear(np.asarray(x, dtype=dtype))


# -- value types --------------------------------------------------------


def test_logparams_rejects_non_finite():
    with pytest.raises(DomainError):
        LogParams(np.inf, 0.0)
    with pytest.raises(DomainError):
        LogParams(0.0, np.array([0.0, np.nan]))


def test_logparams_keeps_single_precision():
    p = LogParams(np.float32(0.5), np.float32(1.0))
    assert p.dtype == np.float32
    assert LogParams(np.float32(0.5), 1.0).dtype == np.float64
    assert_allclose(LogParams.from_ab(2.0, 3.0).b, 3.0, rtol=1e-15)


@pytest.mark.parametrize("x", [0.0, 1.0, -0.5, 1.5])
def test_unit_value_rejects_boundary(x):
    with pytest.raises(DomainError):
        UnitValue.from_linear(x)


def test_unit_value_rejects_non_negative_log():
    with pytest.raises(DomainError):
        UnitValue(0.0)
    with pytest.raises(DomainError):
        UnitValue(np.array([-1.0, 0.1]))


def test_unit_value_accessors():
    x = unit([0.2, 0.7])
    assert_allclose(x.value, [0.2, 0.7], rtol=1e-15)
    assert_allclose(x.log1m, np.log1p(-np.array([0.2, 0.7])), rtol=1e-15)
    assert len(x) == 2


# -- log-pdf -------------------------------------------------------------


def test_log_pdf_examples():
    x = unit(np.linspace(0.01, 0.99, 7))
    assert_array_equal(ks.log_pdf(x, LogParams(0.0, 0.0)), 0.0)
    assert ks.log_pdf(unit(0.5), LogParams(LOG2, 0.0)) == pytest.approx(0.0, abs=1e-15)
    expected = math.log(6 * 0.3 * (1 - 0.09) ** 2)
    assert_allclose(ks.log_pdf(unit(0.3), LogParams.from_ab(2.0, 3.0)), expected, rtol=1e-14)
    assert_allclose(expected, 0.3991653, rtol=1e-7)


def test_log_pdf_grads_uniform():
    x = unit(np.linspace(0.01, 0.99, 9))
    g = ks.log_pdf_grads(x, LogParams(0.0, 0.0))
    assert_allclose(g.d_log_b, 1 + np.log1p(-x.value), rtol=1e-14)
    assert_array_equal(g.d_log_x, 0.0)


def test_log_pdf_grads_match_central_differences():
    x = unit(0.3)
    p = LogParams.from_ab(2.0, 3.0)
    g = ks.log_pdf_grads(x, p)
    fd = oracle.fd_gradient(lambda q: ks.log_pdf(x, q), p)
    fdx = oracle.fd_derivative(lambda lx: ks.log_pdf(UnitValue(lx), p), x.log_value)
    report = oracle.grad_check({"a": (g.d_log_a, fd.d_log_a), "b": (g.d_log_b, fd.d_log_b), "x": (g.d_log_x, fdx)})
    assert report.passed(1e-6), report.worst()


def test_log_pdf_matches_reference_on_grid():
    x = unit(POINTS)
    for la in GRID[:5]:
        for lb in GRID[:5]:
            a, b = math.exp(la), math.exp(lb)
            ref = oracle.reference_log_pdf(x.log_value, a, b, x.log1m)
            got = ks.log_pdf(x, LogParams(la, lb))
            assert_allclose(got, ref, rtol=1e-9, atol=1e-9)


# -- inverse CDF -------------------------------------------------------------


def test_icdf_examples():
    assert_allclose(ks.icdf(unit(0.25), LogParams(0.0, 0.0)).value, 0.75, rtol=1e-15)
    out = ks.icdf(unit(0.75), LogParams.from_ab(2.0, 2.0)).value
    assert_allclose(out, math.sqrt(1 - math.sqrt(0.75)), rtol=1e-14)
    assert abs(out - 0.366025) < 5e-7


def test_icdf_single_precision_large_b_stays_interior():
    p = LogParams(np.float32(0.0), np.float32(24 * LOG2))
    u = unit(0.99, np.float32)
    x = ks.icdf(u, p)
    assert x.dtype == np.float32
    assert 0 < x.value < 1
    assert naive_icdf(np.float32(0.99), NaiveParams(1.0, 2.0 ** 24), dtype=np.float32) == 0


def test_icdf_grads_uniform_example():
    g = ks.icdf_grads(unit(0.5), LogParams(0.0, 0.0))
    assert_allclose(g.d_log_b, 0.5 * math.log(0.5), rtol=1e-15)
    assert abs(g.d_log_b + 0.346574) < 5e-7


def test_icdf_grads_match_central_differences():
    u = unit(0.9)
    p = LogParams.from_ab(2.0, 3.0)
    g = ks.icdf_grads(u, p)
    fd = oracle.fd_gradient(lambda q: ks.icdf(u, q).value, p)
    report = oracle.grad_check({"a": (g.d_log_a, fd.d_log_a), "b": (g.d_log_b, fd.d_log_b)})
    assert report.passed(1e-6), report.worst()


def test_icdf_log_grads_are_grads_over_sample():
    u = unit(np.linspace(0.05, 0.95, 11))
    for la, lb in [(0.0, 0.0), (1.0, -0.5), (-2.0, 3.0)]:
        p = LogParams(la, lb)
        x = ks.icdf(u, p).value
        g = ks.icdf_grads(u, p)
        gl = ks.icdf_log_grads(u, p)
        assert_allclose(gl.d_log_a * x, g.d_log_a, rtol=1e-12)
        assert_allclose(gl.d_log_b * x, g.d_log_b, rtol=1e-12)


def test_icdf_grads_single_precision_large_b_finite():
    p = LogParams(np.float32(0.0), np.float32(24 * LOG2))
    u = unit(np.array([0.7, 0.8, 0.9, 0.99, 0.999999], dtype=np.float32), np.float32)
    g = ks.icdf_grads(u, p)
    assert np.all(np.isfinite(g.d_log_a)) and np.all(np.isfinite(g.d_log_b))
    gl = ks.icdf_log_grads(u, p)
    assert np.all(np.isfinite(gl.d_log_a)) and np.all(np.isfinite(gl.d_log_b))


def test_icdf_is_decreasing_in_u():
    u = unit(np.linspace(0.001, 0.999, 999))
    for la, lb in [(0.0, 0.0), (2.0, -1.0), (-3.0, 4.0)]:
        lx = ks.icdf(u, LogParams(la, lb)).log_value
        assert np.all(np.diff(lx) <= 0)
        assert np.any(np.diff(lx) < 0)


def _float32_unit_grid():
    # every float32 binade down to the smallest subnormal plus values just below 1
    u = np.concatenate([
        np.float32(2.0) ** -np.arange(1, 150, dtype=np.float32),
        1 - np.float32(2.0) ** -np.arange(1, 25, dtype=np.float32),
        np.linspace(0.01, 0.99, 500, dtype=np.float32),
    ])
    return unit(u[(u > 0) & (u < 1)].astype(np.float32), np.float32)


def test_icdf_single_precision_no_underflow_to_zero():
    # a = 1, b up to 2^24: the linear sample never collapses to 0, and it
    # reads 1 only when the true value is within half an ulp of 1
    uv = _float32_unit_grid()
    for lb in np.linspace(0.0, 24 * LOG2, 25).astype(np.float32):
        x = ks.icdf(uv, LogParams(np.float32(0.0), lb))
        v = x.value
        assert np.all(v > 0), lb
        true_lx = _true_log_x(np.asarray(uv.value), 0.0, float(lb))
        assert np.all(-true_lx[v == 1] <= 2.0 ** -24), lb


def test_icdf_single_precision_log_value_interior_everywhere():
    # for extreme (a, b) the true sample can be within half an ulp of 1, so
    # only the canonical log value can stay strictly inside (-inf, 0)
    uv = _float32_unit_grid()
    for la in np.linspace(-5, 5, 11, dtype=np.float32):
        for lb in np.linspace(-5, 24 * LOG2, 12).astype(np.float32):
            lx = ks.icdf(uv, LogParams(la, lb)).log_value
            assert lx.dtype == np.float32
            assert np.all(lx < 0) and np.all(np.isfinite(lx)), (la, lb)


# -- cdf / survival ------------------------------------------------------


def test_cdf_examples():
    x = unit(np.linspace(0.01, 0.99, 9))
    assert_allclose(ks.cdf(x, LogParams(0.0, 0.0)), x.value, rtol=1e-14)
    assert_allclose(ks.cdf(unit(0.366025), LogParams.from_ab(2.0, 2.0)), 0.25, rtol=1e-5)
    assert_allclose(ks.sf(unit(0.366025), LogParams.from_ab(2.0, 2.0)), 0.75, rtol=1e-5)


def test_cdf_vanishes_monotonically_at_zero():
    x = unit(np.geomspace(1e-300, 0.5, 200))
    c = ks.cdf(x, LogParams.from_ab(0.7, 3.0))
    assert np.all(np.diff(c) > 0)
    assert c[0] < 1e-200


def _true_log_x(u, la, lb):
    # double-precision reference for log icdf(u), valid while it does not underflow
    a, b = math.exp(la), math.exp(lb)
    return oracle.reference_log1mexp(np.log(u.astype(np.float64)) / b) / a


@pytest.mark.parametrize("dtype, tol", [(np.float64, 1e-10), (np.float32, 1e-5)])
def test_survival_inverts_icdf(dtype, tol):
    u = np.linspace(0.001, 0.999, 199).astype(dtype)
    uv = unit(u, dtype)
    tiny = np.finfo(dtype).tiny
    checked = 0
    for la in np.linspace(-5, 5, 5):
        for lb in np.linspace(-5, 5, 5):
            p = LogParams(np.asarray(la, dtype=dtype), np.asarray(lb, dtype=dtype))
            x = ks.icdf(uv, p)
            # log x must be a normal number of the working precision to carry the information
            with np.errstate(under="ignore"):
                ok = np.abs(_true_log_x(u, float(p.log_a), float(p.log_b))) >= tiny
            checked += ok.sum()
            assert_allclose(ks.sf(x, p)[ok], u[ok], rtol=tol, atol=tol)
            assert_allclose(ks.cdf(x, p)[ok], 1 - u[ok], rtol=tol, atol=tol)
    assert checked > 0.85 * 25 * u.size


def test_icdf_log_value_below_subnormal_range_rounds_into_interior():
    # true log x is about -1e-442 here, below the smallest double subnormal
    p = LogParams(-5.0, -5.0)
    x = ks.icdf(unit(0.001), p)
    assert x.log_value == -np.finfo(np.float64).smallest_subnormal


# -- sampling -------------------------------------------------------------


def test_open_uniform_never_zero():
    class ZeroFirst:
        def __init__(self):
            self.rng = np.random.default_rng(0)
            self.calls = 0

        def random(self, size=None, dtype=np.float64):
            self.calls += 1
            out = self.rng.random(size, dtype=dtype)
            if self.calls == 1:
                out[:3] = 0
            return out

    gen = ZeroFirst()
    u = ks.open_uniform(gen, 10)
    assert np.all(u > 0) and gen.calls == 2


def test_sample_uniform_mean():
    x = ks.sample(LogParams(0.0, 0.0), np.random.default_rng(1), size=10**5).value
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - 0.5) < 3 * se


def test_sample_mean_matches_first_moment_on_grid():
    # for log a = -5 the mean is carried by draws of probability ~1e-16, which a
    # 1e5-sample SE cannot see; the log-space mean below covers that row
    rng = np.random.default_rng(2)
    for la in GRID[1:]:
        for lb in GRID:
            p = LogParams(la, lb)
            x = ks.sample(p, rng, size=10**5).value
            se = x.std(ddof=1) / math.sqrt(x.size)
            m = ks.moment(1, p)
            assert abs(x.mean() - m) <= 4 * se + 1e-300, (la, lb, x.mean(), m, se)


def test_sample_log_mean_matches_closed_form_on_grid():
    # X^a ~ Beta(1, b), so E[log X] = (psi(1) - psi(b + 1)) / a
    rng = np.random.default_rng(4)
    for la in GRID:
        for lb in GRID:
            lx = np.asarray(ks.sample(LogParams(la, lb), rng, size=10**5).log_value)
            ref = (digamma(1.0) - digamma(math.exp(lb) + 1)) / math.exp(la)
            se = lx.std(ddof=1) / math.sqrt(lx.size)
            assert abs(lx.mean() - ref) <= 4 * se, (la, lb)


def test_sample_is_deterministic():
    p = LogParams(0.3, -0.2)
    a = ks.sample(p, np.random.default_rng(7), size=1000).log_value
    b = ks.sample(p, np.random.default_rng(7), size=1000).log_value
    assert_array_equal(a, b)


def test_sample_single_precision_large_b_has_no_zeros():
    p = LogParams(np.float32(0.0), np.float32(24 * LOG2))
    x = ks.sample(p, np.random.default_rng(3), size=10**6)
    assert x.dtype == np.float32
    assert np.count_nonzero(x.value == 0) == 0
    assert np.all(x.log_value < 0)


# -- entropy --------------------------------------------------------------


def test_entropy_examples():
    assert ks.entropy(LogParams(0.0, 0.0)) == pytest.approx(0.0, abs=1e-15)
    assert_allclose(ks.entropy(LogParams.from_ab(1.0, 2.0)), 0.5 - math.log(2), rtol=1e-14)


def test_entropy_matches_quadrature():
    for a, b in [(0.5, 0.5), (2.0, 3.0), (5.0, 0.5), (0.2, 20.0)]:
        p = LogParams.from_ab(a, b)
        ref = oracle.quadrature_expectation(lambda x: -oracle.reference_log_pdf(x.log_value, a, b, x.log1m), p)
        assert_allclose(ks.entropy(p), ref, rtol=1e-8, atol=1e-9)


def test_entropy_grads_at_uniform():
    p = LogParams(0.0, 0.0)
    g = ks.entropy_grads(p)
    fd = oracle.fd_gradient(ks.entropy, p)
    assert abs(g.d_log_a - fd.d_log_a) < 1e-7
    assert abs(g.d_log_b - fd.d_log_b) < 1e-7


@pytest.mark.parametrize("a, b", [(5.0, 0.5), (2.0, 3.0), (0.3, 7.0)])
def test_entropy_grads_match_central_differences(a, b):
    p = LogParams.from_ab(a, b)
    g = ks.entropy_grads(p)
    fd = oracle.fd_gradient(ks.entropy, p)
    report = oracle.grad_check({"a": (g.d_log_a, fd.d_log_a), "b": (g.d_log_b, fd.d_log_b)})
    assert report.passed(1e-6), report.worst()


def test_entropy_log_a_gradient_at_unit_a():
    b = np.array([0.5, 1.0, 2.0, 10.0])
    g = ks.entropy_grads(LogParams(np.zeros(4), np.log(b)))
    assert_allclose(g.d_log_a, EULER_GAMMA + digamma(b + 1) - 1, rtol=1e-14, atol=1e-15)


# -- moments --------------------------------------------------------------


def test_moment_examples():
    u = LogParams(0.0, 0.0)
    assert_allclose(ks.moment(1, u), 0.5, rtol=1e-14)
    assert_allclose(ks.moment(2, u), 1 / 3, rtol=1e-14)
    assert_allclose(ks.moment(1, LogParams.from_ab(2.0, 2.0)), 8 / 15, rtol=1e-14)


@pytest.mark.parametrize("n", [0, -1, 1.5])
def test_moment_rejects_bad_order(n):
    with pytest.raises(DomainError):
        ks.moment(n, LogParams(0.0, 0.0))


# -- KL to Beta ----------------------------------------------------------


def test_kl_uniform_is_exactly_zero():
    for terms in (1, 5, 10, 40):
        assert ks.kl_to_beta(LogParams(0.0, 0.0), BetaParams(1.0, 1.0), terms) == 0.0


def test_kl_rejects_bad_terms():
    with pytest.raises(DomainError):
        ks.kl_to_beta(LogParams(0.0, 0.0), BetaParams(1.0, 1.0), 0)


def test_kl_series_converges_to_quadrature():
    from scipy.special import betaln

    a, b, al, be = 2.0, 3.0, 2.5, 3.5
    p = LogParams.from_ab(a, b)

    def integrand(x):
        lq = oracle.reference_log_pdf(x.log_value, a, b, x.log1m)
        return lq - ((al - 1) * x.log_value + (be - 1) * x.log1m - betaln(al, be))

    ref = oracle.quadrature_expectation(integrand, p)
    errs = [abs(ks.kl_to_beta(p, BetaParams(al, be), terms=t) - ref) for t in (10, 100, 1000, 10000)]
    assert np.all(np.diff(errs) < 0)
    assert errs[-1] < 1e-10


@settings(max_examples=40, deadline=None)
@given(
    st.floats(-1.5, 1.5), st.floats(-1.5, 1.5),
    st.floats(0.3, 5.0), st.floats(0.3, 5.0),
)
def test_kl_grads_match_central_differences(la, lb, alpha, beta):
    prior = BetaParams(alpha, beta)
    p = LogParams(la, lb)
    g = ks.kl_to_beta_grads(p, prior)
    fd = oracle.fd_gradient(lambda q: ks.kl_to_beta(q, prior), p, method="ridders")
    report = oracle.grad_check({"a": (g.d_log_a, fd.d_log_a), "b": (g.d_log_b, fd.d_log_b)})
    assert report.passed(1e-6) or max(abs(g.d_log_a - fd.d_log_a), abs(g.d_log_b - fd.d_log_b)) < 1e-9


# -- whole-grid sanity in single precision ------------------------------------


def test_no_non_finite_values_on_single_precision_grid():
    pts = unit(POINTS.astype(np.float32), np.float32)
    for la in np.array(GRID, dtype=np.float32):
        for lb in np.array(GRID + (24 * LOG2,), dtype=np.float32):
            p = LogParams(la, lb)
            vals = [
                ks.log_pdf(pts, p),
                ks.icdf(pts, p).log_value,
                ks.cdf(pts, p),
                ks.sf(pts, p),
                *ks.log_pdf_grads(pts, p).__dict__.values(),
                *ks.icdf_grads(pts, p).__dict__.values(),
                *ks.icdf_log_grads(pts, p).__dict__.values(),
            ]
            for v in vals:
                if v is not None:
                    assert np.all(np.isfinite(v)), (la, lb)
