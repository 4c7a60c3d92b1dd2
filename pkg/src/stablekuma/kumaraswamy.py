"""Numerically stable Kumaraswamy distribution in log-parameter space.

Parameters are carried as ``(log a, log b)`` and values in ``(0, 1)`` are
carried as ``log x``.  Every occurrence of ``log(1 - x^a)`` and
``log(1 - u^(1/b))`` goes through :func:`stablekuma.scalar.log1mexp`, which
is what keeps the density and the inverse CDF finite when ``b`` is large.

Precision follows the inputs: float32 parameters and values are evaluated
in float32, anything else in float64.  ``entropy``, ``moment`` and
``kl_to_beta`` always work in float64.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _fpmath as fp
from . import scalar
from .scalar import EULER_GAMMA, DomainError

__all__ = [
    "LogParams",
    "BetaParams",
    "GradPair",
    "UnitValue",
    "log_pdf",
    "log_pdf_grads",
    "icdf",
    "icdf_grads",
    "icdf_log_grads",
    "cdf",
    "sf",
    "open_uniform",
    "sample",
    "entropy",
    "entropy_grads",
    "moment",
    "kl_to_beta",
    "kl_to_beta_grads",
    "KL_DEFAULT_TERMS",
]

KL_DEFAULT_TERMS = 10


def _float_array(x):
    x = np.asarray(x)
    if x.dtype == np.float32:
        return x
    return x.astype(np.float64)


def _unwrap(x):
    return x[()] if isinstance(x, np.ndarray) and x.ndim == 0 else x


@dataclass(frozen=True)
class LogParams:
    """Kumaraswamy parameters stored as ``log a`` and ``log b``.

    Scalars or broadcastable arrays; float32 inputs stay float32.
    """

    log_a: np.ndarray
    log_b: np.ndarray

    def __post_init__(self):
        log_a = _float_array(self.log_a)
        log_b = _float_array(self.log_b)
        if log_a.dtype != log_b.dtype:
            log_a = log_a.astype(np.float64)
            log_b = log_b.astype(np.float64)
        if not (np.all(np.isfinite(log_a)) and np.all(np.isfinite(log_b))):
            raise DomainError("LogParams: log_a and log_b must be finite")
        object.__setattr__(self, "log_a", _unwrap(log_a))
        object.__setattr__(self, "log_b", _unwrap(log_b))

    @classmethod
    def from_ab(cls, a, b, dtype=np.float64):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if not (np.all(a > 0) and np.all(b > 0)):
            raise DomainError("LogParams.from_ab: a and b must be positive")
        return cls(fp.log(a).astype(dtype), fp.log(b).astype(dtype))

    @property
    def dtype(self):
        return np.asarray(self.log_a).dtype.type

    @property
    def a(self):
        return fp.exp(self.log_a)

    @property
    def b(self):
        return fp.exp(self.log_b)

    def astype(self, dtype):
        return LogParams(np.asarray(self.log_a, dtype=dtype), np.asarray(self.log_b, dtype=dtype))


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (np.all(np.asarray(self.alpha) > 0) and np.all(np.asarray(self.beta) > 0)):
            raise DomainError("BetaParams: alpha and beta must be positive")


@dataclass(frozen=True)
class GradPair:
    """Partials with respect to ``log a``, ``log b`` and optionally ``log x``."""

    d_log_a: np.ndarray
    d_log_b: np.ndarray
    d_log_x: Optional[np.ndarray] = None


@dataclass(frozen=True)
class UnitValue:
    """A value strictly inside ``(0, 1)``, stored as its logarithm."""

    log_value: np.ndarray

    def __post_init__(self):
        lv = _float_array(self.log_value)
        if not np.all(lv < 0) or not np.all(np.isfinite(lv)):
            raise DomainError("UnitValue: log_value must be finite and < 0 (value strictly inside (0, 1))")
        object.__setattr__(self, "log_value", _unwrap(lv))

    @classmethod
    def from_linear(cls, x, dtype=None):
        """Build from a linear value; exact 0 or 1 is rejected, never clamped."""
        x = np.asarray(x) if dtype is None else np.asarray(x, dtype=dtype)
        x = _float_array(x)
        if not (np.all(x > 0) and np.all(x < 1)):
            raise DomainError("UnitValue.from_linear: x must lie strictly inside (0, 1)")
        return cls(fp.log(x))

    @property
    def dtype(self):
        return np.asarray(self.log_value).dtype.type

    @property
    def value(self):
        return fp.exp(self.log_value)

    @property
    def log1m(self):
        """``log(1 - x)``, computed without leaving log space."""
        return _log1mexp(np.asarray(self.log_value))

    def __len__(self):
        return len(np.atleast_1d(self.log_value))


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _common(*arrays):
    """Cast to a common working dtype: float32 only if every input is float32."""
    arrays = [np.asarray(a) for a in arrays]
    dtype = np.float32 if all(a.dtype == np.float32 for a in arrays) else np.float64
    return dtype, [a.astype(dtype, copy=False) for a in arrays]


def _log1mexp(x):
    if x.dtype == np.float32:
        return np.asarray(scalar.log1mexp_f32(x))
    return np.asarray(scalar.log1mexp(x))


def _log1mexp_scaled(log_scale, v):
    """``log(1 - exp(exp(log_scale) * v))`` for ``v < 0``.

    When the product underflows to zero, falls back to the leading term
    ``log_scale + log(-v)`` instead of failing the ``x < 0`` precondition.
    """
    log_scale, v = np.broadcast_arrays(log_scale, v)
    y = fp.exp(log_scale) * v
    out = np.empty_like(y)
    ok = y < 0
    out[ok] = _log1mexp(y[ok])
    if not ok.all():
        out[~ok] = log_scale[~ok] + fp.log(-v[~ok])
    return out


def _interior(log_x):
    # true distance to 1 below the smallest subnormal: round into the interior
    tiny = np.finfo(log_x.dtype).smallest_subnormal
    return np.minimum(log_x, -tiny)


# ---------------------------------------------------------------------------
# log-pdf
# ---------------------------------------------------------------------------


def _pdf_terms(x, p):
    dtype, (lx, la, lb) = _common(x.log_value, p.log_a, p.log_b)
    a = fp.exp(la)
    b = fp.exp(lb)
    w = _log1mexp_scaled(la, lx)  # log(1 - x^a)
    return lx, la, lb, a, b, w


def log_pdf(x: UnitValue, p: LogParams):
    """``log f(x) = log a + log b + (a-1) log x + (b-1) log(1 - x^a)``."""
    lx, la, lb, a, b, w = _pdf_terms(x, p)
    return _unwrap(la + lb + (a - 1) * lx + (b - 1) * w)


def log_pdf_grads(x: UnitValue, p: LogParams) -> GradPair:
    """Gradients of :func:`log_pdf` with respect to ``log a``, ``log b``, ``log x``."""
    lx, la, lb, a, b, w = _pdf_terms(x, p)
    alx = a * lx
    ratio = fp.exp(alx - w)  # x^a / (1 - x^a)
    d_log_x = (a - 1) - (b - 1) * fp.exp(alx - w + la)
    d_log_a = 1 + alx * (1 - (b - 1) * ratio)
    d_log_b = 1 + b * w
    return GradPair(_unwrap(d_log_a), _unwrap(d_log_b), _unwrap(d_log_x))


# ---------------------------------------------------------------------------
# inverse CDF
# ---------------------------------------------------------------------------


def _icdf_terms(u, p):
    dtype, (lu, la, lb) = _common(u.log_value, p.log_a, p.log_b)
    inv_a = fp.exp(-la)
    s = lu * fp.exp(-lb)  # log(u^(1/b))
    w = _log1mexp_scaled(-lb, lu)  # log(1 - u^(1/b))
    return lu, la, lb, inv_a, s, w


def icdf(u: UnitValue, p: LogParams) -> UnitValue:
    """Inverse CDF ``(1 - u^(1/b))^(1/a)``, returned in log space.

    This is the reparameterization map used for sampling.  It sends
    ``u`` to the ``(1 - u)``-quantile, so ``cdf(icdf(u)) == 1 - u`` and
    ``sf(icdf(u)) == u``.
    """
    lu, la, lb, inv_a, s, w = _icdf_terms(u, p)
    return UnitValue(_interior(inv_a * w))


def icdf_grads(u: UnitValue, p: LogParams) -> GradPair:
    """Gradients of the linear-space inverse CDF w.r.t. ``log a`` and ``log b``.

    Each is one exponential of a log-space sum with the sign applied last,
    rather than a product of chain-rule factors.
    """
    lu, la, lb, inv_a, s, w = _icdf_terms(u, p)
    with np.errstate(divide="ignore"):
        log_neg_w = fp.log(-w)
        log_neg_lu = fp.log(-lu)
    d_log_a = fp.exp(-la + inv_a * w + log_neg_w)
    d_log_b = -fp.exp(-la - lb + s + (inv_a - 1) * w + log_neg_lu)
    return GradPair(_unwrap(d_log_a), _unwrap(d_log_b))


def icdf_log_grads(u: UnitValue, p: LogParams) -> GradPair:
    """Gradients of ``log icdf(u)``: the inverse-CDF gradients divided by the sample.

    Dividing in log space keeps the ratio finite even when the sample
    itself underflows in linear space.
    """
    lu, la, lb, inv_a, s, w = _icdf_terms(u, p)
    d_log_a = -inv_a * w
    d_log_b = inv_a * s * fp.exp(s - w)
    return GradPair(_unwrap(d_log_a), _unwrap(d_log_b))


def cdf(x: UnitValue, p: LogParams):
    """``F(x) = 1 - (1 - x^a)^b``, evaluated as ``-expm1(b log(1 - x^a))``."""
    lx, la, lb, a, b, w = _pdf_terms(x, p)
    return _unwrap(-fp.expm1(b * w))


def sf(x: UnitValue, p: LogParams):
    """Survival function ``(1 - x^a)^b``; the left inverse of :func:`icdf`."""
    lx, la, lb, a, b, w = _pdf_terms(x, p)
    return _unwrap(fp.exp(b * w))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def open_uniform(rng: np.random.Generator, size=None, dtype=np.float64):
    """Uniform draws on the open interval ``(0, 1)``.

    Exact zeros from the generator are redrawn; nothing is clipped or
    shifted.
    """
    u = np.asarray(rng.random(size, dtype=dtype))
    zero = u == 0
    while zero.any():
        u[zero] = rng.random(int(zero.sum()), dtype=dtype)
        zero = u == 0
    return _unwrap(u)


def sample(p: LogParams, rng: np.random.Generator, size=None) -> UnitValue:
    """Reparameterized draws ``icdf(u, p)`` with ``u`` uniform on ``(0, 1)``.

    ``size`` defaults to the broadcast shape of the parameters.  The base
    uniforms are drawn in the parameters' precision.
    """
    if size is None:
        size = np.broadcast_shapes(np.shape(p.log_a), np.shape(p.log_b))
    u = open_uniform(rng, size, dtype=p.dtype)
    return icdf(UnitValue(fp.log(u)), p)


# ---------------------------------------------------------------------------
# entropy, moments, KL
# ---------------------------------------------------------------------------


def _f64(p):
    return np.asarray(p.log_a, dtype=np.float64), np.asarray(p.log_b, dtype=np.float64)


def entropy(p: LogParams):
    """Differential entropy ``1 - 1/b + (1 - 1/a)(gamma + psi(b + 1)) - log a - log b``."""
    la, lb = _f64(p)
    b = np.exp(lb)
    harmonic = EULER_GAMMA + scalar.digamma(b + 1)
    return _unwrap(1 - np.exp(-lb) - np.expm1(-la) * harmonic - la - lb)


def entropy_grads(p: LogParams) -> GradPair:
    la, lb = _f64(p)
    b = np.exp(lb)
    harmonic = EULER_GAMMA + scalar.digamma(b + 1)
    d_log_a = np.exp(-la) * harmonic - 1
    d_log_b = np.exp(-lb) - np.expm1(-la) * b * scalar.trigamma(b + 1) - 1
    return GradPair(_unwrap(d_log_a), _unwrap(d_log_b))


def moment(n, p: LogParams):
    """Raw moment ``E[X^n] = b B(1 + n/a, b)``."""
    if not (float(n) == int(n) and n >= 1):
        raise DomainError("moment: n must be a positive integer")
    la, lb = _f64(p)
    return _unwrap(np.exp(lb + scalar.log_beta(1 + n * np.exp(-la), np.exp(lb))))


def _kl_series_terms(la, lb, terms):
    """Per-term ``B(m/a, b) / (m + ab)`` and their log-derivatives."""
    a, b = np.exp(la), np.exp(lb)
    ab = a * b
    psi_b = scalar.digamma(b)
    out = []
    for m in range(1, terms + 1):
        ma = m / a
        term = np.exp(scalar.log_beta(ma, b) - np.log(m + ab))
        psi_mab = scalar.digamma(ma + b)
        dla = (scalar.digamma(ma) - psi_mab) * (-ma) - ab / (m + ab)
        dlb = (psi_b - psi_mab) * b - ab / (m + ab)
        out.append((term, dla, dlb))
    return out


def _check_terms(terms):
    if int(terms) != terms or terms < 1:
        raise DomainError("kl_to_beta: terms must be a positive integer")
    return int(terms)


def kl_to_beta(q: LogParams, prior: BetaParams, terms: int = KL_DEFAULT_TERMS):
    """``KL(Kumaraswamy(a, b) || Beta(alpha, beta))`` with a truncated series.

    The ``E[log(1 - x)]`` series is cut after ``terms`` terms; each term
    is ``exp(log B(m/a, b) - log(m + ab))`` scaled by ``(beta - 1) b``.
    """
    terms = _check_terms(terms)
    la, lb = _f64(q)
    alpha = np.asarray(prior.alpha, dtype=np.float64)
    beta = np.asarray(prior.beta, dtype=np.float64)
    a, b = np.exp(la), np.exp(lb)
    series = sum(t for t, _, _ in _kl_series_terms(la, lb, terms))
    kl = (
        (a - alpha) / a * (-EULER_GAMMA - scalar.digamma(b) - 1 / b)
        + (la + lb)
        + scalar.log_beta(alpha, beta)
        - (b - 1) / b
        + (beta - 1) * b * series
    )
    return _unwrap(np.asarray(kl))


def kl_to_beta_grads(q: LogParams, prior: BetaParams, terms: int = KL_DEFAULT_TERMS) -> GradPair:
    """Gradients of :func:`kl_to_beta` (same truncation) w.r.t. ``log a``, ``log b``."""
    terms = _check_terms(terms)
    la, lb = _f64(q)
    alpha = np.asarray(prior.alpha, dtype=np.float64)
    beta = np.asarray(prior.beta, dtype=np.float64)
    a, b = np.exp(la), np.exp(lb)
    head = -EULER_GAMMA - scalar.digamma(b) - 1 / b
    d_head_lb = -b * scalar.trigamma(b) + 1 / b
    parts = _kl_series_terms(la, lb, terms)
    series = sum(t for t, _, _ in parts)
    series_la = sum(t * d for t, d, _ in parts)
    series_lb = sum(t * d for t, _, d in parts)
    d_log_a = alpha / a * head + 1 + (beta - 1) * b * series_la
    d_log_b = (1 - alpha / a) * d_head_lb + 1 - 1 / b + (beta - 1) * b * (series + series_lb)
    return GradPair(_unwrap(np.asarray(d_log_a)), _unwrap(np.asarray(d_log_b)))
