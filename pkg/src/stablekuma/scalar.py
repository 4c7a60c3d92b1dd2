"""Precision-safe scalar building blocks.

Every function accepts a Python scalar or an array and returns a NumPy
scalar or array of the same shape.  Precision is chosen by entry point:
``log1mexp`` works in float64, ``log1mexp_f32`` works in float32.  The
float32 ``log1p``/``expm1``/``log1mexp`` variants compute natively in
single precision (every operation rounded to float32), because
reproducing single-precision behaviour is the point of those
diagnostics.  The gamma-family float32 variants compute in double and
round once.
"""


import numpy as np

from . import _fpmath as fp

__all__ = [
    "DomainError",
    "EULER_GAMMA",
    "LN2",
    "log1p",
    "log1p_f32",
    "expm1",
    "expm1_f32",
    "log1mexp",
    "log1mexp_f32",
    "digamma",
    "digamma_f32",
    "trigamma",
    "trigamma_f32",
    "lgamma",
    "lgamma_f32",
    "log_beta",
    "log_beta_f32",
]

EULER_GAMMA = 0.57721566490153286060651209008240243
LN2 = 0.69314718055994530941723212145817657
_HALF_LOG_2PI = 0.91893853320467274178032973640561764

# B_2, B_4, ..., B_20
_BERNOULLI = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
)
_DIGAMMA_COEFS = tuple(b / (2 * (k + 1)) for k, b in enumerate(_BERNOULLI))
_ASYMPTOTIC_THRESHOLD = 6.0

# Lanczos approximation, g = 7, n = 9.
_LANCZOS_G = 7.0
_LANCZOS_COEFS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)

# Stirling remainder lgamma(x) - [(x - 1/2) log x - x + log sqrt(2 pi)],
# coefficients B_{2k} / (2k (2k - 1)).
_STIRLING_COEFS = tuple(b / ((2 * k + 2) * (2 * k + 1)) for k, b in enumerate(_BERNOULLI[:7]))


class DomainError(ValueError):
    """An argument lies outside the domain of the requested function."""


def _wrap(out, like):
    return out[()] if np.ndim(like) == 0 else out


def _require(ok, name, condition):
    if not np.all(ok):
        raise DomainError(f"{name}: argument must satisfy {condition}")


# ---------------------------------------------------------------------------
# log1p / expm1
# ---------------------------------------------------------------------------


def _log1p(x, dtype):
    x = np.asarray(x, dtype=dtype)
    _require(x > -1, "log1p", "x > -1")
    return _wrap(fp.log1p(x), x)


def _expm1(x, dtype):
    x = np.asarray(x, dtype=dtype)
    with np.errstate(over="ignore"):
        return _wrap(fp.expm1(x), x)


def log1p(x):
    """``log(1 + x)`` in double precision, accurate for ``|x| << 1``."""
    return _log1p(x, np.float64)


def log1p_f32(x):
    return _log1p(x, np.float32)


def expm1(x):
    """``exp(x) - 1`` in double precision, accurate for ``|x| << 1``."""
    return _expm1(x, np.float64)


def expm1_f32(x):
    return _expm1(x, np.float32)


# ---------------------------------------------------------------------------
# log1mexp
# ---------------------------------------------------------------------------


def _log1mexp(x, dtype):
    x = np.asarray(x, dtype=dtype)
    _require(x < 0, "log1mexp", "x < 0")
    near_zero = x >= -dtype(LN2)
    out = np.empty_like(x)
    out[near_zero] = fp.log(-fp.expm1(x[near_zero]))
    out[~near_zero] = fp.log1p(-fp.exp(x[~near_zero]))
    return _wrap(out, x)


def log1mexp(x):
    """Compute ``log(1 - exp(x))`` for ``x < 0`` in double precision.

    Uses ``log(-expm1(x))`` on ``[-log 2, 0)`` and ``log1p(-exp(x))``
    below, each branch being accurate where the other loses bits.
    """
    return _log1mexp(x, np.float64)


def log1mexp_f32(x):
    """Single-precision :func:`log1mexp`; arithmetic stays in float32."""
    return _log1mexp(x, np.float32)


# ---------------------------------------------------------------------------
# digamma / trigamma
# ---------------------------------------------------------------------------


def _shift_up(x):
    # returns the shifted argument and the 1/x terms peeled off on the way
    x = x.copy()
    inv_terms = []
    for _ in range(int(_ASYMPTOTIC_THRESHOLD)):
        small = x < _ASYMPTOTIC_THRESHOLD
        if not small.any():
            break
        inv_terms.append(np.where(small, 1.0 / np.where(small, x, 1.0), 0.0))
        x = np.where(small, x + 1.0, x)
    return x, inv_terms


def _digamma64(x):
    x, inv_terms = _shift_up(x)
    inv = 1.0 / x
    inv2 = inv * inv
    series = np.zeros_like(x)
    for c in reversed(_DIGAMMA_COEFS):
        series = (series + c) * inv2
    out = np.log(x) - 0.5 * inv - series
    for t in inv_terms:
        out -= t
    return out


def _trigamma64(x):
    x, inv_terms = _shift_up(x)
    inv = 1.0 / x
    inv2 = inv * inv
    series = np.zeros_like(x)
    for b in reversed(_BERNOULLI):
        series = (series + b) * inv2
    out = inv + 0.5 * inv2 + series * inv
    for t in inv_terms:
        out += t * t
    return out


def digamma(x):
    """Digamma function for ``x > 0``.

    Arguments below 6 are shifted up with ``psi(x) = psi(x + 1) - 1/x``,
    then the asymptotic expansion in Bernoulli numbers is applied.
    """
    x = np.asarray(x, dtype=np.float64)
    _require(x > 0, "digamma", "x > 0")
    return _wrap(_digamma64(x), x)


def digamma_f32(x):
    x = np.asarray(x, dtype=np.float64)
    _require(x > 0, "digamma", "x > 0")
    return _wrap(_digamma64(x).astype(np.float32), x)


def trigamma(x):
    """Trigamma function (derivative of digamma) for ``x > 0``."""
    x = np.asarray(x, dtype=np.float64)
    _require(x > 0, "trigamma", "x > 0")
    return _wrap(_trigamma64(x), x)


def trigamma_f32(x):
    x = np.asarray(x, dtype=np.float64)
    _require(x > 0, "trigamma", "x > 0")
    return _wrap(_trigamma64(x).astype(np.float32), x)


# ---------------------------------------------------------------------------
# lgamma / log_beta
# ---------------------------------------------------------------------------


def _lanczos_lgamma(x):
    # valid for x >= 0.5
    z = x - 1.0
    acc = np.full_like(z, _LANCZOS_COEFS[0])
    for i, c in enumerate(_LANCZOS_COEFS[1:], start=1):
        acc += c / (z + i)
    t = z + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (z + 0.5) * np.log(t) - t + np.log(acc)


def _lgamma64(x):
    out = np.empty_like(x)
    low = x < 0.5
    xl = x[low]
    # reflection; sin(pi x) > 0 on (0, 1/2)
    out[low] = np.log(np.pi / np.sin(np.pi * xl)) - _lanczos_lgamma(1.0 - xl)
    out[~low] = _lanczos_lgamma(x[~low])
    out[(x == 1.0) | (x == 2.0)] = 0.0
    return out


def _stirling_remainder(x):
    # accurate to ~1e-16 for x >= 10
    inv2 = 1.0 / (x * x)
    acc = np.zeros_like(x)
    for c in reversed(_STIRLING_COEFS):
        acc = acc * inv2 + c
    return acc / x


def _log_beta64(p, q):
    p, q = np.broadcast_arrays(p, q)
    lo = np.minimum(p, q)
    hi = np.maximum(p, q)
    out = np.empty(lo.shape, dtype=np.float64)

    both_big = lo >= 10.0
    one_big = (~both_big) & (hi >= 10.0)
    small = ~(both_big | one_big)

    a, b = lo[both_big], hi[both_big]
    s = a + b
    corr = _stirling_remainder(a) + _stirling_remainder(b) - _stirling_remainder(s)
    out[both_big] = (
        -0.5 * np.log(b) + _HALF_LOG_2PI + corr
        + (a - 0.5) * np.log(a / s) + b * np.log1p(-a / s)
    )

    a, b = lo[one_big], hi[one_big]
    s = a + b
    corr = _stirling_remainder(b) - _stirling_remainder(s)
    out[one_big] = _lgamma64(a) + corr + a - a * np.log(s) + (b - 0.5) * np.log1p(-a / s)

    a, b = lo[small], hi[small]
    out[small] = _lgamma64(a) + _lgamma64(b) - _lgamma64(a + b)
    return out


def lgamma(x):
    """``log Gamma(x)`` for ``x > 0`` via the Lanczos approximation (g=7, n=9)."""
    x = np.asarray(x, dtype=np.float64)
    _require(x > 0, "lgamma", "x > 0")
    return _wrap(_lgamma64(np.atleast_1d(x)).reshape(x.shape), x)


def lgamma_f32(x):
    return np.float32(lgamma(x)) if np.ndim(x) == 0 else lgamma(x).astype(np.float32)


def log_beta(p, q):
    """``log B(p, q)`` for ``p, q > 0``.

    Small arguments go through ``lgamma``; when either argument is at least
    10 the large lgamma values are not subtracted directly, instead the
    Stirling remainders are differenced (the cancellation would otherwise
    cost ~``eps * lgamma(q)`` absolute error).
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    _require((p > 0) & (q > 0), "log_beta", "p > 0 and q > 0")
    out = _log_beta64(np.atleast_1d(p), np.atleast_1d(q))
    shape = np.broadcast_shapes(p.shape, q.shape)
    out = out.reshape(shape)
    return out[()] if shape == () else out


def log_beta_f32(p, q):
    out = log_beta(p, q)
    return np.float32(out) if np.ndim(out) == 0 else out.astype(np.float32)

