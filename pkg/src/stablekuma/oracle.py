"""Independent reference machinery used to check the stable implementation.

Nothing in here reuses the branch-split ``log1mexp`` or the closed forms it
is meant to check: the reference density is a single-formula double
precision evaluation, quadrature runs on SciPy's adaptive QUADPACK
routine, and gradients come from central differences.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, Tuple

import numpy as np
from scipy import integrate

from .kumaraswamy import GradPair, LogParams, UnitValue, sample
from .scalar import LN2

__all__ = [
    "OracleError",
    "GradCheckReport",
    "McEstimate",
    "fd_gradient",
    "grad_check",
    "series_log1mexp",
    "reference_log1mexp",
    "reference_log_pdf",
    "reference_log_quantile",
    "quadrature_expectation",
    "quadrature_moment",
    "mc_expectation",
]

log = logging.getLogger(__name__)

FD_REL_STEP = 1e-6


class OracleError(RuntimeError):
    """An oracle could not produce a trustworthy value."""


@dataclass
class GradCheckReport:
    """Per-component comparison of analytic and finite-difference gradients."""

    analytic: Dict[str, np.ndarray] = field(default_factory=dict)
    numeric: Dict[str, np.ndarray] = field(default_factory=dict)
    rel_error: Dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, name, analytic, numeric):
        analytic = np.asarray(analytic, dtype=np.float64)
        numeric = np.asarray(numeric, dtype=np.float64)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
        err = np.abs(analytic - numeric) / denom
        err = np.where(np.isfinite(err), err, np.inf)
        self.analytic[name] = analytic
        self.numeric[name] = numeric
        self.rel_error[name] = err

    def worst(self) -> Dict[str, float]:
        return {k: float(np.max(v)) for k, v in self.rel_error.items()}

    @property
    def worst_overall(self) -> float:
        return max(self.worst().values(), default=0.0)

    def passed(self, tol: float) -> bool:
        return self.worst_overall <= tol


@dataclass(frozen=True)
class McEstimate:
    mean: float
    standard_error: float
    n: int

    def within(self, value, n_se=3.0) -> bool:
        return abs(self.mean - value) <= n_se * self.standard_error


def _step(theta, rel_step):
    return rel_step * np.maximum(np.abs(theta), 1.0)


def _central(f1, theta, h):
    hi, lo = theta + h, theta - h
    # divide by the realized step so rounding of theta +/- h does not bias it
    return (np.asarray(f1(hi), dtype=np.float64) - np.asarray(f1(lo), dtype=np.float64)) / (hi - lo)


def _ridders(f1, theta, h0, shrink=1.4, levels=12):
    """Richardson-extrapolated central differences (Ridders' tableau).

    Returns the entry with the smallest internal error estimate, elementwise.
    Roundoff stays at ``eps |f| / h0`` instead of ``eps |f| / h``, which
    matters where ``|f|`` is large compared to its derivative.
    """
    theta = np.asarray(theta, dtype=np.float64)
    h = np.asarray(h0, dtype=np.float64) * np.ones_like(theta)
    prev = [_central(f1, theta, h)]
    best = prev[0]
    best_err = np.full(theta.shape, np.inf)
    fac = shrink * shrink
    for _ in range(1, levels):
        h = h / shrink
        row = [_central(f1, theta, h)]
        f = fac
        for j in range(1, len(prev) + 1):
            row.append((row[j - 1] * f - prev[j - 1]) / (f - 1))
            f *= fac
            with np.errstate(invalid="ignore"):
                err = np.maximum(np.abs(row[j] - row[j - 1]), np.abs(row[j] - prev[j - 1]))
            better = err < best_err
            best = np.where(better, row[j], best)
            best_err = np.where(better, err, best_err)
        with np.errstate(invalid="ignore"):
            diverging = np.abs(row[-1] - prev[-1]) >= 2 * best_err
        prev = row
        if np.all(diverging):
            break
    return best


def fd_gradient(f: Callable[[LogParams], np.ndarray], p: LogParams, rel_step: float = FD_REL_STEP, method: str = "central") -> GradPair:
    """Finite differences of ``f`` in ``log a`` and ``log b`` independently.

    ``f`` may return an array (vectorized over a grid).  ``method="central"``
    uses one central difference with step ``rel_step * max(|theta|, 1)``;
    ``method="ridders"`` extrapolates a sequence of central differences
    starting from ``0.1 * max(|theta|, 1)`` and ignores ``rel_step``.
    Non-finite stencil values are logged and propagate into the result.
    """
    la = np.asarray(p.log_a, dtype=np.float64)
    lb = np.asarray(p.log_b, dtype=np.float64)

    def along_a(x):
        v = np.asarray(f(LogParams(x, lb)), dtype=np.float64)
        if not np.all(np.isfinite(v)):
            log.warning("fd_gradient: non-finite value at a log_a stencil point")
        return v

    def along_b(x):
        v = np.asarray(f(LogParams(la, x)), dtype=np.float64)
        if not np.all(np.isfinite(v)):
            log.warning("fd_gradient: non-finite value at a log_b stencil point")
        return v

    if method == "central":
        return GradPair(_central(along_a, la, _step(la, rel_step)), _central(along_b, lb, _step(lb, rel_step)))
    if method == "ridders":
        return GradPair(_ridders(along_a, la, _step(la, 0.1)), _ridders(along_b, lb, _step(lb, 0.1)))
    raise ValueError(f"fd_gradient: unknown method {method!r}")


def fd_derivative(f: Callable[[np.ndarray], np.ndarray], theta, rel_step: float = FD_REL_STEP, method: str = "central"):
    """Finite difference in a log-value argument (``log x`` or ``log u``).

    The step is purely relative, ``rel_step * |theta|``, so the stencil
    never crosses zero even when ``theta`` is ``-1e-6``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if method == "central":
        return _central(f, theta, rel_step * np.abs(theta))
    if method == "ridders":
        return _ridders(f, theta, 0.1 * np.abs(theta))
    raise ValueError(f"fd_derivative: unknown method {method!r}")


def grad_check(components: Dict[str, Tuple[np.ndarray, np.ndarray]]) -> GradCheckReport:
    """Build a report from ``{name: (analytic, finite_difference)}``."""
    report = GradCheckReport()
    for name, (analytic, numeric) in components.items():
        report.add(name, analytic, numeric)
    return report


# ---------------------------------------------------------------------------
# reference evaluators (double precision, single formula)
# ---------------------------------------------------------------------------


def series_log1mexp(x, terms=30):
    """``log(1 - exp(x))`` for small ``|x|`` from ``(1 - e^x)/(-x) = sum x^k/(k+1)!``."""
    x = np.asarray(x, dtype=np.float64)
    acc = np.zeros_like(x)
    for k in reversed(range(terms)):
        acc = acc * x / (k + 2) + 1.0
    out = np.log(-x) + np.log(acc)
    return out[()] if out.ndim == 0 else out


def reference_log1mexp(x):
    """Double-precision ground truth for ``log(1 - exp(x))``, ``x < 0``.

    ``log1p(-exp(x))`` below ``-1``, ``log(-expm1(x))`` down to ``|x| = 1e-5``
    and the 30-term series above that.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    flat_x, flat_out = x.reshape(-1), out.reshape(-1)
    with np.errstate(divide="ignore"):
        far = flat_x < -1.0
        flat_out[far] = np.log1p(-np.exp(flat_x[far]))
        mid = (~far) & (flat_x <= -1e-5)
        flat_out[mid] = np.log(-np.expm1(flat_x[mid]))
        tiny = flat_x > -1e-5
        flat_out[tiny] = series_log1mexp(flat_x[tiny])
    return out[()] if out.ndim == 0 else out


def _ref_log1mexp(x):
    # scalar version of reference_log1mexp
    if x < -1.0:
        return math.log1p(-math.exp(x))
    if x <= -1e-5:
        return math.log(-math.expm1(x))
    return float(series_log1mexp(x))


def reference_log_pdf(log_x, a, b, log1m_x=None):
    """``log(a b x^(a-1) (1 - x^a)^(b-1))`` in double, single formula.

    ``log(1 - x^a)`` is ``log(-expm1(a log x))``; when ``a log x`` is too
    small to carry precision, ``log1m_x`` (``log(1 - x)``) supplies the
    leading term ``log a + log(1 - x)`` instead.
    """
    log_x = np.asarray(log_x, dtype=np.float64)
    y = a * log_x
    with np.errstate(divide="ignore", invalid="ignore"):
        log1m_xa = np.log(-np.expm1(y))
        if log1m_x is not None:
            log1m_xa = np.where(y > -1e-290, math.log(a) + np.asarray(log1m_x, dtype=np.float64), log1m_xa)
    return math.log(a) + math.log(b) + (a - 1) * log_x + (b - 1) * log1m_xa


def reference_log_quantile(log_sf, a, b):
    """``(log x, log(1 - x))`` at the point whose survival probability is ``exp(log_sf)``.

    From ``x = (1 - v)^(1/a)`` with ``v = (1 - F)^(1/b)``; parameterizing by
    the survival probability keeps upper-tail levels like ``1e-16`` exact.
    """
    lv = log_sf / b
    t = _ref_log1mexp(lv) / a
    if t < 0:
        s = _ref_log1mexp(t)
    else:
        s = lv - math.log(a)  # 1 - x ~ v / a once v underflows
        t = -math.ldexp(1.0, -1074)
    return t, s


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

_TAIL = 1e-16
_LOWER_BREAKS = (1e-12, 1e-8, 1e-5, 1e-3, 0.02, 0.1, 0.25, 0.5)


def _quad(fn, lo, hi, points, tol):
    points = sorted(set(p for p in points if lo < p < hi))
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(fn, lo, hi, points=points or None, epsabs=tol / 4, epsrel=1e-13, limit=500)
        except integrate.IntegrationWarning as exc:
            raise OracleError(f"quadrature did not converge: {exc}") from exc
    if not err <= tol / 2:
        raise OracleError(f"quadrature error estimate {err:g} exceeds tolerance {tol:g}")
    return val


def quadrature_expectation(g: Callable[[UnitValue], float], p: LogParams, tol: float = 1e-10, log_density=None):
    """Adaptive quadrature of ``E[g(X)] = int g(x) f(x) dx`` over ``(0, 1)``.

    The interval is split at ``x = 1/2``.  The lower half is integrated in
    ``t = log x`` and the upper half in ``s = log(1 - x)``, so mass piled
    against either endpoint is resolved in log coordinates.  Breakpoints
    sit at reference quantiles and the outermost ``1e-16`` of probability
    at each end is dropped.  ``log_density(log_x, log1m_x)`` defaults to
    :func:`reference_log_pdf`.
    """
    a = float(np.exp(p.log_a))
    b = float(np.exp(p.log_b))
    if log_density is None:
        def log_density(lx, l1mx):
            return reference_log_pdf(lx, a, b, l1mx)

    def left(t):
        return float(g(UnitValue(t))) * math.exp(float(log_density(t, _ref_log1mexp(t))) + t)

    def right(s):
        t = _ref_log1mexp(s)
        if not t < 0:
            t = -math.ldexp(1.0, -1074)
        return float(g(UnitValue(t))) * math.exp(float(log_density(t, s)) + s)

    levels = [math.log1p(-_TAIL)] + [math.log1p(-q) for q in _LOWER_BREAKS]
    levels += [math.log1p(-q) if q < 0.5 else math.log(1 - q) for q in (0.75, 0.9, 0.98, 0.999)]
    levels += [math.log(q) for q in (1e-5, 1e-8, 1e-12, _TAIL)]
    nodes = [reference_log_quantile(ls, a, b) for ls in levels]
    t_lo, s_hi_cap = nodes[0]
    t_hi_cap, s_lo = nodes[-1]
    half = -LN2

    total = 0.0
    t_hi = min(half, t_hi_cap)
    if t_lo < t_hi:
        total += _quad(left, t_lo, t_hi, [t for t, _ in nodes], tol)
    s_hi = min(half, s_hi_cap)
    if s_lo < s_hi:
        total += _quad(right, s_lo, s_hi, [s for _, s in nodes], tol)
    return total


def quadrature_moment(n: int, p: LogParams, tol: float = 1e-11) -> float:
    """``E[X^n]`` by quadrature of ``x^n f(x)`` around that integrand's own peak.

    For small ``a`` and large ``b`` the moment is carried by draws far in
    the upper tail, beyond the ``1e-16`` that :func:`quadrature_expectation`
    drops.  With ``b > 1``, ``phi(t) = log(x^(n+1) f(x))`` at ``t = log x``
    is concave with its maximum at ``x^a = (n + a) / (n + ab)``;
    ``exp(phi - phi_max)`` is integrated in ``t`` with breakpoints at
    multiples of the local width and rescaled afterwards.  ``tol`` is
    relative.  For ``b <= 1`` the integrand piles up at ``x = 1`` like the
    density itself, and :func:`quadrature_expectation` is used.
    """
    if int(n) != n or n < 1:
        raise ValueError("quadrature_moment: n must be a positive integer")
    a = float(np.exp(p.log_a))
    b = float(np.exp(p.log_b))
    if b <= 1:
        return quadrature_expectation(lambda x: math.exp(n * float(x.log_value)), p, tol=tol)

    def phi(t):
        return (n + 1) * t + float(reference_log_pdf(t, a, b, _ref_log1mexp(t)))

    y = (n + a) / (n + a * b)
    t_star = math.log(y) / a
    sigma = (1 - y) / (a * math.sqrt((b - 1) * y))
    left_rate = n + a  # phi grows like (n + a) t far below the peak
    lo = t_star - 60 / left_rate - 60 * sigma
    phi_max = phi(t_star)
    breaks = [t_star + k * sigma for k in (-30, -10, -3, -1, 0, 1, 3, 10)]
    breaks += [t_star - k / left_rate for k in (1, 5, 20)]
    width = sigma + 1 / left_rate

    def fn(t):
        return math.exp(phi(t) - phi_max) if t < 0 else 0.0

    scaled = _quad(fn, lo, 0.0, breaks, tol * width)
    return math.exp(phi_max) * scaled


def check_normalization(p: LogParams, tol: float = 1e-8):
    """Raise :class:`OracleError` unless the reference density integrates to one."""
    total = quadrature_expectation(lambda x: 1.0, p, tol=tol)
    if abs(total - 1.0) > tol:
        raise OracleError(f"reference density integrates to {total!r} at {p}")
    return total


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


def mc_expectation(g: Callable[[UnitValue], np.ndarray], p: LogParams, n: int, rng: np.random.Generator, chunk: int = 1 << 20) -> McEstimate:
    """Sample mean and standard error of ``g`` over ``n`` stable-sampler draws."""
    if n < 2:
        raise ValueError("mc_expectation: n must be at least 2")
    total = 0.0
    total_sq = 0.0
    shift = None
    done = 0
    while done < n:
        m = min(chunk, n - done)
        vals = np.asarray(g(sample(p, rng, size=m)), dtype=np.float64)
        if shift is None:
            shift = float(vals[0])  # shifted sums keep the variance well conditioned
        d = vals - shift
        total += float(d.sum())
        total_sq += float((d * d).sum())
        done += m
    mean_d = total / n
    var = (total_sq - n * mean_d * mean_d) / (n - 1)
    return McEstimate(mean=shift + mean_d, standard_error=math.sqrt(max(var, 0.0) / n), n=n)
