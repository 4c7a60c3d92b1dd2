"""Naive-versus-stable comparisons in single or double precision."""

from dataclasses import dataclass

import numpy as np

from . import _fpmath as fp
from .kumaraswamy import LogParams, UnitValue, icdf, log_pdf, open_uniform
from .naive import NaiveParams, naive_icdf, naive_log_pdf
from .oracle import reference_log1mexp
from .scalar import log1mexp, log1mexp_f32

__all__ = [
    "PRECISIONS",
    "Log1mexpSweep",
    "log1mexp_sweep",
    "naive_log1mexp",
    "PointMass",
    "point_mass",
    "point_mass_oracle",
    "icdf_logpdf_rows",
]

PRECISIONS = {"single": np.float32, "double": np.float64}
# log2 of the half-ulp just below 1
_HALF_ULP_LOG2 = {np.float32: -25, np.float64: -54}


def _dtype(precision):
    try:
        return PRECISIONS[precision]
    except KeyError:
        raise ValueError(f"precision must be one of {sorted(PRECISIONS)}, got {precision!r}") from None


def naive_log1mexp(x, dtype):
    """``log(1 - exp(x))`` taken literally in ``dtype``."""
    x = np.asarray(x, dtype=dtype)
    one = dtype(1)
    with np.errstate(divide="ignore"):
        return fp.log(one - fp.exp(x))


@dataclass
class Log1mexpSweep:
    log2_abs_x: np.ndarray
    x: np.ndarray
    oracle: np.ndarray
    stable: np.ndarray
    naive: np.ndarray

    @property
    def stable_rel_err(self):
        return np.abs(self.stable.astype(np.float64) - self.oracle) / np.abs(self.oracle)

    @property
    def naive_rel_err(self):
        with np.errstate(invalid="ignore"):
            return np.abs(self.naive.astype(np.float64) - self.oracle) / np.abs(self.oracle)


def log1mexp_sweep(n=10**6, precision="single", log2_min=-30.0, log2_max=None) -> Log1mexpSweep:
    """Evaluate stable and naive ``log1mexp`` on ``n`` log-spaced ``x < 0``.

    ``|x|`` runs from ``2**log2_min`` up to ``2**log2_max``, by default
    ``30 log 2``.  Points are rounded to the working precision and the
    oracle evaluates the rounded points in double.
    """
    dtype = _dtype(precision)
    if log2_max is None:
        log2_max = np.log2(30 * np.log(2))
    k = np.linspace(log2_min, log2_max, n)
    x = (-np.exp2(k)).astype(dtype)
    x = x[x < 0]
    oracle = reference_log1mexp(x.astype(np.float64))
    stable = np.asarray(log1mexp_f32(x) if dtype == np.float32 else log1mexp(x))
    naive = naive_log1mexp(x, dtype)
    return Log1mexpSweep(np.log2(-x.astype(np.float64)), x, oracle, stable, naive)


@dataclass
class PointMass:
    log2_b: float
    a: float
    n_draws: int
    naive_zero_fraction: float
    stable_zero_fraction: float
    oracle_fraction: float


def point_mass_oracle(log2_b, precision="single"):
    """Probability that ``u^(1/b)`` rounds to exactly 1.

    That happens once ``|log u| / b`` is below the half-ulp under 1,
    ``2**-25`` in single and ``2**-54`` in double, so the fraction is
    ``1 - exp(-b * half_ulp)``.
    """
    h = _HALF_ULP_LOG2[_dtype(precision)]
    return float(-np.expm1(-np.exp2(log2_b + h)))


def point_mass(log2_b=24.0, a=1.0, n=10**6, precision="single", rng=None) -> PointMass:
    """Fraction of ``n`` uniform draws mapped to exactly 0 by each inverse CDF.

    Both samplers see the same uniforms, drawn in the working precision.
    For the stable sampler the count is of draws whose linear value
    ``exp(log x)`` is exactly 0 in the working precision.
    """
    dtype = _dtype(precision)
    rng = np.random.default_rng(0) if rng is None else rng
    u = np.asarray(open_uniform(rng, n, dtype=dtype))
    b = float(np.exp2(log2_b))
    naive = naive_icdf(u, NaiveParams(a, b), dtype=dtype)
    p = LogParams(np.asarray(np.log(a), dtype=dtype), np.asarray(log2_b * np.log(2.0), dtype=dtype))
    x = icdf(UnitValue(fp.log(u)), p)
    return PointMass(
        float(log2_b), float(a), int(n),
        float(np.mean(naive == 0)),
        float(np.mean(np.asarray(x.value) == 0)),
        point_mass_oracle(log2_b, precision),
    )


def icdf_logpdf_rows(a_values, log2_b=24.0, n_u=201, precision="single"):
    """Rows for the naive/stable inverse-CDF and log-density table.

    For each ``a`` and each ``u`` on a log-spaced grid in ``(0, 1)``: the
    naive and stable inverse CDF, and the naive and stable log density at
    the stable sample.
    """
    dtype = _dtype(precision)
    b = float(np.exp2(log2_b))
    u = np.concatenate([np.logspace(-6, np.log10(0.5), n_u // 2), 1 - np.logspace(np.log10(0.5), -6, n_u - n_u // 2)])
    u = np.unique(u.astype(dtype))
    u = u[(u > 0) & (u < 1)]
    rows = []
    for a in a_values:
        p = LogParams(np.asarray(np.log(a), dtype=dtype), np.asarray(log2_b * np.log(2.0), dtype=dtype))
        x = icdf(UnitValue(fp.log(u)), p)
        naive_x = naive_icdf(u, NaiveParams(a, b), dtype=dtype)
        with np.errstate(all="ignore"):
            naive_lp = naive_log_pdf(x.value, NaiveParams(a, b), dtype=dtype)
        stable_lp = log_pdf(x, p)
        for i in range(len(u)):
            rows.append((float(a), float(log2_b), float(u[i]), float(naive_x[i]), float(x.value[i]),
                         float(x.log_value[i]), float(naive_lp[i]), float(stable_lp[i])))
    return rows
