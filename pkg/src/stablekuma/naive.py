"""Unguarded Kumaraswamy formulas, as written in common autodiff libraries.

Parameters are linear-space ``(a, b)``, ``log(1 - exp(.))`` is taken
literally, and gradients are products of chain-rule factors.  Nothing
here clamps, guards or adds epsilons: producing ``-inf``, ``0`` or ``nan``
in the pathological regimes is the purpose of the module.  Every function
takes a ``dtype`` so the same formula can be run in float32 or float64.
"""

from dataclasses import dataclass

import numpy as np

from . import _fpmath as fp
from .kumaraswamy import GradPair

__all__ = ["NaiveParams", "naive_log_pdf", "naive_icdf", "naive_icdf_grad_chainrule"]


@dataclass(frozen=True)
class NaiveParams:
    a: float
    b: float

    def __post_init__(self):
        if not (np.all(np.asarray(self.a) > 0) and np.all(np.asarray(self.b) > 0)):
            raise ValueError("NaiveParams: a and b must be positive")


def _cast(dtype, *xs):
    return [np.asarray(x, dtype=dtype) for x in xs]


def _out(x):
    return x[()] if x.ndim == 0 else x


def naive_log_pdf(x, p: NaiveParams, dtype=np.float64):
    """``log a + log b + (a-1) log x + (b-1) log(1 - exp(a log x))``."""
    x, a, b = _cast(dtype, x, p.a, p.b)
    with np.errstate(all="ignore"):
        out = fp.log(a) + fp.log(b) + (a - 1) * fp.log(x) + (b - 1) * fp.log(1 - fp.exp(a * fp.log(x)))
    return _out(out)


def naive_icdf(u, p: NaiveParams, dtype=np.float64):
    """``(1 - u^(1/b))^(1/a)`` evaluated literally; returns exactly 0 once ``u^(1/b)`` rounds to 1."""
    u, a, b = _cast(dtype, u, p.a, p.b)
    one = dtype(1)
    with np.errstate(all="ignore"):
        out = fp.power(one - fp.power(u, one / b), one / a)
    return _out(out)


def naive_icdf_grad_chainrule(u, p: NaiveParams, dtype=np.float64) -> GradPair:
    """Inverse-CDF gradients as a left-to-right product of chain-rule factors.

    With ``s = log(u)/b`` and ``L = log(1 - exp(s))``::

        d/dlog b = (1/a) * exp(L/a) * -(1 - exp(s))^-1 * exp(s) * log u * (-1/b^2) * b
        d/dlog a = exp(L/a) * L * (-1/a^2) * a

    Intermediate infinities and zeros propagate under IEEE rules.
    """
    u, a, b = _cast(dtype, u, p.a, p.b)
    one = dtype(1)
    with np.errstate(all="ignore"):
        inv_a = one / a
        inv_b = one / b
        log_u = fp.log(u)
        s = inv_b * log_u
        e_s = fp.exp(s)
        L = fp.log(one - e_s)
        x = fp.exp(inv_a * L)

        d_log_b = inv_a * x
        d_log_b = d_log_b * -fp.power(one - e_s, -one)
        d_log_b = d_log_b * e_s
        d_log_b = d_log_b * log_u
        d_log_b = d_log_b * (-one / (b * b))
        d_log_b = d_log_b * b

        d_log_a = x * L
        d_log_a = d_log_a * (-one / (a * a))
        d_log_a = d_log_a * a
    return GradPair(_out(d_log_a), _out(d_log_b))
