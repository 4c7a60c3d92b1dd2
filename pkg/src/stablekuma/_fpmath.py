"""Elementary functions with IEEE semantics in the argument's precision.

NumPy's float32 ``exp``/``log``/``power`` kernels are not correctly
rounded, and near 1 that shifts the exact thresholds at which naive
formulas collapse (the ``u^(1/b) -> 1`` point mass moves from 0.39 to
0.32).  For float32 arguments each function here evaluates in float64 and
rounds once, which yields the correctly rounded single-precision result
that an accurate libm would return.  Basic arithmetic on float32 arrays is
already exactly rounded by NumPy and needs no help.
"""

import numpy as np


def _unary(fn):
    def op(x):
        x = np.asarray(x)
        if x.dtype == np.float32:
            return fn(x.astype(np.float64)).astype(np.float32)
        return fn(x)

    op.__name__ = fn.__name__
    return op


exp = _unary(np.exp)
log = _unary(np.log)
expm1 = _unary(np.expm1)
log1p = _unary(np.log1p)


def power(x, y):
    x = np.asarray(x)
    y = np.asarray(y)
    if x.dtype == np.float32 and y.dtype == np.float32:
        return np.power(x.astype(np.float64), y.astype(np.float64)).astype(np.float32)
    return np.power(x, y)
