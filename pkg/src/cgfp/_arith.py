"""Scalar helpers that work on both float64 and gmpy2 mpfr values."""

import math

import gmpy2
import numpy as np

MPFR = type(gmpy2.mpfr(0))


def is_hp(x):
    """True if ``x`` (scalar or array) carries mpfr values."""
    if isinstance(x, np.ndarray):
        return x.dtype == object
    return isinstance(x, MPFR)


def sqrt(x):
    if isinstance(x, MPFR):
        return gmpy2.sqrt(x)
    return math.sqrt(x)


def dot(x, y):
    return np.dot(x, y)


def norm(x):
    return sqrt(np.dot(x, x))


def isfinite(x):
    if isinstance(x, MPFR):
        return gmpy2.is_finite(x)
    return math.isfinite(x)


def to_float(x):
    """Convert scalars or arrays of mpfr to float64."""
    if isinstance(x, np.ndarray):
        if x.dtype == object:
            return np.array([float(v) for v in x.ravel()]).reshape(x.shape)
        return x.astype(float)
    return float(x)
