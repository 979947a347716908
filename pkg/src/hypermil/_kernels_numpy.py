"""Pure-numpy kernel set.

Mirrors the function-for-function API of the compiled core in ``_core.pyx``;
``hypermil.backend`` picks one of the two modules at import time. All kernels
take C-contiguous float64 arrays and return fresh arrays.
"""

import numpy as np

NAME = "python"


def has_nan(a):
    return bool(np.isnan(a).any())


# unary

def exp(a):
    return np.exp(a)


def log(a):
    return np.log(a)


def sqrt(a):
    return np.sqrt(a)


def tanh(a):
    return np.tanh(a)


def sinh(a):
    return np.sinh(a)


def cosh(a):
    return np.cosh(a)


def acos(a):
    return np.arccos(a)


def asin(a):
    return np.arcsin(a)


def acosh(a):
    return np.arccosh(a)


def neg(a):
    return np.negative(a)


# binary, same shape

def add(a, b):
    return np.add(a, b)


def sub(a, b):
    return np.subtract(a, b)


def mul(a, b):
    return np.multiply(a, b)


def div(a, b):
    return np.divide(a, b)


def maximum(a, b):
    return np.maximum(a, b)


# array (+) scalar

def adds(a, s):
    return a + s


def subs(a, s):
    return a - s


def rsubs(a, s):
    return s - a


def muls(a, s):
    return a * s


def divs(a, s):
    return a / s


def rdivs(a, s):
    return s / a


def maxs(a, s):
    return np.maximum(a, s)


def clip(a, lo, hi):
    return np.clip(a, lo, hi)
