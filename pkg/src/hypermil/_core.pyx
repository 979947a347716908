# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel core.

Same API as ``_kernels_numpy``; elementwise loops over flat float64 buffers.
The arrays handled here are small (tens to a few thousand elements), where
per-call overhead matters more than SIMD width, so inputs are normalized to
C-contiguous float64 once and walked through raw pointers.
"""

from libc.math cimport (exp as c_exp, log as c_log, sqrt as c_sqrt,
                        tanh as c_tanh, sinh as c_sinh, cosh as c_cosh,
                        acos as c_acos, asin as c_asin, acosh as c_acosh)

cimport numpy as cnp
import numpy as np

cnp.import_array()

NAME = "compiled"


cdef inline cnp.ndarray _c64(object a):
    # non-contiguous views (transposes, column slices) are copied into
    # logical C order before flat iteration
    return cnp.PyArray_GETCONTIGUOUS(<cnp.ndarray> np.asarray(a, dtype=np.float64))


def has_nan(a):
    cdef cnp.ndarray arr = _c64(a)
    cdef double* x = <double*> cnp.PyArray_DATA(arr)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(arr)
    for i in range(n):
        if x[i] != x[i]:
            return True
    return False


cdef inline tuple _unary_setup(object a):
    cdef cnp.ndarray arr = _c64(a)
    cdef cnp.ndarray out = cnp.PyArray_EMPTY(
        cnp.PyArray_NDIM(arr), cnp.PyArray_DIMS(arr), cnp.NPY_FLOAT64, 0)
    return arr, out


# unary

def exp(a):
    arr, out = _unary_setup(a)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = c_exp(x[i])
    return out


def log(a):
    arr, out = _unary_setup(a)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = c_log(x[i])
    return out


def sqrt(a):
    arr, out = _unary_setup(a)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = c_sqrt(x[i])
    return out


def tanh(a):
    arr, out = _unary_setup(a)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = c_tanh(x[i])
    return out


def sinh(a):
    arr, out = _unary_setup(a)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = c_sinh(x[i])
    return out


def cosh(a):
    arr, out = _unary_setup(a)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = c_cosh(x[i])
    return out


def acos(a):
    arr, out = _unary_setup(a)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = c_acos(x[i])
    return out


def asin(a):
    arr, out = _unary_setup(a)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = c_asin(x[i])
    return out


def acosh(a):
    arr, out = _unary_setup(a)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = c_acosh(x[i])
    return out


def neg(a):
    arr, out = _unary_setup(a)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = -x[i]
    return out


# binary, same shape

def add(a, b):
    arr, out = _unary_setup(a)
    cdef cnp.ndarray brr = _c64(b)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* z = <double*> cnp.PyArray_DATA(brr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = x[i] + z[i]
    return out


def sub(a, b):
    arr, out = _unary_setup(a)
    cdef cnp.ndarray brr = _c64(b)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* z = <double*> cnp.PyArray_DATA(brr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = x[i] - z[i]
    return out


def mul(a, b):
    arr, out = _unary_setup(a)
    cdef cnp.ndarray brr = _c64(b)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* z = <double*> cnp.PyArray_DATA(brr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = x[i] * z[i]
    return out


def div(a, b):
    arr, out = _unary_setup(a)
    cdef cnp.ndarray brr = _c64(b)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* z = <double*> cnp.PyArray_DATA(brr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = x[i] / z[i]
    return out


def maximum(a, b):
    arr, out = _unary_setup(a)
    cdef cnp.ndarray brr = _c64(b)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* z = <double*> cnp.PyArray_DATA(brr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = x[i] if x[i] >= z[i] else z[i]
    return out


# array (+) scalar

def adds(a, double s):
    arr, out = _unary_setup(a)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = x[i] + s
    return out


def subs(a, double s):
    arr, out = _unary_setup(a)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = x[i] - s
    return out


def rsubs(a, double s):
    arr, out = _unary_setup(a)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = s - x[i]
    return out


def muls(a, double s):
    arr, out = _unary_setup(a)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = x[i] * s
    return out


def divs(a, double s):
    arr, out = _unary_setup(a)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = x[i] / s
    return out


def rdivs(a, double s):
    arr, out = _unary_setup(a)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = s / x[i]
    return out


def maxs(a, double s):
    arr, out = _unary_setup(a)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    for i in range(n):
        y[i] = x[i] if x[i] >= s else s
    return out


def clip(a, double lo, double hi):
    arr, out = _unary_setup(a)
    cdef double* x = <double*> cnp.PyArray_DATA(<cnp.ndarray> arr)
    cdef double* y = <double*> cnp.PyArray_DATA(<cnp.ndarray> out)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(<cnp.ndarray> arr)
    cdef double v
    for i in range(n):
        v = x[i]
        if v < lo:
            v = lo
        elif v > hi:
            v = hi
        y[i] = v
    return out
