"""Shared numeric oracles for the test suite.

Everything here is deliberately independent of the library's own gradient
machinery: finite differences, dense Jacobians, and quadrature are the
reference implementations the analytic paths are checked against.
"""

import numpy as np


def central_diff_grad(f, x, h=1e-6):
    """Central finite-difference gradient of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (f(xp) - f(xm)) / (2.0 * h)
    return grad


def dense_jacobian(f, x, h=1e-6):
    """Dense Jacobian of a vector function of a vector by central differences."""
    x = np.asarray(x, dtype=np.float64)
    f0 = np.asarray(f(x))
    jac = np.zeros((f0.size, x.size))
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        jac[:, i] = (np.asarray(f(xp)) - np.asarray(f(xm))) / (2.0 * h)
    return jac


def max_rel_err(approx, exact, floor=1e-8):
    """Worst-case elementwise relative error with an absolute floor."""
    approx = np.asarray(approx)
    exact = np.asarray(exact)
    return float(np.max(np.abs(approx - exact) / np.maximum(np.abs(exact), floor)))
