"""Independent reference computations used by the tests.

Nothing here imports the package under test.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np


def ml_series_mp(r: float, x: float, terms: int = 64, dps: int = 50) -> float:
    """Brute-force partial sum of ``sum_n (x Gamma(r))^n / Gamma(n r + 1)`` in high precision."""
    with mpmath.workdps(dps):
        z = mpmath.mpf(x) * mpmath.gamma(mpmath.mpf(r))
        total = mpmath.mpf(0)
        for n in range(terms):
            total += z**n / mpmath.gamma(n * mpmath.mpf(r) + 1)
        return float(total)


def ml_half_closed_form(x: float) -> float:
    """For r = 1/2 the series is ``E_{1/2}(x sqrt(pi)) = exp(z^2) erfc(-z)`` with ``z = x sqrt(pi)``."""
    with mpmath.workdps(50):
        z = mpmath.mpf(x) * mpmath.sqrt(mpmath.pi)
        return float(mpmath.exp(z * z) * mpmath.erfc(-z))


def rk4(rhs, x0, T: float, steps: int):
    """Classical fourth-order Runge-Kutta on a uniform grid; returns ``(t, X)``."""
    h = T / steps
    x = np.array(x0, dtype=float)
    out = np.empty((steps + 1, x.size))
    out[0] = x
    for i in range(steps):
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * h * k1)
        k3 = rhs(x + 0.5 * h * k2)
        k4 = rhs(x + h * k3)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = x
    return np.linspace(0.0, T, steps + 1), out


def interp_rows(t_ref, X_ref, t):
    """Componentwise linear interpolation of a reference solution."""
    return np.stack([np.interp(t, t_ref, X_ref[:, j]) for j in range(X_ref.shape[1])], axis=-1)


def sup_t_pow_exp(beta: float, rate: float, T: float, n: int = 200001) -> float:
    """Brute-force ``max t^beta e^{rate t}`` on a fine grid of ``(0, T]``."""
    t = np.linspace(T / n, T, n)
    return float(np.max(t**beta * np.exp(rate * t)))


def picard_exp_partial(t, n: int):
    """n-th Picard iterate of x' = x, x(0) = 1 from x = 0: the degree-(n-1) Taylor polynomial of e^t."""
    t = np.asarray(t, dtype=float)
    return sum(t**j / math.factorial(j) for j in range(n))
