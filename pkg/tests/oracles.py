"""Independent reference implementations used only by the tests.

None of these share code paths with the package: they use naive closed
forms, exact rational arithmetic or a fixed-step integrator.
"""

import math
from fractions import Fraction

import numpy as np


def j0_series(x, terms=60):
    """``J_0`` from its power series, exact enough for ``x < 10``."""
    s, term = 0.0, 1.0
    q = -(x * x) / 4.0
    for k in range(terms):
        s += term
        term *= q / ((k + 1) ** 2)
    return s


def bisect(f, a, b, tol=1e-15):
    fa = f(a)
    while b - a > tol * max(1.0, abs(a)):
        m = 0.5 * (a + b)
        fm = f(m)
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


def single_photon_direct(gamma_tilde, t):
    """Unsimplified single-excitation population; ``gamma_tilde != 1`` only."""
    t = np.asarray(t, dtype=float)
    g = gamma_tilde
    return 2.0 * g * (np.exp(-g * t / 2) - np.exp(-t / 2)) ** 2 / (g - 1.0) ** 2


def c1_direct(gamma_tilde, zeta):
    return 2.0 * (zeta - zeta**gamma_tilde) ** 2 / (1.0 - gamma_tilde) ** 2


def rk4_bloch(gamma_tilde, e_tilde, t_end, steps):
    """Classic fixed-step RK4 for the zero-phase Bloch equations."""
    h = t_end / steps
    y = np.array([0.0, 0.0, -1.0])

    def f(t, y):
        d = e_tilde * math.exp(-0.5 * t)
        return np.array([
            -0.5 * gamma_tilde * y[0],
            -0.5 * gamma_tilde * y[1] + d * y[2],
            -gamma_tilde * (y[2] + 1.0) - d * y[1],
        ])

    t = 0.0
    for _ in range(steps):
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


def sqv_pmf_recursive(r, n_pairs):
    """Even-only squeezed-vacuum ``p_2n`` via ``p_2n = p_2n-2 (2n-1)/(2n) tanh^2 r``."""
    t2 = math.tanh(r) ** 2
    p = [1.0 / math.cosh(r)]
    for n in range(1, n_pairs):
        p.append(p[-1] * (2 * n - 1) / (2 * n) * t2)
    return np.array(p)


def falling_moment_exact(probs, k):
    """``sum_N p_N N!/(N-K)!`` with exact rationals."""
    total = Fraction(0)
    for n, p in enumerate(probs):
        if n >= k and p:
            total += Fraction(p) * Fraction(math.perm(n, k))
    return float(total)
