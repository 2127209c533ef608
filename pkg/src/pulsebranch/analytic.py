"""Closed-form results for the exponentially driven two-level system.

``wbar`` denotes ``w + 1 = 2 * n_e``, twice the excited population.  The
exact branch solution is a Bessel-kernel integral over the rescaled time
``zeta = exp(-kappa t / 2)``; the other functions here are its analytic
special cases and the fully quantum single-photon population.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy import special
from scipy.integrate import quad_vec

from .blochsim import SystemConfig
from .errors import ConvergenceError, DomainError, InputError

QUAD_EPSABS = 1e-12
QUAD_LIMIT = 10_000


class FrobeniusParams(NamedTuple):
    p: float
    nu: float


def frobenius_params(gamma_tilde: float) -> FrobeniusParams:
    """Exponent ``p`` of ``wbar = zeta**p * y`` and the Bessel order ``nu``."""
    if gamma_tilde < 0:
        raise InputError(f"gamma_tilde must be >= 0, got {gamma_tilde}")
    return FrobeniusParams(0.5 * (1.0 + 3.0 * gamma_tilde), 0.5 * abs(gamma_tilde - 1.0))


def bessel_jy(nu, x):
    """Return ``(J_nu(x), Y_nu(x))`` for ``x > 0`` and ``nu >= 0``.

    Backed by scipy's AMOS/Cephes routines, which evaluate integer orders
    natively and treat near-integer orders without an offset.
    """
    x = np.asarray(x, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("Bessel argument must be > 0")
    if np.any(~(nu >= 0)):
        raise DomainError("Bessel order must be >= 0")
    j, y = special.jv(nu, x), special.yv(nu, x)
    if j.ndim == 0:
        return float(j), float(y)
    return j, y


def _check_zeta(zeta) -> np.ndarray:
    z = np.atleast_1d(np.asarray(zeta, dtype=float))
    if np.any(~((z > 0) & (z <= 1))):
        raise DomainError("zeta must lie in (0, 1]")
    return z


def wbar_exact(cfg: SystemConfig, e_tilde: float, zeta, epsabs: float = QUAD_EPSABS):
    """Twice the excited population of one branch, by Bessel quadrature.

    Evaluates::

        wbar(zeta) = 2 pi E^2 zeta^p  int_1^zeta
                     [Y(2E zeta) J(2E eta) - J(2E zeta) Y(2E eta)] eta^(1-p) d eta

    with ``E = |e_tilde|``.  The factor ``zeta**p`` is folded into the
    integrand as ``eta * (zeta / eta)**p``, which keeps it bounded as
    ``zeta -> 0``.  Integration is adaptive Gauss-Kronrod over all requested
    ``zeta`` at once.

    Returns a float for scalar ``zeta`` and an array otherwise.
    """
    scalar = np.ndim(zeta) == 0
    z = _check_zeta(zeta)
    e = abs(float(e_tilde))
    out = np.zeros_like(z)
    live = (z < 1.0) & (e > 0)
    if np.any(live):
        out[live] = _wbar_quadrature(cfg.gamma_tilde, e, z[live], epsabs)
    return float(out[0]) if scalar else out


def _wbar_quadrature(gamma_tilde, e, z, epsabs):
    p, nu = frobenius_params(gamma_tilde)
    x = 2.0 * e * z
    jx, yx = special.jv(nu, x), special.yv(nu, x)
    span = 1.0 - z
    scale = 2.0 * math.pi * e * e

    def integrand(s):
        eta = z + s * span
        y2 = 2.0 * e * eta
        kernel = yx * special.jv(nu, y2) - jx * special.yv(nu, y2)
        return kernel * eta * (z / eta) ** p * span

    # the integrand is multiplied by scale afterwards, so tighten accordingly
    val, err = quad_vec(integrand, 0.0, 1.0, epsabs=epsabs / scale, epsrel=0.0, norm="max", limit=QUAD_LIMIT)
    if not np.all(np.isfinite(val)) or scale * err > 1e3 * epsabs:
        raise ConvergenceError(
            f"Bessel quadrature did not converge (gamma_tilde={gamma_tilde}, e_tilde={e})",
            estimate=scale * err,
        )
    return -scale * val


def nbar_no_dissipation(e_tilde: float, t):
    """Lossless excited population ``sin^2(E (1 - exp(-t/2)))`` at ``t = kappa t``."""
    area = -np.expm1(-0.5 * np.asarray(t, dtype=float))
    return np.sin(e_tilde * area) ** 2


def single_photon_exact(cfg: SystemConfig, t):
    """Excited population under a one-photon exponential pulse.

    Fully quantum single-excitation result::

        n_e = 2 gamma kappa (exp(-gamma t/2) - exp(-kappa t/2))^2 / (gamma - kappa)^2

    written through ``exprel`` so the ``gamma = kappa`` limit
    ``gamma^2 t^2 exp(-gamma t) / 2`` needs no special case.  ``t`` is in
    units of ``1 / kappa``.
    """
    gt = cfg.gamma_tilde
    tau = np.asarray(t, dtype=float)
    half = 0.5 * tau
    amp = half * np.exp(-half) * special.exprel((1.0 - gt) * half)
    return 2.0 * gt * amp * amp
