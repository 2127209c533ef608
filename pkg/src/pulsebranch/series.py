"""Power-series kernel of the branch population in the drive intensity.

For a coherent branch ``wbar(zeta) = sum_K C_K(zeta) * E**(2K)`` with
``E = e_tilde``.  Each coefficient has the closed form::

    C_K = (2 pi / sin(pi nu)) (-1)^(K-1) zeta^(2K)
          sum_{q=0}^{K-1} [phi(p+nu-2(K-q)) - phi(p-nu-2q-2)]
                          / [q! (K-1-q)! Gamma(1+q+nu) Gamma(K-q-nu)]

    phi(a) = (zeta**a - 1) / a

The inner sum is a pair of discrete convolutions, so a whole column
``C_1..C_kmax`` at one ``zeta`` costs two polynomial products.

The individual terms are far larger than their sum and the prefactor is
singular whenever ``nu`` is an integer (odd integer ``gamma_tilde``), so the
kernel runs in Arb ball arithmetic.  Precision is raised until the balls
are tight, and at singular ``gamma_tilde`` the kernel averages the two
neighbours ``gamma_tilde +/- 2**-60``.  ``C_K`` is analytic in
``gamma_tilde``, so that average is exact to ``O(2**-120)``.
"""

from __future__ import annotations

import csv
import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from flint import arb, arb_mat, arb_poly, ctx
from scipy import special

from .blochsim import SystemConfig
from .errors import ConvergenceError, DomainError, InputError, NumericalIntegrityError, TruncationError

SINGULAR_WINDOW = 1e-5
PERTURBATION = 2.0**-60
BASE_PRECISION = 192
MAX_PRECISION = 1 << 14
TRUNCATION_RTOL = 1e-10
DEFAULT_KMAX_CAP = 150
# arb columns above this many entries are recomputed instead of cached
_CACHE_LIMIT = 1_000_000

_flint_lock = threading.RLock()


@contextmanager
def working_precision(bits: int):
    """Set Arb's (process-global) precision for the duration of the block."""
    with _flint_lock:
        saved = ctx.prec
        ctx.prec = bits
        try:
            yield
        finally:
            ctx.prec = saved


def phi(a, zeta):
    """``(zeta**a - 1) / a``, continuous through ``a = 0`` where it is ``log(zeta)``."""
    log_z = np.log(zeta)
    return log_z * special.exprel(np.multiply(a, log_z))


def coeff_c1(gamma_tilde: float, zeta):
    """First coefficient ``2 (zeta - zeta**gamma_tilde)**2 / (1 - gamma_tilde)**2``.

    Evaluated as ``2 (zeta log zeta exprel((gamma_tilde - 1) log zeta))**2``,
    which equals ``2 (zeta log zeta)**2`` at ``gamma_tilde = 1``.
    """
    z = np.asarray(zeta, dtype=float)
    if np.any(~((z > 0) & (z <= 1))):
        raise DomainError("zeta must lie in (0, 1]")
    log_z = np.log(z)
    r = z * log_z * special.exprel((gamma_tilde - 1.0) * log_z)
    return 2.0 * r * r


def _is_singular(gamma_tilde: float) -> bool:
    n = round(gamma_tilde)
    return n >= 1 and n % 2 == 1 and abs(gamma_tilde - n) < SINGULAR_WINDOW


def _exprel(x):
    if x.is_zero():
        return arb(1)
    if not x.contains(0):
        return x.expm1() / x
    # a ball straddling zero: sum the series and widen by a tail bound
    s, term, m = arb(0), arb(1), 1
    while True:
        s += term
        m += 1
        term = term * x / m
        if term.abs_upper() < arb(2) ** (-ctx.prec - 8):
            break
    return s + arb(0, 2 * term.abs_upper())


class _Branch:
    """Gamma-ratio tables for one exact ``gamma_tilde`` at the active precision."""

    def __init__(self, gamma_tilde: arb, kmax: int):
        g = gamma_tilde
        p = (1 + 3 * g) / 2
        nu = abs(g - 1) / 2
        fac = arb(1)
        a_coef, b_coef = [], [arb(0)]
        for q in range(kmax):
            if q:
                fac *= q
            a_coef.append((1 + q + nu).rgamma() / fac)
            b_coef.append((q + 1 - nu).rgamma() / fac)
        self.kmax = kmax
        self.a_coef = a_coef
        self.b_coef = b_coef
        self.a_poly = arb_poly(a_coef)
        self.b_poly = arb_poly(b_coef)
        self.prefactor = 2 * arb.pi() / nu.sin_pi()
        self.exp1 = [None] + [p + nu - 2 * j for j in range(1, kmax + 1)]
        self.exp2 = [p - nu - 2 * q - 2 for q in range(kmax)]

    def column(self, zeta: arb, log_z: arb) -> list:
        kmax = self.kmax
        u = [arb(0)] + [self.b_coef[j] * log_z * _exprel(self.exp1[j] * log_z) for j in range(1, kmax + 1)]
        s = [self.a_coef[q] * log_z * _exprel(self.exp2[q] * log_z) for q in range(kmax)]
        c1 = (self.a_poly * arb_poly(u)).coeffs()
        c2 = (arb_poly(s) * self.b_poly).coeffs()
        z2 = zeta * zeta
        zp = self.prefactor
        out = []
        for k in range(1, kmax + 1):
            zp = -zp * z2 if k > 1 else zp * z2
            out.append(zp * (_get(c1, k) - _get(c2, k)))
        return out


def _get(coeffs, k):
    return coeffs[k] if k < len(coeffs) else arb(0)


class _Kernel:
    """All coefficient columns for one ``(gamma_tilde, kmax)`` at one precision."""

    def __init__(self, gamma_tilde: float, kmax: int, prec: int):
        self.prec = prec
        self.kmax = kmax
        with working_precision(prec):
            g = arb(gamma_tilde)
            if _is_singular(gamma_tilde):
                d = arb(PERTURBATION)
                self.branches = [_Branch(g + d, kmax), _Branch(g - d, kmax)]
            else:
                self.branches = [_Branch(g, kmax)]

    def column(self, zeta: float) -> list:
        with working_precision(self.prec):
            if zeta == 1.0:
                return [arb(0)] * self.kmax
            z = arb(zeta)
            log_z = z.log()
            cols = [b.column(z, log_z) for b in self.branches]
            if len(cols) == 1:
                return cols[0]
            return [(x + y) / 2 for x, y in zip(*cols)]


def _mid_rad(x: arb) -> tuple[float, float]:
    return float(x.mid()), float(x.rad())


@dataclass
class SeriesTable:
    """Coefficients ``C_K(zeta_i)`` for ``K = 1..kmax`` on a ``zeta`` grid.

    ``coeffs[K-1, i]`` holds ``C_K(zetas[i])`` as a float; ``radii`` holds a
    rigorous bound on its rounding error.  ``C_K`` falls off roughly like
    ``1 / (K!)**2`` and underflows double precision beyond ``K ~ 120``, so
    ``log_bound[K-1]`` keeps an upper bound on ``log max_i |C_K(zeta_i)|``
    taken from the ball values.  Weighted sums over ``K`` should go through
    :meth:`weighted_sum`, which keeps the cancellation-prone accumulation in
    ball arithmetic.
    """

    gamma_tilde: float
    zetas: np.ndarray
    kmax: int
    coeffs: np.ndarray
    radii: np.ndarray
    precision: int
    log_bound: np.ndarray
    truncation_rtol: float = TRUNCATION_RTOL
    _columns: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def times(self) -> np.ndarray:
        return -2.0 * np.log(self.zetas)

    def _arb_columns(self, prec: int):
        cached = self._columns.get(prec)
        if cached is not None:
            return cached
        kernel = _Kernel(self.gamma_tilde, self.kmax, prec)
        cols = [kernel.column(float(z)) for z in self.zetas]
        if self.kmax * len(self.zetas) <= _CACHE_LIMIT:
            self._columns[prec] = cols
        return cols

    def weighted_sums(self, make_weights, atol: float = 1e-15) -> np.ndarray:
        """Evaluate ``sum_K w_K C_K(zeta)`` for several weight vectors at once.

        ``make_weights`` is called under the working precision and must
        return a list of weight sequences (index 0 is ``K = 1``), each
        entry an ``arb`` or an exactly representable number.  Precision is
        doubled until every result is enclosed to within
        ``atol * max(1, |value|)``.

        Returns an array of shape ``(n_weight_vectors, n_zeta)``.
        """
        prec = self.precision
        nz = len(self.zetas)
        while prec <= MAX_PRECISION:
            cols = self._arb_columns(prec)
            with working_precision(prec):
                wvecs = [[arb(w) for w in ws] for ws in make_weights()]
                width = max((len(ws) for ws in wvecs), default=0)
                if width > self.kmax:
                    raise InputError(f"{width} weights supplied for a table with kmax={self.kmax}")
                if width == 0:
                    return np.zeros((len(wvecs), nz))
                zero = arb(0)
                wmat = arb_mat([ws + [zero] * (width - len(ws)) for ws in wvecs])
                cmat = arb_mat([[cols[i][k] for i in range(nz)] for k in range(width)])
                prod = wmat * cmat
                mids = np.empty((len(wvecs), nz))
                rads = np.empty((len(wvecs), nz))
                for j in range(len(wvecs)):
                    for i in range(nz):
                        mids[j, i], rads[j, i] = _mid_rad(prod[j, i])
            if np.all(rads <= atol * np.maximum(1.0, np.abs(mids))):
                return mids
            prec *= 2
        raise ConvergenceError(f"weighted coefficient sum not resolved at {MAX_PRECISION} bits")

    def weighted_sum(self, make_weights, atol: float = 1e-15) -> np.ndarray:
        return self.weighted_sums(lambda: [make_weights()], atol)[0]

    def extended(self, kmax: int) -> "SeriesTable":
        """A table on the same grid carrying at least ``kmax`` orders."""
        if kmax <= self.kmax:
            return self
        return _build(self.gamma_tilde, self.zetas, kmax, self.truncation_rtol)

    def to_csv(self, path) -> None:
        """Write ``zeta,C1..Ckmax`` rows, one per grid point."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["zeta"] + [f"C{k}" for k in range(1, self.kmax + 1)])
            for i, z in enumerate(self.zetas):
                writer.writerow([f"{z:.17g}"] + [f"{c:.17g}" for c in self.coeffs[:, i]])


def _check_grid(zetas) -> np.ndarray:
    z = np.atleast_1d(np.asarray(zetas, dtype=float))
    if z.ndim != 1 or z.size == 0:
        raise InputError("zeta grid must be a non-empty 1-D array")
    if np.any(~((z > 0) & (z <= 1))):
        raise DomainError("zeta grid must lie in (0, 1]")
    return z


def _entry_floor(gamma_tilde: float, kmax: int) -> np.ndarray:
    # resolution needed so that Fock-type weights up to (2 gt kmax)^K see < 1e-16
    log_r = math.log(max(16.0, 2.0 * gamma_tilde * kmax))
    return np.exp(np.maximum(-np.arange(1, kmax + 1) * log_r, -700.0)) * 1e-16


def _build(gamma_tilde, zetas, kmax, rtol):
    floor = _entry_floor(gamma_tilde, kmax)[:, None]
    # (K!)^2 brings every C_K to order one so its size survives as a float
    log_fact2 = 2.0 * special.gammaln(np.arange(2, kmax + 2))
    nz = len(zetas)
    prec = BASE_PRECISION
    while prec <= MAX_PRECISION:
        table = SeriesTable(
            gamma_tilde, zetas, kmax, np.empty((kmax, nz)), np.empty((kmax, nz)), prec, np.empty(kmax), rtol,
        )
        cols = table._arb_columns(prec)
        scaled = np.empty((kmax, nz))
        with working_precision(prec):
            fact2 = [arb(1)]
            for k in range(2, kmax + 1):
                fact2.append(fact2[-1] * (k * k))
            for i, col in enumerate(cols):
                for k, c in enumerate(col):
                    if not c.is_finite():
                        raise NumericalIntegrityError(
                            f"coefficient C_{k + 1} is not finite at zeta={zetas[i]}", zeta=zetas[i], value=None
                        )
                    table.coeffs[k, i], table.radii[k, i] = _mid_rad(c)
                    m, r = _mid_rad(c * fact2[k])
                    scaled[k, i] = abs(m) + r
        at_one = zetas == 1.0
        table.coeffs[:, at_one] = 0.0
        table.radii[:, at_one] = 0.0
        scaled[:, at_one] = 0.0
        with np.errstate(divide="ignore"):
            table.log_bound[:] = np.log(scaled.max(axis=1)) - log_fact2
        if np.all(table.radii <= 1e-16 * np.abs(table.coeffs) + floor):
            return table
        table._columns.clear()
        prec *= 2
    raise ConvergenceError(f"series coefficients not resolved at {MAX_PRECISION} bits")


def build_table(cfg: SystemConfig, zetas, kmax: int, truncation_rtol: float = TRUNCATION_RTOL) -> SeriesTable:
    """Tabulate ``C_1..C_kmax`` for ``cfg.gamma_tilde`` on ``zetas``."""
    if int(kmax) != kmax or kmax < 1:
        raise InputError(f"kmax must be a positive integer, got {kmax!r}")
    return _build(cfg.gamma_tilde, _check_grid(zetas), int(kmax), truncation_rtol)


def coeff_ck(gamma_tilde: float, k: int, zeta):
    """Single coefficient ``C_k(zeta)``; scalar or array ``zeta``."""
    if int(k) != k or k < 1:
        raise InputError(f"order k must be a positive integer, got {k!r}")
    scalar = np.ndim(zeta) == 0
    table = _build(gamma_tilde, _check_grid(zeta), int(k), TRUNCATION_RTOL)
    row = table.coeffs[int(k) - 1]
    return float(row[0]) if scalar else row.copy()


def truncation_order(table: SeriesTable, log_weights, rtol: float | None = None) -> int | None:
    """Smallest ``K`` after which three consecutive terms are below ``rtol``.

    ``log_weights[K-1]`` is ``log|w_K|``.  Term sizes use the table's
    ``log_bound``; the bound is absolute because every partial sum of interest is a
    population-like quantity of order one.  Returns ``None`` when the table
    is too short to decide.
    """
    rtol = table.truncation_rtol if rtol is None else rtol
    log_c = table.log_bound
    n = min(len(log_weights), table.kmax)
    log_terms = np.asarray(log_weights[:n]) + log_c[:n]
    small = log_terms < math.log(rtol)
    for k in range(2, n):
        if small[k] and small[k - 1] and small[k - 2]:
            return k + 1
    return None


def series_sum(table: SeriesTable, log_weight, make_weights, cap: int = DEFAULT_KMAX_CAP, rtol=None, finite=False):
    """Truncated ``sum_K w_K C_K`` with the order chosen by :func:`truncation_order`.

    ``log_weight(K)`` gives ``log|w_K|`` and ``make_weights(n)`` the first
    ``n`` exact weights.  The table is extended (up to ``cap`` orders) if the
    stopping rule is not met within it.  With ``finite=True`` the weights
    vanish beyond ``cap``, so reaching ``cap`` gives the exact sum instead of
    an error.  Returns ``(values, order, table)``.
    """
    while True:
        n = min(table.kmax, cap)
        order = truncation_order(table, [log_weight(k) for k in range(1, n + 1)], rtol)
        if order is None and table.kmax >= cap and finite:
            order = cap
        if order is not None:
            return table.weighted_sum(lambda: make_weights(order)), order, table
        if table.kmax >= cap:
            raise TruncationError(f"series did not meet the stopping rule within {cap} orders")
        table = table.extended(min(cap, 2 * table.kmax))


def wbar_series(table: SeriesTable, e_tilde: float, cap: int = DEFAULT_KMAX_CAP, rtol=None):
    """``wbar`` of one coherent branch from the truncated coefficient series.

    Returns ``(values, order)``; ``order`` is where the stopping rule cut.
    """
    e = abs(float(e_tilde))
    if not math.isfinite(e):
        raise InputError(f"e_tilde must be finite, got {e_tilde!r}")
    if e == 0:
        return np.zeros(len(table.zetas)), 0
    log_x = 2.0 * math.log(e)

    def make_weights(n):
        x = arb(e) ** 2
        out, w = [], arb(1)
        for _ in range(n):
            w = w * x
            out.append(w)
        return out

    values, order, _ = series_sum(table, lambda k: k * log_x, make_weights, cap, rtol)
    return values, order
