"""Photon-number statistics of the input pulse and the averages over them.

Every input state is a mixture of coherent branches through its P-function.
Because ``wbar`` is a power series in ``e_tilde**2 = 2 gamma_tilde |alpha|^2``,
the average over any photon statistics only needs the normally ordered
moments ``<a^dag^K a^K>``, the factorial moments of ``p_N``::

    n_e(zeta) = 1/2 sum_K C_K(zeta) (2 gamma_tilde)^K <a^dag^K a^K>

For a Fock state the sum stops exactly at ``K = N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from flint import arb, arb_poly
from scipy import special

from . import analytic
from .blochsim import BranchAmplitude, SystemConfig, solve_branch
from .errors import (
    InputError,
    NumericalIntegrityError,
    OracleUnreliableError,
    TruncationError,
    UndefinedCoherenceError,
)
from .series import DEFAULT_KMAX_CAP, SeriesTable, build_table, series_sum

MASS_TOL = 1e-10
MAX_PHOTONS = 10_000
NORMALIZATION_TOL = 1e-12
PROBABILITY_SLACK = 1e-9

ORACLE_RADIUS = 0.25
ORACLE_MAX_ORDER = 6
ORACLE_MAX_COND = 1e10

KINDS = ("fock", "thermal", "squeezed_vacuum", "coherent", "custom")


@dataclass(frozen=True)
class PhotonStatistics:
    """Photon-number distribution ``p_N``, ``N = 0..len(probabilities) - 1``.

    Infinite distributions are truncated once the retained mass reaches
    ``1 - mass_tol``; the dropped mass is kept in ``tail_mass`` rather than
    renormalized into the weights.  ``mean_photons`` is the exact mean of the
    untruncated state where one is known.
    """

    kind: str
    parameter: float
    probabilities: np.ndarray = field(repr=False)
    mean_photons: float
    tail_mass: float = 0.0

    @property
    def n_max(self) -> int:
        return len(self.probabilities) - 1

    @classmethod
    def fock(cls, n: int) -> "PhotonStatistics":
        n = _photon_number(n)
        p = np.zeros(n + 1)
        p[n] = 1.0
        return cls("fock", float(n), p, float(n))

    @classmethod
    def thermal(cls, nbar: float, mass_tol: float = MASS_TOL) -> "PhotonStatistics":
        """Geometric ``p_N = nbar^N / (1 + nbar)^(N+1)``."""
        nbar = _nonnegative("nbar", nbar)
        if nbar == 0:
            return cls("thermal", 0.0, np.ones(1), 0.0)
        log_q = math.log(nbar) - math.log1p(nbar)
        # the tail beyond N_cap is q^(N_cap + 1)
        n_cap = max(0, math.ceil(math.log(mass_tol) / log_q) - 1)
        _check_cap(n_cap, "thermal", nbar)
        n = np.arange(n_cap + 1)
        p = np.exp(n * log_q - math.log1p(nbar))
        return cls("thermal", nbar, p, nbar, math.exp((n_cap + 1) * log_q))

    @classmethod
    def coherent(cls, mean: float, mass_tol: float = MASS_TOL) -> "PhotonStatistics":
        """Poisson ``p_N`` with mean ``|alpha|^2``."""
        mean = _nonnegative("mean", mean)
        if mean == 0:
            return cls("coherent", 0.0, np.ones(1), 0.0)
        n_cap = int(mean)
        while special.pdtrc(n_cap, mean) > mass_tol:
            n_cap = n_cap + 1 + int(math.sqrt(mean))
            _check_cap(n_cap, "coherent", mean)
        while n_cap > 0 and special.pdtrc(n_cap - 1, mean) <= mass_tol:
            n_cap -= 1
        n = np.arange(n_cap + 1)
        p = np.exp(n * math.log(mean) - mean - special.gammaln(n + 1))
        return cls("coherent", mean, p, mean, float(special.pdtrc(n_cap, mean)))

    @classmethod
    def squeezed_vacuum(cls, r: float, mass_tol: float = MASS_TOL) -> "PhotonStatistics":
        """Even-only ``p_2n = C(2n, n) 4^-n tanh(r)^(2n) / cosh(r)``, mean ``sinh(r)^2``."""
        r = _nonnegative("r", r)
        mean = math.sinh(r) ** 2
        if r == 0:
            return cls("squeezed_vacuum", 0.0, np.ones(1), 0.0)
        log_t2 = 2.0 * math.log(math.tanh(r))
        log_c = math.log(math.cosh(r))
        # grow the even support in blocks until the retained mass is enough
        n_pairs = 64
        while True:
            n = np.arange(n_pairs)
            log_p = special.gammaln(2 * n + 1) - 2 * special.gammaln(n + 1) - n * math.log(4.0) + n * log_t2 - log_c
            pe = np.exp(log_p)
            cum = np.cumsum(pe)
            hit = np.nonzero(cum >= 1.0 - mass_tol)[0]
            if hit.size:
                m = int(hit[0]) + 1
                break
            if 2 * n_pairs > MAX_PHOTONS:
                raise TruncationError(f"squeezed vacuum r={r} needs more than {MAX_PHOTONS} photons")
            n_pairs *= 2
        _check_cap(2 * (m - 1), "squeezed_vacuum", r)
        p = np.zeros(2 * m - 1)
        p[::2] = pe[:m]
        return cls("squeezed_vacuum", r, p, mean, max(0.0, 1.0 - math.fsum(pe[:m])))

    @classmethod
    def custom(cls, probabilities, normalize: bool = False) -> "PhotonStatistics":
        """Arbitrary finite ``p_N``; must sum to one unless ``normalize`` is set."""
        p = np.asarray(probabilities, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise InputError("probabilities must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise InputError("probabilities must be finite and >= 0")
        _check_cap(p.size - 1, "custom", p.size - 1)
        total = math.fsum(p)
        if normalize:
            if total <= 0:
                raise InputError("probabilities sum to zero")
            p = p / total
        elif abs(total - 1.0) > NORMALIZATION_TOL:
            raise InputError(f"probabilities sum to {total!r}, not 1 within {NORMALIZATION_TOL}")
        p = np.trim_zeros(p, "b")
        mean = math.fsum(np.arange(p.size) * p)
        return cls("custom", float("nan"), p, mean)

    @classmethod
    def from_file(cls, path, normalize: bool = False) -> "PhotonStatistics":
        """Read whitespace-separated ``N p_N`` rows; ``#`` starts a comment."""
        try:
            data = np.loadtxt(path, comments="#", ndmin=2)
        except ValueError as exc:
            raise InputError(f"cannot parse photon statistics file {path}: {exc}") from exc
        if data.size == 0 or data.shape[1] != 2:
            raise InputError(f"{path}: expected two columns 'N p_N'")
        ns = data[:, 0]
        if np.any(ns < 0) or np.any(ns != np.round(ns)):
            raise InputError(f"{path}: photon numbers must be non-negative integers")
        ns = ns.astype(int)
        if len(set(ns.tolist())) != len(ns):
            raise InputError(f"{path}: repeated photon number")
        p = np.zeros(ns.max() + 1)
        p[ns] = data[:, 1]
        return cls.custom(p, normalize=normalize)


@dataclass(frozen=True)
class CoherenceOrders:
    """Normalized correlations ``g[K-1] = <a^dag^K a^K> / <n>^K``."""

    g: np.ndarray

    def __getitem__(self, k: int) -> float:
        if k < 1:
            raise IndexError("coherence orders start at K = 1")
        return float(self.g[k - 1])

    def __len__(self):
        return len(self.g)


def _photon_number(n) -> int:
    if isinstance(n, bool) or int(n) != n or n < 0:
        raise InputError(f"photon number must be a non-negative integer, got {n!r}")
    return int(n)


def _nonnegative(name, x) -> float:
    x = float(x)
    if not (math.isfinite(x) and x >= 0):
        raise InputError(f"{name} must be finite and >= 0, got {x!r}")
    return x


def _check_cap(n_cap, kind, value):
    if n_cap > MAX_PHOTONS:
        raise TruncationError(f"{kind}({value}) needs N_cap={n_cap} > {MAX_PHOTONS}")


def log_factorial_moments(stats: PhotonStatistics, kmax: int) -> np.ndarray:
    """``log sum_N p_N N! / (N-K)!`` for ``K = 1..kmax`` (``-inf`` when zero)."""
    p = stats.probabilities
    support = np.nonzero(p > 0)[0]
    log_p = np.log(p[support])
    lg = special.gammaln(support + 1.0)
    out = np.full(kmax, -np.inf)
    for k in range(1, kmax + 1):
        keep = support >= k
        if not np.any(keep):
            break
        out[k - 1] = special.logsumexp(log_p[keep] + lg[keep] - special.gammaln(support[keep] - k + 1.0))
    return out


def factorial_moment(stats: PhotonStatistics, k: int) -> float:
    """``<a^dag^K a^K> = sum_N p_N N! / (N-K)!`` of the retained distribution."""
    if int(k) != k or k < 0:
        raise InputError(f"order must be a non-negative integer, got {k!r}")
    if k == 0:
        return math.fsum(stats.probabilities)
    return float(np.exp(log_factorial_moments(stats, int(k))[-1]))


def coherence_orders(stats: PhotonStatistics, kmax: int) -> CoherenceOrders:
    """``g^(K)`` for ``K = 1..kmax``.

    Coherent, thermal and Fock inputs use their closed forms; the rest are
    computed from the retained ``p_N``.
    """
    if int(kmax) != kmax or kmax < 1:
        raise InputError(f"kmax must be a positive integer, got {kmax!r}")
    kmax = int(kmax)
    if stats.mean_photons == 0:
        raise UndefinedCoherenceError("g^(K) is undefined for a state with no photons")
    k = np.arange(1, kmax + 1)
    if stats.kind == "coherent":
        g = np.ones(kmax)
    elif stats.kind == "thermal":
        g = special.factorial(k, exact=False)
    elif stats.kind == "fock":
        n = int(stats.parameter)
        with np.errstate(divide="ignore"):
            log_g = special.gammaln(n + 1) - special.gammaln(np.maximum(n - k, 0) + 1.0) - k * math.log(n)
        g = np.where(k <= n, np.exp(log_g), 0.0)
    else:
        log_m = log_factorial_moments(stats, kmax)
        g = np.exp(log_m - k * math.log(stats.mean_photons))
    return CoherenceOrders(g)


def _check_table(cfg: SystemConfig, table: SeriesTable):
    if table.gamma_tilde != cfg.gamma_tilde:
        raise InputError(f"table was built for gamma_tilde={table.gamma_tilde}, config has {cfg.gamma_tilde}")


def _checked_population(values: np.ndarray, zetas: np.ndarray) -> np.ndarray:
    """Reject values outside ``[0, 1]`` beyond round-off, then clip."""
    bad = np.nonzero((values < -PROBABILITY_SLACK) | (values > 1.0 + PROBABILITY_SLACK) | ~np.isfinite(values))[0]
    if bad.size:
        i = int(bad[0])
        raise NumericalIntegrityError(
            f"excited population {values[i]!r} outside [0, 1] at zeta={zetas[i]!r}",
            zeta=float(zetas[i]),
            value=float(values[i]),
        )
    return np.clip(values, 0.0, 1.0)


def _falling_weights(two_g: arb, n: int) -> list:
    # (2 gamma_tilde)^K N! / (N-K)!, exact in ball arithmetic
    out, w = [], arb(1)
    for k in range(1, n + 1):
        w = w * two_g * (n - k + 1)
        out.append(w)
    return out


def fock_averages(cfg: SystemConfig, table: SeriesTable, ns) -> np.ndarray:
    """Excited population for several Fock inputs; shape ``(len(ns), n_zeta)``.

    Each row is the exact finite sum ``1/2 sum_{K<=N} C_K (2 gamma_tilde)^K N!/(N-K)!``.
    The table is extended when ``max(ns)`` exceeds its order.
    """
    _check_table(cfg, table)
    ns = [_photon_number(n) for n in ns]
    top = max(ns, default=0)
    if top > table.kmax:
        table = table.extended(top)

    def weights():
        two_g = arb(2 * cfg.gamma_tilde)
        full = _falling_weights(two_g, top)
        out = []
        for n in ns:
            if n == top:
                out.append(full)
            else:
                out.append(_falling_weights(two_g, n))
        return out

    sums = 0.5 * table.weighted_sums(weights)
    return np.vstack([_checked_population(row, table.zetas) for row in sums])


def fock_average(cfg: SystemConfig, table: SeriesTable, n: int) -> np.ndarray:
    """Excited population ``n_e(zeta)`` under an ``N``-photon Fock pulse."""
    n = _photon_number(n)
    if n == 0:
        _check_table(cfg, table)
        return np.zeros(len(table.zetas))
    return fock_averages(cfg, table, [n])[0]


def _moment_weights(stats: PhotonStatistics, two_g: arb, order: int) -> list:
    """``(2 gamma_tilde)^K <a^dag^K a^K>`` for ``K = 1..order`` from ``p_N``.

    The factorial moments are ``K!`` times the Taylor coefficients of the
    generating function ``sum_N p_N s^N`` about ``s = 1``.
    """
    shifted = arb_poly([arb(float(x)) for x in stats.probabilities])(arb_poly([1, 1])).coeffs()
    out, fact, scale = [], arb(1), arb(1)
    for k in range(1, order + 1):
        fact *= k
        scale *= two_g
        out.append(scale * fact * (shifted[k] if k < len(shifted) else arb(0)))
    return out


def _closed_form_weights(stats: PhotonStatistics, two_g: arb, order: int) -> list:
    """``(2 gamma_tilde <n>)^K g^(K)`` from the exact coherence orders."""
    kind = stats.kind
    x = two_g * arb(stats.parameter)
    out, w = [], arb(1)
    if kind == "fock":
        return _falling_weights(two_g, min(order, int(stats.parameter)))
    for k in range(1, order + 1):
        w = w * x * (k if kind == "thermal" else 1)
        out.append(w)
    return out


def _closed_form_log_weight(stats: PhotonStatistics, log_two_g: float, k: int) -> float:
    if stats.kind == "fock":
        n = int(stats.parameter)
        if k > n:
            return -math.inf
        return k * log_two_g + math.lgamma(n + 1) - math.lgamma(n - k + 1)
    base = k * (log_two_g + math.log(stats.parameter))
    return base + (math.lgamma(k + 1) if stats.kind == "thermal" else 0.0)


def mixture_average(
    cfg: SystemConfig,
    table: SeriesTable,
    stats: PhotonStatistics,
    method: str = "fock-sum",
    cap: int | None = None,
    rtol: float | None = None,
) -> np.ndarray:
    """Excited population under the photon statistics ``stats``.

    ``method="fock-sum"`` evaluates ``sum_N p_N n_e^Fock(N)`` over the
    retained distribution.  By linearity this is the coefficient series
    weighted by the factorial moments of ``p_N``, which is how it is
    computed; the series is cut by the three-small-terms rule and never runs
    past ``N_max``.

    ``method="coherence"`` uses the untruncated state's closed-form
    ``g^(K) <n>^K`` (coherent, thermal and Fock inputs only) and truncates
    the resulting infinite series, extending the table up to ``cap`` orders
    (default 150).

    Returns the population on ``table.zetas``.
    """
    _check_table(cfg, table)
    if stats.mean_photons == 0 or cfg.gamma_tilde == 0:
        return np.zeros(len(table.zetas))
    log_two_g = math.log(2.0 * cfg.gamma_tilde)
    if method == "fock-sum":
        n_max = stats.n_max
        log_m = log_factorial_moments(stats, n_max)
        cap = n_max if cap is None else min(cap, n_max)
        finite = cap == n_max

        def log_weight(k):
            return k * log_two_g + log_m[k - 1] if k <= n_max else -math.inf

        def make_weights(order):
            return _moment_weights(stats, arb(2 * cfg.gamma_tilde), order)

    elif method == "coherence":
        if stats.kind not in ("fock", "thermal", "coherent"):
            raise InputError(f"no closed-form coherence orders for {stats.kind!r} statistics")
        cap = DEFAULT_KMAX_CAP if cap is None else cap
        finite = stats.kind == "fock"
        if finite:
            cap = int(stats.parameter)

        def log_weight(k):
            return _closed_form_log_weight(stats, log_two_g, k)

        def make_weights(order):
            return _closed_form_weights(stats, arb(2 * cfg.gamma_tilde), order)

    else:
        raise InputError(f"unknown averaging method {method!r}")

    values, _, _ = series_sum(table, log_weight, make_weights, cap, rtol, finite=finite)
    return _checked_population(0.5 * values, table.zetas)


def coherent_average(
    cfg: SystemConfig,
    mean: float,
    zetas=None,
    table: SeriesTable | None = None,
    method: str = "quadrature",
    kmax: int = 30,
) -> np.ndarray:
    """Excited population under a coherent pulse with ``|alpha|^2 = mean``.

    ``method="quadrature"`` evaluates the Bessel integral at
    ``e_tilde = sqrt(2 gamma_tilde mean)``; ``method="series"`` sums the
    coefficient table with ``g^(K) = 1``.  The grid is ``table.zetas`` when a
    table is given, otherwise ``zetas``.
    """
    mean = _nonnegative("mean", mean)
    if table is not None:
        _check_table(cfg, table)
        zetas = table.zetas
    if zetas is None:
        raise InputError("coherent_average needs zetas or a table")
    zetas = np.atleast_1d(np.asarray(zetas, dtype=float))
    if mean == 0 or cfg.gamma_tilde == 0:
        return np.zeros(len(zetas))
    if method == "quadrature":
        values = 0.5 * analytic.wbar_exact(cfg, cfg.e_tilde(math.sqrt(mean)), zetas)
        return _checked_population(np.atleast_1d(values), zetas)
    if method == "series":
        if table is None:
            table = build_table(cfg, zetas, kmax)
        return mixture_average(cfg, table, PhotonStatistics.coherent(mean), method="coherence")
    raise InputError(f"unknown averaging method {method!r}")


@dataclass(frozen=True)
class TaylorOracle:
    """Brute-force estimates of ``C_K(zeta) (2 gamma_tilde)^K``.

    ``coeffs[K-1, i]`` and ``errors[K-1, i]`` refer to ``zetas[i]``;
    ``condition`` is the condition number of the scaled fit matrix.
    """

    zetas: np.ndarray
    coeffs: np.ndarray
    errors: np.ndarray
    condition: float

    def fock_population(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Fock-``n`` population and its error bound from the fitted orders."""
        n = _photon_number(n)
        if n > self.coeffs.shape[0]:
            raise InputError(f"oracle holds {self.coeffs.shape[0]} orders, Fock-{n} needs {n}")
        k = np.arange(1, n + 1)
        falling = np.exp(special.gammaln(n + 1) - special.gammaln(n - k + 1.0))[:, None]
        return 0.5 * np.sum(falling * self.coeffs[:n], axis=0), 0.5 * np.sum(falling * self.errors[:n], axis=0)


def taylor_oracle(
    cfg: SystemConfig,
    kmax: int,
    zeta_points,
    radius: float = ORACLE_RADIUS,
    rtol: float = 1e-12,
    atol: float = 1e-14,
) -> TaylorOracle:
    """Fit ``wbar`` against ``x = |alpha|^2`` from direct Bloch integrations.

    Samples ``M = 2 kmax + 3`` Chebyshev nodes of ``x`` in ``(0, radius]``,
    integrates the Bloch equations for each, and fits a degree-``kmax``
    polynomial through the origin by least squares in ``u = x / radius``.
    The error of each coefficient combines the residual covariance with the
    integrator's own error estimate, times a safety factor of 3.
    """
    if int(kmax) != kmax or not 1 <= kmax <= ORACLE_MAX_ORDER:
        raise InputError(f"oracle order must be in 1..{ORACLE_MAX_ORDER}, got {kmax!r}")
    kmax = int(kmax)
    z = np.atleast_1d(np.asarray(zeta_points, dtype=float))
    if np.any(~((z > 0) & (z <= 1))):
        raise InputError("zeta points must lie in (0, 1]")
    if not 0 < radius <= 1:
        raise InputError(f"radius must be in (0, 1], got {radius!r}")
    times = -2.0 * np.log(z)
    grid, inverse = np.unique(np.concatenate([[0.0], times]), return_inverse=True)
    pick = inverse[1:]

    m = 2 * kmax + 3
    j = np.arange(m)
    u = 0.5 * (1.0 + np.cos((2 * j + 1) * math.pi / (2 * m)))
    design = u[:, None] ** np.arange(1, kmax + 1)[None, :]
    cond = float(np.linalg.cond(design))
    if not cond <= ORACLE_MAX_COND:
        raise OracleUnreliableError(f"oracle fit is ill-conditioned (cond={cond:.3g})")

    samples = np.empty((m, len(z)))
    ode_err = np.empty(m)
    for i, ui in enumerate(u):
        traj = solve_branch(cfg, BranchAmplitude(math.sqrt(ui * radius)), grid, rtol, atol, estimate_error=True)
        samples[i] = traj.w[pick] + 1.0
        ode_err[i] = traj.error_estimate

    fit, _, _, _ = np.linalg.lstsq(design, samples, rcond=None)
    resid = samples - design @ fit
    dof = m - kmax
    pinv = np.linalg.pinv(design)
    cov_diag = np.diag(np.linalg.inv(design.T @ design))
    sigma = np.sqrt(np.sum(resid**2, axis=0) / dof)
    err = np.sqrt(cov_diag)[:, None] * sigma[None, :] + (np.abs(pinv) @ ode_err)[:, None]
    scale = radius ** np.arange(1, kmax + 1)[:, None]
    return TaylorOracle(z, fit / scale, 3.0 * err / scale, cond)
