"""Quasi-classical Bloch dynamics of one coherent-pulse branch.

A two-level emitter starts in its ground state and is driven on resonance by
an exponentially decaying coherent pulse.  Everything here works in the
dimensionless variables of the pulse: time ``tau = kappa * t``, the decay ratio
``gamma_tilde = gamma / kappa`` and the peak Rabi frequency
``e_tilde = |E_alpha| / kappa``.  With ``zeta = exp(-tau / 2)`` the envelope of
the drive is simply ``zeta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConvergenceError, InputError

DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-12
DEFAULT_STEPS = 600


@dataclass(frozen=True)
class SystemConfig:
    """Decay rate and pulse linewidth of the emitter/pulse pair.

    ``gamma = 0`` is accepted as the lossless limit; the single-photon
    coupling then vanishes, so drives must be given as ``e_tilde`` directly.
    """

    gamma: float
    kappa: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise InputError(f"gamma must be finite and >= 0, got {self.gamma!r}")
        if not (math.isfinite(self.kappa) and self.kappa > 0):
            raise InputError(f"kappa must be finite and > 0, got {self.kappa!r}")

    @classmethod
    def from_ratio(cls, gamma_tilde: float, kappa: float = 1.0) -> "SystemConfig":
        return cls(gamma=gamma_tilde * kappa, kappa=kappa)

    @property
    def gamma_tilde(self) -> float:
        return self.gamma / self.kappa

    @property
    def eta0_over_hbar_kappa(self) -> float:
        """Single-photon coupling in units of ``hbar * kappa``.

        On resonance in a one-dimensional guide the coupling obeys
        ``eta0 = hbar * sqrt(2 * gamma * kappa)``.
        """
        return math.sqrt(2.0 * self.gamma_tilde)

    def e_tilde(self, magnitude: float) -> float:
        """Dimensionless drive strength of a branch with amplitude ``|alpha|``."""
        return magnitude * self.eta0_over_hbar_kappa


@dataclass(frozen=True)
class BranchAmplitude:
    """Coherent amplitude ``alpha = magnitude * exp(i * phase)`` of one branch."""

    magnitude: float
    phase: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.magnitude) and self.magnitude >= 0):
            raise InputError(f"magnitude must be finite and >= 0, got {self.magnitude!r}")
        if not math.isfinite(self.phase):
            raise InputError(f"phase must be finite, got {self.phase!r}")
        object.__setattr__(self, "phase", self.phase % (2.0 * math.pi))

    @classmethod
    def from_complex(cls, alpha: complex) -> "BranchAmplitude":
        return cls(abs(alpha), math.atan2(alpha.imag, alpha.real))


class BlochState(NamedTuple):
    u: float
    v: float
    w: float


GROUND_STATE = BlochState(0.0, 0.0, -1.0)


@dataclass(frozen=True)
class Trajectory:
    """Bloch vector sampled on a grid of ``kappa * t`` values."""

    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    error_estimate: float | None = field(default=None, compare=False)

    @property
    def zeta(self) -> np.ndarray:
        return np.exp(-0.5 * self.times)

    @property
    def states(self) -> np.ndarray:
        """``(n, 3)`` array of ``(u, v, w)`` rows."""
        return np.column_stack([self.u, self.v, self.w])

    @property
    def excited_population(self) -> np.ndarray:
        return 0.5 * (self.w + 1.0)

    def __len__(self):
        return len(self.times)

    def __getitem__(self, i) -> BlochState:
        return BlochState(float(self.u[i]), float(self.v[i]), float(self.w[i]))


def default_times(gamma_tilde: float, steps: int = DEFAULT_STEPS, tmax: float | None = None) -> np.ndarray:
    """Uniform grid on ``[0, 12 * max(1, 1 / gamma_tilde)]`` unless ``tmax`` is given."""
    if steps < 2:
        raise InputError(f"steps must be >= 2, got {steps}")
    if tmax is None:
        if gamma_tilde <= 0:
            raise InputError("a default time window needs gamma_tilde > 0; pass tmax")
        tmax = 12.0 * max(1.0, 1.0 / gamma_tilde)
    if not tmax > 0:
        raise InputError(f"tmax must be > 0, got {tmax}")
    return np.linspace(0.0, tmax, steps)


def check_time_grid(times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise InputError("time grid must be a non-empty 1-D array")
    if not np.all(np.isfinite(times)):
        raise InputError("time grid contains non-finite values")
    if times[0] != 0.0:
        raise InputError(f"time grid must start at 0, starts at {times[0]}")
    if np.any(np.diff(times) <= 0):
        raise InputError("time grid must be strictly increasing")
    return times


def _rhs(tau, y, gamma_tilde, e_tilde):
    u, v, w = y
    drive = e_tilde * math.exp(-0.5 * tau)
    return [
        -0.5 * gamma_tilde * u,
        -0.5 * gamma_tilde * v + drive * w,
        -gamma_tilde * (w + 1.0) - drive * v,
    ]


def _integrate(times, gamma_tilde, e_tilde, rtol, atol):
    if times.size == 1:
        return np.array([[0.0], [0.0], [-1.0]])
    sol = solve_ivp(
        _rhs,
        (0.0, float(times[-1])),
        list(GROUND_STATE),
        method="DOP853",
        t_eval=times,
        args=(gamma_tilde, e_tilde),
        rtol=rtol,
        atol=atol,
    )
    if sol.status != 0:
        raise ConvergenceError(
            f"Bloch integration failed at gamma_tilde={gamma_tilde}, e_tilde={e_tilde}: {sol.message}"
        )
    return sol.y


def integrate_bloch(
    gamma_tilde: float,
    e_tilde: float,
    times,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    estimate_error: bool = False,
) -> Trajectory:
    """Solve the zero-phase Bloch equations for a real drive ``e_tilde``.

    Parameters
    ----------
    gamma_tilde : float
        Decay rate over pulse linewidth, ``>= 0``.
    e_tilde : float
        Peak Rabi frequency over pulse linewidth.  Its sign is irrelevant to
        the population; the magnitude is used.
    times : array_like
        Strictly increasing ``kappa * t`` grid starting at 0.
    estimate_error : bool
        Also integrate at ``rtol / 16`` and report twice the largest change in
        ``w`` as ``Trajectory.error_estimate``.
    """
    if not (math.isfinite(gamma_tilde) and gamma_tilde >= 0):
        raise InputError(f"gamma_tilde must be >= 0, got {gamma_tilde!r}")
    if not math.isfinite(e_tilde):
        raise InputError(f"e_tilde must be finite, got {e_tilde!r}")
    times = check_time_grid(times)
    e_tilde = abs(e_tilde)
    u, v, w = _integrate(times, gamma_tilde, e_tilde, rtol, atol)
    err = None
    if estimate_error:
        w_fine = _integrate(times, gamma_tilde, e_tilde, rtol / 16, atol / 16)[2]
        err = 2.0 * float(np.max(np.abs(w - w_fine))) + atol
    return Trajectory(times, u, v, w, err)


def solve_branch(
    cfg: SystemConfig,
    amp: BranchAmplitude,
    grid=None,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    estimate_error: bool = False,
) -> Trajectory:
    """Bloch trajectory of the branch with coherent amplitude ``amp``.

    The drive phase is removed before integrating; call :func:`rotate_phase`
    with ``amp.phase`` to express ``u`` and ``v`` in the lab frame.  The
    population ``w`` does not depend on the phase.
    """
    if grid is None:
        grid = default_times(cfg.gamma_tilde)
    return integrate_bloch(cfg.gamma_tilde, cfg.e_tilde(amp.magnitude), grid, rtol, atol, estimate_error)


def rotate_phase(traj: Trajectory, phase: float) -> Trajectory:
    """Map a zero-phase trajectory onto a drive with phase ``phase``."""
    c, s = math.cos(phase), math.sin(phase)
    return Trajectory(
        traj.times,
        c * traj.u + s * traj.v,
        -s * traj.u + c * traj.v,
        traj.w,
        traj.error_estimate,
    )
