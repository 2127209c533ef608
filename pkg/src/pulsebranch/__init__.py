"""Two-level emitter excited by exponential pulses of arbitrary photon statistics."""

from ._version import __version__
from .analytic import nbar_no_dissipation, single_photon_exact, wbar_exact
from .blochsim import BranchAmplitude, SystemConfig, Trajectory, solve_branch
from .errors import (
    ConvergenceError,
    DomainError,
    InputError,
    NumericalIntegrityError,
    OracleUnreliableError,
    PulseBranchError,
    TruncationError,
    UndefinedCoherenceError,
)
from .photonstats import (
    PhotonStatistics,
    coherence_orders,
    coherent_average,
    fock_average,
    mixture_average,
    taylor_oracle,
)
from .series import SeriesTable, build_table, coeff_c1, coeff_ck

__all__ = [
    "__version__",
    "BranchAmplitude",
    "ConvergenceError",
    "DomainError",
    "InputError",
    "NumericalIntegrityError",
    "OracleUnreliableError",
    "PhotonStatistics",
    "PulseBranchError",
    "SeriesTable",
    "SystemConfig",
    "Trajectory",
    "TruncationError",
    "UndefinedCoherenceError",
    "build_table",
    "coeff_c1",
    "coeff_ck",
    "coherence_orders",
    "coherent_average",
    "fock_average",
    "mixture_average",
    "nbar_no_dissipation",
    "single_photon_exact",
    "solve_branch",
    "taylor_oracle",
    "wbar_exact",
]
