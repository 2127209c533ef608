"""Command-line scenario runner writing population curves as CSV.

Each run is described by a :class:`RunSpec`, given either as flags or as a
JSON file whose keys are the field names.  The CSV starts with a
``# pulsebranch v<version>`` line followed by a ``kappa_t,<series...>``
header; run metadata goes to a JSON sidecar next to the CSV.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._version import __version__
from .blochsim import DEFAULT_STEPS, BranchAmplitude, SystemConfig, check_time_grid, default_times, solve_branch
from .errors import InputError, PulseBranchError
from .photonstats import (
    MASS_TOL,
    PhotonStatistics,
    coherent_average,
    fock_average,
    mixture_average,
)
from .series import DEFAULT_KMAX_CAP, TRUNCATION_RTOL, build_table, truncation_order

SCENARIOS = ("branch", "coherent", "fock", "thermal", "sqv", "custom", "compare-fig2", "compare-fig3")
EXIT_INVALID = 2
EXIT_NUMERICAL = 3
THREADS_ENV = "PULSEBRANCH_THREADS"
INITIAL_KMAX = 30

# which flag carries RunSpec.photons for each scenario
PHOTON_FLAG = {
    "branch": "alpha2",
    "coherent": "alpha2",
    "fock": "n",
    "thermal": "nbar",
    "sqv": "r",
    "custom": None,
    "compare-fig2": "n",
    "compare-fig3": "nbar",
}


@dataclass(frozen=True)
class RunSpec:
    """One scenario run.

    ``photons`` is ``|alpha|^2`` for ``branch``/``coherent``, ``N`` for
    ``fock``/``compare-fig2``, the mean photon number for
    ``thermal``/``compare-fig3`` and the squeezing ``r`` for ``sqv``.
    ``tmax_kappa=None`` picks ``12 * max(1, 1 / gamma_tilde)``; ``kmax=None``
    lets the truncation rule choose; ``rtol=None`` uses the library default
    of the scenario (series truncation, or Bloch integration for ``branch``).
    """

    scenario: str
    gamma_tilde: float = 1.0
    photons: float | None = None
    tmax_kappa: float | None = None
    steps: int = DEFAULT_STEPS
    kmax: int | None = None
    rtol: float | None = None
    output_path: str | None = None
    stats_file: str | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise InputError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        if not (isinstance(self.gamma_tilde, (int, float)) and math.isfinite(self.gamma_tilde)):
            raise InputError(f"gamma_tilde must be a finite number, got {self.gamma_tilde!r}")
        if self.gamma_tilde < 0 or (self.gamma_tilde == 0 and self.tmax_kappa is None):
            raise InputError("gamma_tilde must be > 0 (or 0 with an explicit tmax_kappa)")
        if isinstance(self.steps, bool) or not isinstance(self.steps, int) or self.steps < 2:
            raise InputError(f"steps must be an integer >= 2, got {self.steps!r}")
        if self.tmax_kappa is not None and not (math.isfinite(self.tmax_kappa) and self.tmax_kappa > 0):
            raise InputError(f"tmax_kappa must be > 0, got {self.tmax_kappa!r}")
        if self.kmax is not None and (isinstance(self.kmax, bool) or not isinstance(self.kmax, int) or self.kmax < 1):
            raise InputError(f"kmax must be a positive integer, got {self.kmax!r}")
        if self.rtol is not None and not (0 < self.rtol < 1):
            raise InputError(f"rtol must lie in (0, 1), got {self.rtol!r}")
        if self.scenario == "custom":
            if not self.stats_file:
                raise InputError("scenario 'custom' needs stats_file")
        else:
            if self.photons is None:
                raise InputError(f"scenario {self.scenario!r} needs --{PHOTON_FLAG[self.scenario]}")
            if not (math.isfinite(self.photons) and self.photons >= 0):
                raise InputError(f"photons must be finite and >= 0, got {self.photons!r}")
            if self.scenario in ("fock", "compare-fig2") and self.photons != int(self.photons):
                raise InputError(f"Fock photon number must be an integer, got {self.photons!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "RunSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise InputError(f"unknown RunSpec fields: {', '.join(sorted(unknown))}")
        if "scenario" not in data:
            raise InputError("RunSpec needs a scenario")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def times(self) -> np.ndarray:
        return default_times(self.gamma_tilde, self.steps, self.tmax_kappa)


@dataclass
class RunResult:
    """Time grid plus one named population series per curve."""

    columns: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError("all columns must share the time grid length")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# pulsebranch v{__version__}\n")
        names = list(self.columns)
        buf.write(",".join(names) + "\n")
        data = np.column_stack([self.columns[n] for n in names])
        for row in data:
            buf.write(",".join("%.15g" % (x + 0.0) for x in row) + "\n")
        return buf.getvalue()


def _statistics(spec: RunSpec) -> dict:
    """Named photon statistics a scenario averages over."""
    s, x = spec.scenario, spec.photons
    if s == "fock":
        return {"fock": PhotonStatistics.fock(int(x))}
    if s == "thermal":
        return {"thermal": PhotonStatistics.thermal(x)}
    if s == "sqv":
        return {"sqv": PhotonStatistics.squeezed_vacuum(x)}
    if s == "custom":
        return {"custom": PhotonStatistics.from_file(spec.stats_file)}
    if s == "compare-fig2":
        return {"fock": PhotonStatistics.fock(int(x))}
    if s == "compare-fig3":
        return {
            "thermal": PhotonStatistics.thermal(x),
            "sqv": PhotonStatistics.squeezed_vacuum(math.asinh(math.sqrt(x))),
        }
    return {}


def _describe(stats: PhotonStatistics) -> dict:
    return {
        "kind": stats.kind,
        "mean_photons": stats.mean_photons,
        "n_cap": stats.n_max,
        "tail_mass": stats.tail_mass,
    }


def run(spec: RunSpec) -> RunResult:
    """Compute the scenario's curves; writes the CSV when ``output_path`` is set."""
    times = check_time_grid(spec.times())
    cfg = SystemConfig.from_ratio(spec.gamma_tilde)
    zetas = np.exp(-0.5 * times)
    columns = {"kappa_t": times}
    diag = {}
    rtol = spec.rtol

    if spec.scenario == "branch":
        kwargs = {} if rtol is None else {"rtol": rtol}
        traj = solve_branch(cfg, BranchAmplitude(math.sqrt(spec.photons)), times, **kwargs)
        columns.update(n_e=traj.excited_population, u=traj.u, v=traj.v, w=traj.w)
    else:
        stats = _statistics(spec)
        if stats:
            table = build_table(cfg, zetas, spec.kmax or INITIAL_KMAX, rtol or TRUNCATION_RTOL)
            for name, st in stats.items():
                if st.kind == "fock":
                    columns[name] = fock_average(cfg, table, int(st.parameter))
                else:
                    columns[name] = mixture_average(cfg, table, st, rtol=rtol)
                diag[name] = _describe(st)
        # the coherent curve with the same mean photon number is the reference
        if spec.scenario in ("coherent", "compare-fig2", "compare-fig3"):
            columns["coherent"] = coherent_average(cfg, spec.photons, zetas=zetas)
    result = RunResult(
        columns,
        {"version": __version__, "spec": spec.to_dict(), "diagnostics": diag},
    )
    if spec.output_path:
        write_result(result, spec.output_path)
    return result


def metadata_path(output_path) -> Path:
    p = Path(output_path)
    return p.with_name(p.name + ".meta.json")


def write_result(result: RunResult, output_path) -> None:
    Path(output_path).write_text(result.to_csv())
    metadata_path(output_path).write_text(json.dumps(result.metadata, indent=2, sort_keys=True) + "\n")


def _predicted_order(cfg, stats, rtol) -> dict:
    """Series order the truncation rule would pick, from a coarse table."""
    if stats.kind == "fock":
        return {"kmax": int(stats.parameter), "exact_finite_sum": True}
    from .photonstats import log_factorial_moments

    n_max = stats.n_max
    if n_max == 0 or cfg.gamma_tilde == 0:
        return {"kmax": 0, "exact_finite_sum": True}
    log_m = log_factorial_moments(stats, n_max)
    log_w = np.arange(1, n_max + 1) * math.log(2 * cfg.gamma_tilde) + log_m
    coarse = np.exp(-0.5 * np.linspace(0.05, 12 * max(1.0, 1.0 / cfg.gamma_tilde), 24))
    kmax = min(INITIAL_KMAX, n_max)
    while True:
        table = build_table(cfg, coarse, kmax, rtol)
        order = truncation_order(table, log_w[:kmax], rtol)
        if order is not None:
            return {"kmax": order, "exact_finite_sum": False}
        if kmax >= n_max:
            return {"kmax": n_max, "exact_finite_sum": True}
        kmax = min(n_max, 2 * kmax)


def validate(spec: RunSpec) -> dict:
    """Truncation settings, predicted series order and a rough runtime; no files touched."""
    rtol = spec.rtol or TRUNCATION_RTOL
    cfg = SystemConfig.from_ratio(spec.gamma_tilde)
    out = {
        "spec": spec.to_dict(),
        "steps": spec.steps,
        "tmax_kappa": float(spec.times()[-1]),
        "truncation_rtol": rtol,
        "mass_tol": MASS_TOL,
        "kmax_cap": DEFAULT_KMAX_CAP,
        "curves": {},
    }
    orders = [0]
    if spec.scenario in ("coherent", "compare-fig2", "compare-fig3"):
        out["curves"]["coherent"] = {"method": "quadrature"}
    for name, st in _statistics(spec).items():
        pred = _predicted_order(cfg, st, rtol)
        out["curves"][name] = {**_describe(st), **pred}
        orders.append(pred["kmax"])
    k = max(orders)
    # empirical: column cost grows with order and with the precision it needs
    out["estimated_runtime_s"] = round(0.2 + 2e-6 * spec.steps * k * max(1.0, k / 25.0) ** 1.5, 1)
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pulsebranch",
        description="Excited-state population of a two-level emitter under an exponential pulse.",
    )
    ap.add_argument("--scenario", choices=SCENARIOS)
    ap.add_argument("--gamma-ratio", type=float, dest="gamma_tilde", help="gamma / kappa (default 1)")
    ap.add_argument("--n", type=int, help="Fock photon number (fock, compare-fig2)")
    ap.add_argument("--nbar", type=float, help="mean photon number (thermal, compare-fig3)")
    ap.add_argument("--r", type=float, help="squeezing parameter (sqv)")
    ap.add_argument("--alpha2", type=float, help="coherent |alpha|^2 (branch, coherent)")
    ap.add_argument("--stats-file", help="two-column 'N p_N' file (custom)")
    ap.add_argument("--tmax", type=float, dest="tmax_kappa", help="end of the kappa*t grid")
    ap.add_argument("--steps", type=int, help=f"grid points (default {DEFAULT_STEPS})")
    ap.add_argument("--kmax", type=int, help="initial series order")
    ap.add_argument("--rtol", type=float, help="series truncation tolerance")
    ap.add_argument("--out", dest="output_path", help="CSV path (default: stdout)")
    ap.add_argument("--config", help="JSON file with RunSpec fields; flags override it")
    ap.add_argument("--validate", action="store_true", help="print diagnostics instead of running")
    ap.add_argument("--version", action="version", version=f"pulsebranch {__version__}")
    return ap


def spec_from_args(args: argparse.Namespace) -> RunSpec:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise InputError("config must be a JSON object")
    for name in ("scenario", "gamma_tilde", "tmax_kappa", "steps", "kmax", "rtol", "output_path", "stats_file"):
        value = getattr(args, name)
        if value is not None:
            data[name] = value
    scenario = data.get("scenario")
    given = {f: getattr(args, f) for f in ("n", "nbar", "r", "alpha2") if getattr(args, f) is not None}
    if given:
        wanted = PHOTON_FLAG.get(scenario)
        stray = set(given) - {wanted}
        if stray:
            raise InputError(f"--{', --'.join(sorted(stray))} does not apply to scenario {scenario!r}")
        data["photons"] = given[wanted]
    return RunSpec.from_dict(data)


def _apply_threads():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return
    try:
        n = int(value)
    except ValueError:
        raise InputError(f"{THREADS_ENV} must be a positive integer, got {value!r}") from None
    if n < 1:
        raise InputError(f"{THREADS_ENV} must be a positive integer, got {value!r}")
    from flint import ctx

    ctx.threads = n


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = None
    try:
        _apply_threads()
        spec = spec_from_args(args)
        if args.validate:
            print(json.dumps(validate(spec), indent=2, sort_keys=True))
            return 0
        result = run(spec)
        if not spec.output_path:
            sys.stdout.write(result.to_csv())
        return 0
    except InputError as exc:
        print(f"pulsebranch: invalid run spec: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (PulseBranchError, ArithmeticError) as exc:
        params = json.dumps(spec.to_dict(), sort_keys=True) if spec else "unparsed spec"
        print(f"pulsebranch: numerical failure ({params}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
