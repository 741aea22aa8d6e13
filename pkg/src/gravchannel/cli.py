"""Command-line experiment runner.

Usage::

    python3 -m gravchannel run CONFIG [--check] [--out DIR] [--seed N]
    python3 -m gravchannel sweep CONFIG --param PATH --grid SPEC [--check] [--out DIR]

A config is a JSON document. Physical quantities carry explicit units, e.g.
``"omega": {"value": 1.0, "unit": "Hz"}``; ``Hz`` means cycles per second and
is converted to rad/s. Results go to ``summary.json`` (every scalar as
``{"value", "unit"}``) plus one CSV per time series, ``time`` first.

Exit codes: 0 success, 2 config error, 3 numerical abort, 4 failed ``--check``.
The output directory is, in order of precedence, ``--out``, the
``GRAVCHANNEL_OUT`` environment variable, ``output.directory`` in the config,
and ``./out``.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from . import __version__
from .conditional import (
    NoiseConfig,
    bootstrap_cov_errors,
    feedback_force_audit,
    simulate_ensemble,
    simulate_trajectory,
)
from .entanglement import channel_criterion, log_negativity
from .fock import (
    FockConfig,
    FockInvariantError,
    FockState,
    LeakageError,
    coherence_decay_probe,
    evolve_unconditional,
)
from .gaussian import (
    QBM,
    GaussianState,
    ModelSpec,
    UncertaintyViolation,
    Variant,
    build_generator,
    phonon_numbers,
    propagate,
    stack_moments,
)
from .params import (
    InstabilityError,
    PhysicalSetup,
    SetupError,
    derive_rates,
    effective_temperature,
    model_coupling,
    splitting_bound,
    splitting_bound_consistent,
    splitting_estimates,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CHECK = 4

OUT_ENV = "GRAVCHANNEL_OUT"

EXPERIMENTS = (
    "rates",
    "splitting-bound",
    "heat",
    "decohere",
    "entangle-witness",
    "epsilon-scan",
    "trajectories",
    "oracle-compare",
)

# factor to SI for each accepted unit tag, grouped by dimension
UNITS: dict[str, dict[str, float]] = {
    "mass": {"kg": 1.0, "g": 1e-3},
    "length": {"m": 1.0, "cm": 1e-2, "mm": 1e-3},
    "angular_frequency": {"rad/s": 1.0, "Hz": 2.0 * math.pi},
    "rate": {"1/s": 1.0, "s^-1": 1.0},
    "density": {"kg/m^3": 1.0, "g/cm^3": 1e3},
    "temperature": {"K": 1.0},
}

PHYSICAL_FIELDS = {
    "m": "mass",
    "m1": "mass",
    "m2": "mass",
    "omega": "angular_frequency",
    "omega1": "angular_frequency",
    "omega2": "angular_frequency",
    "d": "length",
    "r": "length",
    "rho": "density",
    "gamma": "rate",
    "T_bath": "temperature",
}

NUMERICAL_ERRORS = (
    InstabilityError,
    UncertaintyViolation,
    LeakageError,
    FockInvariantError,
    FloatingPointError,
    ArithmeticError,
)


class ConfigError(ValueError):
    pass


# -- config -------------------------------------------------------------------


def quantity(entry: Any, dimension: str, name: str) -> float:
    """SI value of a unit-tagged ``{"value", "unit"}`` entry."""
    if not isinstance(entry, dict) or set(entry) != {"value", "unit"}:
        raise ConfigError(f"{name}: expected {{'value': ..., 'unit': ...}}, got {entry!r}")
    units = UNITS[dimension]
    if entry["unit"] not in units:
        raise ConfigError(f"{name}: unit {entry['unit']!r} is not one of {sorted(units)}")
    value = entry["value"]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name}: value must be a number")
    return float(value) * units[entry["unit"]]


def _number(section: dict, key: str, default=None, *, positive=False, integer=False):
    value = section.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{key} must be an integer")
    if positive and not value > 0:
        raise ConfigError(f"{key} must be positive")
    return int(value) if integer else float(value)


def parse_physical(raw: dict) -> PhysicalSetup:
    unknown = set(raw) - set(PHYSICAL_FIELDS) - {"Q", "check_density"}
    if unknown:
        raise ConfigError(f"unknown physical fields {sorted(unknown)}")
    si = {k: quantity(v, PHYSICAL_FIELDS[k], k) for k, v in raw.items() if k in PHYSICAL_FIELDS}
    for k in ("m", "omega"):
        if k in si:
            for suffix in ("1", "2"):
                if k + suffix in si:
                    raise ConfigError(f"give either {k} or {k}1/{k}2")
                si[k + suffix] = si[k]
            del si[k]
    Q = _number(raw, "Q")
    kwargs = dict(rho=si.get("rho"), r=si.get("r"), Q=Q, gamma=si.get("gamma"), T_bath=si.get("T_bath"))
    if "check_density" in raw:
        kwargs["check_density"] = bool(raw["check_density"])
    try:
        if "m1" not in si and "rho" in si and "r" in si:
            return PhysicalSetup.spheres(si["rho"], si["r"], si["omega1"], d=si.get("d"), **{
                k: v for k, v in kwargs.items() if k not in ("rho", "r")
            })
        missing = [k for k in ("m1", "m2", "omega1", "omega2", "d") if k not in si]
        if missing:
            raise ConfigError(f"physical setup is missing {missing}")
        return PhysicalSetup(si["m1"], si["m2"], si["omega1"], si["omega2"], si["d"], **kwargs)
    except KeyError as exc:
        raise ConfigError(f"physical setup is missing {exc.args[0]}") from None
    except (SetupError, InstabilityError) as exc:
        raise ConfigError(str(exc)) from None


def parse_model(raw: dict) -> ModelSpec:
    raw = dict(raw)
    variant = raw.pop("variant", "minimal")
    qbm = raw.pop("qbm", None)
    known = {"g", "chi1", "chi2", "Gamma", "Gamma2", "epsilon", "shifted", "decoherence_only"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown model fields {sorted(unknown)}")
    if "g" not in raw:
        raise ConfigError("model needs g")
    kwargs = {}
    for key in ("g", "chi1", "chi2", "Gamma", "Gamma2", "epsilon"):
        if key in raw:
            kwargs[key] = _number(raw, key)
    for key in ("shifted", "decoherence_only"):
        if key in raw:
            if not isinstance(raw[key], bool):
                raise ConfigError(f"{key} must be true or false")
            kwargs[key] = raw[key]
    if qbm is not None:
        if not isinstance(qbm, dict) or set(qbm) != {"gamma", "temperature"}:
            raise ConfigError("qbm needs exactly gamma and temperature")
    try:
        if qbm is not None:
            kwargs["qbm"] = QBM(_number(qbm, "gamma"), _number(qbm, "temperature"))
        if variant == "minimal":
            return ModelSpec.minimal(**kwargs)
        if variant == "feedback":
            return ModelSpec.feedback(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown model variant {variant!r}")


def parse_initial(raw: Optional[dict]) -> GaussianState:
    raw = raw or {"kind": "vacuum"}
    kind = raw.get("kind", "vacuum")
    try:
        if kind == "vacuum":
            return GaussianState.vacuum()
        if kind == "thermal":
            return GaussianState.thermal(_number(raw, "n1", 0.0), _number(raw, "n2"))
        if kind == "coherent":
            return GaussianState.coherent(_complex(raw, "alpha1"), _complex(raw, "alpha2"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown initial state kind {kind!r}")


def _complex(raw: dict, key: str) -> complex:
    value = raw.get(key, 0.0)
    if isinstance(value, list) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return complex(value)
    raise ConfigError(f"{key} must be a number or [re, im]")


def fock_state_from(initial: GaussianState, raw: Optional[dict], N: int) -> FockState:
    """Fock version of a vacuum, thermal or coherent initial state."""
    raw = raw or {"kind": "vacuum"}
    kind = raw.get("kind", "vacuum")
    if kind == "vacuum":
        return FockState.vacuum(N)
    if kind == "thermal":
        return FockState.thermal(N, _number(raw, "n1", 0.0), _number(raw, "n2"))
    return FockState.coherent(N, _complex(raw, "alpha1"), _complex(raw, "alpha2"))


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    raw: dict
    physical: Optional[PhysicalSetup] = None
    model: Optional[ModelSpec] = None
    initial: GaussianState = field(default_factory=GaussianState.vacuum)
    dt: Optional[float] = None
    t_final: Optional[float] = None
    n_traj: Optional[int] = None
    seed: Optional[int] = None
    N: Optional[int] = None
    output_dir: Optional[str] = None

    @property
    def n_steps(self) -> int:
        n = int(round(self.t_final / self.dt))
        if abs(n * self.dt - self.t_final) > 1e-9 * self.t_final:
            raise ConfigError("t_final must be a multiple of dt")
        return n


NEEDS = {
    "rates": ("physical",),
    "splitting-bound": ("physical",),
    "heat": ("model", "integration"),
    "decohere": ("model", "integration", "fock"),
    "entangle-witness": ("model", "integration"),
    "epsilon-scan": ("model", "integration"),
    "trajectories": ("model", "integration", "ensemble"),
    "oracle-compare": ("model", "integration", "fock"),
}


def parse_config(raw: dict, seed: Optional[int] = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    experiment = raw.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {list(EXPERIMENTS)}, got {experiment!r}")
    for section in NEEDS[experiment]:
        if section not in raw:
            raise ConfigError(f"experiment {experiment!r} needs a {section!r} section")
    if experiment in ("rates", "splitting-bound") and "model" in raw:
        raise ConfigError(f"experiment {experiment!r} takes a physical setup, not a model")
    if "model" in NEEDS[experiment] and "physical" in raw:
        raise ConfigError(f"experiment {experiment!r} takes a dimensionless model, not a physical setup")
    kw: dict[str, Any] = {}
    if "physical" in raw:
        kw["physical"] = parse_physical(raw["physical"])
    if "model" in raw:
        kw["model"] = parse_model(raw["model"])
    kw["initial"] = parse_initial(raw.get("initial"))
    integ = raw.get("integration", {})
    kw["dt"] = _number(integ, "dt", positive=True)
    kw["t_final"] = _number(integ, "t_final", positive=True)
    if "integration" in NEEDS[experiment] and (kw["dt"] is None or kw["t_final"] is None):
        raise ConfigError("integration needs dt and t_final")
    ens = raw.get("ensemble", {})
    kw["n_traj"] = _number(ens, "n_traj", positive=True, integer=True)
    kw["seed"] = _number(ens, "seed", integer=True)
    if seed is not None:
        kw["seed"] = int(seed)
    if experiment == "trajectories" and (kw["n_traj"] is None or kw["seed"] is None):
        raise ConfigError("ensemble needs n_traj and seed")
    kw["N"] = _number(raw.get("fock", {}), "N", integer=True, positive=True)
    if "fock" in NEEDS[experiment] and kw["N"] is None:
        raise ConfigError("fock section needs N")
    kw["output_dir"] = raw.get("output", {}).get("directory")
    cfg = ExperimentConfig(experiment, raw, **kw)
    if cfg.dt is not None and cfg.t_final is not None:
        cfg.n_steps
    return cfg


def load_config(path: str, seed: Optional[int] = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    return parse_config(raw, seed)


# -- results ------------------------------------------------------------------


@dataclass
class ResultBundle:
    summary: dict[str, dict[str, Any]] = field(default_factory=dict)
    series: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    provenance: dict[str, Any] = field(default_factory=dict)
    checks: list[tuple[str, bool, str]] = field(default_factory=list)

    def scalar(self, key: str, value, unit: str):
        if isinstance(value, (list, tuple, np.ndarray)):
            value = [float(v) for v in value]
        elif isinstance(value, (bool, np.bool_)):
            value = bool(value)
        elif isinstance(value, (int, np.integer)):
            value = int(value)
        else:
            value = float(value)
        self.summary[key] = {"value": value, "unit": unit}

    def add_series(self, name: str, time: np.ndarray, **columns: np.ndarray):
        time = np.asarray(time, dtype=float)
        table = {"time": time}
        for k, v in columns.items():
            v = np.asarray(v, dtype=float)
            if v.shape != time.shape:
                raise ValueError(f"series {name}: column {k} does not match the time column")
            table[k] = v
        self.series[name] = table

    def check(self, name: str, ok: bool, detail: str):
        self.checks.append((name, bool(ok), detail))


def summary_document(bundle: ResultBundle) -> str:
    doc = {"summary": bundle.summary, "provenance": bundle.provenance}
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def series_document(table: dict[str, np.ndarray]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    names = list(table)
    writer.writerow(names)
    for row in zip(*(table[n] for n in names)):
        writer.writerow(["%.17g" % v for v in row])
    return buf.getvalue()


def write_bundle(bundle: ResultBundle, directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "summary.json").write_text(summary_document(bundle))
    for name, table in bundle.series.items():
        (directory / f"{name}.csv").write_text(series_document(table))


def read_series(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(names))
    return {n: data[:, i] for i, n in enumerate(names)}


# -- experiments --------------------------------------------------------------


def _rel(a: float, b: float) -> float:
    return abs(a - b) / abs(b) if b else abs(a)


def run_rates(cfg: ExperimentConfig, out: ResultBundle):
    setup = cfg.physical
    if not setup.is_symmetric:
        raise ConfigError("rates needs identical oscillators (m1 == m2, omega1 == omega2)")
    rates = derive_rates(setup)
    est = splitting_estimates(setup)
    m, omega = setup.m1, setup.omega1
    out.scalar("K", rates.K, "N/m")
    out.scalar("omega_plus", rates.omega_plus, "rad/s")
    out.scalar("omega_minus", rates.omega_minus, "rad/s")
    out.scalar("Delta", est["point_mass"], "1/s")
    out.scalar("Delta_coupling", est["coupling"], "1/s")
    out.scalar("Delta_exact", est["exact"], "1/s")
    for key in ("bound", "bound_consistent"):
        if key in est:
            out.scalar(f"Delta_{key}", est[key], "1/s")
    out.scalar("g", model_coupling(setup), "1")
    out.scalar("D_grav", rates.D_grav, "kg^2 m^2/s^3")
    out.scalar("R_grav", rates.R_grav, "1/s")
    out.scalar("Lambda_grav", rates.Lambda_grav, "1/s")
    if setup.Q is not None or setup.gamma is not None:
        Q = setup.Q if setup.Q is not None else omega / (2.0 * setup.gamma)
        out.scalar("Q", Q, "1")
        out.scalar("T_grav", effective_temperature(rates.K, m, omega, Q=Q, Delta=est["point_mass"]), "K")
        out.scalar("T_grav_coupling", effective_temperature(rates.K, m, omega, Q=Q), "K")
    out.check(
        "Lambda_grav = R_grav/2 = Delta_coupling/4",
        rates.Lambda_grav == rates.R_grav / 2 and _rel(rates.R_grav, est["coupling"] / 2) <= 1e-15,
        f"Lambda={rates.Lambda_grav:.17g} R/2={rates.R_grav / 2:.17g} Delta/4={est['coupling'] / 4:.17g}",
    )
    out.check(
        "Delta_exact close to Delta_coupling",
        _rel(est["exact"], est["coupling"]) <= 2.0 * rates.g,
        f"relative difference {_rel(est['exact'], est['coupling']):.3g}",
    )


def run_splitting_bound(cfg: ExperimentConfig, out: ResultBundle):
    setup = cfg.physical
    if setup.rho is None:
        raise ConfigError("splitting-bound needs rho")
    omega = setup.omega1
    bound = splitting_bound(setup.rho, omega)
    out.scalar("Delta_bound", bound, "1/s")
    out.scalar("Delta_bound_consistent", splitting_bound_consistent(setup.rho, omega), "1/s")
    if setup.Q is not None or setup.gamma is not None:
        Q = setup.Q if setup.Q is not None else omega / (2.0 * setup.gamma)
        out.scalar("T_grav", effective_temperature(1.0, 1.0, omega, Q=Q, Delta=bound), "K")
    if setup.r is not None and setup.is_symmetric:
        # the bound is the point-mass splitting of touching spheres
        touching = replace(setup, d=2.0 * setup.r)
        pm = splitting_estimates(touching)["point_mass"]
        out.check(
            "bound equals touching-sphere splitting",
            _rel(bound, pm) <= 1e-12,
            f"bound={bound:.6g} touching={pm:.6g}",
        )


def _gaussian_run(cfg: ExperimentConfig, spec: ModelSpec):
    states = propagate(cfg.initial, build_generator(spec), cfg.dt, cfg.n_steps)
    return cfg.dt * np.arange(len(states)), states


def run_heat(cfg: ExperimentConfig, out: ResultBundle):
    spec = replace(cfg.model, decoherence_only=True)
    times, states = _gaussian_run(cfg, spec)
    n = np.array([phonon_numbers(s) for s in states])
    expected = np.array(spec.double_commutator_coefficients())
    if spec.qbm is not None:
        expected = expected + spec.qbm.gamma * spec.qbm.temperature
    slope = (n[1] - n[0]) / cfg.dt
    out.add_series("phonons", times, n1=n[:, 0], n2=n[:, 1])
    out.scalar("heating_rate_1", slope[0], "1/time")
    out.scalar("heating_rate_2", slope[1], "1/time")
    out.scalar("expected_rate_1", expected[0], "1/time")
    out.scalar("expected_rate_2", expected[1], "1/time")
    if cfg.model.variant is Variant.MINIMAL and cfg.model.epsilon == 0 and spec.qbm is None:
        out.scalar("R_grav", cfg.model.g / 2.0, "1/time")
    if spec.qbm is None:
        out.check(
            "Gaussian heating rate",
            all(_rel(slope[k], expected[k]) <= 1e-4 for k in range(2)),
            f"rates {slope} expected {expected}",
        )
    if cfg.N is not None:
        fock = evolve_unconditional(
            fock_state_from(cfg.initial, cfg.raw.get("initial"), cfg.N),
            spec, cfg.dt, cfg.n_steps, FockConfig(cfg.N),
        )
        nf = np.array([s.phonon_numbers() for s in fock.states])
        fslope = (nf[1] - nf[0]) / cfg.dt
        out.add_series("phonons_fock", fock.times, n1=nf[:, 0], n2=nf[:, 1])
        out.scalar("heating_rate_fock_1", fslope[0], "1/time")
        out.scalar("heating_rate_fock_2", fslope[1], "1/time")
        if spec.qbm is None:
            out.check(
                "Fock heating rate",
                all(_rel(fslope[k], expected[k]) <= 1e-4 for k in range(2)),
                f"rates {fslope} expected {expected}",
            )


def run_decohere(cfg: ExperimentConfig, out: ResultBundle):
    probe = cfg.raw.get("probe", {})
    sep = _number(probe, "separation", 2.0)
    if sep < 0:
        raise ConfigError("separation must be non-negative")
    spec = cfg.model
    fit = coherence_decay_probe(sep, spec, cfg.dt, cfg.n_steps, FockConfig(cfg.N))
    c = spec.double_commutator_coefficients()[0]
    if spec.qbm is not None:
        c += spec.qbm.gamma * spec.qbm.temperature
    expected = c * sep**2
    out.add_series("coherence", fit.times, coherence=fit.coherence)
    out.scalar("decay_rate", fit.rate, "1/time")
    out.scalar("expected_rate", expected, "1/time")
    out.scalar("separation", sep, "1")
    out.scalar("fit_residual", fit.residual, "1")
    out.scalar("inconclusive", fit.inconclusive, "1")
    out.check("fit conclusive", not fit.inconclusive, f"residual {fit.residual:.3g}")
    out.check(
        "decay rate within 5%",
        abs(fit.rate - expected) <= 0.05 * expected if expected > 0 else abs(fit.rate) <= 1e-12,
        f"rate {fit.rate:.6g} expected {expected:.6g}",
    )


def _entanglement_series(cfg: ExperimentConfig, spec: ModelSpec):
    times, states = _gaussian_run(cfg, spec)
    EN = np.array([log_negativity(s) for s in states])
    return times, states, EN


def run_entangle_witness(cfg: ExperimentConfig, out: ResultBundle):
    spec = cfg.model
    times, states, EN = _entanglement_series(cfg, spec)
    n = np.array([phonon_numbers(s) for s in states])
    out.add_series("entanglement", times, E_N=EN, n1=n[:, 0], n2=n[:, 1])
    out.scalar("max_E_N", EN.max(), "1")
    if spec.variant is Variant.MINIMAL:
        y = 2.0 * spec.g - spec.epsilon
        crit = channel_criterion(y * np.eye(2), spec.g)
        out.scalar("criterion_eigenvalues", crit.eigenvalues, "1/time")
        out.scalar("non_entangling", crit.non_entangling, "1")
        if crit.non_entangling:
            out.check("no entanglement generated", EN.max() <= 1e-10, f"max E_N {EN.max():.3g}")
        else:
            out.check("criterion violated", True, f"eigenvalues {crit.eigenvalues}")


def run_epsilon_scan(cfg: ExperimentConfig, out: ResultBundle):
    spec = cfg.model
    if spec.variant is not Variant.MINIMAL:
        raise ConfigError("epsilon-scan needs the minimal model")
    grid = cfg.raw.get("scan", {}).get("epsilon")
    eps = [spec.epsilon] if grid is None else _grid_values(grid)
    columns, maxima = {}, []
    times = None
    for i, e in enumerate(eps):
        try:
            s = replace(spec, epsilon=float(e))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        times, _, EN = _entanglement_series(cfg, s)
        columns[f"E_N_{i}"] = EN
        maxima.append(EN.max())
    out.add_series("entanglement", times, **columns)
    out.scalar("epsilon", eps, "1/time")
    out.scalar("max_E_N", maxima, "1")
    for e, mx in zip(eps, maxima):
        if e == 0:
            out.check("no entanglement at epsilon=0", mx <= 1e-10, f"max E_N {mx:.3g}")
        elif e > 0:
            out.check(f"entanglement at epsilon={e:g}", mx > 0, f"max E_N {mx:.3g}")


SAMPLE_TIMES_STEP = 1.0


def run_trajectories(cfg: ExperimentConfig, out: ResultBundle):
    spec = cfg.model
    if spec.variant is not Variant.FEEDBACK:
        raise ConfigError("trajectories needs the feedback model")
    noise = NoiseConfig(cfg.seed, cfg.dt, cfg.n_steps)
    sample = int(round(SAMPLE_TIMES_STEP / cfg.dt)) if cfg.t_final >= SAMPLE_TIMES_STEP else cfg.n_steps
    ens = simulate_ensemble(spec, noise, cfg.initial, cfg.n_traj, stride=sample)
    mom = ens.moments()
    _, ref = stack_moments(propagate(cfg.initial, build_generator(spec), cfg.dt, cfg.n_steps)[::sample])
    iu = np.triu_indices(4)
    z = np.zeros((len(ens.times), len(iu[0])))
    if cfg.n_traj > 1:
        se = bootstrap_cov_errors(ens.means)
        diff = mom.cov - ref
        with np.errstate(divide="ignore", invalid="ignore"):
            zz = np.where(se > 0, diff / se, 0.0)
        z = zz[:, iu[0], iu[1]]
    first = simulate_trajectory(spec, noise, cfg.initial, trajectory=0)
    feedback_force_audit(first)
    names = ["x1", "p1", "x2", "p2"]
    cols = {}
    for a, b in zip(*iu):
        cols[f"cov_{names[a]}_{names[b]}"] = mom.cov[:, a, b]
        cols[f"ref_{names[a]}_{names[b]}"] = ref[:, a, b]
    out.add_series("ensemble_covariance", ens.times, **cols)
    out.add_series(
        "trajectory_0",
        first.times,
        **{f"mean_{n}": first.means[:, i] for i, n in enumerate(names)},
        dJ1=np.r_[0.0, first.dJ1],
        dJ2=np.r_[0.0, first.dJ2],
    )
    out.scalar("n_traj", cfg.n_traj, "1")
    out.scalar("seed", cfg.seed, "1")
    out.scalar("max_abs_z", np.abs(z[1:]).max() if len(z) > 1 else 0.0, "1")
    out.check(
        "ensemble reconstructs unconditional covariance within 3 standard errors",
        cfg.n_traj > 1 and np.abs(z[1:]).max() <= 3.0,
        f"max |z| {np.abs(z[1:]).max() if len(z) > 1 else float('nan'):.3g}",
    )


def run_oracle_compare(cfg: ExperimentConfig, out: ResultBundle):
    spec = cfg.model
    stride = max(1, cfg.n_steps // 50)
    fock = evolve_unconditional(
        fock_state_from(cfg.initial, cfg.raw.get("initial"), cfg.N),
        spec, cfg.dt, cfg.n_steps, FockConfig(cfg.N), stride=stride,
    )
    fm, fc = fock.moments()
    _, states = _gaussian_run(cfg, spec)
    gm, gc = stack_moments(states[::stride])
    dm, dc = np.abs(fm - gm).max(axis=1), np.abs(fc - gc).max(axis=(1, 2))
    out.add_series("moment_difference", fock.times, mean=dm, cov=dc)
    out.scalar("max_mean_difference", dm.max(), "1")
    out.scalar("max_cov_difference", dc.max(), "1")
    out.check(
        "Fock and Gaussian moments agree within 1e-4",
        max(dm.max(), dc.max()) <= 1e-4,
        f"mean {dm.max():.3g} cov {dc.max():.3g}",
    )


RUNNERS: dict[str, Callable[[ExperimentConfig, ResultBundle], None]] = {
    "rates": run_rates,
    "splitting-bound": run_splitting_bound,
    "heat": run_heat,
    "decohere": run_decohere,
    "entangle-witness": run_entangle_witness,
    "epsilon-scan": run_epsilon_scan,
    "trajectories": run_trajectories,
    "oracle-compare": run_oracle_compare,
}


def provenance(cfg: ExperimentConfig) -> dict[str, Any]:
    return {
        "config": cfg.raw,
        "version": __version__,
        "numpy": np.__version__,
        "seed": cfg.seed,
    }


def run(cfg: ExperimentConfig) -> ResultBundle:
    """Execute one experiment; raises on config or numerical problems."""
    bundle = ResultBundle(provenance=provenance(cfg))
    log.info("running %s", cfg.experiment)
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        RUNNERS[cfg.experiment](cfg, bundle)
    return bundle


def output_directory(cfg: ExperimentConfig, override: Optional[str]) -> Path:
    for candidate in (override, os.environ.get(OUT_ENV), cfg.output_dir):
        if candidate:
            return Path(candidate)
    return Path("out")


def execute(cfg: ExperimentConfig, directory: Path, check: bool) -> int:
    try:
        bundle = run(cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        log.error("numerical abort: %s: %s", type(exc).__name__, exc)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # remaining validation errors, e.g. a step size beyond the RK4 guard
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    write_bundle(bundle, directory)
    if check:
        failed = [c for c in bundle.checks if not c[1]]
        for name, ok, detail in bundle.checks:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        if failed:
            return EXIT_CHECK
    return EXIT_OK


# -- sweep --------------------------------------------------------------------


def _grid_values(spec) -> list[float]:
    """Grid from a list, ``"a,b,c"`` or ``"start:stop:num"`` (inclusive linspace)."""
    if isinstance(spec, list):
        values = spec
    elif isinstance(spec, dict):
        values = np.linspace(spec["start"], spec["stop"], int(spec["num"])).tolist()
    elif isinstance(spec, str):
        text = spec.strip()
        if not text:
            values = []
        elif ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise ConfigError(f"grid {spec!r}: expected start:stop:num")
            try:
                num = int(parts[2])
                values = np.linspace(float(parts[0]), float(parts[1]), num).tolist()
            except ValueError:
                raise ConfigError(f"grid {spec!r} is not numeric") from None
        else:
            try:
                values = [float(v) for v in text.split(",")]
            except ValueError:
                raise ConfigError(f"grid {spec!r} is not numeric") from None
    else:
        raise ConfigError(f"cannot read grid {spec!r}")
    try:
        values = [float(v) for v in values]
    except (TypeError, ValueError):
        raise ConfigError(f"grid {spec!r} is not numeric") from None
    if not values:
        raise ConfigError("empty grid")
    return values


def set_parameter(raw: dict, path: str, value: float) -> dict:
    """Copy of ``raw`` with the scalar at dotted ``path`` replaced.

    A path ending at a unit-tagged quantity sets its value and keeps the unit.
    """
    keys = path.split(".")
    out = copy.deepcopy(raw)
    node = out
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"unknown parameter path {path!r}")
        node = node[k]
    last = keys[-1]
    if not isinstance(node, dict) or last not in node:
        raise ConfigError(f"unknown parameter path {path!r}")
    target = node[last]
    if isinstance(target, dict) and set(target) == {"value", "unit"}:
        target["value"] = value
    elif isinstance(target, (int, float)) and not isinstance(target, bool):
        node[last] = int(value) if isinstance(target, int) and float(value).is_integer() else value
    else:
        raise ConfigError(f"parameter path {path!r} does not address a scalar")
    return out


def _index_row(summary: dict) -> dict[str, float]:
    """Numeric summary values for the index table; one-element lists are unwrapped."""
    row = {}
    for key, entry in summary.items():
        value = entry["value"]
        if isinstance(value, list) and len(value) == 1:
            value = value[0]
        if isinstance(value, (int, float)):
            row[key] = value
    return row


def sweep(raw: dict, path: str, grid, directory: Path, check: bool = False) -> list[int]:
    """Run one bundle per grid value into ``directory/point_XXX`` and write an index."""
    values = _grid_values(grid)
    configs = [parse_config(set_parameter(raw, path, v)) for v in values]
    entries, codes = [], []
    rows = []
    for i, (v, cfg) in enumerate(zip(values, configs)):
        sub = directory / f"point_{i:03d}"
        code = execute(cfg, sub, check)
        codes.append(code)
        entry = {"index": i, "value": v, "directory": sub.name, "exit_code": code}
        summary_file = sub / "summary.json"
        if summary_file.exists():
            summary = json.loads(summary_file.read_text())["summary"]
            entry["summary"] = summary
            rows.append((i, v, _index_row(summary)))
        entries.append(entry)
    directory.mkdir(parents=True, exist_ok=True)
    index = {"parameter": path, "points": entries}
    (directory / "index.json").write_text(json.dumps(index, sort_keys=True, indent=2) + "\n")
    keys = sorted({k for _, _, r in rows for k in r})
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["point", path] + keys)
    for i, v, r in rows:
        writer.writerow([i, "%.17g" % v] + ["%.17g" % r[k] if k in r else "" for k in keys])
    (directory / "index.csv").write_text(buf.getvalue())
    return codes


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gravchannel", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("config")
    p_run.add_argument("--check", action="store_true", help="evaluate the embedded assertions")
    p_run.add_argument("--out", help="output directory")
    p_run.add_argument("--seed", type=int, help="override ensemble.seed")
    p_sweep = sub.add_parser("sweep", help="run an experiment over a parameter grid")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--param", required=True, help="dotted path, e.g. model.epsilon")
    p_sweep.add_argument("--grid", required=True, help="'a,b,c' or 'start:stop:num'")
    p_sweep.add_argument("--check", action="store_true")
    p_sweep.add_argument("--out", help="output directory")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            cfg = load_config(args.config, args.seed)
            return execute(cfg, output_directory(cfg, args.out), args.check)
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}") from None
        base = parse_config(raw)
        codes = sweep(raw, args.param, args.grid, output_directory(base, args.out), args.check)
        return max(codes)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
