"""Gravitationally coupled oscillators as a noisy quantum channel.

Closed-form rates for an SI setup (:mod:`.params`), Gaussian moment dynamics
(:mod:`.gaussian`), entanglement diagnostics (:mod:`.entanglement`),
measurement-and-feedback trajectories (:mod:`.conditional`), a truncated
Fock-space reference solver (:mod:`.fock`) and an experiment runner
(:mod:`.cli`).
"""

__version__ = "0.1.0"

from .constants import CODATA2018, Constants
from .params import (
    InstabilityError,
    OvercoupledError,
    PhysicalSetup,
    SetupError,
    derive_rates,
    effective_temperature,
    gravitational_rates,
    mode_splitting,
    splitting_bound,
)
from .gaussian import (
    QBM,
    GaussianState,
    Generator,
    ModelSpec,
    UncertaintyViolation,
    Variant,
    build_generator,
    propagate,
    steady_state_lyapunov,
)
from .entanglement import channel_criterion, log_negativity, symplectic_eigenvalues
from .conditional import NoiseConfig, simulate_ensemble, simulate_trajectory
from .fock import FockConfig, FockState, evolve_conditional, evolve_unconditional

__all__ = [
    "CODATA2018",
    "Constants",
    "InstabilityError",
    "OvercoupledError",
    "PhysicalSetup",
    "SetupError",
    "derive_rates",
    "effective_temperature",
    "gravitational_rates",
    "mode_splitting",
    "splitting_bound",
    "QBM",
    "GaussianState",
    "Generator",
    "ModelSpec",
    "UncertaintyViolation",
    "Variant",
    "build_generator",
    "propagate",
    "steady_state_lyapunov",
    "channel_criterion",
    "log_negativity",
    "symplectic_eigenvalues",
    "NoiseConfig",
    "simulate_ensemble",
    "simulate_trajectory",
    "FockConfig",
    "FockState",
    "evolve_conditional",
    "evolve_unconditional",
]
