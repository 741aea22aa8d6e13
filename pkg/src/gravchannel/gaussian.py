"""First and second moments of the two-mode Gaussian state.

Units are hbar = m = omega = 1. Quadratures are ordered ``(x1, p1, x2, p2)``
and the covariance is ``sigma_ij = <{r_i, r_j}>/2 - <r_i><r_j>``, so the
vacuum has ``sigma = I/2``. Moments obey

    d<r>/dt = A <r>,        d sigma/dt = A sigma + sigma A^T + D.

Master equations covered (``c_k`` is the double-commutator coefficient):

* minimal:  -i[H0 + g x1 x2, rho] - (y/4) sum_k [x_k, [x_k, rho]],
  with ``y = 2g - epsilon`` (``epsilon = 0`` is the gravitational model).
* feedback: -i[H0, rho] - (i/2)(chi2 [x1, {x2, rho}] + chi1 [x2, {x1, rho}])
  - sum_k c_k [x_k, [x_k, rho]], where oscillator 1 is pushed by the record
  of oscillator 2 with gain chi2 (and vice versa), so
  ``c1 = Gamma1/2 + chi2^2/(8 Gamma2)`` and ``c2 = Gamma2/2 + chi1^2/(8 Gamma1)``.
* optional quantum Brownian motion on each oscillator:
  -(i gamma/2)[x, {p, rho}] - gamma T [x, [x, rho]]. Here ``gamma`` damps the
  momentum and ``T`` is in units of hbar omega / kB, so the stationary state
  is thermal with ``<p^2> = T`` in the classical limit. This normalisation
  makes the thermal diffusion ``2 gamma T`` equal the gravitational one
  exactly at ``T = g/(2 gamma)``. Below ``T ~ 1/2`` the Caldeira-Leggett form
  is not positivity preserving.

``H0 = sum_k (p_k^2 + w x_k^2)/2`` with ``w = 1 - g`` when ``shifted`` (the
bare frequency absorbs the static part of the gravitational gradient) and
``w = 1`` otherwise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .params import InstabilityError, OvercoupledError

log = logging.getLogger(__name__)

SIGMA2 = np.array([[0.0, 1.0], [-1.0, 0.0]])
SIGMA4 = np.kron(np.eye(2), SIGMA2)

UNCERTAINTY_TOL = 1e-9


class UncertaintyViolation(ValueError):
    """Covariance violates ``sigma + (i/2) Sigma >= 0``."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class Variant(str, Enum):
    FEEDBACK = "feedback"
    MINIMAL = "minimal"


@dataclass(frozen=True)
class QBM:
    gamma: float
    temperature: float

    def __post_init__(self):
        if self.gamma < 0 or self.temperature < 0:
            raise ValueError("QBM damping and temperature must be non-negative")


@dataclass(frozen=True)
class ModelSpec:
    variant: Variant
    g: float
    chi1: Optional[float] = None
    chi2: Optional[float] = None
    Gamma: Optional[float] = None
    Gamma2: Optional[float] = None
    epsilon: float = 0.0
    qbm: Optional[QBM] = None
    shifted: bool = True
    decoherence_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not (np.isfinite(self.g) and self.g >= 0):
            raise ValueError(f"g must be non-negative, got {self.g!r}")
        if self.variant is Variant.MINIMAL:
            if any(v is not None for v in (self.chi1, self.chi2, self.Gamma, self.Gamma2)):
                raise ValueError("the minimal model is fixed by g alone")
            if self.epsilon > 2 * self.g:
                raise ValueError("epsilon > 2g gives negative diffusion")
        else:
            if self.chi1 is None or self.chi2 is None or self.Gamma is None:
                raise ValueError("feedback model needs chi1, chi2 and Gamma")
            if not self.Gamma > 0 or (self.Gamma2 is not None and not self.Gamma2 > 0):
                raise ValueError("measurement rates must be positive")
            if self.epsilon != 0.0:
                raise ValueError("epsilon only applies to the minimal model")
        if self.shifted and self.g >= 1.0 and not self.decoherence_only:
            raise InstabilityError("shifted local frequency 1 - g must be positive")

    @classmethod
    def minimal(cls, g: float, **kwargs) -> "ModelSpec":
        return cls(Variant.MINIMAL, g, **kwargs)

    @classmethod
    def feedback(
        cls,
        g: float,
        chi1: Optional[float] = None,
        chi2: Optional[float] = None,
        Gamma: Optional[float] = None,
        **kwargs,
    ) -> "ModelSpec":
        """Feedback model; defaults to the minimal-noise point ``chi = g``, ``Gamma = g/2``."""
        chi1 = g if chi1 is None else chi1
        chi2 = chi1 if chi2 is None else chi2
        if Gamma is None:
            Gamma = 0.5 * abs(chi1) if chi1 else 0.5 * g
        return cls(Variant.FEEDBACK, g, chi1=chi1, chi2=chi2, Gamma=Gamma, **kwargs)

    @property
    def rates(self) -> tuple[float, float]:
        """Measurement rates ``(Gamma1, Gamma2)`` of the feedback model."""
        if self.variant is not Variant.FEEDBACK:
            raise ValueError("measurement rates belong to the feedback model")
        return self.Gamma, self.Gamma if self.Gamma2 is None else self.Gamma2

    @property
    def local_frequency_sq(self) -> float:
        return 1.0 - self.g if self.shifted else 1.0

    def cross_gains(self) -> tuple[float, float]:
        """``(k12, k21)``: force on p1 is ``-k12 x2``, on p2 ``-k21 x1``."""
        if self.variant is Variant.MINIMAL:
            return self.g, self.g
        return self.chi2, self.chi1

    def double_commutator_coefficients(self) -> tuple[float, float]:
        """Coefficient ``c_k`` of ``-c_k [x_k, [x_k, rho]]`` excluding the QBM bath."""
        if self.variant is Variant.MINIMAL:
            c = (2.0 * self.g - self.epsilon) / 4.0
            return c, c
        G1, G2 = self.rates
        return G1 / 2 + self.chi2**2 / (8 * G2), G2 / 2 + self.chi1**2 / (8 * G1)


@dataclass(frozen=True)
class Generator:
    A: np.ndarray
    D: np.ndarray


def check_physical(cov: np.ndarray, tol: float = UNCERTAINTY_TOL) -> float:
    """Smallest eigenvalue of ``cov + (i/2) Sigma``; raises if below ``-tol``."""
    lam = float(np.linalg.eigvalsh(cov + 0.5j * SIGMA4)[0])
    if not np.isfinite(lam) or lam < -tol:
        raise UncertaintyViolation(f"uncertainty relation violated (min eigenvalue {lam:.3e})")
    return lam


@dataclass(frozen=True)
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(4)
        cov = np.asarray(self.cov, dtype=float).reshape(4, 4)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if self.validate:
            if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
                raise UncertaintyViolation("non-finite moments")
            if np.max(np.abs(cov - cov.T)) > 1e-12 * max(1.0, np.max(np.abs(cov))):
                raise ValueError("covariance is not symmetric")
            check_physical(cov)

    @classmethod
    def vacuum(cls) -> "GaussianState":
        return cls(np.zeros(4), 0.5 * np.eye(4))

    @classmethod
    def thermal(cls, n1: float, n2: Optional[float] = None) -> "GaussianState":
        n2 = n1 if n2 is None else n2
        return cls(np.zeros(4), np.diag([n1 + 0.5, n1 + 0.5, n2 + 0.5, n2 + 0.5]))

    @classmethod
    def coherent(cls, alpha1: complex = 0.0, alpha2: complex = 0.0) -> "GaussianState":
        a1, a2 = complex(alpha1), complex(alpha2)
        mean = np.sqrt(2.0) * np.array([a1.real, a1.imag, a2.real, a2.imag])
        return cls(mean, 0.5 * np.eye(4))

    @classmethod
    def two_mode_squeezed(cls, s: float) -> "GaussianState":
        ch, sh = np.cosh(2 * s), np.sinh(2 * s)
        Z = np.diag([1.0, -1.0])
        cov = 0.5 * np.block([[ch * np.eye(2), sh * Z], [sh * Z, ch * np.eye(2)]])
        return cls(np.zeros(4), cov)


def build_generator(spec: ModelSpec) -> Generator:
    A = np.zeros((4, 4))
    if not spec.decoherence_only:
        w = spec.local_frequency_sq
        k12, k21 = spec.cross_gains()
        stiffness = np.array([[w, k12], [k21, w]])
        eig = np.linalg.eigvals(stiffness)
        if np.any(np.abs(eig.imag) > 0) or np.any(eig.real <= 0):
            raise OvercoupledError(f"stiffness eigenvalues {eig} are not all positive")
        for k in range(2):
            A[2 * k, 2 * k + 1] = 1.0
        A[1, 0], A[1, 2] = -w, -k12
        A[3, 2], A[3, 0] = -w, -k21
    c1, c2 = spec.double_commutator_coefficients()
    D = np.diag([0.0, 2.0 * c1, 0.0, 2.0 * c2])
    if spec.qbm is not None:
        for k in range(2):
            A[2 * k + 1, 2 * k + 1] -= spec.qbm.gamma
            D[2 * k + 1, 2 * k + 1] += 2.0 * spec.qbm.gamma * spec.qbm.temperature
    return Generator(A, D)


def _moment_rhs(A, D, mean, cov):
    return A @ mean, A @ cov + cov @ A.T + D


def propagate(state: GaussianState, gen: Generator, dt: float, n_steps: int) -> list[GaussianState]:
    """Fixed-step RK4 trajectory of the moments, ``n_steps + 1`` states including ``state``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    norm = np.linalg.norm(gen.A, 2)
    if dt * norm >= 0.1:
        raise ValueError(f"dt * |A| = {dt * norm:.3g} exceeds the RK4 stability guard 0.1")
    A, D = gen.A, gen.D
    mean, cov = state.mean.copy(), state.cov.copy()
    out = [state]
    for step in range(1, n_steps + 1):
        k1 = _moment_rhs(A, D, mean, cov)
        k2 = _moment_rhs(A, D, mean + 0.5 * dt * k1[0], cov + 0.5 * dt * k1[1])
        k3 = _moment_rhs(A, D, mean + 0.5 * dt * k2[0], cov + 0.5 * dt * k2[1])
        k4 = _moment_rhs(A, D, mean + dt * k3[0], cov + dt * k3[1])
        mean = mean + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        cov = cov + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        cov = 0.5 * (cov + cov.T)
        try:
            out.append(GaussianState(mean, cov))
        except UncertaintyViolation as exc:
            raise UncertaintyViolation(str(exc), step) from None
    return out


def phonon_numbers(state: GaussianState) -> tuple[float, float]:
    """Mean phonon number of each oscillator, means included."""
    second = np.diag(state.cov) + state.mean**2
    return 0.5 * (second[0] + second[1] - 1.0), 0.5 * (second[2] + second[3] - 1.0)


def steady_state_lyapunov(gen: Generator) -> GaussianState:
    """Stationary state solving ``A sigma + sigma A^T + D = 0``.

    Only exists with damping; the minimal model alone heats without bound.
    """
    eig = np.linalg.eigvals(gen.A)
    if np.max(eig.real) >= 0:
        raise InstabilityError(
            f"drift is not strictly stable (max Re eigenvalue {np.max(eig.real):.3g}); "
            "no steady state"
        )
    cov = scipy.linalg.solve_continuous_lyapunov(gen.A, -gen.D)
    cov = 0.5 * (cov + cov.T)
    residual = np.linalg.norm(gen.A @ cov + cov @ gen.A.T + gen.D)
    if residual >= 1e-10:
        raise ArithmeticError(f"Lyapunov residual {residual:.3e} too large")
    return GaussianState(np.zeros(4), cov)


def with_noise_scale(spec: ModelSpec, y: float) -> ModelSpec:
    """Minimal model with decoherence matrix ``Y = y I`` instead of ``2g I``."""
    if spec.variant is not Variant.MINIMAL:
        raise ValueError("noise rescaling is defined for the minimal model")
    return replace(spec, epsilon=2.0 * spec.g - y)


def stack_moments(states: Sequence[GaussianState]) -> tuple[np.ndarray, np.ndarray]:
    """Arrays ``(T, 4)`` and ``(T, 4, 4)`` of means and covariances."""
    return np.array([s.mean for s in states]), np.array([s.cov for s in states])
