"""SI setup of two gravitationally coupled oscillators and the closed-form rates.

Conventions
-----------
* The normal-mode splitting used internally is ``Delta = K / (m omega)`` with
  ``K = 2 G m1 m2 / d**3``, i.e. ``Delta = 2 G m / (omega d**3)`` for equal
  masses. The frequently quoted estimate ``G m / (omega d**3)`` is smaller by
  a factor of two; both are available from :func:`splitting_estimates`.
* Quality factor and damping rate are related by ``Q = omega / (2 gamma)``.
  With this convention ``hbar K / (2 m gamma kB)`` and ``hbar Q Delta / kB``
  are the same temperature.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .constants import CODATA2018, Constants


class SetupError(ValueError):
    """Invalid physical parameters."""


class InstabilityError(ValueError):
    """The quadratic potential is not confining."""


class OvercoupledError(InstabilityError):
    """The lower normal mode frequency is imaginary."""


@dataclass(frozen=True)
class PhysicalSetup:
    m1: float
    m2: float
    omega1: float
    omega2: float
    d: float
    rho: Optional[float] = None
    r: Optional[float] = None
    Q: Optional[float] = None
    gamma: Optional[float] = None
    T_bath: Optional[float] = None
    check_density: bool = True

    def __post_init__(self):
        for name in ("m1", "m2", "omega1", "omega2", "d"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise SetupError(f"{name} must be positive and finite, got {value!r}")
        for name in ("rho", "r", "Q", "gamma"):
            value = getattr(self, name)
            if value is not None and not (np.isfinite(value) and value > 0):
                raise SetupError(f"{name} must be positive when given, got {value!r}")
        if self.T_bath is not None and self.T_bath < 0:
            raise SetupError("T_bath must be non-negative")
        if self.r is not None:
            if self.d < 2 * self.r * (1 - 1e-12):
                raise SetupError(f"spheres overlap: d={self.d} < 2r={2 * self.r}")
            if self.rho is not None and self.check_density:
                m_sphere = sphere_mass(self.rho, self.r)
                for name in ("m1", "m2"):
                    m = getattr(self, name)
                    if abs(m - m_sphere) > 1e-9 * m_sphere:
                        raise SetupError(
                            f"{name}={m} inconsistent with density and radius (expected {m_sphere})"
                        )

    @classmethod
    def symmetric(cls, m: float, omega: float, d: float, **kwargs) -> "PhysicalSetup":
        return cls(m1=m, m2=m, omega1=omega, omega2=omega, d=d, **kwargs)

    @classmethod
    def spheres(
        cls, rho: float, r: float, omega: float, d: Optional[float] = None, **kwargs
    ) -> "PhysicalSetup":
        """Two identical homogeneous spheres; touching (``d = 2r``) unless ``d`` is given."""
        if rho <= 0 or r <= 0:
            raise SetupError("rho and r must be positive")
        m = sphere_mass(rho, r)
        return cls.symmetric(m, omega, 2 * r if d is None else d, rho=rho, r=r, **kwargs)

    @property
    def is_symmetric(self) -> bool:
        return math.isclose(self.m1, self.m2, rel_tol=1e-12) and math.isclose(
            self.omega1, self.omega2, rel_tol=1e-12
        )


def sphere_mass(rho: float, r: float) -> float:
    return 4.0 / 3.0 * math.pi * rho * r**3


def coupling_constant(setup: PhysicalSetup, c: Constants = CODATA2018) -> float:
    """Gradient of the mutual gravitational force, ``K = 2 G m1 m2 / d^3``."""
    if setup.d <= 0 or setup.m1 <= 0 or setup.m2 <= 0:
        raise SetupError("masses and separation must be positive")
    return 2.0 * c.G * setup.m1 * setup.m2 / setup.d**3


def shifted_frequencies(setup: PhysicalSetup, K: float) -> tuple[float, float]:
    """Local frequencies after absorbing the ``x_k^2`` part of the interaction."""
    out = []
    for m, omega in ((setup.m1, setup.omega1), (setup.m2, setup.omega2)):
        sq = omega**2 - K / m
        if sq <= 0:
            raise InstabilityError(
                f"omega^2={omega**2} <= K/m={K / m}: local potential is not confining"
            )
        out.append(math.sqrt(sq))
    return out[0], out[1]


def normal_modes(
    Omega1: float, Omega2: float, m1: float, m2: float, K: float
) -> tuple[float, float]:
    """Normal-mode frequencies ``(omega_plus, omega_minus)`` of the coupled pair."""
    coupling_sq = K**2 / (m1 * m2)
    mean = 0.5 * (Omega1**2 + Omega2**2)
    half_gap = 0.5 * math.sqrt((Omega1**2 - Omega2**2) ** 2 + 4.0 * coupling_sq)
    plus_sq = mean + half_gap
    # product of the roots avoids cancellation in mean - half_gap
    minus_sq = (Omega1**2 * Omega2**2 - coupling_sq) / plus_sq
    if minus_sq <= 0:
        raise OvercoupledError(f"omega_minus^2 = {minus_sq} <= 0 (overcoupled)")
    return math.sqrt(plus_sq), math.sqrt(minus_sq)


class Splitting(NamedTuple):
    approx: float
    exact: float


def mode_splitting(K: float, m: float, omega: float) -> Splitting:
    """Weak-coupling splitting ``K/(m omega)`` and the exact ``omega_+ - omega_-``.

    Symmetric case only: ``omega_+ = omega`` and
    ``omega_- = omega sqrt(1 - 2K/(m omega^2))``.
    """
    if m <= 0 or omega <= 0 or K < 0:
        raise SetupError("need m > 0, omega > 0, K >= 0")
    strength = 2.0 * K / (m * omega**2)
    if strength >= 1.0:
        raise OvercoupledError(f"2K/(m omega^2) = {strength} >= 1")
    if strength > 0.1:
        warnings.warn(
            f"coupling 2K/(m omega^2) = {strength:.3g} is not weak; "
            "the K/(m omega) approximation is poor",
            stacklevel=2,
        )
    exact = omega * (1.0 - math.sqrt(1.0 - strength))
    return Splitting(K / (m * omega), exact)


def splitting_bound(rho: float, omega: float, c: Constants = CODATA2018) -> float:
    """Largest splitting for touching spheres, ``pi G rho / (6 omega)``.

    This is the value behind the ~1e-7 s^-1 uranium estimate. It assumes
    ``Delta = G m / (omega d^3)``; see :func:`splitting_bound_consistent`.
    """
    if rho <= 0 or omega <= 0:
        raise SetupError("rho and omega must be positive")
    return math.pi * c.G * rho / (6.0 * omega)


def splitting_bound_consistent(rho: float, omega: float, c: Constants = CODATA2018) -> float:
    """Touching-sphere value of ``K/(m omega)``: twice :func:`splitting_bound`."""
    if rho <= 0 or omega <= 0:
        raise SetupError("rho and omega must be positive")
    return math.pi * c.G * rho / (3.0 * omega)


def splitting_estimates(setup: PhysicalSetup, c: Constants = CODATA2018) -> dict[str, float]:
    """Every variant of the splitting formula, evaluated for a symmetric setup.

    Keys: ``coupling`` (K/(m omega)), ``point_mass`` (G m/(omega d^3)),
    ``exact`` (omega_+ - omega_-) and, when rho is known, ``sphere_printed``
    (4 pi G rho (r/d)^3 / omega), ``bound`` and ``bound_consistent``.
    """
    if not setup.is_symmetric:
        raise SetupError("splitting estimates need m1 == m2 and omega1 == omega2")
    m, omega = setup.m1, setup.omega1
    K = coupling_constant(setup, c)
    split = mode_splitting(K, m, omega)
    out = {
        "coupling": split.approx,
        "exact": split.exact,
        "point_mass": c.G * m / (omega * setup.d**3),
    }
    if setup.rho is not None:
        if setup.r is not None:
            out["sphere_printed"] = 4 * math.pi * c.G * setup.rho / omega * (setup.r / setup.d) ** 3
        out["bound"] = splitting_bound(setup.rho, omega, c)
        out["bound_consistent"] = splitting_bound_consistent(setup.rho, omega, c)
    return out


class GravRates(NamedTuple):
    D_grav: float
    R_grav: float
    Lambda_grav: float


def gravitational_rates(K: float, m: float, omega: float, hbar: float = CODATA2018.hbar) -> GravRates:
    """Momentum diffusion ``hbar K``, heating ``K/(2 m omega)`` and decoherence ``K/(4 m omega)``."""
    if K < 0 or m <= 0 or omega <= 0 or hbar <= 0:
        raise SetupError("need K >= 0 and positive m, omega, hbar")
    return GravRates(hbar * K, K / (2.0 * m * omega), K / (4.0 * m * omega))


def effective_temperature(
    K: float,
    m: float,
    omega: float,
    *,
    gamma: Optional[float] = None,
    Q: Optional[float] = None,
    Delta: Optional[float] = None,
    c: Constants = CODATA2018,
) -> float:
    """Bath temperature whose thermal diffusion equals the gravitational one.

    With ``Q`` the result is ``hbar Q Delta / kB`` (``Delta`` defaults to
    ``K/(m omega)``); with only ``gamma`` it is ``hbar K / (2 m gamma kB)``.
    If both are given they must obey ``Q = omega/(2 gamma)``.
    """
    if gamma is None and Q is None:
        raise SetupError("effective temperature needs gamma or Q")
    if gamma is not None and gamma <= 0:
        raise SetupError("gamma must be positive")
    if Q is not None and Q <= 0:
        raise SetupError("Q must be positive")
    if gamma is not None and Q is not None:
        if abs(Q - omega / (2.0 * gamma)) > 1e-6 * Q:
            raise SetupError(f"Q={Q} and gamma={gamma} violate Q = omega/(2 gamma)")
    if Q is None:
        return c.hbar * K / (2.0 * m * gamma * c.kB)
    if Delta is None:
        Delta = K / (m * omega)
    return c.hbar * Q * Delta / c.kB


def feedback_noise(Gamma: float, chi: float) -> float:
    """Double-commutator coefficient per oscillator from measurement plus feedback."""
    return Gamma / 2.0 + chi**2 / (8.0 * Gamma)


def noise_minimizer(chi: float) -> tuple[float, float]:
    """Measurement rate minimising :func:`feedback_noise`, and the minimum (both ``chi/2``)."""
    if not chi > 0:
        raise SetupError(f"feedback gain must be positive, got {chi!r}")
    gamma_opt = chi / 2.0
    return gamma_opt, feedback_noise(gamma_opt, chi)


def dimensionless_model(K: float, m: float, omega: float) -> tuple[float, np.ndarray]:
    """Coupling ``g = K/(m omega)`` and decoherence matrix ``Y = 2 g I``."""
    if K < 0 or m <= 0 or omega <= 0:
        raise SetupError("need K >= 0 and positive m, omega")
    g = K / (m * omega)
    return g, 2.0 * g * np.eye(2)


@dataclass(frozen=True)
class DerivedRates:
    K: float
    Omega1: float
    Omega2: float
    omega_plus: float
    omega_minus: float
    Delta: float
    g: Optional[float]
    D_grav: Optional[float]
    R_grav: Optional[float]
    Lambda_grav: Optional[float]
    T_grav: Optional[float]


def derive_rates(setup: PhysicalSetup, c: Constants = CODATA2018) -> DerivedRates:
    """All closed-form quantities for ``setup``.

    ``Delta`` is the exact normal-mode splitting. The per-oscillator rates
    need a symmetric setup and are ``None`` otherwise; ``T_grav`` also needs
    ``Q`` or ``gamma``.
    """
    K = coupling_constant(setup, c)
    O1, O2 = shifted_frequencies(setup, K)
    wp, wm = normal_modes(O1, O2, setup.m1, setup.m2, K)
    g = D = R = L = T = None
    if setup.is_symmetric:
        m, omega = setup.m1, setup.omega1
        g = K / (m * omega)
        D, R, L = gravitational_rates(K, m, omega, c.hbar)
        if setup.Q is not None or setup.gamma is not None:
            T = effective_temperature(K, m, omega, gamma=setup.gamma, Q=setup.Q, c=c)
    return DerivedRates(K, O1, O2, wp, wm, wp - wm, g, D, R, L, T)


def model_coupling(setup: PhysicalSetup, c: Constants = CODATA2018) -> float:
    """Coupling in units where time is measured in ``1/omega``: ``K/(m omega^2)``."""
    if not setup.is_symmetric:
        raise SetupError("the dimensionless model assumes identical oscillators")
    return coupling_constant(setup, c) / (setup.m1 * setup.omega1**2)
