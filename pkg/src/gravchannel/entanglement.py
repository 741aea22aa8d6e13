"""Entanglement of two-mode Gaussian states and the non-entangling channel test."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .gaussian import SIGMA2, SIGMA4, GaussianState, check_physical

CRITERION_TOL = 1e-12

# momentum reflection of mode 2 = partial transpose
_PT = np.diag([1.0, 1.0, 1.0, -1.0])


@dataclass(frozen=True)
class SymplecticForm:
    sigma2: np.ndarray = SIGMA2
    Sigma4: np.ndarray = SIGMA4


@dataclass(frozen=True)
class ChannelCriterionResult:
    eigenvalues: tuple[float, float]
    non_entangling: bool


def channel_criterion(Y, g: float) -> ChannelCriterionResult:
    """Eigenvalues of the Hermitian matrix ``Y - 2 i g sigma``.

    The channel cannot entangle Gaussian states iff both are non-negative.
    Closed form: ``tr(Y)/2 -+ hypot((Y11 - Y22)/2, Y12, 2g)``.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.shape != (2, 2):
        raise ValueError("Y must be 2x2")
    if Y[0, 1] != Y[1, 0]:
        raise ValueError("Y must be symmetric")
    centre = 0.5 * (Y[0, 0] + Y[1, 1])
    radius = math.hypot(0.5 * (Y[0, 0] - Y[1, 1]), Y[0, 1], 2.0 * g)
    low, high = centre - radius, centre + radius
    return ChannelCriterionResult((low, high), bool(low >= -CRITERION_TOL))


def symplectic_eigenvalues(cov: np.ndarray) -> np.ndarray:
    """Symplectic eigenvalues of a 4x4 covariance, ascending (vacuum gives 1/2, 1/2).

    Uses the Hermitian form ``L^T (i Sigma) L`` with ``cov = L L^T``, which is
    accurate near the degenerate (vacuum-like) case.
    """
    L = np.linalg.cholesky(cov)
    nu = np.linalg.eigvalsh(1j * (L.T @ SIGMA4 @ L))
    return np.sort(np.abs(nu))[::2]


def log_negativity(state: GaussianState) -> float:
    """Logarithmic negativity ``max(0, -log2(2 nu))`` (vacuum variance 1/2)."""
    cov = np.asarray(state.cov if isinstance(state, GaussianState) else state, dtype=float)
    check_physical(cov)
    nu = symplectic_eigenvalues(_PT @ cov @ _PT)[0]
    return max(0.0, -math.log2(2.0 * nu))


def entanglement_along_trajectory(states: Sequence[GaussianState]) -> np.ndarray:
    return np.array([log_negativity(s) for s in states])
