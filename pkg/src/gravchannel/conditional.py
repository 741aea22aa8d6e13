"""Conditional dynamics of the measurement-and-feedback channel at the Gaussian level.

Each oscillator's position is measured continuously. The dimensionless record is

    dJ_k = <x_k>_c dt + dW_k / (2 sqrt(Gamma_k)),

and the feedback Hamiltonian is ``chi1 (dJ1/dt) x2 + chi2 (dJ2/dt) x1``, so
oscillator 1 is pushed by record 2 with gain ``chi2`` and oscillator 2 by
record 1 with gain ``chi1``. The record noise ``1/(4 Gamma)`` is the value for
which the ensemble average reproduces the ``chi^2/(8 Gamma)`` feedback
diffusion of the unconditional model.

For Gaussian states the stochastic master equation reduces to a Kalman-Bucy
filter. The conditional covariance follows a deterministic Riccati equation

    dV = (A V + V A^T + D_meas - 4 sum_k Gamma_k V c_k c_k^T V) dt,

and the conditional mean

    dm = A m dt + sum_k 2 sqrt(Gamma_k) V c_k dW_k + b_k dJ_k,

where ``A`` holds only the local dynamics (no cross coupling), ``D_meas`` the
measurement back-action ``Gamma_k`` on each momentum, and ``b_k`` the feedback
kick. The means are stepped with Euler-Maruyama. The covariance uses RK4 on
the same grid: an Euler step pushes a pure state outside the uncertainty
region by O(dt^2) per step.

Random numbers: every Wiener process has its own Philox stream. A single
trajectory with seed ``s`` uses the two children of ``SeedSequence(s)``; member
``i`` of an ensemble uses the two children of
``SeedSequence(s, spawn_key=(i,))``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .gaussian import (
    GaussianState,
    ModelSpec,
    UncertaintyViolation,
    Variant,
    check_physical,
)

log = logging.getLogger(__name__)

_X = (0, 2)
_P = (1, 3)


class FeedbackAuditError(AssertionError):
    """Recorded feedback does not match what the integrator applied."""


@dataclass(frozen=True)
class NoiseConfig:
    seed: int
    dt: float
    n_steps: int
    Gamma1: Optional[float] = None
    Gamma2: Optional[float] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        for rate in (self.Gamma1, self.Gamma2):
            if rate is not None and not rate > 0:
                raise ValueError("measurement rates must be positive")


class FilterState(GaussianState):
    @property
    def cond_mean(self) -> np.ndarray:
        return self.mean

    @property
    def cond_cov(self) -> np.ndarray:
        return self.cov


@dataclass(frozen=True)
class TrajectoryRecord:
    times: np.ndarray
    dJ: np.ndarray  # (n_steps, 2)
    dW: np.ndarray  # (n_steps, 2)
    forces: np.ndarray  # (n_steps, 2): force on oscillator 1, 2 during each step
    means: np.ndarray  # (n_steps + 1, 4)
    covs: np.ndarray  # (n_steps + 1, 4, 4)
    spec: ModelSpec

    @property
    def dJ1(self) -> np.ndarray:
        return self.dJ[:, 0]

    @property
    def dJ2(self) -> np.ndarray:
        return self.dJ[:, 1]

    @property
    def states(self) -> list[FilterState]:
        return [FilterState(m, v, validate=False) for m, v in zip(self.means, self.covs)]


def resolve_spec(spec: ModelSpec, noise: NoiseConfig) -> ModelSpec:
    """Feedback spec with the measurement rates overridden by ``noise`` where given."""
    if spec.variant is not Variant.FEEDBACK:
        raise ValueError("conditional dynamics need the feedback model (chi1, chi2, Gamma)")
    if spec.decoherence_only:
        raise ValueError("the feedback force cannot be separated from its own noise")
    G1, G2 = spec.rates
    G1 = G1 if noise.Gamma1 is None else noise.Gamma1
    G2 = G2 if noise.Gamma2 is None else noise.Gamma2
    return replace(spec, Gamma=G1, Gamma2=G2)


def wiener_streams(seed: int, trajectory: Optional[int] = None) -> list[np.random.Generator]:
    key = () if trajectory is None else (int(trajectory),)
    root = np.random.SeedSequence(seed, spawn_key=key)
    return [np.random.Generator(np.random.Philox(child)) for child in root.spawn(2)]


def wiener_increments(noise: NoiseConfig, trajectory: Optional[int] = None) -> np.ndarray:
    """Increments ``(n_steps, 2)`` with variance ``dt``; column k drives oscillator k's record."""
    scale = np.sqrt(noise.dt)
    streams = wiener_streams(noise.seed, trajectory)
    return np.stack([scale * s.standard_normal(noise.n_steps) for s in streams], axis=1)


def filter_matrices(spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Local drift ``A`` and measurement/bath diffusion for the conditional filter."""
    A = np.zeros((4, 4))
    G = spec.rates
    D = np.diag([0.0, G[0], 0.0, G[1]])
    w = spec.local_frequency_sq
    for k in range(2):
        A[2 * k, 2 * k + 1] = 1.0
        A[2 * k + 1, 2 * k] = -w
    if spec.qbm is not None:
        for k in range(2):
            A[2 * k + 1, 2 * k + 1] -= spec.qbm.gamma
            D[2 * k + 1, 2 * k + 1] += 2.0 * spec.qbm.gamma * spec.qbm.temperature
    return A, D


def _feedback_gains(spec: ModelSpec) -> tuple[float, float]:
    """``(gain on oscillator 1 from record 2, gain on oscillator 2 from record 1)``."""
    return spec.chi2, spec.chi1


def riccati_series(spec: ModelSpec, cov0: np.ndarray, dt: float, n_steps: int) -> np.ndarray:
    """Conditional covariances ``(n_steps + 1, 4, 4)``; independent of the record."""
    A, D = filter_matrices(spec)
    G = spec.rates
    covs = np.empty((n_steps + 1, 4, 4))
    V = np.array(cov0, dtype=float)
    covs[0] = V

    def rhs(V):
        gain = sum(4.0 * G[k] * np.outer(V[:, _X[k]], V[_X[k], :]) for k in range(2))
        return A @ V + V @ A.T + D - gain

    for n in range(1, n_steps + 1):
        k1 = rhs(V)
        k2 = rhs(V + 0.5 * dt * k1)
        k3 = rhs(V + 0.5 * dt * k2)
        k4 = rhs(V + dt * k3)
        V = V + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        V = 0.5 * (V + V.T)
        try:
            check_physical(V)
        except UncertaintyViolation as exc:
            raise UncertaintyViolation(str(exc), n) from None
        covs[n] = V
    return covs


def _innovation_gains(spec: ModelSpec, covs: np.ndarray) -> np.ndarray:
    """``2 sqrt(Gamma_k) V c_k`` per step: shape ``(n_steps + 1, 4, 2)``."""
    G = np.asarray(spec.rates)
    return 2.0 * np.sqrt(G)[None, None, :] * covs[:, :, list(_X)]


def _step_means(M, A, gains, dW, dt, sqrtG, fb):
    """One Euler-Maruyama step for a batch of means ``M`` (B, 4)."""
    dJ = M[:, list(_X)] * dt + dW / (2.0 * sqrtG)
    forces = np.stack([-fb[0] * dJ[:, 1], -fb[1] * dJ[:, 0]], axis=1) / dt
    M_new = M + (M @ A.T) * dt + dW @ gains.T
    M_new[:, _P[0]] += forces[:, 0] * dt
    M_new[:, _P[1]] += forces[:, 1] * dt
    return M_new, dJ, forces


def simulate_trajectory(
    spec: ModelSpec,
    noise: NoiseConfig,
    initial: GaussianState,
    increments: Optional[np.ndarray] = None,
    trajectory: Optional[int] = None,
) -> TrajectoryRecord:
    """One conditional trajectory of the Gaussian filter.

    ``increments`` (shape ``(n_steps, 2)``) replaces the seeded Wiener path,
    e.g. to share a path with the Fock-space solver.
    """
    spec = resolve_spec(spec, noise)
    dt, n = noise.dt, noise.n_steps
    dW = wiener_increments(noise, trajectory) if increments is None else np.asarray(increments, float)
    if dW.shape != (n, 2):
        raise ValueError(f"increments must have shape {(n, 2)}")
    covs = riccati_series(spec, initial.cov, dt, n)
    gains = _innovation_gains(spec, covs)
    A, _ = filter_matrices(spec)
    sqrtG = np.sqrt(np.asarray(spec.rates))
    fb = _feedback_gains(spec)

    means = np.empty((n + 1, 4))
    dJ = np.empty((n, 2))
    forces = np.empty((n, 2))
    M = initial.mean[None, :].copy()
    means[0] = M[0]
    for i in range(n):
        M, dJ_i, f_i = _step_means(M, A, gains[i], dW[i : i + 1], dt, sqrtG, fb)
        if not np.all(np.isfinite(M)):
            raise FloatingPointError(f"non-finite conditional mean at step {i + 1}")
        means[i + 1], dJ[i], forces[i] = M[0], dJ_i[0], f_i[0]
    times = dt * np.arange(n + 1)
    return TrajectoryRecord(times, dJ, dW, forces, means, covs, spec)


@dataclass(frozen=True)
class Ensemble:
    """Many conditional trajectories, stored at every ``stride``-th step."""

    times: np.ndarray
    means: np.ndarray  # (n_traj, T, 4)
    covs: np.ndarray  # (T, 4, 4), shared by all members
    spec: ModelSpec

    def moments(self) -> "EnsembleMoments":
        return reconstruct(self.means, self.covs, self.times)


def simulate_ensemble(
    spec: ModelSpec,
    noise: NoiseConfig,
    initial: GaussianState,
    n_traj: int,
    stride: int = 1,
    chunk: int = 500,
) -> Ensemble:
    """Trajectories ``0 .. n_traj-1`` of the seeded family, vectorised over members.

    Member ``i`` agrees with ``simulate_trajectory(..., trajectory=i)``.
    """
    if n_traj < 1:
        raise ValueError("need at least one trajectory")
    spec = resolve_spec(spec, noise)
    dt, n = noise.dt, noise.n_steps
    covs = riccati_series(spec, initial.cov, dt, n)
    gains = _innovation_gains(spec, covs)
    A, _ = filter_matrices(spec)
    sqrtG = np.sqrt(np.asarray(spec.rates))
    fb = _feedback_gains(spec)
    keep = np.arange(0, n + 1, stride)
    out = np.empty((n_traj, keep.size, 4))
    for lo in range(0, n_traj, chunk):
        members = range(lo, min(lo + chunk, n_traj))
        dW = np.stack([wiener_increments(noise, i) for i in members])
        M = np.repeat(initial.mean[None, :], len(members), axis=0)
        out[lo : lo + len(members), 0] = M
        j = 1
        for i in range(n):
            M, _, _ = _step_means(M, A, gains[i], dW[:, i], dt, sqrtG, fb)
            if (i + 1) % stride == 0:
                out[lo : lo + len(members), j] = M
                j += 1
        if not np.all(np.isfinite(M)):
            raise FloatingPointError("non-finite conditional means in ensemble")
    return Ensemble(dt * keep, out, covs[keep], spec)


@dataclass(frozen=True)
class EnsembleMoments:
    times: np.ndarray
    mean: np.ndarray  # (T, 4)
    cov: np.ndarray  # (T, 4, 4)


def reconstruct(means: np.ndarray, avg_cov: np.ndarray, times: np.ndarray) -> EnsembleMoments:
    """Law of total covariance: ``E[V_c] + Cov(m_c)``.

    ``means`` is ``(n_traj, T, 4)`` and ``avg_cov`` the ensemble-averaged
    conditional covariance ``(T, 4, 4)``. The spread uses the unbiased
    estimator (zero for a single record).
    """
    n_traj = means.shape[0]
    mean = means.mean(axis=0)
    if n_traj > 1:
        dev = means - mean
        spread = np.einsum("nti,ntj->tij", dev, dev) / (n_traj - 1)
    else:
        spread = np.zeros_like(avg_cov)
    return EnsembleMoments(np.asarray(times), mean, avg_cov + spread)


def ensemble_moments(records: Sequence[TrajectoryRecord]) -> EnsembleMoments:
    if not records:
        raise ValueError("no records")
    times = records[0].times
    for rec in records[1:]:
        if rec.times.shape != times.shape or not np.array_equal(rec.times, times):
            raise ValueError("records have mismatched time grids")
    means = np.stack([r.means for r in records])
    avg_cov = np.mean([r.covs for r in records], axis=0)
    return reconstruct(means, avg_cov, times)


def bootstrap_cov_errors(
    means: np.ndarray, n_boot: int = 200, seed: int = 0
) -> np.ndarray:
    """Bootstrap standard error of the sample covariance of ``means`` (n_traj, T, 4)."""
    rng = np.random.default_rng(seed)
    n_traj = means.shape[0]
    samples = np.empty((n_boot,) + means.shape[1:] + (4,))
    for b in range(n_boot):
        pick = means[rng.integers(0, n_traj, n_traj)]
        dev = pick - pick.mean(axis=0)
        samples[b] = np.einsum("nti,ntj->tij", dev, dev) / (n_traj - 1)
    return samples.std(axis=0, ddof=1)


def feedback_force_audit(record: TrajectoryRecord, spec: Optional[ModelSpec] = None) -> np.ndarray:
    """Recompute the feedback forces from the stored record and check the integrator.

    Two checks: the stored forces equal ``-gain * dJ_other / dt`` bit for bit,
    and the momentum kicks implied by consecutive stored means (after removing
    the local drift and the innovation) equal ``force * dt``.
    """
    spec = record.spec if spec is None else spec
    fb = _feedback_gains(spec)
    dt = record.times[1] - record.times[0]
    expected = np.stack([-fb[0] * record.dJ[:, 1], -fb[1] * record.dJ[:, 0]], axis=1) / dt
    if not np.array_equal(expected, record.forces):
        worst = np.max(np.abs(expected - record.forces))
        raise FeedbackAuditError(f"stored forces differ from recomputed ones by {worst:.3e}")
    A, _ = filter_matrices(spec)
    gains = _innovation_gains(spec, record.covs)
    m = record.means
    predicted = m[:-1] + (m[:-1] @ A.T) * dt + np.einsum("nij,nj->ni", gains[:-1], record.dW)
    kick = m[1:] - predicted
    scale = 1e-10 * max(1.0, np.max(np.abs(m)))
    if np.max(np.abs(kick[:, list(_X)])) > scale:
        raise FeedbackAuditError("feedback changed a position mean")
    applied = kick[:, list(_P)] / dt
    if np.max(np.abs(applied - record.forces)) * dt > scale:
        raise FeedbackAuditError("applied momentum kicks do not match the recorded forces")
    return expected
