import math
from dataclasses import replace

import numpy as np
import pytest

from gravchannel.conditional import NoiseConfig
from gravchannel.fock import (
    FockConfig,
    FockInvariantError,
    FockState,
    LeakageError,
    _left,
    _right,
    build_operators,
    check_state,
    coherence_decay_probe,
    evolve_conditional,
    evolve_unconditional,
    liouvillian,
    trace_distance,
)
from gravchannel.gaussian import QBM, GaussianState, ModelSpec, build_generator, propagate, stack_moments

G = 0.05


def _dense_liouvillian(spec, N):
    """Superoperator (row-major vec) built from Kronecker products, term by term."""
    ops = build_operators(N)
    I = np.eye(N)
    x1, x2 = np.kron(ops.x, I), np.kron(I, ops.x)
    p1, p2 = np.kron(ops.p, I), np.kron(I, ops.p)
    Id = np.eye(N * N)

    def left(A):
        return np.kron(A, Id)

    def right(A):
        return np.kron(Id, A.T)

    def comm(A):
        return left(A) - right(A)

    def anti(A):
        return left(A) + right(A)

    w = spec.local_frequency_sq
    H0 = 0.5 * (p1 @ p1 + w * x1 @ x1 + p2 @ p2 + w * x2 @ x2)
    L = -1j * comm(H0)
    c1, c2 = spec.double_commutator_coefficients()
    if spec.variant.value == "minimal":
        L += -1j * spec.g * comm(x1 @ x2)
    else:
        L += -0.5j * (spec.chi2 * comm(x1) @ anti(x2) + spec.chi1 * comm(x2) @ anti(x1))
    L += -c1 * comm(x1) @ comm(x1) - c2 * comm(x2) @ comm(x2)
    if spec.qbm is not None:
        gm, T = spec.qbm.gamma, spec.qbm.temperature
        for x, p in ((x1, p1), (x2, p2)):
            L += -0.5j * gm * comm(x) @ anti(p) - gm * T * comm(x) @ comm(x)
    return L


def test_qubit_truncation():
    a = build_operators(2).a
    np.testing.assert_array_equal(a, [[0, 1], [0, 0]])


def test_truncated_commutator():
    N = 8
    ops = build_operators(N)
    comm = ops.x @ ops.p - ops.p @ ops.x
    expected = 1j * np.eye(N)
    expected[-1, -1] = -1j * (N - 1)
    np.testing.assert_allclose(comm, expected, atol=1e-13)
    assert FockState.vacuum(N).expect(np.kron(ops.x @ ops.x, np.eye(N))).real == pytest.approx(0.5)


def test_tensor_application_matches_kron():
    rng = np.random.default_rng(0)
    N = 5
    rho = rng.normal(size=(N * N, N * N)) + 1j * rng.normal(size=(N * N, N * N))
    op = rng.normal(size=(N, N)) + 1j * rng.normal(size=(N, N))
    I = np.eye(N)
    np.testing.assert_allclose(_left(op, rho, 0), np.kron(op, I) @ rho, atol=1e-12)
    np.testing.assert_allclose(_left(op, rho, 1), np.kron(I, op) @ rho, atol=1e-12)
    np.testing.assert_allclose(_right(rho, op, 0), rho @ np.kron(op, I), atol=1e-12)
    np.testing.assert_allclose(_right(rho, op, 1), rho @ np.kron(I, op), atol=1e-12)


@pytest.mark.parametrize(
    "spec",
    [
        ModelSpec.minimal(G),
        ModelSpec.minimal(G, epsilon=0.03, shifted=False),
        ModelSpec.feedback(G, chi1=0.03, chi2=0.07, Gamma=0.02, Gamma2=0.04),
        ModelSpec.feedback(G, qbm=QBM(0.02, 1.5)),
        ModelSpec.minimal(G, decoherence_only=True),
    ],
)
def test_liouvillian_matches_dense_oracle(spec):
    N = 4
    rng = np.random.default_rng(1)
    X = rng.normal(size=(N * N, N * N)) + 1j * rng.normal(size=(N * N, N * N))
    H = X + X.conj().T
    L = _dense_liouvillian(spec, N)
    if spec.decoherence_only:
        c = spec.double_commutator_coefficients()[0]
        ops = build_operators(N)
        I, Id = np.eye(N), np.eye(N * N)
        L = np.zeros_like(L)
        for x in (np.kron(ops.x, I), np.kron(I, ops.x)):
            cx = np.kron(x, Id) - np.kron(Id, x.T)
            L -= c * cx @ cx
    for arg, herm in ((X, False), (H, True)):
        got = liouvillian(spec, N, hermitian=herm)(arg)
        want = (L @ arg.reshape(-1)).reshape(arg.shape)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_closed_system_coherent_oscillation():
    N, alpha, dt, n = 15, 0.5, 0.01, 314
    spec = ModelSpec.minimal(0.0)
    traj = evolve_unconditional(FockState.coherent(N, alpha), spec, dt, n, FockConfig(N), stride=157)
    means, _ = traj.moments()
    x0 = math.sqrt(2) * alpha
    np.testing.assert_allclose(means[:, 0], x0 * np.cos(traj.times), atol=1e-8)
    np.testing.assert_allclose(means[:, 1], -x0 * np.sin(traj.times), atol=1e-8)


def test_vacuum_heating_slope():
    N, dt = 20, 1e-4
    traj = evolve_unconditional(FockState.vacuum(N), ModelSpec.minimal(G), dt, 1, FockConfig(N))
    n1, n2 = traj.states[1].phonon_numbers()
    assert n1 / dt == pytest.approx(G / 2, abs=1e-6)
    assert n2 / dt == pytest.approx(G / 2, abs=1e-6)


def test_moments_match_gaussian_engine():
    N, dt, n = 20, 0.05, 100
    spec = ModelSpec.minimal(G)
    traj = evolve_unconditional(FockState.coherent(N, 0.5, 0.3j), spec, dt, n, FockConfig(N), stride=10)
    fm, fc = traj.moments()
    gm, gc = stack_moments(
        propagate(GaussianState.coherent(0.5, 0.3j), build_generator(spec), 0.01, 500)[::50]
    )
    assert np.max(np.abs(fm - gm)) <= 1e-4
    assert np.max(np.abs(fc - gc)) <= 1e-4


def test_feedback_minimal_point_equals_minimal_model():
    N, dt, n = 10, 0.02, 100
    rho0 = FockState.coherent(N, 0.4, -0.2)
    a = evolve_unconditional(rho0, ModelSpec.minimal(G), dt, n, FockConfig(N), stride=20)
    b = evolve_unconditional(rho0, ModelSpec.feedback(G), dt, n, FockConfig(N), stride=20)
    for sa, sb in zip(a.states, b.states):
        assert trace_distance(sa.rho, sb.rho) <= 1e-10


def test_linearity():
    N, dt, n = 8, 0.02, 50
    spec = ModelSpec.feedback(G, chi1=0.03, chi2=0.06, Gamma=0.02)
    ra, rb = FockState.coherent(N, 0.3), FockState.thermal(N, 0.2, 0.1)
    mix = FockState(0.5 * (ra.rho + rb.rho))
    cfg = FockConfig(N, leakage_tol=1e-4)
    ea = evolve_unconditional(ra, spec, dt, n, cfg, stride=n).states[-1].rho
    eb = evolve_unconditional(rb, spec, dt, n, cfg, stride=n).states[-1].rho
    em = evolve_unconditional(mix, spec, dt, n, cfg, stride=n).states[-1].rho
    assert np.max(np.abs(em - 0.5 * (ea + eb))) <= 1e-10


def test_truncation_convergence():
    spec = ModelSpec.minimal(G, decoherence_only=True)
    out = []
    for N in (15, 20):
        traj = evolve_unconditional(FockState.vacuum(N), spec, 0.01, 10, FockConfig(N), stride=10)
        out.append(traj.moments())
    assert np.max(np.abs(out[0][0] - out[1][0])) < 1e-6
    assert np.max(np.abs(out[0][1] - out[1][1])) < 1e-6


@pytest.mark.parametrize(
    "spec",
    [
        ModelSpec.minimal(G),
        ModelSpec.feedback(G, chi1=0.02, chi2=0.08, Gamma=0.03),
        ModelSpec.minimal(G, qbm=QBM(0.05, 2.0)),
    ],
)
def test_invariants_every_step_unconditional(spec):
    N = 8
    traj = evolve_unconditional(FockState.coherent(N, 0.3), spec, 0.02, 60, FockConfig(N, 1e-4))
    assert len(traj.states) == 61
    for s in traj.states:
        check_state(s.rho)


def test_invariants_every_step_conditional():
    N = 8
    spec = ModelSpec.feedback(G)
    traj = evolve_conditional(FockState.vacuum(N), spec, NoiseConfig(1, 0.005, 100), FockConfig(N))
    assert len(traj.states) == 101
    for s in traj.states:
        check_state(s.rho)


def test_leakage_aborts():
    with pytest.raises(LeakageError):
        evolve_unconditional(FockState.coherent(6, 1.5), ModelSpec.minimal(G), 0.01, 5, FockConfig(6))


def test_invalid_state_rejected():
    bad = np.diag([1.5, -0.5, 0.0, 0.0]).astype(complex)
    with pytest.raises(FockInvariantError):
        FockState(bad)


def test_conditional_weak_measurement_is_unitary():
    N, dt, n = 10, 0.01, 100
    weak = ModelSpec.feedback(0.0, chi1=0.0, chi2=0.0, Gamma=1e-8)
    rho0 = FockState.coherent(N, 0.4, 0.2j)
    cond = evolve_conditional(rho0, weak, NoiseConfig(0, dt, n), FockConfig(N), stride=25)
    closed = evolve_unconditional(rho0, ModelSpec.minimal(0.0), dt, n, FockConfig(N), stride=25)
    for a, b in zip(cond.states, closed.states):
        fidelity = np.real(np.trace(a.rho @ b.rho))  # both pure
        assert fidelity > 1 - 1e-4


def test_conditional_purity_non_decreasing():
    N, dt, n = 10, 2e-3, 150
    spec = ModelSpec.feedback(G, chi1=0.0, chi2=0.0, Gamma=0.025)
    for seed in range(10):
        traj = evolve_conditional(FockState.thermal(N, 0.2), spec, NoiseConfig(seed, dt, n), FockConfig(N))
        purity = np.array([s.purity() for s in traj.states])
        assert np.all(np.diff(purity) >= -1e-12)
        assert purity[-1] > purity[0]


def test_conditional_record_contract():
    N = 8
    spec, noise = ModelSpec.feedback(G), NoiseConfig(4, 0.01, 30)
    a = evolve_conditional(FockState.vacuum(N), spec, noise, FockConfig(N), stride=10)
    b = evolve_conditional(FockState.vacuum(N), spec, noise, FockConfig(N), stride=10)
    np.testing.assert_array_equal(a.means, b.means)
    Gamma = spec.Gamma
    np.testing.assert_allclose(
        a.dJ, a.means[:-1][:, [0, 2]] * noise.dt + a.dW / (2 * np.sqrt(Gamma)), atol=1e-15
    )
    assert a.trace_drift >= 0


def test_coherence_probe_diagonal_state_immune():
    fit = coherence_decay_probe(0.0, ModelSpec.minimal(G), 0.01, 20, FockConfig(10))
    assert fit.rate == 0.0
    assert not fit.inconclusive


def test_coherence_probe_rejects_unrepresentable_cat():
    with pytest.raises(LeakageError):
        coherence_decay_probe(8.0, ModelSpec.minimal(G), 0.01, 5, FockConfig(8))
