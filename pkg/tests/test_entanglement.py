import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gravchannel.entanglement import (
    channel_criterion,
    entanglement_along_trajectory,
    log_negativity,
    symplectic_eigenvalues,
)
from gravchannel.gaussian import (
    GaussianState,
    ModelSpec,
    UncertaintyViolation,
    build_generator,
    propagate,
)


def test_criterion_minimal_noise():
    g = 0.05
    res = channel_criterion(2 * g * np.eye(2), g)
    assert res.eigenvalues == (0.0, 4 * g)
    assert res.non_entangling


@pytest.mark.parametrize("eps", [1e-6, 0.01, 0.05])
def test_criterion_less_noise_entangles(eps):
    g = 0.05
    res = channel_criterion((2 * g - eps) * np.eye(2), g)
    assert res.eigenvalues[0] == pytest.approx(-eps, abs=1e-15)
    assert not res.non_entangling


def test_criterion_trivial_channel():
    res = channel_criterion(np.zeros((2, 2)), 0.0)
    assert res.eigenvalues == (0.0, 0.0)
    assert res.non_entangling


@settings(max_examples=100, deadline=None)
@given(
    a=st.floats(-1, 1),
    b=st.floats(-1, 1),
    c=st.floats(-1, 1),
    g=st.floats(0, 1),
)
def test_criterion_matches_hermitian_eigensolver(a, b, c, g):
    Y = np.array([[a, c], [c, b]])
    sigma = np.array([[0.0, 1.0], [-1.0, 0.0]])
    oracle = np.linalg.eigvalsh(Y - 2j * g * sigma)
    res = channel_criterion(Y, g)
    np.testing.assert_allclose(res.eigenvalues, oracle, atol=1e-12)


def test_criterion_rejects_asymmetric():
    with pytest.raises(ValueError):
        channel_criterion(np.array([[1.0, 0.1], [0.0, 1.0]]), 0.1)


def test_vacuum_and_product_states_unentangled():
    assert log_negativity(GaussianState.vacuum()) == 0.0
    assert log_negativity(GaussianState.thermal(0.3, 2.0)) == 0.0
    rng = np.random.default_rng(4)
    for _ in range(20):
        blocks = []
        for _ in range(2):
            r, th = rng.uniform(0, 1), rng.uniform(0, np.pi)
            R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
            blocks.append(R @ np.diag([0.5 * np.exp(2 * r), 0.5 * np.exp(-2 * r)]) @ R.T)
        cov = np.zeros((4, 4))
        cov[:2, :2], cov[2:, 2:] = blocks
        assert log_negativity(cov) <= 1e-12


@pytest.mark.parametrize("s", [0.1, 0.5, 1.2])
def test_two_mode_squeezed_vacuum(s):
    # partially transposed smallest symplectic eigenvalue is exp(-2s)/2
    assert log_negativity(GaussianState.two_mode_squeezed(s)) == pytest.approx(
        2 * s / math.log(2), rel=1e-12
    )


def test_symplectic_eigenvalues_of_thermal_state():
    nu = symplectic_eigenvalues(np.diag([1.5, 1.5, 0.7, 0.7]))
    np.testing.assert_allclose(nu, [0.7, 1.5], rtol=1e-14)


def test_unphysical_input_rejected():
    with pytest.raises(UncertaintyViolation):
        log_negativity(0.2 * np.eye(4))


def test_minimal_channel_never_entangles():
    g = 0.05
    states = propagate(GaussianState.vacuum(), build_generator(ModelSpec.minimal(g)), 0.01, 2000)
    assert entanglement_along_trajectory(states).max() <= 1e-10


def test_less_noise_entangles_early():
    g = 0.05
    spec = ModelSpec.minimal(g, epsilon=0.1 * 2 * g)
    states = propagate(GaussianState.vacuum(), build_generator(spec), 0.01, 500)
    assert entanglement_along_trajectory(states).max() > 0


def test_hamiltonian_coupling_alone_entangles():
    g = 0.05
    spec = ModelSpec.minimal(g, epsilon=2 * g)
    assert np.all(build_generator(spec).D == 0)
    states = propagate(GaussianState.vacuum(), build_generator(spec), 0.01, 500)
    assert entanglement_along_trajectory(states).max() > 0
