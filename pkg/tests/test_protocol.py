import numpy as np
import pytest

from mpemba_reset.core import SIGMA_X, DimensionError, partial_trace
from mpemba_reset.protocol import (
    AncillaState,
    ControlledGate,
    apply_gate,
    cnot,
    control_marginal,
    cry_pi,
    cz,
    expected_target_marginal,
    gate_superoperator,
    identity_gate,
    kappa,
    kappa_bloch,
    perturbed_cry,
    relative_unitary,
    rx,
    ry,
    rz,
    target_marginal,
)
from mpemba_reset.core import vectorize

from conftest import random_state


def test_rotations_are_unitary():
    for f in (rx, ry, rz):
        u = f(0.73)
        np.testing.assert_allclose(u.conj().T @ u, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(rx(np.pi), -1j * SIGMA_X, atol=1e-15)


def test_cry_pi_blocks():
    g = cry_pi()
    np.testing.assert_array_equal(g.v1, [[0, -1], [1, 0]])
    u = g.unitary
    np.testing.assert_allclose(u.conj().T @ u, np.eye(4), atol=1e-15)
    np.testing.assert_array_equal(u[:2, :2], np.eye(2))


def test_gate_rejects_non_unitary():
    with pytest.raises(ValueError, match="unitary"):
        ControlledGate(np.eye(2), 2 * np.eye(2))
    with pytest.raises(DimensionError):
        ControlledGate(np.eye(3), np.eye(2))


def test_kappa_zero_for_exact_gate_and_diagonal_ancilla():
    for p0 in (0.0, 0.3, 1.0):
        assert abs(kappa(AncillaState(p0), cry_pi())) < 1e-15
        assert abs(kappa(AncillaState(p0), cnot())) < 1e-15
    assert kappa(AncillaState(1.0), identity_gate()) == 1.0
    assert kappa(AncillaState(0.0), cz()) == -1.0


def test_control_coherence_is_scaled_by_kappa(rng):
    for gate in (cry_pi(), cnot(), perturbed_cry(0.4, -0.2), identity_gate()):
        for anc in (AncillaState(0.0), AncillaState(0.7, 0.2 - 0.1j), AncillaState(0.5, 0.5)):
            r1 = random_state(rng, 2)
            out = control_marginal(apply_gate(gate, np.kron(r1, anc.matrix)).mat)
            k = kappa(anc, gate)
            # the upper off-diagonal picks up conj(kappa); the lower one kappa
            assert abs(out[0, 1] - np.conj(k) * r1[0, 1]) < 1e-12
            assert abs(out[1, 0] - k * r1[1, 0]) < 1e-12
            np.testing.assert_allclose(np.diag(out), np.diag(r1), atol=1e-12)


def test_target_marginal_formula(rng):
    for gate in (cry_pi(), perturbed_cry(0.3, 0.1, "yx")):
        r1, r2 = random_state(rng, 2), random_state(rng, 2)
        out = target_marginal(apply_gate(gate, np.kron(r1, r2)).mat)
        np.testing.assert_allclose(out, expected_target_marginal(gate, r1, r2), atol=1e-12)


def test_kappa_bloch_formula(rng):
    for _ in range(20):
        phi, theta = rng.uniform(0, 2 * np.pi, 2)
        n = rng.normal(size=3)
        p0 = rng.uniform()
        gate = ControlledGate(np.eye(2), relative_unitary(phi, theta, n))
        assert kappa(AncillaState(p0), gate) == pytest.approx(kappa_bloch(phi, theta, n, 2 * p0 - 1), abs=1e-12)


def test_perturbed_gate_limits():
    np.testing.assert_array_equal(perturbed_cry(0.0, 0.0).v1, cry_pi().v1)
    g = perturbed_cry(np.pi, np.pi)
    assert abs(kappa(AncillaState(0.0), g)) < 1e-15
    assert abs(kappa(AncillaState(0.0), perturbed_cry(np.pi, 0.0))) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        perturbed_cry(0.1, 0.1, "zz")


def test_gate_orders_differ():
    a, b = perturbed_cry(0.5, 0.3, "xy"), perturbed_cry(0.5, 0.3, "yx")
    assert not np.allclose(a.v1, b.v1)
    np.testing.assert_allclose(a.v1, rx(0.5) @ ry(np.pi + 0.3))


def test_apply_gate_with_environment(rng):
    r12 = random_state(rng, 4)
    env = np.diag([1.0, 0.0, 0.0, 0.0])
    out = apply_gate(cry_pi(), np.kron(r12, env), (2, 2, 2, 2))
    np.testing.assert_allclose(partial_trace(out.mat, [0, 1], (2, 2, 2, 2)), apply_gate(cry_pi(), r12).mat, atol=1e-14)
    with pytest.raises(DimensionError):
        apply_gate(cry_pi(), np.eye(2) / 2, (2,))


def test_gate_superoperator_matches_conjugation(rng):
    r = random_state(rng, 4)
    np.testing.assert_allclose(gate_superoperator(cry_pi()) @ vectorize(r), vectorize(apply_gate(cry_pi(), r).mat),
                               atol=1e-14)


def test_ancilla_validation():
    with pytest.raises(ValueError):
        AncillaState(1.2)
    with pytest.raises(ValueError, match="coherence"):
        AncillaState(0.5, 0.6)
    assert AncillaState(1.0).polarization == 1.0
    assert AncillaState(0.5, 0.5).density.dim == 2
