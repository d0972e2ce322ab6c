import numpy as np
import pytest

from mpemba_reset.core import SIGMA_MINUS, trace_distance
from mpemba_reset.dynamics import (
    EnsembleEvaluator,
    IntegrationError,
    ModalPropagator,
    ResetModel,
    ResetTimeError,
    SpeedupRecord,
    TraceDistanceCurve,
    default_times,
    peak_envelope,
    propagate,
    propagate_expm,
    propagate_time_dependent,
    reset_time,
    robustness,
    speedup,
)
from mpemba_reset.experiments import HaarSampler
from mpemba_reset.liouvillian import JumpTerm, LindbladSpec, SpectralError, build_liouvillian, spectral_decompose
from mpemba_reset.models import EmbeddingParams, MarkovParams, embedding_model, two_qubit_markovian
from mpemba_reset.protocol import AncillaState, cry_pi

from conftest import random_state

MARKOV = MarkovParams(1.0, 1.0, 1 / 6)


@pytest.fixture(scope="module")
def markov_model():
    return ResetModel(two_qubit_markovian(MARKOV), name="markovian", params={"gamma1": 1.0})


@pytest.fixture(scope="module")
def markov_liou():
    return build_liouvillian(two_qubit_markovian(MARKOV))


def test_propagate_at_zero_and_late_times(rng, markov_liou):
    dec = spectral_decompose(markov_liou)
    rho = random_state(rng, 4)
    np.testing.assert_allclose(propagate(dec, rho, 0.0).mat, rho, atol=1e-10)
    late = propagate(dec, rho, 50.0).mat
    assert trace_distance(late, np.diag([1.0, 0, 0, 0])) < 1e-10


def test_spectral_and_expm_agree(rng, markov_liou):
    dec = spectral_decompose(markov_liou)
    for _ in range(5):
        rho = random_state(rng, 4)
        for t in (0.1, 0.9, 3.3, 12.0):
            np.testing.assert_allclose(propagate(dec, rho, t).mat, propagate_expm(markov_liou, rho, t).mat, atol=1e-9)


def test_propagated_states_stay_physical(rng, markov_liou):
    rho = random_state(rng, 4)
    for t in np.linspace(0, 10, 21):
        s = propagate_expm(markov_liou, rho, t).mat
        assert abs(np.trace(s) - 1) < 1e-12
        assert np.linalg.eigvalsh(s).min() >= -1e-10


def test_propagate_errors(markov_liou):
    dec = spectral_decompose(np.array([[-1.0, 1.0], [0.0, -1.0]]), 1)
    with pytest.raises(SpectralError, match="propagate_expm"):
        propagate(dec, np.eye(1), 1.0)
    with pytest.raises(ValueError):
        propagate_expm(markov_liou, np.eye(4) / 4, -1.0)


def test_integrator_constant_generator_matches_expm(rng, markov_liou):
    rho = random_state(rng, 4)
    grid = np.linspace(0, 2, 5)
    out = propagate_time_dependent(lambda t: markov_liou, rho, grid)
    for t, s in zip(grid, out):
        np.testing.assert_allclose(s.mat, propagate_expm(markov_liou, rho, t).mat, atol=1e-8)


def test_integrator_zero_generator(rng):
    rho = random_state(rng, 2)
    out = propagate_time_dependent(lambda t: np.zeros((4, 4)), rho, [0.0, 1.0, 2.0], step=0.1)
    for s in out:
        np.testing.assert_allclose(s.mat, rho, atol=1e-15)


def test_integrator_halving_check_fails_for_coarse_step():
    gen = lambda t: build_liouvillian(LindbladSpec(5.0 * np.diag([1, -1]), (JumpTerm(SIGMA_MINUS, 1.0),)))
    rho = np.array([[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(IntegrationError, match="smaller step"):
        propagate_time_dependent(gen, rho, [0.0, 5.0], step=0.2)
    with pytest.raises(ValueError):
        propagate_time_dependent(gen, rho, [0.5, 1.0])


def test_reset_time_pure_exponential():
    t = np.linspace(0, 20, 401)
    assert reset_time(TraceDistanceCurve(t, np.exp(-t)), 1e-3) == pytest.approx(np.log(1000), rel=1e-12)


def test_reset_time_oscillating_curve_dense_oracle():
    f = lambda t: np.exp(-t) * (1 + 0.5 * np.cos(10 * t))
    t = np.linspace(0, 15, 3001)
    curve = TraceDistanceCurve(t, f(t))
    last = reset_time(curve, 1e-3)
    first = reset_time(curve, 1e-3, mode="first")
    assert last > first
    dense = np.linspace(0, 15, 30001)
    v = f(dense)
    brute = dense[np.flatnonzero(v >= 1e-3)[-1] + 1]
    assert last == pytest.approx(brute, abs=dense[1] - dense[0])


def test_reset_time_monotone_in_epsilon():
    t = np.linspace(0, 30, 601)
    curve = TraceDistanceCurve(t, 0.7 * np.exp(-0.8 * t) + 0.3 * np.exp(-1.5 * t))
    eps = np.geomspace(1e-8, 0.5, 40)
    times = [reset_time(curve, e) for e in eps]
    assert np.all(np.diff(times) <= 1e-12)


def test_reset_time_errors():
    t = np.linspace(0, 1, 11)
    with pytest.raises(ResetTimeError, match="final value"):
        reset_time(TraceDistanceCurve(t, np.ones(11)), 1e-3)
    with pytest.raises(ValueError):
        reset_time(TraceDistanceCurve(t, np.exp(-t)), 0.0)
    with pytest.raises(ValueError):
        TraceDistanceCurve(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        TraceDistanceCurve(t, -np.ones(11))
    assert reset_time(TraceDistanceCurve(t, np.full(11, 1e-6)), 1e-3) == 0.0


def test_peak_envelope_recovers_rate():
    t = np.linspace(0, 10, 5001)
    fit = peak_envelope(TraceDistanceCurve(t, np.exp(-0.7 * t) * (1 + 0.5 * np.cos(6 * t))))
    assert fit.rate == pytest.approx(0.7, rel=1e-2)
    with pytest.raises(ValueError):
        peak_envelope(TraceDistanceCurve(t, np.exp(-t)))


def test_incoherent_state_has_unit_speedup(markov_model):
    # a maximally mixed ancilla is invariant under the flip, so the gate is inert on diagonal inputs
    for p in (0.0, 0.3, 0.8):
        rho = np.kron(np.diag([p, 1 - p]), AncillaState(0.5).matrix)
        assert speedup(markov_model, rho, cry_pi()).speedup == pytest.approx(1.0, abs=1e-9)


def test_incoherent_state_with_pure_ancilla_moves_populations(markov_model):
    # with a pure ancilla the flip changes the excitation number, so S differs from 1
    rho = np.kron(np.diag([0.3, 0.7]), AncillaState(0.0).matrix)
    assert speedup(markov_model, rho, cry_pi()).speedup > 1.01


def test_speedup_record_fields(markov_model):
    plus = np.full((2, 2), 0.5)
    rec = speedup(markov_model, np.kron(plus, np.diag([0.0, 1.0])), cry_pi(), epsilon=1e-4)
    assert rec.speedup == pytest.approx(rec.t_plain / rec.t_gated, rel=1e-12)
    assert rec.overlap_l2_after < 1e-12 < rec.overlap_l2_before
    assert rec.estimate == pytest.approx(rec.speedup, rel=0.1)
    with pytest.raises(ValueError):
        SpeedupRecord(-1.0, 1.0, -1.0, 1e-3, 0.0, 0.0)


def test_gate_never_slows_reset_with_excited_ancilla(markov_model):
    ev = EnsembleEvaluator(markov_model, AncillaState(0.0), {"plain": None, "gated": cry_pi()})
    s = HaarSampler(99)
    for i in range(200):
        r = s.state(i).mat
        assert ev.reset_time("plain", r) / ev.reset_time("gated", r) >= 1 - 1e-9


def test_gate_can_slow_reset_with_ground_ancilla(markov_model):
    # documented counterexample: C-Ry(pi) on |1>|0> excites the ancilla
    rho = np.kron(np.diag([0.0, 1.0]), AncillaState(1.0).matrix)
    assert speedup(markov_model, rho, cry_pi()).speedup < 0.95


def test_estimate_accuracy_small_epsilon(markov_model):
    for eps in (1e-4, 1e-6):
        ev = EnsembleEvaluator(markov_model, AncillaState(0.0), {"plain": None, "gated": cry_pi()}, epsilon=eps)
        s = HaarSampler(3)
        for i in range(100):
            r = s.state(i).mat
            meas = ev.reset_time("plain", r) / ev.reset_time("gated", r)
            assert abs(ev.estimate("plain", "gated", r) / meas - 1) < 0.1


def test_ensemble_matches_direct_evaluation(markov_model):
    ev = EnsembleEvaluator(markov_model, AncillaState(0.0), {"plain": None, "gated": cry_pi()})
    r1 = HaarSampler(5).state(0).mat
    rec = speedup(markov_model, np.kron(r1, AncillaState(0.0).matrix), cry_pi())
    assert ev.reset_time("plain", r1) == pytest.approx(rec.t_plain, rel=1e-10)
    assert ev.reset_time("gated", r1) == pytest.approx(rec.t_gated, rel=1e-10)


def test_expm_backend_matches_spectral_backend():
    spec = two_qubit_markovian(MARKOV)
    a = ResetModel(spec, params={"gamma1": 1.0})
    b = ResetModel(spec, params={"gamma1": 1.0}, backend="expm")
    r = np.kron(np.full((2, 2), 0.5), np.diag([0.0, 1.0]))
    times = default_times(1.0, 200)
    np.testing.assert_allclose(a.distance_curve(r, times).values, b.distance_curve(r, times).values, atol=1e-9)


def test_embedding_propagator_reduces_to_register():
    p = EmbeddingParams(omega_q=2.0, omega_t=2.0)
    m = ResetModel(embedding_model(p, 2), params={"gamma1": 1.0})
    assert m.propagator.reduced_modes.shape == (256, 4, 4)
    np.testing.assert_allclose(m.propagator.steady, np.diag([1.0, 0, 0, 0]), atol=1e-10)


def test_modal_propagator_backend_validation(markov_liou):
    with pytest.raises(ValueError):
        ModalPropagator(markov_liou, (2, 2), backend="bogus")


def test_robustness_exact_gate_is_one(markov_model):
    states = [HaarSampler(1).state(i).mat for i in range(5)]
    assert robustness(markov_model, states, AncillaState(0.0), 0.0, 0.0) == 1.0
