"""Self-test battery comparing independent computational paths."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import trace_distance, vectorize
from .dynamics import propagate, propagate_expm, propagate_time_dependent
from .liouvillian import build_liouvillian, spectral_decompose
from .models import (
    EmbeddingParams,
    MarkovParams,
    analytic_redfield_state,
    analytic_trace_distance,
    redfield_generator,
    single_qubit_markovian,
    two_qubit_markovian,
)
from .protocol import AncillaState, ControlledGate, kappa, kappa_bloch, relative_unitary


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3e} (tol {self.tolerance:.0e})"


def _random_state(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    m = a @ a.conj().T
    return m / np.trace(m)


def _check(name, value, tol):
    return Check(name, bool(value <= tol), float(value), tol)


def backend_agreement(seed: int = 7) -> Check:
    rng = np.random.default_rng(seed)
    spec = two_qubit_markovian(MarkovParams(1.0, 1.0, 1.0 / 6.0))
    liou = build_liouvillian(spec)
    dec = spectral_decompose(liou, 4)
    worst = 0.0
    for _ in range(5):
        rho = _random_state(rng, 4)
        for t in (0.0, 0.3, 1.7, 5.0):
            a = propagate(dec, rho, t).mat
            b = propagate_expm(liou, rho, t).mat
            worst = max(worst, float(np.max(np.abs(a - b))))
    # integrator with a constant generator on a single qubit
    l1 = build_liouvillian(single_qubit_markovian(MarkovParams(1.0, 1.0, 1.0 / 6.0)))
    rho = _random_state(rng, 2)
    grid = np.linspace(0.0, 2.0, 5)
    states = propagate_time_dependent(lambda t: l1, rho, grid, step=1e-3)
    for t, s in zip(grid, states):
        worst = max(worst, float(np.max(np.abs(s.mat - propagate_expm(l1, rho, t).mat))))
    return _check("spectral / expm / integrator propagation agree", worst, 1e-8)


def vectorization_identity(seed: int = 11) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for d in (2, 3, 4):
        a, b, r = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)) for _ in range(3))
        lhs = vectorize(a @ r @ b.conj().T)
        rhs = np.kron(b.conj(), a) @ vectorize(r)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return _check("vec(A rho B^dag) = kron(B*, A) vec(rho)", worst, 1e-12)


def kappa_formula(seed: int = 13) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        phi, theta = rng.uniform(0, 2 * np.pi, 2)
        n = rng.normal(size=3)
        p0 = rng.uniform()
        w = relative_unitary(phi, theta, n)
        gate = ControlledGate(np.eye(2), w)
        direct = kappa(AncillaState(p0), gate)
        closed = kappa_bloch(phi, theta, n, 2 * p0 - 1)
        worst = max(worst, abs(direct - closed))
    return _check("kappa Bloch formula vs direct trace", worst, 1e-12)


def redfield_closed_form() -> Check:
    p = EmbeddingParams(omega_q=2.0, omega_t=2.0, nu_zx=0.5, kappa=1.0)
    rho = np.array([[0.3, 0.2 - 0.4j], [0.2 + 0.4j, 0.7]])
    grid = np.linspace(0.0, 10.0, 21)
    states = propagate_time_dependent(redfield_generator(p, 1), rho, grid)
    worst = 0.0
    for t, s in zip(grid, states):
        worst = max(worst, float(np.max(np.abs(s.mat - analytic_redfield_state(t, rho, p).mat))))
        d = trace_distance(s.mat, np.diag([1.0, 0.0]))
        worst = max(worst, abs(d - float(analytic_trace_distance(t, rho, p))))
    return _check("closed-form reduced state and trace distance vs integrator", worst, 1e-8)


def run_battery() -> list[Check]:
    return [backend_agreement(), vectorization_identity(), kappa_formula(), redfield_closed_form()]
