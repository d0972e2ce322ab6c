"""Noise models for idling qubits and their closed-form predictions.

Conventions: ``sigma_z = diag(1, -1)``, ``sigma_minus = |0><1|`` so every
model relaxes to ``|0...0>`` at zero temperature. Rates are in inverse time
units; the shipped configurations use ``gamma1 = 1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    IDENTITY,
    SIGMA_MINUS,
    SIGMA_PLUS,
    SIGMA_X,
    SIGMA_Z,
    DensityMatrix,
    embed,
)
from .liouvillian import (
    JumpTerm,
    LindbladSpec,
    build_liouvillian,
    dissipator_superop,
    hamiltonian_superop,
)


def _nonneg(**kw):
    for name, val in kw.items():
        if not np.isfinite(val) or val < 0:
            raise ValueError(f"{name} must be finite and nonnegative, got {val}")


@dataclass(frozen=True)
class MarkovParams:
    omega_q: float = 1.0
    gamma1: float = 1.0
    gamma_phi: float = 1.0 / 6.0

    def __post_init__(self):
        _nonneg(gamma1=self.gamma1, gamma_phi=self.gamma_phi)

    @classmethod
    def from_t1_t2(cls, t1: float, t2: float, omega_q: float = 1.0) -> "MarkovParams":
        """Parameters realizing given T1, T2 (requires T2 <= 2 T1)."""
        if t1 <= 0 or t2 <= 0:
            raise ValueError("T1 and T2 must be positive")
        gamma_phi = 1.0 / t2 - 0.5 / t1
        if gamma_phi < -1e-12:
            raise ValueError(f"T2={t2} exceeds 2*T1={2 * t1}: needs negative pure dephasing")
        return cls(omega_q, 1.0 / t1, max(gamma_phi, 0.0))

    @property
    def t1(self) -> float:
        return 1.0 / self.gamma1

    @property
    def t2(self) -> float:
        return 1.0 / (0.5 * self.gamma1 + self.gamma_phi)


@dataclass(frozen=True)
class ThermalParams:
    """Finite-temperature Davies parameters; ``nbar`` is the thermal occupation."""

    omega: float = 1.0
    gamma: float = 1.0
    nbar: float = 0.0
    gamma_phi: float = 1.0 / 6.0

    def __post_init__(self):
        _nonneg(gamma=self.gamma, nbar=self.nbar, gamma_phi=self.gamma_phi)

    @property
    def gamma_down(self) -> float:
        return self.gamma * (self.nbar + 1.0)

    @property
    def gamma_up(self) -> float:
        return self.gamma * self.nbar

    @classmethod
    def from_beta(cls, omega, gamma, beta, gamma_phi=1.0 / 6.0) -> "ThermalParams":
        return cls(omega, gamma, 1.0 / np.expm1(beta * omega), gamma_phi)


@dataclass(frozen=True)
class EmbeddingParams:
    """Qubit coupled through ``nu_zx sigma_z sigma_x`` to one damped TLS."""

    omega_q: float = 2.0
    omega_t: float = 2.0
    nu_zx: float = 2.1
    gamma1: float = 1.0
    gamma_phi: float = 1.0 / 6.0
    kappa: float = 0.105

    def __post_init__(self):
        _nonneg(nu_zx=self.nu_zx, gamma1=self.gamma1, gamma_phi=self.gamma_phi, kappa=self.kappa)

    @property
    def markov(self) -> MarkovParams:
        return MarkovParams(self.omega_q, self.gamma1, self.gamma_phi)

    @property
    def t2_over_t1(self) -> float:
        return self.gamma1 / (0.5 * self.gamma1 + self.gamma_phi)

    @property
    def xi(self) -> tuple[float, float]:
        return self.kappa / self.omega_t, self.nu_zx / self.omega_t


# --- Markovian Davies maps -------------------------------------------------


def single_qubit_markovian(p: MarkovParams) -> LindbladSpec:
    return LindbladSpec(
        p.omega_q * SIGMA_Z,
        (JumpTerm(SIGMA_MINUS, p.gamma1), JumpTerm(SIGMA_Z, 0.5 * p.gamma_phi)),
        (2,),
    )


def two_qubit_markovian(p: MarkovParams) -> LindbladSpec:
    """Zero-temperature Davies map with pure dephasing on two idle qubits."""
    h = p.omega_q * (embed(SIGMA_Z, 0, 2) + embed(SIGMA_Z, 1, 2))
    jumps = []
    for q in range(2):
        jumps.append(JumpTerm(embed(SIGMA_MINUS, q, 2), p.gamma1))
    for q in range(2):
        jumps.append(JumpTerm(embed(SIGMA_Z, q, 2), 0.5 * p.gamma_phi))
    return LindbladSpec(h, tuple(jumps), (2, 2))


def two_qubit_thermal(p: ThermalParams) -> LindbladSpec:
    h = p.omega * (embed(SIGMA_Z, 0, 2) + embed(SIGMA_Z, 1, 2))
    jumps = [JumpTerm(embed(SIGMA_MINUS, q, 2), p.gamma_down) for q in range(2)]
    # keep the zero-temperature operator list identical when nbar == 0
    if p.gamma_up > 0:
        jumps += [JumpTerm(embed(SIGMA_PLUS, q, 2), p.gamma_up) for q in range(2)]
    jumps += [JumpTerm(embed(SIGMA_Z, q, 2), 0.5 * p.gamma_phi) for q in range(2)]
    return LindbladSpec(h, tuple(jumps), (2, 2))


def thermal_speedup(p: ThermalParams) -> float:
    """Asymptotic speedup T2/T1 of the finite-temperature Davies map."""
    if p.gamma <= 0:
        raise ValueError("bare coupling gamma must be positive")
    a = 2.0 * p.nbar + 1.0
    return 2.0 * a / (a + 2.0 * p.gamma_phi / p.gamma)


def thermal_excited_population(p: ThermalParams) -> float:
    return p.gamma_up / (p.gamma_up + p.gamma_down)


# --- qubit + TLS Markovian embedding --------------------------------------


def embedding_model(p: EmbeddingParams, n_qubits: int = 1) -> LindbladSpec:
    """Qubit(s) each coupled to a damped TLS.

    Subsystem order is ``(q, TLS)`` for one qubit and ``(q1, q2, TLS1, TLS2)``
    for two, so the qubits can be traced out of the trailing TLS factors.
    """
    if n_qubits not in (1, 2):
        raise ValueError("n_qubits must be 1 or 2")
    n = 2 * n_qubits
    h = np.zeros((2 ** n, 2 ** n), dtype=complex)
    jumps = []
    for q in range(n_qubits):
        t = n_qubits + q
        h += p.omega_q * embed(SIGMA_Z, q, n) + p.omega_t * embed(SIGMA_Z, t, n)
        h += p.nu_zx * embed(SIGMA_Z, q, n) @ embed(SIGMA_X, t, n)
    for q in range(n_qubits):
        jumps.append(JumpTerm(embed(SIGMA_MINUS, q, n), p.gamma1))
    for q in range(n_qubits):
        jumps.append(JumpTerm(embed(SIGMA_Z, q, n), 0.5 * p.gamma_phi))
    for q in range(n_qubits):
        jumps.append(JumpTerm(embed(SIGMA_MINUS, n_qubits + q, n), p.kappa))
    return LindbladSpec(h, tuple(jumps), (2,) * n)


def is_non_markovian(p: EmbeddingParams) -> bool:
    """Reduced qubit dynamics show damped purity oscillations."""
    return 4.0 * p.nu_zx ** 2 > p.kappa ** 2 / 16.0


def redfield_dephasing_rate(t, p: EmbeddingParams):
    """Time-dependent prefactor of D[sigma_z] in the reduced qubit generator."""
    t = np.asarray(t, dtype=float)
    k, w = p.kappa, p.omega_t
    bracket = -k * np.exp(-k * t) + np.exp(-0.5 * k * t) * (
        k * np.cos(2 * w * t) + 4 * w * np.sin(2 * w * t)
    )
    return 0.5 * p.gamma_phi + p.nu_zx ** 2 / (0.25 * k ** 2 + 4 * w ** 2) * bracket


@dataclass(frozen=True)
class RedfieldGenerator:
    """Reduced qubit generator ``static + rate(t) * D[sigma_z]`` (per qubit).

    Calling the object with a time returns the superoperator at that time.
    For ``n_qubits == 2`` the two qubits evolve independently under identical
    generators.
    """

    params: EmbeddingParams
    n_qubits: int = 1

    def __post_init__(self):
        if self.n_qubits not in (1, 2):
            raise ValueError("n_qubits must be 1 or 2")
        n = self.n_qubits
        p = self.params
        h = sum(p.omega_q * embed(SIGMA_Z, q, n) for q in range(n))
        static = hamiltonian_superop(h)
        deph = np.zeros_like(static)
        for q in range(n):
            static = static + dissipator_superop(embed(SIGMA_MINUS, q, n), p.gamma1)
            deph = deph + dissipator_superop(embed(SIGMA_Z, q, n))
        object.__setattr__(self, "_static", static)
        object.__setattr__(self, "_dephasing", deph)

    @property
    def dim(self) -> int:
        return 2 ** self.n_qubits

    @property
    def max_frequency(self) -> float:
        p = self.params
        return max(2.0 * abs(p.omega_q) * self.n_qubits, 2.0 * abs(p.omega_t), 1e-12)

    def rate(self, t):
        return redfield_dephasing_rate(t, self.params)

    def __call__(self, t: float) -> np.ndarray:
        return self._static + float(self.rate(t)) * self._dephasing


def redfield_generator(p: EmbeddingParams, n_qubits: int = 1) -> RedfieldGenerator:
    return RedfieldGenerator(p, n_qubits)


def redfield_speedup(t, p: EmbeddingParams):
    """Instantaneous spectral speedup |Re l3(t)| / |Re l2(t)| of the reduced generator."""
    t = np.asarray(t, dtype=float)
    k, w, nu = p.kappa, p.omega_t, p.nu_zx
    a = k ** 2 + 16 * w ** 2
    num = np.abs(2 * p.gamma1 * a)
    den = np.abs(
        -(p.gamma1 + 2 * p.gamma_phi) * a
        + 16 * nu ** 2 * np.exp(-0.5 * k * t) * (k * (np.exp(-0.5 * k * t) - np.cos(2 * w * t)) - 4 * w * np.sin(2 * w * t))
    )
    if np.any(den < 1e-14):
        raise ZeroDivisionError("redfield speedup denominator vanishes")
    out = num / den
    return float(out) if out.ndim == 0 else out


def embedding_speedup(p: EmbeddingParams) -> tuple[float, float]:
    """(fourth-order series, small-xi limit) speedups of the full embedding."""
    if p.omega_t == 0:
        raise ValueError("omega_t must be nonzero")
    k, w, nu, g1, gp = p.kappa, p.omega_t, p.nu_zx, p.gamma1, p.gamma_phi
    den4 = (
        k ** 3 * nu ** 4 / (8 * w ** 6)
        - k * nu ** 2 * (k ** 2 + 16 * nu ** 2) / (32 * w ** 4)
        + k * nu ** 2 / (2 * w ** 2)
        - (g1 + 2 * gp + k)
    )
    den0 = g1 + 2 * gp + k
    if abs(den4) < 1e-14 or abs(den0) < 1e-14:
        raise ZeroDivisionError("embedding speedup denominator vanishes")
    t2 = 1.0 / (0.5 * g1 + gp)
    simplified = (t2 * g1) / (1.0 + k * t2 / 2.0)
    return abs(2 * g1) / abs(den4), simplified


def redfield_coherence_factor(t, p: EmbeddingParams, delta: float | None = None):
    """Closed-form coherence factor Lambda(t) of the reduced dynamics.

    ``delta`` defaults to ``|omega_q - omega_t|``. The magnitude of Lambda
    solves the reduced generator for any ``delta``; the phase matches the
    generator's ``sigma_z`` rotation when ``omega_t >= omega_q``.
    """
    if delta is None:
        delta = abs(p.omega_q - p.omega_t)
    t = np.asarray(t, dtype=float)
    k, w, nu = p.kappa, p.omega_t, p.nu_zx
    a = k ** 2 + 16 * w ** 2
    expo = (
        16 * (1 + np.exp(-t * k)) * nu ** 2
        + t * (-4j * delta + p.gamma1 + 2 * p.gamma_phi + 4j * w) * a
        - 32 * np.exp(-0.5 * t * k) * nu ** 2 * np.cos(2 * t * w)
    )
    return np.exp(-expo / (2 * a))


def analytic_redfield_state(t: float, rho0, p: EmbeddingParams, delta: float | None = None) -> DensityMatrix:
    r = np.asarray(rho0, dtype=complex)
    if r.shape != (2, 2):
        raise ValueError("analytic_redfield_state expects a single-qubit state")
    lam = complex(redfield_coherence_factor(t, p, delta))
    decay = np.exp(-p.gamma1 * t)
    out = np.array(
        [
            [r[0, 0] + r[1, 1] * (1 - decay), lam * r[0, 1]],
            [np.conj(lam) * r[1, 0], decay * r[1, 1]],
        ]
    )
    return DensityMatrix(0.5 * (out + out.conj().T), (2,))


def analytic_trace_distance(t, rho0, p: EmbeddingParams, delta: float | None = None):
    """Trace distance of the reduced state to ``|0><0|`` in closed form."""
    r = np.asarray(rho0, dtype=complex)
    lam = redfield_coherence_factor(t, p, delta)
    decay = np.exp(-p.gamma1 * np.asarray(t, dtype=float))
    return np.sqrt(np.abs(lam * r[0, 1]) ** 2 + (decay * r[1, 1].real) ** 2)


def t1t2_fit_model(t: float, rho0, t1: float, t2: float) -> DensityMatrix:
    """Single-qubit state under pure exponential T1 / T2 decay."""
    if t1 <= 0 or t2 <= 0:
        raise ValueError("T1 and T2 must be positive")
    r = np.asarray(rho0, dtype=complex)
    e1, e2 = np.exp(-t / t1), np.exp(-t / t2)
    out = np.array([[r[0, 0] + r[1, 1] * (1 - e1), r[0, 1] * e2], [r[1, 0] * e2, r[1, 1] * e1]])
    return DensityMatrix(out, (2,))


def t1t2_speedup(t1: float, t2: float) -> float:
    return max(t2 / t1, 1.0)


# --- mode continuation in the embedding spectrum --------------------------


def continue_modes(
    build: Callable[[float], np.ndarray],
    seeds,
    steps: int = 10,
) -> np.ndarray:
    """Follow eigenvalues from ``build(0)`` to ``build(1)`` by nearest-neighbour matching.

    ``seeds`` are approximate eigenvalues at ``s = 0``; each is snapped to the
    nearest eigenvalue of ``build(0)`` and then tracked over ``steps`` equal
    increments of the homotopy parameter. Matching is one-to-one.
    """
    current = np.asarray(seeds, dtype=complex).copy()
    for s in np.linspace(0.0, 1.0, steps + 1):
        vals = np.linalg.eigvals(build(float(s)))
        taken = np.zeros(vals.size, dtype=bool)
        nxt = np.empty_like(current)
        # resolve the best-separated seeds first so near-ties cannot steal a partner
        dist = np.abs(current[:, None] - vals[None, :])
        for i in np.argsort(dist.min(axis=1)):
            d = np.where(taken, np.inf, dist[i])
            j = int(np.argmin(d))
            taken[j] = True
            nxt[i] = vals[j]
        current = nxt
    return current


def _embedding_homotopy(p: EmbeddingParams) -> Callable[[float], np.ndarray]:
    def build(s: float) -> np.ndarray:
        q = EmbeddingParams(p.omega_q, p.omega_t, s * p.nu_zx, p.gamma1, p.gamma_phi, p.kappa)
        return build_liouvillian(embedding_model(q, 1))

    return build


def embedding_qubit_modes(p: EmbeddingParams, steps: int = 10) -> np.ndarray:
    """Embedding eigenvalues continuous with the bare-qubit modes (TLS in its steady state).

    Returned in the order (0, -Gamma1, coherence pair).
    """
    bare = np.linalg.eigvals(build_liouvillian(single_qubit_markovian(p.markov)))
    seeds = bare[np.argsort(np.abs(bare.real) + 1e-6 * bare.imag)]
    return continue_modes(_embedding_homotopy(p), seeds, steps)


def embedding_joint_coherence_modes(p: EmbeddingParams, steps: int = 10) -> np.ndarray:
    """Embedding eigenvalues continuous with qubit-coherence x TLS-coherence modes.

    These are the counter-rotating products whose frequencies nearly cancel
    (``|Im| = 2|omega_q - omega_t|`` at zero coupling); they decay at
    ``Gamma1/2 + Gamma_phi + kappa/2``.
    """
    g2 = 0.5 * p.gamma1 + p.gamma_phi
    d = 2.0 * (p.omega_q - p.omega_t)
    seeds = np.array([-(g2 + 0.5 * p.kappa) - 1j * d, -(g2 + 0.5 * p.kappa) + 1j * d])
    return continue_modes(_embedding_homotopy(p), seeds, steps)


def spectral_embedding_speedup(p: EmbeddingParams, branch: str = "joint", steps: int = 10) -> float:
    """Gamma1-mode rate over the chosen coherence branch's rate, from the full spectrum."""
    qubit = embedding_qubit_modes(p, steps)
    pop = qubit[np.argmin(np.abs(qubit + p.gamma1))]
    if branch == "qubit":
        coh = qubit[np.argmax(np.abs(qubit.imag))]
    elif branch == "joint":
        coh = embedding_joint_coherence_modes(p, steps)[0]
    else:
        raise ValueError(f"unknown branch {branch!r}")
    return float(pop.real / coh.real)
