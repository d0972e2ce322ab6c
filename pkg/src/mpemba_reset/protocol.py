"""Controlled two-qubit gates that delocalize a qubit's coherences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import IDENTITY, SIGMA_X, SIGMA_Y, SIGMA_Z, DensityMatrix, DimensionError, partial_trace

UNITARY_TOL = 1e-12


def rx(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def ry(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(theta: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])


def relative_unitary(phi: float, theta: float, n) -> np.ndarray:
    """``exp(i phi) (cos(theta/2) I + i sin(theta/2) n.sigma)``."""
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    ns = n[0] * SIGMA_X + n[1] * SIGMA_Y + n[2] * SIGMA_Z
    return np.exp(1j * phi) * (np.cos(theta / 2) * IDENTITY + 1j * np.sin(theta / 2) * ns)


@dataclass(frozen=True)
class ControlledGate:
    """``|0><0| (x) v0 + |1><1| (x) v1`` with the control on the first qubit."""

    v0: np.ndarray
    v1: np.ndarray

    def __post_init__(self):
        for name in ("v0", "v1"):
            v = np.array(getattr(self, name), dtype=complex)
            if v.shape != (2, 2):
                raise DimensionError(f"{name} must be 2x2, got {v.shape}")
            dev = np.max(np.abs(v.conj().T @ v - IDENTITY))
            if dev > UNITARY_TOL:
                raise ValueError(f"{name} is not unitary (deviation {dev:.2e})")
            object.__setattr__(self, name, v)

    @property
    def unitary(self) -> np.ndarray:
        u = np.zeros((4, 4), dtype=complex)
        u[:2, :2] = self.v0
        u[2:, 2:] = self.v1
        return u

    @property
    def relative(self) -> np.ndarray:
        return self.v0.conj().T @ self.v1


def cry_pi() -> ControlledGate:
    return ControlledGate(IDENTITY, ry(np.pi).real.round(15).astype(complex))


def cnot() -> ControlledGate:
    return ControlledGate(IDENTITY, SIGMA_X)


def cz() -> ControlledGate:
    return ControlledGate(IDENTITY, SIGMA_Z)


def identity_gate() -> ControlledGate:
    return ControlledGate(IDENTITY, IDENTITY)


def perturbed_cry(dtheta_x: float, dtheta_y: float, order: str = "xy") -> ControlledGate:
    """C-Ry(pi) with a systematic y over/under-rotation and a spurious x rotation.

    ``order="xy"`` gives ``v1 = Rx(dx) @ Ry(pi + dy)`` (the y rotation acts
    first); ``order="yx"`` gives ``v1 = Ry(pi + dy) @ Rx(dx)``.
    """
    if order == "xy":
        v1 = rx(dtheta_x) @ ry(np.pi + dtheta_y)
    elif order == "yx":
        v1 = ry(np.pi + dtheta_y) @ rx(dtheta_x)
    else:
        raise ValueError(f"order must be 'xy' or 'yx', got {order!r}")
    if dtheta_x == 0 and dtheta_y == 0:
        return cry_pi()
    return ControlledGate(IDENTITY, v1)


@dataclass(frozen=True)
class AncillaState:
    """Ancilla ``[[p0, c], [c*, 1 - p0]]``; only ``c = 0`` guarantees full dephasing."""

    p0: float = 0.0
    coherence: complex = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p0 <= 1.0:
            raise ValueError(f"p0 must lie in [0, 1], got {self.p0}")
        if abs(self.coherence) > np.sqrt(self.p0 * (1 - self.p0)) + 1e-12:
            raise ValueError("ancilla coherence exceeds sqrt(p0 (1 - p0))")

    @property
    def matrix(self) -> np.ndarray:
        c = complex(self.coherence)
        return np.array([[self.p0, c], [np.conj(c), 1 - self.p0]], dtype=complex)

    @property
    def density(self) -> DensityMatrix:
        return DensityMatrix(self.matrix, (2,))

    @property
    def polarization(self) -> float:
        return 2 * self.p0 - 1


def kappa(rho2, gate: ControlledGate) -> complex:
    """Residual coherence factor ``Tr[rho2 v0^dag v1]`` left on the control qubit."""
    r = rho2.matrix if isinstance(rho2, AncillaState) else np.asarray(rho2, dtype=complex)
    return complex(np.trace(r @ gate.relative))


def kappa_bloch(phi: float, theta: float, n, r: float) -> complex:
    """Closed form of kappa for a diagonal ancilla with polarization ``r = p0 - p1``."""
    n = np.asarray(n, dtype=float)
    nz = n[2] / np.linalg.norm(n)
    return np.exp(1j * phi) * (np.cos(theta / 2) + 1j * r * np.sin(theta / 2) * nz)


def apply_gate(gate: ControlledGate, rho12, dims=(2, 2)) -> DensityMatrix:
    """``U rho U^dag``; extra trailing subsystems (e.g. TLS) are left untouched."""
    r = np.asarray(rho12, dtype=complex)
    dims = tuple(rho12.dims) if isinstance(rho12, DensityMatrix) else tuple(dims)
    d = r.shape[0]
    if d % 4 or int(np.prod(dims)) != d or dims[:2] != (2, 2):
        raise DimensionError(f"apply_gate needs two leading qubits, got dims {dims}")
    u = np.kron(gate.unitary, np.eye(d // 4))
    out = u @ r @ u.conj().T
    return DensityMatrix(0.5 * (out + out.conj().T), dims)


def gate_superoperator(gate: ControlledGate, d: int = 4) -> np.ndarray:
    """Column-stacked superoperator of the gate channel on a ``d``-dim register."""
    u = np.kron(gate.unitary, np.eye(d // 4))
    return np.kron(u.conj(), u)


def control_marginal(rho12, dims=(2, 2)) -> np.ndarray:
    return partial_trace(rho12, [0], dims)


def target_marginal(rho12, dims=(2, 2)) -> np.ndarray:
    return partial_trace(rho12, [1], dims)


def expected_target_marginal(gate: ControlledGate, rho1, rho2) -> np.ndarray:
    """``p0 v0 rho2 v0^dag + p1 v1 rho2 v1^dag`` for a product input."""
    r1 = np.asarray(rho1, dtype=complex)
    r2 = rho2.matrix if isinstance(rho2, AncillaState) else np.asarray(rho2, dtype=complex)
    return (
        r1[0, 0] * gate.v0 @ r2 @ gate.v0.conj().T + r1[1, 1] * gate.v1 @ r2 @ gate.v1.conj().T
    )
