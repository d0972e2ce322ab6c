"""Vectorized Lindbladians and their spectral analysis."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .core import (
    DensityMatrix,
    DimensionError,
    devectorize,
    hermitize,
    vectorize,
)

ZERO_TOL = 1e-9
DEFECTIVE_COND = 1e10
# relative tolerance used to group eigenvalues that share a decay rate
CLUSTER_TOL = 1e-7


class SpectralError(RuntimeError):
    """Raised when an eigen-decomposition cannot be trusted or used."""


@dataclass(frozen=True)
class JumpTerm:
    """Jump operator ``operator`` with rate ``rate``; the dissipator is rate * D[operator]."""

    operator: np.ndarray
    rate: float

    def __post_init__(self):
        op = np.array(self.operator, dtype=complex)
        if op.ndim != 2 or op.shape[0] != op.shape[1]:
            raise DimensionError(f"jump operator must be square, got {op.shape}")
        if not np.isfinite(self.rate) or self.rate < 0:
            raise ValueError(f"jump rate must be a finite nonnegative number, got {self.rate}")
        object.__setattr__(self, "operator", op)
        object.__setattr__(self, "rate", float(self.rate))


@dataclass(frozen=True)
class LindbladSpec:
    hamiltonian: np.ndarray
    jumps: tuple[JumpTerm, ...] = ()
    dims: tuple[int, ...] = ()

    def __post_init__(self):
        h = np.array(self.hamiltonian, dtype=complex)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise DimensionError(f"Hamiltonian must be square, got {h.shape}")
        if not np.all(np.isfinite(h)):
            raise ValueError("Hamiltonian contains NaN or Inf entries")
        if np.max(np.abs(h - h.conj().T), initial=0.0) > 1e-12:
            raise ValueError("Hamiltonian is not Hermitian")
        d = h.shape[0]
        dims = tuple(self.dims) if self.dims else (d,)
        if int(np.prod(dims)) != d:
            raise DimensionError(f"dims {dims} do not match Hamiltonian dimension {d}")
        jumps = tuple(self.jumps)
        for j in jumps:
            if j.operator.shape != (d, d):
                raise DimensionError(
                    f"jump operator shape {j.operator.shape} does not match Hamiltonian dimension {d}"
                )
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "jumps", jumps)

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]


def dissipator_superop(op, rate: float = 1.0) -> np.ndarray:
    """Superoperator of ``rate * D[op]`` in column-stacking convention."""
    op = np.asarray(op, dtype=complex)
    d = op.shape[0]
    eye = np.eye(d)
    ldl = op.conj().T @ op
    return rate * (np.kron(op.conj(), op) - 0.5 * np.kron(eye, ldl) - 0.5 * np.kron(ldl.T, eye))


def hamiltonian_superop(h) -> np.ndarray:
    """Superoperator of ``-i[h, .]`` in column-stacking convention."""
    h = np.asarray(h, dtype=complex)
    eye = np.eye(h.shape[0])
    return -1j * np.kron(eye, h) + 1j * np.kron(h.T, eye)


def build_liouvillian(spec: LindbladSpec) -> np.ndarray:
    """Return the d^2 x d^2 generator acting on column-stacked states.

    With column stacking, ``A rho B`` maps to ``kron(B.T, A)``, so the
    commutator and each dissipator read::

        -i kron(I, H) + i kron(H.T, I)
        kron(L*, L) - 1/2 kron(I, L^dag L) - 1/2 kron((L^dag L).T, I)
    """
    out = hamiltonian_superop(spec.hamiltonian)
    for j in spec.jumps:
        if j.rate:
            out = out + dissipator_superop(j.operator, j.rate)
    return out


def apply_lindblad(spec: LindbladSpec, rho) -> np.ndarray:
    """Right-hand side of the master equation evaluated directly on a matrix."""
    rho = np.asarray(rho, dtype=complex)
    h = spec.hamiltonian
    out = -1j * (h @ rho - rho @ h)
    for j in spec.jumps:
        a = j.operator
        ada = a.conj().T @ a
        out = out + j.rate * (a @ rho @ a.conj().T - 0.5 * (ada @ rho + rho @ ada))
    return out


@dataclass(frozen=True)
class SpectralDecomposition:
    """Sorted eigenvalues with biorthonormal right/left eigenvectors.

    ``right[:, k]`` and ``left[:, k]`` are column vectors with
    ``left[:, j].conj() @ right[:, k] == delta_jk``. The steady-state vector
    ``right[:, 0]`` is normalized to unit trace, so ``left[:, 0]`` is the
    vectorized identity for trace-preserving generators.
    """

    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    defective: bool = False
    condition: float = 1.0
    dim: int = field(default=0)

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    def right_matrix(self, k: int) -> np.ndarray:
        return devectorize(self.right[:, k], self.dim)

    def left_matrix(self, k: int) -> np.ndarray:
        return devectorize(self.left[:, k], self.dim)

    def decay_groups(self, tol: float = CLUSTER_TOL) -> list[np.ndarray]:
        """Indices grouped by common real part, slowest first (zero mode included)."""
        re = self.eigenvalues.real
        scale = max(1.0, float(np.max(np.abs(re), initial=0.0)))
        groups: list[list[int]] = []
        for k in range(self.size):
            if groups and abs(re[k] - re[groups[-1][0]]) <= tol * scale:
                groups[-1].append(k)
            else:
                groups.append([k])
        return [np.array(g) for g in groups]

    def reconstruct(self) -> np.ndarray:
        return (self.right * self.eigenvalues) @ self.left.conj().T


def _sort_order(vals: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Order by |Re|, then |Im|, with conjugate partners interleaved.

    Ties in both are broken by lexicographic comparison of the rounded
    eigenvector entries so the output is deterministic.
    """
    scale = max(1.0, float(np.max(np.abs(vals), initial=0.0)))
    q = CLUSTER_TOL * scale

    def key(k):
        v = vecs[:, k]
        lex = tuple(np.round(np.concatenate([np.abs(v), v.real]), 8))
        return (round(abs(vals[k].real) / q), round(abs(vals[k].imag) / q), np.sign(vals[k].imag), lex)

    order = sorted(range(vals.size), key=key)
    # interleave -Im / +Im members of each (|Re|, |Im|) block so conjugates sit together
    out: list[int] = []
    i = 0
    while i < len(order):
        k0 = key(order[i])[:2]
        block = [order[i]]
        i += 1
        while i < len(order) and key(order[i])[:2] == k0:
            block.append(order[i])
            i += 1
        neg = [k for k in block if vals[k].imag < 0 and abs(vals[k].imag) > q]
        pos = [k for k in block if vals[k].imag > 0 and abs(vals[k].imag) > q]
        real = [k for k in block if abs(vals[k].imag) <= q]
        out.extend(real)
        for a, b in zip(neg, pos):
            out.extend([a, b])
        out.extend(neg[len(pos):] + pos[len(neg):])
    return np.array(out, dtype=int)


def spectral_decompose(liouvillian, dim: int | None = None) -> SpectralDecomposition:
    """Eigen-decompose a Liouvillian into sorted biorthonormal modes.

    Left vectors are the rows of the inverse right-eigenvector matrix, which
    solve the adjoint eigenproblem and are biorthonormal by construction even
    inside degenerate eigenspaces. When the right-eigenvector matrix has
    condition number above ``DEFECTIVE_COND`` the result is flagged
    ``defective`` and spectral propagation refuses to use it.
    """
    lv = np.asarray(liouvillian, dtype=complex)
    if lv.ndim != 2 or lv.shape[0] != lv.shape[1]:
        raise DimensionError(f"Liouvillian must be square, got {lv.shape}")
    if not np.all(np.isfinite(lv)):
        raise SpectralError("Liouvillian contains NaN or Inf entries")
    n = lv.shape[0]
    if dim is None:
        dim = int(round(np.sqrt(n)))
    try:
        vals, vecs = scipy.linalg.eig(lv)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SpectralError(f"eigensolver failed: {exc}") from exc
    if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(vecs))):
        raise SpectralError("eigensolver returned non-finite values")

    # snap numerically-zero parts so ordering and the zero mode are clean
    vals = vals.copy()
    vals.real[np.abs(vals.real) < 1e-13 * max(1.0, np.abs(vals).max())] = 0.0
    vals.imag[np.abs(vals.imag) < 1e-13 * max(1.0, np.abs(vals).max())] = 0.0

    norms = np.linalg.norm(vecs, axis=0)
    vecs = vecs / norms
    # fix the gauge: largest-magnitude entry real and positive
    pivot = vecs[np.argmax(np.abs(vecs), axis=0), np.arange(n)]
    vecs = vecs * (np.abs(pivot) / pivot)

    order = _sort_order(vals, vecs)
    vals, vecs = vals[order], vecs[:, order]

    if abs(vals[0]) < ZERO_TOL:
        tr = np.trace(devectorize(vecs[:, 0], dim)) if dim * dim == n else 0.0
        if abs(tr) > 1e-12:
            vecs[:, 0] = vecs[:, 0] / tr

    cond = float(np.linalg.cond(vecs))
    defective = not np.isfinite(cond) or cond > DEFECTIVE_COND
    if defective:
        left = np.full_like(vecs, np.nan)
    else:
        left = np.linalg.inv(vecs).conj().T
    return SpectralDecomposition(vals, vecs, left, defective, cond, dim)


def zero_modes(dec: SpectralDecomposition) -> np.ndarray:
    return np.flatnonzero(np.abs(dec.eigenvalues) < ZERO_TOL)


def steady_state(dec: SpectralDecomposition, dims: Sequence[int] = ()) -> DensityMatrix:
    """Unique steady state carried by the zero eigenvalue."""
    zeros = zero_modes(dec)
    if zeros.size == 0:
        raise SpectralError(f"no zero eigenvalue (smallest |lambda| = {np.abs(dec.eigenvalues).min():.3e})")
    if zeros.size > 1:
        raise SpectralError(f"zero eigenvalue has multiplicity {zeros.size}: steady state is not unique")
    rho = devectorize(dec.right[:, zeros[0]], dec.dim)
    rho = hermitize(rho / np.trace(rho))
    return DensityMatrix(rho, tuple(dims))


def overlap(left, rho) -> complex:
    """Inner product <<l|rho>> of a left eigenvector with a vectorized state."""
    lv = np.asarray(left, dtype=complex).ravel()
    r = vectorize(np.asarray(rho, dtype=complex))
    if lv.size != r.size:
        raise DimensionError(f"left vector length {lv.size} does not match state length {r.size}")
    return complex(np.vdot(lv, r))


def overlaps(dec: SpectralDecomposition, rho) -> np.ndarray:
    """All coefficients <<l_k|rho>> at once."""
    if dec.defective:
        raise SpectralError("decomposition is defective; mode overlaps are not meaningful")
    return dec.left.conj().T @ vectorize(np.asarray(rho, dtype=complex))


def slowest_rates(dec: SpectralDecomposition) -> tuple[np.ndarray, np.ndarray]:
    """First two nonzero decay groups (indices into the eigenvalue array)."""
    groups = [g for g in dec.decay_groups() if np.max(np.abs(dec.eigenvalues[g].real)) > ZERO_TOL]
    if len(groups) < 2:
        raise SpectralError("fewer than two distinct nonzero decay rates")
    return groups[0], groups[1]


def asymptotic_speedup(dec: SpectralDecomposition) -> float:
    """Ratio Re(lambda_3) / Re(lambda_2) of the two slowest distinct decay rates.

    Conjugate partners and degenerate copies share one decay group. When the
    slowest group contains a real (population) eigenvalue, removing coherences
    cannot bypass it and the speedup is 1.
    """
    if dec.size < 3:
        raise SpectralError("need at least three eigenvalues")
    nonzero = [g for g in dec.decay_groups() if np.max(np.abs(dec.eigenvalues[g])) > ZERO_TOL]
    if not nonzero or abs(dec.eigenvalues[nonzero[0][0]].real) <= ZERO_TOL:
        raise SpectralError("Re(lambda_2) is zero: the slowest mode does not decay")
    g2 = nonzero[0]
    vals2 = dec.eigenvalues[g2]
    scale = max(1.0, float(np.abs(dec.eigenvalues).max()))
    if np.any(np.abs(vals2.imag) <= CLUSTER_TOL * scale):
        return 1.0
    if len(nonzero) < 2:
        raise SpectralError("no second decay rate")
    return float(dec.eigenvalues[nonzero[1][0]].real / vals2[0].real)
