"""Dense linear-algebra primitives and density-matrix utilities.

All vectorization in this package uses column stacking::

    vec(rho)[i + d * j] == rho[i, j]

which gives ``vec(A @ rho @ B^dagger) == kron(B.conj(), A) @ vec(rho)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10


class DimensionError(ValueError):
    """Raised when operand shapes or subsystem dimensions do not match."""


class InvalidStateError(ValueError):
    """Raised when a matrix fails the density-matrix invariants."""


def _check_finite(m: np.ndarray, name: str = "matrix") -> None:
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains NaN or Inf entries")


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian, unit-trace, positive semidefinite matrix with subsystem dims.

    ``dims`` defaults to a single subsystem of dimension ``d``. Validation runs
    at construction; pass ``check=False`` for intermediate propagation results
    that are validated by the caller.
    """

    mat: np.ndarray
    dims: tuple[int, ...] = field(default=())
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        mat = np.array(self.mat, dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DimensionError(f"density matrix must be square, got shape {mat.shape}")
        dims = tuple(int(x) for x in self.dims) if self.dims else (mat.shape[0],)
        if int(np.prod(dims)) != mat.shape[0]:
            raise DimensionError(f"dims {dims} do not multiply to {mat.shape[0]}")
        mat.setflags(write=False)
        object.__setattr__(self, "mat", mat)
        object.__setattr__(self, "dims", dims)
        if self.check:
            validate_density_matrix(mat)

    def __array__(self, dtype=None, copy=None):
        return self.mat if dtype is None else self.mat.astype(dtype)

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    @classmethod
    def from_pure(cls, psi, dims: Sequence[int] = ()) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex).ravel()
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()), tuple(dims))

    def tensor(self, other: "DensityMatrix") -> "DensityMatrix":
        return DensityMatrix(np.kron(self.mat, other.mat), self.dims + other.dims)


def validate_density_matrix(mat: np.ndarray) -> None:
    """Raise :class:`InvalidStateError` unless ``mat`` is a valid state."""
    _check_finite(mat, "density matrix")
    herm = np.max(np.abs(mat - mat.conj().T)) if mat.size else 0.0
    if herm > HERMITIAN_TOL:
        raise InvalidStateError(f"not Hermitian (max deviation {herm:.3e})")
    tr = np.trace(mat)
    if abs(tr - 1.0) > TRACE_TOL:
        raise InvalidStateError(f"trace {tr.real:.15g} differs from 1")
    lo = np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))[0]
    if lo < -PSD_TOL:
        raise InvalidStateError(f"not positive semidefinite (min eigenvalue {lo:.3e})")


def _mat(x) -> np.ndarray:
    return np.asarray(x, dtype=complex)


def _dims_of(x, dims=None) -> tuple[int, ...]:
    if dims is not None:
        return tuple(int(d) for d in dims)
    if isinstance(x, DensityMatrix):
        return x.dims
    return (np.asarray(x).shape[0],)


def kron(a, b) -> np.ndarray:
    """Kronecker product of two matrices."""
    return np.kron(_mat(a), _mat(b))


def kron_all(*ops) -> np.ndarray:
    out = np.eye(1, dtype=complex)
    for op in ops:
        out = np.kron(out, _mat(op))
    return out


def vectorize(rho) -> np.ndarray:
    """Column-stack a square matrix into a vector of length d**2."""
    m = _mat(rho)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {m.shape}")
    return m.reshape(-1, order="F")


def devectorize(vec, d: int | None = None) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    v = np.asarray(vec, dtype=complex).ravel()
    if d is None:
        d = int(round(np.sqrt(v.size)))
    if d * d != v.size:
        raise DimensionError(f"vector of length {v.size} is not a d x d matrix with d={d}")
    return v.reshape(d, d, order="F")


def partial_trace(rho, keep, dims: Sequence[int] | None = None) -> np.ndarray:
    """Reduced operator on the subsystems listed in ``keep``.

    Subsystem indices are zero-based and refer to positions in ``dims`` (taken
    from ``rho.dims`` when ``rho`` is a :class:`DensityMatrix`). Works on any
    square operator, and on stacks of operators with leading batch axes.
    """
    m = _mat(rho)
    dims = _dims_of(rho, dims)
    n = len(dims)
    keep = sorted({int(k) for k in np.atleast_1d(keep)})
    if not keep:
        raise ValueError("keep must name at least one subsystem")
    if keep[0] < 0 or keep[-1] >= n:
        raise DimensionError(f"subsystem index out of range for dims {dims}")
    d = int(np.prod(dims))
    if m.shape[-2:] != (d, d):
        raise DimensionError(f"operator shape {m.shape[-2:]} does not match dims {dims}")
    batch = m.shape[:-2]
    nb = len(batch)
    t = m.reshape(batch + tuple(dims) + tuple(dims))
    drop = [i for i in range(n) if i not in keep]
    # contract each dropped index pair, highest first so positions stay valid
    for k, i in enumerate(sorted(drop, reverse=True)):
        remaining = n - k
        t = np.trace(t, axis1=nb + i, axis2=nb + remaining + i)
    dk = int(np.prod([dims[i] for i in keep]))
    return t.reshape(batch + (dk, dk))


def trace_distance(a, b) -> float:
    """Half the trace norm of ``a - b``."""
    diff = _mat(a) - _mat(b)
    if diff.ndim != 2:
        raise DimensionError("trace_distance expects two matrices of equal shape")
    return 0.5 * float(np.sum(np.linalg.svd(diff, compute_uv=False)))


def trace_distance_batch(a, b) -> np.ndarray:
    """Trace distance for stacks of Hermitian operators ``a[..., d, d]``.

    Uses ``eigvalsh`` on the Hermitian part, which equals the singular-value
    sum for Hermitian differences and is several times cheaper.
    """
    diff = _mat(a) - _mat(b)
    herm = 0.5 * (diff + np.conj(np.swapaxes(diff, -1, -2)))
    return 0.5 * np.abs(np.linalg.eigvalsh(herm)).sum(axis=-1)


def purity(rho) -> float:
    m = _mat(rho)
    return float(np.real(np.einsum("ij,ji->", m, m)))


def l1_coherence(rho) -> float:
    """Sum of absolute values of the off-diagonal entries."""
    m = _mat(rho)
    return float(np.sum(np.abs(m)) - np.sum(np.abs(np.diag(m))))


def hermitize(m) -> np.ndarray:
    m = _mat(m)
    return 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))


def matrix_exponential(m) -> np.ndarray:
    """Matrix exponential (scaling and squaring with Pade approximants)."""
    m = _mat(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {m.shape}")
    return scipy.linalg.expm(m)


# Pauli algebra, with |0> the ground state: sigma_minus |1> = |0>.
IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.T.copy()


def embed(op, site: int, n_sites: int) -> np.ndarray:
    """Place a single-qubit operator on ``site`` of an ``n_sites`` qubit register."""
    return kron_all(*[op if k == site else IDENTITY for k in range(n_sites)])


def ground_state(n_qubits: int) -> DensityMatrix:
    d = 2 ** n_qubits
    g = np.zeros((d, d), dtype=complex)
    g[0, 0] = 1.0
    return DensityMatrix(g, (2,) * n_qubits)
