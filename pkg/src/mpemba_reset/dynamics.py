"""Propagation backends, reset times, speedups and robustness."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .core import (
    DensityMatrix,
    devectorize,
    hermitize,
    partial_trace,
    trace_distance_batch,
    vectorize,
)
from .liouvillian import (
    LindbladSpec,
    SpectralDecomposition,
    SpectralError,
    build_liouvillian,
    spectral_decompose,
    steady_state,
    zero_modes,
)
from .protocol import AncillaState, ControlledGate, apply_gate

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-3


class ResetTimeError(RuntimeError):
    pass


class IntegrationError(RuntimeError):
    pass


# --- single-state propagation ---------------------------------------------


def propagate(dec: SpectralDecomposition, rho0, t: float) -> DensityMatrix:
    """Evolve ``rho0`` for time ``t`` through the eigen-expansion."""
    if dec.defective:
        raise SpectralError("decomposition is defective; use propagate_expm instead")
    if t < 0:
        raise ValueError("t must be nonnegative")
    r = np.asarray(rho0, dtype=complex)
    c = dec.left.conj().T @ vectorize(r)
    vec = dec.right @ (np.exp(dec.eigenvalues * t) * c)
    out = hermitize(devectorize(vec, dec.dim))
    dims = rho0.dims if isinstance(rho0, DensityMatrix) else ()
    return DensityMatrix(out, dims, check=False)


def propagate_expm(liouvillian, rho0, t: float) -> DensityMatrix:
    if t < 0:
        raise ValueError("t must be nonnegative")
    r = np.asarray(rho0, dtype=complex)
    vec = scipy.linalg.expm(np.asarray(liouvillian) * t) @ vectorize(r)
    dims = rho0.dims if isinstance(rho0, DensityMatrix) else ()
    return DensityMatrix(hermitize(devectorize(vec, r.shape[0])), dims, check=False)


def _rk4_run(gen, vec, t0, t1, n_steps):
    h = (t1 - t0) / n_steps
    t = t0
    for _ in range(n_steps):
        k1 = gen(t) @ vec
        lm = gen(t + 0.5 * h)
        k2 = lm @ (vec + 0.5 * h * k1)
        k3 = lm @ (vec + 0.5 * h * k2)
        k4 = gen(t + h) @ (vec + h * k3)
        vec = vec + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return vec


def default_step(gen, rate_scale: float = 1.0) -> float:
    """``min(1e-3 / rate_scale, 2 pi / (40 f_max))`` for a generator exposing ``max_frequency``."""
    f = getattr(gen, "max_frequency", None)
    if f is None:
        l0 = gen(0.0)
        f = max(float(np.max(np.abs(np.linalg.eigvals(l0).imag))), 1e-12)
    return min(1e-3 / rate_scale, 2 * np.pi / (40.0 * f))


def propagate_time_dependent(
    gen: Callable[[float], np.ndarray],
    rho0,
    t_grid: Sequence[float],
    step: float | None = None,
    check: bool = True,
    tol: float = 1e-8,
) -> list[DensityMatrix]:
    """Fixed-step RK4 integration of ``d vec/dt = gen(t) vec`` sampled on ``t_grid``.

    Each output sample is Hermitized and trace-normalized. With ``check`` the
    whole run is repeated at half the step, and an :class:`IntegrationError`
    is raised if any sample moves by more than ``tol``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 0 or t_grid[0] != 0 or np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be nondecreasing and start at 0")
    r = np.asarray(rho0, dtype=complex)
    d = r.shape[0]
    if step is None:
        step = default_step(gen)

    def run(h):
        vec = vectorize(r)
        out = [vec]
        for a, b in zip(t_grid[:-1], t_grid[1:]):
            n = max(1, int(np.ceil((b - a) / h - 1e-9)))
            vec = _rk4_run(gen, vec, a, b, n) if b > a else vec
            out.append(vec)
        return np.array(out)

    coarse = run(step)
    if check:
        fine = run(0.5 * step)
        dev = float(np.max(np.abs(coarse - fine)))
        if dev > tol:
            raise IntegrationError(
                f"step halving changed the solution by {dev:.2e} > {tol:.0e}; use a smaller step than {step:.3e}"
            )
    dims = rho0.dims if isinstance(rho0, DensityMatrix) else ()
    states = []
    for vec in coarse:
        m = hermitize(devectorize(vec, d))
        states.append(DensityMatrix(m / np.trace(m).real, dims, check=False))
    return states


# --- trace-distance curves and reset times --------------------------------


@dataclass(frozen=True)
class TraceDistanceCurve:
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(v < 0):
            raise ValueError("trace distances must be nonnegative")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)


def _log_interp(t0, t1, d0, d1, eps):
    tiny = 1e-300
    a, b = np.log(max(d0, tiny)), np.log(max(d1, tiny))
    if a == b:
        return t1
    return t0 + (np.log(eps) - a) / (b - a) * (t1 - t0)


def crossing_bracket(values: np.ndarray, epsilon: float, mode: str = "last") -> int | None:
    """Index ``i`` such that the crossing lies in ``[t_i, t_{i+1}]``; ``None`` if never above."""
    above = np.flatnonzero(values >= epsilon)
    if mode == "last":
        if above.size == 0:
            return None
        i = int(above[-1])
        if i == values.size - 1:
            raise ResetTimeError(
                f"curve does not stay below epsilon={epsilon:g} (final value {values[-1]:.3e})"
            )
        return i
    if mode == "first":
        below = np.flatnonzero(values < epsilon)
        if below.size == 0:
            raise ResetTimeError(f"curve never drops below epsilon={epsilon:g} (final value {values[-1]:.3e})")
        j = int(below[0])
        return None if j == 0 else j - 1
    raise ValueError(f"mode must be 'last' or 'first', got {mode!r}")


def reset_time(curve: TraceDistanceCurve, epsilon: float, mode: str = "last") -> float:
    """Time after which the curve stays below ``epsilon``.

    ``mode="last"`` returns the smallest sampled-consistent ``t*`` with
    ``D(t) < epsilon`` for every sample past it; ``mode="first"`` returns the
    first downward crossing. Crossings are refined by log-linear interpolation
    between the bracketing samples.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    t, v = curve.times, curve.values
    i = crossing_bracket(v, epsilon, mode)
    if i is None:
        return float(t[0])
    return float(_log_interp(t[i], t[i + 1], v[i], v[i + 1], epsilon))


def default_times(t1: float = 1.0, n: int = 2000, lo: float = 1e-3, hi: float = 50.0) -> np.ndarray:
    return np.concatenate([[0.0], np.geomspace(lo * t1, hi * t1, n)])


# --- reset problems ---------------------------------------------------------


class ModalPropagator:
    """Evolves states under a fixed Liouvillian and reports reduced register states.

    Uses the eigen-expansion when it is well conditioned and falls back to
    exact exponential stepping otherwise. ``keep`` lists the subsystems that
    form the register (the remainder, e.g. TLS defects, is traced out).
    """

    def __init__(self, liouvillian, dims: Sequence[int], keep: Sequence[int] | None = None, backend: str = "auto"):
        self.liouvillian = np.asarray(liouvillian, dtype=complex)
        self.dims = tuple(dims)
        self.d = int(np.prod(self.dims))
        self.keep = tuple(range(len(self.dims))) if keep is None else tuple(keep)
        self.dk = int(np.prod([self.dims[k] for k in self.keep]))
        if backend not in ("auto", "spectral", "expm"):
            raise ValueError(f"unknown backend {backend!r}")
        self.dec = spectral_decompose(self.liouvillian, self.d)
        if backend == "spectral" and self.dec.defective:
            raise SpectralError("spectral backend requested for a defective Liouvillian")
        self.spectral = backend != "expm" and not self.dec.defective
        if self.dec.defective:
            logger.warning("Liouvillian is near-defective (cond=%.2e); using expm backend", self.dec.condition)

    @cached_property
    def reduced_modes(self) -> np.ndarray:
        """Right eigenvectors as reduced register operators, shape (n_modes, dk, dk)."""
        mats = self.dec.right.T.reshape(-1, self.d, self.d).transpose(0, 2, 1)
        if len(self.keep) == len(self.dims):
            return mats
        return partial_trace(mats, self.keep, self.dims)

    @cached_property
    def steady(self) -> np.ndarray:
        """Reduced steady state of the register."""
        if self.spectral:
            rho = steady_state(self.dec).mat
        else:
            null = scipy.linalg.null_space(self.liouvillian)
            if null.shape[1] != 1:
                raise SpectralError(f"zero eigenvalue has multiplicity {null.shape[1]}")
            rho = devectorize(null[:, 0], self.d)
            rho = hermitize(rho / np.trace(rho))
        return partial_trace(rho, self.keep, self.dims) if len(self.keep) < len(self.dims) else rho

    def coefficients(self, rho) -> np.ndarray:
        return self.dec.left.conj().T @ vectorize(np.asarray(rho, dtype=complex))

    def reduced_from_coefficients(self, coeffs: np.ndarray, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        w = np.exp(np.outer(times, self.dec.eigenvalues)) * coeffs
        return np.einsum("tk,kij->tij", w, self.reduced_modes)

    def full_states(self, rho, times) -> np.ndarray:
        """Full (unreduced) states at ``times``; shape (T, d, d)."""
        times = np.asarray(times, dtype=float)
        if self.spectral:
            c = self.coefficients(rho)
            vecs = (np.exp(np.outer(times, self.dec.eigenvalues)) * c) @ self.dec.right.T
        else:
            vecs = self._expm_walk(vectorize(np.asarray(rho, dtype=complex)), times)
        return vecs.reshape(-1, self.d, self.d).transpose(0, 2, 1)

    def _expm_walk(self, vec, times):
        out = np.empty((times.size, vec.size), dtype=complex)
        cache: dict[float, np.ndarray] = {}
        t_prev = 0.0
        for n, t in enumerate(times):
            dt = float(t - t_prev)
            if dt < 0:
                raise ValueError("times must be nondecreasing for the expm backend")
            if dt > 0:
                key = round(dt, 15)
                if key not in cache:
                    cache[key] = scipy.linalg.expm(self.liouvillian * dt)
                vec = cache[key] @ vec
            out[n] = vec
            t_prev = t
        return out

    def reduced_states(self, rho, times) -> np.ndarray:
        if self.spectral:
            return self.reduced_from_coefficients(self.coefficients(rho), times)
        full = self.full_states(rho, times)
        return partial_trace(full, self.keep, self.dims) if len(self.keep) < len(self.dims) else full


class ResetModel:
    """A two-qubit register (control q1, ancilla q2) plus optional environment.

    ``spec`` must order subsystems as ``(q1, q2, *environment)``;
    ``environment`` is the initial state of the trailing subsystems (e.g. TLS
    ground states) and is attached to every register state before evolution.
    """

    def __init__(self, spec: LindbladSpec, environment=None, name: str = "model", params: dict | None = None,
                 backend: str = "auto"):
        self.spec = spec
        self.name = name
        self.params = dict(params or {})
        env_dims = spec.dims[2:]
        if env_dims and environment is None:
            environment = np.zeros((int(np.prod(env_dims)),) * 2, dtype=complex)
            environment[0, 0] = 1.0
        self.environment = None if environment is None else np.asarray(environment, dtype=complex)
        self.backend = backend

    @cached_property
    def liouvillian(self) -> np.ndarray:
        return build_liouvillian(self.spec)

    @cached_property
    def propagator(self) -> ModalPropagator:
        return ModalPropagator(self.liouvillian, self.spec.dims, keep=(0, 1), backend=self.backend)

    @property
    def decomposition(self) -> SpectralDecomposition:
        return self.propagator.dec

    @property
    def t1(self) -> float:
        g = self.params.get("gamma1") or self.params.get("gamma")
        return 1.0 / g if g else 1.0

    def full_state(self, rho12) -> np.ndarray:
        r = np.asarray(rho12, dtype=complex)
        return r if self.environment is None else np.kron(r, self.environment)

    def evolve(self, rho12, times) -> np.ndarray:
        """Reduced two-qubit states at ``times``."""
        return self.propagator.reduced_states(self.full_state(rho12), times)

    def distance_curve(self, rho12, times=None, meta=None) -> TraceDistanceCurve:
        times = default_times(self.t1) if times is None else np.asarray(times, dtype=float)
        vals = trace_distance_batch(self.evolve(rho12, times), self.propagator.steady)
        return TraceDistanceCurve(times, vals, meta or {"model": self.name})


def _refine(evaluate, times, values, epsilon, mode, rounds=2, points=65):
    """Zoom into the bracketing interval and resample, ``rounds`` times."""
    i = crossing_bracket(values, epsilon, mode)
    if i is None:
        return float(times[0])
    a, b = times[i], times[i + 1]
    va, vb = values[i], values[i + 1]
    for _ in range(rounds):
        sub = np.linspace(a, b, points)
        vals = evaluate(sub)
        vals[0], vals[-1] = va, vb
        j = crossing_bracket(vals, epsilon, mode) if mode == "first" else _last_in(vals, epsilon)
        if j is None:
            return float(sub[0])
        a, b, va, vb = sub[j], sub[j + 1], vals[j], vals[j + 1]
    return float(_log_interp(a, b, va, vb, epsilon))


def _last_in(vals, epsilon):
    above = np.flatnonzero(vals >= epsilon)
    if above.size == 0:
        return None
    return int(min(above[-1], vals.size - 2))


def refined_reset_time(model: ResetModel, rho12, epsilon: float, times=None, mode: str = "last") -> float:
    """Reset time from the sampled curve, refined by resampling inside the crossing interval."""
    times = default_times(model.t1) if times is None else np.asarray(times, dtype=float)
    full = model.full_state(rho12)
    prop = model.propagator
    steady = prop.steady

    def evaluate(ts):
        return trace_distance_batch(prop.reduced_states(full, ts), steady)

    return _refine(evaluate, times, evaluate(times), epsilon, mode)


# --- speedups ---------------------------------------------------------------


@dataclass(frozen=True)
class SpeedupRecord:
    t_plain: float
    t_gated: float
    speedup: float
    epsilon: float
    overlap_l2_before: float
    overlap_l2_after: float
    estimate: float = float("nan")

    def __post_init__(self):
        if self.t_plain < 0 or self.t_gated < 0:
            raise ValueError("reset times must be nonnegative")


def group_amplitudes(prop: ModalPropagator, coeffs: np.ndarray) -> list[tuple[float, float]]:
    """(decay rate, trace-norm amplitude) of each nonzero decay group of the register state.

    The amplitude is half the trace norm of the group's reduced component at
    ``t = 0``, so the group contributes roughly ``amplitude * exp(-rate t)`` to
    the trace distance at late times.
    """
    out = []
    modes = prop.reduced_modes
    for g in prop.dec.decay_groups():
        rate = -float(prop.dec.eigenvalues[g[0]].real)
        if rate <= 1e-9:
            continue
        comp = np.tensordot(coeffs[g], modes[g], axes=1)
        amp = 0.5 * float(np.sum(np.linalg.svd(hermitize(comp), compute_uv=False)))
        out.append((rate, amp))
    return out


def slowest_group_amplitude(prop: ModalPropagator, coeffs: np.ndarray) -> float:
    """Amplitude of the state on the slowest nonzero decay group (the lambda_2 modes)."""
    g = [g for g in prop.dec.decay_groups() if -prop.dec.eigenvalues[g[0]].real > 1e-9][0]
    comp = np.tensordot(coeffs[g], prop.reduced_modes[g], axes=1)
    return 0.5 * float(np.sum(np.linalg.svd(hermitize(comp), compute_uv=False)))


def estimated_reset_time(amplitudes: list[tuple[float, float]], epsilon: float) -> float:
    """Late-time reset-time estimate ``max_j ln(a_j / eps) / rate_j``."""
    best = 0.0
    for rate, amp in amplitudes:
        if amp > epsilon:
            best = max(best, np.log(amp / epsilon) / rate)
    return best


def speedup_estimate(prop: ModalPropagator, rho_plain, rho_gated, epsilon: float) -> float:
    """Spectral estimate of the finite-epsilon speedup.

    For a state whose slowest populated mode is lambda_2 before the gate and
    lambda_3 after, this is ``(Re l3 / Re l2) (ln eps - ln a2) / (ln eps - ln a3)``
    with ``a_j`` the trace-norm mode amplitudes.
    """
    if not prop.spectral:
        return float("nan")
    tp = estimated_reset_time(group_amplitudes(prop, prop.coefficients(rho_plain)), epsilon)
    tg = estimated_reset_time(group_amplitudes(prop, prop.coefficients(rho_gated)), epsilon)
    return tp / tg if tg > 0 else float("nan")


def speedup_ratio(t_plain: float, t_gated: float) -> float:
    """``t_plain / t_gated``; a state that starts inside the epsilon ball either way counts as 1."""
    if t_gated > 0:
        return t_plain / t_gated
    return 1.0 if t_plain == 0 else float("inf")


def speedup(model: ResetModel, rho_i, gate: ControlledGate, epsilon: float = DEFAULT_EPSILON,
            times=None, mode: str = "last") -> SpeedupRecord:
    """Reset times without and with ``gate`` applied at t = 0 to the register."""
    rho_i = np.asarray(rho_i, dtype=complex)
    rho_g = apply_gate(gate, rho_i, (2, 2)).mat
    t_plain = refined_reset_time(model, rho_i, epsilon, times, mode)
    t_gated = refined_reset_time(model, rho_g, epsilon, times, mode)
    prop = model.propagator
    if prop.spectral:
        before = slowest_group_amplitude(prop, prop.coefficients(model.full_state(rho_i)))
        after = slowest_group_amplitude(prop, prop.coefficients(model.full_state(rho_g)))
        est = speedup_estimate(prop, model.full_state(rho_i), model.full_state(rho_g), epsilon)
    else:
        before = after = est = float("nan")
    s = speedup_ratio(t_plain, t_gated)
    return SpeedupRecord(t_plain, t_gated, s, epsilon, before, after, est)


class EnsembleEvaluator:
    """Reset times for many control-qubit states sharing one model, ancilla and gate set.

    Evolution is linear in the control state, so the reduced trajectories of
    the four matrix units ``|i><j|`` (tensored with the ancilla, gated or not)
    are computed once and recombined for each member of the ensemble.
    """

    def __init__(self, model: ResetModel, ancilla: AncillaState, gates: dict[str, ControlledGate | None],
                 times=None, epsilon: float = DEFAULT_EPSILON, mode: str = "last"):
        self.model = model
        self.ancilla = ancilla
        self.times = default_times(model.t1) if times is None else np.asarray(times, dtype=float)
        self.epsilon = epsilon
        self.mode = mode
        prop = model.propagator
        self._basis: dict[str, list] = {}
        for name, gate in gates.items():
            entries = []
            for i in range(2):
                for j in range(2):
                    unit = np.zeros((2, 2), dtype=complex)
                    unit[i, j] = 1.0
                    r = np.kron(unit, ancilla.matrix)
                    if gate is not None:
                        u = gate.unitary
                        r = u @ r @ u.conj().T
                    full = model.full_state(r)
                    if prop.spectral:
                        c = prop.coefficients(full)
                        entries.append((c, prop.reduced_from_coefficients(c, self.times)))
                    else:
                        entries.append((full, prop.reduced_states(full, self.times)))
            self._basis[name] = entries

    def _combine(self, name: str, rho1: np.ndarray):
        e = self._basis[name]
        w = rho1.reshape(-1)
        first = w[0] * e[0][0] + w[1] * e[1][0] + w[2] * e[2][0] + w[3] * e[3][0]
        traj = w[0] * e[0][1] + w[1] * e[1][1] + w[2] * e[2][1] + w[3] * e[3][1]
        return first, traj

    def curve(self, name: str, rho1) -> TraceDistanceCurve:
        _, traj = self._combine(name, np.asarray(rho1, dtype=complex))
        return TraceDistanceCurve(self.times, trace_distance_batch(traj, self.model.propagator.steady))

    def reset_time(self, name: str, rho1) -> float:
        rho1 = np.asarray(rho1, dtype=complex)
        first, traj = self._combine(name, rho1)
        prop = self.model.propagator
        steady = prop.steady
        values = trace_distance_batch(traj, steady)
        if prop.spectral:
            def evaluate(ts):
                return trace_distance_batch(prop.reduced_from_coefficients(first, ts), steady)
        else:
            def evaluate(ts):
                return trace_distance_batch(prop.reduced_states(first, ts), steady)
        return _refine(evaluate, self.times, values, self.epsilon, self.mode)

    def amplitude(self, name: str, rho1) -> float:
        prop = self.model.propagator
        if not prop.spectral:
            return float("nan")
        first, _ = self._combine(name, np.asarray(rho1, dtype=complex))
        return slowest_group_amplitude(prop, first)

    def estimate(self, plain: str, gated: str, rho1) -> float:
        prop = self.model.propagator
        if not prop.spectral:
            return float("nan")
        cp, _ = self._combine(plain, np.asarray(rho1, dtype=complex))
        cg, _ = self._combine(gated, np.asarray(rho1, dtype=complex))
        tp = estimated_reset_time(group_amplitudes(prop, cp), self.epsilon)
        tg = estimated_reset_time(group_amplitudes(prop, cg), self.epsilon)
        return tp / tg if tg > 0 else float("nan")


def robustness(model: ResetModel, rho1_states, ancilla: AncillaState, dtheta_x: float, dtheta_y: float,
               epsilon: float = DEFAULT_EPSILON, order: str = "xy", times=None) -> float:
    """Mean over ``rho1_states`` of t(exact gate) / t(perturbed gate)."""
    from .protocol import cry_pi, perturbed_cry

    ev = EnsembleEvaluator(
        model, ancilla, {"exact": cry_pi(), "err": perturbed_cry(dtheta_x, dtheta_y, order)}, times, epsilon
    )
    ratios = [speedup_ratio(ev.reset_time("exact", r), ev.reset_time("err", r)) for r in rho1_states]
    return float(np.mean(ratios))


@dataclass(frozen=True)
class EnvelopeFit:
    rate: float
    amplitude: float
    peak_times: np.ndarray

    def __call__(self, t):
        return self.amplitude * np.exp(-self.rate * np.asarray(t, dtype=float))


def peak_envelope(curve: TraceDistanceCurve, floor: float = 1e-12) -> EnvelopeFit:
    """Exponential fitted through the local maxima of an oscillating curve.

    Diagnostic only: reset times are always read off the curve itself.
    """
    from scipy.signal import find_peaks

    v = curve.values
    idx, _ = find_peaks(v)
    idx = idx[v[idx] > floor]
    if idx.size < 2:
        raise ValueError("need at least two peaks above the floor for an envelope fit")
    slope, icpt = np.polyfit(curve.times[idx], np.log(v[idx]), 1)
    return EnvelopeFit(-float(slope), float(np.exp(icpt)), curve.times[idx])
