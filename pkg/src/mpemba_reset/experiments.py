"""Config-driven experiment runner with reproducible Haar sampling."""
from __future__ import annotations

import csv
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import DensityMatrix, l1_coherence, partial_trace, purity
from .dynamics import EnsembleEvaluator, ResetModel, default_times, propagate_time_dependent, speedup_ratio
from .liouvillian import asymptotic_speedup, build_liouvillian, overlaps, spectral_decompose
from .models import (
    EmbeddingParams,
    MarkovParams,
    ThermalParams,
    analytic_redfield_state,
    embedding_model,
    redfield_generator,
    thermal_speedup,
    two_qubit_markovian,
    two_qubit_thermal,
)
from .protocol import AncillaState, apply_gate, cry_pi, perturbed_cry

EXPERIMENTS = (
    "spectrum-overlaps",
    "speedup-map",
    "haar-ensemble",
    "nm-compare",
    "redfield-validate",
    "robustness-map",
    "finite-temperature",
    "ancilla-sweep",
)
MODEL_KINDS = ("markovian", "embedding", "thermal")
HAAR_COLUMNS = (
    "experiment", "seed", "state_index", "theta", "phi",
    "t_plain", "t_gated", "speedup", "overlap_l2_before", "overlap_l2_after",
)


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


# --- Haar sampling ----------------------------------------------------------


@dataclass(frozen=True)
class HaarSampler:
    """Counter-based stream: ``(seed, index)`` fully determines the sample."""

    seed: int
    offset: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def generator(self, index: int) -> np.random.Generator:
        ss = np.random.SeedSequence([int(self.seed), int(self.offset + index)])
        return np.random.Generator(np.random.Philox(ss))

    def angles(self, index: int) -> tuple[float, float]:
        g = self.generator(index)
        cos_theta = g.uniform(-1.0, 1.0)
        phi = g.uniform(0.0, 2.0 * np.pi)
        return float(np.arccos(cos_theta)), float(phi)

    def state(self, index: int) -> DensityMatrix:
        return bloch_state(*self.angles(index))


def bloch_state(theta: float, phi: float) -> DensityMatrix:
    psi = np.array([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)])
    return DensityMatrix(np.outer(psi, psi.conj()), (2,))


def haar_state(sampler: HaarSampler, index: int = 0) -> DensityMatrix:
    return sampler.state(index)


# --- configuration ----------------------------------------------------------

_MODEL_FIELDS = {
    "markovian": ("omega_q", "gamma1", "gamma_phi"),
    "thermal": ("omega", "gamma", "nbar", "gamma_phi"),
    "embedding": ("omega_q", "omega_t", "nu_zx", "gamma1", "gamma_phi", "kappa"),
}
_PARAM_TYPES = {"markovian": MarkovParams, "thermal": ThermalParams, "embedding": EmbeddingParams}


@dataclass
class ExperimentConfig:
    experiment: str
    model: dict = field(default_factory=lambda: {"kind": "markovian"})
    ensemble: dict = field(default_factory=lambda: {"count": 1000, "seed": 0})
    epsilon: float = 1e-3
    ancilla: dict = field(default_factory=lambda: {"p0": 0.0, "coherence": 0.0})
    grid: dict = field(default_factory=dict)
    output: dict = field(default_factory=lambda: {"path": "-", "format": "csv"})
    histogram: dict = field(default_factory=lambda: {"bins": 50, "lo": 1.0, "hi": 2.0})

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: unknown value {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        kind = self.model.get("kind", "markovian")
        if kind not in MODEL_KINDS:
            raise ConfigError(f"model.kind: unknown value {kind!r}; choose from {', '.join(MODEL_KINDS)}")
        extra = set(self.model) - set(_MODEL_FIELDS[kind]) - {"kind"}
        if extra:
            raise ConfigError(f"model: unknown field(s) {sorted(extra)} for kind {kind!r}")
        try:
            self.params()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"model: {exc}") from exc
        if not (isinstance(self.epsilon, (int, float)) and 0 < self.epsilon < 1):
            raise ConfigError(f"epsilon: must lie in (0, 1), got {self.epsilon!r}")
        count = self.ensemble.get("count", 1000)
        if not isinstance(count, int) or count <= 0:
            raise ConfigError(f"ensemble.count: must be a positive integer, got {count!r}")
        seed = self.ensemble.get("seed", 0)
        if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
            raise ConfigError(f"ensemble.seed: must be an unsigned 64-bit integer, got {seed!r}")
        fmt = self.output.get("format", "csv")
        if fmt not in ("csv", "json"):
            raise ConfigError(f"output.format: must be 'csv' or 'json', got {fmt!r}")
        try:
            self.ancilla_state()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"ancilla: {exc}") from exc

    def params(self):
        kind = self.model.get("kind", "markovian")
        kw = {k: float(v) for k, v in self.model.items() if k != "kind"}
        return _PARAM_TYPES[kind](**kw)

    def ancilla_state(self) -> AncillaState:
        c = self.ancilla.get("coherence", 0.0)
        if isinstance(c, (list, tuple)):
            c = complex(c[0], c[1])
        return AncillaState(float(self.ancilla.get("p0", 0.0)), c)

    @property
    def seed(self) -> int:
        return int(self.ensemble.get("seed", 0))

    @property
    def count(self) -> int:
        return int(self.ensemble.get("count", 1000))

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {"experiment", "model", "ensemble", "epsilon", "ancilla", "grid", "output", "histogram"}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown top-level field(s): {sorted(extra)}")
        if "experiment" not in data:
            raise ConfigError("experiment: required field missing")
        kw = {k: v for k, v in data.items() if k in known}
        for sect in ("model", "ensemble", "ancilla", "grid", "output", "histogram"):
            if sect in kw and not isinstance(kw[sect], dict):
                raise ConfigError(f"{sect}: must be a table")
        base = cls.__dataclass_fields__
        merged = {}
        for k, v in kw.items():
            if isinstance(v, dict) and k != "model" and base[k].default_factory is not None:
                d = base[k].default_factory()
                d.update(v)
                merged[k] = d
            else:
                merged[k] = v
        return cls(**merged)

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from exc
        return cls.from_dict(data)


# --- model construction -----------------------------------------------------


def model_columns(cfg: ExperimentConfig) -> dict[str, Any]:
    """Model parameters as ordered CSV columns."""
    kind = cfg.model.get("kind", "markovian")
    p = cfg.params()
    cols = {"model": kind}
    for name in _MODEL_FIELDS[kind]:
        cols[name] = getattr(p, name)
    return cols


def build_reset_model(kind: str, params) -> ResetModel:
    if kind == "markovian":
        return ResetModel(two_qubit_markovian(params), name=kind, params={"gamma1": params.gamma1})
    if kind == "thermal":
        return ResetModel(two_qubit_thermal(params), name=kind, params={"gamma": params.gamma})
    if kind == "embedding":
        return ResetModel(embedding_model(params, 2), name=kind, params={"gamma1": params.gamma1})
    raise ConfigError(f"model.kind: unknown value {kind!r}")


def _times(cfg: ExperimentConfig, model: ResetModel) -> np.ndarray:
    g = cfg.grid
    return default_times(model.t1, int(g.get("n_times", 2000)), float(g.get("t_min", 1e-3)), float(g.get("t_max", 50.0)))


# --- ensemble machinery -----------------------------------------------------


def map_ordered(fn: Callable[[int], Any], n: int, threads: int = 1) -> list:
    """``[fn(0), ..., fn(n-1)]`` evaluated on a thread pool; order fixed by index."""
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


def ensemble_rows(model: ResetModel, ancilla: AncillaState, sampler: HaarSampler, count: int,
                  epsilon: float, times, threads: int = 1, gate=None) -> list[dict]:
    gate = cry_pi() if gate is None else gate
    ev = EnsembleEvaluator(model, ancilla, {"plain": None, "gated": gate}, times, epsilon)

    def one(i):
        theta, phi = sampler.angles(i)
        r1 = bloch_state(theta, phi).mat
        tp = ev.reset_time("plain", r1)
        tg = ev.reset_time("gated", r1)
        return {
            "state_index": i, "theta": theta, "phi": phi, "t_plain": tp, "t_gated": tg,
            "speedup": speedup_ratio(tp, tg),
            "overlap_l2_before": ev.amplitude("plain", r1), "overlap_l2_after": ev.amplitude("gated", r1),
        }

    return map_ordered(one, count, threads)


def histogram(values, bins: int = 50, lo: float = 1.0, hi: float = 2.0) -> dict:
    counts, edges = np.histogram(np.asarray(values, dtype=float), bins=bins, range=(lo, hi))
    return {"edges": edges.tolist(), "counts": counts.tolist()}


def summarize(values, hist_cfg: dict) -> dict:
    v = np.asarray(values, dtype=float)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {
        "count": int(v.size), "median": float(med), "mean": float(v.mean()), "std": float(v.std()),
        "iqr": float(q3 - q1), "min": float(v.min()), "max": float(v.max()),
        "histogram": histogram(v, int(hist_cfg.get("bins", 50)), float(hist_cfg.get("lo", 1.0)), float(hist_cfg.get("hi", 2.0))),
    }


# --- experiments ------------------------------------------------------------


@dataclass
class Result:
    experiment: str
    columns: list[str]
    rows: list[dict]
    summary: dict = field(default_factory=dict)


def _exp_spectrum_overlaps(cfg: ExperimentConfig, threads: int) -> Result:
    kind = cfg.model.get("kind", "markovian")
    model = build_reset_model(kind, cfg.params())
    dec = model.decomposition
    theta = float(cfg.grid.get("theta", np.pi / 2))
    phi = float(cfg.grid.get("phi", 0.0))
    rho = np.kron(bloch_state(theta, phi).mat, cfg.ancilla_state().matrix)
    before = np.abs(overlaps(dec, model.full_state(rho)))
    after = np.abs(overlaps(dec, model.full_state(apply_gate(cry_pi(), rho).mat)))
    base = {"experiment": cfg.experiment, **model_columns(cfg), "theta": theta, "phi": phi}
    rows = [
        {**base, "mode_index": k + 1, "re_lambda": float(lam.real), "im_lambda": float(lam.imag),
         "overlap_before": float(b), "overlap_after": float(a)}
        for k, (lam, b, a) in enumerate(zip(dec.eigenvalues, before, after))
    ]
    return Result(cfg.experiment, list(rows[0]), rows, {"asymptotic_speedup": asymptotic_speedup(dec)})


def _exp_speedup_map(cfg: ExperimentConfig, threads: int) -> Result:
    g = cfg.grid
    n = int(g.get("n", 50))
    t1s = np.linspace(float(g.get("t1_min", 0.5)), float(g.get("t1_max", 2.0)), n)
    t2s = np.linspace(float(g.get("t2_min", 0.5)), float(g.get("t2_max", 2.0)), n)
    omega = float(cfg.model.get("omega_q", 1.0))
    pairs = [(a, b) for a in t1s for b in t2s if b <= 2 * a]

    def one(i):
        t1, t2 = pairs[i]
        p = MarkovParams.from_t1_t2(t1, t2, omega)
        s = asymptotic_speedup(spectral_decompose(build_liouvillian(two_qubit_markovian(p)), 4))
        return {"experiment": cfg.experiment, "t1": float(t1), "t2": float(t2), "omega_q": omega,
                "gamma1": p.gamma1, "gamma_phi": p.gamma_phi, "speedup": s, "t2_over_t1": float(t2 / t1)}

    rows = map_ordered(one, len(pairs), threads)
    return Result(cfg.experiment, list(rows[0]), rows)


def _exp_haar_ensemble(cfg: ExperimentConfig, threads: int) -> Result:
    kind = cfg.model.get("kind", "markovian")
    model = build_reset_model(kind, cfg.params())
    anc = cfg.ancilla_state()
    rows = ensemble_rows(model, anc, HaarSampler(cfg.seed), cfg.count, cfg.epsilon, _times(cfg, model), threads)
    extra = {**model_columns(cfg), "ancilla_p0": anc.p0, "ancilla_coherence": abs(anc.coherence), "epsilon": cfg.epsilon}
    out = [{"experiment": cfg.experiment, "seed": cfg.seed, **r, **extra} for r in rows]
    cols = list(HAAR_COLUMNS) + list(extra)
    return Result(cfg.experiment, cols, out, summarize([r["speedup"] for r in rows], cfg.histogram))


def _exp_nm_compare(cfg: ExperimentConfig, threads: int) -> Result:
    p = cfg.params()
    if not isinstance(p, EmbeddingParams):
        raise ConfigError("model.kind: nm-compare needs an embedding model")
    anc = cfg.ancilla_state()
    sampler = HaarSampler(cfg.seed)
    mk = build_reset_model("markovian", p.markov)
    em = build_reset_model("embedding", p)
    rm = ensemble_rows(mk, anc, sampler, cfg.count, cfg.epsilon, _times(cfg, mk), threads)
    re_ = ensemble_rows(em, anc, sampler, cfg.count, cfg.epsilon, _times(cfg, em), threads)
    extra = {**model_columns(cfg), "ancilla_p0": anc.p0, "epsilon": cfg.epsilon}
    rows = [
        {"experiment": cfg.experiment, "seed": cfg.seed, "state_index": a["state_index"], "theta": a["theta"],
         "phi": a["phi"], "speedup_markov": a["speedup"], "speedup_embedding": b["speedup"],
         "t_plain_embedding": b["t_plain"], "t_gated_embedding": b["t_gated"], **extra}
        for a, b in zip(rm, re_)
    ]
    summary = {
        "markovian": summarize([r["speedup"] for r in rm], cfg.histogram),
        "embedding": summarize([r["speedup"] for r in re_], cfg.histogram),
    }
    return Result(cfg.experiment, list(rows[0]), rows, summary)


def _exp_redfield_validate(cfg: ExperimentConfig, threads: int) -> Result:
    p = cfg.params()
    if not isinstance(p, EmbeddingParams):
        raise ConfigError("model.kind: redfield-validate needs an embedding model")
    theta = float(cfg.grid.get("theta", np.pi / 2))
    phi = float(cfg.grid.get("phi", 0.0))
    t_max = float(cfg.grid.get("t_max", 10.0)) / p.gamma1
    n = int(cfg.grid.get("n_times", 201))
    times = np.linspace(0.0, t_max, n)
    r0 = bloch_state(theta, phi).mat
    gen = redfield_generator(p, 1)
    # the default rule leaves too little margin for the halving check at large omega
    step = float(cfg.grid.get("step", min(1e-3 / p.gamma1, 2 * np.pi / (800.0 * gen.max_frequency))))
    reds = propagate_time_dependent(gen, r0, times, step=step)
    full = ResetModel(embedding_model(p, 1), name="embedding")
    tls0 = np.diag([1.0, 0.0]).astype(complex)
    emb = partial_trace(
        full.propagator.full_states(np.kron(r0, tls0), times), [0], (2, 2)
    )
    rows = []
    for t, rr, re_ in zip(times, reds, emb):
        an = analytic_redfield_state(t, r0, p).mat
        rows.append({
            "experiment": cfg.experiment, **model_columns(cfg), "theta": theta, "phi": phi, "t": float(t),
            "purity_redfield": purity(rr), "purity_embedding": purity(re_), "purity_analytic": purity(an),
            "coherence_redfield": l1_coherence(rr), "coherence_embedding": l1_coherence(re_),
            "coherence_analytic": l1_coherence(an),
            "max_dev_analytic": float(np.max(np.abs(rr.mat - an))),
        })
    summary = {
        "max_dev_analytic": max(r["max_dev_analytic"] for r in rows),
        "max_purity_gap": max(abs(r["purity_redfield"] - r["purity_embedding"]) for r in rows),
        "max_coherence_gap": max(abs(r["coherence_redfield"] - r["coherence_embedding"]) for r in rows),
    }
    return Result(cfg.experiment, list(rows[0]), rows, summary)


def _exp_robustness_map(cfg: ExperimentConfig, threads: int) -> Result:
    p = cfg.params()
    if not isinstance(p, EmbeddingParams):
        raise ConfigError("model.kind: robustness-map compares Markovian and embedding models; give embedding parameters")
    g = cfg.grid
    n = int(g.get("n", 11))
    span = float(g.get("max_error", np.pi))
    order = str(g.get("order", "xy"))
    errs = np.linspace(0.0, span, n)
    anc = cfg.ancilla_state()
    sampler = HaarSampler(cfg.seed)
    states = [sampler.state(i).mat for i in range(cfg.count)]
    models = {"markov": build_reset_model("markovian", p.markov), "embedding": build_reset_model("embedding", p)}
    pairs = [(dx, dy) for dx in errs for dy in errs]
    exact: dict[str, list[float]] = {}
    for name, m in models.items():
        ev = EnsembleEvaluator(m, anc, {"exact": cry_pi()}, _times(cfg, m), cfg.epsilon)
        exact[name] = [ev.reset_time("exact", s) for s in states]

    def one(i):
        dx, dy = pairs[i]
        row = {"experiment": cfg.experiment, "seed": cfg.seed, "dtheta_x": float(dx), "dtheta_y": float(dy)}
        for name, m in models.items():
            ev = EnsembleEvaluator(m, anc, {"err": perturbed_cry(dx, dy, order)}, _times(cfg, m), cfg.epsilon)
            row[f"r_{name}"] = float(np.mean([speedup_ratio(te, ev.reset_time("err", s)) for te, s in zip(exact[name], states)]))
        return row

    rows = map_ordered(one, len(pairs), threads)
    extra = {**model_columns(cfg), "n_states": cfg.count, "order": order, "epsilon": cfg.epsilon}
    rows = [{**r, **extra} for r in rows]
    diff = [r["r_markov"] - r["r_embedding"] for r in rows]
    return Result(cfg.experiment, list(rows[0]), rows, {"mean_markov_minus_embedding": float(np.mean(diff))})


def _exp_finite_temperature(cfg: ExperimentConfig, threads: int) -> Result:
    g = cfg.grid
    nbars = np.linspace(float(g.get("nbar_min", 0.0)), float(g.get("nbar_max", 2.0)), int(g.get("n_nbar", 21)))
    ratios = np.linspace(float(g.get("ratio_min", 0.0)), float(g.get("ratio_max", 1.0)), int(g.get("n_ratio", 21)))
    p0 = cfg.params() if isinstance(cfg.params(), ThermalParams) else ThermalParams()
    pairs = [(a, b) for a in nbars for b in ratios]

    def one(i):
        nbar, ratio = pairs[i]
        p = ThermalParams(p0.omega, p0.gamma, float(nbar), float(ratio * p0.gamma))
        s_num = asymptotic_speedup(spectral_decompose(build_liouvillian(two_qubit_thermal(p)), 4))
        return {"experiment": cfg.experiment, "omega": p.omega, "gamma": p.gamma, "nbar": p.nbar,
                "gamma_phi_over_gamma": float(ratio), "gamma_phi": p.gamma_phi,
                "speedup_formula": thermal_speedup(p), "speedup_spectral": s_num}

    rows = map_ordered(one, len(pairs), threads)
    return Result(cfg.experiment, list(rows[0]), rows)


def _exp_ancilla_sweep(cfg: ExperimentConfig, threads: int) -> Result:
    kind = cfg.model.get("kind", "markovian")
    model = build_reset_model(kind, cfg.params())
    g = cfg.grid
    p0s = [float(x) for x in g.get("p0", [0.0, 0.2, 0.4, 0.6, 0.8, 1.0])]
    cohs = [float(x) for x in g.get("coherence", [])]
    coh_p0 = float(g.get("coherence_p0", 0.5))
    # population sweep at zero coherence, then a coherence sweep at fixed population
    settings = [(p0, 0.0) for p0 in p0s] + [(coh_p0, c) for c in cohs if c > 0]
    sampler = HaarSampler(cfg.seed)
    rows, summary = [], []
    for p0, c in settings:
        anc = AncillaState(p0, c)
        res = ensemble_rows(model, anc, sampler, cfg.count, cfg.epsilon, _times(cfg, model), threads)
        for r in res:
            rows.append({"experiment": cfg.experiment, "seed": cfg.seed, "state_index": r["state_index"],
                         "theta": r["theta"], "phi": r["phi"], "ancilla_p0": p0, "ancilla_coherence": c,
                         "t_plain": r["t_plain"], "t_gated": r["t_gated"], "speedup": r["speedup"],
                         **model_columns(cfg), "epsilon": cfg.epsilon})
        summary.append({"ancilla_p0": p0, "ancilla_coherence": c,
                        **summarize([r["speedup"] for r in res], cfg.histogram)})
    return Result(cfg.experiment, list(rows[0]), rows, {"settings": summary})


_RUNNERS = {
    "spectrum-overlaps": _exp_spectrum_overlaps,
    "speedup-map": _exp_speedup_map,
    "haar-ensemble": _exp_haar_ensemble,
    "nm-compare": _exp_nm_compare,
    "redfield-validate": _exp_redfield_validate,
    "robustness-map": _exp_robustness_map,
    "finite-temperature": _exp_finite_temperature,
    "ancilla-sweep": _exp_ancilla_sweep,
}


def run(cfg: ExperimentConfig, threads: int = 1) -> Result:
    """Run one experiment; records are ordered by grid or state index."""
    return _RUNNERS[cfg.experiment](cfg, threads)


# --- output -------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def to_csv(result: Result) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(result.columns)
    for r in result.rows:
        w.writerow([_fmt(r[c]) for c in result.columns])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def to_json(result: Result) -> str:
    doc = {"experiment": result.experiment, "columns": result.columns,
           "records": [{c: r[c] for c in result.columns} for r in result.rows], "summary": result.summary}
    return json.dumps(_jsonable(doc), indent=1, sort_keys=False) + "\n"


def write_result(result: Result, path: str | Path, fmt: str = "csv") -> str:
    text = to_csv(result) if fmt == "csv" else to_json(result)
    if str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text
