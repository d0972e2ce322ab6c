"""Command-line entry point ``mpemba-reset``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .experiments import ConfigError, ExperimentConfig, run, write_result
from .liouvillian import SpectralError, asymptotic_speedup, build_liouvillian, spectral_decompose
from .models import (
    EmbeddingParams,
    MarkovParams,
    ThermalParams,
    embedding_model,
    single_qubit_markovian,
    two_qubit_markovian,
    two_qubit_thermal,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
NUMERICAL_ERRORS = (SpectralError, ArithmeticError, np.linalg.LinAlgError, RuntimeError)


def _cmd_run(args) -> int:
    try:
        cfg = ExperimentConfig.from_toml(args.config)
        if args.seed is not None:
            cfg.ensemble["seed"] = args.seed
        if args.format is not None:
            cfg.output["format"] = args.format
        cfg.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out if args.out is not None else cfg.output.get("path", "-")
    try:
        result = run(cfg, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure in {cfg.experiment}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    write_result(result, out, cfg.output.get("format", "csv"))
    if result.summary:
        print(json.dumps(_brief(result.summary)), file=sys.stderr)
    return EXIT_OK


def _brief(summary):
    if isinstance(summary, dict):
        return {k: _brief(v) for k, v in summary.items() if k != "histogram"}
    if isinstance(summary, list):
        return [_brief(v) for v in summary]
    return summary


def _cmd_spectrum(args) -> int:
    try:
        if args.model == "markovian":
            p = MarkovParams(args.omega_q, args.gamma1, args.gamma_phi)
            spec = two_qubit_markovian(p) if args.n_qubits == 2 else single_qubit_markovian(p)
        elif args.model == "thermal":
            spec = two_qubit_thermal(ThermalParams(args.omega_q, args.gamma1, args.nbar, args.gamma_phi))
        else:
            p = EmbeddingParams(args.omega_q, args.omega_t, args.nu_zx, args.gamma1, args.gamma_phi, args.kappa)
            spec = embedding_model(p, args.n_qubits)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        dec = spectral_decompose(build_liouvillian(spec), int(np.prod(spec.dims)))
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure in spectral_decompose: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print("index,re_lambda,im_lambda")
    for k, lam in enumerate(dec.eigenvalues[: args.count]):
        print(f"{k + 1},{float(lam.real)!r},{float(lam.imag)!r}")
    print(f"# asymptotic_speedup={asymptotic_speedup(dec)!r} condition={dec.condition:.3e}", file=sys.stderr)
    return EXIT_OK


def _cmd_validate(args) -> int:
    from .validation import run_battery

    checks = run_battery()
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mpemba-reset", description="Mpemba-accelerated qubit reset simulations.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a TOML config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--format", choices=("csv", "json"))
    r.add_argument("--threads", type=int, default=1)
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("spectrum", help="print the Liouvillian spectrum of a model")
    s.add_argument("--model", choices=("markovian", "thermal", "embedding"), default="markovian")
    s.add_argument("--n-qubits", type=int, choices=(1, 2), default=2)
    s.add_argument("--omega-q", type=float, default=1.0)
    s.add_argument("--omega-t", type=float, default=2.0)
    s.add_argument("--nu-zx", type=float, default=2.1)
    s.add_argument("--kappa", type=float, default=0.105)
    s.add_argument("--gamma1", type=float, default=1.0)
    s.add_argument("--gamma-phi", type=float, default=1.0 / 6.0)
    s.add_argument("--nbar", type=float, default=0.0)
    s.add_argument("--count", type=int, default=16)
    s.set_defaults(func=_cmd_spectrum)

    v = sub.add_parser("validate", help="run the oracle-equivalence self-test battery")
    v.set_defaults(func=_cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
