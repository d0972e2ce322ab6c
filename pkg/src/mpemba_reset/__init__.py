"""Mpemba-accelerated qubit reset: Lindblad spectra, controlled-gate protocols and reset-time metrics."""
from .core import DensityMatrix, partial_trace, trace_distance
from .dynamics import (
    EnsembleEvaluator,
    ResetModel,
    SpeedupRecord,
    TraceDistanceCurve,
    propagate,
    propagate_expm,
    propagate_time_dependent,
    reset_time,
    robustness,
    speedup,
)
from .liouvillian import JumpTerm, LindbladSpec, asymptotic_speedup, build_liouvillian, spectral_decompose
from .protocol import AncillaState, ControlledGate, cry_pi, kappa, perturbed_cry

__version__ = "0.1.0"

__all__ = [
    "AncillaState",
    "ControlledGate",
    "DensityMatrix",
    "EnsembleEvaluator",
    "JumpTerm",
    "LindbladSpec",
    "ResetModel",
    "SpeedupRecord",
    "TraceDistanceCurve",
    "asymptotic_speedup",
    "build_liouvillian",
    "cry_pi",
    "kappa",
    "partial_trace",
    "perturbed_cry",
    "propagate",
    "propagate_expm",
    "propagate_time_dependent",
    "reset_time",
    "robustness",
    "spectral_decompose",
    "speedup",
    "trace_distance",
]
