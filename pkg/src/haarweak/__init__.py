"""Numerical toolkit for the weak-recovery threshold of phase retrieval with
subsampled Haar sensing: tilted-distribution partition functions, the
variational values Xi1 and Xi2, the free energy F and its threshold scan,
a measurement simulator, and verification suites.

Public names resolve lazily so the CLI can set thread limits before numpy
is imported.
"""

from importlib import import_module

from .errors import (
    AccuracyError,
    CoercivityError,
    CurvatureError,
    DomainError,
    IntegrandError,
    NumericalError,
    ParameterError,
    ScanError,
)

_LAZY = {
    "FreeEnergyCurve": "free_energy", "GridSpec": "free_energy", "ModelParams": "free_energy",
    "ThresholdResult": "free_energy", "check_condition": "free_energy",
    "threshold_scan": "free_energy", "zero_noise_xi2": "free_energy",
    "SimConfig": "simulator", "SimOutput": "simulator", "simulate": "simulator",
    "VariationalSolution": "variational", "solve_xi1": "variational", "solve_xi2": "variational",
    "xi2_second_derivative": "variational",
    "YMeasure": "y_model",
}

__all__ = [
    "AccuracyError", "CoercivityError", "CurvatureError", "DomainError", "IntegrandError",
    "NumericalError", "ParameterError", "ScanError", *_LAZY,
]
__version__ = "0.1.0"


def __getattr__(name: str):
    if name in _LAZY:
        value = getattr(import_module(f".{_LAZY[name]}", __name__), name)
        globals()[name] = value
        return value
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
