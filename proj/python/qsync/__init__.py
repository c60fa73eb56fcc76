"""Two-qubit probe synchronization toolkit (Python bindings)."""

import json as _json

import numpy as _np

from ._qsync import (
    IoError,
    NumericalError,
    ProbeSetup,
    QsyncError,
    ValidationError,
    __version__,
    classify_sync,
    dominant_mode,
    eigensystem,
    fourier_modulus,
    nme,
    pearson_windowed,
    simulate,
    sync_boundary_omega_p,
    sync_boundary_s,
)
from . import _qsync

__all__ = [
    "IoError",
    "NumericalError",
    "ProbeSetup",
    "QsyncError",
    "ValidationError",
    "__version__",
    "classify_sync",
    "default_parameters",
    "dominant_mode",
    "eigensystem",
    "fourier_modulus",
    "generate_dataset",
    "nme",
    "pearson_windowed",
    "run_experiment",
    "simulate",
    "sync_boundary_omega_p",
    "sync_boundary_s",
]


def generate_dataset(config=None, jobs=1):
    """Spectra and labels for a dataset config dict.

    Returns (features, labels) where features has one row of 51 Fourier
    moduli per example and labels has columns (omega_p, s, gamma0).
    """
    x, y = _qsync._generate_dataset(_json.dumps(config or {}), jobs)
    return _np.asarray(x), _np.asarray(y)


def default_parameters(experiment):
    return _json.loads(_qsync._default_parameters(experiment))


def run_experiment(experiment, overrides=None, seeds=(1, 2, 3, 4, 5), out_dir="results", jobs=1):
    """Run one experiment; returns (summary dict, list of written files)."""
    summary, files = _qsync._run_experiment(experiment, _json.dumps(overrides or {}), list(seeds), str(out_dir), jobs)
    return _json.loads(summary), files
