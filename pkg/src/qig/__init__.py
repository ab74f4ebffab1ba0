"""Finite-dimensional toolkit for quantum information geometry.

Modules
-------
linalg       validated matrix types, spectral helpers, random draws
divergences  quasi-entropies, Bregman distances, closed forms, monotonicity
geometry     metric/connection extraction, monotone kernels, dually flat charts
modular      per-state GNS spaces, modular operators, Liouvilleans, KMS tools
dynamics     nonlinear Hamiltonian flows and entropic projections
renorm       block elimination, response propagators, contraction coefficients
histories    class operators, geometric phases, sliced propagators, priors
cli          batch scenario driver
"""
from .linalg import (
    DensityMatrix,
    HermitianObservable,
    QuantumChannel,
    Spectrum,
    TangentDirection,
    apply_channel,
    bloch_state,
    dephasing_channel,
    depolarizing_channel,
    gibbs_state,
    matrix_function,
    partial_trace,
    random_channel,
    random_faithful_state,
    random_hermitian,
    random_tangent,
    trace_distance,
    validate_state,
)

__version__ = "0.1.0"

__all__ = [
    "DensityMatrix",
    "HermitianObservable",
    "QuantumChannel",
    "Spectrum",
    "TangentDirection",
    "apply_channel",
    "bloch_state",
    "dephasing_channel",
    "depolarizing_channel",
    "gibbs_state",
    "matrix_function",
    "partial_trace",
    "random_channel",
    "random_faithful_state",
    "random_hermitian",
    "random_tangent",
    "trace_distance",
    "validate_state",
    "__version__",
]
