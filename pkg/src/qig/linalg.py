"""Validated matrix types and spectral helpers.

Everything downstream works with density matrices, Hermitian observables,
channels in Kraus form and tangent directions. This module owns their
validation rules and the handful of spectral primitives (matrix functions,
partial trace, random draws) the rest of the package builds on.

Conventions: natural logarithms everywhere, row-major matrices, dimensions
are small (the package is tuned for d up to about a dozen).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    BadFactorization,
    DimensionMismatch,
    DomainError,
    KrausDefect,
    NotHermitian,
    NotPositive,
    NumericalBreakdown,
    TraceMismatch,
)

HERMITIAN_TOL = 1e-10
POSITIVITY_SLACK = 1e-10
TRACE_TOL = 1e-10
FAITHFUL_EPS = 1e-12
KRAUS_TOL = 1e-9
RECONSTRUCTION_TOL = 1e-9


def as_rng(seed: int | np.random.Generator | None) -> np.random.Generator:
    """Coerce an int seed (or None, or a Generator) into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def frozen_array(a: np.ndarray | Iterable, dtype=complex) -> np.ndarray:
    """Copy into a read-only ndarray so validated data cannot drift."""
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


def hermitian_part(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def hermiticity_residual(a: np.ndarray) -> float:
    return float(np.max(np.abs(a - a.conj().T)))


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues (ascending) and matching eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.conj().T


def spectral(a: np.ndarray, *, check: bool = True) -> Spectrum:
    """Hermitian eigendecomposition with a reconstruction guard.

    Parameters
    ----------
    a : ndarray
        Hermitian matrix (symmetrized internally before eigh).
    check : bool
        Verify that the factors rebuild ``a``; raise NumericalBreakdown
        when the residual exceeds 1e-9 times the matrix scale.
    """
    h = hermitian_part(np.asarray(a, dtype=complex))
    w, u = np.linalg.eigh(h)
    spec = Spectrum(frozen_array(w, dtype=float), frozen_array(u))
    if check:
        scale = max(1.0, float(np.max(np.abs(h))))
        resid = float(np.max(np.abs(spec.reconstruct() - h)))
        if resid > RECONSTRUCTION_TOL * scale:
            raise NumericalBreakdown(
                f"eigendecomposition reconstruction residual {resid:.3e}"
            )
    return spec


@dataclass(frozen=True)
class DensityMatrix:
    """Unit-trace positive semidefinite matrix, immutable once validated.

    Build through :func:`validate_state` (or the random factories); the
    constructor itself trusts its input.
    """

    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def spectrum(self) -> Spectrum:
        return spectral(self.matrix)

    @cached_property
    def sqrt(self) -> np.ndarray:
        w = np.clip(self.spectrum.eigenvalues, 0.0, None)
        u = self.spectrum.eigenvectors
        return frozen_array((u * np.sqrt(w)) @ u.conj().T)

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.spectrum.eigenvalues

    def is_faithful(self, eps: float = FAITHFUL_EPS) -> bool:
        return bool(self.spectrum.eigenvalues[0] >= eps)

    def expect(self, x: np.ndarray | "HermitianObservable") -> float:
        xm = x.matrix if isinstance(x, HermitianObservable) else np.asarray(x)
        return float(np.real(np.trace(self.matrix @ xm)))


def validate_state(
    matrix: np.ndarray | Iterable,
    *,
    herm_tol: float = HERMITIAN_TOL,
    positivity_slack: float = POSITIVITY_SLACK,
    trace_tol: float = TRACE_TOL,
) -> DensityMatrix:
    """Validate (and minimally repair) a candidate density matrix.

    Hermiticity residuals up to ``herm_tol`` are symmetrized away, eigenvalues
    down to ``-positivity_slack`` are clipped to zero, and traces within
    ``trace_tol`` of one are renormalized. Anything worse raises
    NotHermitian, NotPositive or TraceMismatch respectively.
    """
    a = np.array(matrix, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    resid = hermiticity_residual(a)
    if resid > herm_tol:
        raise NotHermitian(f"hermiticity residual {resid:.3e} > {herm_tol:.1e}")
    a = hermitian_part(a)
    w, u = np.linalg.eigh(a)
    if w[0] < -positivity_slack:
        raise NotPositive(f"minimum eigenvalue {w[0]:.3e} < -{positivity_slack:.1e}")
    w = np.clip(w, 0.0, None)
    tr = float(np.sum(w))
    if abs(tr - 1.0) > trace_tol:
        raise TraceMismatch(f"trace {tr!r} differs from 1 by {abs(tr - 1.0):.3e}")
    if tr <= 0.0:
        raise NotPositive("state has no positive weight left after clipping")
    a = (u * (w / tr)) @ u.conj().T
    return DensityMatrix(frozen_array(hermitian_part(a)))


@dataclass(frozen=True)
class HermitianObservable:
    """Hermitian matrix with its residual checked at build time."""

    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        a = np.array(self.matrix, dtype=complex)
        resid = hermiticity_residual(a)
        if resid > HERMITIAN_TOL:
            raise NotHermitian(f"observable residual {resid:.3e}")
        object.__setattr__(self, "matrix", frozen_array(hermitian_part(a)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class TangentDirection:
    """Traceless Hermitian direction in state space."""

    matrix: np.ndarray

    def __post_init__(self):
        a = np.array(self.matrix, dtype=complex)
        resid = hermiticity_residual(a)
        if resid > HERMITIAN_TOL:
            raise NotHermitian(f"tangent residual {resid:.3e}")
        a = hermitian_part(a)
        tr = abs(complex(np.trace(a)))
        if tr > 1e-10 * max(1.0, float(np.max(np.abs(a)))):
            raise TraceMismatch(f"tangent trace {tr:.3e} is not zero")
        object.__setattr__(self, "matrix", frozen_array(a))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class QuantumChannel:
    """Completely positive trace preserving map in Kraus form."""

    kraus: tuple

    def __post_init__(self):
        ops = tuple(frozen_array(k) for k in self.kraus)
        if not ops:
            raise KrausDefect("empty Kraus family")
        d_out, d_in = ops[0].shape
        for k in ops:
            if k.shape != (d_out, d_in):
                raise DimensionMismatch("Kraus operators differ in shape")
        total = sum(k.conj().T @ k for k in ops)
        defect = float(np.max(np.abs(total - np.eye(d_in))))
        if defect > KRAUS_TOL:
            raise KrausDefect(f"sum K^+K deviates from identity by {defect:.3e}")
        object.__setattr__(self, "kraus", ops)

    @property
    def dim_in(self) -> int:
        return self.kraus[0].shape[1]

    @property
    def dim_out(self) -> int:
        return self.kraus[0].shape[0]

    def __call__(self, rho: DensityMatrix) -> DensityMatrix:
        return apply_channel(self, rho)


def matrix_function(
    a: np.ndarray | DensityMatrix,
    f: Callable[[float], float],
    *,
    at_zero: float | None = None,
) -> np.ndarray:
    """Apply a scalar function to a Hermitian matrix through its spectrum.

    ``at_zero`` supplies the limit value used on (numerically) zero
    eigenvalues, for functions like t log t that a bare call cannot handle.
    Non-finite values raise DomainError.
    """
    spec = a.spectrum if isinstance(a, DensityMatrix) else spectral(np.asarray(a))
    vals = np.empty(spec.dim, dtype=complex)
    for i, lam in enumerate(spec.eigenvalues):
        if at_zero is not None and abs(lam) <= 1e-14:
            vals[i] = at_zero
            continue
        try:
            with np.errstate(all="ignore"):
                v = complex(f(float(lam)))
        except (ValueError, ZeroDivisionError, FloatingPointError) as exc:
            raise DomainError(f"f({lam!r}) failed: {exc}") from exc
        if not np.isfinite(v):
            raise DomainError(f"f({lam!r}) = {v!r} is not finite")
        vals[i] = v
    u = spec.eigenvectors
    return (u * vals) @ u.conj().T


def herm_log(a: np.ndarray | DensityMatrix) -> np.ndarray:
    return matrix_function(a, np.log)


def herm_exp(a: np.ndarray | DensityMatrix) -> np.ndarray:
    return matrix_function(a, np.exp)


def apply_channel(
    kraus: QuantumChannel | Sequence[np.ndarray], rho: DensityMatrix
) -> DensityMatrix:
    """Push a state through sum_i K_i rho K_i^+."""
    ops = kraus.kraus if isinstance(kraus, QuantumChannel) else tuple(kraus)
    d_in = ops[0].shape[1]
    if rho.dim != d_in:
        raise DimensionMismatch(f"channel expects dim {d_in}, state has {rho.dim}")
    out = sum(k @ rho.matrix @ k.conj().T for k in ops)
    return validate_state(out)


def partial_trace(
    rho: DensityMatrix, dims: tuple[int, int], keep: int
) -> DensityMatrix:
    """Trace out one tensor factor of a bipartite state.

    ``dims = (d_a, d_b)`` must factor the dimension exactly and ``keep``
    selects the surviving factor (0 or 1).
    """
    d_a, d_b = dims
    if d_a * d_b != rho.dim:
        raise BadFactorization(f"{dims} does not factor dimension {rho.dim}")
    if keep not in (0, 1):
        raise BadFactorization(f"keep must be 0 or 1, got {keep!r}")
    r = rho.matrix.reshape(d_a, d_b, d_a, d_b)
    if keep == 0:
        out = np.einsum("ijkj->ik", r)
    else:
        out = np.einsum("ijil->jl", r)
    return validate_state(out)


def random_hermitian(
    dim: int, seed: int | np.random.Generator | None = None, scale: float = 1.0
) -> np.ndarray:
    rng = as_rng(seed)
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return scale * hermitian_part(g) / np.sqrt(2.0)


def random_tangent(
    dim: int, seed: int | np.random.Generator | None = None
) -> TangentDirection:
    """Random traceless Hermitian direction with unit Frobenius norm."""
    a = random_hermitian(dim, seed)
    a = a - np.trace(a) * np.eye(dim) / dim
    return TangentDirection(a / np.linalg.norm(a))


def random_faithful_state(
    dim: int,
    seed: int | np.random.Generator | None = None,
    mix: float = 0.05,
) -> DensityMatrix:
    """Ginibre draw mixed with the maximally mixed state.

    The mixture keeps every eigenvalue at or above mix/dim, so the result is
    safely faithful for logarithms and inverse powers.
    """
    rng = as_rng(seed)
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    w = g @ g.conj().T
    w = w / np.trace(w)
    m = (1.0 - mix) * w + mix * np.eye(dim) / dim
    return validate_state(m)


def random_channel(
    dim: int,
    seed: int | np.random.Generator | None = None,
    kraus_count: int | None = None,
) -> QuantumChannel:
    """Haar-flavored CPTP map from a random Stinespring isometry."""
    rng = as_rng(seed)
    k = kraus_count or dim
    g = rng.standard_normal((dim * k, dim)) + 1j * rng.standard_normal((dim * k, dim))
    q, r = np.linalg.qr(g)
    # fix the QR gauge (diagonal of R real positive) so draws are reproducible
    d = np.diag(r)
    d = np.where(np.abs(d) < 1e-30, 1.0, d)
    q = q * (d / np.abs(d))
    ops = [q[i * dim : (i + 1) * dim, :] for i in range(k)]
    return QuantumChannel(tuple(ops))


def depolarizing_channel(dim: int, p: float) -> QuantumChannel:
    """Mix with the maximally mixed state with weight p."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"depolarizing weight {p!r} outside [0, 1]")
    ops = [np.sqrt(1.0 - p) * np.eye(dim)]
    # discrete Weyl family spans the unital part
    shift = np.roll(np.eye(dim), 1, axis=0)
    clock = np.diag(np.exp(2j * np.pi * np.arange(dim) / dim))
    for a in range(dim):
        for b in range(dim):
            if a == 0 and b == 0:
                continue
            u = np.linalg.matrix_power(shift, a) @ np.linalg.matrix_power(clock, b)
            ops.append(np.sqrt(p / (dim * dim)) * u)
    ops[0] = np.sqrt(1.0 - p + p / (dim * dim)) * np.eye(dim)
    return QuantumChannel(tuple(ops))


def dephasing_channel(dim: int = 2) -> QuantumChannel:
    """Kill all off-diagonal matrix elements in the computational basis."""
    ops = []
    for i in range(dim):
        e = np.zeros((dim, dim), dtype=complex)
        e[i, i] = 1.0
        ops.append(e)
    return QuantumChannel(tuple(ops))


def gibbs_state(h: np.ndarray | HermitianObservable, beta: float = 1.0) -> DensityMatrix:
    """exp(-beta h) / Z through the spectrum of h."""
    hm = h.matrix if isinstance(h, HermitianObservable) else np.asarray(h, dtype=complex)
    spec = spectral(hm)
    w = spec.eigenvalues
    e = np.exp(-beta * (w - np.min(w)))
    e = e / np.sum(e)
    u = spec.eigenvectors
    return validate_state((u * e) @ u.conj().T)


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """Half the trace norm of the difference."""
    if a.dim != b.dim:
        raise DimensionMismatch("states of different dimension")
    w = np.linalg.eigvalsh(a.matrix - b.matrix)
    return 0.5 * float(np.sum(np.abs(w)))


def pauli() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    sx = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    sy = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
    sz = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
    return sx, sy, sz


def bloch_state(r: np.ndarray | Sequence[float]) -> DensityMatrix:
    """Qubit state (I + r . sigma)/2 for a Bloch vector with |r| <= 1."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3,):
        raise DimensionMismatch("Bloch vector must have three components")
    if np.linalg.norm(r) > 1.0 + 1e-12:
        raise NotPositive(f"Bloch vector norm {np.linalg.norm(r):.6f} > 1")
    sx, sy, sz = pauli()
    m = 0.5 * (np.eye(2) + r[0] * sx + r[1] * sy + r[2] * sz)
    return validate_state(m)
