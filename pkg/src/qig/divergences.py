"""Divergences between states.

The workhorse is the quasi-entropy double sum over the spectra of both
arguments, driven by an operator convex function. On top of that sit the
standard gamma family, Bregman distances built from convex potentials,
a few closed-form distances, and a monotonicity checker for channels.

All values are in nats. Divergences may legitimately be +inf (support
violations); that is a return value here, not an error.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, DomainError, NonDifferentiablePoint, NotPure
from .linalg import DensityMatrix, hermitian_part

SUPPORT_FLOOR = 1e-12
SNAP_TOL = 1e-12


@dataclass(frozen=True)
class OperatorConvexFunction:
    """Scalar function t -> f(t) on (0, inf) with f(1) = 0.

    ``fn`` must accept floats and numpy arrays of positive values.
    ``value_at_0`` is the (possibly infinite) limit at t -> 0+, used for
    kernel eigenvalues that vanish. Construction verifies f(1) = 0 and
    midpoint convexity on a log grid; it does not police the sign of f(0),
    since the standard gamma family has f(0) > 0 for gamma in (0, 1].
    """

    fn: Callable
    value_at_0: float
    label: str = ""

    def __post_init__(self):
        at_one = float(self.fn(1.0))
        if abs(at_one) > 1e-12:
            raise DomainError(f"f(1) = {at_one!r}, expected 0 ({self.label})")
        grid = np.geomspace(1e-3, 1e3, 13)
        vals = np.asarray(self.fn(grid), dtype=float)
        for i in range(len(grid)):
            for j in range(i + 1, len(grid)):
                mid = float(self.fn(0.5 * (grid[i] + grid[j])))
                chord = 0.5 * (vals[i] + vals[j])
                scale = max(1.0, abs(vals[i]), abs(vals[j]))
                if mid > chord + 1e-9 * scale:
                    raise DomainError(
                        f"midpoint convexity fails at ({grid[i]:.3g}, {grid[j]:.3g})"
                    )

    def __call__(self, t):
        arr = np.asarray(t, dtype=float)
        if arr.ndim == 0:
            tv = float(arr)
            if tv < 0.0:
                raise DomainError(f"f evaluated at negative argument {tv!r}")
            if tv == 0.0:
                return self.value_at_0
            return float(self.fn(tv))
        if np.any(arr < 0.0):
            raise DomainError("f evaluated at negative argument")
        with np.errstate(all="ignore"):
            out = np.asarray(self.fn(arr), dtype=float)
        out = np.where(arr == 0.0, self.value_at_0, out)
        return out


def f_gamma(gamma: float) -> OperatorConvexFunction:
    """The standard one-parameter family.

    gamma outside {0, 1}:  1/gamma + t/(1-gamma) - t^gamma / (gamma(1-gamma))
    gamma = 1:             t log t - (t - 1)
    gamma = 0:             -log t + (t - 1)

    Sanity anchor: f_{1/2}(4) = 2.
    """
    if gamma == 1.0:
        fn = lambda t: t * np.log(t) - (t - 1.0)
        at0 = 1.0
    elif gamma == 0.0:
        fn = lambda t: -np.log(t) + (t - 1.0)
        at0 = np.inf
    else:
        g = float(gamma)
        fn = lambda t: 1.0 / g + t / (1.0 - g) - np.power(t, g) / (g * (1.0 - g))
        if g > 0.0:
            at0 = 1.0 / g
        else:
            at0 = np.inf
    return OperatorConvexFunction(fn, at0, label=f"f_gamma[{gamma:g}]")


def quasi_entropy(f: OperatorConvexFunction, rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Spectral double sum sum_ij mu_j |<a_i|b_j>|^2 f(lambda_i / mu_j).

    lambda, a are the spectrum of ``rho``; mu, b of ``sigma``. Support
    violations (weight of rho on the kernel of sigma) return +inf. Ratio
    values snapped to 1 contribute exactly zero, so the divergence of a
    state against itself is exactly 0.
    """
    if rho.dim != sigma.dim:
        raise DimensionMismatch("states of different dimension")
    lam = rho.spectrum.eigenvalues
    mu = sigma.spectrum.eigenvalues
    overlap = np.abs(rho.spectrum.eigenvectors.conj().T @ sigma.spectrum.eigenvectors) ** 2

    alive = mu > SUPPORT_FLOOR
    if not np.all(alive):
        spill = lam @ overlap[:, ~alive]
        if np.any(spill > 1e-12):
            return np.inf

    mu_a = mu[alive]
    ov = overlap[:, alive]
    weights = mu_a[None, :] * ov
    relevant = weights > 1e-14
    if not np.any(relevant):
        return 0.0

    ratios = lam[:, None] / mu_a[None, :]
    snapped = np.abs(lam[:, None] - mu_a[None, :]) <= SNAP_TOL * np.maximum(1.0, mu_a)[None, :]
    zero_rows = lam <= SUPPORT_FLOOR

    with np.errstate(all="ignore"):
        vals = np.asarray(f.fn(np.where(ratios > 0.0, ratios, 1.0)), dtype=float)
    if np.any(zero_rows):
        if not np.isfinite(f.value_at_0):
            if np.any(relevant[zero_rows, :] & ~snapped[zero_rows, :]):
                return np.inf
            vals[zero_rows, :] = 0.0
        else:
            vals[zero_rows, :] = f.value_at_0
    vals = np.where(snapped, 0.0, vals)
    if np.any(~np.isfinite(vals[relevant])):
        raise DomainError("quasi-entropy kernel produced non-finite values")
    return float(np.sum(weights[relevant] * vals[relevant]))


@dataclass(frozen=True)
class DistanceFunctional:
    """A two-state functional with a smoothness tag used by derivative code."""

    fn: Callable[[DensityMatrix, DensityMatrix], float]
    smooth: bool
    label: str

    def __call__(self, a: DensityMatrix, b: DensityMatrix) -> float:
        return self.fn(a, b)


def quasi_entropy_functional(f: OperatorConvexFunction, label: str | None = None) -> DistanceFunctional:
    return DistanceFunctional(
        fn=lambda a, b: quasi_entropy(f, a, b),
        smooth=True,
        label=label or f"quasi[{f.label}]",
    )


def gamma_divergence(gamma: float) -> DistanceFunctional:
    """Quasi-entropy for the standard family, with canonical labels.

    gamma = 1 is the relative entropy ("umegaki"); gamma = 1/2 carries the
    label "d_half" because it coincides with the squared-root distance
    2 || sqrt(rho) - sqrt(sigma) ||_HS^2.
    """
    if gamma == 1.0:
        label = "umegaki"
    elif gamma == 0.5:
        label = "d_half"
    else:
        label = f"gamma[{gamma:g}]"
    return quasi_entropy_functional(f_gamma(gamma), label=label)


UMEGAKI = gamma_divergence(1.0)
D_HALF = gamma_divergence(0.5)


def hs_quadratic() -> DistanceFunctional:
    """Half the squared Hilbert-Schmidt distance (quadratic potential)."""
    return DistanceFunctional(
        fn=lambda a, b: 0.5 * float(np.linalg.norm(a.matrix - b.matrix) ** 2),
        smooth=True,
        label="hs_quadratic",
    )


# ---------------------------------------------------------------------------
# Bregman distances


def _as_point(state, embed):
    if embed is not None:
        return np.asarray(embed(state))
    if isinstance(state, DensityMatrix):
        return state.matrix
    return np.asarray(state)


def _inner(a: np.ndarray, b: np.ndarray) -> float:
    if a.ndim == 2:
        return float(np.real(np.trace(a.conj().T @ b)))
    return float(np.real(np.vdot(a, b)))


def _hermitian_directions(y: np.ndarray):
    d = y.shape[0]
    for k in range(d):
        e = np.zeros((d, d), dtype=complex)
        e[k, k] = 1.0
        yield e
    for k in range(d):
        for l in range(k + 1, d):
            e = np.zeros((d, d), dtype=complex)
            e[k, l] = e[l, k] = 1.0 / np.sqrt(2.0)
            yield e
            e = np.zeros((d, d), dtype=complex)
            e[k, l] = -1j / np.sqrt(2.0)
            e[l, k] = 1j / np.sqrt(2.0)
            yield e


def _numeric_gradient(psi, y: np.ndarray) -> np.ndarray:
    """Central-difference gradient with a one-sided consistency guard.

    A visible mismatch between forward and backward slopes marks a kink;
    that raises NonDifferentiablePoint rather than returning garbage.
    """
    h = 1e-6 * (1.0 + float(np.max(np.abs(y))))
    if y.ndim == 2:
        grad = np.zeros_like(y, dtype=complex)
        base = float(psi(y))
        for e in _hermitian_directions(y):
            up = float(psi(y + h * e))
            dn = float(psi(y - h * e))
            fwd = (up - base) / h
            bwd = (base - dn) / h
            if abs(fwd - bwd) > 1e-3 * (1.0 + abs(fwd) + abs(bwd)):
                raise NonDifferentiablePoint("one-sided slopes disagree")
            grad = grad + ((up - dn) / (2.0 * h)) * e
        return grad
    grad = np.zeros_like(y, dtype=float)
    base = float(psi(y))
    for i in range(y.size):
        e = np.zeros_like(y)
        e[i] = h
        up = float(psi(y + e))
        dn = float(psi(y - e))
        fwd = (up - base) / h
        bwd = (base - dn) / h
        if abs(fwd - bwd) > 1e-3 * (1.0 + abs(fwd) + abs(bwd)):
            raise NonDifferentiablePoint(f"one-sided slopes disagree at index {i}")
        grad[i] = (up - dn) / (2.0 * h)
    return grad


def bregman_distance(psi, rho, sigma, grad=None, embed=None) -> float:
    """D_Psi(rho, sigma) = Psi(x) - Psi(y) - <x - y, grad Psi(y)>.

    ``psi`` maps embedded points (Hermitian matrices or real vectors) to
    floats; ``embed`` defaults to the raw matrix. When ``grad`` is absent a
    finite-difference gradient is used.
    """
    x = _as_point(rho, embed)
    y = _as_point(sigma, embed)
    if x.shape != y.shape:
        raise DimensionMismatch(f"embedded shapes differ: {x.shape} vs {y.shape}")
    g = np.asarray(grad(y)) if grad is not None else _numeric_gradient(psi, y)
    return float(psi(x)) - float(psi(y)) - _inner(x - y, g)


# ---------------------------------------------------------------------------
# closed forms


def _pure_projector(rho: DensityMatrix) -> np.ndarray:
    w = rho.spectrum.eigenvalues
    if w[-1] < 1.0 - 1e-9:
        raise NotPure(f"largest eigenvalue {w[-1]!r} < 1")
    v = rho.spectrum.eigenvectors[:, -1]
    return np.outer(v, v.conj())


def closed_form_distance(kind: str, a: DensityMatrix, b: DensityMatrix) -> float:
    """Closed-form distances: "wigner_yanase", "d_half", "fubini_study".

    wigner_yanase = 2 arccos tr(sqrt(a) sqrt(b)); d_half is the squared
    chordal version 2 || sqrt(a) - sqrt(b) ||^2; fubini_study requires pure
    arguments and returns arccos tr(P_a P_b).
    """
    if a.dim != b.dim:
        raise DimensionMismatch("states of different dimension")
    if kind == "wigner_yanase":
        fid = float(np.real(np.trace(a.sqrt @ b.sqrt)))
        return 2.0 * float(np.arccos(np.clip(fid, -1.0, 1.0)))
    if kind == "d_half":
        return 2.0 * float(np.linalg.norm(a.sqrt - b.sqrt) ** 2)
    if kind == "fubini_study":
        pa = _pure_projector(a)
        pb = _pure_projector(b)
        ov = float(np.real(np.trace(pa @ pb)))
        return float(np.arccos(np.clip(ov, -1.0, 1.0)))
    raise ValueError(f"unknown closed-form distance {kind!r}")


# ---------------------------------------------------------------------------
# data processing monotonicity


@dataclass(frozen=True)
class MonotonicityReport:
    margins: np.ndarray
    min_margin: float
    violation_count: int
    passed: bool


def monotonicity_check(
    functional: DistanceFunctional,
    channel,
    pairs: Iterable[tuple[DensityMatrix, DensityMatrix]],
    slack: float = 1e-9,
) -> MonotonicityReport:
    """Margins D(a, b) - D(Ta, Tb) over the supplied pairs.

    Infinite before-values give infinite margins (never a violation). A
    margin below -slack counts as a violation.
    """
    margins = []
    for a, b in pairs:
        before = functional(a, b)
        after = functional(channel(a), channel(b))
        if np.isinf(before):
            margins.append(np.inf)
        else:
            margins.append(before - after)
    arr = np.asarray(margins, dtype=float)
    finite = arr[np.isfinite(arr)]
    min_margin = float(np.min(finite)) if finite.size else np.inf
    violations = int(np.sum(arr < -slack))
    return MonotonicityReport(
        margins=arr,
        min_margin=min_margin,
        violation_count=violations,
        passed=violations == 0,
    )
