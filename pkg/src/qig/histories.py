"""Projector histories, geometric phases, sliced coherent-state propagators,
entropic priors and trajectory weights.

Histories are ordered lists of Heisenberg-picture projectors; their class
operators give probabilities and a two-history functional. Discrete
geometric phases come from overlap products along vector paths. Time-sliced
propagators insert a coherent-family resolution of identity between short
evolution steps, with an optional distance regulator on each step. Entropic
priors weight states by their divergence from a reference, and path weights
integrate that penalty along a state trajectory.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadTimes,
    BranchDomain,
    DimensionMismatch,
    DomainError,
    GridMismatch,
    InvalidPerturbedState,
    NumericalBreakdown,
    QigError,
    QuadratureTooCoarse,
    ZeroOverlap,
)
from .linalg import DensityMatrix, HermitianObservable, validate_state

PROJECTOR_TOL = 1e-9
OVERLAP_FLOOR = 1e-12


def _as_matrix(x, dim=None) -> np.ndarray:
    m = x.matrix if isinstance(x, (HermitianObservable, DensityMatrix)) else np.asarray(x, dtype=complex)
    if dim is not None and m.shape != (dim, dim):
        raise DimensionMismatch(f"expected shape {(dim, dim)}, got {m.shape}")
    return m


@dataclass(frozen=True)
class HistorySpec:
    """Ordered projectors at strictly increasing times."""

    projectors: tuple
    times: tuple

    def __post_init__(self):
        ps = tuple(np.asarray(p, dtype=complex) for p in self.projectors)
        ts = tuple(float(t) for t in self.times)
        if len(ps) != len(ts):
            raise BadTimes(f"{len(ps)} projectors but {len(ts)} times")
        if any(t2 <= t1 for t1, t2 in zip(ts, ts[1:])):
            raise BadTimes(f"times {ts} are not strictly increasing")
        dim = ps[0].shape[0] if ps else 0
        for p in ps:
            if p.shape != (dim, dim):
                raise DimensionMismatch("projectors differ in shape")
            if np.max(np.abs(p - p.conj().T)) > PROJECTOR_TOL:
                raise DomainError("projector is not Hermitian")
            if np.max(np.abs(p @ p - p)) > PROJECTOR_TOL:
                raise DomainError("projector is not idempotent")
        object.__setattr__(self, "projectors", ps)
        object.__setattr__(self, "times", ts)

    @property
    def dim(self) -> int:
        return self.projectors[0].shape[0] if self.projectors else 0


def _heisenberg(p: np.ndarray, evals, evecs, t: float) -> np.ndarray:
    phases = np.exp(1j * t * evals)
    u = (evecs * phases) @ evecs.conj().T
    return u @ p @ u.conj().T


def class_operator(history: HistorySpec, h) -> np.ndarray:
    """Product of Heisenberg projectors P_1(t_1) P_2(t_2) ... P_n(t_n).

    Times are referenced to t = 0; the closing evolutions cancel inside the
    trace, so the operator is reported in the Heisenberg picture directly.
    """
    if not history.projectors:
        raise DomainError("empty history")
    dim = history.dim
    hm = np.zeros((dim, dim), dtype=complex) if h is None else _as_matrix(h, dim)
    evals, evecs = np.linalg.eigh(hm)
    out = np.eye(dim, dtype=complex)
    for p, t in zip(history.projectors, history.times):
        out = out @ _heisenberg(p, evals, evecs, t)
    return out


def history_probability(rho: DensityMatrix, history: HistorySpec, h) -> float:
    """p = tr(C^+ rho C) for the history's class operator C."""
    c = class_operator(history, h)
    val = float(np.real(np.trace(c.conj().T @ rho.matrix @ c)))
    if val < -1e-9 or val > 1.0 + 1e-9:
        raise NumericalBreakdown(f"history probability {val!r} outside [0, 1]")
    return max(val, 0.0)


def histories_functional(rho: DensityMatrix, h, first: HistorySpec, second: HistorySpec) -> complex:
    """tr(C_first^+ rho C_second) on a shared time grid."""
    if len(first.times) != len(second.times) or any(
        abs(t1 - t2) > 1e-12 for t1, t2 in zip(first.times, second.times)
    ):
        raise GridMismatch(f"history grids differ: {first.times} vs {second.times}")
    if first.dim != second.dim or first.dim != rho.dim:
        raise DimensionMismatch("state and histories live in different dimensions")
    c1 = class_operator(first, h)
    c2 = class_operator(second, h)
    return complex(np.trace(c1.conj().T @ rho.matrix @ c2))


def geometric_phase(path, closed: bool = False) -> float:
    """Discrete geometric phase of an ordered path of unit vectors.

    arg(<v_0|v_N> prod_k conj<v_k|v_{k+1}>): the endpoint overlap strips the
    total phase, the conjugated chain subtracts the accumulated one, leaving
    a quantity invariant under per-vector phase changes. ``closed`` appends
    the first vector to the end (a no-op if the caller already did).
    """
    vs = [np.asarray(v, dtype=complex).reshape(-1) for v in path]
    if len(vs) < 2:
        return 0.0
    dim = vs[0].size
    for v in vs:
        if v.size != dim:
            raise DimensionMismatch("path vectors differ in dimension")
    if closed:
        vs = vs + [vs[0]]
    total = complex(np.vdot(vs[0], vs[-1]))
    if abs(total) <= OVERLAP_FLOOR:
        raise ZeroOverlap("endpoint overlap vanishes")
    for va, vb in zip(vs, vs[1:]):
        o = complex(np.vdot(va, vb))
        if abs(o) <= OVERLAP_FLOOR:
            raise ZeroOverlap("consecutive overlap vanishes")
        total *= np.conj(o)
    return float(np.angle(total))


# ---------------------------------------------------------------------------
# coherent families and sliced propagators


@dataclass(frozen=True)
class CoherentFamily:
    """Coherent vectors with a quadrature resolving the identity.

    ``vector_map`` sends a label z to a unit vector; ``nodes`` and
    ``weights`` form the quadrature sum_q w_q |z_q><z_q| = 1. ``spin`` tags
    sphere-labelled families where it applies.
    """

    vector_map: object
    nodes: tuple
    weights: np.ndarray
    label_dim: int
    spin: float | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(self.nodes) != w.size:
            raise DimensionMismatch("one weight per quadrature node required")
        object.__setattr__(self, "weights", w)
        for z in self.nodes[: min(len(self.nodes), 8)]:
            norm = float(np.linalg.norm(self.vector_map(z)))
            if abs(norm - 1.0) > 1e-10:
                raise DomainError(f"coherent vector has norm {norm!r}")
        resid = self.identity_residual()
        if resid > 1e-4:
            raise QuadratureTooCoarse(f"resolution-of-identity residual {resid:.3e}")

    @property
    def dim(self) -> int:
        return self.vector_map(self.nodes[0]).shape[0]

    def overlap(self, za, zb) -> complex:
        return complex(np.vdot(self.vector_map(za), self.vector_map(zb)))

    def identity_residual(self) -> float:
        dim = self.dim
        acc = np.zeros((dim, dim), dtype=complex)
        for z, w in zip(self.nodes, self.weights):
            v = self.vector_map(z)
            acc += w * np.outer(v, v.conj())
        return float(np.max(np.abs(acc - np.eye(dim))))


def spin_coherent_vector(j: float, theta: float, phi: float) -> np.ndarray:
    """Unit spin-j coherent vector pointing along (theta, phi)."""
    two_j = int(round(2 * j))
    comps = []
    for k in range(two_j + 1):
        # k = j - m runs from the top weight downward
        amp = (
            np.sqrt(float(math.comb(two_j, k)))
            * np.cos(theta / 2.0) ** (two_j - k)
            * np.sin(theta / 2.0) ** k
            * np.exp(1j * k * phi)
        )
        comps.append(amp)
    return np.asarray(comps, dtype=complex)


def spin_coherent_family(j: float, n_theta: int = 6, n_phi: int = 12) -> CoherentFamily:
    """Product quadrature (Gauss-Legendre in cos theta, uniform in phi).

    Exact for spherical polynomials through degree 2 n_theta - 1 in cos
    theta, which already resolves the identity to machine precision for
    small spins.
    """
    two_j = int(round(2 * j))
    if two_j < 1 or abs(2 * j - two_j) > 1e-12:
        raise DomainError(f"spin must be a positive half-integer, got {j!r}")
    x, glw = np.polynomial.legendre.leggauss(n_theta)
    nodes = []
    weights = []
    for xi, wi in zip(x, glw):
        theta = float(np.arccos(xi))
        for q in range(n_phi):
            phi = 2.0 * np.pi * q / n_phi
            nodes.append((theta, phi))
            weights.append((two_j + 1) * wi / (2.0 * n_phi))
    vector_map = lambda z: spin_coherent_vector(j, z[0], z[1])
    return CoherentFamily(
        vector_map=vector_map,
        nodes=tuple(nodes),
        weights=np.asarray(weights),
        label_dim=2,
        spin=float(j),
    )


def _step_kernel(family: CoherentFamily, hm, eps: float, symbol: str, upsilon):
    """K(z', z): overlap times the short-time phase, optionally regulated."""
    if symbol not in ("transition", "diagonal"):
        raise DomainError(f"unknown propagator symbol {symbol!r}")

    def kernel(za, zb) -> complex:
        va = family.vector_map(za)
        vb = family.vector_map(zb)
        ov = complex(np.vdot(va, vb))
        cross = complex(np.vdot(va, hm @ vb))
        if symbol == "transition":
            if abs(ov) <= 1e-8:
                val = ov - 1j * eps * cross
            else:
                val = ov * np.exp(-1j * eps * cross / ov)
        else:
            diag = float(np.real(np.vdot(vb, hm @ vb)))
            val = ov * np.exp(-1j * eps * diag)
        if upsilon is not None:
            dist = float(np.arccos(np.clip(abs(ov), 0.0, 1.0)))
            val *= np.exp(-(dist**2) / (2.0 * upsilon * eps))
        return val

    return kernel


def sliced_propagator(
    family: CoherentFamily,
    h,
    z_start,
    z_end,
    s: float,
    n_slices: int,
    symbol: str = "transition",
    upsilon: float | None = None,
) -> complex:
    """Time-sliced amplitude <z_end| e^{-i H s} |z_start> via the quadrature.

    Each of the ``n_slices`` steps contributes a kernel K(z', z); the
    quadrature integrates the intermediate labels. The "transition" symbol
    uses the normalized matrix element <z'|H|z>/<z'|z> and converges to the
    true propagator at first order; the "diagonal" symbol uses <z|H|z> and
    converges to the propagator of the quadrature-deformed generator
    sum_q w_q |z_q><z_q| <z_q|H|z_q> instead. A finite ``upsilon`` weights
    each step by exp(-d(z',z)^2 / (2 upsilon eps)).
    """
    if n_slices < 2:
        raise DomainError("need at least two slices")
    resid = family.identity_residual()
    if resid > 1e-4:
        raise QuadratureTooCoarse(f"resolution-of-identity residual {resid:.3e}")
    dim = family.dim
    hm = np.zeros((dim, dim), dtype=complex) if h is None else _as_matrix(h, dim)
    eps = float(s) / n_slices
    kernel = _step_kernel(family, hm, eps, symbol, upsilon)
    nq = len(family.nodes)
    enter = np.array(
        [family.weights[q] * kernel(family.nodes[q], z_start) for q in range(nq)]
    )
    hop = np.empty((nq, nq), dtype=complex)
    for qa in range(nq):
        for qb in range(nq):
            hop[qa, qb] = family.weights[qa] * kernel(family.nodes[qa], family.nodes[qb])
    leave = np.array([kernel(z_end, family.nodes[q]) for q in range(nq)])
    vec = enter
    for _ in range(n_slices - 2):
        vec = hop @ vec
    return complex(leave @ vec)


def sliced_propagator_mc(
    family: CoherentFamily,
    h,
    z_start,
    z_end,
    s: float,
    n_slices: int,
    samples: int = 2000,
    seed: int = 0,
    symbol: str = "transition",
    upsilon: float | None = None,
    batches: int = 10,
) -> tuple:
    """Monte Carlo version of the sliced amplitude with batch-mean errors.

    Intermediate labels are sampled from the sphere, stratified in cos theta
    so each consecutive block of samples covers all bands. Returns the mean
    amplitude and the batch-mean standard error (on the complex modulus).
    """
    if family.spin is None:
        raise DomainError("Monte Carlo slicing needs a sphere-labelled family")
    if n_slices < 2:
        raise DomainError("need at least two slices")
    if samples < batches or batches < 2:
        raise DomainError("need at least one sample per batch and two batches")
    dim = family.dim
    hm = np.zeros((dim, dim), dtype=complex) if h is None else _as_matrix(h, dim)
    eps = float(s) / n_slices
    kernel = _step_kernel(family, hm, eps, symbol, upsilon)
    measure = 2.0 * family.spin + 1.0
    rng = np.random.default_rng(seed)
    n_mid = n_slices - 1
    block = samples // batches
    n_use = block * batches
    values = np.empty(n_use, dtype=complex)
    for idx in range(n_use):
        path = []
        for m in range(n_mid):
            if m == 0:
                # stratify the first intermediate point in cos(theta) bands,
                # cycling the band with the sample index; later points stay
                # plain uniform so the product estimator remains unbiased
                u = (idx % batches + rng.random()) / batches
            else:
                u = rng.random()
            theta = float(np.arccos(2.0 * u - 1.0))
            phi = 2.0 * np.pi * rng.random()
            path.append((theta, phi))
        amp = kernel(path[0], z_start)
        for za, zb in zip(path[1:], path):
            amp *= kernel(za, zb)
        amp *= kernel(z_end, path[-1])
        values[idx] = amp * measure**n_mid
    mean = complex(np.mean(values))
    batch_means = values.reshape(batches, block).mean(axis=1)
    stderr = float(np.std(batch_means, ddof=1) / np.sqrt(batches))
    return mean, stderr


def coherent_metric_residual(family: CoherentFamily, points, step: float = 1e-5) -> float:
    """Deviation of det g from the phase-space normalization (j/2)^2 sin^2 theta.

    The pulled-back overlap metric of a sphere-labelled family has constant
    density in canonical coordinates; this reports the worst violation of
    that constraint over the given (theta, phi) points, as a diagnostic.
    """
    if family.spin is None:
        raise DomainError("metric residual needs a sphere-labelled family")
    j = family.spin
    worst = 0.0
    for theta, phi in points:
        grads = []
        for axis in range(2):
            zp = (theta + step, phi) if axis == 0 else (theta, phi + step)
            zm = (theta - step, phi) if axis == 0 else (theta, phi - step)
            grads.append((family.vector_map(zp) - family.vector_map(zm)) / (2.0 * step))
        v = family.vector_map((theta, phi))
        g = np.empty((2, 2))
        for a in range(2):
            for b in range(2):
                g[a, b] = float(
                    np.real(np.vdot(grads[a], grads[b]) - np.vdot(grads[a], v) * np.vdot(v, grads[b]))
                )
        target = (j / 2.0) ** 2 * np.sin(theta) ** 2
        worst = max(worst, abs(float(np.linalg.det(g)) - target))
    return worst


# ---------------------------------------------------------------------------
# entropic priors and path weights


@dataclass(frozen=True)
class PriorSpec:
    """Entropic prior parameters over a reference state.

    The branch is selected by exact equality beta == 1; ``base_distance``
    is the divergence the prior penalizes.
    """

    k: float
    alpha: float
    beta: float
    reference: object
    base_distance: object

    def __post_init__(self):
        k = float(self.k)
        if not np.isfinite(k) or k < 0.0:
            raise DomainError(f"prior strength k must be finite and nonnegative, got {k!r}")
        for name, val in (("alpha", self.alpha), ("beta", self.beta)):
            v = float(val)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name} must lie in [0, 1], got {v!r}")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "reference", _embed_state(self.reference))


def _embed_state(p) -> DensityMatrix:
    if isinstance(p, DensityMatrix):
        return p
    arr = np.asarray(p)
    if arr.ndim == 1:
        return validate_state(np.diag(arr.astype(complex)))
    return validate_state(arr)


def entropic_prior_density(spec: PriorSpec, p) -> float:
    """Prior density at p relative to the reference volume.

    beta = 1: exp(-k D(p, p0)). Otherwise the deformed-exponential branch
    (1 + k (1 - beta) D)^(-2 / ((1 - beta)(1 + beta))), which recovers
    (1 + k D)^-2 at beta = 0 and tends to the beta = 1 branch pointwise.
    The value is relative to the underlying volume element, so k = 0 gives
    exactly 1.
    """
    state = _embed_state(p)
    if state.dim != spec.reference.dim:
        raise DimensionMismatch("state and reference dimensions differ")
    dist = float(spec.base_distance(state, spec.reference))
    if not np.isfinite(dist):
        raise DomainError(f"base distance evaluated to {dist!r}")
    if spec.beta == 1.0:
        return float(np.exp(-spec.k * dist))
    base = 1.0 + spec.k * (1.0 - spec.beta) * dist
    if base <= 0.0:
        raise BranchDomain(f"branch base {base!r} is not positive")
    return float(base ** (-2.0 / ((1.0 - spec.beta) * (1.0 + spec.beta))))


@dataclass(frozen=True)
class PathWeight:
    """Trajectory weight with the perturbation step actually used."""

    weight: float
    log_weight: float
    epsilon: float


def path_weight(
    trajectory,
    distance,
    k: float,
    epsilon: float,
    dt: float,
    t_final: float = 1.0,
    volume_factor: float = 1.0,
) -> PathWeight:
    """exp(-k sum_t D(phi + eps phi', phi) dt) times the volume factor.

    The velocity is a central difference at step dt. If a perturbed state
    leaves the state space, epsilon is halved globally (all grid points use
    one epsilon) with a warning, at most ten times.
    """
    if dt <= 0.0 or t_final < dt:
        raise DomainError("need a positive grid with at least one step")
    if epsilon <= 0.0:
        raise DomainError("epsilon must be positive")
    times = np.arange(0.0, t_final + dt / 2.0, dt)
    states = [trajectory(float(t)) for t in times]
    mats = [s.matrix if isinstance(s, DensityMatrix) else np.asarray(s, dtype=complex) for s in states]
    vels = []
    for i in range(len(times)):
        if i == 0:
            vels.append((mats[1] - mats[0]) / dt)
        elif i == len(times) - 1:
            vels.append((mats[-1] - mats[-2]) / dt)
        else:
            vels.append((mats[i + 1] - mats[i - 1]) / (2.0 * dt))

    eps = float(epsilon)
    for _ in range(10):
        try:
            perturbed = [validate_state(m + eps * v) for m, v in zip(mats, vels)]
        except QigError:
            eps *= 0.5
            warnings.warn(
                f"perturbed state left the model; shrinking epsilon to {eps:.3e}",
                stacklevel=2,
            )
            continue
        total = 0.0
        for base, pert in zip(states, perturbed):
            base_dm = base if isinstance(base, DensityMatrix) else validate_state(base)
            total += float(distance(pert, base_dm)) * dt
        log_w = -float(k) * total + float(np.log(volume_factor))
        return PathWeight(weight=float(np.exp(log_w)), log_weight=log_w, epsilon=eps)
    raise InvalidPerturbedState("no valid epsilon after ten halvings")
