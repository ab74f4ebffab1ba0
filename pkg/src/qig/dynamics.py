"""Nonlinear state flows, entropic projections and their composition.

Observables generate Hamiltonian vector fields on the state space through
rho' = -i [grad h(rho), rho]; the gradient of a nonlinear expectation
functional replaces the fixed Hamiltonian of the linear theory. Projections
send a state to the closest member of a constraint set in a chosen
divergence. The two operations compose into inference-style update steps
and an operator-splitting integrator for flow-plus-relaxation equations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .divergences import UMEGAKI, DistanceFunctional
from .errors import (
    DimensionMismatch,
    DomainError,
    Infeasible,
    NonConvergence,
    StepRejected,
)
from .linalg import (
    DensityMatrix,
    HermitianObservable,
    hermitian_part,
    herm_log,
    matrix_function,
    partial_trace,
    validate_state,
)

HERMITICITY_DRIFT_TOL = 1e-8
MAX_HALVINGS = 20


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, HermitianObservable):
        return x.matrix
    return np.asarray(x, dtype=complex)


# ---------------------------------------------------------------------------
# Hamiltonian functions and their flow


@dataclass(frozen=True)
class HamiltonianFunction:
    """Real functional of the state together with its operator gradient.

    ``gradient(rho)`` returns the Hermitian matrix representing the Frechet
    derivative of ``evaluate`` at rho with respect to the trace pairing.
    """

    evaluate: Callable[[DensityMatrix], float]
    gradient: Callable[[DensityMatrix], np.ndarray]
    label: str = ""


def linear_hamiltonian(x, label: str = "") -> HamiltonianFunction:
    xm = _as_matrix(x)
    return HamiltonianFunction(
        evaluate=lambda rho: float(np.real(np.trace(rho.matrix @ xm))),
        gradient=lambda rho: xm,
        label=label or "linear",
    )


def mean_field_hamiltonian(x, y, coupling: float, label: str = "") -> HamiltonianFunction:
    """h(rho) = tr(rho x) + (c/2) tr(rho y)^2, a self-consistent field."""
    xm = _as_matrix(x)
    ym = _as_matrix(y)
    c = float(coupling)

    def evaluate(rho: DensityMatrix) -> float:
        my = float(np.real(np.trace(rho.matrix @ ym)))
        return float(np.real(np.trace(rho.matrix @ xm))) + 0.5 * c * my * my

    def gradient(rho: DensityMatrix) -> np.ndarray:
        my = float(np.real(np.trace(rho.matrix @ ym)))
        return xm + c * my * ym

    return HamiltonianFunction(evaluate=evaluate, gradient=gradient, label=label or "mean_field")


def poisson_bracket(f: HamiltonianFunction, k: HamiltonianFunction, rho: DensityMatrix) -> float:
    """{f, k}(rho) = i tr(rho [grad f, grad k])."""
    a = f.gradient(rho)
    b = k.gradient(rho)
    val = 1j * np.trace(rho.matrix @ (a @ b - b @ a))
    return float(np.real(val))


def _rk4(rhs: Callable[[np.ndarray], np.ndarray], y: np.ndarray, dt: float) -> np.ndarray:
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * dt * k1)
    k3 = rhs(y + 0.5 * dt * k2)
    k4 = rhs(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _flow_rhs(h: HamiltonianFunction) -> Callable[[np.ndarray], np.ndarray]:
    def rhs(r: np.ndarray) -> np.ndarray:
        g = np.asarray(h.gradient(DensityMatrix(r)), dtype=complex)
        return -1j * (g @ r - r @ g)

    return rhs


def _admissible(r: np.ndarray, slack: float) -> bool:
    if float(np.max(np.abs(r - r.conj().T))) > HERMITICITY_DRIFT_TOL:
        return False
    wmin = float(np.min(np.linalg.eigvalsh(hermitian_part(r))))
    return wmin >= -slack


def _advance(rhs, r: np.ndarray, dt: float, depth: int, slack: float) -> np.ndarray:
    cand = _rk4(rhs, r, dt)
    if _admissible(cand, slack):
        return cand
    if depth >= MAX_HALVINGS:
        raise StepRejected(
            f"state left the admissible set at step size {dt:.3e} "
            f"after {MAX_HALVINGS} halvings"
        )
    half = _advance(rhs, r, dt / 2.0, depth + 1, slack)
    return _advance(rhs, half, dt / 2.0, depth + 1, slack)


@dataclass(frozen=True)
class FlowResult:
    times: np.ndarray
    states: np.ndarray
    final: DensityMatrix


def hamiltonian_flow(
    h: HamiltonianFunction,
    rho0: DensityMatrix,
    t_final: float,
    dt: float = 1e-3,
    positivity_slack: float = 1e-8,
) -> FlowResult:
    """Integrate rho' = -i [grad h(rho), rho] with fixed-step RK4.

    Steps whose result drifts off the state manifold (hermiticity or a
    negative eigenvalue beyond ``positivity_slack``) are retried on halved
    substeps; twenty levels without success raise StepRejected. The output
    grid stays at multiples of dt regardless of internal subdivision.
    """
    if t_final < 0 or dt <= 0:
        raise DomainError("flow needs t_final >= 0 and dt > 0")
    rhs = _flow_rhs(h)
    n = max(1, int(round(t_final / dt))) if t_final > 0 else 0
    times = np.linspace(0.0, n * dt, n + 1)
    states = np.empty((n + 1, rho0.dim, rho0.dim), dtype=complex)
    states[0] = rho0.matrix
    r = np.array(rho0.matrix)
    for i in range(1, n + 1):
        r = _advance(rhs, r, dt, 0, positivity_slack)
        states[i] = r
    return FlowResult(times=times, states=states, final=validate_state(r))


# ---------------------------------------------------------------------------
# constraint sets


@dataclass(frozen=True)
class ConstraintSet:
    kind: str
    observables: tuple = ()
    targets: tuple = ()
    projectors: tuple = ()
    dims: tuple = ()


def expectation_constraints(observables: Sequence, targets: Sequence[float]) -> ConstraintSet:
    obs = tuple(_as_matrix(f) for f in observables)
    tgt = tuple(float(t) for t in targets)
    if len(obs) != len(tgt):
        raise DimensionMismatch("one target per observable required")
    for f in obs:
        if float(np.max(np.abs(f - f.conj().T))) > 1e-10:
            raise DomainError("expectation constraints need Hermitian observables")
    return ConstraintSet(kind="expectation_equalities", observables=obs, targets=tgt)


def block_constraints(projectors: Sequence[np.ndarray]) -> ConstraintSet:
    ps = tuple(np.asarray(p, dtype=complex) for p in projectors)
    d = ps[0].shape[0]
    total = np.zeros((d, d), dtype=complex)
    for i, p in enumerate(ps):
        if float(np.max(np.abs(p - p.conj().T))) > 1e-9:
            raise DomainError(f"projector {i} is not Hermitian")
        if float(np.max(np.abs(p @ p - p))) > 1e-9:
            raise DomainError(f"projector {i} is not idempotent")
        total = total + p
    for i in range(len(ps)):
        for j in range(i + 1, len(ps)):
            if float(np.max(np.abs(ps[i] @ ps[j]))) > 1e-9:
                raise DomainError(f"projectors {i} and {j} overlap")
    if float(np.max(np.abs(total - np.eye(d)))) > 1e-9:
        raise DomainError("projector family must resolve the identity")
    return ConstraintSet(kind="commutant_blocks", projectors=ps)


def marginal_constraints(dims: Sequence[int]) -> ConstraintSet:
    da, db = (int(x) for x in dims)
    if da < 2 or db < 2:
        raise DomainError("both factors need dimension at least 2")
    return ConstraintSet(kind="product_marginal", dims=(da, db))


# ---------------------------------------------------------------------------
# projections


def _tilt_project(
    omega: DensityMatrix,
    observables: Sequence[np.ndarray],
    targets: Sequence[float],
    grad_tol: float = 1e-10,
    max_iter: int = 500,
) -> DensityMatrix:
    """Minimize the relative entropy to omega subject to moment constraints.

    The minimizer is the exponential tilt exp(log omega + sum theta_i F_i),
    normalized; theta comes from a damped Newton iteration on the moment
    residual. Targets outside the reachable moment region push theta to
    infinity and raise Infeasible.
    """
    log_base = herm_log(omega)
    fs = [np.asarray(f, dtype=complex) for f in observables]
    tgt = np.asarray(targets, dtype=float)
    m = len(fs)
    theta = np.zeros(m)

    def state_and_moments(th):
        a = hermitian_part(log_base + sum(t * f for t, f in zip(th, fs)))
        w, u = np.linalg.eigh(a)
        e = np.exp(w - np.max(w))
        e /= np.sum(e)
        rho = (u * e) @ u.conj().T
        eta = np.array([float(np.real(np.trace(rho @ f))) for f in fs])
        return rho, eta, w, u, e

    rho, eta, w, u, e = state_and_moments(theta)
    for _ in range(max_iter):
        resid = eta - tgt
        nrm = float(np.linalg.norm(resid))
        if nrm <= grad_tol:
            return validate_state(rho)
        # moment Jacobian through the exponential's divided differences
        diff = w[:, None] - w[None, :]
        small = np.abs(diff) < 1e-12
        phi = np.where(small, e[:, None], (e[:, None] - e[None, :]) / np.where(small, 1.0, diff))
        hess = np.zeros((m, m))
        for j in range(m):
            fj = u.conj().T @ fs[j] @ u
            dexp = u @ (phi * fj) @ u.conj().T
            drho = dexp - rho * float(np.real(np.trace(dexp)))
            for k in range(m):
                hess[j, k] = float(np.real(np.trace(drho @ fs[k])))
        hess = 0.5 * (hess + hess.T)
        try:
            delta = np.linalg.solve(hess, -resid)
        except np.linalg.LinAlgError as exc:
            raise Infeasible(f"degenerate moment Jacobian: {exc}") from exc
        step = 1.0
        while step >= 1e-8:
            trial = theta + step * delta
            rho_t, eta_t, w_t, u_t, e_t = state_and_moments(trial)
            if float(np.linalg.norm(eta_t - tgt)) < (1.0 - 0.25 * step) * nrm:
                theta, rho, eta, w, u, e = trial, rho_t, eta_t, w_t, u_t, e_t
                break
            step *= 0.5
        else:
            raise Infeasible("no descent direction; targets likely unreachable")
        if float(np.linalg.norm(theta)) > 1e6:
            raise Infeasible("multipliers diverged; targets lie outside the moment region")
    raise NonConvergence(f"moment matching stalled above {grad_tol:g}")


def _pinch(projectors: Sequence[np.ndarray], m: np.ndarray) -> np.ndarray:
    return sum(p @ m @ p for p in projectors)


def _quadratic_project(
    omega: DensityMatrix, observables: Sequence[np.ndarray], targets: Sequence[float]
) -> DensityMatrix:
    """Closest point in the Frobenius norm on the affine moment slice:
    omega + sum theta_i F_i with tr(F_j x) = c_j. The unit trace rides along
    as an implicit constraint, since the slice lives inside the states."""
    fs = [np.asarray(f, dtype=complex) for f in observables]
    fs.append(np.eye(omega.dim, dtype=complex))
    targets = list(targets) + [1.0]
    m = len(fs)
    gram = np.empty((m, m))
    rhs = np.empty(m)
    for i, fi in enumerate(fs):
        rhs[i] = float(np.real(targets[i] - np.trace(fi @ omega.matrix)))
        for j, fj in enumerate(fs):
            gram[i, j] = float(np.real(np.trace(fi @ fj)))
    try:
        theta = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise Infeasible(f"dependent constraint directions: {exc}") from exc
    x = omega.matrix + sum(t * f for t, f in zip(theta, fs))
    return validate_state(x)


def entropic_projection(
    omega: DensityMatrix, constraints: ConstraintSet, divergence: DistanceFunctional = UMEGAKI
) -> DensityMatrix:
    """Project omega onto the constraint set in the given divergence.

    The moment rule minimizes D(x, omega) over the slice (exponential tilt
    for the relative entropy, affine shift for the quadratic distance). The
    block and marginal rules minimize D(omega, x) over their sets, which is
    what makes their closed forms (pinching, product of marginals) exact.
    Pairings without a rule raise ValueError.
    """
    label = divergence.label
    kind = constraints.kind
    if kind == "expectation_equalities":
        if label == "umegaki":
            return _tilt_project(omega, constraints.observables, constraints.targets)
        if label == "hs_quadratic":
            return _quadratic_project(omega, constraints.observables, constraints.targets)
    elif kind == "commutant_blocks":
        if label == "umegaki":
            return validate_state(_pinch(constraints.projectors, omega.matrix))
        if label == "d_half":
            s = _pinch(constraints.projectors, omega.sqrt)
            m = s @ s
            return validate_state(m / np.real(np.trace(m)))
    elif kind == "product_marginal":
        if label == "umegaki":
            da, db = constraints.dims
            ma = partial_trace(omega, (da, db), keep=0)
            mb = partial_trace(omega, (da, db), keep=1)
            return validate_state(np.kron(ma.matrix, mb.matrix))
    raise ValueError(f"no projection rule for divergence {label!r} with {kind!r}")


def pythagorean_residual(
    divergence: DistanceFunctional,
    x: DensityMatrix,
    omega: DensityMatrix,
    constraints: ConstraintSet,
) -> float:
    """Defect of the three-point identity around the projection of omega.

    x must itself satisfy the constraints. The slots follow the direction of
    the rule: moment projections split D(x, omega), while block and marginal
    projections split D(omega, x).
    """
    p = entropic_projection(omega, constraints, divergence)
    if constraints.kind == "expectation_equalities":
        total = divergence(x, omega)
        return float(abs(total - divergence(x, p) - divergence(p, omega)))
    total = divergence(omega, x)
    return float(abs(total - divergence(omega, p) - divergence(p, x)))


# ---------------------------------------------------------------------------
# composed update steps


def causal_inference_step(
    rho: DensityMatrix,
    h: HamiltonianFunction,
    dt: float,
    constraints: ConstraintSet,
    divergence: DistanceFunctional = UMEGAKI,
) -> DensityMatrix:
    """Evolve for dt, then re-impose the constraints by projection.

    The ordering matters: projecting first and flowing after gives a
    different state at first order in dt.
    """
    moved = _rk4(_flow_rhs(h), np.array(rho.matrix), dt)
    return entropic_projection(validate_state(moved), constraints, divergence)


def effective_local_step(
    rho: DensityMatrix,
    h: HamiltonianFunction,
    dt: float,
    constraints: ConstraintSet | None = None,
    divergence: DistanceFunctional = UMEGAKI,
) -> DensityMatrix:
    """Strang step for rho' = -i[grad h, rho] + (P(rho) - rho).

    Half a Hamiltonian step, one relaxation step toward the projection, half
    a Hamiltonian step; each substep is integrated with RK4 so the splitting
    keeps its second order. Without constraints this reduces to exactly one
    full Hamiltonian RK4 step.
    """
    rhs = _flow_rhs(h)
    if constraints is None:
        return validate_state(_rk4(rhs, np.array(rho.matrix), dt))

    def drift(r: np.ndarray) -> np.ndarray:
        p = entropic_projection(validate_state(r), constraints, divergence)
        return p.matrix - r

    r = _rk4(rhs, np.array(rho.matrix), dt / 2.0)
    r = _rk4(drift, r, dt)
    r = _rk4(rhs, r, dt / 2.0)
    return validate_state(r)
