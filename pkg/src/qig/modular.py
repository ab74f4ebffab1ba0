"""Per-state representations and modular calculus.

A faithful state rho turns the matrix algebra into a Hilbert space with
inner product <a, b> = tr(a^+ b rho). Vectors are stored as row-major
vec(a); the gram matrix of that basis is I (x) rho^T. On top of this sit
the modular operator and conjugation, relative versions for state pairs,
standard transition unitaries, Liouvilleans with their perturbation
calculus, KMS checks and vector instruments.

Antilinear maps are kept as (matrix, flag) pairs: the operator sends v to
M conj(v). Composition and adjoints follow the usual bookkeeping, spelled
out in compose()/adjoint_superop().
"""
from __future__ import annotations

from dataclasses import dataclass
import warnings
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ConePullbackFailure,
    DimensionMismatch,
    DomainError,
    NotFaithful,
    NotRepresented,
    NumericalBreakdown,
)
from .linalg import (
    DensityMatrix,
    HermitianObservable,
    hermitian_part,
    matrix_function,
    spectral,
    validate_state,
)


def vec(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=complex).reshape(-1)


def unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(v, dtype=complex).reshape(dim, dim)


def swap_matrix(dim: int) -> np.ndarray:
    """Permutation sending vec(x) to vec(x^T)."""
    p = np.zeros((dim * dim, dim * dim))
    for i in range(dim):
        for j in range(dim):
            p[j * dim + i, i * dim + j] = 1.0
    return p


@dataclass(frozen=True)
class Superoperator:
    """Linear or antilinear map on vectorized matrices."""

    matrix: np.ndarray
    antilinear: bool = False

    def apply(self, v: np.ndarray) -> np.ndarray:
        if self.antilinear:
            return self.matrix @ np.conj(v)
        return self.matrix @ v

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def compose(a: Superoperator, b: Superoperator) -> Superoperator:
    """a after b, tracking conjugations."""
    if a.antilinear:
        mat = a.matrix @ np.conj(b.matrix)
    else:
        mat = a.matrix @ b.matrix
    return Superoperator(mat, antilinear=a.antilinear != b.antilinear)


def adjoint_superop(
    op: Superoperator, gram_in: np.ndarray, gram_out: np.ndarray | None = None
) -> Superoperator:
    """Adjoint with respect to gram inner products <x, y> = x^+ G y.

    Linear:     B* = G_in^-1 B^+ G_out
    Antilinear: B* = G_in^-1 B^T G_out^T  (so <y, Bx> = <x, B*y>)
    """
    go = gram_in if gram_out is None else gram_out
    if op.antilinear:
        mat = np.linalg.solve(gram_in, op.matrix.T @ go.T)
    else:
        mat = np.linalg.solve(gram_in, op.matrix.conj().T @ go)
    return Superoperator(mat, antilinear=op.antilinear)


class GnsSpace:
    """The matrix algebra as a Hilbert space anchored at a faithful state."""

    def __init__(self, state: DensityMatrix):
        if not state.is_faithful():
            raise NotFaithful("representation space needs a faithful state")
        self.state = state
        d = state.dim
        self.dim = d
        rho = state.matrix
        self.rho_sqrt = state.sqrt
        self.rho_isqrt = matrix_function(state, lambda t: 1.0 / np.sqrt(t))
        self.rho_quarter = matrix_function(state, lambda t: t ** 0.25)
        self.rho_iquarter = matrix_function(state, lambda t: t ** (-0.25))
        self.gram = np.kron(np.eye(d), rho.T)
        self.gram_sqrt = np.kron(np.eye(d), self.rho_sqrt.T)
        self.gram_isqrt = np.kron(np.eye(d), self.rho_isqrt.T)
        self.omega = vec(np.eye(d))
        self._swap = swap_matrix(d)

    # -- basic geometry ----------------------------------------------------

    def ip(self, x: np.ndarray, y: np.ndarray) -> complex:
        return complex(np.conj(x) @ self.gram @ y)

    def norm(self, x: np.ndarray) -> float:
        return float(np.sqrt(max(0.0, np.real(self.ip(x, x)))))

    def rep(self, a: np.ndarray | HermitianObservable) -> Superoperator:
        am = a.matrix if isinstance(a, HermitianObservable) else np.asarray(a, dtype=complex)
        if am.shape != (self.dim, self.dim):
            raise DimensionMismatch(f"operator shape {am.shape} vs dim {self.dim}")
        return Superoperator(np.kron(am, np.eye(self.dim)), antilinear=False)

    def unrep(self, op: Superoperator) -> np.ndarray:
        """Invert rep(), raising NotRepresented when the superoperator is not
        a left multiplication."""
        d = self.dim
        m = op.matrix
        a = np.array([[m[i * d, j * d] for j in range(d)] for i in range(d)])
        defect = float(np.max(np.abs(m - np.kron(a, np.eye(d)))))
        if op.antilinear or defect > 1e-9 * (1.0 + float(np.max(np.abs(m)))):
            raise NotRepresented(f"left-representation defect {defect:.3e}")
        return a

    # -- modular pair --------------------------------------------------------

    def modular_operator(self) -> Superoperator:
        """Delta vec(x) = vec(rho x rho^-1)."""
        rho_inv = matrix_function(self.state, lambda t: 1.0 / t)
        return Superoperator(np.kron(self.state.matrix, rho_inv.T), antilinear=False)

    def modular_conjugation(self) -> Superoperator:
        """J vec(x) = vec(rho^1/2 x^+ rho^-1/2), antilinear."""
        mat = np.kron(self.rho_sqrt, self.rho_isqrt.T) @ self._swap
        return Superoperator(mat, antilinear=True)

    # -- calculus of gram-self-adjoint operators ----------------------------

    def sa_residual(self, op: Superoperator) -> float:
        if op.antilinear:
            raise DomainError("self-adjointness check expects a linear map")
        r = self.gram @ op.matrix - op.matrix.conj().T @ self.gram
        return float(np.max(np.abs(r)))

    def sa_function(self, op: Superoperator, f: Callable) -> Superoperator:
        """Apply f through the spectrum of a gram-self-adjoint linear map."""
        if self.sa_residual(op) > 1e-8 * (1.0 + float(np.max(np.abs(op.matrix)))):
            raise NumericalBreakdown("operator is not self-adjoint in this space")
        ortho = self.gram_sqrt @ op.matrix @ self.gram_isqrt
        herm = hermitian_part(ortho)
        w, u = np.linalg.eigh(herm)
        with np.errstate(all="ignore"):
            fw = np.asarray(f(w), dtype=complex)
        if np.any(~np.isfinite(fw)):
            raise NumericalBreakdown("function of operator produced non-finite values")
        core = (u * fw) @ u.conj().T
        mat = self.gram_isqrt @ core @ self.gram_sqrt
        return Superoperator(mat, antilinear=False)

    def unitary_group(self, generator: Superoperator, t: float) -> Superoperator:
        """exp(i t K) for a gram-self-adjoint generator."""
        return self.sa_function(generator, lambda w: np.exp(1j * t * w))

    # -- positive cone -------------------------------------------------------

    def cone_coordinates(self, v: np.ndarray) -> np.ndarray:
        """a(v) = rho^-1/4 v_op rho^1/4; v lies in the cone iff a is
        Hermitian positive semidefinite."""
        return self.rho_iquarter @ unvec(v, self.dim) @ self.rho_quarter

    def cone_residual(self, v: np.ndarray) -> float:
        a = self.cone_coordinates(v)
        herm = float(np.max(np.abs(a - a.conj().T)))
        w = np.linalg.eigvalsh(hermitian_part(a))
        return max(herm, float(max(0.0, -w[0])))

    def cone_project(self, v: np.ndarray) -> np.ndarray:
        a = hermitian_part(self.cone_coordinates(v))
        w, u = np.linalg.eigh(a)
        a_pos = (u * np.clip(w, 0.0, None)) @ u.conj().T
        return vec(self.rho_quarter @ a_pos @ self.rho_iquarter)

    def state_from_vector(self, v: np.ndarray) -> DensityMatrix:
        """Pull the vector functional x -> <v, rep(x) v> back to a state."""
        op = unvec(v, self.dim)
        m = op @ self.state.matrix @ op.conj().T
        tr = float(np.real(np.trace(m)))
        if tr <= 0.0:
            raise NumericalBreakdown("vector has vanishing norm")
        return validate_state(m / tr)


def gns_build(state: DensityMatrix) -> GnsSpace:
    return GnsSpace(state)


# ---------------------------------------------------------------------------
# relative modular theory


def relative_modular(phi: DensityMatrix, omega: DensityMatrix):
    """(Delta_{phi,omega}, J_{phi,omega}) on the space anchored at omega.

    Delta vec(x) = vec(phi x omega^-1). J comes from the polar split of
    S vec(x) = vec(x^+): J = S Delta^{-1/2}, an antilinear isometry onto the
    space anchored at phi.
    """
    if phi.dim != omega.dim:
        raise DimensionMismatch("states of different dimension")
    if not (phi.is_faithful() and omega.is_faithful()):
        raise NotFaithful("relative modular operator needs faithful states")
    d = phi.dim
    omega_inv = matrix_function(omega, lambda t: 1.0 / t)
    delta = Superoperator(np.kron(phi.matrix, omega_inv.T), antilinear=False)
    phi_isqrt = matrix_function(phi, lambda t: 1.0 / np.sqrt(t))
    delta_isqrt = np.kron(phi_isqrt, omega.sqrt.T)
    j_mat = swap_matrix(d) @ np.conj(delta_isqrt)
    return delta, Superoperator(j_mat, antilinear=True)


def standard_transition(phi: DensityMatrix, omega: DensityMatrix) -> Superoperator:
    """V_{phi,omega} = J_{phi,phi} J_{phi,omega}, the linear isometry carrying
    vectors of the omega-space to the phi-space while preserving every vector
    functional."""
    _, j_rel = relative_modular(phi, omega)
    j_phi = GnsSpace(phi).modular_conjugation()
    return compose(j_phi, j_rel)


# ---------------------------------------------------------------------------
# flows, Liouvilleans, perturbation calculus


def modular_flow(rho: DensityMatrix, x: np.ndarray, t: float) -> np.ndarray:
    """sigma_t(x) = rho^{it} x rho^{-it}."""
    u = matrix_function(rho, lambda w: np.exp(1j * t * np.log(w)))
    u_inv = matrix_function(rho, lambda w: np.exp(-1j * t * np.log(w)))
    return u @ np.asarray(x, dtype=complex) @ u_inv


def kms_defect(rho: DensityMatrix, x: np.ndarray, y: np.ndarray) -> float:
    """Analytic-continuation form of the equilibrium condition:
    tr(rho x rho y rho^-1) should equal tr(rho y x).

    The left side is evaluated through the representation, as
    <rep(x^+) Omega, Delta rep(y) Omega>, so the modular machinery is on the
    hook rather than bare trace algebra.
    """
    gns = GnsSpace(rho)
    delta = gns.modular_operator()
    xm = np.asarray(x, dtype=complex)
    lhs = gns.ip(vec(xm.conj().T), delta.apply(vec(np.asarray(y, dtype=complex))))
    rhs = np.trace(rho.matrix @ y @ x)
    return float(abs(lhs - rhs))


def standard_liouvillean(gns: GnsSpace, h: np.ndarray | HermitianObservable) -> Superoperator:
    """K = rep(h) - J rep(h) J; annihilates the reference vector and
    anticommutes with J."""
    hm = h.matrix if isinstance(h, HermitianObservable) else np.asarray(h, dtype=complex)
    r = gns.rep(hm)
    j = gns.modular_conjugation()
    jrj = compose(compose(j, r), j)
    return Superoperator(r.matrix - jrj.matrix, antilinear=False)


def perturb_liouvillean(gns: GnsSpace, k: Superoperator, q):
    """Symmetric perturbation K + Q - J Q J of a standard generator.

    q may be a Hermitian matrix or an already represented superoperator
    (anything else raises NotRepresented). Returns the perturbed generator
    together with the expansional map t -> e^{it(K+Q)} e^{-itK}.
    """
    if isinstance(q, Superoperator):
        qm = gns.unrep(q)
    else:
        qm = q.matrix if isinstance(q, HermitianObservable) else np.asarray(q, dtype=complex)
    r = gns.rep(qm)
    j = gns.modular_conjugation()
    jqj = compose(compose(j, r), j)
    perturbed = Superoperator(k.matrix + r.matrix - jqj.matrix, antilinear=False)
    return perturbed, lambda t: expansional(gns, k, qm, t)


def expansional(gns: GnsSpace, k: Superoperator, q, t: float) -> Superoperator:
    """E(t) = exp(it(K + rep(q))) exp(-itK)."""
    qm = q.matrix if isinstance(q, HermitianObservable) else np.asarray(q, dtype=complex)
    kq = Superoperator(k.matrix + gns.rep(qm).matrix, antilinear=False)
    left = gns.unitary_group(kq, t)
    right = gns.unitary_group(k, -t)
    return compose(left, right)


def conjugate_by_flow(gns: GnsSpace, k: Superoperator, x: Superoperator, t: float) -> Superoperator:
    """sigma_t(X) = e^{itK} X e^{-itK}."""
    u = gns.unitary_group(k, t)
    u_inv = gns.unitary_group(k, -t)
    return compose(compose(u, x), u_inv)


def perturbed_kms_state(
    omega: DensityMatrix, q: np.ndarray | HermitianObservable, beta: float = 1.0
) -> DensityMatrix:
    """State of the perturbed equilibrium vector exp(-beta(K + rep(q))/2) Omega.

    K is the standard Liouvillean of the log-generator of omega at this beta,
    so for omega = gibbs(h0, beta) the result is gibbs(h0 + q, beta).
    """
    qm = q.matrix if isinstance(q, HermitianObservable) else np.asarray(q, dtype=complex)
    gns = GnsSpace(omega)
    h0 = matrix_function(omega, lambda t: -np.log(t) / beta)
    k = standard_liouvillean(gns, h0)
    a = Superoperator(k.matrix + gns.rep(qm).matrix, antilinear=False)
    decay = gns.sa_function(a, lambda w: np.exp(-beta * w / 2.0))
    xi = decay.apply(gns.omega)
    return gns.state_from_vector(xi)


# ---------------------------------------------------------------------------
# correlation functions and instruments


def npoint_correlation(
    base: DensityMatrix,
    states: Sequence[DensityMatrix],
    operators: Sequence[np.ndarray],
    times: Sequence[float] | None = None,
    hamiltonians: Sequence[np.ndarray] | None = None,
) -> complex:
    """<Omega_0, V_{phi_0,phi_1} pi_1(x_1) ... V_{phi_n,phi_0} Omega_0>.

    Transition isometries thread the vector through the chain of anchor
    states; each pi_k acts in the space of phi_k, optionally conjugated by
    its own Liouvillean flow when times and Hamiltonians are given.
    """
    n = len(states)
    if len(operators) != n:
        raise DimensionMismatch("one operator per chain state required")
    if times is not None and hamiltonians is not None:
        dressed = []
        for phi, x, t, h in zip(states, operators, times, hamiltonians):
            g = GnsSpace(phi)
            k = standard_liouvillean(g, h)
            dressed.append(conjugate_by_flow(g, k, g.rep(x), t))
        pis = dressed
    else:
        pis = [GnsSpace(phi).rep(x) for phi, x in zip(states, operators)]

    g0 = GnsSpace(base)
    if n == 0:
        return complex(g0.ip(g0.omega, g0.omega))
    chain = [base] + list(states)
    # rightmost factor first: V_{phi_n, phi_0}
    v = standard_transition(chain[n], chain[0]).apply(g0.omega)
    for kk in range(n, 0, -1):
        v = pis[kk - 1].apply(v)
        v = standard_transition(chain[kk - 1], chain[kk]).apply(v)
    return complex(g0.ip(g0.omega, v))


@dataclass(frozen=True)
class InstrumentStep:
    state: DensityMatrix
    vector: np.ndarray
    cone_residual: float
    projected: bool


def liouvillean_instrument_step(
    phi: DensityMatrix,
    h: np.ndarray | HermitianObservable,
    t: float,
    gauge: np.ndarray | None = None,
    sources: Sequence[tuple[float, np.ndarray]] = (),
    reference: DensityMatrix | None = None,
    cone_tol: float = 1e-8,
    on_cone_exit: str = "project",
) -> InstrumentStep:
    """One step of the vector instrument generated by
    L = K_h + (rep(g) - J rep(g) J) + sum_i (rep(l_i h_i) - J rep(l_i h_i) J).

    The reference vector of phi (or the transported representative of phi in
    the space of ``reference``) is evolved by exp(-i t L), checked against
    the positive cone and pulled back to a state. Leaving the cone beyond
    ``cone_tol`` either projects back with a warning or raises, depending on
    ``on_cone_exit`` ("project" or "raise").
    """
    hm = h.matrix if isinstance(h, HermitianObservable) else np.asarray(h, dtype=complex)
    anchor = phi if reference is None else reference
    gns = GnsSpace(anchor)
    l_op = standard_liouvillean(gns, hm)
    extras = []
    if gauge is not None:
        extras.append(np.asarray(gauge, dtype=complex))
    for lam, hi in sources:
        extras.append(float(lam) * np.asarray(hi, dtype=complex))
    for a in extras:
        l_op, _ = perturb_liouvillean(gns, l_op, a)

    if reference is None:
        start = gns.omega
    else:
        start = standard_transition(anchor, phi).apply(vec(np.eye(phi.dim)))

    flow = gns.unitary_group(l_op, -t)
    xi = flow.apply(start)
    resid = gns.cone_residual(xi)
    projected = False
    if resid > cone_tol:
        if on_cone_exit == "raise":
            raise ConePullbackFailure(f"cone residual {resid:.3e} > {cone_tol:.1e}")
        warnings.warn(
            f"evolved vector left the cone (residual {resid:.3e}); projecting",
            stacklevel=2,
        )
        xi = gns.cone_project(xi)
        projected = True
    return InstrumentStep(
        state=gns.state_from_vector(xi),
        vector=xi,
        cone_residual=resid,
        projected=projected,
    )
