"""Representation-space and modular calculus tests.

The closed Kronecker forms (right multiplications, swap identities) serve
as independent oracles for everything the module builds through
compositions and gram-space eigendecompositions.
"""
import numpy as np
import pytest

import oracles
from qig.errors import (
    ConePullbackFailure,
    DimensionMismatch,
    DomainError,
    NotFaithful,
    NotRepresented,
    NumericalBreakdown,
)
from qig.linalg import (
    DensityMatrix,
    as_rng,
    gibbs_state,
    matrix_function,
    pauli,
    random_faithful_state,
    random_hermitian,
    trace_distance,
    validate_state,
)
from qig.modular import (
    GnsSpace,
    Superoperator,
    adjoint_superop,
    compose,
    conjugate_by_flow,
    perturb_liouvillean,
    expansional,
    gns_build,
    kms_defect,
    liouvillean_instrument_step,
    modular_flow,
    npoint_correlation,
    perturbed_kms_state,
    relative_modular,
    standard_liouvillean,
    standard_transition,
    swap_matrix,
    unvec,
    vec,
)


def test_vec_obeys_kron_identity():
    rng = as_rng(3)
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    b = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    x = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    lhs = vec(a @ x @ b)
    rhs = np.kron(a, b.T) @ vec(x)
    assert np.max(np.abs(lhs - rhs)) < 1e-12
    assert np.max(np.abs(unvec(vec(x), 3) - x)) == 0.0


def test_swap_matrix_transposes():
    rng = as_rng(4)
    x = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    p = swap_matrix(3)
    assert np.max(np.abs(p @ vec(x) - vec(x.T))) == 0.0
    assert np.max(np.abs(p @ p - np.eye(9))) == 0.0


def test_gram_matches_state_inner_product():
    for dim, seed in [(2, 0), (3, 1)]:
        rho = random_faithful_state(dim, seed=seed)
        gns = gns_build(rho)
        a = random_hermitian(dim, seed=seed + 10)
        b = random_hermitian(dim, seed=seed + 20)
        direct = np.trace(a.conj().T @ b @ rho.matrix)
        assert abs(gns.ip(vec(a), vec(b)) - direct) < 1e-12


def test_rep_homomorphism_and_unrep():
    rho = random_faithful_state(3, seed=5)
    gns = gns_build(rho)
    a = random_hermitian(3, seed=6)
    b = random_hermitian(3, seed=7)
    prod = compose(gns.rep(a), gns.rep(b))
    assert np.max(np.abs(prod.matrix - gns.rep(a @ b).matrix)) < 1e-12
    assert np.max(np.abs(gns.unrep(gns.rep(a)) - a)) < 1e-14
    # a right multiplication is not in the represented algebra
    right = Superoperator(np.kron(np.eye(3), a.T), antilinear=False)
    with pytest.raises(NotRepresented):
        gns.unrep(right)


def test_faithfulness_required():
    pure = validate_state(np.diag([1.0, 0.0]))
    with pytest.raises(NotFaithful):
        gns_build(pure)
    with pytest.raises(NotFaithful):
        relative_modular(pure, random_faithful_state(2, seed=1))
    with pytest.raises(DimensionMismatch):
        relative_modular(random_faithful_state(2, seed=1), random_faithful_state(3, seed=1))


def test_modular_conjugation_properties():
    rho = random_faithful_state(2, seed=11)
    gns = gns_build(rho)
    j = gns.modular_conjugation()
    delta = gns.modular_operator()
    assert np.max(np.abs(j.apply(gns.omega) - gns.omega)) < 1e-10
    assert np.max(np.abs(delta.apply(gns.omega) - gns.omega)) < 1e-10
    # involution: J composed with itself is the identity map
    jj = compose(j, j)
    assert not jj.antilinear
    assert np.max(np.abs(jj.matrix - np.eye(4))) < 1e-10
    rng = as_rng(12)
    x = rng.normal(size=4) + 1j * rng.normal(size=4)
    y = rng.normal(size=4) + 1j * rng.normal(size=4)
    # antiunitarity flips the inner product
    assert abs(gns.ip(j.apply(x), j.apply(y)) - gns.ip(y, x)) < 1e-10
    # J a J lands in the commutant
    a = random_hermitian(2, seed=13)
    b = random_hermitian(2, seed=14)
    jaj = compose(compose(j, gns.rep(a)), j)
    rb = gns.rep(b)
    comm = jaj.matrix @ rb.matrix - rb.matrix @ jaj.matrix
    assert np.max(np.abs(comm)) < 1e-10


def test_polar_split_gives_adjoint_map():
    """J Delta^(1/2) applied to vec(x) must produce vec(x^+)."""
    rho = random_faithful_state(3, seed=21)
    gns = gns_build(rho)
    half = gns.sa_function(gns.modular_operator(), np.sqrt)
    s = compose(gns.modular_conjugation(), half)
    rng = as_rng(22)
    x = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    assert np.max(np.abs(s.apply(vec(x)) - vec(x.conj().T))) < 1e-9


def test_relative_modular_closed_forms():
    phi = random_faithful_state(2, seed=31)
    omega = random_faithful_state(2, seed=32)
    delta, j_rel = relative_modular(phi, omega)
    rng = as_rng(33)
    x = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    omega_inv = matrix_function(omega, lambda t: 1.0 / t)
    assert np.max(np.abs(delta.apply(vec(x)) - vec(phi.matrix @ x @ omega_inv))) < 1e-10
    # polar split: J_rel Delta^(1/2) is the plain adjoint map vec(x) -> vec(x^+)
    phi_sqrt = phi.sqrt
    omega_isqrt = matrix_function(omega, lambda t: 1.0 / np.sqrt(t))
    half = Superoperator(np.kron(phi_sqrt, omega_isqrt.T), antilinear=False)
    s = compose(j_rel, half)
    assert s.antilinear
    assert np.max(np.abs(s.matrix - swap_matrix(2))) < 1e-10
    # the diagonal case collapses to the one-state conjugation
    delta_d, j_d = relative_modular(omega, omega)
    gns = gns_build(omega)
    assert np.max(np.abs(j_d.matrix - gns.modular_conjugation().matrix)) < 1e-12
    assert np.max(np.abs(delta_d.matrix - gns.modular_operator().matrix)) < 1e-12


def test_relative_conjugation_is_antiisometry():
    phi = random_faithful_state(3, seed=41)
    omega = random_faithful_state(3, seed=42)
    _, j_rel = relative_modular(phi, omega)
    g_phi = gns_build(phi)
    g_omega = gns_build(omega)
    rng = as_rng(43)
    for _ in range(5):
        x = rng.normal(size=9) + 1j * rng.normal(size=9)
        y = rng.normal(size=9) + 1j * rng.normal(size=9)
        lhs = g_phi.ip(j_rel.apply(x), j_rel.apply(y))
        assert abs(lhs - g_omega.ip(y, x)) < 1e-9


def test_standard_transition_is_right_multiplication():
    phi = random_faithful_state(2, seed=51)
    omega = random_faithful_state(2, seed=52)
    v = standard_transition(phi, omega)
    assert not v.antilinear
    phi_isqrt = matrix_function(phi, lambda t: 1.0 / np.sqrt(t))
    w = omega.sqrt @ phi_isqrt
    rng = as_rng(53)
    x = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    assert np.max(np.abs(v.apply(vec(x)) - vec(x @ w))) < 1e-9


def test_standard_transition_preserves_vector_states():
    for dim, seed in [(2, 61), (3, 62)]:
        phi = random_faithful_state(dim, seed=seed)
        omega = random_faithful_state(dim, seed=seed + 100)
        v = standard_transition(phi, omega)
        g_phi = gns_build(phi)
        g_omega = gns_build(omega)
        # isometry between the two gram geometries
        resid = v.matrix.conj().T @ g_phi.gram @ v.matrix - g_omega.gram
        assert np.max(np.abs(resid)) < 1e-10
        # adjoint inverts it
        v_star = adjoint_superop(v, g_omega.gram, g_phi.gram)
        assert np.max(np.abs(v_star.matrix @ v.matrix - np.eye(dim * dim))) < 1e-9
        rng = as_rng(seed)
        xi = rng.normal(size=dim * dim) + 1j * rng.normal(size=dim * dim)
        x = random_hermitian(dim, seed=seed + 200)
        before = g_omega.ip(xi, g_omega.rep(x).apply(xi))
        moved = v.apply(xi)
        after = g_phi.ip(moved, g_phi.rep(x).apply(moved))
        assert abs(before - after) < 1e-9
        # the carried reference vector lands inside the positive cone
        carried = v.apply(g_omega.omega)
        assert g_phi.cone_residual(carried) < 1e-10
        assert trace_distance(g_phi.state_from_vector(carried), omega) < 1e-10


def test_adjoint_superop_pairing():
    rho = random_faithful_state(3, seed=71)
    gns = gns_build(rho)
    rng = as_rng(72)
    b = Superoperator(rng.normal(size=(9, 9)) + 1j * rng.normal(size=(9, 9)))
    b_star = adjoint_superop(b, gns.gram)
    x = rng.normal(size=9) + 1j * rng.normal(size=9)
    y = rng.normal(size=9) + 1j * rng.normal(size=9)
    assert abs(gns.ip(x, b.apply(y)) - gns.ip(b_star.apply(x), y)) < 1e-10
    # the modular conjugation is its own antilinear adjoint
    j = gns.modular_conjugation()
    j_star = adjoint_superop(j, gns.gram)
    assert j_star.antilinear
    assert np.max(np.abs(j_star.matrix - j.matrix)) < 1e-9


def test_liouvillean_tracial_spectrum():
    sx, sy, sz = pauli()
    tracial = validate_state(np.eye(2) / 2.0)
    gns = gns_build(tracial)
    k = standard_liouvillean(gns, sz)
    ortho = gns.gram_sqrt @ k.matrix @ gns.gram_isqrt
    w = np.linalg.eigvalsh((ortho + ortho.conj().T) / 2.0)
    assert np.max(np.abs(w - np.array([-2.0, 0.0, 0.0, 2.0]))) < 1e-12


def test_liouvillean_structure():
    for dim, seed in [(2, 81), (3, 82)]:
        rho = random_faithful_state(dim, seed=seed)
        gns = gns_build(rho)
        h = random_hermitian(dim, seed=seed + 1)
        k = standard_liouvillean(gns, h)
        assert gns.sa_residual(k) < 1e-9
        j = gns.modular_conjugation()
        anti = j.matrix @ np.conj(k.matrix) + k.matrix @ j.matrix
        assert np.max(np.abs(anti)) < 1e-9
        # the reference vector is annihilated exactly for invariant states
        thermal = gibbs_state(h, beta=0.8)
        gns_t = gns_build(thermal)
        k_t = standard_liouvillean(gns_t, h)
        assert np.max(np.abs(k_t.apply(gns_t.omega))) < 1e-9


def test_unitary_group_implements_heisenberg_flow():
    rho = random_faithful_state(2, seed=91)
    gns = gns_build(rho)
    h = random_hermitian(2, seed=92)
    k = standard_liouvillean(gns, h)
    t = 0.83
    u = gns.unitary_group(k, t)
    assert np.max(np.abs(u.matrix.conj().T @ gns.gram @ u.matrix - gns.gram)) < 1e-10
    x = random_hermitian(2, seed=93)
    moved = conjugate_by_flow(gns, k, gns.rep(x), t)
    assert np.max(np.abs(gns.unrep(moved) - oracles.heisenberg(x, h, t))) < 1e-9


def test_modular_flow_of_gibbs_is_heisenberg():
    h = random_hermitian(3, seed=101)
    beta = 1.4
    rho = gibbs_state(h, beta=beta)
    x = random_hermitian(3, seed=102)
    flown = modular_flow(rho, x, 0.6)
    assert np.max(np.abs(flown - oracles.heisenberg(x, h, -beta * 0.6))) < 1e-9
    # the anchor state cannot tell time passed
    assert abs(np.trace(rho.matrix @ flown) - np.trace(rho.matrix @ x)) < 1e-10


def test_kms_defect_small_on_gibbs():
    for seed in range(5):
        for dim in (2, 3):
            h = random_hermitian(dim, seed=seed)
            rho = gibbs_state(h, beta=0.5 + 0.3 * seed)
            x = random_hermitian(dim, seed=seed + 40)
            y = random_hermitian(dim, seed=seed + 50)
            assert kms_defect(rho, x, y) < 1e-10


def test_perturbed_liouvillean_structure():
    rho = random_faithful_state(2, seed=111)
    gns = gns_build(rho)
    h = random_hermitian(2, seed=112)
    q = random_hermitian(2, seed=113)
    k = standard_liouvillean(gns, h)
    kq, cocycle = perturb_liouvillean(gns, k, q)
    assert gns.sa_residual(kq) < 1e-9
    j = gns.modular_conjugation()
    anti = j.matrix @ np.conj(kq.matrix) + kq.matrix @ j.matrix
    assert np.max(np.abs(anti)) < 1e-9
    # the attached cocycle map matches the standalone expansional
    e1 = cocycle(0.4)
    e2 = expansional(gns, k, q, 0.4)
    assert np.max(np.abs(e1.matrix - e2.matrix)) < 1e-12
    # represented superoperators are accepted too
    kq2, _ = perturb_liouvillean(gns, k, gns.rep(q))
    assert np.max(np.abs(kq.matrix - kq2.matrix)) < 1e-12
    bad = Superoperator(np.kron(np.eye(2), q.T))
    with pytest.raises(NotRepresented):
        perturb_liouvillean(gns, k, bad)


def test_expansional_cocycle():
    rho = random_faithful_state(2, seed=121)
    gns = gns_build(rho)
    h = random_hermitian(2, seed=122)
    q = random_hermitian(2, seed=123)
    k = standard_liouvillean(gns, h)
    e0 = expansional(gns, k, q, 0.0)
    assert np.max(np.abs(e0.matrix - np.eye(4))) < 1e-12
    t1, t2 = 0.37, 0.58
    left = expansional(gns, k, q, t1 + t2)
    e1 = expansional(gns, k, q, t1)
    e2 = conjugate_by_flow(gns, k, expansional(gns, k, q, t2), t1)
    right = compose(e1, e2)
    assert np.max(np.abs(left.matrix - right.matrix)) < 1e-9
    # gram unitarity
    resid = left.matrix.conj().T @ gns.gram @ left.matrix - gns.gram
    assert np.max(np.abs(resid)) < 1e-9


def _cumulative_simpson(f, h):
    """Cumulative integral of matrix samples on a uniform grid (odd count)."""
    out = np.zeros_like(f)
    n = f.shape[0]
    for m in range(2, n, 2):
        out[m] = out[m - 2] + (h / 3.0) * (f[m - 2] + 4.0 * f[m - 1] + f[m])
    for m in range(1, n, 2):
        out[m] = out[m - 1] + (h / 12.0) * (5.0 * f[m - 1] + 8.0 * f[m] - f[m + 1])
    return out


def test_expansional_matches_time_ordered_series():
    """Picard iteration of E(t) = 1 + i int_0^t E(s) Q(s) ds reproduces the
    time-ordered expansion; twelve orders must agree to 1e-6 for |q| t <= 1."""
    rho = random_faithful_state(2, seed=131)
    gns = gns_build(rho)
    h = random_hermitian(2, seed=132)
    q = random_hermitian(2, seed=133)
    q = 0.9 * q / np.linalg.norm(q, ord=2)
    k = standard_liouvillean(gns, h)
    t = 1.0

    # orthonormal frame, where the generator is genuinely Hermitian
    ko = gns.gram_sqrt @ k.matrix @ gns.gram_isqrt
    w, u = np.linalg.eigh((ko + ko.conj().T) / 2.0)
    qo = gns.gram_sqrt @ gns.rep(q).matrix @ gns.gram_isqrt
    a = u.conj().T @ qo @ u

    nodes = 801
    ss = np.linspace(0.0, t, nodes)
    q_dressed = np.empty((nodes, 4, 4), dtype=complex)
    gaps = np.subtract.outer(w, w)
    for i, s in enumerate(ss):
        q_dressed[i] = u @ (a * np.exp(1j * s * gaps)) @ u.conj().T

    e = np.tile(np.eye(4, dtype=complex), (nodes, 1, 1))
    hstep = ss[1] - ss[0]
    for _ in range(12):
        integrand = np.einsum("nij,njk->nik", e, q_dressed)
        e = np.eye(4) + 1j * _cumulative_simpson(integrand, hstep)

    series = gns.gram_isqrt @ e[-1] @ gns.gram_sqrt
    engine = expansional(gns, k, q, t)
    assert np.max(np.abs(engine.matrix - series)) < 1e-6


def test_perturbed_equilibrium_matches_gibbs():
    for dim, seed, beta in [(2, 141, 1.0), (2, 142, 0.7), (3, 143, 1.6)]:
        h0 = random_hermitian(dim, seed=seed)
        v = random_hermitian(dim, seed=seed + 1)
        omega = gibbs_state(h0, beta=beta)
        moved = perturbed_kms_state(omega, v, beta=beta)
        target = oracles.gibbs_matrix(h0 + v, beta=beta)
        assert np.max(np.abs(moved.matrix - target)) < 1e-8


def test_cone_membership_and_projection():
    rho = random_faithful_state(2, seed=151)
    gns = gns_build(rho)
    assert gns.cone_residual(gns.omega) < 1e-12
    # vectors manufactured from positive cone coordinates stay put
    a = np.array([[1.2, 0.3 - 0.1j], [0.3 + 0.1j, 0.4]])
    v_in = vec(gns.rho_quarter @ a @ gns.rho_iquarter)
    assert gns.cone_residual(v_in) < 1e-10
    assert np.max(np.abs(gns.cone_project(v_in) - v_in)) < 1e-10
    # a negative direction is detected and clipped
    bad = a - np.array([[0.0, 0.0], [0.0, 0.9]])
    wbad = np.linalg.eigvalsh(bad)
    v_out = vec(gns.rho_quarter @ bad @ gns.rho_iquarter)
    assert abs(gns.cone_residual(v_out) - max(0.0, -wbad[0])) < 1e-10
    fixed = gns.cone_project(v_out)
    assert gns.cone_residual(fixed) < 1e-10
    state = gns.state_from_vector(fixed)
    assert np.min(np.linalg.eigvalsh(state.matrix)) > -1e-12


def test_state_from_vector_pullback():
    rho = random_faithful_state(3, seed=161)
    m = random_faithful_state(3, seed=162)
    gns = gns_build(rho)
    rho_isqrt = matrix_function(rho, lambda t: 1.0 / np.sqrt(t))
    xi = vec(m.sqrt @ rho_isqrt)
    assert trace_distance(gns.state_from_vector(xi), m) < 1e-10


def test_npoint_static_chain_telescopes():
    """With no dressing the transition isometries cancel and the correlation
    is the plain product expectation in the base state."""
    base = random_faithful_state(2, seed=171)
    rng = as_rng(172)
    for n in (1, 2, 3):
        states = [random_faithful_state(2, seed=173 + 7 * n + i) for i in range(n)]
        ops = [random_hermitian(2, seed=191 + 11 * n + i) for i in range(n)]
        got = npoint_correlation(base, states, ops)
        want = np.trace(base.matrix @ np.linalg.multi_dot(ops) if n > 1 else base.matrix @ ops[0])
        assert abs(got - complex(want)) < 1e-9


def test_npoint_thermal_two_point_function():
    h = random_hermitian(2, seed=181)
    rho = gibbs_state(h, beta=1.0)
    x1 = random_hermitian(2, seed=182)
    x2 = random_hermitian(2, seed=183)
    t1, t2 = 0.41, -0.27
    got = npoint_correlation(
        rho, [rho, rho], [x1, x2], times=[t1, t2], hamiltonians=[h, h]
    )
    want = np.trace(rho.matrix @ oracles.heisenberg(x1, h, t1) @ oracles.heisenberg(x2, h, t2))
    assert abs(got - complex(want)) < 1e-9


def test_instrument_zero_source_closed_form():
    phi = random_faithful_state(2, seed=191)
    h = random_hermitian(2, seed=192)
    t = 0.9
    step = liouvillean_instrument_step(phi, h, t)
    target = oracles.heisenberg(phi.matrix, h, -t)
    assert np.max(np.abs(step.state.matrix - target)) < 1e-9
    assert step.cone_residual < 1e-8
    assert not step.projected


def test_instrument_reference_independence():
    phi = random_faithful_state(2, seed=201)
    psi = random_faithful_state(2, seed=202)
    h = random_hermitian(2, seed=203)
    g = random_hermitian(2, seed=204)
    h1 = random_hermitian(2, seed=205)
    t = 0.75
    kwargs = dict(gauge=g, sources=[(0.4, h1)])
    direct = liouvillean_instrument_step(phi, h, t, **kwargs)
    routed = liouvillean_instrument_step(phi, h, t, reference=psi, **kwargs)
    assert trace_distance(direct.state, routed.state) < 1e-9
    # both agree with the closed form driven by the total generator
    total = h + g + 0.4 * h1
    target = oracles.heisenberg(phi.matrix, total, -t)
    assert np.max(np.abs(direct.state.matrix - target)) < 1e-9


def test_instrument_cone_exit_handling():
    phi = random_faithful_state(2, seed=211)
    h = random_hermitian(2, seed=212)
    with pytest.raises(ConePullbackFailure):
        liouvillean_instrument_step(phi, h, 0.5, cone_tol=-1.0, on_cone_exit="raise")
    with pytest.warns(UserWarning):
        step = liouvillean_instrument_step(phi, h, 0.5, cone_tol=-1.0)
    assert step.projected


def test_sa_function_guards():
    rho = random_faithful_state(2, seed=221)
    gns = gns_build(rho)
    rng = as_rng(222)
    skew = Superoperator(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    with pytest.raises(NumericalBreakdown):
        gns.sa_function(skew, np.exp)
    with pytest.raises(DomainError):
        gns.sa_residual(gns.modular_conjugation())
    # the Liouvillean spectrum straddles zero, so a log turns non-finite
    k = standard_liouvillean(gns, random_hermitian(2, seed=223))
    with pytest.raises(NumericalBreakdown):
        gns.sa_function(k, np.log)
