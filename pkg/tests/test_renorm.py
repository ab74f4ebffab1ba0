"""Block renormalization, propagator series, response law, contraction rates."""

import numpy as np
import pytest
from scipy import optimize

from qig.divergences import D_HALF, UMEGAKI, closed_form_distance
from qig.errors import (
    ConstraintSolveFailure,
    DimensionMismatch,
    DomainError,
    SingularControlBlock,
    ZeroCoefficient,
)
from qig.geometry import build_exponential_family, wy_kernel
from qig.linalg import (
    DensityMatrix,
    QuantumChannel,
    apply_channel,
    depolarizing_channel,
    pauli,
    random_faithful_state,
    validate_state,
)
from qig.renorm import (
    BlockModel,
    ContractionReport,
    SourceSpec,
    block_renormalize,
    constrained_response,
    contraction_coefficient,
    first_law_decompose,
    fixed_point_check,
    markov_rescale,
    propagator_series,
)

from oracles import classical_kl, schur_complement

WORKED_KERNEL = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]])


def worked_model() -> BlockModel:
    return BlockModel(WORKED_KERNEL, block_a=(0,), block_b=(1,), block_c=(2,))


# ---------------------------------------------------------------------------
# block renormalization


def test_worked_block_renormalization():
    red = block_renormalize(worked_model())
    assert abs(red.k_aa[0, 0] - 1.5) < 1e-14
    assert abs(red.k_ba[0, 0] - 0.5) < 1e-14
    assert abs(red.r2[0, 0] - 0.25) < 1e-14
    assert abs(red.factor[0, 0] - 4.0 / 3.0) < 1e-14
    # independent Schur-complement oracle for every reduced block
    on_ab = schur_complement(WORKED_KERNEL, keep=[0, 1], drop=[2])
    assert abs(red.k_aa[0, 0] - on_ab[0, 0]) < 1e-14
    assert abs(red.k_ab[0, 0] - on_ab[0, 1]) < 1e-14
    assert abs(red.k_ba[0, 0] - on_ab[1, 0]) < 1e-14
    assert abs(red.k_bb[0, 0] - on_ab[1, 1]) < 1e-14


def test_uncorrelated_control_is_identity():
    k = np.array([[2.0, 0.5, 0.0], [0.5, 2.0, 0.0], [0.0, 0.0, 3.0]])
    model = BlockModel(k, block_a=(0,), block_b=(1,), block_c=(2,))
    red = block_renormalize(model)
    assert abs(red.k_aa[0, 0] - 2.0) < 1e-15
    assert abs(red.k_ba[0, 0] - 0.5) < 1e-15
    assert np.max(np.abs(red.r2)) < 1e-15
    assert np.max(np.abs(red.factor - np.eye(1))) < 1e-15
    # with no correlation the source is not rescaled
    src = SourceSpec(delta_q=[0.7], label="drive")
    assert np.max(np.abs(red.rescale_source(src) - [0.7])) < 1e-15


def test_source_rescaling_worked():
    red = block_renormalize(worked_model())
    out = red.rescale_source(SourceSpec(delta_q=[0.3]))
    assert abs(out[0] - 0.4) < 1e-14
    with pytest.raises(DomainError):
        SourceSpec(delta_q=[np.inf])
    with pytest.raises(DimensionMismatch):
        red.rescale_source(np.array([0.1, 0.2]))


def test_renormalization_identity_random():
    # K~_AA = K_AA (1 - R^2) on random positive kernels and random splits
    rng = np.random.default_rng(2026)
    for _ in range(100):
        dim = int(rng.integers(3, 9))
        a = rng.standard_normal((dim, dim))
        k = a @ a.T + 0.1 * np.eye(dim)
        perm = rng.permutation(dim)
        na = int(rng.integers(1, dim - 1))
        nb = int(rng.integers(1, dim - na))
        blocks = (
            tuple(perm[:na]),
            tuple(perm[na : na + nb]),
            tuple(perm[na + nb :]),
        )
        model = BlockModel(k, *blocks)
        red = block_renormalize(model)
        k_aa = model.sub(model.block_a, model.block_a)
        ident = k_aa @ (np.eye(na) - red.r2)
        assert np.max(np.abs(red.k_aa - ident)) < 1e-10 * (1.0 + np.max(np.abs(k_aa)))
        oracle = schur_complement(k, keep=list(model.block_a), drop=list(model.block_c)) if model.block_c else k_aa
        assert np.max(np.abs(red.k_aa - oracle)) < 1e-9


def test_singular_control_block():
    k = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
    model = BlockModel(k, block_a=(0,), block_b=(1,), block_c=(2,))
    with pytest.raises(SingularControlBlock):
        block_renormalize(model)


def test_block_model_validation():
    good = np.eye(3)
    with pytest.raises(DomainError):
        BlockModel(np.array([[1.0, 0.5], [0.2, 1.0]]), (0,), (1,))
    with pytest.raises(DomainError):
        BlockModel(np.diag([1.0, -0.5]), (0,), (1,))
    with pytest.raises(DimensionMismatch):
        BlockModel(np.ones((2, 3)), (0,), (1,))
    with pytest.raises(DomainError):
        BlockModel(good, (0,), (1,))  # index 2 unclaimed
    with pytest.raises(DomainError):
        BlockModel(good, (0, 0), (1,), (2,))
    with pytest.raises(DomainError):
        BlockModel(good, (), (0, 1), (2,))


# ---------------------------------------------------------------------------
# propagator series


def test_worked_series():
    series = propagator_series(worked_model(), order=40)
    sums = [float(s[0, 0]) for s in series.partial_sums]
    assert abs(sums[0] - 0.5) < 1e-15
    assert abs(sums[1] - 0.25) < 1e-15
    assert abs(sums[2] - 0.375) < 1e-15
    assert abs(sums[20] - 1.0 / 3.0) <= 1e-6
    assert abs(series.radius - 0.25) < 1e-14
    assert not series.divergent
    assert abs(series.limit[0, 0] - 1.0 / 3.0) < 1e-14
    assert abs(sums[40] - 1.0 / 3.0) < 1e-10


def test_series_zero_coupling():
    k = np.array([[2.0, 0.5, 0.0], [0.5, 2.0, 0.0], [0.0, 0.0, 3.0]])
    model = BlockModel(k, block_a=(0,), block_b=(1,), block_c=(2,))
    series = propagator_series(model, order=6)
    for s in series.partial_sums:
        assert abs(s[0, 0] - 0.25) < 1e-15
    assert series.radius == 0.0


def test_series_divergent_flag():
    # boundary kernel with perfect driving/control correlation
    k = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]])
    model = BlockModel(k, block_a=(0,), block_b=(1,), block_c=(2,))
    series = propagator_series(model, order=5)
    assert series.divergent
    assert series.limit is None
    assert abs(series.radius - 1.0) < 1e-12
    assert len(series.partial_sums) == 6


def test_series_limit_random():
    # partial sums reach the Schur kernel whenever the radius stays below 0.9
    rng = np.random.default_rng(77)
    checked = 0
    while checked < 10:
        dim = int(rng.integers(3, 7))
        a = rng.standard_normal((dim, dim))
        k = a @ a.T + 0.2 * np.eye(dim)
        perm = rng.permutation(dim)
        na = int(rng.integers(1, dim - 1))
        nb = int(rng.integers(1, dim - na))
        blocks = (
            tuple(perm[:na]),
            tuple(perm[na : na + nb]),
            tuple(perm[na + nb :]),
        )
        if not blocks[2]:
            continue
        model = BlockModel(k, *blocks)
        series = propagator_series(model, order=200)
        if series.radius > 0.9:
            # pull the kernel toward its block diagonal until the radius drops
            mask = np.zeros_like(k)
            for blk in blocks:
                mask[np.ix_(blk, blk)] = 1.0
            shrink = k.copy()
            while True:
                shrink = 0.7 * shrink + 0.3 * (mask * shrink)
                model = BlockModel(shrink, *blocks)
                series = propagator_series(model, order=200)
                if series.radius <= 0.9:
                    break
        assert np.max(np.abs(series.partial_sums[-1] - series.limit)) < 1e-8
        checked += 1


# ---------------------------------------------------------------------------
# constrained response


class _Quadratic:
    """eta = K theta + b: constant Hessian makes the response exactly linear."""

    def __init__(self, kernel, offset):
        self.kernel = np.asarray(kernel, dtype=float)
        self.offset = np.asarray(offset, dtype=float)

    def eta(self, theta):
        return self.kernel @ np.asarray(theta, dtype=float) + self.offset

    def hessian(self, theta):
        return self.kernel


def _quadratic_setup(seed=11, dim=4):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((dim, dim))
    kernel = a @ a.T + dim * np.eye(dim)
    offset = rng.standard_normal(dim)
    chart = _Quadratic(kernel, offset)
    theta_star = rng.standard_normal(dim) * 0.3
    eta_star = chart.eta(theta_star)
    return chart, theta_star, eta_star


def _quadratic_direct(chart, blocks, eta_a_end, theta_b, eta_c):
    a, b, c = blocks
    free = list(a) + list(c)
    target = np.concatenate([eta_a_end, eta_c])
    rhs = target - chart.offset[free] - chart.kernel[np.ix_(free, list(b))] @ theta_b
    theta = np.zeros(chart.kernel.shape[0])
    theta[free] = np.linalg.solve(chart.kernel[np.ix_(free, free)], rhs)
    theta[list(b)] = theta_b
    return chart.eta(theta)[list(b)]


def test_response_quadratic_exactly_linear():
    chart, theta_star, eta_star = _quadratic_setup()
    blocks = ((0, 1), (2,), (3,))
    a, b, c = blocks
    delta = np.array([0.5, -0.3])
    path = lambda t: eta_star[list(a)] + t * delta
    res = constrained_response(
        chart, blocks, path, theta_b=theta_star[list(b)], eta_c=eta_star[list(c)],
        times=np.linspace(0.0, 1.0, 33), theta_guess=theta_star,
    )
    # linear in t, and the trapezoid rule is exact for a constant kernel
    slope = res.eta_b[-1] - res.eta_b[0]
    for k, t in enumerate(res.times):
        assert np.max(np.abs(res.eta_b[k] - (res.eta_b[0] + t * slope))) < 1e-10
    direct = _quadratic_direct(chart, blocks, eta_star[list(a)] + delta,
                               theta_star[list(b)], eta_star[list(c)])
    assert np.max(np.abs(res.eta_b[-1] - direct)) < 1e-10
    assert np.max(np.abs(res.eta_b_direct - res.eta_b)) < 1e-9


def test_response_path_independence_quadratic():
    chart, theta_star, eta_star = _quadratic_setup(seed=12)
    blocks = ((0, 1), (2,), (3,))
    a = list(blocks[0])
    delta = np.array([0.4, 0.2])
    straight = lambda t: eta_star[a] + t * delta
    detour = lambda t: eta_star[a] + t * delta + np.sin(np.pi * t) * np.array([0.3, -0.5])
    kw = dict(theta_b=theta_star[[2]], eta_c=eta_star[[3]], theta_guess=theta_star)
    r1 = constrained_response(chart, blocks, straight, times=np.linspace(0, 1, 65), **kw)
    r2 = constrained_response(chart, blocks, detour, times=np.linspace(0, 1, 65), **kw)
    assert np.max(np.abs(r1.eta_b[-1] - r2.eta_b[-1])) < 1e-9


def test_response_without_control_block():
    chart, theta_star, eta_star = _quadratic_setup(seed=13, dim=3)
    blocks = ((0, 1), (2,))
    a = list(blocks[0])
    delta = np.array([-0.2, 0.6])
    res = constrained_response(
        chart, blocks, lambda t: eta_star[a] + t * delta,
        theta_b=theta_star[[2]], eta_c=(), times=np.linspace(0, 1, 17),
        theta_guess=theta_star,
    )
    direct = _quadratic_direct(chart, (blocks[0], blocks[1], ()),
                               eta_star[a] + delta, theta_star[[2]], np.zeros(0))
    assert np.max(np.abs(res.eta_b[-1] - direct)) < 1e-10


def test_response_on_quantum_family_matches_full_solve():
    sx, sy, sz = pauli()
    chart = build_exponential_family([sz, sx, sy], kind="quantum")
    theta0 = np.array([0.2, -0.1, 0.3])
    eta0 = chart.eta(theta0)
    blocks = ((0,), (1,), (2,))
    path = lambda t: np.array([eta0[0] + 0.25 * t])
    res = constrained_response(
        chart, blocks, path, theta_b=np.array([theta0[1]]),
        eta_c=np.array([eta0[2]]), times=np.linspace(0.0, 1.0, 257),
        theta_guess=theta0,
    )

    # independent full constrained solve at the endpoint
    def mixed(free):
        th = np.array([free[0], theta0[1], free[1]])
        e = chart.eta(th)
        return [e[0] - (eta0[0] + 0.25), e[2] - eta0[2]]

    sol = optimize.root(mixed, x0=[theta0[0], theta0[2]], tol=1e-13)
    assert sol.success
    th_end = np.array([sol.x[0], theta0[1], sol.x[1]])
    eta_b_oracle = chart.eta(th_end)[1]
    assert abs(res.eta_b_direct[-1, 0] - eta_b_oracle) < 1e-9
    assert abs(res.eta_b[-1, 0] - eta_b_oracle) < 1e-6


def test_response_solver_failure():
    chart, theta_star, eta_star = _quadratic_setup(seed=14, dim=3)
    blocks = ((0,), (1,), (2,))
    # a target far outside any reachable moment range on a bounded family
    sx, sy, sz = pauli()
    qchart = build_exponential_family([sz, sx, sy], kind="quantum")
    with pytest.raises(ConstraintSolveFailure):
        constrained_response(
            qchart, blocks, lambda t: np.array([1.0 + 2.0 * t]),
            theta_b=np.zeros(1), eta_c=np.zeros(1), times=np.linspace(0, 1, 5),
        )


def test_uncoupled_response_does_not_move():
    # zero covariance between driving and response blocks
    kernel = np.array([[2.0, 0.0], [0.0, 1.5]])
    chart = _Quadratic(kernel, np.zeros(2))
    res = constrained_response(
        chart, ((0,), (1,)), lambda t: np.array([0.8 * t]),
        theta_b=np.array([0.3]), eta_c=(), times=np.linspace(0, 1, 9),
    )
    assert np.max(np.abs(res.eta_b - res.eta_b[0])) < 1e-12
    model = BlockModel(kernel, (0,), (1,))
    series = propagator_series(model, order=4)
    assert np.max(np.abs(series.limit)) < 1e-15


# ---------------------------------------------------------------------------
# first law


def test_first_law_frozen_state():
    # observable shift proportional to the constant leaves the state alone
    chart = build_exponential_family([np.array([1.0, -1.0])], kind="classical")
    report = first_law_decompose(
        chart, theta=[0.5], delta_theta=[0.0], delta_obs=[np.array([1e-3, 1e-3])]
    )
    assert np.max(np.abs(report.delta_heat)) < 1e-12
    assert np.max(np.abs(report.delta_moment - report.delta_work)) < 1e-12


def test_first_law_frozen_observables():
    chart = build_exponential_family([np.array([1.0, -1.0])], kind="classical")
    report = first_law_decompose(chart, theta=[0.5], delta_theta=[1e-3])
    assert np.max(np.abs(report.delta_work)) == 0.0
    assert np.max(np.abs(report.delta_moment - report.delta_heat)) == 0.0


def test_first_law_binary_family():
    chart = build_exponential_family([np.array([1.0, 0.0])], kind="classical")
    theta, dtheta = 0.5, 1e-4
    report = first_law_decompose(chart, theta=[theta], delta_theta=[dtheta])
    # recompute both sides by hand
    ds = chart.entropy([theta + dtheta]) - chart.entropy([theta])
    dq = chart.eta([theta + dtheta])[0] - chart.eta([theta])[0]
    assert abs(report.delta_entropy - ds) < 1e-12
    assert abs(report.delta_heat[0] - dq) < 1e-12
    assert abs(report.lambdas[0] + theta) == 0.0
    assert abs(report.delta_entropy - report.lambdas[0] * report.delta_heat[0]) <= 1e-7
    assert report.defect <= 1e-7


def test_first_law_second_order_defect():
    sx, sy, sz = pauli()
    chart = build_exponential_family([sz, sx], kind="quantum")
    theta = np.array([0.3, -0.2])
    dtheta = np.array([2e-4, -1e-4])
    dobs = [1e-4 * sx, 2e-4 * sz]
    full = first_law_decompose(chart, theta, dtheta, delta_obs=dobs)
    state = chart.state(theta)
    for k, df in enumerate(dobs):
        assert abs(full.delta_work[k] - state.expect(df)) < 1e-14
    half = first_law_decompose(
        chart, theta, 0.5 * dtheta, delta_obs=[0.5 * df for df in dobs]
    )
    assert full.defect < 1e-6
    # halving the perturbation shrinks the defect like the square
    assert 3.0 < full.defect / half.defect < 5.0


# ---------------------------------------------------------------------------
# contraction coefficients


def _wy_geodesic(a, b):
    return closed_form_distance("wigner_yanase", a, b)


def test_contraction_identity_channel():
    ident = QuantumChannel(kraus=(np.eye(2),))
    for kind, payload in (
        ("divergence", D_HALF),
        ("metric", wy_kernel),
        ("geodesic", _wy_geodesic),
    ):
        report = contraction_coefficient(kind, payload, ident, count=100, seed=5)
        assert abs(report.value - 1.0) < 1e-9
        assert report.sample_count == 100
        assert report.coefficient_kind == kind


def test_contraction_fully_depolarizing():
    flat = depolarizing_channel(2, p=1.0)
    report = contraction_coefficient("divergence", D_HALF, flat, count=50, seed=3)
    assert report.value < 1e-10


def test_contraction_chain_depolarizing():
    for p in (0.25, 0.5, 0.75):
        chan = depolarizing_channel(2, p=p)
        eta_d = contraction_coefficient("divergence", D_HALF, chan, count=400, seed=21).value
        eta_g = contraction_coefficient("metric", wy_kernel, chan, count=400, seed=22).value
        eta_geo = contraction_coefficient("geodesic", _wy_geodesic, chan, count=400, seed=23).value
        assert eta_d >= eta_g - 1e-3
        assert eta_g >= eta_geo - 1e-3
        assert eta_d <= 1.0 + 1e-9
        # the flat point witnesses (1-p)^2 for the metric coefficient
        assert eta_g >= (1.0 - p) ** 2 - 1e-3


def test_contraction_against_grid_oracle():
    # covariant channel: axis pairs on the Bloch ball are a dense witness set
    p = 0.5
    chan = depolarizing_channel(2, p=p)
    grid = np.linspace(-0.95, 0.95, 25)
    best = 0.0
    for r1 in grid:
        rho = validate_state(np.array([[0.5 * (1 + r1), 0.0], [0.0, 0.5 * (1 - r1)]]))
        for r2 in grid:
            if abs(r1 - r2) < 1e-9:
                continue
            sigma = validate_state(np.array([[0.5 * (1 + r2), 0.0], [0.0, 0.5 * (1 - r2)]]))
            before = D_HALF(rho, sigma)
            if before < 1e-11:
                continue
            after = D_HALF(apply_channel(chan, rho), apply_channel(chan, sigma))
            best = max(best, after / before)
    report = contraction_coefficient("divergence", D_HALF, chan, count=400, seed=9)
    assert report.value >= best - 1e-3
    assert report.value <= 1.0 + 1e-9


def test_contraction_workers_deterministic():
    chan = depolarizing_channel(2, p=0.3)
    serial = contraction_coefficient("divergence", D_HALF, chan, count=60, seed=8)
    parallel = contraction_coefficient("divergence", D_HALF, chan, count=60, seed=8, workers=3)
    assert serial.value == parallel.value
    for w1, w2 in zip(serial.witness, parallel.witness):
        assert np.max(np.abs(w1.matrix - w2.matrix)) == 0.0


def test_contraction_validation():
    chan = depolarizing_channel(2, p=0.3)
    with pytest.raises(DomainError):
        contraction_coefficient("volume", D_HALF, chan, count=10)
    with pytest.raises(DomainError):
        ContractionReport("divergence", 1.5, (), 10)
    iso = np.zeros((4, 2))
    iso[0, 0] = 1.0
    iso[1, 1] = 1.0
    with pytest.raises(DimensionMismatch):
        contraction_coefficient("divergence", D_HALF, QuantumChannel(kraus=(iso,)), count=10)


# ---------------------------------------------------------------------------
# markovian rescaling


def _sz_expectation(state: DensityMatrix) -> float:
    sz = np.diag([1.0, -1.0])
    return state.expect(sz)


def test_markov_rescale_eigen_functional():
    p = 0.4
    chan = depolarizing_channel(2, p=p)
    eta = 1.0 - p
    rescaled = markov_rescale(_sz_expectation, chan, eta)
    for seed in range(4):
        rho = random_faithful_state(2, seed=seed)
        assert abs(rescaled(rho) - _sz_expectation(rho)) < 1e-12
    omega = random_faithful_state(2, seed=31)
    phi = random_faithful_state(2, seed=32)
    res = fixed_point_check(UMEGAKI, _sz_expectation, chan, omega, phi, eta)
    assert res.functional < 1e-12
    expected = abs(
        eta * UMEGAKI(omega, phi)
        - UMEGAKI(apply_channel(chan, omega), apply_channel(chan, phi))
    )
    assert abs(res.divergence - expected) < 1e-12


def test_markov_rescale_identity_channel():
    ident = QuantumChannel(kraus=(np.eye(2),))
    purity = lambda s: float(np.real(np.trace(s.matrix @ s.matrix)))
    omega = random_faithful_state(2, seed=41)
    phi = random_faithful_state(2, seed=42)
    res = fixed_point_check(UMEGAKI, purity, ident, omega, phi, eta=1.0)
    assert res.functional < 1e-14
    assert res.divergence < 1e-14


def test_markov_rescale_flat_channel_not_fixed():
    flat = depolarizing_channel(2, p=1.0)
    omega = random_faithful_state(2, seed=51)
    phi = random_faithful_state(2, seed=52)
    eta = 0.7
    res = fixed_point_check(UMEGAKI, _sz_expectation, flat, omega, phi, eta)
    assert abs(res.divergence - eta * UMEGAKI(omega, phi)) < 1e-12
    assert res.divergence > 1e-3


def test_markov_rescale_classical_two_point():
    # bit flip with q = 0.3 acts on diagonal states as a doubly stochastic map
    q = 0.3
    sx = np.array([[0.0, 1.0], [1.0, 0.0]])
    chan = QuantumChannel(kraus=(np.sqrt(1 - q) * np.eye(2), np.sqrt(q) * sx))
    pvec = np.array([0.8, 0.2])
    rvec = np.array([0.35, 0.65])
    omega = validate_state(np.diag(pvec))
    phi = validate_state(np.diag(rvec))
    eta = abs(1.0 - 2.0 * q)
    res = fixed_point_check(UMEGAKI, _sz_expectation, chan, omega, phi, eta)
    assert res.functional < 1e-12
    flip = np.array([[1 - q, q], [q, 1 - q]])
    expected = abs(eta * classical_kl(pvec, rvec) - classical_kl(flip @ pvec, flip @ rvec))
    assert abs(res.divergence - expected) < 1e-12


def test_markov_rescale_validation():
    chan = depolarizing_channel(2, p=0.2)
    with pytest.raises(ZeroCoefficient):
        markov_rescale(_sz_expectation, chan, 0.0)
    with pytest.raises(ZeroCoefficient):
        markov_rescale(_sz_expectation, chan, -0.4)
    with pytest.raises(DomainError):
        markov_rescale(_sz_expectation, chan, 1.3)
    omega = random_faithful_state(2, seed=61)
    with pytest.raises(ZeroCoefficient):
        fixed_point_check(UMEGAKI, _sz_expectation, chan, omega, omega, 0.0)
