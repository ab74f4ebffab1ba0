"""Geometry induced by divergences.

Second derivatives of a smooth divergence along a chart give a metric; third
derivatives give the pair of dual connections. This module owns those
stencils, the monotone metric kernels evaluated in the eigenbasis of the
state, dually flat exponential-family charts with their Legendre transform,
geodesic shooting and a scalar curvature routine for supplied metric fields.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .divergences import DistanceFunctional, OperatorConvexFunction
from .errors import (
    BlowUp,
    DependentObservables,
    DimensionMismatch,
    NewtonDivergence,
    NonConvergence,
    NonSmoothDistance,
    NotFaithful,
    NumericalBreakdown,
)
from .linalg import DensityMatrix, hermitian_part, spectral, validate_state


@dataclass(frozen=True)
class StateChart:
    """Smooth parametrization theta -> state."""

    param_dim: int
    to_state: Callable[[np.ndarray], DensityMatrix]
    label: str = ""


@dataclass(frozen=True)
class MetricTensor:
    matrix: np.ndarray
    theta: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class ChristoffelField:
    """All-lower connection coefficients gamma[i, j, k] = Gamma_{ij,k},
    symmetric in the first two slots."""

    array: np.ndarray
    theta: np.ndarray


def exponential_state_chart(base: np.ndarray, observables: Sequence[np.ndarray]) -> StateChart:
    """Chart theta -> exp(base + sum theta_k F_k) / Z."""
    obs = [np.asarray(f, dtype=complex) for f in observables]
    base = np.asarray(base, dtype=complex)

    def to_state(theta: np.ndarray) -> DensityMatrix:
        a = base + sum(t * f for t, f in zip(np.asarray(theta, dtype=float), obs))
        w, u = np.linalg.eigh(hermitian_part(a))
        e = np.exp(w - np.max(w))
        e = e / np.sum(e)
        return validate_state((u * e) @ u.conj().T)

    return StateChart(param_dim=len(obs), to_state=to_state, label="exp-family")


# ---------------------------------------------------------------------------
# metric and dual connections from a divergence


def eguchi_tensors(
    divergence: DistanceFunctional,
    chart: StateChart,
    theta: np.ndarray,
    step: float = 1e-3,
    third_step: float = 5e-3,
    richardson: bool = True,
):
    """Metric and dual connection coefficients at ``theta``.

    g_ij is the mixed second derivative -d^2/du_i dv_j of
    F(u, v) = D(chart(theta+u), chart(theta+v)) at the diagonal; the
    connections take one more derivative in the first or second slot.
    The third-derivative stencils are refined with one Richardson step
    (factor-2) unless ``richardson`` is off.

    Returns (MetricTensor, ChristoffelField, ChristoffelField), the second
    field being the dual (second-slot) connection.
    """
    if not divergence.smooth:
        raise NonSmoothDistance(f"{divergence.label} is flagged non-smooth")
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    if n != chart.param_dim:
        raise DimensionMismatch(f"theta has {n} entries, chart wants {chart.param_dim}")

    cache: dict = {}

    def fval(u: np.ndarray, v: np.ndarray) -> float:
        key = (tuple(u), tuple(v))
        if key not in cache:
            cache[key] = divergence(chart.to_state(theta + u), chart.to_state(theta + v))
        return cache[key]

    def basis(i: int, h: float) -> np.ndarray:
        e = np.zeros(n)
        e[i] = h
        return e

    h = step
    g = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            g[i, j] = -(
                fval(basis(i, h), basis(j, h))
                - fval(basis(i, h), basis(j, -h))
                - fval(basis(i, -h), basis(j, h))
                + fval(basis(i, -h), basis(j, -h))
            ) / (4.0 * h * h)
    asym = float(np.max(np.abs(g - g.T)))
    if asym > 1e-4 * (1.0 + float(np.max(np.abs(g)))):
        raise NumericalBreakdown(f"metric asymmetry {asym:.3e}")
    g = 0.5 * (g + g.T)
    if not np.all(np.isfinite(g)):
        raise NumericalBreakdown("metric stencil produced non-finite entries")
    if np.min(np.linalg.eigvalsh(g)) <= 0.0:
        raise NumericalBreakdown("extracted metric is not positive definite")

    def gamma_at(h3: float, star: bool) -> np.ndarray:
        def tk(u: np.ndarray, k: int) -> float:
            vk = basis(k, h3)
            if star:
                return (fval(vk, u) - fval(-vk, u)) / (2.0 * h3)
            return (fval(u, vk) - fval(u, -vk)) / (2.0 * h3)

        out = np.zeros((n, n, n))
        for k in range(n):
            t0 = tk(np.zeros(n), k)
            for i in range(n):
                for j in range(i, n):
                    if i == j:
                        val = (
                            tk(basis(i, h3), k) - 2.0 * t0 + tk(basis(i, -h3), k)
                        ) / (h3 * h3)
                    else:
                        val = (
                            tk(basis(i, h3) + basis(j, h3), k)
                            - tk(basis(i, h3) + basis(j, -h3), k)
                            - tk(basis(i, -h3) + basis(j, h3), k)
                            + tk(basis(i, -h3) + basis(j, -h3), k)
                        ) / (4.0 * h3 * h3)
                    out[i, j, k] = out[j, i, k] = -val
        return out

    def refined(star: bool) -> np.ndarray:
        coarse = gamma_at(third_step, star)
        if not richardson:
            return coarse
        fine = gamma_at(third_step / 2.0, star)
        return (4.0 * fine - coarse) / 3.0

    gamma = refined(star=False)
    gamma_star = refined(star=True)
    if not (np.all(np.isfinite(gamma)) and np.all(np.isfinite(gamma_star))):
        raise NumericalBreakdown("connection stencil produced non-finite entries")
    return (
        MetricTensor(matrix=g, theta=theta),
        ChristoffelField(array=gamma, theta=theta),
        ChristoffelField(array=gamma_star, theta=theta),
    )


def norden_sen_residual(
    g_field: Callable[[np.ndarray], MetricTensor],
    gamma: ChristoffelField,
    gamma_star: ChristoffelField,
    theta: np.ndarray,
    u: np.ndarray,
    v: np.ndarray,
    w: np.ndarray,
    step: float = 1e-3,
) -> float:
    """|u^a v^b w^c (d_a g_bc - Gamma_{ab,c} - Gamma*_{ac,b})| with the
    metric derivative taken by central differences of ``g_field``."""
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    dg = np.zeros((n, n, n))
    for a in range(n):
        e = np.zeros(n)
        e[a] = step
        dg[a] = (g_field(theta + e).matrix - g_field(theta - e).matrix) / (2.0 * step)
    mismatch = dg - np.transpose(gamma.array, (0, 1, 2)) - np.transpose(gamma_star.array, (0, 2, 1))
    return float(abs(np.einsum("a,b,c,abc->", u, v, w, mismatch)))


# ---------------------------------------------------------------------------
# monotone metric kernels


def bkm_kernel(x):
    """(x - 1)/log x, extended by 1 at x = 1."""
    x = np.asarray(x, dtype=float)
    near = np.abs(x - 1.0) < 1e-8
    safe = np.where(near, 2.0, x)
    out = (safe - 1.0) / np.log(safe)
    mid = 1.0 + (x - 1.0) / 2.0  # two-term series around 1
    return np.where(near, mid, out) if out.ndim else float(np.where(near, mid, out))


def wy_kernel(x):
    x = np.asarray(x, dtype=float)
    out = 0.25 * (1.0 + np.sqrt(x)) ** 2
    return out if out.ndim else float(out)


def kernel_from_function(f: OperatorConvexFunction) -> Callable:
    """h_f(x) = (x - 1)^2 / (f(x) + x f(1/x)), the kernel a symmetric operator
    convex function induces. Near x = 1 the limit 1/f''(1) is used."""
    h0 = 1e-4
    fpp = (float(f.fn(1.0 + h0)) - 2.0 * float(f.fn(1.0)) + float(f.fn(1.0 - h0))) / (h0 * h0)

    def kernel(x):
        x = np.asarray(x, dtype=float)
        near = np.abs(x - 1.0) < 1e-6
        safe = np.where(near, 2.0, x)
        with np.errstate(all="ignore"):
            denom = np.asarray(f.fn(safe), dtype=float) + safe * np.asarray(
                f.fn(1.0 / safe), dtype=float
            )
            out = (safe - 1.0) ** 2 / denom
        out = np.where(near, 1.0 / fpp, out)
        return out if out.ndim else float(out)

    return kernel


def monotone_metric_eval(kernel, rho: DensityMatrix, u, v) -> float:
    """g_rho(u, v) = sum_ij conj(u~_ij) v~_ij / (lambda_j h(lambda_i/lambda_j))
    in the eigenbasis of rho. Requires a faithful state."""
    if not rho.is_faithful():
        raise NotFaithful("monotone metric needs a faithful state")
    um = np.asarray(getattr(u, "matrix", u), dtype=complex)
    vm = np.asarray(getattr(v, "matrix", v), dtype=complex)
    lam = rho.spectrum.eigenvalues
    basis = rho.spectrum.eigenvectors
    ut = basis.conj().T @ um @ basis
    vt = basis.conj().T @ vm @ basis
    ratios = lam[:, None] / lam[None, :]
    weights = 1.0 / (lam[None, :] * np.asarray(kernel(ratios), dtype=float))
    return float(np.real(np.sum(ut.conj() * vt * weights)))


def pullback_metric(
    kernel, chart: StateChart, theta: np.ndarray, step: float = 1e-5
) -> MetricTensor:
    """Metric of a chart by pushing coordinate tangents through the kernel."""
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    rho = chart.to_state(theta)
    tangents = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        d = (chart.to_state(theta + e).matrix - chart.to_state(theta - e).matrix) / (2.0 * step)
        tangents.append(hermitian_part(d))
    g = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            g[i, j] = g[j, i] = monotone_metric_eval(kernel, rho, tangents[i], tangents[j])
    return MetricTensor(matrix=g, theta=theta)


# ---------------------------------------------------------------------------
# dually flat exponential families


class DuallyFlatChart:
    """Exponential family in natural coordinates, p(theta) ~ exp(theta . f).

    ``kind`` is "classical" (observables are real vectors over outcomes) or
    "quantum" (Hermitian matrices). The potential psi is log of the
    normalizer; eta = grad psi are the moments; the Hessian doubles as the
    Fisher/BKM metric in these coordinates.
    """

    def __init__(self, observables, kind: str, label: str = ""):
        self.kind = kind
        self.label = label
        if kind == "classical":
            self.observables = tuple(np.asarray(f, dtype=float) for f in observables)
            self._m = self.observables[0].size
        elif kind == "quantum":
            self.observables = tuple(np.asarray(f, dtype=complex) for f in observables)
            self._m = self.observables[0].shape[0]
        else:
            raise ValueError(f"unknown family kind {kind!r}")

    @property
    def n(self) -> int:
        return len(self.observables)

    # -- potential and moments -------------------------------------------

    def _classical_logits(self, theta):
        return sum(t * f for t, f in zip(theta, self.observables))

    def _quantum_generator(self, theta):
        return hermitian_part(sum(t * f for t, f in zip(theta, self.observables)))

    def psi(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if self.kind == "classical":
            z = self._classical_logits(theta)
            top = float(np.max(z))
            return top + float(np.log(np.sum(np.exp(z - top))))
        w = np.linalg.eigvalsh(self._quantum_generator(theta))
        top = float(np.max(w))
        return top + float(np.log(np.sum(np.exp(w - top))))

    def state(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "classical":
            z = self._classical_logits(theta)
            e = np.exp(z - np.max(z))
            return e / np.sum(e)
        w, u = np.linalg.eigh(self._quantum_generator(theta))
        e = np.exp(w - np.max(w))
        e = e / np.sum(e)
        return validate_state((u * e) @ u.conj().T)

    def eta(self, theta) -> np.ndarray:
        if self.kind == "classical":
            p = self.state(theta)
            return np.array([float(np.dot(p, f)) for f in self.observables])
        rho = self.state(theta)
        return np.array([rho.expect(f) for f in self.observables])

    def hessian(self, theta) -> np.ndarray:
        """Hessian of psi: classical covariance, or the derivative of the
        moment map through the exponential's divided differences."""
        theta = np.asarray(theta, dtype=float)
        if self.kind == "classical":
            p = self.state(theta)
            means = np.array([float(np.dot(p, f)) for f in self.observables])
            h = np.zeros((self.n, self.n))
            for j in range(self.n):
                for k in range(j, self.n):
                    cov = float(np.dot(p, self.observables[j] * self.observables[k]))
                    h[j, k] = h[k, j] = cov - means[j] * means[k]
            return h
        a = self._quantum_generator(theta)
        w, u = np.linalg.eigh(a)
        ew = np.exp(w - np.max(w))
        z = float(np.sum(ew))
        diff = w[:, None] - w[None, :]
        small = np.abs(diff) < 1e-12
        phi = np.where(small, ew[:, None], (ew[:, None] - ew[None, :]) / np.where(small, 1.0, diff))
        rho = (u * (ew / z)) @ u.conj().T
        h = np.zeros((self.n, self.n))
        fs_tilde = [u.conj().T @ f @ u for f in self.observables]
        for j in range(self.n):
            dexp = (u @ (phi * fs_tilde[j]) @ u.conj().T) / z
            drho = dexp - rho * float(np.real(np.trace(dexp)))
            for k in range(self.n):
                h[j, k] = float(np.real(np.trace(drho @ self.observables[k])))
        return 0.5 * (h + h.T)

    # -- Legendre machinery ------------------------------------------------

    def theta_from_eta(self, target, theta0=None, tol: float = 1e-12, max_iter: int = 200):
        """Damped Newton inversion of the moment map."""
        target = np.asarray(target, dtype=float)
        theta = np.zeros(self.n) if theta0 is None else np.asarray(theta0, dtype=float).copy()
        for _ in range(max_iter):
            current = self.eta(theta)
            resid = current - target
            nrm = float(np.linalg.norm(resid))
            if nrm <= tol:
                return theta
            h = self.hessian(theta)
            try:
                delta = np.linalg.solve(h, -resid)
            except np.linalg.LinAlgError as exc:
                raise NewtonDivergence(f"singular Hessian: {exc}") from exc
            t = 1.0
            while t >= 1e-8:
                trial = theta + t * delta
                if float(np.linalg.norm(self.eta(trial) - target)) < (1.0 - 0.25 * t) * nrm:
                    theta = trial
                    break
                t *= 0.5
            else:
                raise NewtonDivergence("backtracking found no descent direction")
            if float(np.linalg.norm(theta)) > 1e6:
                raise NewtonDivergence("natural parameters escaped the trust region")
        raise NonConvergence(f"moment inversion stalled above tolerance {tol:g}")

    def psi_dual(self, eta_point) -> float:
        theta = self.theta_from_eta(eta_point)
        return float(np.dot(theta, eta_point)) - self.psi(theta)

    def entropy(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return self.psi(theta) - float(np.dot(theta, self.eta(theta)))

    def metric(self, theta) -> MetricTensor:
        return MetricTensor(matrix=self.hessian(theta), theta=np.asarray(theta, dtype=float))


def build_exponential_family(observables, kind: str, label: str = "") -> DuallyFlatChart:
    """Construct a dually flat chart, rejecting families whose observables
    (together with the constant) are linearly dependent."""
    chart = DuallyFlatChart(observables, kind, label=label)
    if kind == "classical":
        rows = [np.ones(chart._m)] + [np.asarray(f, dtype=float) for f in chart.observables]
        stack = np.stack(rows)
    else:
        rows = [np.eye(chart._m, dtype=complex).reshape(-1)] + [
            f.reshape(-1) for f in chart.observables
        ]
        stack = np.stack(rows)
    svals = np.linalg.svd(stack, compute_uv=False)
    if svals[-1] <= 1e-10 * svals[0]:
        raise DependentObservables(
            f"smallest singular value {svals[-1]:.3e} vs largest {svals[0]:.3e}"
        )
    return chart


# ---------------------------------------------------------------------------
# geodesics and curvature


def levi_civita_field(g_field: Callable[[np.ndarray], MetricTensor], step: float = 1e-4):
    """Raised Levi-Civita coefficients of a metric field, by differences."""

    def gamma_up(theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        n = theta.size
        dg = np.zeros((n, n, n))
        for a in range(n):
            e = np.zeros(n)
            e[a] = step
            dg[a] = (g_field(theta + e).matrix - g_field(theta - e).matrix) / (2.0 * step)
        lower = np.zeros((n, n, n))  # lower[c][a,b] = Gamma_{ab,c}
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    lower[c][a, b] = 0.5 * (dg[a][b, c] + dg[b][a, c] - dg[c][a, b])
        g0 = g_field(theta).matrix
        up = np.zeros((n, n, n))  # up[d][a,b] = Gamma^d_{ab}
        flat = lower.reshape(n, n * n)
        up_flat = np.linalg.solve(g0, flat)
        up = up_flat.reshape(n, n, n)
        return up

    return gamma_up


def geodesic_shoot(
    gamma_up_field,
    theta0,
    v0,
    t_final: float,
    dt: float,
    bound: float = 1e6,
):
    """RK4 shooting of theta'' + Gamma(theta') = 0.

    ``gamma_up_field`` maps theta to raised coefficients up[d][a,b].
    Returns (times, thetas, velocities) arrays; raises BlowUp when the
    trajectory leaves the configured bound or turns non-finite.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    vel = np.asarray(v0, dtype=float).copy()

    def acc(th, ve):
        up = gamma_up_field(th)
        return -np.einsum("dab,a,b->d", up, ve, ve)

    steps = int(round(t_final / dt))
    ts = [0.0]
    thetas = [theta.copy()]
    vels = [vel.copy()]
    t = 0.0
    for _ in range(steps):
        k1t, k1v = vel, acc(theta, vel)
        k2t, k2v = vel + 0.5 * dt * k1v, acc(theta + 0.5 * dt * k1t, vel + 0.5 * dt * k1v)
        k3t, k3v = vel + 0.5 * dt * k2v, acc(theta + 0.5 * dt * k2t, vel + 0.5 * dt * k2v)
        k4t, k4v = vel + dt * k3v, acc(theta + dt * k3t, vel + dt * k3v)
        theta = theta + dt * (k1t + 2 * k2t + 2 * k3t + k4t) / 6.0
        vel = vel + dt * (k1v + 2 * k2v + 2 * k3v + k4v) / 6.0
        t += dt
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(vel))):
            raise BlowUp(f"geodesic turned non-finite at t = {t:.6g}")
        if np.linalg.norm(theta) > bound or np.linalg.norm(vel) > bound:
            raise BlowUp(f"geodesic escaped |.| <= {bound:g} at t = {t:.6g}")
        ts.append(t)
        thetas.append(theta.copy())
        vels.append(vel.copy())
    return np.asarray(ts), np.asarray(thetas), np.asarray(vels)


def scalar_curvature(
    g_field: Callable[[np.ndarray], MetricTensor], theta, step: float = 1e-3
) -> float:
    """Scalar curvature of a metric field by nested central differences.

    Uses the coordinate formula for the all-lower Riemann tensor, oriented
    so that round spheres have positive scalar curvature, then contracts
    twice with the inverse metric.
    """
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    h = step

    def gm(point):
        return g_field(np.asarray(point, dtype=float)).matrix

    g0 = gm(theta)
    ginv = np.linalg.inv(g0)

    def shift(*pairs):
        p = theta.copy()
        for idx, sgn in pairs:
            p[idx] += sgn * h
        return p

    dg = np.zeros((n, n, n))
    for a in range(n):
        dg[a] = (gm(shift((a, +1))) - gm(shift((a, -1)))) / (2.0 * h)

    d2g = np.zeros((n, n, n, n))
    for a in range(n):
        d2g[a, a] = (gm(shift((a, +1))) - 2.0 * g0 + gm(shift((a, -1)))) / (h * h)
        for e in range(a + 1, n):
            val = (
                gm(shift((a, +1), (e, +1)))
                - gm(shift((a, +1), (e, -1)))
                - gm(shift((a, -1), (e, +1)))
                + gm(shift((a, -1), (e, -1)))
            ) / (4.0 * h * h)
            d2g[a, e] = d2g[e, a] = val

    lower = np.zeros((n, n, n))  # lower[c][a,b] = Gamma_{ab,c}
    for a in range(n):
        for b in range(n):
            for c in range(n):
                lower[c][a, b] = 0.5 * (dg[a][b, c] + dg[b][a, c] - dg[c][a, b])

    riemann = np.zeros((n, n, n, n))
    for a in range(n):
        for b in range(n):
            for c in range(n):
                for d in range(n):
                    deriv = 0.5 * (
                        d2g[a, c][b, d]
                        + d2g[b, d][a, c]
                        - d2g[a, d][b, c]
                        - d2g[b, c][a, d]
                    )
                    quad = np.einsum(
                        "ef,e,f->", ginv, lower[:, a, c], lower[:, b, d]
                    ) - np.einsum("ef,e,f->", ginv, lower[:, a, d], lower[:, b, c])
                    riemann[a, b, c, d] = -(deriv + quad)

    ricci = np.einsum("ac,abcd->bd", ginv, riemann)
    return float(np.einsum("bd,bd->", ginv, ricci))
