"""Laplace machinery: inner/outer optimization of the marginal posterior,
sparse joint-precision assembly, precision sampling and the delta method.

The marginal objective integrates the random effects out of the negative
log posterior with a Gaussian (Laplace) approximation at the inner mode:
f(theta) = f_joint(u_hat, theta) + 0.5 log det H(theta) - (n/2) log 2pi,
where H is the curvature over u at u_hat(theta). Its optimum theta_hat,
the conditional mode (u_hat(theta_hat), theta_hat) and the blockwise
joint curvature assembled there form the posterior approximation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    MaxIterations,
    NoInteriorMode,
    NonFiniteObjective,
    NotPositiveDefinite,
)
from .models.base import ModelSpec
from .sparse import (
    CholeskyFactor,
    Permutation,
    SparseSymMatrix,
    Symbolic,
    amd_order,
    factorize_with_jitter,
)

__all__ = [
    "PosteriorApprox",
    "MarginalObjective",
    "inner_newton",
    "marginal_neg_log",
    "outer_optimize",
    "assemble_Q",
    "laplace_fit",
    "precision_sample",
    "delta_method",
    "marginal_model",
]

LOG2PI = math.log(2.0 * math.pi)


@dataclass
class PosteriorApprox:
    """Mode and sparse joint precision of the approximated posterior."""

    q_hat: np.ndarray
    theta_hat: np.ndarray
    Q: SparseSymMatrix
    neg_log_marginal_at_mode: float
    inner_iterations: int
    outer_iterations: int
    converged: bool
    jittered: bool
    jitter_tau: float
    factor: CholeskyFactor
    model_name: str = ""
    timings: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.Q.dim

    def status_dict(self):
        return {
            "model": self.model_name,
            "dim": self.dim,
            "converged": self.converged,
            "jittered": self.jittered,
            "jitter_tau": self.jitter_tau,
            "inner_iterations": self.inner_iterations,
            "outer_iterations": self.outer_iterations,
            "neg_log_marginal_at_mode": self.neg_log_marginal_at_mode,
        }

    def export(self, directory):
        import os

        os.makedirs(directory, exist_ok=True)
        np.savetxt(os.path.join(directory, "q_hat.csv"), self.q_hat, delimiter=",")
        self.Q.export_text(os.path.join(directory, "Q.txt"))
        with open(os.path.join(directory, "status.json"), "w") as fh:
            json.dump(self.status_dict(), fh, indent=2)


def _neg_logp(m: ModelSpec, q):
    return -m.log_density(q)


def inner_newton(
    m: ModelSpec,
    theta,
    u0,
    tol=1e-8,
    max_iter=100,
    symbolic: Symbolic | None = None,
):
    """Minimize the negative log density over u at fixed theta.

    Newton steps use the sparse curvature factorization with step
    halving on non-decrease. Returns ``(u_hat, iterations, symbolic)``
    so callers can reuse the symbolic factorization.
    """
    u = np.array(u0, dtype=np.float64)
    n_u = m.n_random
    if n_u == 0:
        return u[:0], 0, symbolic
    theta = np.asarray(theta, dtype=np.float64)
    q = m.join(u, theta)
    f = _neg_logp(m, q)
    if not np.isfinite(f):
        raise NonFiniteObjective("inner objective non-finite at start")
    for it in range(max_iter):
        g_u = -np.asarray(m.gradient(q))[m.random_idx]
        if np.max(np.abs(g_u)) < tol:
            return u, it, symbolic
        h = m.hessian_uu(q)
        if symbolic is None:
            symbolic = Symbolic(h, amd_order(h))
        try:
            factor, _ = factorize_with_jitter(h, symbolic.perm)
        except NotPositiveDefinite as exc:
            raise NoInteriorMode(f"curvature not positive definite at inner step {it}") from exc
        step = factor.solve(-g_u)
        alpha = 1.0
        for _ in range(40):
            u_new = u + alpha * step
            q_new = m.join(u_new, theta)
            f_new = _neg_logp(m, q_new)
            if np.isfinite(f_new) and f_new <= f:
                break
            alpha *= 0.5
        else:
            raise NoInteriorMode("inner line search failed to decrease the objective")
        u, q, f = u_new, q_new, f_new
    raise MaxIterations(f"inner Newton did not converge in {max_iter} iterations")


class MarginalObjective:
    """Callable marginal negative log posterior with warm-started inner
    optimization and a finite-difference gradient.

    For models with no random effects it reduces exactly to the joint
    negative log density, and the model's analytic gradient is used.
    """

    def __init__(self, m: ModelSpec, inner_tol=1e-8, inner_max_iter=100, fd_step=1e-4):
        self.model = m
        self.inner_tol = inner_tol
        self.inner_max_iter = inner_max_iter
        self.fd_step = fd_step
        self.n_evaluations = 0
        self.total_inner_iterations = 0
        self._u_warm = np.array(m.init, dtype=np.float64)[m.random_idx]
        self._symbolic = None

    @property
    def n_fixed(self):
        return self.model.n_fixed

    def inner(self, theta):
        """u_hat(theta) plus the curvature factor there."""
        m = self.model
        u_hat, iters, self._symbolic = inner_newton(
            m,
            theta,
            self._u_warm,
            tol=self.inner_tol,
            max_iter=self.inner_max_iter,
            symbolic=self._symbolic,
        )
        self.total_inner_iterations += iters
        self._u_warm = u_hat
        factor = None
        if m.n_random:
            h = m.hessian_uu(m.join(u_hat, theta))
            factor, _ = factorize_with_jitter(h, self._symbolic.perm)
        return u_hat, factor

    def value(self, theta):
        m = self.model
        self.n_evaluations += 1
        if m.n_random == 0:
            v = _neg_logp(m, np.asarray(theta, dtype=np.float64))
            if not np.isfinite(v):
                raise NonFiniteObjective("objective non-finite")
            return v
        u_hat, factor = self.inner(theta)
        f_joint = _neg_logp(m, m.join(u_hat, theta))
        return f_joint + 0.5 * factor.logdet() - 0.5 * m.n_random * LOG2PI

    def gradient(self, theta):
        m = self.model
        theta = np.asarray(theta, dtype=np.float64)
        if m.n_random == 0:
            return -np.asarray(m.gradient(theta))
        g = np.empty(theta.shape[0])
        for i in range(theta.shape[0]):
            h = self.fd_step * max(1.0, abs(theta[i]))
            e = np.zeros_like(theta)
            e[i] = h
            g[i] = (self.value(theta + e) - self.value(theta - e)) / (2.0 * h)
        return g


def marginal_neg_log(mo: MarginalObjective, theta):
    return mo.value(theta)


@dataclass
class OuterReport:
    theta_hat: np.ndarray
    value: float
    gradient: np.ndarray
    iterations: int
    converged: bool
    reason: str = ""


def outer_optimize(
    mo: MarginalObjective,
    theta0,
    gtol=1e-6,
    ftol_rel=1e-10,
    max_iter=200,
) -> OuterReport:
    """BFGS on the marginal objective with finite-difference gradients.

    Converged when the gradient inf-norm drops below ``gtol`` or the
    relative objective change below ``ftol_rel``.
    """
    theta = np.array(theta0, dtype=np.float64)
    if theta.shape[0] == 0:
        return OuterReport(theta, mo.value(theta), theta.copy(), 0, True, "no fixed effects")
    f = mo.value(theta)
    if not np.isfinite(f):
        raise NonFiniteObjective("outer objective non-finite at start")
    g = mo.gradient(theta)
    hinv = np.eye(theta.shape[0])
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) < gtol:
            return OuterReport(theta, f, g, it - 1, True, "gradient tolerance")
        d = -hinv @ g
        if d @ g >= 0.0:  # reset on a non-descent direction
            hinv = np.eye(theta.shape[0])
            d = -g
        alpha, f_new, theta_new = 1.0, np.inf, theta
        for _ in range(60):
            theta_new = theta + alpha * d
            try:
                f_new = mo.value(theta_new)
            except (NoInteriorMode, MaxIterations, NonFiniteObjective):
                f_new = np.inf
            if np.isfinite(f_new) and f_new <= f + 1e-4 * alpha * float(g @ d):
                break
            alpha *= 0.5
        else:
            return OuterReport(theta, f, g, it, False, "line search failed")
        g_new = mo.gradient(theta_new)
        s = theta_new - theta
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(yv) + 1e-300):
            rho = 1.0 / sy
            eye = np.eye(theta.shape[0])
            v = eye - rho * np.outer(s, yv)
            hinv = v @ hinv @ v.T + rho * np.outer(s, s)
        f_prev, theta, f, g = f, theta_new, f_new, g_new
        if abs(f_prev - f) < ftol_rel * max(1.0, abs(f)):
            return OuterReport(theta, f, g, it, True, "objective change tolerance")
    raise MaxIterations(f"outer optimizer did not converge in {max_iter} iterations")


def _fd_outer_hessian(mo: MarginalObjective, theta):
    """Curvature of the marginal objective by central differences of its
    gradient, symmetrized."""
    k = theta.shape[0]
    h_mat = np.empty((k, k))
    for i in range(k):
        h = mo.fd_step * max(1.0, abs(theta[i]))
        e = np.zeros(k)
        e[i] = h
        h_mat[i] = (mo.gradient(theta + e) - mo.gradient(theta - e)) / (2.0 * h)
    return 0.5 * (h_mat + h_mat.T)


def _fd_cross_block(m: ModelSpec, q_hat, fd_step=1e-4):
    """d(grad_u of the negative log density)/d(theta) by central differences."""
    n_u = m.n_random
    theta = q_hat[m.fixed_idx]
    out = np.empty((n_u, m.n_fixed))
    for j in range(m.n_fixed):
        h = fd_step * max(1.0, abs(theta[j]))
        qp = q_hat.copy()
        qp[m.fixed_idx[j]] += h
        qm = q_hat.copy()
        qm[m.fixed_idx[j]] -= h
        gp = -np.asarray(m.gradient(qp))[m.random_idx]
        gm = -np.asarray(m.gradient(qm))[m.random_idx]
        out[:, j] = (gp - gm) / (2.0 * h)
    return out


def assemble_Q(m: ModelSpec, q_hat, mo: MarginalObjective) -> SparseSymMatrix:
    """Blockwise joint curvature at the conditional mode.

    The u-block is the model's declared sparse curvature; the cross
    block comes from the model when supplied, else finite differences;
    the fixed-effect block is the marginal curvature plus the
    cross-information correction, which reconstructs the joint Hessian.
    """
    q_hat = np.asarray(q_hat, dtype=np.float64)
    theta_hat = q_hat[m.fixed_idx]
    h_outer = _fd_outer_hessian(mo, theta_hat)
    k = m.n_fixed
    if m.n_random == 0:
        rows, cols = np.tril_indices(k)
        return SparseSymMatrix.from_coo(k, rows, cols, h_outer[rows, cols])
    h_uu = m.hessian_uu(q_hat)
    if m.cross_hessian is not None:
        h_ut = np.asarray(m.cross_hessian(q_hat), dtype=np.float64)
    else:
        h_ut = _fd_cross_block(m, q_hat, mo.fd_step)
    factor, _ = factorize_with_jitter(h_uu, amd_order(h_uu))
    x = np.column_stack([factor.solve(h_ut[:, j]) for j in range(k)])
    h_tt = h_ut.T @ x + h_outer
    # triplets: u-block (sparse), cross (dense), theta-block (dense)
    ur, uc, uv = h_uu.strict_lower_coo()
    ud = h_uu.diagonal()
    gi_u = m.random_idx
    gi_t = m.fixed_idx
    rows = [gi_u[ur], gi_u, np.repeat(gi_t, m.n_random)]
    cols = [gi_u[uc], gi_u, np.tile(gi_u, k)]
    vals = [uv, ud, h_ut.T.ravel()]
    tr, tc = np.tril_indices(k)
    rows.append(gi_t[tr])
    cols.append(gi_t[tc])
    vals.append(h_tt[tr, tc])
    return SparseSymMatrix.from_coo(
        m.dim, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    )


def laplace_fit(m: ModelSpec, theta0=None, inner_tol=1e-8, fd_step=1e-4) -> PosteriorApprox:
    """Run the optimize-then-assemble pipeline for one model.

    Raises NoInteriorMode / MaxIterations / NonFiniteObjective /
    NotPositiveDefinite when the approximation cannot be built; callers
    deciding between preconditioners treat any of those as "no Q".
    """
    import time

    mo = MarginalObjective(m, inner_tol=inner_tol, fd_step=fd_step)
    if theta0 is None:
        theta0 = np.asarray(m.init, dtype=np.float64)[m.fixed_idx]
    t0 = time.perf_counter()
    report = outer_optimize(mo, theta0)
    u_hat, _ = mo.inner(report.theta_hat) if m.n_random else (np.empty(0), None)
    q_hat = m.join(u_hat, report.theta_hat)
    t1 = time.perf_counter()
    q_mat = assemble_Q(m, q_hat, mo)
    t2 = time.perf_counter()
    factor, tau = factorize_with_jitter(q_mat, amd_order(q_mat))
    t3 = time.perf_counter()
    timings = {"optimize": t1 - t0, "assemble_q": t2 - t1, "factorize": t3 - t2}
    return PosteriorApprox(
        q_hat=q_hat,
        theta_hat=report.theta_hat,
        Q=q_mat,
        neg_log_marginal_at_mode=report.value,
        inner_iterations=mo.total_inner_iterations,
        outer_iterations=report.iterations,
        converged=report.converged,
        jittered=tau > 0.0,
        jitter_tau=tau,
        factor=factor,
        model_name=m.name,
        timings=timings,
    )


def precision_sample(a: PosteriorApprox, n, seed=0):
    """Draws from N(q_hat, Q^{-1}) via the sparse factor, no dense inverse."""
    rng = np.random.default_rng(seed)
    f = a.factor
    out = np.empty((n, a.dim))
    for i in range(n):
        z = rng.standard_normal(a.dim)
        out[i] = a.q_hat + f.solve_upper(z)[f.perm.inverse]
    return out


def delta_method(a: PosteriorApprox, j):
    """Approximate sd of a derived quantity with gradient j at the mode."""
    j = np.asarray(j, dtype=np.float64)
    if j.shape[0] != a.dim:
        raise ValueError("gradient length must match dimension")
    y = a.factor.solve_lower(j[a.factor.perm.forward])
    return math.sqrt(float(y @ y))


def marginal_model(mo: MarginalObjective) -> ModelSpec:
    """Wrap the marginal objective as a fixed-effects-only model so a
    sampler can target the marginalized posterior directly."""
    m = mo.model
    if m.n_random == 0:
        raise ValueError("model has no random effects to marginalize")
    k = m.n_fixed
    names = tuple(m.param_names[i] for i in m.fixed_idx)

    def logp(theta):
        try:
            return -mo.value(np.asarray(theta, dtype=np.float64))
        except (NoInteriorMode, MaxIterations, NonFiniteObjective):
            return -np.inf

    def grad(theta):
        return -mo.gradient(np.asarray(theta, dtype=np.float64))

    return ModelSpec(
        name=f"{m.name}_marginal",
        dim=k,
        random_idx=np.array([], dtype=np.int64),
        fixed_idx=np.arange(k),
        log_density=logp,
        gradient=grad,
        init=np.asarray(m.init, dtype=np.float64)[m.fixed_idx],
        param_names=names,
        meta={
            "marginalized_from": m.name,
            "gradient_cost": f"central differences, {2 * k} inner optimizations per call",
        },
    )
