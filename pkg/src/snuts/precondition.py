"""Preconditioners: diagonal, dense and sparse-permuted decorrelation.

A preconditioner is a fixed linear map q' = T q chosen so the
transformed target has covariance near the identity. The constant
change-of-variables term is dropped everywhere (it does not affect the
sampled distribution). The automatic selector descales only when
correlations are low, otherwise times the dense and sparse transformed
gradients and keeps the faster one; when no usable approximation exists
it returns the identity and requests baseline step adaptation instead.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NotPositiveDefinite
from .laplace import PosteriorApprox
from .models.base import ModelSpec
from .sparse import CholeskyFactor, dense_cholesky, precision_to_cov, sparsity_percent

__all__ = [
    "Preconditioner",
    "IdentityPrecond",
    "DiagonalPrecond",
    "DensePrecond",
    "SparsePrecond",
    "ConditionReport",
    "Selection",
    "condition_factor",
    "correlation_stats",
    "build_auto",
    "forward",
    "backward",
    "transformed_logdensity_grad",
    "make_target",
    "gradient_cost_ratio",
]


class Preconditioner:
    """Fixed linear reparameterization with its gradient pullback."""

    kind = "base"

    def forward(self, q):
        raise NotImplementedError

    def backward(self, qp):
        raise NotImplementedError

    def push_gradient(self, g):
        """Map a gradient at q into the transformed space."""
        raise NotImplementedError


class IdentityPrecond(Preconditioner):
    kind = "identity"

    def __init__(self, dim):
        self.dim = dim

    def forward(self, q):
        return np.asarray(q, dtype=np.float64)

    def backward(self, qp):
        return np.asarray(qp, dtype=np.float64)

    def push_gradient(self, g):
        return g


class DiagonalPrecond(Preconditioner):
    """q' = q / s with s the marginal standard deviations."""

    kind = "diag"

    def __init__(self, scales):
        self.scales = np.ascontiguousarray(scales, dtype=np.float64)
        if np.any(self.scales <= 0):
            raise ValueError("scales must be strictly positive")
        self.dim = self.scales.shape[0]

    def forward(self, q):
        return q / self.scales

    def backward(self, qp):
        return qp * self.scales

    def push_gradient(self, g):
        return g * self.scales


class DensePrecond(Preconditioner):
    """q' = L^{-1} q with L the dense lower Cholesky factor of the covariance."""

    kind = "dense"

    def __init__(self, chol_lower):
        self.L = np.ascontiguousarray(chol_lower, dtype=np.float64)
        self.dim = self.L.shape[0]

    def forward(self, q):
        return solve_triangular(self.L, q, lower=True)

    def backward(self, qp):
        return self.L @ qp

    def push_gradient(self, g):
        return self.L.T @ g


class SparsePrecond(Preconditioner):
    """q' = L^T P q with L the sparse factor of the permuted precision."""

    kind = "sparse"

    def __init__(self, factor: CholeskyFactor):
        self.factor = factor
        self.dim = factor.n

    def forward(self, q):
        return self.factor.lt_matvec(np.asarray(q, dtype=np.float64)[self.factor.perm.forward])

    def backward(self, qp):
        return self.factor.solve_upper(qp)[self.factor.perm.inverse]

    def push_gradient(self, g):
        return self.factor.solve_lower(np.asarray(g, dtype=np.float64)[self.factor.perm.forward])


def forward(p: Preconditioner, q):
    return p.forward(np.asarray(q, dtype=np.float64))


def backward(p: Preconditioner, qp):
    return p.backward(np.asarray(qp, dtype=np.float64))


def transformed_logdensity_grad(p: Preconditioner, m: ModelSpec, qp):
    """Log density and gradient of the transformed target at q'."""
    q = p.backward(np.asarray(qp, dtype=np.float64))
    f, g = m.value_and_grad(q)
    return f, p.push_gradient(g)


def make_target(p: Preconditioner, m: ModelSpec):
    """Fused (value, gradient) callable in the transformed space."""
    if p.kind == "identity":
        return m.value_and_grad

    def target(qp):
        q = p.backward(qp)
        f, g = m.value_and_grad(q)
        return f, p.push_gradient(g)

    return target


# -- posterior-geometry statistics ------------------------------------------------


@dataclass
class ConditionReport:
    """Difficulty proxies of a covariance: the fourth-moment condition
    factor over eigenvalue ratios, the largest absolute pairwise
    correlation and the marginal sd spread."""

    max_abs_corr: float
    sd_ratio: float
    kappa: float
    dim: int
    sparsity_percent: float

    def to_dict(self):
        return {
            "max_abs_corr": self.max_abs_corr,
            "sd_ratio": self.sd_ratio,
            "kappa": self.kappa,
            "dim": self.dim,
            "sparsity_percent": self.sparsity_percent,
        }


def condition_factor(cov) -> float:
    """(sum_d (lambda_max / lambda_d)^4)^(1/4) over covariance eigenvalues."""
    lam = np.linalg.eigvalsh(np.asarray(cov, dtype=np.float64))
    if lam[0] <= 0:
        raise NotPositiveDefinite(-1, "covariance has a nonpositive eigenvalue")
    ratios = lam[-1] / lam
    # factor out the max ratio so the fourth powers cannot overflow
    top = ratios.max()
    return float(top * np.sum((ratios / top) ** 4) ** 0.25)


def correlation_stats(cov):
    """(max |pairwise correlation|, max sd / min sd)."""
    cov = np.asarray(cov, dtype=np.float64)
    sd = np.sqrt(np.diag(cov))
    n = cov.shape[0]
    if n == 1:
        return 0.0, 1.0
    corr = cov / np.outer(sd, sd)
    off = np.abs(corr - np.diag(np.diag(corr)))
    return float(off.max()), float(sd.max() / sd.min())


# -- automatic selection ------------------------------------------------------------


@dataclass
class Selection:
    preconditioner: Preconditioner
    report: ConditionReport | None
    trace: list = field(default_factory=list)
    use_stan_adaptation: bool = False


def build_auto(
    approx: PosteriorApprox | None,
    m: ModelSpec,
    corr_threshold=0.3,
    kappa_max=1e12,
    dense_cap=5000,
    timing_reps=20,
    timer=None,
    seed=0,
) -> Selection:
    """Pick a preconditioner from the posterior approximation.

    No approximation: identity plus baseline adaptation. Numerically
    degenerate approximation (condition factor beyond float precision,
    or a covariance that fails to invert): same fallback, loudly traced.
    Low correlations: diagonal descaling only. Otherwise dense vs sparse
    by measured transformed-gradient cost (median of ``timing_reps``
    evaluations at mode-perturbed points, injectable clock).
    """
    timer = timer or time.perf_counter
    trace = []
    if approx is None:
        trace.append({"step": "no_approximation", "action": "identity + stan adaptation"})
        return Selection(IdentityPrecond(m.dim), None, trace, use_stan_adaptation=True)
    n = approx.dim
    if n > dense_cap:
        trace.append({"step": "above_dense_cap", "dim": n, "action": "sparse"})
        return Selection(SparsePrecond(approx.factor), None, trace)
    try:
        cov = precision_to_cov(approx.Q, cap=dense_cap)
        kappa = condition_factor(cov)
    except NotPositiveDefinite as exc:
        trace.append({"step": "degenerate_covariance", "error": str(exc), "action": "identity + stan adaptation"})
        return Selection(IdentityPrecond(m.dim), None, trace, use_stan_adaptation=True)
    max_corr, sd_ratio = correlation_stats(cov)
    report = ConditionReport(max_corr, sd_ratio, kappa, n, sparsity_percent(approx.Q))
    trace.append({"step": "condition_report", **report.to_dict()})
    if not math.isfinite(kappa) or kappa > kappa_max:
        trace.append(
            {
                "step": "degenerate_condition_factor",
                "kappa": kappa,
                "limit": kappa_max,
                "action": "identity + stan adaptation",
            }
        )
        return Selection(IdentityPrecond(m.dim), report, trace, use_stan_adaptation=True)
    if max_corr <= corr_threshold:
        trace.append({"step": "low_correlation", "max_abs_corr": max_corr, "action": "diag"})
        return Selection(DiagonalPrecond(np.sqrt(np.diag(cov))), report, trace)
    dense = DensePrecond(dense_cholesky(cov))
    sparse = SparsePrecond(approx.factor)
    rng = np.random.default_rng(seed)
    sd = np.sqrt(np.diag(cov))
    points = approx.q_hat + 0.1 * sd * rng.standard_normal((timing_reps, n))
    times = {}
    for p in (dense, sparse):
        samples = []
        for i in range(timing_reps):
            qp = p.forward(points[i])
            t0 = timer()
            transformed_logdensity_grad(p, m, qp)
            samples.append(timer() - t0)
        times[p.kind] = float(np.median(samples))
    pick = sparse if times["sparse"] < times["dense"] else dense
    trace.append(
        {
            "step": "timing",
            "median_dense_s": times["dense"],
            "median_sparse_s": times["sparse"],
            "action": pick.kind,
        }
    )
    return Selection(pick, report, trace)


def gradient_cost_ratio(p: Preconditioner, m: ModelSpec, reps=20, seed=0, at=None):
    """Median wall time of the transformed gradient over that of the raw
    gradient, at matched points."""
    if reps < 5:
        raise ValueError("need reps >= 5")
    rng = np.random.default_rng(seed)
    base = np.asarray(at if at is not None else m.init, dtype=np.float64)
    points = base + 0.1 * rng.standard_normal((reps, m.dim))
    raw, transformed = [], []
    for i in range(reps):
        q = points[i]
        t0 = time.perf_counter()
        m.value_and_grad(q)
        raw.append(time.perf_counter() - t0)
        qp = p.forward(q)
        t0 = time.perf_counter()
        transformed_logdensity_grad(p, m, qp)
        transformed.append(time.perf_counter() - t0)
    return float(np.median(transformed) / np.median(raw))
