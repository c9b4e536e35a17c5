"""Model zoo: small analytic targets plus simulated hierarchical models.

Every model carries analytic gradients and, where it has random
effects, an analytic curvature block over them with a fixed sparsity
pattern. Simulation settings live in each model's ``meta`` so runs are
reproducible from configuration alone.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import digamma, gammaln

from ..sparse import SparseSymMatrix, amd_order, factorize
from .base import DatasetSpec, ModelSpec

__all__ = [
    "bivariate_normal",
    "correlated_regression",
    "eight_schools_nc",
    "lg_random_intercept",
    "gmrf_poisson_lattice",
    "nb_glmm",
    "funnel",
]

LOG2PI = math.log(2.0 * math.pi)


def _diag_spsym(values):
    n = values.shape[0]
    idx = np.arange(n, dtype=np.int64)
    return SparseSymMatrix(n, np.arange(n + 1, dtype=np.int64), idx, values, validate=False)


# -- bivariate normal ----------------------------------------------------------


def bivariate_normal(tau=1.0, rho=0.0):
    """Two-parameter Gaussian target, cov [[1, rho*sqrt(tau)], [., tau]].

    tau=1 sweeps correlation at unit scales; rho=0 sweeps the scale
    ratio. No random effects.
    """
    if not -1.0 < rho < 1.0:
        raise ValueError("rho must be in (-1, 1)")
    if tau <= 0:
        raise ValueError("tau must be positive")
    cov = np.array([[1.0, rho * math.sqrt(tau)], [rho * math.sqrt(tau), tau]])
    prec = np.linalg.inv(cov)
    const = -LOG2PI - 0.5 * math.log(np.linalg.det(cov))
    a, b, c = prec[0, 0], prec[0, 1], prec[1, 1]

    def logp(q):
        g0 = a * q[0] + b * q[1]
        g1 = b * q[0] + c * q[1]
        return const - 0.5 * (q[0] * g0 + q[1] * g1)

    def grad(q):
        return np.array([-(a * q[0] + b * q[1]), -(b * q[0] + c * q[1])])

    def both(q):
        g0 = -(a * q[0] + b * q[1])
        g1 = -(b * q[0] + c * q[1])
        return const + 0.5 * (q[0] * g0 + q[1] * g1), np.array([g0, g1])

    return ModelSpec(
        name="bivariate_normal",
        dim=2,
        random_idx=np.array([], dtype=np.int64),
        fixed_idx=np.arange(2),
        log_density=logp,
        gradient=grad,
        log_density_gradient=both,
        init=np.zeros(2),
        param_names=("x1", "x2"),
        meta={"tau": tau, "rho": rho, "cov": cov.tolist()},
    )


# -- linear regression with an uncentered covariate ----------------------------


def correlated_regression(n=100, x_offset=0.0, seed=0):
    """Three-parameter linear regression (intercept, slope, log sigma).

    The covariate is simulated centered at ``x_offset``; a large offset
    yields intercept/slope posterior correlations beyond 0.999.
    Sufficient statistics make evaluation O(1) in n.
    """
    if n < 3:
        raise ValueError("need n >= 3")
    rng = np.random.default_rng(seed)
    true = {"c0": 2.0, "c1": 0.01, "sigma": 0.5}
    x = x_offset + rng.normal(0.0, 5.0, n)
    y = true["c0"] + true["c1"] * (x - x_offset) + rng.normal(0.0, true["sigma"], n)
    data = DatasetSpec(
        seed=seed,
        sizes={"n": n},
        true_params={**true, "x_offset": x_offset},
        data={"x": x, "y": y},
    )
    sx, sy = float(np.sum(x)), float(np.sum(y))
    sxx, sxy, syy = float(x @ x), float(x @ y), float(y @ y)
    pa = pb = 1.0 / 25.0  # N(0, 5^2) priors on regression scale
    pl = 1.0 / 4.0  # N(0, 2^2) prior on log sigma
    prior_const = -0.5 * (2 * math.log(2 * math.pi * 25.0) + math.log(2 * math.pi * 4.0))

    def both(q):
        a, b, ls = q[0], q[1], q[2]
        inv_s2 = math.exp(-2.0 * ls)
        ra = sy - n * a - b * sx
        rb = sxy - a * sx - b * sxx
        sse = syy - 2 * a * sy - 2 * b * sxy + 2 * a * b * sx + n * a * a + b * b * sxx
        lp = (
            -0.5 * sse * inv_s2
            - n * ls
            - 0.5 * n * LOG2PI
            - 0.5 * (pa * a * a + pb * b * b + pl * ls * ls)
            + prior_const
        )
        g = np.array(
            [
                ra * inv_s2 - pa * a,
                rb * inv_s2 - pb * b,
                sse * inv_s2 - n - pl * ls,
            ]
        )
        return lp, g

    return (
        ModelSpec(
            name="correlated_regression",
            dim=3,
            random_idx=np.array([], dtype=np.int64),
            fixed_idx=np.arange(3),
            log_density=lambda q: both(q)[0],
            gradient=lambda q: both(q)[1],
            log_density_gradient=both,
            init=np.zeros(3),
            param_names=("intercept", "slope", "log_sigma"),
            meta={"n": n, "x_offset": x_offset, "seed": seed},
        ),
        data,
    )


# -- non-centered eight schools -------------------------------------------------


def eight_schools_nc():
    """Non-centered hierarchical means model with the classic data.

    eta (8) are random effects; mu and logtau are fixed, with a flat
    prior on mu and a Jacobian term for the log-scale parameter.
    """
    y = np.array([28.0, 8.0, -3.0, 7.0, -1.0, 1.0, 18.0, 12.0])
    sigma = np.array([15.0, 10.0, 16.0, 11.0, 9.0, 11.0, 10.0, 18.0])
    inv_s2 = 1.0 / sigma**2
    const = -0.5 * 16 * LOG2PI - float(np.sum(np.log(sigma)))

    def both(q):
        eta, mu, lt = q[:8], q[8], q[9]
        t = math.exp(lt)
        r = (y - mu - t * eta) * inv_s2
        lp = (
            const
            - 0.5 * float(eta @ eta)
            - 0.5 * float((y - mu - t * eta) @ r)
            + lt
        )
        g = np.empty(10)
        g[:8] = -eta + t * r
        g[8] = float(np.sum(r))
        g[9] = t * float(r @ eta) + 1.0
        return lp, g

    def hess_uu(q):
        lt = q[9]
        return _diag_spsym(1.0 + math.exp(2.0 * lt) * inv_s2)

    def cross(q):
        eta, mu, lt = q[:8], q[8], q[9]
        t = math.exp(lt)
        r = (y - mu - t * eta) * inv_s2
        out = np.empty((8, 2))
        out[:, 0] = t * inv_s2
        out[:, 1] = t * (t * eta * inv_s2 - r)
        return out

    init = np.concatenate([np.ones(8), [0.0, 1.0]])
    return ModelSpec(
        name="eight_schools_nc",
        dim=10,
        random_idx=np.arange(8),
        fixed_idx=np.array([8, 9]),
        log_density=lambda q: both(q)[0],
        gradient=lambda q: both(q)[1],
        log_density_gradient=both,
        hessian_uu=hess_uu,
        cross_hessian=cross,
        init=init,
        param_names=tuple(f"eta[{i}]" for i in range(8)) + ("mu", "logtau"),
        meta={"y": y.tolist(), "sigma": sigma.tolist()},
    )


# -- linear-Gaussian random intercepts (conjugate oracle target) ----------------


def lg_random_intercept(groups=8, per_group=5, obs_sd=0.7, group_sd=1.2, seed=0):
    """Gaussian likelihood + Gaussian random intercepts with known
    variances, so the joint posterior is exactly Gaussian. One fixed
    effect (the global intercept) with a N(0, 5^2) prior."""
    rng = np.random.default_rng(seed)
    true = {"b0": 1.5, "obs_sd": obs_sd, "group_sd": group_sd}
    u_true = rng.normal(0.0, group_sd, groups)
    g_idx = np.repeat(np.arange(groups), per_group)
    y = true["b0"] + u_true[g_idx] + rng.normal(0.0, obs_sd, groups * per_group)
    data = DatasetSpec(
        seed=seed,
        sizes={"groups": groups, "per_group": per_group},
        true_params=true,
        data={"group": g_idx, "y": y},
    )
    n_obs = groups * per_group
    s_g = np.bincount(g_idx, weights=y, minlength=groups)
    sy = float(np.sum(y))
    syy = float(y @ y)
    inv_o2 = 1.0 / obs_sd**2
    inv_u2 = 1.0 / group_sd**2
    pb = 1.0 / 25.0
    const = (
        -0.5 * n_obs * (LOG2PI + 2 * math.log(obs_sd))
        - 0.5 * groups * (LOG2PI + 2 * math.log(group_sd))
        - 0.5 * (LOG2PI + math.log(25.0))
    )

    def both(q):
        u, b0 = q[:groups], q[groups]
        m = b0 + u
        sse = syy - 2.0 * float(m @ s_g) + per_group * float(m @ m)
        lp = const - 0.5 * sse * inv_o2 - 0.5 * float(u @ u) * inv_u2 - 0.5 * pb * b0 * b0
        g = np.empty(groups + 1)
        resid = (s_g - per_group * m) * inv_o2
        g[:groups] = resid - u * inv_u2
        g[groups] = float(np.sum(resid)) - pb * b0
        return lp, g

    hess_diag = np.full(groups, per_group * inv_o2 + inv_u2)

    def hess_uu(q):
        return _diag_spsym(hess_diag.copy())

    def cross(q):
        return np.full((groups, 1), per_group * inv_o2)

    return (
        ModelSpec(
            name="lg_random_intercept",
            dim=groups + 1,
            random_idx=np.arange(groups),
            fixed_idx=np.array([groups]),
            log_density=lambda q: both(q)[0],
            gradient=lambda q: both(q)[1],
            log_density_gradient=both,
            hessian_uu=hess_uu,
            cross_hessian=cross,
            init=np.zeros(groups + 1),
            param_names=tuple(f"u[{i}]" for i in range(groups)) + ("b0",),
            meta={
                "groups": groups,
                "per_group": per_group,
                "obs_sd": obs_sd,
                "group_sd": group_sd,
                "seed": seed,
            },
        ),
        data,
    )


# -- Poisson lattice GMRF -------------------------------------------------------


def _lattice_laplacian(side):
    """4-neighbour graph Laplacian (D - W) of a side x side grid, lower CSC."""
    m = side * side
    rows, cols, vals = [], [], []
    deg = np.zeros(m)
    for r in range(side):
        for c in range(side):
            i = r * side + c
            if c + 1 < side:
                j = i + 1
                rows.append(j), cols.append(i), vals.append(-1.0)
                deg[i] += 1
                deg[j] += 1
            if r + 1 < side:
                j = i + side
                rows.append(j), cols.append(i), vals.append(-1.0)
                deg[i] += 1
                deg[j] += 1
    rows.extend(range(m))
    cols.extend(range(m))
    vals.extend(deg.tolist())
    return SparseSymMatrix.from_coo(m, np.array(rows), np.array(cols), np.array(vals))


def gmrf_poisson_lattice(side=16, kappa=1.0, tau=0.1, seed=0, obs_per_site=1):
    """Poisson counts over a first-order intrinsic-plus-nugget lattice field.

    Latent field prior precision kappa*(D - W) + tau*I on a 4-neighbour
    grid; log link with a global intercept; fixed effects are the
    intercept and the log of kappa. The nugget tau is a known constant
    that makes the intrinsic precision proper.
    """
    if side < 3:
        raise ValueError("need side >= 3")
    m = side * side
    lap = _lattice_laplacian(side)
    diag_pos = lap.indptr[:-1]

    # per-dimension path-graph eigenvalues give log det K in closed form
    mu1 = 4.0 * np.sin(np.pi * np.arange(side) / (2 * side)) ** 2
    lat_eigs = (mu1[:, None] + mu1[None, :]).ravel()

    def k_matrix(kap):
        data = kap * lap.data.copy()
        data[diag_pos] += tau
        return lap.with_data(data)

    true = {"b0": 0.5, "kappa": kappa}
    rng = np.random.default_rng(seed)
    k_true = k_matrix(kappa)
    f_true = factorize(k_true, amd_order(k_true))
    z = rng.standard_normal(m)
    u_true = f_true.solve_upper(z)[f_true.perm.inverse]
    site = np.tile(np.arange(m), obs_per_site)
    y = rng.poisson(np.exp(true["b0"] + u_true[site]))
    data = DatasetSpec(
        seed=seed,
        sizes={"side": side, "obs_per_site": obs_per_site},
        true_params={**true, "tau": tau},
        data={"site": site, "y": y},
    )
    y_site = np.bincount(site, weights=y.astype(np.float64), minlength=m)
    n_site = float(obs_per_site)
    sum_lgamma = float(np.sum(gammaln(y + 1.0)))
    dim = m + 2
    pb, plk = 1.0 / 25.0, 1.0 / 4.0
    prior_const = -0.5 * (math.log(2 * math.pi * 25.0) + math.log(2 * math.pi * 4.0))

    def both(q):
        u, b0, lk = q[:m], q[m], q[m + 1]
        kap = math.exp(lk)
        lap_u = lap.matvec(u)
        ku = kap * lap_u + tau * u
        lam = np.exp(b0 + u)
        keig = kap * lat_eigs + tau
        lp = (
            -0.5 * float(u @ ku)
            + 0.5 * float(np.sum(np.log(keig)))
            - 0.5 * m * LOG2PI
            + float(y_site @ (b0 + u)) - n_site * float(np.sum(lam)) - sum_lgamma
            - 0.5 * (pb * b0 * b0 + plk * lk * lk)
            + prior_const
        )
        g = np.empty(dim)
        g[:m] = -ku + y_site - n_site * lam
        g[m] = float(np.sum(y_site)) - n_site * float(np.sum(lam)) - pb * b0
        g[m + 1] = (
            -0.5 * kap * float(u @ lap_u)
            + 0.5 * float(np.sum(kap * lat_eigs / keig))
            - plk * lk
        )
        return lp, g

    def hess_uu(q):
        u, b0, lk = q[:m], q[m], q[m + 1]
        kap = math.exp(lk)
        data = kap * lap.data.copy()
        data[diag_pos] += tau + n_site * np.exp(b0 + u)
        return lap.with_data(data)

    def cross(q):
        u, b0, lk = q[:m], q[m], q[m + 1]
        kap = math.exp(lk)
        out = np.empty((m, 2))
        out[:, 0] = n_site * np.exp(b0 + u)
        out[:, 1] = kap * lap.matvec(u)
        return out

    return (
        ModelSpec(
            name="gmrf_poisson_lattice",
            dim=dim,
            random_idx=np.arange(m),
            fixed_idx=np.array([m, m + 1]),
            log_density=lambda q: both(q)[0],
            gradient=lambda q: both(q)[1],
            log_density_gradient=both,
            hessian_uu=hess_uu,
            cross_hessian=cross,
            init=np.zeros(dim),
            param_names=tuple(f"u[{i}]" for i in range(m)) + ("b0", "log_kappa"),
            meta={
                "side": side,
                "kappa": kappa,
                "tau": tau,
                "seed": seed,
                "obs_per_site": obs_per_site,
            },
        ),
        data,
    )


# -- negative binomial GLMM ------------------------------------------------------


def nb_glmm(groups=24, per_group=8, seed=0):
    """Negative binomial counts with group random intercepts.

    Fixed effects: intercept, a binary treatment contrast, the log
    random-intercept scale and the log dispersion. The curvature over
    the group intercepts is diagonal.
    """
    if groups < 2 or per_group < 1:
        raise ValueError("need groups >= 2 and per_group >= 1")
    rng = np.random.default_rng(seed)
    true = {"b0": 1.0, "b1": -0.5, "group_sd": 0.8, "phi": 1.5}
    g_idx = np.repeat(np.arange(groups), per_group)
    x = (np.arange(groups * per_group) % 2).astype(np.float64)
    u_true = rng.normal(0.0, true["group_sd"], groups)
    mu = np.exp(true["b0"] + true["b1"] * x + u_true[g_idx])
    y = rng.negative_binomial(true["phi"], true["phi"] / (true["phi"] + mu)).astype(np.float64)
    data = DatasetSpec(
        seed=seed,
        sizes={"groups": groups, "per_group": per_group},
        true_params=true,
        data={"group": g_idx, "x": x.astype(np.int64), "y": y.astype(np.int64)},
    )
    n_obs = groups * per_group
    sum_lgamma_y = float(np.sum(gammaln(y + 1.0)))
    dim = groups + 4
    prior_prec = np.array([1.0 / 25.0, 1.0 / 25.0, 1.0 / 4.0, 1.0 / 4.0])
    prior_const = -0.5 * (
        2 * math.log(2 * math.pi * 25.0) + 2 * math.log(2 * math.pi * 4.0)
    )

    def both(q):
        u = q[:groups]
        b0, b1, ls, lphi = q[groups : groups + 4]
        sig2 = math.exp(2.0 * ls)
        phi = math.exp(lphi)
        eta = b0 + b1 * x + u[g_idx]
        mu = np.exp(eta)
        denom = phi + mu
        lp = (
            float(np.sum(gammaln(y + phi))) - n_obs * float(gammaln(phi)) - sum_lgamma_y
            + phi * float(np.sum(math.log(phi) - np.log(denom)))
            + float(y @ (eta - np.log(denom)))
            - 0.5 * float(u @ u) / sig2 - groups * ls - 0.5 * groups * LOG2PI
            - 0.5 * float(np.sum(prior_prec * q[groups:] ** 2))
            + prior_const
        )
        s = y - (y + phi) * mu / denom
        g = np.empty(dim)
        g[:groups] = np.bincount(g_idx, weights=s, minlength=groups) - u / sig2
        g[groups] = float(np.sum(s)) - prior_prec[0] * b0
        g[groups + 1] = float(x @ s) - prior_prec[1] * b1
        g[groups + 2] = float(u @ u) / sig2 - groups - prior_prec[2] * ls
        g[groups + 3] = (
            phi
            * float(
                np.sum(
                    digamma(y + phi)
                    - digamma(phi)
                    + math.log(phi)
                    - np.log(denom)
                    + 1.0
                    - (y + phi) / denom
                )
            )
            - prior_prec[3] * lphi
        )
        return lp, g

    def hess_uu(q):
        u = q[:groups]
        b0, b1, ls, lphi = q[groups : groups + 4]
        sig2 = math.exp(2.0 * ls)
        phi = math.exp(lphi)
        mu = np.exp(b0 + b1 * x + u[g_idx])
        w = (y + phi) * phi * mu / (phi + mu) ** 2
        return _diag_spsym(np.bincount(g_idx, weights=w, minlength=groups) + 1.0 / sig2)

    return (
        ModelSpec(
            name="nb_glmm",
            dim=dim,
            random_idx=np.arange(groups),
            fixed_idx=np.arange(groups, dim),
            log_density=lambda q: both(q)[0],
            gradient=lambda q: both(q)[1],
            log_density_gradient=both,
            hessian_uu=hess_uu,
            init=np.zeros(dim),
            param_names=tuple(f"u[{i}]" for i in range(groups))
            + ("b0", "b1", "log_sigma", "log_phi"),
            meta={"groups": groups, "per_group": per_group, "seed": seed},
        ),
        data,
    )


# -- funnel (negative control) ----------------------------------------------------


def funnel(dim=10):
    """Neal's funnel: v ~ N(0, 9), x_i | v ~ N(0, exp(v)).

    The negative control. Declared with no random effects: the joint
    mode sits deep in the neck where the local curvature is numerically
    degenerate, which the preconditioner-selection gate detects.
    """
    if dim < 2:
        raise ValueError("need dim >= 2")
    k = dim - 1
    const = -0.5 * dim * LOG2PI - math.log(3.0)

    def both(q):
        v, x = q[0], q[1:]
        ev = math.exp(-v)
        xx = float(x @ x)
        lp = const - v * v / 18.0 - 0.5 * k * v - 0.5 * xx * ev
        g = np.empty(dim)
        g[0] = -v / 9.0 - 0.5 * k + 0.5 * xx * ev
        g[1:] = -x * ev
        return lp, g

    return ModelSpec(
        name="funnel",
        dim=dim,
        random_idx=np.array([], dtype=np.int64),
        fixed_idx=np.arange(dim),
        log_density=lambda q: both(q)[0],
        gradient=lambda q: both(q)[1],
        log_density_gradient=both,
        init=np.zeros(dim),
        param_names=("v",) + tuple(f"x[{i}]" for i in range(k)),
        meta={"negative_control": True},
    )
