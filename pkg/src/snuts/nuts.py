"""No-U-Turn sampler and the preconditioned sampling pipeline.

The transition uses multinomial selection across the doubling trajectory
with the generalized (momentum-sum) U-turn criterion, dual-averaging
step-size adaptation and, for the baseline configuration, windowed
diagonal mass adaptation. The pipeline runs: optimize, assemble the
joint precision, select a preconditioner, sample in the transformed
space, back-transform. Preconditioned runs use a short warmup with mass
adaptation disabled and chains initialized from precision draws; the
baseline uses long warmup, diagonal adaptation and uniform(-2, 2) inits.
"""

from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import (
    MaxIterations,
    NoInteriorMode,
    NonFiniteObjective,
    NotPositiveDefinite,
    SnutsError,
)
from .laplace import MarginalObjective, laplace_fit, marginal_model, precision_sample
from .models.base import ModelSpec
from .precondition import (
    DensePrecond,
    DiagonalPrecond,
    IdentityPrecond,
    Selection,
    SparsePrecond,
    build_auto,
    dense_cholesky,
    make_target,
    precision_to_cov,
)

__all__ = [
    "NutsConfig",
    "ChainResult",
    "RunResult",
    "leapfrog",
    "nuts_transition",
    "initial_stepsize",
    "DualAveraging",
    "adapt_mass_windows",
    "run_chain",
    "sample_snuts",
    "MODES",
]

MODES = ("auto", "diag", "dense", "sparse", "stan_default", "ela", "ela_nuts")


@dataclass(frozen=True)
class NutsConfig:
    """Sampler configuration. ``warmup`` and ``adapt_mass`` default to
    None and resolve per mode: 150 / off for preconditioned runs, 1000 /
    diagonal for the baseline."""

    warmup: Optional[int] = None
    iters: int = 1000
    chains: int = 4
    max_depth: int = 10
    target_accept: float = 0.8
    adapt_mass: Optional[str] = None  # "off" | "diagonal"
    adapt_stepsize: bool = True
    step_size: Optional[float] = None  # used when adapt_stepsize is False
    divergence_threshold: float = 1000.0
    seed: int = 0
    jobs: int = 1

    def resolve(self, baseline: bool) -> "NutsConfig":
        warmup = self.warmup if self.warmup is not None else (1000 if baseline else 150)
        adapt_mass = self.adapt_mass if self.adapt_mass is not None else (
            "diagonal" if baseline else "off"
        )
        cfg = replace(self, warmup=warmup, adapt_mass=adapt_mass)
        cfg.validate()
        return cfg

    def validate(self):
        if self.adapt_stepsize and self.warmup is not None and self.warmup < 20:
            raise ValueError("warmup must be >= 20 when adapting the step size")
        if not 1 <= self.max_depth <= 15:
            raise ValueError("max_depth must be in [1, 15]")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must be in (0, 1)")
        if self.adapt_mass not in (None, "off", "diagonal"):
            raise ValueError("adapt_mass must be 'off' or 'diagonal'")
        if not self.adapt_stepsize and self.step_size is None:
            raise ValueError("fixed step_size required when adapt_stepsize is False")


# -- integrator -----------------------------------------------------------------


def leapfrog(value_grad, q, p, g, eps, inv_mass=None):
    """One half-kick / drift / half-kick step; returns (q1, p1, f1, g1)
    so the gradient at the new point is reused."""
    p_half = p + (0.5 * eps) * g
    if inv_mass is None:
        q1 = q + eps * p_half
    else:
        q1 = q + eps * (inv_mass * p_half)
    f1, g1 = value_grad(q1)
    p1 = p_half + (0.5 * eps) * g1
    return q1, p1, f1, g1


def _kinetic(p, inv_mass):
    if inv_mass is None:
        return 0.5 * float(p @ p)
    return 0.5 * float(p @ (inv_mass * p))


def _logaddexp(a, b):
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    hi, lo = (a, b) if a > b else (b, a)
    return hi + math.log1p(math.exp(lo - hi))


# -- transition -----------------------------------------------------------------


class _Tree:
    """Mutable subtree accumulator (avoids large return tuples)."""

    __slots__ = (
        "q_minus", "p_minus", "g_minus", "q_plus", "p_plus", "g_plus",
        "q_prop", "f_prop", "g_prop", "energy_prop",
        "logw", "rho", "ok", "alpha_sum", "n_alpha", "n_leapfrog", "divergent",
    )


def _uturn(p_minus, p_plus, rho, inv_mass):
    """Generalized U-turn test on the trajectory's momentum sum."""
    if inv_mass is None:
        return float(p_minus @ rho) <= 0.0 or float(p_plus @ rho) <= 0.0
    return (
        float((inv_mass * p_minus) @ rho) <= 0.0
        or float((inv_mass * p_plus) @ rho) <= 0.0
    )


def _build_tree(value_grad, q, p, g, depth, direction, eps, inv_mass, h0, div_threshold, rng):
    if depth == 0:
        q1, p1, f1, g1 = leapfrog(value_grad, q, p, g, eps * direction, inv_mass)
        t = _Tree()
        t.q_minus = t.q_plus = t.q_prop = q1
        t.p_minus = t.p_plus = p1
        t.g_minus = t.g_plus = t.g_prop = g1
        t.f_prop = f1
        t.n_leapfrog = 1
        if math.isfinite(f1):
            h1 = -f1 + _kinetic(p1, inv_mass)
        else:
            h1 = math.inf
        t.energy_prop = h1
        dh = h1 - h0
        if not math.isfinite(dh):
            t.divergent = True
            t.logw = -math.inf
            t.alpha_sum = 0.0
        else:
            t.divergent = dh > div_threshold
            t.logw = -dh
            t.alpha_sum = math.exp(min(0.0, -dh))
        t.n_alpha = 1
        t.rho = p1
        t.ok = not t.divergent
        return t
    first = _build_tree(
        value_grad, q, p, g, depth - 1, direction, eps, inv_mass, h0, div_threshold, rng
    )
    if not first.ok:
        return first
    if direction > 0:
        second = _build_tree(
            value_grad, first.q_plus, first.p_plus, first.g_plus,
            depth - 1, direction, eps, inv_mass, h0, div_threshold, rng,
        )
        first.q_plus, first.p_plus, first.g_plus = second.q_plus, second.p_plus, second.g_plus
    else:
        second = _build_tree(
            value_grad, first.q_minus, first.p_minus, first.g_minus,
            depth - 1, direction, eps, inv_mass, h0, div_threshold, rng,
        )
        first.q_minus, first.p_minus, first.g_minus = second.q_minus, second.p_minus, second.g_minus
    first.n_leapfrog += second.n_leapfrog
    first.alpha_sum += second.alpha_sum
    first.n_alpha += second.n_alpha
    first.divergent = first.divergent or second.divergent
    logw_total = _logaddexp(first.logw, second.logw)
    if second.ok and logw_total > -math.inf:
        if math.log(rng.random()) < second.logw - logw_total:
            first.q_prop, first.f_prop, first.g_prop = second.q_prop, second.f_prop, second.g_prop
            first.energy_prop = second.energy_prop
    first.logw = logw_total
    first.rho = first.rho + second.rho
    first.ok = second.ok and not _uturn(first.p_minus, first.p_plus, first.rho, inv_mass)
    return first


def nuts_transition(value_grad, q, f, g, eps, rng, inv_mass=None, max_depth=10, div_threshold=1000.0):
    """One transition; returns (q1, f1, g1, stats dict)."""
    if inv_mass is None:
        p0 = rng.standard_normal(q.shape[0])
    else:
        p0 = rng.standard_normal(q.shape[0]) / np.sqrt(inv_mass)
    h0 = -f + _kinetic(p0, inv_mass)
    stats = {
        "accept_stat": 0.0,
        "n_leapfrog": 0,
        "depth": 0,
        "divergent": False,
        "energy": h0,
    }
    if not math.isfinite(h0):
        stats["divergent"] = True
        return q, f, g, stats
    q_minus = q_plus = q
    p_minus = p_plus = p0
    g_minus = g_plus = g
    rho = p0
    q_prop, f_prop, g_prop, energy_prop = q, f, g, h0
    logw = 0.0
    alpha_sum, n_alpha, n_leap = 0.0, 0, 0
    depth = 0
    while depth < max_depth:
        direction = 1 if rng.random() < 0.5 else -1
        if direction > 0:
            sub = _build_tree(
                value_grad, q_plus, p_plus, g_plus, depth, 1, eps, inv_mass, h0,
                div_threshold, rng,
            )
            q_plus, p_plus, g_plus = sub.q_plus, sub.p_plus, sub.g_plus
        else:
            sub = _build_tree(
                value_grad, q_minus, p_minus, g_minus, depth, -1, eps, inv_mass, h0,
                div_threshold, rng,
            )
            q_minus, p_minus, g_minus = sub.q_minus, sub.p_minus, sub.g_minus
        n_leap += sub.n_leapfrog
        alpha_sum += sub.alpha_sum
        n_alpha += sub.n_alpha
        if sub.divergent:
            stats["divergent"] = True
        if not sub.ok:
            break
        # biased progressive selection toward the new subtree
        if math.log(rng.random()) < sub.logw - logw:
            q_prop, f_prop, g_prop, energy_prop = sub.q_prop, sub.f_prop, sub.g_prop, sub.energy_prop
        logw = _logaddexp(logw, sub.logw)
        rho = rho + sub.rho
        depth += 1
        if _uturn(p_minus, p_plus, rho, inv_mass):
            break
    stats["accept_stat"] = alpha_sum / max(1, n_alpha)
    stats["n_leapfrog"] = n_leap
    stats["depth"] = depth
    stats["energy"] = energy_prop
    return q_prop, f_prop, g_prop, stats


# -- adaptation -----------------------------------------------------------------


def initial_stepsize(value_grad, q0, rng, inv_mass=None, target=0.5):
    """Double/halve a unit step until the one-step acceptance crosses the
    target within a factor-two bracket."""
    f0, g0 = value_grad(q0)
    if not math.isfinite(f0):
        raise NonFiniteObjective("density non-finite at the initial point")
    eps = 1.0
    if inv_mass is None:
        p0 = rng.standard_normal(q0.shape[0])
    else:
        p0 = rng.standard_normal(q0.shape[0]) / np.sqrt(inv_mass)
    h0 = -f0 + _kinetic(p0, inv_mass)

    def log_accept(eps):
        q1, p1, f1, g1 = leapfrog(value_grad, q0, p0, g0, eps, inv_mass)
        if not math.isfinite(f1):
            return -math.inf
        return -(-f1 + _kinetic(p1, inv_mass)) + h0

    la = log_accept(eps)
    direction = 1.0 if la > math.log(target) else -1.0
    for _ in range(60):
        eps_next = eps * (2.0**direction)
        la = log_accept(eps_next)
        crossed = (la <= math.log(target)) if direction > 0 else (la >= math.log(target))
        if crossed or not (1e-10 < eps_next < 1e6):
            if direction < 0:
                eps = eps_next  # keep the acceptable side of the bracket
            break
        eps = eps_next
    return eps


class DualAveraging:
    """Nesterov dual averaging on log step size (gamma 0.05, t0 10,
    kappa 0.75, mu = log(10 eps0))."""

    def __init__(self, eps0, target=0.8, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.log_eps = math.log(eps0)
        self.log_eps_bar = math.log(eps0)
        self.h_bar = 0.0
        self.t = 0

    def update(self, accept_stat):
        self.t += 1
        eta = 1.0 / (self.t + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat)
        self.log_eps = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        w = self.t ** (-self.kappa)
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar
        return math.exp(self.log_eps)

    def final(self):
        return math.exp(self.log_eps_bar)


def adapt_mass_windows(warmup, init_buffer=75, base_window=25, term_buffer=50):
    """Expanding-window schedule for diagonal mass adaptation; returns a
    list of (start, end) windows whose end triggers an update."""
    if warmup < init_buffer + base_window + term_buffer:
        warnings.warn("warmup too short for the standard window schedule; using one window")
        start = max(1, int(0.15 * warmup))
        end = max(start + 1, warmup - max(1, int(0.1 * warmup)))
        return [(start, end)]
    windows = []
    start = init_buffer
    end_middle = warmup - term_buffer
    width = base_window
    while start + width < end_middle:
        next_width = 2 * width
        if start + width + next_width > end_middle:
            windows.append((start, end_middle))
            return windows
        windows.append((start, start + width))
        start += width
        width = next_width
    windows.append((start, end_middle))
    return windows


class _Welford:
    def __init__(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def variance(self):
        if self.n < 2:
            return np.ones_like(self.mean)
        var = self.m2 / (self.n - 1)
        # regularize toward unit scale
        w = self.n / (self.n + 5.0)
        return w * var + (1.0 - w) * 1.0


# -- chains ----------------------------------------------------------------------


@dataclass
class ChainResult:
    draws_qprime: np.ndarray  # (iters, dim), transformed space
    draws_q: np.ndarray  # (iters, dim), back-transformed
    lp: np.ndarray
    accept_stat: np.ndarray
    leapfrog: np.ndarray
    depth: np.ndarray
    divergent: np.ndarray
    energy: np.ndarray
    step_size: float
    inv_mass: Optional[np.ndarray]
    warmup_time: float
    sampling_time: float
    warmup_divergences: int
    warmup_leapfrog: int


def run_chain(value_grad, q0, cfg: NutsConfig, rng) -> ChainResult:
    """Warmup (adaptation) then sampling for one chain in q' space.
    ``draws_q`` is filled by the caller after back-transformation."""
    dim = q0.shape[0]
    inv_mass = None if cfg.adapt_mass == "off" else np.ones(dim)
    f, g = value_grad(q0)
    if not math.isfinite(f):
        raise NonFiniteObjective("density non-finite at a chain's initial point")
    q = np.asarray(q0, dtype=np.float64)

    t0 = time.perf_counter()
    if cfg.adapt_stepsize:
        eps = initial_stepsize(value_grad, q, rng, inv_mass)
        da = DualAveraging(eps, target=cfg.target_accept)
    else:
        eps = float(cfg.step_size)
        da = None
    windows = (
        adapt_mass_windows(cfg.warmup) if cfg.adapt_mass == "diagonal" else []
    )
    window_ends = {end for _, end in windows}
    welford = _Welford(dim)
    warmup_div = 0
    warmup_leap = 0
    for it in range(cfg.warmup):
        q, f, g, stats = nuts_transition(
            value_grad, q, f, g, eps, rng, inv_mass, cfg.max_depth, cfg.divergence_threshold
        )
        warmup_div += int(stats["divergent"])
        warmup_leap += stats["n_leapfrog"]
        if da is not None:
            eps = da.update(stats["accept_stat"])
        in_window = any(a <= it < b for a, b in windows)
        if in_window:
            welford.add(q)
        if (it + 1) in window_ends:
            inv_mass = welford.variance()
            welford = _Welford(dim)
            if da is not None:
                eps = initial_stepsize(value_grad, q, rng, inv_mass)
                da = DualAveraging(eps, target=cfg.target_accept)
    if da is not None:
        eps = da.final()
    warmup_time = time.perf_counter() - t0

    draws = np.empty((cfg.iters, dim))
    lp = np.empty(cfg.iters)
    accept = np.empty(cfg.iters)
    leap = np.zeros(cfg.iters, dtype=np.int64)
    depth = np.zeros(cfg.iters, dtype=np.int64)
    div = np.zeros(cfg.iters, dtype=bool)
    energy = np.empty(cfg.iters)
    t1 = time.perf_counter()
    for it in range(cfg.iters):
        q, f, g, stats = nuts_transition(
            value_grad, q, f, g, eps, rng, inv_mass, cfg.max_depth, cfg.divergence_threshold
        )
        draws[it] = q
        lp[it] = f
        accept[it] = stats["accept_stat"]
        leap[it] = stats["n_leapfrog"]
        depth[it] = stats["depth"]
        div[it] = stats["divergent"]
        energy[it] = stats["energy"]
    sampling_time = time.perf_counter() - t1
    return ChainResult(
        draws_qprime=draws,
        draws_q=draws,
        lp=lp,
        accept_stat=accept,
        leapfrog=leap,
        depth=depth,
        divergent=div,
        energy=energy,
        step_size=eps,
        inv_mass=None if inv_mass is None else inv_mass.copy(),
        warmup_time=warmup_time,
        sampling_time=sampling_time,
        warmup_divergences=warmup_div,
        warmup_leapfrog=warmup_leap,
    )


# -- pipeline ----------------------------------------------------------------------


@dataclass
class RunResult:
    model_name: str
    mode: str
    resolved_mode: str
    preconditioner: str
    param_names: tuple
    chains: list
    timings: dict
    trace: list
    config: NutsConfig
    seed: int
    fallback: bool = False
    approx_status: Optional[dict] = None
    condition_report: Optional[dict] = None

    @property
    def n_chains(self):
        return len(self.chains)

    @property
    def dim(self):
        return self.chains[0].draws_q.shape[1]

    def draws(self):
        """(chains, iters, dim) in the original space."""
        return np.stack([c.draws_q for c in self.chains])

    def lp(self):
        return np.stack([c.lp for c in self.chains])

    def total_time(self):
        """Summed per-chain warmup+sampling time plus pipeline overhead."""
        chains = sum(c.warmup_time + c.sampling_time for c in self.chains)
        return chains + self.overhead_time()

    def overhead_time(self):
        keys = ("optimize", "assemble_q", "factorize", "precondition", "marginalize")
        return sum(self.timings.get(k, 0.0) for k in keys)

    def mean_leapfrog(self):
        return float(np.mean(np.concatenate([c.leapfrog for c in self.chains])))

    def divergences(self):
        return int(sum(int(c.divergent.sum()) for c in self.chains))

    def export_draws_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "iteration", *self.param_names, "lp__"])
            for c_idx, c in enumerate(self.chains):
                for it in range(c.draws_q.shape[0]):
                    w.writerow(
                        [c_idx, it]
                        + [repr(v) for v in c.draws_q[it]]
                        + [repr(float(c.lp[it]))]
                    )

    def export_stats_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "iteration", "leapfrog", "depth", "divergent", "energy", "accept"])
            for c_idx, c in enumerate(self.chains):
                for it in range(c.lp.shape[0]):
                    w.writerow(
                        [
                            c_idx,
                            it,
                            int(c.leapfrog[it]),
                            int(c.depth[it]),
                            int(c.divergent[it]),
                            repr(float(c.energy[it])),
                            repr(float(c.accept_stat[it])),
                        ]
                    )

    def meta_dict(self):
        from . import __version__

        cfg = self.config
        return {
            "library_version": __version__,
            "model": self.model_name,
            "mode": self.mode,
            "resolved_mode": self.resolved_mode,
            "preconditioner": self.preconditioner,
            "fallback": self.fallback,
            "seed": self.seed,
            "nuts": {
                "warmup": cfg.warmup,
                "iters": cfg.iters,
                "chains": cfg.chains,
                "max_depth": cfg.max_depth,
                "target_accept": cfg.target_accept,
                "adapt_mass": cfg.adapt_mass,
                "adapt_stepsize": cfg.adapt_stepsize,
                "step_size": cfg.step_size,
                "divergence_threshold": cfg.divergence_threshold,
            },
            "timings": self.timings,
            "selection_trace": self.trace,
            "approx_status": self.approx_status,
            "condition_report": self.condition_report,
            "divergences": self.divergences(),
            "mean_leapfrog": self.mean_leapfrog(),
            "total_time": self.total_time(),
        }


class LaplaceFailure(SnutsError):
    """The requested mode needs a posterior approximation that could not
    be built."""


_LAPLACE_ERRORS = (NoInteriorMode, MaxIterations, NonFiniteObjective, NotPositiveDefinite)


def _forced_selection(approx, kind) -> Selection:
    if kind == "sparse":
        return Selection(SparsePrecond(approx.factor), None, [{"step": "forced", "action": "sparse"}])
    cov = precision_to_cov(approx.Q)
    if kind == "diag":
        pre = DiagonalPrecond(np.sqrt(np.diag(cov)))
    elif kind == "dense":
        pre = DensePrecond(dense_cholesky(cov))
    else:
        raise ValueError(f"unknown preconditioner kind {kind}")
    return Selection(pre, None, [{"step": "forced", "action": kind}])


def _run_chains(target, inits, cfg, chain_seeds):
    results = [None] * cfg.chains
    if cfg.jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        def work(c):
            rng = np.random.Generator(np.random.PCG64(chain_seeds[c]))
            return run_chain(target, inits[c], cfg, rng)

        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(work, range(cfg.chains)))
    else:
        for c in range(cfg.chains):
            rng = np.random.Generator(np.random.PCG64(chain_seeds[c]))
            results[c] = run_chain(target, inits[c], cfg, rng)
    return results


def sample_snuts(m: ModelSpec, cfg: NutsConfig = None, mode: str = "auto") -> RunResult:
    """End-to-end run of one model under one mode.

    auto/diag/dense/sparse: preconditioned sampling from the Laplace
    approximation (auto may fall back to the baseline when no usable
    approximation exists — loudly, in the trace). stan_default: baseline
    NUTS. ela: preconditioned sampling of the Laplace-marginalized
    posterior; ela_nuts: baseline sampling of it.
    """
    cfg = cfg or NutsConfig()
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")

    if mode in ("ela", "ela_nuts"):
        if m.n_random == 0:
            raise LaplaceFailure("ela modes need a model with random effects")
        t0 = time.perf_counter()
        mo = MarginalObjective(m)
        marg = marginal_model(mo)
        build_time = time.perf_counter() - t0
        inner_mode = "auto" if mode == "ela" else "stan_default"
        result = sample_snuts(marg, cfg, inner_mode)
        result.model_name = m.name
        result.mode = mode
        result.resolved_mode = mode
        result.timings["marginalize"] = build_time
        result.timings["optimize"] = result.timings.get("optimize", 0.0) + build_time
        return result

    timings = {}
    trace = []
    approx = None
    selection = None
    fallback = False

    if mode == "stan_default":
        baseline = True
        selection = Selection(IdentityPrecond(m.dim), None, [{"step": "baseline"}])
    else:
        t0 = time.perf_counter()
        try:
            approx = laplace_fit(m)
        except _LAPLACE_ERRORS as exc:
            approx = None
            trace.append({"step": "laplace_failed", "error": f"{type(exc).__name__}: {exc}"})
        timings["optimize"] = time.perf_counter() - t0
        if approx is not None:
            timings.update(
                {
                    "optimize": approx.timings.get("optimize", timings["optimize"]),
                    "assemble_q": approx.timings.get("assemble_q", 0.0),
                    "factorize": approx.timings.get("factorize", 0.0),
                }
            )
        if approx is None and mode != "auto":
            raise LaplaceFailure(f"mode {mode!r} needs a posterior approximation; {trace[-1]['error']}")
        t0 = time.perf_counter()
        if mode == "auto":
            selection = build_auto(approx, m, seed=cfg.seed)
            fallback = selection.use_stan_adaptation
        else:
            selection = _forced_selection(approx, mode)
        timings["precondition"] = time.perf_counter() - t0
        trace.extend(selection.trace)
        baseline = fallback

    resolved = cfg.resolve(baseline)
    pre = selection.preconditioner
    target = make_target(pre, m)

    ss = np.random.SeedSequence(resolved.seed)
    init_ss, *chain_ss = ss.spawn(resolved.chains + 1)
    init_rng = np.random.Generator(np.random.PCG64(init_ss))
    if baseline or approx is None:
        inits_q = init_rng.uniform(-2.0, 2.0, (resolved.chains, m.dim))
    else:
        inits_q = precision_sample(approx, resolved.chains, seed=init_rng)
    inits = [pre.forward(inits_q[c]) for c in range(resolved.chains)]

    chains = _run_chains(target, inits, resolved, chain_ss)
    for c in chains:
        if pre.kind == "identity":
            c.draws_q = c.draws_qprime
        else:
            c.draws_q = np.stack([pre.backward(row) for row in c.draws_qprime])

    if mode == "stan_default":
        resolved_mode = "stan_default"
    elif fallback:
        resolved_mode = "stan_default"
    else:
        resolved_mode = {"identity": "stan_default", "diag": "diag", "dense": "dense", "sparse": "sparse"}[pre.kind]

    return RunResult(
        model_name=m.name,
        mode=mode,
        resolved_mode=resolved_mode,
        preconditioner=pre.kind,
        param_names=m.param_names,
        chains=chains,
        timings=timings,
        trace=trace,
        config=resolved,
        seed=resolved.seed,
        fallback=fallback,
        approx_status=approx.status_dict() if approx is not None else None,
        condition_report=selection.report.to_dict() if selection.report else None,
    )
