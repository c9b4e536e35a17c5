"""Model abstraction: log posterior, analytic gradient, declared sparsity."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..sparse import SparseSymMatrix

__all__ = ["ModelSpec", "DatasetSpec", "check_gradient"]


@dataclass(frozen=True)
class ModelSpec:
    """An unnormalized log posterior with its analytic gradient.

    ``random_idx``/``fixed_idx`` partition the parameter vector into
    random effects u and fixed effects theta. ``hessian_uu`` returns the
    curvature (negative log density Hessian) over u with a pattern that
    is constant across evaluation points; ``cross_hessian`` optionally
    returns the dense (n_u, n_fixed) curvature block. Evaluation
    functions are pure and safe to call concurrently.
    """

    name: str
    dim: int
    random_idx: np.ndarray
    fixed_idx: np.ndarray
    log_density: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    init: np.ndarray
    param_names: tuple
    hessian_uu: Optional[Callable[[np.ndarray], SparseSymMatrix]] = None
    cross_hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    log_density_gradient: Optional[Callable[[np.ndarray], tuple]] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ri = np.asarray(self.random_idx, dtype=np.int64)
        fi = np.asarray(self.fixed_idx, dtype=np.int64)
        object.__setattr__(self, "random_idx", ri)
        object.__setattr__(self, "fixed_idx", fi)
        object.__setattr__(self, "init", np.asarray(self.init, dtype=np.float64))
        both = np.sort(np.concatenate([ri, fi]))
        if both.shape[0] != self.dim or np.any(both != np.arange(self.dim)):
            raise ValueError("random/fixed indices must partition 0..dim-1")

    @property
    def n_random(self):
        return int(self.random_idx.shape[0])

    @property
    def n_fixed(self):
        return int(self.fixed_idx.shape[0])

    def value_and_grad(self, q):
        if self.log_density_gradient is not None:
            return self.log_density_gradient(q)
        return self.log_density(q), self.gradient(q)

    def join(self, u, theta):
        q = np.empty(self.dim)
        q[self.random_idx] = u
        q[self.fixed_idx] = theta
        return q

    def split(self, q):
        q = np.asarray(q)
        return q[self.random_idx], q[self.fixed_idx]


@dataclass(frozen=True)
class DatasetSpec:
    """Simulated data plus everything needed to regenerate it."""

    seed: int
    sizes: dict
    true_params: dict
    data: dict  # column name -> 1d array, equal lengths

    def n_obs(self):
        return len(next(iter(self.data.values())))

    def export_csv(self, path):
        names = list(self.data.keys())
        cols = [self.data[k] for k in names]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for row in zip(*cols):
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])

    @classmethod
    def import_csv(cls, path, seed=0, sizes=None, true_params=None):
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            names = next(r)
            rows = [row for row in r]
        data = {}
        for k, name in enumerate(names):
            col = np.array([float(row[k]) for row in rows])
            if np.all(col == np.round(col)):
                col = col.astype(np.int64)
            data[name] = col
        return cls(seed=seed, sizes=sizes or {}, true_params=true_params or {}, data=data)


def check_gradient(m: ModelSpec, q, h=1e-5):
    """Max abs discrepancy between the analytic gradient and central
    finite differences of the log density."""
    q = np.asarray(q, dtype=np.float64)
    g = np.asarray(m.gradient(q))
    worst = 0.0
    for i in range(m.dim):
        e = np.zeros(m.dim)
        e[i] = h
        fp = m.log_density(q + e)
        fm = m.log_density(q - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite density in finite-difference stencil at coordinate {i}")
        worst = max(worst, abs((fp - fm) / (2 * h) - g[i]))
    return worst
