"""Model abstraction and the zoo of benchmark targets."""

from .base import DatasetSpec, ModelSpec, check_gradient
from .zoo import (
    bivariate_normal,
    correlated_regression,
    eight_schools_nc,
    funnel,
    gmrf_poisson_lattice,
    lg_random_intercept,
    nb_glmm,
)

# name -> builder; builders return either a ModelSpec or (ModelSpec, DatasetSpec)
REGISTRY = {
    "bivariate_normal": bivariate_normal,
    "correlated_regression": correlated_regression,
    "eight_schools_nc": eight_schools_nc,
    "lg_random_intercept": lg_random_intercept,
    "gmrf_poisson_lattice": gmrf_poisson_lattice,
    "nb_glmm": nb_glmm,
    "funnel": funnel,
}


def build_model(name, **params):
    """Instantiate a registry model; returns (ModelSpec, DatasetSpec | None)."""
    if name not in REGISTRY:
        raise KeyError(f"unknown model {name!r}; known: {sorted(REGISTRY)}")
    out = REGISTRY[name](**params)
    if isinstance(out, tuple):
        return out
    return out, None


__all__ = [
    "ModelSpec",
    "DatasetSpec",
    "check_gradient",
    "REGISTRY",
    "build_model",
    "bivariate_normal",
    "correlated_regression",
    "eight_schools_nc",
    "lg_random_intercept",
    "gmrf_poisson_lattice",
    "nb_glmm",
    "funnel",
]
