"""Numeric kernel backend selection.

The sparse triangular solves and the numeric Cholesky sit inside every
gradient evaluation of a sparse-preconditioned sampling run, so they are
provided twice: a compiled extension and a pure-python twin with the
same semantics. The compiled one is preferred at import time; ``BACKEND``
records which is active. ``benchmarks/bench_kernels.py`` compares the two.
"""

try:
    from . import _ckern as _impl

    BACKEND = "compiled"
except ImportError:  # pragma: no cover - depends on build environment
    from . import _pyref as _impl

    BACKEND = "python"

from . import _pyref

lsolve = _impl.lsolve
ltsolve = _impl.ltsolve
ltmul = _impl.ltmul
symm_matvec = _impl.symm_matvec
chol_numeric = _impl.chol_numeric

__all__ = [
    "BACKEND",
    "lsolve",
    "ltsolve",
    "ltmul",
    "symm_matvec",
    "chol_numeric",
    "_pyref",
    "_impl",
]
