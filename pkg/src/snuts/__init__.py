"""Sparse-precision preconditioned No-U-Turn sampling.

The pipeline: find the mode of the Laplace-approximated marginal
posterior, assemble the sparse joint precision matrix there, use its
(permuted) Cholesky factor to decorrelate and descale the posterior, and
run NUTS in the transformed space with a short, adaptation-free warmup.
"""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
__all__ = ["KERNEL_BACKEND", "__version__"]
