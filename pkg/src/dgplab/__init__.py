"""Numerical laboratory for constrained deep Gaussian process priors.

Building blocks: covariance kernels for integrated-Brownian, Riemann-Liouville
and Matern layer families; grid samplers with value/derivative constraints;
deep composition with Lipschitz diagnostics; RKHS norms and constrained
minimal-norm problems; small-ball probability estimators (plain and
rare-event); concentration functions; posterior sampling for density
estimation and classification; contraction-rate studies.
"""

__version__ = "0.1.0"

from .grids import GridSpec, GridFunction
from .kernels import KernelSpec, GramMatrix, ibm_kernel, rl_kernel, matern_kernel, gram, fd_matrix

__all__ = [
    "GridSpec",
    "GridFunction",
    "KernelSpec",
    "GramMatrix",
    "ibm_kernel",
    "rl_kernel",
    "matern_kernel",
    "gram",
    "fd_matrix",
]
