"""Covariance functions for the three layer families and grid operators.

Families
--------
* integrated Brownian motion of order N on [-1,1]: the N-fold antiderivative
  of a Brownian motion started at time 0 (input shifted to [0,2]) plus
  independent standard-Gaussian polynomial terms of degrees 0..N,
* Riemann-Liouville of index alpha > 0: fractional integral
  R(t) = int_0^t (t-s)^(alpha-1/2) dB(s) plus polynomial terms of degrees
  0..floor(alpha)+1,
* Matern with smoothness alpha in any input dimension, normalized to unit
  variance by default.

Also provides Gram-matrix assembly and finite-difference derivative
operators on uniform grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.integrate
import scipy.sparse
import scipy.special
from scipy.spatial.distance import cdist

from .grids import GridSpec

_GL64_NODES, _GL64_WEIGHTS = np.polynomial.legendre.leggauss(64)
# map from [-1,1] to [0,1]
_GL64_X01 = 0.5 * (_GL64_NODES + 1.0)
_GL64_W01 = 0.5 * _GL64_WEIGHTS


@dataclass(frozen=True)
class KernelSpec:
    """One layer-component covariance: family plus its smoothness parameter.

    family is one of "ibm" (param = integer order N >= 0), "rl"
    (param = alpha > 0) or "matern" (param = alpha > 0).  The ibm and rl
    families are one-dimensional; matern accepts any input_dim.
    unit_variance only matters for matern and rescales k so k(u,u) = 1.
    """

    family: str
    param: float
    input_dim: int = 1
    unit_variance: bool = True

    def __post_init__(self):
        if self.family not in ("ibm", "rl", "matern"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if self.family == "ibm":
            if self.param < 0 or self.param != int(self.param):
                raise ValueError("ibm order N must be a nonnegative integer")
            if self.input_dim != 1:
                raise ValueError("ibm kernels are one-dimensional")
        elif self.family == "rl":
            if self.param <= 0:
                raise ValueError("rl alpha must be positive")
            if self.input_dim != 1:
                raise ValueError("rl kernels are one-dimensional")
        else:
            if self.param <= 0:
                raise ValueError("matern alpha must be positive")

    @classmethod
    def ibm(cls, N: int) -> "KernelSpec":
        return cls("ibm", int(N), 1)

    @classmethod
    def rl(cls, alpha: float) -> "KernelSpec":
        return cls("rl", float(alpha), 1)

    @classmethod
    def matern(cls, alpha: float, input_dim: int = 1, unit_variance: bool = True) -> "KernelSpec":
        return cls("matern", float(alpha), input_dim, unit_variance)

    def matrix(self, U: np.ndarray, V: np.ndarray) -> np.ndarray:
        """Covariance matrix between two point sets of shape (n, input_dim)."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        V = np.atleast_2d(np.asarray(V, dtype=float))
        if U.shape[1] != self.input_dim or V.shape[1] != self.input_dim:
            raise ValueError("point dimension does not match kernel input_dim")
        if self.family == "ibm":
            return _ibm_matrix(int(self.param), U[:, 0], V[:, 0])
        if self.family == "rl":
            return _rl_matrix(self.param, U[:, 0], V[:, 0])
        return _matern_matrix(self.param, self.input_dim, U, V, self.unit_variance)


@dataclass
class GramMatrix:
    """Covariance matrix of a kernel at a finite point set (plus diagonal jitter)."""

    points: np.ndarray
    entries: np.ndarray = field(repr=False)
    jitter: float = 0.0
    grid: GridSpec | None = None  # set when assembled on a full grid

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        n = self.entries.shape[0]
        if self.entries.shape != (n, n):
            raise ValueError("gram entries must be square")
        if not np.allclose(self.entries, self.entries.T, atol=1e-12, rtol=0.0):
            raise ValueError("gram entries must be symmetric to 1e-12")
        if self.jitter < 0:
            raise ValueError("jitter must be nonnegative")

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def with_jitter(self) -> np.ndarray:
        if self.jitter == 0.0:
            return self.entries
        return self.entries + self.jitter * np.eye(self.n)


# ---------------------------------------------------------------------------
# integrated Brownian motion
# ---------------------------------------------------------------------------


def ibm_kernel(N: int, s, t):
    """Covariance of the order-N integrated Brownian layer process at (s, t).

    Equals sum_{l=0}^{N} (s+1)^l (t+1)^l / (l!)^2
         + int_0^{min(s+1,t+1)} (s+1-u)^N (t+1-u)^N / (N!)^2 du.
    Accepts scalars or broadcastable arrays in [-1,1].
    """
    N = int(N)
    if N < 0:
        raise ValueError("N must be a nonnegative integer")
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    _check_interval(s)
    _check_interval(t)
    out = _ibm_matrix(N, np.atleast_1d(s).ravel(), np.atleast_1d(t).ravel(), pairwise=False)
    return float(out[0]) if s.ndim == 0 and t.ndim == 0 else out.reshape(np.broadcast(s, t).shape)


def _ibm_poly(N: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros(np.broadcast(a, b).shape)
    for ell in range(N + 1):
        out = out + (a**ell) * (b**ell) / math.factorial(ell) ** 2
    return out


def _ibm_matrix(N: int, s: np.ndarray, t: np.ndarray, pairwise: bool = True) -> np.ndarray:
    """IBM covariance; pairwise=True gives the (len(s), len(t)) matrix."""
    a = s + 1.0
    b = t + 1.0
    if pairwise:
        a = a[:, None]
        b = b[None, :]
    m = np.minimum(a, b)
    # Gauss-Legendre on [0, m]; integrand is a polynomial of degree 2N,
    # so 64 nodes are exact for N <= 63.
    u = m[..., None] * _GL64_X01
    integrand = ((a[..., None] - u) ** N) * ((b[..., None] - u) ** N)
    integral = m * (integrand @ _GL64_W01) / math.factorial(N) ** 2
    return _ibm_poly(N, a, b) + integral


def ibm_kernel_closed_form(N: int, s: float, t: float) -> float:
    """Binomial-expansion closed form of the IBM covariance (test oracle)."""
    a, b = s + 1.0, t + 1.0
    m = min(a, b)
    integ = 0.0
    for i in range(N + 1):
        for j in range(N + 1):
            integ += (
                math.comb(N, i)
                * math.comb(N, j)
                * a ** (N - i)
                * b ** (N - j)
                * (-1.0) ** (i + j)
                * m ** (i + j + 1)
                / (i + j + 1)
            )
    integ /= math.factorial(N) ** 2
    return _ibm_poly(N, np.asarray(a), np.asarray(b)).item() + integ


# ---------------------------------------------------------------------------
# Riemann-Liouville
# ---------------------------------------------------------------------------


def rl_kernel(alpha: float, s: float, t: float) -> float:
    """Covariance of the Riemann-Liouville layer process with index alpha.

    Equals sum_{l=0}^{floor(alpha)+1} (s+1)^l (t+1)^l / (l!)^2
         + int_0^{min(s+1,t+1)} (s+1-u)^(alpha-1/2) (t+1-u)^(alpha-1/2) du.
    The integrand has an integrable endpoint singularity when alpha < 1/2;
    it is removed by the substitution u = min(s+1,t+1) * (1 - w^2).
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    s = float(s)
    t = float(t)
    _check_interval(np.asarray(s))
    _check_interval(np.asarray(t))
    a, b = s + 1.0, t + 1.0
    deg = int(math.floor(alpha)) + 1
    poly = _ibm_poly(deg, np.asarray(a), np.asarray(b)).item()
    return poly + _rl_integral(alpha, a, b)


def _rl_integral(alpha: float, a: float, b: float) -> float:
    p = alpha - 0.5
    lo, hi = (a, b) if a <= b else (b, a)
    if lo == 0.0:
        return 0.0
    if lo == hi:
        # int_0^m (m-u)^(2p) du
        return lo ** (2.0 * alpha) / (2.0 * alpha)
    # u = lo * (1 - w^2): the (lo - u)^p factor becomes (lo w^2)^p,
    # smooth after multiplying by the Jacobian 2*lo*w (w^(2 alpha) overall).
    def f(w):
        return 2.0 * lo * w * (lo * w * w) ** p * (hi - lo + lo * w * w) ** p

    val, _ = scipy.integrate.quad(f, 0.0, 1.0, epsabs=1e-13, epsrel=1e-11, limit=200)
    return val


def _rl_matrix(alpha: float, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.empty((s.size, t.size))
    same = s.size == t.size and np.array_equal(s, t)
    for i in range(s.size):
        j0 = i if same else 0
        for j in range(j0, t.size):
            out[i, j] = rl_kernel(alpha, s[i], t[j])
            if same:
                out[j, i] = out[i, j]
    return out


# ---------------------------------------------------------------------------
# Matern
# ---------------------------------------------------------------------------


def matern_kernel(alpha: float, d: int, u, v, unit_variance: bool = True):
    """Matern covariance with smoothness alpha whose spectral density is
    proportional to (1 + |lambda|^2)^(-(alpha + d/2)).

    With unit_variance the kernel is scaled so k(u,u) = 1, i.e.
    k(r) = 2^(1-alpha)/Gamma(alpha) * r^alpha * K_alpha(r) with r = |u-v|.
    Otherwise the variance equals the spectral-density mass
    pi^(d/2) Gamma(alpha) / Gamma(alpha + d/2).
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    u = np.atleast_2d(np.asarray(u, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if u.shape[-1] != d or v.shape[-1] != d:
        raise ValueError("points do not have dimension d")
    r = np.linalg.norm(u - v, axis=-1)
    out = _matern_profile(alpha, r)
    if not unit_variance:
        out = out * matern_variance(alpha, d)
    return float(out[0]) if out.size == 1 else out


def matern_variance(alpha: float, d: int) -> float:
    """Integral of (1+|lambda|^2)^(-(alpha+d/2)) over R^d."""
    return math.pi ** (d / 2.0) * math.gamma(alpha) / math.gamma(alpha + d / 2.0)


def _matern_profile(alpha: float, r: np.ndarray) -> np.ndarray:
    """Unit-variance Matern correlation as a function of distance."""
    r = np.asarray(r, dtype=float)
    out = np.ones_like(r)
    pos = r > 0
    if np.any(pos):
        rp = r[pos]
        # kve = exp(r) * K_alpha(r) avoids underflow at large r
        out[pos] = (
            2.0 ** (1.0 - alpha)
            / math.gamma(alpha)
            * rp**alpha
            * scipy.special.kve(alpha, rp)
            * np.exp(-rp)
        )
    return out


def _matern_matrix(alpha, d, U, V, unit_variance):
    R = cdist(U, V)
    out = _matern_profile(alpha, R)
    if U.shape == V.shape and np.array_equal(U, V):
        out = 0.5 * (out + out.T)
    if not unit_variance:
        out = out * matern_variance(alpha, d)
    return out


# ---------------------------------------------------------------------------
# Gram assembly and finite differences
# ---------------------------------------------------------------------------


def gram(kernel: KernelSpec, points: np.ndarray, jitter: float = 0.0) -> GramMatrix:
    """Assemble the covariance matrix of `kernel` at `points` in [-1,1]^dim."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.ndim != 2 or pts.shape[1] != kernel.input_dim:
        raise ValueError(
            f"points of dimension {pts.shape[-1]} do not match kernel input_dim {kernel.input_dim}"
        )
    _check_interval(pts)
    entries = kernel.matrix(pts, pts)
    entries = 0.5 * (entries + entries.T)
    return GramMatrix(points=pts, entries=entries, jitter=jitter)


def gram_on_grid(kernel: KernelSpec, grid: GridSpec, jitter: float = 0.0) -> GramMatrix:
    if grid.dim != kernel.input_dim:
        raise ValueError("grid dimension does not match kernel input_dim")
    out = gram(kernel, grid.points(), jitter=jitter)
    out.grid = grid
    return out


def fd_matrix(grid: GridSpec, axis: int = 0) -> scipy.sparse.csr_matrix:
    """Finite-difference d/dx_axis on row-major grid values.

    Central differences in the interior, second-order one-sided stencils at
    the boundary faces (this is why grids need >= 3 points per axis); exact
    on affine functions.
    """
    if not 0 <= axis < grid.dim:
        raise ValueError(f"axis {axis} out of range for {grid.dim}-dimensional grid")
    m = grid.points_per_axis
    h = grid.mesh
    D1 = scipy.sparse.lil_matrix((m, m))
    D1[0, 0], D1[0, 1], D1[0, 2] = -1.5 / h, 2.0 / h, -0.5 / h
    D1[m - 1, m - 3], D1[m - 1, m - 2], D1[m - 1, m - 1] = 0.5 / h, -2.0 / h, 1.5 / h
    for i in range(1, m - 1):
        D1[i, i - 1] = -0.5 / h
        D1[i, i + 1] = 0.5 / h
    D1 = D1.tocsr()
    if grid.dim == 1:
        return D1
    ops = [scipy.sparse.identity(m, format="csr")] * grid.dim
    ops[axis] = D1
    out = ops[0]
    for op in ops[1:]:
        out = scipy.sparse.kron(out, op, format="csr")
    return out


def _check_interval(x: np.ndarray) -> None:
    if np.any(x < -1.0) or np.any(x > 1.0):
        raise ValueError("evaluation points must lie in [-1,1]^dim")
