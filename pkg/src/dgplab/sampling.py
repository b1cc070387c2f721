"""Grid sampling of layer processes and rejection sampling under constraints.

Layer components are sampled either from the Cholesky factor of their Gram
matrix or by direct construction (Brownian increments plus repeated
trapezoid integration for the integrated-Brownian family, a discretized
fractional stochastic integral for Riemann-Liouville).  Constraints are
checked on the grid: values against the bound 1, derivatives against the
per-axis bounds via the finite-difference operators.

Seeding: replicate streams are derived with the counter-based scheme
rng_from(seed, *path) = default_rng(SeedSequence(seed, spawn_key=path)),
so any (seed, path) pair names one reproducible stream independently of
scheduling order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.integrate

from .grids import GridFunction, GridSpec
from .kernels import GramMatrix, KernelSpec, fd_matrix, gram_on_grid
from .linalg import safe_cholesky


def rng_from(seed: int, *path: int) -> np.random.Generator:
    """Deterministic child generator for a replicate path under a root seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(path)))


@lru_cache(maxsize=128)
def _fd(grid: GridSpec, axis: int):
    return fd_matrix(grid, axis)


# ---------------------------------------------------------------------------
# layer specification and constraint checking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the composition: d_in -> d_out with per-component kernels.

    value_bound_active enforces sup |values| <= 1 (layers 1..H-1);
    deriv_bounds is a (d_out, d_in) array of positive bounds K on the
    partial derivatives (layers 2..H) or None when inactive.
    """

    d_in: int
    d_out: int
    kernels: tuple[KernelSpec, ...]
    grid: GridSpec
    value_bound_active: bool = True
    deriv_bounds: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        if self.d_in < 1 or self.d_out < 1:
            raise ValueError("layer dimensions must be positive")
        if len(self.kernels) != self.d_out:
            raise ValueError("need one kernel per output component")
        for k in self.kernels:
            if k.input_dim != self.d_in:
                raise ValueError("kernel input_dim does not match layer d_in")
        if self.grid.dim != self.d_in:
            raise ValueError("layer grid dimension does not match d_in")
        if self.deriv_bounds is not None:
            arr = np.asarray(self.deriv_bounds, dtype=float)
            if arr.shape != (self.d_out, self.d_in):
                raise ValueError("deriv_bounds must have shape (d_out, d_in)")
            if np.any(arr <= 0):
                raise ValueError("derivative bounds must be positive")

    def deriv_bound_array(self) -> np.ndarray | None:
        if self.deriv_bounds is None:
            return None
        return np.asarray(self.deriv_bounds, dtype=float)


@dataclass
class ConstraintViolation:
    kind: str  # "value" or "derivative"
    axis: int | None
    node: int
    observed: float
    bound: float


@dataclass
class ConstraintReport:
    passed: bool
    violations: list[ConstraintViolation] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.passed


def check_constraints(fn: GridFunction, spec: LayerSpec, component: int) -> ConstraintReport:
    """Grid check of the value bound and the per-axis derivative bounds."""
    if fn.grid != spec.grid:
        raise ValueError("function not on the layer grid")
    if not 0 <= component < spec.d_out:
        raise ValueError("component index out of range")
    violations = []
    if spec.value_bound_active:
        idx = int(np.argmax(np.abs(fn.values)))
        worst = abs(float(fn.values[idx]))
        if worst > 1.0:
            violations.append(ConstraintViolation("value", None, idx, worst, 1.0))
    bounds = spec.deriv_bound_array()
    if bounds is not None:
        for axis in range(spec.d_in):
            dv = _fd(spec.grid, axis) @ fn.values
            idx = int(np.argmax(np.abs(dv)))
            worst = abs(float(dv[idx]))
            if worst > bounds[component, axis]:
                violations.append(
                    ConstraintViolation("derivative", axis, idx, worst, bounds[component, axis])
                )
    return ConstraintReport(passed=not violations, violations=violations)


def _batch_pass(values: np.ndarray, spec: LayerSpec, component: int) -> np.ndarray:
    """Vectorized constraint predicate over a batch of value rows (n, m)."""
    ok = np.ones(values.shape[0], dtype=bool)
    if spec.value_bound_active:
        ok &= np.max(np.abs(values), axis=1) <= 1.0
    bounds = spec.deriv_bound_array()
    if bounds is not None:
        for axis in range(spec.d_in):
            dv = (_fd(spec.grid, axis) @ values.T).T
            ok &= np.max(np.abs(dv), axis=1) <= bounds[component, axis]
    return ok


# ---------------------------------------------------------------------------
# Gaussian samplers
# ---------------------------------------------------------------------------


class CholeskySampler:
    """Repeated draws of a centered Gaussian vector from a factored Gram matrix."""

    def __init__(self, gram: GramMatrix, grid: GridSpec | None = None):
        entries = gram.with_jitter()
        if np.all(entries == 0.0):
            self.L = np.zeros_like(entries)
            self.jitter = 0.0
        else:
            self.L, self.jitter = safe_cholesky(entries)
        self.grid = grid
        self.dim = entries.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.dim

    def transform(self, xi: np.ndarray) -> np.ndarray:
        """Map standard normal rows (n, latent_dim) to value rows (n, m)."""
        return xi @ self.L.T

    def draw(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        return self.transform(rng.standard_normal((n, self.dim)))


@lru_cache(maxsize=64)
def component_sampler(kernel: KernelSpec, grid: GridSpec) -> CholeskySampler:
    """Cached Cholesky sampler of a kernel on a grid."""
    return CholeskySampler(gram_on_grid(kernel, grid), grid)


def sample_gp(gram: GramMatrix, seed: int, grid: GridSpec | None = None) -> GridFunction:
    """One draw of the centered Gaussian vector with the given covariance."""
    g = grid if grid is not None else gram.grid
    if g is None:
        raise ValueError("gram matrix carries no grid; pass one explicitly")
    sampler = CholeskySampler(gram, g)
    values = sampler.draw(np.random.default_rng(seed), 1)[0]
    return GridFunction(g, values)


def sample_ibm_paths(N: int, grid: GridSpec, rng: np.random.Generator, n: int = 1) -> np.ndarray:
    """Batch construction of order-N integrated Brownian layer paths.

    Brownian motion by Gaussian increments on the shifted grid [0,2],
    N-fold antiderivative by cumulative trapezoid, plus the independent
    Gaussian polynomial terms of degrees 0..N.
    """
    if grid.dim != 1:
        raise ValueError("path construction is one-dimensional")
    N = int(N)
    u = grid.axis() + 1.0
    du = np.diff(u)
    incr = rng.standard_normal((n, du.size)) * np.sqrt(du)
    B = np.concatenate([np.zeros((n, 1)), np.cumsum(incr, axis=1)], axis=1)
    path = B
    for _ in range(N):
        path = scipy.integrate.cumulative_trapezoid(path, u, axis=1, initial=0.0)
    X = rng.standard_normal((n, N + 1))
    for ell in range(N + 1):
        path = path + X[:, ell : ell + 1] * u[None, :] ** ell / float(math.factorial(ell))
    return path


def sample_ibm_path(N: int, grid: GridSpec, seed: int) -> GridFunction:
    values = sample_ibm_paths(N, grid, np.random.default_rng(seed), 1)[0]
    return GridFunction(grid, values)


def sample_rl_paths(
    alpha: float,
    grid: GridSpec,
    rng: np.random.Generator,
    n: int = 1,
    refine: int = 8,
) -> np.ndarray:
    """Batch Riemann-Liouville layer paths by a left-point discretized
    stochastic integral on a refine-times finer grid, plus polynomial terms
    of degrees 0..floor(alpha)+1."""
    if grid.dim != 1:
        raise ValueError("path construction is one-dimensional")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    u = grid.axis() + 1.0
    fine = grid.refined(refine)
    s = fine.axis() + 1.0
    ds = np.diff(s)
    dB = rng.standard_normal((n, ds.size)) * np.sqrt(ds)
    # R(u_i) = sum_{s_j < u_i} (u_i - s_j)^(alpha - 1/2) dB_j, left-point rule
    p = alpha - 0.5
    coarse_idx = np.arange(0, fine.points_per_axis, refine)
    R = np.zeros((n, u.size))
    for i, ci in enumerate(coarse_idx):
        if ci == 0:
            continue
        lags = u[i] - s[:ci]
        R[:, i] = dB[:, :ci] @ lags**p
    deg = int(np.floor(alpha)) + 1
    X = rng.standard_normal((n, deg + 1))
    for ell in range(deg + 1):
        R = R + X[:, ell : ell + 1] * u[None, :] ** ell / float(math.factorial(ell))
    return R


def sample_rl_path(alpha: float, grid: GridSpec, seed: int, refine: int = 8) -> GridFunction:
    values = sample_rl_paths(alpha, grid, np.random.default_rng(seed), 1, refine)[0]
    return GridFunction(grid, values)


# ---------------------------------------------------------------------------
# rejection sampling of the constrained laws
# ---------------------------------------------------------------------------


class RejectionBudgetError(RuntimeError):
    """Rejection sampling exhausted its attempt budget."""

    def __init__(self, attempts: int, accepted: int):
        self.attempts = attempts
        self.accepted = accepted
        self.acceptance_estimate = accepted / attempts if attempts else 0.0
        super().__init__(
            f"rejection budget exhausted after {attempts} attempts "
            f"(empirical acceptance {self.acceptance_estimate:.2e})"
        )


@dataclass
class ConstrainedSample:
    """Per-layer constrained component draws plus rejection bookkeeping."""

    layers: list[list[GridFunction]]
    attempts: int
    seed: int


def rejection_sample_layer(
    spec: LayerSpec,
    seed: int,
    max_attempts: int = 100_000,
    batch: int = 64,
) -> tuple[list[GridFunction], int]:
    """Independent constrained draws of every component of one layer.

    Each component is resampled until it passes check_constraints; returns
    (components, total attempts).  Raises RejectionBudgetError if any
    component exhausts max_attempts.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    out = []
    total_attempts = 0
    for comp in range(spec.d_out):
        sampler = component_sampler(spec.kernels[comp], spec.grid)
        rng = rng_from(seed, comp)
        used = 0
        found = None
        while used < max_attempts:
            nb = min(batch, max_attempts - used)
            values = sampler.draw(rng, nb)
            ok = _batch_pass(values, spec, comp)
            used += int(np.argmax(ok)) + 1 if ok.any() else nb
            if ok.any():
                found = values[int(np.argmax(ok))]
                break
        total_attempts += used
        if found is None:
            raise RejectionBudgetError(total_attempts, len(out))
        out.append(GridFunction(spec.grid, found))
    return out, total_attempts


def estimate_constraint_probability(
    spec: LayerSpec,
    component: int,
    n_mc: int,
    seed: int,
    batch: int = 4096,
) -> tuple[float, tuple[float, float]]:
    """Monte Carlo estimate of the constraint probability with a 95% Wilson interval."""
    if n_mc < 100:
        raise ValueError("need at least 100 Monte Carlo draws")
    sampler = component_sampler(spec.kernels[component], spec.grid)
    rng = rng_from(seed, component)
    hits = 0
    done = 0
    while done < n_mc:
        nb = min(batch, n_mc - done)
        values = sampler.draw(rng, nb)
        hits += int(np.sum(_batch_pass(values, spec, component)))
        done += nb
    return hits / n_mc, wilson_interval(hits, n_mc)


def wilson_interval(hits: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    phat = hits / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * np.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if hits == 0 else max(0.0, center - half)
    hi = 1.0 if hits == n else min(1.0, center + half)
    return lo, hi
