"""Density and classification link maps, divergences, and the composition
bound on the Hellinger distance as a checkable predicate.

All integrals are tensor-product trapezoid sums on the model grid; the
tolerance of each predicate is stated where it is asserted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .composition import compose, lipschitz_bound, sup_distance
from .grids import GridFunction, GridSpec, trapezoid_weights

NORMALIZATION_TOL = 1e-10


@dataclass
class DensityOnCube:
    """Strictly positive density on [-1,1]^dim, trapezoid-normalized to 1."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.grid.n_nodes:
            raise ValueError("value length does not match grid")
        if np.any(self.values <= 0.0):
            raise ValueError("density must be strictly positive")
        mass = float(trapezoid_weights(self.grid) @ self.values)
        if abs(mass - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"density integrates to {mass}, not 1")

    def as_grid_function(self) -> GridFunction:
        return GridFunction(self.grid, self.values)

    def to_csv(self, path) -> None:
        self.as_grid_function().to_csv(path, extra_markers=("normalized",))


@dataclass
class BinaryRegression:
    """Grid values of a binary regression function, in the open interval (0,1)."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.grid.n_nodes:
            raise ValueError("value length does not match grid")
        if np.any(self.values <= 0.0) or np.any(self.values >= 1.0):
            raise ValueError("regression values must lie strictly inside (0,1)")

    def as_grid_function(self) -> GridFunction:
        return GridFunction(self.grid, self.values)


def density_from_latent(z: GridFunction) -> DensityOnCube:
    """Exponential link p = e^z / trapezoid(e^z); invariant under z -> z + c.

    Overflow is guarded by max subtraction; underflowed node values are
    floored at 1e-300 to keep the density strictly positive in floats.
    """
    shifted = z.values - np.max(z.values)
    expz = np.maximum(np.exp(shifted), 1e-300)
    mass = float(trapezoid_weights(z.grid) @ expz)
    return DensityOnCube(z.grid, expz / mass)


def logistic(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    enx = np.exp(x[~pos])
    out[~pos] = enx / (1.0 + enx)
    return out


def classify_from_latent(z: GridFunction) -> BinaryRegression:
    """Logistic link f = e^z / (1 + e^z), kept strictly inside (0,1) in floats."""
    vals = np.clip(logistic(z.values), 1e-300, np.nextafter(1.0, 0.0))
    return BinaryRegression(z.grid, vals)


# ---------------------------------------------------------------------------
# divergences
# ---------------------------------------------------------------------------


def _same_grid(p, q):
    if p.grid != q.grid:
        raise ValueError("arguments must share a grid")
    return trapezoid_weights(p.grid)


def hellinger(p: DensityOnCube, q: DensityOnCube) -> float:
    """sqrt of the integrated squared difference of the density square roots."""
    w = _same_grid(p, q)
    return float(np.sqrt(max(w @ (np.sqrt(p.values) - np.sqrt(q.values)) ** 2, 0.0)))


def kl(p: DensityOnCube, q: DensityOnCube) -> float:
    """Kullback-Leibler divergence of p from q on the grid."""
    w = _same_grid(p, q)
    return float(w @ (p.values * np.log(p.values / q.values)))


def v_div(p: DensityOnCube, q: DensityOnCube) -> float:
    """Second-moment divergence: integral of p * log(p/q)^2."""
    w = _same_grid(p, q)
    return float(w @ (p.values * np.log(p.values / q.values) ** 2))


def l2_U(f, g, u_law: DensityOnCube | None = None) -> float:
    """L2 distance with respect to the law of the design points U.

    f, g: GridFunction / BinaryRegression / DensityOnCube on a common grid;
    u_law defaults to the uniform distribution on the cube.
    """
    fv = f.values
    gv = g.values
    if f.grid != g.grid:
        raise ValueError("arguments must share a grid")
    w = trapezoid_weights(f.grid)
    if u_law is None:
        dens = np.full(f.grid.n_nodes, 0.5**f.grid.dim)
    else:
        if u_law.grid != f.grid:
            raise ValueError("U law must live on the same grid")
        dens = u_law.values
    return float(np.sqrt(max(w @ (dens * (fv - gv) ** 2), 0.0)))


def likelihood_l2(f: BinaryRegression, g: BinaryRegression, u_law=None) -> float:
    """L2 distance between the two-outcome likelihood surfaces
    L_f(u,v) = f(u)^v (1-f(u))^(1-v), integrated over U and summed over v."""
    if f.grid != g.grid:
        raise ValueError("arguments must share a grid")
    w = trapezoid_weights(f.grid)
    if u_law is None:
        dens = np.full(f.grid.n_nodes, 0.5**f.grid.dim)
    else:
        dens = u_law.values
    sq = (f.values - g.values) ** 2 + ((1.0 - f.values) - (1.0 - g.values)) ** 2
    return float(np.sqrt(max(w @ (dens * sq), 0.0)))


# ---------------------------------------------------------------------------
# composition bound on the Hellinger distance
# ---------------------------------------------------------------------------


@dataclass
class HellingerBoundReport:
    distance: float
    bound: float
    sup_gap: float
    holds: bool


def lemma_hellinger_bound_check(
    layers_v,
    layers_w,
    spec,
    eval_grid: GridSpec,
    tol: float = 1e-6,
) -> HellingerBoundReport:
    """Check h(p_{C_v}, p_{C_w}) <= K_H * ||v-w||_inf * exp(K_H ||v-w||_inf / 2) + tol
    for two constrained layer stacks, with densities through the exponential link."""
    K_H = lipschitz_bound(spec)
    gap = sup_distance(layers_v, layers_w)
    pts = eval_grid.points()
    p_v = density_from_latent(GridFunction(eval_grid, compose(layers_v, pts)))
    p_w = density_from_latent(GridFunction(eval_grid, compose(layers_w, pts)))
    dist = hellinger(p_v, p_w)
    bound = K_H * gap * float(np.exp(K_H * gap / 2.0))
    return HellingerBoundReport(dist, bound, gap, dist <= bound + tol)
