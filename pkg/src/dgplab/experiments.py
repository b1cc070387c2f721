"""Truth construction, data generation, and contraction-rate studies.

A study draws i.i.d. data from a fixed truth, runs the constrained pCN
posterior sampler for every (sample size, replicate) cell, records the
posterior divergence radius at a quantile, and fits the log radius against
the log sample size.  The fitted slope is compared against the theoretical
contraction exponent of the configured prior family:
-beta/(2 N_1 + 2) for integrated Brownian layers, -alpha_1/(2 alpha_1 + 1)
for Riemann-Liouville, -beta/(2 alpha_1 + d) for Matern.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .composition import DeepGPSpec
from .grids import GridFunction, GridSpec, trapezoid_weights
from .inference import posterior_radius, run_mcmc
from .kernels import KernelSpec
from .models import BinaryRegression, DensityOnCube, classify_from_latent, density_from_latent
from .sampling import LayerSpec, rng_from


# ---------------------------------------------------------------------------
# truth construction
# ---------------------------------------------------------------------------


def holder_series(beta: float, t: np.ndarray, k_max: int = 12) -> np.ndarray:
    """Truncated lacunary series sum_k 2^(-k beta) cos(2^k pi t): a classical
    member of the order-beta Hoelder class that is not smoother."""
    out = np.zeros_like(t, dtype=float)
    for k in range(k_max + 1):
        out += 2.0 ** (-k * beta) * np.cos(2.0**k * np.pi * t)
    return out


def make_truth_holder(beta: float, d: int, m: int = 401, k_max: int = 12,
                      target_amplitude: float = 0.75):
    """Density truth p0 proportional to exp(a W_beta) with the lacunary
    Hoelder latent W_beta summed over axes (range-centered); the amplitude a
    shrinks until the log density, normalizer included, stays within +-1.5.
    Returns (DensityOnCube, latent GridFunction)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if d > 2:
        raise ValueError("the uniform floor d log 2 already exceeds the 1.5 budget for d > 2")
    grid = GridSpec(d, m)
    pts = grid.points()
    w = np.zeros(grid.n_nodes)
    for axis in range(d):
        w += holder_series(beta, pts[:, axis], k_max)
    w -= 0.5 * (np.max(w) + np.min(w))
    a = target_amplitude / float(np.max(np.abs(w)))
    while True:
        latent = GridFunction(grid, a * w)
        density = density_from_latent(latent)
        if float(np.max(np.abs(np.log(density.values)))) <= 1.5:
            return density, latent
        a *= 0.9


def make_truth_classif(beta: float, d: int, m: int = 401, k_max: int = 12,
                       target_amplitude: float = 0.75) -> BinaryRegression:
    """Classification truth f0 through the logistic link of the Hoelder latent."""
    _, latent = make_truth_holder(beta, d, m, k_max, target_amplitude)
    return classify_from_latent(latent)


# ---------------------------------------------------------------------------
# data generation
# ---------------------------------------------------------------------------


def sample_data(p0: DensityOnCube, n: int, seed: int) -> np.ndarray:
    """i.i.d. draws from a grid density by inverse CDF (1D) or by marginal
    plus conditional inverse CDF (2D)."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = rng_from(seed)
    if n == 0:
        return np.empty((0, p0.grid.dim))
    if p0.grid.dim == 1:
        x = _inverse_cdf_1d(p0.grid.axis(), p0.values, rng.random(n))
        return x[:, None]
    if p0.grid.dim == 2:
        m = p0.grid.points_per_axis
        axis = p0.grid.axis()
        vals = p0.values.reshape(m, m)
        w = trapezoid_weights(GridSpec(1, m))
        marginal = vals @ w
        x1 = _inverse_cdf_1d(axis, marginal, rng.random(n))
        # conditional density on the second axis, interpolated between columns
        idx = np.clip(np.searchsorted(axis, x1) - 1, 0, m - 2)
        frac = (x1 - axis[idx]) / (axis[1] - axis[0])
        x2 = np.empty(n)
        u = rng.random(n)
        for k in range(n):
            row = (1 - frac[k]) * vals[idx[k]] + frac[k] * vals[idx[k] + 1]
            x2[k] = _inverse_cdf_1d(axis, row, np.array([u[k]]))[0]
        return np.column_stack([x1, x2])
    raise ValueError("data generation supports dimensions 1 and 2")


def _inverse_cdf_1d(axis: np.ndarray, density: np.ndarray, u: np.ndarray) -> np.ndarray:
    h = axis[1] - axis[0]
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * h * (density[1:] + density[:-1]))])
    cdf /= cdf[-1]
    return np.interp(u, cdf, axis)


def sample_classif_data(f0: BinaryRegression, n: int, seed: int,
                        u_law: DensityOnCube | None = None):
    """Design points from the U law (uniform by default) with Bernoulli labels."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = rng_from(seed)
    d = f0.grid.dim
    if n == 0:
        return np.empty((0, d)), np.empty(0)
    if u_law is None:
        U = rng.uniform(-1.0, 1.0, size=(n, d))
    else:
        U = sample_data(u_law, n, seed + 1)
    probs = f0.as_grid_function().interp(U)
    V = (rng.random(n) < probs).astype(float)
    return U, V


# ---------------------------------------------------------------------------
# study configuration
# ---------------------------------------------------------------------------


@dataclass
class StudyConfig:
    """Prior family, truth smoothness, and budgets of one contraction study."""

    family: str  # "ibm" | "rl" | "matern"
    layer_params: tuple  # N_h, alpha_h, or matern alphas, one per layer
    beta: float  # truth smoothness
    deriv_bound: float = 2.0
    d: int = 1
    n_schedule: tuple = (100, 200, 400, 800, 1600, 3200)
    replicates: int = 5
    grid_m: int = 201
    truth_m: int = 401
    mcmc_iters: int = 3000
    mcmc_burnin: int = 1000
    mcmc_thin: int = 10
    quantile: float = 0.9
    seed: int = 0
    task: str = "density"
    threads: int = 1

    def __post_init__(self):
        if len(self.n_schedule) < 4:
            raise ValueError("schedule needs at least 4 sample sizes")
        if self.family not in ("ibm", "rl", "matern"):
            raise ValueError(f"unknown prior family {self.family!r}")
        if len(self.layer_params) < 2:
            raise ValueError("need at least two layers")
        if self.task not in ("density", "classification"):
            raise ValueError("task must be density or classification")

    def hypothesis_report(self) -> list[str]:
        """Rate-condition checks of the contraction theorems for this family."""
        lines = []
        p = self.layer_params
        if self.family == "ibm":
            lines.append(_check_line("beta <= N_1 + 1/2", self.beta <= p[0] + 0.5))
            for h, N in enumerate(p[1:], start=2):
                lines.append(_check_line(f"beta <= N_{h}", self.beta <= N))
        elif self.family == "rl":
            for h, a in enumerate(p[1:], start=2):
                lines.append(_check_line(f"alpha_{h} >= alpha_1", a >= p[0]))
        else:
            for h, a in enumerate(p, start=1):
                lines.append(_check_line(f"beta <= alpha_{h}", self.beta <= a))
        return lines

    def in_theorem_scope(self) -> bool:
        return all(line.endswith("holds") for line in self.hypothesis_report())

    def theoretical_exponent(self) -> float:
        p = self.layer_params
        if self.family == "ibm":
            return -self.beta / (2.0 * p[0] + 2.0)
        if self.family == "rl":
            return -p[0] / (2.0 * p[0] + 1.0)
        return -self.beta / (2.0 * min(p) + self.d)

    def build_spec(self) -> DeepGPSpec:
        grid = GridSpec(self.d, self.grid_m) if self.d == 1 else GridSpec(self.d, self.grid_m)
        layers = []
        H = len(self.layer_params)
        for h, param in enumerate(self.layer_params, start=1):
            d_in = self.d if h == 1 else 1
            layer_grid = grid if h == 1 else GridSpec(1, self.grid_m)
            if self.family == "ibm":
                kern = KernelSpec.ibm(int(param))
            elif self.family == "rl":
                kern = KernelSpec.rl(float(param))
            else:
                kern = KernelSpec.matern(float(param), d_in)
            if self.family in ("ibm", "rl") and d_in != 1:
                raise ValueError("ibm/rl studies are one-dimensional")
            layers.append(
                LayerSpec(
                    d_in=d_in,
                    d_out=1,
                    kernels=(kern,),
                    grid=layer_grid,
                    value_bound_active=h < H,
                    deriv_bounds=None if h == 1 else ((self.deriv_bound,) * d_in,),
                )
            )
        return DeepGPSpec(tuple(layers))


def _check_line(name: str, ok: bool) -> str:
    return f"{name}: {'holds' if ok else 'VIOLATED'}"


@dataclass
class ExperimentResult:
    config: StudyConfig
    rows: list = field(default_factory=list)  # (n, replicate, radius, seconds, ok)
    exponent: float = math.nan
    exponent_se: float = math.nan
    theory: float = math.nan
    excluded: int = 0

    def csv_text(self) -> str:
        lines = ["n,replicate,radius_q,seconds"]
        for n, rep, radius, seconds, ok in self.rows:
            if ok:
                lines.append(f"{n},{rep},{radius!r},{seconds:.3f}")
        return "\n".join(lines) + "\n"

    def summary_text(self) -> str:
        lines = [f"# {line}" for line in self.config.hypothesis_report()]
        if not self.config.in_theorem_scope():
            lines.append("# outside theorem scope")
        lines += [
            f"slope = {self.exponent!r}",
            f"stderr = {self.exponent_se!r}",
            f"theory = {self.theory!r}",
            f"excluded = {self.excluded}",
        ]
        return "\n".join(lines) + "\n"

    def median_radii(self) -> dict:
        by_n = {}
        for n, _, radius, _, ok in self.rows:
            if ok:
                by_n.setdefault(n, []).append(radius)
        return {n: float(np.median(v)) for n, v in sorted(by_n.items())}


def fit_slope(xs, ys) -> tuple[float, float]:
    """Ordinary least squares slope of ys on xs with its standard error."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 3:
        raise ValueError("need at least 3 points")
    if np.unique(xs).size < 2:
        raise ValueError("need at least 2 distinct x values")
    xc = xs - xs.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ ys) / sxx
    resid = ys - ys.mean() - slope * xc
    dof = max(xs.size - 2, 1)
    stderr = math.sqrt(float(resid @ resid) / dof / sxx)
    return slope, stderr


def _study_cell(args):
    config, n, rep = args
    t0 = time.time()
    try:
        spec = config.build_spec()
        cell_seed = int(rng_from(config.seed, int(n), rep).integers(2**31))
        if config.task == "density":
            truth, _ = make_truth_holder(config.beta, config.d, config.truth_m)
            data = sample_data(truth, n, cell_seed)
        else:
            truth = make_truth_classif(config.beta, config.d, config.truth_m)
            data = sample_classif_data(truth, n, cell_seed)
        chain = run_mcmc(
            spec,
            data,
            config.task,
            iters=config.mcmc_iters,
            burnin=config.mcmc_burnin,
            thin=config.mcmc_thin,
            seed=cell_seed,
        )
        radius = posterior_radius(chain, truth, config.quantile, task=config.task)
        return (n, rep, radius, time.time() - t0, True)
    except Exception:
        return (n, rep, math.nan, time.time() - t0, False)


def contraction_study(config: StudyConfig) -> ExperimentResult:
    """Run every (n, replicate) cell, fit log radius on log n, report the
    theoretical exponent; failed chains are excluded from the fit and counted."""
    cells = [(config, n, rep) for n in config.n_schedule for rep in range(config.replicates)]
    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            rows = list(pool.map(_study_cell, cells))
    else:
        rows = [_study_cell(cell) for cell in cells]
    result = ExperimentResult(config=config, rows=rows, theory=config.theoretical_exponent())
    good = [(n, radius) for n, _, radius, _, ok in rows if ok]
    result.excluded = len(rows) - len(good)
    if len(good) >= 3:
        xs = np.log([n for n, _ in good])
        ys = np.log([r for _, r in good])
        result.exponent, result.exponent_se = fit_slope(xs, ys)
    return result
