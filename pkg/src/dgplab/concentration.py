"""Small-ball probability estimation and concentration functions.

Estimators operate on Gaussian path models exposing a latent standard-normal
space: `latent_dim` plus `transform(xi) -> grid values`, so that pCN moves
(xi' = sqrt(1-beta^2) xi + beta eta) leave the law invariant.  Events are
encoded as scalar statistics S(xi) with target {S < threshold}; rare events
use fixed-level multilevel splitting with geometric thresholds between the
pilot hit quantile and the target, resampling survivors and refreshing them
with constrained pCN moves.  Standard errors come from independent batch
replications.

The Brownian-motion model can weight surviving paths by the exact
probability that the connecting bridges stay inside the band, which removes
the grid discretization bias of the continuum small-ball probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import ndtr, ndtri

from .composition import DeepGPSpec, StackedFunction
from .grids import GridFunction, GridSpec
from .kernels import KernelSpec, fd_matrix, gram_on_grid
from .rkhs import InfimumProblem, concentration_infimum
from .sampling import component_sampler, rng_from


class ZeroHitsError(RuntimeError):
    """Plain Monte Carlo saw no hits; use the splitting estimator instead."""


class LevelStarvationError(RuntimeError):
    """A splitting level lost every particle; increase levels or particles."""


class HypothesisError(ValueError):
    """The hypotheses of the checked statement do not hold; nothing asserted."""


@dataclass
class LogProbEstimate:
    """Estimate of log P(event) with a standard error on the log scale."""

    logp: float
    se: float
    n_total: int
    method: str
    levels_used: int = 0

    def __add__(self, other: "LogProbEstimate") -> "LogProbEstimate":
        return LogProbEstimate(
            self.logp + other.logp,
            math.hypot(self.se, other.se),
            self.n_total + other.n_total,
            "sum",
            max(self.levels_used, other.levels_used),
        )

    def __sub__(self, other: "LogProbEstimate") -> "LogProbEstimate":
        return LogProbEstimate(
            self.logp - other.logp,
            math.hypot(self.se, other.se),
            self.n_total + other.n_total,
            "sum",
            max(self.levels_used, other.levels_used),
        )


@dataclass
class MCBudget:
    """Sampling effort knobs shared by the concentration estimators."""

    n_mc: int = 20_000
    min_hits: int = 100
    n_per_level: int = 1_500
    max_levels: int = 60
    batches: int = 6
    mcmc_steps: int = 4
    chunk: int = 4_096


# ---------------------------------------------------------------------------
# path models
# ---------------------------------------------------------------------------


class BrownianMotionModel:
    """Standard Brownian motion on [0, T] sampled at m uniform steps.

    The latent basis is the Levy midpoint-displacement construction (m must
    be a power of two): one endpoint ramp plus tent functions over dyadic
    intervals.  Tent columns have short supports, so the coordinate Gibbs
    refresh used by the splitting estimator costs O(m log m) per sweep.

    With bridge_correction, surviving paths of the band event {sup |B| < eps}
    are weighted by the exact no-exit probabilities of the connecting
    Brownian bridges, making the weighted grid estimator unbiased for the
    continuum probability.
    """

    def __init__(self, m: int = 512, T: float = 1.0, bridge_correction: bool = False):
        self.m = int(m)
        if self.m < 2 or self.m & (self.m - 1):
            raise ValueError("m must be a power of two")
        self.T = float(T)
        self.dt = self.T / self.m
        self.bridge_correction = bridge_correction
        self._basis = _levy_basis(self.m, self.T)

    @property
    def latent_dim(self) -> int:
        return self.m

    def transform(self, xi: np.ndarray) -> np.ndarray:
        return xi @ self._basis.T

    def sup_stat(self, xi: np.ndarray) -> np.ndarray:
        return np.max(np.abs(self.transform(xi)), axis=1)

    def band_system(self) -> "BandSystem":
        if not hasattr(self, "_bands"):
            self._bands = BandSystem(self._basis, np.zeros(self.m), np.ones(self.m))
        return self._bands

    def log_weight(self, xi: np.ndarray, eps: float) -> np.ndarray:
        """Sum over cells of log P(bridge stays in (-eps, eps)); paths must
        already satisfy the grid event."""
        paths = self.transform(xi)
        a = np.concatenate([np.zeros((paths.shape[0], 1)), paths[:, :-1]], axis=1)
        q = bridge_no_exit(a, paths, eps, self.dt)
        return np.sum(np.log(np.clip(q, 1e-300, 1.0)), axis=1)


def _levy_basis(m: int, T: float) -> np.ndarray:
    """Columns mapping i.i.d. standard normals to B(t_1..t_m), t_i = i T/m:
    the global ramp for B(T) plus midpoint-displacement tents per dyadic scale."""
    t = np.arange(1, m + 1) * (T / m)
    cols = [t / math.sqrt(T)]
    length = T
    n_intervals = 1
    while n_intervals < m:
        for j in range(n_intervals):
            a = j * length
            tent = np.maximum(0.0, 1.0 - np.abs(t - (a + length / 2.0)) / (length / 2.0))
            cols.append(tent * math.sqrt(length / 4.0))
        n_intervals *= 2
        length /= 2.0
    return np.column_stack(cols)


def bridge_no_exit(a: np.ndarray, b: np.ndarray, eps: float, dt: float, kmax: int = 3) -> np.ndarray:
    """P(Brownian bridge from a to b over time dt stays inside (-eps, eps)).

    Reflection series of the absorbed transition density; endpoints must lie
    inside the band.
    """
    w = 2.0 * eps
    L = -eps
    total = np.zeros_like(a)
    for k in range(-kmax, kmax + 1):
        total += np.exp(-2.0 * (k * w) * (k * w + b - a) / dt)
        total -= np.exp(-2.0 * (a - L + k * w) * (b - L + k * w) / dt)
    return total


def bm_smallball_exact(eps: float, T: float = 1.0, terms: int = 200) -> float:
    """Classical reflection series for P(sup_{[0,T]} |B| <= eps)."""
    k = np.arange(terms)
    return float(
        (4.0 / np.pi)
        * np.sum((-1.0) ** k / (2 * k + 1) * np.exp(-((2 * k + 1) ** 2) * np.pi**2 * T / (8.0 * eps**2)))
    )


# ---------------------------------------------------------------------------
# statistics over latent space
# ---------------------------------------------------------------------------


def sup_norm_stat(model):
    """Statistic xi -> sup |values| for a path model."""

    def stat(xi):
        return np.max(np.abs(model.transform(xi)), axis=1)

    return stat


def band_stat(model, terms):
    """Composite statistic max over terms of sup |D values - center| / radius.

    terms: list of (op, center, radius) with op a sparse matrix or None for
    the identity; the event of interest is {stat < 1}.
    """

    def stat(xi):
        vals = model.transform(xi)
        out = np.zeros(vals.shape[0])
        for op, center, radius in terms:
            x = vals if op is None else (op @ vals.T).T
            dev = np.max(np.abs(x - center), axis=1) / radius
            out = np.maximum(out, dev)
        return out

    return stat


class BandSystem:
    """Linear band event |G xi - c| < r * level on a standard Gaussian latent.

    Encodes every event used here (sup-norm balls, decentered balls,
    derivative bounds, and their intersections), exposes the normalized
    statistic max |G xi - c| / r, and refreshes particles inside a level set
    by exact coordinate Gibbs: the conditional of one latent coordinate
    given the rest is a truncated standard normal on a computable interval.
    """

    def __init__(self, G: np.ndarray, c: np.ndarray, r: np.ndarray):
        self.G = np.ascontiguousarray(G, dtype=float)
        self.c = np.asarray(c, dtype=float).ravel()
        self.r = np.asarray(r, dtype=float).ravel()
        if self.G.shape[0] != self.c.size or self.G.shape[0] != self.r.size:
            raise ValueError("rows of G, c, r must align")
        if np.any(self.r <= 0):
            raise ValueError("band radii must be positive")
        self.latent_dim = self.G.shape[1]
        # contiguous row-support of each column (lower-triangular factors and
        # banded derivative blocks make these tight) so Gibbs updates slice
        # views instead of fancy-indexing copies
        nz_mask = self.G != 0.0
        any_nz = nz_mask.any(axis=0)
        first = np.where(any_nz, nz_mask.argmax(axis=0), 0)
        last = np.where(any_nz, self.G.shape[0] - nz_mask[::-1].argmax(axis=0), 0)
        self._support = list(zip(first.tolist(), last.tolist()))

    @classmethod
    def from_terms(cls, sampler, terms) -> "BandSystem":
        """Bands of |op (L xi) - center| < radius * level for each term."""
        L = sampler.L
        blocks, cs, rs = [], [], []
        for op, center, radius in terms:
            B = L if op is None else np.asarray((op @ L))
            blocks.append(B)
            cs.append(np.broadcast_to(np.asarray(center, dtype=float), (B.shape[0],)))
            rs.append(np.full(B.shape[0], float(radius)))
        return cls(np.vstack(blocks), np.concatenate(cs), np.concatenate(rs))

    def stat(self, xi: np.ndarray) -> np.ndarray:
        dev = np.abs(xi @ self.G.T - self.c) / self.r
        return np.max(dev, axis=1)

    def refresh(self, xi: np.ndarray, level: float, rng, sweeps: int, max_coords: int = 256):
        """In-place Gibbs sweeps over random coordinate subsets, leaving
        N(0,I) restricted to {stat < level} invariant."""
        n, d = xi.shape
        Y = xi @ self.G.T  # (n, rows)
        lo = self.c - self.r * level
        hi = self.c + self.r * level
        k = min(d, max_coords)
        for _ in range(sweeps):
            coords = rng.permutation(d)[:k]
            for i in coords:
                s0, s1 = self._support[i]
                if s1 <= s0:
                    xi[:, i] = rng.standard_normal(n)
                    continue
                coln = self.G[s0:s1, i]
                safe = np.where(coln == 0.0, 1.0, coln)
                Ym = Y[:, s0:s1] - np.outer(xi[:, i], coln)
                a = (lo[s0:s1] - Ym) / safe
                b = (hi[s0:s1] - Ym) / safe
                pos = coln > 0
                free = coln == 0.0
                lower = np.where(free, -np.inf, np.where(pos, a, b)).max(axis=1)
                upper = np.where(free, np.inf, np.where(pos, b, a)).min(axis=1)
                new = _trunc_std_normal(lower, upper, xi[:, i], rng)
                Y[:, s0:s1] = Ym + np.outer(new, coln)
                xi[:, i] = new
        return xi


def _trunc_std_normal(lb: np.ndarray, ub: np.ndarray, current: np.ndarray, rng) -> np.ndarray:
    """Vectorized standard normal truncated to [lb, ub] by inverse CDF.

    Intervals entirely in the right tail are reflected to the left tail
    where the CDF is accurate; degenerate intervals keep the current value
    (which is always feasible)."""
    flip = lb > 0.0
    l2 = np.where(flip, -ub, lb)
    u2 = np.where(flip, -lb, ub)
    Fl = ndtr(l2)
    Fu = ndtr(u2)
    width = Fu - Fl
    u = rng.random(lb.size)
    with np.errstate(invalid="ignore"):
        x = ndtri(Fl + u * width)
    x = np.where(flip, -x, x)
    bad = ~np.isfinite(x) | (width < 1e-14)
    return np.where(bad, current, x)


# ---------------------------------------------------------------------------
# plain Monte Carlo
# ---------------------------------------------------------------------------


def smallball_mc(
    model,
    eps: float,
    n_mc: int,
    seed: int,
    statistic=None,
    chunk: int = 8_192,
) -> LogProbEstimate:
    """log of the Monte Carlo proportion of {statistic < eps}, delta-method SE.

    Uses the model's bridge weighting when available.  Raises ZeroHitsError
    when no draw lands in the event.
    """
    if n_mc < 1_000:
        raise ValueError("need at least 1000 Monte Carlo draws")
    if statistic is not None:
        stat = statistic
    elif isinstance(model, BandSystem):
        stat = model.stat
    else:
        stat = sup_norm_stat(model)
    weighted = statistic is None and getattr(model, "bridge_correction", False)
    rng = rng_from(seed)
    total = 0
    hits = 0
    wsum = 0.0
    wsq = 0.0
    while total < n_mc:
        nb = min(chunk, n_mc - total)
        xi = rng.standard_normal((nb, model.latent_dim))
        s = stat(xi)
        inside = s < eps
        if weighted and inside.any():
            lw = model.log_weight(xi[inside], eps)
            w = np.exp(lw)
            wsum += float(np.sum(w))
            wsq += float(np.sum(w * w))
        hits += int(np.sum(inside))
        total += nb
    if hits == 0:
        raise ZeroHitsError(
            f"0 hits out of {n_mc} draws; the event is too rare for plain MC, use splitting"
        )
    if weighted:
        mean_w = wsum / n_mc
        var_w = max(wsq / n_mc - mean_w**2, 0.0)
        se = math.sqrt(var_w / n_mc) / mean_w
        return LogProbEstimate(math.log(mean_w), se, n_mc, "mc")
    p = hits / n_mc
    se = math.sqrt((1.0 - p) / (n_mc * p))
    return LogProbEstimate(math.log(p), se, n_mc, "mc")


# ---------------------------------------------------------------------------
# multilevel splitting
# ---------------------------------------------------------------------------


def smallball_splitting(
    model,
    eps: float,
    levels: int,
    n_per_level: int,
    seed: int,
    statistic=None,
    n_batches: int = 6,
    mcmc_steps: int = 4,
    survival: float = 0.22,
) -> LogProbEstimate:
    """Multilevel splitting estimate of log P(statistic < eps).

    Levels descend from the initial hit quantile to eps, each placed at the
    current particle quantile matching the per-level conditional survival
    target; survivors are resampled and refreshed by constrained pCN moves.
    `levels` caps the ladder length.  The standard error is the
    batch-replication spread of the per-batch log estimates.  levels = 1
    reduces to plain Monte Carlo per batch.
    """
    if levels < 1:
        raise ValueError("need at least one level")
    if n_batches < 2:
        raise ValueError("need at least two batches for a replication SE")
    if statistic is not None:
        stat, bands = statistic, None
    elif isinstance(model, BandSystem):
        stat, bands = model.stat, model
    elif hasattr(model, "band_system"):
        bands = model.band_system()
        stat = bands.stat
    else:
        stat, bands = sup_norm_stat(model), None
    weighted = statistic is None and getattr(model, "bridge_correction", False)

    logs = []
    weight_means = []
    total = 0
    used = 0
    for b in range(n_batches):
        rng = rng_from(seed, 1 + b)
        logp_b, xi_final, n_levels = _splitting_batch(
            model, stat, bands, eps, levels, n_per_level, rng, mcmc_steps, survival
        )
        total += n_per_level * n_levels
        used = max(used, n_levels)
        if weighted:
            lw = model.log_weight(xi_final, eps)
            weight_means.append(float(np.mean(np.exp(lw))))
        logs.append(logp_b)
    logs = np.asarray(logs)
    logp = float(np.mean(logs))
    se = float(np.std(logs, ddof=1) / math.sqrt(n_batches))
    if weighted:
        wm = np.asarray(weight_means)
        logp += float(np.log(np.mean(wm)))
        se = math.hypot(se, float(np.std(wm, ddof=1) / math.sqrt(n_batches)) / float(np.mean(wm)))
    return LogProbEstimate(logp, se, total, "splitting", levels_used=used)


def _splitting_batch(model, stat, bands, eps, max_levels, n, rng, mcmc_steps, survival):
    """One independent splitting replication; returns (log p, final latents,
    number of levels used).  Final latents all satisfy {stat < eps}."""
    xi = rng.standard_normal((n, model.latent_dim))
    s = stat(xi)
    logp = 0.0
    beta = 0.5
    for n_levels in range(1, max_levels + 1):
        level = float(np.quantile(s, survival))
        final = level <= eps or n_levels == max_levels
        if final:
            level = eps
        inside = s < level
        frac = float(np.mean(inside))
        if frac == 0.0:
            raise LevelStarvationError(
                f"no particle reached level {level:.4g} after {n_levels} levels; "
                "increase levels, particles, or mcmc steps"
            )
        logp += math.log(frac)
        # resample survivors to n particles and refresh within {stat < level}
        idx = np.flatnonzero(inside)
        take = rng.integers(0, idx.size, size=n)
        xi = np.ascontiguousarray(xi[idx[take]])
        if bands is not None:
            xi = bands.refresh(xi, level, rng, sweeps=mcmc_steps)
            s = stat(xi)
        else:
            s = s[idx[take]]
            for _ in range(mcmc_steps):
                eta = rng.standard_normal((n, model.latent_dim))
                prop = math.sqrt(1.0 - beta * beta) * xi + beta * eta
                sp = stat(prop)
                ok = sp < level
                xi[ok] = prop[ok]
                s[ok] = sp[ok]
                acc = float(np.mean(ok))
                if acc < 0.2:
                    beta = max(beta * 0.7, 0.005)
                elif acc > 0.5:
                    beta = min(beta * 1.3, 0.99)
        if final:
            return logp, xi, n_levels
    raise LevelStarvationError(f"target {eps} not reached within {max_levels} levels")


def suggest_levels(model, eps: float, seed: int, statistic=None, n_pilot: int = 2_000,
                   per_level_survival: float = 0.2) -> int:
    """Size the splitting ladder from a pilot tail fit of -log P ~ c * s^-g."""
    stat = statistic if statistic is not None else sup_norm_stat(model)
    rng = rng_from(seed, 0)
    s = stat(rng.standard_normal((n_pilot, model.latent_dim)))
    q20, q02 = float(np.quantile(s, 0.2)), float(np.quantile(s, 0.02))
    if q20 <= eps:
        return 1
    gap = math.log(-math.log(0.02)) - math.log(-math.log(0.2))
    g = gap / max(math.log(q20) - math.log(q02), 1e-9)
    neglog_eps = -math.log(0.2) * (q20 / eps) ** g
    n_levels = int(math.ceil((neglog_eps - (-math.log(0.2))) / (-math.log(per_level_survival))))
    return max(2, min(n_levels + 2, 80))


def estimate_event_logprob(model, terms, budget: MCBudget, seed: int) -> LogProbEstimate:
    """log P(all band terms hold): plain MC when enough hits, else splitting."""
    stat = band_stat(model, terms)
    try:
        est = smallball_mc(model, 1.0, budget.n_mc, seed, statistic=stat, chunk=budget.chunk)
        if est.logp > math.log(budget.min_hits / budget.n_mc):
            return est
    except ZeroHitsError:
        pass
    bands = BandSystem.from_terms(model, terms)
    return smallball_splitting(
        bands,
        1.0,
        budget.max_levels,
        budget.n_per_level,
        seed,
        n_batches=budget.batches,
        mcmc_steps=budget.mcmc_steps,
    )


# ---------------------------------------------------------------------------
# component plumbing for deep specs
# ---------------------------------------------------------------------------


@dataclass
class ComponentRef:
    """Sampler and constraint operators of one layer component (h, i)."""

    h: int
    i: int
    kernel: KernelSpec
    grid: GridSpec
    sampler: object
    value_bound: bool
    deriv_bounds: np.ndarray | None  # per-axis bounds, or None

    def constraint_terms(self):
        terms = []
        if self.value_bound:
            terms.append((None, 0.0, 1.0))
        if self.deriv_bounds is not None:
            for axis, bound in enumerate(self.deriv_bounds):
                terms.append((_fd_cached(self.grid, axis), 0.0, float(bound)))
        return terms


@lru_cache(maxsize=128)
def _fd_cached(grid: GridSpec, axis: int):
    return fd_matrix(grid, axis)


@lru_cache(maxsize=64)
def _gram_cached(kernel: KernelSpec, grid: GridSpec):
    return gram_on_grid(kernel, grid)


def component_refs(spec: DeepGPSpec) -> list[ComponentRef]:
    refs = []
    for h, layer in enumerate(spec.layers):
        bounds = layer.deriv_bound_array()
        for i in range(layer.d_out):
            refs.append(
                ComponentRef(
                    h=h,
                    i=i,
                    kernel=layer.kernels[i],
                    grid=layer.grid,
                    sampler=component_sampler(layer.kernels[i], layer.grid),
                    value_bound=layer.value_bound_active,
                    deriv_bounds=None if bounds is None else bounds[i],
                )
            )
    return refs


def _component_infimum(ref: ComponentRef, target: GridFunction, eps: float,
                       deriv_bound: float | None = None) -> float:
    problem = InfimumProblem(
        kernel=ref.kernel,
        grid=ref.grid,
        target=target,
        eps=eps,
        deriv_bound=deriv_bound,
    )
    return concentration_infimum(problem, gram=_gram_cached(ref.kernel, ref.grid)).value


# ---------------------------------------------------------------------------
# concentration functions
# ---------------------------------------------------------------------------


@dataclass
class PhiEstimate:
    """One concentration-function value: infimum part plus -log P terms."""

    eps: float
    infimum: float
    neg_logp: float
    se: float

    @property
    def value(self) -> float:
        return self.infimum + self.neg_logp


def phi_single(spec: DeepGPSpec, w0: StackedFunction, eps: float, budget: MCBudget, seed: int) -> PhiEstimate:
    """Unconstrained concentration of the stacked process around w0:
    block infimum at radius eps plus -log P(||W||_inf < eps)."""
    refs = component_refs(spec)
    inf_total = 0.0
    logp = LogProbEstimate(0.0, 0.0, 0, "sum")
    for pos, ref in enumerate(refs):
        target = w0.component(ref.h, ref.i)
        inf_total += _component_infimum(ref, target, eps)
        logp = logp + estimate_event_logprob(
            ref.sampler, [(None, 0.0, eps)], budget, rng_from(seed, 10, pos).integers(2**31)
        )
    return PhiEstimate(eps, inf_total, -logp.logp, logp.se)


def phi_c_single(spec: DeepGPSpec, w0: StackedFunction, eps: float, budget: MCBudget, seed: int) -> PhiEstimate:
    """Constrained concentration of the stacked process around w0:
    block infimum at eps, -log P(||W_c||_inf < eps), and
    -log P(||W - w0||_inf < 2 eps, W in the constraint set)."""
    refs = component_refs(spec)
    inf_total = 0.0
    total = LogProbEstimate(0.0, 0.0, 0, "sum")
    for pos, ref in enumerate(refs):
        target = w0.component(ref.h, ref.i)
        inf_total += _component_infimum(ref, target, eps)
        cons = ref.constraint_terms()
        # conditional small ball: P(||Z|| < eps, cons) / P(cons)
        num = estimate_event_logprob(
            ref.sampler, [(None, 0.0, eps)] + cons, budget, rng_from(seed, 20, pos).integers(2**31)
        )
        den = estimate_event_logprob(
            ref.sampler, cons, budget, rng_from(seed, 21, pos).integers(2**31)
        )
        # decentered ball of radius 2 eps intersected with the constraints
        shifted = estimate_event_logprob(
            ref.sampler,
            [(None, target.values, 2.0 * eps)] + cons,
            budget,
            rng_from(seed, 22, pos).integers(2**31),
        )
        total = total + num - den + shifted
    return PhiEstimate(eps, inf_total, -total.logp, total.se)


@dataclass
class ConcentrationEstimate:
    """Deep constraint-aware concentration function at one radius."""

    eps: float
    infimum_terms: dict
    logp_smallball: dict
    logp_deriv: dict
    total: float
    total_se: float
    k_min: float


def phi_deep(spec: DeepGPSpec, z0, eps: float, budget: MCBudget, seed: int) -> ConcentrationEstimate:
    """Assemble the deep concentration function at radius eps.

    z0: per-layer lists of target GridFunctions.  First-layer components
    contribute 1.5 * infimum(eps) - 2 log P(||Z|| < eps); deeper components
    use radius eps/2, a derivative band of half-width K_min/4 around the
    target derivatives, and subtract 2 log P per derivative axis.
    """
    check_phi_deep_hypotheses(spec, z0)
    k_min = spec.k_min
    refs = component_refs(spec)
    inf_terms = {}
    logp_ball = {}
    logp_deriv = {}
    total = 0.0
    var = 0.0
    for pos, ref in enumerate(refs):
        target = z0[ref.h][ref.i]
        key = (ref.h, ref.i)
        if ref.h == 0:
            inf_terms[key] = _component_infimum(ref, target, eps)
            est = estimate_event_logprob(
                ref.sampler, [(None, 0.0, eps)], budget, rng_from(seed, 30, pos).integers(2**31)
            )
            logp_ball[key] = est
            total += 1.5 * inf_terms[key] - 2.0 * est.logp
            var += (2.0 * est.se) ** 2
        else:
            inf_terms[key] = _component_infimum(ref, target, eps / 2.0, deriv_bound=k_min / 4.0)
            est = estimate_event_logprob(
                ref.sampler, [(None, 0.0, eps / 2.0)], budget, rng_from(seed, 31, pos).integers(2**31)
            )
            logp_ball[key] = est
            total += 1.5 * inf_terms[key] - 2.0 * est.logp
            var += (2.0 * est.se) ** 2
            for axis in range(ref.grid.dim):
                dest = estimate_event_logprob(
                    ref.sampler,
                    [(_fd_cached(ref.grid, axis), 0.0, k_min / 4.0)],
                    budget,
                    rng_from(seed, 32, pos, axis).integers(2**31),
                )
                logp_deriv[(ref.h, ref.i, axis)] = dest
                total += -2.0 * dest.logp
                var += (2.0 * dest.se) ** 2
    return ConcentrationEstimate(
        eps=eps,
        infimum_terms=inf_terms,
        logp_smallball=logp_ball,
        logp_deriv=logp_deriv,
        total=total,
        total_se=math.sqrt(var),
        k_min=k_min,
    )


def check_phi_deep_hypotheses(spec: DeepGPSpec, z0, margin: float = 1e-12) -> None:
    """Targets must satisfy sup |z0| < 1 (layers 1..H-1) and
    sup |d z0 / dx_j| <= K_min / 2 (layers 2..H)."""
    H = spec.depth
    k_min = spec.k_min
    for h, layer in enumerate(spec.layers):
        for i in range(layer.d_out):
            target = z0[h][i]
            if h <= H - 2 and target.sup_norm() >= 1.0 - margin:
                raise HypothesisError(
                    f"target ({h + 1},{i + 1}) has sup norm {target.sup_norm():.6f} >= 1"
                )
            if h >= 1:
                for axis in range(layer.grid.dim):
                    dv = float(np.max(np.abs(_fd_cached(layer.grid, axis) @ target.values)))
                    if dv > k_min / 2.0 + margin:
                        raise HypothesisError(
                            f"target ({h + 1},{i + 1}) derivative along axis {axis} "
                            f"is {dv:.6f} > K_min/2 = {k_min / 2.0:.6f}"
                        )


@dataclass
class OrderingReport:
    eps: float
    phi: PhiEstimate
    phi_c: PhiEstimate
    phi_deep_total: float
    phi_deep_se: float
    lemma_ordering_holds: bool
    theorem_ordering_holds: bool


def ordering_deep_check(
    spec: DeepGPSpec, z0, eps: float, budget: MCBudget, seed: int, n_sigma: float = 3.0
) -> OrderingReport:
    """Check phi <= phi_c <= Phi_c (within n_sigma combined MC error) at eps.

    Refuses (HypothesisError) when eps violates the theorem hypotheses:
    eps in (0,1] and sup |z0_{h,i}| + 2 eps <= 1 for layers h <= H-1,
    derivative targets within K_min / 2.
    """
    if not 0.0 < eps <= 1.0:
        raise HypothesisError(f"eps = {eps} outside (0, 1]")
    H = spec.depth
    for h in range(H - 1):
        for i, target in enumerate(z0[h]):
            if target.sup_norm() + 2.0 * eps > 1.0:
                raise HypothesisError(
                    f"sup|z0[{h + 1},{i + 1}]| + 2 eps = "
                    f"{target.sup_norm() + 2 * eps:.4f} > 1"
                )
    check_phi_deep_hypotheses(spec, z0)

    w0 = StackedFunction([list(comps) for comps in z0])
    est_phi = phi_single(spec, w0, eps, budget, rng_from(seed, 1).integers(2**31))
    est_phi_c = phi_c_single(spec, w0, eps, budget, rng_from(seed, 2).integers(2**31))
    est_deep = phi_deep(spec, z0, eps, budget, rng_from(seed, 3).integers(2**31))
    lemma_ok = est_phi.value <= est_phi_c.value + n_sigma * math.hypot(est_phi.se, est_phi_c.se)
    theorem_ok = est_phi_c.value <= est_deep.total + n_sigma * math.hypot(
        est_phi_c.se, est_deep.total_se
    )
    return OrderingReport(
        eps=eps,
        phi=est_phi,
        phi_c=est_phi_c,
        phi_deep_total=est_deep.total,
        phi_deep_se=est_deep.total_se,
        lemma_ordering_holds=lemma_ok,
        theorem_ordering_holds=theorem_ok,
    )


# ---------------------------------------------------------------------------
# joint value/derivative correlation inequality
# ---------------------------------------------------------------------------


@dataclass
class CorrelationReport:
    p_joint: float
    p_product: float
    margin_sigma: float
    holds: bool


def correlation_inequality_check(
    kernel: KernelSpec, grid: GridSpec, a: float, b: np.ndarray, n_mc: int, seed: int
) -> CorrelationReport:
    """Check P(|Z| <= a, |dZ/dx_j| <= b_j for all j) >= prod of marginals
    within Monte Carlo error (differentiable-path kernels only)."""
    if kernel.family == "ibm" and kernel.param < 1:
        raise ValueError("ibm kernels need N >= 1 for differentiable paths")
    if kernel.family == "rl" and kernel.param <= 1:
        raise ValueError("rl kernels need alpha > 1 for differentiable paths")
    if kernel.family == "matern" and kernel.param <= 1:
        raise ValueError("matern kernels need alpha > 1 for differentiable paths")
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if b.size != grid.dim:
        raise ValueError("need one derivative bound per axis")
    sampler = component_sampler(kernel, grid)
    rng = rng_from(seed)
    n_events = 1 + grid.dim
    hits = np.zeros(n_events, dtype=np.int64)
    joint_hits = 0
    done = 0
    while done < n_mc:
        nb = min(8_192, n_mc - done)
        vals = sampler.draw(rng, nb)
        inside = [np.max(np.abs(vals), axis=1) <= a]
        for axis in range(grid.dim):
            dv = (_fd_cached(grid, axis) @ vals.T).T
            inside.append(np.max(np.abs(dv), axis=1) <= b[axis])
        inside = np.stack(inside, axis=0)
        hits += inside.sum(axis=1)
        joint_hits += int(np.sum(np.all(inside, axis=0)))
        done += nb
    p = hits / n_mc
    p_joint = joint_hits / n_mc
    prod = float(np.prod(p))
    se_joint = math.sqrt(max(p_joint * (1 - p_joint), 1e-12) / n_mc)
    rel = 0.0
    for pi in p:
        if pi > 0:
            rel += (1 - pi) / (n_mc * pi)
    se_prod = prod * math.sqrt(rel)
    sigma = math.hypot(se_joint, se_prod)
    margin = (p_joint - prod) / sigma if sigma > 0 else math.inf
    return CorrelationReport(p_joint, prod, margin, p_joint >= prod - 3.0 * sigma)


# ---------------------------------------------------------------------------
# rate solving
# ---------------------------------------------------------------------------


@dataclass
class RateSolution:
    n_values: np.ndarray
    eps_n: np.ndarray
    exponent: float
    exponent_se: float


def solve_rate(eps_points, phi_values, n_values, rel_tol: float = 1e-10) -> RateSolution:
    """Solve Phi(eps_n) = n eps_n^2 for each n by bisection on the log-log
    interpolation of the curve, then fit log eps_n on log n.

    Refuses when the curve is not decreasing.  The log-log interpolation is
    exact on power laws, and extrapolates linearly beyond the grid.
    """
    eps_points = np.asarray(eps_points, dtype=float)
    phi_values = np.asarray(phi_values, dtype=float)
    if eps_points.size < 6:
        raise ValueError("need at least 6 curve points")
    order = np.argsort(eps_points)
    le = np.log(eps_points[order])
    lp = np.log(phi_values[order])
    if np.any(np.diff(lp) >= 0):
        raise ValueError("concentration curve is not decreasing in eps")

    def log_phi(log_eps: float) -> float:
        if log_eps <= le[0]:
            slope = (lp[1] - lp[0]) / (le[1] - le[0])
            return lp[0] + slope * (log_eps - le[0])
        if log_eps >= le[-1]:
            slope = (lp[-1] - lp[-2]) / (le[-1] - le[-2])
            return lp[-1] + slope * (log_eps - le[-1])
        return float(np.interp(log_eps, le, lp))

    n_values = np.asarray(n_values, dtype=float)
    eps_n = np.empty(n_values.size)
    for k, n in enumerate(n_values):
        f = lambda x: log_phi(x) - math.log(n) - 2.0 * x
        lo, hi = le[0] - 60.0, le[-1] + 60.0
        if f(lo) < 0 or f(hi) > 0:
            raise ValueError(f"no crossing of Phi(eps) = n eps^2 for n = {n}")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if f(mid) > 0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= rel_tol:
                break
        eps_n[k] = math.exp(0.5 * (lo + hi))
    if n_values.size >= 2:
        slope, stderr = _ols_slope(np.log(n_values), np.log(eps_n))
    else:
        slope, stderr = math.nan, math.nan
    return RateSolution(n_values, eps_n, slope, stderr)


def _ols_slope(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise ValueError("need at least two distinct x values")
    slope = float(xc @ y) / sxx
    resid = y - y.mean() - slope * xc
    dof = max(x.size - 2, 1)
    stderr = math.sqrt(float(resid @ resid) / dof / sxx)
    return slope, stderr


def concentration_csv(estimates: list[ConcentrationEstimate]) -> str:
    """CSV with columns eps, infimum_total, logp_total, phi_total, phi_se."""
    lines = ["eps,infimum_total,logp_total,phi_total,phi_se"]
    for est in estimates:
        inf_total = 1.5 * sum(est.infimum_terms.values())
        logp_total = est.total - inf_total
        lines.append(
            f"{est.eps!r},{inf_total!r},{logp_total!r},{est.total!r},{est.total_se!r}"
        )
    return "\n".join(lines) + "\n"
