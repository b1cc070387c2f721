"""Numerical battery for the identities and inequalities behind the prior:
rescaling invariance, concentration-function ordering, constraint
positivity, the joint value/derivative correlation inequality, the
composition Lipschitz bound, the Hellinger bound, and the likelihood
sqrt(2) identity.  Each check returns a one-line verdict for the CLI."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .composition import (
    DeepGPSpec,
    compose,
    lipschitz_bound,
    rescale_deriv_bounds,
    rescale_layers,
    verify_lipschitz,
)
from .concentration import MCBudget, correlation_inequality_check, ordering_deep_check
from .grids import GridFunction, GridSpec
from .kernels import KernelSpec
from .models import classify_from_latent, l2_U, lemma_hellinger_bound_check, likelihood_l2
from .sampling import LayerSpec, estimate_constraint_probability, rejection_sample_layer, rng_from


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def reference_spec(grid_m: int = 201, K: float = 2.0, N1: int = 0, N2: int = 1) -> DeepGPSpec:
    """Two integrated-Brownian layers on [-1,1]: the default test bench."""
    grid = GridSpec(1, grid_m)
    return DeepGPSpec(
        (
            LayerSpec(1, 1, (KernelSpec.ibm(N1),), grid),
            LayerSpec(
                1, 1, (KernelSpec.ibm(N2),), grid,
                value_bound_active=False, deriv_bounds=((K,),),
            ),
        )
    )


def zero_targets(spec: DeepGPSpec):
    return [
        [GridFunction(l.grid, np.zeros(l.grid.n_nodes)) for _ in range(l.d_out)]
        for l in spec.layers
    ]


def sample_constrained_stack(spec: DeepGPSpec, seed: int):
    return [rejection_sample_layer(layer, seed + 31 * h)[0] for h, layer in enumerate(spec.layers)]


# ---------------------------------------------------------------------------
# individual checks
# ---------------------------------------------------------------------------


def check_rescaling(seed: int = 0, n_inputs: int = 100, n_bounds: int = 20,
                    tol: float = 1e-12) -> CheckResult:
    """Composition equality under input/output rescaling on analytic layers,
    plus the exact derivative-bound mapping for affine layers."""
    rng = rng_from(seed)
    layers = [
        [
            lambda p: 0.25 * p[:, 0] + 0.1 * p[:, 1] ** 2,
            lambda p: 0.3 * p[:, 0] * p[:, 1] - 0.2,
        ],
        [lambda p: p[:, 0] ** 2 - 0.5 * p[:, 1] + 0.05 * p[:, 0] * p[:, 1]],
    ]
    pts = rng.uniform(-1, 1, size=(n_inputs, 2))
    base = compose(layers, pts)
    worst = 0.0
    for _ in range(n_bounds):
        L = [np.ones(2), rng.uniform(0.5, 3.0, size=2), np.ones(1)]
        resc = rescale_layers(layers, L)
        worst = max(worst, float(np.max(np.abs(compose(resc, pts) - base))))
    # affine slope mapping: |d Y / d x_j| = (L_{h,j} / L_{h+1,i}) |d Z / d x_j|
    slopes = rng.uniform(-2, 2, size=(1, 2))
    mapped = rescale_deriv_bounds([np.abs(slopes)], [np.ones(2), np.array([2.0, 0.5]), np.ones(1)])
    expect = np.abs(slopes) * np.array([2.0, 0.5])[None, :]
    bound_err = float(np.max(np.abs(mapped[0] - expect)))
    ok = worst <= tol and bound_err <= tol
    return CheckResult(
        "rescaling identities",
        ok,
        f"max composition gap {worst:.2e}, bound-map gap {bound_err:.2e} (tol {tol:.0e})",
    )


def check_lipschitz(spec: DeepGPSpec, n_pairs: int, seed: int) -> CheckResult:
    """Randomized sweep of ||C_w - C_z||_inf <= K_H ||w - z||_inf + 10 mesh."""
    K_H = lipschitz_bound(spec)
    eta = 10.0 * spec.layers[0].grid.mesh
    inputs = np.linspace(-1, 1, 101)[:, None]
    violations = 0
    worst = -np.inf
    for k in range(n_pairs):
        w = sample_constrained_stack(spec, seed + 1000 * k)
        z = sample_constrained_stack(spec, seed + 1000 * k + 500)
        ratio = verify_lipschitz(w, z, inputs)
        worst = max(worst, ratio)
        if ratio > K_H + eta:
            violations += 1
    return CheckResult(
        "lipschitz bound",
        violations == 0,
        f"{n_pairs} pairs, worst ratio {worst:.3f} vs K_H + eta = {K_H + eta:.3f}, "
        f"{violations} violations",
    )


def check_hellinger_bound(spec: DeepGPSpec, n_pairs: int, seed: int,
                          eval_m: int = 401, tol: float = 1e-6) -> CheckResult:
    eval_grid = GridSpec(spec.input_dim, eval_m)
    violations = 0
    worst_gap = -np.inf
    for k in range(n_pairs):
        v = sample_constrained_stack(spec, seed + 2000 * k)
        w = sample_constrained_stack(spec, seed + 2000 * k + 777)
        report = lemma_hellinger_bound_check(v, w, spec, eval_grid, tol=tol)
        worst_gap = max(worst_gap, report.distance - report.bound)
        if not report.holds:
            violations += 1
    return CheckResult(
        "hellinger composition bound",
        violations == 0,
        f"{n_pairs} pairs, worst distance-bound gap {worst_gap:.2e} (slack {tol:.0e}), "
        f"{violations} violations",
    )


def check_sqrt2_identity(n_pairs: int = 100, seed: int = 0, m: int = 201,
                         tol: float = 1e-10) -> CheckResult:
    rng = rng_from(seed)
    grid = GridSpec(1, m)
    worst = 0.0
    for _ in range(n_pairs):
        f = classify_from_latent(GridFunction(grid, rng.standard_normal(m)))
        g = classify_from_latent(GridFunction(grid, rng.standard_normal(m)))
        lhs = likelihood_l2(f, g)
        rhs = math.sqrt(2.0) * l2_U(f, g)
        worst = max(worst, abs(lhs - rhs))
    return CheckResult(
        "likelihood sqrt2 identity",
        worst <= tol,
        f"{n_pairs} pairs, worst |lhs - rhs| = {worst:.2e} (tol {tol:.0e})",
    )


def check_correlation(n_mc: int, seed: int, settings=((1.0, 1.0), (0.5, 1.5), (2.0, 0.7)),
                      grid_m: int = 201) -> CheckResult:
    grid = GridSpec(1, grid_m)
    details = []
    ok = True
    for a, b in settings:
        rep = correlation_inequality_check(KernelSpec.ibm(1), grid, a, [b], n_mc, seed)
        ok = ok and rep.holds
        details.append(f"(a={a},b={b}): joint {rep.p_joint:.4f} vs product {rep.p_product:.4f}")
    return CheckResult("correlation inequality", ok, "; ".join(details))


def check_constraint_positivity(spec: DeepGPSpec, trials: int, seed: int) -> CheckResult:
    details = []
    ok = True
    for h, layer in enumerate(spec.layers):
        for i in range(layer.d_out):
            p, (lo, _) = estimate_constraint_probability(layer, i, trials, seed + 13 * h + i)
            ok = ok and lo > 0.0
            details.append(f"layer {h + 1} comp {i + 1}: p = {p:.4f} (lo {lo:.4f})")
    return CheckResult("constraint probability positivity", ok, "; ".join(details))


def check_ordering(spec: DeepGPSpec, eps_list, budget: MCBudget, seed: int) -> CheckResult:
    z0 = zero_targets(spec)
    details = []
    ok = True
    for eps in eps_list:
        rep = ordering_deep_check(spec, z0, float(eps), budget, seed)
        ok = ok and rep.lemma_ordering_holds and rep.theorem_ordering_holds
        details.append(
            f"eps={eps}: phi {rep.phi.value:.2f} <= phi_c {rep.phi_c.value:.2f} "
            f"<= Phi_c {rep.phi_deep_total:.2f}"
        )
    return CheckResult("concentration ordering chain", ok, "; ".join(details))


def run_battery(config) -> list[CheckResult]:
    """All lemma checks with budgets from the run configuration."""
    seed = config["run.seed"]
    spec = reference_spec(grid_m=config["prior.grid_m"], K=config["prior.deriv_bound"])
    budget = MCBudget(
        n_mc=config["check.n_mc"],
        n_per_level=config["check.n_per_level"],
        batches=config["check.batches"],
    )
    return [
        check_rescaling(seed),
        check_constraint_positivity(spec, config["check.constraint_trials"], seed),
        check_correlation(config["check.correlation_n"], seed),
        check_lipschitz(spec, config["check.pairs"], seed),
        check_hellinger_bound(spec, min(config["check.pairs"], 1000), seed),
        check_sqrt2_identity(100, seed),
        check_ordering(spec, config["check.ordering_eps"], budget, seed),
    ]
