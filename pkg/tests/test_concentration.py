import math

import numpy as np
import pytest

from dgplab.composition import DeepGPSpec
from dgplab.concentration import (
    BandSystem,
    BrownianMotionModel,
    HypothesisError,
    MCBudget,
    ZeroHitsError,
    bm_smallball_exact,
    bridge_no_exit,
    correlation_inequality_check,
    estimate_event_logprob,
    ordering_deep_check,
    phi_deep,
    smallball_mc,
    smallball_splitting,
    solve_rate,
)
from dgplab.grids import GridFunction, GridSpec
from dgplab.kernels import KernelSpec
from dgplab.sampling import CholeskySampler, LayerSpec, rng_from


def grid_smallball_exact(eps, m, T=1.0, nx=3001):
    """Oracle: P(max_i |B(t_i)| <= eps) by transition-density propagation."""
    dt = T / m
    x = np.linspace(-eps, eps, nx)
    h = x[1] - x[0]
    K = np.exp(-0.5 * (x[:, None] - x[None, :]) ** 2 / dt) / math.sqrt(2 * math.pi * dt)
    w = np.full(nx, h)
    w[0] *= 0.5
    w[-1] *= 0.5
    dens = np.exp(-0.5 * x * x / dt) / math.sqrt(2 * math.pi * dt)
    for _ in range(m - 1):
        dens = K @ (w * dens)
    return float(w @ dens)


def two_layer_spec(K=2.0, m=101):
    grid = GridSpec(1, m)
    return DeepGPSpec(
        (
            LayerSpec(1, 1, (KernelSpec.ibm(0),), grid),
            LayerSpec(
                1, 1, (KernelSpec.ibm(1),), grid,
                value_bound_active=False, deriv_bounds=((K,),),
            ),
        )
    )


def zero_targets(spec):
    return [
        [GridFunction(l.grid, np.zeros(l.grid.n_nodes)) for _ in range(l.d_out)]
        for l in spec.layers
    ]


class TestBridgeFormula:
    def test_against_subgrid_mc(self):
        rng = rng_from(0)
        dt, eps, a0, b0 = 0.05, 0.5, 0.21, -0.13
        n, sub = 200_000, 64
        t = np.linspace(0, dt, sub + 1)
        incr = rng.standard_normal((n, sub)) * math.sqrt(dt / sub)
        path = np.concatenate([np.zeros((n, 1)), np.cumsum(incr, axis=1)], axis=1)
        br = a0 + path - (t / dt)[None, :] * (path[:, -1:] - (b0 - a0))
        inside = np.all(np.abs(br) < eps, axis=1).mean()
        q = bridge_no_exit(np.array([a0]), np.array([b0]), eps, dt)[0]
        se = math.sqrt(inside * (1 - inside) / n)
        # the sub-grid MC overestimates survival slightly; allow that bias
        assert q <= inside + 3 * se
        assert q >= inside - 3 * se - 2e-4

    def test_sure_exit_when_endpoint_near_barrier(self):
        q = bridge_no_exit(np.array([0.499]), np.array([0.499]), 0.5, 1.0)[0]
        assert 0.0 <= q < 0.05


class TestSmallballMC:
    def test_large_eps_gives_log_zero(self):
        model = BrownianMotionModel(m=64)
        est = smallball_mc(model, 50.0, 2_000, seed=1)
        assert est.logp == 0.0

    def test_bm_oracle_with_bridge_correction(self):
        model = BrownianMotionModel(m=256, bridge_correction=True)
        est = smallball_mc(model, 0.5, 150_000, seed=2)
        target = math.log(bm_smallball_exact(0.5))
        assert abs(est.logp - target) <= 3 * est.se

    def test_monotone_in_eps_same_seed(self):
        model = BrownianMotionModel(m=128)
        logs = [smallball_mc(model, eps, 20_000, seed=3).logp for eps in (0.5, 0.7, 1.0)]
        assert logs[0] <= logs[1] <= logs[2]

    def test_zero_hits_raises(self):
        model = BrownianMotionModel(m=128)
        with pytest.raises(ZeroHitsError):
            smallball_mc(model, 0.05, 2_000, seed=4)


class TestSmallballSplitting:
    def test_agrees_with_plain_mc(self):
        model = BrownianMotionModel(m=256)
        mc = smallball_mc(model, 0.5, 100_000, seed=5)
        sp = smallball_splitting(model, 0.5, 30, 3_000, seed=6, n_batches=6)
        assert abs(mc.logp - sp.logp) <= 3 * math.hypot(mc.se, sp.se)

    def test_single_level_is_plain_mc(self):
        model = BrownianMotionModel(m=64)
        sp = smallball_splitting(model, 1.0, 1, 4_000, seed=7, n_batches=4)
        assert sp.levels_used == 1
        mc = smallball_mc(model, 1.0, 16_000, seed=8)
        assert abs(mc.logp - sp.logp) <= 3 * math.hypot(mc.se, sp.se)

    def test_rare_event_matches_density_propagation_oracle(self):
        model = BrownianMotionModel(m=128)
        sp = smallball_splitting(model, 0.15, 60, 1_500, seed=9, n_batches=6)
        target = math.log(grid_smallball_exact(0.15, 128))
        assert abs(sp.logp - target) <= 3.5 * sp.se

    def test_bm_neg_log_slope(self):
        model = BrownianMotionModel(m=512)
        eps_grid = np.array([0.15, 0.3, 0.6])
        neglogs = [
            -smallball_splitting(model, float(e), 60, 1_000, seed=10, n_batches=4).logp
            for e in eps_grid
        ]
        slope = np.polyfit(np.log(eps_grid), np.log(neglogs), 1)[0]
        assert -2.3 <= slope <= -1.7


class TestEstimateEventLogprob:
    def test_constant_process_gaussian_oracle(self):
        from dgplab.kernels import GramMatrix

        grid = GridSpec(1, 11)
        gm = GramMatrix(points=grid.points(), entries=np.ones((11, 11)), grid=grid)
        sampler = CholeskySampler(gm, grid)
        budget = MCBudget(n_mc=50_000)
        est = estimate_event_logprob(sampler, [(None, 0.0, 1.0)], budget, seed=11)
        from scipy.stats import norm

        target = math.log(2 * norm.cdf(1.0) - 1.0)
        assert abs(est.logp - target) <= 3 * est.se

    def test_rare_constant_process_uses_splitting(self):
        from dgplab.kernels import GramMatrix

        grid = GridSpec(1, 11)
        gm = GramMatrix(points=grid.points(), entries=np.ones((11, 11)), grid=grid)
        sampler = CholeskySampler(gm, grid)
        budget = MCBudget(n_mc=5_000, n_per_level=2_000, batches=4)
        est = estimate_event_logprob(sampler, [(None, 0.0, 1e-3)], budget, seed=12)
        assert est.method == "splitting"
        from scipy.stats import norm

        target = math.log(2 * norm.cdf(1e-3) - 1.0)
        assert abs(est.logp - target) <= 4 * est.se


class TestGibbsRefresh:
    def test_preserves_conditional_law(self):
        # after refresh, particles follow N(0,1)^d restricted to the band;
        # compare the stat distribution against direct rejection sampling
        rng = rng_from(13)
        model = BrownianMotionModel(m=64)
        bands = model.band_system()
        level = 1.0
        xi = rng.standard_normal((4_000, 64))
        s = bands.stat(xi)
        keep = xi[s < level]
        direct = s[s < level]
        clone = np.ascontiguousarray(np.repeat(keep[:200], 20, axis=0))
        bands.refresh(clone, level, rng, sweeps=3, max_coords=64)
        refreshed = bands.stat(clone)
        assert refreshed.max() < level
        # two-sample moment comparison
        se = math.hypot(direct.std() / math.sqrt(direct.size), refreshed.std() / math.sqrt(200))
        assert abs(direct.mean() - refreshed.mean()) <= 4 * se


class TestCorrelationInequality:
    def test_ibm_one_holds(self):
        grid = GridSpec(1, 101)
        rep = correlation_inequality_check(KernelSpec.ibm(1), grid, 1.0, [1.0], 50_000, seed=14)
        assert rep.holds

    def test_nonbinding_value_bound_saturates(self):
        grid = GridSpec(1, 101)
        rep = correlation_inequality_check(KernelSpec.ibm(1), grid, 1e6, [1.0], 30_000, seed=15)
        # value event has probability one, so joint = marginal product exactly
        assert abs(rep.p_joint - rep.p_product) <= 2e-3

    def test_rejects_nondifferentiable(self):
        grid = GridSpec(1, 51)
        with pytest.raises(ValueError):
            correlation_inequality_check(KernelSpec.ibm(0), grid, 1.0, [1.0], 1_000, seed=0)


class TestSolveRate:
    def test_exact_power_law(self):
        eps = np.geomspace(0.01, 1.0, 12)
        phi = eps**-2.0
        sol = solve_rate(eps, phi, [10_000])
        assert sol.eps_n[0] == pytest.approx(0.1, rel=1e-9)

    def test_power_law_exponent(self):
        eps = np.geomspace(0.01, 1.0, 12)
        phi = eps**-2.0
        n = np.geomspace(100, 100_000, 8)
        sol = solve_rate(eps, phi, n)
        assert sol.exponent == pytest.approx(-0.25, abs=1e-6)

    def test_noisy_curve_robust(self):
        rng = rng_from(16)
        eps = np.geomspace(0.02, 0.9, 14)
        clean = eps**-2.0
        # 5% multiplicative noise cannot break monotonicity at this spacing
        noisy = clean * np.exp(rng.uniform(-0.05, 0.05, eps.size))
        n = np.geomspace(100, 100_000, 8)
        sol_clean = solve_rate(eps, clean, n)
        sol_noisy = solve_rate(eps, noisy, n)
        assert abs(sol_noisy.exponent - sol_clean.exponent) <= 0.05

    def test_refuses_nondecreasing(self):
        eps = np.linspace(0.1, 1.0, 8)
        phi = np.ones(8)
        with pytest.raises(ValueError):
            solve_rate(eps, phi, [100])

    def test_needs_enough_points(self):
        with pytest.raises(ValueError):
            solve_rate([0.1, 0.2], [10, 5], [100])


class TestPhiDeep:
    def test_total_matches_term_decomposition(self):
        spec = two_layer_spec(K=2.0, m=41)
        z0 = zero_targets(spec)
        budget = MCBudget(n_mc=8_000, n_per_level=500, batches=4, max_levels=40)
        est = phi_deep(spec, z0, 0.6, budget, seed=17)
        total = 0.0
        for (h, i), inf_v in est.infimum_terms.items():
            total += 1.5 * inf_v - 2.0 * est.logp_smallball[(h, i)].logp
        for key, d in est.logp_deriv.items():
            total += -2.0 * d.logp
        assert est.total == pytest.approx(total, rel=1e-12)
        assert est.total >= 0.0

    def test_vacuous_constraints_give_zero(self):
        grid = GridSpec(1, 41)
        spec = DeepGPSpec(
            (
                LayerSpec(1, 1, (KernelSpec.ibm(0),), grid),
                LayerSpec(
                    1, 1, (KernelSpec.ibm(1),), grid,
                    value_bound_active=False, deriv_bounds=((1e9,),),
                ),
            )
        )
        z0 = zero_targets(spec)
        budget = MCBudget(n_mc=4_000)
        est = phi_deep(spec, z0, 1e8, budget, seed=18)
        assert est.total == pytest.approx(0.0, abs=1e-9)

    def test_hypothesis_violation_reported(self):
        spec = two_layer_spec(K=2.0, m=41)
        z0 = zero_targets(spec)
        z0[0][0] = GridFunction(spec.layers[0].grid, np.full(41, 1.5))
        with pytest.raises(HypothesisError):
            phi_deep(spec, z0, 0.3, MCBudget(n_mc=2_000), seed=19)

    def test_monotone_in_eps(self):
        spec = two_layer_spec(K=2.0, m=41)
        z0 = zero_targets(spec)
        budget = MCBudget(n_mc=30_000, n_per_level=600, batches=4, max_levels=50)
        est_a = phi_deep(spec, z0, 0.5, budget, seed=20)
        est_b = phi_deep(spec, z0, 0.8, budget, seed=20)
        assert est_b.total <= est_a.total + 2 * math.hypot(est_b.total_se, est_a.total_se)


class TestOrderingCheck:
    def test_refuses_large_eps_with_nonzero_target(self):
        spec = two_layer_spec(K=2.0, m=41)
        z0 = zero_targets(spec)
        z0[0][0] = GridFunction(spec.layers[0].grid, np.full(41, 0.3))
        with pytest.raises(HypothesisError):
            ordering_deep_check(spec, z0, 0.5, MCBudget(n_mc=2_000), seed=21)

    def test_refuses_eps_above_one(self):
        spec = two_layer_spec(K=2.0, m=41)
        with pytest.raises(HypothesisError):
            ordering_deep_check(spec, zero_targets(spec), 1.5, MCBudget(n_mc=2_000), seed=22)

    def test_chain_holds_small_reference(self):
        spec = two_layer_spec(K=2.0, m=41)
        z0 = zero_targets(spec)
        budget = MCBudget(n_mc=10_000, n_per_level=500, batches=4, max_levels=60)
        rep = ordering_deep_check(spec, z0, 0.4, budget, seed=23)
        assert rep.lemma_ordering_holds
        assert rep.theorem_ordering_holds
