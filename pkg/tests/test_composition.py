import numpy as np
import pytest

from dgplab.composition import (
    DeepGPSpec,
    compose,
    lipschitz_bound,
    project,
    rescale_deriv_bounds,
    rescale_layers,
    stack_global,
    sup_distance,
    verify_lipschitz,
)
from dgplab.grids import GridFunction, GridSpec
from dgplab.kernels import KernelSpec
from dgplab.sampling import LayerSpec, rejection_sample_layer, rng_from


def two_layer_spec(K=2.0, m=51):
    grid = GridSpec(1, m)
    return DeepGPSpec(
        (
            LayerSpec(1, 1, (KernelSpec.ibm(0),), grid, value_bound_active=True),
            LayerSpec(
                1, 1, (KernelSpec.ibm(1),), grid,
                value_bound_active=False, deriv_bounds=((K,),),
            ),
        )
    )


def grid_fn(grid, f):
    return GridFunction(grid, f(grid.axis()))


class TestDeepGPSpec:
    def test_valid_two_layer(self):
        spec = two_layer_spec()
        assert spec.depth == 2
        assert spec.k_min == 2.0
        assert spec.k_max == 2.0
        assert spec.d_max == 1

    def test_dimension_chain_enforced(self):
        grid = GridSpec(1, 11)
        l1 = LayerSpec(1, 2, (KernelSpec.ibm(0), KernelSpec.ibm(0)), grid)
        l2 = LayerSpec(
            1, 1, (KernelSpec.ibm(1),), grid, value_bound_active=False, deriv_bounds=((1.0,),)
        )
        with pytest.raises(ValueError):
            DeepGPSpec((l1, l2))

    def test_single_layer_rejected(self):
        grid = GridSpec(1, 11)
        with pytest.raises(ValueError):
            DeepGPSpec((LayerSpec(1, 1, (KernelSpec.ibm(0),), grid),))


class TestLipschitzBound:
    def test_formula_examples(self):
        assert lipschitz_bound(two_layer_spec(K=1.0)) == 4.0

        grid = GridSpec(3, 5)
        mid_kernels = tuple(KernelSpec.matern(2.0, 3) for _ in range(3))
        spec = DeepGPSpec(
            (
                LayerSpec(3, 3, mid_kernels, grid),
                LayerSpec(
                    3, 3, mid_kernels, grid,
                    value_bound_active=True, deriv_bounds=((2.0,) * 3,) * 3,
                ),
                LayerSpec(
                    3, 1, (KernelSpec.matern(2.0, 3),), grid,
                    value_bound_active=False, deriv_bounds=((2.0,) * 3,),
                ),
            )
        )
        assert lipschitz_bound(spec) == pytest.approx(343.0)

        grid2 = GridSpec(2, 5)
        spec2 = DeepGPSpec(
            (
                LayerSpec(2, 2, (KernelSpec.matern(1.0, 2),) * 2, grid2),
                LayerSpec(
                    2, 1, (KernelSpec.matern(1.0, 2),), grid2,
                    value_bound_active=False, deriv_bounds=((0.5, 0.5),),
                ),
            )
        )
        assert lipschitz_bound(spec2) == pytest.approx(4.0)


class TestCompose:
    def test_deterministic_layers(self):
        grid = GridSpec(1, 201)
        inner = grid_fn(grid, lambda t: t / 2)
        outer = grid_fn(grid, lambda u: u**2)
        # u^2 is not multilinear, but 0.25 lies on the grid so interp is exact there
        out = compose([[inner], [outer]], np.array([[0.5]]))
        assert out[0] == pytest.approx(0.0625, abs=1e-12)

    def test_constant_first_layer(self):
        grid = GridSpec(1, 101)
        c = 0.48
        inner = grid_fn(grid, lambda t: np.full_like(t, c))
        outer = grid_fn(grid, lambda u: np.sin(u))
        out = compose([[inner], [outer]], np.array([[0.3], [-0.9], [0.0]]))
        expect = outer.interp([[c]])[0]
        assert np.allclose(out, expect)

    def test_intermediate_violation_raises(self):
        grid = GridSpec(1, 11)
        inner = grid_fn(grid, lambda t: 1.5 * t)
        outer = grid_fn(grid, lambda u: u)
        with pytest.raises(ValueError, match="constraint violation"):
            compose([[inner], [outer]], np.array([[0.9]]))

    def test_refinement_bound_on_constrained_pair(self):
        spec = two_layer_spec(K=2.0, m=51)
        K_H = lipschitz_bound(spec)
        fine_grid = GridSpec(1, 201)  # 4x finer
        fine_layers = []
        for h, layer in enumerate(spec.layers):
            fine_spec = LayerSpec(
                layer.d_in, layer.d_out, layer.kernels, fine_grid,
                value_bound_active=layer.value_bound_active,
                deriv_bounds=layer.deriv_bounds,
            )
            comps, _ = rejection_sample_layer(fine_spec, seed=100 + h)
            fine_layers.append(comps)
        coarse_layers = [
            [GridFunction(spec.layers[h].grid, comp.values[::4]) for comp in comps]
            for h, comps in enumerate(fine_layers)
        ]
        inputs = np.linspace(-1, 1, 111)[:, None]
        diff = np.max(
            np.abs(compose(coarse_layers, inputs) - compose(fine_layers, inputs))
        )
        assert diff <= 2.0 * K_H * spec.layers[0].grid.mesh


class TestVerifyLipschitz:
    def test_identical_stacks_give_zero(self):
        grid = GridSpec(1, 21)
        stack = [[grid_fn(grid, lambda t: 0.2 * t)], [grid_fn(grid, lambda t: t)]]
        assert verify_lipschitz(stack, stack, np.linspace(-1, 1, 7)[:, None]) == 0.0

    def test_affine_layers_hand_ratio(self):
        grid = GridSpec(1, 41)
        w = [[grid_fn(grid, lambda t: 0.5 * t)], [grid_fn(grid, lambda u: u)]]
        z = [[grid_fn(grid, lambda t: 0.25 * t)], [grid_fn(grid, lambda u: 0.5 * u)]]
        # |C_w - C_z| = |0.5 t - 0.125 t| peaks at 0.375; ||w - z|| = 0.5
        ratio = verify_lipschitz(w, z, np.linspace(-1, 1, 101)[:, None])
        assert ratio == pytest.approx(0.75, rel=1e-12)
        assert ratio <= lipschitz_bound(two_layer_spec(K=1.0))

    def test_random_constrained_pairs_bounded(self):
        spec = two_layer_spec(K=2.0, m=51)
        K_H = lipschitz_bound(spec)
        eta = 10.0 * spec.layers[0].grid.mesh
        inputs = np.linspace(-1, 1, 41)[:, None]
        for trial in range(20):
            stacks = []
            for s in (0, 1):
                layers = []
                for h, layer in enumerate(spec.layers):
                    comps, _ = rejection_sample_layer(layer, seed=1000 + 10 * trial + 2 * s + h)
                    layers.append(comps)
                stacks.append(layers)
            ratio = verify_lipschitz(stacks[0], stacks[1], inputs)
            assert ratio <= K_H + eta


class TestRescaling:
    def poly_layers(self):
        # two layers of polynomial components, d = 2 -> 2 -> 1
        layer1 = [
            lambda p: 0.25 * p[:, 0] + 0.1 * p[:, 1] ** 2,
            lambda p: 0.3 * p[:, 0] * p[:, 1] - 0.2,
        ]
        layer2 = [lambda p: p[:, 0] ** 2 - 0.5 * p[:, 1] + 0.05 * p[:, 0] * p[:, 1]]
        return [layer1, layer2]

    def test_identity_scales(self):
        layers = self.poly_layers()
        L = [np.ones(2), np.ones(2), np.ones(1)]
        resc = rescale_layers(layers, L)
        pts = rng_from(5).uniform(-1, 1, size=(50, 2))
        assert np.allclose(compose(resc, pts), compose(layers, pts), atol=0)

    def test_composition_equality_arbitrary_bounds(self):
        layers = self.poly_layers()
        rng = rng_from(7)
        pts = rng.uniform(-1, 1, size=(100, 2))
        base = compose(layers, pts)
        for _ in range(20):
            L = [np.ones(2), rng.uniform(0.5, 3.0, size=2), np.ones(1)]
            resc = rescale_layers(layers, L)
            # rescaled layers accept inputs whose original coordinates lie in
            # the scaled boxes; evaluate composition on the original inputs
            assert np.allclose(compose(resc, pts), base, atol=1e-12)

    def test_affine_derivative_bound_mapping_exact(self):
        rng = rng_from(9)
        slopes = rng.uniform(-2, 2, size=(1, 2))

        def affine(p):
            return p @ slopes[0]

        layers = [
            [lambda p: 0.5 * p[:, 0], lambda p: 0.25 * p[:, 1]],
            [affine],
        ]
        L = [np.ones(2), np.array([2.0, 0.5]), np.ones(1)]
        resc = rescale_layers(layers, L)
        # numeric partial derivatives of the rescaled last layer
        h = 1e-6
        at = np.array([[0.1, -0.2]])
        for j in range(2):
            e = np.zeros((1, 2))
            e[0, j] = h
            num = (resc[1][0](at + e) - resc[1][0](at - e)) / (2 * h)
            expect = slopes[0, j] * L[1][j]
            assert num[0] == pytest.approx(expect, rel=1e-6)
        mapped = rescale_deriv_bounds([np.abs(slopes)], [np.ones(2), L[1], np.ones(1)])
        assert np.allclose(mapped[0], np.abs(slopes) * L[1][None, :])

    def test_double_rescale_is_identity(self):
        layers = self.poly_layers()
        rng = rng_from(11)
        L_mid = rng.uniform(0.5, 2.0, size=2)
        L = [np.ones(2), L_mid, np.ones(1)]
        L_inv = [np.ones(2), 1.0 / L_mid, np.ones(1)]
        # scaling inputs by L then 1/L composes to the identity map on each layer
        twice = rescale_layers(rescale_layers(layers, L), L_inv)
        pts = rng.uniform(-1, 1, size=(50, 2))
        assert np.allclose(compose(twice, pts), compose(layers, pts), atol=1e-12)

    def test_rejects_bad_scales(self):
        layers = self.poly_layers()
        with pytest.raises(ValueError):
            rescale_layers(layers, [np.ones(2), np.array([1.0, -2.0]), np.ones(1)])
        with pytest.raises(ValueError):
            rescale_layers(layers, [2 * np.ones(2), np.ones(2), np.ones(1)])


class TestStackedFunction:
    def make_layers(self):
        g1 = GridSpec(2, 9)
        g2 = GridSpec(1, 9)
        rng = rng_from(13)
        layer1 = [GridFunction(g1, rng.uniform(-1, 1, g1.n_nodes)) for _ in range(1)]
        layer2 = [GridFunction(g2, rng.uniform(-1, 1, g2.n_nodes))]
        return [layer1, layer2]

    def test_project_round_trip(self):
        layers = self.make_layers()
        stacked = stack_global(layers)
        for h, comps in enumerate(layers):
            for i, fn in enumerate(comps):
                assert project(stacked, h, i) is fn

    def test_sup_norm_is_max_of_components(self):
        layers = self.make_layers()
        stacked = stack_global(layers)
        expect = max(fn.sup_norm() for comps in layers for fn in comps)
        assert stacked.sup_norm() == expect

    def test_padded_axis_constancy(self):
        layers = self.make_layers()
        stacked = stack_global(layers)
        rng = rng_from(17)
        base = rng.uniform(-1, 1, size=(20, 2))
        moved = base.copy()
        moved[:, 1] = rng.uniform(-1, 1, size=20)
        # component (1, 0) lives on a 1-d grid: second coordinate is ignored
        v1 = stacked.value(base, 1, 0)
        v2 = stacked.value(moved, 1, 0)
        assert np.array_equal(v1, v2)

    def test_lexicographic_index(self):
        layers = self.make_layers()
        idx = stack_global(layers).index()
        assert idx == {(0, 0): 0, (1, 0): 1}

    def test_sup_distance(self):
        layers = self.make_layers()
        other = [[GridFunction(fn.grid, fn.values + 0.25) for fn in comps] for comps in layers]
        assert sup_distance(layers, other) == pytest.approx(0.25)
