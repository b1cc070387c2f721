import math

import numpy as np
import pytest
import scipy.integrate

from dgplab.grids import GridFunction, GridSpec
from dgplab.kernels import (
    KernelSpec,
    fd_matrix,
    gram,
    gram_on_grid,
    ibm_kernel,
    ibm_kernel_closed_form,
    matern_kernel,
    matern_variance,
    rl_kernel,
)


class TestIbmKernel:
    def test_order_zero_corner(self):
        # only the degree-0 polynomial term survives at t = -1
        assert ibm_kernel(0, -1.0, -1.0) == pytest.approx(1.0, abs=1e-14)

    def test_order_zero_center(self):
        # Var(X_0) + Var(B(1)) = 1 + 1
        assert ibm_kernel(0, 0.0, 0.0) == pytest.approx(2.0, abs=1e-13)

    def test_order_one_endpoint(self):
        # quadrature oracle: 1 + 4 + int_0^2 (2-u)^2 du = 5 + 8/3
        val, _ = scipy.integrate.quad(lambda u: (2 - u) ** 2, 0, 2)
        assert ibm_kernel(1, 1.0, 1.0) == pytest.approx(5.0 + val, rel=1e-12)
        assert ibm_kernel(1, 1.0, 1.0) == pytest.approx(23.0 / 3.0, rel=1e-12)

    @pytest.mark.parametrize("N", [0, 1, 2])
    def test_matches_closed_form(self, N):
        rng = np.random.default_rng(7)
        for _ in range(25):
            s, t = rng.uniform(-1, 1, size=2)
            assert ibm_kernel(N, s, t) == pytest.approx(
                ibm_kernel_closed_form(N, s, t), rel=1e-12
            )

    def test_symmetry_and_determinism(self):
        assert ibm_kernel(2, 0.3, -0.6) == ibm_kernel(2, -0.6, 0.3)
        assert ibm_kernel(2, 0.3, -0.6) == ibm_kernel(2, 0.3, -0.6)

    def test_rejects_out_of_domain(self):
        with pytest.raises(ValueError):
            ibm_kernel(0, 1.5, 0.0)


class TestRlKernel:
    def test_corner(self):
        assert rl_kernel(0.5, -1.0, -1.0) == pytest.approx(1.0, abs=1e-14)

    def test_half_center(self):
        # integrand is constant 1, so the integral is 1; plus 1 + 1 polynomial terms
        assert rl_kernel(0.5, 0.0, 0.0) == pytest.approx(3.0, rel=1e-12)

    def test_one_center(self):
        # int_0^1 (1-u) du = 1/2 plus 1 + 1 + 1/4
        assert rl_kernel(1.0, 0.0, 0.0) == pytest.approx(2.75, rel=1e-12)

    def test_rejects_nonpositive_alpha(self):
        with pytest.raises(ValueError):
            rl_kernel(0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            KernelSpec.rl(-1.0)

    @pytest.mark.parametrize("alpha", [0.2, 0.5, 1.3])
    def test_integral_against_adaptive_oracle(self, alpha):
        # the integral term only, against scipy's algebraic-weight quadrature
        rng = np.random.default_rng(3)
        p = alpha - 0.5
        deg = int(np.floor(alpha)) + 1
        for _ in range(10):
            s, t = np.sort(rng.uniform(-1, 1, size=2))
            a, b = s + 1.0, t + 1.0
            oracle, _ = scipy.integrate.quad(
                lambda u: (b - u) ** p, 0.0, a, weight="alg", wvar=(0.0, p)
            )
            poly = sum((a**l) * (b**l) / math.factorial(l) ** 2 for l in range(deg + 1))
            assert rl_kernel(alpha, s, t) == pytest.approx(poly + oracle, rel=1e-8)

    def test_agrees_with_ibm_integral_term(self):
        # for alpha = N + 1/2 the integrands coincide up to the 1/(N!)^2
        # normalization carried by the integrated-Brownian construction;
        # identical for N <= 1, proportional with factor (N!)^2 in general
        for N in (0, 1, 2):
            alpha = N + 0.5
            deg_rl = int(np.floor(alpha)) + 1
            for s, t in [(-0.4, 0.9), (0.0, 0.0), (-1.0, 1.0), (0.7, 0.7)]:
                poly_rl = sum(
                    ((s + 1.0) ** l) * ((t + 1.0) ** l) / math.factorial(l) ** 2
                    for l in range(deg_rl + 1)
                )
                poly_ibm = sum(
                    ((s + 1.0) ** l) * ((t + 1.0) ** l) / math.factorial(l) ** 2
                    for l in range(N + 1)
                )
                int_rl = rl_kernel(alpha, s, t) - poly_rl
                int_ibm = ibm_kernel(N, s, t) - poly_ibm
                assert int_rl == pytest.approx(
                    math.factorial(N) ** 2 * int_ibm, rel=1e-8, abs=1e-12
                )
                if N <= 1:
                    assert int_rl == pytest.approx(int_ibm, rel=1e-8, abs=1e-12)


class TestMaternKernel:
    def test_unit_variance(self):
        assert matern_kernel(0.5, 1, [[0.2]], [[0.2]]) == pytest.approx(1.0)
        assert matern_kernel(2.3, 3, [[0.1, 0.2, 0.3]], [[0.1, 0.2, 0.3]]) == pytest.approx(1.0)

    def test_half_is_exponential(self):
        # spectral density (1+lambda^2)^{-1} transforms to exp(-|r|)
        assert matern_kernel(0.5, 1, [[0.0]], [[0.5]]) == pytest.approx(np.exp(-0.5), rel=1e-12)
        assert matern_kernel(0.5, 1, [[-0.3]], [[0.4]]) == pytest.approx(np.exp(-0.7), rel=1e-12)

    def test_symmetry_stationarity(self):
        u = np.array([[0.1, -0.4]])
        v = np.array([[0.6, 0.2]])
        assert matern_kernel(1.5, 2, u, v) == pytest.approx(matern_kernel(1.5, 2, v, u))
        shift = np.array([[0.2, 0.1]])
        assert matern_kernel(1.5, 2, u + shift, v + shift) == pytest.approx(
            matern_kernel(1.5, 2, u, v)
        )

    def test_unnormalized_variance_matches_spectral_mass(self):
        # numeric radial integral of the spectral density, d = 2
        alpha, d = 1.5, 2
        integrand = lambda r: 2 * np.pi * r * (1 + r * r) ** (-(alpha + d / 2))
        mass, _ = scipy.integrate.quad(integrand, 0, np.inf)
        assert matern_variance(alpha, d) == pytest.approx(mass, rel=1e-10)
        k0 = matern_kernel(alpha, d, [[0.0, 0.0]], [[0.0, 0.0]], unit_variance=False)
        assert k0 == pytest.approx(mass, rel=1e-10)

    def test_rejects_nonpositive_alpha(self):
        with pytest.raises(ValueError):
            matern_kernel(-0.5, 1, [[0.0]], [[0.0]])


class TestGram:
    def test_single_point(self):
        g = gram(KernelSpec.ibm(0), [[0.0]])
        assert g.entries.shape == (1, 1)
        assert g.entries[0, 0] == pytest.approx(ibm_kernel(0, 0.0, 0.0))

    def test_ibm_two_points(self):
        g = gram(KernelSpec.ibm(0), [[-1.0], [0.0]])
        assert np.allclose(g.entries, [[1.0, 1.0], [1.0, 2.0]], atol=1e-12)

    def test_matern_random_50_points_psd(self):
        rng = np.random.default_rng(11)
        pts = rng.uniform(-1, 1, size=(50, 2))
        g = gram(KernelSpec.matern(1.5, 2), pts)
        w = np.linalg.eigvalsh(g.entries)
        assert w.min() >= -1e-8 * w.max()

    @pytest.mark.parametrize(
        "spec",
        [KernelSpec.ibm(1), KernelSpec.rl(0.8), KernelSpec.matern(2.5, 1)],
    )
    def test_symmetry_and_psd_on_grid(self, spec):
        g = gram_on_grid(spec, GridSpec(1, 21))
        assert np.allclose(g.entries, g.entries.T, atol=1e-12)
        w = np.linalg.eigvalsh(g.entries)
        assert w.min() >= -1e-8 * w.max()

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            gram(KernelSpec.ibm(0), [[0.0, 0.0]])


class TestFdMatrix:
    def test_constant_maps_to_zero(self):
        grid = GridSpec(1, 11)
        D = fd_matrix(grid)
        assert np.allclose(D @ np.ones(11), 0.0)

    def test_exact_on_affine(self):
        grid = GridSpec(1, 17)
        D = fd_matrix(grid)
        t = grid.axis()
        assert np.allclose(D @ (2.0 * t), 2.0, atol=1e-12)

    def test_quadratic_refinement(self):
        grid = GridSpec(1, 201)
        t = grid.axis()
        D = fd_matrix(grid)
        err = np.max(np.abs(D @ (t**2) - 2 * t))
        assert err <= 1e-3

    def test_2d_axes(self):
        grid = GridSpec(2, 9)
        pts = grid.points()
        f = 3.0 * pts[:, 0] - 2.0 * pts[:, 1]
        D0 = fd_matrix(grid, axis=0)
        D1 = fd_matrix(grid, axis=1)
        assert np.allclose(D0 @ f, 3.0, atol=1e-12)
        assert np.allclose(D1 @ f, -2.0, atol=1e-12)

    def test_too_coarse_grid_rejected(self):
        with pytest.raises(ValueError):
            GridSpec(1, 2)


class TestGridFunction:
    def test_interp_1d_exact_at_nodes(self):
        grid = GridSpec(1, 21)
        f = GridFunction(grid, np.sin(grid.axis()))
        assert np.allclose(f.interp(grid.points()), f.values)

    def test_interp_2d_bilinear_bounds(self):
        grid = GridSpec(2, 9)
        rng = np.random.default_rng(0)
        vals = rng.uniform(-1, 1, size=grid.n_nodes)
        f = GridFunction(grid, vals)
        pts = rng.uniform(-1, 1, size=(200, 2))
        out = f.interp(pts)
        assert out.max() <= vals.max() + 1e-12
        assert out.min() >= vals.min() - 1e-12

    def test_interp_2d_exact_on_multilinear(self):
        grid = GridSpec(2, 9)
        pts = grid.points()
        vals = 0.5 + 0.25 * pts[:, 0] - 0.125 * pts[:, 1] + 0.75 * pts[:, 0] * pts[:, 1]
        f = GridFunction(grid, vals)
        rng = np.random.default_rng(1)
        q = rng.uniform(-1, 1, size=(100, 2))
        expect = 0.5 + 0.25 * q[:, 0] - 0.125 * q[:, 1] + 0.75 * q[:, 0] * q[:, 1]
        assert np.allclose(f.interp(q), expect, atol=1e-12)

    def test_out_of_domain_rejected(self):
        grid = GridSpec(1, 5)
        f = GridFunction(grid, np.zeros(5))
        with pytest.raises(ValueError):
            f.interp([[1.00001]])

    def test_csv_round_trip(self, tmp_path):
        grid = GridSpec(1, 7)
        f = GridFunction(grid, np.linspace(-0.5, 0.5, 7))
        path = tmp_path / "f.csv"
        f.to_csv(path)
        g = GridFunction.from_csv(path)
        assert g.grid == grid
        assert np.array_equal(g.values, f.values)
        header = path.read_text().splitlines()[0]
        assert header == "# grid dim=1 m=7"
