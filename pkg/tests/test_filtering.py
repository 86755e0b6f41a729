"""Filtering objective, direct/Gauss-Seidel solvers, Neumann approximation."""

import numpy as np
import pytest

from _helpers import cycle_adjacency, random_normalized_adjacency

from gsnet import (
    FilterConfig,
    GraphFilter,
    approx_gauss_seidel_step,
    approx_solve,
    direct_solve,
    gauss_seidel_solve,
    neumann_inverse_approx,
    normalize_adjacency,
    normalized_laplacian,
    relative_residual,
    smoothing_gradient,
    smoothing_objective,
    triangular_split,
)


def setup_case(rng, n, beta, f=3):
    na = random_normalized_adjacency(rng, n)
    lap = normalized_laplacian(na)
    split = triangular_split(na, beta)
    x = rng.normal(size=(n, f))
    return na, lap, split, x


class TestObjective:
    def test_h_equals_x_leaves_only_smoothness(self):
        rng = np.random.default_rng(0)
        na, lap, _, x = setup_case(rng, 6, 0.3)
        expected = 0.5 * 0.3 * np.trace(x.T @ lap @ x)
        assert smoothing_objective(x, x, lap, 0.3) == pytest.approx(expected, rel=1e-12)

    def test_beta_zero_is_half_squared_fidelity(self):
        rng = np.random.default_rng(1)
        na, lap, _, x = setup_case(rng, 5, 0.0)
        h = rng.normal(size=x.shape)
        assert smoothing_objective(h, x, lap, 0.0) == pytest.approx(
            0.5 * np.sum((h - x) ** 2), rel=1e-12)

    def test_trace_term_equals_edge_difference_sum(self):
        """tr(H^T L H) sums ||h_i/sqrt(d_i) - h_j/sqrt(d_j)||^2 over edges."""
        rng = np.random.default_rng(2)
        # connected 4-node graph: path 0-1-2-3 plus edge 1-3
        a = np.zeros((4, 4))
        for i, j in ((0, 1), (1, 2), (2, 3), (1, 3)):
            a[i, j] = a[j, i] = 1.0
        na = normalize_adjacency(a)
        lap = normalized_laplacian(na)
        h = rng.normal(size=(4, 3))
        scaled = h / np.sqrt(na.degree)[:, None]
        edge_sum = sum(np.sum((scaled[i] - scaled[j]) ** 2)
                       for i, j in ((0, 1), (1, 2), (2, 3), (1, 3)))
        assert np.trace(h.T @ lap @ h) == pytest.approx(edge_sum, rel=1e-10)

    def test_nonnegative(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            na, lap, _, x = setup_case(rng, 8, 0.4)
            h = rng.normal(size=x.shape)
            assert smoothing_objective(h, x, lap, 0.4) >= 0.0

    def test_shape_mismatch_raises(self):
        lap = np.eye(3)
        with pytest.raises(ValueError):
            smoothing_objective(np.zeros((3, 2)), np.zeros((3, 3)), lap, 0.1)


class TestGradient:
    def test_beta_zero_reduces_to_fidelity_gradient(self):
        rng = np.random.default_rng(4)
        na, lap, _, x = setup_case(rng, 5, 0.0)
        h = rng.normal(size=x.shape)
        assert np.allclose(smoothing_gradient(h, x, lap, 0.0), h - x, atol=1e-15)

    def test_vanishes_at_direct_solution(self):
        rng = np.random.default_rng(5)
        na, lap, _, x = setup_case(rng, 10, 0.35)
        h = direct_solve(x, lap, 0.35)
        grad = smoothing_gradient(h, x, lap, 0.35)
        assert np.linalg.norm(grad) <= 1e-10

    def test_matches_finite_differences(self):
        """Central differences of the objective, step 1e-5, relative 1e-6."""
        rng = np.random.default_rng(6)
        na, lap, _, x = setup_case(rng, 4, 0.25, f=2)
        h = rng.normal(size=x.shape)
        analytic = smoothing_gradient(h, x, lap, 0.25)
        step = 1e-5
        numeric = np.zeros_like(h)
        for i in range(h.shape[0]):
            for j in range(h.shape[1]):
                hp = h.copy()
                hp[i, j] += step
                hm = h.copy()
                hm[i, j] -= step
                numeric[i, j] = (smoothing_objective(hp, x, lap, 0.25)
                                 - smoothing_objective(hm, x, lap, 0.25)) / (2 * step)
        denom = np.maximum(np.abs(analytic), 1.0)
        assert np.max(np.abs(analytic - numeric) / denom) <= 1e-6


class TestDirectSolve:
    def test_beta_zero_identity(self):
        rng = np.random.default_rng(7)
        na, lap, _, x = setup_case(rng, 6, 0.0)
        assert np.allclose(direct_solve(x, lap, 0.0), x, atol=1e-14)

    def test_regular_graph_preserves_constants(self):
        lap = normalized_laplacian(normalize_adjacency(cycle_adjacency(7)))
        x = np.full((7, 1), 3.5)
        assert np.allclose(direct_solve(x, lap, 0.4), x, atol=1e-12)

    def test_residual_small_on_random_inputs(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            n = int(rng.integers(2, 40))
            na, lap, split, x = setup_case(rng, n, 0.5)
            h = direct_solve(x, lap, 0.5)
            assert relative_residual(np.eye(n) + 0.5 * lap, h, x) <= 1e-12

    def test_global_minimizer(self):
        rng = np.random.default_rng(9)
        na, lap, _, x = setup_case(rng, 8, 0.3)
        h_star = direct_solve(x, lap, 0.3)
        best = smoothing_objective(h_star, x, lap, 0.3)
        for _ in range(20):
            h = rng.normal(size=x.shape)
            assert best <= smoothing_objective(h, x, lap, 0.3) + 1e-12


class TestGaussSeidel:
    def test_matches_direct_solve(self):
        rng = np.random.default_rng(10)
        for beta in (0.1, 0.2, 0.5):
            for _ in range(5):
                n = int(rng.integers(2, 51))
                na, lap, split, x = setup_case(rng, n, beta, f=int(rng.integers(1, 6)))
                report = gauss_seidel_solve(x, split, FilterConfig(beta=beta))
                assert report.converged
                expected = direct_solve(x, lap, beta)
                assert np.linalg.norm(report.solution - expected) <= 1e-8

    def test_zero_input_converges_in_one_iteration(self):
        rng = np.random.default_rng(11)
        na, _, split, _ = setup_case(rng, 6, 0.3)
        report = gauss_seidel_solve(np.zeros((6, 2)), split, FilterConfig(beta=0.3))
        assert report.iterations == 1
        assert np.array_equal(report.solution, np.zeros((6, 2)))
        assert report.converged

    def test_beta_zero_converges_in_one_iteration(self):
        rng = np.random.default_rng(12)
        na, _, split, x = setup_case(rng, 6, 0.0)
        report = gauss_seidel_solve(x, split, FilterConfig(beta=0.0))
        assert report.iterations == 1
        assert np.allclose(report.solution, x, atol=1e-14)

    def test_residual_monotone_nonincreasing(self):
        # manual sweep loop so intermediate residuals are visible
        from scipy.linalg import solve_triangular

        rng = np.random.default_rng(13)
        na, lap, split, x = setup_case(rng, 12, 0.5)
        system = split.system_matrix()
        lower = split.scale * np.eye(12) - split.upper.T
        h = x.copy()
        residuals = []
        for _ in range(25):
            h = solve_triangular(lower, split.upper @ h + x, lower=True)
            residuals.append(relative_residual(system, h, x))
        assert all(b <= a + 1e-15 for a, b in zip(residuals, residuals[1:]))

    def test_non_convergence_reported_not_raised(self):
        rng = np.random.default_rng(14)
        na, _, split, x = setup_case(rng, 20, 0.5)
        report = gauss_seidel_solve(x, split, FilterConfig(beta=0.5, tol=1e-14, max_iters=2))
        assert not report.converged
        assert report.iterations == 2

    def test_beta_mismatch_rejected(self):
        rng = np.random.default_rng(15)
        na, _, split, x = setup_case(rng, 5, 0.2)
        with pytest.raises(ValueError, match="beta"):
            gauss_seidel_solve(x, split, FilterConfig(beta=0.3))


class TestNeumannApprox:
    def test_beta_zero_gives_identity(self):
        rng = np.random.default_rng(16)
        na, _, split, _ = setup_case(rng, 5, 0.0)
        assert np.array_equal(neumann_inverse_approx(split), np.eye(5))

    def test_error_shrinks_quadratically_when_halving_beta(self):
        rng = np.random.default_rng(17)
        for _ in range(8):
            n = int(rng.integers(4, 40))
            na = random_normalized_adjacency(rng, n)

            def err(beta):
                split = triangular_split(na, beta)
                exact = np.linalg.inv(split.scale * np.eye(n) - split.upper.T)
                return np.linalg.norm(neumann_inverse_approx(split) - exact)

            e4, e2, e1 = err(0.4), err(0.2), err(0.1)
            assert 3.0 <= e4 / e2 <= 5.0
            assert 3.0 <= e2 / e1 <= 5.0

    def test_spectral_radius_of_perturbation_equals_beta(self):
        """The lower-triangular perturbation has all eigenvalues at -beta."""
        rng = np.random.default_rng(18)
        for beta in (0.1, 0.2, 0.5):
            for _ in range(5):
                n = int(rng.integers(2, 51))
                na = random_normalized_adjacency(rng, n)
                split = triangular_split(na, beta)
                m = split.upper.T - beta * np.eye(n)
                assert np.array_equal(np.triu(m, k=1), np.zeros((n, n)))
                eigs = np.linalg.eigvals(m)
                assert abs(np.max(np.abs(eigs)) - beta) <= 1e-12


class TestApproxStep:
    def test_beta_zero_returns_x(self):
        rng = np.random.default_rng(19)
        na, _, split, x = setup_case(rng, 6, 0.0)
        h = rng.normal(size=x.shape)
        assert np.allclose(approx_gauss_seidel_step(h, x, split), x, atol=1e-15)

    def test_step_from_zero_is_kernel_times_x(self):
        rng = np.random.default_rng(20)
        na, _, split, x = setup_case(rng, 6, 0.3)
        k = neumann_inverse_approx(split)
        out = approx_gauss_seidel_step(np.zeros_like(x), x, split)
        assert np.allclose(out, k @ x, atol=1e-14)

    def test_linear_in_inputs(self):
        rng = np.random.default_rng(21)
        na, _, split, _ = setup_case(rng, 7, 0.4)
        h1, h2 = rng.normal(size=(2, 7, 3))
        x1, x2 = rng.normal(size=(2, 7, 3))
        a, b = 1.7, -0.6
        lhs = approx_gauss_seidel_step(a * h1 + b * h2, a * x1 + b * x2, split)
        rhs = a * approx_gauss_seidel_step(h1, x1, split) \
            + b * approx_gauss_seidel_step(h2, x2, split)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12

    def test_fixed_point_bias_decreases_with_beta(self):
        rng = np.random.default_rng(22)
        na = random_normalized_adjacency(rng, 10)
        lap = normalized_laplacian(na)
        x = rng.normal(size=(10, 3))
        deviations = []
        for beta in (0.4, 0.2, 0.1):
            split = triangular_split(na, beta)
            h = x.copy()
            for _ in range(300):
                h = approx_gauss_seidel_step(h, x, split)
            deviations.append(np.linalg.norm(h - direct_solve(x, lap, beta)))
        assert deviations[0] > deviations[1] > deviations[2]


class TestGraphFilter:
    def test_transform_matches_gauss_seidel(self):
        rng = np.random.default_rng(23)
        a = (random_normalized_adjacency(rng, 8).entries > 0).astype(float)
        x = rng.normal(size=(8, 4))
        filt = GraphFilter(beta=0.2).fit(a)
        report = gauss_seidel_solve(x, filt.split_, filt.config_)
        assert np.array_equal(filt.transform(x), report.solution)

    def test_direct_and_exact_methods_agree(self):
        rng = np.random.default_rng(24)
        a = (random_normalized_adjacency(rng, 10).entries > 0).astype(float)
        x = rng.normal(size=(10, 2))
        exact = GraphFilter(beta=0.3, method="exact").fit(a).transform(x)
        direct = GraphFilter(beta=0.3, method="direct").fit(a).transform(x)
        assert np.allclose(exact, direct, atol=1e-8)

    def test_approx_method_converges_to_biased_fixed_point(self):
        rng = np.random.default_rng(25)
        a = (random_normalized_adjacency(rng, 8).entries > 0).astype(float)
        x = rng.normal(size=(8, 2))
        filt = GraphFilter(beta=0.2, method="approx").fit(a)
        report = filt.solve(x)
        assert report.final_residual < 0.05  # small bias, not exact
        assert report.converged == (report.final_residual <= filt.tol)

    def test_get_params_round_trip(self):
        filt = GraphFilter(beta=0.4, tol=1e-8, max_iters=50, method="direct")
        params = filt.get_params()
        clone = GraphFilter(**params)
        assert clone.get_params() == params

    def test_unfitted_transform_raises(self):
        with pytest.raises(RuntimeError):
            GraphFilter().transform(np.zeros((3, 1)))
