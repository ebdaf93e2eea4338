"""Solver kernels: stationarity systems, fixed points, differences, grids."""

import math

import numpy as np
import pytest

from energyecon.errors import NoConvergenceError, NoFeasibleGridPointError
from energyecon.numerics import (
    SolverSettings,
    finite_diff_gradient,
    fixed_point_iterate,
    grid_oracle,
    kkt_solve,
)

TIGHT = SolverSettings(tolerance=1e-12)


class TestKktSolve:
    def test_interior_optimum_has_zero_multiplier(self):
        res = kkt_solve(lambda x: np.array([2 * (x[0] - 3)]), [0.5],
                        inequalities=[lambda x: -x[0]], settings=TIGHT)
        assert res.point[0] == pytest.approx(3.0, abs=1e-8)
        assert res.ineq_multipliers[0] == pytest.approx(0.0, abs=1e-8)

    def test_active_bound_multiplier(self):
        res = kkt_solve(lambda x: np.array([2 * (x[0] - 3)]), [0.5],
                        inequalities=[lambda x: x[0] - 1.0], settings=TIGHT)
        assert res.point[0] == pytest.approx(1.0, abs=1e-8)
        assert res.ineq_multipliers[0] == pytest.approx(4.0, abs=1e-6)

    def test_equality_constrained_quadratic(self):
        res = kkt_solve(lambda x: 2 * x, [0.0, 0.0],
                        equalities=[lambda x: x[0] + x[1] - 2.0], settings=TIGHT)
        assert res.point == pytest.approx([1.0, 1.0], abs=1e-8)
        assert res.eq_multipliers[0] == pytest.approx(-2.0, abs=1e-6)

    def test_residuals_reported_small(self):
        res = kkt_solve(lambda x: 2 * x, [3.0, -1.0],
                        equalities=[lambda x: x[0] + x[1] - 2.0],
                        inequalities=[lambda x: -x[0]], settings=TIGHT)
        assert res.residuals.worst < 1e-8


class TestFixedPoint:
    def test_affine_contraction(self):
        res = fixed_point_iterate(lambda x: x / 2 + 1, [0.0],
                                  SolverSettings(tolerance=1e-10, damping=1.0))
        assert res.point[0] == pytest.approx(2.0, abs=1e-9)

    def test_identity_map_stops_at_once(self):
        res = fixed_point_iterate(lambda x: x, [4.2], SolverSettings())
        assert res.iterations == 1
        assert res.point[0] == 4.2

    def test_iteration_count_tracks_contraction_rate(self):
        # |x_k - 2| shrinks by exactly 1/2 per undamped step from x_0 = 0,
        # so the residual 0.5 * |x - 2| crosses tol within ceil(log2(1/tol)) + 1
        tol = 1e-8
        res = fixed_point_iterate(lambda x: x / 2 + 1, [0.0],
                                  SolverSettings(tolerance=tol, damping=1.0))
        bound = math.ceil(math.log(1.0 / tol, 2.0)) + 1
        assert res.iterations <= bound

    def test_residual_measured_on_raw_map(self):
        settings = SolverSettings(tolerance=1e-9, damping=0.1)
        res = fixed_point_iterate(lambda x: x / 2 + 1, [0.0], settings)
        assert abs((res.point[0] / 2 + 1) - res.point[0]) < 1e-9

    def test_budget_exhaustion_carries_best_iterate(self):
        with pytest.raises(NoConvergenceError) as err:
            fixed_point_iterate(lambda x: x + 1.0, [0.0],
                                SolverSettings(max_iterations=5))
        assert err.value.iterations == 5
        assert err.value.best is not None


class TestFiniteDiff:
    def test_square(self):
        g = finite_diff_gradient(lambda x: float(x[0] ** 2), [3.0], step=1e-4)
        assert g[0] == pytest.approx(6.0, abs=1e-6)

    def test_constant(self):
        g = finite_diff_gradient(lambda x: 7.0, [3.0, 1.0])
        assert g == pytest.approx([0.0, 0.0], abs=1e-12)

    def test_log(self):
        g = finite_diff_gradient(lambda x: float(np.log(x[0])), [2.0], step=1e-5)
        assert g[0] == pytest.approx(0.5, abs=1e-6)


class TestGridOracle:
    def test_budget_constrained_log(self):
        res = grid_oracle(lambda p: np.log(p[:, 0]), [(0.1, 30.0)],
                          resolution=1000,
                          predicate=lambda p: 5.0 * p[:, 0] <= 100.0)
        spacing = (30.0 - 0.1) / 999
        assert abs(res.point[0] - 20.0) <= spacing + 1e-12

    def test_empty_feasible_set(self):
        with pytest.raises(NoFeasibleGridPointError):
            grid_oracle(lambda p: p[:, 0], [(0.0, 1.0)], resolution=50,
                        predicate=lambda p: p[:, 0] > 2.0)

    def test_matches_stationarity_solver_on_two_variables(self):
        def obj(p):
            return -((p[:, 0] - 1.2) ** 2 + (p[:, 1] - 0.7) ** 2)

        res = grid_oracle(obj, [(0.0, 2.0), (0.0, 2.0)], resolution=201)
        kkt = kkt_solve(lambda x: 2 * np.array([x[0] - 1.2, x[1] - 0.7]),
                        [0.0, 0.0], settings=TIGHT)
        spacing = 2.0 / 200
        assert np.max(np.abs(res.point - kkt.point)) <= spacing

    def test_deterministic_over_repeats(self):
        runs = [grid_oracle(lambda p: np.sin(p[:, 0]) * p[:, 1],
                            [(0.0, 3.0), (0.0, 2.0)], resolution=97)
                for _ in range(2)]
        assert runs[0].value == runs[1].value
        assert np.array_equal(runs[0].point, runs[1].point)

    def test_dimension_cap(self):
        with pytest.raises(ValueError):
            grid_oracle(lambda p: p[:, 0], [(0.0, 1.0)] * 5, resolution=3)
