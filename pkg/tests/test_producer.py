"""Transfer-minimizing production program and its marginal decomposition."""

import numpy as np
import pytest

from conftest import draw_feasible_producer_problems, random_producer_problem
from energyecon.costs import conditional_demand
from energyecon.errors import InfeasibleError
from energyecon.model import COBB_DOUGLAS, LINEAR, ProductionTech
from energyecon.numerics import KktResiduals, SolverSettings, grid_oracle
from energyecon.producer import (
    ProducerProblem,
    ProducerSolution,
    decompose_marginal_transfer,
    solve_transfer_min,
)


def one_good_linear(target, endowment, epsilon=10.0, scale=2.0):
    # f(x) = scale * x, one mover
    return ProducerProblem(
        targets={"grain": np.array([target])},
        endowments={"mule": np.array([endowment])},
        lam=np.array([1.0]),
        technologies={
            "grain": ProductionTech("grain", LINEAR, scale, {"mule": 1.0})
        },
        epsilon={"mule": epsilon},
    )


class TestLinearSingleMover:
    def test_slack_capacity_prices_at_direct_transfer(self):
        sol = solve_transfer_min(one_good_linear(target=4.0, endowment=10.0))
        assert sol.converged
        assert sol.allocations["grain"]["mule"][0] == pytest.approx(2.0, abs=1e-9)
        assert sol.tau["grain"][0] == pytest.approx(5.0, abs=1e-9)
        assert sol.phi["mule"][0] == pytest.approx(0.0, abs=1e-9)
        assert sol.objective == pytest.approx(20.0, abs=1e-8)

    def test_binding_capacity_adds_scarcity_cost(self):
        # at an exactly-binding single-input capacity the scarcity cost is
        # only pinned up to the relation f' * tau = epsilon + phi
        sol = solve_transfer_min(one_good_linear(target=4.0, endowment=2.0))
        assert sol.converged
        assert sol.allocations["grain"]["mule"][0] == pytest.approx(2.0, abs=1e-9)
        phi = sol.phi["mule"][0]
        assert phi >= -1e-12
        assert 2.0 * sol.tau["grain"][0] == pytest.approx(10.0 + phi, abs=1e-8)

    def test_target_beyond_capacity_is_infeasible(self):
        with pytest.raises(InfeasibleError):
            solve_transfer_min(one_good_linear(target=4.2, endowment=2.0))

    def test_periods_solve_independently(self):
        prob = ProducerProblem(
            targets={"grain": np.array([4.0, 1.0, 6.0])},
            endowments={"mule": np.array([10.0, 10.0, 10.0])},
            lam=np.array([1.0, 0.9, 0.8]),
            technologies={
                "grain": ProductionTech("grain", LINEAR, 2.0, {"mule": 1.0})
            },
            epsilon={"mule": 10.0},
        )
        sol = solve_transfer_min(prob)
        assert np.allclose(sol.allocations["grain"]["mule"], [2.0, 0.5, 3.0])
        assert np.allclose(sol.tau["grain"], [5.0, 5.0, 5.0])


class TestGridCrossCheck:
    def test_two_goods_two_movers_matches_exhaustive_search(self):
        techs = {
            "a": ProductionTech("a", COBB_DOUGLAS, 1.0, {"u": 0.5, "v": 0.3}),
            "b": ProductionTech("b", COBB_DOUGLAS, 1.2, {"u": 0.4, "v": 0.4}),
        }
        epsilon = {"u": 2.0, "v": 3.0}
        targets = {"a": 1.0, "b": 1.5}

        free = {
            l: sum(
                conditional_demand(techs[g], targets[g], epsilon).inputs[l]
                for g in targets
            )
            for l in epsilon
        }
        # squeeze one mover below the unconstrained demand, leave the other
        # roomy so substitution keeps the targets feasible
        endow = {"u": 0.85 * free["u"], "v": 2.0 * free["v"]}

        prob = ProducerProblem(
            targets={g: np.array([q]) for g, q in targets.items()},
            endowments={l: np.array([e]) for l, e in endow.items()},
            lam=np.array([1.0]),
            technologies=techs,
            epsilon=epsilon,
        )
        sol = solve_transfer_min(prob)
        assert sol.converged
        assert sol.phi["u"][0] > 1e-6
        assert sol.phi["v"][0] == pytest.approx(0.0, abs=1e-9)

        def u_alloc_to_v(x_u, good):
            tech = techs[good]
            rem = targets[good] / (tech.scale * x_u ** tech.exponents["u"])
            return rem ** (1.0 / tech.exponents["v"])

        def objective(pts):
            xa_u, xb_u = pts[:, 0], pts[:, 1]
            xa_v = u_alloc_to_v(xa_u, "a")
            xb_v = u_alloc_to_v(xb_u, "b")
            return epsilon["u"] * (xa_u + xb_u) + epsilon["v"] * (xa_v + xb_v)

        def feasible(pts):
            xa_u, xb_u = pts[:, 0], pts[:, 1]
            ok_u = xa_u + xb_u <= endow["u"]
            ok_v = u_alloc_to_v(xa_u, "a") + u_alloc_to_v(xb_u, "b") <= endow["v"]
            return ok_u & ok_v

        bu = endow["u"]
        oracle = grid_oracle(
            objective,
            bounds=[(1e-3 * bu, 0.999 * bu)] * 2,
            resolution=300,
            predicate=feasible,
            mode="min",
        )
        assert sol.objective <= oracle.value + 1e-9
        assert sol.objective == pytest.approx(oracle.value, rel=1e-3)


class TestRandomizedInstances:
    def test_ten_draws_satisfy_optimality_conditions(self):
        for prob, sol in draw_feasible_producer_problems(
            seed=7, count=10, solver=solve_transfer_min
        ):
            assert sol.converged
            assert sol.residuals.worst < 1e-6
            T = prob.horizon
            for l, cap in prob.endowments.items():
                used = np.zeros(T)
                for g in sol.allocations:
                    used += sol.allocations[g].get(l, np.zeros(T))
                assert np.all(used <= np.atleast_1d(cap) + 1e-6)
                for t in range(T):
                    if sol.phi[l][t] > 1e-6:
                        slack = float(np.atleast_1d(cap)[t]) - used[t]
                        assert abs(slack) < 1e-6

    def test_generator_is_deterministic(self):
        a = random_producer_problem(np.random.default_rng(3))
        b = random_producer_problem(np.random.default_rng(3))
        assert sorted(a.targets) == sorted(b.targets)
        for g in a.targets:
            assert np.array_equal(a.targets[g], b.targets[g])
        for l in a.endowments:
            assert np.array_equal(a.endowments[l], b.endowments[l])


class TestDecomposition:
    def test_slack_linear_good_has_no_scarcity_or_markup(self):
        prob = one_good_linear(target=4.0, endowment=10.0)
        sol = solve_transfer_min(prob)
        dec = decompose_marginal_transfer(prob, sol)["grain"]
        assert dec.psi[0] == pytest.approx(5.0, abs=1e-9)
        assert dec.theta[0] == pytest.approx(0.0, abs=1e-9)
        assert dec.tau[0] == pytest.approx(5.0, abs=1e-9)
        assert dec.tau_avg[0] == pytest.approx(5.0, abs=1e-9)
        assert dec.mu[0] == pytest.approx(0.0, abs=1e-6)

    def test_scarcity_component_scales_with_marginal_requirement(self):
        # f' = 2 so one more unit needs 1/2 a service unit; with a direct
        # transfer of 10 and a scarcity cost of 3 the split is 5 + 1.5
        prob = one_good_linear(target=4.0, endowment=2.0)
        sol = ProducerSolution(
            allocations={"grain": {"mule": np.array([2.0])}},
            tau={"grain": np.array([6.5])},
            phi={"mule": np.array([3.0])},
            objective=20.0,
            residuals=KktResiduals(0.0, 0.0, 0.0, 0.0),
            period_residuals=[],
            method=["handbuilt"],
        )
        dec = decompose_marginal_transfer(prob, sol)["grain"]
        assert dec.psi[0] == pytest.approx(5.0, abs=1e-9)
        assert dec.theta[0] == pytest.approx(1.5, abs=1e-9)
        assert dec.tau[0] == pytest.approx(dec.psi[0] + dec.theta[0], abs=1e-9)
        assert dec.tau_avg[0] == pytest.approx(6.5, abs=1e-9)
        assert dec.mu[0] == pytest.approx(0.0, abs=1e-6)

    def test_equilibrium_decomposition_identities(self, default_scenario, default_eq):
        for gid, dec in default_eq.decomposition.items():
            targets = default_eq.quantities.get(gid)
            for t in range(default_scenario.horizon):
                if targets is None or np.atleast_1d(targets)[t] <= 1e-12:
                    continue
                assert dec.tau[t] == pytest.approx(
                    dec.psi[t] + dec.theta[t], rel=1e-6, abs=1e-8
                )
                assert dec.tau[t] == pytest.approx(
                    dec.tau_avg[t] * (1.0 + dec.mu[t]), rel=1e-4, abs=1e-6
                )
