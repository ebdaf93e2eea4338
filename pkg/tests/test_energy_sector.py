"""Energy supply scheduling, capital valuation, and the EROI identities."""

import numpy as np
import pytest

from energyecon import scenario_from_dict
from energyecon.energy_sector import (
    aggregate_power,
    capital_value_streams,
    endowment_path,
    eroi_and_discount,
    one_step_discounts,
    plan_capital,
    plan_energy_surplus,
    power_scarcity_cost,
    sector_average_transfer,
)


def small_energy_scenario(horizon=2, stock=5.0):
    return scenario_from_dict(
        {
            "name": "tiny-energy",
            "horizon": horizon,
            "prime_movers": [
                {
                    "id": "mule",
                    "power_rate": 1.0,
                    "depreciation": 0.5,
                    "initial_endowment": 100.0,
                }
            ],
            "energy_goods": [
                {"id": "fuel", "energy_content": 100.0, "initial_stock": stock}
            ],
            "final_goods": [{"id": "bread", "weights": [1.0] * horizon}],
            "technologies": {
                "mule": {"form": "cobb_douglas", "scale": 0.05, "exponents": {"mule": 0.5}},
                "fuel": {"form": "cobb_douglas", "scale": 2.0, "exponents": {"mule": 0.5}},
                "bread": {"form": "cobb_douglas", "scale": 2.0, "exponents": {"mule": 0.6}},
            },
        }
    )


class TestDiscounts:
    def test_one_step_ratios_with_trailing_nan(self):
        betas = one_step_discounts([2.0, 1.0, 0.5])
        assert betas[0] == pytest.approx(0.5)
        assert betas[1] == pytest.approx(0.5)
        assert np.isnan(betas[2])

    def test_scarcity_cost_discounts_net_content(self):
        # next period one service unit yields 0.5 units of content 100 at a
        # direct transfer of 10; discounted at 0.9 that is worth 36
        assert power_scarcity_cost(0.9, 100.0, 0.5, 10.0) == pytest.approx(36.0)

    def test_scarcity_cost_never_negative(self):
        assert power_scarcity_cost(0.9, 100.0, 0.05, 10.0) == 0.0

    def test_scarcity_cost_averages_over_energy_goods(self):
        value = power_scarcity_cost(0.9, [100.0, 50.0], [0.5, 0.5], 10.0)
        assert value == pytest.approx(0.9 * (40.0 + 15.0) / 2.0)


class TestEroi:
    def test_marginal_return_and_implied_discount(self):
        rep = eroi_and_discount(100.0, 50.0, average_transfer=40.0)
        assert rep.meroi == pytest.approx(2.0)
        assert rep.aeroi == pytest.approx(2.5)
        assert rep.discount == pytest.approx(0.5)

    def test_average_is_optional(self):
        assert eroi_and_discount(100.0, 50.0).aeroi is None

    def test_zero_transfer_is_rejected(self):
        with pytest.raises(ZeroDivisionError):
            eroi_and_discount(100.0, 0.0)
        with pytest.raises(ZeroDivisionError):
            eroi_and_discount(100.0, 50.0, average_transfer=0.0)


class TestEndowmentPath:
    def test_pure_decay(self):
        path = endowment_path([0.0, 0.0, 0.0], 10.0, 0.9)
        assert np.allclose(path, [10.0, 9.0, 8.1])

    def test_builds_arrive_one_period_late(self):
        path = endowment_path([5.0, 4.0, 0.0], 10.0, 0.9)
        assert np.allclose(path, [10.0, 14.0, 12.6 + 4.0])

    def test_aggregate_power_weights_by_rating(self):
        scenario = scenario_from_dict(
            {
                "name": "two-ratings",
                "horizon": 1,
                "prime_movers": [
                    {"id": "engine", "power_rate": 100.0, "depreciation": 0.5},
                    {"id": "mule", "power_rate": 50.0, "depreciation": 0.5},
                ],
                "energy_goods": [{"id": "fuel", "energy_content": 1.0, "initial_stock": 1.0}],
                "final_goods": [{"id": "bread", "weights": [1.0]}],
                "technologies": {
                    "engine": {"form": "linear", "scale": 1.0, "exponents": {"mule": 1.0}},
                    "mule": {"form": "linear", "scale": 1.0, "exponents": {"mule": 1.0}},
                    "fuel": {"form": "linear", "scale": 1.0, "exponents": {"engine": 1.0}},
                    "bread": {"form": "linear", "scale": 1.0, "exponents": {"engine": 1.0}},
                },
            }
        )
        total = aggregate_power(scenario, {"engine": [2.0], "mule": [4.0]})
        assert total[0] == pytest.approx(400.0)


class TestSurplusPlan:
    def test_supply_runs_to_discounted_content(self):
        # beta = 0.5 and content 100 put the margin at 50; the quadratic
        # cost curve 2.5 q^2 reaches that marginal transfer at q = 10
        scenario = small_energy_scenario()
        plan = plan_energy_surplus(scenario, lam=[1.0, 0.5], phi=None)
        assert plan.production["fuel"][0] == pytest.approx(10.0)
        assert plan.production["fuel"][1] == 0.0
        assert plan.tau["fuel"][0] == pytest.approx(50.0)
        assert plan.tau_avg["fuel"][0] == pytest.approx(25.0)
        assert plan.meroi["fuel"][0] == pytest.approx(2.0)
        assert plan.aeroi["fuel"][0] == pytest.approx(4.0)
        assert np.isnan(plan.meroi["fuel"][1])

    def test_surplus_nets_sector_cost_against_recovered_content(self):
        scenario = small_energy_scenario(stock=5.0)
        plan = plan_energy_surplus(scenario, lam=[1.0, 0.5], phi=None)
        # q = 10 needs x = 25 services at a transfer of 10 each
        assert plan.direct_cost[0] == pytest.approx(250.0)
        assert plan.surplus[0] == pytest.approx(100.0 * 5.0 - 250.0)
        assert plan.surplus[1] == pytest.approx(100.0 * 10.0)

    def test_one_period_horizon_produces_nothing(self):
        scenario = small_energy_scenario(horizon=1)
        plan = plan_energy_surplus(scenario, lam=[1.0], phi=None)
        assert plan.degenerate_horizon
        assert np.all(plan.production["fuel"] == 0.0)
        assert plan.surplus[0] == pytest.approx(500.0)

    def test_average_transfer_at_scarcity_prices(self):
        scenario = small_energy_scenario()
        assert sector_average_transfer(scenario, "fuel", 10.0, None, 0) == pytest.approx(25.0)
        bumped = sector_average_transfer(
            scenario, "fuel", 10.0, {"mule": np.array([10.0, 0.0])}, 0
        )
        assert bumped == pytest.approx(50.0)

    def test_equilibrium_energy_supply_prices_at_discounted_content(
        self, default_scenario, default_eq
    ):
        betas = one_step_discounts(default_eq.lam)
        for good in default_scenario.energy_goods:
            tau = default_eq.energy.tau[good.id]
            q = default_eq.energy.production[good.id]
            for t in range(default_scenario.horizon - 1):
                if q[t] > 0.0:
                    assert tau[t] == pytest.approx(
                        betas[t] * good.energy_content, rel=1e-9
                    )

    def test_two_energy_goods_earn_equal_marginal_returns(self, two_energy_eq):
        meroi = two_energy_eq.energy.meroi
        goods = sorted(meroi)
        assert len(goods) == 2
        betas = one_step_discounts(two_energy_eq.lam)
        first, second = (meroi[g] for g in goods)
        for t, (a, b) in enumerate(zip(first, second)):
            if np.isnan(a) or np.isnan(b):
                continue
            assert abs(a - b) < 1e-6
            assert abs(betas[t] * a - 1.0) < 1e-6


class TestCapitalPlan:
    def test_value_stream_discounts_decayed_scarcity(self):
        scenario = small_energy_scenario()
        streams = capital_value_streams(
            scenario, lam=[1.0, 0.5], phi={"mule": np.array([0.0, 20.0])}
        )
        assert streams["mule"][0] == pytest.approx(10.0)
        assert streams["mule"][1] == 0.0

    def test_three_period_stream_uses_survival_weights(self):
        scenario = small_energy_scenario(horizon=3)
        streams = capital_value_streams(
            scenario,
            lam=[1.0, 0.5, 0.25],
            phi={"mule": np.array([0.0, 20.0, 12.0])},
        )
        assert streams["mule"][0] == pytest.approx(0.5 * 20.0 + 0.25 * 12.0 * 0.5)
        assert streams["mule"][1] == pytest.approx(0.5 * 12.0)
        assert streams["mule"][2] == 0.0

    def test_free_capacity_builds_nothing(self):
        scenario = small_energy_scenario()
        plan = plan_capital(scenario, lam=[1.0, 0.5], phi={"mule": np.zeros(2)})
        assert np.all(plan.production["mule"] == 0.0)
        assert np.allclose(plan.endowments["mule"], [100.0, 50.0])

    def test_equilibrium_streams_match_direct_recomputation(
        self, default_scenario, default_eq
    ):
        lam = np.asarray(default_eq.lam, dtype=float)
        T = default_scenario.horizon
        for pm in default_scenario.prime_movers:
            phi = np.asarray(default_eq.phi[pm.id], dtype=float)
            reported = default_eq.capital.value_streams[pm.id]
            for t in range(T):
                acc = 0.0
                for j in range(t + 1, T):
                    acc += (lam[j] / lam[t]) * phi[j] * pm.depreciation ** (j - t - 1)
                assert abs(reported[t] - acc) < 1e-8
