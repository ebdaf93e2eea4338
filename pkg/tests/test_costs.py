"""Conditional input demand and cost curves behind the producer solver."""

import numpy as np
import pytest

from energyecon.costs import (
    average_cost,
    cheapest_linear_input,
    conditional_demand,
    marginal_cost,
    output_at_marginal_cost,
)
from energyecon.model import COBB_DOUGLAS, LINEAR, ProductionTech, eval_production


def cd(scale, **exponents):
    return ProductionTech(good_id="g", form=COBB_DOUGLAS, scale=scale, exponents=exponents)


def linear(scale, **exponents):
    return ProductionTech(good_id="g", form=LINEAR, scale=scale, exponents=exponents)


PRICES = {"a": 2.0, "b": 5.0}


class TestConditionalDemand:
    def test_reproduces_target_output(self):
        tech = cd(1.7, a=0.3, b=0.4)
        for q in (0.5, 2.0, 11.0):
            x = conditional_demand(tech, q, PRICES).inputs
            out = eval_production(tech, x, with_marginals=False).output
            assert out == pytest.approx(q, rel=1e-12)

    def test_spending_shares_follow_exponents(self):
        tech = cd(1.7, a=0.3, b=0.4)
        x = conditional_demand(tech, 3.0, PRICES).inputs
        assert PRICES["a"] * x["a"] / (PRICES["b"] * x["b"]) == pytest.approx(
            0.3 / 0.4, rel=1e-12)

    def test_linear_uses_only_cheapest_input(self):
        tech = linear(2.0, a=1.0, b=3.0)
        # output per Joule: a gives 2/2 = 1, b gives 6/5 = 1.2, so b wins
        assert cheapest_linear_input(tech, PRICES) == "b"
        x = conditional_demand(tech, 12.0, PRICES).inputs
        assert x.get("a", 0.0) == 0.0
        assert x["b"] == pytest.approx(2.0)


class TestMarginalCost:
    def test_matches_cost_derivative(self):
        tech = cd(1.7, a=0.3, b=0.4)

        def cost(q):
            return conditional_demand(tech, q, PRICES).cost

        for q in (0.8, 3.0, 9.0):
            h = 1e-6 * q
            fd = (cost(q + h) - cost(q - h)) / (2 * h)
            assert marginal_cost(tech, q, PRICES) == pytest.approx(fd, rel=1e-7)

    def test_ratio_to_average_is_inverse_returns(self):
        tech = cd(1.7, a=0.3, b=0.4)
        s = 0.7
        for q in (0.5, 4.0):
            mc = marginal_cost(tech, q, PRICES)
            ac = average_cost(tech, q, PRICES)
            assert mc / ac == pytest.approx(1.0 / s, rel=1e-12)

    def test_linear_is_flat(self):
        tech = linear(2.0, a=1.0)
        assert marginal_cost(tech, 1.0, PRICES) == pytest.approx(1.0)
        assert marginal_cost(tech, 100.0, PRICES) == pytest.approx(1.0)
        assert average_cost(tech, 7.0, PRICES) == pytest.approx(1.0)


class TestSupplyAtLevel:
    def test_increasing_marginal_cost_inverts(self):
        tech = cd(1.7, a=0.3, b=0.4)
        for level in (0.5, 2.0, 20.0):
            q = output_at_marginal_cost(tech, level, PRICES)
            assert marginal_cost(tech, q, PRICES) == pytest.approx(level, rel=1e-10)

    def test_flat_margin_is_a_step(self):
        tech = linear(2.0, a=1.0)
        # flat margin at 2/2 = 1 using input a
        assert output_at_marginal_cost(tech, 0.5, PRICES) == 0.0
        assert np.isinf(output_at_marginal_cost(tech, 1.5, PRICES))
