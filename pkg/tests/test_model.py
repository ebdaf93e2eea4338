"""Production and utility primitives plus scenario validation."""

import math

import numpy as np
import pytest

from energyecon.errors import NonFiniteMarginalError, UtilityDomainError, ValidationError
from energyecon.model import (
    COBB_DOUGLAS,
    LINEAR,
    PrimeMoverSpec,
    ProductionTech,
    UtilityModel,
    eval_production,
    eval_utility,
    validate_scenario,
)
from energyecon.scenario_io import scenario_from_dict

from conftest import scenario_doc


def cd(scale, **exponents):
    return ProductionTech(good_id="g", form=COBB_DOUGLAS, scale=scale, exponents=exponents)


def linear(scale, **exponents):
    return ProductionTech(good_id="g", form=LINEAR, scale=scale, exponents=exponents)


class TestEvalProduction:
    def test_square_root_pair(self):
        ev = eval_production(cd(1.0, a=0.5, b=0.5), {"a": 4.0, "b": 9.0})
        assert ev.output == pytest.approx(6.0, abs=1e-12)

    def test_linear_output_and_marginals(self):
        ev = eval_production(linear(2.0, a=1.0), {"a": 3.0})
        assert ev.output == pytest.approx(6.0)
        assert ev.marginal_productivity["a"] == pytest.approx(2.0)
        assert ev.marginal_requirement["a"] == pytest.approx(0.5)

    def test_zero_input_zero_output(self):
        assert eval_production(cd(3.0, a=0.4, b=0.3), {"a": 0.0, "b": 0.0},
                               with_marginals=False).output == 0.0

    def test_boundary_marginal_refused(self):
        with pytest.raises(NonFiniteMarginalError):
            eval_production(cd(1.0, a=0.5), {"a": 0.0})

    def test_requirement_inverts_productivity(self):
        ev = eval_production(cd(2.0, a=0.3, b=0.5), {"a": 2.0, "b": 5.0})
        for l, f in ev.marginal_productivity.items():
            assert ev.marginal_requirement[l] * f == pytest.approx(1.0, rel=1e-14)

    def test_decreasing_returns_along_rays(self):
        tech = cd(1.5, a=0.4, b=0.3)
        rng = np.random.default_rng(3)
        for _ in range(20):
            x = {"a": float(rng.uniform(0.1, 5)), "b": float(rng.uniform(0.1, 5))}
            once = eval_production(tech, x, with_marginals=False).output
            twice = eval_production(tech, {k: 2 * v for k, v in x.items()},
                                    with_marginals=False).output
            assert twice < 2 * once

    def test_marginals_match_finite_differences(self):
        tech = cd(1.3, a=0.35, b=0.45)
        rng = np.random.default_rng(11)
        for _ in range(50):
            x = {"a": float(rng.uniform(0.2, 8)), "b": float(rng.uniform(0.2, 8))}
            ev = eval_production(tech, x)
            for l in x:
                h = 1e-6 * x[l]
                up = dict(x, **{l: x[l] + h})
                dn = dict(x, **{l: x[l] - h})
                fd = (eval_production(tech, up, with_marginals=False).output
                      - eval_production(tech, dn, with_marginals=False).output) / (2 * h)
                assert ev.marginal_productivity[l] == pytest.approx(fd, rel=1e-6)


class TestEvalUtility:
    def util(self, weights):
        return UtilityModel.weighted_log(weights)

    def test_log_of_e(self):
        u = self.util({"b": np.array([1.0])})
        ev = eval_utility(u, {"b": [math.e]})
        assert ev.value == pytest.approx(1.0, rel=1e-15)
        assert ev.marginals["b"][0] == pytest.approx(1.0 / math.e, rel=1e-15)

    def test_weighted_log_of_one(self):
        u = self.util({"b": np.array([2.0])})
        ev = eval_utility(u, {"b": [1.0]})
        assert ev.value == 0.0
        assert ev.marginals["b"][0] == pytest.approx(2.0)

    def test_zero_quantity_rejected(self):
        u = self.util({"b": np.array([1.0])})
        with pytest.raises(UtilityDomainError):
            eval_utility(u, {"b": [0.0]})

    def test_marginals_match_finite_differences(self):
        u = self.util({"b": np.array([1.0, 0.5]), "c": np.array([2.0, 1.0])})
        q = {"b": np.array([3.0, 4.0]), "c": np.array([0.7, 2.2])}
        ev = eval_utility(u, q)
        for g in q:
            for t in range(2):
                h = 1e-6 * q[g][t]
                up = {k: v.copy() for k, v in q.items()}
                dn = {k: v.copy() for k, v in q.items()}
                up[g][t] += h
                dn[g][t] -= h
                fd = (eval_utility(u, up).value - eval_utility(u, dn).value) / (2 * h)
                assert ev.marginals[g][t] == pytest.approx(fd, rel=1e-6)


class TestValidateScenario:
    def test_shipped_scenario_is_clean(self, default_scenario):
        assert validate_scenario(default_scenario) == []

    def test_depreciation_above_one_flagged(self):
        doc = scenario_doc("default")
        doc["prime_movers"][0]["depreciation"] = 1.2
        with pytest.raises(ValidationError) as err:
            scenario_from_dict(doc)
        assert "depreciation" in str(err.value)

    def test_increasing_returns_flagged(self):
        doc = scenario_doc("default")
        doc["technologies"]["bread"]["exponents"] = {"engine": 1.5}
        with pytest.raises(ValidationError) as err:
            scenario_from_dict(doc)
        assert "bread" in str(err.value)

    def test_missing_technology_flagged(self):
        doc = scenario_doc("default")
        del doc["technologies"]["engine"]
        with pytest.raises(ValidationError) as err:
            scenario_from_dict(doc)
        assert "engine" in str(err.value)

    def test_direct_transfer_defaults_to_power_rate(self):
        pm = PrimeMoverSpec(id="m", power_rate=7.5, depreciation=0.5)
        assert pm.epsilon == 7.5

    def test_direct_transfer_override(self):
        pm = PrimeMoverSpec(id="m", power_rate=7.5, depreciation=0.5,
                            direct_transfer=3.0)
        assert pm.epsilon == 3.0

    def test_violations_reported_as_list(self, default_scenario):
        report = validate_scenario(default_scenario)
        assert isinstance(report, list)
