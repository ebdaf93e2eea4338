"""Closed-form cost minimization for the supported technology forms.

Given effective per-service prices for the prime movers, both technology
forms admit exact conditional input demands, total cost, and marginal cost.
Everything downstream (producer clearing, energy-sector planning, capital
planning) leans on these formulas, so they are written once here and cross
checked against brute force in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import InfeasibleError
from .model import COBB_DOUGLAS, LINEAR, ProductionTech


@dataclass(frozen=True)
class CostEval:
    """Cost-minimizing way to hit one output target at given service prices."""

    output: float
    inputs: Mapping[str, float]
    cost: float
    marginal_cost: float


def _cd_parts(tech: ProductionTech, prices):
    support = tech.support()
    s = tech.returns_scale
    log_p = 0.0
    for l in support:
        a = tech.exponents[l]
        w = prices[l]
        if w <= 0.0:
            raise ValueError(f"service price for {l} must be positive")
        log_p += a * np.log(a / w)
    # P = prod((alpha/w)^alpha); cost C(Q) = s * (Q / (A P))**(1/s)
    return support, s, log_p


def conditional_demand(tech: ProductionTech, quantity: float, prices: Mapping[str, float]):
    """Exact cost-minimizing input bundle for one good at one target."""

    if quantity < 0.0:
        raise ValueError("target quantity must be non-negative")

    if tech.form == LINEAR:
        l_star = cheapest_linear_input(tech, prices)
        f_star = tech.scale * tech.exponents[l_star]
        mc = prices[l_star] / f_star
        x = {l: 0.0 for l in tech.support()}
        x[l_star] = quantity / f_star
        return CostEval(output=quantity, inputs=x, cost=mc * quantity, marginal_cost=mc)

    support, s, log_p = _cd_parts(tech, prices)
    if quantity == 0.0:
        x = {l: 0.0 for l in support}
        return CostEval(output=0.0, inputs=x, cost=0.0, marginal_cost=marginal_cost(tech, 0.0, prices))
    # scale factor c solves Q = A c^s P, inputs x_l = c alpha_l / w_l
    log_c = (np.log(quantity) - np.log(tech.scale) - log_p) / s
    c = float(np.exp(log_c))
    x = {l: c * tech.exponents[l] / prices[l] for l in support}
    cost = c * s
    return CostEval(output=quantity, inputs=x, cost=cost, marginal_cost=marginal_cost(tech, quantity, prices))


def marginal_cost(tech: ProductionTech, quantity: float, prices: Mapping[str, float]) -> float:
    """Derivative of the minimized cost in the output target."""

    if tech.form == LINEAR:
        l_star = cheapest_linear_input(tech, prices)
        return prices[l_star] / (tech.scale * tech.exponents[l_star])
    support, s, log_p = _cd_parts(tech, prices)
    if s >= 1.0 - 1e-12:
        # constant returns: flat marginal cost
        return float(np.exp(-(np.log(tech.scale) + log_p)))
    if quantity == 0.0:
        return 0.0
    log_mc = -(np.log(tech.scale) + log_p) / s + (1.0 - s) / s * np.log(quantity)
    return float(np.exp(log_mc))


def output_at_marginal_cost(tech: ProductionTech, level: float, prices: Mapping[str, float]) -> float:
    """Largest output whose marginal cost does not exceed ``level``.

    For decreasing-returns technologies this inverts the marginal cost
    curve. Constant-returns technologies have a flat curve, so the answer
    is zero below it and unbounded above; unbounded demand is the caller's
    problem to cap, signalled here with infinity.
    """

    if level <= 0.0:
        return 0.0
    if tech.form == LINEAR:
        return np.inf if level >= marginal_cost(tech, 0.0, prices) else 0.0
    support, s, log_p = _cd_parts(tech, prices)
    if s >= 1.0 - 1e-12:
        flat = marginal_cost(tech, 1.0, prices)
        return np.inf if level >= flat else 0.0
    log_q = (np.log(level) + (np.log(tech.scale) + log_p) / s) * s / (1.0 - s)
    return float(np.exp(log_q))


def cheapest_linear_input(tech: ProductionTech, prices: Mapping[str, float]) -> str:
    """Lowest cost-per-output input; ties resolve to the first id in sorted order."""

    best = None
    best_cost = np.inf
    for l in sorted(tech.support()):
        f_l = tech.scale * tech.exponents[l]
        cost = prices[l] / f_l
        if best is None or cost < best_cost - 1e-15 * max(1.0, abs(best_cost)):
            best = l
            best_cost = cost
    if best is None:
        raise InfeasibleError(f"technology for {tech.good_id} has no usable input")
    return best


def average_cost(tech: ProductionTech, quantity: float, prices: Mapping[str, float]) -> float:
    """Minimized cost per unit at the target; equals marginal cost at constant returns."""

    if quantity <= 0.0:
        return marginal_cost(tech, quantity, prices)
    ce = conditional_demand(tech, quantity, prices)
    return ce.cost / quantity
