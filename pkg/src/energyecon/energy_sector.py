"""Energy-sector planning: surplus schedules, capital paths, EROI identities.

Energy goods recover their content one period after production, so today's
output decision weighs tomorrow's marginal utility of energy against
today's marginal transfer. At an interior optimum the marginal transfer of
an energy good equals the one-step discount factor times its content,
which ties the discount factor to the reciprocal of marginal EROI.

Prime movers are producible goods whose services persist under geometric
decay. Their value is the discounted stream of scarcity costs their
services will earn; production runs to the point where marginal transfer
matches that stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costs import (
    average_cost,
    cheapest_linear_input,
    conditional_demand,
    marginal_cost,
    output_at_marginal_cost,
)
from .errors import InfeasibleError
from .model import LINEAR, EconomyScenario


def one_step_discounts(lam) -> np.ndarray:
    """beta[t] = lam[t+1]/lam[t]; the final entry has no successor and is nan."""

    lam = np.asarray(lam, dtype=float)
    betas = np.full(len(lam), np.nan)
    betas[:-1] = lam[1:] / lam[:-1]
    return betas


def power_scarcity_cost(discount: float, energy_content,
                        marginal_productivity, direct_transfer: float) -> float:
    """Scarcity value of one unit of prime-mover service at the energy margin.

    The service could have produced energy worth its recoverable content
    next period net of the direct transfer it costs, all discounted one
    step. With several energy goods the net margins are averaged over
    them. Never negative: idle capacity is free.
    """

    content = np.atleast_1d(np.asarray(energy_content, dtype=float))
    productivity = np.atleast_1d(np.asarray(marginal_productivity, dtype=float))
    net = content * productivity - direct_transfer
    return max(0.0, discount * float(np.mean(net)))


@dataclass(frozen=True)
class EroiReport:
    """Marginal and average energy return per unit invested, plus the
    one-step discount the marginal return implies."""

    meroi: float
    aeroi: float | None
    discount: float


def eroi_and_discount(energy_content: float, marginal_transfer: float,
                      average_transfer: float | None = None) -> EroiReport:
    """EROI figures for an energy good.

    Marginal EROI is recoverable content per unit of marginal transfer;
    average EROI uses the average transfer when one is supplied. At an
    interior optimum the reciprocal of marginal EROI is the discount
    factor.
    """

    if marginal_transfer == 0.0:
        raise ZeroDivisionError("marginal transfer is zero; EROI is unbounded")
    aeroi = None
    if average_transfer is not None:
        if average_transfer == 0.0:
            raise ZeroDivisionError("average transfer is zero; EROI is unbounded")
        aeroi = energy_content / average_transfer
    meroi = energy_content / marginal_transfer
    return EroiReport(meroi=meroi, aeroi=aeroi, discount=1.0 / meroi)


def endowment_path(production, initial_endowment: float, depreciation: float) -> np.ndarray:
    """Service endowment per period under geometric decay.

    Units built in period t serve from t+1 on; the initial endowment
    serves from period 1. endowment[t] = production[t-1] + d * endowment[t-1].
    """

    production = np.asarray(production, dtype=float)
    T = len(production)
    path = np.zeros(T)
    if T == 0:
        return path
    path[0] = initial_endowment
    for t in range(1, T):
        path[t] = production[t - 1] + depreciation * path[t - 1]
    return path


def aggregate_power(scenario: EconomyScenario, endowments) -> np.ndarray:
    """Total deliverable power per period: rating times standing stock."""

    T = scenario.horizon
    total = np.zeros(T)
    for pm in scenario.prime_movers:
        total += pm.power_rate * np.asarray(endowments[pm.id], dtype=float)
    return total


# ---------------------------------------------------------------------------
# surplus plan
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SurplusPlan:
    """Energy production schedule and the net surplus it finances.

    surplus[t] is the recoverable inflow from last period's output minus
    the energy sector's own direct transfers this period. The last
    period's output is worthless inside the horizon and is zero; its
    marginal transfer is reported as zero and its EROI entries as nan.
    """

    production: dict
    inputs: dict
    surplus: np.ndarray
    direct_cost: np.ndarray
    tau: dict
    tau_avg: dict
    meroi: dict
    aeroi: dict
    betas: np.ndarray
    degenerate_horizon: bool = False


def plan_energy_surplus(scenario: EconomyScenario, lam, phi, capacity=None) -> SurplusPlan:
    """Choose energy output so marginal transfer meets discounted content.

    lam is the marginal-utility path; phi maps prime mover id to its
    scarcity-cost path. Supply with a flat marginal transfer below the
    discounted content is capped by service capacity (pass the actual
    endowment paths when known) rather than letting the schedule run
    away; the scarcity costs settle the rest.
    """

    T = scenario.horizon
    betas = one_step_discounts(np.asarray(lam, dtype=float))
    production = {}
    inputs = {}
    tau = {}
    tau_avg = {}
    meroi = {}
    aeroi = {}
    direct_cost = np.zeros(T)
    recoverable = np.zeros(T)

    if capacity is None:
        capacity = _capacity_paths(scenario, phi, T)

    for good in scenario.energy_goods:
        tech = scenario.technologies[good.id]
        q = np.zeros(T)
        tg = np.zeros(T)
        ta = np.zeros(T)
        x_by_pm = {l: np.zeros(T) for l in tech.support()}
        for t in range(T - 1):
            prices = {l: _price(scenario, l, phi, t) for l in tech.support()}
            level = betas[t] * good.energy_content
            q[t] = _supply_at_level(tech, level, prices, {l: capacity[l][t] for l in tech.support()})
            if q[t] > 0.0:
                dem = conditional_demand(tech, q[t], prices)
                for l, v in dem.inputs.items():
                    x_by_pm[l][t] = v
                    direct_cost[t] += scenario.prime_mover(l).epsilon * v
                tg[t] = marginal_cost(tech, q[t], prices)
                ta[t] = dem.cost / q[t]
        # output in the final period recovers beyond the horizon: worthless
        production[good.id] = q
        inputs[good.id] = x_by_pm
        tau[good.id] = tg
        tau_avg[good.id] = ta
        with np.errstate(divide="ignore", invalid="ignore"):
            m = np.where(tg > 0.0, good.energy_content / np.where(tg > 0.0, tg, 1.0), np.nan)
            a = np.where(ta > 0.0, good.energy_content / np.where(ta > 0.0, ta, 1.0), np.nan)
        m[T - 1] = np.nan
        a[T - 1] = np.nan
        meroi[good.id] = m
        aeroi[good.id] = a
        recoverable[0] += good.energy_content * good.initial_stock
        recoverable[1:] += good.energy_content * q[:-1]

    surplus = recoverable - direct_cost
    return SurplusPlan(
        production=production,
        inputs=inputs,
        surplus=surplus,
        direct_cost=direct_cost,
        tau=tau,
        tau_avg=tau_avg,
        meroi=meroi,
        aeroi=aeroi,
        betas=betas,
        degenerate_horizon=(T == 1),
    )


def _price(scenario, pm_id, phi, t):
    base = scenario.prime_mover(pm_id).epsilon
    if phi is None:
        return base
    path = phi.get(pm_id)
    if path is None:
        return base
    return base + float(np.atleast_1d(path)[t])


def _capacity_paths(scenario, phi, T):
    # best-effort capacity from initial endowments when no plan exists yet
    caps = {}
    for pm in scenario.prime_movers:
        caps[pm.id] = np.full(T, max(pm.initial_endowment, 1.0))
    return caps


def _supply_at_level(tech, level, prices, capacity_services):
    if level <= 0.0 or not np.isfinite(level):
        return 0.0
    q = output_at_marginal_cost(tech, level, prices)
    if q == 0.0 and tech.form == LINEAR:
        # level within rounding of the flat margin counts as on it
        l = cheapest_linear_input(tech, prices)
        if level >= prices[l] / (tech.scale * tech.exponents[l]) * (1.0 - 1e-9):
            q = np.inf
    if np.isinf(q):
        l = cheapest_linear_input(tech, prices)
        q = tech.scale * tech.exponents[l] * capacity_services.get(l, 0.0)
    return float(q)


# ---------------------------------------------------------------------------
# capital plan
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CapitalPlan:
    """Prime-mover build schedule against discounted scarcity-cost streams.

    value_streams[l][t] is what one unit built in t earns over its
    remaining life: scarcity costs from t+1 on, decayed and discounted.
    Nothing built in the final period has any life left, so its value is
    zero and so is its production.
    """

    production: dict
    inputs: dict
    value_streams: dict
    endowments: dict


def capital_value_streams(scenario: EconomyScenario, lam, phi) -> dict:
    lam = np.asarray(lam, dtype=float)
    T = scenario.horizon
    streams = {}
    for pm in scenario.prime_movers:
        path = np.atleast_1d(np.asarray(phi.get(pm.id, np.zeros(T)), dtype=float))
        v = np.zeros(T)
        for t in range(T):
            acc = 0.0
            for j in range(t + 1, T):
                acc += (lam[j] / lam[t]) * path[j] * pm.depreciation ** (j - t - 1)
            v[t] = acc
        streams[pm.id] = v
    return streams


def plan_capital(scenario: EconomyScenario, lam, phi) -> CapitalPlan:
    """Build prime movers to the point where marginal transfer meets value."""

    T = scenario.horizon
    streams = capital_value_streams(scenario, lam, phi)
    production = {}
    inputs = {}
    endowments = {}
    for pm in scenario.prime_movers:
        tech = scenario.technologies.get(pm.id)
        q = np.zeros(T)
        x_by_pm = {}
        if tech is not None:
            x_by_pm = {l: np.zeros(T) for l in tech.support()}
            for t in range(T):
                level = streams[pm.id][t]
                if level <= 0.0:
                    continue
                prices = {l: _price(scenario, l, phi, t) for l in tech.support()}
                supply = output_at_marginal_cost(tech, level, prices)
                if np.isinf(supply):
                    raise InfeasibleError(
                        f"constant-margin technology for {pm.id} is strictly profitable; "
                        "the build schedule is unbounded"
                    )
                q[t] = supply
                if supply > 0.0:
                    for l, v in conditional_demand(tech, supply, prices).inputs.items():
                        x_by_pm[l][t] = v
        production[pm.id] = q
        inputs[pm.id] = x_by_pm
        endowments[pm.id] = endowment_path(q, pm.initial_endowment, pm.depreciation)
    return CapitalPlan(
        production=production, inputs=inputs, value_streams=streams, endowments=endowments
    )


def sector_average_transfer(scenario, good_id, quantity, phi, t):
    """Average transfer per unit at the scarcity-adjusted service prices."""

    tech = scenario.technologies[good_id]
    prices = {l: _price(scenario, l, phi, t) for l in tech.support()}
    return average_cost(tech, quantity, prices)
