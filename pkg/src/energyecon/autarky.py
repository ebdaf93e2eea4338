"""Whole-economy coordination: one agent, no trade.

The equilibrium is a fixed point in two price-like objects: the marginal
utility of surplus energy per period, and the scarcity cost of each prime
mover's services per period. Given those, every quantity follows in
closed form: energy output equates marginal transfer to discounted
content, prime-mover builds equate marginal transfer to the discounted
scarcity-cost stream, and consumption equates marginal utility to the
marginal transfer of each final good. The map then re-clears the service
markets and re-prices the surplus budget, damped until stationary.

Marginal utilities iterate in logs so the stopping rule is relative.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .allocation import AllocationPlan
from .costs import (
    _cd_parts,
    cheapest_linear_input,
    conditional_demand,
    marginal_cost,
    output_at_marginal_cost,
)
from .energy_sector import (
    CapitalPlan,
    SurplusPlan,
    aggregate_power,
    capital_value_streams,
    one_step_discounts,
    plan_capital,
    plan_energy_surplus,
)
from .errors import InfeasibleError, NoConvergenceError
from .model import (
    LINEAR,
    EconomyScenario,
    SolutionBundle,
    ensure_valid,
    eval_production,
)
from .numerics import KktResiduals, SolverSettings, fixed_point_iterate
from .producer import TransferDecomposition

PHI_CAP_FACTOR = 1e12


@dataclass(frozen=True)
class AutarkyEquilibrium:
    bundle: SolutionBundle
    energy: SurplusPlan
    capital: CapitalPlan
    allocation: AllocationPlan
    decomposition: dict  # good -> TransferDecomposition
    discounts: np.ndarray  # [t, j] = lam[j]/lam[t]
    iterations: int
    residual: float
    kkt: KktResiduals
    degenerate_horizon: bool = False

    @property
    def lam(self):
        return self.bundle.lam

    @property
    def tau(self):
        return self.bundle.tau

    @property
    def phi(self):
        return self.bundle.phi

    @property
    def quantities(self):
        return self.bundle.quantities

    @property
    def utility(self):
        return self.bundle.utility


def discount_factors(lam) -> np.ndarray:
    """Upper-triangular matrix of relative marginal utilities.

    entry [t, j] = lam[j] / lam[t] for j >= t, zero below the diagonal.
    """

    lam = np.asarray(lam, dtype=float)
    T = len(lam)
    out = np.zeros((T, T))
    for t in range(T):
        out[t, t:] = lam[t:] / lam[t]
    return out


def final_demand(tech, weight: float, lam_t: float, prices) -> float:
    """Utility-maximizing output level for one final good in one period."""

    if weight <= 0.0:
        return 0.0
    if tech.form == LINEAR:
        return weight / (lam_t * marginal_cost(tech, 1.0, prices))
    _, s, log_p = _cd_parts(tech, prices)
    return float(np.exp(s * np.log(weight / lam_t) + np.log(tech.scale) + log_p))


def consumer_foc_residual(scenario: EconomyScenario, quantities, lam, tau) -> float:
    """Worst relative gap between marginal utility per unit and the transfer price."""

    worst = 0.0
    lam = np.asarray(lam, dtype=float)
    for f in scenario.final_goods:
        w = np.asarray(f.weights, dtype=float)
        q = np.asarray(quantities[f.id], dtype=float)
        tg = np.asarray(tau[f.id], dtype=float)
        for t in range(scenario.horizon):
            if w[t] <= 0.0 or tg[t] <= 0.0:
                continue
            worst = max(worst, abs(w[t] / (q[t] * lam[t]) - tg[t]) / tg[t])
    return worst


def euler_residual(scenario: EconomyScenario, quantities, lam, tau) -> float:
    """Worst relative violation of the intertemporal consumption condition.

    Marginal utility growth must track discounted transfer-price growth
    between every pair of periods with positive weights.
    """

    worst = 0.0
    lam = np.asarray(lam, dtype=float)
    for f in scenario.final_goods:
        w = np.asarray(f.weights, dtype=float)
        q = np.asarray(quantities[f.id], dtype=float)
        tg = np.asarray(tau[f.id], dtype=float)
        for t in range(scenario.horizon):
            for j in range(t + 1, scenario.horizon):
                if min(w[t], w[j]) <= 0.0 or min(tg[t], tg[j]) <= 0.0:
                    continue
                lhs = (w[j] / q[j]) / (w[t] / q[t])
                rhs = (lam[j] / lam[t]) * tg[j] / tg[t]
                worst = max(worst, abs(lhs - rhs) / rhs)
    return worst


def oracle_utility_gap(scenario: EconomyScenario, equilibrium,
                       resolution: int | None = None, span=(0.25, 2.5)) -> float:
    """Best brute-force utility minus the solved utility, per period.

    Grids each period's final-good bundle around the solved quantities and
    keeps points whose transfer cost at the solved service prices fits the
    period surplus. Positive values mean some feasible grid point beats
    the solve; anything at or below zero confirms dominance up to grid
    spacing. The gap is relative to the period's utility scale.
    """

    from .numerics import grid_oracle

    bundle = equilibrium.bundle
    if resolution is None:
        resolution = scenario.settings.grid_resolution
    worst = -np.inf
    for t in range(scenario.horizon):
        goods = [f for f in scenario.final_goods if f.weights[t] > 0.0]
        if not goods:
            continue
        prices = {l: scenario.prime_mover(l).epsilon + bundle.phi[l][t]
                  for l in bundle.phi}
        unit_costs = []
        for f in goods:
            tech = scenario.technologies[f.id]
            if tech.form == LINEAR:
                l_star = cheapest_linear_input(tech, prices)
                mc = prices[l_star] / (tech.scale * tech.exponents[l_star])
                unit_costs.append(("linear", mc, None))
            else:
                _, s, log_p = _cd_parts(tech, prices)
                unit_costs.append(("cd", s, np.log(tech.scale) + log_p))
        weights = np.array([f.weights[t] for f in goods])
        budget = bundle.surplus[t] * (1.0 + 1e-9) + 1e-12

        def objective(points):
            return np.log(points) @ weights

        def cost_of(points):
            total = np.zeros(len(points))
            for i, (kind, a, b) in enumerate(unit_costs):
                q = points[:, i]
                if kind == "linear":
                    total += a * q
                else:
                    total += a * np.exp((np.log(q) - b) / a)
            return total

        bounds = []
        for f in goods:
            q_star = bundle.quantities[f.id][t]
            bounds.append((max(1e-12, span[0] * q_star), span[1] * q_star))
        best = grid_oracle(objective, bounds, resolution=resolution,
                           predicate=lambda pts: cost_of(pts) <= budget, mode="max")
        u_eq = float(weights @ np.log([bundle.quantities[f.id][t] for f in goods]))
        worst = max(worst, (best.value - u_eq) / max(1.0, abs(u_eq)))
    return worst


# ---------------------------------------------------------------------------
# the coordination map
# ---------------------------------------------------------------------------


class _Coordinator:
    def __init__(self, scenario: EconomyScenario, settings: SolverSettings):
        self.sc = scenario
        self.settings = settings
        self.T = scenario.horizon
        self.pms = sorted(pm.id for pm in scenario.prime_movers)
        self.eps = {pm.id: pm.epsilon for pm in scenario.prime_movers}
        self.phi_cap = PHI_CAP_FACTOR * max(self.eps.values())
        self.weight_sums = np.zeros(self.T)
        self.scale_weight_sums = np.zeros(self.T)
        for f in scenario.final_goods:
            w = np.asarray(f.weights, dtype=float)
            s = scenario.technologies[f.id].returns_scale
            self.weight_sums += w
            self.scale_weight_sums += s * w

    # -- state packing ------------------------------------------------------

    def pack(self, lam, phi):
        parts = [np.log(lam)]
        for l in self.pms:
            parts.append(np.asarray(phi[l], dtype=float))
        return np.concatenate(parts)

    def unpack(self, v):
        T = self.T
        lam = np.exp(v[:T])
        phi = {}
        for i, l in enumerate(self.pms):
            phi[l] = np.clip(v[T * (i + 1): T * (i + 2)], 0.0, None)
        return lam, phi

    # -- demand pieces at candidate prices ----------------------------------

    def _on_flat_margin(self, tech, level, prices):
        """Whether level sits at or above a linear technology's flat margin."""

        l_star = cheapest_linear_input(tech, prices)
        mc0 = prices[l_star] / (tech.scale * tech.exponents[l_star])
        return level >= mc0 * (1.0 - 1e-9)

    def _period_demand(self, t, prices, lam, betas, streams, endow_t=None):
        """Service demand by prime mover, plus quantities, at given prices."""

        sc = self.sc
        totals = {l: 0.0 for l in self.pms}
        quantities = {}
        for f in sc.final_goods:
            tech = sc.technologies[f.id]
            q = final_demand(tech, float(f.weights[t]), lam[t], prices)
            quantities[f.id] = q
            if q > 0.0:
                for l, v in conditional_demand(tech, q, prices).inputs.items():
                    totals[l] += v
        flat_energy = []
        for e in sc.energy_goods:
            tech = sc.technologies[e.id]
            q = 0.0
            if t < self.T - 1:
                level = betas[t] * e.energy_content
                q = output_at_marginal_cost(tech, level, prices)
                on_flat = np.isinf(q) or (
                    q == 0.0
                    and tech.form == LINEAR
                    and level > 0.0
                    and self._on_flat_margin(tech, level, prices)
                )
                if on_flat:
                    if tech.form != LINEAR or endow_t is None:
                        raise InfeasibleError(
                            f"energy technology for {e.id} has a flat margin below "
                            "the discounted content; the schedule is unbounded"
                        )
                    # quantity comes from whatever service capacity is left,
                    # not from the producer's own first-order condition
                    flat_energy.append(e.id)
                    quantities[e.id] = 0.0
                    continue
            quantities[e.id] = q
            if q > 0.0:
                for l, v in conditional_demand(tech, q, prices).inputs.items():
                    totals[l] += v
        for pm in sc.prime_movers:
            tech = sc.technologies.get(pm.id)
            q = 0.0
            if tech is not None:
                level = streams[pm.id][t]
                if level > 0.0:
                    q = output_at_marginal_cost(tech, level, prices)
                    if np.isinf(q):
                        raise InfeasibleError(
                            f"build technology for {pm.id} has a flat margin below "
                            "its service value; the schedule is unbounded"
                        )
            quantities[pm.id] = q
            if q > 0.0:
                for l, v in conditional_demand(tech, q, prices).inputs.items():
                    totals[l] += v
        for eid in sorted(flat_energy):
            tech = sc.technologies[eid]
            l_star = cheapest_linear_input(tech, prices)
            resid = max(0.0, endow_t.get(l_star, 0.0) - totals[l_star])
            quantities[eid] = tech.scale * tech.exponents[l_star] * resid
            # absorb the residual, plus a nudge that keeps the market reading
            # "binding" so clearing lands on top of the flat stretch
            totals[l_star] = (
                totals[l_star] + resid + 1e-9 * max(1.0, endow_t.get(l_star, 0.0))
            )
        return totals, quantities

    def _clear_period(self, t, lam, betas, streams, endow_t, phi_start):
        """Scarcity costs clearing this period's service markets."""

        phi_t = dict(phi_start)
        tol = 1e-11 * max(1.0, max(endow_t.values(), default=1.0))

        def totals_at(phi_map):
            prices = {l: self.eps[l] + phi_map[l] for l in self.pms}
            return self._period_demand(t, prices, lam, betas, streams, endow_t)[0]

        for _sweep in range(60):
            moved = 0.0
            for l in self.pms:
                trial = dict(phi_t)
                trial[l] = 0.0
                excess0 = totals_at(trial)[l] - endow_t[l]
                if excess0 <= tol:
                    moved = max(moved, phi_t[l])
                    phi_t[l] = 0.0
                    continue

                def excess(v, l=l):
                    trial = dict(phi_t)
                    trial[l] = v
                    return totals_at(trial)[l] - endow_t[l]

                hi = max(phi_t[l], self.eps[l])
                while excess(hi) > 0.0:
                    hi *= 2.0
                    if hi > self.phi_cap:
                        raise InfeasibleError(
                            f"no scarcity cost clears {l} in period {t + 1}; "
                            "the endowments cannot carry the demanded program"
                        )
                from scipy.optimize import brentq

                new = float(brentq(excess, 0.0, hi, xtol=1e-14, rtol=1e-15))
                moved = max(moved, abs(new - phi_t[l]))
                phi_t[l] = new
            if moved <= 1e-12 * max(1.0, max(phi_t.values(), default=1.0)):
                break
        return phi_t

    # -- one full sweep -----------------------------------------------------

    def sweep(self, state):
        sc = self.sc
        T = self.T
        lam, phi = self.unpack(state)
        betas = one_step_discounts(lam)
        streams = capital_value_streams(sc, lam, phi)

        # service supply paths from builds at incoming prices
        capital = plan_capital(sc, lam, phi)
        endow = capital.endowments

        new_phi = {l: np.zeros(T) for l in self.pms}
        quantities_by_t = []
        for t in range(T):
            endow_t = {l: endow[l][t] for l in self.pms}
            phi_t = self._clear_period(
                t, lam, betas, streams, endow_t, {l: phi[l][t] for l in self.pms}
            )
            for l in self.pms:
                new_phi[l][t] = phi_t[l]
            prices = {l: self.eps[l] + phi_t[l] for l in self.pms}
            quantities_by_t.append(
                self._period_demand(t, prices, lam, betas, streams, endow_t)[1]
            )

        # surplus budget at the cleared quantities
        surplus = np.zeros(T)
        for e in sc.energy_goods:
            surplus[0] += e.energy_content * e.initial_stock
            for t in range(1, T):
                surplus[t] += e.energy_content * quantities_by_t[t - 1][e.id]
        for t in range(T):
            prices = {l: self.eps[l] + new_phi[l][t] for l in self.pms}
            for e in sc.energy_goods:
                q = quantities_by_t[t][e.id]
                if q > 0.0:
                    dem = conditional_demand(sc.technologies[e.id], q, prices)
                    surplus[t] -= sum(self.eps[l] * v for l, v in dem.inputs.items())

        new_lam = np.zeros(T)
        for t in range(T):
            if surplus[t] <= 0.0:
                if lam[t] >= 1e18:
                    raise InfeasibleError(
                        f"net energy surplus in period {t + 1} is {surplus[t]:.6g} J "
                        "even with consumption priced out; the energy sector "
                        "cannot finance itself"
                    )
                # deficit: consumption value is still too low; push it up and
                # let the next sweep re-balance rather than giving up here
                new_lam[t] = lam[t] * 2.0
            else:
                new_lam[t] = self.scale_weight_sums[t] / surplus[t]
        return self.pack(new_lam, new_phi)


def solve_autarky(scenario: EconomyScenario, settings: SolverSettings | None = None) -> AutarkyEquilibrium:
    """Solve the one-agent economy to a stationary coordinated program."""

    ensure_valid(scenario)
    settings = settings or scenario.settings
    coord = _Coordinator(scenario, settings)
    T = scenario.horizon

    lam0 = np.ones(T)
    phi0 = {l: np.zeros(T) for l in coord.pms}
    start = coord.pack(lam0, phi0)
    # a stiff intertemporal loop can make the damped map oscillate; halving
    # the damping twice before giving up keeps well-behaved runs unchanged
    result = None
    err = None
    trial = settings
    for _attempt in range(3):
        try:
            result = fixed_point_iterate(coord.sweep, start, settings=trial)
            break
        except NoConvergenceError as caught:
            err = caught
            if caught.best is not None:
                start = np.asarray(caught.best, dtype=float)
            trial = replace(trial, damping=0.5 * trial.damping)
    if result is None:
        raise NoConvergenceError(
            "autarky coordination did not settle: " + str(err),
            best=err.best,
            residual=err.residual,
            iterations=err.iterations,
        ) from err
    lam, phi = coord.unpack(result.point)

    return _assemble(scenario, settings, coord, lam, phi, result)


def _assemble(scenario, settings, coord, lam, phi, fp_result):
    T = scenario.horizon
    betas = one_step_discounts(lam)
    capital = plan_capital(scenario, lam, phi)
    streams = capital.value_streams

    quantities = {}
    allocations = {}
    tau = {}
    tau_avg = {}

    # finals from the consumer condition
    for f in scenario.final_goods:
        tech = scenario.technologies[f.id]
        q = np.zeros(T)
        alloc = {l: np.zeros(T) for l in tech.support()}
        tg = np.zeros(T)
        ta = np.zeros(T)
        for t in range(T):
            prices = {l: coord.eps[l] + phi[l][t] for l in coord.pms}
            q[t] = final_demand(tech, float(f.weights[t]), lam[t], prices)
            if q[t] > 0.0:
                dem = conditional_demand(tech, q[t], prices)
                for l, v in dem.inputs.items():
                    alloc[l][t] = v
                tg[t] = marginal_cost(tech, q[t], prices)
                ta[t] = dem.cost / q[t]
        quantities[f.id] = q
        allocations[f.id] = alloc
        tau[f.id] = tg
        tau_avg[f.id] = ta

    # services left for the energy sector once consumption and building are
    # served; flat-margin supply runs off this instead of its own optimum
    residual = {}
    for l in coord.pms:
        left = capital.endowments[l].astype(float).copy()
        for f in scenario.final_goods:
            left -= allocations[f.id].get(l, 0.0)
        for pm in scenario.prime_movers:
            used = capital.inputs.get(pm.id, {}).get(l)
            if used is not None:
                left -= used
        residual[l] = np.clip(left, 0.0, None)
    energy = plan_energy_surplus(scenario, lam, phi, capacity=residual)

    for e in scenario.energy_goods:
        quantities[e.id] = energy.production[e.id]
        allocations[e.id] = energy.inputs[e.id]
        tau[e.id] = energy.tau[e.id]
        tau_avg[e.id] = energy.tau_avg[e.id]

    for pm in scenario.prime_movers:
        quantities[pm.id] = capital.production[pm.id]
        allocations[pm.id] = capital.inputs.get(pm.id, {})
        tau[pm.id] = streams[pm.id]
        ta = np.zeros(T)
        tech = scenario.technologies.get(pm.id)
        if tech is not None:
            for t in range(T):
                qv = capital.production[pm.id][t]
                if qv > 0.0:
                    prices = {l: coord.eps[l] + phi[l][t] for l in coord.pms}
                    ta[t] = conditional_demand(tech, qv, prices).cost / qv
        tau_avg[pm.id] = ta

    surplus = energy.surplus
    spend_marginal = np.zeros(T)
    for f in scenario.final_goods:
        spend_marginal += tau[f.id] * quantities[f.id]
    with np.errstate(divide="ignore", invalid="ignore"):
        theta_alloc = np.where(spend_marginal > 0.0, 1.0 - surplus / np.where(spend_marginal > 0.0, spend_marginal, 1.0), 0.0)
    theta_alloc = np.clip(theta_alloc, 0.0, None)
    assignments = {
        f.id: tau[f.id] / (1.0 - theta_alloc) for f in scenario.final_goods
    }
    allocation = AllocationPlan(
        quantities={f.id: quantities[f.id].copy() for f in scenario.final_goods},
        assignments=assignments,
        effective={f.id: (1.0 - theta_alloc) * assignments[f.id] for f in scenario.final_goods},
        over_assignment=theta_alloc,
        spending={f.id: assignments[f.id] * quantities[f.id] for f in scenario.final_goods},
    )

    utility = 0.0
    for f in scenario.final_goods:
        w = np.asarray(f.weights, dtype=float)
        for t in range(T):
            if w[t] > 0.0:
                utility += w[t] * np.log(quantities[f.id][t])

    bundle = SolutionBundle(
        scenario=scenario,
        quantities=quantities,
        allocations=allocations,
        lam=lam,
        tau=tau,
        tau_avg=tau_avg,
        phi=phi,
        surplus=surplus,
        endowments=capital.endowments,
        over_assignment=theta_alloc,
        assignments=assignments,
        aggregate_power=aggregate_power(scenario, capital.endowments),
        utility=float(utility),
    )

    decomposition = _decompose(scenario, coord, bundle)
    kkt = _equilibrium_residuals(scenario, coord, bundle, betas, streams)
    return AutarkyEquilibrium(
        bundle=bundle,
        energy=energy,
        capital=capital,
        allocation=allocation,
        decomposition=decomposition,
        discounts=discount_factors(lam),
        iterations=fp_result.iterations,
        residual=fp_result.residual,
        kkt=kkt,
        degenerate_horizon=(T == 1),
    )


def _decompose(scenario, coord, bundle):
    out = {}
    T = scenario.horizon
    for good_id, tech in scenario.technologies.items():
        q = np.asarray(bundle.quantities[good_id], dtype=float)
        psi = np.zeros(T)
        theta = np.zeros(T)
        mu = np.zeros(T)
        ta = np.asarray(bundle.tau_avg[good_id], dtype=float)
        tg = np.asarray(bundle.tau[good_id], dtype=float)
        for t in range(T):
            if q[t] <= 0.0:
                continue
            x_t = {l: bundle.allocations[good_id][l][t] for l in bundle.allocations[good_id]}
            used = [l for l, v in x_t.items() if v > 0.0]
            if not used:
                continue
            ev = eval_production(tech, x_t)
            g_req = ev.marginal_requirement
            psi[t] = float(np.mean([coord.eps[l] * g_req[l] for l in used]))
            theta[t] = float(np.mean([bundle.phi[l][t] * g_req[l] for l in used]))
            if ta[t] > 0.0:
                mu[t] = tg[t] / ta[t] - 1.0
        out[good_id] = TransferDecomposition(
            good_id=good_id, psi=psi, theta=theta, tau=tg, tau_avg=ta, mu=mu
        )
    return out


def _equilibrium_residuals(scenario, coord, bundle, betas, streams):
    T = scenario.horizon
    stat = 0.0
    primal = 0.0
    dual = 0.0
    comp = 0.0

    stat = max(stat, consumer_foc_residual(scenario, bundle.quantities, bundle.lam, bundle.tau))

    for e in scenario.energy_goods:
        for t in range(T - 1):
            level = betas[t] * e.energy_content
            tg = bundle.tau[e.id][t]
            if level > 0.0 and bundle.quantities[e.id][t] > 0.0:
                stat = max(stat, abs(tg - level) / level)
    for pm in scenario.prime_movers:
        if pm.id not in scenario.technologies:
            continue
        for t in range(T):
            level = streams[pm.id][t]
            qv = bundle.quantities[pm.id][t]
            if level > 0.0 and qv > 0.0:
                prices = {l: coord.eps[l] + bundle.phi[l][t] for l in coord.pms}
                mc = marginal_cost(scenario.technologies[pm.id], qv, prices)
                stat = max(stat, abs(mc - level) / level)

    # service markets: feasibility and complementary slackness
    for t in range(T):
        used = {l: 0.0 for l in coord.pms}
        for good_id, alloc in bundle.allocations.items():
            for l, path in alloc.items():
                used[l] += path[t]
        for l in coord.pms:
            cap = bundle.endowments[l][t]
            scale = max(1.0, cap)
            primal = max(primal, (used[l] - cap) / scale)
            dual = max(dual, -bundle.phi[l][t])
            comp = max(comp, bundle.phi[l][t] * max(0.0, cap - used[l]) / scale)

    # the surplus budget binds wherever marginal utility is positive
    spend = bundle.spending()
    for t in range(T):
        primal = max(primal, abs(spend[t] - bundle.surplus[t]) / max(1.0, bundle.surplus[t]))

    return KktResiduals(
        stationarity=stat,
        primal_feasibility=max(primal, 0.0),
        dual_feasibility=dual,
        complementarity=comp,
    )
