"""Exchange between agents along marginal-energy-transfer curves.

An agent's curve for a good gives the marginal transfer of producing one
more unit, holding everything else at its autarkic program. Trade flows
from the low curve to the high curve: the exporter expands along its
curve, the importer contracts along its own, and the wedge between them
net of carriage is the gain. Volume settles where the wedge equals the
unit carriage cost, or where the importer stops producing altogether.

Carriage is charged to the importer, so the importer's in-hand marginal
transfer exceeds the exporter's by exactly the unit cost at an interior
volume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .costs import cheapest_linear_input, conditional_demand, output_at_marginal_cost
from .errors import InfeasibleError, NoConvergenceError
from .model import LINEAR
from .numerics import DEFAULT_SETTINGS, SolverSettings
from .producer import ProducerProblem, solve_transfer_min


@dataclass(frozen=True)
class MetcCurve:
    """Piecewise-linear marginal transfer as a function of quantity.

    Linear between breakpoints, extended with the end-segment slopes
    beyond them, floored at zero. Integrals are exact for the piecewise
    form.
    """

    quantities: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quantities, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if q.ndim != 1 or q.shape != v.shape or len(q) == 0:
            raise ValueError("curve needs matching 1-d breakpoint arrays")
        if np.any(np.diff(q) <= 0.0):
            raise ValueError("breakpoint quantities must strictly increase")
        object.__setattr__(self, "quantities", q)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, level: float, q_max: float = 1.0):
        return cls(np.array([0.0, q_max]), np.array([level, level]))

    @classmethod
    def linear(cls, intercept: float, slope: float, q_max: float = 1.0):
        return cls(np.array([0.0, q_max]), np.array([intercept, intercept + slope * q_max]))

    def __call__(self, q):
        q_arr = np.asarray(q, dtype=float)
        qs, vs = self.quantities, self.values
        out = np.interp(q_arr, qs, vs)
        if len(qs) > 1:
            s_lo = (vs[1] - vs[0]) / (qs[1] - qs[0])
            s_hi = (vs[-1] - vs[-2]) / (qs[-1] - qs[-2])
            out = np.where(q_arr < qs[0], vs[0] + s_lo * (q_arr - qs[0]), out)
            out = np.where(q_arr > qs[-1], vs[-1] + s_hi * (q_arr - qs[-1]), out)
        out = np.maximum(out, 0.0)
        return float(out) if np.isscalar(q) or q_arr.ndim == 0 else out

    def integral(self, a: float, b: float) -> float:
        """Exact area under the curve from a to b."""

        if b < a:
            return -self.integral(b, a)
        inner = self.quantities[(self.quantities > a) & (self.quantities < b)]
        xs = np.concatenate([[a], inner, [b]])
        ys = self(xs)
        return float(np.trapezoid(ys, xs))


def gains_from_trade(import_value: MetcCurve, export_cost: MetcCurve,
                     quantity: float, unit_transfer_cost: float = 0.0) -> float:
    """Surplus from moving quantity units from exporter to importer.

    The area between the importer's marginal-value curve and the
    exporter's marginal-cost curve over the traded volume, minus total
    carriage.
    """

    if quantity < 0.0:
        raise ValueError("traded quantity cannot be negative")
    return (
        import_value.integral(0.0, quantity)
        - export_cost.integral(0.0, quantity)
        - unit_transfer_cost * quantity
    )


def equalize_metc(import_value: MetcCurve, export_cost: MetcCurve,
                  unit_transfer_cost: float = 0.0):
    """Traded volume at which the value margin meets the cost margin.

    Both curves are functions of the traded quantity. Returns (quantity,
    level), the level being the importer's margin at the crossing. Zero
    trade when the first unit already fails to clear the cost plus
    carriage. Raises when the margins never meet, as with two constant
    curves that never cross.
    """

    def wedge(q):
        return import_value(q) - export_cost(q) - unit_transfer_cost

    if wedge(0.0) <= 0.0:
        return 0.0, float(import_value(0.0))
    hi = float(max(import_value.quantities[-1], export_cost.quantities[-1], 1.0))
    while wedge(hi) > 0.0:
        hi *= 2.0
        if hi > 1e18:
            raise NoConvergenceError(
                "marginal value never falls to marginal cost; no finite crossing",
                best=hi, residual=float(wedge(hi)), iterations=0,
            )
    q = float(optimize.brentq(wedge, 0.0, hi, xtol=1e-14, rtol=8.882e-16))
    return q, float(import_value(q))


# ---------------------------------------------------------------------------
# agents and re-solve machinery
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TradeAgent:
    """A producer frozen at its autarkic program, ready to re-solve.

    weights and lam feed the demand side when consumption is allowed to
    respond to trade; they stay None for pure sourcing swaps.
    """

    name: str
    problem: ProducerProblem
    lam: np.ndarray | None = None
    weights: dict | None = None


def agent_from_equilibrium(name: str, scenario, equilibrium) -> TradeAgent:
    """Freeze an autarky equilibrium into a tradeable producer position."""

    bundle = equilibrium.bundle
    targets = {g: np.asarray(q, dtype=float).copy() for g, q in bundle.quantities.items()}
    endow = {l: np.asarray(p, dtype=float).copy() for l, p in bundle.endowments.items()}
    problem = ProducerProblem(
        targets=targets,
        endowments=endow,
        lam=np.asarray(bundle.lam, dtype=float).copy(),
        technologies=dict(scenario.technologies),
        epsilon={pm.id: pm.epsilon for pm in scenario.prime_movers},
    )
    weights = {f.id: np.asarray(f.weights, dtype=float) for f in scenario.final_goods}
    return TradeAgent(name=name, problem=problem, lam=problem.lam, weights=weights)


def _with_target(problem: ProducerProblem, good: str, t: int, q: float) -> ProducerProblem:
    targets = {g: np.atleast_1d(np.asarray(v, dtype=float)).copy() for g, v in problem.targets.items()}
    targets[good][t] = max(q, 0.0)
    return ProducerProblem(
        targets=targets,
        endowments=problem.endowments,
        lam=problem.lam,
        technologies=problem.technologies,
        epsilon=problem.epsilon,
    )


def marginal_transfer_at(problem: ProducerProblem, good: str, q: float,
                         t: int = 0, settings: SolverSettings = DEFAULT_SETTINGS) -> float:
    """Marginal transfer of the good when its period-t target is q."""

    sol = solve_transfer_min(_with_target(problem, good, t, q), settings)
    return float(sol.tau[good][t])


def metc_curve(problem: ProducerProblem, good: str, t: int = 0,
               lo: float | None = None, hi: float | None = None,
               points: int = 33, settings: SolverSettings = DEFAULT_SETTINGS) -> MetcCurve:
    """Sample the agent's marginal-transfer curve for one good.

    Default range brackets the current target from nearly zero to twice
    its level; the range stretches upward while the upper end stays
    feasible.
    """

    base = float(np.atleast_1d(problem.targets[good])[t])
    if lo is None:
        lo = max(base * 1e-3, 1e-9)
    if hi is None:
        hi = max(2.0 * base, lo * 10.0)
        while True:
            try:
                marginal_transfer_at(problem, good, hi, t, settings)
                break
            except InfeasibleError:
                hi = lo + 0.6 * (hi - lo)
                if hi <= lo * (1 + 1e-9):
                    raise
    qs = np.linspace(lo, hi, points)
    vs = np.array([marginal_transfer_at(problem, good, q, t, settings) for q in qs])
    return MetcCurve(qs, vs)


# ---------------------------------------------------------------------------
# bilateral trade
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BilateralTrade:
    good_id: str
    exporter: str
    importer: str
    quantity: float
    export_marginal: float
    import_marginal: float
    gains: float
    unit_transfer_cost: float
    price_ratio: dict = field(default_factory=dict)  # agent -> traded/numeraire
    reservation: dict = field(default_factory=dict)  # agent -> autarkic ratio
    corner: bool = False  # importer production fully displaced


def optimal_bilateral_trade(agents, good: str, t: int = 0,
                            unit_transfer_cost: float = 0.0,
                            numeraire: str | None = None,
                            settings: SolverSettings = DEFAULT_SETTINGS) -> BilateralTrade:
    """Find the volume at which the marginal-transfer wedge closes.

    agents maps two names to TradeAgent or ProducerProblem positions. The
    agent with the higher autarkic marginal transfer imports. Volume
    rises until the importer's marginal transfer (in hand, including
    carriage on the exporter's side) stops exceeding the exporter's, or
    the importer's own production hits zero.
    """

    items = sorted(agents.items())
    if len(items) != 2:
        raise ValueError("bilateral trade needs exactly two agents")
    probs = {name: (agent.problem if isinstance(agent, TradeAgent) else agent)
             for name, agent in items}

    base_sol = {name: solve_transfer_min(p, settings) for name, p in probs.items()}
    base_tau = {name: float(sol.tau[good][t]) for name, sol in base_sol.items()}

    names = [name for name, _ in items]
    importer = max(names, key=lambda n: (base_tau[n], n))
    exporter = min(names, key=lambda n: (base_tau[n], n))

    reservation = {}
    if numeraire is not None:
        for name, sol in base_sol.items():
            denom = float(sol.tau[numeraire][t])
            reservation[name] = float(sol.tau[good][t]) / denom if denom > 0.0 else np.inf

    if base_tau[importer] - base_tau[exporter] <= unit_transfer_cost + 1e-15:
        return BilateralTrade(
            good_id=good, exporter=exporter, importer=importer, quantity=0.0,
            export_marginal=base_tau[exporter], import_marginal=base_tau[importer],
            gains=0.0, unit_transfer_cost=unit_transfer_cost,
            price_ratio=dict(reservation), reservation=reservation,
        )

    q_imp = float(np.atleast_1d(probs[importer].targets[good])[t])
    q_exp = float(np.atleast_1d(probs[exporter].targets[good])[t])

    def tau_importer(q):
        return marginal_transfer_at(probs[importer], good, q_imp - q, t, settings)

    def tau_exporter(q):
        return marginal_transfer_at(probs[exporter], good, q_exp + q, t, settings)

    def wedge(q):
        try:
            te = tau_exporter(q)
        except InfeasibleError:
            return -1e30 * (1.0 + q)
        return tau_importer(q) - te - unit_transfer_cost

    corner = False
    q_top = q_imp * (1.0 - 1e-12) if q_imp > 0.0 else 0.0
    if q_top <= 0.0 or wedge(q_top) >= 0.0:
        quantity = q_imp
        corner = True
    else:
        quantity = float(optimize.brentq(wedge, 0.0, q_top, xtol=1e-13, rtol=1e-14))

    gains = _exact_gains(tau_importer, tau_exporter, quantity, unit_transfer_cost)

    sol_imp = solve_transfer_min(_with_target(probs[importer], good, t, q_imp - quantity), settings)
    sol_exp = solve_transfer_min(_with_target(probs[exporter], good, t, q_exp + quantity), settings)
    export_marginal = float(sol_exp.tau[good][t])
    import_marginal = export_marginal + unit_transfer_cost

    price_ratio = {}
    if numeraire is not None:
        for name, sol in ((importer, sol_imp), (exporter, sol_exp)):
            denom = float(sol.tau[numeraire][t])
            # in-hand marginal: the importer pays carriage on top
            traded = import_marginal if name == importer else export_marginal
            price_ratio[name] = traded / denom if denom > 0.0 else np.inf

    return BilateralTrade(
        good_id=good, exporter=exporter, importer=importer, quantity=quantity,
        export_marginal=export_marginal, import_marginal=import_marginal,
        gains=gains, unit_transfer_cost=unit_transfer_cost,
        price_ratio=price_ratio, reservation=reservation, corner=corner,
    )


def _exact_gains(tau_importer, tau_exporter, quantity, unit_cost):
    if quantity <= 0.0:
        return 0.0
    value, _ = integrate.quad(tau_importer, 0.0, quantity, limit=200, epsabs=1e-11, epsrel=1e-11)
    cost, _ = integrate.quad(tau_exporter, 0.0, quantity, limit=200, epsabs=1e-11, epsrel=1e-11)
    return float(value - cost - unit_cost * quantity)


# ---------------------------------------------------------------------------
# multilateral clearing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TatonnementResult:
    prices: dict  # good -> common marginal transfer
    supplies: dict  # agent -> {good -> produced}
    consumption: dict  # agent -> {good -> consumed}
    net_imports: dict  # agent -> {good -> consumed - produced}
    iterations: int
    residual: float
    mode: str


def _capacity_output(tech, prices, endow_t):
    l = cheapest_linear_input(tech, prices)
    return tech.scale * tech.exponents[l] * endow_t.get(l, 0.0)


def _agent_supply(agent: TradeAgent, price_map, t, settings):
    """Supply response with own service markets re-cleared at these prices."""

    prob = agent.problem
    pms = sorted(prob.endowments)
    eps = prob.epsilon
    endow_t = {l: float(np.atleast_1d(prob.endowments[l])[t]) for l in pms}
    fixed = {
        g: float(np.atleast_1d(prob.targets[g])[t])
        for g in prob.targets
        if g not in price_map
    }
    phi = {l: 0.0 for l in pms}
    cap = 1e12 * max(eps.values())

    def snapshot(phi_map):
        svc = {l: eps[l] + phi_map[l] for l in pms}
        totals = {l: 0.0 for l in pms}
        qty = {}
        for g, q in fixed.items():
            if q > 0.0:
                for l, v in conditional_demand(prob.technologies[g], q, svc).inputs.items():
                    totals[l] += v
        for g, level in price_map.items():
            tech = prob.technologies[g]
            q = output_at_marginal_cost(tech, level, svc)
            if np.isinf(q):
                q = _capacity_output(tech, svc, endow_t)
            qty[g] = q
            if q > 0.0:
                for l, v in conditional_demand(tech, q, svc).inputs.items():
                    totals[l] += v
        return totals, qty

    for _sweep in range(60):
        moved = 0.0
        for l in pms:
            trial = dict(phi)
            trial[l] = 0.0
            if snapshot(trial)[0][l] - endow_t[l] <= 1e-11 * max(1.0, endow_t[l]):
                moved = max(moved, phi[l])
                phi[l] = 0.0
                continue

            def excess(v, l=l):
                trial = dict(phi)
                trial[l] = v
                return snapshot(trial)[0][l] - endow_t[l]

            hi = max(phi[l], eps[l])
            while excess(hi) > 0.0:
                hi *= 2.0
                if hi > cap:
                    raise InfeasibleError(
                        f"agent {agent.name}: no scarcity cost clears {l} at the quoted prices"
                    )
            new = float(optimize.brentq(excess, 0.0, hi, xtol=1e-14, rtol=1e-15))
            moved = max(moved, abs(new - phi[l]))
            phi[l] = new
        if moved <= 1e-12 * max(1.0, max(phi.values(), default=1.0)):
            break
    return snapshot(phi)[1]


def multi_agent_tatonnement(agents, goods, t: int = 0, mode: str = "fixed",
                            settings: SolverSettings = DEFAULT_SETTINGS,
                            max_iterations: int = 5000) -> TatonnementResult:
    """Clear traded goods across agents by damped price adjustment.

    mode "fixed" keeps each agent's consumption at its frozen targets and
    lets only sourcing move. mode "resolve" lets consumption respond
    through each agent's utility weights at its frozen marginal utility.
    Prices rise on excess demand and fall on excess supply, multiplicatively
    and damped, until markets clear.
    """

    if mode not in ("fixed", "resolve"):
        raise ValueError(f"unknown tatonnement mode: {mode!r}")
    agents = list(agents)
    goods = sorted(goods)

    base = {a.name: solve_transfer_min(a.problem, settings) for a in agents}
    prices = {}
    for g in goods:
        taus = [float(base[a.name].tau[g][t]) for a in agents]
        prices[g] = float(np.exp(np.mean(np.log(np.maximum(taus, 1e-300)))))

    def demand_for(agent, g, price):
        if mode == "fixed" or agent.weights is None or g not in agent.weights:
            return float(np.atleast_1d(agent.problem.targets[g])[t])
        w = float(np.atleast_1d(agent.weights[g])[t])
        lam_t = float(np.atleast_1d(agent.lam)[t])
        return w / (lam_t * price) if w > 0.0 else 0.0

    supplies = {}
    residual = np.inf
    for iteration in range(1, max_iterations + 1):
        supplies = {a.name: _agent_supply(a, prices, t, settings) for a in agents}
        residual = 0.0
        next_prices = dict(prices)
        for g in goods:
            supply = sum(supplies[a.name][g] for a in agents)
            demand = sum(demand_for(a, g, prices[g]) for a in agents)
            if supply <= 0.0:
                next_prices[g] = prices[g] * 2.0
                residual = np.inf if demand > 0.0 else residual
                continue
            gap = demand / supply
            residual = max(residual, abs(gap - 1.0))
            next_prices[g] = prices[g] * gap ** settings.damping
        if residual <= 1e-10:
            break
        prices = next_prices
    else:
        raise NoConvergenceError(
            "tatonnement did not clear the traded goods",
            best=prices, residual=residual, iterations=max_iterations,
        )

    consumption = {}
    net_imports = {}
    for a in agents:
        consumption[a.name] = {g: demand_for(a, g, prices[g]) for g in goods}
        net_imports[a.name] = {
            g: consumption[a.name][g] - supplies[a.name][g] for g in goods
        }
    # book the clearing residual against the largest position so reported
    # net trades conserve each good
    for g in goods:
        names = sorted(net_imports, key=lambda n: abs(net_imports[n][g]))
        pivot = names[-1]
        net_imports[pivot][g] = -math.fsum(
            net_imports[n][g] for n in names[:-1])
    return TatonnementResult(
        prices=prices,
        supplies={n: dict(v) for n, v in supplies.items()},
        consumption=consumption,
        net_imports=net_imports,
        iterations=iteration,
        residual=residual,
        mode=mode,
    )
