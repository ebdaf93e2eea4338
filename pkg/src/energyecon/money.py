"""Money and nominal prices on top of the transfer economy.

A commodity money is one of the produced goods; claims circulate as
nominal units backed by the real stock. The transfer content of one
nominal unit is the money good's marginal transfer scaled by real backing
per claim. Real prices are transfer ratios, nominal prices are transfers
per nominal unit, and both reduce to identities in the equilibrium
quantities.

Embodied energy differs from the marginal transfer: where the transfer
carries the scarcity cost of prime-mover services, embodied accounting
carries the amortized build energy of the machines that provide them.
Each vintage spreads its build energy over the services it will ever
deliver; the stock's charge per service is the service-weighted average
over surviving vintages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costs import conditional_demand
from .errors import DegenerateFitError, FiatMoneyError, MissingHistoryError
from .model import COMMODITY_MONEY, FIAT_MONEY, EconomyScenario, eval_production


@dataclass(frozen=True)
class MoneyState:
    good_id: str | None  # None under fiat
    quantity_real: np.ndarray
    quantity_nominal: np.ndarray
    mode: str = COMMODITY_MONEY

    @property
    def backing_ratio(self) -> np.ndarray:
        return self.quantity_real / self.quantity_nominal


def select_money_good(equilibrium) -> str:
    """Default commodity money: the final good with the smallest markup.

    A low markup means average and marginal transfers nearly agree, so
    the good's value is least sensitive to how much of it circulates.
    Ties break by id.
    """

    sc = equilibrium.bundle.scenario
    best = None
    for f in sc.final_goods:
        mu = float(np.mean(equilibrium.decomposition[f.id].mu))
        key = (mu, f.id)
        if best is None or key < best[0]:
            best = (key, f.id)
    if best is None:
        raise FiatMoneyError("no final goods to serve as commodity money")
    return best[1]


def money_state(scenario: EconomyScenario, equilibrium) -> MoneyState:
    """Resolve the scenario's money block against a solved equilibrium."""

    T = scenario.horizon
    settings = scenario.money
    if settings is None:
        good = select_money_good(equilibrium)
        return MoneyState(good, np.ones(T), np.ones(T), COMMODITY_MONEY)
    q_real = np.broadcast_to(np.asarray(settings.quantity_real, dtype=float), (T,)).copy()
    q_nom = np.broadcast_to(np.asarray(settings.quantity_nominal, dtype=float), (T,)).copy()
    if settings.mode == FIAT_MONEY:
        return MoneyState(None, q_real, q_nom, FIAT_MONEY)
    good = settings.real_good
    if good == "auto":
        good = select_money_good(equilibrium)
    return MoneyState(good, q_real, q_nom, COMMODITY_MONEY)


# ---------------------------------------------------------------------------
# price tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PriceTable:
    money_good: str
    tau_money: np.ndarray  # marginal transfer of the money good
    tau_nominal: np.ndarray  # transfer content of one nominal unit
    real_prices: dict  # good -> (T,), in money-good units
    nominal_prices: dict  # good -> (T,)


def price_table(equilibrium, state: MoneyState) -> PriceTable:
    """Real and nominal prices for every good with a defined transfer."""

    if state.mode == FIAT_MONEY or state.good_id is None:
        raise FiatMoneyError(
            "fiat claims have no production side, so no transfer content "
            "and no transfer-based price table"
        )
    tau = equilibrium.bundle.tau
    if state.good_id not in tau:
        raise FiatMoneyError(f"money good {state.good_id} has no transfer path")
    tau_m = np.asarray(tau[state.good_id], dtype=float)
    if np.any(tau_m <= 0.0):
        raise FiatMoneyError(
            f"money good {state.good_id} has zero marginal transfer somewhere; "
            "prices in money units are undefined there"
        )
    tau_s = tau_m * state.backing_ratio
    claims = state.quantity_nominal / state.quantity_real
    real = {}
    nominal = {}
    for g, path in tau.items():
        arr = np.asarray(path, dtype=float)
        real[g] = arr / tau_m
        # nominal = real * claims keeps the price-change decomposition an
        # exact identity period by period, not just up to rounding
        nominal[g] = real[g] * claims
    return PriceTable(
        money_good=state.good_id,
        tau_money=tau_m,
        tau_nominal=tau_s,
        real_prices=real,
        nominal_prices=nominal,
    )


@dataclass(frozen=True)
class InflationReport:
    inflation: np.ndarray  # per period, first entry nan
    claim_growth: np.ndarray  # growth of nominal claims per real unit
    money_transfer_growth: np.ndarray
    identity_residual: float  # nominal = real + claim growth, per good


def inflation_and_dynamics(equilibrium, state: MoneyState, table: PriceTable | None = None) -> InflationReport:
    """Inflation of the nominal unit and the price-change decomposition.

    Inflation is the growth of claims per real backing unit minus the
    growth of the money good's marginal transfer. Every good's nominal
    price is its real price times the claims ratio in every period, so
    nominal price growth decomposes into real growth plus claim growth;
    the report carries the worst deviation from the level identity.
    """

    if state.mode == FIAT_MONEY:
        raise FiatMoneyError("inflation against transfer content is undefined under fiat")
    if table is None:
        table = price_table(equilibrium, state)
    T = len(state.quantity_nominal)
    ratio = state.quantity_nominal / state.quantity_real
    claim_growth = np.full(T, np.nan)
    claim_growth[1:] = np.log(ratio[1:] / ratio[:-1])
    tau_growth = np.full(T, np.nan)
    tau_growth[1:] = np.log(table.tau_money[1:] / table.tau_money[:-1])
    inflation = claim_growth - tau_growth

    worst = 0.0
    for g, nom in table.nominal_prices.items():
        nom = np.asarray(nom, dtype=float)
        real = np.asarray(table.real_prices[g], dtype=float)
        for t in range(T):
            scale = max(abs(nom[t]), 1e-300)
            worst = max(worst, abs(nom[t] - real[t] * ratio[t]) / scale)
    return InflationReport(
        inflation=inflation,
        claim_growth=claim_growth,
        money_transfer_growth=tau_growth,
        identity_residual=worst,
    )


# ---------------------------------------------------------------------------
# embodied energy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmbodiedTable:
    service_charge: dict  # pm -> (T,) amortized build energy per service
    gamma: dict  # good -> (T,) marginal embodied energy
    gamma_avg: dict  # good -> (T,) average embodied energy
    amortized: dict  # good -> (T,) the capital part of gamma
    eta: dict  # good -> (T,) embodied markup


def service_charges(scenario: EconomyScenario, equilibrium, tol: float = 1e-12) -> dict:
    """Amortized build energy per unit of service, by prime mover and period.

    A unit built at s with build energy b delivers a geometric service
    stream; its charge per service is b scaled by one minus the survival
    rate. The stock's charge is the service-weighted average over the
    vintages alive in t. Initial units with unrecorded build energy
    poison every period they still serve.
    """

    bundle = equilibrium.bundle
    T = scenario.horizon
    out = {}
    for pm in scenario.prime_movers:
        d = pm.depreciation
        production = np.asarray(bundle.quantities.get(pm.id, np.zeros(T)), dtype=float)
        build_unit = np.zeros(T)
        alloc = bundle.allocations.get(pm.id, {})
        for t in range(T):
            if production[t] > 0.0:
                spent = sum(
                    scenario.prime_mover(l).epsilon * alloc[l][t] for l in alloc
                )
                build_unit[t] = spent / production[t]
        charge = np.zeros(T)
        for t in range(T):
            services = 0.0
            weighted = 0.0
            init_services = (d ** t) * pm.initial_endowment
            if init_services > tol:
                if pm.build_energy_initial is None:
                    raise MissingHistoryError(
                        f"initial units of {pm.id} still serve in period {t + 1} "
                        "but their build energy was never recorded"
                    )
                services += init_services
                weighted += init_services * pm.build_energy_initial * (1.0 - d)
            for s in range(t):
                cohort = (d ** (t - 1 - s)) * production[s]
                if cohort > tol:
                    services += cohort
                    weighted += cohort * build_unit[s] * (1.0 - d)
            charge[t] = weighted / services if services > tol else 0.0
        out[pm.id] = charge
    return out


def embodied_energy(scenario: EconomyScenario, equilibrium) -> EmbodiedTable:
    """Embodied energy per good: direct transfers plus amortized build energy."""

    bundle = equilibrium.bundle
    T = scenario.horizon
    charges = service_charges(scenario, equilibrium)
    eps = {pm.id: pm.epsilon for pm in scenario.prime_movers}
    gamma = {}
    gamma_avg = {}
    amort = {}
    eta = {}
    for good_id, tech in scenario.technologies.items():
        q = np.asarray(bundle.quantities[good_id], dtype=float)
        g_m = np.zeros(T)
        g_a = np.zeros(T)
        g_cap = np.zeros(T)
        e = np.zeros(T)
        alloc = bundle.allocations.get(good_id, {})
        for t in range(T):
            if q[t] <= 0.0:
                continue
            x_t = {l: alloc[l][t] for l in alloc}
            used = [l for l, v in x_t.items() if v > 0.0]
            if not used:
                continue
            req = eval_production(tech, x_t).marginal_requirement
            psi = float(np.mean([eps[l] * req[l] for l in used]))
            g_cap[t] = float(np.mean([charges[l][t] * req[l] for l in used]))
            g_m[t] = psi + g_cap[t]
            total = sum((eps[l] + charges[l][t]) * x_t[l] for l in used)
            g_a[t] = total / q[t]
            if g_a[t] > 0.0:
                e[t] = g_m[t] / g_a[t] - 1.0
        gamma[good_id] = g_m
        gamma_avg[good_id] = g_a
        amort[good_id] = g_cap
        eta[good_id] = e
    return EmbodiedTable(
        service_charge=charges, gamma=gamma, gamma_avg=gamma_avg, amortized=amort, eta=eta
    )


def embodied_markup_fd(scenario: EconomyScenario, equilibrium, good_id: str, t: int = 0,
                       step: float = 1e-3) -> float:
    """Diagnostic markup from differencing total embodied energy in quantity.

    Holds service prices and stock charges fixed, so it should agree with
    the reported markup only to first order.
    """

    bundle = equilibrium.bundle
    tech = scenario.technologies[good_id]
    q = float(bundle.quantities[good_id][t])
    if q <= 0.0:
        return 0.0
    charges = service_charges(scenario, equilibrium)
    prices = {}
    for pm in scenario.prime_movers:
        if pm.id in tech.support():
            prices[pm.id] = pm.epsilon + charges[pm.id][t]

    def total(qv):
        dem = conditional_demand(tech, qv, prices)
        return dem.cost

    up, dn = q * (1.0 + step), q * (1.0 - step)
    d_log = (np.log(total(up)) - np.log(total(dn))) / (np.log(up) - np.log(dn))
    return float(d_log - 1.0)


def transfer_embodied_gap(equilibrium, table: EmbodiedTable) -> dict:
    """Per-good gap between marginal transfer and marginal embodied energy.

    The gap is exactly the scarcity-cost part of the transfer minus the
    amortized-build part of embodied energy; it prices rationing, not
    machines.
    """

    out = {}
    for g, tau in equilibrium.bundle.tau.items():
        if g not in table.gamma:
            continue
        out[g] = np.asarray(tau, dtype=float) - table.gamma[g]
    return out


# ---------------------------------------------------------------------------
# proportionality of nominal prices to embodied energy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProportionalityFit:
    period: int
    goods: list
    slope: float
    intercept: float
    r_squared: float
    residuals: dict  # good -> fitted minus actual nominal price
    identity_residual: float  # worst reconstruction error of nominal prices


def proportionality_report(equilibrium, table: PriceTable, embodied: EmbodiedTable,
                           period: int = 0) -> ProportionalityFit:
    """Regress nominal prices on average embodied energies across final goods.

    The fit covers the marketed consumption goods, which is where the
    empirical proportionality is observed; intermediates still enter the
    identity check, which reconstructs each nominal price from embodied
    terms plus the scarcity gap and reports the worst error.
    """

    finals = set(equilibrium.bundle.scenario.final_good_ids())
    goods = []
    xs = []
    ys = []
    for g in sorted(table.nominal_prices):
        if g not in finals or g not in embodied.gamma_avg:
            continue
        ga = float(embodied.gamma_avg[g][period])
        p = float(table.nominal_prices[g][period])
        if ga <= 0.0 or p <= 0.0:
            continue
        goods.append(g)
        xs.append(ga)
        ys.append(p)
    if len(goods) < 2:
        raise DegenerateFitError(
            f"period {period + 1} offers {len(goods)} priced goods; "
            "a proportionality fit needs at least two"
        )
    x = np.array(xs)
    y = np.array(ys)
    if np.ptp(x) <= 1e-15 * max(1.0, float(np.max(np.abs(x)))):
        raise DegenerateFitError(
            "average embodied energies are all equal; the slope is unidentified"
        )
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0

    worst = 0.0
    tau_s = float(table.tau_nominal[period])
    for g in sorted(table.nominal_prices):
        if g not in embodied.gamma_avg:
            continue
        ga = float(embodied.gamma_avg[g][period])
        p = float(table.nominal_prices[g][period])
        if ga <= 0.0 or p <= 0.0:
            continue
        gm = float(embodied.gamma[g][period])
        eta = float(embodied.eta[g][period])
        gap = float(equilibrium.bundle.tau[g][period]) - gm
        rebuilt = (ga * (1.0 + eta) + gap) / tau_s
        worst = max(worst, abs(rebuilt - p) / max(p, 1e-300))

    return ProportionalityFit(
        period=period,
        goods=goods,
        slope=float(slope),
        intercept=float(intercept),
        r_squared=float(r2),
        residuals={g: float(fv - yv) for g, fv, yv in zip(goods, fitted, ys)},
        identity_residual=worst,
    )
