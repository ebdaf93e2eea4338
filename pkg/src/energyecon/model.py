"""Domain types for the energy-transfer economy.

Goods come in three classes. Final goods enter utility. Energy goods carry
recoverable energy content that becomes next period's surplus. Prime movers
are the machines and organisms that transfer energy in production; they are
themselves producible goods, they depreciate geometrically, and every good
(prime movers included) has a production technology driven by prime-mover
input.

Quantities are in good units, energy magnitudes in Joules, power in Watts.
Periods have unit length, so a prime mover's per-period direct transfer
defaults to its power rating unless the scenario overrides it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import NonFiniteMarginalError, UtilityDomainError, ValidationError
from .numerics import DEFAULT_SETTINGS, SolverSettings

LINEAR = "linear"
COBB_DOUGLAS = "cobb_douglas"

WEIGHTED_LOG = "weighted_log"

COMMODITY_MONEY = "commodity"
FIAT_MONEY = "fiat"


@dataclass(frozen=True)
class PrimeMoverSpec:
    """A type of energy-transferring agent or machine.

    direct_transfer is the energy moved per unit kept in service for one
    period; None means "power rating times unit period". build_energy_initial
    records the per-unit transfers that went into the inherited period-0
    stock. Leaving it None marks the history as unrecorded, which the
    embodied-energy accounting refuses to paper over.
    """

    id: str
    power_rate: float
    depreciation: float
    initial_endowment: float = 0.0
    direct_transfer: float | None = None
    build_energy_initial: float | None = 0.0

    @property
    def epsilon(self) -> float:
        if self.direct_transfer is not None:
            return self.direct_transfer
        return self.power_rate  # unit-length periods


@dataclass(frozen=True)
class EnergyGoodSpec:
    id: str
    energy_content: float  # Joules recoverable per unit, one period after production
    initial_stock: float = 0.0


@dataclass(frozen=True)
class FinalGoodSpec:
    id: str
    weights: tuple  # utility weight per period


@dataclass(frozen=True)
class ProductionTech:
    """Output of one good from prime-mover services.

    form "linear": output = scale * sum(alpha_l * x_l).
    form "cobb_douglas": output = scale * prod(x_l ** alpha_l), with the
    exponent sum at most one so the technology is concave.
    """

    good_id: str
    form: str
    scale: float
    exponents: Mapping[str, float]

    def support(self):
        return tuple(l for l, a in self.exponents.items() if a > 0.0)

    @property
    def returns_scale(self) -> float:
        if self.form == LINEAR:
            return 1.0
        return float(sum(a for a in self.exponents.values() if a > 0.0))


@dataclass(frozen=True)
class UtilityModel:
    form: str
    weights: Mapping[str, tuple]  # final-good id -> per-period weight

    @classmethod
    def weighted_log(cls, weights):
        return cls(form=WEIGHTED_LOG, weights={k: tuple(v) for k, v in weights.items()})


@dataclass(frozen=True)
class MoneySettings:
    """Which good is money and how much real/nominal money circulates."""

    real_good: str = "auto"  # "auto" picks the produced good with the lowest markup
    quantity_real: tuple = (1.0,)
    quantity_nominal: tuple = (1.0,)
    mode: str = COMMODITY_MONEY


@dataclass(frozen=True)
class EconomyScenario:
    horizon: int
    prime_movers: tuple
    energy_goods: tuple
    final_goods: tuple
    technologies: Mapping[str, ProductionTech]
    utility: UtilityModel
    settings: SolverSettings = DEFAULT_SETTINGS
    money: MoneySettings | None = None
    name: str = "scenario"

    # -- lookups ----------------------------------------------------------

    def prime_mover_ids(self):
        return tuple(p.id for p in self.prime_movers)

    def energy_good_ids(self):
        return tuple(e.id for e in self.energy_goods)

    def final_good_ids(self):
        return tuple(f.id for f in self.final_goods)

    def good_ids(self):
        return self.final_good_ids() + self.energy_good_ids() + self.prime_mover_ids()

    def prime_mover(self, pm_id) -> PrimeMoverSpec:
        for p in self.prime_movers:
            if p.id == pm_id:
                return p
        raise KeyError(pm_id)

    def energy_good(self, good_id) -> EnergyGoodSpec:
        for e in self.energy_goods:
            if e.id == good_id:
                return e
        raise KeyError(good_id)

    def epsilon(self):
        return {p.id: p.epsilon for p in self.prime_movers}

    def weight_matrix(self) -> np.ndarray:
        """(F, T) array of utility weights in final-good order."""

        return np.array(
            [self.utility.weights[f] for f in self.final_good_ids()], dtype=float
        )


# ---------------------------------------------------------------------------
# Production evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProductionEval:
    output: float
    marginal_productivity: Mapping[str, float] | None
    marginal_requirement: Mapping[str, float] | None


def eval_production(tech: ProductionTech, x: Mapping[str, float], with_marginals=True):
    """Evaluate output and, when requested, per-input marginals.

    The marginal requirement of input l is the extra quantity of l needed
    per extra unit of output, i.e. the reciprocal of its marginal
    productivity; the two satisfy f_l * g_l = 1 wherever both are finite.
    """

    support = tech.support()
    if not support:
        raise ValidationError([f"technology for {tech.good_id} uses no prime mover"])
    xs = {}
    for l in support:
        v = float(x.get(l, 0.0))
        if v < 0.0:
            raise ValidationError([f"negative allocation {v} of {l}"])
        xs[l] = v

    if tech.form == LINEAR:
        output = tech.scale * sum(tech.exponents[l] * xs[l] for l in support)
        if not with_marginals:
            return ProductionEval(output, None, None)
        fl = {l: tech.scale * tech.exponents[l] for l in support}
        gl = {l: 1.0 / fl[l] for l in support}
        return ProductionEval(output, fl, gl)

    if tech.form == COBB_DOUGLAS:
        if any(xs[l] == 0.0 for l in support):
            output = 0.0
        else:
            log_out = np.log(tech.scale) + sum(
                tech.exponents[l] * np.log(xs[l]) for l in support
            )
            output = float(np.exp(log_out))
        if not with_marginals:
            return ProductionEval(output, None, None)
        if output == 0.0:
            raise NonFiniteMarginalError(
                f"marginal productivity of {tech.good_id} undefined at a zero input"
            )
        fl = {l: tech.exponents[l] * output / xs[l] for l in support}
        if any(not np.isfinite(v) or v == 0.0 for v in fl.values()):
            raise NonFiniteMarginalError(
                f"marginal productivity of {tech.good_id} non-finite at this point"
            )
        gl = {l: 1.0 / fl[l] for l in support}
        return ProductionEval(output, fl, gl)

    raise ValidationError([f"unknown technology form {tech.form!r}"])


# ---------------------------------------------------------------------------
# Utility evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UtilityEval:
    value: float
    marginals: Mapping[str, np.ndarray]


def eval_utility(utility: UtilityModel, quantities: Mapping[str, Sequence[float]]):
    """Weighted-log utility over final goods and periods, with marginals.

    Periods with a zero weight ignore the corresponding quantity entirely,
    so goods can rotate in and out of the consumption basket.
    """

    if utility.form != WEIGHTED_LOG:
        raise ValidationError([f"unknown utility form {utility.form!r}"])
    total = 0.0
    marginals = {}
    for good, w in utility.weights.items():
        w = np.asarray(w, dtype=float)
        q = np.asarray(quantities[good], dtype=float)
        if q.shape != w.shape:
            raise ValidationError(
                [f"quantity path for {good} has shape {q.shape}, expected {w.shape}"]
            )
        active = w > 0.0
        if np.any(q[active] <= 0.0):
            raise UtilityDomainError(
                f"non-positive quantity of {good} where its weight is positive"
            )
        total += float(np.sum(w[active] * np.log(q[active])))
        marg = np.zeros_like(q)
        marg[active] = w[active] / q[active]
        marginals[good] = marg
    return UtilityEval(value=total, marginals=marginals)


# ---------------------------------------------------------------------------
# Scenario validation
# ---------------------------------------------------------------------------


def validate_scenario(scenario: EconomyScenario):
    """Structural checks. Returns a list of human-readable violations."""

    v = []
    T = scenario.horizon
    if not isinstance(T, int) or T < 1:
        v.append(f"horizon must be a positive integer, got {T!r}")
        return v  # everything below needs a usable horizon

    ids = list(scenario.good_ids())
    seen = set()
    for gid in ids:
        if gid in seen:
            v.append(f"duplicate good id {gid!r}")
        seen.add(gid)

    pm_ids = set(scenario.prime_mover_ids())
    for p in scenario.prime_movers:
        if not (0.0 < p.depreciation < 1.0):
            v.append(
                f"prime_movers[{p.id}].depreciation must lie in (0, 1), got {p.depreciation}"
            )
        if p.power_rate <= 0.0:
            v.append(f"prime_movers[{p.id}].power_rate must be positive")
        if p.epsilon <= 0.0:
            v.append(f"prime_movers[{p.id}].direct_transfer must be positive")
        if p.initial_endowment < 0.0:
            v.append(f"prime_movers[{p.id}].initial_endowment must be non-negative")

    for e in scenario.energy_goods:
        if e.energy_content <= 0.0:
            v.append(f"energy_goods[{e.id}].energy_content must be positive")
        if e.initial_stock < 0.0:
            v.append(f"energy_goods[{e.id}].initial_stock must be non-negative")

    for f in scenario.final_goods:
        w = np.asarray(f.weights, dtype=float)
        if w.shape != (T,):
            v.append(f"final_goods[{f.id}].weights must have length {T}")
        elif np.any(w < 0.0):
            v.append(f"final_goods[{f.id}].weights must be non-negative")

    for gid in ids:
        if gid not in scenario.technologies:
            v.append(f"good {gid!r} has no production technology")
    for gid, tech in scenario.technologies.items():
        if gid not in ids:
            v.append(f"technology for unknown good {gid!r}")
        if tech.form not in (LINEAR, COBB_DOUGLAS):
            v.append(f"technologies[{gid}].form must be linear or cobb_douglas")
            continue
        if tech.scale <= 0.0:
            v.append(f"technologies[{gid}].scale must be positive")
        alphas = dict(tech.exponents)
        if any(a < 0.0 for a in alphas.values()):
            v.append(f"technologies[{gid}] has a negative exponent")
        if not any(a > 0.0 for a in alphas.values()):
            v.append(f"technologies[{gid}] uses no prime mover")
        unknown = [l for l in alphas if l not in pm_ids]
        if unknown:
            v.append(f"technologies[{gid}] references unknown prime movers {unknown}")
        if tech.form == COBB_DOUGLAS:
            s = sum(a for a in alphas.values() if a > 0.0)
            if s > 1.0 + 1e-12:
                v.append(
                    f"technologies[{gid}] exponents sum to {s:.6g}; "
                    "must not exceed 1 (concavity)"
                )

    if scenario.utility.form != WEIGHTED_LOG:
        v.append(f"utility.form must be {WEIGHTED_LOG!r}")
    u_goods = set(scenario.utility.weights)
    f_goods = set(scenario.final_good_ids())
    if u_goods != f_goods:
        v.append(f"utility weights cover {sorted(u_goods)} but final goods are {sorted(f_goods)}")

    m = scenario.money
    if m is not None:
        if m.mode not in (COMMODITY_MONEY, FIAT_MONEY):
            v.append(f"money.mode must be commodity or fiat, got {m.mode!r}")
        if m.mode == COMMODITY_MONEY and m.real_good != "auto" and m.real_good not in ids:
            v.append(f"money.real_good {m.real_good!r} is not a good in this scenario")
        for label, qty in (("quantity_real", m.quantity_real), ("quantity_nominal", m.quantity_nominal)):
            arr = np.asarray(qty, dtype=float)
            if arr.ndim != 1 or arr.size not in (1, T):
                v.append(f"money.{label} must be a scalar or one value per period")
            elif np.any(arr <= 0.0):
                v.append(f"money.{label} must be positive")

    return v


def ensure_valid(scenario: EconomyScenario):
    violations = validate_scenario(scenario)
    if violations:
        raise ValidationError(violations)
    return scenario


# ---------------------------------------------------------------------------
# Solution container
# ---------------------------------------------------------------------------


@dataclass
class SolutionBundle:
    """Everything a solved economy reports, in scenario good order.

    Arrays are indexed [period] with period t stored at index t-1. The
    allocations mapping is x[good][prime_mover][period]: services of that
    prime mover used producing that good.
    """

    scenario: EconomyScenario
    quantities: dict  # good -> (T,)
    allocations: dict  # good -> {pm -> (T,)}
    lam: np.ndarray  # (T,) marginal utility of surplus, utils/J
    tau: dict  # good -> (T,) marginal transfer, J/unit
    tau_avg: dict  # good -> (T,) average transfer, J/unit
    phi: dict  # pm -> (T,) power scarcity cost, J/unit-period
    surplus: np.ndarray  # (T,) energy surplus E_t
    endowments: dict  # pm -> (T,) effective service endowment
    over_assignment: np.ndarray  # (T,)
    assignments: dict  # final good -> (T,) requested per-unit assignment
    aggregate_power: np.ndarray  # (T,) Watts embodied in the endowment
    utility: float

    def spending(self) -> np.ndarray:
        """Average-transfer value of final consumption per period."""

        T = self.scenario.horizon
        out = np.zeros(T)
        for f in self.scenario.final_good_ids():
            out += np.asarray(self.tau_avg[f]) * np.asarray(self.quantities[f])
        return out

    def check_invariants(self, tol=1e-6):
        """Bundle-level sanity rules. Returns a list of violation strings."""

        bad = []
        for good, q in self.quantities.items():
            if np.any(np.asarray(q) < -tol):
                bad.append(f"negative quantity path for {good}")
        for good, per_pm in self.allocations.items():
            for pm, arr in per_pm.items():
                if np.any(np.asarray(arr) < -tol):
                    bad.append(f"negative allocation of {pm} to {good}")
        for pm, arr in self.phi.items():
            if np.any(np.asarray(arr) < -tol):
                bad.append(f"negative scarcity cost for {pm}")
        if np.any(self.over_assignment < -tol) or np.any(self.over_assignment >= 1.0):
            bad.append("over-assignment factor outside [0, 1)")
        spend = self.spending()
        if np.any(spend > self.surplus + tol * np.maximum(1.0, np.abs(self.surplus))):
            bad.append("final-good transfers exceed the energy surplus")
        return bad
