"""Run reports: the price table, the verification suite, stable emission.

Reports are deterministic byte for byte: no timestamps, keys sorted,
floats printed with 17 significant digits so values round-trip exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._version import __version__
from .allocation import effective_assignment_check, implied_rationing
from .autarky import (
    consumer_foc_residual,
    euler_residual,
    oracle_utility_gap,
    solve_autarky,
)
from .errors import DegenerateFitError, InconsistentAssignmentsError
from .model import eval_production, eval_utility
from .money import (
    embodied_energy,
    inflation_and_dynamics,
    money_state,
    price_table,
    proportionality_report,
    transfer_embodied_gap,
)
from .numerics import finite_diff_gradient
from .scenario_io import atomic_write_text, canonical_json, scenario_hash

PRICE_COLUMNS = (
    "good_id",
    "tau",
    "tau_avg",
    "psi",
    "theta",
    "gamma_avg",
    "eta",
    "p_real",
    "P_nominal",
    "gap",
)


def fmt(x) -> str:
    """17-significant-digit float text; round-trips any double exactly."""

    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    v = float(x)
    if math.isnan(v):
        return "nan"
    return format(v, ".17g")


@dataclass(frozen=True)
class CheckRow:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"{mark}  {self.name}: {fmt(self.value)} vs {fmt(self.tolerance)}{extra}"


@dataclass
class RunReport:
    kind: str
    scenario_name: str
    scenario_hash: str
    payload: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    version: str = __version__

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> str:
        doc = {
            "kind": self.kind,
            "scenario": self.scenario_name,
            "scenario_hash": self.scenario_hash,
            "version": self.version,
            "payload": _plain(self.payload),
            "checks": [
                {
                    "name": c.name,
                    "passed": bool(c.passed),
                    "value": _plain(c.value),
                    "tolerance": c.tolerance,
                    "detail": c.detail,
                }
                for c in self.checks
            ],
        }
        return json.dumps(doc, sort_keys=True, indent=2, allow_nan=True) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# price table
# ---------------------------------------------------------------------------


def price_rows(scenario, equilibrium, period: int = 0):
    """One row per good for the chosen period, in report column order."""

    state = money_state(scenario, equilibrium)
    table = price_table(equilibrium, state)
    embodied = embodied_energy(scenario, equilibrium)
    gaps = transfer_embodied_gap(equilibrium, embodied)
    rows = []
    for good in sorted(scenario.good_ids()):
        dec = equilibrium.decomposition.get(good)
        rows.append(
            {
                "good_id": good,
                "tau": float(equilibrium.bundle.tau[good][period]),
                "tau_avg": float(equilibrium.bundle.tau_avg[good][period]),
                "psi": float(dec.psi[period]) if dec is not None else 0.0,
                "theta": float(dec.theta[period]) if dec is not None else 0.0,
                "gamma_avg": float(embodied.gamma_avg[good][period]),
                "eta": float(embodied.eta[good][period]),
                "p_real": float(table.real_prices[good][period]),
                "P_nominal": float(table.nominal_prices[good][period]),
                "gap": float(gaps[good][period]),
            }
        )
    return rows


def rows_to_csv(rows, columns=PRICE_COLUMNS) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(
            row[c] if isinstance(row[c], str) else fmt(row[c]) for c in columns
        ))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# verification suite
# ---------------------------------------------------------------------------


def verify_scenario(scenario, equilibrium=None, seed: int = 0) -> RunReport:
    """Re-derive every equilibrium condition and grade it against tolerance."""

    if equilibrium is None:
        equilibrium = solve_autarky(scenario)
    tol = scenario.settings.residual_tolerance
    bundle = equilibrium.bundle
    T = scenario.horizon
    checks = []

    def add(name, value, tolerance=tol, detail=""):
        checks.append(CheckRow(name, bool(value <= tolerance), float(value), tolerance, detail))

    add("consumer first-order condition",
        consumer_foc_residual(scenario, bundle.quantities, bundle.lam, bundle.tau))
    add("intertemporal consumption condition",
        euler_residual(scenario, bundle.quantities, bundle.lam, bundle.tau))

    spend = bundle.spending()
    budget = float(np.max(np.abs(spend - bundle.surplus) / np.maximum(1.0, np.abs(bundle.surplus))))
    add("surplus budget binds", budget)

    add("stationarity, feasibility, complementarity", equilibrium.kkt.worst)

    # energy margin: marginal transfer equals discounted content while interior
    worst = 0.0
    lam = bundle.lam
    for e in scenario.energy_goods:
        for t in range(scenario.horizon - 1):
            q = bundle.quantities[e.id][t]
            if q <= 0.0:
                continue
            level = (lam[t + 1] / lam[t]) * e.energy_content
            worst = max(worst, abs(bundle.tau[e.id][t] - level) / level)
    add("energy margin prices discounted content", worst)

    # EROI reciprocity: the discount factor is one over marginal EROI
    worst = 0.0
    for e in scenario.energy_goods:
        m = equilibrium.energy.meroi[e.id]
        for t in range(scenario.horizon - 1):
            if not np.isfinite(m[t]):
                continue
            beta = lam[t + 1] / lam[t]
            worst = max(worst, abs(beta - 1.0 / m[t]) / beta)
    add("discount factor reciprocal to marginal EROI", worst)

    # transfer decomposition adds up
    worst = 0.0
    for good, dec in equilibrium.decomposition.items():
        q = bundle.quantities[good]
        for t in range(scenario.horizon):
            if q[t] <= 0.0:
                continue
            tau = bundle.tau[good][t]
            if tau > 0.0:
                worst = max(worst, abs(dec.psi[t] + dec.theta[t] - tau) / tau)
    add("direct plus scarcity equals marginal transfer", worst)

    # assignment coherence: claims carry one rationing factor per period
    worst = 0.0
    detail = ""
    plan = equilibrium.allocation
    try:
        theta = implied_rationing(plan.assignments,
                                  {g: bundle.tau[g] for g in plan.assignments},
                                  tol=max(tol, 1e-9))
        worst = float(np.max(np.abs(theta - bundle.over_assignment)))
    except InconsistentAssignmentsError as err:
        worst = np.inf
        detail = str(err)
    add("assignments share one rationing factor", worst, detail=detail)

    # effective claims meet what consumers pay at the margin
    marginals = {}
    for f in scenario.final_goods:
        w = np.asarray(f.weights, dtype=float)
        q = np.asarray(bundle.quantities[f.id], dtype=float)
        marginals[f.id] = np.where(w > 0.0, w / np.maximum(q, 1e-300), 0.0)
    residuals = effective_assignment_check(plan, marginals, bundle.lam)
    worst = max((float(np.max(np.abs(r))) for r in residuals.values()), default=0.0)
    add("effective claims meet consumer marginals", worst)

    # prime-mover value is its discounted scarcity-cost stream
    worst = 0.0
    for pm in scenario.prime_movers:
        path = np.asarray(bundle.phi[pm.id], dtype=float)
        for t in range(T):
            acc = 0.0
            for j in range(t + 1, T):
                acc += (lam[j] / lam[t]) * path[j] * pm.depreciation ** (j - t - 1)
            ref = bundle.tau[pm.id][t]
            worst = max(worst, abs(acc - ref) / max(1.0, abs(ref)))
    add("prime-mover value prices its scarcity stream", worst, 1e-8)

    # marginal energy returns agree across produced energy goods
    worst = 0.0
    detail = ""
    if len(scenario.energy_goods) >= 2:
        for t in range(T - 1):
            vals = [equilibrium.energy.meroi[e.id][t] for e in scenario.energy_goods
                    if bundle.quantities[e.id][t] > 0.0
                    and np.isfinite(equilibrium.energy.meroi[e.id][t])]
            if len(vals) >= 2:
                worst = max(worst, (max(vals) - min(vals)) / max(vals))
    else:
        detail = "single energy good"
    add("marginal energy returns align across produced goods", worst, detail=detail)

    # analytic marginals against central differences at random interior points
    rng = np.random.default_rng(seed)
    add("analytic marginals match finite differences",
        _gradient_spot_check(scenario, rng, samples=200), detail=f"seed {seed}")

    # brute-force audit: no feasible consumption bundle beats the solve
    dims = max((sum(1 for f in scenario.final_goods if f.weights[t] > 0.0)
                for t in range(T)), default=0)
    if 1 <= dims <= 3:
        res = min(scenario.settings.grid_resolution, 200 if dims <= 2 else 60)
        gap = oracle_utility_gap(scenario, equilibrium, resolution=res)
        add("no feasible bundle beats the solved utility", max(0.0, gap), 1e-3,
            detail=f"resolution {res}")
    else:
        checks.append(CheckRow(
            "no feasible bundle beats the solved utility", True, 0.0, 1e-3,
            f"skipped: {dims} final goods exceed the grid audit size"))

    invariants = bundle.check_invariants(tol=tol)
    checks.append(CheckRow(
        "bundle invariants", not invariants, float(len(invariants)), 0.0,
        "; ".join(invariants),
    ))

    # money layer identities, when a price system exists
    try:
        state = money_state(scenario, equilibrium)
        table = price_table(equilibrium, state)
        embodied = embodied_energy(scenario, equilibrium)
        fit = proportionality_report(equilibrium, table, embodied, period=0)
        add("nominal prices rebuild from embodied terms", fit.identity_residual, 1e-9)
        dyn = inflation_and_dynamics(equilibrium, state, table)
        add("price dynamics identity", dyn.identity_residual, 1e-9)
    except DegenerateFitError as err:
        checks.append(CheckRow("nominal prices rebuild from embodied terms", True, 0.0, 1e-9,
                               f"skipped: {err}"))

    return RunReport(
        kind="verify",
        scenario_name=scenario.name,
        scenario_hash=scenario_hash(scenario),
        payload={"iterations": equilibrium.iterations,
                 "residual": equilibrium.residual,
                 "seed": seed},
        checks=checks,
    )


def _gradient_spot_check(scenario, rng, samples: int = 200) -> float:
    """Worst relative error of analytic marginals over random interior points."""

    worst = 0.0
    goods = sorted(scenario.technologies)
    for _ in range(samples):
        good = goods[int(rng.integers(len(goods)))]
        tech = scenario.technologies[good]
        support = sorted(tech.support())
        point = np.exp(rng.uniform(np.log(0.1), np.log(10.0), size=len(support)))
        ev = eval_production(tech, dict(zip(support, point)))

        def out_at(v):
            return eval_production(tech, dict(zip(support, v)), with_marginals=False).output

        fd = finite_diff_gradient(out_at, point, step=1e-6)
        for i, l in enumerate(support):
            ref = ev.marginal_productivity[l]
            worst = max(worst, abs(fd[i] - ref) / max(1.0, abs(ref)))

    finals = list(scenario.final_goods)
    if finals:
        for _ in range(samples // 4):
            q = {f.id: np.exp(rng.uniform(np.log(0.1), np.log(10.0), size=scenario.horizon))
                 for f in finals}
            ue = eval_utility(scenario.utility, q)
            for f in finals:
                w = np.asarray(f.weights, dtype=float)
                for t in range(scenario.horizon):
                    if w[t] <= 0.0:
                        continue

                    def u_at(v, f=f, t=t):
                        q2 = {g: arr.copy() for g, arr in q.items()}
                        q2[f.id][t] = v
                        return eval_utility(scenario.utility, q2).value

                    fd = finite_diff_gradient(u_at, float(q[f.id][t]), step=1e-6)[0]
                    ref = ue.marginals[f.id][t]
                    worst = max(worst, abs(fd - ref) / max(1.0, abs(ref)))
    return worst


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------


def autarky_payload(scenario, equilibrium) -> dict:
    bundle = equilibrium.bundle
    return {
        "utility": bundle.utility,
        "iterations": equilibrium.iterations,
        "residual": equilibrium.residual,
        "kkt_worst": equilibrium.kkt.worst,
        "invariant_violations": bundle.check_invariants(
            tol=scenario.settings.residual_tolerance),
        "degenerate_horizon": equilibrium.degenerate_horizon,
        "lam": bundle.lam,
        "surplus": bundle.surplus,
        "over_assignment": bundle.over_assignment,
        "aggregate_power": bundle.aggregate_power,
        "quantities": bundle.quantities,
        "tau": bundle.tau,
        "tau_avg": bundle.tau_avg,
        "phi": bundle.phi,
        "endowments": bundle.endowments,
        "assignments": bundle.assignments,
    }


def emit_report(text: str, out=None) -> None:
    """Print to stdout or atomically to a file."""

    if out is None:
        print(text, end="" if text.endswith("\n") else "\n")
    else:
        atomic_write_text(out, text)


CHECK_COLUMNS = ("name", "passed", "value", "tolerance", "detail")


def checks_to_csv(checks) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CHECK_COLUMNS)
    for c in checks:
        writer.writerow([c.name, "PASS" if c.passed else "FAIL",
                         fmt(c.value), fmt(c.tolerance), c.detail])
    return buf.getvalue()


def report_to_text(report: RunReport, fmt_name: str = "json") -> str:
    if fmt_name == "json":
        return report.to_json()
    if fmt_name == "csv":
        return checks_to_csv(report.checks)
    if fmt_name == "lines":
        lines = [f"scenario {report.scenario_name} ({report.scenario_hash[:12]})"]
        lines += [c.line() for c in report.checks]
        lines.append("OK" if report.ok else "FAILED")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt_name!r}")
