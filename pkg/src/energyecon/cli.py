"""Command-line front end.

Subcommands mirror the library surface: solve one or more economies,
trade a good between solved economies, print the price table, or
re-derive and grade every equilibrium condition. Artifacts land in the
--out directory (current directory by default) and are written
atomically; identical inputs produce byte-identical files. Failures
leave a single JSON line on stderr; exit codes are 0 success, 1 invalid
input or failed verification, 2 no convergence, 3 infeasible economy.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from .autarky import solve_autarky
from .errors import (
    DegenerateFitError,
    EnergyEconError,
    InfeasibleError,
    IoFailure,
    NoConvergenceError,
    ValidationError,
)
from .exchange import (
    agent_from_equilibrium,
    metc_curve,
    multi_agent_tatonnement,
    optimal_bilateral_trade,
)
from .money import embodied_energy, money_state, price_table, proportionality_report
from .reports import (
    PRICE_COLUMNS,
    RunReport,
    autarky_payload,
    emit_report,
    price_rows,
    report_to_text,
    rows_to_csv,
    verify_scenario,
)
from .scenario_io import load_scenario, scenario_hash

MODES = {"fixed-consumption": "fixed", "re-solve": "resolve"}


def _worker_count(n_tasks: int) -> int:
    env = os.environ.get("ENERGYECON_THREADS")
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ValidationError([f"ENERGYECON_THREADS must be an integer, got {env!r}"])
    else:
        cap = min(4, os.cpu_count() or 1)
    return max(1, min(cap, n_tasks))


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="energyecon",
        description="solve and inspect energy-transfer economies",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sa = sub.add_parser("solve-autarky", help="solve economies without trade")
    sa.add_argument("scenarios", nargs="+", metavar="SCENARIO")
    sa.add_argument("--out", default=".", metavar="DIR")
    sa.add_argument("--format", choices=("csv", "structured"), default="structured")
    sa.add_argument("--seed", type=int, default=0)

    se = sub.add_parser("solve-exchange", help="trade one good between solved economies")
    se.add_argument("scenarios", nargs="+", metavar="SCENARIO")
    se.add_argument("--good", required=True)
    se.add_argument("--numeraire", default=None)
    se.add_argument("--transfer-cost", type=float, default=0.0)
    se.add_argument("--mode", choices=tuple(MODES), default="fixed-consumption")
    se.add_argument("--period", type=int, default=0)
    se.add_argument("--out", default=".", metavar="DIR")
    se.add_argument("--format", choices=("csv", "structured"), default="structured")
    se.add_argument("--seed", type=int, default=0)

    pr = sub.add_parser("price-report", help="real and nominal price table")
    pr.add_argument("scenarios", nargs="+", metavar="SCENARIO")
    pr.add_argument("--period", type=int, default=0)
    pr.add_argument("--out", default=".", metavar="DIR")
    pr.add_argument("--format", choices=("csv", "structured"), default="csv")
    pr.add_argument("--seed", type=int, default=0)

    ve = sub.add_parser("verify", help="grade every equilibrium condition")
    ve.add_argument("scenarios", nargs="+", metavar="SCENARIO")
    ve.add_argument("--out", default=None, metavar="DIR")
    ve.add_argument("--format", choices=("table", "csv", "structured"), default="table")
    ve.add_argument("--seed", type=int, default=0)
    return p


def _stem(path: str) -> str:
    base = os.path.basename(path)
    return base.split(".", 1)[0] or base


def _artifact(out_dir: str, stem: str, name: str, many: bool) -> str:
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as err:
        raise IoFailure(f"cannot create output directory {out_dir}: {err}")
    fname = f"{stem}.{name}" if many else name
    return os.path.join(out_dir, fname)


def _solve_autarky_cmd(args) -> int:
    scenarios = [load_scenario(p) for p in args.scenarios]
    with ThreadPoolExecutor(max_workers=_worker_count(len(scenarios))) as pool:
        results = list(pool.map(solve_autarky, scenarios))
    many = len(scenarios) > 1
    chunks = []
    for path, sc, eq in zip(args.scenarios, scenarios, results):
        report = RunReport(
            kind="autarky",
            scenario_name=sc.name,
            scenario_hash=scenario_hash(sc),
            payload=autarky_payload(sc, eq),
        )
        csv_text = rows_to_csv(price_rows(sc, eq, period=0), PRICE_COLUMNS)
        emit_report(report.to_json(), _artifact(args.out, _stem(path), "solution.json", many))
        emit_report(csv_text, _artifact(args.out, _stem(path), "prices.csv", many))
        chunks.append(csv_text if args.format == "csv" else report.to_json())
    print("".join(chunks), end="")
    return 0


def _exchange_payload(agents, args):
    mode = MODES[args.mode]
    goods = [args.good]
    result = multi_agent_tatonnement(agents, goods, t=args.period, mode=mode)
    payload = {
        "mode": args.mode,
        "good": args.good,
        "period": args.period + 1,
        "prices": result.prices,
        "supplies": result.supplies,
        "consumption": result.consumption,
        "net_imports": result.net_imports,
        "iterations": result.iterations,
        "residual": result.residual,
    }
    if len(agents) == 2:
        trade = optimal_bilateral_trade(
            {a.name: a for a in agents},
            good=args.good,
            t=args.period,
            unit_transfer_cost=args.transfer_cost,
            numeraire=args.numeraire,
        )
        payload["bilateral"] = {
            "exporter": trade.exporter,
            "importer": trade.importer,
            "quantity": trade.quantity,
            "export_marginal": trade.export_marginal,
            "import_marginal": trade.import_marginal,
            "gains": trade.gains,
            "unit_transfer_cost": trade.unit_transfer_cost,
            "price_ratio": trade.price_ratio,
            "reservation": trade.reservation,
            "corner": trade.corner,
        }
    samples = {}
    for agent in agents:
        curve = metc_curve(agent.problem, args.good, t=args.period, points=9)
        samples[agent.name] = {
            "quantities": list(curve.quantities),
            "values": list(curve.values),
        }
    payload["curve_samples"] = samples
    return payload


def _exchange_rows(payload):
    rows = []
    for name in sorted(payload["supplies"]):
        rows.append({
            "agent": name,
            "good": payload["good"],
            "supply": payload["supplies"][name][payload["good"]],
            "consumption": payload["consumption"][name][payload["good"]],
            "net_import": payload["net_imports"][name][payload["good"]],
            "market_transfer": payload["prices"][payload["good"]],
        })
    return rows


def _solve_exchange_cmd(args) -> int:
    if len(args.scenarios) < 2:
        raise ValidationError(["solve-exchange needs at least two scenarios"])
    scenarios = [load_scenario(p) for p in args.scenarios]
    with ThreadPoolExecutor(max_workers=_worker_count(len(scenarios))) as pool:
        results = list(pool.map(solve_autarky, scenarios))
    agents = []
    for path, sc, eq in zip(args.scenarios, scenarios, results):
        name = sc.name or _stem(path)
        if any(a.name == name for a in agents):
            name = f"{name}-{len(agents)}"
        agents.append(agent_from_equilibrium(name, sc, eq))

    payload = _exchange_payload(agents, args)
    report = RunReport(
        kind="exchange",
        scenario_name="+".join(sc.name for sc in scenarios),
        scenario_hash=":".join(scenario_hash(sc) for sc in scenarios),
        payload=payload,
    )
    emit_report(report.to_json(), _artifact(args.out, "exchange", "exchange.json", False))
    if args.format == "csv":
        cols = ("agent", "good", "supply", "consumption", "net_import", "market_transfer")
        print(rows_to_csv(_exchange_rows(payload), cols), end="")
    else:
        print(report.to_json(), end="")
    return 0


def _price_report_cmd(args) -> int:
    scenarios = [load_scenario(p) for p in args.scenarios]
    with ThreadPoolExecutor(max_workers=_worker_count(len(scenarios))) as pool:
        results = list(pool.map(solve_autarky, scenarios))
    many = len(scenarios) > 1
    chunks = []
    for path, sc, eq in zip(args.scenarios, scenarios, results):
        if args.period < 0 or args.period >= sc.horizon:
            raise ValidationError([f"--period must lie in [0, {sc.horizon})"])
        rows = price_rows(sc, eq, period=args.period)
        csv_text = rows_to_csv(rows, PRICE_COLUMNS)
        payload = {"period": args.period + 1, "rows": rows}
        try:
            state = money_state(sc, eq)
            table = price_table(eq, state)
            embodied = embodied_energy(sc, eq)
            fit = proportionality_report(eq, table, embodied, period=args.period)
            payload["proportionality"] = {
                "slope": fit.slope,
                "intercept": fit.intercept,
                "r_squared": fit.r_squared,
                "identity_residual": fit.identity_residual,
                "goods": fit.goods,
            }
        except DegenerateFitError as err:
            payload["proportionality"] = {"error": str(err)}
        report = RunReport(
            kind="prices",
            scenario_name=sc.name,
            scenario_hash=scenario_hash(sc),
            payload=payload,
        )
        emit_report(csv_text, _artifact(args.out, _stem(path), "prices.csv", many))
        emit_report(report.to_json(),
                    _artifact(args.out, _stem(path), "price_report.json", many))
        chunks.append(csv_text if args.format == "csv" else report.to_json())
    print("".join(chunks), end="")
    return 0


def _verify_cmd(args) -> int:
    scenarios = [load_scenario(p) for p in args.scenarios]
    with ThreadPoolExecutor(max_workers=_worker_count(len(scenarios))) as pool:
        reports = list(pool.map(lambda sc: verify_scenario(sc, seed=args.seed), scenarios))
    fmt_name = {"table": "lines", "csv": "csv", "structured": "json"}[args.format]
    many = len(scenarios) > 1
    if args.out is not None:
        for path, rep in zip(args.scenarios, reports):
            emit_report(rep.to_json(), _artifact(args.out, _stem(path), "verify.json", many))
            emit_report(report_to_text(rep, "csv"),
                        _artifact(args.out, _stem(path), "verify.csv", many))
    print("".join(report_to_text(r, fmt_name) for r in reports), end="")
    return 0 if all(r.ok for r in reports) else 1


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as err:
        code = err.code if isinstance(err.code, int) else 1
        return 0 if code == 0 else 1
    handlers = {
        "solve-autarky": _solve_autarky_cmd,
        "solve-exchange": _solve_exchange_cmd,
        "price-report": _price_report_cmd,
        "verify": _verify_cmd,
    }
    try:
        return handlers[args.command](args)
    except ValidationError as err:
        _stderr_json("validation", str(err), err.violations)
        return 1
    except IoFailure as err:
        _stderr_json("io", str(err))
        return 1
    except NoConvergenceError as err:
        _stderr_json("no-convergence", str(err))
        return 2
    except InfeasibleError as err:
        _stderr_json("infeasible", str(err))
        return 3
    except EnergyEconError as err:
        _stderr_json(type(err).__name__, str(err))
        return 1


def _stderr_json(kind: str, message: str, detail=None) -> None:
    doc = {"error": kind, "message": message}
    if detail:
        doc["detail"] = detail
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
