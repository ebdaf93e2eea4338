"""Scenario files: JSON round trip, schema validation, canonical hashing.

A scenario file is plain JSON validated against the packaged schema
before any object is built. Serialization is canonical (sorted keys,
no incidental whitespace), so equal scenarios hash equally and emitted
files are byte-stable across runs.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from importlib import resources

import jsonschema

from .errors import IoFailure, ValidationError
from .model import (
    COMMODITY_MONEY,
    WEIGHTED_LOG,
    EconomyScenario,
    EnergyGoodSpec,
    FinalGoodSpec,
    MoneySettings,
    PrimeMoverSpec,
    ProductionTech,
    UtilityModel,
    ensure_valid,
)
from .numerics import SolverSettings


def _schema():
    text = resources.files("energyecon").joinpath("scenario.schema.json").read_text()
    return json.loads(text)


def validate_document(doc) -> None:
    """Schema-check a raw scenario document; collect every violation."""

    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        raise ValidationError(
            ["/".join(str(p) for p in e.absolute_path) + ": " + e.message for e in errors]
        )


def scenario_from_dict(doc) -> EconomyScenario:
    validate_document(doc)
    T = doc["horizon"]
    pms = tuple(
        PrimeMoverSpec(
            id=p["id"],
            power_rate=p["power_rate"],
            depreciation=p["depreciation"],
            initial_endowment=p.get("initial_endowment", 0.0),
            direct_transfer=p.get("direct_transfer"),
            build_energy_initial=p.get("build_energy_initial", 0.0),
        )
        for p in doc["prime_movers"]
    )
    energy = tuple(
        EnergyGoodSpec(
            id=e["id"],
            energy_content=e["energy_content"],
            initial_stock=e.get("initial_stock", 0.0),
        )
        for e in doc["energy_goods"]
    )
    finals = tuple(
        FinalGoodSpec(id=f["id"], weights=tuple(float(w) for w in f["weights"]))
        for f in doc["final_goods"]
    )
    techs = {
        gid: ProductionTech(
            good_id=gid,
            form=t["form"],
            scale=t["scale"],
            exponents={k: float(v) for k, v in t["exponents"].items()},
        )
        for gid, t in doc["technologies"].items()
    }
    utility = UtilityModel.weighted_log({f.id: f.weights for f in finals})
    sv = doc.get("solver", {})
    renames = {
        "tol": "tolerance",
        "damping": "damping",
        "max_iter": "max_iterations",
        "grid": "grid_resolution",
        "fd_step": "fd_step",
    }
    settings = SolverSettings(**{renames[k]: v for k, v in sv.items()})
    money = None
    if "money" in doc:
        m = doc["money"]
        money = MoneySettings(
            real_good=m.get("real_good", "auto"),
            quantity_real=_as_path(m.get("quantity_real", 1.0), T),
            quantity_nominal=_as_path(m.get("quantity_nominal", 1.0), T),
            mode=m.get("mode", COMMODITY_MONEY),
        )
    scenario = EconomyScenario(
        horizon=T,
        prime_movers=pms,
        energy_goods=energy,
        final_goods=finals,
        technologies=techs,
        utility=utility,
        settings=settings,
        money=money,
        name=doc.get("name", "scenario"),
    )
    return ensure_valid(scenario)


def _as_path(value, T):
    if isinstance(value, (int, float)):
        return (float(value),) * T
    return tuple(float(v) for v in value)


def scenario_to_dict(scenario: EconomyScenario) -> dict:
    doc = {
        "name": scenario.name,
        "horizon": scenario.horizon,
        "prime_movers": [
            {
                "id": p.id,
                "power_rate": p.power_rate,
                "depreciation": p.depreciation,
                "initial_endowment": p.initial_endowment,
                "direct_transfer": p.direct_transfer,
                "build_energy_initial": p.build_energy_initial,
            }
            for p in scenario.prime_movers
        ],
        "energy_goods": [
            {"id": e.id, "energy_content": e.energy_content, "initial_stock": e.initial_stock}
            for e in scenario.energy_goods
        ],
        "final_goods": [
            {"id": f.id, "weights": list(f.weights)} for f in scenario.final_goods
        ],
        "technologies": {
            gid: {"form": t.form, "scale": t.scale, "exponents": dict(t.exponents)}
            for gid, t in sorted(scenario.technologies.items())
        },
        "utility": {"form": WEIGHTED_LOG},
        "solver": {
            "tol": scenario.settings.tolerance,
            "damping": scenario.settings.damping,
            "max_iter": scenario.settings.max_iterations,
            "grid": scenario.settings.grid_resolution,
            "fd_step": scenario.settings.fd_step,
        },
    }
    if scenario.money is not None:
        doc["money"] = {
            "real_good": scenario.money.real_good,
            "quantity_real": list(scenario.money.quantity_real),
            "quantity_nominal": list(scenario.money.quantity_nominal),
            "mode": scenario.money.mode,
        }
    return doc


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def scenario_hash(scenario: EconomyScenario) -> str:
    """sha256 of the canonical serialization; stable across key order."""

    return hashlib.sha256(canonical_json(scenario_to_dict(scenario)).encode()).hexdigest()


def load_scenario(path) -> EconomyScenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as err:
        raise IoFailure(f"cannot read scenario {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ValidationError([f"{path} is not valid JSON: {err}"]) from err
    return scenario_from_dict(doc)


def atomic_write_text(path, text: str) -> None:
    """Write-then-rename so readers never see a half-written file."""

    directory = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as err:
        raise IoFailure(f"cannot write {path}: {err}") from err


def dump_scenario(scenario: EconomyScenario, path) -> None:
    doc = scenario_to_dict(scenario)
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
