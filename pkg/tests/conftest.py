"""Shared fixtures: shipped scenarios solved once per session, plus the
randomized small-problem generator used by the solver property tests."""

import json
from pathlib import Path

import numpy as np
import pytest

from energyecon import load_scenario, solve_autarky
from energyecon.costs import conditional_demand
from energyecon.errors import InfeasibleError
from energyecon.exchange import agent_from_equilibrium
from energyecon.model import COBB_DOUGLAS, LINEAR, ProductionTech
from energyecon.producer import ProducerProblem

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


def scenario_path(name: str) -> Path:
    return SCENARIO_DIR / f"{name}.json"


def scenario_doc(name: str) -> dict:
    with open(scenario_path(name)) as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def default_scenario():
    return load_scenario(scenario_path("default"))


@pytest.fixture(scope="session")
def default_eq(default_scenario):
    return solve_autarky(default_scenario)


@pytest.fixture(scope="session")
def two_energy_scenario():
    return load_scenario(scenario_path("two_energy"))


@pytest.fixture(scope="session")
def two_energy_eq(two_energy_scenario):
    return solve_autarky(two_energy_scenario)


@pytest.fixture(scope="session")
def flat_scenario():
    return load_scenario(scenario_path("proportionality_flat"))


@pytest.fixture(scope="session")
def flat_eq(flat_scenario):
    return solve_autarky(flat_scenario)


@pytest.fixture(scope="session")
def noisy_scenario():
    return load_scenario(scenario_path("proportionality_noisy"))


@pytest.fixture(scope="session")
def noisy_eq(noisy_scenario):
    return solve_autarky(noisy_scenario)


@pytest.fixture(scope="session")
def trade_pair():
    """Two solved economies differing only in their cloth technology."""

    out = {}
    for name in ("exchange_a", "exchange_b"):
        sc = load_scenario(scenario_path(name))
        out[name] = (sc, solve_autarky(sc))
    alice = agent_from_equilibrium("alice", *out["exchange_a"])
    bob = agent_from_equilibrium("bob", *out["exchange_b"])
    return {"alice": alice, "bob": bob,
            "scenarios": {k: v[0] for k, v in out.items()},
            "equilibria": {k: v[1] for k, v in out.items()}}


def random_producer_problem(rng):
    """Draw a small feasible producer instance: <=2 goods, <=2 movers, T<=3.

    Endowments are scaled off the unconstrained demand at direct-transfer
    prices, so most draws bind at least one capacity without being infeasible.
    """
    T = int(rng.integers(1, 4))
    movers = [f"m{i}" for i in range(int(rng.integers(1, 3)))]
    epsilon = {l: float(rng.uniform(1.0, 8.0)) for l in movers}
    lam = np.exp(rng.uniform(-0.5, 0.5, T)) * np.linspace(1.0, 0.6, T)

    technologies = {}
    targets = {}
    for j in range(int(rng.integers(1, 3))):
        gid = f"g{j}"
        support = [l for l in movers if rng.random() < 0.7]
        if not support:
            support = [movers[int(rng.integers(0, len(movers)))]]
        if rng.random() < 0.7:
            raw = rng.uniform(0.2, 0.5, len(support))
            raw *= min(1.0, 0.9 / raw.sum())
            technologies[gid] = ProductionTech(
                gid, COBB_DOUGLAS, float(rng.uniform(0.5, 3.0)),
                dict(zip(support, raw.tolist())))
        else:
            technologies[gid] = ProductionTech(
                gid, LINEAR, float(rng.uniform(0.5, 3.0)),
                {l: float(rng.uniform(0.5, 2.0)) for l in support})
        targets[gid] = rng.uniform(0.2, 2.0, T)

    demand = {l: np.zeros(T) for l in movers}
    rigid = {l: np.zeros(T) for l in movers}
    for gid, tech in technologies.items():
        for t in range(T):
            ev = conditional_demand(tech, targets[gid][t], epsilon)
            for l, x in ev.inputs.items():
                demand[l][t] += x
                if len(tech.exponents) == 1:
                    rigid[l][t] += x
    endow = {}
    for l in movers:
        u = rng.uniform(0.8, 1.35)
        endow[l] = np.maximum(demand[l] * u, rigid[l] * 1.02) + 1e-9

    return ProducerProblem(
        targets={g: np.asarray(q, float) for g, q in targets.items()},
        endowments=endow,
        lam=np.asarray(lam, float),
        technologies=technologies,
        epsilon=epsilon,
    )


def draw_feasible_producer_problems(seed, count, solver):
    """Yield (problem, solution) pairs, redrawing the rare infeasible case."""
    rng = np.random.default_rng(seed)
    made = 0
    attempts = 0
    while made < count:
        attempts += 1
        if attempts > count * 20:
            raise RuntimeError("generator kept producing infeasible draws")
        problem = random_producer_problem(rng)
        try:
            solution = solver(problem)
        except InfeasibleError:
            continue
        made += 1
        yield problem, solution
