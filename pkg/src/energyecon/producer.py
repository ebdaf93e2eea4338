"""Direct-energy-transfer minimization for given production targets.

The producer takes per-period output targets for every good, a service
endowment path per prime mover, and finds the cheapest feasible allocation
of prime-mover services, where "cheapest" counts direct energy transfers.
The shadow price on a binding endowment is the power scarcity cost; the
shadow price on an output target is that good's marginal energy transfer.

Periods decouple, so each one is solved on its own. The solve is exact
wherever the cost formulas allow: free capacity solves in closed form,
binding capacity with smooth technologies solves by clearing the service
market over scarcity costs, all-linear instances go through an LP, and the
rest fall back to a general nonlinear solve.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import optimize

from .costs import cheapest_linear_input, conditional_demand, marginal_cost
from .errors import InfeasibleError, NoConvergenceError
from .model import COBB_DOUGLAS, LINEAR, ProductionTech
from .numerics import DEFAULT_SETTINGS, KktResiduals, SolverSettings

USE_TOL = 1e-11


@dataclass(frozen=True)
class ProducerProblem:
    """One agent's production program.

    targets and endowments are per-period arrays; lam is the marginal
    utility path of the surrounding equilibrium. The optimality conditions
    are free of lam, but it travels with the problem so residual reports
    can be read in utility units when needed.
    """

    targets: Mapping[str, np.ndarray]
    endowments: Mapping[str, np.ndarray]
    lam: np.ndarray
    technologies: Mapping[str, ProductionTech]
    epsilon: Mapping[str, float]

    @property
    def horizon(self) -> int:
        for arr in self.targets.values():
            return len(np.atleast_1d(arr))
        for arr in self.endowments.values():
            return len(np.atleast_1d(arr))
        return len(np.atleast_1d(self.lam))


@dataclass
class ProducerSolution:
    allocations: dict  # good -> {pm -> (T,)}
    tau: dict  # good -> (T,) marginal transfer
    phi: dict  # pm -> (T,) scarcity cost
    objective: float  # total direct transfers, Joules
    residuals: KktResiduals
    period_residuals: list
    method: list  # per-period solve path, for diagnostics
    converged: bool = True


def solve_transfer_min(problem: ProducerProblem, settings: SolverSettings = DEFAULT_SETTINGS):
    """Minimize total direct transfers subject to targets and endowments."""

    T = problem.horizon
    goods = sorted(problem.targets)
    pms = sorted(problem.endowments)
    alloc = {g: {l: np.zeros(T) for l in problem.technologies[g].support()} for g in goods}
    tau = {g: np.zeros(T) for g in goods}
    phi = {l: np.zeros(T) for l in pms}
    period_residuals = []
    methods = []

    for t in range(T):
        targets_t = {g: float(np.atleast_1d(problem.targets[g])[t]) for g in goods}
        endow_t = {l: float(np.atleast_1d(problem.endowments[l])[t]) for l in pms}
        x_t, tau_t, phi_t, method = _solve_period(
            targets_t, endow_t, problem.technologies, problem.epsilon, settings, t
        )
        for g in goods:
            for l, v in x_t[g].items():
                alloc[g][l][t] = v
            tau[g][t] = tau_t[g]
        for l in pms:
            phi[l][t] = phi_t.get(l, 0.0)
        methods.append(method)
        period_residuals.append(
            _period_residuals(targets_t, endow_t, x_t, tau_t, phi_t, problem)
        )

    objective = 0.0
    for g in goods:
        for l, path in alloc[g].items():
            objective += problem.epsilon[l] * float(np.sum(path))

    worst = KktResiduals(
        stationarity=max(r.stationarity for r in period_residuals),
        primal_feasibility=max(r.primal_feasibility for r in period_residuals),
        dual_feasibility=max(r.dual_feasibility for r in period_residuals),
        complementarity=max(r.complementarity for r in period_residuals),
    )
    return ProducerSolution(
        allocations=alloc,
        tau=tau,
        phi=phi,
        objective=objective,
        residuals=worst,
        period_residuals=period_residuals,
        method=methods,
        converged=worst.worst < settings.residual_tolerance,
    )


# ---------------------------------------------------------------------------
# single-period solve
# ---------------------------------------------------------------------------


def _demand_at(targets, techs, prices):
    x = {}
    for g, q in targets.items():
        x[g] = dict(conditional_demand(techs[g], q, prices).inputs)
    return x


def _totals(x, pms):
    tot = {l: 0.0 for l in pms}
    for per_pm in x.values():
        for l, v in per_pm.items():
            tot[l] += v
    return tot


def _solve_period(targets, endow, techs, epsilon, settings, t):
    pms = sorted(endow)
    goods = sorted(targets)
    scale = max([1.0] + [abs(endow[l]) for l in pms])
    fit_tol = 1e-9 * scale

    # Free-capacity attempt: scarcity costs all zero.
    prices0 = {l: epsilon[l] for l in pms}
    x0 = _demand_at(targets, techs, prices0)
    tot0 = _totals(x0, pms)
    if all(tot0[l] <= endow[l] + fit_tol for l in pms):
        tau = {g: marginal_cost(techs[g], targets[g], prices0) for g in goods}
        return x0, tau, {l: 0.0 for l in pms}, "closed-form"

    # Demand that cannot move between prime movers is a hard floor.
    rigid_goods = [g for g in goods if len(techs[g].support()) == 1]
    rigid_tot = _totals({g: x0[g] for g in rigid_goods}, pms)
    for l in pms:
        if rigid_tot[l] > endow[l] + fit_tol:
            raise InfeasibleError(
                f"targets need {rigid_tot[l]:.6g} services of {l} in period {t + 1} "
                f"but only {endow[l]:.6g} exist"
            )

    # Single-input demand is not a choice; net it out so the harder solvers
    # only see goods whose allocation can actually move.
    elastic_goods = [g for g in goods if g not in rigid_goods]
    if rigid_goods and elastic_goods:
        sub_targets = {g: targets[g] for g in elastic_goods}
        sub_endow = {l: max(0.0, endow[l] - rigid_tot[l]) for l in pms}
        x, tau, phi, method = _dispatch_elastic(
            sub_targets, sub_endow, techs, epsilon, settings, t
        )
        prices = {l: epsilon[l] + phi.get(l, 0.0) for l in pms}
        for g in rigid_goods:
            x[g] = dict(x0[g])
            tau[g] = marginal_cost(techs[g], targets[g], prices)
        return x, tau, phi, method + "+rigid"
    return _dispatch_elastic(targets, endow, techs, epsilon, settings, t)


def _dispatch_elastic(targets, endow, techs, epsilon, settings, t):
    goods = sorted(targets)
    forms = {techs[g].form for g in goods if targets[g] > 0.0 or techs[g].form == LINEAR}
    elastic_linear = [
        g for g in goods if techs[g].form == LINEAR and len(techs[g].support()) > 1
    ]
    if forms <= {LINEAR}:
        return _solve_period_lp(targets, endow, techs, epsilon, t)
    # Joint feasibility is settled before iterating: scarcity-cost clearing
    # cannot tell a diverging price spiral from a slow one on its own.
    cols = [(g, l) for g in goods for l in sorted(techs[g].support())]
    feas = _phase1_feasible_point(targets, endow, techs, cols, t)
    if not elastic_linear:
        return _solve_period_clearing(targets, endow, techs, epsilon, settings, t)
    return _solve_period_mixed(
        targets, endow, techs, epsilon, settings, t, elastic_linear, feas
    )


def _solve_period_mixed(targets, endow, techs, epsilon, settings, t, lin, feas):
    """Linear goods assigned to one prime mover each, the rest cleared.

    A constant-returns good generically sources from a single cheapest
    prime mover, so each assignment turns it into fixed demand and leaves a
    smooth clearing problem. The first assignment whose scarcity costs
    certify the choice as cheapest is the optimum; a genuine tie falls back
    to the general solver.
    """

    pms = sorted(endow)
    goods = sorted(targets)
    scale = max([1.0] + [abs(endow[l]) for l in pms])
    options = [sorted(techs[g].support()) for g in lin]
    n_combos = 1
    for opt in options:
        n_combos *= len(opt)
    if n_combos > 64:
        return _solve_period_nlp(targets, endow, techs, epsilon, settings, t, feas)

    for combo in itertools.product(*options):
        sub_endow = dict(endow)
        need = {}
        ok = True
        for g, l in zip(lin, combo):
            req = targets[g] / (techs[g].scale * techs[g].exponents[l])
            need[g] = (l, req)
            sub_endow[l] -= req
            if sub_endow[l] < -1e-12 * scale:
                ok = False
                break
        if not ok:
            continue
        sub_targets = {g: targets[g] for g in goods if g not in lin}
        try:
            x, tau, phi, _ = _solve_period_clearing(
                sub_targets,
                {l: max(0.0, e) for l, e in sub_endow.items()},
                techs,
                epsilon,
                settings,
                t,
            )
        except (InfeasibleError, NoConvergenceError):
            continue
        prices = {l: epsilon[l] + phi.get(l, 0.0) for l in pms}
        certified = True
        for g, (l, _req) in need.items():
            tech = techs[g]
            unit = {
                ll: prices[ll] / (tech.scale * tech.exponents[ll])
                for ll in tech.support()
            }
            if unit[l] > min(unit.values()) * (1.0 + 1e-9):
                certified = False
                break
        if not certified:
            continue
        for g, (l, req) in need.items():
            x[g] = {ll: 0.0 for ll in techs[g].support()}
            x[g][l] = req
            tau[g] = marginal_cost(techs[g], targets[g], prices)
        return x, tau, phi, "assigned"

    return _solve_period_nlp(targets, endow, techs, epsilon, settings, t, feas)


def _solve_period_clearing(targets, endow, techs, epsilon, settings, t):
    """Raise scarcity costs until service demand fits the endowments.

    Demand from multi-input concave technologies shifts smoothly between
    prime movers as relative scarcity changes, so complementarity clears by
    per-prime-mover root finding inside Gauss-Seidel sweeps.
    """

    pms = sorted(endow)
    goods = sorted(targets)
    scale = max([1.0] + [abs(endow[l]) for l in pms])
    fit_tol = 1e-10 * scale
    phi = {l: 0.0 for l in pms}
    phi_cap = 1e12 * max(epsilon.values())

    def demand_totals(phi_map):
        prices = {l: epsilon[l] + phi_map[l] for l in pms}
        return _totals(_demand_at(targets, techs, prices), pms)

    def excess(l, value):
        trial = dict(phi)
        trial[l] = value
        return demand_totals(trial)[l] - endow[l]

    for _sweep in range(200):
        moved = 0.0
        for l in pms:
            e_zero = excess(l, 0.0)
            if e_zero <= fit_tol:
                moved = max(moved, abs(phi[l]))
                phi[l] = 0.0
                continue
            hi = max(phi[l], epsilon[l])
            while excess(l, hi) > 0.0:
                hi *= 2.0
                if hi > phi_cap:
                    raise InfeasibleError(
                        f"no scarcity cost clears {l} in period {t + 1}; "
                        "targets exceed what the endowments can produce"
                    )
            new = optimize.brentq(lambda v: excess(l, v), 0.0, hi, xtol=1e-14, rtol=1e-15)
            moved = max(moved, abs(new - phi[l]))
            phi[l] = float(new)
        tot = demand_totals(phi)
        worst = max(
            max(tot[l] - endow[l] for l in pms),
            max((phi[l] for l in pms if tot[l] < endow[l] - fit_tol), default=0.0),
        )
        if worst <= fit_tol and moved <= settings.tolerance * max(1.0, max(phi.values())):
            break
    else:
        raise NoConvergenceError(
            f"service-market clearing did not settle in period {t + 1}",
            best=phi,
        )

    prices = {l: epsilon[l] + phi[l] for l in pms}
    x = _demand_at(targets, techs, prices)
    tau = {g: marginal_cost(techs[g], targets[g], prices) for g in goods}
    return x, tau, phi, "clearing"


def _solve_period_lp(targets, endow, techs, epsilon, t):
    """All-linear instance: a transportation-style LP with exact duals."""

    pms = sorted(endow)
    goods = sorted(targets)
    cols = []  # (good, pm)
    c = []
    for g in goods:
        for l in sorted(techs[g].support()):
            cols.append((g, l))
            c.append(epsilon[l])
    n = len(cols)
    a_ub = []
    b_ub = []
    for g in goods:  # -output <= -target
        row = np.zeros(n)
        for j, (gg, l) in enumerate(cols):
            if gg == g:
                row[j] = -techs[g].scale * techs[g].exponents[l]
        a_ub.append(row)
        b_ub.append(-targets[g])
    for l in pms:  # total services <= endowment
        row = np.zeros(n)
        for j, (g, ll) in enumerate(cols):
            if ll == l:
                row[j] = 1.0
        a_ub.append(row)
        b_ub.append(endow[l])
    res = optimize.linprog(
        c, A_ub=np.array(a_ub), b_ub=np.array(b_ub), bounds=[(0, None)] * n, method="highs"
    )
    if res.status == 2:
        raise InfeasibleError(
            f"targets exceed what the endowments can produce in period {t + 1}"
        )
    if res.status != 0:
        raise NoConvergenceError(f"LP solve failed in period {t + 1}: {res.message}")
    marg = res.ineqlin.marginals
    tau = {g: float(-marg[i]) for i, g in enumerate(goods)}
    phi = {l: float(-marg[len(goods) + i]) for i, l in enumerate(pms)}
    x = {g: {l: 0.0 for l in techs[g].support()} for g in goods}
    for j, (g, l) in enumerate(cols):
        x[g][l] = float(res.x[j])
    _canonicalize_linear_ties(x, targets, endow, techs, epsilon, phi)
    return x, tau, phi, "lp"


def _canonicalize_linear_ties(x, targets, endow, techs, epsilon, phi):
    """Prefer the first prime-mover id among exactly equally cheap suppliers.

    Keeps output and cost unchanged; only shuffles allocation inside a tie
    group, so LP-degenerate optima come out the same way every run.
    """

    pms = sorted(endow)
    used = {l: 0.0 for l in pms}
    for per_pm in x.values():
        for l, v in per_pm.items():
            used[l] += v
    for g in sorted(targets):
        tech = techs[g]
        if tech.form != LINEAR:
            continue
        unit = {l: (epsilon[l] + phi[l]) / (tech.scale * tech.exponents[l]) for l in tech.support()}
        lo = min(unit.values())
        tied = [l for l in sorted(tech.support()) if unit[l] <= lo * (1 + 1e-12)]
        if len(tied) < 2:
            continue
        for receiver in tied:
            room = endow[receiver] - used[receiver]
            for donor in reversed(tied):
                if donor == receiver or room <= 0.0:
                    continue
                give_out = x[g][donor] * tech.scale * tech.exponents[donor]
                if give_out <= 0.0:
                    continue
                # services the receiver needs for the same output
                need = give_out / (tech.scale * tech.exponents[receiver])
                take = min(need, room)
                frac = take / need
                x[g][donor] -= frac * x[g][donor]
                x[g][receiver] += take
                used[donor] -= frac * give_out / (tech.scale * tech.exponents[donor])
                used[receiver] += take
                room -= take


def _solve_period_nlp(targets, endow, techs, epsilon, settings, t, feas):
    """General fallback: smooth NLP plus bounded least-squares multipliers."""

    pms = sorted(endow)
    goods = sorted(targets)
    cols = []
    for g in goods:
        for l in sorted(techs[g].support()):
            cols.append((g, l))
    n = len(cols)

    def x_map(v):
        out = {g: {} for g in goods}
        for j, (g, l) in enumerate(cols):
            out[g][l] = max(v[j], 0.0)
        return out

    def objective(v):
        return float(sum(epsilon[l] * v[j] for j, (_, l) in enumerate(cols)))

    def objective_grad(v):
        return np.array([epsilon[l] for (_, l) in cols])

    cons = []
    for g in goods:

        def out_con(v, g=g):
            from .model import eval_production

            xm = x_map(v)
            return eval_production(techs[g], xm[g], with_marginals=False).output - targets[g]

        cons.append({"type": "ineq", "fun": out_con})
    for l in pms:

        def cap_con(v, l=l):
            return endow[l] - sum(v[j] for j, (_, ll) in enumerate(cols) if ll == l)

        cons.append({"type": "ineq", "fun": cap_con})

    prices0 = {l: epsilon[l] for l in pms}
    x0 = _demand_at(targets, techs, prices0)
    tot0 = _totals(x0, pms)
    shrink = min(
        [1.0] + [endow[l] / tot0[l] for l in pms if tot0[l] > 0.0]
    )
    squeezed = np.zeros(n)
    for j, (g, l) in enumerate(cols):
        squeezed[j] = x0[g].get(l, 0.0) * min(1.0, 0.95 * shrink) + 1e-9

    res = None
    for start in (feas, squeezed):
        res = optimize.minimize(
            objective,
            start,
            jac=objective_grad,
            constraints=cons,
            bounds=[(0.0, None)] * n,
            method="SLSQP",
            options={"maxiter": 500, "ftol": 1e-14},
        )
        if res.success:
            break
    else:
        res = optimize.minimize(
            objective,
            feas,
            jac=objective_grad,
            constraints=cons,
            bounds=[(0.0, None)] * n,
            method="trust-constr",
            options={"maxiter": 3000, "xtol": 1e-12, "gtol": 1e-10},
        )
        violation = max(
            (-min(0.0, float(np.min(np.atleast_1d(c["fun"](res.x))))) for c in cons),
            default=0.0,
        )
        if not res.success or violation > 1e-7:
            raise NoConvergenceError(
                f"producer solve failed in period {t + 1}: {res.message}"
            )
    x = x_map(res.x)
    tau, phi = _recover_multipliers(x, targets, endow, techs, epsilon)
    return x, tau, phi, "nlp"


def _phase1_feasible_point(targets, endow, techs, cols, t):
    """Feasibility by shortfall minimization, from a strictly interior start.

    Infeasibility is decided here, off the residual shortfall, rather than
    from status codes of the cost minimization.
    """

    from .model import eval_production

    pms = sorted(endow)
    goods = sorted(targets)
    n = len(cols)
    m = len(goods)
    users = {l: max(1, sum(1 for (_, ll) in cols if ll == l)) for l in pms}

    def x_of(z, g):
        return {
            l: max(z[j], 0.0) for j, (gg, l) in enumerate(cols) if gg == g
        }

    cons = []
    for i, g in enumerate(goods):

        def short_con(z, g=g, i=i):
            out = eval_production(techs[g], x_of(z, g), with_marginals=False).output
            return out + z[n + i] - targets[g]

        cons.append({"type": "ineq", "fun": short_con})
    for l in pms:

        def cap_con(z, l=l):
            return endow[l] - sum(z[j] for j, (_, ll) in enumerate(cols) if ll == l)

        cons.append({"type": "ineq", "fun": cap_con})

    start = np.zeros(n + m)
    for j, (g, l) in enumerate(cols):
        start[j] = 0.9 * endow[l] / users[l] + 1e-12
    for i, g in enumerate(goods):
        out = eval_production(techs[g], x_of(start, g), with_marginals=False).output
        start[n + i] = max(targets[g] - out, 0.0) + 1e-6

    def shortfall(z):
        return float(np.sum(z[n:]))

    def shortfall_grad(z):
        grad = np.zeros(n + m)
        grad[n:] = 1.0
        return grad

    res = optimize.minimize(
        shortfall,
        start,
        jac=shortfall_grad,
        constraints=cons,
        bounds=[(0.0, None)] * (n + m),
        method="SLSQP",
        options={"maxiter": 500, "ftol": 1e-14},
    )
    if not res.success:
        res = optimize.minimize(
            shortfall,
            start,
            jac=shortfall_grad,
            constraints=cons,
            bounds=[(0.0, None)] * (n + m),
            method="trust-constr",
            options={"maxiter": 3000, "xtol": 1e-12, "gtol": 1e-10},
        )
        if not res.success:
            raise NoConvergenceError(
                f"feasibility probe failed in period {t + 1}: {res.message}"
            )
    gap = shortfall(res.x)
    if gap > 1e-7 * max(1.0, max((targets[g] for g in goods), default=1.0)):
        raise InfeasibleError(
            f"targets exceed what the endowments can produce in period {t + 1}"
        )
    return np.maximum(res.x[:n], 0.0)


def _recover_multipliers(x, targets, endow, techs, epsilon):
    """Bounded least squares on the stationarity system of the used pairs."""

    from .model import eval_production

    pms = sorted(endow)
    goods = sorted(targets)
    used_tot = {l: sum(x[g].get(l, 0.0) for g in goods) for l in pms}
    active_pm = [l for l in pms if endow[l] - used_tot[l] <= 1e-7 * max(1.0, endow[l])]
    rows = []
    rhs = []
    unknowns = [("tau", g) for g in goods] + [("phi", l) for l in active_pm]
    idx = {u: i for i, u in enumerate(unknowns)}
    for g in goods:
        if targets[g] <= 0.0:
            continue
        ev = eval_production(techs[g], x[g])
        for l, xv in x[g].items():
            if xv <= USE_TOL * max(1.0, endow.get(l, 1.0)):
                continue
            row = np.zeros(len(unknowns))
            row[idx[("tau", g)]] = ev.marginal_productivity[l]
            if ("phi", l) in idx:
                row[idx[("phi", l)]] = -1.0
            rows.append(row)
            rhs.append(epsilon[l])
    if not rows:
        prices = {l: epsilon[l] for l in pms}
        return (
            {g: marginal_cost(techs[g], targets[g], prices) for g in goods},
            {l: 0.0 for l in pms},
        )
    sol = optimize.lsq_linear(np.array(rows), np.array(rhs), bounds=(0.0, np.inf))
    tau = {}
    phi = {l: 0.0 for l in pms}
    for (kind, key), i in idx.items():
        if kind == "tau":
            tau[key] = float(sol.x[i])
        else:
            phi[key] = float(sol.x[i])
    prices = {l: epsilon[l] + phi[l] for l in pms}
    for g in goods:
        if targets[g] <= 0.0 or ("tau", g) not in idx or tau.get(g, 0.0) == 0.0:
            tau[g] = marginal_cost(techs[g], targets[g], prices)
    return tau, phi


# ---------------------------------------------------------------------------
# residuals and decomposition
# ---------------------------------------------------------------------------


def _period_residuals(targets, endow, x, tau, phi, problem):
    from .model import eval_production

    stat = 0.0
    primal = 0.0
    comp = 0.0
    dual = max((max(0.0, -v) for v in phi.values()), default=0.0)
    for g, q in targets.items():
        tech = problem.technologies[g]
        ev = eval_production(tech, x[g], with_marginals=False)
        primal = max(primal, max(0.0, q - ev.output))
        if q > 0.0:
            ev_m = eval_production(tech, x[g])
            for l, xv in x[g].items():
                if xv <= USE_TOL * max(1.0, endow.get(l, 1.0)):
                    continue
                gap = tau[g] * ev_m.marginal_productivity[l] - problem.epsilon[l] - phi.get(l, 0.0)
                stat = max(stat, abs(gap))
    totals = {l: 0.0 for l in endow}
    for per_pm in x.values():
        for l, v in per_pm.items():
            totals[l] += v
    for l, cap in endow.items():
        primal = max(primal, totals[l] - cap)
        comp = max(comp, abs(phi.get(l, 0.0) * (cap - totals[l])))
    return KktResiduals(
        stationarity=stat,
        primal_feasibility=primal,
        dual_feasibility=dual,
        complementarity=comp,
    )


@dataclass
class TransferDecomposition:
    """Marginal transfer split into direct and scarcity components.

    psi averages direct transfers per marginal unit over the prime movers
    actually producing the good; theta does the same with scarcity costs.
    mu is the markup of the marginal over the average transfer.
    """

    good_id: str
    psi: np.ndarray
    theta: np.ndarray
    tau: np.ndarray
    tau_avg: np.ndarray
    mu: np.ndarray
    averaged_over_used: bool = True


def decompose_marginal_transfer(
    problem: ProducerProblem,
    solution: ProducerSolution,
    settings: SolverSettings = DEFAULT_SETTINGS,
    markup_step: float | None = None,
):
    """Split each good's marginal transfer and estimate its markup.

    The markup comes from re-solving the program with that good's targets
    scaled both ways by a small relative step and central-differencing the
    log average transfer. Goods with zero targets in a period report a zero
    markup there.
    """

    from .model import eval_production

    h = markup_step if markup_step is not None else settings.fd_step
    T = problem.horizon
    out = {}
    for g in sorted(problem.targets):
        tech = problem.technologies[g]
        psi = np.zeros(T)
        theta = np.zeros(T)
        tau = np.asarray(solution.tau[g], dtype=float).copy()
        tau_avg = np.zeros(T)
        for t in range(T):
            q = float(np.atleast_1d(problem.targets[g])[t])
            phi_t = {l: solution.phi[l][t] for l in solution.phi}
            x_t = {l: solution.allocations[g][l][t] for l in solution.allocations[g]}
            used = [
                l
                for l, v in x_t.items()
                if v > USE_TOL * max(1.0, float(np.atleast_1d(problem.endowments[l])[t]))
            ]
            if q > 0.0 and used:
                ev = eval_production(tech, x_t)
                g_req = ev.marginal_requirement
                psi[t] = float(np.mean([problem.epsilon[l] * g_req[l] for l in used]))
                theta[t] = float(np.mean([phi_t.get(l, 0.0) * g_req[l] for l in used]))
                cost = sum((problem.epsilon[l] + phi_t.get(l, 0.0)) * x_t[l] for l in x_t)
                tau_avg[t] = cost / q
            else:
                # marginal supplier at zero scale: the cheapest feasible margin
                prices = {l: problem.epsilon[l] + phi_t.get(l, 0.0) for l in phi_t}
                if tech.form == LINEAR:
                    l_star = cheapest_linear_input(tech, prices)
                    f_star = tech.scale * tech.exponents[l_star]
                    psi[t] = problem.epsilon[l_star] / f_star
                    theta[t] = phi_t.get(l_star, 0.0) / f_star
                tau_avg[t] = psi[t] + theta[t]
        mu = _markup_by_fd(problem, g, solution, h)
        out[g] = TransferDecomposition(
            good_id=g, psi=psi, theta=theta, tau=tau, tau_avg=tau_avg, mu=mu
        )
    return out


def _markup_by_fd(problem, good, solution, h):
    """Quantity elasticity of the average transfer, by central log difference.

    The perturbed allocations are re-solved at the optimum's service
    prices (direct transfer plus scarcity cost), which is the
    decentralized form of the program. Re-solving the constrained program
    instead would fold the scarcity-cost response into the elasticity and
    break the identity between marginal and average transfers.
    """

    from .costs import average_cost

    T = problem.horizon
    base = np.atleast_1d(np.asarray(problem.targets[good], dtype=float))
    tech = problem.technologies[good]
    mu = np.zeros(T)
    dlq = np.log(1.0 + h) - np.log(1.0 - h)
    for t in range(T):
        if base[t] <= 0.0:
            continue
        prices = {
            l: problem.epsilon[l] + solution.phi[l][t] for l in solution.phi
        }
        up = average_cost(tech, base[t] * (1.0 + h), prices)
        dn = average_cost(tech, base[t] * (1.0 - h), prices)
        if up > 0.0 and dn > 0.0:
            mu[t] = (np.log(up) - np.log(dn)) / dlq
    return mu
