"""Shared numerical kernels: KKT solving, damped fixed points, finite
differences, and exhaustive grid oracles.

The grid oracle is intentionally brute force. It exists so that every clever
solver in the package can be cross-checked against an implementation whose
only failure mode is resolution, and it must never share code with the
solvers it audits.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    NoConvergenceError,
    NoFeasibleGridPointError,
    NonFiniteEvaluationError,
)

MAX_GRID_DIMS = 4


@dataclass(frozen=True)
class SolverSettings:
    """Knobs shared by the iterative solvers.

    tolerance governs iterate updates, residual_tolerance governs the
    reported optimality/consistency residuals. Damping is the fraction of
    the new iterate blended in per step.
    """

    tolerance: float = 1e-8
    residual_tolerance: float = 1e-6
    damping: float = 0.5
    max_iterations: int = 10_000
    grid_resolution: int = 200
    fd_step: float = 1e-3

    def __post_init__(self):
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping must lie in (0, 1]")
        if self.tolerance <= 0 or self.residual_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


DEFAULT_SETTINGS = SolverSettings()


# ---------------------------------------------------------------------------
# KKT solving
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KktResiduals:
    """Max-norm residuals of the first-order optimality system."""

    stationarity: float
    primal_feasibility: float
    dual_feasibility: float
    complementarity: float

    @property
    def worst(self) -> float:
        return max(
            self.stationarity,
            self.primal_feasibility,
            self.dual_feasibility,
            self.complementarity,
        )


@dataclass
class KktResult:
    point: np.ndarray
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    residuals: KktResiduals
    iterations: int
    converged: bool


def _fischer_burmeister(a, b):
    # zero exactly when a >= 0, b >= 0 and a*b = 0
    return a + b - np.sqrt(a * a + b * b)


def kkt_solve(
    gradient: Callable[[np.ndarray], np.ndarray],
    x0: Sequence[float],
    equalities: Sequence[Callable[[np.ndarray], float]] = (),
    inequalities: Sequence[Callable[[np.ndarray], float]] = (),
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> KktResult:
    """Solve min f(x) s.t. g(x) = 0, h(x) <= 0 from its first-order system.

    ``gradient`` is the gradient of the objective; constraints are scalar
    callables. Multipliers on inequalities are kept non-negative (convention:
    stationarity reads grad f + sum nu_j grad g_j + sum mu_i grad h_i = 0).
    A semismooth Newton iteration on the stationarity/feasibility/
    complementarity map, with a backtracking line search on its norm.
    """

    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    n_eq = len(equalities)
    n_in = len(inequalities)
    nu = np.zeros(n_eq)
    mu = np.full(n_in, 0.1)

    def kkt_map(z):
        xx = z[:n]
        nn = z[n : n + n_eq]
        mm = z[n + n_eq :]
        grad = np.asarray(gradient(xx), dtype=float)
        r_stat = grad.copy()
        for j, g in enumerate(equalities):
            r_stat += nn[j] * _numeric_gradient(g, xx)
        for i, h in enumerate(inequalities):
            r_stat += mm[i] * _numeric_gradient(h, xx)
        r_eq = np.array([g(xx) for g in equalities], dtype=float)
        r_comp = np.array(
            [_fischer_burmeister(-h(xx), mm[i]) for i, h in enumerate(inequalities)],
            dtype=float,
        )
        return np.concatenate([r_stat, r_eq, r_comp])

    z = np.concatenate([x, nu, mu])
    best_z = z.copy()
    best_norm = np.inf
    iterations = 0
    for iterations in range(1, settings.max_iterations + 1):
        r = kkt_map(z)
        if not np.all(np.isfinite(r)):
            raise NonFiniteEvaluationError("KKT map evaluated to a non-finite value")
        norm = float(np.max(np.abs(r)))
        if norm < best_norm:
            best_norm = norm
            best_z = z.copy()
        if norm < settings.tolerance:
            break
        jac = _numeric_jacobian(kkt_map, z)
        try:
            step, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        except np.linalg.LinAlgError:
            raise NoConvergenceError(
                "KKT Newton system became singular", best=best_z, residual=best_norm
            )
        # backtracking on the residual norm
        alpha = 1.0
        for _ in range(40):
            trial = z + alpha * step
            trial_r = kkt_map(trial)
            if np.all(np.isfinite(trial_r)) and np.max(np.abs(trial_r)) < norm:
                z = trial
                break
            alpha *= 0.5
        else:
            z = best_z
            break
    else:
        r = kkt_map(z)
        if np.max(np.abs(r)) >= settings.tolerance:
            raise NoConvergenceError(
                "KKT iteration exhausted its budget",
                best=best_z,
                residual=best_norm,
                iterations=iterations,
            )

    x = z[:n]
    nu = z[n : n + n_eq]
    mu = np.maximum(z[n + n_eq :], 0.0)
    residuals = kkt_residual_report(gradient, x, nu, mu, equalities, inequalities)
    converged = residuals.worst < settings.residual_tolerance
    return KktResult(
        point=x,
        eq_multipliers=nu,
        ineq_multipliers=mu,
        residuals=residuals,
        iterations=iterations,
        converged=converged,
    )


def kkt_residual_report(gradient, x, nu, mu, equalities=(), inequalities=()):
    """Evaluate the standard residual bundle at a candidate point."""

    x = np.asarray(x, dtype=float)
    grad = np.asarray(gradient(x), dtype=float)
    r_stat = grad.copy()
    for j, g in enumerate(equalities):
        r_stat += nu[j] * _numeric_gradient(g, x)
    for i, h in enumerate(inequalities):
        r_stat += mu[i] * _numeric_gradient(h, x)
    h_vals = np.array([h(x) for h in inequalities], dtype=float)
    g_vals = np.array([g(x) for g in equalities], dtype=float)
    primal = 0.0
    if g_vals.size:
        primal = max(primal, float(np.max(np.abs(g_vals))))
    if h_vals.size:
        primal = max(primal, float(np.max(np.maximum(h_vals, 0.0))))
    dual = float(np.max(np.maximum(-np.asarray(mu, dtype=float), 0.0))) if len(mu) else 0.0
    comp = float(np.max(np.abs(np.asarray(mu) * h_vals))) if h_vals.size else 0.0
    return KktResiduals(
        stationarity=float(np.max(np.abs(r_stat))) if r_stat.size else 0.0,
        primal_feasibility=primal,
        dual_feasibility=dual,
        complementarity=comp,
    )


def _numeric_gradient(fn, x, step=1e-7):
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        up = x.copy()
        dn = x.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (fn(up) - fn(dn)) / (2 * h)
    return grad


def _numeric_jacobian(fn, z, step=1e-7):
    z = np.asarray(z, dtype=float)
    f0 = fn(z)
    jac = np.empty((f0.size, z.size))
    for i in range(z.size):
        h = step * max(1.0, abs(z[i]))
        up = z.copy()
        dn = z.copy()
        up[i] += h
        dn[i] -= h
        jac[:, i] = (fn(up) - fn(dn)) / (2 * h)
    return jac


# ---------------------------------------------------------------------------
# Fixed points
# ---------------------------------------------------------------------------


@dataclass
class FixedPointResult:
    point: np.ndarray
    iterations: int
    residual: float
    history: list = field(default_factory=list)


def fixed_point_iterate(
    mapping: Callable[[np.ndarray], np.ndarray],
    start: Sequence[float],
    settings: SolverSettings = DEFAULT_SETTINGS,
    record_history: bool = False,
) -> FixedPointResult:
    """Damped iteration x <- (1 - d) x + d T(x) until ||T(x) - x|| is small.

    The residual is measured on the raw map, not the damped update, so the
    stopping rule is invariant to the damping choice. Raises NoConvergence
    with the best iterate attached when the budget runs out.
    """

    x = np.asarray(start, dtype=float).copy()
    d = settings.damping
    best = x.copy()
    best_res = np.inf
    history = []
    for it in range(1, settings.max_iterations + 1):
        tx = np.asarray(mapping(x), dtype=float)
        if not np.all(np.isfinite(tx)):
            raise NonFiniteEvaluationError("fixed-point map produced non-finite values")
        res = float(np.max(np.abs(tx - x)))
        if record_history:
            history.append(res)
        if res < best_res:
            best_res = res
            best = x.copy()
        if res < settings.tolerance:
            return FixedPointResult(point=x, iterations=it, residual=res, history=history)
        x = (1.0 - d) * x + d * tx
    raise NoConvergenceError(
        "fixed-point iteration exhausted its budget",
        best=best,
        residual=best_res,
        iterations=settings.max_iterations,
    )


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------


def finite_diff_gradient(
    fn: Callable[[np.ndarray], float],
    point: Sequence[float] | float,
    step: float = 1e-6,
) -> np.ndarray:
    """Central-difference gradient with a relative step.

    Scalar points are accepted and produce a one-element gradient. Non-finite
    function values raise immediately rather than propagating NaNs.
    """

    scalar = np.isscalar(point)
    x = np.atleast_1d(np.asarray(point, dtype=float))
    grad = np.empty_like(x)
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        up = x.copy()
        dn = x.copy()
        up[i] += h
        dn[i] -= h
        f_up = fn(up[0] if scalar else up)
        f_dn = fn(dn[0] if scalar else dn)
        if not (np.isfinite(f_up) and np.isfinite(f_dn)):
            raise NonFiniteEvaluationError(
                f"objective returned a non-finite value near component {i}"
            )
        grad[i] = (f_up - f_dn) / (2 * h)
    return grad


# ---------------------------------------------------------------------------
# Grid oracle
# ---------------------------------------------------------------------------


@dataclass
class GridOracleResult:
    point: np.ndarray
    value: float
    index: tuple
    evaluated: int


def grid_oracle(
    objective: Callable[[np.ndarray], np.ndarray],
    bounds: Sequence[tuple],
    resolution: int = 200,
    predicate: Callable[[np.ndarray], np.ndarray] | None = None,
    mode: str = "max",
    chunk: int = 500_000,
) -> GridOracleResult:
    """Exhaustively evaluate a box grid and return the best feasible point.

    ``objective`` and ``predicate`` must be vectorized over an (N, dim)
    array of points. Ties resolve to the first point in row-major order, so
    results are deterministic for a fixed grid. Dimensions above
    MAX_GRID_DIMS are refused: this is an audit tool, not an optimizer.
    """

    if mode not in ("max", "min"):
        raise ValueError("mode must be 'max' or 'min'")
    dims = len(bounds)
    if dims == 0 or dims > MAX_GRID_DIMS:
        raise ValueError(f"grid oracle supports 1..{MAX_GRID_DIMS} dimensions, got {dims}")
    axes = [np.linspace(lo, hi, resolution) for lo, hi in bounds]
    shape = tuple(resolution for _ in range(dims))

    best_val = -np.inf if mode == "max" else np.inf
    best_flat = -1
    total = resolution**dims
    evaluated = 0
    for start in range(0, total, chunk):
        stop = min(start + chunk, total)
        flat = np.arange(start, stop)
        coords = np.unravel_index(flat, shape)
        pts = np.stack([axes[d][coords[d]] for d in range(dims)], axis=1)
        vals = np.asarray(objective(pts), dtype=float)
        if predicate is not None:
            ok = np.asarray(predicate(pts), dtype=bool)
        else:
            ok = np.ones(len(pts), dtype=bool)
        ok &= np.isfinite(vals)
        evaluated += int(ok.sum())
        if not ok.any():
            continue
        masked = np.where(ok, vals, -np.inf if mode == "max" else np.inf)
        idx = int(np.argmax(masked)) if mode == "max" else int(np.argmin(masked))
        val = float(masked[idx])
        better = val > best_val if mode == "max" else val < best_val
        if better:
            best_val = val
            best_flat = start + idx
    if best_flat < 0:
        raise NoFeasibleGridPointError("no grid point satisfied the predicate")
    index = tuple(int(i) for i in np.unravel_index(best_flat, shape))
    point = np.array([axes[d][index[d]] for d in range(dims)])
    return GridOracleResult(point=point, value=best_val, index=index, evaluated=evaluated)


def grid_axes(bounds, resolution):
    """The axis vectors a grid_oracle call would use; handy for spacing bounds."""

    return [np.linspace(lo, hi, resolution) for lo, hi in bounds]


def product_indices(shape):
    # row-major traversal order used by grid_oracle for tie-breaking
    return itertools.product(*(range(s) for s in shape))
