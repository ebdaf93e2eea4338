"""Allocating each period's energy surplus across final goods.

Producers are assigned a claim per unit of output. Assignments above the
true marginal transfer ration the surplus: the over-assignment factor is
the common fraction by which every claim exceeds its marginal transfer,
and it must be the same across goods within a period for the assignment
to be coherent. Effective claims, claims scaled down by that factor, are
what consumption decisions actually face.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InconsistentAssignmentsError, InsufficientSurplusError


@dataclass(frozen=True)
class AllocationPlan:
    quantities: dict  # good -> (T,) units financed per period
    assignments: dict  # good -> (T,) claim per unit
    effective: dict  # good -> (T,) claim scaled by the surplus backing it
    over_assignment: np.ndarray  # (T,) common rationing factor, in [0, 1)
    spending: dict  # good -> (T,) claim * quantity

    def total_spending(self) -> np.ndarray:
        return np.sum([self.spending[g] for g in sorted(self.spending)], axis=0)


def _paths(values, horizon):
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.shape == (1,) and horizon > 1:
        arr = np.full(horizon, arr[0])
    if arr.shape != (horizon,):
        raise InconsistentAssignmentsError(
            f"schedule of length {arr.shape[0]} does not span {horizon} periods"
        )
    return arr


def allocate_surplus(surplus, assignments, marginal_transfers,
                     weights=None, tol: float = 1e-6) -> AllocationPlan:
    """Split the surplus schedule across final goods at their claims.

    assignments maps good id to the per-unit claim (scalar or per-period
    path); marginal_transfers to the true marginal transfer. Spending
    shares follow weights when given and are equal otherwise. Claims must
    all carry one common over-assignment factor per period within tol,
    and that factor must sit in [0, 1).
    """

    goods = sorted(assignments)
    if not goods:
        raise InsufficientSurplusError("no assignments to allocate against")

    surplus = np.atleast_1d(np.asarray(surplus, dtype=float))
    T = len(surplus)
    claims = {g: _paths(assignments[g], T) for g in goods}
    taus = {g: _paths(marginal_transfers[g], T) for g in goods}
    for g in goods:
        if np.any(claims[g] <= 0.0):
            raise InconsistentAssignmentsError(f"claim for {g} must be positive")
    if np.any(surplus <= 0.0):
        bad = float(surplus.min())
        raise InsufficientSurplusError(
            f"no surplus to allocate ({bad:.6g} J) against positive claims"
        )

    implied = {g: 1.0 - taus[g] / claims[g] for g in goods}
    theta = np.mean([implied[g] for g in goods], axis=0)
    spread = max(float(np.max(np.abs(implied[g] - theta))) for g in goods)
    if spread > tol:
        raise InconsistentAssignmentsError(
            "claims imply different rationing factors across goods "
            f"(spread {spread:.3g})",
            implied_theta=implied,
        )
    if np.any(theta < -tol) or np.any(theta >= 1.0):
        raise InconsistentAssignmentsError(
            f"rationing factor outside [0, 1): {theta}", implied_theta=implied
        )
    theta = np.clip(theta, 0.0, None)

    if weights is None:
        share = {g: 1.0 / len(goods) for g in goods}
    else:
        total_w = sum(weights[g] for g in goods)
        if total_w <= 0.0:
            raise InconsistentAssignmentsError("weights must sum to a positive number")
        share = {g: weights[g] / total_w for g in goods}

    spending = {g: share[g] * surplus for g in goods}
    quantities = {g: spending[g] / claims[g] for g in goods}
    effective = {g: (1.0 - theta) * claims[g] for g in goods}
    return AllocationPlan(
        quantities=quantities,
        assignments=claims,
        effective=effective,
        over_assignment=theta,
        spending=spending,
    )


def implied_rationing(assignments, marginal_transfers, tol: float = 1e-6):
    """The common factor by which claims exceed marginal transfers.

    Returns the per-period factor path. Raises when the per-good factors
    disagree beyond tol or the common factor falls outside [0, 1).
    """

    goods = sorted(assignments)
    lengths = [len(np.atleast_1d(np.asarray(assignments[g], dtype=float))) for g in goods]
    T = max(lengths) if lengths else 1
    implied = {}
    for g in goods:
        claim = _paths(assignments[g], T)
        if np.any(claim <= 0.0):
            raise InconsistentAssignmentsError(f"claim for {g} must be positive")
        implied[g] = 1.0 - _paths(marginal_transfers[g], T) / claim
    theta = np.mean([implied[g] for g in goods], axis=0)
    spread = max((float(np.max(np.abs(implied[g] - theta))) for g in goods), default=0.0)
    if spread > tol:
        raise InconsistentAssignmentsError(
            f"rationing factors disagree by {spread:.3g}", implied_theta=implied
        )
    if np.any(theta < -tol) or np.any(theta >= 1.0):
        raise InconsistentAssignmentsError(
            f"rationing factor outside [0, 1): {theta}", implied_theta=implied
        )
    return np.clip(theta, 0.0, None)


def effective_assignment_check(plan: AllocationPlan, utility_marginals, lam):
    """Effective claims against what consumers would pay at the margin.

    utility_marginals maps good id to the per-period marginal utility of
    its consumption; lam is the marginal utility of surplus. Returns per
    good the residual effective_claim - marginal_utility / lam, zero at
    equilibrium.
    """

    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    residuals = {}
    for g in sorted(plan.effective):
        effective = plan.effective[g]
        marg = _paths(utility_marginals[g], len(effective))
        residuals[g] = effective - marg / lam
    return residuals
