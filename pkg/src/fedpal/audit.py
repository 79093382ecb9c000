"""Independent verifier of approximate optimality for a (w, mu) pair.

Consumes only the problem spec and the candidate pair, never solver state, so
it can audit any solver's output. Stationarity is the sup-norm of an
assembled element of grad f(w) + d h(w) + grad c(w) mu; feasibility is the
sup-norm distance from c(w) to the normal cone of the multiplier, measured
componentwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Cone, MultiplierState, ProblemSpec, ZeroTerm

__all__ = ["kkt_residuals", "AuditReport", "assert_output_contract", "ACTIVE_MULTIPLIER_FLOOR"]

# Multiplier entries at or below this are treated as inactive so that float
# noise on projected zeros does not flag |c_j| as a complementarity breach.
ACTIVE_MULTIPLIER_FLOOR = 1e-12


def kkt_residuals(problem: ProblemSpec, w: np.ndarray, mu: MultiplierState) -> tuple[float, float]:
    """(stationarity, feasibility) sup-norm residuals of a candidate pair.

    With nontrivial h the stationarity residual is the unit-step proximal
    gradient mapping ||w - prox_h(w - g)||_inf with g the assembled smooth
    gradient: an upper-bound surrogate that never under-reports violation and
    is exact for h = 0.

    For orthant blocks the feasibility residual mixes violation and
    complementarity: |c_j(w)| where mu_j is active, max(c_j(w), 0) where it
    is not. Equality blocks contribute |c_j(w)|. The active/inactive split is
    discontinuous in mu_j at zero when c_j(w) < 0; that is inherent to the
    normal-cone distance and is not smoothed here.
    """
    w = problem.check_dim(w)
    mu.validate(problem)

    g = problem.smooth_gradient(w)
    for mu_b, block in zip(mu.blocks, problem.blocks):
        if block.size:
            g = g + block.jacobian_t(w) @ mu_b
    if isinstance(problem.h, ZeroTerm):
        r_stat = float(np.max(np.abs(g))) if g.size else 0.0
    else:
        r_stat = float(np.max(np.abs(w - problem.h.prox(w - g, 1.0))))

    r_feas = 0.0
    for mu_b, block in zip(mu.blocks, problem.blocks):
        if block.size == 0:
            continue
        c = block.values(w)
        if block.cone is Cone.ZERO:
            contrib = np.abs(c)
        else:
            active = mu_b > ACTIVE_MULTIPLIER_FLOOR
            contrib = np.where(active, np.abs(c), np.maximum(c, 0.0))
        r_feas = max(r_feas, float(np.max(contrib)))
    return r_stat, r_feas


@dataclass
class AuditReport:
    passed: bool
    r_stat: float
    r_feas: float
    eps_stat: float
    eps_feas: float
    slack: float

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"{verdict}: stationarity {self.r_stat:.3e} (<= {self.eps_stat:.1e} + {self.slack:.0e}), "
            f"feasibility {self.r_feas:.3e} (<= {self.eps_feas:.1e} + {self.slack:.0e})"
        )


def assert_output_contract(
    problem: ProblemSpec,
    w: np.ndarray,
    mu: MultiplierState,
    eps_stat: float,
    eps_feas: float,
    slack: float = 1e-9,
) -> AuditReport:
    """Check a terminated run's output against its advertised tolerances.

    The slack absorbs float assembly error only; it is not a tuning knob.
    """
    r_stat, r_feas = kkt_residuals(problem, w, mu)
    passed = r_stat <= eps_stat + slack and r_feas <= eps_feas + slack
    return AuditReport(passed, r_stat, r_feas, eps_stat, eps_feas, slack)
