"""Centralized proximal augmented-Lagrangian baseline.

Solves the same constrained problem as the federated path but assembles the
full subproblem

    l_k(w) = f(w) + h(w)
           + sum_b (||Pi_b(mu_b^k + beta c_b(w))||^2 - ||mu_b^k||^2) / (2 beta)
           + ||w - w^k||^2 / (2 beta)

monolithically from every party's evaluators, deliberately bypassing the
transport. This is the privacy-violating comparison baseline; the CLI labels
it as such. The subproblem tolerance follows the same decreasing schedule
tau_k = s_bar / (k+1)^2 as the federated loop so the two coincide at n = 1
with exact subsolves.
"""

from __future__ import annotations

import numpy as np

from .model import (
    MultiplierState,
    ProblemSpec,
    SmoothFunction,
    project_cone_dual,
)
from .outer import OuterConfig, OuterIterationError, OuterResult, _record, outer_check_termination
from .proxgrad import CompositeProblem, solve_composite
from .trace import SolveTrace

__all__ = ["CentralMerit", "run_centralized"]


class CentralMerit(SmoothFunction):
    """Smooth part of l_k, built from problem-level aggregates."""

    def __init__(self, problem: ProblemSpec, mu: MultiplierState, beta: float, center: np.ndarray):
        self.problem = problem
        self.mu = mu
        self.beta = float(beta)
        self.center = np.asarray(center, dtype=float).copy()

    def value(self, w: np.ndarray) -> float:
        val = self.problem.smooth_objective(w)
        for mu_b, block in zip(self.mu.blocks, self.problem.blocks):
            shifted = project_cone_dual(mu_b + self.beta * block.values(w), block.cone)
            val += (float(shifted @ shifted) - float(mu_b @ mu_b)) / (2.0 * self.beta)
        diff = w - self.center
        return val + float(diff @ diff) / (2.0 * self.beta)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        g = self.problem.smooth_gradient(w) + (w - self.center) / self.beta
        for mu_b, block in zip(self.mu.blocks, self.problem.blocks):
            if block.size == 0:
                continue
            shifted = project_cone_dual(mu_b + self.beta * block.values(w), block.cone)
            g = g + block.jacobian_t(w) @ shifted
        return g


def run_centralized(problem: ProblemSpec, cfg: OuterConfig) -> OuterResult:
    """Run the baseline to the same (eps_stat, eps_feas) stop rule.

    Single-threaded, no communication; trace rows keep the communication
    columns at zero.
    """
    w = np.zeros(problem.dim) if cfg.w0 is None else np.asarray(cfg.w0, dtype=float).copy()
    problem.check_dim(w)
    mu = MultiplierState.zeros(problem) if cfg.mu0 is None else cfg.mu0.copy()
    mu.validate(problem)

    trace = SolveTrace(solver="centralized", heuristic_regime=not problem.convex)
    trace.records.append(_record(problem, w, 0, {}, 0))
    trace.iterates.append(w.copy())
    trace.multipliers.append(mu.copy())

    for k in range(cfg.max_outer):
        tau_k = cfg.tau(k)
        merit = CentralMerit(problem, mu, cfg.beta, w)
        cert = solve_composite(
            CompositeProblem(merit, problem.h, w, 1.0 / cfg.beta),
            tol=min(tau_k, cfg.subproblem_tol_cap),
            max_iterations=cfg.subproblem_max_iterations,
        )
        w_next = cert.point

        new_blocks, dmu = [], 0.0
        for mu_b, block in zip(mu.blocks, problem.blocks):
            nb = project_cone_dual(mu_b + cfg.beta * block.values(w_next), block.cone)
            if nb.size:
                dmu = max(dmu, float(np.max(np.abs(nb - mu_b))))
            new_blocks.append(nb)
        mu_next = MultiplierState(new_blocks)
        dw_inf = float(np.max(np.abs(w_next - w)))

        trace.records.append(
            _record(
                problem,
                w_next,
                k + 1,
                {},
                0,
                tau=tau_k,
                dw_inf=dw_inf,
                dmu_inf=dmu,
            )
        )
        trace.iterates.append(w_next.copy())
        trace.multipliers.append(mu_next.copy())
        w, mu = w_next, mu_next

        if outer_check_termination(dw_inf, tau_k, dmu, cfg.beta, cfg.eps_stat, cfg.eps_feas):
            trace.terminated = True
            return OuterResult(w=w, mu=mu, trace=trace, outer_iterations=k + 1, comm={})

    raise OuterIterationError(
        f"centralized loop hit the {cfg.max_outer}-iteration cap", w, mu, trace
    )
