"""Proximal augmented-Lagrangian outer loop, federated through the transport.

Each outer iteration k solves the strongly convex subproblem

    min_w  sum_{i=0..n} P_{i,k}(w) + h(w)

by the inexact consensus ADMM to tolerance tau_k = s_bar / (k+1)^2, where the
merit functions split the augmented Lagrangian plus an (n+1)-way share of the
proximal term across the parties:

    P_{i,k}(w) = f_i(w)
               + (||Pi(mu_i^k + beta c_i(w))||^2 - ||mu_i^k||^2) / (2 beta)
               + ||w - w^k||^2 / (2 (n+1) beta)

with f_0 = 0 and Pi the positive part on orthant blocks, identity on
equality blocks. Multipliers then update as mu_i <- Pi(mu_i + beta c_i(w))
on each party, and the loop stops once

    ||w^{k+1} - w^k||_inf + beta tau_k <= beta eps_stat   and
    max_i ||mu_i^{k+1} - mu_i^k||_inf <= beta eps_feas,

at which point the output is an (eps_stat, eps_feas)-optimal pair. Client
merits are rebuilt client-side from broadcast weights and local state, so no
raw data, constraint values, or multiplier vectors ever cross the transport.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .admm import AdmmClient, ConsensusProblem, InnerConfig, run_inner
from .federation import (
    BroadcastWeights,
    ClientMultiplierDelta,
    RoundKind,
    ServerTerminate,
    SimulatedTransport,
)
from .model import (
    ClientProblem,
    ConstraintBlock,
    MultiplierState,
    ProblemSpec,
    SmoothFunction,
    ZeroFunction,
    cone_violation,
    eval_aggregate_objective,
    project_cone_dual,
)
from .trace import SolveTrace, TraceRecord

__all__ = [
    "OuterConfig",
    "MeritFunction",
    "build_merits",
    "resolve_rho",
    "outer_check_termination",
    "OuterResult",
    "OuterIterationError",
    "FederatedClientNode",
    "run_outer",
]


@dataclass
class OuterConfig:
    """Inputs of the outer loop; defaults mirror the convex-classification preset."""

    eps_stat: float = 1e-3
    eps_feas: float = 1e-3
    beta: float = 300.0
    s_bar: float = 1e-3
    w0: np.ndarray | None = None
    mu0: MultiplierState | None = None
    max_outer: int = 5000
    q: float = 0.5
    rho: list[float] | float | None = None  # explicit value(s) per client
    rho_per_sample: float | None = None  # rho_i = a * (client sample count)
    max_inner_rounds: int = 10_000
    subproblem_tol_cap: float = math.inf
    subproblem_max_iterations: int = 100_000

    def __post_init__(self):
        if not (0.0 < self.eps_stat < 1.0 and 0.0 < self.eps_feas < 1.0):
            raise ValueError("tolerances must lie strictly between 0 and 1")
        if self.beta <= 0 or self.s_bar <= 0:
            raise ValueError("beta and s_bar must be positive")

    def tau(self, k: int) -> float:
        return self.s_bar / (k + 1) ** 2


def resolve_rho(cfg: OuterConfig, problem: ProblemSpec) -> list[float]:
    """Per-client aggregation weights: explicit values win over the
    samples-proportional rule; the rule's default constant is 1."""
    if cfg.rho is not None:
        if np.isscalar(cfg.rho):
            return [float(cfg.rho)] * problem.n
        if len(cfg.rho) != problem.n:
            raise ValueError("rho list and client count disagree")
        return [float(r) for r in cfg.rho]
    a = 1.0 if cfg.rho_per_sample is None else float(cfg.rho_per_sample)
    return [a * max(c.num_samples, 1) for c in problem.clients]


class MeritFunction(SmoothFunction):
    """One party's share P_{i,k} of the proximal-AL subproblem.

    Strongly convex with modulus exactly 1 / ((n+1) beta) from the proximal
    share (in the convex regime), whatever the constraint block.
    """

    def __init__(
        self,
        index: int,
        objective: SmoothFunction | None,
        block: ConstraintBlock,
        mu: np.ndarray,
        beta: float,
        center: np.ndarray,
        n: int,
    ):
        self.index = index
        self.objective = objective if objective is not None else ZeroFunction()
        self.block = block
        self.mu = np.asarray(mu, dtype=float).copy()
        self.beta = float(beta)
        self.center = np.asarray(center, dtype=float).copy()
        self.prox_coeff = 1.0 / (2.0 * (n + 1) * self.beta)

    def _shifted(self, w: np.ndarray) -> np.ndarray:
        return project_cone_dual(self.mu + self.beta * self.block.values(w), self.block.cone)

    def value(self, w: np.ndarray) -> float:
        shifted = self._shifted(w)
        pen = (float(shifted @ shifted) - float(self.mu @ self.mu)) / (2.0 * self.beta)
        diff = w - self.center
        return self.objective.value(w) + pen + self.prox_coeff * float(diff @ diff)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        shifted = self._shifted(w)
        g = self.objective.gradient(w) + 2.0 * self.prox_coeff * (w - self.center)
        if shifted.size:
            g = g + self.block.jacobian_t(w) @ shifted
        return g

    def value_and_gradient(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        shifted = self._shifted(w)
        pen = (float(shifted @ shifted) - float(self.mu @ self.mu)) / (2.0 * self.beta)
        diff = w - self.center
        val = self.objective.value(w) + pen + self.prox_coeff * float(diff @ diff)
        g = self.objective.gradient(w) + 2.0 * self.prox_coeff * diff
        if shifted.size:
            g = g + self.block.jacobian_t(w) @ shifted
        return val, g


def build_merits(
    problem: ProblemSpec, center: np.ndarray, mu: MultiplierState, beta: float
) -> ConsensusProblem:
    """Assemble P_{0,k}..P_{n,k} as the inner solver's consensus problem.

    Used directly for standalone (transport-free) solves and tests; the
    federated path builds client merits inside the client nodes instead.
    """
    mu.validate(problem)
    n = problem.n
    server = MeritFunction(0, None, problem.server_constraint, mu.blocks[0], beta, center, n)
    clients = [
        MeritFunction(i + 1, cp.objective, cp.constraint, mu.blocks[i + 1], beta, center, n)
        for i, cp in enumerate(problem.clients)
    ]
    return ConsensusProblem(
        server_term=server,
        client_terms=clients,
        h=problem.h,
        strong_convexity=1.0 / ((n + 1) * beta),
    )


def outer_check_termination(
    dw_inf: float, tau: float, dmu_inf: float, beta: float, eps_stat: float, eps_feas: float
) -> bool:
    """Server-side stop rule on the weight step and the multiplier steps."""
    return dw_inf + beta * tau <= beta * eps_stat and dmu_inf <= beta * eps_feas


@dataclass
class OuterResult:
    w: np.ndarray
    mu: MultiplierState
    trace: SolveTrace
    outer_iterations: int
    comm: dict = field(default_factory=dict)


class OuterIterationError(RuntimeError):
    """Outer cap exceeded; carries the best iterate, its multipliers and trace."""

    def __init__(self, message: str, w: np.ndarray, mu: MultiplierState, trace: SolveTrace):
        super().__init__(message)
        self.w = w
        self.mu = mu
        self.trace = trace


class FederatedClientNode:
    """One client's full protocol state machine.

    Owns (f_i, c_i, mu_i) and never exposes them: outer broadcasts trigger the
    local multiplier update (answered by the sup-norm delta only) and a merit
    rebuild; inner rounds are delegated to a per-solve ADMM machine over the
    current merit.
    """

    def __init__(
        self,
        index: int,
        client: ClientProblem,
        n: int,
        beta: float,
        rho: float,
        inner_cfg_template: InnerConfig,
        mu0: np.ndarray,
        w0: np.ndarray,
    ):
        self.index = index
        self.client = client
        self.n = n
        self.beta = beta
        self.rho = rho
        self._inner_template = inner_cfg_template
        self.mu = np.asarray(mu0, dtype=float).copy()
        self.merit = MeritFunction(index, client.objective, client.constraint, self.mu, beta, w0, n)
        self._admm: AdmmClient | None = None
        self.final_w: np.ndarray | None = None

    def _update_multiplier(self, w: np.ndarray) -> float:
        new_mu = project_cone_dual(
            self.mu + self.beta * self.client.constraint.values(w), self.client.constraint.cone
        )
        delta = float(np.max(np.abs(new_mu - self.mu))) if new_mu.size else 0.0
        self.mu = new_mu
        self.merit = MeritFunction(
            self.index, self.client.objective, self.client.constraint, self.mu, self.beta, w, self.n
        )
        self._admm = None
        return delta

    def handle(self, msg):
        if isinstance(msg, BroadcastWeights):
            if msg.kind == RoundKind.INNER_INIT:
                self._admm = AdmmClient(self.index - 1, self.merit, self.rho, self._inner_template)
                return self._admm.initialize(msg.weights)
            if msg.kind == RoundKind.INNER:
                if self._admm is None:
                    raise RuntimeError(f"client {self.index}: inner round before initialization")
                return self._admm.step(msg.weights, self._inner_template.eps(msg.round_id))
            if msg.kind == RoundKind.OUTER:
                delta = self._update_multiplier(np.asarray(msg.weights, dtype=float))
                return ClientMultiplierDelta(self.index, delta)
        if isinstance(msg, ServerTerminate):
            self.final_w = np.asarray(msg.weights, dtype=float).copy()
            return None
        raise TypeError(f"client {self.index}: unsupported message {type(msg).__name__}")


def _record(
    problem: ProblemSpec,
    w: np.ndarray,
    k: int,
    ledger_snapshot: dict,
    cumulative_inner: int,
    inner_rounds: int = 0,
    tau: float = np.nan,
    dw_inf: float = np.nan,
    dmu_inf: float = np.nan,
) -> TraceRecord:
    values = problem.constraint_values(w)
    party_values = [float(np.max(v)) if v.size else np.nan for v in values]
    violations = [
        cone_violation(v, b.cone) for v, b in zip(values, problem.blocks) if b.size
    ]
    return TraceRecord(
        k=k,
        objective=eval_aggregate_objective(problem, w),
        party_values=party_values,
        feas_mean=float(np.mean(violations)) if violations else 0.0,
        feas_max=float(np.max(violations)) if violations else 0.0,
        tau=tau,
        dw_inf=dw_inf,
        dmu_inf=dmu_inf,
        inner_rounds=inner_rounds,
        cumulative_inner_rounds=cumulative_inner,
        cumulative_comm_rounds=ledger_snapshot.get("total_rounds", 0),
        cumulative_scalar_volume=ledger_snapshot.get("scalar_volume", 0),
    )


def run_outer(
    problem: ProblemSpec,
    cfg: OuterConfig,
    transport: SimulatedTransport | None = None,
) -> OuterResult:
    """Drive the federated solve to an (eps_stat, eps_feas)-optimal pair.

    Returns the first (w, mu) passing the stop rule together with the full
    per-iteration trace and the communication snapshot. Raises
    OuterIterationError with the best iterate when the cap is reached.
    """
    w = np.zeros(problem.dim) if cfg.w0 is None else np.asarray(cfg.w0, dtype=float).copy()
    problem.check_dim(w)
    mu = MultiplierState.zeros(problem) if cfg.mu0 is None else cfg.mu0.copy()
    mu.validate(problem)
    rho = resolve_rho(cfg, problem)
    n = problem.n

    inner_template = InnerConfig(
        tol=1.0,  # per-iteration tau_k is substituted each outer round
        rho=rho,
        q=cfg.q,
        max_rounds=cfg.max_inner_rounds,
        subproblem_tol_cap=cfg.subproblem_tol_cap,
        subproblem_max_iterations=cfg.subproblem_max_iterations,
    )

    if transport is None:
        transport = SimulatedTransport()
    if transport.n_clients == 0:
        nodes = [
            FederatedClientNode(
                i + 1, cp, n, cfg.beta, rho[i], inner_template, mu.blocks[i + 1], w
            )
            for i, cp in enumerate(problem.clients)
        ]
        for node in nodes:
            transport.register(node.handle)
    elif transport.n_clients != n:
        raise ValueError("transport already has a different number of clients registered")
    else:
        nodes = None

    trace = SolveTrace(solver="federated", heuristic_regime=not problem.convex)
    trace.records.append(_record(problem, w, 0, transport.ledger.snapshot(), 0))
    trace.iterates.append(w.copy())
    trace.multipliers.append(mu.copy())

    cumulative_inner = 0
    for k in range(cfg.max_outer):
        tau_k = cfg.tau(k)
        server_merit = MeritFunction(
            0, None, problem.server_constraint, mu.blocks[0], cfg.beta, w, n
        )
        consensus = ConsensusProblem(
            server_term=server_merit,
            client_terms=[],  # client merits live behind the transport
            h=problem.h,
            strong_convexity=1.0 / ((n + 1) * cfg.beta),
        )
        inner = run_inner(consensus, w, replace(inner_template, tol=tau_k), transport=transport)
        w_next = inner.w
        cumulative_inner += inner.rounds

        # Server multiplier update, then one outer communication round.
        mu0_new = project_cone_dual(
            mu.blocks[0] + cfg.beta * problem.server_constraint.values(w_next),
            problem.server_constraint.cone,
        )
        dmu = float(np.max(np.abs(mu0_new - mu.blocks[0]))) if mu0_new.size else 0.0
        replies = transport.roundtrip(
            BroadcastWeights(w_next.copy(), k, RoundKind.OUTER), RoundKind.OUTER
        )
        dmu = max([dmu] + [r.delta_inf for r in replies])

        mu_next = MultiplierState(
            [mu0_new] + [_client_mu(transport, nodes, i) for i in range(n)]
        )
        dw_inf = float(np.max(np.abs(w_next - w)))

        trace.records.append(
            _record(
                problem,
                w_next,
                k + 1,
                transport.ledger.snapshot(),
                cumulative_inner,
                inner_rounds=inner.rounds,
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
            digest = float(np.max(np.abs(mu.blocks[0]))) if mu.blocks[0].size else 0.0
            transport.roundtrip(ServerTerminate(w.copy(), digest), RoundKind.TERMINATE)
            return OuterResult(
                w=w,
                mu=mu,
                trace=trace,
                outer_iterations=k + 1,
                comm=transport.ledger.snapshot(),
            )

    raise OuterIterationError(
        f"outer loop hit the {cfg.max_outer}-iteration cap",
        w,
        mu,
        trace,
    )


def _client_mu(transport: SimulatedTransport, nodes, i: int) -> np.ndarray:
    """Collect client i's multiplier block for the returned solution.

    A simulation affordance for assembling the algorithm's output (w, mu);
    multiplier vectors never travel as messages.
    """
    if nodes is not None:
        return nodes[i].mu.copy()
    owner = getattr(transport.handler(i), "__self__", None)
    if owner is None or not hasattr(owner, "mu"):
        raise RuntimeError("cannot assemble multipliers from externally registered handlers")
    return np.asarray(owner.mu, dtype=float).copy()
