"""Inexact consensus ADMM over the federation transport.

Solves the finite-sum model problem

    min_w  sum_{i=0..n} P_i(w) + h(w)

with strongly convex P_i by splitting: each client holds a local copy u_i
tied to the global w through multipliers lambda_i. Every round the server
solves its subproblem to a scheduled tolerance eps_{t+1} = q^t, broadcasts
the new weights, and each client solves its local subproblem to the same
tolerance, updating (u_i, lambda_i, u~_i) and reporting the shifted weight
u~_i = u_i + lambda_i / rho_i plus a local stationarity measure eps~_i. The
loop stops once eps_{t+1} + sum_i eps~_{i,t+1} <= tol, which certifies
dist_inf(0, d(sum P_i + h)(w)) <= tol at the returned point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .federation import (
    BroadcastWeights,
    ClientInnerReport,
    RoundKind,
    SimulatedTransport,
)
from .model import SimpleTerm, SmoothFunction, ZeroTerm
from .proxgrad import CompositeProblem, solve_composite

__all__ = [
    "InnerConfig",
    "ConsensusProblem",
    "AdmmClient",
    "InnerState",
    "InnerRoundRecord",
    "InnerResult",
    "InnerIterationError",
    "inner_init",
    "server_step",
    "client_step",
    "check_inner_termination",
    "run_inner",
]

# The q^t subproblem schedule stops tightening here: below this the solves
# cost float-precision effort while the termination sum is dominated by the
# client residuals anyway. A tighter explicit cap still wins.
EPS_FLOOR = 1e-12


@dataclass
class InnerConfig:
    """Knobs of one consensus solve.

    ``subproblem_tol_cap`` tightens every subproblem solve beyond the q^t
    schedule (used by exactness checks); the scheduled value is used in the
    termination sum only when it is the binding tolerance.
    """

    tol: float
    rho: list[float]
    q: float = 0.5
    max_rounds: int = 10_000
    subproblem_tol_cap: float = math.inf
    subproblem_max_iterations: int = 100_000

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if not 0.0 < self.q < 1.0:
            raise ValueError("q must lie strictly between 0 and 1")
        self.rho = [float(r) for r in self.rho]
        if any(r <= 0 for r in self.rho):
            raise ValueError("every rho must be positive")

    def eps(self, t: int) -> float:
        floor = min(EPS_FLOOR, self.subproblem_tol_cap)
        return max(min(self.q**t, self.subproblem_tol_cap), floor)


@dataclass
class ConsensusProblem:
    """The model problem: server term P_0, client terms P_1..P_n, simple h."""

    server_term: SmoothFunction
    client_terms: list[SmoothFunction]
    h: SimpleTerm = field(default_factory=ZeroTerm)
    strong_convexity: float = 0.0

    @property
    def n(self) -> int:
        return len(self.client_terms)


class _ClientSubproblem(SmoothFunction):
    """phi_i,t without its constant: P_i(u) + <lam, u - w> + rho/2 ||u - w||^2."""

    def __init__(self, term: SmoothFunction, lam: np.ndarray, w: np.ndarray, rho: float):
        self.term = term
        self.lam = lam
        self.w = w
        self.rho = rho

    def value(self, u: np.ndarray) -> float:
        diff = u - self.w
        return self.term.value(u) + float(self.lam @ diff) + 0.5 * self.rho * float(diff @ diff)

    def gradient(self, u: np.ndarray) -> np.ndarray:
        return self.term.gradient(u) + self.lam + self.rho * (u - self.w)

    def value_and_gradient(self, u: np.ndarray) -> tuple[float, np.ndarray]:
        v, g = self.term.value_and_gradient(u)
        diff = u - self.w
        return (
            v + float(self.lam @ diff) + 0.5 * self.rho * float(diff @ diff),
            g + self.lam + self.rho * diff,
        )


class _ServerSubproblem(SmoothFunction):
    """Smooth part of phi_0,t: P_0(w) + sum_i rho_i/2 ||u~_i - w||^2."""

    def __init__(self, term: SmoothFunction, rho: list[float], u_tildes: list[np.ndarray]):
        self.term = term
        self.rho_sum = float(sum(rho))
        self.pull = np.zeros_like(u_tildes[0])
        self.const = 0.0
        for r, ut in zip(rho, u_tildes):
            self.pull += r * ut
            self.const += 0.5 * r * float(ut @ ut)

    def value(self, w: np.ndarray) -> float:
        quad = 0.5 * self.rho_sum * float(w @ w) - float(self.pull @ w) + self.const
        return self.term.value(w) + quad

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return self.term.gradient(w) + self.rho_sum * w - self.pull

    def value_and_gradient(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        v, g = self.term.value_and_gradient(w)
        quad = 0.5 * self.rho_sum * float(w @ w) - float(self.pull @ w) + self.const
        return v + quad, g + self.rho_sum * w - self.pull


class AdmmClient:
    """Client-side state machine for one consensus solve.

    Holds (u_i, lambda_i, u~_i) locally; only ClientInnerReport payloads ever
    leave through the transport.
    """

    def __init__(self, index: int, term: SmoothFunction, rho: float, cfg: InnerConfig):
        self.index = index
        self.term = term
        self.rho = float(rho)
        self.cfg = cfg
        self.u: np.ndarray | None = None
        self.lam: np.ndarray | None = None
        self.u_tilde: np.ndarray | None = None
        self.eps_tilde: float = math.inf

    def initialize(self, w_start: np.ndarray) -> ClientInnerReport:
        """Set (u, lambda, u~) = (w~0, -grad P_i(w~0), w~0 - grad P_i(w~0)/rho)."""
        g = np.asarray(self.term.gradient(w_start), dtype=float)
        if not np.all(np.isfinite(g)):
            raise ValueError(f"client {self.index}: non-finite gradient at the inner start point")
        self.u = np.asarray(w_start, dtype=float).copy()
        self.lam = -g
        self.u_tilde = self.u + self.lam / self.rho
        self.eps_tilde = math.inf
        return ClientInnerReport(self.index, self.u_tilde.copy(), math.inf)

    def step(self, w_next: np.ndarray, eps: float) -> ClientInnerReport:
        """One local round against the freshly broadcast weights."""
        if self.u is None:
            raise RuntimeError(f"client {self.index} received an inner round before initialization")
        w_next = np.asarray(w_next, dtype=float)
        # Local stationarity measure, evaluated with the round-t (u, lambda):
        # grad phi_i,t at w^{t+1} is grad P_i(w^{t+1}) + lambda^t.
        grad_phi_at_w = self.term.gradient(w_next) + self.lam
        self.eps_tilde = float(np.max(np.abs(grad_phi_at_w - self.rho * (w_next - self.u))))

        sub = _ClientSubproblem(self.term, self.lam, w_next, self.rho)
        cert = solve_composite(
            CompositeProblem(sub, ZeroTerm(), self.u, self.rho),
            tol=eps,
            max_iterations=self.cfg.subproblem_max_iterations,
        )
        self.u = cert.point
        self.lam = self.lam + self.rho * (self.u - w_next)
        self.u_tilde = self.u + self.lam / self.rho
        return ClientInnerReport(self.index, self.u_tilde.copy(), self.eps_tilde)

    def handle(self, msg) -> ClientInnerReport | None:
        """Transport entry point for standalone inner solves."""
        if isinstance(msg, BroadcastWeights):
            if msg.kind == RoundKind.INNER_INIT:
                return self.initialize(msg.weights)
            if msg.kind == RoundKind.INNER:
                return self.step(msg.weights, self.cfg.eps(msg.round_id))
        return None


@dataclass
class InnerState:
    """Server-visible solve state plus handles to the client machines."""

    w: np.ndarray
    t: int
    clients: list[AdmmClient]
    u_tildes: list[np.ndarray]
    eps_tildes: list[float]

    def identity_gap(self) -> float:
        """max_i || u~_i - (u_i + lambda_i / rho_i) ||_inf, zero by construction."""
        gaps = [
            float(np.max(np.abs(c.u_tilde - (c.u + c.lam / c.rho)))) if c.u is not None else 0.0
            for c in self.clients
        ]
        return max(gaps) if gaps else 0.0


@dataclass
class InnerRoundRecord:
    t: int
    eps: float
    eps_tilde_sum: float
    residual_bound: float
    server_iterations: int


@dataclass
class InnerResult:
    w: np.ndarray
    rounds: int
    trace: list[InnerRoundRecord]
    residual_bound: float


class InnerIterationError(RuntimeError):
    """Round cap exceeded; carries the best iterate and its measured bound."""

    def __init__(self, message: str, w: np.ndarray, residual_bound: float, trace: list[InnerRoundRecord]):
        super().__init__(message)
        self.w = w
        self.residual_bound = residual_bound
        self.trace = trace


def inner_init(problem: ConsensusProblem, w_start: np.ndarray, cfg: InnerConfig) -> InnerState:
    """Build and initialize the client machines for one solve (no transport)."""
    if len(cfg.rho) != problem.n:
        raise ValueError("rho list and client count disagree")
    clients = [AdmmClient(i, term, cfg.rho[i], cfg) for i, term in enumerate(problem.client_terms)]
    reports = [c.initialize(w_start) for c in clients]
    return InnerState(
        w=np.asarray(w_start, dtype=float).copy(),
        t=0,
        clients=clients,
        u_tildes=[r.u_tilde for r in reports],
        eps_tildes=[r.eps_tilde for r in reports],
    )


def server_step(
    server_term: SmoothFunction,
    h: SimpleTerm,
    rho: list[float],
    u_tildes: list[np.ndarray],
    w_warm: np.ndarray,
    eps: float,
    sigma: float = 0.0,
    max_iterations: int = 100_000,
):
    """Solve phi_0,t to dist_inf(0, d phi_0,t) <= eps; returns the certificate."""
    smooth = _ServerSubproblem(server_term, rho, u_tildes)
    return solve_composite(
        CompositeProblem(smooth, h, w_warm, sigma + sum(rho)),
        tol=eps,
        max_iterations=max_iterations,
    )


def client_step(client: AdmmClient, w_next: np.ndarray, eps: float) -> ClientInnerReport:
    return client.step(w_next, eps)


def check_inner_termination(eps: float, eps_tildes: list[float], tol: float) -> bool:
    """True iff eps_{t+1} + sum_i eps~_{i,t+1} <= tol."""
    return eps + sum(eps_tildes) <= tol


def run_inner(
    problem: ConsensusProblem,
    w_start: np.ndarray,
    cfg: InnerConfig,
    transport: SimulatedTransport | None = None,
    round_observer=None,
) -> InnerResult:
    """Run the consensus solve to the requested stationarity tolerance.

    With no transport supplied, a fresh in-process one is built over the
    problem's own client machines. ``round_observer`` is a diagnostics hook
    called with the InnerState after every round; it is not a communication
    channel. Only standalone solves (own transport) expose client state here.
    """
    state: InnerState | None = None
    if transport is None:
        transport = SimulatedTransport()
        if len(cfg.rho) != problem.n:
            raise ValueError("rho list and client count disagree")
        clients = [AdmmClient(i, term, cfg.rho[i], cfg) for i, term in enumerate(problem.client_terms)]
        for c in clients:
            transport.register(c.handle)
    else:
        clients = None  # state machines live behind the registered handlers

    w_start = np.asarray(w_start, dtype=float)
    init_replies = transport.roundtrip(
        BroadcastWeights(w_start.copy(), 0, RoundKind.INNER_INIT), RoundKind.INNER_INIT
    )
    u_tildes = [r.u_tilde for r in init_replies]

    w = w_start.copy()
    trace: list[InnerRoundRecord] = []
    bound = math.inf
    for t in range(cfg.max_rounds):
        eps = cfg.eps(t)
        cert = server_step(
            problem.server_term,
            problem.h,
            cfg.rho,
            u_tildes,
            w_warm=w,
            eps=eps,
            sigma=problem.strong_convexity,
            max_iterations=cfg.subproblem_max_iterations,
        )
        w = cert.point
        replies = transport.roundtrip(
            BroadcastWeights(w.copy(), t, RoundKind.INNER), RoundKind.INNER
        )
        u_tildes = [r.u_tilde for r in replies]
        eps_tildes = [r.eps_tilde for r in replies]
        bound = eps + sum(eps_tildes)
        trace.append(InnerRoundRecord(t, eps, sum(eps_tildes), bound, cert.iterations))
        if round_observer is not None and clients is not None:
            state = InnerState(w=w, t=t, clients=clients, u_tildes=u_tildes, eps_tildes=eps_tildes)
            round_observer(state)
        if check_inner_termination(eps, eps_tildes, cfg.tol):
            return InnerResult(w=w, rounds=t + 1, trace=trace, residual_bound=bound)

    raise InnerIterationError(
        f"consensus solve hit the {cfg.max_rounds}-round cap (bound {bound:.3e}, target {cfg.tol:.3e})",
        w,
        bound,
        trace,
    )
