"""Problem representation shared by every solver component.

A constrained federated problem couples per-client smooth objectives with
per-client vector constraints, one server-side constraint block, and a simple
(possibly nonsmooth) term handled through its proximal map:

    minimize   sum_i f_i(w) + h(w)
    subject to c_0(w) in cone,  c_i(w) in cone   (one block per party)

Inequality blocks live in the nonnegative-orthant cone (c(w) <= 0); equality
blocks live in the zero cone (c(w) = 0) with free multipliers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Cone",
    "SmoothFunction",
    "Quadratic",
    "ZeroFunction",
    "ConstraintBlock",
    "LinearBlock",
    "EmptyBlock",
    "SimpleTerm",
    "ZeroTerm",
    "NonnegativeIndicator",
    "ClientProblem",
    "ProblemSpec",
    "MultiplierState",
    "project_cone_dual",
    "cone_violation",
    "eval_aggregate_objective",
]


class Cone(enum.Enum):
    """Cone tag of a constraint block."""

    NONNEGATIVE_ORTHANT = "nonnegative_orthant"  # c(w) <= 0, multipliers >= 0
    ZERO = "zero"  # c(w) = 0, free multipliers


def project_cone_dual(v: np.ndarray, cone: Cone) -> np.ndarray:
    """Project a multiplier-update candidate onto the dual cone.

    Orthant blocks clip negative entries to zero; zero-cone blocks keep the
    vector unchanged (equality multipliers are unconstrained).
    """
    v = np.asarray(v, dtype=float)
    if cone is Cone.NONNEGATIVE_ORTHANT:
        return np.maximum(v, 0.0)
    return v.copy()


def cone_violation(values: np.ndarray, cone: Cone) -> float:
    """Sup-norm infeasibility of a constraint-value vector for its cone."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return 0.0
    if cone is Cone.NONNEGATIVE_ORTHANT:
        return float(np.max(np.maximum(values, 0.0)))
    return float(np.max(np.abs(values)))


class SmoothFunction:
    """Continuously differentiable scalar function of a weight vector.

    Subclasses implement ``value`` and ``gradient``; ``value_and_gradient``
    may be overridden when the two share work.
    """

    def value(self, w: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def value_and_gradient(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        return self.value(w), self.gradient(w)


class Quadratic(SmoothFunction):
    """f(w) = w'Aw/2 + b'w + const with symmetric A."""

    def __init__(self, A: np.ndarray, b: np.ndarray, const: float = 0.0):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.const = float(const)
        if self.A.shape != (self.b.size, self.b.size):
            raise ValueError("quadratic term and linear term disagree on dimension")

    def value(self, w: np.ndarray) -> float:
        return float(0.5 * w @ (self.A @ w) + self.b @ w + self.const)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return self.A @ w + self.b

    def value_and_gradient(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        Aw = self.A @ w
        return float(0.5 * w @ Aw + self.b @ w + self.const), Aw + self.b


class ZeroFunction(SmoothFunction):
    """Identically-zero objective (server parties carry no objective)."""

    def value(self, w: np.ndarray) -> float:
        return 0.0

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return np.zeros_like(np.asarray(w, dtype=float))

    def value_and_gradient(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        return 0.0, self.gradient(w)


class ConstraintBlock:
    """Vector-valued differentiable constraint with a cone tag.

    ``values`` maps a weight vector to the block's m constraint values;
    ``jacobian_t`` returns the transposed Jacobian with shape (d, m), whose
    column j is the gradient of scalar constraint j. Empty blocks (m = 0)
    are legal and common for parties without constraints.
    """

    cone: Cone = Cone.NONNEGATIVE_ORTHANT
    size: int = 0

    def values(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian_t(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class LinearBlock(ConstraintBlock):
    """Affine block C w + offset with a fixed cone tag."""

    def __init__(self, C: np.ndarray, offset: np.ndarray, cone: Cone):
        self.C = np.atleast_2d(np.asarray(C, dtype=float))
        self.offset = np.atleast_1d(np.asarray(offset, dtype=float))
        if self.C.shape[0] != self.offset.size:
            raise ValueError("constraint matrix and offset disagree on row count")
        self.cone = cone
        self.size = self.C.shape[0]

    def values(self, w: np.ndarray) -> np.ndarray:
        return self.C @ w + self.offset

    def jacobian_t(self, w: np.ndarray) -> np.ndarray:
        return self.C.T.copy()


class EmptyBlock(ConstraintBlock):
    """Constraint block with zero rows."""

    def __init__(self, dim: int, cone: Cone = Cone.NONNEGATIVE_ORTHANT):
        self.dim = int(dim)
        self.cone = cone
        self.size = 0

    def values(self, w: np.ndarray) -> np.ndarray:
        return np.zeros(0)

    def jacobian_t(self, w: np.ndarray) -> np.ndarray:
        return np.zeros((self.dim, 0))


class SimpleTerm:
    """Closed convex term known through its value and proximal map.

    ``prox(u, alpha)`` returns argmin_w ||w - u||^2 / (2 alpha) + h(w); the
    output must lie in dom(h) and the map is nonexpansive.
    """

    def value(self, w: np.ndarray) -> float:
        raise NotImplementedError

    def prox(self, u: np.ndarray, alpha: float) -> np.ndarray:
        raise NotImplementedError


class ZeroTerm(SimpleTerm):
    """h = 0: value zero everywhere, prox is the identity."""

    def value(self, w: np.ndarray) -> float:
        return 0.0

    def prox(self, u: np.ndarray, alpha: float) -> np.ndarray:
        return np.asarray(u, dtype=float).copy()


class NonnegativeIndicator(SimpleTerm):
    """Indicator of the nonnegative orthant; prox clips at zero."""

    def value(self, w: np.ndarray) -> float:
        return 0.0 if np.all(np.asarray(w) >= 0.0) else np.inf

    def prox(self, u: np.ndarray, alpha: float) -> np.ndarray:
        return np.maximum(np.asarray(u, dtype=float), 0.0)


@dataclass
class ClientProblem:
    """One client's share: a smooth objective plus a constraint block.

    ``num_samples`` feeds the rho_i = a * m_i aggregation-weight rule; leave
    it at 1 for synthetic problems without a sample notion.
    """

    objective: SmoothFunction
    constraint: ConstraintBlock
    num_samples: int = 1


@dataclass
class ProblemSpec:
    """Full constrained problem over n clients plus the server.

    Block index 0 is the server constraint; blocks 1..n belong to clients.
    Components are immutable after construction and safe for concurrent
    reads. Dimensions are validated once here, not per evaluation.
    """

    dim: int
    clients: list[ClientProblem]
    server_constraint: ConstraintBlock = None  # type: ignore[assignment]
    h: SimpleTerm = field(default_factory=ZeroTerm)
    convex: bool = True

    def __post_init__(self):
        if self.server_constraint is None:
            self.server_constraint = EmptyBlock(self.dim)
        if len(self.clients) < 1:
            raise ValueError("a problem needs at least one client")
        probe = np.zeros(self.dim)
        for i, client in enumerate(self.clients):
            g = np.asarray(client.objective.gradient(probe))
            if g.shape != (self.dim,):
                raise ValueError(f"client {i} objective gradient has shape {g.shape}, expected ({self.dim},)")
        for i, block in enumerate(self.blocks):
            vals = np.asarray(block.values(probe))
            jac = np.asarray(block.jacobian_t(probe))
            if vals.shape != (block.size,):
                raise ValueError(f"block {i} returned {vals.shape} values, declared size {block.size}")
            if jac.shape != (self.dim, block.size):
                raise ValueError(f"block {i} transposed Jacobian has shape {jac.shape}, expected ({self.dim}, {block.size})")

    @property
    def n(self) -> int:
        return len(self.clients)

    @property
    def blocks(self) -> list[ConstraintBlock]:
        return [self.server_constraint] + [c.constraint for c in self.clients]

    @property
    def total_constraints(self) -> int:
        return sum(b.size for b in self.blocks)

    def check_dim(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.dim,):
            raise ValueError(f"weight vector has shape {w.shape}, problem dimension is {self.dim}")
        return w

    def smooth_objective(self, w: np.ndarray) -> float:
        w = self.check_dim(w)
        return float(sum(c.objective.value(w) for c in self.clients))

    def smooth_gradient(self, w: np.ndarray) -> np.ndarray:
        w = self.check_dim(w)
        g = np.zeros(self.dim)
        for c in self.clients:
            g += c.objective.gradient(w)
        return g

    def constraint_values(self, w: np.ndarray) -> list[np.ndarray]:
        w = self.check_dim(w)
        return [np.asarray(b.values(w), dtype=float) for b in self.blocks]

    def max_violation(self, w: np.ndarray) -> float:
        return max(cone_violation(v, b.cone) for v, b in zip(self.constraint_values(w), self.blocks))


def eval_aggregate_objective(problem: ProblemSpec, w: np.ndarray) -> float:
    """sum_i f_i(w) + h(w); +inf when w lies outside dom(h)."""
    return problem.smooth_objective(w) + problem.h.value(problem.check_dim(w))


class MultiplierState:
    """Per-block multiplier vectors mu_0..mu_n aligned with ProblemSpec.blocks."""

    def __init__(self, blocks: list[np.ndarray]):
        self.blocks = [np.asarray(b, dtype=float).copy() for b in blocks]

    @classmethod
    def zeros(cls, problem: ProblemSpec) -> "MultiplierState":
        return cls([np.zeros(b.size) for b in problem.blocks])

    def copy(self) -> "MultiplierState":
        return MultiplierState(self.blocks)

    def stacked(self) -> np.ndarray:
        return np.concatenate(self.blocks) if self.blocks else np.zeros(0)

    def max_delta(self, other: "MultiplierState") -> float:
        deltas = [
            float(np.max(np.abs(a - b))) if a.size else 0.0
            for a, b in zip(self.blocks, other.blocks)
        ]
        return max(deltas) if deltas else 0.0

    def cone_feasible(self, problem: ProblemSpec, tol: float = 0.0) -> bool:
        for mu, block in zip(self.blocks, problem.blocks):
            if block.cone is Cone.NONNEGATIVE_ORTHANT and mu.size and np.min(mu) < -tol:
                return False
        return True

    def validate(self, problem: ProblemSpec) -> None:
        if len(self.blocks) != len(problem.blocks):
            raise ValueError("multiplier state and problem disagree on block count")
        for i, (mu, block) in enumerate(zip(self.blocks, problem.blocks)):
            if mu.shape != (block.size,):
                raise ValueError(f"multiplier block {i} has shape {mu.shape}, expected ({block.size},)")
        if not self.cone_feasible(problem):
            raise ValueError("orthant multiplier block has negative entries")
