"""Per-iteration diagnostics shared by the federated and centralized solvers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["TraceRecord", "SolveTrace"]


@dataclass
class TraceRecord:
    """State of one outer iteration; k = 0 is the pre-solve state.

    ``party_values`` holds the max raw constraint value per party (server
    first, NaN for constraint-free parties); residual fields are NaN on the
    k = 0 row.
    """

    k: int
    objective: float
    party_values: list[float]
    feas_mean: float
    feas_max: float
    tau: float = np.nan
    dw_inf: float = np.nan
    dmu_inf: float = np.nan
    inner_rounds: int = 0
    cumulative_inner_rounds: int = 0
    cumulative_comm_rounds: int = 0
    cumulative_scalar_volume: int = 0


@dataclass
class SolveTrace:
    """Full run record: per-iteration rows plus run-level metadata.

    ``iterates`` and ``multipliers`` snapshot (w^k, mu^k) per outer iteration
    (index aligned with ``records``); diagnostics only, never transmitted.
    """

    solver: str
    records: list[TraceRecord] = field(default_factory=list)
    iterates: list[np.ndarray] = field(default_factory=list)
    multipliers: list = field(default_factory=list)
    heuristic_regime: bool = False
    terminated: bool = False

    @property
    def outer_iterations(self) -> int:
        return max(r.k for r in self.records) if self.records else 0
