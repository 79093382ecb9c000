"""Convergence figures rendered from solve traces.

One figure per run: objective on the left, per-party constraint values on
the right with the feasibility threshold as a dashed black line (constraint
values are threshold-shifted, so feasible means <= 0). The server block, when
present, is the dash-dot curve.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .trace import SolveTrace

__all__ = ["render_convergence"]


def render_convergence(trace: SolveTrace, out_path: str | Path, title: str | None = None) -> Path:
    """Render the run's objective and feasibility progression to a PNG."""
    out_path = Path(out_path)
    ks = [r.k for r in trace.records]
    objective = [r.objective for r in trace.records]
    party = np.array([r.party_values for r in trace.records])  # column 0 = server

    fig, (ax_obj, ax_feas) = plt.subplots(1, 2, figsize=(9.0, 3.4))

    ax_obj.plot(ks, objective, color="tab:blue", lw=1.8)
    ax_obj.set_xlabel("outer iteration")
    ax_obj.set_ylabel("objective")
    ax_obj.grid(alpha=0.3)

    client_vals = party[:, 1:]
    if client_vals.size:
        for j in range(client_vals.shape[1]):
            ax_feas.plot(ks, client_vals[:, j], color="tab:brown", lw=0.7, alpha=0.45)
        ax_feas.plot(ks, np.nanmean(client_vals, axis=1), color="tab:brown", lw=1.8,
                     label="client constraints (mean)")
    if not np.all(np.isnan(party[:, 0])):
        ax_feas.plot(ks, party[:, 0], color="tab:blue", lw=1.6, ls="-.", label="server constraint")
    ax_feas.axhline(0.0, color="black", ls="--", lw=1.0, label="feasibility threshold")
    ax_feas.set_xlabel("outer iteration")
    ax_feas.set_ylabel("constraint value")
    ax_feas.grid(alpha=0.3)
    ax_feas.legend(fontsize=7, loc="upper right")

    label = title or f"{trace.solver} solve"
    if trace.heuristic_regime:
        label += "  [heuristic regime]"
    fig.suptitle(label, fontsize=10)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
