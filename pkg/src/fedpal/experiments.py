"""Experiment configs, the trial runner, and artifact emission.

A config is one INI-style document with [problem], [outer], [inner], and
[trials] sections; every hyperparameter is an explicit key. Each trial draws
its start point from the unit sphere (seed = base seed + trial index),
re-partitions classification data with the same trial seed, runs the
requested solver(s), audits every output independently, and appends a
summary row. Artifacts per trial: a per-iteration trace CSV, a solution
archive, and a convergence figure; a run-level summary.csv / summary.txt pair
aggregates trials. Runs are pure functions of (config, seeds): artifacts are
byte-identical across repeat invocations.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .audit import assert_output_contract
from .centralized import run_centralized
from .model import MultiplierState, ProblemSpec, eval_aggregate_objective
from .outer import OuterConfig, OuterIterationError, OuterResult, run_outer
from .problems import (
    LcqpInstance,
    build_fairness_problem,
    build_np_problem,
    generate_lcqp,
    lcqp_oracle,
    lcqp_problem,
    load_csv,
    load_lcqp,
    partition_stratified,
    resolve_dataset,
    synthetic_fairness_dataset,
    synthetic_np_dataset,
    unit_sphere,
)
from .trace import SolveTrace

__all__ = [
    "ExperimentConfig",
    "ProblemSection",
    "OuterSection",
    "InnerSection",
    "TrialsSection",
    "run_experiment",
    "emit_trace",
    "emit_solution",
    "load_solution",
    "build_problem_for_trial",
    "FAMILIES",
]

FAMILIES = ("np", "fairness", "lcqp")


@dataclass
class ProblemSection:
    family: str = "np"
    dataset: str = "synthetic:np"
    server_dataset: str = ""  # fairness CSV mode only
    label_column: str = "label"
    subgroup_column: str = ""
    clients: int = 1
    threshold: float = 0.2
    dimension: int = 100  # lcqp
    block_rows: int = 1  # lcqp m~ per party
    instance_seed: int = 0  # lcqp


@dataclass
class OuterSection:
    eps_stat: float = 1e-3
    eps_feas: float = 1e-3
    beta: float = 300.0
    s_bar: float = 1e-3
    max_iterations: int = 5000


@dataclass
class InnerSection:
    q: float = 0.5
    rho: float | None = None  # literal per-client weight
    rho_per_sample: float | None = None  # rho_i = a * samples_i
    max_rounds: int = 10_000


@dataclass
class TrialsSection:
    count: int = 1
    seed: int = 0


_SECTION_TYPES = {
    "problem": ProblemSection,
    "outer": OuterSection,
    "inner": InnerSection,
    "trials": TrialsSection,
}


@dataclass
class ExperimentConfig:
    problem: ProblemSection = field(default_factory=ProblemSection)
    outer: OuterSection = field(default_factory=OuterSection)
    inner: InnerSection = field(default_factory=InnerSection)
    trials: TrialsSection = field(default_factory=TrialsSection)

    def __post_init__(self):
        if self.problem.family not in FAMILIES:
            raise ValueError(f"unknown problem family {self.problem.family!r}")

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        parser.read_string(text)
        kwargs = {}
        for name, section_cls in _SECTION_TYPES.items():
            values = {}
            if parser.has_section(name):
                known = {f.name: f for f in fields(section_cls)}
                for key, raw in parser.items(name):
                    if key not in known:
                        raise ValueError(f"unknown key {key!r} in section [{name}]")
                    values[key] = _coerce(raw, known[key].type)
            kwargs[name] = section_cls(**values)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def serialize(self) -> str:
        parser = configparser.ConfigParser()
        for name in _SECTION_TYPES:
            section = getattr(self, name)
            parser.add_section(name)
            for f in fields(section):
                value = getattr(section, f.name)
                if value is None:
                    continue
                parser.set(name, f.name, repr(value) if isinstance(value, float) else str(value))
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


def _coerce(raw: str, annotation) -> object:
    raw = raw.strip()
    ann = str(annotation)
    if "int" in ann and "float" not in ann:
        return int(raw)
    if "float" in ann:
        if raw.lower() in ("", "none"):
            return None
        return float(raw)
    return raw


def build_problem_for_trial(cfg: ExperimentConfig, trial_seed: int):
    """(ProblemSpec, oracle-or-None) for one trial.

    Classification data is re-partitioned per trial; the LCQP instance is
    fixed by its own seed and shared across trials, with the closed-form KKT
    pair attached as the oracle.
    """
    p = cfg.problem
    if p.family == "lcqp":
        inst = generate_lcqp(p.dimension, p.clients, p.block_rows, p.instance_seed)
        return lcqp_problem(inst), lcqp_oracle(inst)
    if p.family == "np":
        ds = resolve_dataset(p.dataset, label_column=p.label_column)
        folds = partition_stratified(ds, p.clients, trial_seed)
        return build_np_problem(folds, threshold=p.threshold), None
    if p.family == "fairness":
        if p.dataset == "synthetic:fairness":
            train, server = synthetic_fairness_dataset()
        else:
            sub = p.subgroup_column or None
            if sub is None:
                raise ValueError("fairness CSV datasets need a subgroup_column")
            train = load_csv(p.dataset, label_column=p.label_column, subgroup_column=sub)
            if not p.server_dataset:
                raise ValueError("fairness CSV datasets need a server_dataset path")
            server = load_csv(p.server_dataset, label_column=p.label_column, subgroup_column=sub)
        folds = partition_stratified(train, p.clients, trial_seed)
        return build_fairness_problem(folds, server, threshold=p.threshold), None
    raise ValueError(f"unknown family {p.family!r}")


def outer_config_for(cfg: ExperimentConfig, w0: np.ndarray) -> OuterConfig:
    return OuterConfig(
        eps_stat=cfg.outer.eps_stat,
        eps_feas=cfg.outer.eps_feas,
        beta=cfg.outer.beta,
        s_bar=cfg.outer.s_bar,
        w0=w0,
        max_outer=cfg.outer.max_iterations,
        q=cfg.inner.q,
        rho=cfg.inner.rho,
        rho_per_sample=cfg.inner.rho_per_sample,
        max_inner_rounds=cfg.inner.max_rounds,
    )


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def emit_trace(trace: SolveTrace, n_clients: int, path: str | Path) -> Path:
    """One CSV row per outer iteration, k = 0 included.

    Columns carry the objective, the threshold-shifted constraint value per
    party (server first as global_constraint), violation summaries,
    residuals, and cumulative inner-iteration/communication counters: enough
    to regenerate the convergence figures externally.
    """
    path = Path(path)
    cols = (
        ["k", "objective", "global_constraint"]
        + [f"client{i}_constraint" for i in range(1, n_clients + 1)]
        + [
            "feas_mean",
            "feas_max",
            "tau",
            "dw_inf",
            "dmu_inf",
            "inner_rounds",
            "cum_inner_rounds",
            "cum_comm_rounds",
            "cum_scalar_volume",
        ]
    )
    lines = [",".join(cols)]
    for r in trace.records:
        row = [r.k, r.objective, *r.party_values, r.feas_mean, r.feas_max, r.tau,
               r.dw_inf, r.dmu_inf, r.inner_rounds, r.cumulative_inner_rounds,
               r.cumulative_comm_rounds, r.cumulative_scalar_volume]
        lines.append(",".join(_fmt(v) for v in row))
    header = f"# solver={trace.solver} heuristic_regime={str(trace.heuristic_regime).lower()} terminated={str(trace.terminated).lower()}\n"
    path.write_text(header + "\n".join(lines) + "\n", encoding="utf-8")
    return path


def emit_solution(result: OuterResult, trial_seed: int, path: str | Path) -> Path:
    path = Path(path)
    payload = {f"mu_{i}": b for i, b in enumerate(result.mu.blocks)}
    np.savez(path, w=result.w, n_blocks=np.array([len(result.mu.blocks)]),
             trial_seed=np.array([trial_seed]), **payload)
    return path


def load_solution(path: str | Path) -> tuple[np.ndarray, MultiplierState, int]:
    with np.load(path) as data:
        n_blocks = int(data["n_blocks"][0])
        mu = MultiplierState([data[f"mu_{i}"] for i in range(n_blocks)])
        return data["w"].copy(), mu, int(data["trial_seed"][0])


@dataclass
class TrialOutcome:
    trial: int
    solver: str
    objective: float = np.nan
    feas_mean: float = np.nan
    feas_max: float = np.nan
    r_stat: float = np.nan
    r_feas: float = np.nan
    audit_pass: bool = False
    terminated: bool = False
    outer_iterations: int = 0
    inner_rounds: int = 0
    comm_rounds: int = 0
    scalar_volume: int = 0
    heuristic: bool = False
    oracle_w_gap: float = np.nan
    oracle_obj_gap: float = np.nan
    error: str = ""


SUMMARY_COLUMNS = [
    "trial", "solver", "objective", "feas_mean", "feas_max", "r_stat", "r_feas",
    "audit_pass", "terminated", "outer_iterations", "inner_rounds", "comm_rounds",
    "scalar_volume", "heuristic", "oracle_w_gap", "oracle_obj_gap", "rel_diff", "error",
]


def _run_one(problem: ProblemSpec, cfg: ExperimentConfig, solver: str, w0: np.ndarray):
    ocfg = outer_config_for(cfg, w0)
    if solver == "federated":
        return run_outer(problem, ocfg)
    return run_centralized(problem, ocfg)


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: str | Path,
    solver: str = "both",
    trials: int | None = None,
    seed: int | None = None,
    figures: bool = True,
) -> int:
    """Run all trials, write artifacts, and return the process exit code.

    Exit 0 means every requested solve terminated and passed its independent
    audit; any audit failure or solver error yields 1, with partial artifacts
    retained for inspection. The centralized baseline aggregates private
    evaluators directly and is labeled accordingly in the summary.
    """
    from .plots import render_convergence  # deferred: matplotlib is heavy

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_trials = cfg.trials.count if trials is None else trials
    base_seed = cfg.trials.seed if seed is None else seed
    solvers = {"fed": ["federated"], "central": ["centralized"], "both": ["federated", "centralized"]}[solver]

    outcomes: list[TrialOutcome] = []
    rel_diffs: dict[int, float] = {}
    all_ok = True

    for t in range(n_trials):
        trial_seed = base_seed + t
        problem, oracle = build_problem_for_trial(cfg, trial_seed)
        rng = np.random.default_rng(trial_seed)
        w0 = unit_sphere(rng, problem.dim)
        per_solver_obj: dict[str, float] = {}

        for solver_name in solvers:
            tag = f"trial{t}_{solver_name}"
            outcome = TrialOutcome(trial=t, solver=solver_name, heuristic=not problem.convex)
            try:
                result = _run_one(problem, cfg, solver_name, w0)
            except (OuterIterationError, RuntimeError, ValueError) as exc:
                outcome.error = str(exc).replace(",", ";")
                trace = getattr(exc, "trace", None)
                if trace is not None:
                    emit_trace(trace, problem.n, out_dir / f"{tag}_trace.csv")
                all_ok = False
                outcomes.append(outcome)
                continue

            report = assert_output_contract(
                problem, result.w, result.mu, cfg.outer.eps_stat, cfg.outer.eps_feas
            )
            last = result.trace.records[-1]
            outcome.objective = eval_aggregate_objective(problem, result.w)
            outcome.feas_mean = last.feas_mean
            outcome.feas_max = last.feas_max
            outcome.r_stat = report.r_stat
            outcome.r_feas = report.r_feas
            outcome.audit_pass = report.passed
            outcome.terminated = result.trace.terminated
            outcome.outer_iterations = result.outer_iterations
            outcome.inner_rounds = last.cumulative_inner_rounds
            outcome.comm_rounds = last.cumulative_comm_rounds
            outcome.scalar_volume = last.cumulative_scalar_volume
            if oracle is not None:
                w_star, _ = oracle
                outcome.oracle_w_gap = float(np.max(np.abs(result.w - w_star)))
                outcome.oracle_obj_gap = abs(outcome.objective - eval_aggregate_objective(problem, w_star))
            per_solver_obj[solver_name] = outcome.objective
            all_ok = all_ok and report.passed

            emit_trace(result.trace, problem.n, out_dir / f"{tag}_trace.csv")
            emit_solution(result, trial_seed, out_dir / f"{tag}_solution.npz")
            if figures:
                render_convergence(result.trace, out_dir / f"{tag}_convergence.png",
                                   title=f"{cfg.problem.family} trial {t} ({solver_name})")
            outcomes.append(outcome)

        if len(per_solver_obj) == 2:
            fed, cen = per_solver_obj["federated"], per_solver_obj["centralized"]
            rel_diffs[t] = abs(fed - cen) / max(1.0, abs(cen))

    _write_summary(out_dir, cfg, outcomes, rel_diffs)
    return 0 if all_ok else 1


def _write_summary(out_dir: Path, cfg: ExperimentConfig, outcomes, rel_diffs) -> None:
    lines = [",".join(SUMMARY_COLUMNS)]
    for o in outcomes:
        rel = rel_diffs.get(o.trial, np.nan) if o.solver == "federated" else np.nan
        row = [o.trial, o.solver, o.objective, o.feas_mean, o.feas_max, o.r_stat, o.r_feas,
               o.audit_pass, o.terminated, o.outer_iterations, o.inner_rounds, o.comm_rounds,
               o.scalar_volume, o.heuristic, o.oracle_w_gap, o.oracle_obj_gap, rel, o.error]
        lines.append(",".join(_fmt(v) for v in row))
    (out_dir / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    def agg(solver_name: str, attr: str):
        vals = [getattr(o, attr) for o in outcomes if o.solver == solver_name and not o.error]
        if not vals:
            return (np.nan, np.nan)
        return (float(np.mean(vals)), float(np.std(vals)))

    txt = [f"experiment family: {cfg.problem.family}"]
    if any(o.heuristic for o in outcomes):
        txt.append("regime: HEURISTIC (nonconvex constraints; convergence guarantees do not apply)")
    txt.append("relative difference = |obj_fed - obj_cen| / max(1, |obj_cen|)")
    txt.append("note: the centralized baseline aggregates client data directly (privacy-violating reference)")
    for solver_name in ("federated", "centralized"):
        rows = [o for o in outcomes if o.solver == solver_name]
        if not rows:
            continue
        m_obj, s_obj = agg(solver_name, "objective")
        m_fm, _ = agg(solver_name, "feas_mean")
        m_fx, _ = agg(solver_name, "feas_max")
        audits = all(o.audit_pass for o in rows)
        txt.append(
            f"{solver_name}: objective {m_obj:.6f} ({s_obj:.2e}), feasibility mean {m_fm:.3e} "
            f"max {m_fx:.3e}, audits {'PASS' if audits else 'FAIL'} over {len(rows)} trial(s)"
        )
    if rel_diffs:
        vals = list(rel_diffs.values())
        txt.append(f"relative difference: {float(np.mean(vals)):.6e} ({float(np.std(vals)):.2e})")
    (out_dir / "summary.txt").write_text("\n".join(txt) + "\n", encoding="utf-8")
