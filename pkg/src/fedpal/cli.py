"""Command-line entry points.

Subcommands:

* ``run <config>``: execute an experiment config (federated solver, the
  privacy-violating centralized baseline, or both), audit every output, and
  write traces, solutions, figures, and summaries to the output directory.
  Exit status 0 means every audit passed.
* ``gen-lcqp <d> <n> <m> <seed> <out>``: draw a random equality-constrained
  QP instance and save it as an .npz archive.
* ``audit <problem> <solution>``: independently verify a saved solution
  against a problem (an instance .npz or an experiment config).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .audit import assert_output_contract
from .experiments import (
    ExperimentConfig,
    build_problem_for_trial,
    load_solution,
    run_experiment,
)
from .problems import generate_lcqp, lcqp_problem, load_lcqp, save_lcqp

__all__ = ["main"]


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    out_dir = args.out_dir or (Path(args.config).stem + "-results")
    return run_experiment(
        cfg,
        out_dir,
        solver=args.solver,
        trials=args.trials,
        seed=args.seed,
        figures=not args.no_figures,
    )


def _cmd_gen_lcqp(args) -> int:
    inst = generate_lcqp(args.d, args.n, args.m, args.seed)
    save_lcqp(inst, args.out)
    print(f"wrote instance d={args.d} n={args.n} m={args.m} seed={args.seed} to {args.out}")
    return 0


def _cmd_audit(args) -> int:
    w, mu, trial_seed = load_solution(args.solution)
    if args.problem.endswith(".npz"):
        problem = lcqp_problem(load_lcqp(args.problem))
        eps_stat = eps_feas = 1e-3
    else:
        cfg = ExperimentConfig.from_file(args.problem)
        problem, _ = build_problem_for_trial(cfg, trial_seed)
        eps_stat, eps_feas = cfg.outer.eps_stat, cfg.outer.eps_feas
    report = assert_output_contract(problem, w, mu, eps_stat, eps_feas)
    print(report)
    return 0 if report.passed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fedpal",
        description="Federated constrained optimization: proximal augmented-Lagrangian "
        "outer loop with an inexact consensus-ADMM inner solver.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config and audit the outputs")
    p_run.add_argument("config", help="path to an INI experiment config")
    p_run.add_argument("--trials", type=int, default=None, help="override [trials] count")
    p_run.add_argument("--seed", type=int, default=None, help="override [trials] seed")
    p_run.add_argument("--out-dir", default=None, help="artifact directory (default: <config>-results)")
    p_run.add_argument(
        "--solver",
        choices=("fed", "central", "both"),
        default="both",
        help="fed = federated; central = privacy-violating centralized baseline",
    )
    p_run.add_argument("--no-figures", action="store_true", help="skip convergence figures")
    p_run.set_defaults(func=_cmd_run)

    p_gen = sub.add_parser("gen-lcqp", help="generate a random equality-constrained QP instance")
    p_gen.add_argument("d", type=int, help="dimension")
    p_gen.add_argument("n", type=int, help="number of clients")
    p_gen.add_argument("m", type=int, help="constraint rows per party")
    p_gen.add_argument("seed", type=int)
    p_gen.add_argument("out", help="output .npz path")
    p_gen.set_defaults(func=_cmd_gen_lcqp)

    p_audit = sub.add_parser("audit", help="verify a saved solution against a problem")
    p_audit.add_argument("problem", help="instance .npz from gen-lcqp, or an experiment config")
    p_audit.add_argument("solution", help="solution .npz from a run")
    p_audit.set_defaults(func=_cmd_audit)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
