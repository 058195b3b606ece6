"""Command-line entry point.

    mixctl run      --scenario F --schedule dense --out LOG.json
    mixctl baseline --scenario F --scheme sweep --out-dir DIR
    mixctl report   --logs 'runs/*.json' [--best-of-k K] [--json]
    mixctl cost     --scenario F --schedule dense [--predictor curves]
    mixctl generate --n 4 --m 5 --seed 7 --out SCENARIO.json

Exit codes: 0 success, 1 runtime failure (single-line ``error: ...`` on
stderr), 2 usage errors. MIXCTL_OUT_DIR sets the default output directory.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import shlex
import sys
from pathlib import Path

from . import metrics as metrics_mod
from .bridge import BridgeTrainer
from .controller import (
    BASELINE_SWEEP_MASSES,
    ControllerConfig,
    RunLog,
    baseline_sweep_plan,
    run,
    run_fixed_baseline,
)
from .costs import CostConfig, schedule_cost_table, simulate_event_costs, total_relative_cost
from .scenario import Scenario, ScenarioError, load_scenario
from .schedule import ScheduleError, build_schedule
from .simulator import SimTrainer, generate_scenario
from .trainer import Trainer, TrainerError


def _out_dir(path: str | None) -> Path:
    base = Path(path or os.environ.get("MIXCTL_OUT_DIR", "."))
    base.mkdir(parents=True, exist_ok=True)
    return base


def _make_trainer(scenario: Scenario, kind: str, command: str | None) -> Trainer:
    if kind == "sim":
        return SimTrainer(scenario)
    if kind == "exec":
        if not command:
            raise TrainerError("--trainer exec requires --cmd 'COMMAND ...'")
        return BridgeTrainer(shlex.split(command), scenario)
    raise TrainerError(f"unknown trainer kind {kind!r}")


def _cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    schedule = build_schedule(args.schedule, scenario.total_steps, c_max=args.c_max)
    config = ControllerConfig(
        scenario=scenario,
        schedule=schedule,
        predictor=args.predictor,
        slope_source="gradient_alignment" if args.slopes == "grad-align" else "probe",
        grad_batches=args.grad_batches,
        recycle_evaluations=not args.no_recycle,
    )
    trainer = _make_trainer(scenario, args.trainer, args.cmd)
    try:
        log = run(config, trainer, progress=None if args.quiet else print)
    finally:
        trainer.close()
    out = Path(args.out) if args.out else _out_dir(None) / "run.json"
    log.save(out)
    if log.aborted:
        print(f"error: run aborted: {log.abort_reason}", file=sys.stderr)
        return 1
    print(f"wrote {out} ({len(log.weights)} mixture updates, "
          f"total relative cost {log.cost['total_relative']:.3f})"
          if log.cost else f"wrote {out} ({len(log.weights)} mixture updates)")
    return 0


def _cmd_baseline(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    out_dir = _out_dir(args.out_dir)
    if args.scheme == "sweep":
        plan = baseline_sweep_plan(scenario)
    else:
        plan = [(args.scheme, args.w)]
    written = []
    for scheme, mass in plan:
        trainer = _make_trainer(scenario, args.trainer, args.cmd)
        try:
            log = run_fixed_baseline(scenario, trainer, scheme, mass)
        finally:
            trainer.close()
        path = out_dir / f"baseline_{scheme}_w{mass:g}.json"
        log.save(path)
        if log.aborted:
            print(f"error: baseline {scheme} w={mass} aborted: {log.abort_reason}",
                  file=sys.stderr)
            return 1
        written.append(path)
        if not args.quiet:
            print(f"wrote {path}")
    print(f"{len(written)} baseline run(s) complete")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    paths = sorted(p for pattern in args.logs for p in glob.glob(pattern))
    if not paths:
        raise TrainerError(f"no logs match {args.logs}")
    rows = []
    for path in paths:
        log = RunLog.load(path)
        report = metrics_mod.constrained_ppl_reduction(log)
        rows.append({"log": path, "kind": log.kind, "seed": log.seed,
                     **report.to_dict()})
    summary = metrics_mod.aggregate([
        metrics_mod.constrained_ppl_reduction(RunLog.load(p)) for p in paths
    ])
    payload: dict = {"runs": rows, "summary": summary}
    if args.best_of_k:
        pool = [r["ppl_reduction_pct"] for r in rows]
        mc, exact = metrics_mod.best_of_k(pool, args.best_of_k, seed=0)
        payload["best_of_k"] = {"k": args.best_of_k, "monte_carlo": mc, "exact": exact}
    if args.emit_plot_data:
        payload["plot_data"] = _plot_series(paths)
    if args.json:
        print(json.dumps(payload, indent=2))
        return 0
    header = f"{'log':40} {'kind':10} {'feasible':8} {'best@':>6} {'reduction%':>10} {'max_viol':>9}"
    print(header)
    print("-" * len(header))
    for r in rows:
        best = "-" if r["best_checkpoint_step"] is None else str(r["best_checkpoint_step"])
        print(f"{Path(r['log']).name[:40]:40} {r['kind']:10} {str(r['feasible']):8} "
              f"{best:>6} {r['ppl_reduction_pct']:>10.3f} {r['max_violation']:>9.4f}")
    print("-" * len(header))
    print(f"feasibility rate {summary['feasibility_rate']:.2f}   "
          f"median reduction {summary['median_ppl_reduction_pct']:.3f}%")
    if "best_of_k" in payload:
        b = payload["best_of_k"]
        print(f"best-of-{b['k']}: exact {b['exact']:.3f}%  monte-carlo {b['monte_carlo']:.3f}%")
    return 0


def _plot_series(paths: list[str]) -> list[dict]:
    series = []
    for path in paths:
        log = RunLog.load(path)
        series.append({
            "log": path,
            "weights": [{"step": w["step"], "weights": w["weights"]} for w in log.weights],
            "evals": log.evals,
        })
    return series


def _cmd_cost(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    schedule = build_schedule(args.schedule, scenario.total_steps, c_max=args.c_max)
    config = CostConfig.from_scenario(
        scenario,
        n_evals=args.n_evals if args.predictor == "curves" else 0,
        fwd_cost=args.fwd_cost,
        step_cost=args.step_cost,
        recycling=not args.no_recycle,
    )
    rows = schedule_cost_table(config, schedule)
    print(f"{'step':>6} {'H':>6} {'c':>5} {'recycled':>8} {'rho':>12} {'beta':>9}")
    for r in rows:
        print(f"{r['step']:>6} {r['horizon']:>6} {r['probe_steps']:>5} "
              f"{str(r['recycled']):>8} {r['rho']:>12.1f} {r['beta']:>9.4f}")
    total = total_relative_cost(config, schedule)
    events = simulate_event_costs(config, schedule)
    print(f"total relative cost {total:.4f} (event count {events['relative']:.4f})")
    return 0


def _cmd_generate(args: argparse.Namespace) -> int:
    raw = generate_scenario(
        args.n, args.m, args.seed,
        n_target_datasets=args.targets,
        total_steps=args.steps,
        eval_every=args.eval_every,
        mode="deterministic" if args.deterministic else "stochastic",
        linear_dynamics=args.linear,
        accuracy_constraints=args.accuracy,
    )
    out = Path(args.out) if args.out else _out_dir(None) / f"scenario_n{args.n}m{args.m}s{args.seed}.json"
    out.write_text(json.dumps(raw, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixctl", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the adaptive controller")
    p.add_argument("--scenario", required=True)
    p.add_argument("--schedule", default="dense",
                   help="none|light|dense|fixed:H|explicit:a,b,c")
    p.add_argument("--predictor", choices=("linear", "curves"), default="linear")
    p.add_argument("--slopes", choices=("probe", "grad-align"), default="probe")
    p.add_argument("--grad-batches", type=int, default=200)
    p.add_argument("--trainer", choices=("sim", "exec"), default="sim")
    p.add_argument("--cmd", help="external trainer command for --trainer exec")
    p.add_argument("--c-max", type=int, default=128)
    p.add_argument("--no-recycle", action="store_true")
    p.add_argument("--out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("baseline", help="run fixed-weight baselines")
    p.add_argument("--scenario", required=True)
    p.add_argument("--scheme", choices=("uniform", "proportional", "sweep"),
                   default="sweep")
    p.add_argument("--w", type=float, default=0.5, help="target mass (non-sweep)")
    p.add_argument("--trainer", choices=("sim", "exec"), default="sim")
    p.add_argument("--cmd")
    p.add_argument("--out-dir")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("report", help="compute metrics from run logs")
    p.add_argument("--logs", nargs="+", required=True, help="log file globs")
    p.add_argument("--best-of-k", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.add_argument("--emit-plot-data", action="store_true")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("cost", help="cost model breakdown for a configuration")
    p.add_argument("--scenario", required=True)
    p.add_argument("--schedule", default="dense")
    p.add_argument("--predictor", choices=("linear", "curves"), default="linear")
    p.add_argument("--n-evals", type=int, default=5)
    p.add_argument("--fwd-cost", type=float, default=1.0)
    p.add_argument("--step-cost", type=float, default=3.0)
    p.add_argument("--c-max", type=int, default=128)
    p.add_argument("--no-recycle", action="store_true")
    p.set_defaults(func=_cmd_cost)

    p = sub.add_parser("generate", help="emit a seeded synthetic scenario")
    p.add_argument("--n", type=int, required=True, help="number of datasets")
    p.add_argument("--m", type=int, required=True, help="number of eval domains")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--targets", type=int, default=1)
    p.add_argument("--steps", type=int, default=2048)
    p.add_argument("--eval-every", type=int, default=64)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--linear", action="store_true", help="linear-dynamics objectives")
    p.add_argument("--accuracy", type=int, default=0,
                   help="number of accuracy-metric constraints")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_generate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ScheduleError, TrainerError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
