"""The adaptive training loop, fixed-weight baselines, and the run log.

At every schedule step the controller re-estimates the slope matrix (by
probing or by gradient alignment), rebuilds the predictor at the horizon to
the next update, re-solves the penalized mixture problem over the whole
(lambda, eps) grid, and trains on the selected mixture until the next event.
Exactly ``total_steps`` mixture training steps are executed; probe excursions
are snapshot/restored and never advance the main trajectory. Full-budget
evaluations on both splits run every ``eval_every`` steps; when an update
coincides with one, its values are recycled as the probe anchor.

Everything observable lands in the RunLog (a versioned JSON document): the
mixture trajectory, all grid candidates per update, per-domain evaluation
history on both splits (normalized to loss orientation), slope summaries, and
a cost ledger. Runs with the same config and seed produce byte-identical
logs in deterministic mode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import costs as costs_mod
from .predictors import LinearPredictor, fit_curves
from .scenario import Scenario
from .schedule import Schedule
from .slopes import estimate_slopes, gradient_alignment_slopes
from .solver import (
    MixtureWeights,
    SolverGrid,
    choose_best,
    default_grid,
    evaluate_candidates,
)
from .trainer import EvalRequest, Trainer, TrainerError

LOG_VERSION = 1


@dataclass
class RunLog:
    """Self-describing record of one run; the substrate for all metrics."""

    kind: str
    scenario: dict
    config: dict
    seed: int
    version: int = LOG_VERSION
    aborted: bool = False
    abort_reason: str | None = None
    reference: dict = field(default_factory=dict)   # {"eval": {...}, "test": {...},
                                                    #  "constraints": {...}} normalized
    weights: list = field(default_factory=list)     # per-update trajectory entries
    evals: list = field(default_factory=list)       # {"step","split","values"} normalized
    slopes: list = field(default_factory=list)
    candidates: list = field(default_factory=list)  # per-update grid outcomes
    cost: dict | None = None

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "kind": self.kind,
            "scenario": self.scenario,
            "config": self.config,
            "seed": self.seed,
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
            "reference": self.reference,
            "weights": self.weights,
            "evals": self.evals,
            "slopes": self.slopes,
            "candidates": self.candidates,
            "cost": self.cost,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, raw: dict) -> "RunLog":
        if raw.get("version") != LOG_VERSION:
            raise ValueError(f"unsupported run log version {raw.get('version')!r}")
        return cls(
            kind=raw["kind"],
            scenario=raw["scenario"],
            config=raw.get("config", {}),
            seed=raw.get("seed", 0),
            aborted=raw.get("aborted", False),
            abort_reason=raw.get("abort_reason"),
            reference=raw.get("reference", {}),
            weights=raw.get("weights", []),
            evals=raw.get("evals", []),
            slopes=raw.get("slopes", []),
            candidates=raw.get("candidates", []),
            cost=raw.get("cost"),
        )

    @classmethod
    def load(cls, path: str | Path) -> "RunLog":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class ControllerConfig:
    scenario: Scenario
    schedule: Schedule
    predictor: str = "linear"            # "linear" | "curves"
    n_evals: int = 5                     # interior probe evaluations for curves
    slope_source: str = "probe"          # "probe" | "gradient_alignment"
    grad_batches: int = 200              # gradient-averaging batches (alignment)
    solver_grid: SolverGrid | None = None
    recycle_evaluations: bool = True
    fwd_cost: float = 1.0
    step_cost: float = 3.0

    def __post_init__(self):
        if self.predictor not in ("linear", "curves"):
            raise ValueError(f"predictor must be linear|curves, got {self.predictor!r}")
        if self.slope_source not in ("probe", "gradient_alignment"):
            raise ValueError(f"unknown slope source {self.slope_source!r}")
        if self.predictor == "curves":
            if self.slope_source != "probe":
                raise ValueError("the curve predictor requires probe slopes")
            if self.n_evals < 2:
                raise ValueError("curves need n_evals >= 2")

    def grid(self) -> SolverGrid:
        return self.solver_grid or default_grid()

    def describe(self) -> dict:
        grid = self.grid()
        return {
            "schedule": {
                "kind": self.schedule.kind,
                "update_steps": list(self.schedule.update_steps),
                "c_max": self.schedule.c_max,
            },
            "predictor": self.predictor,
            "n_evals": self.n_evals if self.predictor == "curves" else 0,
            "slope_source": self.slope_source,
            "grad_batches": self.grad_batches,
            "grid": {"lambdas": list(grid.lambdas), "epsilons": list(grid.epsilons)},
            "recycle_evaluations": self.recycle_evaluations,
            "fwd_cost": self.fwd_cost,
            "step_cost": self.step_cost,
        }


def _measure_references(log: RunLog, trainer: Trainer, scenario: Scenario) -> dict[str, float]:
    """Step-0 full-budget evaluation on both splits; fills constraint refs."""
    full = scenario.eval_batches_full
    by_split = {}
    for split in ("eval", "test"):
        result = trainer.evaluate(EvalRequest(scenario.domain_ids, full, split))
        values = scenario.normalize_values(dict(result.values))
        by_split[split] = values
        log.evals.append({"step": 0, "split": split, "values": values})
    refs = {}
    for domain_id in scenario.constrained_domain_ids:
        preset = scenario.domain(domain_id).reference
        if preset is not None:
            refs[domain_id] = scenario.normalize(domain_id, preset)
        else:
            refs[domain_id] = by_split[scenario.reference_split][domain_id]
    log.reference = {
        "eval": by_split["eval"],
        "test": by_split["test"],
        "constraints": refs,
    }
    return refs


def _scheduled_eval(log: RunLog, trainer: Trainer, scenario: Scenario, step: int
                    ) -> dict[str, float]:
    """Full-budget evaluation on both splits at a checkpoint step; returns the
    eval-split values (the recycling source)."""
    full = scenario.eval_batches_full
    eval_values = None
    for split in ("eval", "test"):
        result = trainer.evaluate(EvalRequest(scenario.domain_ids, full, split))
        values = scenario.normalize_values(dict(result.values))
        log.evals.append({"step": step, "split": split, "values": values})
        if split == "eval":
            eval_values = values
    return eval_values


def run(config: ControllerConfig, trainer: Trainer,
        progress: Callable[[str], None] | None = None) -> RunLog:
    """Execute the adaptive loop; returns a complete (or aborted-partial) log."""
    scenario = config.scenario
    schedule = config.schedule
    if trainer.current_step != 0:
        raise ValueError("trainer must be fresh at step 0")
    log = RunLog(
        kind="controller",
        scenario=scenario.to_dict(),
        config=config.describe(),
        seed=scenario.seed,
    )
    grid = config.grid()
    updates = set(schedule.update_steps)
    cost_config = costs_mod.CostConfig.from_scenario(
        scenario,
        n_evals=config.n_evals if config.predictor == "curves" else 0,
        fwd_cost=config.fwd_cost,
        step_cost=config.step_cost,
        recycling=config.recycle_evaluations,
    )
    cost_rows: list[dict] = []

    try:
        refs = _measure_references(log, trainer, scenario)
        last_eval_step = 0
        last_eval_values = log.reference["eval"]
        current = MixtureWeights.uniform(scenario.n_datasets)
        t = 0
        while t < scenario.total_steps:
            if t in updates:
                horizon = schedule.horizon(t)
                probe_steps = schedule.probe_budget(t)
                anchor = None
                recycled = False
                if config.recycle_evaluations and last_eval_step == t:
                    anchor = last_eval_values
                    recycled = True
                if config.slope_source == "probe":
                    n_evals = config.n_evals if config.predictor == "curves" else 0
                    slope_matrix = estimate_slopes(
                        trainer, scenario, probe_steps,
                        scenario.eval_batches_reduced, n_evals=n_evals, anchor=anchor,
                    )
                else:
                    slope_matrix = gradient_alignment_slopes(
                        trainer, scenario, config.grad_batches, anchor=anchor,
                    )
                if config.predictor == "curves":
                    model = fit_curves(slope_matrix, horizon).as_model(
                        scenario.target_domain_ids)
                else:
                    model = LinearPredictor(slope_matrix, horizon).as_model(
                        scenario.target_domain_ids)
                candidates = evaluate_candidates(model, refs, grid)
                outcome = choose_best(candidates)
                current = outcome.weights
                log.slopes.append(slope_matrix.to_summary(
                    include_trajectories=config.predictor == "curves"))
                log.candidates.append(
                    {"step": t, "items": [c.to_dict() for c in candidates]})
                log.weights.append({
                    "step": t,
                    "horizon": horizon,
                    "probe_steps": probe_steps,
                    "weights": list(current.values),
                    "outcome": outcome.to_dict(),
                    "anchor_recycled": recycled,
                    "model_flags": list(model.flags),
                })
                if config.slope_source == "probe":
                    rho = costs_mod.interval_baseline_cost(cost_config, horizon)
                    beta = costs_mod.update_overhead(cost_config, horizon,
                                                     probe_steps, recycled)
                    cost_rows.append({
                        "step": t, "horizon": horizon, "probe_steps": probe_steps,
                        "recycled": recycled, "rho": rho, "beta": beta,
                    })
                if progress is not None:
                    progress(
                        f"step {t}: weights={['%.3f' % v for v in current.values]} "
                        f"feasible={outcome.feasible} "
                        f"violation={outcome.max_violation:.3g}"
                    )
            next_update = min((u for u in updates if u > t), default=scenario.total_steps)
            next_eval = (t // scenario.eval_every + 1) * scenario.eval_every
            run_to = min(next_update, next_eval, scenario.total_steps)
            trainer.train_steps(current.values, run_to - t)
            t = run_to
            if t % scenario.eval_every == 0:
                last_eval_values = _scheduled_eval(log, trainer, scenario, t)
                last_eval_step = t
    except TrainerError as exc:
        log.aborted = True
        log.abort_reason = f"{type(exc).__name__}: {exc}"
        return log

    if config.slope_source == "probe":
        log.cost = {
            "per_update": cost_rows,
            "total_relative": costs_mod.total_relative_cost(cost_config, schedule),
        }
    return log


# ---------------------------------------------------------------------------
# Fixed-weight baselines
# ---------------------------------------------------------------------------


def fixed_mixture(scenario: Scenario, scheme: str, target_mass: float) -> MixtureWeights:
    """Fixed allocation: target mass w over target datasets (equally, or in
    proportion to sample budgets), remainder equally over non-targets."""
    if scheme not in ("uniform", "proportional"):
        raise ValueError(f"scheme must be uniform|proportional, got {scheme!r}")
    if not 0.0 <= target_mass <= 1.0:
        raise ValueError("target mass must lie in [0, 1]")
    targets = [d for d in scenario.datasets if d.role == "target"]
    non_targets = [d for d in scenario.datasets if d.role == "non_target"]
    if target_mass < 1.0 and not non_targets:
        raise ValueError("no non-target datasets to receive the remaining mass")
    weights = {d.id: 0.0 for d in scenario.datasets}
    if target_mass > 0.0:
        if scheme == "uniform":
            for d in targets:
                weights[d.id] = target_mass / len(targets)
        else:
            budgets = [d.sample_budget for d in targets]
            if any(b is None for b in budgets):
                raise ValueError(
                    "proportional scheme requires finite sample budgets on all targets")
            total = sum(budgets)
            for d, b in zip(targets, budgets):
                weights[d.id] = target_mass * b / total
    if non_targets and target_mass < 1.0:
        for d in non_targets:
            weights[d.id] = (1.0 - target_mass) / len(non_targets)
    return MixtureWeights(tuple(weights[d.id] for d in scenario.datasets))


def run_fixed_baseline(scenario: Scenario, trainer: Trainer, scheme: str,
                       target_mass: float,
                       progress: Callable[[str], None] | None = None) -> RunLog:
    """Train the full budget on one fixed mixture; logs like a controller run."""
    mixture = fixed_mixture(scenario, scheme, target_mass)
    if trainer.current_step != 0:
        raise ValueError("trainer must be fresh at step 0")
    log = RunLog(
        kind="baseline",
        scenario=scenario.to_dict(),
        config={"scheme": scheme, "target_mass": target_mass,
                "weights": list(mixture.values)},
        seed=scenario.seed,
    )
    try:
        _measure_references(log, trainer, scenario)
        log.weights.append({"step": 0, "weights": list(mixture.values)})
        t = 0
        while t < scenario.total_steps:
            run_to = min((t // scenario.eval_every + 1) * scenario.eval_every,
                         scenario.total_steps)
            trainer.train_steps(mixture.values, run_to - t)
            t = run_to
            if t % scenario.eval_every == 0:
                _scheduled_eval(log, trainer, scenario, t)
                if progress is not None:
                    progress(f"baseline {scheme} w={target_mass}: step {t}")
    except TrainerError as exc:
        log.aborted = True
        log.abort_reason = f"{type(exc).__name__}: {exc}"
    return log


BASELINE_SWEEP_MASSES = (0.0, 0.2, 0.5, 0.8, 1.0)


def baseline_sweep_plan(scenario: Scenario,
                        masses: Sequence[float] = BASELINE_SWEEP_MASSES
                        ) -> list[tuple[str, float]]:
    """(scheme, w) pairs with proportional entries dropped when they coincide
    with uniform: at w=0, for single-target scenarios, and when all targets
    have equal sample budgets (or budgets are unavailable)."""
    plan = [("uniform", w) for w in masses]
    targets = [d for d in scenario.datasets if d.role == "target"]
    budgets = [d.sample_budget for d in targets]
    distinct = (len(targets) > 1 and all(b is not None for b in budgets)
                and len(set(budgets)) > 1)
    if distinct:
        plan.extend(("proportional", w) for w in masses if w > 0.0)
    return plan


def baseline_sweep(scenario: Scenario,
                   trainer_factory: Callable[[], Trainer],
                   masses: Sequence[float] = BASELINE_SWEEP_MASSES,
                   jobs: int = 1) -> list[RunLog]:
    """Run the whole fixed-weight sweep, one fresh trainer per member."""
    plan = baseline_sweep_plan(scenario, masses)

    def _one(entry: tuple[str, float]) -> RunLog:
        trainer = trainer_factory()
        try:
            return run_fixed_baseline(scenario, trainer, entry[0], entry[1])
        finally:
            trainer.close()

    if jobs <= 1:
        return [_one(entry) for entry in plan]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_one, plan))
