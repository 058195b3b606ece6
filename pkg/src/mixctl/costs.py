"""Compute-cost accounting in units of one fixed-mixture baseline run.

The baseline cost of an interval of H steps is

    rho = H * C_bp + (H / eval_every) * M * eval_batches_full * C_fwd

(training plus the scheduled full evaluations it amortizes), and the per-update
overhead ratio of probing all N datasets with budget c is

    beta = [N * (c * C_bp + pe * C_red) + (0 if recycled else C_red)] / rho

with C_red = M * eval_batches_reduced * C_fwd the cost of one reduced
evaluation pass and pe the evaluation passes per probe (1 for the linear
predictor, n_evals for the curve predictor). When an update lands on the
evaluation grid the anchor is recycled from the scheduled evaluation and the
trailing C_red term disappears. The total relative cost of a configuration is
the event-for-event sum of all training steps and evaluation batches divided
by the baseline's; ``simulate_event_costs`` counts those events literally and
must agree with the closed form exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .scenario import Scenario
from .schedule import Schedule


@dataclass(frozen=True)
class CostConfig:
    n_datasets: int
    m_domains: int
    eval_every: int = 64
    eval_batches_full: int = 200
    eval_batches_reduced: int = 50
    fwd_cost: float = 1.0     # per-batch forward pass
    step_cost: float = 3.0    # one training step (forward + backward)
    n_evals: int = 0          # interior probe evaluations; 0 = linear predictor
    recycling: bool = True

    def __post_init__(self):
        for name in ("n_datasets", "m_domains", "eval_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.eval_batches_full < 0 or self.eval_batches_reduced < 0:
            raise ValueError("evaluation batch counts must be nonnegative")
        if self.fwd_cost <= 0 or self.step_cost <= 0:
            raise ValueError("costs must be positive")
        if self.step_cost < self.fwd_cost:
            raise ValueError("step_cost must be at least fwd_cost")
        if self.n_evals < 0:
            raise ValueError("n_evals must be nonnegative")

    @property
    def reduced_eval_cost(self) -> float:
        return self.m_domains * self.eval_batches_reduced * self.fwd_cost

    @property
    def evals_per_probe(self) -> int:
        return max(1, self.n_evals)

    @classmethod
    def from_scenario(cls, scenario: Scenario, *, n_evals: int = 0,
                      fwd_cost: float = 1.0, step_cost: float = 3.0,
                      recycling: bool = True) -> "CostConfig":
        return cls(
            n_datasets=scenario.n_datasets,
            m_domains=scenario.m_domains,
            eval_every=scenario.eval_every,
            eval_batches_full=scenario.eval_batches_full,
            eval_batches_reduced=scenario.eval_batches_reduced,
            fwd_cost=fwd_cost,
            step_cost=step_cost,
            n_evals=n_evals,
            recycling=recycling,
        )


def interval_baseline_cost(config: CostConfig, horizon: int) -> float:
    """rho for one interval; fractional evaluation counts are intentional for
    intervals shorter than the evaluation cadence."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    return (horizon * config.step_cost
            + (horizon / config.eval_every) * config.m_domains
            * config.eval_batches_full * config.fwd_cost)


def update_overhead_cost(config: CostConfig, probe_steps: int, recycled: bool) -> float:
    """Absolute overhead of one update (numerator of beta)."""
    per_probe = probe_steps * config.step_cost + config.evals_per_probe * config.reduced_eval_cost
    anchor = 0.0 if recycled else config.reduced_eval_cost
    return config.n_datasets * per_probe + anchor


def update_overhead(config: CostConfig, horizon: int, probe_steps: int,
                    recycled: bool) -> float:
    """beta: overhead of one update relative to its interval's baseline cost."""
    return update_overhead_cost(config, probe_steps, recycled) / interval_baseline_cost(
        config, horizon)


def _update_plan(config: CostConfig, schedule: Schedule) -> list[tuple[int, int, int, bool]]:
    """(step, horizon, probe_steps, recycled) per update."""
    plan = []
    for t in schedule.update_steps:
        recycled = config.recycling and t % config.eval_every == 0
        plan.append((t, schedule.horizon(t), schedule.probe_budget(t), recycled))
    return plan


def baseline_total_cost(config: CostConfig, t_total: int) -> float:
    """Whole-run baseline: every training step plus every scheduled evaluation
    after step 0 (the step-0 reference evaluation is common to all methods
    and excluded, as is the reporting-split pass)."""
    n_evals = t_total // config.eval_every
    return (t_total * config.step_cost
            + n_evals * config.m_domains * config.eval_batches_full * config.fwd_cost)


def total_relative_cost(config: CostConfig, schedule: Schedule) -> float:
    """(baseline + sum of update overheads) / baseline; 1.0 with no updates."""
    base = baseline_total_cost(config, schedule.t_total)
    overhead = sum(
        update_overhead_cost(config, c, recycled)
        for _, _, c, recycled in _update_plan(config, schedule)
    )
    return (base + overhead) / base


def simulate_event_costs(config: CostConfig, schedule: Schedule) -> dict:
    """Literal event count over the run: walks every step, tallies training
    steps, probe steps, and evaluation passes, then prices them. The oracle
    for the closed-form total."""
    t_total = schedule.t_total
    updates = set(schedule.update_steps)
    main_steps = 0
    full_eval_passes = 0
    probe_steps = 0
    probe_eval_passes = 0
    anchor_eval_passes = 0
    for t in range(t_total):
        if t in updates:
            c = schedule.probe_budget(t)
            probe_steps += config.n_datasets * c
            probe_eval_passes += config.n_datasets * config.evals_per_probe
            if not (config.recycling and t % config.eval_every == 0):
                anchor_eval_passes += 1
        main_steps += 1
        if (t + 1) % config.eval_every == 0:
            full_eval_passes += 1
    full_eval_unit = config.m_domains * config.eval_batches_full * config.fwd_cost
    baseline = main_steps * config.step_cost + full_eval_passes * full_eval_unit
    overhead = (probe_steps * config.step_cost
                + (probe_eval_passes + anchor_eval_passes) * config.reduced_eval_cost)
    return {
        "main_steps": main_steps,
        "full_eval_passes": full_eval_passes,
        "probe_steps": probe_steps,
        "probe_eval_passes": probe_eval_passes,
        "anchor_eval_passes": anchor_eval_passes,
        "baseline": baseline,
        "controller": baseline + overhead,
        "relative": (baseline + overhead) / baseline,
    }


def schedule_cost_table(config: CostConfig, schedule: Schedule) -> list[dict]:
    """Per-update rho/beta breakdown for reporting."""
    rows = []
    for t, horizon, c, recycled in _update_plan(config, schedule):
        rho = interval_baseline_cost(config, horizon)
        beta = update_overhead_cost(config, c, recycled) / rho
        rows.append({
            "step": t,
            "horizon": horizon,
            "probe_steps": c,
            "recycled": recycled,
            "rho": rho,
            "beta": beta,
        })
    return rows


def average_relative_cost(config: CostConfig, schedule: Schedule,
                          shapes: Iterable[tuple[int, int]]) -> float:
    """Mean total relative cost over a list of (N, M) scenario shapes."""
    totals = [
        total_relative_cost(replace(config, n_datasets=n, m_domains=m), schedule)
        for n, m in shapes
    ]
    if not totals:
        raise ValueError("shapes must be nonempty")
    return sum(totals) / len(totals)
