"""Run-level metrics computed from run logs: feasibility, constrained
perplexity reduction, best-of-k baseline statistics, and max violation.

Checkpoint selection reads the evaluation split only; the reported reduction
reads the held-out test split only. A run is feasible when some checkpoint
after step 0 keeps every constrained domain at or below its reference while
strictly improving the summed target losses over step 0; infeasible runs
contribute a reduction of 0%.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .controller import RunLog


@dataclass(frozen=True)
class CheckpointRecord:
    step: int
    eval_values: dict[str, float]   # normalized (loss orientation)
    test_values: dict[str, float]


@dataclass(frozen=True)
class MetricReport:
    feasible: bool
    best_checkpoint_step: int | None
    ppl_reduction_pct: float
    max_violation: float
    max_violation_step: int | None
    target_deltas: dict[str, float]       # test-split change at the best checkpoint
    constraint_margins: dict[str, float]  # ref - eval value at the best checkpoint

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "best_checkpoint_step": self.best_checkpoint_step,
            "ppl_reduction_pct": self.ppl_reduction_pct,
            "max_violation": self.max_violation,
            "max_violation_step": self.max_violation_step,
            "target_deltas": self.target_deltas,
            "constraint_margins": self.constraint_margins,
        }


def _domain_roles(log: RunLog) -> tuple[list[str], list[str]]:
    targets, constrained = [], []
    for d in log.scenario["eval_domains"]:
        (targets if d["role"] == "target" else constrained).append(d["id"])
    return targets, constrained


def checkpoint_records(log: RunLog, include_step0: bool = False) -> list[CheckpointRecord]:
    """Eligible checkpoints: the eval_every grid (plus step 0 when asked),
    needing both splits recorded."""
    by_step: dict[int, dict[str, dict[str, float]]] = {}
    for entry in log.evals:
        by_step.setdefault(entry["step"], {})[entry["split"]] = entry["values"]
    records = []
    for step in sorted(by_step):
        if step == 0 and not include_step0:
            continue
        splits = by_step[step]
        if "eval" in splits and "test" in splits:
            records.append(CheckpointRecord(step, splits["eval"], splits["test"]))
    return records


def _satisfies(record: CheckpointRecord, refs: dict[str, float],
               targets: list[str], ref_target_sum: float, at_step0: bool) -> bool:
    for domain_id, ref in refs.items():
        if record.eval_values[domain_id] > ref:
            return False
    if at_step0:
        return True  # keeping the base model is the trivial fallback
    target_sum = sum(record.eval_values[d] for d in targets)
    return target_sum < ref_target_sum


def feasibility(log: RunLog, include_step0: bool = False) -> tuple[bool, int | None]:
    """Whether some eligible checkpoint satisfies all constraints with strictly
    improved summed target loss; returns the earliest witness step."""
    targets, _ = _domain_roles(log)
    refs = log.reference["constraints"]
    ref_target_sum = sum(log.reference["eval"][d] for d in targets)
    for record in checkpoint_records(log, include_step0=include_step0):
        if _satisfies(record, refs, targets, ref_target_sum, record.step == 0):
            return True, record.step
    return False, None


def max_violation(log: RunLog) -> tuple[float, int | None]:
    """Worst constraint excess at the checkpoint closest to feasibility
    (post-step-0 checkpoints; step 0 sits at the references by construction)."""
    _, constrained = _domain_roles(log)
    refs = log.reference["constraints"]
    best_v, best_step = math.inf, None
    for record in checkpoint_records(log, include_step0=False):
        v = 0.0
        for domain_id in constrained:
            v = max(v, record.eval_values[domain_id] - refs[domain_id])
        if v < best_v:
            best_v, best_step = v, record.step
    if best_step is None:
        return math.inf, None
    return max(best_v, 0.0), best_step


def constrained_ppl_reduction(log: RunLog, include_step0: bool = False) -> MetricReport:
    """Select the best feasible checkpoint on the eval split (min summed target
    losses subject to constraints, earliest on ties), report the relative
    perplexity reduction of loss-metric targets on the test split. 0% when no
    checkpoint qualifies."""
    targets, _ = _domain_roles(log)
    loss_targets = [
        d["id"] for d in log.scenario["eval_domains"]
        if d["role"] == "target" and d["metric"] == "loss"
    ]
    refs = log.reference["constraints"]
    ref_target_sum = sum(log.reference["eval"][d] for d in targets)
    viol, viol_step = max_violation(log)

    best: CheckpointRecord | None = None
    best_sum = math.inf
    for record in checkpoint_records(log, include_step0=include_step0):
        if not _satisfies(record, refs, targets, ref_target_sum, record.step == 0):
            continue
        target_sum = sum(record.eval_values[d] for d in targets)
        if target_sum < best_sum:
            best, best_sum = record, target_sum

    if best is None:
        return MetricReport(
            feasible=False, best_checkpoint_step=None, ppl_reduction_pct=0.0,
            max_violation=viol if math.isfinite(viol) else 0.0,
            max_violation_step=viol_step, target_deltas={}, constraint_margins={},
        )

    reduction = 0.0
    if loss_targets:
        log_ratios = [
            best.test_values[d] - log.reference["test"][d] for d in loss_targets
        ]
        geomean_ratio = math.exp(sum(log_ratios) / len(log_ratios))
        reduction = (1.0 - geomean_ratio) * 100.0
    return MetricReport(
        feasible=True,
        best_checkpoint_step=best.step,
        ppl_reduction_pct=reduction,
        max_violation=0.0,
        max_violation_step=viol_step,
        target_deltas={
            d: best.test_values[d] - log.reference["test"][d] for d in targets
        },
        constraint_margins={
            d: refs[d] - best.eval_values[d] for d in refs
        },
    )


def best_of_k(pool: list[float], k: int, trials: int = 10000, seed: int = 0
              ) -> tuple[float, float]:
    """Expected best of k draws with replacement from a baseline pool.

    Returns (monte_carlo_estimate, exact_value); the exact value comes from
    the order-statistics identity E[max] = sum_v v * [(F(v)/n)^k - (F(v-)/n)^k]
    over the sorted pool.
    """
    if not pool:
        raise ValueError("pool must be nonempty")
    if k < 1:
        raise ValueError("k must be >= 1")
    values = np.sort(np.asarray(pool, dtype=float))
    n = len(values)
    uniq, counts = np.unique(values, return_counts=True)
    cdf = np.cumsum(counts) / n
    prev = np.concatenate(([0.0], cdf[:-1]))
    exact = float(np.sum(uniq * (cdf ** k - prev ** k)))
    rng = np.random.default_rng(seed)
    draws = rng.choice(values, size=(trials, k), replace=True)
    mc = float(draws.max(axis=1).mean())
    return mc, exact


def aggregate(reports: list[MetricReport]) -> dict:
    """Feasibility rate and reduction distribution over a set of runs."""
    if not reports:
        return {"runs": 0}
    reductions = [r.ppl_reduction_pct for r in reports]
    return {
        "runs": len(reports),
        "feasibility_rate": sum(r.feasible for r in reports) / len(reports),
        "median_ppl_reduction_pct": float(np.median(reductions)),
        "mean_ppl_reduction_pct": float(np.mean(reductions)),
        "median_max_violation": float(np.median([r.max_violation for r in reports])),
    }
