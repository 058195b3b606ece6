"""Slope-matrix estimation by per-dataset probing, plus the gradient-alignment
alternative.

A probe snapshots the trainer, trains c_t steps on one dataset alone, measures
every evaluation domain, and restores. Entry (i, j) of the resulting matrix is
the per-step change of domain i's normalized metric caused by training on
dataset j: negative entries are beneficial transfer, positive entries are
interference (and, on constrained domains, forgetting pressure). The trainer
always ends a call in its pre-call state, even when a probe fails mid-way.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from .scenario import Scenario
from .trainer import EvalRequest, Trainer, TrainerError


@dataclass(frozen=True)
class SlopeMatrix:
    """M x N per-step slope estimates on normalized metrics.

    ``anchor`` holds the pre-probe normalized value per domain; when the
    estimate reuses a main-loop evaluation instead of measuring its own,
    ``anchor_recycled`` is set. ``traj_u``/``traj_values`` (probe progress in
    [0, 1] and normalized values of shape (points, M, N)) are present only
    when interior probe evaluations were requested for curve fitting; point 0
    is the anchor.
    """

    entries: np.ndarray
    anchor: Mapping[str, float]
    step: int
    probe_steps: int
    domain_ids: tuple[str, ...]
    dataset_ids: tuple[str, ...]
    source: str = "probe"
    anchor_recycled: bool = False
    traj_u: tuple[float, ...] | None = None
    traj_values: np.ndarray | None = None

    def __post_init__(self):
        m, n = self.entries.shape
        if m != len(self.domain_ids) or n != len(self.dataset_ids):
            raise ValueError("entries shape does not match domain/dataset ids")
        if set(self.anchor) != set(self.domain_ids):
            raise ValueError("anchor must cover every evaluation domain")
        if (self.traj_u is None) != (self.traj_values is None):
            raise ValueError("traj_u and traj_values must be given together")

    @property
    def anchor_vector(self) -> np.ndarray:
        return np.array([self.anchor[d] for d in self.domain_ids])

    def to_summary(self, include_trajectories: bool = True) -> dict[str, Any]:
        out: dict[str, Any] = {
            "step": self.step,
            "probe_steps": self.probe_steps,
            "source": self.source,
            "anchor_recycled": self.anchor_recycled,
            "domain_ids": list(self.domain_ids),
            "dataset_ids": list(self.dataset_ids),
            "anchor": {d: self.anchor[d] for d in self.domain_ids},
            "entries": self.entries.tolist(),
        }
        if include_trajectories and self.traj_u is not None:
            out["traj_u"] = list(self.traj_u)
            out["traj_values"] = self.traj_values.tolist()
        return out


def estimate_slopes(
    trainer: Trainer,
    scenario: Scenario,
    probe_steps: int,
    eval_batches: int,
    n_evals: int = 0,
    anchor: Mapping[str, float] | None = None,
    split: str = "eval",
) -> SlopeMatrix:
    """Probe every dataset for ``probe_steps`` steps and difference the losses.

    ``n_evals`` > 0 additionally records that many evenly spaced interior
    evaluations per probe (at steps round(k * c / n_evals)); the final one
    lands on the probe endpoint and provides the slope measurement. With
    ``n_evals`` = 0 only the endpoint is measured. ``anchor`` supplies
    recycled pre-probe values (normalized); otherwise the anchor is measured
    here with the same ``eval_batches`` budget used after each probe.
    """
    if probe_steps < 1:
        raise ValueError("probe_steps must be >= 1")
    domain_ids = scenario.domain_ids
    dataset_ids = scenario.dataset_ids
    m, n = len(domain_ids), len(dataset_ids)

    if anchor is None:
        result = trainer.evaluate(EvalRequest(domain_ids, eval_batches, split))
        anchor_vals = scenario.normalize_values(dict(result.values))
        recycled = False
    else:
        missing = set(domain_ids) - set(anchor)
        if missing:
            raise ValueError(f"recycled anchor is missing domains {sorted(missing)}")
        anchor_vals = {d: float(anchor[d]) for d in domain_ids}
        recycled = True
    anchor_vec = np.array([anchor_vals[d] for d in domain_ids])

    step = trainer.current_step
    entries = np.zeros((m, n))
    traj_u: list[float] | None = None
    traj_values: np.ndarray | None = None
    eval_steps: list[int] = []
    if n_evals > 0:
        eval_steps = [int(round(k * probe_steps / n_evals)) for k in range(1, n_evals + 1)]
        traj_u = [0.0] + [s / probe_steps for s in eval_steps]
        traj_values = np.zeros((n_evals + 1, m, n))
        traj_values[0] = anchor_vec[:, None]

    handle = trainer.snapshot()
    try:
        for j, dataset_id in enumerate(dataset_ids):
            try:
                if n_evals <= 0:
                    trainer.train_steps(dataset_id, probe_steps)
                    result = trainer.evaluate(EvalRequest(domain_ids, eval_batches, split))
                    final = scenario.normalize_values(dict(result.values))
                else:
                    reached = 0
                    final = anchor_vals
                    for k, target in enumerate(eval_steps):
                        if target > reached:
                            trainer.train_steps(dataset_id, target - reached)
                            reached = target
                        result = trainer.evaluate(
                            EvalRequest(domain_ids, eval_batches, split)
                        )
                        final = scenario.normalize_values(dict(result.values))
                        traj_values[k + 1, :, j] = [final[d] for d in domain_ids]
                entries[:, j] = [
                    (final[d] - anchor_vals[d]) / probe_steps for d in domain_ids
                ]
            finally:
                trainer.restore(handle)
    finally:
        try:
            trainer.restore(handle)
        except TrainerError:
            pass
        trainer.release(handle)

    return SlopeMatrix(
        entries=entries,
        anchor=anchor_vals,
        step=step,
        probe_steps=probe_steps,
        domain_ids=domain_ids,
        dataset_ids=dataset_ids,
        source="probe",
        anchor_recycled=recycled,
        traj_u=None if traj_u is None else tuple(traj_u),
        traj_values=traj_values,
    )


def gradient_alignment_slopes(
    trainer: Trainer,
    scenario: Scenario,
    batches: int,
    anchor: Mapping[str, float] | None = None,
    split: str = "eval",
) -> SlopeMatrix:
    """Slope surrogate from gradient inner products: S_ij = -lr * <g_i, d_j>.

    ``g_i`` is the mean gradient of domain i's normalized metric (accuracy
    domains are sign-flipped; trainers report zero for metrics without usable
    gradients) and ``d_j`` the per-dataset optimizer direction at the current
    state. First-order equivalent to a one-step probe, without any training.
    """
    domain_ids = scenario.domain_ids
    dataset_ids = scenario.dataset_ids

    if anchor is None:
        result = trainer.evaluate(EvalRequest(domain_ids, scenario.eval_batches_reduced, split))
        anchor_vals = scenario.normalize_values(dict(result.values))
        recycled = False
    else:
        anchor_vals = {d: float(anchor[d]) for d in domain_ids}
        recycled = True

    report = trainer.gradient_report(domain_ids, dataset_ids, batches)
    entries = np.zeros((len(domain_ids), len(dataset_ids)))
    for i, domain_id in enumerate(domain_ids):
        g = np.asarray(report.eval_gradients[domain_id], dtype=float)
        if scenario.metric_of(domain_id) == "accuracy":
            g = -g
        for j, dataset_id in enumerate(dataset_ids):
            d = np.asarray(report.dataset_directions[dataset_id], dtype=float)
            entries[i, j] = -report.learning_rate * float(g @ d)

    return SlopeMatrix(
        entries=entries,
        anchor=anchor_vals,
        step=trainer.current_step,
        probe_steps=1,
        domain_ids=domain_ids,
        dataset_ids=dataset_ids,
        source="gradient_alignment",
        anchor_recycled=recycled,
    )
