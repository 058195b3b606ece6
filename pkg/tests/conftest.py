"""Shared builders for hand-constructed scenarios and simulators."""

import numpy as np
import pytest

from mixctl.scenario import DatasetSpec, EvalDomainSpec, Scenario
from mixctl.simulator import QuadraticObjective, SimConfig, SimTrainer


def make_scenario(n_datasets=2, domains=None, total_steps=256, eval_every=32,
                  seed=0, budgets=None, n_targets=1, **kwargs):
    """Scenario skeleton with datasets ds0..dsN-1 and explicit domain specs."""
    budgets = budgets or [None] * n_datasets
    datasets = tuple(
        DatasetSpec(id=f"ds{i}", role="target" if i < n_targets else "non_target",
                    sample_budget=budgets[i])
        for i in range(n_datasets)
    )
    domains = domains or [("tgt", "target", "loss"), ("con", "constrained", "loss")]
    eval_domains = tuple(EvalDomainSpec(id=d[0], role=d[1], metric=d[2]) for d in domains)
    return Scenario(
        datasets=datasets,
        eval_domains=eval_domains,
        total_steps=total_steps,
        eval_every=eval_every,
        seed=seed,
        **kwargs,
    )


def quad(matrix, center, offset=0.0, linear=None):
    return QuadraticObjective(np.asarray(matrix, float), np.asarray(center, float),
                              offset, None if linear is None else np.asarray(linear, float))


def iso_quad(dim, center, scale=1.0, offset=0.0):
    return quad(scale * np.eye(dim), center, offset)


def affine(dim, gradient, offset=0.0):
    """Fixed-gradient objective (zero curvature): linear dynamics building block."""
    return quad(np.zeros((dim, dim)), np.zeros(dim), offset, linear=gradient)


def make_sim(scenario, dataset_objs, domain_objs, mode="deterministic",
             optimizer="adam", seed=0, **kwargs):
    config = SimConfig(
        dim=dataset_objs[0].dim,
        dataset_objectives=tuple(dataset_objs),
        domain_objectives=tuple(domain_objs),
        mode=mode,
        optimizer=optimizer,
        seed=seed,
        **kwargs,
    )
    return SimTrainer(scenario, config)


@pytest.fixture
def two_dataset_sim():
    """2 datasets / 2 domains, isotropic quadratics, deterministic Adam."""
    dim = 4
    scenario = make_scenario(n_datasets=2, total_steps=256, eval_every=32)
    dataset_objs = [iso_quad(dim, [1.0, 0.0, 0.0, 0.0]),
                    iso_quad(dim, [0.0, 1.0, 0.0, 0.0])]
    domain_objs = [iso_quad(dim, [1.0, 0.0, 0.0, 0.0], offset=0.5),
                   iso_quad(dim, [0.0, 0.0, 1.0, 0.0], offset=0.5)]
    trainer = make_sim(scenario, dataset_objs, domain_objs, learning_rate=0.01)
    return scenario, trainer
