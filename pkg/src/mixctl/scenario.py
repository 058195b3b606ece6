"""Scenario definitions: training datasets, evaluation domains, run settings.

A scenario couples N training datasets (each a *target* or an auxiliary
*non_target* source) with M evaluation domains (each a *target* whose loss
the controller minimizes, or a *constrained* domain whose metric must stay at
or better than its reference value measured before training starts).

Scenario files are a single JSON object:

    {
      "datasets":     [{"id": str, "role": "target"|"non_target",
                        "sample_budget": int?}, ...],
      "eval_domains": [{"id": str, "role": "target"|"constrained",
                        "metric": "loss"|"accuracy", "reference": float?}, ...],
      "total_steps": int, "batch_size": int, "eval_every": int,
      "eval_batches_full": int, "eval_batches_reduced": int, "seed": int,
      "reference_split": "eval"|"test",     // optional, default "eval"
      "simulator": {...}                    // optional synthetic-trainer config
    }

All downstream code works in *loss orientation*: accuracy values are negated
once at ingestion (see ``normalize_metric``) so every constraint reads
"value <= reference".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

DATASET_ROLES = ("target", "non_target")
DOMAIN_ROLES = ("target", "constrained")
METRIC_KINDS = ("loss", "accuracy")
SPLITS = ("eval", "test")


class ScenarioError(ValueError):
    """Raised for malformed or inconsistent scenario definitions.

    ``field_path`` locates the offending entry, e.g. ``datasets[2].id``.
    """

    def __init__(self, message: str, field_path: str = ""):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}" if field_path else message)


def normalize_metric(value: float, metric: str) -> float:
    """Map a raw metric value to loss orientation (lower is better).

    Losses pass through unchanged; accuracies are negated so that the
    constraint "accuracy must not fall below its reference" becomes
    "normalized value must not rise above its reference". The map is its own
    inverse composed with itself, so ``denormalize_metric`` is exact.
    """
    if metric == "loss":
        return value
    if metric == "accuracy":
        return -value
    raise ScenarioError(f"unknown metric kind {metric!r}")


def denormalize_metric(value: float, metric: str) -> float:
    """Exact inverse of ``normalize_metric``."""
    return normalize_metric(value, metric)


@dataclass(frozen=True)
class DatasetSpec:
    id: str
    role: str = "target"
    sample_budget: int | None = None  # None = unlimited

    def validate(self, path: str = "dataset") -> None:
        if not self.id or not isinstance(self.id, str):
            raise ScenarioError("id must be a non-empty string", f"{path}.id")
        if self.role not in DATASET_ROLES:
            raise ScenarioError(
                f"role must be one of {DATASET_ROLES}, got {self.role!r}", f"{path}.role"
            )
        if self.sample_budget is not None:
            if not isinstance(self.sample_budget, int) or self.sample_budget <= 0:
                raise ScenarioError(
                    f"sample_budget must be a positive integer, got {self.sample_budget!r}",
                    f"{path}.sample_budget",
                )


@dataclass(frozen=True)
class EvalDomainSpec:
    id: str
    role: str = "target"
    metric: str = "loss"
    # Optional preset reference in RAW metric units; when absent the
    # controller measures it at step 0 with the full evaluation budget.
    reference: float | None = None

    def validate(self, path: str = "eval_domain") -> None:
        if not self.id or not isinstance(self.id, str):
            raise ScenarioError("id must be a non-empty string", f"{path}.id")
        if self.role not in DOMAIN_ROLES:
            raise ScenarioError(
                f"role must be one of {DOMAIN_ROLES}, got {self.role!r}", f"{path}.role"
            )
        if self.metric not in METRIC_KINDS:
            raise ScenarioError(
                f"metric must be one of {METRIC_KINDS}, got {self.metric!r}", f"{path}.metric"
            )
        if self.reference is not None and not isinstance(self.reference, (int, float)):
            raise ScenarioError("reference must be a number", f"{path}.reference")


@dataclass(frozen=True)
class Scenario:
    """Immutable run definition; safe to share across concurrent tasks."""

    datasets: tuple[DatasetSpec, ...]
    eval_domains: tuple[EvalDomainSpec, ...]
    total_steps: int
    batch_size: int = 8
    eval_every: int = 64
    eval_batches_full: int = 200
    eval_batches_reduced: int = 50
    seed: int = 0
    reference_split: str = "eval"
    simulator: Mapping[str, Any] | None = field(default=None, compare=False)

    # -- derived views -------------------------------------------------------

    @property
    def n_datasets(self) -> int:
        return len(self.datasets)

    @property
    def m_domains(self) -> int:
        return len(self.eval_domains)

    @property
    def dataset_ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.datasets)

    @property
    def domain_ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.eval_domains)

    @property
    def target_dataset_ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.datasets if d.role == "target")

    @property
    def non_target_dataset_ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.datasets if d.role == "non_target")

    @property
    def target_domain_ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.eval_domains if d.role == "target")

    @property
    def constrained_domain_ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.eval_domains if d.role == "constrained")

    def domain(self, domain_id: str) -> EvalDomainSpec:
        for d in self.eval_domains:
            if d.id == domain_id:
                return d
        raise ScenarioError(f"unknown evaluation domain {domain_id!r}", "eval_domains")

    def metric_of(self, domain_id: str) -> str:
        return self.domain(domain_id).metric

    def normalize(self, domain_id: str, value: float) -> float:
        return normalize_metric(value, self.metric_of(domain_id))

    def normalize_values(self, values: Mapping[str, float]) -> dict[str, float]:
        return {k: self.normalize(k, v) for k, v in values.items()}

    # -- validation ----------------------------------------------------------

    def validate(self) -> None:
        if self.n_datasets < 1:
            raise ScenarioError("at least one dataset required", "datasets")
        if self.m_domains < 1:
            raise ScenarioError("at least one evaluation domain required", "eval_domains")
        seen: set[str] = set()
        for i, d in enumerate(self.datasets):
            d.validate(f"datasets[{i}]")
            if d.id in seen:
                raise ScenarioError(f"duplicate dataset id {d.id!r}", f"datasets[{i}].id")
            seen.add(d.id)
        if not self.target_dataset_ids:
            raise ScenarioError("at least one dataset must have role 'target'", "datasets")
        seen = set()
        for i, d in enumerate(self.eval_domains):
            d.validate(f"eval_domains[{i}]")
            if d.id in seen:
                raise ScenarioError(f"duplicate domain id {d.id!r}", f"eval_domains[{i}].id")
            seen.add(d.id)
        for name in ("total_steps", "batch_size", "eval_every",
                     "eval_batches_full", "eval_batches_reduced"):
            v = getattr(self, name)
            if not isinstance(v, int) or v <= 0:
                raise ScenarioError(f"must be a positive integer, got {v!r}", name)
        if self.eval_batches_reduced > self.eval_batches_full:
            raise ScenarioError(
                "eval_batches_reduced must not exceed eval_batches_full", "eval_batches_reduced"
            )
        if self.reference_split not in SPLITS:
            raise ScenarioError(
                f"must be one of {SPLITS}, got {self.reference_split!r}", "reference_split"
            )
        if not isinstance(self.seed, int):
            raise ScenarioError("seed must be an integer", "seed")

    # -- (de)serialization ---------------------------------------------------

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "Scenario":
        if not isinstance(raw, Mapping):
            raise ScenarioError("scenario file must contain a single JSON object")
        known = {
            "datasets", "eval_domains", "total_steps", "batch_size", "eval_every",
            "eval_batches_full", "eval_batches_reduced", "seed", "reference_split",
            "simulator",
        }
        unknown = set(raw) - known
        if unknown:
            raise ScenarioError(f"unknown field(s) {sorted(unknown)}")
        try:
            datasets = tuple(
                DatasetSpec(
                    id=d.get("id", ""),
                    role=d.get("role", "target"),
                    sample_budget=d.get("sample_budget"),
                )
                for d in raw.get("datasets", [])
            )
            domains = tuple(
                EvalDomainSpec(
                    id=d.get("id", ""),
                    role=d.get("role", "target"),
                    metric=d.get("metric", "loss"),
                    reference=d.get("reference"),
                )
                for d in raw.get("eval_domains", [])
            )
        except AttributeError as exc:
            raise ScenarioError(f"malformed entry: {exc}") from exc
        scenario = cls(
            datasets=datasets,
            eval_domains=domains,
            total_steps=raw.get("total_steps", 0),
            batch_size=raw.get("batch_size", 8),
            eval_every=raw.get("eval_every", 64),
            eval_batches_full=raw.get("eval_batches_full", 200),
            eval_batches_reduced=raw.get("eval_batches_reduced", 50),
            seed=raw.get("seed", 0),
            reference_split=raw.get("reference_split", "eval"),
            simulator=raw.get("simulator"),
        )
        scenario.validate()
        return scenario

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "datasets": [
                {"id": d.id, "role": d.role}
                | ({"sample_budget": d.sample_budget} if d.sample_budget is not None else {})
                for d in self.datasets
            ],
            "eval_domains": [
                {"id": d.id, "role": d.role, "metric": d.metric}
                | ({"reference": d.reference} if d.reference is not None else {})
                for d in self.eval_domains
            ],
            "total_steps": self.total_steps,
            "batch_size": self.batch_size,
            "eval_every": self.eval_every,
            "eval_batches_full": self.eval_batches_full,
            "eval_batches_reduced": self.eval_batches_reduced,
            "seed": self.seed,
            "reference_split": self.reference_split,
        }
        if self.simulator is not None:
            out["simulator"] = dict(self.simulator)
        return out


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario file.

    Raises ``ScenarioError`` with the offending field path for validation
    problems, or with the JSON parser message for malformed files.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON in {path}: {exc}") from exc
    return Scenario.from_dict(raw)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2) + "\n", encoding="utf-8")
