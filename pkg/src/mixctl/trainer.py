"""Trainer abstraction shared by the synthetic simulator and external bridges.

A trainer is a stateful session: snapshot/restore of its full state
(parameters AND optimizer state), training on a single dataset or on a
mixture, raw-metric evaluation over named domains, and optionally gradient
access for the gradient-alignment slope source. Mutating calls must be
serialized by the caller; evaluations against a fixed state are free of side
effects on the training state.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


class TrainerError(Exception):
    """Base class for trainer-session failures."""


class UnknownDatasetError(TrainerError):
    pass


class UnknownDomainError(TrainerError):
    pass


class UnknownHandleError(TrainerError):
    pass


class CheckpointCapacityError(TrainerError):
    pass


class CapabilityError(TrainerError):
    """The trainer does not support the requested operation (e.g. gradients)."""


class InvalidPlanError(TrainerError):
    pass


@dataclass(frozen=True)
class CheckpointHandle:
    """Opaque token for a saved trainer state (parameters + optimizer state)."""

    token: str


@dataclass(frozen=True)
class EvalRequest:
    domain_ids: tuple[str, ...]
    batches: int
    split: str = "eval"

    def __post_init__(self):
        if self.batches < 1:
            raise ValueError("batches must be >= 1")
        if self.split not in ("eval", "test"):
            raise ValueError(f"split must be 'eval' or 'test', got {self.split!r}")


@dataclass(frozen=True)
class EvalResult:
    """Raw (pre-normalization) metric values for exactly the requested domains."""

    values: Mapping[str, float]
    step: int


@dataclass(frozen=True)
class GradientReport:
    """Mean domain loss gradients and per-dataset optimizer directions."""

    eval_gradients: Mapping[str, np.ndarray]
    dataset_directions: Mapping[str, np.ndarray]
    learning_rate: float


@dataclass(frozen=True)
class TrainPlan:
    """Either one dataset trained alone, or a mixture over all datasets.

    ``weights`` is aligned to the trainer's dataset order and must lie on the
    probability simplex.
    """

    dataset: str | None = None
    weights: tuple[float, ...] | None = None

    @classmethod
    def coerce(cls, plan: "TrainPlan | str | Sequence[float]") -> "TrainPlan":
        if isinstance(plan, TrainPlan):
            return plan
        if isinstance(plan, str):
            return cls(dataset=plan)
        return cls(weights=tuple(float(x) for x in plan))

    def validate(self, dataset_ids: Sequence[str]) -> None:
        if (self.dataset is None) == (self.weights is None):
            raise InvalidPlanError("plan must set exactly one of dataset / weights")
        if self.dataset is not None and self.dataset not in dataset_ids:
            raise UnknownDatasetError(f"unknown dataset {self.dataset!r}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (len(dataset_ids),):
                raise InvalidPlanError(
                    f"expected {len(dataset_ids)} weights, got {w.shape}"
                )
            if np.any(w < -1e-12) or abs(float(w.sum()) - 1.0) > 1e-9:
                raise InvalidPlanError("weights must be nonnegative and sum to 1")


class Trainer(abc.ABC):
    """Contract implemented by the simulator and the subprocess bridge."""

    @property
    @abc.abstractmethod
    def dataset_ids(self) -> tuple[str, ...]: ...

    @property
    @abc.abstractmethod
    def domain_ids(self) -> tuple[str, ...]: ...

    @property
    @abc.abstractmethod
    def current_step(self) -> int: ...

    @property
    def supports_gradients(self) -> bool:
        return False

    @abc.abstractmethod
    def snapshot(self) -> CheckpointHandle: ...

    @abc.abstractmethod
    def restore(self, handle: CheckpointHandle) -> None: ...

    @abc.abstractmethod
    def release(self, handle: CheckpointHandle) -> None: ...

    @abc.abstractmethod
    def train_steps(self, plan: TrainPlan | str | Sequence[float], steps: int) -> None: ...

    @abc.abstractmethod
    def evaluate(self, request: EvalRequest) -> EvalResult: ...

    def gradient_report(
        self, domain_ids: Sequence[str], dataset_ids: Sequence[str], batches: int
    ) -> GradientReport:
        raise CapabilityError("this trainer does not expose gradients")

    def close(self) -> None:
        """Release external resources; no-op by default."""
