"""Synthetic multi-domain trainer with controllable transfer/interference.

Each training dataset and each evaluation domain is a quadratic bowl over a
shared d-dimensional parameter vector:

    loss(theta) = 0.5 (theta - mu)^T A (theta - mu) + g^T (theta - mu) + b

with A symmetric PSD. Placing dataset and domain centers relative to each
other produces beneficial transfer (probing a dataset lowers a domain's loss)
or interference (it raises it). The optional linear term ``g`` with A = 0
gives affine losses whose gradient is constant: combined with the plain
gradient-step optimizer this is the *linear dynamics* regime in which the
one-step-slope extrapolation of the controller is exact, which the predictor
tests rely on.

Two run modes:

  deterministic - mixture steps apply the optimizer to the weight-averaged
      exact gradient; evaluations return exact analytic values. Noise levels
      must be zero.
  stochastic    - each step draws its dataset from Categorical(w), gradients
      carry per-batch noise (finite-budget datasets cycle a fixed pool of
      noise draws), and evaluations add noise of scale eval_noise/sqrt(batches).

Accuracy-metric domains expose floor(Q * logistic((threshold - loss)/scale))/Q,
a genuinely piecewise-constant metric: finite-difference probing still sees it,
gradient-based slope estimation cannot.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .scenario import DatasetSpec, EvalDomainSpec, Scenario, ScenarioError
from .trainer import (
    CapabilityError,
    CheckpointCapacityError,
    CheckpointHandle,
    EvalRequest,
    EvalResult,
    GradientReport,
    Trainer,
    TrainPlan,
    UnknownDomainError,
    UnknownHandleError,
)


def _sigmoid(z: float) -> float:
    # overflow-safe logistic
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def quantized_accuracy(loss: float, threshold: float, scale: float, quantum: int = 20) -> float:
    """Accuracy surrogate: floor(Q * logistic((threshold - loss)/scale)) / Q.

    Piecewise constant and monotone nonincreasing in the underlying loss;
    saturates at 0.0 / 1.0 for extreme losses.
    """
    p = _sigmoid((threshold - loss) / scale)
    return math.floor(quantum * p) / quantum


# ---------------------------------------------------------------------------
# Objectives and optimizers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadraticObjective:
    """0.5 (theta-mu)^T A (theta-mu) + g^T (theta-mu) + b, A symmetric PSD.

    ``linear`` (g) defaults to zero; a zero matrix with nonzero g yields an
    affine loss with constant gradient.
    """

    matrix: np.ndarray
    center: np.ndarray
    offset: float = 0.0
    linear: np.ndarray | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        c = np.asarray(self.center, dtype=float)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "center", c)
        if self.linear is not None:
            object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float))
        if m.shape != (c.size, c.size):
            raise ValueError(f"matrix shape {m.shape} does not match center dim {c.size}")
        if not np.allclose(m, m.T, atol=1e-10):
            raise ValueError("matrix must be symmetric")

    @property
    def dim(self) -> int:
        return self.center.size

    def loss(self, theta: np.ndarray) -> float:
        d = theta - self.center
        val = 0.5 * float(d @ (self.matrix @ d)) + self.offset
        if self.linear is not None:
            val += float(self.linear @ d)
        return val

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        g = self.matrix @ (theta - self.center)
        if self.linear is not None:
            g = g + self.linear
        return g

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "matrix": self.matrix.tolist(),
            "center": self.center.tolist(),
            "offset": self.offset,
        }
        if self.linear is not None:
            out["linear"] = self.linear.tolist()
        return out

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "QuadraticObjective":
        return cls(
            matrix=np.asarray(raw["matrix"], dtype=float),
            center=np.asarray(raw["center"], dtype=float),
            offset=float(raw.get("offset", 0.0)),
            linear=None if raw.get("linear") is None else np.asarray(raw["linear"], dtype=float),
        )


def sim_loss(domain: QuadraticObjective, state: np.ndarray) -> float:
    """Analytic loss of one objective at a parameter vector."""
    state = np.asarray(state, dtype=float)
    if state.shape != (domain.dim,):
        raise ValueError(f"state shape {state.shape} does not match objective dim {domain.dim}")
    return domain.loss(state)


class Adam:
    """Standard Adam with bias correction; state is snapshot-able."""

    def __init__(self, dim: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def direction(self, grad: np.ndarray) -> np.ndarray:
        """Direction of the step that `step(grad)` would take, without mutating.

        Bias-corrected first moment divided by the root of the bias-corrected
        second moment (plus eps); the actual update is -lr * direction.
        """
        t1 = self.t + 1
        m1 = self.beta1 * self.m + (1.0 - self.beta1) * grad
        v1 = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = m1 / (1.0 - self.beta1 ** t1)
        vhat = v1 / (1.0 - self.beta2 ** t1)
        return mhat / (np.sqrt(vhat) + self.eps)

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def get_state(self) -> dict[str, Any]:
        return {"m": self.m.copy(), "v": self.v.copy(), "t": self.t}

    def set_state(self, state: Mapping[str, Any]) -> None:
        self.m = state["m"].copy()
        self.v = state["v"].copy()
        self.t = state["t"]


class Sgd:
    """Plain gradient step; linear in the gradient, used by linear-dynamics mode."""

    def __init__(self, dim: int, lr: float):
        self.lr = lr
        self.t = 0

    def direction(self, grad: np.ndarray) -> np.ndarray:
        return grad

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        return theta - self.lr * grad

    def get_state(self) -> dict[str, Any]:
        return {"t": self.t}

    def set_state(self, state: Mapping[str, Any]) -> None:
        self.t = state["t"]


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    dim: int = 16
    dataset_objectives: tuple[QuadraticObjective, ...] = ()
    domain_objectives: tuple[QuadraticObjective, ...] = ()
    learning_rate: float = 0.01
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_epsilon: float = 1e-8
    gradient_noise: float = 0.0
    eval_noise: float = 0.0
    accuracy_quantum: int = 20
    # per-domain parameters; ignored for loss-metric domains
    accuracy_scales: tuple[float, ...] = ()
    accuracy_thresholds: tuple[float, ...] = ()
    mode: str = "deterministic"
    optimizer: str = "adam"
    max_checkpoints: int = 64
    seed: int = 0

    def validate(self) -> None:
        if self.mode not in ("deterministic", "stochastic"):
            raise ScenarioError(f"mode must be deterministic|stochastic, got {self.mode!r}",
                                "simulator.mode")
        if self.optimizer not in ("adam", "sgd"):
            raise ScenarioError(f"optimizer must be adam|sgd, got {self.optimizer!r}",
                                "simulator.optimizer")
        if self.mode == "deterministic" and (self.gradient_noise != 0 or self.eval_noise != 0):
            raise ScenarioError("deterministic mode requires zero gradient/eval noise",
                                "simulator.mode")
        if self.learning_rate <= 0:
            raise ScenarioError("learning_rate must be positive", "simulator.learning_rate")
        b1, b2 = self.adam_betas
        if not (0.0 < b1 < 1.0 and 0.0 < b2 < 1.0):
            raise ScenarioError("adam_betas must lie in (0, 1)", "simulator.adam_betas")
        if self.accuracy_quantum < 1:
            raise ScenarioError("accuracy_quantum must be positive", "simulator.accuracy_quantum")
        for obj in (*self.dataset_objectives, *self.domain_objectives):
            if obj.dim != self.dim:
                raise ScenarioError("objective dimension mismatch", "simulator")

    def to_dict(self) -> dict[str, Any]:
        return {
            "dim": self.dim,
            "dataset_objectives": [o.to_dict() for o in self.dataset_objectives],
            "domain_objectives": [o.to_dict() for o in self.domain_objectives],
            "learning_rate": self.learning_rate,
            "adam_betas": list(self.adam_betas),
            "adam_epsilon": self.adam_epsilon,
            "gradient_noise": self.gradient_noise,
            "eval_noise": self.eval_noise,
            "accuracy_quantum": self.accuracy_quantum,
            "accuracy_scales": list(self.accuracy_scales),
            "accuracy_thresholds": list(self.accuracy_thresholds),
            "mode": self.mode,
            "optimizer": self.optimizer,
            "max_checkpoints": self.max_checkpoints,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "SimConfig":
        cfg = cls(
            dim=int(raw.get("dim", 16)),
            dataset_objectives=tuple(
                QuadraticObjective.from_dict(o) for o in raw.get("dataset_objectives", [])
            ),
            domain_objectives=tuple(
                QuadraticObjective.from_dict(o) for o in raw.get("domain_objectives", [])
            ),
            learning_rate=float(raw.get("learning_rate", 0.01)),
            adam_betas=tuple(raw.get("adam_betas", (0.9, 0.999))),  # type: ignore[arg-type]
            adam_epsilon=float(raw.get("adam_epsilon", 1e-8)),
            gradient_noise=float(raw.get("gradient_noise", 0.0)),
            eval_noise=float(raw.get("eval_noise", 0.0)),
            accuracy_quantum=int(raw.get("accuracy_quantum", 20)),
            accuracy_scales=tuple(raw.get("accuracy_scales", ())),
            accuracy_thresholds=tuple(raw.get("accuracy_thresholds", ())),
            mode=raw.get("mode", "deterministic"),
            optimizer=raw.get("optimizer", "adam"),
            max_checkpoints=int(raw.get("max_checkpoints", 64)),
            seed=int(raw.get("seed", 0)),
        )
        cfg.validate()
        return cfg


# ---------------------------------------------------------------------------
# Trainer
# ---------------------------------------------------------------------------


class SimTrainer(Trainer):
    """Trainer-interface implementation over the synthetic objectives.

    One mutating session; evaluations are analytic given the current state.
    Checkpoints capture parameters, optimizer state, dataset cursors, and all
    RNG streams, so a restore rewinds the session completely (probes leave no
    trace, including in the random streams).
    """

    def __init__(self, scenario: Scenario, config: SimConfig | None = None):
        if config is None:
            if scenario.simulator is None:
                raise ScenarioError("scenario has no embedded simulator config", "simulator")
            config = SimConfig.from_dict(scenario.simulator)
        config.validate()
        if len(config.dataset_objectives) != scenario.n_datasets:
            raise ScenarioError("one dataset objective per dataset required", "simulator")
        if len(config.domain_objectives) != scenario.m_domains:
            raise ScenarioError("one domain objective per eval domain required", "simulator")
        for i, dom in enumerate(scenario.eval_domains):
            if dom.metric == "accuracy":
                if i >= len(config.accuracy_scales) or i >= len(config.accuracy_thresholds):
                    raise ScenarioError(
                        f"accuracy domain {dom.id!r} needs accuracy_scales/thresholds[{i}]",
                        "simulator",
                    )
        self.scenario = scenario
        self.config = config
        self._dataset_index = {d.id: i for i, d in enumerate(scenario.datasets)}
        self._domain_index = {d.id: i for i, d in enumerate(scenario.eval_domains)}

        self._theta = np.zeros(config.dim)
        if config.optimizer == "adam":
            b1, b2 = config.adam_betas
            self._opt: Adam | Sgd = Adam(config.dim, config.learning_rate, b1, b2,
                                         config.adam_epsilon)
        else:
            self._opt = Sgd(config.dim, config.learning_rate)
        self._step = 0

        seeds = np.random.SeedSequence(config.seed).spawn(4 + scenario.n_datasets)
        self._train_rng = np.random.default_rng(seeds[0])
        self._eval_rng = np.random.default_rng(seeds[1])
        self._test_rng = np.random.default_rng(seeds[2])
        self._grad_rng = np.random.default_rng(seeds[3])
        # finite-budget datasets cycle a fixed pool of unit-normal batch draws
        self._pools: list[np.ndarray | None] = []
        self._cursors: list[int] = []
        for i, spec in enumerate(scenario.datasets):
            if spec.sample_budget is None:
                self._pools.append(None)
            else:
                n_batches = max(1, spec.sample_budget // scenario.batch_size)
                pool_rng = np.random.default_rng(seeds[4 + i])
                self._pools.append(pool_rng.standard_normal((n_batches, config.dim)))
            self._cursors.append(0)

        self._checkpoints: dict[str, dict[str, Any]] = {}
        self._next_token = 0

    # -- registry ------------------------------------------------------------

    @property
    def dataset_ids(self) -> tuple[str, ...]:
        return self.scenario.dataset_ids

    @property
    def domain_ids(self) -> tuple[str, ...]:
        return self.scenario.domain_ids

    @property
    def current_step(self) -> int:
        return self._step

    @property
    def supports_gradients(self) -> bool:
        return True

    @property
    def theta(self) -> np.ndarray:
        return self._theta.copy()

    # -- checkpointing -------------------------------------------------------

    def _capture(self) -> dict[str, Any]:
        return {
            "theta": self._theta.copy(),
            "opt": self._opt.get_state(),
            "step": self._step,
            "cursors": list(self._cursors),
            "train_rng": copy.deepcopy(self._train_rng.bit_generator.state),
            "eval_rng": copy.deepcopy(self._eval_rng.bit_generator.state),
            "test_rng": copy.deepcopy(self._test_rng.bit_generator.state),
            "grad_rng": copy.deepcopy(self._grad_rng.bit_generator.state),
        }

    def _apply(self, state: Mapping[str, Any]) -> None:
        self._theta = state["theta"].copy()
        self._opt.set_state(state["opt"])
        self._step = state["step"]
        self._cursors = list(state["cursors"])
        self._train_rng.bit_generator.state = copy.deepcopy(state["train_rng"])
        self._eval_rng.bit_generator.state = copy.deepcopy(state["eval_rng"])
        self._test_rng.bit_generator.state = copy.deepcopy(state["test_rng"])
        self._grad_rng.bit_generator.state = copy.deepcopy(state["grad_rng"])

    def snapshot(self) -> CheckpointHandle:
        if len(self._checkpoints) >= self.config.max_checkpoints:
            raise CheckpointCapacityError(
                f"cannot hold more than {self.config.max_checkpoints} checkpoints"
            )
        token = f"sim-ckpt-{self._next_token}"
        self._next_token += 1
        self._checkpoints[token] = self._capture()
        return CheckpointHandle(token)

    def restore(self, handle: CheckpointHandle) -> None:
        state = self._checkpoints.get(handle.token)
        if state is None:
            raise UnknownHandleError(f"unknown checkpoint token {handle.token!r}")
        self._apply(state)

    def release(self, handle: CheckpointHandle) -> None:
        if self._checkpoints.pop(handle.token, None) is None:
            raise UnknownHandleError(f"unknown checkpoint token {handle.token!r}")

    def state_fingerprint(self) -> dict[str, Any]:
        """Full state dump for exact-equality assertions in tests."""
        return self._capture()

    # -- training ------------------------------------------------------------

    def _batch_gradient(self, j: int) -> np.ndarray:
        """Stochastic gradient of dataset j at the current state (one batch)."""
        grad = self.config.dataset_objectives[j].gradient(self._theta)
        if self.config.gradient_noise > 0:
            pool = self._pools[j]
            if pool is None:
                noise = self._train_rng.standard_normal(self.config.dim)
            else:
                noise = pool[self._cursors[j] % pool.shape[0]]
                self._cursors[j] += 1
            grad = grad + self.config.gradient_noise * noise
        return grad

    def train_steps(self, plan: TrainPlan | str | Sequence[float], steps: int) -> None:
        if steps < 1:
            raise ValueError("steps must be >= 1")
        plan = TrainPlan.coerce(plan)
        plan.validate(self.dataset_ids)
        weights = None if plan.weights is None else np.asarray(plan.weights, dtype=float)
        single = None if plan.dataset is None else self._dataset_index[plan.dataset]
        deterministic = self.config.mode == "deterministic"
        for _ in range(steps):
            if single is not None:
                grad = (self.config.dataset_objectives[single].gradient(self._theta)
                        if deterministic else self._batch_gradient(single))
            elif deterministic:
                grad = np.zeros(self.config.dim)
                for j, wj in enumerate(weights):
                    if wj != 0.0:
                        grad += wj * self.config.dataset_objectives[j].gradient(self._theta)
            else:
                j = int(self._train_rng.choice(len(weights), p=weights))
                grad = self._batch_gradient(j)
            self._theta = self._opt.step(self._theta, grad)
            self._step += 1

    # -- evaluation ----------------------------------------------------------

    def _raw_value(self, i: int, batches: int, rng: np.random.Generator | None) -> float:
        loss = self.config.domain_objectives[i].loss(self._theta)
        if rng is not None and self.config.eval_noise > 0:
            loss += self.config.eval_noise / math.sqrt(batches) * rng.standard_normal()
        spec = self.scenario.eval_domains[i]
        if spec.metric == "accuracy":
            return quantized_accuracy(
                loss,
                self.config.accuracy_thresholds[i],
                self.config.accuracy_scales[i],
                self.config.accuracy_quantum,
            )
        return loss

    def evaluate(self, request: EvalRequest) -> EvalResult:
        rng = None
        if self.config.mode == "stochastic":
            rng = self._eval_rng if request.split == "eval" else self._test_rng
        values: dict[str, float] = {}
        for domain_id in request.domain_ids:
            i = self._domain_index.get(domain_id)
            if i is None:
                raise UnknownDomainError(f"unknown evaluation domain {domain_id!r}")
            values[domain_id] = self._raw_value(i, request.batches, rng)
        return EvalResult(values=values, step=self._step)

    def domain_loss(self, domain_id: str) -> float:
        """Exact underlying loss (pre-accuracy-mapping), for tests."""
        return self.config.domain_objectives[self._domain_index[domain_id]].loss(self._theta)

    # -- gradients -----------------------------------------------------------

    def gradient_report(
        self, domain_ids: Sequence[str], dataset_ids: Sequence[str], batches: int
    ) -> GradientReport:
        if batches < 1:
            raise ValueError("batches must be >= 1")
        noise = 0.0
        if self.config.mode == "stochastic" and self.config.gradient_noise > 0:
            noise = self.config.gradient_noise / math.sqrt(batches)
        eval_gradients: dict[str, np.ndarray] = {}
        for domain_id in domain_ids:
            i = self._domain_index.get(domain_id)
            if i is None:
                raise UnknownDomainError(f"unknown evaluation domain {domain_id!r}")
            if self.scenario.eval_domains[i].metric == "accuracy":
                # piecewise-constant metric: zero gradient almost everywhere
                grad = np.zeros(self.config.dim)
            else:
                grad = self.config.domain_objectives[i].gradient(self._theta)
                if noise:
                    grad = grad + noise * self._grad_rng.standard_normal(self.config.dim)
            eval_gradients[domain_id] = grad
        directions: dict[str, np.ndarray] = {}
        for dataset_id in dataset_ids:
            j = self._dataset_index.get(dataset_id)
            if j is None:
                raise UnknownDomainError(f"unknown dataset {dataset_id!r}")
            grad = self.config.dataset_objectives[j].gradient(self._theta)
            if noise:
                grad = grad + noise * self._grad_rng.standard_normal(self.config.dim)
            directions[dataset_id] = self._opt.direction(grad)
        return GradientReport(
            eval_gradients=eval_gradients,
            dataset_directions=directions,
            learning_rate=self.config.learning_rate,
        )


# ---------------------------------------------------------------------------
# Random scenario generation
# ---------------------------------------------------------------------------


def random_spd_matrix(dim: int, rng: np.random.Generator, delta: float = 0.1,
                      scale: float = 1.0, isotropy: float = 0.0) -> np.ndarray:
    """(G^T G + delta*I)/dim with G standard normal, blended toward the
    identity by ``isotropy`` and multiplied by a global curvature scale.

    The 1/dim normalization keeps typical eigenvalues O(1); higher isotropy
    makes gradients point closer to the bowl center.
    """
    g = rng.standard_normal((dim, dim))
    a = (g.T @ g + delta * np.eye(dim)) / dim
    if isotropy > 0.0:
        a = (1.0 - isotropy) * a + isotropy * np.eye(dim)
    return a * scale


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def generate_scenario(
    n_datasets: int,
    m_domains: int,
    seed: int,
    *,
    n_target_datasets: int = 1,
    total_steps: int = 2048,
    batch_size: int = 8,
    eval_every: int = 64,
    eval_batches_full: int = 200,
    eval_batches_reduced: int = 50,
    dim: int = 16,
    mode: str = "stochastic",
    optimizer: str = "adam",
    linear_dynamics: bool = False,
    learning_rate: float | None = None,
    gradient_noise: float = 0.02,
    eval_noise: float = 0.01,
    accuracy_constraints: int = 0,
    target_radius: float = 2.0,
    regularizer_radius: float = 0.6,
    constraint_jitter: float = 0.2,
    transfer_jitter: float = 0.3,
    curvature_scale: float = 1.0,
    isotropy: float = 0.7,
    conflict: bool = False,
) -> dict[str, Any]:
    """Build a seeded scenario dict (with embedded simulator config).

    Geometry: target datasets sit at ``target_radius`` from the start state
    with their evaluation domains nearby (transfer); the first non-target
    dataset is a general-corpus regularizer at ``regularizer_radius`` and the
    constrained domains cluster around it, so drifting toward targets raises
    constraint losses while mixing in the regularizer protects them - which
    is what makes adaptive mixing beat any fixed allocation. ``conflict=True``
    instead pins constraints in opposing pairs tight around the start state so
    no mixture can learn without violating one, for graceful-degradation
    experiments.
    """
    if n_target_datasets < 1 or n_target_datasets > n_datasets:
        raise ValueError("need 1 <= n_target_datasets <= n_datasets")
    n_target_domains = n_target_datasets
    n_constraints = m_domains - n_target_domains
    if n_constraints < 1:
        raise ValueError("need at least one constrained domain")
    if accuracy_constraints > n_constraints:
        raise ValueError("more accuracy constraints than constrained domains")
    rng = np.random.default_rng(seed)
    if mode == "deterministic":
        gradient_noise = 0.0
        eval_noise = 0.0
    if linear_dynamics:
        optimizer = "sgd"
    if conflict:
        # opposing constraints leave no feasible direction; the regularizer
        # hugs the start state so holding position stays expressible
        regularizer_radius = 0.02
    if learning_rate is None:
        learning_rate = 0.002 if linear_dynamics else 0.01

    datasets: list[DatasetSpec] = []
    dataset_objs: list[QuadraticObjective] = []
    target_centers: list[np.ndarray] = []
    zero = np.zeros(dim)
    zero_m = np.zeros((dim, dim))

    for k in range(n_target_datasets):
        center = target_radius * _unit(rng, dim)
        target_centers.append(center)
        budget = int(rng.integers(500, 4000))
        datasets.append(DatasetSpec(id=f"tgt{k}", role="target", sample_budget=budget))
        if linear_dynamics:
            dataset_objs.append(QuadraticObjective(zero_m, zero, 0.0,
                                                   linear=-center / target_radius))
        else:
            dataset_objs.append(QuadraticObjective(
                random_spd_matrix(dim, rng, scale=curvature_scale, isotropy=isotropy),
                center))
    regularizer_center = regularizer_radius * _unit(rng, dim)
    for k in range(n_datasets - n_target_datasets):
        if k == 0:
            center = regularizer_center
        else:
            center = (0.6 * target_radius) * _unit(rng, dim)
        datasets.append(DatasetSpec(id=f"aux{k}", role="non_target"))
        if linear_dynamics:
            direction = _unit(rng, dim) if k else zero.copy()
            dataset_objs.append(QuadraticObjective(zero_m, zero, 0.0, linear=0.3 * direction))
        else:
            dataset_objs.append(QuadraticObjective(
                random_spd_matrix(dim, rng, scale=curvature_scale, isotropy=isotropy),
                center))

    domains: list[EvalDomainSpec] = []
    domain_objs: list[QuadraticObjective] = []
    accuracy_scales = [1.0] * m_domains
    accuracy_thresholds = [0.0] * m_domains

    for k in range(n_target_domains):
        center = target_centers[k] + transfer_jitter * rng.standard_normal(dim) / math.sqrt(dim)
        domains.append(EvalDomainSpec(id=f"eval_tgt{k}", role="target", metric="loss"))
        if linear_dynamics:
            domain_objs.append(QuadraticObjective(zero_m, zero, 2.0,
                                                  linear=-target_centers[k] / target_radius))
        else:
            domain_objs.append(QuadraticObjective(
                random_spd_matrix(dim, rng, scale=curvature_scale, isotropy=isotropy),
                center, offset=0.5))

    conflict_axis = _unit(rng, dim)
    for k in range(n_constraints):
        if conflict:
            sign = 1.0 if k % 2 == 0 else -1.0
            center = 0.08 * sign * conflict_axis
        else:
            scale = rng.uniform(0.7, 1.1)
            center = (scale * regularizer_center
                      + constraint_jitter * rng.standard_normal(dim) / math.sqrt(dim))
        metric = "accuracy" if k >= n_constraints - accuracy_constraints else "loss"
        domains.append(EvalDomainSpec(id=f"cons{k}", role="constrained", metric=metric))
        if linear_dynamics:
            obj = QuadraticObjective(zero_m, zero, 2.0, linear=_unit(rng, dim))
        else:
            obj = QuadraticObjective(
                random_spd_matrix(dim, rng, scale=curvature_scale, isotropy=isotropy),
                center, offset=0.5)
        domain_objs.append(obj)
        if metric == "accuracy":
            i = n_target_domains + k
            base_loss = obj.loss(zero)
            accuracy_scales[i] = 0.5
            # start mid-plateau of the quantized logistic so small drifts are free
            accuracy_thresholds[i] = base_loss + 0.1 * accuracy_scales[i]

    config = SimConfig(
        dim=dim,
        dataset_objectives=tuple(dataset_objs),
        domain_objectives=tuple(domain_objs),
        learning_rate=learning_rate,
        gradient_noise=gradient_noise,
        eval_noise=eval_noise,
        accuracy_scales=tuple(accuracy_scales),
        accuracy_thresholds=tuple(accuracy_thresholds),
        mode=mode,
        optimizer=optimizer,
        seed=seed,
    )
    scenario = Scenario(
        datasets=tuple(datasets),
        eval_domains=tuple(domains),
        total_steps=total_steps,
        batch_size=batch_size,
        eval_every=eval_every,
        eval_batches_full=eval_batches_full,
        eval_batches_reduced=eval_batches_reduced,
        seed=seed,
        simulator=config.to_dict(),
    )
    scenario.validate()
    config.validate()
    return scenario.to_dict()
