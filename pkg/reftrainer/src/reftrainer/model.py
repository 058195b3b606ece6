"""Multinomial logistic model over synthetic feature data.

Each dataset and evaluation domain draws labeled samples (x, y) from a
ground-truth logistic model whose weight matrix is a blend of shared
component matrices; overlapping blends produce genuine cross-dataset
transfer, disjoint ones interference. Gradients are exact and cheap, so the
whole training loop is checkable against finite differences.

The trainable model is a single K x F weight matrix trained with Adam on the
mean cross-entropy of sampled batches. Snapshots capture parameters,
optimizer moments, and dataset cursors, so a restore rewinds the session
exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_and_grad(weights: np.ndarray, x: np.ndarray, y: np.ndarray
                           ) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of labels y under softmax(W x), and dLoss/dW."""
    logits = x @ weights.T                      # (B, K)
    logp = logits - logits.max(axis=1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
    n = len(y)
    loss = -float(logp[np.arange(n), y].mean())
    probs = np.exp(logp)
    probs[np.arange(n), y] -= 1.0
    grad = probs.T @ x / n                      # (K, F)
    return loss, grad


def cross_entropy(weights: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    return cross_entropy_and_grad(weights, x, y)[0]


class Adam:
    """Standard Adam with bias correction over a weight matrix."""

    def __init__(self, shape: tuple[int, int], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def direction(self, grad: np.ndarray) -> np.ndarray:
        """Peek the update direction a step on `grad` would take."""
        t1 = self.t + 1
        m1 = self.beta1 * self.m + (1.0 - self.beta1) * grad
        v1 = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = m1 / (1.0 - self.beta1 ** t1)
        vhat = v1 / (1.0 - self.beta2 ** t1)
        return mhat / (np.sqrt(vhat) + self.eps)

    def step(self, weights: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        return weights - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def get_state(self) -> dict[str, Any]:
        return {"m": self.m.copy(), "v": self.v.copy(), "t": self.t}

    def set_state(self, state: Mapping[str, Any]) -> None:
        self.m = state["m"].copy()
        self.v = state["v"].copy()
        self.t = state["t"]


@dataclass
class EntitySpec:
    id: str
    components: list[float]     # blend over shared ground-truth components
    n_samples: int = 0          # datasets: pool size (cycled)
    n_eval: int = 0             # domains: held-out split sizes
    n_test: int = 0
    metric: str = "loss"


@dataclass
class RefConfig:
    feature_dim: int = 12
    classes: int = 5
    components: int = 2
    temperature: float = 1.0
    learning_rate: float = 0.05
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_epsilon: float = 1e-8
    batch_size: int = 16
    seed: int = 0
    datasets: list[EntitySpec] = field(default_factory=list)
    domains: list[EntitySpec] = field(default_factory=list)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "RefConfig":
        def entities(key, defaults):
            out = []
            for e in raw.get(key, []):
                out.append(EntitySpec(
                    id=e["id"],
                    components=[float(c) for c in e["components"]],
                    n_samples=int(e.get("n_samples", defaults.get("n_samples", 0))),
                    n_eval=int(e.get("n_eval", defaults.get("n_eval", 0))),
                    n_test=int(e.get("n_test", defaults.get("n_test", 0))),
                    metric=e.get("metric", "loss"),
                ))
            return out
        return cls(
            feature_dim=int(raw.get("feature_dim", 12)),
            classes=int(raw.get("classes", 5)),
            components=int(raw.get("components", 2)),
            temperature=float(raw.get("temperature", 1.0)),
            learning_rate=float(raw.get("learning_rate", 0.05)),
            adam_betas=tuple(raw.get("adam_betas", (0.9, 0.999))),  # type: ignore[arg-type]
            adam_epsilon=float(raw.get("adam_epsilon", 1e-8)),
            batch_size=int(raw.get("batch_size", 16)),
            seed=int(raw.get("seed", 0)),
            datasets=entities("datasets", {"n_samples": 2048}),
            domains=entities("domains", {"n_eval": 512, "n_test": 512}),
        )

    @classmethod
    def load(cls, path: str | Path) -> "RefConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class RefTrainer:
    """The trainable session: deterministic given (config seed, call sequence)."""

    def __init__(self, config: RefConfig):
        self.config = config
        k, f = config.classes, config.feature_dim
        root = np.random.SeedSequence(config.seed)
        comp_seed, data_seed = root.spawn(2)
        comp_rng = np.random.default_rng(comp_seed)
        self.component_weights = comp_rng.standard_normal((config.components, k, f))

        self._dataset_index = {d.id: j for j, d in enumerate(config.datasets)}
        self._domain_index = {d.id: i for i, d in enumerate(config.domains)}
        data_seeds = data_seed.spawn(len(config.datasets) + len(config.domains))
        self._dataset_pools = []
        for spec, seed in zip(config.datasets, data_seeds):
            rng = np.random.default_rng(seed)
            self._dataset_pools.append(self._sample(spec, max(spec.n_samples, 1), rng))
        self._domain_pools = []
        for spec, seed in zip(config.domains, data_seeds[len(config.datasets):]):
            rng = np.random.default_rng(seed)
            self._domain_pools.append({
                "eval": self._sample(spec, max(spec.n_eval, 1), rng),
                "test": self._sample(spec, max(spec.n_test, 1), rng),
            })

        self.weights = np.zeros((k, f))
        b1, b2 = config.adam_betas
        self.opt = Adam((k, f), config.learning_rate, b1, b2, config.adam_epsilon)
        self.step_count = 0
        self._cursors = [0] * len(config.datasets)
        self._checkpoints: dict[str, dict[str, Any]] = {}
        self._next_token = 0

    def _sample(self, spec: EntitySpec, n: int, rng: np.random.Generator
                ) -> tuple[np.ndarray, np.ndarray]:
        blend = np.asarray(spec.components, dtype=float)
        if blend.shape != (self.config.components,):
            raise ValueError(f"{spec.id}: expected {self.config.components} components")
        w_true = np.tensordot(blend, self.component_weights, axes=1)
        x = rng.standard_normal((n, self.config.feature_dim))
        probs = softmax(x @ w_true.T / self.config.temperature)
        cum = probs.cumsum(axis=1)
        y = (rng.random((n, 1)) < cum).argmax(axis=1)
        return x, y

    # -- checkpointing -------------------------------------------------------

    def snapshot(self) -> str:
        token = f"ref-ckpt-{self._next_token}"
        self._next_token += 1
        self._checkpoints[token] = {
            "weights": self.weights.copy(),
            "opt": self.opt.get_state(),
            "step": self.step_count,
            "cursors": list(self._cursors),
        }
        return token

    def restore(self, token: str) -> None:
        state = self._checkpoints.get(token)
        if state is None:
            raise KeyError(f"unknown checkpoint token {token!r}")
        self.weights = state["weights"].copy()
        self.opt.set_state(state["opt"])
        self.step_count = state["step"]
        self._cursors = list(state["cursors"])

    def release(self, token: str) -> None:
        if self._checkpoints.pop(token, None) is None:
            raise KeyError(f"unknown checkpoint token {token!r}")

    # -- training ------------------------------------------------------------

    def _next_batch(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        x, y = self._dataset_pools[j]
        n = len(y)
        b = self.config.batch_size
        idx = (self._cursors[j] + np.arange(b)) % n
        self._cursors[j] += b
        return x[idx], y[idx]

    def train(self, steps: int, dataset: str | None = None,
              mixture: Sequence[float] | None = None, seed: int = 0) -> int:
        if steps < 1:
            raise ValueError("steps must be >= 1")
        if (dataset is None) == (mixture is None):
            raise ValueError("exactly one of dataset/mixture required")
        if dataset is not None:
            if dataset not in self._dataset_index:
                raise KeyError(f"unknown dataset {dataset!r}")
            picks = [self._dataset_index[dataset]] * steps
        else:
            w = np.asarray(mixture, dtype=float)
            if w.shape != (len(self.config.datasets),):
                raise ValueError("mixture length mismatch")
            if np.any(w < -1e-12) or abs(float(w.sum()) - 1.0) > 1e-9:
                raise ValueError("mixture must be a point on the simplex")
            rng = np.random.default_rng(seed)
            picks = rng.choice(len(w), size=steps, p=np.maximum(w, 0.0) / w.sum())
        for j in picks:
            x, y = self._next_batch(int(j))
            _, grad = cross_entropy_and_grad(self.weights, x, y)
            self.weights = self.opt.step(self.weights, grad)
            self.step_count += 1
        return self.step_count

    # -- evaluation ----------------------------------------------------------

    def _split_subset(self, i: int, batches: int, split: str
                      ) -> tuple[np.ndarray, np.ndarray]:
        pools = self._domain_pools[i]
        if split not in pools:
            raise ValueError(f"unknown split {split!r}")
        x, y = pools[split]
        n = min(len(y), max(1, batches) * self.config.batch_size)
        return x[:n], y[:n]

    def evaluate(self, domain_ids: Sequence[str], batches: int, split: str
                 ) -> dict[str, float]:
        values = {}
        for domain_id in domain_ids:
            i = self._domain_index.get(domain_id)
            if i is None:
                raise KeyError(f"unknown evaluation domain {domain_id!r}")
            x, y = self._split_subset(i, batches, split)
            values[domain_id] = cross_entropy(self.weights, x, y)
        return values

    # -- gradients -----------------------------------------------------------

    def gradient_report(self, domain_ids: Sequence[str], dataset_ids: Sequence[str],
                        batches: int) -> dict[str, Any]:
        eval_gradients = {}
        for domain_id in domain_ids:
            i = self._domain_index.get(domain_id)
            if i is None:
                raise KeyError(f"unknown evaluation domain {domain_id!r}")
            x, y = self._split_subset(i, batches, "eval")
            _, grad = cross_entropy_and_grad(self.weights, x, y)
            eval_gradients[domain_id] = grad.ravel()
        directions = {}
        for dataset_id in dataset_ids:
            j = self._dataset_index.get(dataset_id)
            if j is None:
                raise KeyError(f"unknown dataset {dataset_id!r}")
            x, y = self._dataset_pools[j]
            n = min(len(y), max(1, batches) * self.config.batch_size)
            _, grad = cross_entropy_and_grad(self.weights, x[:n], y[:n])
            directions[dataset_id] = self.opt.direction(grad).ravel()
        return {
            "eval_gradients": eval_gradients,
            "dataset_directions": directions,
            "learning_rate": self.config.learning_rate,
        }
