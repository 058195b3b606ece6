"""Penalized constrained mixture solve over the probability simplex.

The hard-constrained mixture problem (minimize summed target slopes subject
to predicted constraint values staying at or below their references) is
relaxed into a squared-hinge penalty

    minimize_w  target(w) + lambda * sum_i max(0, L_hat_i(w) - ref_i + eps)^2

over the simplex, so an infeasible instance still yields a least-violating
mixture. The solve runs over a (lambda, eps) grid - by default 15 log-spaced
penalty strengths on [1, 5000] times 3 safety margins on [0, 0.1], i.e. 45
candidates - and the selection rule picks the feasible candidate with the
lowest target objective, falling back to the smallest maximum violation when
none is feasible. eps shapes the penalty only; feasibility of a candidate is
always judged against the plain references.

Both predictors yield models affine in w, so every candidate objective is
convex; projected gradient descent with backtracking is sufficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .predictors import AffinePredictionModel

# predicted violations at or below this are treated as exactly zero
FEASIBILITY_TOL = 1e-9


class SolverError(ValueError):
    pass


_IDX_CACHE: dict[int, np.ndarray] = {}


def _simplex_projection(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum w = 1} (sort-based)."""
    n = v.size
    idx = _IDX_CACHE.get(n)
    if idx is None:
        idx = _IDX_CACHE.setdefault(n, np.arange(1.0, n + 1.0))
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = int(np.nonzero(u - css / idx > 0)[0][-1])
    tau = css[rho] / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def _simplex_projection_rows(v: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean projection onto the simplex for a (B, N) batch."""
    b, n = v.shape
    idx = _IDX_CACHE.get(n)
    if idx is None:
        idx = _IDX_CACHE.setdefault(n, np.arange(1.0, n + 1.0))
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    cond = u - css / idx > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = css[np.arange(b), rho] / (rho + 1.0)
    return np.maximum(v - tau[:, None], 0.0)


@dataclass(frozen=True)
class MixtureWeights:
    """Point on the N-simplex used as per-dataset sampling proportions."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(x) for x in self.values)
        object.__setattr__(self, "values", vals)
        if any(x < -1e-12 for x in vals):
            raise SolverError("mixture weights must be nonnegative")
        if abs(sum(vals) - 1.0) > 1e-9:
            raise SolverError(f"mixture weights must sum to 1, got {sum(vals)!r}")

    @property
    def n(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    @classmethod
    def uniform(cls, n: int) -> "MixtureWeights":
        return cls(tuple([1.0 / n] * n))

    @classmethod
    def one_hot(cls, n: int, j: int) -> "MixtureWeights":
        v = [0.0] * n
        v[j] = 1.0
        return cls(tuple(v))


def project_to_simplex(vector: Sequence[float]) -> MixtureWeights:
    v = np.asarray(vector, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise SolverError("expected a 1-D vector")
    if not np.all(np.isfinite(v)):
        raise SolverError("vector entries must be finite")
    w = _simplex_projection(v)
    w = np.maximum(w, 0.0)
    w /= w.sum()
    return MixtureWeights(tuple(float(x) for x in w))


def default_grid() -> "SolverGrid":
    return SolverGrid(
        lambdas=tuple(float(x) for x in np.geomspace(1.0, 5000.0, 15)),
        epsilons=(0.0, 0.05, 0.1),
    )


@dataclass(frozen=True)
class SolverGrid:
    lambdas: tuple[float, ...]
    epsilons: tuple[float, ...]

    def __post_init__(self):
        if not self.lambdas or not self.epsilons:
            raise SolverError("grid must be nonempty")
        if any(l <= 0 for l in self.lambdas):
            raise SolverError("lambdas must be strictly positive")
        if list(self.lambdas) != sorted(self.lambdas):
            raise SolverError("lambdas must be sorted ascending")
        if any(e < 0 for e in self.epsilons):
            raise SolverError("epsilons must be nonnegative")

    @property
    def size(self) -> int:
        return len(self.lambdas) * len(self.epsilons)


@dataclass(frozen=True)
class SolveOutcome:
    weights: MixtureWeights
    feasible: bool
    target_objective: float
    max_violation: float
    candidate: tuple[float, float]  # (lambda, epsilon) that produced it

    def to_dict(self) -> dict:
        return {
            "weights": list(self.weights.values),
            "feasible": self.feasible,
            "target_objective": self.target_objective,
            "max_violation": self.max_violation,
            "lambda": self.candidate[0],
            "epsilon": self.candidate[1],
        }


def _constraint_system(
    model: AffinePredictionModel, references: Mapping[str, float], epsilon: float
) -> tuple[np.ndarray, np.ndarray]:
    """Rows A, offsets b with hinge arguments A @ w + b per constrained domain."""
    rows, offs = [], []
    for domain_id, ref in references.items():
        if domain_id not in model.domain_ids:
            raise SolverError(f"reference for unknown domain {domain_id!r}")
        i = model.domain_ids.index(domain_id)
        if not (np.all(np.isfinite(model.effect[i])) and math.isfinite(model.anchor[i])
                and math.isfinite(ref)):
            raise SolverError(f"non-finite prediction for domain {domain_id!r}")
        rows.append(model.effect[i])
        offs.append(model.anchor[i] - ref + epsilon)
    if not rows:
        return np.zeros((0, model.effect.shape[1])), np.zeros(0)
    return np.asarray(rows), np.asarray(offs)


def _pgd_batch(c: np.ndarray, a: np.ndarray, b_rows: np.ndarray, lams: np.ndarray,
               w0: np.ndarray, max_iter: int = 500) -> np.ndarray:
    """Batched projected gradient descent with backtracking line search: row r
    minimizes c.w + lams[r] * sum relu(a w + b_rows[r])^2 over the simplex.

    Rows evolve independently (shared passes, per-row steps and stopping), so
    a batch of one is bit-identical to a scalar solve.
    """
    w = _simplex_projection_rows(np.array(w0, dtype=float))
    batch, _ = w.shape
    constrained = b_rows.shape[1] > 0
    lam_col = lams[:, None]

    def fvals(wm: np.ndarray) -> np.ndarray:
        out = wm @ c
        if constrained:
            r = wm @ a.T + b_rows
            np.maximum(r, 0.0, out=r)
            out = out + lams * np.einsum("ij,ij->i", r, r)
        return out

    f = fvals(w)
    lip = np.full(batch, float(np.linalg.norm(c)))
    if constrained:
        lip = lip + 2.0 * lams * float(np.linalg.norm(a, 2)) ** 2
    step = 1.0 / np.maximum(lip, 1e-12)
    active = np.ones(batch, dtype=bool)
    for _ in range(max_iter):
        if constrained:
            r = w @ a.T + b_rows
            np.maximum(r, 0.0, out=r)
            g = c + 2.0 * lam_col * (r @ a)
        else:
            g = np.broadcast_to(c, w.shape)
        accepted = ~active
        cand = w.copy()
        f_cand = f.copy()
        dn = np.zeros(batch)
        for _ in range(60):
            todo = ~accepted
            if not todo.any():
                break
            trial = _simplex_projection_rows(w - step[:, None] * g)
            d = trial - w
            dn_all = np.einsum("ij,ij->i", d, d)
            f_trial = fvals(trial)
            armijo = f_trial <= (f + np.einsum("ij,ij->i", g, d)
                                 + 0.5 * dn_all / step
                                 + 1e-15 * np.maximum(1.0, np.abs(f)))
            take = todo & (armijo | (dn_all <= 1e-26))
            cand[take] = trial[take]
            f_cand[take] = f_trial[take]
            dn[take] = dn_all[take]
            accepted |= take
            shrink = todo & ~take
            if not shrink.any():
                break
            step[shrink] *= 0.5
        active &= accepted  # rows with an exhausted line search are done
        moved = active & (dn > 1e-26)
        w[moved] = cand[moved]
        f[moved] = f_cand[moved]
        step[moved] *= 1.3
        active &= dn > 1e-20 * np.maximum(1.0, np.einsum("ij,ij->i", w, w))
        if not active.any():
            break
    return w


def _pgd(c: np.ndarray, a: np.ndarray, b: np.ndarray, lam: float,
         w0: np.ndarray, max_iter: int = 500) -> np.ndarray:
    b_rows = b[None, :] if b.size else np.zeros((1, 0))
    return _pgd_batch(c, a, b_rows, np.array([lam]), w0[None, :], max_iter)[0]


def solve_penalized(
    model: AffinePredictionModel,
    references: Mapping[str, float],
    lam: float,
    epsilon: float,
    *,
    max_iter: int = 500,
    start: Sequence[float] | None = None,
    extra_starts: Iterable[Sequence[float]] = (),
) -> MixtureWeights:
    """Approximate minimizer of the squared-hinge penalized objective.

    The model is affine in w, making the objective convex; a single start
    (uniform by default, or a warm ``start``) suffices. ``extra_starts``
    adds vertex or custom starts for callers that want the hedge.
    """
    n = model.effect.shape[1]
    if not np.all(np.isfinite(model.target_coeff)):
        raise SolverError("non-finite target objective coefficients")
    if n == 1:
        return MixtureWeights((1.0,))
    a, b = _constraint_system(model, references, epsilon)
    primary = np.full(n, 1.0 / n) if start is None else np.asarray(start, dtype=float)
    starts = [primary] + [np.asarray(s, dtype=float) for s in extra_starts]
    best_w, best_f = None, math.inf
    for w0 in starts:
        w = _pgd(model.target_coeff, a, b, lam, w0, max_iter=max_iter)
        r = np.maximum(a @ w + b, 0.0) if b.size else np.zeros(0)
        f = float(model.target_coeff @ w) + lam * float(r @ r)
        if f < best_f:
            best_w, best_f = w, f
    w = np.maximum(best_w, 0.0)
    w /= w.sum()
    return MixtureWeights(tuple(float(x) for x in w))


def classify(
    model: AffinePredictionModel,
    references: Mapping[str, float],
    weights: MixtureWeights,
    candidate: tuple[float, float],
) -> SolveOutcome:
    """Judge a candidate against the plain (eps-free) predicted constraints."""
    w = weights.as_array()
    predicted = model.anchor + model.effect @ w
    max_violation = 0.0
    for domain_id, ref in references.items():
        i = model.domain_ids.index(domain_id)
        violation = float(predicted[i] - ref)
        if violation > max_violation:
            max_violation = violation
    if max_violation <= FEASIBILITY_TOL:
        max_violation = 0.0
    return SolveOutcome(
        weights=weights,
        feasible=max_violation == 0.0,
        target_objective=float(model.target_coeff @ w),
        max_violation=max_violation,
        candidate=candidate,
    )


def evaluate_candidates(
    model: AffinePredictionModel,
    references: Mapping[str, float],
    grid: SolverGrid | None = None,
) -> list[SolveOutcome]:
    """Solve every (lambda, eps) candidate; one batched descent for the grid."""
    grid = grid or default_grid()
    pairs = [(lam, eps) for lam in grid.lambdas for eps in grid.epsilons]
    n = model.effect.shape[1]
    if n == 1:
        w = MixtureWeights((1.0,))
        _constraint_system(model, references, 0.0)  # validates finiteness
        return [classify(model, references, w, pair) for pair in pairs]
    if not np.all(np.isfinite(model.target_coeff)):
        raise SolverError("non-finite target objective coefficients")
    a, b0 = _constraint_system(model, references, 0.0)
    if b0.size:
        b_rows = np.array([b0 + eps for _, eps in pairs])
    else:
        b_rows = np.zeros((len(pairs), 0))
    lams = np.array([lam for lam, _ in pairs])
    w0 = np.full((len(pairs), n), 1.0 / n)
    solutions = _pgd_batch(model.target_coeff, a, b_rows, lams, w0)
    out = []
    for pair, w in zip(pairs, solutions):
        w = np.maximum(w, 0.0)
        w /= w.sum()
        weights = MixtureWeights(tuple(float(x) for x in w))
        out.append(classify(model, references, weights, pair))
    return out


def _prefer(challenger: SolveOutcome, incumbent: SolveOutcome) -> bool:
    """True when the challenger wins under the documented deterministic order:
    feasible beats infeasible; then lower target objective (feasible) or lower
    max violation (infeasible); ties break toward larger lambda, larger eps,
    lexicographically smaller weights."""
    if challenger.feasible != incumbent.feasible:
        return challenger.feasible
    key_c = challenger.target_objective if challenger.feasible else challenger.max_violation
    key_i = incumbent.target_objective if incumbent.feasible else incumbent.max_violation
    if key_c != key_i:
        return key_c < key_i
    if challenger.candidate[0] != incumbent.candidate[0]:
        return challenger.candidate[0] > incumbent.candidate[0]
    if challenger.candidate[1] != incumbent.candidate[1]:
        return challenger.candidate[1] > incumbent.candidate[1]
    return challenger.weights.values < incumbent.weights.values


def choose_best(candidates: Sequence[SolveOutcome]) -> SolveOutcome:
    if not candidates:
        raise SolverError("no candidates to choose from")
    best = candidates[0]
    for cand in candidates[1:]:
        if _prefer(cand, best):
            best = cand
    return best


def select_weights(
    model: AffinePredictionModel,
    references: Mapping[str, float],
    grid: SolverGrid | None = None,
) -> SolveOutcome:
    """Solve over the whole (lambda, eps) grid and apply the selection rule."""
    return choose_best(evaluate_candidates(model, references, grid))
