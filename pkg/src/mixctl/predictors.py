"""Loss prediction at a horizon from probe measurements.

Two predictors over candidate mixture weights w:

  linear   L_hat_i(w) = anchor_i + H * sum_j S_ij w_j  (one-step slopes,
           extrapolated over the horizon H)
  curves   per (domain, dataset) cell, fit the probe loss trajectory as a
           function of normalized probe progress u in [0, 1], pick the best
           family by small-sample-corrected AIC, and evaluate at
           u_H = H / c (extrapolating past 1 when the horizon exceeds the
           probe). Predictions combine per-dataset curve deltas additively:
           L_hat_i(w) = anchor_i + sum_j w_j * delta_ij(u_H).

Both predictions are affine in w, so the downstream penalized solve stays
convex either way.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .slopes import SlopeMatrix

log = logging.getLogger(__name__)

CURVE_FAMILIES = ("power_offset", "exponential", "power")
FAMILY_N_PARAMS = {"power_offset": 3, "exponential": 3, "power": 2, "linear_fallback": 2}
SHAPE_BOUNDS = (0.05, 10.0)   # exponent / rate bounds keep u^b identifiable on [0, 1]
MAX_EXTRAPOLATION = 32.0      # cap on u_H; unbounded power-law extrapolation is fragile
RSS_FLOOR = 1e-12             # below this, fits are "exact" and AICc compares parsimony


def _weights_array(weights, n: int) -> np.ndarray:
    w = np.asarray(getattr(weights, "values", weights), dtype=float)
    if w.shape != (n,):
        raise ValueError(f"expected {n} weights, got shape {w.shape}")
    return w


# ---------------------------------------------------------------------------
# Shared affine form consumed by the solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AffinePredictionModel:
    """L_hat = anchor + effect @ w, with a target objective target_coeff @ w."""

    domain_ids: tuple[str, ...]
    anchor: np.ndarray           # (M,)
    effect: np.ndarray           # (M, N) predicted change at the horizon
    target_coeff: np.ndarray     # (N,)
    kind: str
    flags: tuple[str, ...] = ()

    def predict(self, weights) -> dict[str, float]:
        w = _weights_array(weights, self.effect.shape[1])
        values = self.anchor + self.effect @ w
        return {d: float(v) for d, v in zip(self.domain_ids, values)}


# ---------------------------------------------------------------------------
# Linear predictor
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearPredictor:
    slope_matrix: SlopeMatrix
    horizon: int

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    def as_model(self, target_domain_ids: Sequence[str]) -> AffinePredictionModel:
        sm = self.slope_matrix
        targets = [sm.domain_ids.index(d) for d in target_domain_ids]
        target_coeff = (
            sm.entries[targets].sum(axis=0) if targets else np.zeros(sm.entries.shape[1])
        )
        return AffinePredictionModel(
            domain_ids=sm.domain_ids,
            anchor=sm.anchor_vector,
            effect=self.horizon * sm.entries,
            target_coeff=target_coeff,
            kind="linear",
        )


def predict_linear(predictor: LinearPredictor, weights) -> dict[str, float]:
    """anchor_i + H * sum_j S_ij w_j for every domain."""
    sm = predictor.slope_matrix
    w = _weights_array(weights, sm.entries.shape[1])
    values = sm.anchor_vector + predictor.horizon * (sm.entries @ w)
    return {d: float(v) for d, v in zip(sm.domain_ids, values)}


# ---------------------------------------------------------------------------
# Curve fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FittedCurve:
    """One fitted trajectory model for a (domain, dataset) cell.

    power_offset  a * u^b + d       fit on absolute values
    exponential   a * exp(-b u) + d fit on absolute values
    power         alpha * u^p       fit on deltas value(u) - value(0)
    linear_fallback  m * u + q      fit on absolute values, used when no
                                    family converges
    """

    family: str
    params: tuple[float, ...]
    rss: float
    n_points: int
    aicc: float
    converged: bool = True

    def value(self, u: float, anchor: float) -> float:
        a = self.params
        if self.family == "power_offset":
            return a[0] * u ** a[1] + a[2]
        if self.family == "exponential":
            return a[0] * math.exp(-a[1] * u) + a[2]
        if self.family == "power":
            return anchor + a[0] * u ** a[1]
        if self.family == "linear_fallback":
            return a[0] * u + a[1]
        raise ValueError(f"unknown family {self.family!r}")

    def delta(self, u: float, anchor: float) -> float:
        """Predicted change from the anchor at probe progress u."""
        if self.family == "power":
            return self.params[0] * u ** self.params[1]
        return self.value(u, anchor) - anchor

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "params": list(self.params),
            "rss": self.rss,
            "n_points": self.n_points,
            "aicc": self.aicc,
            "converged": self.converged,
        }


def aicc(rss: float, n: int, k: int) -> float:
    """Small-sample-corrected Akaike criterion; +inf when n - k - 1 <= 0."""
    if n - k - 1 <= 0:
        return math.inf
    rss = max(rss, RSS_FLOOR)
    return n * math.log(rss / n) + 2 * k + (2 * k * (k + 1)) / (n - k - 1)


def _fit_family(family: str, u: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float, bool]:
    """Bounded trust-region least squares with three deterministic starts."""
    y0, yend = y[0], y[-1]
    dy = yend - y0
    if family == "power":
        z = y - y0
        residual = lambda p: p[0] * np.power(u, p[1]) - z
        starts = [(dy if dy else 0.1, b0) for b0 in (0.5, 1.0, 2.0)]
        lower, upper = [-np.inf, SHAPE_BOUNDS[0]], [np.inf, SHAPE_BOUNDS[1]]
    elif family == "power_offset":
        residual = lambda p: p[0] * np.power(u, p[1]) + p[2] - y
        starts = [(dy if dy else 0.1, b0, y0) for b0 in (0.5, 1.0, 2.0)]
        lower = [-np.inf, SHAPE_BOUNDS[0], -np.inf]
        upper = [np.inf, SHAPE_BOUNDS[1], np.inf]
    elif family == "exponential":
        residual = lambda p: p[0] * np.exp(-p[1] * u) + p[2] - y
        starts = [(-dy if dy else 0.1, b0, yend) for b0 in (0.5, 2.0, 5.0)]
        lower = [-np.inf, SHAPE_BOUNDS[0], -np.inf]
        upper = [np.inf, SHAPE_BOUNDS[1], np.inf]
    else:
        raise ValueError(f"unknown family {family!r}")

    best_params, best_rss, converged = None, math.inf, False
    for x0 in starts:
        try:
            fit = least_squares(
                residual, np.asarray(x0, dtype=float), bounds=(lower, upper),
                method="trf", gtol=1e-8, xtol=1e-14, ftol=1e-14, max_nfev=200,
            )
        except (ValueError, FloatingPointError):  # pragma: no cover - defensive
            continue
        rss = float(fit.cost * 2.0)
        if fit.status > 0 and np.all(np.isfinite(fit.x)) and math.isfinite(rss):
            if rss < best_rss:
                best_params, best_rss, converged = fit.x, rss, True
    if not converged:
        return np.zeros(len(starts[0])), math.inf, False
    return best_params, best_rss, True


def _fit_linear_fallback(u: np.ndarray, y: np.ndarray) -> FittedCurve:
    coeffs = np.polyfit(u, y, 1) if len(np.unique(u)) > 1 else np.array([0.0, float(y.mean())])
    resid = y - (coeffs[0] * u + coeffs[1])
    return FittedCurve(
        family="linear_fallback",
        params=(float(coeffs[0]), float(coeffs[1])),
        rss=float(resid @ resid),
        n_points=len(y),
        aicc=math.inf,
        converged=False,
    )


def fit_trajectory(u: np.ndarray, y: np.ndarray) -> FittedCurve:
    """Fit all families to one trajectory and select by AICc.

    Only converged, AICc-eligible fits compete; a straight-line fit is the
    fallback when none qualifies. Exact fits are floored to a common RSS so
    indistinguishable families resolve by parsimony.
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    candidates: list[FittedCurve] = []
    for family in CURVE_FAMILIES:
        k = FAMILY_N_PARAMS[family]
        params, rss, converged = _fit_family(family, u, y)
        if not converged:
            continue
        score = aicc(rss, n, k)
        if not math.isfinite(score):
            continue
        candidates.append(FittedCurve(family, tuple(float(p) for p in params),
                                      rss, n, score))
    if not candidates:
        return _fit_linear_fallback(u, y)
    # min AICc; ties resolve toward fewer parameters, then family order
    order = {f: i for i, f in enumerate(CURVE_FAMILIES)}
    return min(candidates,
               key=lambda c: (c.aicc, FAMILY_N_PARAMS[c.family], order[c.family]))


@dataclass(frozen=True)
class CurvePredictor:
    curves: tuple[tuple[FittedCurve, ...], ...]  # [domain][dataset]
    anchors: np.ndarray
    domain_ids: tuple[str, ...]
    dataset_ids: tuple[str, ...]
    probe_steps: int
    horizon: int

    @property
    def u_horizon(self) -> float:
        u = self.horizon / self.probe_steps
        if u > MAX_EXTRAPOLATION:
            log.warning("clamping curve extrapolation u_H=%.3g to %g", u, MAX_EXTRAPOLATION)
            return MAX_EXTRAPOLATION
        return u

    def delta_matrix(self) -> np.ndarray:
        """Per-cell predicted change at u_H; may contain non-finite entries."""
        u = self.u_horizon
        out = np.zeros((len(self.domain_ids), len(self.dataset_ids)))
        for i, row in enumerate(self.curves):
            for j, curve in enumerate(row):
                out[i, j] = curve.delta(u, float(self.anchors[i]))
        return out

    def as_model(self, target_domain_ids: Sequence[str]) -> AffinePredictionModel:
        deltas = self.delta_matrix()
        flags = []
        bad = ~np.isfinite(deltas)
        if bad.any():
            # pessimistic large-but-finite stand-in keeps the solve numeric
            for i, j in zip(*np.nonzero(bad)):
                flags.append(f"nonfinite:{self.domain_ids[i]}/{self.dataset_ids[j]}")
            deltas = np.where(bad, 1e12, deltas)
        targets = [self.domain_ids.index(d) for d in target_domain_ids]
        target_coeff = deltas[targets].sum(axis=0) if targets else np.zeros(deltas.shape[1])
        return AffinePredictionModel(
            domain_ids=self.domain_ids,
            anchor=self.anchors.copy(),
            effect=deltas,
            target_coeff=target_coeff,
            kind="curves",
            flags=tuple(flags),
        )

    def to_summary(self) -> dict:
        return {
            "probe_steps": self.probe_steps,
            "horizon": self.horizon,
            "u_horizon": self.u_horizon,
            "curves": [[c.to_dict() for c in row] for row in self.curves],
        }


def fit_curves(slope_matrix: SlopeMatrix, horizon: int) -> CurvePredictor:
    """Fit per-cell trajectory curves from a slope matrix carrying trajectories."""
    if slope_matrix.traj_u is None or slope_matrix.traj_values is None:
        raise ValueError("slope matrix has no probe trajectories; rerun with n_evals >= 2")
    if len(slope_matrix.traj_u) < 3:
        raise ValueError("need at least 2 interior evaluations for curve fitting")
    u = np.asarray(slope_matrix.traj_u)
    m, n = slope_matrix.entries.shape
    rows = []
    for i in range(m):
        row = [fit_trajectory(u, slope_matrix.traj_values[:, i, j]) for j in range(n)]
        rows.append(tuple(row))
    return CurvePredictor(
        curves=tuple(rows),
        anchors=slope_matrix.anchor_vector,
        domain_ids=slope_matrix.domain_ids,
        dataset_ids=slope_matrix.dataset_ids,
        probe_steps=slope_matrix.probe_steps,
        horizon=horizon,
    )


def predict_curves(predictor: CurvePredictor, weights) -> dict[str, float]:
    """anchor_i + sum_j w_j * delta_ij(u_H); non-finite curve values become +inf."""
    w = _weights_array(weights, len(predictor.dataset_ids))
    deltas = predictor.delta_matrix()
    out: dict[str, float] = {}
    for i, domain_id in enumerate(predictor.domain_ids):
        total = predictor.anchors[i]
        bad = False
        for j in range(len(predictor.dataset_ids)):
            if w[j] == 0.0:
                continue
            if not math.isfinite(deltas[i, j]):
                bad = True
                break
            total += w[j] * deltas[i, j]
        out[domain_id] = math.inf if bad else float(total)
    return out
