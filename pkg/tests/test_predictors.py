import logging
import math

import numpy as np
import pytest

from mixctl.predictors import (
    CurvePredictor,
    FittedCurve,
    LinearPredictor,
    aicc,
    fit_curves,
    fit_trajectory,
    predict_curves,
    predict_linear,
)
from mixctl.slopes import SlopeMatrix, estimate_slopes

from conftest import affine, make_scenario, make_sim


def slope_matrix(entries, anchors, c=8, traj=None, u=None):
    entries = np.asarray(entries, float)
    m, n = entries.shape
    domain_ids = tuple(f"d{i}" for i in range(m))
    dataset_ids = tuple(f"s{j}" for j in range(n))
    return SlopeMatrix(
        entries=entries,
        anchor={f"d{i}": anchors[i] for i in range(m)},
        step=0, probe_steps=c,
        domain_ids=domain_ids, dataset_ids=dataset_ids,
        traj_u=u, traj_values=traj,
    )


# ---------------------------------------------------------------------------
# linear predictor
# ---------------------------------------------------------------------------


def test_predict_linear_hand_value():
    sm = slope_matrix([[-0.01, 0.005]], [2.0])
    pred = predict_linear(LinearPredictor(sm, horizon=64), [0.5, 0.5])
    assert pred["d0"] == pytest.approx(1.84, abs=1e-12)


def test_predict_linear_zero_slopes_returns_anchor():
    sm = slope_matrix([[0.0, 0.0]], [3.25])
    for w in ([1, 0], [0, 1], [0.3, 0.7]):
        assert predict_linear(LinearPredictor(sm, 100), w)["d0"] == 3.25


def test_predict_linear_one_hot():
    sm = slope_matrix([[-0.02, 0.01], [0.005, -0.03]], [1.0, 2.0])
    pred = predict_linear(LinearPredictor(sm, 50), [0.0, 1.0])
    assert pred["d0"] == pytest.approx(1.0 + 50 * 0.01)
    assert pred["d1"] == pytest.approx(2.0 - 50 * 0.03)


def test_predictors_affine_in_weights():
    rng = np.random.default_rng(4)
    sm = slope_matrix(rng.standard_normal((3, 4)) * 0.01, rng.standard_normal(3) + 2)
    predictor = LinearPredictor(sm, 32)
    for _ in range(20):
        w1 = rng.dirichlet(np.ones(4))
        w2 = rng.dirichlet(np.ones(4))
        alpha = rng.uniform()
        mix = alpha * w1 + (1 - alpha) * w2
        left = predict_linear(predictor, mix)
        for d in left:
            right = (alpha * predict_linear(predictor, w1)[d]
                     + (1 - alpha) * predict_linear(predictor, w2)[d])
            assert left[d] == pytest.approx(right, abs=1e-9)


def test_linear_predictor_exact_on_linear_dynamics():
    dim = 4
    scenario = make_scenario(n_datasets=2, total_steps=256, eval_every=32)
    dataset_objs = [affine(dim, [1.0, 0.5, 0, 0]), affine(dim, [0, -1.0, 0.5, 0])]
    domain_objs = [affine(dim, [0.3, -0.2, 0.1, 0], offset=2.0),
                   affine(dim, [-0.1, 0.4, 0, 0.2], offset=2.0)]
    trainer = make_sim(scenario, dataset_objs, domain_objs, optimizer="sgd",
                       learning_rate=0.004)
    from mixctl.trainer import EvalRequest
    rng = np.random.default_rng(1)
    for _ in range(5):
        w = rng.dirichlet(np.ones(2))
        horizon = int(rng.integers(8, 120))
        sm = estimate_slopes(trainer, scenario, probe_steps=4, eval_batches=8)
        pred = predict_linear(LinearPredictor(sm, horizon), w)
        handle = trainer.snapshot()
        trainer.train_steps(w, horizon)
        realized = trainer.evaluate(EvalRequest(scenario.domain_ids, 8)).values
        trainer.restore(handle)
        trainer.release(handle)
        for d in scenario.domain_ids:
            assert pred[d] == pytest.approx(realized[d], abs=1e-9)


# ---------------------------------------------------------------------------
# curve fitting
# ---------------------------------------------------------------------------

U6 = np.array([0.0, 0.2, 0.4, 0.6, 0.8, 1.0])


def test_fit_recovers_exponential():
    a, b, d = 0.5, 2.0, 1.0
    y = a * np.exp(-b * U6) + d
    curve = fit_trajectory(U6, y)
    assert curve.family == "exponential"
    fa, fb, fd = curve.params
    assert fa == pytest.approx(a, abs=1e-4)
    assert fb == pytest.approx(b, abs=1e-4)
    assert fd == pytest.approx(d, abs=1e-4)


def test_fit_recovers_power_on_deltas():
    alpha, p = -0.3, 0.7
    anchor = 2.0
    y = anchor + alpha * U6 ** p
    curve = fit_trajectory(U6, y)
    assert curve.family == "power"
    assert curve.rss <= 1e-10
    assert curve.params[0] == pytest.approx(alpha, rel=1e-3)
    assert curve.params[1] == pytest.approx(p, rel=1e-3)


def test_constant_trajectory_predicts_anchor_everywhere():
    y = np.full(6, 1.75)
    curve = fit_trajectory(U6, y)
    for u in (0.0, 0.5, 1.0, 4.0):
        assert curve.delta(u, 1.75) == pytest.approx(0.0, abs=1e-8)


def test_power_offset_fit_recovers_parameters_on_family_data():
    a, b, d = -0.4, 0.6, 2.0
    y = a * U6 ** b + d
    from mixctl.predictors import _fit_family
    params, rss, converged = _fit_family("power_offset", U6, y)
    assert converged and rss < 1e-12
    assert params[0] == pytest.approx(a, rel=1e-3)
    assert params[1] == pytest.approx(b, rel=1e-3)
    assert params[2] == pytest.approx(d, rel=1e-3)


def test_aicc_small_sample_form():
    # n ln(RSS/n) + 2k + 2k(k+1)/(n-k-1), hand-checked
    assert aicc(0.6, 6, 2) == pytest.approx(6 * math.log(0.1) + 4 + 12 / 3)
    assert aicc(0.6, 6, 3) == pytest.approx(6 * math.log(0.1) + 6 + 24 / 2)
    assert aicc(0.6, 4, 3) == math.inf  # n - k - 1 = 0: ineligible


def test_aicc_ordering_scale_invariant():
    # scaling all losses by s scales every RSS by s^2 and shifts all AICc
    # values by the same n*ln(s^2): orderings are preserved
    rng = np.random.default_rng(7)
    for _ in range(50):
        rss1, rss2 = rng.uniform(1e-6, 1.0, 2)
        k1, k2 = rng.integers(2, 4, 2)
        s2 = rng.uniform(0.01, 100.0)
        base = aicc(rss1, 6, int(k1)) - aicc(rss2, 6, int(k2))
        scaled = aicc(rss1 * s2, 6, int(k1)) - aicc(rss2 * s2, 6, int(k2))
        assert scaled == pytest.approx(base, abs=1e-9)


def test_too_few_points_falls_back_to_linear():
    u = np.array([0.0, 0.5, 1.0])  # n=3: every family has n-k-1 <= 0
    y = np.array([2.0, 1.5, 1.2])
    curve = fit_trajectory(u, y)
    assert curve.family == "linear_fallback"


def build_curve_predictor(trajectories, anchors, c, horizon):
    """trajectories: (points, M, N) absolute values."""
    traj = np.asarray(trajectories, float)
    n_points, m, n = traj.shape
    u = tuple(np.linspace(0.0, 1.0, n_points))
    entries = (traj[-1] - traj[0]) / c
    sm = slope_matrix(entries, traj[0, :, 0], c=c,
                      traj=traj, u=u)
    return fit_curves(sm, horizon)


def test_curves_match_linear_on_linear_trajectories():
    rng = np.random.default_rng(11)
    slopes = rng.standard_normal((2, 3)) * 0.05
    anchors = rng.uniform(1, 3, 2)
    c = 10
    u = np.linspace(0, 1, 6)
    traj = np.empty((6, 2, 3))
    for i in range(2):
        for j in range(3):
            traj[:, i, j] = anchors[i] + slopes[i, j] * c * u
    for horizon in (5, 10, 40):
        cp = build_curve_predictor(traj, anchors, c, horizon)
        lp = LinearPredictor(slope_matrix(slopes, anchors, c=c), horizon)
        for _ in range(5):
            w = rng.dirichlet(np.ones(3))
            pc = predict_curves(cp, w)
            pl = predict_linear(lp, w)
            for d in pc:
                assert pc[d] == pytest.approx(pl[d], abs=1e-9)


def test_prediction_at_probe_end_is_endpoint_combination():
    # H == c: u_H = 1; exact fits pass through the last knot, so the
    # prediction is the w-combination of fitted endpoints
    anchors = [2.0, 1.5]
    c = 8
    traj = np.empty((6, 2, 2))
    u = np.linspace(0, 1, 6)
    ends = np.array([[1.7, 2.2], [1.2, 1.9]])
    for i in range(2):
        for j in range(2):
            traj[:, i, j] = anchors[i] + (ends[i, j] - anchors[i]) * u  # linear, exact
    cp = build_curve_predictor(traj, anchors, c, horizon=c)
    w = np.array([0.25, 0.75])
    pred = predict_curves(cp, w)
    for i, d in enumerate(("d0", "d1")):
        assert pred[d] == pytest.approx(float(ends[i] @ w), abs=1e-8)


def test_one_hot_curve_prediction_is_anchor_plus_delta():
    anchors = [2.0]
    c = 4
    u = np.linspace(0, 1, 6)
    traj = (anchors[0] - 0.5 * u ** 0.9).reshape(6, 1, 1)
    traj = np.concatenate([traj, anchors[0] + 0.1 * u.reshape(6, 1, 1)], axis=2)
    cp = build_curve_predictor(traj, anchors, c, horizon=4)
    pred = predict_curves(cp, [1.0, 0.0])
    delta = cp.curves[0][0].delta(1.0, 2.0)
    assert pred["d0"] == pytest.approx(2.0 + delta, abs=1e-12)


def test_extrapolation_clamp_and_warning(caplog):
    anchors = [1.0]
    u = np.linspace(0, 1, 6)
    traj = (anchors[0] + 0.2 * u).reshape(6, 1, 1)
    cp = build_curve_predictor(traj, anchors, c=2, horizon=512)  # u_H = 256 -> clamp
    with caplog.at_level(logging.WARNING):
        assert cp.u_horizon == 32.0
    assert any("clamping" in r.message for r in caplog.records)


def test_interpolation_when_horizon_below_probe():
    anchors = [1.0]
    u = np.linspace(0, 1, 6)
    traj = (anchors[0] + 0.4 * u).reshape(6, 1, 1)
    cp = build_curve_predictor(traj, anchors, c=16, horizon=4)
    assert cp.u_horizon == 0.25
    assert predict_curves(cp, [1.0])["d0"] == pytest.approx(1.0 + 0.4 * 0.25, abs=1e-9)


def test_fit_curves_requires_trajectories():
    sm = slope_matrix([[0.1]], [1.0])
    with pytest.raises(ValueError, match="trajectories"):
        fit_curves(sm, 8)


def test_nonfinite_prediction_is_plus_infinity_for_that_weight():
    curve = FittedCurve(family="power", params=(math.nan, 1.0), rss=0.0,
                        n_points=6, aicc=0.0)
    cp = CurvePredictor(curves=((curve,),), anchors=np.array([1.0]),
                        domain_ids=("d0",), dataset_ids=("s0",),
                        probe_steps=4, horizon=4)
    assert predict_curves(cp, [1.0]) == {"d0": math.inf}
    model = cp.as_model(())
    assert model.flags == ("nonfinite:d0/s0",)
    assert np.isfinite(model.effect).all()
