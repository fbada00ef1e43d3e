import numpy as np
import pytest

from occplan import predict, synth
from occplan.errors import OrderingError, ParameterError, RangeError, StateError
from occplan.human import N_JOINTS, SkeletonFrame, SkeletonSequence
from occplan.occlusion import OcclusionReport
from occplan.predict import KalmanPredictor, PredictedHuman, PredictionHorizon

VISIBLE = OcclusionReport.fully_visible()
HIDDEN = OcclusionReport(np.zeros(N_JOINTS), 0.0, N_JOINTS, "occluded")


def run_filter(seq, until, report=VISIBLE, predictor=None):
    predictor = predictor or KalmanPredictor()
    state = predictor.initial_state()
    for f in seq.frames:
        if f.time > until + 1e-12:
            break
        state = predictor.update(state, f, report)
    return predictor, state


def test_horizon_defaults():
    h = PredictionHorizon()
    assert h.points == 6
    np.testing.assert_allclose(h.offsets, [0.5, 1, 1.5, 2, 2.5, 3])
    with pytest.raises(ParameterError):
        PredictionHorizon(3.0, 0.7)
    with pytest.raises(ParameterError):
        PredictionHorizon(3.0, 0.0)


def test_stationary_velocity_vanishes():
    seq = synth.standing(duration=1.0, frame_rate=10.0)
    _, state = run_filter(seq, 1.0)
    assert np.max(np.abs(state.velocities)) < 1e-6


def test_constant_velocity_fixed_point():
    seq = synth.walker(velocity=(0.1, 0.0), duration=3.0, frame_rate=10.0)
    _, state = run_filter(seq, 3.0)
    np.testing.assert_allclose(state.velocities, np.tile([0.1, 0, 0], (N_JOINTS, 1)), atol=1e-6)


def test_constant_velocity_prediction_is_exact():
    seq = synth.walker(velocity=(0.6, -0.2), duration=8.0, frame_rate=15.0)
    predictor, state = run_filter(seq, 2.0)
    pred = predictor.predict(state, PredictionHorizon(), VISIBLE)
    errs = [predict.error_distance(pred, seq, t) for t in pred.times]
    assert len(errs) == 6
    assert max(errs) < 1e-6


def test_turning_walker_error_grows():
    seq = synth.turner(speed=0.8, yaw_rate=0.5, turn_start=1.0, duration=8.0, frame_rate=15.0)
    predictor, state = run_filter(seq, 2.0)
    pred = predictor.predict(state, PredictionHorizon(), VISIBLE)
    errs = np.array([predict.error_distance(pred, seq, t) for t in pred.times])
    assert np.all(np.diff(errs) >= 0)
    assert errs[-1] > 0.1


def test_occluded_joints_coast():
    seq = synth.walker(velocity=(0.5, 0.0), duration=2.0, frame_rate=10.0)
    predictor = KalmanPredictor()
    state = predictor.initial_state()
    for f in seq.frames[:10]:
        state = predictor.update(state, f, VISIBLE)
    p0, v0 = state.positions.copy(), state.velocities.copy()
    traces = [state.covariance_trace]
    for f in seq.frames[10:15]:
        state = predictor.update(state, f, HIDDEN)
        traces.append(state.covariance_trace)
    dt = seq.frames[14].time - seq.frames[9].time
    np.testing.assert_allclose(state.positions, p0 + dt * v0, atol=1e-12)
    assert np.all(np.diff(np.array(traces), axis=0) > 0)
    for P in state.P:
        assert np.allclose(P, P.T, atol=1e-9)
        assert np.linalg.eigvalsh(P).min() > -1e-9


def test_predict_examples():
    x = np.zeros((N_JOINTS, 3))
    seq = SkeletonSequence((SkeletonFrame(0.0, x), SkeletonFrame(1.0, x + [1.0, 0, 0])), 1.0)
    predictor, state = run_filter(seq, 1.0)
    pred = predictor.predict(state, PredictionHorizon(), VISIBLE)
    np.testing.assert_allclose(pred.joints[0, 0], [1.5, 0, 0], atol=1e-12)
    np.testing.assert_allclose(pred.joints[-1, 0], [4.0, 0, 0], atol=1e-12)
    # the zero-offset point is the filtered estimate itself
    joints, _ = pred.at([1.0])
    np.testing.assert_array_equal(joints[0], state.positions)
    still = SkeletonSequence((SkeletonFrame(0.0, x), SkeletonFrame(1.0, x)), 1.0)
    predictor, state = run_filter(still, 1.0)
    pred = predictor.predict(state, PredictionHorizon(), VISIBLE)
    assert np.all(pred.joints == x[None])


def test_confidence_decay_and_bounds():
    seq = synth.standing(duration=0.5, frame_rate=10.0)
    conf = np.linspace(0, 1, N_JOINTS)
    report = OcclusionReport(conf, float(conf.mean()), 0)
    predictor, state = run_filter(seq, 0.5, predictor=KalmanPredictor(confidence_decay=0.5))
    pred = predictor.predict(state, PredictionHorizon(), report)
    np.testing.assert_allclose(pred.confidences[0], conf * 0.5 ** 0.5)
    assert pred.confidences.min() >= 0 and pred.confidences.max() <= 1
    default = KalmanPredictor().predict(state, PredictionHorizon(), report)
    np.testing.assert_array_equal(default.confidences, np.tile(conf, (6, 1)))


def test_error_distance_examples():
    seq = synth.standing(duration=4.0, frame_rate=10.0)
    truth0 = seq.frames[0].joints
    pred = PredictedHuman.static(truth0, t0=0.0)
    assert predict.error_distance(pred, seq, 1.0) == 0.0
    shifted = PredictedHuman.static(truth0 + [0.1, 0, 0], t0=0.0)
    assert predict.error_distance(shifted, seq, 1.0) == pytest.approx(0.1, abs=1e-12)
    rng = np.random.default_rng(2)
    off = rng.normal(scale=0.2, size=(N_JOINTS, 3))
    noisy = PredictedHuman.static(truth0 + off, t0=0.0)
    ref = sum(np.sqrt(sum(c * c for c in row)) for row in off) / N_JOINTS
    assert predict.error_distance(noisy, seq, 2.0) == pytest.approx(ref, abs=1e-12)
    doubled = PredictedHuman.static(truth0 + 2 * off, t0=0.0)
    assert predict.error_distance(doubled, seq, 2.0) == pytest.approx(2 * ref, abs=1e-12)
    with pytest.raises(RangeError):
        predict.error_distance(pred, seq, 0.75)


def test_contract_errors():
    predictor = KalmanPredictor()
    state = predictor.initial_state()
    f = SkeletonFrame(1.0, np.zeros((N_JOINTS, 3)))
    with pytest.raises(StateError):
        predictor.predict(state, PredictionHorizon(), VISIBLE)
    state = predictor.update(state, f, VISIBLE)
    with pytest.raises(OrderingError):
        predictor.update(state, f, VISIBLE)
