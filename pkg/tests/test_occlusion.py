import numpy as np
import pytest

from occplan import geom, occlusion
from occplan.errors import ConfigurationError, ParameterError
from occplan.geom import Box, Capsule
from occplan.human import HAND_JOINTS, N_JOINTS, SkeletonFrame
from occplan.occlusion import CameraModel, OcclusionReport, OcclusionSettings

CAM = CameraModel(np.eye(4))


def test_unobstructed_joint_is_visible():
    assert occlusion.joint_visibility(CAM, (2, 0.1, 0), []) == 1.0


def test_fully_covered_joint():
    wall = Capsule((1.0, 0, -3), (1.0, 0, 3), 0.5)
    assert occlusion.joint_visibility(CAM, (2, 0, 0), [wall]) == 0.0


def test_out_of_frustum_is_zero():
    assert occlusion.joint_visibility(CAM, (-2, 0, 0), []) == 0.0
    assert occlusion.joint_visibility(CAM, (9, 0, 0), []) == 0.0


def test_half_ball_blocker():
    # cylinder tangent to the optical axis at x=1.5: a ray to (2, y, z) is blocked iff y > 0
    blocker = Capsule((1.5, 1.0, -5), (1.5, 1.0, 5), 1.0)
    v = occlusion.joint_visibility(CAM, (2, 0, 0), [blocker], samples=256)
    assert v == pytest.approx(0.5, abs=0.1)
    # the same construct checked ray by ray against the analytic rule
    offs = occlusion.ball_offsets(256, 0.05, 0)[0]
    assert v == pytest.approx(np.mean(offs[:, 1] <= 0), abs=1e-12)


def scene(n_hidden):
    joints = np.zeros((N_JOINTS, 3))
    joints[:, 0] = 3.0
    joints[:n_hidden, 1] = np.linspace(-0.3, 0.3, n_hidden)
    joints[n_hidden:, 1] = 1.5
    joints[n_hidden:, 2] = np.linspace(-0.3, 0.3, N_JOINTS - n_hidden)
    return SkeletonFrame(0.0, joints)


BOARD = [Box((1.5, 0, 0), (0.05, 0.5, 0.5))]


def test_twenty_joints_trigger_override():
    rep = occlusion.occlusion_report(CAM, scene(20), BOARD)
    assert rep.occluded_joint_count == 20
    assert rep.label_override == "occluded"
    np.testing.assert_array_equal(rep.per_joint_confidence[20:], 1.0)
    assert rep.frame_confidence == pytest.approx(3 / 23)


def test_nineteen_joints_do_not():
    rep = occlusion.occlusion_report(CAM, scene(19), BOARD)
    assert rep.occluded_joint_count == 19
    assert rep.label_override is None


def test_all_visible_report():
    rep = occlusion.occlusion_report(CAM, scene(20), [])
    assert rep.occluded_joint_count == 0
    assert rep.frame_confidence == 1.0
    assert rep.label_override is None
    np.testing.assert_array_equal(rep.degree_of_occlusion, 0.0)


def test_untracked_joints_do_not_count():
    f = scene(20)
    tracked = np.ones(N_JOINTS, bool)
    tracked[:5] = False
    rep = occlusion.occlusion_report(CAM, SkeletonFrame(0.0, f.joints, tracked), BOARD)
    assert rep.occluded_joint_count == 15
    assert rep.label_override is None
    assert rep.frame_confidence == pytest.approx(3 / 18)


def _report(conf):
    conf = np.asarray(conf, float)
    _, fc, count, over = occlusion.summarize(conf, np.ones(N_JOINTS, bool), 0.5, 20)
    return OcclusionReport(conf, float(fc), int(count), "occluded" if over else None)


def test_hand_rule():
    conf = np.ones(N_JOINTS)
    conf[HAND_JOINTS[0]] = 0.2
    assert occlusion.hand_occlusion_label(_report(conf), "hand-centric") == "occluded"
    conf = np.ones(N_JOINTS)
    others = [k for k in range(N_JOINTS) if k not in HAND_JOINTS][:10]
    conf[others] = 0.0
    assert occlusion.hand_occlusion_label(_report(conf), "hand-centric") is None
    conf = np.ones(N_JOINTS)
    conf[:21] = 0.0
    assert occlusion.hand_occlusion_label(_report(conf), "whole-body") == "occluded"
    with pytest.raises(ConfigurationError):
        occlusion.hand_occlusion_label(_report(conf), "dancing")


def test_shape_deletion_never_lowers_confidence():
    rng = np.random.default_rng(3)
    shapes = [Capsule(rng.uniform((0.5, -1, -1), (2.5, 1, 1)), rng.uniform((0.5, -1, -1), (2.5, 1, 1)), 0.15)
              for _ in range(4)] + [Box((1.2, 0.3, 0), (0.1, 0.3, 0.2))]
    joints = rng.uniform((2.8, -1.5, -1.0), (3.2, 1.5, 1.0), (N_JOINTS, 3))
    frame = SkeletonFrame(0.0, joints)
    full = occlusion.occlusion_report(CAM, frame, shapes).per_joint_confidence
    for k in range(len(shapes)):
        fewer = occlusion.occlusion_report(CAM, frame, shapes[:k] + shapes[k + 1:]).per_joint_confidence
        assert np.all(fewer >= full)
    again = occlusion.occlusion_report(CAM, frame, shapes).per_joint_confidence
    np.testing.assert_array_equal(full, again)
    assert np.all((full >= 0) & (full <= 1))


def test_box_and_capsule_paths_agree_with_naive_rays():
    rng = np.random.default_rng(8)
    shapes = [Box.from_rotation((1.5, 0.1, 0.0), (0.05, 0.12, 0.1), np.linalg.qr(rng.normal(size=(3, 3)))[0]),
              Capsule((1.0, -0.5, -0.2), (1.2, 0.4, 0.3), 0.1)]
    joint = np.array([3.0, 0.15, 0.05])
    offs = occlusion.ball_offsets(64, 0.5, 5)[0]
    hits = [any(geom.ray_hits(geom.Segment(np.zeros(3), joint + o), s) for s in shapes) for o in offs]
    got = occlusion.joint_visibility(CAM, joint, shapes, samples=64, rho=0.5, seed=5)
    assert got == pytest.approx(1.0 - np.mean(hits), abs=1e-12)
    assert 0.0 < got < 1.0


def test_settings_validation():
    with pytest.raises(ConfigurationError):
        OcclusionSettings(hfov=4.0)
    with pytest.raises(ConfigurationError):
        OcclusionSettings(near=2.0, far=1.0)
    with pytest.raises(ParameterError):
        OcclusionSettings(rays=0)
    with pytest.raises(ParameterError):
        occlusion.joint_visibility(CAM, (1, 0, 0), [], samples=0)
