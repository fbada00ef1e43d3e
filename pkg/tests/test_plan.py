import numpy as np
import pytest

from occplan import cost, geom, plan, robot, synth, traj
from occplan.cost import CostWeights, Scene
from occplan.errors import ConstraintError, ParameterError
from occplan.occlusion import OcclusionSettings
from occplan.plan import PlannerParams, ReplanTask
from occplan.robot import CameraMount, LinkShape, RobotModel
from occplan.traj import Trajectory


def arm():
    return robot.chain([0.4, 0.4, 0.3], axes=[(0, 0, 1), (0, 1, 0), (0, 1, 0)],
                       base_pose=geom.translation((0, 0, 1.0)))


CORRIDOR_BOX = geom.Box((0.8, 0.0, 0.85), (0.1, 0.1, 0.2))


def corridor_scene():
    return Scene(arm(), (CORRIDOR_BOX,), samples_per_segment=8)


def random_traj(seed, n=6, T=3.0):
    rng = np.random.default_rng(seed)
    base = traj.straight_line_init([-1, 0, 0], [1, 0, 0], n, T)
    q = base.q.copy()
    qd = base.qd.copy()
    q[1:-1] += 0.15 * rng.normal(size=q[1:-1].shape)
    qd[1:-1] += 0.1 * rng.normal(size=qd[1:-1].shape)
    return base.with_waypoints(q, qd)


# ---------------------------------------------------------------------------
# gradients

@pytest.mark.parametrize("seed", range(10))
def test_batched_gradient_matches_central_differences(seed):
    tr = random_traj(seed)
    scene = corridor_scene()
    w = CostWeights(smoothness=1.0, static=1e4, human=0.0, occlusion=0.0)
    g = np.concatenate([a.ravel() for a in plan.fd_gradient(tr, scene, w, terms=["smoothness", "static"])])
    ref = np.concatenate([a.ravel() for a in plan.naive_gradient(tr, scene, w, terms=["smoothness", "static"])])
    assert np.linalg.norm(g - ref) / np.linalg.norm(ref) < 1e-4


def occlusion_scene():
    base = arm()
    shapes = tuple(base.shapes) + (LinkShape(3, geom.Box((0.1, 0, 0), (0.05, 0.3, 0.3))),)
    model = RobotModel(base.joints, shapes, base.base_pose, CameraMount(0, geom.translation((0, 0, 0.4))),
                       base.tool)
    person = synth.standing(position=(2.0, 0.0), heading=np.pi, duration=5.0)
    return Scene(model, (), OcclusionSettings(rays=16), person, samples_per_segment=8)


def test_occlusion_common_random_numbers():
    scene = occlusion_scene()
    tr = random_traj(3)
    w = CostWeights(1.0, 0.0, 0.0, 10.0)
    a = plan.objective(tr, scene, w)
    assert 0.0 < cost.evaluate_terms(tr, scene, ["occlusion"])[0]["occlusion"] < 1.0
    assert plan.objective(tr, scene, w) == a
    g1 = plan.fd_gradient(tr, scene, w, occlusion_eps=0.02)
    g2 = plan.fd_gradient(tr, scene, w, occlusion_eps=0.02)
    np.testing.assert_array_equal(g1[0], g2[0])
    np.testing.assert_array_equal(g1[1], g2[1])


# ---------------------------------------------------------------------------
# single-shot optimization

def test_straight_line_is_kept():
    tr = traj.straight_line_init([-1, 0.2, 0.1], [1, -0.3, 0.4], 6, 3.0)
    scene = Scene(arm(), samples_per_segment=8)
    w = CostWeights(1.0, 0.0, 0.0, 0.0)
    before = plan.objective(tr, scene, w)
    res = plan.optimize(tr, scene, w)
    assert res.report.total - before < 1e-6
    assert res.report.total <= before


def test_corridor_box_is_cleared():
    tr = traj.straight_line_init([-1, 0, 0], [1, 0, 0], 6, 3.0)
    scene = corridor_scene()
    w = CostWeights(static=1e4)
    before = plan.objective(tr, scene, w)
    assert cost.evaluate_terms(tr, scene, ["static"])[0]["static"] > 1e-4
    res = plan.optimize(tr, scene, w, PlannerParams(max_iterations=300, escape_rounds=5, perturbation_scale=0.2))
    assert res.report.static < 1e-6
    assert res.report.total < before
    # post-hoc penetration check on a dense resampling
    ts = np.linspace(0, 3, 301)
    for q in traj.sample_many(res.trajectory, ts).q[::10]:
        for shape in robot.world_shapes(arm(), q):
            assert geom.penetration(shape, CORRIDOR_BOX) < 5e-3
    # accepted costs never go up; endpoints untouched
    assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))
    np.testing.assert_array_equal(res.trajectory.q[0], tr.q[0])
    np.testing.assert_array_equal(res.trajectory.q[-1], tr.q[-1])
    assert traj.check_limits(res.trajectory, arm()) == []


def test_reoptimizing_a_converged_plan_is_stable():
    tr = traj.straight_line_init([-1, 0, 0], [1, 0, 0], 6, 3.0)
    scene = corridor_scene()
    w = CostWeights(static=1e4)
    params = PlannerParams(max_iterations=300, escape_rounds=5, perturbation_scale=0.2)
    first = plan.optimize(tr, scene, w, params)
    again = plan.optimize(first.trajectory, scene, w, params)
    assert abs(again.report.total - first.report.total) <= 0.01 * first.report.total


def test_infeasible_inputs():
    model = robot.chain([0.5, 0.5], limits=(-1.0, 1.0), velocity_limits=(-1.0, 1.0))
    scene = Scene(model, samples_per_segment=8)
    with pytest.raises(ConstraintError):
        plan.optimize(traj.straight_line_init([0, 0], [1.5, 0], 4, 2.0), scene)
    fast = traj.straight_line_init([-0.9, 0], [0.9, 0], 4, 0.5)
    with pytest.raises(ConstraintError):
        plan.optimize(fast, scene)
    with pytest.raises(ParameterError):
        PlannerParams(max_iterations=0)


def test_limits_hold_under_pressure():
    # a box right on the straight line tempts the optimizer toward the limits
    model = robot.chain([0.4, 0.4, 0.3], axes=[(0, 0, 1), (0, 1, 0), (0, 1, 0)],
                        base_pose=geom.translation((0, 0, 1.0)), limits=(-1.3, 1.3), velocity_limits=(-1.2, 1.2))
    scene = Scene(model, (CORRIDOR_BOX,), samples_per_segment=8)
    tr = traj.straight_line_init([-1, 0, 0], [1, 0, 0], 6, 3.0)
    res = plan.optimize(tr, scene, CostWeights(static=1e4), PlannerParams(max_iterations=60))
    assert traj.check_limits(res.trajectory, model, samples=2001) == []
    assert traj.within_limits(res.trajectory, model)


# ---------------------------------------------------------------------------
# replanning

def crossing_task(**kw):
    person = synth.walker(start=(0.8, 2.2), velocity=(0.0, -0.5), duration=6.0, frame_rate=10.0)
    scene = Scene(arm(), samples_per_segment=8)
    return ReplanTask(scene, [-1.2, 0, 0], [1.2, 0, 0], person, duration=3.0, waypoints=6,
                      weights=CostWeights(human=1e5), start_time=0.0, **kw)


def test_replan_cadence_and_safety():
    steps = list(plan.replan_loop(crossing_task()))
    times = [s.time for s in steps]
    np.testing.assert_allclose(np.diff(times), 0.5)
    assert len(steps) == 6
    assert not steps[0].human_enabled and steps[1].human_enabled
    for s in steps:
        assert s.violations == 0
        assert traj.check_limits(s.result.trajectory, arm()) == []
    # consecutive cycles hand over the executed state exactly
    for a, b in zip(steps, steps[1:]):
        end = traj.sample(a.result.trajectory, 0.5)
        np.testing.assert_array_equal(b.result.trajectory.q[0], end.q)
        np.testing.assert_array_equal(b.result.trajectory.qd[0], end.qd)
    np.testing.assert_array_equal(steps[-1].result.trajectory.q[-1], [1.2, 0, 0])


def test_human_entering_the_path_is_avoided():
    steps = list(plan.replan_loop(crossing_task()))
    first_seen = steps[1]
    assert first_seen.pre_human_cost > 1e-5
    assert first_seen.result.report.human < 1e-6


def test_replan_is_deterministic():
    a = list(plan.replan_loop(crossing_task()))
    b = list(plan.replan_loop(crossing_task()))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.result.trajectory.q, y.result.trajectory.q)
        np.testing.assert_array_equal(x.result.trajectory.qd, y.result.trajectory.qd)
        assert x.result.report == y.result.report


def test_empty_scene_matches_single_shot():
    far = synth.standing(position=(9.0, 9.0), duration=6.0)
    task = ReplanTask(Scene(arm(), samples_per_segment=8), [-1, 0.2, 0], [1, 0, 0], far, duration=3.0,
                      waypoints=6, weights=CostWeights(human=100.0), start_time=0.0)
    first = next(plan.replan_loop(task))
    init = traj.straight_line_init([-1, 0.2, 0], [1, 0, 0], 6, 3.0)
    single = plan.optimize(init, task.scene, task.weights, rng=np.random.default_rng([0, 0]))
    np.testing.assert_allclose(first.result.trajectory.q, single.trajectory.q, atol=1e-12)
    assert first.result.report.total == pytest.approx(single.report.total, abs=1e-12)


def test_shift_trajectory_is_exact_on_matching_grid():
    tr = random_traj(4)
    s = traj.sample(tr, 0.5)
    shifted = plan.shift_trajectory(tr, 0.5, 5, s.q, s.qd, tr.q[-1])
    for t in np.linspace(0, 2.5, 11):
        np.testing.assert_allclose(traj.sample(shifted, t).q, traj.sample(tr, t + 0.5).q, atol=1e-12)


def test_task_validation():
    with pytest.raises(ParameterError):
        crossing_task().__class__(Scene(arm()), [0, 0, 0], [1, 0, 0], synth.standing(), duration=4.0)
