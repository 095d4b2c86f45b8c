import math

import numpy as np
import pytest

from locogen.assets import asset_path
from locogen.collision import CollisionWorld, ObjectBody, SphereSet
from locogen.config import ExecutorParams
from locogen.executor import (
    Action,
    CommandLimitError,
    FrameAboveHeight,
    FrameInRegion,
    KinematicExecutor,
    RelativePoseWithin,
    SuccessPredicate,
    TrackingError,
    WorldState,
    check_success,
)
from locogen.io.robot import load_robot
from locogen.kinematics import Configuration
from locogen.planning import Trajectory, plan_locomotion
from locogen.pose import PlanarPose, Pose, compose, invert, poses_close


@pytest.fixture(scope="module")
def testbot():
    model, _ = load_robot(asset_path("testbot.yaml"))
    return model


def make_executor(testbot, objects=(), tracking=None, params=None):
    world = CollisionWorld.build(testbot, list(objects))
    return KinematicExecutor(testbot, world, params or ExecutorParams(), tracking)


def initial_state(testbot, objects=None, x=0.0) -> WorldState:
    c = testbot.zero_configuration(PlanarPose(x, 0, 0, 0.72))
    return WorldState(c, dict(objects or {}))


def widget(testbot, pose, name="widget", r=0.02):
    return ObjectBody(name, SphereSet(name, np.array([[0, 0, 0, r]])), pose, True)


def test_zero_action_only_advances_time(testbot):
    ex = make_executor(testbot)
    s0 = initial_state(testbot)
    a = ex.hold_action(s0)
    s1 = ex.step(s0, a)
    assert s1.time_step == 1
    np.testing.assert_array_equal(s1.configuration.q, s0.configuration.q)
    assert s1.configuration.base == s0.configuration.base


def test_exact_integration_without_tracking_error(testbot):
    ex = make_executor(testbot)
    s = initial_state(testbot)
    a = Action(ex.hold_action(s).upper, ex.hold_action(s).hands, [0.5, 0, 0, 0.72])
    for _ in range(100):  # 2 s at dt=0.02
        s = ex.step(s, a)
    assert s.configuration.base.x == pytest.approx(1.0, abs=1e-12)
    assert s.configuration.base.y == pytest.approx(0.0, abs=1e-12)


def test_tracking_error_bounded_and_replayable(testbot):
    rng = np.random.default_rng(42)
    tr = TrackingError.sample(rng, eta=0.05, yaw_bias_scale=0.0)
    ex = make_executor(testbot, tracking=tr)
    s = initial_state(testbot)
    hold = ex.hold_action(s)
    a = Action(hold.upper, hold.hands, [0.5, 0, 0, 0.72])
    for _ in range(100):
        s = ex.step(s, a)
    assert 0.95 <= s.configuration.base.x <= 1.05
    # Replay with the same tracking parameters is bit-identical.
    ex2 = make_executor(testbot, tracking=TrackingError.from_array(tr.as_array()))
    s2 = initial_state(testbot)
    for _ in range(100):
        s2 = ex2.step(s2, a)
    assert s2.configuration.base == s.configuration.base
    np.testing.assert_array_equal(s2.configuration.q, s.configuration.q)


def test_command_limit_violation_raises(testbot):
    ex = make_executor(testbot)
    s = initial_state(testbot)
    hold = ex.hold_action(s)
    with pytest.raises(CommandLimitError):
        ex.step(s, Action(hold.upper, hold.hands, [0.9, 0, 0, 0.72]))


def test_targets_clamped_with_event(testbot):
    ex = make_executor(testbot)
    s = initial_state(testbot)
    hold = ex.hold_action(s)
    upper = hold.upper.copy()
    upper[0] = 99.0  # way past the torso yaw limit
    assert ex.clamp_events == 0
    s = ex.step(s, Action(upper, hold.hands, [0, 0, 0, 0.72]))
    assert ex.clamp_events == 1
    lo, hi = testbot.joint_limits
    assert np.all(s.configuration.q >= lo - 1e-12) and np.all(s.configuration.q <= hi + 1e-12)


def test_rate_limit_and_exact_arrival(testbot):
    ex = make_executor(testbot)
    s = initial_state(testbot)
    hold = ex.hold_action(s)
    upper = hold.upper.copy()
    ti = ex.upper_idx.index(testbot.groups.torso[0])
    upper[ti] = 0.1
    s1 = ex.step(s, Action(upper, hold.hands, [0, 0, 0, 0.72]))
    # 2 rad/s * 0.02 s = 0.04 per step.
    assert s1.configuration.q[testbot.groups.torso[0]] == pytest.approx(0.04)
    s2 = ex.step(s1, Action(upper, hold.hands, [0, 0, 0, 0.72]))
    s3 = ex.step(s2, Action(upper, hold.hands, [0, 0, 0, 0.72]))
    assert s3.configuration.q[testbot.groups.torso[0]] == pytest.approx(0.1)  # lands exactly


def grasp_state(testbot, ex, closed: bool):
    """State with the right hand at the widget; optionally closed."""
    c = testbot.zero_configuration(PlanarPose(height=0.72))
    grip_pose = testbot.frame_pose(c, "right_hand")
    if closed:
        c = c.with_q(testbot.groups.right_hand, [1.0])
    return WorldState(c, {"widget": Pose.from_translation(grip_pose.translation)})


def test_grasp_detect_requires_closure(testbot):
    c = testbot.zero_configuration(PlanarPose(height=0.72))
    w = widget(testbot, Pose.from_translation(testbot.frame_pose(c, "right_hand").translation))
    ex = make_executor(testbot, [w])
    open_state = grasp_state(testbot, ex, closed=False)
    assert ex.grasp_detect(open_state) == []
    closed = grasp_state(testbot, ex, closed=True)
    assert ("right_hand", "widget") in ex.grasp_detect(closed)


def test_grasp_detect_margin(testbot):
    c = testbot.zero_configuration(PlanarPose(height=0.72))
    palm_sphere_world = testbot.frame_pose(c, "r_palm").apply([0, 0, -0.03])
    # Surface gap of 3 mm between the palm sphere (r=0.035) and widget (r=0.02).
    pos = palm_sphere_world + np.array([0.035 + 0.02 + 0.003, 0.0, 0.0])
    w = widget(testbot, Pose.from_translation(pos))
    ex = make_executor(testbot, [w])
    state = WorldState(
        c.with_q(testbot.groups.right_hand, [1.0]), {"widget": Pose.from_translation(pos)}
    )
    assert ("right_hand", "widget") in ex.grasp_detect(state)
    far = pos + np.array([0.004, 0, 0])  # 7 mm gap: beyond the margin
    state2 = WorldState(
        c.with_q(testbot.groups.right_hand, [1.0]), {"widget": Pose.from_translation(far)}
    )
    ex2 = make_executor(testbot, [widget(testbot, Pose.from_translation(far))])
    assert ex2.grasp_detect(state2) == []


def test_attachment_rigidity_through_motion(testbot):
    c = testbot.zero_configuration(PlanarPose(height=0.72))
    pos = testbot.frame_pose(c, "right_hand").translation
    w = widget(testbot, Pose.from_translation(pos))
    ex = make_executor(testbot, [w])
    s = WorldState(c, {"widget": Pose.from_translation(pos)})
    hold = ex.hold_action(s)
    hands = hold.hands.copy()
    hands[ex.hand_idx.index(testbot.groups.right_hand[0])] = 1.0
    s = ex.step(s, Action(hold.upper, hands, [0, 0, 0, 0.72]))
    for _ in range(20):
        s = ex.step(s, Action(hold.upper, hands, [0, 0, 0, 0.72]))
    assert "right_hand" in s.attachments
    rel0 = s.attachments["right_hand"].offset
    # Drive the arm around; the object must ride along rigidly.
    upper = hold.upper.copy()
    for j, v in zip(testbot.groups.right_arm, [-0.8, 0.1, 0.3, -0.9, 0.4, 0.2]):
        upper[ex.upper_idx.index(j)] = v
    for _ in range(60):
        s = ex.step(s, Action(upper, hands, [0.2, 0, 0.3, 0.72]))
    fk = testbot.forward_kinematics(s.configuration)
    rel = compose(invert(fk["right_hand"]), s.object_poses["widget"])
    assert poses_close(rel, rel0, tol=1e-9)


def test_release_drops_object_in_place(testbot):
    c = testbot.zero_configuration(PlanarPose(height=0.72))
    pos = testbot.frame_pose(c, "right_hand").translation
    ex = make_executor(testbot, [widget(testbot, Pose.from_translation(pos))])
    s = WorldState(c, {"widget": Pose.from_translation(pos)})
    hold = ex.hold_action(s)
    hands = hold.hands.copy()
    hands[ex.hand_idx.index(testbot.groups.right_hand[0])] = 1.0
    for _ in range(30):
        s = ex.step(s, Action(hold.upper, hands, [0, 0, 0, 0.72]))
    assert s.attachments
    before = s.object_poses["widget"]
    open_hands = hold.hands.copy()
    for _ in range(40):
        s = ex.step(s, Action(hold.upper, open_hands, [0, 0, 0, 0.72]))
    assert not s.attachments
    assert poses_close(s.object_poses["widget"], before, tol=1e-9)


def test_control_locomotion_trivial(testbot):
    ex = make_executor(testbot)
    s = initial_state(testbot)
    traj = Trajectory("locomotion", [s.configuration, s.configuration], 0.02)
    out, ok = ex.control_locomotion(s, traj)
    assert ok and out.time_step <= 1


def test_control_locomotion_converges_exactly_without_error(testbot):
    ex = make_executor(testbot)
    world = CollisionWorld.build(testbot, [])
    s = initial_state(testbot)
    goal = Configuration(PlanarPose(1.2, 0.3, 0.6, 0.72), s.configuration.q)
    traj = plan_locomotion(testbot, world, s.configuration, goal, seed=0)
    out, ok = ex.control_locomotion(s, traj)
    assert ok
    b = out.configuration.base
    assert math.hypot(b.x - 1.2, b.y - 0.3) <= 0.02
    assert abs(b.yaw - 0.6) <= 0.05


def test_control_locomotion_multiseed_convergence(testbot):
    world = CollisionWorld.build(testbot, [])
    s = initial_state(testbot)
    goal = Configuration(PlanarPose(1.0, -0.2, 0.4, 0.72), s.configuration.q)
    traj = plan_locomotion(testbot, world, s.configuration, goal, seed=1)
    ok_count = 0
    for k in range(200):
        tr = TrackingError.sample(np.random.default_rng(1000 + k), 0.05, 0.4)
        ex = make_executor(testbot, tracking=tr)
        out, ok = ex.control_locomotion(s, traj)
        if ok:
            b = out.configuration.base
            assert math.hypot(b.x - 1.0, b.y + 0.2) <= 0.02
            assert abs(b.yaw - 0.4) <= 0.05
            ok_count += 1
    assert ok_count >= 190  # >= 95% of 200 seeded runs


def test_control_manipulation_exact_terminal(testbot):
    from locogen.planning import plan_manipulation

    ex = make_executor(testbot)
    world = CollisionWorld.build(testbot, [])
    s = initial_state(testbot)
    arm = list(testbot.groups.right_arm)
    goal = s.configuration.with_q(arm, [-0.9, 0.1, 0.2, -0.8, 0.2, 0.1])
    # Densified to the rate bound so every step lands on its waypoint.
    traj = plan_manipulation(testbot, world, s.configuration, goal, arm, seed=2,
                             step_bound=0.04)
    out = ex.control_manipulation(s, traj)
    np.testing.assert_allclose(out.configuration.q, goal.q, atol=1e-12)


def test_control_manipulation_hold(testbot):
    ex = make_executor(testbot)
    s = initial_state(testbot)
    traj = Trajectory("manipulation", [s.configuration, s.configuration], 0.02)
    out = ex.control_manipulation(s, traj)
    np.testing.assert_array_equal(out.configuration.q, s.configuration.q)


def test_check_success_atoms(testbot):
    s = initial_state(testbot, objects={"box": Pose.from_translation([1, 0, 0.9])})
    above = SuccessPredicate((FrameAboveHeight("box", 0.8),))
    below = SuccessPredicate((FrameAboveHeight("box", 1.1),))
    assert check_success(testbot, s, above)
    assert not check_success(testbot, s, below)
    empty_region = SuccessPredicate((FrameInRegion("box", (0, 0, 0), (0, 0, 0)),))
    assert not check_success(testbot, s, empty_region)
    rel = SuccessPredicate(
        (RelativePoseWithin("box", "pelvis", Pose.from_translation([1, 0, 0.18]), 0.05, 0.1),)
    )
    assert check_success(testbot, s, rel)
    with pytest.raises(KeyError):
        check_success(testbot, s, SuccessPredicate((FrameAboveHeight("ghost", 0.0),)))


def test_determinism_bitwise(testbot):
    rng = np.random.default_rng(7)
    tr = TrackingError.sample(rng, 0.05, 0.4)
    actions = []
    ex = make_executor(testbot, tracking=tr)
    s = initial_state(testbot)
    hold = ex.hold_action(s)
    gen = np.random.default_rng(8)
    states1 = [s]
    for _ in range(50):
        a = Action(
            hold.upper + gen.normal(0, 0.01, len(hold.upper)),
            hold.hands,
            [gen.uniform(-0.5, 0.5), 0, gen.uniform(-0.5, 0.5), 0.72],
        )
        actions.append(a)
        s = ex.step(s, a)
        states1.append(s)
    ex2 = make_executor(testbot, tracking=tr)
    s2 = initial_state(testbot)
    for i, a in enumerate(actions):
        s2 = ex2.step(s2, a)
        np.testing.assert_array_equal(s2.configuration.q, states1[i + 1].configuration.q)
        assert s2.configuration.base == states1[i + 1].configuration.base
