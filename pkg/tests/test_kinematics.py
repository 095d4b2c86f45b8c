import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from locogen.assets import asset_path
from locogen.io.robot import load_robot
from locogen.kinematics import (
    Configuration,
    EndEffector,
    Joint,
    JointGroups,
    JointLimitError,
    Link,
    RobotModel,
    UnknownFrameError,
)
from locogen.pose import PlanarPose, Pose, poses_close


def two_link_arm() -> RobotModel:
    """Planar 2-link arm (unit links along +x, revolute about +z)."""
    links = [
        Link("root", None),
        Link("link1", "root", Pose.identity(), "j1"),
        Link("link2", "link1", Pose.from_translation([1, 0, 0]), "j2"),
    ]
    joints = [
        Joint("j1", "revolute", np.array([0, 0, 1.0]), (-math.pi, math.pi), "left_arm", "link1"),
        Joint("j2", "revolute", np.array([0, 0, 1.0]), (-math.pi, math.pi), "left_arm", "link2"),
    ]
    ees = [EndEffector("tip", "link2", Pose.from_translation([1, 0, 0]))]
    groups = JointGroups(legs=(), torso=(), left_arm=(0, 1), right_arm=(), left_hand=(), right_hand=())
    return RobotModel("two-link", links, joints, ees, groups, base_link="root")


@pytest.fixture(scope="module")
def testbot():
    model, _ = load_robot(asset_path("testbot.yaml"))
    return model


def fk_oracle(model: RobotModel, c: Configuration) -> dict[str, np.ndarray]:
    """Independent FK: explicit 4x4 matrix chain per link via scipy rotations."""

    def pose_mat(p: Pose) -> np.ndarray:
        m = np.eye(4)
        q = p.rotation
        m[:3, :3] = Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
        m[:3, 3] = p.translation
        return m

    base = np.eye(4)
    base[:3, :3] = Rotation.from_euler("z", c.base.yaw).as_matrix()
    base[:3, 3] = [c.base.x, c.base.y, c.base.height]
    out = {}
    joints = {j.name: j for j in model.joints}
    jidx = {j.name: i for i, j in enumerate(model.joints)}
    for link in model.links:
        if link.parent is None:
            out[link.name] = base
            continue
        m = out[link.parent] @ pose_mat(link.origin)
        if link.joint is not None:
            j = joints[link.joint]
            qv = c.q[jidx[link.joint]]
            motion = np.eye(4)
            if j.joint_type == "revolute":
                motion[:3, :3] = Rotation.from_rotvec(qv * j.axis).as_matrix()
            else:
                motion[:3, 3] = qv * j.axis
            m = m @ motion
        out[link.name] = m
    for name, ee in model.end_effectors.items():
        out[name] = out[ee.link] @ pose_mat(ee.offset)
    return out


def random_config(model: RobotModel, rng) -> Configuration:
    lo, hi = model.joint_limits
    q = rng.uniform(lo, hi)
    base = PlanarPose(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-3, 3), rng.uniform(0.5, 0.9))
    return model.configuration(base, q)


def test_two_link_straight():
    model = two_link_arm()
    c = model.configuration(PlanarPose(), [0.0, 0.0])
    fk = model.forward_kinematics(c)
    np.testing.assert_allclose(fk["tip"].translation, [2, 0, 0], atol=1e-12)


def test_two_link_first_joint_90deg():
    model = two_link_arm()
    c = model.configuration(PlanarPose(), [math.pi / 2, -math.pi / 2])
    fk = model.forward_kinematics(c)
    np.testing.assert_allclose(fk["tip"].translation, [1, 1, 0], atol=1e-12)


def test_fk_matches_matrix_chain_oracle(testbot):
    rng = np.random.default_rng(20)
    for _ in range(25):
        c = random_config(testbot, rng)
        fk = testbot.forward_kinematics(c)
        expected = fk_oracle(testbot, c)
        for frame, m in expected.items():
            np.testing.assert_allclose(fk[frame].to_matrix(), m, atol=1e-9, err_msg=frame)


def test_fk_base_equivariance(testbot):
    rng = np.random.default_rng(21)
    from locogen.pose import compose, planar_transform

    for _ in range(10):
        c = random_config(testbot, rng)
        t = PlanarPose(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-3, 3), 0.0)
        moved = c.with_base(planar_transform(t, c.base))
        fk0 = testbot.forward_kinematics(c)
        fk1 = testbot.forward_kinematics(moved)
        tp = t.to_pose()
        for frame in fk0:
            assert poses_close(fk1[frame], compose(tp, fk0[frame]), tol=1e-9), frame


def test_configuration_rejects_limit_violation(testbot):
    q = np.zeros(testbot.n_joints)
    q[testbot.groups.left_arm[0]] = 99.0
    with pytest.raises(JointLimitError):
        testbot.configuration(PlanarPose(), q)


def test_jacobian_empty_free_set(testbot):
    c = testbot.zero_configuration(PlanarPose(height=0.72))
    jac = testbot.jacobian(c, "right_hand", [])
    assert jac.shape == (6, 0)


def test_jacobian_single_revolute_lever_arm():
    model = two_link_arm()
    c = model.configuration(PlanarPose(), [0.0, 0.0])
    # Tip is 1 m from joint 2 (perpendicular lever): unit linear column.
    jac = model.jacobian(c, "tip", [1])
    assert np.linalg.norm(jac[:3, 0]) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(jac[3:, 0], [0, 0, 1], atol=1e-12)


def test_jacobian_matches_finite_differences(testbot):
    rng = np.random.default_rng(22)
    eps = 1e-6
    lo, hi = testbot.joint_limits
    for _ in range(100):
        q = rng.uniform(lo + 2 * eps, hi - 2 * eps)
        base = PlanarPose(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-2, 2), 0.72)
        c = testbot.configuration(base, q)
        frame = rng.choice(["left_hand", "right_hand", "chest"])
        ji = int(rng.integers(0, testbot.n_joints))
        jac = testbot.jacobian(c, frame, [ji])
        plus = testbot.frame_pose(c.with_q([ji], [q[ji] + eps]), frame)
        minus = testbot.frame_pose(c.with_q([ji], [q[ji] - eps]), frame)
        lin_fd = (plus.translation - minus.translation) / (2 * eps)
        np.testing.assert_allclose(jac[:3, 0], lin_fd, atol=1e-4)
        # Angular part via the relative quaternion's rotation vector.
        from locogen.pose import invert, compose

        rel = compose(plus, invert(minus))
        v = rel.rotation[1:]
        ang = 2 * math.atan2(np.linalg.norm(v), rel.rotation[0])
        if np.linalg.norm(v) > 1e-14:
            ang_fd = (v / np.linalg.norm(v)) * ang / (2 * eps)
        else:
            ang_fd = np.zeros(3)
        np.testing.assert_allclose(jac[3:, 0], ang_fd, atol=1e-4)


def rigid_component_oracle(model: RobotModel, frame: str, free_joints) -> set[str]:
    """Graph reachability over links, ignoring edges moved by free joints."""
    free = set(free_joints)
    jname_to_idx = {j.name: i for i, j in enumerate(model.joints)}
    edges: dict[str, set[str]] = {l.name: set() for l in model.links}
    for link in model.links:
        if link.parent is None:
            continue
        moved = link.joint is not None and jname_to_idx[link.joint] in free
        if not moved:
            edges[link.name].add(link.parent)
            edges[link.parent].add(link.name)
    start = model.frame_link(frame)
    seen, stack = {start}, [start]
    while stack:
        for nxt in edges[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def test_rigid_component_all_free(testbot):
    comp = testbot.rigid_component("right_hand", range(testbot.n_joints))
    # Palm only: every neighbor is connected through a joint.
    assert comp == {"r_palm"}


def test_rigid_component_none_free(testbot):
    comp = testbot.rigid_component("right_hand", [])
    assert comp == {l.name for l in testbot.links}


def test_rigid_component_arm_free(testbot):
    free = testbot.groups.right_arm
    comp = testbot.rigid_component("right_hand", free)
    assert comp == {"r_palm", "r_finger"}
    assert comp == rigid_component_oracle(testbot, "right_hand", free)


def test_rigid_component_matches_oracle_random(testbot):
    rng = np.random.default_rng(23)
    frames = testbot.frame_names()
    for _ in range(50):
        k = int(rng.integers(0, testbot.n_joints + 1))
        free = rng.choice(testbot.n_joints, size=k, replace=False).tolist()
        frame = frames[int(rng.integers(0, len(frames)))]
        assert testbot.rigid_component(frame, free) == rigid_component_oracle(testbot, frame, free)


def test_rigid_component_partitions_links(testbot):
    free = list(testbot.groups.arms + testbot.groups.torso)
    comps = []
    remaining = {l.name for l in testbot.links}
    while remaining:
        frame = sorted(remaining)[0]
        comp = testbot.rigid_component(frame, free)
        comps.append(comp)
        assert comp <= remaining
        remaining -= comp
    assert sum(len(c) for c in comps) == len(testbot.links)


def test_unknown_frame_raises(testbot):
    c = testbot.zero_configuration()
    with pytest.raises(UnknownFrameError):
        testbot.jacobian(c, "nope", [0])
    with pytest.raises(UnknownFrameError):
        testbot.rigid_component("nope", [])


def test_groups_partition(testbot):
    assert testbot.n_joints == 20
    testbot.groups.validate(testbot.n_joints)
    assert testbot.arm_of_frame("right_hand") == "right_arm"
    assert testbot.arm_of_frame("left_hand") == "left_arm"
    assert testbot.arm_of_frame("chest") is None
    assert testbot.hand_group_of_frame("right_hand") == testbot.groups.right_hand
