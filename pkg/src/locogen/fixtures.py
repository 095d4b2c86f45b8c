"""Bundled executable fixtures: a scripted source demonstration for the pick
scene, and a four-skill constraint fixture for the scheduler and validators.

The pick demo is scripted through the real executor with zero noise and zero
tracking error: walk to the table, reach over the widget, descend, close the
gripper, and lift. Regenerating it is deterministic, so fixtures are built on
demand instead of being checked in as large files.
"""

from __future__ import annotations

import shutil
from pathlib import Path

import numpy as np

from locogen.assets import asset_path
from locogen.config import ExecutorParams, GenConfig, IkParams, save_config
from locogen.executor import Action, KinematicExecutor, TrackingError, WorldState, check_success
from locogen.ik import IkTargets, solve_ik
from locogen.io.demo import SkillAnnotation, SourceDemo, save_demo
from locogen.io.robot import load_robot
from locogen.io.scene import Scene, load_scene
from locogen.kinematics import Configuration, RobotModel
from locogen.planning import plan_locomotion, plan_manipulation
from locogen.pose import PlanarPose, Pose, interpolate
from locogen.skills import ConstraintSet, DemoStep

PICK_STAND_BASE = PlanarPose(1.17, 0.21, 0.0, 0.72)
PICK_LIFT = 0.12
PICK_EE = "right_hand"


class _DemoRecorder:
    def __init__(self):
        self.steps: list[DemoStep] = []

    def __call__(self, state: WorldState, stored: Action, executed: Action) -> None:
        self.steps.append(DemoStep(state, stored))


def _grasp_point(scene: Scene) -> np.ndarray:
    """Grasp descent target: just above the widget's topmost collision sphere,
    leaving a small contact gap for the palm sphere (at EE +0.04 in z)."""
    widget = scene.object("widget")
    spheres = widget.spheres.spheres
    top = spheres[np.argmax(spheres[:, 2])]
    local = top[:3] + np.array([0.0, 0.0, -0.04 + 0.035 + top[3] + 0.002])
    return widget.pose.apply(local)


def _reach_orientation(model: RobotModel, stand: Configuration, target_pos, rng) -> Pose:
    """A feasible 6D pose at target_pos: orientation borrowed from the sampled
    arm configuration that lands closest while keeping the palm upright, so
    the later vertical lift stays inside the warm-start workspace."""
    arm = list(model.groups.right_arm)
    lo, hi = model.joint_limits
    best, best_score = None, np.inf
    for _ in range(400):
        q = stand.q.copy()
        q[arm] = rng.uniform(lo[arm], hi[arm])
        p = model.frame_pose(Configuration(stand.base, q), PICK_EE)
        d = float(np.linalg.norm(p.translation - target_pos))
        palm_z = p.apply([0.0, 0.0, 1.0]) - p.translation
        tilt = float(np.arccos(np.clip(palm_z[2], -1.0, 1.0)))
        score = d + 0.15 * tilt
        if score < best_score:
            best, best_score = p, score
    return Pose(best.rotation, np.asarray(target_pos, dtype=np.float64))


def _ee_step(model, executor, state, recorder, pose: Pose, hand: float, params: IkParams):
    """One IK-tracked step toward a Cartesian end-effector pose (torso+arm
    free), executed immediately."""
    free = sorted(set(model.groups.right_arm) | set(model.groups.torso))
    world = executor.world_at(state)
    sols = solve_ik(
        model, world, state.configuration, IkTargets({PICK_EE: pose}),
        free, allow_base=False, batch=1, seed=0, params=params,
    )
    if not sols:
        raise RuntimeError("fixture scripting: tracking IK failed")
    q_goal = sols[0].configuration.q
    hands = state.configuration.q[executor.hand_idx].copy()
    hands[executor.hand_idx.index(model.groups.right_hand[0])] = hand
    action = Action(
        q_goal[executor.upper_idx], hands,
        np.array([0.0, 0.0, 0.0, state.configuration.base.height]),
    )
    prev = state
    state = executor.step(prev, action)
    recorder(prev, action, action)
    return state


def _track_ee(model, executor, state, recorder, waypoint_poses, hand_target, params: IkParams):
    for pose, hand in zip(waypoint_poses, hand_target):
        state = _ee_step(model, executor, state, recorder, pose, hand, params)
    return state


def build_pick_demo(robot_file: str = "testbot.yaml", scene_file: str = "pick_scene.yaml") -> SourceDemo:
    """Script the single-arm pick demonstration on the nominal scene."""
    model, robot_allowed = load_robot(asset_path(robot_file))
    scene = load_scene(asset_path(scene_file))
    world = scene.collision_world(model, robot_allowed)
    params = ExecutorParams(tracking_eta=0.0)
    executor = KinematicExecutor(model, world, params, TrackingError())
    rec = _DemoRecorder()
    record = lambda s, a, e: rec(s, a, e)  # noqa: E731

    state = scene.nominal_state(model)
    ik_params = IkParams()

    # Walk to the manipulation stance.
    stand = Configuration(PICK_STAND_BASE, state.configuration.q)
    traj = plan_locomotion(model, world, state.configuration, stand, seed=101)
    if traj is None:
        raise RuntimeError("fixture scripting: locomotion plan failed")
    state, ok = executor.control_locomotion(state, traj, record=record)
    if not ok:
        raise RuntimeError("fixture scripting: locomotion did not converge")

    # Reach the hover pose above the grasp point.
    grasp_pos = _grasp_point(scene)
    hover_pos = grasp_pos + np.array([0.0, 0.0, 0.10])
    rng = np.random.default_rng(7)
    hover_pose = _reach_orientation(model, state.configuration, hover_pos, rng)
    free = sorted(set(model.groups.right_arm) | set(model.groups.torso))
    sols = solve_ik(
        model, executor.world_at(state), state.configuration,
        IkTargets({PICK_EE: hover_pose}), free, allow_base=False, batch=16, seed=102,
    )
    if not sols:
        raise RuntimeError("fixture scripting: hover IK failed")
    hover_cfg = sols[0].configuration
    traj = plan_manipulation(
        model, executor.world_at(state), state.configuration, hover_cfg, free,
        seed=103, step_bound=params.joint_rate_limit * params.dt,
    )
    if traj is None:
        raise RuntimeError("fixture scripting: transit plan failed")
    state = executor.control_manipulation(state, traj, record=record, settle=True)

    # Skill segment: descend until palm contact, close, lift - the annotation
    # re-expresses every end-effector pose against the widget.
    skill_start = len(rec.steps)
    for _ in range(60):
        gap = executor.contact_gap(state, PICK_EE, "widget")
        if gap <= 0.002:
            break
        cur = model.frame_pose(state.configuration, PICK_EE)
        drop = min(0.012, max(0.004, 0.5 * gap))
        target = Pose(cur.rotation, cur.translation + np.array([0.0, 0.0, -drop]))
        state = _ee_step(model, executor, state, record, target, 0.0, ik_params)
    else:
        raise RuntimeError("fixture scripting: descent never reached contact")
    grasp_pose = model.frame_pose(state.configuration, PICK_EE)
    n_close = 35  # 1.2 rad of closure at the 0.04 rad/step rate limit
    closing = [min(1.2, 0.04 * (k + 1)) for k in range(n_close)]
    state = _track_ee(model, executor, state, record, [grasp_pose] * n_close, closing, ik_params)
    if PICK_EE not in state.attachments:
        raise RuntimeError("fixture scripting: grasp did not attach")
    n_up = 30
    rise_step = PICK_LIFT / n_up
    for _ in range(n_up):
        # Track position upward while the wrist orientation floats with the
        # arm, keeping the whole lift inside the warm-start workspace.
        cur = model.frame_pose(state.configuration, PICK_EE)
        target = Pose(cur.rotation, cur.translation + np.array([0.0, 0.0, rise_step]))
        state = _ee_step(model, executor, state, record, target, 1.2, ik_params)
    skill_end = len(rec.steps)

    if not check_success(model, state, scene.success):
        raise RuntimeError("fixture scripting: demo did not satisfy the success predicate")

    return SourceDemo(
        name="pick-widget-demo",
        robot_path=robot_file,
        scene_path=scene_file,
        steps=tuple(rec.steps),
        final_state=state,
        skills=(SkillAnnotation("pick-widget", PICK_EE, "widget", skill_start, skill_end),),
        constraints=ConstraintSet(),
    )


def build_shelf_constraint_demo(robot_file: str = "testbot.yaml") -> tuple[SourceDemo, Scene]:
    """Minimal bimanual transfer demo used by the scheduler and validator
    tests: two picks then two places, picks coordinated, places coordinated.
    The step payload is a short hold, the constraint annotation is the point."""
    model, _ = load_robot(asset_path(robot_file))
    from locogen.collision import SphereSet
    from locogen.io.scene import SceneObject
    from locogen.executor import FrameAboveHeight, SuccessPredicate

    objects = (
        SceneObject(
            "box", True, Pose.from_translation([1.4, 0.25, 0.9]),
            SphereSet("box", np.array([[0, 0, 0, 0.05]])), None, 16, None,
        ),
        SceneObject(
            "shelf", False, Pose.from_translation([1.4, -0.6, 1.0]),
            SphereSet("shelf", np.array([[0, 0, 0, 0.08]])), None, 16, None,
        ),
    )
    scene = Scene(
        name="shelf-fixture",
        robot_start=PlanarPose(0, 0, 0, 0.72),
        objects=objects,
        allow_contact=frozenset(),
        success=SuccessPredicate((FrameAboveHeight("box", 0.0),)),
    )
    state = scene.nominal_state(model)
    executor = KinematicExecutor(
        model, scene.collision_world(model), ExecutorParams(tracking_eta=0.0), TrackingError()
    )
    hold = executor.hold_action(state)
    steps = []
    for _ in range(12):
        steps.append(DemoStep(state, hold))
        state = executor.step(state, hold)
    demo = SourceDemo(
        name="table-to-shelf-fixture",
        robot_path=robot_file,
        scene_path="shelf_scene.yaml",
        steps=tuple(steps),
        final_state=state,
        skills=(
            SkillAnnotation("pick-left", "left_hand", "box", 0, 6),
            SkillAnnotation("pick-right", "right_hand", "box", 0, 6),
            SkillAnnotation("place-left", "left_hand", "shelf", 6, 12),
            SkillAnnotation("place-right", "right_hand", "shelf", 6, 12),
        ),
        constraints=ConstraintSet(
            precedence={("pick-left", "place-left"), ("pick-right", "place-right")},
            coordination={
                frozenset(("pick-left", "pick-right")),
                frozenset(("place-left", "place-right")),
            },
        ),
    )
    return demo, scene


def materialize(out_dir: str | Path) -> dict[str, Path]:
    """Write the bundled fixture set (robot, scene, scripted demo, default
    config) into a directory; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    robot = out / "testbot.yaml"
    scene = out / "pick_scene.yaml"
    shutil.copyfile(asset_path("testbot.yaml"), robot)
    shutil.copyfile(asset_path("pick_scene.yaml"), scene)
    demo_path = out / "pick_demo.yaml"
    save_demo(demo_path, build_pick_demo())
    config_path = out / "default_config.yaml"
    save_config(config_path, GenConfig())
    return {"robot": robot, "scene": scene, "demo": demo_path, "config": config_path}
