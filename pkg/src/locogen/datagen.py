"""Top-level episode generation: adapt annotated skills to a new scene by
interleaving whole-body IK, locomotion and manipulation planning, and
object-frame skill replay, then verify success.

One episode runs the frontier loop: pick every skill whose predecessors are
done, adapt each one's first demonstrated end-effector pose to the current
object pose, solve ladder IK for a batch of stance candidates, walk to the
first candidate whose locomotion plan succeeds, re-plan the upper body from
the achieved stance, replay the adapted skill demonstrations step by step
with per-step IK, and finally evaluate the scene's success predicate. Any
failure discards the episode with a stage label for the stats report.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from locogen.collision import CollisionWorld, shrink_colliding
from locogen.config import GenConfig
from locogen.episodes import (
    ALL_STAGES,
    Episode,
    EpisodeRecorder,
    GenStats,
    SEG_LOCOMOTION,
    SEG_SKILL,
    SEG_TRANSIT,
    STAGE_IK,
    STAGE_INIT,
    STAGE_LOCO_EXEC,
    STAGE_LOCO_PLAN,
    STAGE_MANIP_PLAN,
    STAGE_PREDICATE,
    STAGE_SKILL_IK,
)
from locogen.executor import Action, KinematicExecutor, TrackingError, WorldState, check_success
from locogen.ik import IkTargets, solve_ik, whole_inv_kinematics
from locogen.io.demo import SourceDemo, file_sha256, validate_source_demo
from locogen.io.scene import Scene
from locogen.kinematics import Configuration, RobotModel
from locogen.planning import MANIPULATION, Trajectory, plan_locomotion, plan_manipulation
from locogen.pose import PlanarPose
from locogen.skills import SkillDemo, action_ee_pose, adapt_pose, frontier, reduce_coordination

# Sub-stream ids for per-attempt seed derivation.
_RNG_SCENE, _RNG_INIT, _RNG_TRACKING, _RNG_NOISE, _RNG_IK, _RNG_PLAN = range(6)


def derive_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass(frozen=True)
class GenerationOutcome:
    episode: Episode | None
    failure_stage: str | None

    @property
    def success(self) -> bool:
        return self.episode is not None


def inject_noise(a: Action, sigma: float, rng: np.random.Generator) -> tuple[Action, Action]:
    """(executed, stored): Gaussian perturbation on upper-body and hand joint
    targets; the base command and the stored label stay untouched."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0.0:
        return a, a
    executed = Action(
        a.upper + rng.normal(0.0, sigma, a.upper.shape),
        a.hands + rng.normal(0.0, sigma, a.hands.shape),
        a.base_command,
    )
    return executed, a


def perturb_init(
    state: WorldState,
    world: CollisionWorld,
    ranges: tuple[float, float, float],
    rng: np.random.Generator,
    max_tries: int = 100,
) -> WorldState | None:
    """Uniformly offset the base pose within ranges, rejection-resampling
    until collision-free; None when no free pose is found. Objects are left
    to the scene's own initial-pose distribution."""
    rx, ry, ryaw = ranges
    if rx == 0.0 and ry == 0.0 and ryaw == 0.0:
        return state
    base = state.configuration.base
    for _ in range(max_tries):
        cand = PlanarPose(
            base.x + rng.uniform(-rx, rx),
            base.y + rng.uniform(-ry, ry),
            base.yaw + rng.uniform(-ryaw, ryaw),
            base.height,
        )
        cfg = Configuration(cand, state.configuration.q)
        from locogen.collision import check_collision

        if not check_collision(world.with_object_poses(state.object_poses), cfg):
            return WorldState(cfg, dict(state.object_poses), dict(state.attachments), 0)
    return None


def _hand_slice(model: RobotModel, ee: str) -> list[int]:
    """Positions of an end-effector's hand joints inside the hands vector."""
    hands = list(model.groups.hands)
    return [hands.index(j) for j in model.hand_group_of_frame(ee)]


def adapt_skill_demos(
    model: RobotModel,
    world: CollisionWorld,
    state: WorldState,
    frontier_skills: list[SkillDemo],
    cfg: GenConfig,
    seed: int,
) -> Trajectory | None:
    """Adapted skill trajectory for one frontier.

    Object poses are captured once at frontier start. At output index t,
    every skill still running contributes its t-th demonstrated action pose,
    re-anchored to the captured object pose; skills whose demo has ended hold
    their final target. Each waypoint comes from torso+arms IK warm-started
    at the previous waypoint, with hand joints copied verbatim from the
    demos. None on any IK failure.
    """
    ees = [s.ee for s in frontier_skills]
    if len(set(ees)) != len(ees):
        raise ValueError("frontier skills must use distinct end-effectors")
    captured = {s.id: state.object_poses[s.object_frame] for s in frontier_skills}
    reference = {s.id: s.steps[0].state.object_poses[s.object_frame] for s in frontier_skills}
    free = sorted(model.groups.upper_body)
    hand_pos = {s.id: _hand_slice(model, s.ee) for s in frontier_skills}
    hand_idx_full = list(model.groups.hands)

    prev = state.configuration
    waypoints = [prev]
    last_target = {}
    last_hands = {}
    horizon = max(len(s) for s in frontier_skills)
    for t in range(horizon):
        targets = {}
        for s in frontier_skills:
            if t < len(s):
                step = s.steps[t]
                ee_pose = action_ee_pose(model, step.state, step.action, s.ee)
                targets[s.ee] = adapt_pose(captured[s.id], reference[s.id], ee_pose)
                last_target[s.ee] = targets[s.ee]
                last_hands[s.id] = step.action.hands[hand_pos[s.id]]
            else:
                targets[s.ee] = last_target[s.ee]
        sols = solve_ik(
            model, world, prev, IkTargets(targets), free,
            allow_base=False, batch=cfg.skill_ik_batch,
            seed=derive_seed(seed, t), params=cfg.ik,
        )
        if not sols:
            return None
        q = sols[0].configuration.q.copy()
        for s in frontier_skills:
            group = list(model.hand_group_of_frame(s.ee))
            q[group] = model.clamp_q_subset(last_hands[s.id], group)
        prev = Configuration(sols[0].configuration.base, q)
        waypoints.append(prev)
    if len(waypoints) < 2:
        return None
    return Trajectory(MANIPULATION, waypoints, cfg.executor.dt)


def generate_episode(
    model: RobotModel,
    world: CollisionWorld,
    s0: WorldState,
    skills: list[SkillDemo],
    precedence: frozenset,
    pred,
    cfg: GenConfig,
    seed: int,
    demo_name: str = "",
) -> GenerationOutcome:
    """One generation attempt; the precedence relation must already be
    reduced and acyclic."""
    tracking = TrackingError.sample(
        np.random.default_rng(np.random.SeedSequence([seed, _RNG_TRACKING])),
        cfg.executor.tracking_eta,
        cfg.executor.yaw_bias_scale,
    )
    noise_rng = np.random.default_rng(np.random.SeedSequence([seed, _RNG_NOISE]))
    executor = KinematicExecutor(model, world, cfg.executor, tracking)
    recorder = EpisodeRecorder(demo_name)

    def noise(a: Action) -> Action:
        return inject_noise(a, cfg.motion_noise_sigma, noise_rng)[0]

    def fail(stage: str) -> GenerationOutcome:
        return GenerationOutcome(None, stage)

    demos = {s.id: s for s in skills}
    remaining = set(demos)
    state = s0
    step_bound = min(cfg.planner.joint_step, cfg.executor.joint_rate_limit * cfg.executor.dt)
    call = 0
    while remaining:
        group = sorted(frontier(remaining, precedence))
        remaining -= set(group)
        frontier_skills = [demos[g] for g in group]

        # End-effector targets: first demo state pose, re-anchored to the
        # current object pose.
        targets = {}
        for s in frontier_skills:
            first = s.steps[0].state
            demo_ee = model.frame_pose(first.configuration, s.ee)
            targets[s.ee] = adapt_pose(
                state.object_poses[s.object_frame],
                first.object_poses[s.object_frame],
                demo_ee,
            )
        world_now = executor.world_at(state)
        candidates = whole_inv_kinematics(
            model, world_now, state.configuration, IkTargets(targets),
            seed=derive_seed(seed, _RNG_IK, call), params=cfg.ik, batch=cfg.ik_batch,
        )
        if not candidates:
            return fail(STAGE_IK)

        chosen = None
        loco_world = shrink_colliding(world_now, state.configuration)
        for ci, cand in enumerate(candidates):
            switch = Configuration(cand.configuration.base, state.configuration.q)
            traj = plan_locomotion(
                model, loco_world, state.configuration, switch,
                seed=derive_seed(seed, _RNG_PLAN, call, ci),
                params=cfg.planner, timestep=cfg.executor.dt,
            )
            if traj is None:
                continue
            recorder.begin_segment(SEG_LOCOMOTION)
            state, ok = executor.control_locomotion(state, traj, record=recorder, noise=noise)
            recorder.end_segment()
            if not ok:
                return fail(STAGE_LOCO_EXEC)
            chosen = cand
            break
        if chosen is None:
            return fail(STAGE_LOCO_PLAN)

        # Manipulation transit to the IK configuration at the achieved stance.
        goal = Configuration(state.configuration.base, chosen.configuration.q)
        world_now = executor.world_at(state)
        traj = plan_manipulation(
            model, shrink_colliding(world_now, state.configuration),
            state.configuration, goal, sorted(model.groups.upper_body),
            seed=derive_seed(seed, _RNG_PLAN, call, 1000),
            params=cfg.planner, step_bound=step_bound, timestep=cfg.executor.dt,
        )
        if traj is None:
            return fail(STAGE_MANIP_PLAN)
        recorder.begin_segment(SEG_TRANSIT)
        state = executor.control_manipulation(state, traj, record=recorder, noise=noise, settle=True)
        recorder.end_segment()

        # Object-frame skill replay.
        world_now = executor.world_at(state)
        replay = adapt_skill_demos(
            model, shrink_colliding(world_now, state.configuration),
            state, frontier_skills, cfg, derive_seed(seed, _RNG_IK, call, 1),
        )
        if replay is None:
            return fail(STAGE_SKILL_IK)
        recorder.begin_segment(SEG_SKILL, group)
        state = executor.control_manipulation(state, replay, record=recorder, noise=noise, settle=True)
        recorder.end_segment()
        call += 1

    if not check_success(model, state, pred):
        return fail(STAGE_PREDICATE)
    return GenerationOutcome(recorder.finish(state, True, seed, tracking), None)


def dataset_header(
    demo: SourceDemo,
    model: RobotModel,
    scene: Scene,
    cfg: GenConfig,
    paths: dict,
    stats: GenStats,
    requested: int,
    identity_init: bool,
) -> dict:
    return {
        "robot": demo.robot_path,
        "scene": demo.scene_path,
        "demo": str(paths.get("demo", "")),
        "robot_sha256": paths.get("robot_sha256"),
        "scene_sha256": paths.get("scene_sha256"),
        "demo_sha256": paths.get("demo_sha256"),
        "demo_name": demo.name,
        "gen_config": cfg.to_dict(),
        "seed": cfg.seed,
        "requested": requested,
        "identity_init": identity_init,
        "n_joints": model.n_joints,
        "object_names": sorted(o.name for o in scene.objects),
        "ee_names": sorted(model.end_effectors),
        "n_upper": len(model.groups.upper_body),
        "n_hands": len(model.groups.hands),
        "stats": stats.to_dict(),
    }


@dataclass
class GenerationReport:
    stats: GenStats
    wall_time_s: float
    episodes: list[Episode]
    header: dict


def generate_dataset(
    scene: Scene,
    demo: SourceDemo,
    model: RobotModel,
    n: int,
    cfg: GenConfig,
    out_path: str | Path | None = None,
    robot_allowed=frozenset(),
    identity_init: bool = False,
    input_paths: dict | None = None,
    progress=None,
) -> GenerationReport:
    """Run generation attempts until n successes or the retry budget runs
    out; optionally write the dataset file. Fully reproducible from
    (scene, demo, cfg.seed)."""
    if n < 1:
        raise ValueError("need n >= 1")
    diagnostics = validate_source_demo(demo, model, scene)
    if diagnostics:
        raise ValueError("invalid source demo: " + "; ".join(str(d) for d in diagnostics))
    skills = demo.skill_demos()
    reduced = reduce_coordination([s.id for s in skills], demo.constraints)
    world = scene.collision_world(model, robot_allowed)

    stats = GenStats()
    episodes: list[Episode] = []
    t0 = time.perf_counter()
    max_attempts = cfg.retry_factor * n
    attempt = 0
    while len(episodes) < n and attempt < max_attempts:
        seed = derive_seed(cfg.seed, attempt)
        scene_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, attempt, _RNG_SCENE]))
        init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, attempt, _RNG_INIT]))
        attempt += 1
        stats.attempts += 1
        s0 = demo.initial_state if identity_init else scene.sample_initial_state(model, scene_rng)
        s0 = WorldState(s0.configuration, dict(s0.object_poses), {}, 0)
        ranges = (cfg.init_perturb_x, cfg.init_perturb_y, cfg.init_perturb_yaw)
        s0 = perturb_init(s0, world, ranges, init_rng)
        if s0 is None:
            stats.record_failure(STAGE_INIT)
            continue
        outcome = generate_episode(
            model, world, s0, skills, reduced.precedence, scene.success, cfg, seed, demo.name
        )
        if outcome.episode is not None:
            episodes.append(outcome.episode)
            stats.successes += 1
        else:
            stats.record_failure(outcome.failure_stage)
        if progress:
            progress(stats)
    wall = time.perf_counter() - t0

    paths = dict(input_paths or {})
    header = dataset_header(demo, model, scene, cfg, paths, stats, n, identity_init)
    if out_path is not None:
        from locogen.io.dataset import write_dataset

        write_dataset(out_path, header, episodes)
    return GenerationReport(stats, wall, episodes, header)


def replay_episode(
    model: RobotModel,
    world: CollisionWorld,
    episode: Episode,
    cfg: GenConfig,
    pred,
    tol: float = 1e-6,
) -> tuple[float, bool]:
    """Re-execute an episode's executed actions through a zero-fresh-noise
    executor with the recorded tracking parameters; returns the worst state
    deviation and whether the success predicate holds at the end."""
    executor = KinematicExecutor(model, world, cfg.executor, episode.tracking)
    state = episode.steps[0].state
    worst = 0.0

    def dev(a: WorldState, b: WorldState) -> float:
        d = float(np.max(np.abs(a.configuration.q - b.configuration.q)))
        d = max(d, float(np.max(np.abs(a.configuration.base.as_array() - b.configuration.base.as_array()))))
        for name, pose in a.object_poses.items():
            d = max(d, float(np.max(np.abs(pose.as_array() - b.object_poses[name].as_array()))))
        return d

    for i, step in enumerate(episode.steps):
        state = executor.step(state, step.executed)
        recorded = episode.steps[i + 1].state if i + 1 < len(episode.steps) else episode.final_state
        worst = max(worst, dev(state, recorded))
    ok = check_success(model, state, pred)
    return worst, ok
