"""Whole-body multi-end-effector inverse kinematics.

solve_ik runs a batch of damped-least-squares solves from seeded restarts and
keeps only converged, in-limit, collision-free solutions (checked against a
contact-shrunk world). whole_inv_kinematics wraps it in the joint-group lock
ladder: free the arms first, then progressively torso and base mobility, and
return the solutions of the first level that succeeds — preferring solutions
that leave as many joint groups as possible untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from locogen.collision import CollisionWorld, check_collision, shrink_colliding
from locogen.config import IkParams
from locogen.kinematics import Configuration, RobotModel, UnknownFrameError
from locogen.pose import PlanarPose, Pose, quat_conjugate, quat_multiply


@dataclass(frozen=True)
class IkTargets:
    """End-effector pose targets; one or two entries, on distinct arms."""

    targets: dict[str, Pose]

    def __post_init__(self):
        if not self.targets:
            raise ValueError("need at least one target")
        if len(self.targets) > 2:
            raise ValueError("at most two end-effectors can be targeted")

    def frames(self) -> list[str]:
        return list(self.targets)

    def items(self):
        return self.targets.items()


@dataclass(frozen=True)
class IkSolution:
    configuration: Configuration
    residuals: dict[str, tuple[float, float]]  # frame -> (pos err m, ori err rad)
    ladder_level: int
    restart: int

    @property
    def total_residual(self) -> float:
        return sum(p + o for p, o in self.residuals.values())


def _pose_errors(current: Pose, target: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Position delta and world-frame rotation vector from current to target."""
    pos = target.translation - current.translation
    q_rel = quat_multiply(target.rotation, quat_conjugate(current.rotation))
    v = q_rel[1:]
    s = np.linalg.norm(v)
    angle = 2.0 * math.atan2(s, abs(float(q_rel[0])))
    if s < 1e-14:
        return pos, np.zeros(3)
    sign = 1.0 if q_rel[0] >= 0 else -1.0
    return pos, (sign * angle / s) * v


def _residuals(poses: dict[str, Pose], targets: IkTargets) -> dict[str, tuple[float, float]]:
    out = {}
    for frame, goal in targets.items():
        pos, rot = _pose_errors(poses[frame], goal)
        out[frame] = (float(np.linalg.norm(pos)), float(np.linalg.norm(rot)))
    return out


def _converged(res: dict[str, tuple[float, float]], params: IkParams) -> bool:
    return all(p <= params.pos_tol and o <= params.ori_tol for p, o in res.values())


def solve_ik(
    model: RobotModel,
    world: CollisionWorld,
    c: Configuration,
    targets: IkTargets,
    free_joints,
    allow_base: bool,
    batch: int,
    seed: int,
    params: IkParams | None = None,
    ladder_level: int = 0,
) -> list[IkSolution]:
    """Batched damped-least-squares IK over the given free joints.

    The first restart starts at the current configuration; the rest start
    from uniform joint draws within limits and (with allow_base) a planar
    window around the current base, sampled in its local frame. Solutions
    must converge to (pos_tol, ori_tol) per target, respect joint limits, and
    be collision-free in the shrunk world; the list is sorted by total
    residual with the restart index as the final tiebreak. Empty list means
    no convergence; unknown frame names raise.
    """
    params = params or IkParams()
    free = sorted(set(int(j) for j in free_joints))
    if not free and not allow_base:
        raise ValueError("free_joints empty and base locked: nothing to solve")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    frames = targets.frames()
    for frame in frames:
        model.frame_link(frame)  # raises UnknownFrameError early
    lo, hi = model.joint_limits
    h_lo, h_hi = model.height_limits

    # Contact-shrunk world for the start state; each candidate additionally
    # shrinks the links rigidly attached to its target end-effectors.
    start_world = shrink_colliding(world, c)
    component: set[str] = set()
    for frame in frames:
        component |= model.rigid_component(frame, free)

    rng = np.random.default_rng(seed)
    restarts: list[Configuration] = [c]
    for _ in range(batch - 1):
        q = c.q.copy()
        q[free] = rng.uniform(lo[free], hi[free])
        base = c.base
        if allow_base:
            dx = rng.uniform(-params.base_window_xy, params.base_window_xy)
            dy = rng.uniform(-params.base_window_xy, params.base_window_xy)
            dyaw = rng.uniform(-params.base_window_yaw, params.base_window_yaw)
            dh = rng.uniform(-params.base_window_height, params.base_window_height)
            base = c.base.compose_offset(dx, dy, dyaw)
            base = PlanarPose(base.x, base.y, base.yaw, min(max(c.base.height + dh, h_lo), h_hi))
        restarts.append(Configuration(base, q))

    lam2 = params.damping**2
    solutions: list[IkSolution] = []
    for restart_idx, start in enumerate(restarts):
        q = start.q.copy()
        base = start.base
        res = None
        for _ in range(params.max_iterations):
            cfg = Configuration(base, q)
            poses, jacs = model.frames_with_jacobians(cfg, frames, free, base_dofs=allow_base)
            res = _residuals(poses, targets)
            if _converged(res, params):
                break
            err = np.concatenate(
                [np.concatenate(_pose_errors(poses[f], targets.targets[f])) for f in frames]
            )
            jac = np.vstack([jacs[f] for f in frames])
            jjt = jac @ jac.T
            jjt[np.diag_indices_from(jjt)] += lam2
            dq = jac.T @ np.linalg.solve(jjt, err)

            nj = len(free)
            step = np.clip(dq[:nj], -params.step_clamp, params.step_clamp)
            q[free] = np.clip(q[free] + step, lo[free], hi[free])
            if allow_base:
                dxy = dq[nj : nj + 2]
                nrm = float(np.linalg.norm(dxy))
                if nrm > params.step_clamp:
                    dxy = dxy * (params.step_clamp / nrm)
                dyaw = float(np.clip(dq[nj + 2], -params.step_clamp, params.step_clamp))
                dh = float(np.clip(dq[nj + 3], -params.step_clamp, params.step_clamp))
                base = PlanarPose(
                    base.x + dxy[0],
                    base.y + dxy[1],
                    base.yaw + dyaw,
                    min(max(base.height + dh, h_lo), h_hi),
                )
        else:
            cfg = Configuration(base, q)
            poses, _ = model.frames_with_jacobians(cfg, frames, free, base_dofs=allow_base)
            res = _residuals(poses, targets)
        if not _converged(res, params):
            continue
        candidate = Configuration(base, q)
        cand_world = shrink_colliding(start_world, candidate, restrict_to=component)
        if check_collision(cand_world, candidate):
            continue
        solutions.append(IkSolution(candidate, res, ladder_level, restart_idx))

    solutions.sort(key=lambda s: (s.total_residual, s.restart))
    return solutions


def ladder_free_joints(model: RobotModel, targets: IkTargets, level_groups) -> tuple[list[int], bool]:
    """Resolve a ladder level's group tokens into joint indices + base flag."""
    free: list[int] = []
    allow_base = False
    for token in level_groups:
        if token == "arms":
            arms = set()
            for frame in targets.frames():
                arm = model.arm_of_frame(frame)
                if arm is not None:
                    arms.add(arm)
            for arm in sorted(arms):
                free.extend(model.groups.by_name(arm))
        elif token == "torso":
            free.extend(model.groups.torso)
        elif token == "base":
            allow_base = True
        else:
            raise ValueError(f"unknown ladder token {token!r}")
    return sorted(set(free)), allow_base


def whole_inv_kinematics(
    model: RobotModel,
    world: CollisionWorld,
    c: Configuration,
    targets: IkTargets,
    seed: int,
    params: IkParams | None = None,
    batch: int = 16,
) -> list[IkSolution]:
    """Lock-ladder IK: try each ladder level in order with all other joints
    locked at the current configuration, and return the solutions of the
    first level that converges, tagged with their ladder level.

    With the default ladder this realizes the minimal-motion preference:
    arm-only solutions win over arm+torso, which win over solutions that
    relocate the base.
    """
    params = params or IkParams()
    arms_seen = set()
    for frame in targets.frames():
        arm = model.arm_of_frame(frame)
        if arm is None:
            raise UnknownFrameError(f"target frame {frame!r} is not on an arm chain")
        if arm in arms_seen:
            raise ValueError("two targets on the same arm")
        arms_seen.add(arm)

    for level, groups in enumerate(params.ladder):
        free, allow_base = ladder_free_joints(model, targets, groups)
        if not free and not allow_base:
            continue
        level_seed = np.random.SeedSequence([seed, level]).generate_state(1)[0]
        sols = solve_ik(
            model, world, c, targets, free, allow_base,
            batch=batch, seed=int(level_seed), params=params, ladder_level=level,
        )
        if sols:
            return sols
    return []
