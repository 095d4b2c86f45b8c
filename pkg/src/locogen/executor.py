"""Kinematic world state and action execution.

The executor stands in for the learned locomotion controller and the
joint-position controllers: upper-body and hand joints move toward their
targets under a rate limit, and the base integrates commanded planar
velocities with a per-episode multiplicative tracking error plus a yaw-rate
bias, modeling imperfect velocity tracking. Grasping is kinematic attachment
triggered by hand closure near an object; attached objects follow the hand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from locogen.collision import Attachment, CollisionWorld
from locogen.config import ExecutorParams
from locogen.kinematics import Configuration, RobotModel
from locogen.planning import LOCOMOTION, MANIPULATION, Trajectory
from locogen.pose import PlanarPose, Pose, compose, invert, rotation_distance, wrap_angle


class CommandLimitError(ValueError):
    """Base command magnitude outside configured limits."""


@dataclass(frozen=True)
class Action:
    """Upper-body/hand joint targets plus the base command [vx, vy, yaw_rate, z]."""

    upper: np.ndarray  # targets for torso + both arms, in group index order
    hands: np.ndarray  # targets for both hands, in group index order
    base_command: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=np.float64))
        object.__setattr__(self, "hands", np.asarray(self.hands, dtype=np.float64))
        bc = np.asarray(self.base_command, dtype=np.float64)
        if bc.shape != (4,):
            raise ValueError("base command must be [vx, vy, yaw_rate, z]")
        object.__setattr__(self, "base_command", bc)


@dataclass(frozen=True)
class WorldState:
    configuration: Configuration
    object_poses: dict[str, Pose]
    attachments: dict[str, Attachment] = field(default_factory=dict)
    time_step: int = 0


@dataclass(frozen=True)
class Observation:
    """Proprioception plus ground-truth object poses; the image slot is
    reserved by the dataset schema and always absent here."""

    configuration: Configuration
    object_poses: dict[str, Pose]
    image: None = None


def observe(state: WorldState) -> Observation:
    return Observation(state.configuration, dict(state.object_poses))


@dataclass(frozen=True)
class TrackingError:
    """Per-episode velocity tracking model: multiplicative scales and a
    yaw-rate bias."""

    vx_scale: float = 1.0
    vy_scale: float = 1.0
    yaw_scale: float = 1.0
    yaw_bias: float = 0.0

    @staticmethod
    def sample(rng: np.random.Generator, eta: float, yaw_bias_scale: float) -> "TrackingError":
        if eta == 0.0:
            return TrackingError()
        return TrackingError(
            vx_scale=float(rng.uniform(1 - eta, 1 + eta)),
            vy_scale=float(rng.uniform(1 - eta, 1 + eta)),
            yaw_scale=float(rng.uniform(1 - eta, 1 + eta)),
            yaw_bias=float(rng.uniform(-eta * yaw_bias_scale, eta * yaw_bias_scale)),
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.vx_scale, self.vy_scale, self.yaw_scale, self.yaw_bias])

    @staticmethod
    def from_array(a) -> "TrackingError":
        return TrackingError(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


# -- success predicates ------------------------------------------------------


@dataclass(frozen=True)
class FrameAboveHeight:
    frame: str
    height: float

    def holds(self, poses: dict[str, Pose]) -> bool:
        return float(poses[self.frame].translation[2]) >= self.height


@dataclass(frozen=True)
class FrameInRegion:
    """Frame origin inside an axis-aligned box, in world or a reference frame."""

    frame: str
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    relative_to: str | None = None

    def holds(self, poses: dict[str, Pose]) -> bool:
        p = poses[self.frame].translation
        if self.relative_to is not None:
            p = invert(poses[self.relative_to]).apply(p)
        return bool(np.all(p >= np.asarray(self.lo)) and np.all(p <= np.asarray(self.hi)))


@dataclass(frozen=True)
class RelativePoseWithin:
    frame: str
    reference: str
    target: Pose  # expected pose of `frame` in `reference` coordinates
    pos_tol: float
    ang_tol: float

    def holds(self, poses: dict[str, Pose]) -> bool:
        rel = compose(invert(poses[self.reference]), poses[self.frame])
        return (
            float(np.linalg.norm(rel.translation - self.target.translation)) <= self.pos_tol
            and rotation_distance(rel, self.target) <= self.ang_tol
        )


@dataclass(frozen=True)
class SuccessPredicate:
    """Conjunction of atomic checks over world frames."""

    atoms: tuple

    def __post_init__(self):
        if not self.atoms:
            raise ValueError("success predicate needs at least one atom")
        object.__setattr__(self, "atoms", tuple(self.atoms))


def check_success(model: RobotModel, state: WorldState, pred: SuccessPredicate) -> bool:
    poses = dict(model.forward_kinematics(state.configuration))
    poses.update(state.object_poses)
    for atom in pred.atoms:
        for name in _atom_frames(atom):
            if name not in poses:
                raise KeyError(f"unknown frame {name!r} in success predicate")
        if not atom.holds(poses):
            return False
    return True


def _atom_frames(atom) -> list[str]:
    names = [atom.frame]
    if isinstance(atom, FrameInRegion) and atom.relative_to:
        names.append(atom.relative_to)
    if isinstance(atom, RelativePoseWithin):
        names.append(atom.reference)
    return names


# -- executor ------------------------------------------------------------------


class KinematicExecutor:
    """Steps WorldStates under Actions; deterministic given the tracking
    parameters. Noise injection is the caller's job (actions passed in are
    executed verbatim); grasp attach/detach transitions fire automatically."""

    def __init__(
        self,
        model: RobotModel,
        world: CollisionWorld,
        params: ExecutorParams | None = None,
        tracking: TrackingError | None = None,
    ):
        self.model = model
        self.world = world
        self.params = params or ExecutorParams()
        self.tracking = tracking or TrackingError()
        self.upper_idx = list(model.groups.upper_body)
        self.hand_idx = list(model.groups.hands)
        self.clamp_events = 0
        # Hand end-effectors, with their hand-joint group and hand links.
        self.hand_ees = {}
        for name in model.end_effectors:
            group = model.hand_group_of_frame(name)
            if group:
                self.hand_ees[name] = (list(group), sorted(world._hand_links(name)))

    # -- state/world sync ------------------------------------------------------

    def world_at(self, state: WorldState) -> CollisionWorld:
        """Collision-world snapshot reflecting a state's poses and attachments."""
        return self.world.with_object_poses(state.object_poses).with_attachments(
            state.attachments
        )

    def hold_action(self, state: WorldState) -> Action:
        q = state.configuration.q
        return Action(
            q[self.upper_idx].copy(),
            q[self.hand_idx].copy(),
            np.array([0.0, 0.0, 0.0, state.configuration.base.height]),
        )

    # -- dynamics ----------------------------------------------------------------

    def step(self, state: WorldState, a: Action, dt: float | None = None) -> WorldState:
        """Advance one control step: rate-limited joints, velocity-integrated
        base with tracking error, attached objects following, grasp detection."""
        p = self.params
        dt = p.dt if dt is None else dt
        vx, vy, wz, z_cmd = (float(v) for v in a.base_command)
        if abs(vx) > p.max_vx + 1e-9 or abs(vy) > p.max_vy + 1e-9 or abs(wz) > p.max_yaw_rate + 1e-9:
            raise CommandLimitError(f"base command ({vx:.3f}, {vy:.3f}, {wz:.3f}) exceeds limits")

        lo, hi = self.model.joint_limits
        q = state.configuration.q.copy()
        rate = p.joint_rate_limit * dt
        for idx_list, targets in ((self.upper_idx, a.upper), (self.hand_idx, a.hands)):
            t = np.asarray(targets, dtype=np.float64)
            tc = np.clip(t, lo[idx_list], hi[idx_list])
            if not np.array_equal(t, tc):
                self.clamp_events += 1
            delta = np.clip(tc - q[idx_list], -rate, rate)
            q[idx_list] = q[idx_list] + delta

        base = state.configuration.base
        tr = self.tracking
        evx = vx * tr.vx_scale
        evy = vy * tr.vy_scale
        eyaw = wz * tr.yaw_scale + (tr.yaw_bias if (vx, vy, wz) != (0.0, 0.0, 0.0) else 0.0)
        cy, sy = math.cos(base.yaw), math.sin(base.yaw)
        nx = base.x + (cy * evx - sy * evy) * dt
        ny = base.y + (sy * evx + cy * evy) * dt
        nyaw = base.yaw + eyaw * dt
        h_lo, h_hi = self.model.height_limits
        z_t = min(max(z_cmd, h_lo), h_hi)
        dz = np.clip(z_t - base.height, -p.height_rate_limit * dt, p.height_rate_limit * dt)
        new_base = PlanarPose(nx, ny, nyaw, base.height + float(dz))

        cfg = Configuration(new_base, q)
        poses = dict(state.object_poses)
        if state.attachments:
            fk = self.model.forward_kinematics(cfg)
            for att in state.attachments.values():
                poses[att.obj] = compose(fk[att.ee], att.offset)
        new_state = WorldState(cfg, poses, dict(state.attachments), state.time_step + 1)
        return self._grasp_transitions(new_state)

    def contact_gap(self, state: WorldState, ee: str, obj: str) -> float:
        """Smallest surface gap between an end-effector's hand-link spheres and
        an object's spheres (negative when overlapping)."""
        world = self.world_at(state)
        bodies = {name: (c, r) for name, c, r in world._posed_bodies(state.configuration)}
        if obj not in bodies:
            return math.inf
        oc, orad = bodies[obj]
        gap = math.inf
        for link in self.hand_ees[ee][1]:
            if link not in bodies:
                continue
            lc, lr = bodies[link]
            d = np.sqrt(((lc[:, None, :] - oc[None, :, :]) ** 2).sum(axis=2))
            gap = min(gap, float((d - lr[:, None] - orad[None, :]).min()))
        return gap

    def grasp_detect(self, state: WorldState) -> list[tuple[str, str]]:
        """(end-effector, object) pairs in grasping contact: some hand-link
        sphere within the contact margin of an object sphere AND the hand
        closure above the closed threshold."""
        out = []
        world = self.world_at(state)
        bodies = {name: (c, r) for name, c, r in world._posed_bodies(state.configuration)}
        q = state.configuration.q
        for ee, (group, links) in sorted(self.hand_ees.items()):
            closure = float(np.mean(q[group]))
            if closure < self.params.hand_closed_threshold:
                continue
            for obj in sorted(self.world.objects):
                if not self.world.objects[obj].movable or obj not in bodies:
                    continue
                oc, orad = bodies[obj]
                gap = math.inf
                for link in links:
                    if link not in bodies:
                        continue
                    lc, lr = bodies[link]
                    d = np.sqrt(((lc[:, None, :] - oc[None, :, :]) ** 2).sum(axis=2))
                    gap = min(gap, float((d - lr[:, None] - orad[None, :]).min()))
                if gap <= self.params.grasp_contact_margin:
                    out.append((ee, obj))
        return out

    def _grasp_transitions(self, state: WorldState) -> WorldState:
        q = state.configuration.q
        if not state.attachments and all(
            float(np.mean(q[group])) < self.params.hand_closed_threshold
            for group, _ in self.hand_ees.values()
        ):
            return state  # nothing held, nothing closing: skip contact queries
        attachments = dict(state.attachments)
        changed = False
        # Releases first: closure below threshold drops the object in place.
        for ee in list(attachments):
            group, _ = self.hand_ees[ee]
            if float(np.mean(q[group])) < self.params.hand_closed_threshold:
                del attachments[ee]
                changed = True
        held = {a.obj for a in attachments.values()}
        fk = None
        for ee, obj in self.grasp_detect(state):
            if ee in attachments or obj in held:
                continue
            if fk is None:
                fk = self.model.forward_kinematics(state.configuration)
            offset = compose(invert(fk[ee]), state.object_poses[obj])
            attachments[ee] = Attachment(ee, obj, offset)
            held.add(obj)
            changed = True
        if not changed:
            return state
        return replace(state, attachments=attachments)

    # -- trajectory following -----------------------------------------------------

    def control_locomotion(
        self, state: WorldState, traj: Trajectory, record=None, noise=None
    ) -> tuple[WorldState, bool]:
        """Follow a base path with a pure-pursuit follower until the final
        waypoint's base pose is reached within tolerance or the step budget
        runs out. Upper-body targets hold the entry posture."""
        if traj.kind != LOCOMOTION:
            raise ValueError("control_locomotion needs a locomotion trajectory")
        p = self.params
        path = [wp.base for wp in traj.waypoints]
        goal = path[-1]
        hold = self.hold_action(state)
        progress = 0
        for _ in range(p.follower_step_budget):
            base = state.configuration.base
            pos_err = math.hypot(goal.x - base.x, goal.y - base.y)
            yaw_err = abs(wrap_angle(goal.yaw - base.yaw))
            h_err = abs(goal.height - base.height)
            if pos_err <= p.follower_pos_tol and yaw_err <= p.follower_yaw_tol and h_err <= p.follower_pos_tol:
                return state, True
            # Advance progress to the nearest path point, then look ahead.
            best = progress
            best_d = math.inf
            for i in range(progress, len(path)):
                d = math.hypot(path[i].x - base.x, path[i].y - base.y)
                if d < best_d:
                    best_d, best = d, i
            progress = best
            target_i = progress
            acc = 0.0
            while target_i + 1 < len(path) and acc < p.follower_lookahead:
                acc += math.hypot(
                    path[target_i + 1].x - path[target_i].x,
                    path[target_i + 1].y - path[target_i].y,
                ) + 0.3 * abs(wrap_angle(path[target_i + 1].yaw - path[target_i].yaw))
                target_i += 1
            target = path[target_i]

            dxw = target.x - base.x
            dyw = target.y - base.y
            cy, sy = math.cos(-base.yaw), math.sin(-base.yaw)
            bx = cy * dxw - sy * dyw
            by = sy * dxw + cy * dyw
            vx = float(np.clip(p.follower_gain_lin * bx, -p.max_vx, p.max_vx))
            vy = float(np.clip(p.follower_gain_lin * by, -p.max_vy, p.max_vy))
            wz = float(
                np.clip(p.follower_gain_yaw * wrap_angle(target.yaw - base.yaw),
                        -p.max_yaw_rate, p.max_yaw_rate)
            )
            action = Action(hold.upper, hold.hands, np.array([vx, vy, wz, target.height]))
            executed = noise(action) if noise else action
            prev = state
            state = self.step(prev, executed)
            if record:
                record(prev, action, executed)
        return state, False

    def control_manipulation(
        self, state: WorldState, traj: Trajectory, record=None, noise=None, settle: bool = False
    ) -> WorldState:
        """Emit each waypoint's joint targets at the control rate. Trajectory
        densification respects the rate limit, so tracking lands exactly on
        each waypoint; an optional settle phase holds the final targets until
        the joints converge."""
        if traj.kind != MANIPULATION:
            raise ValueError("control_manipulation needs a manipulation trajectory")
        height = state.configuration.base.height
        action = None
        for wp in traj.waypoints[1:]:
            action = Action(
                wp.q[self.upper_idx].copy(),
                wp.q[self.hand_idx].copy(),
                np.array([0.0, 0.0, 0.0, height]),
            )
            executed = noise(action) if noise else action
            prev = state
            state = self.step(prev, executed)
            if record:
                record(prev, action, executed)
        if settle and action is not None:
            for _ in range(self.params.settle_steps):
                q = state.configuration.q
                if (
                    float(np.abs(q[self.upper_idx] - action.upper).max()) <= 1e-9
                    and float(np.abs(q[self.hand_idx] - action.hands).max()) <= 1e-9
                ):
                    break
                executed = noise(action) if noise else action
                prev = state
                state = self.step(prev, executed)
                if record:
                    record(prev, action, executed)
        return state
