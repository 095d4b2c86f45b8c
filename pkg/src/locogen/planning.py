"""Decoupled locomotion and manipulation motion planning.

Locomotion plans move only the planar base (upper body frozen), searching the
3-DOF (x, y, yaw) space with a bidirectional rapidly-exploring tree; height
is interpolated linearly along the resulting path. Manipulation plans search
the joint space of the given free joints at a fixed base. Both shortcut-smooth
and densify their paths to the waypoint step bound, and both return None on
failure (never an exception for infeasibility).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from locogen.collision import CollisionWorld, _transform_raw, check_collision
from locogen.config import PlannerParams
from locogen.kinematics import Configuration, RobotModel
from locogen.pose import PlanarPose, wrap_angle

LOCOMOTION = "locomotion"
MANIPULATION = "manipulation"


@dataclass(frozen=True)
class Trajectory:
    kind: str
    waypoints: list[Configuration]
    timestep: float

    def __post_init__(self):
        if self.kind not in (LOCOMOTION, MANIPULATION):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if len(self.waypoints) < 2:
            raise ValueError("trajectory needs at least 2 waypoints")


# -- fast collision checkers -----------------------------------------------------


class FrozenBaseChecker:
    """Collision checks for pure base motion: the whole upper body (plus any
    attached objects) is one rigid block expressed in the base frame, so each
    query is a single rigid transform and one distance pass against the
    environment."""

    def __init__(self, world: CollisionWorld, c: Configuration):
        model = world.model
        quats, trans = model.link_fk_raw(c)
        base = c.base
        cy, sy = math.cos(-base.yaw), math.sin(-base.yaw)

        block_centers = []
        block_radii = []
        block_bodies = []

        def to_base(pts: np.ndarray) -> np.ndarray:
            shifted = pts - np.array([base.x, base.y, base.height])
            out = shifted.copy()
            out[:, 0] = cy * shifted[:, 0] - sy * shifted[:, 1]
            out[:, 1] = sy * shifted[:, 0] + cy * shifted[:, 1]
            return out

        for li, link in enumerate(model.links):
            spheres = world.link_spheres(link.name)
            if spheres is None or len(spheres) == 0:
                continue
            wpts = _transform_raw(quats[li], trans[li], spheres[:, :3])
            block_centers.append(to_base(wpts))
            block_radii.append(spheres[:, 3])
            block_bodies.extend([link.name] * len(spheres))
        attached = world.attached_object_names()
        fk = model.forward_kinematics(c)
        for name in sorted(attached):
            spheres = world.object_spheres(name)
            if spheres is None:
                continue
            pose = world.object_world_pose(name, fk)
            wpts = _transform_raw(tuple(pose.rotation), tuple(pose.translation), spheres[:, :3])
            block_centers.append(to_base(wpts))
            block_radii.append(spheres[:, 3])
            block_bodies.extend([name] * len(spheres))
        self.block = np.vstack(block_centers)
        self.block_r = np.concatenate(block_radii)

        env_centers = []
        env_radii = []
        env_bodies = []
        for name in world.objects:
            if name in attached:
                continue
            spheres = world.object_spheres(name)
            if spheres is None or len(spheres) == 0:
                continue
            pose = world.objects[name].pose
            env_centers.append(_transform_raw(tuple(pose.rotation), tuple(pose.translation), spheres[:, :3]))
            env_radii.append(spheres[:, 3])
            env_bodies.extend([name] * len(spheres))
        if env_centers:
            self.env = np.vstack(env_centers)
            self.env_r = np.concatenate(env_radii)
            allowed = np.zeros((len(self.block_r), len(self.env_r)), dtype=bool)
            for i, bi in enumerate(block_bodies):
                for j, bj in enumerate(env_bodies):
                    if frozenset((bi, bj)) in world.allowed_pairs:
                        allowed[i, j] = True
            self.allowed = allowed
        else:
            self.env = None

    def collision_free(self, x: float, y: float, yaw: float, height: float) -> bool:
        if self.env is None:
            return True
        cy, sy = math.cos(yaw), math.sin(yaw)
        pts = np.empty_like(self.block)
        pts[:, 0] = cy * self.block[:, 0] - sy * self.block[:, 1] + x
        pts[:, 1] = sy * self.block[:, 0] + cy * self.block[:, 1] + y
        pts[:, 2] = self.block[:, 2] + height
        d2 = ((pts[:, None, :] - self.env[None, :, :]) ** 2).sum(axis=2)
        rsum = self.block_r[:, None] + self.env_r[None, :]
        hit = d2 < rsum * rsum
        hit &= ~self.allowed
        return not hit.any()


class JointSpaceChecker:
    """Collision checks while only `free_joints` move: everything else (static
    robot links at the start configuration, unattached objects) is one fixed
    sphere cloud computed once."""

    def __init__(self, world: CollisionWorld, c: Configuration, free_joints):
        model = world.model
        self.world = world
        self.model = model
        self.base = c.base
        self.q_template = c.q.copy()
        self.free = list(free_joints)

        free_set = set(self.free)
        moving_links = [
            link.name
            for link in model.links
            if set(model.chain_joints(link.name)) & free_set
        ]
        self.moving_links = [
            name for name in moving_links if world.link_spheres(name) is not None
        ]
        moving_set = set(moving_links)
        self.moving_attached = []
        for att in world.attachments.values():
            if model.frame_link(att.ee) in moving_set:
                self.moving_attached.append(att)
        moving_bodies = set(self.moving_links) | {a.obj for a in self.moving_attached}

        quats, trans = model.link_fk_raw(c)
        fixed_centers, fixed_radii, fixed_bodies = [], [], []
        for li, link in enumerate(model.links):
            if link.name in moving_bodies:
                continue
            spheres = world.link_spheres(link.name)
            if spheres is None or len(spheres) == 0:
                continue
            fixed_centers.append(_transform_raw(quats[li], trans[li], spheres[:, :3]))
            fixed_radii.append(spheres[:, 3])
            fixed_bodies.extend([link.name] * len(spheres))
        fk = model.forward_kinematics(c)
        for name in world.objects:
            if name in moving_bodies:
                continue
            spheres = world.object_spheres(name)
            if spheres is None or len(spheres) == 0:
                continue
            pose = world.object_world_pose(name, fk)
            fixed_centers.append(
                _transform_raw(tuple(pose.rotation), tuple(pose.translation), spheres[:, :3])
            )
            fixed_radii.append(spheres[:, 3])
            fixed_bodies.extend([name] * len(spheres))
        self.fixed = np.vstack(fixed_centers) if fixed_centers else None
        self.fixed_r = np.concatenate(fixed_radii) if fixed_centers else None
        self.fixed_bodies = fixed_bodies

        self.needed = frozenset().union(
            *(model._ancestors(name) for name in self.moving_links)
        ) if self.moving_links else frozenset()
        if self.moving_attached:
            self.needed = self.needed.union(
                *(model._ancestors(a.ee) for a in self.moving_attached)
            )

        # Per-sphere body labels for the moving block, fixed order.
        self.moving_bodies_order: list[str] = []
        for name in self.moving_links:
            self.moving_bodies_order.extend([name] * len(world.link_spheres(name)))
        for att in self.moving_attached:
            self.moving_bodies_order.extend([att.obj] * len(world.object_spheres(att.obj)))

        nb = len(self.moving_bodies_order)
        if self.fixed is not None:
            self.allowed_fixed = np.zeros((nb, len(self.fixed_r)), dtype=bool)
            for i, bi in enumerate(self.moving_bodies_order):
                for j, bj in enumerate(self.fixed_bodies):
                    if frozenset((bi, bj)) in world.allowed_pairs:
                        self.allowed_fixed[i, j] = True
        self.allowed_self = np.zeros((nb, nb), dtype=bool)
        for i, bi in enumerate(self.moving_bodies_order):
            for j, bj in enumerate(self.moving_bodies_order):
                if bi == bj or frozenset((bi, bj)) in world.allowed_pairs:
                    self.allowed_self[i, j] = True

    def collision_free(self, q_free: np.ndarray) -> bool:
        q = self.q_template.copy()
        q[self.free] = q_free
        c = Configuration(self.base, q)
        quats, trans = self.model.link_fk_raw(c, self.needed)
        centers, radii = [], []
        for name in self.moving_links:
            spheres = self.world.link_spheres(name)
            li = self.model.link_index(name)
            centers.append(_transform_raw(quats[li], trans[li], spheres[:, :3]))
            radii.append(spheres[:, 3])
        for att in self.moving_attached:
            spheres = self.world.object_spheres(att.obj)
            fq, ft = self.model._frame_tuple(att.ee, quats, trans)
            from locogen.pose import Pose, compose

            pose = compose(Pose(np.array(fq), np.array(ft)), att.offset)
            centers.append(
                _transform_raw(tuple(pose.rotation), tuple(pose.translation), spheres[:, :3])
            )
            radii.append(spheres[:, 3])
        if not centers:
            return True
        pts = np.vstack(centers)
        rad = np.concatenate(radii)
        if self.fixed is not None:
            d2 = ((pts[:, None, :] - self.fixed[None, :, :]) ** 2).sum(axis=2)
            rsum = rad[:, None] + self.fixed_r[None, :]
            if ((d2 < rsum * rsum) & ~self.allowed_fixed).any():
                return False
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        rsum = rad[:, None] + rad[None, :]
        return not ((d2 < rsum * rsum) & ~self.allowed_self).any()


# -- generic bidirectional search -------------------------------------------------


def _rrt_connect(start, goal, sample_fn, dist_fn, lerp_fn, edge_free_fn, params, rng):
    """Goal-connected bidirectional RRT over abstract vector states.

    Returns a list of states from start to goal, or None on iteration cap.
    """
    if edge_free_fn(start, goal):
        return [start, goal]
    trees = ([start], [goal])  # states
    parents = ([-1], [-1])
    active = 0

    def extend(tree_idx: int, target) -> int | None:
        tree = trees[tree_idx]
        dists = [dist_fn(s, target) for s in tree]
        ni = int(np.argmin(dists))
        near = tree[ni]
        d = dists[ni]
        if d < 1e-12:
            return ni
        state = lerp_fn(near, target, min(1.0, params.extend_step / d))
        if not edge_free_fn(near, state):
            return None
        tree.append(state)
        parents[tree_idx].append(ni)
        return len(tree) - 1

    for _ in range(params.max_iterations):
        other = 1 - active
        if rng.random() < params.goal_bias:
            sample = trees[other][0]
        else:
            sample = sample_fn(rng)
        new_idx = extend(active, sample)
        if new_idx is not None:
            target = trees[active][new_idx]
            # Greedy connect from the other tree.
            while True:
                got = extend(other, target)
                if got is None:
                    break
                if dist_fn(trees[other][got], target) < 1e-12:
                    # Trees met: stitch paths root-to-meeting on both sides.
                    path_a = _trace(trees[active], parents[active], new_idx)
                    path_b = _trace(trees[other], parents[other], got)
                    if active == 0:
                        return path_a[::-1] + path_b[1:]
                    return path_b[::-1] + path_a[1:]
        active = other
    return None


def _trace(tree, parents, idx):
    out = []
    while idx >= 0:
        out.append(tree[idx])
        idx = parents[idx]
    return out


def _shortcut(path, dist_fn, lerp_fn, edge_free_fn, passes, rng):
    """Random shortcutting; never lengthens the path, keeps endpoints."""
    path = list(path)
    for _ in range(passes):
        if len(path) < 3:
            break
        i, j = sorted(rng.choice(len(path), size=2, replace=False))
        if j - i < 2:
            continue
        if edge_free_fn(path[i], path[j]):
            path = path[: i + 1] + path[j:]
    return path


# -- locomotion -------------------------------------------------------------------


def plan_locomotion(
    model: RobotModel,
    world: CollisionWorld,
    from_c: Configuration,
    to_c: Configuration,
    seed: int,
    params: PlannerParams | None = None,
    timestep: float = 0.02,
) -> Trajectory | None:
    """Collision-free base path (x, y, yaw, height) with the upper body frozen.

    The two configurations must share the exact joint vector. Returns None on
    planning failure; the result is shortcut-smoothed and densified to the
    base step bound, with height interpolated linearly along arc length.
    """
    params = params or PlannerParams()
    if not np.array_equal(from_c.q, to_c.q):
        raise ValueError("locomotion endpoints must share the upper-body configuration")
    a, b = from_c.base, to_c.base
    if a == b:
        return Trajectory(LOCOMOTION, [from_c, to_c], timestep)

    checker = FrozenBaseChecker(world, from_c)
    yw = params.yaw_weight
    res = params.edge_resolution_base

    def dist(s, t):
        return math.hypot(s[0] - t[0], s[1] - t[1]) + yw * abs(wrap_angle(s[2] - t[2]))

    def lerp(s, t, u):
        return (
            s[0] + u * (t[0] - s[0]),
            s[1] + u * (t[1] - s[1]),
            s[2] + u * wrap_angle(t[2] - s[2]),
        )

    def state_free(s) -> bool:
        return checker.collision_free(s[0], s[1], s[2], a.height)

    def edge_free(s, t) -> bool:
        n = max(1, int(math.ceil(dist(s, t) / res)))
        for k in range(1, n + 1):
            if not state_free(lerp(s, t, k / n)):
                return False
        return True

    start = (a.x, a.y, a.yaw)
    goal = (b.x, b.y, b.yaw)
    if not state_free(start) or not state_free(goal):
        return None

    lo = np.minimum([a.x, a.y], [b.x, b.y])
    hi = np.maximum([a.x, a.y], [b.x, b.y])
    if checker.env is not None:
        lo = np.minimum(lo, (checker.env[:, :2] - checker.env_r[:, None]).min(axis=0))
        hi = np.maximum(hi, (checker.env[:, :2] + checker.env_r[:, None]).max(axis=0))
    lo -= params.sample_margin
    hi += params.sample_margin

    def sample(rng):
        return (
            rng.uniform(lo[0], hi[0]),
            rng.uniform(lo[1], hi[1]),
            rng.uniform(-math.pi, math.pi),
        )

    rng = np.random.default_rng(seed)
    path = _rrt_connect(start, goal, sample, dist, lerp, edge_free, params, rng)
    if path is None:
        return None
    path = _shortcut(path, dist, lerp, edge_free, params.shortcut_passes, rng)

    # Densify to the waypoint step bound and lay heights along arc length.
    dense = [path[0]]
    for s, t in zip(path, path[1:]):
        pos_d = math.hypot(t[0] - s[0], t[1] - s[1])
        yaw_d = abs(wrap_angle(t[2] - s[2]))
        n = max(1, int(math.ceil(max(pos_d / params.base_step, yaw_d / params.base_yaw_step))))
        for k in range(1, n + 1):
            dense.append(lerp(s, t, k / n))
    seg = [0.0]
    for s, t in zip(dense, dense[1:]):
        seg.append(seg[-1] + dist(s, t))
    total = seg[-1] if seg[-1] > 0 else 1.0
    waypoints = [from_c]
    for i in range(1, len(dense) - 1):
        h = a.height + (b.height - a.height) * (seg[i] / total)
        waypoints.append(Configuration(PlanarPose(*dense[i], h), from_c.q))
    waypoints.append(to_c)
    return Trajectory(LOCOMOTION, waypoints, timestep)


# -- manipulation -----------------------------------------------------------------


def plan_manipulation(
    model: RobotModel,
    world: CollisionWorld,
    from_c: Configuration,
    to_c: Configuration,
    free_joints,
    seed: int,
    params: PlannerParams | None = None,
    step_bound: float | None = None,
    timestep: float = 0.02,
) -> Trajectory | None:
    """Collision-free joint-space path over `free_joints` at a fixed base.

    Endpoints must agree outside the free set and share the base pose.
    Attached objects move with the arm and are collision-checked. Returns
    None on failure (including an in-collision goal).
    """
    params = params or PlannerParams()
    free = sorted(set(int(j) for j in free_joints))
    locked = [i for i in range(model.n_joints) if i not in free]
    if from_c.base != to_c.base:
        raise ValueError("manipulation endpoints must share the base pose")
    if not np.array_equal(from_c.q[locked], to_c.q[locked]):
        raise ValueError("manipulation endpoints differ outside the free joints")

    checker = JointSpaceChecker(world, from_c, free)
    start = from_c.q[free].copy()
    goal = to_c.q[free].copy()
    if not checker.collision_free(goal) or not checker.collision_free(start):
        return None

    lo, hi = model.joint_limits
    lo, hi = lo[free], hi[free]
    res = params.edge_resolution_joint

    def dist(s, t):
        return float(np.linalg.norm(s - t))

    def lerp(s, t, u):
        return s + u * (t - s)

    def edge_free(s, t) -> bool:
        n = max(1, int(math.ceil(dist(s, t) / res)))
        for k in range(1, n + 1):
            if not checker.collision_free(lerp(s, t, k / n)):
                return False
        return True

    def sample(rng):
        return rng.uniform(lo, hi)

    rng = np.random.default_rng(seed)
    path = _rrt_connect(start, goal, sample, dist, lerp, edge_free, params, rng)
    if path is None:
        return None
    path = _shortcut(path, dist, lerp, edge_free, params.shortcut_passes, rng)

    step = step_bound if step_bound is not None else params.joint_step
    dense = [path[0]]
    for s, t in zip(path, path[1:]):
        n = max(1, int(math.ceil(float(np.abs(t - s).max()) / step)))
        for k in range(1, n + 1):
            dense.append(lerp(s, t, k / n))
    waypoints = [from_c]
    for qf in dense[1:-1]:
        waypoints.append(from_c.with_q(free, qf))
    waypoints.append(to_c)
    return Trajectory(MANIPULATION, waypoints, timestep)


# -- validation helpers -------------------------------------------------------------


def trajectory_collision_audit(
    world: CollisionWorld, traj: Trajectory, resolution_factor: int = 4
) -> list[tuple[int, str, str]]:
    """Dense re-check of a trajectory at a finer resolution than planning.

    Interpolates `resolution_factor` states inside every waypoint gap and
    runs the full collision query on each; returns (segment index, body,
    body) hits — empty means clean.
    """
    hits = []
    for i, (a, b) in enumerate(zip(traj.waypoints, traj.waypoints[1:])):
        for k in range(resolution_factor + 1):
            u = k / resolution_factor
            q = a.q + u * (b.q - a.q)
            base = PlanarPose(
                a.base.x + u * (b.base.x - a.base.x),
                a.base.y + u * (b.base.y - a.base.y),
                a.base.yaw + u * wrap_angle(b.base.yaw - a.base.yaw),
                a.base.height + u * (b.base.height - a.base.height),
            )
            for ba, bb, _ in check_collision(world, Configuration(base, q)):
                hits.append((i, ba, bb))
    return hits


def path_length(traj: Trajectory) -> float:
    total = 0.0
    for a, b in zip(traj.waypoints, traj.waypoints[1:]):
        total += float(np.linalg.norm(a.q - b.q))
        total += math.hypot(a.base.x - b.base.x, a.base.y - b.base.y)
        total += abs(wrap_angle(a.base.yaw - b.base.yaw))
    return total
