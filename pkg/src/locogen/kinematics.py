"""Kinematic tree, joint grouping, forward kinematics, and Jacobians.

The robot is a link tree rooted at a floating base whose pose is a
PlanarPose (x, y, yaw, height). Legs exist in the model for completeness but
are never planned individually: locomotion is expressed entirely through the
base pose, standing in for a lower-body controller's observable effect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from locogen.pose import PlanarPose, Pose, compose

GROUP_NAMES = ("legs", "torso", "left_arm", "right_arm", "left_hand", "right_hand")

REVOLUTE = "revolute"
PRISMATIC = "prismatic"


class JointLimitError(ValueError):
    """Raised when a configuration violates joint limits."""


class UnknownFrameError(KeyError):
    """Raised when a frame name does not resolve to a link or end-effector."""


@dataclass(frozen=True)
class Joint:
    name: str
    joint_type: str
    axis: np.ndarray
    limits: tuple[float, float]
    group: str
    child_link: str

    def __post_init__(self):
        if self.joint_type not in (REVOLUTE, PRISMATIC):
            raise ValueError(f"unknown joint type {self.joint_type!r}")
        if self.group not in GROUP_NAMES:
            raise ValueError(f"unknown joint group {self.group!r}")
        lo, hi = self.limits
        if not lo < hi:
            raise ValueError(f"joint {self.name}: limits must satisfy lo < hi, got [{lo}, {hi}]")
        axis = np.asarray(self.axis, dtype=np.float64)
        n = np.linalg.norm(axis)
        if n < 1e-12:
            raise ValueError(f"joint {self.name}: degenerate axis")
        object.__setattr__(self, "axis", axis / n)
        object.__setattr__(self, "limits", (float(lo), float(hi)))


@dataclass(frozen=True)
class Link:
    """Rigid link. `joint` names the joint that moves it relative to its parent
    (None for a fixed connection); `spheres` is an (n, 4) array of collision
    spheres [cx, cy, cz, r] in the link frame, or None."""

    name: str
    parent: str | None
    origin: Pose = field(default_factory=Pose.identity)
    joint: str | None = None
    spheres: np.ndarray | None = None


@dataclass(frozen=True)
class EndEffector:
    name: str
    link: str
    offset: Pose = field(default_factory=Pose.identity)


@dataclass(frozen=True)
class JointGroups:
    """Partition of joint indices into the six planning groups."""

    legs: tuple[int, ...]
    torso: tuple[int, ...]
    left_arm: tuple[int, ...]
    right_arm: tuple[int, ...]
    left_hand: tuple[int, ...]
    right_hand: tuple[int, ...]

    def validate(self, n_joints: int) -> None:
        all_idx: list[int] = []
        for name in GROUP_NAMES:
            all_idx.extend(getattr(self, name))
        if sorted(all_idx) != list(range(n_joints)):
            raise ValueError(
                f"joint groups must partition 0..{n_joints - 1}; got {sorted(all_idx)}"
            )

    def by_name(self, name: str) -> tuple[int, ...]:
        if name not in GROUP_NAMES:
            raise ValueError(f"unknown joint group {name!r}")
        return getattr(self, name)

    @property
    def arms(self) -> tuple[int, ...]:
        return self.left_arm + self.right_arm

    @property
    def hands(self) -> tuple[int, ...]:
        return self.left_hand + self.right_hand

    @property
    def upper_body(self) -> tuple[int, ...]:
        """Torso plus both arms: the joints commanded by upper-body actions."""
        return self.torso + self.left_arm + self.right_arm


@dataclass(frozen=True)
class Configuration:
    """Base planar pose plus the joint-position vector q."""

    base: PlanarPose
    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64).copy()
        q.flags.writeable = False
        object.__setattr__(self, "q", q)

    def with_q(self, idx, values) -> "Configuration":
        q = self.q.copy()
        q[list(idx)] = values
        return Configuration(self.base, q)

    def with_base(self, base: PlanarPose) -> "Configuration":
        return Configuration(base, self.q)


class RobotModel:
    """Immutable kinematic tree with grouped joints and named end-effector frames.

    Construction validates that the link graph is a tree rooted at the base
    link, that names are unique, and that the joint groups partition the
    joint set. All queries are pure functions of (model, configuration).
    """

    def __init__(
        self,
        name: str,
        links: list[Link],
        joints: list[Joint],
        end_effectors: list[EndEffector],
        groups: JointGroups,
        base_link: str,
        height_limits: tuple[float, float] = (0.2, 1.2),
    ):
        self.name = name
        self.joints = tuple(joints)
        self.groups = groups
        self.base_link = base_link
        self.height_limits = (float(height_limits[0]), float(height_limits[1]))
        groups.validate(len(joints))

        names = [l.name for l in links]
        if len(set(names)) != len(names):
            raise ValueError("duplicate link names")
        jnames = [j.name for j in joints]
        if len(set(jnames)) != len(jnames):
            raise ValueError("duplicate joint names")
        by_name = {l.name: l for l in links}
        if base_link not in by_name:
            raise ValueError(f"base link {base_link!r} not among links")
        if by_name[base_link].parent is not None:
            raise ValueError("base link must have no parent")

        # Topological order with cycle/orphan detection.
        ordered: list[Link] = []
        placed = {base_link}
        pending = [l for l in links if l.name != base_link]
        while pending:
            progressed = False
            rest = []
            for l in pending:
                if l.parent in placed:
                    ordered.append(l)
                    placed.add(l.name)
                    progressed = True
                else:
                    rest.append(l)
            if not progressed:
                bad = ", ".join(l.name for l in rest)
                raise ValueError(f"link graph is not a tree rooted at {base_link!r}: {bad}")
            pending = rest
        self.links = tuple([by_name[base_link]] + ordered)
        self._link_index = {l.name: i for i, l in enumerate(self.links)}

        self._joint_index = {j.name: i for i, j in enumerate(self.joints)}
        joint_children = [j.child_link for j in self.joints]
        if len(set(joint_children)) != len(joint_children):
            raise ValueError("two joints drive the same link")
        self._joint_of_link = np.full(len(self.links), -1, dtype=np.int64)
        for ji, j in enumerate(self.joints):
            li = self._link_index.get(j.child_link)
            if li is None:
                raise ValueError(f"joint {j.name} drives unknown link {j.child_link!r}")
            if self.links[li].joint != j.name:
                raise ValueError(f"link {j.child_link} does not declare joint {j.name}")
            self._joint_of_link[li] = ji
        for l in self.links:
            if l.joint is not None and l.joint not in self._joint_index:
                raise ValueError(f"link {l.name} references unknown joint {l.joint!r}")

        ee_names = [e.name for e in end_effectors]
        if len(set(ee_names)) != len(ee_names):
            raise ValueError("duplicate end-effector names")
        for e in end_effectors:
            if e.link not in self._link_index:
                raise ValueError(f"end-effector {e.name} on unknown link {e.link!r}")
            if e.name in self._link_index:
                raise ValueError(f"end-effector {e.name} shadows a link name")
        self.end_effectors = {e.name: e for e in end_effectors}

        self._parent_index = np.array(
            [-1] + [self._link_index[l.parent] for l in self.links[1:]], dtype=np.int64
        )
        self._lo = np.array([j.limits[0] for j in self.joints])
        self._hi = np.array([j.limits[1] for j in self.joints])
        self._chain_cache: dict[str, tuple[int, ...]] = {}
        self._ancestor_cache: dict[str, frozenset[int]] = {}
        # Flat scalar tables for the kinematics inner loop.
        self._fk_parent = [int(x) for x in self._parent_index]
        self._fk_origin_q = [tuple(float(v) for v in l.origin.rotation) for l in self.links]
        self._fk_origin_t = [tuple(float(v) for v in l.origin.translation) for l in self.links]
        self._fk_joint = [int(j) for j in self._joint_of_link]
        self._fk_axis = [
            tuple(float(v) for v in self.joints[j].axis) if j >= 0 else None
            for j in self._fk_joint
        ]
        self._fk_revolute = [
            j >= 0 and self.joints[j].joint_type == REVOLUTE for j in self._fk_joint
        ]
        self._ee_offset_q = {
            name: tuple(float(v) for v in ee.offset.rotation)
            for name, ee in self.end_effectors.items()
        }
        self._ee_offset_t = {
            name: tuple(float(v) for v in ee.offset.translation)
            for name, ee in self.end_effectors.items()
        }

    # -- model queries -------------------------------------------------------

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def joint_limits(self) -> tuple[np.ndarray, np.ndarray]:
        return self._lo, self._hi

    def link_index(self, name: str) -> int:
        try:
            return self._link_index[name]
        except KeyError:
            raise UnknownFrameError(f"unknown link {name!r}") from None

    def frame_names(self) -> list[str]:
        return [l.name for l in self.links] + list(self.end_effectors)

    def frame_link(self, frame: str) -> str:
        """Link owning a frame name (a link itself or an end-effector)."""
        if frame in self._link_index:
            return frame
        if frame in self.end_effectors:
            return self.end_effectors[frame].link
        raise UnknownFrameError(f"unknown frame {frame!r}")

    def chain_joints(self, frame: str) -> tuple[int, ...]:
        """Joint indices on the path from the base to `frame`, base first."""
        if frame in self._chain_cache:
            return self._chain_cache[frame]
        li = self._link_index[self.frame_link(frame)]
        chain = []
        while li >= 0:
            ji = self._joint_of_link[li]
            if ji >= 0:
                chain.append(int(ji))
            li = self._parent_index[li]
        result = tuple(reversed(chain))
        self._chain_cache[frame] = result
        return result

    def arm_of_frame(self, frame: str) -> str | None:
        """'left_arm' or 'right_arm' if the frame hangs off that arm chain."""
        chain = set(self.chain_joints(frame))
        for arm in ("left_arm", "right_arm"):
            if chain & set(self.groups.by_name(arm)):
                return arm
        return None

    def hand_group_of_frame(self, frame: str) -> tuple[int, ...]:
        arm = self.arm_of_frame(frame)
        if arm is None:
            return ()
        return self.groups.by_name("left_hand" if arm == "left_arm" else "right_hand")

    def configuration(self, base: PlanarPose, q) -> Configuration:
        """Validated constructor: raises JointLimitError on any violation."""
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.n_joints,):
            raise ValueError(f"q must have {self.n_joints} entries, got {q.shape}")
        bad = np.flatnonzero((q < self._lo - 1e-12) | (q > self._hi + 1e-12))
        if bad.size:
            details = ", ".join(
                f"{self.joints[i].name}={q[i]:.4f} not in [{self._lo[i]:.4f}, {self._hi[i]:.4f}]"
                for i in bad
            )
            raise JointLimitError(details)
        return Configuration(base, q)

    def clamp_q(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self._lo, self._hi)

    def clamp_q_subset(self, values, idx) -> np.ndarray:
        idx = list(idx)
        return np.clip(np.asarray(values, dtype=np.float64), self._lo[idx], self._hi[idx])

    def zero_configuration(self, base: PlanarPose | None = None) -> Configuration:
        q = np.clip(np.zeros(self.n_joints), self._lo, self._hi)
        return Configuration(base or PlanarPose(), q)

    # -- kinematics ----------------------------------------------------------

    def _ancestors(self, frame: str) -> frozenset[int]:
        """Link indices on the path from base to the frame's link (inclusive)."""
        if frame in self._ancestor_cache:
            return self._ancestor_cache[frame]
        li = self._link_index[self.frame_link(frame)]
        out = set()
        while li >= 0:
            out.add(li)
            li = self._fk_parent[li]
        result = frozenset(out)
        self._ancestor_cache[frame] = result
        return result

    def _link_fk(self, c: Configuration, needed: frozenset[int] | None = None):
        """World (quat, trans) per link as scalar tuples, plus per-joint world
        axis and joint-frame origin. With `needed`, only those links (which
        must be ancestor-closed) are computed; the rest stay None."""
        nl = len(self.links)
        quats: list = [None] * nl
        trans: list = [None] * nl
        half = 0.5 * c.base.yaw
        quats[0] = (math.cos(half), 0.0, 0.0, math.sin(half))
        trans[0] = (c.base.x, c.base.y, c.base.height)
        jaxis: list = [None] * self.n_joints
        jorigin: list = [None] * self.n_joints
        q = c.q
        parent = self._fk_parent
        origin_q = self._fk_origin_q
        origin_t = self._fk_origin_t
        joint_of = self._fk_joint
        axes = self._fk_axis
        revolute = self._fk_revolute
        for li in range(1, nl):
            if needed is not None and li not in needed:
                continue
            pi = parent[li]
            pw, px, py, pz = quats[pi]
            tx, ty, tz = trans[pi]
            vx, vy, vz = origin_t[li]
            # rotate origin offset by the parent quaternion, then translate
            ux = py * vz - pz * vy + pw * vx
            uy = pz * vx - px * vz + pw * vy
            uz = px * vy - py * vx + pw * vz
            ox = tx + vx + 2.0 * (py * uz - pz * uy)
            oy = ty + vy + 2.0 * (pz * ux - px * uz)
            oz = tz + vz + 2.0 * (px * uy - py * ux)
            bw, bx, by, bz = origin_q[li]
            qw = pw * bw - px * bx - py * by - pz * bz
            qx = pw * bx + px * bw + py * bz - pz * by
            qy = pw * by - px * bz + py * bw + pz * bx
            qz = pw * bz + px * by - py * bx + pz * bw
            ji = joint_of[li]
            if ji >= 0:
                ax, ay, az = axes[li]
                ux = qy * az - qz * ay + qw * ax
                uy = qz * ax - qx * az + qw * ay
                uz = qx * ay - qy * ax + qw * az
                awx = ax + 2.0 * (qy * uz - qz * uy)
                awy = ay + 2.0 * (qz * ux - qx * uz)
                awz = az + 2.0 * (qx * uy - qy * ux)
                jaxis[ji] = (awx, awy, awz)
                jorigin[ji] = (ox, oy, oz)
                val = q[ji]
                if revolute[li]:
                    h = 0.5 * val
                    s = math.sin(h)
                    cw = math.cos(h)
                    jx, jy, jz = ax * s, ay * s, az * s
                    nw = qw * cw - qx * jx - qy * jy - qz * jz
                    nx = qw * jx + qx * cw + qy * jz - qz * jy
                    ny = qw * jy - qx * jz + qy * cw + qz * jx
                    nz = qw * jz + qx * jy - qy * jx + qz * cw
                    qw, qx, qy, qz = nw, nx, ny, nz
                else:
                    ox += awx * val
                    oy += awy * val
                    oz += awz * val
            quats[li] = (qw, qx, qy, qz)
            trans[li] = (ox, oy, oz)
        return quats, trans, jaxis, jorigin

    def _frame_tuple(self, frame: str, quats, trans) -> tuple[tuple, tuple]:
        """(quat, trans) of a frame from raw link FK output (applies EE offset)."""
        li = self._link_index[self.frame_link(frame)]
        qw, qx, qy, qz = quats[li]
        tx, ty, tz = trans[li]
        if frame in self.end_effectors:
            off = self.end_effectors[frame]
            vx, vy, vz = self._ee_offset_t[frame]
            ux = qy * vz - qz * vy + qw * vx
            uy = qz * vx - qx * vz + qw * vy
            uz = qx * vy - qy * vx + qw * vz
            tx = tx + vx + 2.0 * (qy * uz - qz * uy)
            ty = ty + vy + 2.0 * (qz * ux - qx * uz)
            tz = tz + vz + 2.0 * (qx * uy - qy * ux)
            bw, bx, by, bz = self._ee_offset_q[frame]
            nw = qw * bw - qx * bx - qy * by - qz * bz
            nx = qw * bx + qx * bw + qy * bz - qz * by
            ny = qw * by - qx * bz + qy * bw + qz * bx
            nz = qw * bz + qx * by - qy * bx + qz * bw
            qw, qx, qy, qz = nw, nx, ny, nz
        return (qw, qx, qy, qz), (tx, ty, tz)

    def forward_kinematics(self, c: Configuration) -> dict[str, Pose]:
        """World pose of every link frame and end-effector frame."""
        quats, trans, _, _ = self._link_fk(c)
        out = {l.name: Pose(quats[i], trans[i]) for i, l in enumerate(self.links)}
        for name, ee in self.end_effectors.items():
            out[name] = compose(out[ee.link], ee.offset)
        return out

    def frame_pose(self, c: Configuration, frame: str) -> Pose:
        quats, trans, _, _ = self._link_fk(c, self._ancestors(frame))
        q, t = self._frame_tuple(frame, quats, trans)
        return Pose(np.array(q), np.array(t))

    def link_fk_raw(self, c: Configuration, needed: frozenset[int] | None = None):
        """Raw per-link (quat tuples, trans tuples); internal fast path."""
        quats, trans, _, _ = self._link_fk(c, needed)
        return quats, trans

    def jacobian(self, c: Configuration, frame: str, free_joints) -> np.ndarray:
        """Spatial Jacobian of `frame` w.r.t. the given free joints.

        Column i stacks [linear; angular] world velocity of the frame per unit
        velocity of free joint i; joints off the base-to-frame path get zero
        columns.
        """
        self.frame_link(frame)
        _, jacs = self.frames_with_jacobians(c, [frame], free_joints)
        return jacs[frame]

    def frames_with_jacobians(
        self, c: Configuration, frames: list[str], free_joints, base_dofs: bool = False
    ) -> tuple[dict[str, Pose], dict[str, np.ndarray]]:
        """Poses and Jacobians of several frames from one kinematics pass.

        Columns follow free_joints order; with base_dofs, four extra columns
        for the planar base (world x, world y, yaw about +z at the base
        origin, height) are appended.
        """
        needed = frozenset().union(*(self._ancestors(f) for f in frames))
        quats, trans, jaxis, jorigin = self._link_fk(c, needed)
        bx, by, bz = trans[0]
        poses: dict[str, Pose] = {}
        jacs: dict[str, np.ndarray] = {}
        free = list(free_joints)
        ncols = len(free) + (4 if base_dofs else 0)
        for frame in frames:
            fq, ft = self._frame_tuple(frame, quats, trans)
            poses[frame] = Pose(np.array(fq), np.array(ft))
            px, py, pz = ft
            on_path = self._chain_set(frame)
            jac = np.zeros((6, ncols))
            for col, ji in enumerate(free):
                if ji not in on_path:
                    continue
                ax, ay, az = jaxis[ji]
                if self.joints[ji].joint_type == REVOLUTE:
                    jx, jy, jz = jorigin[ji]
                    rx, ry, rz = px - jx, py - jy, pz - jz
                    jac[0, col] = ay * rz - az * ry
                    jac[1, col] = az * rx - ax * rz
                    jac[2, col] = ax * ry - ay * rx
                    jac[3, col] = ax
                    jac[4, col] = ay
                    jac[5, col] = az
                else:
                    jac[0, col] = ax
                    jac[1, col] = ay
                    jac[2, col] = az
            if base_dofs:
                k = len(free)
                jac[0, k] = 1.0  # world x
                jac[1, k + 1] = 1.0  # world y
                jac[0, k + 2] = -(py - by)  # yaw about +z at the base origin
                jac[1, k + 2] = px - bx
                jac[5, k + 2] = 1.0
                jac[2, k + 3] = 1.0  # height
            jacs[frame] = jac
        return poses, jacs

    def _chain_set(self, frame: str) -> frozenset[int]:
        key = ("chain_set", frame)
        cached = self._ancestor_cache.get(key)  # type: ignore[arg-type]
        if cached is None:
            cached = frozenset(self.chain_joints(frame))
            self._ancestor_cache[key] = cached  # type: ignore[index]
        return cached

    def rigid_component(self, frame: str, free_joints) -> set[str]:
        """Links rigidly attached to `frame`'s link when only `free_joints` move.

        Traverses the link tree across fixed connections and joints not in
        free_joints, in both directions.
        """
        start = self.frame_link(frame)
        free = set(free_joints)
        rigid_edge = [
            self._joint_of_link[li] < 0 or int(self._joint_of_link[li]) not in free
            for li in range(len(self.links))
        ]
        adjacency: dict[int, list[int]] = {i: [] for i in range(len(self.links))}
        for li in range(1, len(self.links)):
            if rigid_edge[li]:
                pi = int(self._parent_index[li])
                adjacency[li].append(pi)
                adjacency[pi].append(li)
        seen = {self._link_index[start]}
        stack = [self._link_index[start]]
        while stack:
            cur = stack.pop()
            for nxt in adjacency[cur]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return {self.links[i].name for i in seen}
