"""Sphere-decomposition collision geometry and queries.

Meshes are over-approximated by budgeted tangent spheres: surface points are
sampled area-uniformly, each seeds a maximal ball grown inward along the face
normal (the medial-ball radius along that ray), radii are inflated by a
margin, and a greedy pass keeps the spheres that maximize surface coverage.
All collision checks in the system reduce to sphere-sphere tests over these
sets.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from locogen.kinematics import Configuration, RobotModel
from locogen.pose import Pose, compose, invert, quat_rotate

RADIUS_FLOOR = 1e-4
SHRINK_MARGIN = 1e-6


class AttachmentError(ValueError):
    """Object attachment conflict."""


@dataclass(frozen=True)
class TriMesh:
    """Triangle mesh: (n,3) float vertices and (m,3) int faces.

    Faces must wind counter-clockwise seen from outside, so the cross-product
    normal points outward. Degenerate (zero-area) faces are rejected.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) == 0:
            raise ValueError("vertices must be a nonempty (n, 3) array")
        if f.ndim != 2 or f.shape[1] != 3 or len(f) == 0:
            raise ValueError("faces must be a nonempty (m, 3) array")
        if f.min() < 0 or f.max() >= len(v):
            raise ValueError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
        cross = np.cross(b - a, c - a)
        areas = 0.5 * np.linalg.norm(cross, axis=1)
        if np.any(areas < 1e-12):
            bad = np.flatnonzero(areas < 1e-12)
            raise ValueError(f"degenerate faces at indices {bad.tolist()}")
        object.__setattr__(self, "_areas", areas)
        object.__setattr__(self, "_normals", cross / (2.0 * areas[:, None]))

    @property
    def face_areas(self) -> np.ndarray:
        return self._areas

    @property
    def face_normals(self) -> np.ndarray:
        """Outward unit normals (per face)."""
        return self._normals

    def bounding_radius(self) -> float:
        center = 0.5 * (self.vertices.min(axis=0) + self.vertices.max(axis=0))
        return float(np.linalg.norm(self.vertices - center, axis=1).max())


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        if self.radius <= 0:
            raise ValueError(f"sphere radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class SphereSet:
    """Collision spheres of one body, as an (n, 4) array [cx, cy, cz, r]."""

    owner: str
    spheres: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.spheres, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 4 or len(arr) == 0:
            raise ValueError(f"{self.owner}: sphere set must be a nonempty (n, 4) array")
        if np.any(arr[:, 3] <= 0):
            raise ValueError(f"{self.owner}: sphere radii must be positive")
        object.__setattr__(self, "spheres", arr)

    def __len__(self) -> int:
        return len(self.spheres)


# -- surface sampling and tangent-sphere fitting ------------------------------


def sample_surface(mesh: TriMesh, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Sample n points area-uniformly; returns (points (n,3), face indices (n,))."""
    if n < 1:
        raise ValueError("need n >= 1 samples")
    areas = mesh.face_areas
    probs = areas / areas.sum()
    fidx = rng.choice(len(areas), size=n, p=probs)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    tri = mesh.vertices[mesh.faces[fidx]]
    pts = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
    return pts, fidx


def _closest_points_on_faces(mesh: TriMesh, p: np.ndarray) -> np.ndarray:
    """Closest point to p on every face (vectorized Ericson region test)."""
    tri = mesh.vertices[mesh.faces]
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    out = np.empty_like(a)
    done = np.zeros(len(a), dtype=bool)

    m = (d1 <= 0) & (d2 <= 0)  # vertex a
    out[m] = a[m]
    done |= m
    m = ~done & (d3 >= 0) & (d4 <= d3)  # vertex b
    out[m] = b[m]
    done |= m
    m = ~done & (d6 >= 0) & (d5 <= d6)  # vertex c
    out[m] = c[m]
    done |= m

    vc = d1 * d4 - d3 * d2
    m = ~done & (vc <= 0) & (d1 >= 0) & (d3 <= 0)  # edge ab
    t = np.where(d1 - d3 != 0, d1 / np.where(d1 - d3 == 0, 1.0, d1 - d3), 0.0)
    out[m] = a[m] + t[m, None] * ab[m]
    done |= m

    vb = d5 * d2 - d1 * d6
    m = ~done & (vb <= 0) & (d2 >= 0) & (d6 <= 0)  # edge ac
    t = np.where(d2 - d6 != 0, d2 / np.where(d2 - d6 == 0, 1.0, d2 - d6), 0.0)
    out[m] = a[m] + t[m, None] * ac[m]
    done |= m

    va = d3 * d6 - d5 * d4
    m = ~done & (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)  # edge bc
    denom = (d4 - d3) + (d5 - d6)
    t = np.where(denom != 0, (d4 - d3) / np.where(denom == 0, 1.0, denom), 0.0)
    out[m] = b[m] + t[m, None] * (c[m] - b[m])
    done |= m

    m = ~done  # face interior
    denom = va + vb + vc
    denom = np.where(denom == 0, 1.0, denom)
    v = vb / denom
    w = vc / denom
    out[m] = a[m] + v[m, None] * ab[m] + w[m, None] * ac[m]
    return out


def fit_tangent_sphere(
    mesh: TriMesh,
    point,
    normal,
    floor: float = RADIUS_FLOOR,
    min_separation_angle: float = 0.45,
) -> Sphere:
    """Maximal ball tangent to the surface at `point`, grown along the inward
    `normal` until it would cross another face (the medial-ball radius along
    that ray).

    Contacts whose separation angle at the ball center falls below
    `min_separation_angle` are treated as facet-discretization noise and
    ignored (the standard shrinking-ball denoise); without this, every point
    near a convex mesh edge collapses to a zero ball. Returns a floor-radius
    sphere when the ball collapses or is unbounded (no opposing face).
    """
    p = np.asarray(point, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        raise ValueError("degenerate normal")
    n = n / norm
    cos_max = np.cos(min_separation_angle)

    r = 4.0 * mesh.bounding_radius() + 1.0
    bounded = False
    for _ in range(64):
        center = p + r * n
        cps = _closest_points_on_faces(mesh, center)
        d = cps - p
        denom = 2.0 * (d @ n)
        dist2 = np.einsum("ij,ij->i", d, d)
        valid = (denom > 1e-12) & (dist2 > 1e-18)
        if not valid.any():
            break
        r_cand = dist2[valid] / denom[valid]
        # Separation angle at the candidate center between the tangent point
        # and the touching point: cos = (p-c)·(x-c) / (r |x-c|).
        x = cps[valid]
        c_cand = p[None, :] + r_cand[:, None] * n[None, :]
        to_p = p[None, :] - c_cand
        to_x = x - c_cand
        norms = r_cand * np.linalg.norm(to_x, axis=1)
        cosang = np.einsum("ij,ij->i", to_p, to_x) / np.where(norms < 1e-18, 1.0, norms)
        keep = (cosang <= cos_max) & (norms >= 1e-18)
        if not keep.any():
            break
        r_new = float(r_cand[keep].min())
        if r_new >= r - 1e-12:
            bounded = True
            break
        bounded = True
        r = r_new
    if not bounded:
        r = floor
    r = max(r, floor)
    return Sphere(p + r * n, r)


def inflate(s: SphereSet, eps: float) -> SphereSet:
    """Grow every radius by exactly eps; centers unchanged."""
    if eps < 0:
        raise ValueError("inflation margin must be nonnegative")
    out = s.spheres.copy()
    out[:, 3] += eps
    return SphereSet(s.owner, out)


def select_spheres(
    candidates: list[Sphere],
    mesh: TriMesh,
    budget: int,
    *,
    seed: int = 0,
    n_eval: int | None = None,
    owner: str = "mesh",
) -> SphereSet:
    """Greedy max-coverage selection of at most `budget` candidate spheres.

    Coverage is measured on a fixed area-uniform sample set of at least
    10x budget points. Each step takes the candidate covering the most
    not-yet-covered samples; ties break toward larger radius, then lower
    candidate index. Zero-gain candidates are never taken.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if not candidates:
        raise ValueError("candidate list is empty")
    rng = np.random.default_rng(seed)
    n_eval = n_eval or max(512, 10 * budget)
    pts, _ = sample_surface(mesh, n_eval, rng)

    centers = np.array([c.center for c in candidates])
    radii = np.array([c.radius for c in candidates])
    d2 = ((pts[None, :, :] - centers[:, None, :]) ** 2).sum(axis=2)
    covers = d2 <= (radii[:, None] ** 2)

    chosen: list[int] = []
    uncovered = np.ones(n_eval, dtype=bool)
    for _ in range(min(budget, len(candidates))):
        gains = (covers & uncovered[None, :]).sum(axis=1)
        best = int(np.lexsort((np.arange(len(candidates)), -radii, -gains))[0])
        if gains[best] == 0:
            break
        chosen.append(best)
        uncovered &= ~covers[best]
    if not chosen:
        # Degenerate candidates (nothing covers a sample): keep the largest.
        chosen = [int(np.argmax(radii))]
    return SphereSet(owner, np.array([[*candidates[i].center, candidates[i].radius] for i in chosen]))


def decompose_mesh(
    mesh: TriMesh,
    budget: int,
    eps: float,
    seed: int,
    *,
    owner: str = "mesh",
    n_candidates: int = 512,
) -> SphereSet:
    """Full decomposition pipeline: sample, fit tangent spheres, inflate, select."""
    rng = np.random.default_rng(seed)
    pts, fidx = sample_surface(mesh, n_candidates, rng)
    inward = -mesh.face_normals[fidx]
    fitted = [fit_tangent_sphere(mesh, p, n) for p, n in zip(pts, inward)]
    inflated = [Sphere(s.center, s.radius + eps) for s in fitted]
    return select_spheres(inflated, mesh, budget, seed=seed + 1, owner=owner)


def coverage_fraction(spheres: SphereSet, mesh: TriMesh, n_samples: int, seed: int) -> float:
    """Fraction of fresh surface samples inside any sphere of the set."""
    rng = np.random.default_rng(seed)
    pts, _ = sample_surface(mesh, n_samples, rng)
    c = spheres.spheres[:, :3]
    r = spheres.spheres[:, 3]
    d2 = ((pts[None, :, :] - c[:, None, :]) ** 2).sum(axis=2)
    return float((d2 <= r[:, None] ** 2).any(axis=0).mean())


# -- collision world -----------------------------------------------------------


@dataclass(frozen=True)
class Attachment:
    ee: str
    obj: str
    offset: Pose  # object pose relative to the end-effector frame


@dataclass(frozen=True)
class ObjectBody:
    name: str
    spheres: SphereSet | None  # None until lazily decomposed
    pose: Pose
    movable: bool
    mesh: TriMesh | None = None
    budget: int = 64


@dataclass(frozen=True)
class CollisionWorld:
    """Immutable snapshot of everything that can collide.

    Robot link spheres come from the model (with optional shrunk overrides);
    objects carry their own sphere sets and world poses. Attached objects pose
    with their end-effector frame. Mutating operations return new snapshots.
    """

    model: RobotModel
    objects: dict[str, ObjectBody]
    allowed_pairs: frozenset[frozenset[str]] = frozenset()
    attachments: dict[str, Attachment] = field(default_factory=dict)
    link_overrides: dict[str, np.ndarray] = field(default_factory=dict)
    object_overrides: dict[str, np.ndarray] = field(default_factory=dict)

    @staticmethod
    def build(
        model: RobotModel,
        objects: list[ObjectBody] = (),
        extra_allowed: set[frozenset[str]] = frozenset(),
    ) -> "CollisionWorld":
        allowed = set(extra_allowed)
        # Adjacent links share a joint and may legitimately overlap there.
        for link in model.links:
            if link.parent is not None:
                allowed.add(frozenset((link.name, link.parent)))
        names = [o.name for o in objects]
        if len(set(names)) != len(names):
            raise ValueError("duplicate object names")
        for o in objects:
            if o.name in {l.name for l in model.links}:
                raise ValueError(f"object {o.name!r} shadows a link name")
        return CollisionWorld(model, {o.name: o for o in objects}, frozenset(allowed))

    # -- snapshot edits ------------------------------------------------------

    def with_object_pose(self, name: str, pose: Pose) -> "CollisionWorld":
        obj = replace(self.objects[name], pose=pose)
        return replace(self, objects={**self.objects, name: obj})

    def with_object_poses(self, poses: dict[str, Pose]) -> "CollisionWorld":
        objs = dict(self.objects)
        for name, pose in poses.items():
            objs[name] = replace(objs[name], pose=pose)
        return replace(self, objects=objs)

    def with_attachments(self, attachments: dict[str, Attachment]) -> "CollisionWorld":
        allowed = set(self.allowed_pairs)
        for att in attachments.values():
            for link in self._hand_links(att.ee):
                allowed.add(frozenset((link, att.obj)))
        return replace(self, attachments=dict(attachments), allowed_pairs=frozenset(allowed))

    def clear_shrink(self) -> "CollisionWorld":
        return replace(self, link_overrides={}, object_overrides={})

    def _hand_links(self, ee: str) -> set[str]:
        """The hand assembly of an end-effector: its rigid component treating
        every non-hand joint as free."""
        non_hand = [i for i in range(self.model.n_joints) if i not in self.model.groups.hands]
        return self.model.rigid_component(ee, non_hand)

    # -- posed geometry --------------------------------------------------------

    def link_spheres(self, link: str) -> np.ndarray | None:
        if link in self.link_overrides:
            return self.link_overrides[link]
        idx = self.model.link_index(link)
        return self.model.links[idx].spheres

    def object_spheres(self, name: str) -> np.ndarray | None:
        if name in self.object_overrides:
            return self.object_overrides[name]
        body = self.objects[name]
        return None if body.spheres is None else body.spheres.spheres

    def object_world_pose(self, name: str, fk: dict[str, Pose]) -> Pose:
        for att in self.attachments.values():
            if att.obj == name:
                return compose(fk[att.ee], att.offset)
        return self.objects[name].pose

    def _posed_bodies(self, c: Configuration):
        """World-space spheres per body: list of (name, centers (n,3), radii (n,))."""
        quats, trans = self.model.link_fk_raw(c)
        bodies = []
        for li, link in enumerate(self.model.links):
            spheres = self.link_spheres(link.name)
            if spheres is None or len(spheres) == 0:
                continue
            centers = _transform_raw(quats[li], trans[li], spheres[:, :3])
            bodies.append((link.name, centers, spheres[:, 3]))
        attached_pose = {}
        for att in self.attachments.values():
            q, t = self.model._frame_tuple(att.ee, quats, trans)
            attached_pose[att.obj] = compose(Pose(np.array(q), np.array(t)), att.offset)
        for name in self.objects:
            spheres = self.object_spheres(name)
            if spheres is None or len(spheres) == 0:
                continue
            p = attached_pose.get(name) or self.objects[name].pose
            centers = _transform_points(p, spheres[:, :3])
            bodies.append((name, centers, spheres[:, 3]))
        return bodies

    def is_robot_body(self, name: str) -> bool:
        return name not in self.objects

    def attached_object_names(self) -> set[str]:
        return {a.obj for a in self.attachments.values()}


def _transform_raw(quat, t, pts: np.ndarray) -> np.ndarray:
    w, x, y, z = quat
    r = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    return pts @ r.T + t


def _transform_points(pose: Pose, pts: np.ndarray) -> np.ndarray:
    w, x, y, z = pose.rotation
    r = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    return pts @ r.T + pose.translation


def _colliding_sphere_pairs(bodies, allowed: frozenset[frozenset[str]]):
    """Yield (i, j, si, sj, depth) over colliding sphere pairs of distinct,
    non-exempt bodies, using a bounding-sphere broadphase."""
    nb = len(bodies)
    bcenters = np.empty((nb, 3))
    bradii = np.empty(nb)
    for i, (_, centers, radii) in enumerate(bodies):
        mid = 0.5 * (centers.min(axis=0) + centers.max(axis=0))
        bcenters[i] = mid
        bradii[i] = np.sqrt(((centers - mid) ** 2).sum(axis=1)).max() + radii.max()
    diff = bcenters[:, None, :] - bcenters[None, :, :]
    bdist = np.sqrt((diff**2).sum(axis=2))
    overlap = bdist <= bradii[:, None] + bradii[None, :]

    for i in range(nb):
        for j in range(i + 1, nb):
            if not overlap[i, j]:
                continue
            if frozenset((bodies[i][0], bodies[j][0])) in allowed:
                continue
            ci, ri = bodies[i][1], bodies[i][2]
            cj, rj = bodies[j][1], bodies[j][2]
            d = np.sqrt(((ci[:, None, :] - cj[None, :, :]) ** 2).sum(axis=2))
            pen = ri[:, None] + rj[None, :] - d
            hit = np.argwhere(pen > 0)
            for si, sj in hit:
                yield i, j, int(si), int(sj), float(pen[si, sj])


def check_collision(world: CollisionWorld, c: Configuration) -> list[tuple[str, str, float]]:
    """Colliding body pairs (not exempt) with their worst penetration depth.

    Two bodies collide iff some sphere pair satisfies |c1 - c2| < r1 + r2;
    the reported depth is max(r1 + r2 - |c1 - c2|). Empty list means
    collision-free. Output is sorted by body-name pair for determinism.
    """
    bodies = world._posed_bodies(c)
    worst: dict[tuple[str, str], float] = {}
    for i, j, _, _, depth in _colliding_sphere_pairs(bodies, world.allowed_pairs):
        key = tuple(sorted((bodies[i][0], bodies[j][0])))
        if depth > worst.get(key, 0.0):
            worst[key] = depth
    return [(a, b, worst[(a, b)]) for a, b in sorted(worst)]


def shrink_colliding(
    world: CollisionWorld,
    c: Configuration,
    restrict_to: set[str] | None = None,
) -> CollisionWorld:
    """Shrink in-collision robot spheres just enough to clear their contacts.

    Every robot-link sphere (and attached-object sphere) currently in
    collision at `c` has its radius reduced by the minimal amount that removes
    all of its collisions, with a small margin, floored at the minimum radius.
    With `restrict_to`, only spheres of those links shrink (attached objects
    shrink when their end-effector's link is included). The returned snapshot
    is meant for the immediately following IK or planning call.
    """
    bodies = world._posed_bodies(c)
    attached = world.attached_object_names()
    ee_link_of_obj = {
        att.obj: world.model.frame_link(att.ee) for att in world.attachments.values()
    }

    def shrinkable(name: str) -> bool:
        if world.is_robot_body(name):
            return restrict_to is None or name in restrict_to
        if name in attached:
            return restrict_to is None or ee_link_of_obj[name] in restrict_to
        return False

    # name -> sphere index -> new radius (min over colliding partners)
    new_radius: dict[str, dict[int, float]] = {}
    for i, j, si, sj, depth in _colliding_sphere_pairs(bodies, world.allowed_pairs):
        for (bi, sidx), (bj, sjdx) in (((i, si), (j, sj)), ((j, sj), (i, si))):
            name = bodies[bi][0]
            if not shrinkable(name):
                continue
            d = bodies[bi][2][sidx] + bodies[bj][2][sjdx] - depth
            target = d - bodies[bj][2][sjdx] - SHRINK_MARGIN
            target = max(target, RADIUS_FLOOR)
            cur = new_radius.setdefault(name, {})
            cur[sidx] = min(cur.get(sidx, np.inf), target)

    if not new_radius:
        return world
    link_overrides = dict(world.link_overrides)
    object_overrides = dict(world.object_overrides)
    for name, updates in new_radius.items():
        if world.is_robot_body(name):
            base = world.link_spheres(name).copy()
            for sidx, r in updates.items():
                base[sidx, 3] = min(base[sidx, 3], r)
            link_overrides[name] = base
        else:
            base = world.object_spheres(name).copy()
            for sidx, r in updates.items():
                base[sidx, 3] = min(base[sidx, 3], r)
            object_overrides[name] = base
    return replace(world, link_overrides=link_overrides, object_overrides=object_overrides)


def attach_object(
    world: CollisionWorld,
    ee: str,
    obj: str,
    mesh: TriMesh | None,
    c: Configuration,
    *,
    budget: int | None = None,
    eps: float = 0.01,
    seed: int | None = None,
) -> CollisionWorld:
    """Attach a movable object rigidly to an end-effector frame.

    Lazily computes (and caches) the object's sphere decomposition if it has
    none, captures the grasp offset from the current configuration, and
    exempts the hand assembly from collisions with the object. Idempotent for
    a repeated (ee, obj) attach; attaching an object held by a different
    end-effector is an error.
    """
    body = world.objects.get(obj)
    if body is None or not body.movable:
        raise AttachmentError(f"{obj!r} is not a movable object")
    for att in world.attachments.values():
        if att.obj == obj and att.ee != ee:
            raise AttachmentError(f"{obj!r} already attached to {att.ee!r}")
    if ee in world.attachments and world.attachments[ee].obj == obj:
        return world
    if ee in world.attachments:
        raise AttachmentError(f"{ee!r} already holds {world.attachments[ee].obj!r}")

    objects = world.objects
    if body.spheres is None:
        mesh = mesh if mesh is not None else body.mesh
        if mesh is None:
            raise AttachmentError(f"{obj!r} has neither spheres nor a mesh to decompose")
        if seed is None:
            seed = zlib.crc32(obj.encode())
        spheres = decompose_mesh(mesh, budget or body.budget, eps, seed, owner=obj)
        objects = {**objects, obj: replace(body, spheres=spheres)}

    fk = world.model.forward_kinematics(c)
    offset = compose(invert(fk[ee]), world.object_world_pose(obj, fk))
    attachments = {**world.attachments, ee: Attachment(ee, obj, offset)}
    return replace(world, objects=objects).with_attachments(attachments)


def detach_object(world: CollisionWorld, ee: str, object_pose: Pose) -> CollisionWorld:
    """Release an attachment, leaving the object at its given world pose and
    dropping the hand-object collision exemptions."""
    if ee not in world.attachments:
        return world
    att = world.attachments[ee]
    attachments = {k: v for k, v in world.attachments.items() if k != ee}
    allowed = set(world.allowed_pairs)
    for link in world._hand_links(ee):
        allowed.discard(frozenset((link, att.obj)))
    out = replace(world, attachments=attachments, allowed_pairs=frozenset(allowed))
    return out.with_object_pose(att.obj, object_pose)
