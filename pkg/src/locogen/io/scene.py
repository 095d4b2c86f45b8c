"""Scene file: objects, obstacles, initial-pose distributions, success predicate.

Schema (YAML, format tag ``locogen-scene/1``)::

    format: locogen-scene/1
    name: <scene name>
    robot_start: {base: [x, y, yaw, height]}
    objects:
      - name: <object>
        kind: static | movable
        pose: <pose>                      # nominal world pose
        spheres: [[cx, cy, cz, r], ...]   # explicit collision spheres, or
        primitive: {type: box|sphere, size: [sx, sy, sz] | radius: r}
        mesh: <path.obj>                  # alternative to primitive
        budget: <sphere budget for decomposition, default 64>
        distribution:                     # movable only; offsets from nominal
          x: [lo, hi]
          y: [lo, hi]
          yaw: [lo, hi]                   # rotation about the object origin
    allow_contact: [[body, body], ...]    # expected resting contacts
    success:
      - {type: above_height, frame: f, height: z}
      - {type: in_region, frame: f, lo: [..], hi: [..], relative_to: g}
      - {type: relative_pose, frame: f, reference: g, pose: <pose>,
         pos_tol: t, ang_tol: a}

Objects without explicit spheres are decomposed at load time (deterministic:
the seed derives from the object name), so a scene loads identically across
runs.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from locogen.collision import CollisionWorld, ObjectBody, SphereSet, TriMesh, decompose_mesh
from locogen.executor import (
    FrameAboveHeight,
    FrameInRegion,
    RelativePoseWithin,
    SuccessPredicate,
    WorldState,
)
from locogen.io.robot import parse_pose
from locogen.kinematics import RobotModel
from locogen.pose import PlanarPose, Pose, quat_multiply
from locogen.primitives import box_mesh, icosphere_mesh

FORMAT_TAG = "locogen-scene/1"
DECOMPOSE_EPS = 0.01


class SceneFileError(ValueError):
    """Malformed scene file."""


@dataclass(frozen=True)
class SceneObject:
    name: str
    movable: bool
    pose: Pose
    spheres: SphereSet
    mesh: TriMesh | None
    budget: int
    distribution: dict | None  # {"x": (lo, hi), "y": (...), "yaw": (...)}


@dataclass(frozen=True)
class Scene:
    name: str
    robot_start: PlanarPose
    objects: tuple[SceneObject, ...]
    allow_contact: frozenset[frozenset[str]]
    success: SuccessPredicate

    def object(self, name: str) -> SceneObject:
        for o in self.objects:
            if o.name == name:
                return o
        raise KeyError(f"no object {name!r} in scene {self.name!r}")

    def collision_world(self, model: RobotModel, extra_allowed=frozenset()) -> CollisionWorld:
        bodies = [
            ObjectBody(o.name, o.spheres, o.pose, o.movable, mesh=o.mesh, budget=o.budget)
            for o in self.objects
        ]
        return CollisionWorld.build(model, bodies, set(self.allow_contact) | set(extra_allowed))

    def nominal_state(self, model: RobotModel) -> WorldState:
        c = model.zero_configuration(self.robot_start)
        return WorldState(c, {o.name: o.pose for o in self.objects})

    def sample_initial_state(self, model: RobotModel, rng: np.random.Generator) -> WorldState:
        """Nominal state with movable-object poses drawn from the scene's
        per-object uniform distributions (offset + yaw about the object)."""
        poses = {}
        for o in self.objects:
            pose = o.pose
            if o.movable and o.distribution:
                d = o.distribution
                dx = rng.uniform(*d["x"]) if "x" in d else 0.0
                dy = rng.uniform(*d["y"]) if "y" in d else 0.0
                dyaw = rng.uniform(*d["yaw"]) if "yaw" in d else 0.0
                qz = np.array([np.cos(dyaw / 2), 0.0, 0.0, np.sin(dyaw / 2)])
                pose = Pose(
                    quat_multiply(qz, pose.rotation),
                    pose.translation + np.array([dx, dy, 0.0]),
                )
            poses[o.name] = pose
        c = model.zero_configuration(self.robot_start)
        return WorldState(c, poses)


def _primitive_mesh(spec: dict) -> TriMesh:
    kind = spec.get("type")
    if kind == "box":
        return box_mesh(spec["size"])
    if kind == "sphere":
        return icosphere_mesh(float(spec["radius"]), 2)
    raise SceneFileError(f"unknown primitive type {kind!r}")


def _load_object(entry: dict, base_dir: Path) -> SceneObject:
    name = entry["name"]
    kind = entry.get("kind", "movable")
    if kind not in ("static", "movable"):
        raise SceneFileError(f"object {name}: kind must be static or movable")
    pose = parse_pose(entry.get("pose"))
    budget = int(entry.get("budget", 64))
    mesh = None
    if "mesh" in entry:
        from locogen.io.mesh import load_mesh

        mesh = load_mesh(base_dir / entry["mesh"])
    elif "primitive" in entry:
        mesh = _primitive_mesh(entry["primitive"])
    if "spheres" in entry:
        spheres = SphereSet(name, np.asarray(entry["spheres"], dtype=np.float64))
    elif mesh is not None:
        spheres = decompose_mesh(
            mesh, budget, DECOMPOSE_EPS, seed=zlib.crc32(name.encode()), owner=name
        )
    else:
        raise SceneFileError(f"object {name}: needs spheres, a primitive, or a mesh")
    distribution = None
    if "distribution" in entry:
        if kind != "movable":
            raise SceneFileError(f"object {name}: only movable objects take a distribution")
        distribution = {
            k: (float(v[0]), float(v[1])) for k, v in entry["distribution"].items()
        }
        unknown = set(distribution) - {"x", "y", "yaw"}
        if unknown:
            raise SceneFileError(f"object {name}: unknown distribution keys {sorted(unknown)}")
    return SceneObject(name, kind == "movable", pose, spheres, mesh, budget, distribution)


def _parse_atom(entry: dict):
    kind = entry.get("type")
    if kind == "above_height":
        return FrameAboveHeight(entry["frame"], float(entry["height"]))
    if kind == "in_region":
        return FrameInRegion(
            entry["frame"],
            tuple(float(v) for v in entry["lo"]),
            tuple(float(v) for v in entry["hi"]),
            entry.get("relative_to"),
        )
    if kind == "relative_pose":
        return RelativePoseWithin(
            entry["frame"],
            entry["reference"],
            parse_pose(entry["pose"]),
            float(entry["pos_tol"]),
            float(entry["ang_tol"]),
        )
    raise SceneFileError(f"unknown success atom type {kind!r}")


def load_scene(path: str | Path) -> Scene:
    path = Path(path)
    with open(path) as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict):
        raise SceneFileError(f"{path}: not a mapping")
    if data.get("format") != FORMAT_TAG:
        raise SceneFileError(
            f"{path}: unsupported format {data.get('format')!r}, expected {FORMAT_TAG!r}"
        )
    try:
        objects = tuple(_load_object(e, path.parent) for e in data.get("objects", []))
        names = [o.name for o in objects]
        if len(set(names)) != len(names):
            raise SceneFileError(f"{path}: duplicate object names")
        start = data["robot_start"]["base"]
        atoms = tuple(_parse_atom(e) for e in data["success"])
        allow = frozenset(frozenset(p) for p in data.get("allow_contact", []))
        for pair in allow:
            if len(pair) != 2:
                raise SceneFileError(f"{path}: allow_contact pair {sorted(pair)} is not two bodies")
        return Scene(
            name=data.get("name", path.stem),
            robot_start=PlanarPose(*(float(v) for v in start)),
            objects=objects,
            allow_contact=allow,
            success=SuccessPredicate(atoms),
        )
    except KeyError as e:
        raise SceneFileError(f"{path}: missing required field {e}") from None
