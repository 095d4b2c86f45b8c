"""Robot-description file loader.

Schema (YAML, format tag ``locogen-robot/1``)::

    format: locogen-robot/1
    name: <robot name>
    base_link: <link name>
    height_limits: [lo, hi]          # base height command range, meters
    links:
      - name: <link>
        parent: <link>               # omitted for the base link
        origin: <pose>               # fixed transform to parent, see below
        joint:                       # omitted for a fixed connection
          name: <joint>
          type: revolute | prismatic
          axis: [x, y, z]
          limits: [lo, hi]
          group: legs|torso|left_arm|right_arm|left_hand|right_hand
        spheres: [[cx, cy, cz, r], ...]   # or {file: <sphere file>}
    end_effectors:
      - {name: <frame>, link: <link>, origin: <pose>}
    allow_collision: [[body, body], ...]  # extra exempt pairs

A ``<pose>`` is either the 7-number form [qw, qx, qy, qz, tx, ty, tz] or a
mapping {xyz: [x, y, z], rpy: [roll, pitch, yaw]} (ZYX Euler, radians).

Joint index order is file order. The loader rejects cycles, duplicate names,
unknown groups, and inverted limits; the six group label sets must partition
the joint list.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import yaml

from locogen.kinematics import (
    GROUP_NAMES,
    EndEffector,
    Joint,
    JointGroups,
    Link,
    RobotModel,
)
from locogen.pose import Pose, quat_multiply

FORMAT_TAG = "locogen-robot/1"


class RobotFileError(ValueError):
    """Malformed robot-description file."""


def parse_pose(spec) -> Pose:
    if spec is None:
        return Pose.identity()
    if isinstance(spec, dict):
        xyz = np.asarray(spec.get("xyz", [0.0, 0.0, 0.0]), dtype=np.float64)
        r, p, y = (float(v) for v in spec.get("rpy", [0.0, 0.0, 0.0]))
        qx = np.array([math.cos(r / 2), math.sin(r / 2), 0.0, 0.0])
        qy = np.array([math.cos(p / 2), 0.0, math.sin(p / 2), 0.0])
        qz = np.array([math.cos(y / 2), 0.0, 0.0, math.sin(y / 2)])
        return Pose(quat_multiply(qz, quat_multiply(qy, qx)), xyz)
    arr = np.asarray(spec, dtype=np.float64)
    if arr.shape != (7,):
        raise RobotFileError(f"pose must be 7 numbers or xyz/rpy mapping, got {spec!r}")
    return Pose.from_array(arr)


def load_sphere_file(path: str | Path) -> np.ndarray:
    """Load a sphere-set file: {owner: <name>, spheres: [[cx,cy,cz,r], ...]}."""
    with open(path) as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict) or "spheres" not in data:
        raise RobotFileError(f"{path}: not a sphere-set file")
    arr = np.asarray(data["spheres"], dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise RobotFileError(f"{path}: spheres must be an Nx4 list")
    if np.any(arr[:, 3] <= 0):
        raise RobotFileError(f"{path}: sphere radii must be positive")
    return arr


def save_sphere_file(path: str | Path, owner: str, spheres: np.ndarray) -> None:
    data = {
        "owner": owner,
        "spheres": [[float(v) for v in row] for row in np.asarray(spheres, dtype=np.float64)],
    }
    with open(path, "w") as f:
        yaml.safe_dump(data, f, sort_keys=False)


def _parse_spheres(spec, base_dir: Path) -> np.ndarray | None:
    if spec is None:
        return None
    if isinstance(spec, dict) and "file" in spec:
        return load_sphere_file(base_dir / spec["file"])
    arr = np.asarray(spec, dtype=np.float64)
    if arr.size == 0:
        return None
    if arr.ndim != 2 or arr.shape[1] != 4 or np.any(arr[:, 3] <= 0):
        raise RobotFileError(f"bad sphere list {spec!r}")
    return arr


def load_robot(path: str | Path) -> tuple[RobotModel, set[frozenset[str]]]:
    """Load a robot model; returns (model, extra allowed-collision pairs)."""
    path = Path(path)
    with open(path) as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict):
        raise RobotFileError(f"{path}: not a mapping")
    if data.get("format") != FORMAT_TAG:
        raise RobotFileError(
            f"{path}: unsupported format {data.get('format')!r}, expected {FORMAT_TAG!r}"
        )
    try:
        links: list[Link] = []
        joints: list[Joint] = []
        group_members: dict[str, list[int]] = {g: [] for g in GROUP_NAMES}
        for entry in data["links"]:
            name = entry["name"]
            jspec = entry.get("joint")
            joint_name = None
            if jspec is not None:
                if entry.get("parent") is None:
                    raise RobotFileError(f"link {name}: joint on a parentless link")
                group = jspec["group"]
                if group not in GROUP_NAMES:
                    raise RobotFileError(f"joint {jspec.get('name')}: unknown group {group!r}")
                joint = Joint(
                    name=jspec["name"],
                    joint_type=jspec["type"],
                    axis=np.asarray(jspec["axis"], dtype=np.float64),
                    limits=(float(jspec["limits"][0]), float(jspec["limits"][1])),
                    group=group,
                    child_link=name,
                )
                group_members[group].append(len(joints))
                joints.append(joint)
                joint_name = joint.name
            links.append(
                Link(
                    name=name,
                    parent=entry.get("parent"),
                    origin=parse_pose(entry.get("origin")),
                    joint=joint_name,
                    spheres=_parse_spheres(entry.get("spheres"), path.parent),
                )
            )
        end_effectors = [
            EndEffector(e["name"], e["link"], parse_pose(e.get("origin")))
            for e in data.get("end_effectors", [])
        ]
        groups = JointGroups(**{g: tuple(group_members[g]) for g in GROUP_NAMES})
        model = RobotModel(
            name=data.get("name", path.stem),
            links=links,
            joints=joints,
            end_effectors=end_effectors,
            groups=groups,
            base_link=data["base_link"],
            height_limits=tuple(data.get("height_limits", (0.2, 1.2))),
        )
    except KeyError as e:
        raise RobotFileError(f"{path}: missing required field {e}") from None
    except ValueError as e:
        raise RobotFileError(f"{path}: {e}") from None
    allowed = {frozenset(pair) for pair in data.get("allow_collision", [])}
    for pair in allowed:
        if len(pair) != 2:
            raise RobotFileError(f"{path}: allow_collision pair {sorted(pair)} is not two bodies")
    return model, allowed
