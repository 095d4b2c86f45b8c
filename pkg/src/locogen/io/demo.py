"""Source-demonstration file: an annotated teleoperation episode.

Schema (YAML, format tag ``locogen-demo/1``)::

    format: locogen-demo/1
    name: <demo id>
    robot: <robot file, relative to this file>
    scene: <scene file, relative to this file>
    steps:
      - state:
          base: [x, y, yaw, height]
          q: [...]
          object_poses: {obj: [qw,qx,qy,qz,tx,ty,tz], ...}
          attachments: {ee: {object: obj, offset: [7]}, ...}
        action:
          upper: [...]          # torso + both arms, group order
          hands: [...]          # both hands, group order
          base_command: [vx, vy, yaw_rate, z]
    final_state: {...}
    skills:
      - {id: s, ee: frame, object_frame: obj, start: i, end: j}   # end exclusive
    constraints:
      precedence: [[before, after], ...]
      coordination: [[a, b], ...]

Step states are the PRE-action states; `final_state` closes the episode.
`validate_source_demo` checks the semantic invariants (index ranges, per-EE
segment disjointness and total order, constraint acyclicity after reduction,
frame resolution) and returns diagnostics instead of raising.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from locogen.collision import Attachment
from locogen.executor import Action, WorldState
from locogen.io.scene import Scene, load_scene
from locogen.kinematics import Configuration, RobotModel
from locogen.pose import PlanarPose, Pose
from locogen.skills import (
    ConstraintCycleError,
    ConstraintSet,
    DemoStep,
    SkillDemo,
    per_ee_totally_ordered,
    reduce_coordination,
)

FORMAT_TAG = "locogen-demo/1"


class DemoFileError(ValueError):
    """Malformed demo file (parse-stage failure, not a semantic diagnostic)."""


@dataclass(frozen=True)
class SkillAnnotation:
    id: str
    ee: str
    object_frame: str
    start: int
    end: int  # exclusive


@dataclass(frozen=True)
class SourceDemo:
    name: str
    robot_path: str
    scene_path: str
    steps: tuple[DemoStep, ...]
    final_state: WorldState
    skills: tuple[SkillAnnotation, ...]
    constraints: ConstraintSet

    def skill_demos(self) -> list[SkillDemo]:
        return [
            SkillDemo(a.id, a.ee, a.object_frame, self.steps[a.start : a.end])
            for a in self.skills
        ]

    @property
    def initial_state(self) -> WorldState:
        return self.steps[0].state


def _state_to_dict(s: WorldState) -> dict:
    return {
        "base": [float(v) for v in s.configuration.base.as_array()],
        "q": [float(v) for v in s.configuration.q],
        "object_poses": {
            k: [float(v) for v in p.as_array()] for k, p in sorted(s.object_poses.items())
        },
        "attachments": {
            ee: {"object": a.obj, "offset": [float(v) for v in a.offset.as_array()]}
            for ee, a in sorted(s.attachments.items())
        },
    }


def _state_from_dict(d: dict, time_step: int = 0) -> WorldState:
    attachments = {
        ee: Attachment(ee, a["object"], Pose.from_array(a["offset"]))
        for ee, a in d.get("attachments", {}).items()
    }
    return WorldState(
        Configuration(PlanarPose.from_array(d["base"]), np.asarray(d["q"], dtype=np.float64)),
        {k: Pose.from_array(v) for k, v in d.get("object_poses", {}).items()},
        attachments,
        time_step,
    )


def _action_to_dict(a: Action) -> dict:
    return {
        "upper": [float(v) for v in a.upper],
        "hands": [float(v) for v in a.hands],
        "base_command": [float(v) for v in a.base_command],
    }


def _action_from_dict(d: dict) -> Action:
    return Action(
        np.asarray(d["upper"], dtype=np.float64),
        np.asarray(d["hands"], dtype=np.float64),
        np.asarray(d["base_command"], dtype=np.float64),
    )


def save_demo(path: str | Path, demo: SourceDemo) -> None:
    data = {
        "format": FORMAT_TAG,
        "name": demo.name,
        "robot": demo.robot_path,
        "scene": demo.scene_path,
        "steps": [
            {"state": _state_to_dict(s.state), "action": _action_to_dict(s.action)}
            for s in demo.steps
        ],
        "final_state": _state_to_dict(demo.final_state),
        "skills": [
            {"id": a.id, "ee": a.ee, "object_frame": a.object_frame,
             "start": a.start, "end": a.end}
            for a in demo.skills
        ],
        "constraints": {
            "precedence": sorted([a, b] for a, b in demo.constraints.precedence),
            "coordination": sorted(sorted(p) for p in demo.constraints.coordination),
        },
    }
    with open(path, "w") as f:
        yaml.safe_dump(data, f, sort_keys=False, default_flow_style=None)


def load_demo(path: str | Path) -> SourceDemo:
    path = Path(path)
    with open(path) as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict):
        raise DemoFileError(f"{path}: not a mapping")
    if data.get("format") != FORMAT_TAG:
        raise DemoFileError(
            f"{path}: unsupported format {data.get('format')!r}, expected {FORMAT_TAG!r}"
        )
    try:
        steps = tuple(
            DemoStep(_state_from_dict(e["state"], i), _action_from_dict(e["action"]))
            for i, e in enumerate(data["steps"])
        )
        annotations = tuple(
            SkillAnnotation(e["id"], e["ee"], e["object_frame"], int(e["start"]), int(e["end"]))
            for e in data.get("skills", [])
        )
        cons = data.get("constraints", {})
        constraints = ConstraintSet(
            frozenset(tuple(p) for p in cons.get("precedence", [])),
            frozenset(frozenset(p) for p in cons.get("coordination", [])),
        )
        return SourceDemo(
            name=data.get("name", path.stem),
            robot_path=data["robot"],
            scene_path=data["scene"],
            steps=steps,
            final_state=_state_from_dict(data["final_state"], len(steps)),
            skills=annotations,
            constraints=constraints,
        )
    except (KeyError, TypeError) as e:
        raise DemoFileError(f"{path}: bad structure ({e})") from None


def load_demo_bundle(path: str | Path):
    """Load a demo plus the robot and scene it references (paths resolve
    relative to the demo file)."""
    from locogen.io.robot import load_robot

    path = Path(path)
    demo = load_demo(path)
    model, robot_allowed = load_robot(path.parent / demo.robot_path)
    scene = load_scene(path.parent / demo.scene_path)
    return demo, model, scene, robot_allowed


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str

    def __str__(self) -> str:
        return f"[{self.code}] {self.message}"


def validate_source_demo(demo: SourceDemo, model: RobotModel, scene: Scene) -> list[Diagnostic]:
    """Semantic validation; an empty list means the demo is usable."""
    out: list[Diagnostic] = []
    n = len(demo.steps)
    if n == 0:
        return [Diagnostic("empty", "demo has no steps")]

    ids = [a.id for a in demo.skills]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        out.append(Diagnostic("duplicate-skill", f"duplicate skill ids: {dup}"))

    for a in demo.skills:
        if not (0 <= a.start < a.end <= n):
            out.append(
                Diagnostic(
                    "bad-range",
                    f"skill {a.id}: range [{a.start}, {a.end}) outside 0..{n}",
                )
            )
        try:
            model.frame_link(a.ee)
        except KeyError:
            out.append(Diagnostic("unknown-frame", f"skill {a.id}: unknown end-effector {a.ee!r}"))
        else:
            if model.arm_of_frame(a.ee) is None:
                out.append(
                    Diagnostic("unknown-frame", f"skill {a.id}: {a.ee!r} is not an arm end-effector")
                )
        try:
            scene.object(a.object_frame)
        except KeyError:
            out.append(
                Diagnostic(
                    "unknown-frame",
                    f"skill {a.id}: unknown object frame {a.object_frame!r}",
                )
            )

    by_ee: dict[str, list[SkillAnnotation]] = {}
    for a in demo.skills:
        by_ee.setdefault(a.ee, []).append(a)
    for ee, members in sorted(by_ee.items()):
        members = sorted(members, key=lambda a: a.start)
        for s1, s2 in zip(members, members[1:]):
            if s2.start < s1.end:
                out.append(
                    Diagnostic(
                        "overlap",
                        f"skills {s1.id} and {s2.id} overlap on end-effector {ee}",
                    )
                )

    known = set(ids)
    for a, b in demo.constraints.precedence:
        if a not in known or b not in known:
            out.append(Diagnostic("unknown-skill", f"precedence ({a}, {b}) references unknown skill"))
    for pair in demo.constraints.coordination:
        for s in pair:
            if s not in known:
                out.append(
                    Diagnostic("unknown-skill", f"coordination {sorted(pair)} references unknown skill")
                )
    if not any(d.code == "unknown-skill" for d in out) and ids:
        try:
            reduced = reduce_coordination(ids, demo.constraints)
        except ConstraintCycleError as e:
            out.append(Diagnostic("cycle", f"constraint cycle: {' -> '.join(e.cycle)}"))
        else:
            unordered = per_ee_totally_ordered(demo.skill_demos(), reduced.precedence)
            for a, b in unordered:
                out.append(
                    Diagnostic(
                        "not-totally-ordered",
                        f"skills {a} and {b} share an end-effector but are unordered",
                    )
                )

    lo, hi = model.joint_limits
    for i, step in enumerate(demo.steps):
        q = step.state.configuration.q
        if q.shape != (model.n_joints,):
            out.append(Diagnostic("bad-state", f"step {i}: q has wrong length"))
            break
        if np.any(q < lo - 1e-9) or np.any(q > hi + 1e-9):
            out.append(Diagnostic("limits", f"step {i}: joint positions outside limits"))
            break
    scene_objects = {o.name for o in scene.objects}
    demo_objects = set(demo.initial_state.object_poses)
    if not scene_objects <= demo_objects:
        out.append(
            Diagnostic(
                "missing-object",
                f"demo states lack poses for scene objects {sorted(scene_objects - demo_objects)}",
            )
        )
    return out


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
