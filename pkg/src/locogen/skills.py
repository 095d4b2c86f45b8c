"""Skill representation, constraint compilation, frontier selection, and
object-frame pose adaptation.

A skill is an object-centric demonstration segment: an end-effector, a
reference object frame, and a contiguous step subsequence. Coordination
constraints (skills that must start together) are compiled into extra
precedence edges, after which execution order is a greedy topological
traversal of the precedence DAG: each iteration runs every remaining skill
with no unfinished predecessor, concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from locogen.executor import Action, WorldState
from locogen.kinematics import Configuration, RobotModel
from locogen.pose import Pose, compose, invert


class ConstraintCycleError(ValueError):
    """The (reduced) precedence relation is cyclic."""

    def __init__(self, cycle: list[str]):
        self.cycle = cycle
        super().__init__("precedence cycle: " + " -> ".join(cycle + [cycle[0]]))


class EmptyFrontierError(RuntimeError):
    """Internal invariant violation: remaining skills but no executable one."""


@dataclass(frozen=True)
class DemoStep:
    state: WorldState
    action: Action


@dataclass(frozen=True)
class SkillDemo:
    """Object-centric skill: end-effector `ee`, reference frame
    `object_frame`, and the demonstration steps it replays."""

    id: str
    ee: str
    object_frame: str
    steps: tuple[DemoStep, ...]

    def __post_init__(self):
        if not self.steps:
            raise ValueError(f"skill {self.id!r} has no steps")
        object.__setattr__(self, "steps", tuple(self.steps))

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class ConstraintSet:
    """Ordered precedence pairs plus unordered coordination pairs."""

    precedence: frozenset[tuple[str, str]] = frozenset()
    coordination: frozenset[frozenset[str]] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "precedence", frozenset(tuple(p) for p in self.precedence))
        object.__setattr__(
            self, "coordination", frozenset(frozenset(c) for c in self.coordination)
        )
        for pair in self.coordination:
            if len(pair) != 2:
                raise ValueError(f"coordination pair {sorted(pair)} is not two distinct skills")


def find_cycle(ids, precedence) -> list[str] | None:
    """A directed cycle in the precedence graph, or None if acyclic."""
    succ: dict[str, list[str]] = {i: [] for i in ids}
    for a, b in precedence:
        succ[a].append(b)
    for s in succ.values():
        s.sort()
    color = {i: 0 for i in ids}  # 0 unseen, 1 on stack, 2 done
    parent: dict[str, str | None] = {}

    def dfs(start):
        stack = [(start, iter(succ[start]))]
        color[start] = 1
        parent[start] = None
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color[nxt] == 1:
                    cycle = [nxt] if nxt == node else [nxt, node]
                    cur = parent[node] if nxt != node else None
                    while cur is not None and cur != nxt:
                        cycle.insert(1, cur)
                        cur = parent[cur]
                    return cycle
                if color[nxt] == 0:
                    color[nxt] = 1
                    parent[nxt] = node
                    stack.append((nxt, iter(succ[nxt])))
                    advanced = True
                    break
            if not advanced:
                color[node] = 2
                stack.pop()
        return None

    for i in sorted(ids):
        if color[i] == 0:
            found = dfs(i)
            if found:
                return found
    return None


def reduce_coordination(skill_ids, constraints: ConstraintSet) -> ConstraintSet:
    """Compile coordination pairs away into precedence edges.

    Every predecessor of one coordinated skill becomes a predecessor of the
    other (applied symmetrically, to fixpoint), after which coordinated
    skills share their predecessor sets and surface in the same frontier.
    Raises ConstraintCycleError if the reduced relation is cyclic.
    """
    ids = set(skill_ids)
    for a, b in constraints.precedence:
        if a not in ids or b not in ids:
            raise KeyError(f"precedence pair ({a}, {b}) references unknown skill")
    for pair in constraints.coordination:
        for s in pair:
            if s not in ids:
                raise KeyError(f"coordination pair {sorted(pair)} references unknown skill")

    p = set(constraints.precedence)
    pairs = [tuple(sorted(c)) for c in constraints.coordination]
    changed = True
    while changed:
        changed = False
        for a, b in pairs:
            for x, y in list(p):
                if y == a and (x, b) not in p:
                    p.add((x, b))
                    changed = True
                if y == b and (x, a) not in p:
                    p.add((x, a))
                    changed = True
            # A coordinated pair ordered against itself compiles to a
            # self-loop, surfacing as a cycle below.
            if (a, b) in p and (a, a) not in p:
                p.add((a, a))
                changed = True
            if (b, a) in p and (b, b) not in p:
                p.add((b, b))
                changed = True
    cycle = find_cycle(ids, p)
    if cycle is not None:
        raise ConstraintCycleError(cycle)
    return ConstraintSet(frozenset(p), frozenset())


def frontier(remaining, precedence) -> set[str]:
    """Remaining skills free of precedence constraints from other remaining
    skills; nonempty for any acyclic relation."""
    remaining = set(remaining)
    if not remaining:
        raise ValueError("no remaining skills")
    blocked = {b for a, b in precedence if a in remaining and b in remaining}
    out = remaining - blocked
    if not out:
        raise EmptyFrontierError(f"cyclic precedence among {sorted(remaining)}")
    return out


def frontier_schedule(skill_ids, precedence) -> list[set[str]]:
    """Iterated maximal frontiers: the grouped execution order."""
    remaining = set(skill_ids)
    out = []
    while remaining:
        group = frontier(remaining, precedence)
        out.append(group)
        remaining -= group
    return out


def adapt_pose(current_object_pose: Pose, reference_object_pose: Pose, demo_pose: Pose) -> Pose:
    """Re-anchor a demonstrated pose from the reference object pose to the
    current one: current ∘ reference⁻¹ ∘ demo. Spatially invariant: rigidly
    moving the object moves the adapted pose identically."""
    return compose(current_object_pose, compose(invert(reference_object_pose), demo_pose))


def action_ee_pose(model: RobotModel, state: WorldState, action: Action, ee: str) -> Pose:
    """World pose of an end-effector implied by an action's joint targets,
    evaluated at the state's base pose."""
    q = state.configuration.q.copy()
    q[list(model.groups.upper_body)] = model.clamp_q_subset(action.upper, model.groups.upper_body)
    q[list(model.groups.hands)] = model.clamp_q_subset(action.hands, model.groups.hands)
    return model.frame_pose(Configuration(state.configuration.base, q), ee)


def per_ee_totally_ordered(skills: list[SkillDemo], precedence) -> list[tuple[str, str]]:
    """Same-end-effector skill pairs NOT ordered by the transitive closure of
    the precedence relation; empty means the per-EE total order invariant
    holds."""
    ids = [s.id for s in skills]
    reach = {i: {i} for i in ids}
    # Transitive closure by iteration (skill counts are tiny).
    changed = True
    succ = {i: set() for i in ids}
    for a, b in precedence:
        succ[a].add(b)
    while changed:
        changed = False
        for i in ids:
            new = set()
            for j in list(reach[i]):
                new |= succ.get(j, set())
            if not new <= reach[i]:
                reach[i] |= new
                changed = True
    bad = []
    by_ee: dict[str, list[str]] = {}
    for s in skills:
        by_ee.setdefault(s.ee, []).append(s.id)
    for ee, members in sorted(by_ee.items()):
        for i, a in enumerate(members):
            for b in members[i + 1 :]:
                if b not in reach[a] and a not in reach[b]:
                    bad.append((a, b))
    return bad
