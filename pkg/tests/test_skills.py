import itertools

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from locogen.pose import PlanarPose, Pose, compose, poses_close
from locogen.skills import (
    ConstraintCycleError,
    ConstraintSet,
    EmptyFrontierError,
    adapt_pose,
    frontier,
    frontier_schedule,
    reduce_coordination,
)


def random_pose(rng) -> Pose:
    return Pose(rng.normal(size=4), rng.uniform(-2, 2, size=3))


def mat(p: Pose) -> np.ndarray:
    q = p.rotation
    m = np.eye(4)
    m[:3, :3] = Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
    m[:3, 3] = p.translation
    return m


# -- adapt_pose -----------------------------------------------------------------


def test_adapt_identity_reference():
    rng = np.random.default_rng(0)
    cur = random_pose(rng)
    demo = random_pose(rng)
    out = adapt_pose(cur, cur, demo)
    assert poses_close(out, demo)


def test_adapt_pure_translation():
    rng = np.random.default_rng(1)
    ref = random_pose(rng)
    demo = random_pose(rng)
    shift = Pose.from_translation([0.3, 0, 0])
    out = adapt_pose(compose(shift, ref), ref, demo)
    np.testing.assert_allclose(out.translation, demo.translation + [0.3, 0, 0], atol=1e-9)
    np.testing.assert_allclose(out.rotation, demo.rotation, atol=1e-9)


def test_adapt_matches_matrix_oracle():
    rng = np.random.default_rng(2)
    for _ in range(500):
        cur, ref, demo = (random_pose(rng) for _ in range(3))
        expected = mat(cur) @ np.linalg.inv(mat(ref)) @ mat(demo)
        np.testing.assert_allclose(mat(adapt_pose(cur, ref, demo)), expected, atol=1e-9)


def test_adapt_equivariance():
    rng = np.random.default_rng(3)
    for _ in range(200):
        cur, ref, demo, t = (random_pose(rng) for _ in range(4))
        lhs = adapt_pose(compose(t, cur), ref, demo)
        rhs = compose(t, adapt_pose(cur, ref, demo))
        assert poses_close(lhs, rhs)


def test_adapt_preserves_relative_pose():
    from locogen.pose import invert

    rng = np.random.default_rng(4)
    for _ in range(200):
        cur, ref, demo = (random_pose(rng) for _ in range(3))
        out = adapt_pose(cur, ref, demo)
        rel_new = compose(invert(cur), out)
        rel_old = compose(invert(ref), demo)
        assert poses_close(rel_new, rel_old)


# -- constraint fixtures -----------------------------------------------------------


def shelf_fixture():
    """Two picks then two places: per-arm precedence, picks coordinated,
    places coordinated."""
    ids = ["pick-left", "pick-right", "place-left", "place-right"]
    constraints = ConstraintSet(
        precedence={("pick-left", "place-left"), ("pick-right", "place-right")},
        coordination={
            frozenset(("pick-left", "pick-right")),
            frozenset(("place-left", "place-right")),
        },
    )
    return ids, constraints


def test_reduce_empty_coordination_is_identity():
    ids = ["a", "b"]
    cs = ConstraintSet(precedence={("a", "b")})
    out = reduce_coordination(ids, cs)
    assert out.precedence == frozenset({("a", "b")})
    assert out.coordination == frozenset()


def test_reduce_shelf_fixture_adds_cross_edges():
    ids, cs = shelf_fixture()
    out = reduce_coordination(ids, cs)
    # Both picks precede both places after reduction.
    for pick in ("pick-left", "pick-right"):
        for place in ("place-left", "place-right"):
            assert (pick, place) in out.precedence
    assert out.coordination == frozenset()


def test_reduce_idempotent():
    ids, cs = shelf_fixture()
    once = reduce_coordination(ids, cs)
    twice = reduce_coordination(ids, once)
    assert once.precedence == twice.precedence


def test_reduce_detects_cycle():
    ids = ["a", "b"]
    cs = ConstraintSet(precedence={("a", "b")}, coordination={frozenset(("a", "b"))})
    with pytest.raises(ConstraintCycleError) as e:
        reduce_coordination(ids, cs)
    assert set(e.value.cycle) <= {"a", "b"}


def test_frontier_single_skill():
    assert frontier({"a"}, frozenset()) == {"a"}


def test_frontier_shelf_fixture_two_iterations():
    ids, cs = shelf_fixture()
    reduced = reduce_coordination(ids, cs)
    schedule = frontier_schedule(ids, reduced.precedence)
    assert schedule == [{"pick-left", "pick-right"}, {"place-left", "place-right"}]


def test_frontier_empty_is_invariant_violation():
    with pytest.raises(EmptyFrontierError):
        frontier({"a", "b"}, {("a", "b"), ("b", "a")})


def test_frontier_sequence_is_topological_order():
    rng = np.random.default_rng(5)
    for _ in range(100):
        n = int(rng.integers(2, 7))
        ids = [f"s{i}" for i in range(n)]
        edges = set()
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < 0.35:
                    edges.add((ids[i], ids[j]))
        schedule = frontier_schedule(ids, edges)
        flat = [s for group in schedule for s in sorted(group)]
        assert sorted(flat) == sorted(ids)
        pos = {s: gi for gi, group in enumerate(schedule) for s in group}
        for a, b in edges:
            assert pos[a] < pos[b]


# -- exhaustive grouped-schedule oracle ------------------------------------------


def ordered_partitions(items):
    """All grouped schedules (ordered partitions) of a set of skills."""
    items = sorted(items)
    if not items:
        yield []
        return
    rest = items[1:]
    first = items[0]
    for sub in ordered_partitions(rest):
        # first joins an existing group or forms a new one at any position
        for gi in range(len(sub)):
            yield sub[:gi] + [sub[gi] | {first}] + sub[gi + 1 :]
        for gi in range(len(sub) + 1):
            yield sub[:gi] + [{first}] + sub[gi:]


def is_legal(schedule, precedence, coordination) -> bool:
    group_of = {}
    for gi, group in enumerate(schedule):
        for s in group:
            group_of[s] = gi
    for a, b in precedence:
        if group_of[a] >= group_of[b]:
            return False
    for pair in coordination:
        a, b = sorted(pair)
        if group_of[a] != group_of[b]:
            return False
    return True


def dedupe_schedules(schedules):
    return {tuple(frozenset(g) for g in s) for s in schedules}


def random_constraint_case(rng):
    """Random constraint system over <=5 skills on 2 end-effectors with
    per-EE chains (the total-order invariant) plus random cross edges and
    coordination pairs."""
    n = int(rng.integers(1, 6))
    ids = [f"s{i}" for i in range(n)]
    ee = {s: ("left" if i % 2 == 0 else "right") for i, s in enumerate(ids)}
    precedence = set()
    for side in ("left", "right"):
        chain = [s for s in ids if ee[s] == side]
        for a, b in zip(chain, chain[1:]):
            precedence.add((a, b))
    for a, b in itertools.permutations(ids, 2):
        if ee[a] != ee[b] and rng.random() < 0.2:
            precedence.add((a, b))
    coordination = set()
    for a, b in itertools.combinations(ids, 2):
        # Same-EE coordination contradicts the per-EE chain, exercising
        # rejection; keep it rarer than the useful cross-EE kind.
        p = 0.05 if ee[a] == ee[b] else 0.2
        if rng.random() < p:
            coordination.add(frozenset((a, b)))
    return ids, ConstraintSet(precedence, coordination)


def test_reduction_matches_enumeration_oracle():
    rng = np.random.default_rng(6)
    cases = reductions = rejections = 0
    seen = set()
    while cases < 500:
        ids, cs = random_constraint_case(rng)
        key = (tuple(ids), tuple(sorted(cs.precedence)),
               tuple(sorted(tuple(sorted(c)) for c in cs.coordination)))
        if key in seen:
            continue
        seen.add(key)
        cases += 1

        all_schedules = list(ordered_partitions(ids))
        legal_orig = [s for s in all_schedules if is_legal(s, cs.precedence, cs.coordination)]

        try:
            reduced = reduce_coordination(ids, cs)
        except ConstraintCycleError:
            assert legal_orig == [], f"rejected but legal schedules exist: {key}"
            rejections += 1
            continue
        reductions += 1

        # (a) The reduced relation is semantics-preserving: a schedule is
        # legal under (reduced P + coordination grouping) iff legal under the
        # original constraints.
        legal_red = [s for s in all_schedules if is_legal(s, reduced.precedence, cs.coordination)]
        assert dedupe_schedules(legal_red) == dedupe_schedules(legal_orig)

        # (b) Reduction succeeded, so a legal schedule exists.
        assert legal_orig

        # (c) The engine's iterated maximal frontier equals the unique
        # greedy-maximal legal schedule from the enumeration.
        remaining = legal_orig
        greedy = []
        while any(remaining):
            depth = len(greedy)
            best = max(len(s[depth]) for s in remaining if len(s) > depth)
            remaining = [s for s in remaining if len(s) > depth and len(s[depth]) == best]
            groups = {frozenset(s[depth]) for s in remaining}
            assert len(groups) == 1, "greedy-maximal prefix is not unique"
            greedy.append(set(next(iter(groups))))
            remaining = [s for s in remaining if len(s) > depth + 1]
            if not remaining:
                break
        engine = frontier_schedule(ids, reduced.precedence)
        assert engine == greedy
        assert is_legal(engine, cs.precedence, cs.coordination)
    assert reductions > 100 and rejections > 10
