import math

import numpy as np
import pytest

from locogen.assets import asset_path
from locogen.collision import (
    Attachment,
    AttachmentError,
    CollisionWorld,
    ObjectBody,
    Sphere,
    SphereSet,
    TriMesh,
    attach_object,
    check_collision,
    coverage_fraction,
    decompose_mesh,
    detach_object,
    fit_tangent_sphere,
    inflate,
    sample_surface,
    select_spheres,
    shrink_colliding,
)
from locogen.io.robot import load_robot
from locogen.kinematics import Configuration
from locogen.pose import PlanarPose, Pose, compose, planar_transform
from locogen.primitives import box_mesh, dumbbell_mesh, icosphere_mesh, slab_mesh


@pytest.fixture(scope="module")
def testbot():
    model, _ = load_robot(asset_path("testbot.yaml"))
    return model


def unit_square_mesh() -> TriMesh:
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    f = np.array([[0, 1, 2], [0, 2, 3]])
    return TriMesh(v, f)


# -- mesh validation -----------------------------------------------------------


def test_mesh_rejects_degenerate_faces():
    v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
    with pytest.raises(ValueError, match="degenerate"):
        TriMesh(v, np.array([[0, 1, 2]]))


def test_mesh_rejects_bad_indices():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
    with pytest.raises(ValueError, match="index"):
        TriMesh(v, np.array([[0, 1, 5]]))


# -- surface sampling ----------------------------------------------------------


def test_sample_surface_planar_containment():
    pts, _ = sample_surface(unit_square_mesh(), 4, np.random.default_rng(0))
    assert pts.shape == (4, 3)
    assert np.all((pts[:, 0] >= 0) & (pts[:, 0] <= 1))
    assert np.all((pts[:, 1] >= 0) & (pts[:, 1] <= 1))
    np.testing.assert_allclose(pts[:, 2], 0, atol=1e-12)


def test_sample_surface_area_weighting():
    # Two faces with areas 1 and 3: histogram close to (0.25, 0.75).
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 2, 0], [4, 0, 0], [1, 2, 0]], dtype=float)
    f = np.array([[0, 1, 2], [1, 3, 4]])
    m = TriMesh(v, f)
    assert m.face_areas[1] / m.face_areas[0] == pytest.approx(3.0)
    _, fidx = sample_surface(m, 10000, np.random.default_rng(1))
    frac0 = np.mean(fidx == 0)
    assert abs(frac0 - 0.25) < 0.02


def test_sample_surface_single_point_on_face():
    mesh = unit_square_mesh()
    pts, fidx = sample_surface(mesh, 1, np.random.default_rng(2))
    tri = mesh.vertices[mesh.faces[fidx[0]]]
    n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
    n /= np.linalg.norm(n)
    assert abs(np.dot(pts[0] - tri[0], n)) < 1e-9


def test_sample_surface_deterministic():
    m = unit_square_mesh()
    a, fa = sample_surface(m, 16, np.random.default_rng(7))
    b, fb = sample_surface(m, 16, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(fa, fb)


def test_sample_surface_requires_positive_n():
    with pytest.raises(ValueError):
        sample_surface(unit_square_mesh(), 0, np.random.default_rng(0))


# -- tangent-sphere fitting ------------------------------------------------------


def test_tangent_sphere_on_unit_sphere():
    # Analytic medial axis of a sphere: the full inscribed ball, radius ~1.
    # Face centroids keep the flat-shaded normal aligned with the true surface
    # normal; elsewhere the facet tilt genuinely shrinks the ball.
    mesh = icosphere_mesh(1.0, 3)
    fidx = np.random.default_rng(3).choice(len(mesh.faces), 10, replace=False)
    for fi in fidx:
        p = mesh.vertices[mesh.faces[fi]].mean(axis=0)
        s = fit_tangent_sphere(mesh, p, -mesh.face_normals[fi])
        assert abs(s.radius - 1.0) < 0.05
        assert np.linalg.norm(s.center) < 0.05


def test_tangent_sphere_on_slab():
    # Slab of thickness 0.2: medial radius 0.1 from either face.
    mesh = slab_mesh(2.0, 2.0, 0.2)
    p = np.array([0.1, -0.2, 0.1])  # on the top face
    s = fit_tangent_sphere(mesh, p, np.array([0.0, 0.0, -1.0]))
    assert s.radius == pytest.approx(0.1, abs=1e-6)
    np.testing.assert_allclose(s.center, [0.1, -0.2, 0.0], atol=1e-6)


def test_tangent_sphere_isolated_triangle_hits_floor():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
    mesh = TriMesh(v, np.array([[0, 1, 2]]))
    s = fit_tangent_sphere(mesh, np.array([0.25, 0.25, 0.0]), np.array([0, 0, 1.0]))
    assert s.radius == pytest.approx(1e-4)


def test_tangent_sphere_rejects_degenerate_normal():
    with pytest.raises(ValueError, match="normal"):
        fit_tangent_sphere(unit_square_mesh(), np.zeros(3), np.zeros(3))


# -- inflate ---------------------------------------------------------------------


def test_inflate_zero_is_identity():
    s = SphereSet("x", np.array([[0, 0, 0, 0.05]]))
    out = inflate(s, 0.0)
    np.testing.assert_array_equal(out.spheres, s.spheres)


def test_inflate_adds_exactly_eps():
    s = SphereSet("x", np.array([[0.1, 0.2, 0.3, 0.05]]))
    out = inflate(s, 0.01)
    assert out.spheres[0, 3] == pytest.approx(0.06)
    np.testing.assert_array_equal(out.spheres[0, :3], s.spheres[0, :3])


def test_inflate_coverage_monotone():
    mesh = icosphere_mesh(0.5, 1)
    base = decompose_mesh(mesh, budget=4, eps=0.0, seed=5)
    prev = 0.0
    for eps in (0.0, 0.005, 0.01, 0.02):
        cov = coverage_fraction(inflate(base, eps), mesh, 10000, seed=6)
        assert cov >= prev - 1e-12
        prev = cov


# -- greedy selection --------------------------------------------------------------


def exhaustive_best_single(candidates, mesh, n_eval, seed):
    """Oracle: the single candidate with the most covered samples."""
    rng = np.random.default_rng(seed)
    pts, _ = sample_surface(mesh, n_eval, rng)
    best, best_count = None, -1
    for i, c in enumerate(candidates):
        count = int((np.linalg.norm(pts - c.center, axis=1) <= c.radius).sum())
        if count > best_count:
            best, best_count = i, count
    return best


def test_select_spheres_budget_covers_all_useful():
    mesh = unit_square_mesh()
    cands = [Sphere(np.array([0.25, 0.5, 0]), 0.3), Sphere(np.array([0.9, 0.5, 0]), 0.3)]
    out = select_spheres(cands, mesh, budget=5, seed=0)
    assert len(out) == 2


def test_select_spheres_skips_zero_gain_duplicates():
    mesh = unit_square_mesh()
    big = Sphere(np.array([0.3, 0.5, 0]), 0.45)
    cands = [big, Sphere(big.center.copy(), big.radius), Sphere(np.array([0.95, 0.9, 0]), 0.2)]
    out = select_spheres(cands, mesh, budget=2, seed=1)
    # The duplicate has zero marginal gain; the small disjoint sphere wins slot 2.
    centers = out.spheres[:, :3]
    assert len(out) == 2
    assert any(np.allclose(c, [0.95, 0.9, 0]) for c in centers)


def test_select_spheres_budget_one_dumbbell_prefers_big_lobe():
    mesh = dumbbell_mesh(0.3, 0.15, 0.9)
    cands = [
        Sphere(np.array([-0.45, 0, 0]), 0.31),  # covers the large lobe
        Sphere(np.array([0.45, 0, 0]), 0.16),  # covers the small lobe
    ]
    out = select_spheres(cands, mesh, budget=1, seed=2, n_eval=4000)
    oracle = exhaustive_best_single(cands, mesh, 4000, seed=2)
    assert oracle == 0
    np.testing.assert_allclose(out.spheres[0, :3], [-0.45, 0, 0])


def test_select_coverage_monotone_in_budget():
    mesh = icosphere_mesh(0.4, 2)
    rng = np.random.default_rng(3)
    pts, fidx = sample_surface(mesh, 256, rng)
    cands = [fit_tangent_sphere(mesh, p, -mesh.face_normals[fi]) for p, fi in zip(pts, fidx)]
    prev = 0.0
    for budget in (1, 2, 4, 8):
        out = select_spheres(cands, mesh, budget, seed=4)
        cov = coverage_fraction(out, mesh, 5000, seed=9)
        assert cov >= prev - 1e-12
        prev = cov


def test_unit_sphere_decomposition_coverage():
    mesh = icosphere_mesh(1.0, 3)
    spheres = decompose_mesh(mesh, budget=8, eps=0.01, seed=11)
    assert len(spheres) <= 8
    cov = coverage_fraction(spheres, mesh, 10000, seed=12)
    assert cov >= 0.95


# -- collision world queries -------------------------------------------------------


def sphere_world(testbot, objects):
    return CollisionWorld.build(testbot, objects)


def standing(testbot) -> Configuration:
    return testbot.zero_configuration(PlanarPose(height=0.72))


def brute_force_pairs(world, c):
    """Independent all-pairs reference check over every posed sphere pair."""
    bodies = world._posed_bodies(c)
    out = {}
    for i in range(len(bodies)):
        for j in range(len(bodies)):
            if i >= j:
                continue
            ni, ci, ri = bodies[i]
            nj, cj, rj = bodies[j]
            if frozenset((ni, nj)) in world.allowed_pairs:
                continue
            for a in range(len(ri)):
                for b in range(len(rj)):
                    d = math.dist(ci[a], cj[b])
                    if d < ri[a] + rj[b]:
                        key = tuple(sorted((ni, nj)))
                        out[key] = max(out.get(key, 0.0), ri[a] + rj[b] - d)
    return [(a, b, out[(a, b)]) for a, b in sorted(out)]


def obj(name, spheres, pose, movable=True, **kw):
    return ObjectBody(name, SphereSet(name, np.asarray(spheres, dtype=float)), pose, movable, **kw)


def test_two_spheres_apart_no_collision(testbot):
    w = sphere_world(
        testbot,
        [
            obj("a", [[0, 0, 0, 0.1]], Pose.from_translation([5, 0, 1])),
            obj("b", [[0, 0, 0, 0.1]], Pose.from_translation([5.3, 0, 1])),
        ],
    )
    assert check_collision(w, standing(testbot)) == []


def test_two_spheres_overlapping_depth(testbot):
    w = sphere_world(
        testbot,
        [
            obj("a", [[0, 0, 0, 0.1]], Pose.from_translation([5, 0, 1])),
            obj("b", [[0, 0, 0, 0.1]], Pose.from_translation([5.15, 0, 1])),
        ],
    )
    hits = check_collision(w, standing(testbot))
    assert len(hits) == 1
    a, b, depth = hits[0]
    assert {a, b} == {"a", "b"}
    assert depth == pytest.approx(0.05)


def test_check_collision_matches_brute_force_random(testbot):
    rng = np.random.default_rng(13)
    for trial in range(30):
        objects = []
        total = 0
        for k in range(int(rng.integers(2, 7))):
            n = int(rng.integers(1, 8))
            if total + n > 50:
                break
            total += n
            spheres = np.column_stack(
                [rng.uniform(-0.2, 0.2, (n, 3)), rng.uniform(0.03, 0.15, n)]
            )
            pose = Pose.from_axis_angle(
                rng.normal(size=3) + 1e-3, rng.uniform(-3, 3), rng.uniform(-1.5, 1.5, 3) + [3, 0, 1]
            )
            objects.append(obj(f"o{k}", spheres, pose))
        w = sphere_world(testbot, objects)
        c = standing(testbot)
        got = check_collision(w, c)
        expected = brute_force_pairs(w, c)
        assert [(a, b) for a, b, _ in got] == [(a, b) for a, b, _ in expected]
        for (_, _, dg), (_, _, de) in zip(got, expected):
            assert dg == pytest.approx(de, abs=1e-12)


def test_check_collision_symmetric_and_rigid_invariant(testbot):
    w = sphere_world(
        testbot,
        [
            obj("a", [[0, 0, 0, 0.2]], Pose.from_translation([0.5, 0.1, 0.8])),
            obj("b", [[0, 0, 0, 0.15]], Pose.from_translation([0.7, 0.0, 0.9])),
        ],
    )
    c = standing(testbot)
    hits = check_collision(w, c)
    t = PlanarPose(1.3, -0.7, 1.1, 0.0)
    tp = t.to_pose()
    moved = w.with_object_poses({k: compose(tp, w.objects[k].pose) for k in w.objects})
    c2 = Configuration(planar_transform(t, c.base), c.q)
    hits2 = check_collision(moved, c2)
    assert [(a, b) for a, b, _ in hits] == [(a, b) for a, b, _ in hits2]
    for (_, _, d1), (_, _, d2) in zip(hits, hits2):
        assert d1 == pytest.approx(d2, abs=1e-9)


def test_robot_self_collision_free_at_rest(testbot):
    w = sphere_world(testbot, [])
    assert check_collision(w, standing(testbot)) == []


# -- shrinking ---------------------------------------------------------------------


def test_shrink_noop_when_collision_free(testbot):
    w = sphere_world(testbot, [obj("a", [[0, 0, 0, 0.1]], Pose.from_translation([5, 0, 1]))])
    c = standing(testbot)
    assert shrink_colliding(w, c) is w


def test_shrink_closed_form_pairwise(testbot):
    # Robot palm sphere r=0.035 vs object sphere r=0.1 at center distance d:
    # the palm sphere shrinks to d - 0.1 - margin.
    c = standing(testbot)
    fk = testbot.forward_kinematics(c)
    palm = fk["r_palm"].apply([0, 0, -0.03])
    d = 0.11
    w = sphere_world(testbot, [obj("a", [[0, 0, 0, 0.1]], Pose.from_translation(palm + [d, 0, 0]))])
    hits = check_collision(w, c)
    assert any({a, b} == {"r_palm", "a"} for a, b, _ in hits)
    shrunk = shrink_colliding(w, c)
    assert check_collision(shrunk, c) == []
    new_r = shrunk.link_overrides["r_palm"][0, 3]
    assert new_r == pytest.approx(d - 0.1 - 1e-6, abs=1e-9)


def test_shrink_restriction_leaves_other_links(testbot):
    c = standing(testbot)
    fk = testbot.forward_kinematics(c)
    palm = fk["r_palm"].apply([0, 0, -0.03])
    chest = fk["chest"].apply([0, 0, 0.05])
    w = sphere_world(
        testbot,
        [
            obj("near_hand", [[0, 0, 0, 0.1]], Pose.from_translation(palm + [0.11, 0, 0])),
            obj("near_chest", [[0, 0, 0, 0.1]], Pose.from_translation(chest + [0.15, 0, 0])),
        ],
    )
    component = testbot.rigid_component("right_hand", testbot.groups.arms + testbot.groups.torso)
    shrunk = shrink_colliding(w, c, restrict_to=component)
    assert "r_palm" in shrunk.link_overrides
    assert "chest" not in shrunk.link_overrides  # torso sphere NOT shrunk
    remaining = check_collision(shrunk, c)
    assert any({a, b} == {"chest", "near_chest"} for a, b, _ in remaining)


def test_shrink_output_collision_free_random(testbot):
    rng = np.random.default_rng(14)
    c = standing(testbot)
    fk = testbot.forward_kinematics(c)
    for _ in range(20):
        anchor = fk[rng.choice(["r_palm", "l_palm", "chest", "pelvis"])].translation
        objects = [
            obj(
                f"o{k}",
                np.column_stack([rng.uniform(-0.1, 0.1, (2, 3)), rng.uniform(0.03, 0.12, 2)]),
                Pose.from_translation(anchor + rng.uniform(-0.15, 0.15, 3)),
            )
            for k in range(3)
        ]
        w = sphere_world(testbot, objects)
        shrunk = shrink_colliding(w, c)
        for a, b, depth in check_collision(shrunk, c):
            # Object-object contacts cannot shrink; a robot-involved pair may
            # persist only when its sphere is pinned at the radius floor.
            if w.is_robot_body(a) or w.is_robot_body(b):
                link = a if w.is_robot_body(a) else b
                floored = shrunk.link_overrides[link][:, 3].min()
                assert floored == pytest.approx(1e-4), (a, b, depth)


# -- attachment ----------------------------------------------------------------------


def test_attach_moves_with_hand(testbot):
    c = standing(testbot)
    fk = testbot.forward_kinematics(c)
    grip = fk["right_hand"].translation
    w = sphere_world(testbot, [obj("widget", [[0, 0, 0, 0.02]], Pose.from_translation(grip))])
    w = attach_object(w, "right_hand", "widget", None, c)
    arm = testbot.groups.right_arm
    c2 = c.with_q(arm, np.array([0.5, 0.3, 0.2, -0.8, 0.2, 0.1]))
    fk2 = testbot.forward_kinematics(c2)
    got = w.object_world_pose("widget", fk2)
    expected = compose(fk2["right_hand"], w.attachments["right_hand"].offset)
    np.testing.assert_allclose(got.translation, expected.translation, atol=1e-12)
    # And the hand no longer reports contact with its own cargo.
    assert all({a, b} != {"r_palm", "widget"} for a, b, _ in check_collision(w, c))


def test_attach_idempotent_and_conflict(testbot):
    c = standing(testbot)
    fk = testbot.forward_kinematics(c)
    grip = fk["right_hand"].translation
    w = sphere_world(testbot, [obj("widget", [[0, 0, 0, 0.02]], Pose.from_translation(grip))])
    w1 = attach_object(w, "right_hand", "widget", None, c)
    w2 = attach_object(w1, "right_hand", "widget", None, c)
    assert w2 is w1
    with pytest.raises(AttachmentError):
        attach_object(w1, "left_hand", "widget", None, c)


def test_attach_lazy_decomposition_coverage(testbot):
    c = standing(testbot)
    cube = box_mesh((0.1, 0.1, 0.1))
    w = sphere_world(
        testbot,
        [ObjectBody("cube", None, Pose.from_translation([0.4, -0.2, 0.9]), True, mesh=cube)],
    )
    w = attach_object(w, "right_hand", "cube", cube, c, budget=32, eps=0.01, seed=4)
    spheres = w.objects["cube"].spheres
    assert spheres is not None and len(spheres) <= 32
    assert coverage_fraction(spheres, cube, 10000, seed=5) >= 0.90


def test_detach_freezes_object_pose(testbot):
    c = standing(testbot)
    fk = testbot.forward_kinematics(c)
    grip = fk["right_hand"].translation
    w = sphere_world(testbot, [obj("widget", [[0, 0, 0, 0.02]], Pose.from_translation(grip))])
    w = attach_object(w, "right_hand", "widget", None, c)
    release = Pose.from_translation([9, 9, 9])
    w = detach_object(w, "right_hand", release)
    assert not w.attachments
    np.testing.assert_allclose(w.objects["widget"].pose.translation, [9, 9, 9])
