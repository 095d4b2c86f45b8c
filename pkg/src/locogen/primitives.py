"""Procedural triangle meshes for primitive shapes."""

from __future__ import annotations

import numpy as np

from locogen.collision import TriMesh


def box_mesh(size) -> TriMesh:
    """Axis-aligned box centered at the origin; size = (sx, sy, sz)."""
    sx, sy, sz = (float(s) / 2.0 for s in size)
    v = np.array(
        [
            [-sx, -sy, -sz], [sx, -sy, -sz], [sx, sy, -sz], [-sx, sy, -sz],
            [-sx, -sy, sz], [sx, -sy, sz], [sx, sy, sz], [-sx, sy, sz],
        ]
    )
    # Outward-wound quads, two triangles each.
    quads = [
        (0, 3, 2, 1),  # -z
        (4, 5, 6, 7),  # +z
        (0, 1, 5, 4),  # -y
        (2, 3, 7, 6),  # +y
        (1, 2, 6, 5),  # +x
        (3, 0, 4, 7),  # -x
    ]
    faces = []
    for a, b, c, d in quads:
        faces.append([a, b, c])
        faces.append([a, c, d])
    return TriMesh(v, np.array(faces))


def icosphere_mesh(radius: float = 1.0, subdivisions: int = 2) -> TriMesh:
    """Geodesic sphere from a subdivided icosahedron (outward winding)."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple, int] = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = np.array(verts[i]) + np.array(verts[j])
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(tuple(m))
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts) * radius
    return TriMesh(v, np.array(faces))


def slab_mesh(width: float, depth: float, thickness: float) -> TriMesh:
    """Thin box: a slab of the given thickness in z."""
    return box_mesh((width, depth, thickness))


def dumbbell_mesh(r_large: float = 0.3, r_small: float = 0.15, gap: float = 0.8) -> TriMesh:
    """Two spheres of different radii joined in one mesh (centers on the x axis)."""
    big = icosphere_mesh(r_large, 2)
    small = icosphere_mesh(r_small, 2)
    v1 = big.vertices + np.array([-gap / 2, 0, 0])
    v2 = small.vertices + np.array([gap / 2, 0, 0])
    faces2 = small.faces + len(v1)
    return TriMesh(np.vstack([v1, v2]), np.vstack([big.faces, faces2]))
